//! Equilibria of the power-angle dynamics and their linear classification.
//!
//! Equilibria are the roots of `P_ref − P_e(δ) = 0`. They are bracketed by a
//! uniform scan and refined by bisection; each root is then linearized and
//! classified from the 2×2 companion Jacobian
//!
//! ```text
//! [ 0        1     ]
//! [ −K_s/2H  −D/2H ]
//! ```
//!
//! where K_s = ∂P_e/∂δ is the synchronizing power at the root.

use crate::model::{
    active_power, electrical_power, synchronizing_power, vpcc_of_delta, GridParams, ModelError,
    VsgParams,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Grid spacing of the bracketing scan (rad).
pub const SCAN_STEP: f64 = 1e-3;
/// Bisection stops once the bracket is narrower than this (rad).
pub const ROOT_TOL: f64 = 1e-10;
/// |normalized K_s| below this marks a saddle-node (degenerate) equilibrium.
pub const DEGENERACY_THRESHOLD: f64 = 1e-9;

const FIXED_POINT_MAX_ITER: usize = 50;
const FIXED_POINT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Sep,
    Uep,
    Degenerate,
}

/// How the PCC voltage enters P_e when locating and linearizing equilibria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VpccMode {
    /// V_PCC frozen at its self-consistent value at the root.
    ConstantVpcc,
    /// V_PCC follows the droop law as δ moves.
    #[default]
    DroopCoupled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Equilibrium {
    pub delta0: f64,
    pub kind: EquilibriumKind,
    pub eigenvalues: [Complex64; 2],
    /// Both eigenvalues real (the overdamped side of the discriminant test).
    pub real_eigenvalues: bool,
    pub vpcc: f64,
    pub mode: VpccMode,
}

impl Equilibrium {
    pub fn is_sep(&self) -> bool {
        self.kind == EquilibriumKind::Sep
    }

    pub fn is_uep(&self) -> bool {
        self.kind == EquilibriumKind::Uep
    }

    /// Same equilibrium, shifted by whole turns.
    pub fn shifted(&self, turns: i32) -> Equilibrium {
        Equilibrium {
            delta0: self.delta0 + 2.0 * PI * turns as f64,
            ..*self
        }
    }
}

/// Linearization of the power-angle dynamics at an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearization {
    pub matrix: [[f64; 2]; 2],
    /// K_s normalized by the largest synchronizing power 1.5·V·V_g/|Z|;
    /// equals cos(δ₀ − atan(R_g/X_g)) for a frozen PCC voltage.
    pub sync_cosine: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub kind: EquilibriumKind,
    pub eigenvalues: [Complex64; 2],
    pub real_eigenvalues: bool,
}

/// dV_PCC/dδ along the droop-coupled PCC voltage curve.
fn vpcc_slope(p: &VsgParams, g: &GridParams, delta: f64, v: f64) -> f64 {
    if p.droop_kq == 0.0 {
        return 0.0;
    }
    let z2 = g.impedance_sq();
    let (s, c) = delta.sin_cos();
    let a = 1.5 * p.droop_kq * g.xg / z2;
    let b = 1.0 - 1.5 * p.droop_kq * g.vg * (g.xg * c + g.rg * s) / z2;
    let db = -1.5 * p.droop_kq * g.vg * (-g.xg * s + g.rg * c) / z2;
    -(db * v) / (2.0 * a * v + b)
}

/// Total dP_e/dδ with the droop coupling included.
pub fn coupled_synchronizing_power(
    p: &VsgParams,
    g: &GridParams,
    delta: f64,
) -> Result<f64, ModelError> {
    let v = vpcc_of_delta(p, g, delta)?;
    let (s, c) = delta.sin_cos();
    let dpe_dv = 1.5 / g.impedance_sq() * (g.rg * (2.0 * v - g.vg * c) + g.xg * g.vg * s);
    Ok(synchronizing_power(g, delta, v) + dpe_dv * vpcc_slope(p, g, delta, v))
}

/// Jacobian of the power-angle dynamics at `delta0`.
///
/// `ConstantVpcc` differentiates P_e with V_PCC frozen at its value at δ₀:
/// K_s = 1.5·V·V_g·(X_g·cos δ₀ + R_g·sin δ₀)/(R_g² + X_g²). `DroopCoupled`
/// adds the ∂P_e/∂V·dV/dδ term of the droop law.
pub fn jacobian_at(
    p: &VsgParams,
    g: &GridParams,
    delta0: f64,
    mode: VpccMode,
) -> Result<Linearization, ModelError> {
    let v = vpcc_of_delta(p, g, delta0)?;
    let ks = match mode {
        VpccMode::ConstantVpcc => synchronizing_power(g, delta0, v),
        VpccMode::DroopCoupled => coupled_synchronizing_power(p, g, delta0)?,
    };
    let scale = 1.5 * v * g.vg / g.impedance_sq().sqrt();
    let sync_cosine = if scale > 0.0 { ks / scale } else { 0.0 };
    Ok(Linearization {
        matrix: [
            [0.0, 1.0],
            [-ks / p.inertia_2h, -p.damping_d / p.inertia_2h],
        ],
        sync_cosine,
    })
}

/// Eigenvalues and kind of a companion-form linearization.
pub fn classify(lin: &Linearization) -> Classification {
    let a21 = lin.matrix[1][0];
    let a22 = lin.matrix[1][1];
    let half_trace = 0.5 * a22;
    let disc = half_trace * half_trace + a21;
    let root = Complex64::new(disc, 0.0).sqrt();
    let eigenvalues = [half_trace + root, half_trace - root];
    let kind = if lin.sync_cosine.abs() < DEGENERACY_THRESHOLD {
        EquilibriumKind::Degenerate
    } else if lin.sync_cosine > 0.0 {
        EquilibriumKind::Sep
    } else {
        EquilibriumKind::Uep
    };
    Classification {
        kind,
        eigenvalues,
        real_eigenvalues: disc >= 0.0,
    }
}

/// Eigenvalues written directly in the physical parameters:
///
/// ```text
/// λ = (−D·|Z| ± √(D²·|Z|² − 4·(2H)·|Z|²·K_s)) / (2·(2H)·|Z|)
/// ```
///
/// With R_g = 0 and a frozen PCC voltage this is the familiar
/// `(−D√Z² ± √(D²Z² − 12H·V·X_g·V_g·cos δ₀)) / (4H√Z²)`.
pub fn eigenvalues_closed_form(
    p: &VsgParams,
    g: &GridParams,
    delta0: f64,
    mode: VpccMode,
) -> Result<[Complex64; 2], ModelError> {
    let v = vpcc_of_delta(p, g, delta0)?;
    let z2 = g.impedance_sq();
    let z = z2.sqrt();
    let two_h = p.inertia_2h;
    let d = p.damping_d;
    let ks = match mode {
        VpccMode::ConstantVpcc => synchronizing_power(g, delta0, v),
        VpccMode::DroopCoupled => coupled_synchronizing_power(p, g, delta0)?,
    };
    let root = Complex64::new(d * d * z2 - 4.0 * two_h * z2 * ks, 0.0).sqrt();
    let denom = 2.0 * two_h * z;
    Ok([(-d * z + root) / denom, (-d * z - root) / denom])
}

/// All roots of `f` on `[lo, hi]`, bracketed on a uniform grid of spacing
/// `step` and bisected to [`ROOT_TOL`]. Grid points where `|f| <= zero_tol`
/// count as roots directly.
pub fn scan_roots<E>(
    f: impl Fn(f64) -> Result<f64, E>,
    lo: f64,
    hi: f64,
    step: f64,
    zero_tol: f64,
) -> Result<Vec<f64>, E> {
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    let xs: Vec<f64> = (0..=n)
        .map(|i| if i == n { hi } else { lo + step * i as f64 })
        .collect();
    let mut values = Vec::with_capacity(xs.len());
    for &x in &xs {
        values.push(f(x)?);
    }
    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.last().is_none_or(|&last| (r - last).abs() > 1e-8) {
            roots.push(r);
        }
    };
    for i in 0..xs.len() {
        if values[i].abs() <= zero_tol {
            push(xs[i], &mut roots);
            continue;
        }
        if i + 1 < xs.len() && values[i + 1].abs() > zero_tol && values[i].signum() != values[i + 1].signum() {
            let r = bisect(&f, xs[i], xs[i + 1], values[i])?;
            push(r, &mut roots);
        }
    }
    Ok(roots)
}

fn bisect<E>(f: &impl Fn(f64) -> Result<f64, E>, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64, E> {
    while b - a > ROOT_TOL {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// Absolute power-balance tolerance for accepting a root (W).
pub fn balance_tolerance(p: &VsgParams) -> f64 {
    if p.p_ref == 0.0 {
        1e-3
    } else {
        1e-6 * p.p_ref.abs()
    }
}

/// Refine a droop-coupled root as a fixed point of the frozen-voltage
/// balance: freeze V at the current angle, solve P_ref = P_e(δ, V), repeat.
fn constant_vpcc_root(p: &VsgParams, g: &GridParams, guess: f64) -> Result<f64, ModelError> {
    let mut delta = guess;
    let mut v = vpcc_of_delta(p, g, delta)?;
    for _ in 0..FIXED_POINT_MAX_ITER {
        let h = |d: f64| Ok::<f64, ModelError>(p.p_ref - active_power(g, d, v));
        let mut width = 4.0 * SCAN_STEP;
        let next = loop {
            let roots = scan_roots(h, delta - width, delta + width, SCAN_STEP, 0.0)?;
            if let Some(r) = roots
                .iter()
                .copied()
                .min_by(|a, b| (a - delta).abs().total_cmp(&(b - delta).abs()))
            {
                break r;
            }
            if width > 0.5 {
                return Ok(delta);
            }
            width *= 4.0;
        };
        delta = next;
        let v_next = vpcc_of_delta(p, g, delta)?;
        let converged = (v_next - v).abs() < FIXED_POINT_TOL;
        v = v_next;
        if converged {
            break;
        }
    }
    Ok(delta)
}

fn build(
    p: &VsgParams,
    g: &GridParams,
    delta0: f64,
    mode: VpccMode,
) -> Result<Equilibrium, ModelError> {
    let lin = jacobian_at(p, g, delta0, mode)?;
    let c = classify(&lin);
    Ok(Equilibrium {
        delta0,
        kind: c.kind,
        eigenvalues: c.eigenvalues,
        real_eigenvalues: c.real_eigenvalues,
        vpcc: vpcc_of_delta(p, g, delta0)?,
        mode,
    })
}

/// Every equilibrium (δ₀, 0) with δ₀ in `window`, sorted by angle.
///
/// An empty list is a valid answer: no power balance is possible on this
/// grid.
pub fn find_equilibria(
    p: &VsgParams,
    g: &GridParams,
    window: (f64, f64),
    mode: VpccMode,
) -> Result<Vec<Equilibrium>, ModelError> {
    p.validate()?;
    g.validate()?;
    if window.0.is_nan() || window.1.is_nan() || window.0 >= window.1 {
        return Err(ModelError::InvalidParameter {
            field: "window",
            reason: format!("empty angle window [{}, {}]", window.0, window.1),
        });
    }
    let tol = balance_tolerance(p);
    let mismatch = |d: f64| electrical_power(p, g, d).map(|pe| p.p_ref - pe);
    let roots = scan_roots(mismatch, window.0, window.1, SCAN_STEP, tol)?;
    let mut out = Vec::with_capacity(roots.len());
    for r in roots {
        let delta0 = match mode {
            VpccMode::DroopCoupled => r,
            VpccMode::ConstantVpcc => constant_vpcc_root(p, g, r)?,
        };
        out.push(build(p, g, delta0, mode)?);
    }
    Ok(out)
}

/// Equilibria on the default window [−π, π].
pub fn equilibria(p: &VsgParams, g: &GridParams, mode: VpccMode) -> Result<Vec<Equilibrium>, ModelError> {
    find_equilibria(p, g, (-PI, PI), mode)
}

/// The stable equilibrium and the saddle that bounds its basin on the right,
/// taken from the equilibria on [−π, π].
pub fn sep_uep_pair(eqs: &[Equilibrium]) -> Option<(Equilibrium, Equilibrium)> {
    let sep = eqs
        .iter()
        .filter(|e| e.is_sep())
        .min_by(|a, b| a.delta0.abs().total_cmp(&b.delta0.abs()))?;
    let right = eqs
        .iter()
        .filter(|e| e.is_uep() && e.delta0 > sep.delta0)
        .min_by(|a, b| a.delta0.total_cmp(&b.delta0))
        .copied();
    let uep = right.or_else(|| {
        eqs.iter()
            .filter(|e| e.is_uep() && e.delta0 < sep.delta0)
            .min_by(|a, b| a.delta0.total_cmp(&b.delta0))
            .map(|e| e.shifted(1))
    })?;
    Some((*sep, uep))
}

/// Grid-voltage depth (p.u. of `g.vg`) below which no equilibrium exists,
/// located by bisection to 1e-6 p.u. `None` if equilibria exist at every
/// depth down to zero or at none up to nominal.
pub fn critical_sag(p: &VsgParams, g: &GridParams, mode: VpccMode) -> Result<Option<f64>, ModelError> {
    let exists = |pu: f64| equilibria(p, &g.with_sag(pu), mode).map(|e| !e.is_empty());
    let (mut lo, mut hi) = (0.0, 1.0);
    if exists(lo)? || !exists(hi)? {
        return Ok(None);
    }
    while hi - lo > 1e-6 {
        let m = 0.5 * (lo + hi);
        if exists(m)? {
            hi = m;
        } else {
            lo = m;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward_rhs;
    use crate::model::PhaseState;

    fn lossless_flat() -> (VsgParams, GridParams) {
        let p = VsgParams {
            droop_kq: 0.0,
            p_ref: 0.0,
            ..VsgParams::reference()
        };
        let g = GridParams {
            vg: 311.0,
            rg: 0.0,
            xg: 0.9425,
        };
        (p, g)
    }

    #[test]
    fn zero_power_lossless_has_sep_at_origin_and_ueps_at_pi() {
        let (p, g) = lossless_flat();
        let eqs = equilibria(&p, &g, VpccMode::DroopCoupled).unwrap();
        assert_eq!(eqs.len(), 3, "{eqs:?}");
        assert!((eqs[0].delta0 + PI).abs() < 1e-9 && eqs[0].is_uep());
        assert!(eqs[1].delta0.abs() < 1e-9 && eqs[1].is_sep());
        assert!((eqs[2].delta0 - PI).abs() < 1e-9 && eqs[2].is_uep());
    }

    #[test]
    fn reference_grid_has_sep_and_one_uep() {
        let p = VsgParams::reference();
        let g = GridParams::reference();
        let eqs = equilibria(&p, &g, VpccMode::DroopCoupled).unwrap();
        assert_eq!(eqs.len(), 2);
        assert!(eqs[0].is_sep() && eqs[1].is_uep());
        assert!((0.6..0.75).contains(&eqs[0].delta0));
        assert!(eqs[1].delta0 > PI / 2.0 && eqs[1].delta0 < PI);
        for e in &eqs {
            let r = forward_rhs(&p, &g, PhaseState::new(e.delta0, 0.0)).unwrap();
            assert!(r.d_domega.abs() * p.inertia_2h < balance_tolerance(&p));
        }
    }

    #[test]
    fn deep_sag_has_no_equilibrium() {
        let p = VsgParams::reference();
        let g = GridParams::reference().with_sag(0.5);
        assert!(equilibria(&p, &g, VpccMode::DroopCoupled).unwrap().is_empty());
        assert!(equilibria(&p, &g, VpccMode::ConstantVpcc).unwrap().is_empty());
    }

    #[test]
    fn modes_agree_on_positions() {
        let p = VsgParams::reference();
        for pu in [1.0, 0.7, 0.6, 0.57] {
            let g = GridParams::reference().with_sag(pu);
            let a = equilibria(&p, &g, VpccMode::DroopCoupled).unwrap();
            let b = equilibria(&p, &g, VpccMode::ConstantVpcc).unwrap();
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert!((x.delta0 - y.delta0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pi_half_zeroes_lossless_coupling() {
        let (p, g) = lossless_flat();
        let lin = jacobian_at(&p, &g, PI / 2.0, VpccMode::ConstantVpcc).unwrap();
        assert!(lin.matrix[1][0].abs() < 1e-9);
    }

    #[test]
    fn undamped_jacobian_is_traceless() {
        let p = VsgParams {
            damping_d: 0.0,
            ..VsgParams::reference()
        };
        let g = GridParams::reference();
        let lin = jacobian_at(&p, &g, 0.7, VpccMode::ConstantVpcc).unwrap();
        assert_eq!(lin.matrix[0][0] + lin.matrix[1][1], 0.0);
        let c = classify(&lin);
        assert_eq!(c.kind, EquilibriumKind::Sep);
        for l in c.eigenvalues {
            assert_eq!(l.re, 0.0);
            assert!(l.im != 0.0);
        }
    }

    #[test]
    fn negative_sync_power_is_saddle() {
        let p = VsgParams::reference();
        let g = GridParams::reference();
        let lin = jacobian_at(&p, &g, 2.6, VpccMode::ConstantVpcc).unwrap();
        let c = classify(&lin);
        assert_eq!(c.kind, EquilibriumKind::Uep);
        let (pos, neg): (Vec<Complex64>, Vec<Complex64>) = c.eigenvalues.iter().partition(|l| l.re > 0.0);
        assert_eq!(pos.len(), 1);
        assert_eq!(neg.len(), 1);
    }

    #[test]
    fn reference_sep_is_underdamped_focus() {
        let p = VsgParams::reference();
        let g = GridParams::reference();
        let sep = equilibria(&p, &g, VpccMode::ConstantVpcc).unwrap()[0];
        assert!(!sep.real_eigenvalues);
        let expected_re = -p.damping_d / (2.0 * p.inertia_2h);
        for l in sep.eigenvalues {
            assert!((l.re - expected_re).abs() < 1e-9);
            assert!(l.im.abs() > 1.0);
        }
        assert!((expected_re + 16.22).abs() < 0.01);
    }

    #[test]
    fn degenerate_flagged_not_classified() {
        let lin = Linearization {
            matrix: [[0.0, 1.0], [0.0, -1.0]],
            sync_cosine: 1e-12,
        };
        assert_eq!(classify(&lin).kind, EquilibriumKind::Degenerate);
    }

    #[test]
    fn empty_window_is_rejected() {
        let p = VsgParams::reference();
        let g = GridParams::reference();
        assert!(find_equilibria(&p, &g, (1.0, 1.0), VpccMode::DroopCoupled).is_err());
    }
}
