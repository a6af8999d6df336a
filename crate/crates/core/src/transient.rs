//! Fault scenarios, the Type I/II/III taxonomy and critical clearing
//! angles by three independent routes: intersection with the post-fault
//! basin, the equal-area balance, and bisection over full simulations.

use crate::doa::{estimate_doa, DoaError, DoaOptions};
use crate::equilibrium::{equilibria, scan_roots, sep_uep_pair, Equilibrium, VpccMode, SCAN_STEP};
use crate::integrator::{
    integrate, rk4_step, Event, IntegratorConfig, IntegratorError, Sample, Termination, Trajectory, VsgField, Window,
    DEFAULT_STEP,
};
use crate::model::{active_power, electrical_power, vpcc_of_delta, GridParams, ModelError, PhaseState, VsgParams};
use crate::quadrature::adaptive_simpson;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Clearing-angle resolution of [`cca_bruteforce`] (rad).
pub const BRUTEFORCE_TOL: f64 = 1e-4;
/// Angle resolution of the basin-crossing search in [`cca_doa`] (rad).
pub const CROSSING_TOL: f64 = 1e-6;
const COARSE_SCAN: usize = 12;
const EAC_SCAN: usize = 400;

#[derive(Debug, Error)]
pub enum TransientError {
    #[error("invalid scenario setting `{field}`: {reason}")]
    InvalidScenario { field: &'static str, reason: String },
    #[error("the pre-fault grid has no stable equilibrium")]
    NoPreFaultSep,
    #[error("the pre-fault equilibrium lies outside the post-clearing basin")]
    PreFaultOutsideDoa,
    #[error("the fault-on trajectory never leaves the post-clearing basin")]
    NoIntersection,
    #[error("acceleration area exceeds the available deceleration area for every clearing angle")]
    NoSolution,
    #[error("every clearing angle in [{lo}, {hi}] is stable")]
    AllStable { lo: f64, hi: f64 },
    #[error("every clearing angle in [{lo}, {hi}] is unstable")]
    AllUnstable { lo: f64, hi: f64 },
    #[error("stability is not monotone in the clearing angle near {at}")]
    NonMonotone { at: f64 },
    #[error(transparent)]
    Doa(#[from] DoaError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultType {
    /// The fault-on trajectory stays inside the fault-on basin.
    #[serde(rename = "type_i")]
    TypeI,
    /// The fault-on trajectory leaves the fault-on basin.
    #[serde(rename = "type_ii")]
    TypeII,
    /// No equilibrium survives the fault.
    #[serde(rename = "type_iii")]
    TypeIII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clearing {
    /// Restore the post grid when δ first rises through this angle.
    AtAngle(f64),
    /// Restore the post grid this long after fault inception (s).
    AtTime(f64),
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub vsg: VsgParams,
    pub pre: GridParams,
    pub fault: GridParams,
    pub post: GridParams,
    /// Fault inception (s); the system rests at the pre-fault SEP before.
    pub fault_time: f64,
    pub clearing: Clearing,
}

impl FaultScenario {
    /// Voltage sag to `depth` p.u. of the pre-fault grid, restored to the
    /// pre-fault grid on clearing.
    pub fn sag(vsg: VsgParams, pre: GridParams, depth: f64, clearing: Clearing) -> Self {
        Self {
            vsg,
            pre,
            fault: pre.with_sag(depth),
            post: pre,
            fault_time: 0.0,
            clearing,
        }
    }

    pub fn with_clearing(&self, clearing: Clearing) -> Self {
        Self { clearing, ..*self }
    }

    pub fn validate(&self) -> Result<(), TransientError> {
        self.vsg.validate()?;
        for g in [&self.pre, &self.fault, &self.post] {
            g.validate()?;
        }
        let bad = |field, reason: &str| {
            Err(TransientError::InvalidScenario {
                field,
                reason: reason.into(),
            })
        };
        if !(self.fault_time >= 0.0 && self.fault_time.is_finite()) {
            return bad("fault_time", "must be finite and >= 0");
        }
        match self.clearing {
            Clearing::AtAngle(a) if !a.is_finite() => bad("clearing", "angle must be finite"),
            Clearing::AtTime(t) if !(t >= 0.0 && t.is_finite()) => bad("clearing", "time must be finite and >= 0"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientSettings {
    pub step: f64,
    /// Integration horizon of each fault-on and post-clearing stage (s).
    pub horizon: f64,
    /// Basin estimation for classification and [`cca_doa`].
    pub doa: DoaOptions,
    /// Escape window; `None` centers the default window on the post-fault
    /// SEP.
    pub window: Option<Window>,
}

impl Default for TransientSettings {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            horizon: 10.0,
            doa: DoaOptions::default(),
            window: None,
        }
    }
}

impl TransientSettings {
    fn mode(&self) -> VpccMode {
        self.doa.vpcc_mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub fault_type: FaultType,
    /// Converged to the principal SEP of the grid in force at the end.
    pub stable: bool,
    pub trajectory: Trajectory,
    pub final_sep: Option<Equilibrium>,
    /// State at which the post grid was restored, if it was.
    pub cleared_at: Option<Sample>,
}

/// The SEP nearest δ = 0 on this grid, if any.
pub fn principal_sep(p: &VsgParams, g: &GridParams, mode: VpccMode) -> Result<Option<Equilibrium>, ModelError> {
    let eqs = equilibria(p, g, mode)?;
    Ok(sep_uep_pair(&eqs).map(|(s, _)| s).or_else(|| {
        eqs.iter()
            .filter(|e| e.is_sep())
            .min_by(|a, b| a.delta0.abs().total_cmp(&b.delta0.abs()))
            .copied()
    }))
}

fn pre_fault_sep(p: &VsgParams, g: &GridParams, mode: VpccMode) -> Result<Equilibrium, TransientError> {
    principal_sep(p, g, mode)?.ok_or(TransientError::NoPreFaultSep)
}

fn at_rest(e: &Equilibrium) -> PhaseState {
    PhaseState::new(e.delta0, 0.0)
}

/// Type I/II/III of a fault from the pre-fault SEP.
pub fn classify_fault(
    vsg: &VsgParams,
    pre: &GridParams,
    fault: &GridParams,
    settings: &TransientSettings,
) -> Result<FaultType, TransientError> {
    let start = at_rest(&pre_fault_sep(vsg, pre, settings.mode())?);
    let basin = match estimate_doa(vsg, fault, &settings.doa) {
        Ok(b) => b,
        Err(DoaError::NoEquilibrium) => return Ok(FaultType::TypeIII),
        Err(e) => return Err(e.into()),
    };
    if !basin.contains(start) {
        return Ok(FaultType::TypeII);
    }
    let cfg = IntegratorConfig::new(settings.horizon, basin.window)
        .with_step(settings.step)
        .converging_to(at_rest(&basin.sep));
    let traj = integrate(&VsgField::forward(*vsg, *fault), start, &cfg)?;
    Ok(if traj.states().all(|s| basin.contains(s)) {
        FaultType::TypeI
    } else {
        FaultType::TypeII
    })
}

struct Stage {
    traj: Trajectory,
    target: Option<Equilibrium>,
}

fn append(samples: &mut Vec<Sample>, traj: &Trajectory, offset: f64) {
    let skip = usize::from(!samples.is_empty());
    samples.extend(traj.samples.iter().skip(skip).map(|s| Sample {
        t: s.t + offset,
        state: s.state,
    }));
}

/// Piecewise simulation without classification.
fn run_scenario(sc: &FaultScenario, settings: &TransientSettings) -> Result<(bool, Trajectory, Option<Equilibrium>, Option<Sample>), TransientError> {
    sc.validate()?;
    let mode = settings.mode();
    let pre_sep = pre_fault_sep(&sc.vsg, &sc.pre, mode)?;
    if let Clearing::AtAngle(a) = sc.clearing {
        if a <= pre_sep.delta0 {
            return Err(TransientError::InvalidScenario {
                field: "clearing",
                reason: format!("clearing angle {a} must exceed the pre-fault SEP at {}", pre_sep.delta0),
            });
        }
    }
    let fault_sep = principal_sep(&sc.vsg, &sc.fault, mode)?;
    let post_sep = principal_sep(&sc.vsg, &sc.post, mode)?;
    let window = settings
        .window
        .unwrap_or_else(|| Window::around(post_sep.unwrap_or(pre_sep).delta0));
    let base = |max_time: f64| IntegratorConfig::new(max_time, window).with_step(settings.step);

    let mut samples = Vec::new();
    let mut t0 = 0.0;
    let mut state = at_rest(&pre_sep);
    if sc.fault_time > 0.0 {
        let traj = integrate(&VsgField::forward(sc.vsg, sc.pre), state, &base(sc.fault_time))?;
        append(&mut samples, &traj, t0);
        t0 += traj.last().t;
        state = traj.last().state;
    }

    let direction = crate::integrator::Direction::Forward;
    let finish = |samples: Vec<Sample>, termination, stable, sep, cleared| {
        Ok((
            stable,
            Trajectory {
                samples,
                termination,
                direction,
            },
            sep,
            cleared,
        ))
    };

    let fault_stage = match sc.clearing {
        Clearing::AtTime(0.0) => None,
        Clearing::AtTime(t) => Some(Stage {
            traj: integrate(
                &VsgField::forward(sc.vsg, sc.fault),
                state,
                &base(t).with_event(Event::Time { id: 1, at: t }),
            )?,
            target: None,
        }),
        Clearing::AtAngle(a) => {
            let mut cfg = base(settings.horizon).with_event(Event::AngleCrossing { id: 1, target: a });
            cfg.converge_to = fault_sep.as_ref().map(at_rest);
            Some(Stage {
                traj: integrate(&VsgField::forward(sc.vsg, sc.fault), state, &cfg)?,
                target: fault_sep,
            })
        }
        Clearing::Never => {
            let mut cfg = base(settings.horizon);
            cfg.converge_to = fault_sep.as_ref().map(at_rest);
            Some(Stage {
                traj: integrate(&VsgField::forward(sc.vsg, sc.fault), state, &cfg)?,
                target: fault_sep,
            })
        }
    };
    if let Some(stage) = fault_stage {
        append(&mut samples, &stage.traj, t0);
        match stage.traj.termination {
            Termination::Converged => return finish(samples, Termination::Converged, true, stage.target, None),
            Termination::EventFired(_) => {}
            other => return finish(samples, other, false, stage.target, None),
        }
        t0 += stage.traj.last().t;
        state = stage.traj.last().state;
    }

    let cleared = Sample { t: t0, state };
    let mut cfg = base(settings.horizon);
    cfg.converge_to = post_sep.as_ref().map(at_rest);
    let traj = integrate(&VsgField::forward(sc.vsg, sc.post), state, &cfg)?;
    append(&mut samples, &traj, t0);
    let stable = traj.termination == Termination::Converged;
    finish(samples, traj.termination, stable, post_sep, Some(cleared))
}

/// Simulate the scenario from the pre-fault SEP: pre grid until
/// `fault_time`, fault grid until the clearing condition, then the post
/// grid for `settings.horizon`.
pub fn simulate_scenario(sc: &FaultScenario, settings: &TransientSettings) -> Result<StabilityVerdict, TransientError> {
    let (stable, trajectory, final_sep, cleared_at) = run_scenario(sc, settings)?;
    let fault_type = classify_fault(&sc.vsg, &sc.pre, &sc.fault, settings)?;
    Ok(StabilityVerdict {
        fault_type,
        stable,
        trajectory,
        final_sep: if stable { final_sep } else { None },
        cleared_at,
    })
}

/// Where the fault-on trajectory from the pre-fault SEP first leaves the
/// post-clearing basin.
pub fn doa_crossing(
    vsg: &VsgParams,
    pre: &GridParams,
    fault: &GridParams,
    post: &GridParams,
    settings: &TransientSettings,
) -> Result<Sample, TransientError> {
    let start = at_rest(&pre_fault_sep(vsg, pre, settings.mode())?);
    let basin = estimate_doa(vsg, post, &settings.doa)?;
    if !basin.contains(start) {
        return Err(TransientError::PreFaultOutsideDoa);
    }
    let field = VsgField::forward(*vsg, *fault);
    let mut cfg = IntegratorConfig::new(settings.horizon, basin.window).with_step(settings.step);
    cfg.converge_to = principal_sep(vsg, fault, settings.mode())?.as_ref().map(at_rest);
    let traj = integrate(&field, start, &cfg)?;
    let k = traj
        .samples
        .iter()
        .position(|s| !basin.contains(s.state))
        .ok_or(TransientError::NoIntersection)?;
    let from = traj.samples[k - 1];
    let (mut lo, mut hi) = (0.0, traj.samples[k].t - from.t);
    let mut lo_state = from.state;
    let mut hi_state = traj.samples[k].state;
    while (hi_state.delta - lo_state.delta).abs() > CROSSING_TOL && hi - lo > 1e-15 {
        let mid = 0.5 * (lo + hi);
        let s = rk4_step(&field, from.state, mid, from.t)?;
        if basin.contains(s) {
            lo = mid;
            lo_state = s;
        } else {
            hi = mid;
            hi_state = s;
        }
    }
    Ok(Sample {
        t: from.t + 0.5 * (lo + hi),
        state: PhaseState::new(
            0.5 * (lo_state.delta + hi_state.delta),
            0.5 * (lo_state.domega + hi_state.domega),
        ),
    })
}

/// Critical clearing angle as the angle at which the fault-on trajectory
/// crosses the post-clearing basin boundary.
pub fn cca_doa(
    vsg: &VsgParams,
    pre: &GridParams,
    fault: &GridParams,
    post: &GridParams,
    settings: &TransientSettings,
) -> Result<f64, TransientError> {
    doa_crossing(vsg, pre, fault, post, settings).map(|s| s.state.delta)
}

/// Which PCC voltage the static P_e–δ curves of the area balance use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EacVoltageModel {
    /// V_PCC equal to the grid voltage of each state.
    #[default]
    GridTracking,
    /// V_PCC frozen at its droop value at the grid's SEP; at the pre-fault
    /// SEP angle when the grid has none.
    FrozenAtSep,
    /// V_PCC following the droop law along the curve.
    DroopCoupled,
}

/// A static power-angle curve P_e(δ) of one grid state.
#[derive(Debug, Clone, Copy)]
pub struct PowerCurve {
    vsg: VsgParams,
    grid: GridParams,
    /// Fixed V_PCC; `None` follows the droop law.
    frozen: Option<f64>,
}

impl PowerCurve {
    pub fn new(
        vsg: &VsgParams,
        grid: &GridParams,
        model: EacVoltageModel,
        fallback_delta: f64,
    ) -> Result<Self, ModelError> {
        let frozen = match model {
            EacVoltageModel::GridTracking => Some(grid.vg),
            EacVoltageModel::DroopCoupled => None,
            EacVoltageModel::FrozenAtSep => {
                let at = principal_sep(vsg, grid, VpccMode::DroopCoupled)?.map_or(fallback_delta, |e| e.delta0);
                Some(vpcc_of_delta(vsg, grid, at)?)
            }
        };
        Ok(Self {
            vsg: *vsg,
            grid: *grid,
            frozen,
        })
    }

    pub fn power(&self, delta: f64) -> Result<f64, ModelError> {
        match self.frozen {
            None => electrical_power(&self.vsg, &self.grid, delta),
            Some(v) => Ok(active_power(&self.grid, delta, v)),
        }
    }

    fn mismatch(&self, delta: f64) -> Result<f64, ModelError> {
        self.power(delta).map(|pe| self.vsg.p_ref - pe)
    }

    /// Stable crossing of P_ref (rising P_e) nearest δ = 0 and the unstable
    /// crossing after it.
    pub fn crossings(&self) -> Result<Option<(f64, f64)>, ModelError> {
        let roots = scan_roots(|d| self.mismatch(d), -PI, 2.0 * PI, SCAN_STEP, 0.0)?;
        let rising = |r: f64| -> Result<bool, ModelError> { Ok(self.mismatch(r + 1e-6)? < self.mismatch(r - 1e-6)?) };
        let mut sep = None;
        for &r in &roots {
            if r <= PI && rising(r)? && sep.is_none_or(|s: f64| r.abs() < s.abs()) {
                sep = Some(r);
            }
        }
        let Some(sep) = sep else { return Ok(None) };
        Ok(roots.iter().copied().find(|&r| r > sep).map(|uep| (sep, uep)))
    }

    /// ∫ f(δ) dδ over [a, b], integrating P_ref − P_e to tolerance `tol`.
    fn integral(&self, a: f64, b: f64, sign: f64, tol: f64) -> Result<f64, ModelError> {
        adaptive_simpson(&|d| self.mismatch(d).map(|m| sign * m), a, b, tol)
    }
}

/// Quadrature tolerance of the area integrals (W·rad).
fn area_tol(vsg: &VsgParams) -> f64 {
    1e-3 * vsg.p_ref.abs().max(1.0)
}

/// Acceleration and deceleration areas of one grid state over
/// [δ_start, δ_end]: ∫ max(P_ref − P_e, 0) and ∫ max(P_e − P_ref, 0).
pub fn eac_areas(
    vsg: &VsgParams,
    grid: &GridParams,
    delta_start: f64,
    delta_end: f64,
    model: EacVoltageModel,
) -> Result<(f64, f64), ModelError> {
    if delta_start >= delta_end {
        return Ok((0.0, 0.0));
    }
    let curve = PowerCurve::new(vsg, grid, model, delta_start)?;
    let mut cuts = vec![delta_start];
    cuts.extend(scan_roots(|d| curve.mismatch(d), delta_start, delta_end, SCAN_STEP, 0.0)?);
    cuts.push(delta_end);
    let (mut acc, mut dec) = (0.0, 0.0);
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            let v = curve.integral(w[0], w[1], 1.0, area_tol(vsg))?;
            if v > 0.0 {
                acc += v;
            } else {
                dec -= v;
            }
        }
    }
    Ok((acc, dec))
}

/// First-swing area comparison for a fault that is never cleared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstSwing {
    /// Acceleration area from the pre-fault SEP to the fault-on SEP, or to
    /// the pre-fault saddle when the fault leaves no equilibrium.
    pub s_acc: f64,
    /// Deceleration area available between the fault-on SEP and UEP.
    pub s_dec_max: f64,
    pub predicts_stable: bool,
}

/// Equal-area first-swing test of a sustained fault.
pub fn eac_first_swing(
    vsg: &VsgParams,
    pre: &GridParams,
    fault: &GridParams,
    model: EacVoltageModel,
) -> Result<FirstSwing, TransientError> {
    let (d0, d4) = PowerCurve::new(vsg, pre, model, 0.0)?
        .crossings()?
        .ok_or(TransientError::NoPreFaultSep)?;
    let fault_curve = PowerCurve::new(vsg, fault, model, d0)?;
    let out = match fault_curve.crossings()? {
        Some((d1, d3)) => {
            let s_acc = eac_areas(vsg, fault, d0.min(d1), d0.max(d1), model)?.0;
            let s_dec_max = eac_areas(vsg, fault, d1, d3, model)?.1;
            FirstSwing {
                s_acc,
                s_dec_max,
                predicts_stable: s_acc <= s_dec_max,
            }
        }
        // Nothing decelerates the rotor; report the acceleration gathered up
        // to the pre-fault saddle.
        None => FirstSwing {
            s_acc: eac_areas(vsg, fault, d0, d4, model)?.0,
            s_dec_max: 0.0,
            predicts_stable: false,
        },
    };
    Ok(out)
}

/// Critical clearing angle from the equal-area balance of the static
/// pre-, fault- and post-clearing P_e–δ curves.
///
/// With fault-on crossings δ₁ < δ₃ and a clearing angle δ₂ ≤ δ₃ the margin
/// is ∫[δ₂,δ₃](P*−P_f) + ∫[δ₃,δ₄](P*−P_ref) − ∫[δ₀,δ₂](P_ref−P_f);
/// otherwise ∫[δ₂,δ₄](P*−P_ref) − ∫[δ₀,δ₂](P_ref−P_f). The two agree at
/// δ₂ = δ₃. The CCA is the largest δ₂ ∈ [δ₀, δ₄] with a non-negative
/// margin.
pub fn cca_eac(
    vsg: &VsgParams,
    pre: &GridParams,
    fault: &GridParams,
    post: &GridParams,
    model: EacVoltageModel,
) -> Result<f64, TransientError> {
    let d0 = PowerCurve::new(vsg, pre, model, 0.0)?
        .crossings()?
        .ok_or(TransientError::NoPreFaultSep)?
        .0;
    let pf = PowerCurve::new(vsg, fault, model, d0)?;
    let pp = PowerCurve::new(vsg, post, model, d0)?;
    let d4 = pp.crossings()?.ok_or(TransientError::NoSolution)?.1;
    let d3 = pf.crossings()?.map(|(_, u)| u);
    let tol = area_tol(vsg);

    let margin = |d2: f64| -> Result<f64, ModelError> {
        // ∫(P_ref − P_f) over [δ₀, δ₂] is the acceleration area.
        let acc = pf.integral(d0, d2, 1.0, tol)?;
        let dec = match d3 {
            Some(d3) if d2 <= d3 => {
                let gap = adaptive_simpson(&|d| Ok::<_, ModelError>(pp.power(d)? - pf.power(d)?), d2, d3, tol)?;
                gap + pp.integral(d3, d4, -1.0, tol)?
            }
            _ => pp.integral(d2, d4, -1.0, tol)?,
        };
        Ok(dec - acc)
    };

    if d4 <= d0 {
        return Err(TransientError::NoSolution);
    }
    let grid: Vec<f64> = (0..=EAC_SCAN)
        .map(|k| d0 + (d4 - d0) * k as f64 / EAC_SCAN as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&d| margin(d)).collect::<Result<_, _>>()?;
    let last = values
        .iter()
        .rposition(|&m| m >= 0.0)
        .ok_or(TransientError::NoSolution)?;
    if last == EAC_SCAN {
        return Ok(d4);
    }
    let (mut lo, mut hi) = (grid[last], grid[last + 1]);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if margin(mid)? >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Critical clearing angle by bisection over full simulations of the
/// scenario cleared at each candidate angle.
pub fn cca_bruteforce(sc: &FaultScenario, settings: &TransientSettings) -> Result<f64, TransientError> {
    let mode = settings.mode();
    let pre_sep = pre_fault_sep(&sc.vsg, &sc.pre, mode)?;
    let post_sep = principal_sep(&sc.vsg, &sc.post, mode)?;
    let window = settings
        .window
        .unwrap_or_else(|| Window::around(post_sep.unwrap_or(pre_sep).delta0));
    let lo = pre_sep.delta0 + 1e-3;
    let hi = window.delta_max;
    let stable_at = |a: f64| run_scenario(&sc.with_clearing(Clearing::AtAngle(a)), settings).map(|r| r.0);

    let grid: Vec<f64> = (0..COARSE_SCAN)
        .map(|k| lo + (hi - lo) * k as f64 / (COARSE_SCAN - 1) as f64)
        .collect();
    let verdicts: Vec<bool> = grid.par_iter().map(|&a| stable_at(a)).collect::<Result<_, _>>()?;
    if verdicts.iter().all(|&s| s) {
        return Err(TransientError::AllStable { lo, hi });
    }
    if verdicts.iter().all(|&s| !s) {
        return Err(TransientError::AllUnstable { lo, hi });
    }
    let first_unstable = verdicts.iter().position(|&s| !s).expect("some verdict is unstable");
    if let Some(k) = verdicts[first_unstable..].iter().position(|&s| s) {
        return Err(TransientError::NonMonotone {
            at: grid[first_unstable + k],
        });
    }
    if first_unstable == 0 {
        return Err(TransientError::AllUnstable { lo, hi });
    }
    let (mut a, mut b) = (grid[first_unstable - 1], grid[first_unstable]);
    while b - a > BRUTEFORCE_TOL {
        let mid = 0.5 * (a + b);
        if stable_at(mid)? {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> (VsgParams, GridParams) {
        (VsgParams::reference(), GridParams::reference())
    }

    #[test]
    fn equal_limits_give_no_area() {
        let (p, g) = reference();
        assert_eq!(eac_areas(&p, &g, 1.0, 1.0, EacVoltageModel::DroopCoupled).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn no_deceleration_without_equilibrium() {
        let (p, g) = reference();
        let faulted = g.with_sag(0.5);
        let (acc, dec) = eac_areas(&p, &faulted, 0.7, 2.5, EacVoltageModel::DroopCoupled).unwrap();
        assert!(acc > 0.0);
        assert_eq!(dec, 0.0);
    }

    #[test]
    fn areas_split_at_crossings() {
        let (p, g) = reference();
        let m = EacVoltageModel::FrozenAtSep;
        let curve = PowerCurve::new(&p, &g, m, 0.0).unwrap();
        let (sep, uep) = curve.crossings().unwrap().unwrap();
        let (acc, dec) = eac_areas(&p, &g, sep, uep, m).unwrap();
        assert!(acc.abs() < 1.0);
        assert!(dec > 0.0);
    }

    #[test]
    fn unchanged_grid_clears_at_its_saddle() {
        let (p, g) = reference();
        for m in [
            EacVoltageModel::GridTracking,
            EacVoltageModel::FrozenAtSep,
            EacVoltageModel::DroopCoupled,
        ] {
            let uep = PowerCurve::new(&p, &g, m, 0.0).unwrap().crossings().unwrap().unwrap().1;
            let cca = cca_eac(&p, &g, &g, &g, m).unwrap();
            assert!((cca - uep).abs() < 1e-9, "{m:?}: {cca} vs {uep}");
        }
    }

    #[test]
    fn mild_sag_never_cleared_is_stable() {
        let (p, g) = reference();
        let sc = FaultScenario::sag(p, g, 0.7, Clearing::Never);
        let v = simulate_scenario(&sc, &TransientSettings::default()).unwrap();
        assert!(v.stable);
        assert_eq!(v.trajectory.termination, Termination::Converged);
        assert!(v.cleared_at.is_none());
        assert_eq!(v.fault_type, FaultType::TypeI);
    }

    #[test]
    fn clearing_at_time_zero_is_no_fault() {
        let (p, g) = reference();
        let sc = FaultScenario::sag(p, g, 0.5, Clearing::AtTime(0.0));
        let v = simulate_scenario(&sc, &TransientSettings::default()).unwrap();
        assert!(v.stable);
        assert_eq!(v.cleared_at.unwrap().t, 0.0);
    }

    #[test]
    fn fault_time_shifts_the_switch() {
        let (p, g) = reference();
        let mut sc = FaultScenario::sag(p, g, 0.5, Clearing::AtTime(0.05));
        sc.fault_time = 0.2;
        let v = simulate_scenario(&sc, &TransientSettings::default()).unwrap();
        let cleared = v.cleared_at.unwrap();
        assert!((cleared.t - 0.25).abs() < 1e-9);
        let ts: Vec<f64> = v.trajectory.samples.iter().map(|s| s.t).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts.contains(&0.2));
    }

    #[test]
    fn clearing_below_pre_fault_sep_is_rejected() {
        let (p, g) = reference();
        let sc = FaultScenario::sag(p, g, 0.5, Clearing::AtAngle(0.1));
        assert!(matches!(
            simulate_scenario(&sc, &TransientSettings::default()),
            Err(TransientError::InvalidScenario { field: "clearing", .. })
        ));
    }

    #[test]
    fn dead_post_grid_is_all_unstable() {
        let (p, g) = reference();
        let mut sc = FaultScenario::sag(p, g, 0.5, Clearing::Never);
        sc.post = g.with_sag(0.0);
        assert!(matches!(
            cca_bruteforce(&sc, &TransientSettings::default()),
            Err(TransientError::AllUnstable { .. })
        ));
    }
}
