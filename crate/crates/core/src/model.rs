//! Closed-form VSG physics: PCC voltage under Q-V droop, power flow across the
//! grid impedance, and the forward / time-reversed power-angle dynamics.
//!
//! All voltages are peak phase amplitudes, powers are in W / var, angles in
//! rad and frequency deviations in rad/s. The swing equation is evaluated
//! literally in SI:
//!
//! ```text
//! 2H·δ̈ = P_ref − P_e(δ) − D·δ̇
//! ```

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use thiserror::Error;

/// Frequency axis scale (rad/s) used by the scaled phase-plane norm.
pub const FREQUENCY_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("PCC voltage equation has no real root at delta = {delta} rad")]
    NoRealRoot { delta: f64 },
    #[error("PCC voltage equation has no positive root at delta = {delta} rad")]
    NonPositiveRoot { delta: f64 },
}

fn check(field: &'static str, ok: bool, reason: &str) -> Result<(), ModelError> {
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            field,
            reason: reason.to_string(),
        })
    }
}

/// Controller constants of the virtual synchronous generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsgParams {
    /// Coefficient multiplying δ̈ (the value 2H).
    pub inertia_2h: f64,
    /// Damping coefficient D on δ̇.
    pub damping_d: f64,
    /// Q-V droop gain K_q (V/var).
    pub droop_kq: f64,
    /// Active power reference (W).
    pub p_ref: f64,
    /// Reactive power reference (var).
    pub q_ref: f64,
    /// Nominal voltage amplitude V_0 (V).
    pub v0: f64,
    /// Rated angular speed ω_0 (rad/s).
    pub omega0: f64,
}

impl VsgParams {
    /// Reference design: H = 7.85, D = 509.3, K_q = 0.0003, P_ref = 100 kW,
    /// Q_ref = 0, V_n = 311 V, f_0 = 50 Hz.
    pub fn reference() -> Self {
        Self {
            inertia_2h: 2.0 * 7.85,
            damping_d: 509.3,
            droop_kq: 0.0003,
            p_ref: 100e3,
            q_ref: 0.0,
            v0: 311.0,
            omega0: 2.0 * PI * 50.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all_finite = [
            self.inertia_2h,
            self.damping_d,
            self.droop_kq,
            self.p_ref,
            self.q_ref,
            self.v0,
            self.omega0,
        ]
        .iter()
        .all(|v| v.is_finite());
        check("vsg", all_finite, "all parameters must be finite")?;
        check("inertia_2h", self.inertia_2h > 0.0, "must be > 0")?;
        check("damping_d", self.damping_d >= 0.0, "must be >= 0")?;
        check("droop_kq", self.droop_kq >= 0.0, "must be >= 0")?;
        check("v0", self.v0 > 0.0, "must be > 0")?;
        check("omega0", self.omega0 > 0.0, "must be > 0")
    }
}

/// Grid Thevenin equivalent seen from the PCC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    /// Grid voltage amplitude V_g (V).
    pub vg: f64,
    /// Grid resistance R_g (Ω).
    pub rg: f64,
    /// Grid reactance X_g (Ω).
    pub xg: f64,
}

impl GridParams {
    /// Reference grid: 220 V rms, R_g = 0.2 Ω, L_g = 3 mH at 50 Hz.
    pub fn reference() -> Self {
        Self {
            vg: 220.0 * SQRT_2,
            rg: 0.2,
            xg: 2.0 * PI * 50.0 * 3e-3,
        }
    }

    /// Same impedance, grid voltage scaled to `pu` of this grid's voltage.
    pub fn with_sag(&self, pu: f64) -> Self {
        Self {
            vg: self.vg * pu,
            ..*self
        }
    }

    /// R_g² + X_g².
    pub fn impedance_sq(&self) -> f64 {
        self.rg * self.rg + self.xg * self.xg
    }

    /// Angle of the grid impedance measured from the reactive axis,
    /// atan(R_g / X_g). Zero for a purely inductive grid.
    pub fn resistive_angle(&self) -> f64 {
        self.rg.atan2(self.xg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check(
            "grid",
            self.vg.is_finite() && self.rg.is_finite() && self.xg.is_finite(),
            "all parameters must be finite",
        )?;
        check("vg", self.vg >= 0.0, "must be >= 0")?;
        check("rg", self.rg >= 0.0, "must be >= 0")?;
        check("xg", self.xg > 0.0, "must be > 0")
    }
}

/// A point (δ, Δω) in the power-angle phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseState {
    /// Power angle (rad).
    pub delta: f64,
    /// Angular frequency deviation (rad/s).
    pub domega: f64,
}

impl PhaseState {
    pub const fn new(delta: f64, domega: f64) -> Self {
        Self { delta, domega }
    }

    pub fn is_finite(&self) -> bool {
        self.delta.is_finite() && self.domega.is_finite()
    }

    /// max(|Δδ| / 1 rad, |ΔΔω| / 100 rad/s).
    pub fn scaled_distance(&self, other: &PhaseState) -> f64 {
        let dd = (self.delta - other.delta).abs();
        let dw = (self.domega - other.domega).abs() / FREQUENCY_SCALE;
        dd.max(dw)
    }
}

/// Time derivative of a [`PhaseState`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseRate {
    pub d_delta: f64,
    pub d_domega: f64,
}

impl PhaseRate {
    pub fn is_finite(&self) -> bool {
        self.d_delta.is_finite() && self.d_domega.is_finite()
    }
}

impl std::ops::Neg for PhaseRate {
    type Output = PhaseRate;

    fn neg(self) -> PhaseRate {
        PhaseRate {
            d_delta: -self.d_delta,
            d_domega: -self.d_domega,
        }
    }
}

/// Coefficients (a, b, c) of a·V² + b·V + c = 0, the droop law
/// V = V_0 + K_q·(Q_ref − Q_e(V, δ)) rearranged in V.
fn vpcc_quadratic(p: &VsgParams, g: &GridParams, delta: f64) -> (f64, f64, f64) {
    let z2 = g.impedance_sq();
    let coupling = g.vg * (g.xg * delta.cos() + g.rg * delta.sin());
    let a = 1.5 * p.droop_kq * g.xg / z2;
    let b = 1.0 - 1.5 * p.droop_kq * coupling / z2;
    let c = -(p.v0 + p.droop_kq * p.q_ref);
    (a, b, c)
}

/// PCC voltage amplitude consistent with the Q-V droop law at angle `delta`.
///
/// Solves the droop quadratic with the cancellation-free form
/// q = −(b + sgn(b)·√disc)/2, roots q/a and c/q, and keeps the larger root,
/// which tends to V_0 as K_q → 0. With K_q = 0 the result is exactly V_0.
pub fn vpcc_of_delta(p: &VsgParams, g: &GridParams, delta: f64) -> Result<f64, ModelError> {
    if p.droop_kq == 0.0 {
        return Ok(p.v0);
    }
    let (a, b, c) = vpcc_quadratic(p, g, delta);
    let disc = b * b - 4.0 * a * c;
    if disc.is_nan() || disc < 0.0 {
        return Err(ModelError::NoRealRoot { delta });
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return Err(ModelError::NonPositiveRoot { delta });
    }
    let root = (q / a).max(c / q);
    if root > 0.0 {
        Ok(root)
    } else {
        Err(ModelError::NonPositiveRoot { delta })
    }
}

/// Three-phase active power delivered to the grid (W).
pub fn active_power(g: &GridParams, delta: f64, vpcc: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    1.5 * vpcc / g.impedance_sq() * (g.rg * (vpcc - g.vg * c) + g.xg * g.vg * s)
}

/// Three-phase reactive power delivered to the grid (var).
pub fn reactive_power(g: &GridParams, delta: f64, vpcc: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    1.5 * vpcc / g.impedance_sq() * (g.xg * (vpcc - g.vg * c) - g.rg * g.vg * s)
}

/// Voltage magnitude reference produced by the Q-V droop for output `q_e`.
pub fn droop_voltage_reference(p: &VsgParams, q_e: f64) -> f64 {
    p.v0 + p.droop_kq * (p.q_ref - q_e)
}

/// Active power with the PCC voltage coupled to δ through the droop.
pub fn electrical_power(p: &VsgParams, g: &GridParams, delta: f64) -> Result<f64, ModelError> {
    let v = vpcc_of_delta(p, g, delta)?;
    Ok(active_power(g, delta, v))
}

/// ∂P_e/∂δ with the PCC voltage held at `vpcc`.
pub fn synchronizing_power(g: &GridParams, delta: f64, vpcc: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    1.5 * vpcc * g.vg / g.impedance_sq() * (g.xg * c + g.rg * s)
}

/// Forward power-angle dynamics: δ̇ = Δω, Δω̇ = (P_ref − P_e − D·Δω) / 2H.
pub fn forward_rhs(p: &VsgParams, g: &GridParams, s: PhaseState) -> Result<PhaseRate, ModelError> {
    let pe = electrical_power(p, g, s.delta)?;
    Ok(PhaseRate {
        d_delta: s.domega,
        d_domega: (p.p_ref - pe - p.damping_d * s.domega) / p.inertia_2h,
    })
}

/// Time-reversed dynamics, the exact negation of [`forward_rhs`].
pub fn reversed_rhs(p: &VsgParams, g: &GridParams, s: PhaseState) -> Result<PhaseRate, ModelError> {
    forward_rhs(p, g, s).map(|r| -r)
}
