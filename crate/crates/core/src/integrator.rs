//! Fixed-step RK4 integration of the phase-plane dynamics with angle and
//! time events, a rectangular escape window and an optional convergence
//! target.
//!
//! Time-reversed integration is forward RK4 on the reversed vector field;
//! the step is always positive.

use crate::model::{forward_rhs, reversed_rhs, GridParams, ModelError, PhaseRate, PhaseState, VsgParams};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

pub const DEFAULT_STEP: f64 = 1e-4;
/// Scaled-norm radius around the target that counts as converged.
pub const CONVERGENCE_TOL: f64 = 1e-6;
/// How long a trajectory must stay within [`CONVERGENCE_TOL`] (s).
pub const CONVERGENCE_HOLD: f64 = 0.1;
/// Angle events are located to this accuracy (rad).
pub const EVENT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("invalid integrator setting `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("initial state ({delta}, {domega}) lies outside the integration window")]
    InitOutsideWindow { delta: f64, domega: f64 },
    #[error("vector field returned a non-finite value at t = {t} s")]
    NonFiniteState { t: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Reversed,
}

/// An autonomous planar vector field.
pub trait VectorField {
    fn rate(&self, s: PhaseState) -> Result<PhaseRate, ModelError>;

    fn direction(&self) -> Direction {
        Direction::Forward
    }
}

impl<F> VectorField for F
where
    F: Fn(PhaseState) -> Result<PhaseRate, ModelError>,
{
    fn rate(&self, s: PhaseState) -> Result<PhaseRate, ModelError> {
        self(s)
    }
}

/// The VSG power-angle dynamics on a fixed grid, run forward or reversed.
#[derive(Debug, Clone, Copy)]
pub struct VsgField {
    pub vsg: VsgParams,
    pub grid: GridParams,
    pub direction: Direction,
}

impl VsgField {
    pub fn forward(vsg: VsgParams, grid: GridParams) -> Self {
        Self {
            vsg,
            grid,
            direction: Direction::Forward,
        }
    }

    pub fn reversed(vsg: VsgParams, grid: GridParams) -> Self {
        Self {
            vsg,
            grid,
            direction: Direction::Reversed,
        }
    }
}

impl VectorField for VsgField {
    fn rate(&self, s: PhaseState) -> Result<PhaseRate, ModelError> {
        match self.direction {
            Direction::Forward => forward_rhs(&self.vsg, &self.grid, s),
            Direction::Reversed => reversed_rhs(&self.vsg, &self.grid, s),
        }
    }

    fn direction(&self) -> Direction {
        self.direction
    }
}

/// Axis-aligned rectangle in the phase plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub delta_min: f64,
    pub delta_max: f64,
    pub domega_min: f64,
    pub domega_max: f64,
}

impl Window {
    pub const DEFAULT_DOMEGA_SPAN: f64 = 150.0;

    /// `[center − 2π, center + 2π] × [−150, 150]`.
    pub fn around(center_delta: f64) -> Self {
        Self {
            delta_min: center_delta - 2.0 * PI,
            delta_max: center_delta + 2.0 * PI,
            domega_min: -Self::DEFAULT_DOMEGA_SPAN,
            domega_max: Self::DEFAULT_DOMEGA_SPAN,
        }
    }

    pub fn contains(&self, s: PhaseState) -> bool {
        s.delta >= self.delta_min
            && s.delta <= self.delta_max
            && s.domega >= self.domega_min
            && s.domega <= self.domega_max
    }

    pub fn is_valid(&self) -> bool {
        self.delta_min < self.delta_max && self.domega_min < self.domega_max
    }

    pub fn width(&self) -> f64 {
        self.delta_max - self.delta_min
    }

    pub fn height(&self) -> f64 {
        self.domega_max - self.domega_min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    /// δ crosses `target` while increasing.
    AngleCrossing { id: u32, target: f64 },
    /// Simulation time reaches `at`.
    Time { id: u32, at: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub step: f64,
    pub max_time: f64,
    pub window: Window,
    pub events: Vec<Event>,
    /// Stop once the state holds within [`CONVERGENCE_TOL`] of this point.
    pub converge_to: Option<PhaseState>,
}

impl IntegratorConfig {
    pub fn new(max_time: f64, window: Window) -> Self {
        Self {
            step: DEFAULT_STEP,
            max_time,
            window,
            events: Vec::new(),
            converge_to: None,
        }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn with_event(mut self, event: Event) -> Self {
        self.events.push(event);
        self
    }

    pub fn converging_to(mut self, target: PhaseState) -> Self {
        self.converge_to = Some(target);
        self
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        let bad = |field, reason: &str| {
            Err(IntegratorError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step", "must be a positive finite number");
        }
        if !(self.max_time >= self.step && self.max_time.is_finite()) {
            return bad("max_time", "must be finite and at least one step");
        }
        if !self.window.is_valid() {
            return bad("window", "must be a non-empty rectangle");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    LeftWindow,
    TimeOut,
    EventFired(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub t: f64,
    pub state: PhaseState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub termination: Termination,
    pub direction: Direction,
}

impl Trajectory {
    pub fn last(&self) -> Sample {
        *self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn duration(&self) -> f64 {
        self.last().t - self.samples[0].t
    }

    pub fn states(&self) -> impl Iterator<Item = PhaseState> + '_ {
        self.samples.iter().map(|s| s.state)
    }

    /// CSV with header `t,delta,domega`, one sample per row.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "delta", "domega"])?;
        for s in &self.samples {
            wr.serialize((s.t, s.state.delta, s.state.domega))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn checked_rate<F: VectorField + ?Sized>(field: &F, s: PhaseState, t: f64) -> Result<PhaseRate, IntegratorError> {
    let r = field.rate(s)?;
    if r.is_finite() {
        Ok(r)
    } else {
        Err(IntegratorError::NonFiniteState { t })
    }
}

/// One classic fourth-order Runge–Kutta step of size `h`.
pub fn rk4_step<F: VectorField + ?Sized>(
    field: &F,
    s: PhaseState,
    h: f64,
    t: f64,
) -> Result<PhaseState, IntegratorError> {
    let at = |base: PhaseState, k: PhaseRate, c: f64| PhaseState {
        delta: base.delta + c * k.d_delta,
        domega: base.domega + c * k.d_domega,
    };
    let k1 = checked_rate(field, s, t)?;
    let k2 = checked_rate(field, at(s, k1, 0.5 * h), t)?;
    let k3 = checked_rate(field, at(s, k2, 0.5 * h), t)?;
    let k4 = checked_rate(field, at(s, k3, h), t)?;
    let next = PhaseState {
        delta: s.delta + h / 6.0 * (k1.d_delta + 2.0 * k2.d_delta + 2.0 * k3.d_delta + k4.d_delta),
        domega: s.domega + h / 6.0 * (k1.d_domega + 2.0 * k2.d_domega + 2.0 * k3.d_domega + k4.d_domega),
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(IntegratorError::NonFiniteState { t: t + h })
    }
}

/// Sub-step τ ∈ (0, h] at which the RK4 step from `s` reaches δ = `target`.
fn locate_crossing<F: VectorField + ?Sized>(
    field: &F,
    s: PhaseState,
    next: PhaseState,
    h: f64,
    target: f64,
    t: f64,
) -> Result<(f64, PhaseState), IntegratorError> {
    let mut lo = 0.0;
    let mut hi = h;
    let mut tau = h * (target - s.delta) / (next.delta - s.delta);
    let mut state = rk4_step(field, s, tau, t)?;
    for _ in 0..60 {
        let err = state.delta - target;
        if err.abs() < EVENT_TOL {
            break;
        }
        if err < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        // Newton on δ(τ) with δ' = Δω, falling back to bisection.
        let newton = tau - err / state.domega;
        tau = if newton > lo && newton < hi && state.domega != 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        state = rk4_step(field, s, tau, t)?;
    }
    Ok((tau, state))
}

/// Integrate `field` from `init` under `cfg`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    init: PhaseState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegratorError> {
    cfg.validate()?;
    if !init.is_finite() || !cfg.window.contains(init) {
        return Err(IntegratorError::InitOutsideWindow {
            delta: init.delta,
            domega: init.domega,
        });
    }
    let direction = field.direction();
    let finish = |samples, termination| Trajectory {
        samples,
        termination,
        direction,
    };
    let mut samples = Vec::with_capacity(((cfg.max_time / cfg.step) as usize).min(1 << 20) + 2);
    let mut t = 0.0;
    let mut s = init;
    samples.push(Sample { t, state: s });

    let mut settled_since: Option<f64> = None;
    let mut converged = |t: f64, s: PhaseState| -> bool {
        let Some(target) = cfg.converge_to else {
            return false;
        };
        if s.scaled_distance(&target) < CONVERGENCE_TOL {
            let since = *settled_since.get_or_insert(t);
            t - since >= CONVERGENCE_HOLD - 1e-12
        } else {
            settled_since = None;
            false
        }
    };
    converged(t, s);

    let end_slack = 1e-12 * cfg.max_time.max(1.0);
    let mut k: u64 = 0;
    loop {
        let remaining = cfg.max_time - t;
        if remaining <= end_slack {
            return Ok(finish(samples, Termination::TimeOut));
        }
        let mut h = cfg.step.min(remaining);
        let mut time_event = None;
        for ev in &cfg.events {
            if let Event::Time { id, at } = *ev {
                if at > t && at <= t + h + end_slack && time_event.is_none_or(|(_, a)| at < a) {
                    time_event = Some((id, at));
                }
            }
        }
        if let Some((_, at)) = time_event {
            h = at - t;
        }
        let next = rk4_step(field, s, h, t)?;

        let mut crossing: Option<(u32, f64, PhaseState)> = None;
        for ev in &cfg.events {
            if let Event::AngleCrossing { id, target } = *ev {
                if s.delta < target && next.delta >= target {
                    let (tau, state) = locate_crossing(field, s, next, h, target, t)?;
                    if crossing.is_none_or(|(_, best, _)| tau < best) {
                        crossing = Some((id, tau, state));
                    }
                }
            }
        }
        if let Some((id, tau, state)) = crossing {
            if tau > 0.0 {
                samples.push(Sample { t: t + tau, state });
            }
            return Ok(finish(samples, Termination::EventFired(id)));
        }

        k += 1;
        t = match time_event {
            Some((_, at)) => at,
            None if h == cfg.step => {
                // Avoid drift from repeated addition on the regular grid.
                let grid = k as f64 * cfg.step;
                if (grid - (t + h)).abs() < 1e-9 * cfg.step {
                    grid
                } else {
                    t + h
                }
            }
            None => t + h,
        };
        s = next;
        samples.push(Sample { t, state: s });

        if let Some((id, _)) = time_event {
            return Ok(finish(samples, Termination::EventFired(id)));
        }
        if !cfg.window.contains(s) {
            return Ok(finish(samples, Termination::LeftWindow));
        }
        if converged(t, s) {
            return Ok(finish(samples, Termination::Converged));
        }
    }
}

/// First crossing of δ = `target` with δ increasing, linearly interpolated
/// between the bracketing samples.
pub fn event_crossing(traj: &Trajectory, target: f64) -> Option<Sample> {
    traj.samples.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if a.state.delta < target && b.state.delta >= target {
            let theta = (target - a.state.delta) / (b.state.delta - a.state.delta);
            Some(Sample {
                t: a.t + theta * (b.t - a.t),
                state: PhaseState {
                    delta: target,
                    domega: a.state.domega + theta * (b.state.domega - a.state.domega),
                },
            })
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oscillator(s: PhaseState) -> Result<PhaseRate, ModelError> {
        Ok(PhaseRate {
            d_delta: s.domega,
            d_domega: -s.delta,
        })
    }

    fn big_window() -> Window {
        Window {
            delta_min: -10.0,
            delta_max: 10.0,
            domega_min: -10.0,
            domega_max: 10.0,
        }
    }

    #[test]
    fn harmonic_oscillator_returns_after_one_period() {
        let cfg = IntegratorConfig::new(2.0 * PI, big_window());
        let traj = integrate(&oscillator, PhaseState::new(1.0, 0.0), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::TimeOut);
        let end = traj.last();
        assert!((end.t - 2.0 * PI).abs() < 1e-12);
        assert!((end.state.delta - 1.0).abs() < 1e-8);
        assert!(end.state.domega.abs() < 1e-8);
    }

    #[test]
    fn samples_are_strictly_increasing_and_evenly_spaced() {
        let cfg = IntegratorConfig::new(0.01234, big_window());
        let traj = integrate(&oscillator, PhaseState::new(1.0, 0.0), &cfg).unwrap();
        let n = traj.samples.len();
        for w in traj.samples[..n - 1].windows(2) {
            assert!((w[1].t - w[0].t - cfg.step).abs() < 1e-12);
        }
        let last = traj.samples[n - 1].t - traj.samples[n - 2].t;
        assert!(last > 0.0 && last <= cfg.step + 1e-15);
    }

    #[test]
    fn equilibrium_start_converges_immediately() {
        let cfg = IntegratorConfig::new(5.0, big_window()).converging_to(PhaseState::new(0.0, 0.0));
        let traj = integrate(&oscillator, PhaseState::new(0.0, 0.0), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        assert!(traj.states().all(|s| s == PhaseState::new(0.0, 0.0)));
        assert!((traj.duration() - CONVERGENCE_HOLD).abs() < 2.0 * cfg.step);
    }

    #[test]
    fn angle_event_lands_on_target() {
        let cfg = IntegratorConfig::new(5.0, big_window()).with_event(Event::AngleCrossing { id: 7, target: 0.5 });
        let traj = integrate(&oscillator, PhaseState::new(0.0, 1.0), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::EventFired(7));
        let end = traj.last();
        assert!((end.state.delta - 0.5).abs() < EVENT_TOL);
        assert!((end.t - 0.5f64.asin()).abs() < 1e-9);
    }

    #[test]
    fn time_event_shortens_last_step() {
        let cfg = IntegratorConfig::new(5.0, big_window()).with_event(Event::Time { id: 3, at: 0.12345 });
        let traj = integrate(&oscillator, PhaseState::new(0.0, 1.0), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::EventFired(3));
        assert_eq!(traj.last().t, 0.12345);
    }

    #[test]
    fn window_exit_terminates() {
        let escape = |s: PhaseState| {
            Ok(PhaseRate {
                d_delta: 1.0,
                d_domega: 0.0 * s.domega,
            })
        };
        let cfg = IntegratorConfig::new(100.0, big_window());
        let traj = integrate(&escape, PhaseState::new(0.0, 0.0), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::LeftWindow);
        assert!(traj.last().state.delta > 10.0);
    }

    #[test]
    fn start_outside_window_is_error() {
        let cfg = IntegratorConfig::new(1.0, big_window());
        assert!(matches!(
            integrate(&oscillator, PhaseState::new(20.0, 0.0), &cfg),
            Err(IntegratorError::InitOutsideWindow { .. })
        ));
    }

    #[test]
    fn non_finite_field_is_error() {
        let blowup = |_s: PhaseState| {
            Ok(PhaseRate {
                d_delta: f64::NAN,
                d_domega: 0.0,
            })
        };
        let cfg = IntegratorConfig::new(1.0, big_window());
        assert!(matches!(
            integrate(&blowup, PhaseState::new(0.0, 0.0), &cfg),
            Err(IntegratorError::NonFiniteState { .. })
        ));
    }

    #[test]
    fn negative_step_is_rejected() {
        let cfg = IntegratorConfig::new(1.0, big_window()).with_step(-1e-4);
        assert!(matches!(
            integrate(&oscillator, PhaseState::new(0.0, 0.0), &cfg),
            Err(IntegratorError::InvalidConfig { field: "step", .. })
        ));
    }

    #[test]
    fn crossing_interpolates_linearly() {
        let h = 1e-4;
        let traj = Trajectory {
            samples: vec![
                Sample {
                    t: 0.0,
                    state: PhaseState::new(1.0, 0.0),
                },
                Sample {
                    t: h,
                    state: PhaseState::new(1.2, 2.0),
                },
            ],
            termination: Termination::TimeOut,
            direction: Direction::Forward,
        };
        let hit = event_crossing(&traj, 1.1).unwrap();
        assert!((hit.t - h / 2.0).abs() < 1e-15);
        assert!((hit.state.domega - 1.0).abs() < 1e-12);
        assert!(event_crossing(&traj, 1.3).is_none());
    }

    #[test]
    fn constant_trajectory_never_crosses() {
        let cfg = IntegratorConfig::new(0.05, big_window());
        let still = |_s: PhaseState| {
            Ok(PhaseRate {
                d_delta: 0.0,
                d_domega: 0.0,
            })
        };
        let traj = integrate(&still, PhaseState::new(0.7, 0.0), &cfg).unwrap();
        assert!(event_crossing(&traj, 1.0).is_none());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let cfg = IntegratorConfig::new(3e-4, big_window());
        let traj = integrate(&oscillator, PhaseState::new(1.0, 0.0), &cfg).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,delta,domega"));
        let row: Vec<f64> = lines.nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(row[0], traj.samples[1].t);
        assert_eq!(row[1], traj.samples[1].state.delta);
    }
}
