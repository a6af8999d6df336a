//! Domain-of-attraction estimation by trajectory reversal.
//!
//! Points seeded next to the saddle (UEP) are integrated under the
//! time-reversed field. The reverse trajectories trace the saddle's stable
//! manifold, which bounds the basin of the stable equilibrium (SEP). On the
//! phase cylinder the basin is a band, so the same manifold shifted by −2π
//! closes it on the left. Branches are traced in a window tall enough that
//! a reverse trajectory leaving it can never return, assembled into a
//! polygon there, and the polygon is then clipped to the display window.

use crate::equilibrium::{find_equilibria, jacobian_at, sep_uep_pair, Equilibrium, EquilibriumKind, VpccMode};
use crate::geometry::{
    clip_to_window, perimeter_position, polyline_self_crossing, polylines_cross, window_exit_point, window_walk, PolygonIndex,
};
use crate::integrator::{integrate, IntegratorConfig, IntegratorError, Termination, VsgField, Window, DEFAULT_STEP};
use crate::model::{electrical_power, GridParams, ModelError, PhaseState, VsgParams, FREQUENCY_SCALE};
use crate::SCHEMA_VERSION;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DoaError {
    #[error("no equilibrium exists on this grid, so there is no domain of attraction")]
    NoEquilibrium,
    #[error("the saddle bounding the basin is degenerate (saddle-node at δ = {delta})")]
    DegenerateUep { delta: f64 },
    #[error("invalid seed setting `{field}`: {reason}")]
    InvalidSeeds { field: &'static str, reason: String },
    #[error("window does not contain the equilibrium at δ = {delta}")]
    WindowMissesEquilibrium { delta: f64 },
    #[error("boundary branch {branch} did not leave the window ({termination:?})")]
    BranchNotClosed { branch: u32, termination: Termination },
    #[error("boundary branches {first} and {second} intersect")]
    BranchesIntersect { first: u32, second: u32 },
    #[error("assembled boundary polygon is not simple (edges {0} and {1} cross)")]
    PolygonNotSimple(usize, usize),
    #[error("the stable equilibrium does not lie inside the assembled boundary")]
    SepOutside,
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// `count` points on a scaled-norm circle around each saddle.
    Ring,
    /// Two points along the saddle's stable eigenvector.
    #[default]
    SeparatrixPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedConfig {
    pub count: usize,
    /// Seed distance from the saddle in the scaled norm.
    pub radius: f64,
    pub mode: SeedMode,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self {
            count: 200,
            radius: 1e-3,
            mode: SeedMode::SeparatrixPair,
        }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<(), DoaError> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(DoaError::InvalidSeeds {
                field: "radius",
                reason: "must be a positive finite number".into(),
            });
        }
        if self.mode == SeedMode::Ring && self.count < 4 {
            return Err(DoaError::InvalidSeeds {
                field: "count",
                reason: "a ring needs at least 4 seeds".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoaOptions {
    pub seeds: SeedConfig,
    /// Clipping window; `None` centers the default window on the SEP.
    pub window: Option<Window>,
    pub step: f64,
    /// Reverse-integration horizon per branch (s).
    pub max_time: f64,
    pub vpcc_mode: VpccMode,
}

impl Default for DoaOptions {
    fn default() -> Self {
        Self {
            seeds: SeedConfig::default(),
            window: None,
            step: DEFAULT_STEP,
            max_time: 5.0,
            vpcc_mode: VpccMode::default(),
        }
    }
}

/// Which copy of the saddle a branch leaves from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Principal,
    /// The saddle shifted by −2π.
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Leaves the saddle with Δω rising.
    Upper,
    Lower,
}

/// One reverse trajectory from a seed next to a saddle. Its last point lies
/// on the boundary of the tracing window, which may extend past the display
/// window in Δω.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub id: u32,
    pub anchor: Anchor,
    pub side: Side,
    pub points: Vec<PhaseState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoaBoundary {
    pub branches: Vec<Branch>,
    pub uep: Equilibrium,
    pub sep: Equilibrium,
    pub window: Window,
    /// Window the branches were traced in: the display window stretched in
    /// Δω until reverse trajectories cannot come back.
    pub trace_window: Window,
    /// Stable eigenvector at the UEP, unit length in the scaled norm.
    pub stable_direction: PhaseState,
    polygon: PolygonIndex,
}

/// Unit (scaled-norm) eigenvector for the negative eigenvalue of the
/// Jacobian at a saddle.
pub fn stable_direction(
    p: &VsgParams,
    g: &GridParams,
    uep: &Equilibrium,
    mode: VpccMode,
) -> Result<PhaseState, ModelError> {
    let m = jacobian_at(p, g, uep.delta0, mode)?.matrix;
    let (a21, a22) = (m[1][0], m[1][1]);
    let lambda = 0.5 * (a22 - (a22 * a22 + 4.0 * a21).sqrt());
    let norm = 1.0f64.max(lambda.abs() / FREQUENCY_SCALE);
    Ok(PhaseState::new(1.0 / norm, lambda / norm))
}

/// `window` stretched in Δω past the levels beyond which the reversed
/// field pushes |Δω| monotonically outward. Above (P_ref − min P_e)/D the
/// forward dynamics decelerate everywhere, so a reverse trajectory that
/// crosses that level keeps rising; symmetrically below (P_ref − max P_e)/D.
pub fn tracing_window(p: &VsgParams, g: &GridParams, window: Window) -> Result<Window, ModelError> {
    if p.damping_d <= 0.0 {
        return Ok(window);
    }
    const SAMPLES: usize = 1440;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..SAMPLES {
        let pe = electrical_power(p, g, -PI + 2.0 * PI * k as f64 / SAMPLES as f64)?;
        lo = lo.min(pe);
        hi = hi.max(pe);
    }
    let margin = 0.05 * (hi - lo) + 1.0;
    let top = (p.p_ref - lo + margin) / p.damping_d;
    let bottom = (p.p_ref - hi - margin) / p.damping_d;
    Ok(Window {
        domega_min: window.domega_min.min(bottom - 1.0),
        domega_max: window.domega_max.max(top + 1.0),
        ..window
    })
}

fn offset(base: PhaseState, dir: PhaseState, r: f64) -> PhaseState {
    PhaseState::new(base.delta + r * dir.delta, base.domega + r * dir.domega)
}

struct Seed {
    anchor: Anchor,
    state: PhaseState,
}

fn seeds_for(cfg: &SeedConfig, anchor: Anchor, center: PhaseState, v_s: PhaseState) -> Vec<Seed> {
    match cfg.mode {
        SeedMode::SeparatrixPair => vec![
            Seed {
                anchor,
                state: offset(center, v_s, -cfg.radius),
            },
            Seed {
                anchor,
                state: offset(center, v_s, cfg.radius),
            },
        ],
        SeedMode::Ring => (0..cfg.count)
            .map(|k| {
                let theta = 2.0 * PI * k as f64 / cfg.count as f64;
                Seed {
                    anchor,
                    state: PhaseState::new(
                        center.delta + cfg.radius * theta.cos(),
                        center.domega + cfg.radius * FREQUENCY_SCALE * theta.sin(),
                    ),
                }
            })
            .collect(),
    }
}

fn trace(field: &VsgField, seed: PhaseState, opts: &DoaOptions, window: Window) -> Result<(Vec<PhaseState>, Termination), DoaError> {
    let cfg = IntegratorConfig::new(opts.max_time, window).with_step(opts.step);
    let traj = integrate(field, seed, &cfg)?;
    Ok((traj.states().collect(), traj.termination))
}

/// Which way a reverse trajectory leaves the saddle: its displacement, once
/// ten seed radii out, projected on the stable direction. Upper departs
/// against `v_s` (whose Δω component is negative).
fn departure_side(pts: &[PhaseState], center: PhaseState, v_s: PhaseState, radius: f64) -> Side {
    let away = pts
        .iter()
        .find(|s| s.scaled_distance(&center) > 10.0 * radius)
        .unwrap_or(&pts[pts.len() - 1]);
    let s = FREQUENCY_SCALE * FREQUENCY_SCALE;
    let along = (away.delta - center.delta) * v_s.delta + (away.domega - center.domega) * v_s.domega / s;
    if along < 0.0 {
        Side::Upper
    } else {
        Side::Lower
    }
}

/// Ring mode keeps, per side, the trajectory ending farthest from the
/// saddle in the scaled norm.
fn envelope(
    traces: Vec<(Vec<PhaseState>, Termination)>,
    center: PhaseState,
    v_s: PhaseState,
    radius: f64,
) -> Vec<(Vec<PhaseState>, Termination)> {
    let mut best: [Option<(f64, usize)>; 2] = [None, None];
    for (i, (pts, _)) in traces.iter().enumerate() {
        let end = *pts.last().expect("trace has samples");
        let side = usize::from(departure_side(pts, center, v_s, radius) == Side::Lower);
        let d = end.scaled_distance(&center);
        if best[side].is_none_or(|(bd, _)| d > bd) {
            best[side] = Some((d, i));
        }
    }
    let mut traces: Vec<Option<_>> = traces.into_iter().map(Some).collect();
    best.iter()
        .flatten()
        .map(|&(_, i)| traces[i].take().expect("distinct indices"))
        .collect()
}

/// Estimate the basin of the SEP on grid `g`.
pub fn estimate_doa(p: &VsgParams, g: &GridParams, opts: &DoaOptions) -> Result<DoaBoundary, DoaError> {
    opts.seeds.validate()?;
    let eqs = find_equilibria(p, g, (-PI, PI), opts.vpcc_mode)?;
    if eqs.is_empty() {
        return Err(DoaError::NoEquilibrium);
    }
    let Some((sep, uep)) = sep_uep_pair(&eqs) else {
        return Err(match eqs.iter().find(|e| e.kind == EquilibriumKind::Degenerate) {
            Some(e) => DoaError::DegenerateUep { delta: e.delta0 },
            None => DoaError::NoEquilibrium,
        });
    };
    let window = opts.window.unwrap_or_else(|| Window::around(sep.delta0));
    if !window.is_valid() {
        return Err(IntegratorError::InvalidConfig {
            field: "window",
            reason: "must be a non-empty rectangle".into(),
        }
        .into());
    }
    for e in [&sep, &uep] {
        if !window.contains(PhaseState::new(e.delta0, 0.0)) {
            return Err(DoaError::WindowMissesEquilibrium { delta: e.delta0 });
        }
    }
    let trace_window = tracing_window(p, g, window)?;
    let v_s = stable_direction(p, g, &uep, opts.vpcc_mode)?;
    let principal = PhaseState::new(uep.delta0, 0.0);
    let shifted = PhaseState::new(uep.delta0 - 2.0 * PI, 0.0);
    let shifted_inside = window.contains(shifted);

    let mut seeds = seeds_for(&opts.seeds, Anchor::Principal, principal, v_s);
    if shifted_inside {
        seeds.extend(seeds_for(&opts.seeds, Anchor::Shifted, shifted, v_s));
    }
    let field = VsgField::reversed(*p, *g);
    let traces: Vec<_> = seeds
        .par_iter()
        .map(|s| trace(&field, s.state, opts, trace_window).map(|t| (s.anchor, t)))
        .collect::<Result<_, _>>()?;

    let mut by_anchor: [Vec<_>; 2] = [Vec::new(), Vec::new()];
    for (anchor, t) in traces {
        by_anchor[usize::from(anchor == Anchor::Shifted)].push(t);
    }
    let mut branches = Vec::new();
    for (anchor, center, group) in [
        (Anchor::Principal, principal, std::mem::take(&mut by_anchor[0])),
        (Anchor::Shifted, shifted, std::mem::take(&mut by_anchor[1])),
    ] {
        let group = match opts.seeds.mode {
            SeedMode::SeparatrixPair => group,
            SeedMode::Ring => envelope(group, center, v_s, opts.seeds.radius),
        };
        for (pts, termination) in group {
            let id = branches.len() as u32;
            if termination != Termination::LeftWindow {
                return Err(DoaError::BranchNotClosed { branch: id, termination });
            }
            if polyline_self_crossing(&pts, false).is_some() {
                return Err(DoaError::BranchesIntersect { first: id, second: id });
            }
            let side = departure_side(&pts, center, v_s, opts.seeds.radius);
            branches.push(Branch {
                id,
                anchor,
                side,
                points: pts,
            });
        }
    }
    for i in 0..branches.len() {
        for j in i + 1..branches.len() {
            if polylines_cross(&branches[i].points, &branches[j].points).is_some() {
                return Err(DoaError::BranchesIntersect {
                    first: branches[i].id,
                    second: branches[j].id,
                });
            }
        }
    }
    for b in &mut branches {
        let n = b.points.len();
        b.points[n - 1] = window_exit_point(&trace_window, b.points[n - 2], b.points[n - 1]);
    }

    let full = assemble(&branches, &trace_window, PhaseState::new(sep.delta0, 0.0), principal, shifted)?;
    if let Some((a, b)) = polyline_self_crossing(&full, true) {
        return Err(DoaError::PolygonNotSimple(a, b));
    }
    let index = PolygonIndex::new(clip_to_window(&full, &window));
    if !index.contains(PhaseState::new(sep.delta0, 0.0)) {
        return Err(DoaError::SepOutside);
    }
    Ok(DoaBoundary {
        branches,
        uep,
        sep,
        window,
        trace_window,
        stable_direction: v_s,
        polygon: index,
    })
}

fn pick(branches: &[Branch], anchor: Anchor, side: Side) -> Option<&Branch> {
    branches.iter().find(|b| b.anchor == anchor && b.side == side)
}

/// Window chord through a saddle: from the upper branch's exit, through the
/// saddle, to the lower branch's exit.
fn chord(upper: &Branch, lower: &Branch, saddle: PhaseState) -> Vec<PhaseState> {
    let mut c: Vec<PhaseState> = upper.points.iter().rev().copied().collect();
    c.push(saddle);
    c.extend_from_slice(&lower.points);
    c
}

/// The chord closed counter-clockwise along the window from its last point
/// back to its first.
fn close_along_window(window: &Window, chord: &[PhaseState]) -> Vec<PhaseState> {
    let (first, last) = (chord[0], chord[chord.len() - 1]);
    let mut poly = chord.to_vec();
    poly.extend(window_walk(window, last, first));
    poly
}

/// Each saddle chord splits the window in two. The basin is the part on the
/// SEP side of the principal chord, further cut by the shifted chord when
/// that chord falls inside it.
fn assemble(
    branches: &[Branch],
    window: &Window,
    sep: PhaseState,
    principal: PhaseState,
    shifted: PhaseState,
) -> Result<Vec<PhaseState>, DoaError> {
    let missing = |id| DoaError::BranchNotClosed {
        branch: id,
        termination: Termination::TimeOut,
    };
    let mu = pick(branches, Anchor::Principal, Side::Upper).ok_or(missing(0))?;
    let ml = pick(branches, Anchor::Principal, Side::Lower).ok_or(missing(1))?;
    let mut cp = chord(mu, ml, principal);
    let mut region = PolygonIndex::new(close_along_window(window, &cp));
    if !region.contains(sep) {
        cp.reverse();
        region = PolygonIndex::new(close_along_window(window, &cp));
    }
    let shifted_pair = match (
        pick(branches, Anchor::Shifted, Side::Upper),
        pick(branches, Anchor::Shifted, Side::Lower),
    ) {
        (Some(su), Some(sl)) if region.contains(shifted) => Some((su, sl)),
        _ => None,
    };
    let Some((su, sl)) = shifted_pair else {
        let mut poly = region.vertices().to_vec();
        poly.dedup();
        return Ok(poly);
    };
    let mut cs = chord(su, sl, shifted);
    let (a, b) = (cp[0], cp[cp.len() - 1]);
    let perimeter = 2.0 * (window.width() + window.height());
    let from_b = |x: PhaseState| (perimeter_position(window, x) - perimeter_position(window, b)).rem_euclid(perimeter);
    if from_b(cs[cs.len() - 1]) < from_b(cs[0]) {
        cs.reverse();
    }
    let mut poly = cp;
    poly.extend(window_walk(window, b, cs[0]));
    poly.extend_from_slice(&cs);
    poly.extend(window_walk(window, cs[cs.len() - 1], a));
    poly.dedup();
    Ok(poly)
}

impl DoaBoundary {
    /// Membership of a state inside the window; boundary points count as
    /// inside.
    pub fn contains(&self, s: PhaseState) -> bool {
        self.window.contains(s) && self.polygon.contains(s)
    }

    /// Area of the clipped basin (rad · rad/s).
    pub fn area(&self) -> f64 {
        self.polygon.area()
    }

    pub fn polygon(&self) -> &[PhaseState] {
        self.polygon.vertices()
    }

    /// CSV with header `branch_id,delta,domega`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["branch_id", "delta", "domega"])?;
        for b in &self.branches {
            for s in &b.points {
                wr.serialize((b.id, s.delta, s.domega))?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn to_document(&self) -> DoaDocument {
        let pts = |v: &[PhaseState]| v.iter().map(|s| [s.delta, s.domega]).collect();
        DoaDocument {
            schema_version: SCHEMA_VERSION,
            sep: self.sep,
            uep: self.uep,
            window: self.window,
            trace_window: self.trace_window,
            area: self.area(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchDocument {
                    id: b.id,
                    anchor: b.anchor,
                    side: b.side,
                    points: pts(&b.points),
                })
                .collect(),
            polygon: pts(self.polygon()),
        }
    }
}

/// Area of the basin, the usual figure of merit for parameter sweeps.
pub fn doa_area(b: &DoaBoundary) -> f64 {
    b.area()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDocument {
    pub id: u32,
    pub anchor: Anchor,
    pub side: Side,
    pub points: Vec<[f64; 2]>,
}

/// JSON form of a [`DoaBoundary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaDocument {
    pub schema_version: u32,
    pub sep: Equilibrium,
    pub uep: Equilibrium,
    pub window: Window,
    pub trace_window: Window,
    pub area: f64,
    pub branches: Vec<BranchDocument>,
    pub polygon: Vec<[f64; 2]>,
}
