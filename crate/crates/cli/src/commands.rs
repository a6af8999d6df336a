//! Subcommand implementations and the JSON documents they emit.

use crate::config::{invalid, ClearingSpec, RunConfig, ScenarioSpec, SweepParameter};
use crate::CliError;
use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use vsg_doa::doa::{estimate_doa, DoaBoundary, DoaError};
use vsg_doa::equilibrium::{critical_sag, equilibria, Equilibrium, VpccMode};
use vsg_doa::integrator::{integrate, IntegratorConfig, Sample, Termination, VsgField, Window};
use vsg_doa::model::PhaseState;
use vsg_doa::transient::{
    cca_bruteforce, cca_doa, cca_eac, classify_fault, simulate_scenario, Clearing, EacVoltageModel, FaultScenario,
    FaultType,
};
use vsg_doa::SCHEMA_VERSION;

pub fn write_json<T: Serialize>(dir: &Path, name: &str, doc: &T) -> anyhow::Result<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaReport {
    pub schema_version: u32,
    pub sag: f64,
    /// Grid voltage amplitude (V).
    pub vg: f64,
    pub vpcc_mode: VpccMode,
    /// Deepest sag (p.u.) that still leaves an equilibrium.
    pub critical_sag: Option<f64>,
    pub equilibria: Vec<Equilibrium>,
}

pub fn run_equilibria(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.vsg_params();
    let base = cfg.grid_params();
    let g = base.with_sag(cfg.sag);
    let mode = cfg.doa.vpcc_mode;
    let eqs = equilibria(&p, &g, mode).context("locating equilibria")?;
    let v_star = critical_sag(&p, &base, mode).context("locating the saddle-node sag")?;
    for e in &eqs {
        println!("{:?} at delta = {:.6} rad, V_PCC = {:.3} V", e.kind, e.delta0, e.vpcc);
    }
    if eqs.is_empty() {
        println!("no equilibrium at {} p.u.", cfg.sag);
    }
    write_json(
        out,
        "equilibria.json",
        &EquilibriaReport {
            schema_version: SCHEMA_VERSION,
            sag: cfg.sag,
            vg: g.vg,
            vpcc_mode: mode,
            critical_sag: v_star,
            equilibria: eqs,
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitEntry {
    pub id: usize,
    pub start: PhaseState,
    pub end: Sample,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitReport {
    pub schema_version: u32,
    pub sag: f64,
    pub window: Window,
    pub trajectories_file: String,
    pub trajectories: Vec<PortraitEntry>,
}

fn spread(range: [f64; 2], n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (range[0] + range[1])
    } else {
        range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
    }
}

pub fn run_portrait(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.vsg_params();
    let g = cfg.grid_params().with_sag(cfg.sag);
    let pc = &cfg.portrait;
    let window = Window {
        delta_min: pc.delta_range[0],
        delta_max: pc.delta_range[1],
        domega_min: pc.domega_range[0],
        domega_max: pc.domega_range[1],
    };
    let starts: Vec<PhaseState> = (0..pc.points[0])
        .flat_map(|i| {
            (0..pc.points[1]).map(move |j| {
                PhaseState::new(spread(pc.delta_range, pc.points[0], i), spread(pc.domega_range, pc.points[1], j))
            })
        })
        .collect();
    let field = VsgField::forward(p, g);
    let icfg = IntegratorConfig::new(pc.duration, window).with_step(cfg.integrator.step);
    let trajs = starts
        .par_iter()
        .map(|&s| integrate(&field, s, &icfg))
        .collect::<Result<Vec<_>, _>>()
        .context("integrating portrait trajectories")?;

    let name = "portrait.csv";
    let mut wr = csv::Writer::from_writer(create(out, name)?);
    wr.write_record(["trajectory", "t", "delta", "domega"]).context("writing portrait.csv")?;
    for (id, t) in trajs.iter().enumerate() {
        for s in &t.samples {
            wr.serialize((id, s.t, s.state.delta, s.state.domega))
                .context("writing portrait.csv")?;
        }
    }
    wr.flush().context("writing portrait.csv")?;
    let entries = trajs
        .iter()
        .zip(&starts)
        .enumerate()
        .map(|(id, (t, &start))| PortraitEntry {
            id,
            start,
            end: t.last(),
            termination: t.termination,
        })
        .collect();
    println!("{} trajectories written to {name}", trajs.len());
    write_json(
        out,
        "portrait.json",
        &PortraitReport {
            schema_version: SCHEMA_VERSION,
            sag: cfg.sag,
            window,
            trajectories_file: name.into(),
            trajectories: entries,
        },
    )?;
    Ok(())
}

fn write_boundary(b: &DoaBoundary, out: &Path, name: &str) -> anyhow::Result<()> {
    let mut w = create(out, name)?;
    b.write_csv(&mut w).with_context(|| format!("writing {name}"))?;
    w.flush()?;
    Ok(())
}

pub fn run_doa(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let p = cfg.vsg_params();
    let g = cfg.grid_params().with_sag(cfg.sag);
    let b = estimate_doa(&p, &g, &cfg.doa_options())
        .with_context(|| format!("estimating the basin at {} p.u.", cfg.sag))?;
    write_boundary(&b, out, "doa_boundary.csv")?;
    write_json(out, "doa.json", &b.to_document())?;
    println!(
        "SEP {:.6} rad, UEP {:.6} rad, area {:.3} rad^2/s",
        b.sep.delta0,
        b.uep.delta0,
        b.area()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOutcome {
    pub name: String,
    pub sag: f64,
    pub fault_time: f64,
    /// Clearing actually applied, with basin-relative offsets resolved.
    pub clearing: Clearing,
    pub fault_type: FaultType,
    pub stable: bool,
    pub cleared_at: Option<Sample>,
    pub final_sep_delta: Option<f64>,
    pub end: Sample,
    pub trajectory_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub scenarios: Vec<ScenarioOutcome>,
}

fn resolve_clearing(cfg: &RunConfig, s: &ScenarioSpec) -> anyhow::Result<Clearing> {
    Ok(match s.clearing {
        ClearingSpec::Never => Clearing::Never,
        ClearingSpec::AtAngle(a) => Clearing::AtAngle(a),
        ClearingSpec::AtTime(t) => Clearing::AtTime(t),
        ClearingSpec::CcaOffset(off) => {
            let g = cfg.grid_params();
            let c = cca_doa(&cfg.vsg_params(), &g, &g.with_sag(s.sag), &g, &cfg.transient_settings())
                .with_context(|| format!("scenario {}: clearing angle relative to the basin crossing", s.name))?;
            Clearing::AtAngle(c + off)
        }
    })
}

pub fn run_simulate(cfg: &RunConfig, out: &Path, only: Option<&str>) -> Result<(), CliError> {
    let picked: Vec<&ScenarioSpec> = cfg
        .scenarios
        .iter()
        .filter(|s| only.is_none_or(|n| n == s.name))
        .collect();
    if picked.is_empty() {
        return Err(match only {
            Some(n) => invalid("scenario", format!("no scenario named {n}")),
            None => invalid("scenarios", "no scenarios configured"),
        }
        .into());
    }
    let settings = cfg.transient_settings();
    let (p, g) = (cfg.vsg_params(), cfg.grid_params());
    let runs = picked
        .par_iter()
        .map(|s| -> anyhow::Result<_> {
            let clearing = resolve_clearing(cfg, s)?;
            let mut sc = FaultScenario::sag(p, g, s.sag, clearing);
            sc.fault_time = s.fault_time;
            let v = simulate_scenario(&sc, &settings).with_context(|| format!("simulating scenario {}", s.name))?;
            Ok((clearing, v))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut outcomes = Vec::new();
    for (s, (clearing, v)) in picked.iter().zip(runs) {
        let file = format!("simulate_{}.csv", s.name);
        let mut w = create(out, &file)?;
        v.trajectory.write_csv(&mut w).with_context(|| format!("writing {file}"))?;
        w.flush().context("flushing output")?;
        println!(
            "{}: {:?}, {}",
            s.name,
            v.fault_type,
            if v.stable { "stable" } else { "loss of synchronism" }
        );
        outcomes.push(ScenarioOutcome {
            name: s.name.clone(),
            sag: s.sag,
            fault_time: s.fault_time,
            clearing,
            fault_type: v.fault_type,
            stable: v.stable,
            cleared_at: v.cleared_at,
            final_sep_delta: v.final_sep.map(|e| e.delta0),
            end: v.trajectory.last(),
            trajectory_file: file,
        });
    }
    write_json(
        out,
        "simulate.json",
        &SimulationReport {
            schema_version: SCHEMA_VERSION,
            scenarios: outcomes,
        },
    )?;
    Ok(())
}

/// A method's answer or the reason it has none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodResult {
    pub value: Option<f64>,
    pub error: Option<String>,
}

impl<E: std::fmt::Display> From<Result<f64, E>> for MethodResult {
    fn from(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => Self {
                value: Some(v),
                error: None,
            },
            Err(e) => Self {
                value: None,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EacByModel {
    pub grid_tracking: MethodResult,
    pub frozen_at_sep: MethodResult,
    pub droop_coupled: MethodResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcaRow {
    pub sag: f64,
    pub fault_type: FaultType,
    /// Area balance with the configured voltage model.
    pub eac: MethodResult,
    pub eac_by_model: EacByModel,
    pub doa: MethodResult,
    pub bruteforce: Option<MethodResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcaReport {
    pub schema_version: u32,
    pub eac_model: EacVoltageModel,
    pub rows: Vec<CcaRow>,
}

pub fn run_cca(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let (p, g) = (cfg.vsg_params(), cfg.grid_params());
    let settings = cfg.transient_settings();
    let rows = cfg
        .cca
        .sags
        .par_iter()
        .map(|&sag| -> anyhow::Result<CcaRow> {
            let f = g.with_sag(sag);
            let fault_type =
                classify_fault(&p, &g, &f, &settings).with_context(|| format!("classifying the {sag} p.u. fault"))?;
            let eac = |m| MethodResult::from(cca_eac(&p, &g, &f, &g, m));
            let by_model = EacByModel {
                grid_tracking: eac(EacVoltageModel::GridTracking),
                frozen_at_sep: eac(EacVoltageModel::FrozenAtSep),
                droop_coupled: eac(EacVoltageModel::DroopCoupled),
            };
            let bruteforce = cfg
                .cca
                .bruteforce
                .then(|| cca_bruteforce(&FaultScenario::sag(p, g, sag, Clearing::Never), &settings).into());
            Ok(CcaRow {
                sag,
                fault_type,
                eac: eac(cfg.cca.eac_model),
                eac_by_model: by_model,
                doa: cca_doa(&p, &g, &f, &g, &settings).into(),
                bruteforce,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let show = |m: &MethodResult| m.value.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!("sag     type      eac       doa       bruteforce");
    for r in &rows {
        println!(
            "{:<7} {:<9} {:<9} {:<9} {}",
            r.sag,
            format!("{:?}", r.fault_type),
            show(&r.eac),
            show(&r.doa),
            r.bruteforce.as_ref().map_or_else(|| "-".to_string(), show)
        );
    }
    write_json(
        out,
        "cca.json",
        &CcaReport {
            schema_version: SCHEMA_VERSION,
            eac_model: cfg.cca.eac_model,
            rows,
        },
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    pub param_value: f64,
    pub doa_area: f64,
    pub sep_delta: Option<f64>,
    pub uep_delta: Option<f64>,
    /// Why the point has no basin, if it has none.
    pub flag: Option<String>,
    pub boundary_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOutcome {
    pub parameter: SweepParameter,
    pub summary_file: String,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub schema_version: u32,
    pub sweeps: Vec<SweepOutcome>,
}

pub fn run_sweep(cfg: &RunConfig, out: &Path, only: Option<&str>) -> Result<(), CliError> {
    let specs: Vec<_> = cfg
        .sweeps
        .iter()
        .filter(|s| only.is_none_or(|n| n == s.parameter.name()))
        .collect();
    if specs.is_empty() {
        return Err(match only {
            Some(n) => invalid("parameter", format!("no sweep over {n}")),
            None => invalid("sweeps", "no sweeps configured"),
        }
        .into());
    }
    let (p, g) = (cfg.vsg_params(), cfg.grid_params());
    let opts = cfg.doa_options();
    let jobs: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.values.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<DoaBoundary, DoaError>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let (pv, gv) = specs[i].parameter.apply(p, g, specs[i].values[j]);
            estimate_doa(&pv, &gv, &opts)
        })
        .collect();

    let mut results = results.into_iter();
    let mut sweeps = Vec::new();
    for spec in &specs {
        let name = spec.parameter.name();
        let mut points = Vec::new();
        for (j, &value) in spec.values.iter().enumerate() {
            let r = results.next().expect("one result per job");
            let point = match r {
                Ok(b) => {
                    let file = format!("sweep_{name}_{j}.csv");
                    write_boundary(&b, out, &file)?;
                    SweepPoint {
                        param_value: value,
                        doa_area: b.area(),
                        sep_delta: Some(b.sep.delta0),
                        uep_delta: Some(b.uep.delta0),
                        flag: None,
                        boundary_file: Some(file),
                    }
                }
                Err(e @ (DoaError::NoEquilibrium | DoaError::DegenerateUep { .. })) => SweepPoint {
                    param_value: value,
                    doa_area: 0.0,
                    sep_delta: None,
                    uep_delta: None,
                    flag: Some(
                        match e {
                            DoaError::NoEquilibrium => "no_equilibrium",
                            _ => "degenerate_uep",
                        }
                        .into(),
                    ),
                    boundary_file: None,
                },
                Err(e) => return Err(anyhow::Error::new(e).context(format!("sweep {name} = {value}")).into()),
            };
            points.push(point);
        }
        let summary = format!("sweep_{name}.csv");
        let mut wr = csv::Writer::from_writer(create(out, &summary)?);
        wr.write_record(["param_value", "doa_area", "sep_delta", "uep_delta", "flag"])
            .context("writing sweep summary")?;
        for pt in &points {
            wr.serialize((
                pt.param_value,
                pt.doa_area,
                pt.sep_delta,
                pt.uep_delta,
                pt.flag.as_deref().unwrap_or(""),
            ))
            .context("writing sweep summary")?;
        }
        wr.flush().context("writing sweep summary")?;
        println!("{name}:");
        for pt in &points {
            println!("  {:<12} area {:>10.3} {}", pt.param_value, pt.doa_area, pt.flag.as_deref().unwrap_or(""));
        }
        sweeps.push(SweepOutcome {
            parameter: spec.parameter,
            summary_file: summary,
            points,
        });
    }
    write_json(
        out,
        "sweep.json",
        &SweepReport {
            schema_version: SCHEMA_VERSION,
            sweeps,
        },
    )?;
    Ok(())
}
