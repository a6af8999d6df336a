//! Run configuration: JSON file, optional reference defaults underneath it,
//! `key=value` overrides on top, then typed validation.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::f64::consts::{PI, SQRT_2};
use std::path::{Path, PathBuf};
use thiserror::Error;
use vsg_doa::doa::{DoaOptions, SeedConfig, SeedMode};
use vsg_doa::equilibrium::VpccMode;
use vsg_doa::integrator::Window;
use vsg_doa::model::{GridParams, ModelError, VsgParams};
use vsg_doa::transient::{EacVoltageModel, TransientSettings};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Syntax(serde_json::Error),
    #[error("`{path}`: {reason}")]
    Invalid { path: String, reason: String },
}

pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

/// A voltage with its unit declaration; stored internally as a peak phase
/// amplitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Map<String, Value>", into = "Map<String, Value>")]
pub enum Voltage {
    Rms(f64),
    Amplitude(f64),
    PerUnit { value: f64, base: Box<Voltage> },
}

impl Voltage {
    pub fn amplitude(&self) -> f64 {
        match self {
            Voltage::Rms(v) => v * SQRT_2,
            Voltage::Amplitude(v) => *v,
            Voltage::PerUnit { value, base } => value * base.amplitude(),
        }
    }
}

impl TryFrom<Map<String, Value>> for Voltage {
    type Error = String;

    fn try_from(m: Map<String, Value>) -> Result<Self, String> {
        let number = |k: &str| {
            m[k].as_f64()
                .ok_or_else(|| format!("`{k}` must be a number"))
        };
        let mut keys: Vec<&str> = m.keys().map(String::as_str).collect();
        keys.sort_unstable();
        match keys.as_slice() {
            ["rms"] => Ok(Voltage::Rms(number("rms")?)),
            ["amplitude"] => Ok(Voltage::Amplitude(number("amplitude")?)),
            ["base", "per_unit"] => {
                let base = Map::deserialize(&m["base"])
                    .map_err(|_| "`base` must be a voltage object".to_string())
                    .and_then(Voltage::try_from)?;
                Ok(Voltage::PerUnit {
                    value: number("per_unit")?,
                    base: Box::new(base),
                })
            }
            _ => Err(format!(
                "expected exactly one unit declaration, {{\"rms\"}}, {{\"amplitude\"}} or {{\"per_unit\", \"base\"}}; got keys {keys:?}"
            )),
        }
    }
}

impl From<Voltage> for Map<String, Value> {
    fn from(v: Voltage) -> Self {
        let mut m = Map::new();
        match v {
            Voltage::Rms(x) => {
                m.insert("rms".into(), json!(x));
            }
            Voltage::Amplitude(x) => {
                m.insert("amplitude".into(), json!(x));
            }
            Voltage::PerUnit { value, base } => {
                m.insert("per_unit".into(), json!(value));
                m.insert("base".into(), Value::Object((*base).into()));
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VsgConfig {
    /// Coefficient on δ̈ (the value 2H).
    pub inertia_2h: f64,
    pub damping_d: f64,
    pub droop_kq: f64,
    /// W.
    pub p_ref: f64,
    /// var.
    pub q_ref: f64,
    pub v0: Voltage,
    /// Rated frequency (Hz).
    pub f0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub vg: Voltage,
    /// Ω.
    pub rg: f64,
    /// Line inductance (H); the reactance uses the rated frequency.
    pub lg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub step: f64,
    /// Length of each fault-on and post-clearing stage (s).
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoaSection {
    pub seeds: SeedConfig,
    pub max_time: f64,
    pub vpcc_mode: VpccMode,
    #[serde(default)]
    pub window: Option<Window>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortraitSection {
    pub delta_range: [f64; 2],
    pub domega_range: [f64; 2],
    /// Starting points along δ and Δω.
    pub points: [usize; 2],
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClearingSpec {
    Never,
    /// rad.
    AtAngle(f64),
    /// s after fault inception.
    AtTime(f64),
    /// rad relative to the basin-crossing clearing angle of the same sag.
    CcaOffset(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    /// Fault-on grid voltage in p.u. of `grid.vg`.
    pub sag: f64,
    /// s.
    pub fault_time: f64,
    pub clearing: ClearingSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcaSection {
    pub sags: Vec<f64>,
    pub eac_model: EacVoltageModel,
    /// Include the clearing-angle bisection by repeated simulation.
    pub bruteforce: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    DampingD,
    #[serde(rename = "inertia_2h")]
    Inertia2h,
    DroopKq,
    PRef,
    /// Grid voltage in p.u. of `grid.vg`.
    Sag,
    /// R_g/X_g at fixed |Z|.
    RxRatio,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::DampingD => "damping_d",
            SweepParameter::Inertia2h => "inertia_2h",
            SweepParameter::DroopKq => "droop_kq",
            SweepParameter::PRef => "p_ref",
            SweepParameter::Sag => "sag",
            SweepParameter::RxRatio => "rx_ratio",
        }
    }

    /// Model parameters with this parameter set to `value`.
    pub fn apply(self, vsg: VsgParams, grid: GridParams, value: f64) -> (VsgParams, GridParams) {
        match self {
            SweepParameter::DampingD => (VsgParams { damping_d: value, ..vsg }, grid),
            SweepParameter::Inertia2h => (VsgParams { inertia_2h: value, ..vsg }, grid),
            SweepParameter::DroopKq => (VsgParams { droop_kq: value, ..vsg }, grid),
            SweepParameter::PRef => (VsgParams { p_ref: value, ..vsg }, grid),
            SweepParameter::Sag => (vsg, grid.with_sag(value)),
            SweepParameter::RxRatio => {
                let z = grid.impedance_sq().sqrt();
                let xg = z / (1.0 + value * value).sqrt();
                (vsg, GridParams { rg: value * xg, xg, ..grid })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Defaults {
    /// The reference VSG and grid with its standard runs.
    #[serde(rename = "paper")]
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defaults: Option<Defaults>,
    pub vsg: VsgConfig,
    pub grid: GridConfig,
    /// Grid voltage in p.u. of `grid.vg` for `equilibria`, `portrait` and
    /// `doa`.
    pub sag: f64,
    pub integrator: IntegratorSection,
    pub doa: DoaSection,
    pub portrait: PortraitSection,
    pub scenarios: Vec<ScenarioSpec>,
    pub cca: CcaSection,
    pub sweeps: Vec<SweepSpec>,
    pub output: OutputSection,
}

/// The reference design and the scenario, clearing-angle and sweep runs
/// built on it.
pub fn reference_defaults() -> Value {
    let d = 509.3;
    let h2 = 15.7;
    let kq = 0.0003;
    let scenario = |name: &str, sag: f64, clearing: Value| {
        json!({"name": name, "sag": sag, "fault_time": 1.5, "clearing": clearing})
    };
    json!({
        "vsg": {
            "inertia_2h": h2,
            "damping_d": d,
            "droop_kq": kq,
            "p_ref": 100e3,
            "q_ref": 0.0,
            "v0": {"amplitude": 311.0},
            "f0": 50.0
        },
        "grid": {"vg": {"rms": 220.0}, "rg": 0.2, "lg": 3e-3},
        "sag": 1.0,
        "integrator": {"step": 1e-4, "horizon": 10.0},
        "doa": {
            "seeds": {"count": 200, "radius": 1e-3, "mode": "separatrix_pair"},
            "max_time": 5.0,
            "vpcc_mode": "droop_coupled",
            "window": null
        },
        "portrait": {
            "delta_range": [-PI, 2.0 * PI],
            "domega_range": [-150.0, 150.0],
            "points": [13, 9],
            "duration": 2.0
        },
        "scenarios": [
            scenario("sag070_never", 0.7, json!("never")),
            scenario("sag057_below_cca", 0.57, json!({"cca_offset": -0.1})),
            scenario("sag057_above_cca", 0.57, json!({"cca_offset": 0.1})),
            scenario("sag050_below_cca", 0.5, json!({"cca_offset": -0.1})),
            scenario("sag050_above_cca", 0.5, json!({"cca_offset": 0.1})),
            scenario("sag057_never", 0.57, json!("never"))
        ],
        "cca": {"sags": [0.57, 0.5], "eac_model": "grid_tracking", "bruteforce": true},
        "sweeps": [
            {"parameter": "damping_d", "values": [0.5 * d, d, 2.0 * d]},
            {"parameter": "inertia_2h", "values": [0.5 * h2, h2, 2.0 * h2]},
            {"parameter": "droop_kq", "values": [kq, 10.0 * kq, 30.0 * kq]},
            {"parameter": "p_ref", "values": [50e3, 100e3, 125e3, 150e3, 160e3, 170e3]},
            {"parameter": "sag", "values": [1.0, 0.9, 0.8, 0.7, 0.6]},
            {"parameter": "rx_ratio", "values": [0.05, 0.1, 0.2121, 0.4, 0.8]}
        ],
        "output": {"dir": "out"}
    })
}

/// Recursively lay `top` over `base`: objects merge key by key, anything
/// else in `top` replaces what is below it.
pub fn deep_merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => deep_merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Set a dotted path (`vsg.damping_d`, `scenarios.0.sag`). The value is
/// parsed as JSON when it can be, otherwise taken as a string.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(assignment, "override must look like key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(key, "empty path segment"));
    }
    let mut cur = doc;
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let here = parts[..=i].join(".");
        cur = match cur {
            Value::Object(m) if last => {
                m.insert(part.to_string(), value);
                return Ok(());
            }
            Value::Object(m) => m
                .get_mut(*part)
                .ok_or_else(|| invalid(here, "no such key"))?,
            Value::Array(a) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(here.clone(), "array index expected"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| invalid(here, format!("index out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(invalid(here, "cannot descend into a scalar")),
        };
    }
    Ok(())
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let user: Value = serde_json::from_str(&text).map_err(ConfigError::Syntax)?;
        Self::from_value(user, overrides)
    }

    pub fn from_value(user: Value, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc = match user.get("defaults") {
            None | Some(Value::Null) => Value::Object(Map::new()),
            Some(Value::String(s)) if s == "paper" => reference_defaults(),
            Some(other) => return Err(invalid("defaults", format!("unknown defaults {other}; expected \"paper\""))),
        };
        deep_merge(&mut doc, user);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(&doc).map_err(|e| {
            let path = e.path().to_string();
            invalid(if path == "." { "(root)".into() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vsg_params(&self) -> VsgParams {
        let v = &self.vsg;
        VsgParams {
            inertia_2h: v.inertia_2h,
            damping_d: v.damping_d,
            droop_kq: v.droop_kq,
            p_ref: v.p_ref,
            q_ref: v.q_ref,
            v0: v.v0.amplitude(),
            omega0: 2.0 * PI * v.f0,
        }
    }

    pub fn grid_params(&self) -> GridParams {
        GridParams {
            vg: self.grid.vg.amplitude(),
            rg: self.grid.rg,
            xg: 2.0 * PI * self.vsg.f0 * self.grid.lg,
        }
    }

    pub fn doa_options(&self) -> DoaOptions {
        DoaOptions {
            seeds: self.doa.seeds,
            window: self.doa.window,
            step: self.integrator.step,
            max_time: self.doa.max_time,
            vpcc_mode: self.doa.vpcc_mode,
        }
    }

    pub fn transient_settings(&self) -> TransientSettings {
        TransientSettings {
            step: self.integrator.step,
            horizon: self.integrator.horizon,
            doa: self.doa_options(),
            window: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |path: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(path, format!("must be a positive finite number, got {v}")))
            }
        };
        let sag = |path: String, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(path, format!("sag depth must be finite and >= 0, got {v}")))
            }
        };
        positive("vsg.f0", self.vsg.f0)?;
        positive("grid.lg", self.grid.lg)?;
        self.vsg_params().validate().map_err(|e| model_path("vsg", e))?;
        self.grid_params().validate().map_err(|e| model_path("grid", e))?;
        sag("sag".into(), self.sag)?;
        positive("integrator.step", self.integrator.step)?;
        positive("integrator.horizon", self.integrator.horizon)?;
        positive("doa.max_time", self.doa.max_time)?;
        positive("doa.seeds.radius", self.doa.seeds.radius)?;
        if self.doa.seeds.mode == SeedMode::Ring && self.doa.seeds.count < 4 {
            return Err(invalid("doa.seeds.count", "a ring needs at least 4 seeds"));
        }
        if let Some(w) = &self.doa.window {
            if !w.is_valid() {
                return Err(invalid("doa.window", "must be a non-empty rectangle"));
            }
        }
        let p = &self.portrait;
        for (name, r) in [("portrait.delta_range", p.delta_range), ("portrait.domega_range", p.domega_range)] {
            if !(r[0] < r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(invalid(name, "must be [low, high] with low < high"));
            }
        }
        if p.points.contains(&0) {
            return Err(invalid("portrait.points", "both counts must be >= 1"));
        }
        positive("portrait.duration", p.duration)?;
        let mut names = std::collections::BTreeSet::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            let at = |f: &str| format!("scenarios[{i}].{f}");
            let safe = !s.name.is_empty()
                && s.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !safe {
                return Err(invalid(at("name"), "use letters, digits, '_' or '-'"));
            }
            if !names.insert(s.name.as_str()) {
                return Err(invalid(at("name"), format!("duplicate scenario name {}", s.name)));
            }
            sag(at("sag"), s.sag)?;
            if !(s.fault_time >= 0.0 && s.fault_time.is_finite()) {
                return Err(invalid(at("fault_time"), "must be finite and >= 0"));
            }
            let ok = match s.clearing {
                ClearingSpec::Never => true,
                ClearingSpec::AtAngle(a) | ClearingSpec::CcaOffset(a) => a.is_finite(),
                ClearingSpec::AtTime(t) => t >= 0.0 && t.is_finite(),
            };
            if !ok {
                return Err(invalid(at("clearing"), "clearing value out of range"));
            }
        }
        if self.cca.sags.is_empty() {
            return Err(invalid("cca.sags", "must not be empty"));
        }
        for (i, &v) in self.cca.sags.iter().enumerate() {
            sag(format!("cca.sags[{i}]"), v)?;
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, s) in self.sweeps.iter().enumerate() {
            if !seen.insert(s.parameter.name()) {
                return Err(invalid(format!("sweeps[{i}].parameter"), "parameter swept twice"));
            }
            if s.values.is_empty() {
                return Err(invalid(format!("sweeps[{i}].values"), "must not be empty"));
            }
            let vsg = self.vsg_params();
            let grid = self.grid_params();
            for (j, &v) in s.values.iter().enumerate() {
                let (pv, gv) = s.parameter.apply(vsg, grid, v);
                let path = format!("sweeps[{i}].values[{j}]");
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid(path, "must be finite and >= 0"));
                }
                pv.validate().map_err(|e| model_path(&path, e))?;
                gv.validate().map_err(|e| model_path(&path, e))?;
            }
        }
        Ok(())
    }
}

fn model_path(prefix: &str, e: ModelError) -> ConfigError {
    match e {
        ModelError::InvalidParameter { field, reason } => {
            let field = match (prefix, field) {
                ("vsg", "v0") => "v0",
                ("grid", "xg") => "lg",
                (_, f) => f,
            };
            invalid(format!("{prefix}.{field}"), reason)
        }
        other => invalid(prefix, other.to_string()),
    }
}
