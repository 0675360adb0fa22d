//! Run configuration: one TOML file, strict about unknown keys, validated
//! block by block before any compute starts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use snls_core::events::{EventSpec, TerminalTarget, TubeReference};
use snls_core::grid::{Field, Grid, NormKind};
use snls_core::integrator::SimParams;
use snls_core::noise::{KernelConfig, KernelOperator};
use snls_core::optimizer::OptimizerOptions;
use snls_core::skeleton::CancelOptions;
use snls_core::tails::{check_tail_exponent, TailCheckOptions};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
}

/// Initial datum `u₀`. `center` defaults to the middle of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// `a · sech(|x − c| / w)`; with the defaults this is the unit soliton.
    Sech {
        #[serde(default = "sqrt2")]
        amplitude: f64,
        #[serde(default = "unit")]
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// `a · exp(−|x − c|² / w²)`.
    Gaussian {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "unit")]
        width: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// Snapshot sidecar written by this tool.
    File { path: String },
}

fn sqrt2() -> f64 {
    std::f64::consts::SQRT_2
}
fn unit() -> f64 {
    1.0
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig::Sech {
            amplitude: sqrt2(),
            width: 1.0,
            center: None,
        }
    }
}

fn l2() -> NormKind {
    NormKind::L2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventConfig {
    /// Leaves the tube of radius `rho` around the noiseless path.
    TubeExit {
        rho: f64,
        #[serde(default = "l2")]
        norm: NormKind,
    },
    /// Ends within `rho` of `target`: `"deterministic"`, `"free"` or a snapshot path.
    TerminalMatch {
        rho: f64,
        #[serde(default = "l2")]
        norm: NormKind,
        target: String,
    },
    /// `τ_R ≤ T`; `R` and `T` default to the simulation values.
    H1Exceed {
        #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    /// `τ_R > T`.
    H1Below {
        #[serde(default, rename = "R", skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
        horizon: Option<f64>,
    },
    Everything,
}

impl Default for EventConfig {
    fn default() -> Self {
        EventConfig::TubeExit { rho: 0.5, norm: NormKind::L2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMethod {
    Naive,
    /// Importance sampling at `sim.eps`.
    Is,
    /// Importance sampling along `eps_list`.
    Ldp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McConfig {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: McMethod,
    pub eps_list: Vec<f64>,
    /// Control files for the IS mixture; empty means: optimize, then use the
    /// certificate and its mirror.
    pub controls: Vec<String>,
    /// Adds the unshifted law to the mixture, which bounds every weight by `K`.
    pub defensive: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            n: 1000,
            method: McMethod::Naive,
            eps_list: Vec::new(),
            controls: Vec::new(),
            defensive: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkeletonConfig {
    /// Control file; the zero control when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control: Option<String>,
    pub cancel_control: bool,
    pub cancel: CancelOptions,
    pub probes: usize,
    pub probe_du: f64,
    pub probe_dh_energy: f64,
}

impl Default for SkeletonConfig {
    fn default() -> Self {
        SkeletonConfig {
            control: None,
            cancel_control: false,
            cancel: CancelOptions::default(),
            probes: 0,
            probe_du: 1e-4,
            probe_dh_energy: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupMode {
    /// Deterministic blow-up time only.
    Time,
    Before,
    After,
    NonRare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupConfig {
    pub mode: BlowupMode,
    /// Study horizon; defaults to `sim.T`.
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub eps_list: Vec<f64>,
    #[serde(rename = "N")]
    pub n: usize,
    /// Amplitude factors applied to `u₀` to form the initial-data set.
    pub scales: Vec<f64>,
    pub slack: f64,
    pub cancel: CancelOptions,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig {
            mode: BlowupMode::Time,
            horizon: None,
            eps_list: vec![0.2, 0.1, 0.05],
            n: 1000,
            scales: vec![1.0],
            slack: 0.5,
            cancel: CancelOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default = "default_out")]
    pub output_dir: String,
    pub grid: GridConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    pub sim: SimParams,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub event: EventConfig,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub skeleton: SkeletonConfig,
    #[serde(default)]
    pub tails: TailCheckOptions,
    #[serde(default)]
    pub blowup: BlowupConfig,
}

fn default_out() -> String {
    "out".into()
}

const TOP_KEYS: &[&str] = &[
    "seed", "workers", "output_dir", "grid", "initial", "sim", "kernel", "event", "optimizer", "mc", "skeleton",
    "tails", "blowup",
];

/// Sets `a.b.c = value` in a TOML table, creating intermediate tables.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(vec![format!("override `{assignment}` is not KEY=VALUE")]))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(vec![format!("override `{key}`: `{p}` is not a table")]))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn block<T: DeserializeOwned>(table: &Table, key: &str, errors: &mut Vec<String>) -> Option<T> {
    let v = table.get(key).cloned().unwrap_or_else(|| Value::Table(Table::new()));
    match v.try_into::<T>() {
        Ok(x) => Some(x),
        Err(e) => {
            errors.push(format!("[{key}] {}", e.to_string().trim()));
            None
        }
    }
}

/// Parses and validates a configuration table; every violation found is
/// reported, not only the first.
pub fn from_table(table: &Table) -> Result<RunConfig, CliError> {
    let mut errors = Vec::new();
    for k in table.keys() {
        if !TOP_KEYS.contains(&k.as_str()) {
            errors.push(format!("unknown top-level key `{k}`"));
        }
    }
    for k in ["grid", "sim"] {
        if !table.contains_key(k) {
            errors.push(format!("missing required block [{k}]"));
        }
    }
    let scalar = |key: &str| table.get(key).cloned();
    let seed = match scalar("seed") {
        None => Some(0),
        Some(v) => match v.as_integer() {
            Some(s) if s >= 0 => Some(s as u64),
            _ => {
                errors.push(format!("seed = {v} must be a non-negative integer"));
                None
            }
        },
    };
    let workers = match scalar("workers") {
        None => Some(None),
        Some(v) => match v.as_integer() {
            Some(w) if w >= 1 => Some(Some(w as usize)),
            _ => {
                errors.push(format!("workers = {v} must be a positive integer"));
                None
            }
        },
    };
    let output_dir = match scalar("output_dir") {
        None => Some(default_out()),
        Some(Value::String(s)) => Some(s),
        Some(v) => {
            errors.push(format!("output_dir = {v} must be a string"));
            None
        }
    };
    let grid: Option<GridConfig> = if table.contains_key("grid") { block(table, "grid", &mut errors) } else { None };
    let sim: Option<SimParams> = if table.contains_key("sim") { block(table, "sim", &mut errors) } else { None };
    let initial: Option<InitialConfig> = if table.contains_key("initial") {
        block(table, "initial", &mut errors)
    } else {
        Some(InitialConfig::default())
    };
    let kernel: Option<KernelConfig> = if table.contains_key("kernel") {
        block(table, "kernel", &mut errors)
    } else {
        Some(KernelConfig::default())
    };
    let event: Option<EventConfig> = if table.contains_key("event") {
        block(table, "event", &mut errors)
    } else {
        Some(EventConfig::default())
    };
    let mut optimizer: Option<OptimizerOptions> = block(table, "optimizer", &mut errors);
    let mc: Option<McConfig> = block(table, "mc", &mut errors);
    let skeleton: Option<SkeletonConfig> = block(table, "skeleton", &mut errors);
    let tails: Option<TailCheckOptions> = block(table, "tails", &mut errors);
    let blowup: Option<BlowupConfig> = block(table, "blowup", &mut errors);

    // the optimizer follows the run seed unless it has its own
    let own_seed = table
        .get("optimizer")
        .and_then(|o| o.as_table())
        .is_some_and(|o| o.contains_key("seed"));
    if let (Some(o), Some(s), false) = (optimizer.as_mut(), seed, own_seed) {
        o.seed = s;
    }

    match (seed, workers, output_dir, grid, sim, initial, kernel, event, optimizer, mc, skeleton, tails, blowup) {
        (
            Some(seed),
            Some(workers),
            Some(output_dir),
            Some(grid),
            Some(sim),
            Some(initial),
            Some(kernel),
            Some(event),
            Some(optimizer),
            Some(mc),
            Some(skeleton),
            Some(tails),
            Some(blowup),
        ) if errors.is_empty() => {
            let cfg = RunConfig {
                seed,
                workers,
                output_dir,
                grid,
                initial,
                sim,
                kernel,
                event,
                optimizer,
                mc,
                skeleton,
                tails,
                blowup,
            };
            let v = cfg.violations();
            if v.is_empty() {
                Ok(cfg)
            } else {
                Err(CliError::Config(v))
            }
        }
        (_, _, _, grid, sim, _, kernel, _, optimizer, mc, _, tails, blowup) => {
            // still report the semantic problems of the blocks that parsed
            let d = grid.as_ref().map(|g| g.dim).unwrap_or(1);
            if let Some(s) = &sim {
                errors.extend(s.violations(d).into_iter().map(|e| format!("[sim] {e}")));
            }
            if let Some(k) = &kernel {
                errors.extend(k.violations(d));
            }
            if let Some(o) = &optimizer {
                errors.extend(o.violations().into_iter().map(|e| format!("[optimizer] {e}")));
            }
            if let Some(m) = &mc {
                errors.extend(mc_violations(m));
            }
            if let Some(t) = &tails {
                errors.extend(tails_violations(t, d));
            }
            if let Some(b) = &blowup {
                errors.extend(blowup_violations(b));
            }
            Err(CliError::Config(errors))
        }
    }
}

fn decreasing(list: &[f64]) -> bool {
    list.windows(2).all(|w| w[1] < w[0])
}

fn mc_violations(m: &McConfig) -> Vec<String> {
    let mut v = Vec::new();
    if m.n < snls_core::mc::MIN_SAMPLES {
        v.push(format!("[mc] N = {} must be >= {}", m.n, snls_core::mc::MIN_SAMPLES));
    }
    if !decreasing(&m.eps_list) || m.eps_list.iter().any(|e| !(*e > 0.0)) {
        v.push("[mc] eps_list must be positive and strictly decreasing".into());
    }
    if m.method == McMethod::Ldp && m.eps_list.is_empty() {
        v.push("[mc] method = \"ldp\" needs a non-empty eps_list".into());
    }
    v
}

fn tails_violations(t: &TailCheckOptions, d: usize) -> Vec<String> {
    let mut v = Vec::new();
    if let Err(e) = check_tail_exponent(t.p, d) {
        v.push(format!("[tails] {e}"));
    }
    if !(t.eta >= 0.0) || !(t.horizon > 0.0) || !(t.dt > 0.0) || t.n == 0 {
        v.push("[tails] need eta >= 0, T > 0, dt > 0 and N >= 1".into());
    }
    v
}

fn blowup_violations(b: &BlowupConfig) -> Vec<String> {
    let mut v = Vec::new();
    if !decreasing(&b.eps_list) || b.eps_list.iter().any(|e| !(*e >= 0.0)) {
        v.push("[blowup] eps_list must be non-negative and strictly decreasing".into());
    }
    if b.n < snls_core::mc::MIN_SAMPLES {
        v.push(format!("[blowup] N = {} must be >= {}", b.n, snls_core::mc::MIN_SAMPLES));
    }
    if b.scales.is_empty() || b.scales.iter().any(|s| !(*s > 0.0)) {
        v.push("[blowup] scales must be a non-empty list of positive factors".into());
    }
    if let Some(h) = b.horizon {
        if !(h > 0.0) {
            v.push(format!("[blowup] T = {h} must be positive"));
        }
    }
    v
}

impl RunConfig {
    /// Semantic checks of every block.
    pub fn violations(&self) -> Vec<String> {
        let d = self.grid.dim;
        let mut v = Vec::new();
        if let Err(e) = Grid::new(d, self.grid.n, self.grid.length) {
            v.push(format!("[grid] {e}"));
        }
        v.extend(self.sim.violations(d).into_iter().map(|e| format!("[sim] {e}")));
        v.extend(self.kernel.violations(d));
        v.extend(self.optimizer.violations().into_iter().map(|e| format!("[optimizer] {e}")));
        v.extend(mc_violations(&self.mc));
        v.extend(tails_violations(&self.tails, d));
        v.extend(blowup_violations(&self.blowup));
        match &self.initial {
            InitialConfig::Sech { width, center, .. } | InitialConfig::Gaussian { width, center, .. } => {
                if !(*width > 0.0) {
                    v.push(format!("[initial] width = {width} must be positive"));
                }
                if let Some(c) = center {
                    if c.len() != d {
                        v.push(format!("[initial] center has {} components, grid dimension is {d}", c.len()));
                    }
                }
            }
            InitialConfig::File { .. } => {}
        }
        match &self.event {
            EventConfig::TubeExit { rho, norm } | EventConfig::TerminalMatch { rho, norm, .. } => {
                if !(*rho > 0.0) {
                    v.push(format!("[event] rho = {rho} must be > 0"));
                }
                if let Err(e) = norm.validate() {
                    v.push(format!("[event] {e}"));
                }
            }
            EventConfig::H1Exceed { threshold, horizon } | EventConfig::H1Below { threshold, horizon } => {
                if let Some(r) = threshold {
                    if !(*r > 0.0 && *r <= self.sim.threshold) {
                        v.push(format!("[event] R = {r} must be in (0, sim.R = {}]", self.sim.threshold));
                    }
                }
                if let Some(t) = horizon {
                    if !(*t > 0.0 && *t <= self.sim.horizon) {
                        v.push(format!("[event] T = {t} must be in (0, sim.T = {}]", self.sim.horizon));
                    }
                }
            }
            EventConfig::Everything => {}
        }
        v
    }

    /// The fully resolved configuration as TOML (defaults filled in).
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<Arc<Grid>, CliError> {
        Ok(Grid::new(self.grid.dim, self.grid.n, self.grid.length)?)
    }

    pub fn initial_field(&self, grid: &Arc<Grid>, base: &Path) -> Result<Field, CliError> {
        let centre = |c: &Option<Vec<f64>>| c.clone().unwrap_or_else(|| vec![grid.length() / 2.0; grid.dim()]);
        let dist = |x: &[f64], c: &[f64]| {
            x.iter()
                .zip(c)
                .map(|(a, b)| {
                    let mut z = (a - b).rem_euclid(grid.length());
                    if z > grid.length() / 2.0 {
                        z -= grid.length();
                    }
                    z * z
                })
                .sum::<f64>()
                .sqrt()
        };
        Ok(match &self.initial {
            InitialConfig::Sech { amplitude, width, center } => {
                let c = centre(center);
                Field::from_fn(grid, |x| Complex64::new(amplitude / (dist(x, &c) / width).cosh(), 0.0))
            }
            InitialConfig::Gaussian { amplitude, width, center } => {
                let c = centre(center);
                Field::from_fn(grid, |x| Complex64::new(amplitude * (-(dist(x, &c) / width).powi(2)).exp(), 0.0))
            }
            InitialConfig::File { path } => {
                let (rows_header, rows) = snls_core::snapshot::read_rows_on(&base.join(path), grid)?;
                if rows.len() != 1 {
                    return Err(CliError::Config(vec![format!(
                        "[initial] {path} holds {} fields (t = {}), expected one",
                        rows.len(),
                        rows_header.t
                    )]));
                }
                rows.into_iter().next().expect("one row")
            }
        })
    }

    pub fn kernel_operator(&self, grid: &Arc<Grid>, base: &Path) -> Result<KernelOperator, CliError> {
        Ok(self.kernel.build(grid, base)?)
    }

    pub fn event_spec(&self, grid: &Arc<Grid>, base: &Path) -> Result<EventSpec, CliError> {
        Ok(match &self.event {
            EventConfig::TubeExit { rho, norm } => EventSpec::TubeExit {
                reference: TubeReference::Deterministic,
                rho: *rho,
                norm: *norm,
            },
            EventConfig::TerminalMatch { rho, norm, target } => {
                let target = match target.as_str() {
                    "deterministic" => TerminalTarget::Deterministic,
                    "free" => TerminalTarget::Free,
                    path => {
                        let (_, rows) = snls_core::snapshot::read_rows_on(&base.join(path), grid)?;
                        TerminalTarget::Field(rows.into_iter().next().ok_or_else(|| {
                            CliError::Config(vec![format!("[event] target file {path} is empty")])
                        })?)
                    }
                };
                EventSpec::TerminalMatch {
                    target,
                    rho: *rho,
                    norm: *norm,
                }
            }
            EventConfig::H1Exceed { threshold, horizon } => EventSpec::H1Exceed {
                threshold: threshold.unwrap_or(self.sim.threshold),
                horizon: horizon.unwrap_or(self.sim.horizon),
            },
            EventConfig::H1Below { threshold, horizon } => EventSpec::H1Below {
                threshold: threshold.unwrap_or(self.sim.threshold),
                horizon: horizon.unwrap_or(self.sim.horizon),
            },
            EventConfig::Everything => EventSpec::Everything,
        })
    }
}

/// Reads, overrides and validates a configuration file.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<(RunConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(vec![format!("{}: {}", path.display(), e.to_string().trim())]))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let cfg = from_table(&table)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}
