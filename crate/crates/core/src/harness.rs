//! Monte-Carlo experiment runner producing per-slot average energy tables.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{solve_myopic, BaselineKind};
use crate::error::{Error, Result};
use crate::model::{check_feasibility, Allocation, Scenario, SystemParams, Tolerances};
use crate::offline::{solve_offline, OfflineOptions};
use crate::online::{solve_sliding_window, OnlineOptions};
use crate::problem::Restriction;
use crate::scenario::{derive_seed, gen_predictions, gen_scenario, ChannelGeometry, PredictionErrorModel};

/// Experiment families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Per-slot bit and energy trace of one realization; the sweep is the slot index.
    Fig2Trace,
    /// Offline schemes versus mean arrival (bits); arrivals uniform on `[0, 2 mean]`.
    #[serde(rename = "fig3_vs_Amean")]
    Fig3VsAmean,
    /// Offline schemes versus horizon length.
    #[serde(rename = "fig4_vs_N")]
    Fig4VsN,
    /// Online schemes versus horizon length.
    #[serde(rename = "fig5_online_vs_N")]
    Fig5OnlineVsN,
    /// Online schemes versus window size.
    #[serde(rename = "fig6_vs_M")]
    Fig6VsM,
    /// Online schemes versus one prediction-error deviation.
    Fig7VsSigma,
}

/// Which prediction error a `fig7_vs_sigma` sweep varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaAxis {
    #[default]
    Arrivals,
    Wpt,
    Offload,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Offline,
    LocalOnly,
    FullOffload,
    Myopic,
    Online,
    OnlineLocalOnly,
    OnlineFullOffload,
    OnlineMyopic,
}

impl SchemeKind {
    const NAMES: [(SchemeKind, &'static str); 8] = [
        (SchemeKind::Offline, "offline"),
        (SchemeKind::LocalOnly, "local_only"),
        (SchemeKind::FullOffload, "full_offload"),
        (SchemeKind::Myopic, "myopic"),
        (SchemeKind::Online, "online"),
        (SchemeKind::OnlineLocalOnly, "online_local_only"),
        (SchemeKind::OnlineFullOffload, "online_full_offload"),
        (SchemeKind::OnlineMyopic, "online_myopic"),
    ];

    pub fn as_str(self) -> &'static str {
        Self::NAMES.iter().find(|(k, _)| *k == self).map(|(_, s)| *s).unwrap_or("?")
    }

    pub fn is_online(self) -> bool {
        matches!(self, SchemeKind::Online | SchemeKind::OnlineLocalOnly | SchemeKind::OnlineFullOffload | SchemeKind::OnlineMyopic)
    }
}

/// A scheme with an optional fixed window size, written `name` or `name:M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Scheme {
    pub kind: SchemeKind,
    pub window: Option<usize>,
}

impl Scheme {
    pub fn new(kind: SchemeKind) -> Self {
        Self { kind, window: None }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.window {
            Some(m) => write!(f, "{}:{m}", self.kind.as_str()),
            None => f.write_str(self.kind.as_str()),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, window) = match s.split_once(':') {
            Some((n, w)) => {
                let m = w.parse::<usize>().map_err(|_| Error::InvalidParameter(format!("bad window in scheme {s:?}")))?;
                (n, Some(m))
            }
            None => (s, None),
        };
        let kind = SchemeKind::NAMES
            .iter()
            .find(|(_, n)| *n == name)
            .map(|(k, _)| *k)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scheme {name:?}")))?;
        if window.is_some() && !kind.is_online() {
            return Err(Error::InvalidParameter(format!("scheme {name:?} takes no window")));
        }
        Ok(Self { kind, window })
    }
}

impl TryFrom<String> for Scheme {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scheme> for String {
    fn from(s: Scheme) -> String {
        s.to_string()
    }
}

fn default_trials() -> usize {
    100
}

fn default_window() -> usize {
    2
}

fn default_time_cap() -> f64 {
    600.0
}

/// Experiment description, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    /// Values of the swept parameter; ignored by `fig2_trace`.
    #[serde(default)]
    pub sweep: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    pub params: SystemParams,
    pub geometry: ChannelGeometry,
    #[serde(default)]
    pub errors: PredictionErrorModel,
    /// Arrival bounds in bits per user and slot; `fig3_vs_Amean` replaces them.
    pub arrivals: [f64; 2],
    pub schemes: Vec<Scheme>,
    /// Window size of online schemes without an explicit one.
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub sigma_axis: SigmaAxis,
    /// Carry surplus energy between online windows.
    #[serde(default)]
    pub energy_carry: bool,
    /// Wall-clock cap per trial and scheme in seconds; slower runs are discarded.
    #[serde(default = "default_time_cap")]
    pub time_cap_s: f64,
    /// CSV destination used when the command line gives none.
    #[serde(default)]
    pub output: Option<std::path::PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        if self.family != Family::Fig2Trace && self.sweep.is_empty() {
            return Err(Error::InvalidParameter("sweep must be nonempty".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::InvalidParameter("no schemes requested".into()));
        }
        if !(self.arrivals[0] >= 0.0 && self.arrivals[1] >= self.arrivals[0]) {
            return Err(Error::InvalidParameter("arrival bounds must satisfy 0 <= low <= high".into()));
        }
        self.params.validate()?;
        self.geometry.validate(&self.params)?;
        self.errors.validate()
    }
}

/// One aggregated table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep: f64,
    pub scheme: String,
    /// Mean over trials of the energy per slot in joules.
    pub mean_energy_j: f64,
    pub stderr: f64,
    /// Trials that produced a result.
    pub trials: usize,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    /// Trials dropped because a solver failed or exceeded the time cap.
    pub failures: usize,
    /// Trajectories whose energy bookkeeping did not close.
    pub audit_failures: usize,
}

impl ResultTable {
    pub fn row(&self, sweep: f64, scheme: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.sweep == sweep && r.scheme == scheme)
    }

    /// Rows of one scheme in sweep order.
    pub fn series(&self, scheme: &str) -> Vec<&ResultRow> {
        self.rows.iter().filter(|r| r.scheme == scheme).collect()
    }
}

/// Outcome of one scheme on one trial.
#[derive(Clone, Debug)]
enum Outcome {
    Done { energy_per_slot: f64, runtime: f64, audit_ok: bool },
    Failed,
}

fn instance_params(cfg: &ExperimentConfig, value: f64) -> Result<(SystemParams, ChannelGeometry, PredictionErrorModel, [f64; 2], usize)> {
    let mut p = cfg.params.clone();
    let mut errors = cfg.errors;
    let mut arrivals = cfg.arrivals;
    let mut window = cfg.window;
    match cfg.family {
        Family::Fig2Trace => {}
        Family::Fig3VsAmean => arrivals = [0.0, 2.0 * value],
        Family::Fig4VsN | Family::Fig5OnlineVsN => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::InvalidParameter(format!("horizon {value} is not a positive integer")));
            }
            p.num_slots = value as usize;
        }
        Family::Fig6VsM => {
            if !(value >= 1.0 && value.fract() == 0.0) {
                return Err(Error::InvalidParameter(format!("window {value} is not a positive integer")));
            }
            window = value as usize;
        }
        Family::Fig7VsSigma => match cfg.sigma_axis {
            SigmaAxis::Arrivals => errors.sigma_a = value,
            SigmaAxis::Wpt => errors.sigma_h = value,
            SigmaAxis::Offload => errors.sigma_g = value,
            SigmaAxis::All => errors = PredictionErrorModel::uniform(value),
        },
    }
    Ok((p, cfg.geometry.clone(), errors, arrivals, window))
}

/// Runs one scheme; returns the allocation and its objective.
fn run_scheme(
    scheme: Scheme,
    truth: &Scenario,
    pred: &crate::scenario::PredictedScenario,
    p: &SystemParams,
    window: usize,
    energy_carry: bool,
) -> Result<(Allocation, f64)> {
    let offline = OfflineOptions { certify: false, ..Default::default() };
    let online = |restriction: Restriction, m: usize| -> Result<(Allocation, f64)> {
        let opts = OnlineOptions { energy_carry, restriction, ..Default::default() };
        let mut pr = pred.clone();
        let r = solve_sliding_window(truth, &mut pr, m.min(p.num_slots), p, &opts)?;
        Ok((r.trajectory, r.objective))
    };
    let m = scheme.window.unwrap_or(window);
    match scheme.kind {
        SchemeKind::Offline => solve_offline(truth, p, &offline).map(|s| (s.allocation, s.objective)),
        SchemeKind::LocalOnly | SchemeKind::FullOffload => {
            let kind = if scheme.kind == SchemeKind::LocalOnly { BaselineKind::LocalOnly } else { BaselineKind::FullOffload };
            crate::baselines::solve_baseline(kind, truth, p, &offline).map(|s| (s.allocation, s.objective))
        }
        SchemeKind::Myopic => solve_myopic(truth, p).map(|s| (s.allocation, s.objective)),
        SchemeKind::Online => online(Restriction::None, m),
        SchemeKind::OnlineLocalOnly => online(Restriction::LocalOnly, m),
        SchemeKind::OnlineFullOffload => online(Restriction::FullOffload, m),
        SchemeKind::OnlineMyopic => online(Restriction::None, 1),
    }
}

/// Seed of the scenario used by trial `t`; shared by every sweep point so
/// that curves are compared on common realizations.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base, &[trial as u64])
}

/// Parameters, true scenario and predictions of one trial at one sweep value.
pub fn trial_instance(
    cfg: &ExperimentConfig,
    value: f64,
    trial: usize,
) -> Result<(SystemParams, Scenario, crate::scenario::PredictedScenario)> {
    let (p, geom, errors, arrivals, _) = instance_params(cfg, value)?;
    let seed = trial_seed(cfg.seed, trial);
    let truth = gen_scenario(seed, &geom, arrivals[0], arrivals[1], &p)?;
    let pred = gen_predictions(&truth, &errors, &geom, derive_seed(seed, &[0x5052_4544]))?;
    Ok((p, truth, pred))
}

fn run_trial(cfg: &ExperimentConfig, value: f64, trial: usize) -> Vec<Outcome> {
    let fail = || vec![Outcome::Failed; cfg.schemes.len()];
    let Ok((_, _, _, _, window)) = instance_params(cfg, value) else {
        return fail();
    };
    let Ok((p, truth, pred)) = trial_instance(cfg, value, trial) else {
        return fail();
    };
    cfg.schemes
        .iter()
        .map(|&s| {
            let start = Instant::now();
            match run_scheme(s, &truth, &pred, &p, window, cfg.energy_carry) {
                Ok((alloc, obj)) => {
                    let runtime = start.elapsed().as_secs_f64();
                    if runtime > cfg.time_cap_s || !obj.is_finite() {
                        return Outcome::Failed;
                    }
                    let rep = check_feasibility(&alloc, &truth, &p, &Tolerances { relative: 1e-6 });
                    Outcome::Done { energy_per_slot: obj / p.num_slots as f64, runtime, audit_ok: rep.feasible }
                }
                Err(_) => Outcome::Failed,
            }
        })
        .collect()
}

/// Runs every sweep point, trial and scheme of a configuration.
///
/// Trials run in parallel; results are merged in trial order, so the table
/// only depends on the configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    if cfg.family == Family::Fig2Trace {
        return run_trace(cfg);
    }
    let mut table = ResultTable::default();
    for &value in &cfg.sweep {
        instance_params(cfg, value)?;
        let outcomes: Vec<Vec<Outcome>> = (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, value, t)).collect();
        for (si, scheme) in cfg.schemes.iter().enumerate() {
            let mut energies = Vec::new();
            let mut runtime = 0.0;
            for o in &outcomes {
                match &o[si] {
                    Outcome::Done { energy_per_slot, runtime: r, audit_ok } => {
                        energies.push(*energy_per_slot);
                        runtime += r;
                        if !audit_ok {
                            table.audit_failures += 1;
                        }
                    }
                    Outcome::Failed => table.failures += 1,
                }
            }
            let (mean, se) = mean_stderr(&energies);
            table.rows.push(ResultRow {
                sweep: value,
                scheme: scheme.to_string(),
                mean_energy_j: mean,
                stderr: se,
                trials: energies.len(),
                runtime_s: if energies.is_empty() { 0.0 } else { runtime / energies.len() as f64 },
            });
        }
    }
    Ok(table)
}

/// Per-slot energies of one realization (trial 0) for each scheme.
fn run_trace(cfg: &ExperimentConfig) -> Result<ResultTable> {
    let (params, truth, pred) = trial_instance(cfg, 0.0, 0)?;
    let p = &params;
    let mut table = ResultTable::default();
    for &s in &cfg.schemes {
        let start = Instant::now();
        let (alloc, _) = run_scheme(s, &truth, &pred, p, cfg.window, cfg.energy_carry)?;
        let runtime = start.elapsed().as_secs_f64();
        for i in 0..p.num_slots {
            let e = p.slot_duration * alloc.covariances[i].trace().re + p.mec_coef() * alloc.mec_bits[i].powi(3);
            table.rows.push(ResultRow {
                sweep: (i + 1) as f64,
                scheme: s.to_string(),
                mean_energy_j: e,
                stderr: 0.0,
                trials: 1,
                runtime_s: runtime,
            });
        }
    }
    Ok(table)
}

/// Per-slot bit allocations of the offline optimum for one realization, as
/// CSV rows `slot,user,local_bits,offload_bits,mec_bits,offload_gain`.
pub fn trace_bits_csv(cfg: &ExperimentConfig) -> Result<String> {
    let (params, truth, _) = trial_instance(cfg, 0.0, 0)?;
    let p = &params;
    let sol = solve_offline(&truth, p, &OfflineOptions { certify: false, ..Default::default() })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["slot", "user", "local_bits", "offload_bits", "mec_bits", "offload_gain"])?;
    for i in 0..p.num_slots {
        for k in 0..p.num_users {
            w.write_record([
                (i + 1).to_string(),
                (k + 1).to_string(),
                fmt9(sol.allocation.local_bits[k][i]),
                fmt9(sol.allocation.offload_bits[k][i]),
                fmt9(sol.allocation.mec_bits[i]),
                fmt9(truth.offload_channels[k][i].norm_squared()),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Solver(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Solver(e.to_string()))
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Nine significant digits in scientific notation.
pub fn fmt9(x: f64) -> String {
    format!("{x:.8e}")
}

pub const CSV_HEADER: [&str; 6] = ["sweep", "scheme", "mean_energy_J", "stderr", "trials", "runtime_s"];

/// Writes the table as CSV.
pub fn write_csv<W: std::io::Write>(table: &ResultTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            fmt9(r.sweep),
            r.scheme.clone(),
            fmt9(r.mean_energy_j),
            fmt9(r.stderr),
            r.trials.to_string(),
            fmt9(r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(table: &ResultTable, path: &Path) -> Result<()> {
    write_csv(table, std::fs::File::create(path)?)
}

/// Parses a table written by [`write_csv`].
pub fn read_csv<R: std::io::Read>(input: R) -> Result<ResultTable> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidParameter("unexpected CSV header".into()));
    }
    let mut table = ResultTable::default();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidParameter(format!("bad number in column {i}")))
        };
        table.rows.push(ResultRow {
            sweep: num(0)?,
            scheme: rec.get(1).unwrap_or_default().to_string(),
            mean_energy_j: num(2)?,
            stderr: num(3)?,
            trials: num(4)? as usize,
            runtime_s: num(5)?,
        });
    }
    Ok(table)
}

/// Writes one whitespace-separated series file per scheme into `dir`,
/// named `<scheme>.dat` with columns `sweep mean_energy_J stderr`.
pub fn emit_plot_data(table: &ResultTable, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut schemes: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !schemes.contains(&r.scheme.as_str()) {
            schemes.push(&r.scheme);
        }
    }
    let mut paths = Vec::new();
    for s in schemes {
        let path = dir.join(format!("{}.dat", s.replace(':', "_M")));
        let mut text = String::from("# sweep mean_energy_J stderr\n");
        for r in table.series(s) {
            text.push_str(&format!("{} {} {}\n", fmt9(r.sweep), fmt9(r.mean_energy_j), fmt9(r.stderr)));
        }
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}
