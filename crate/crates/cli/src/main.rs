use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wpmec::harness::{emit_csv, emit_plot_data, trace_bits_csv, trial_instance, write_csv};
use wpmec::{
    run_experiment, solve_baseline, solve_offline, solve_sliding_window, write_slot_logs, BaselineKind,
    ExperimentConfig, Family, OfflineMethod, OfflineOptions, OfflineSolution, OnlineOptions, PredictedScenario,
    Restriction, Scenario, SystemParams,
};

#[derive(Parser)]
#[command(name = "wpmec", version, about = "Energy-minimal wireless-powered edge computing schedules")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offline optimum of one generated (or loaded) scenario; prints the solution JSON.
    SolveOffline {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
    },
    /// Sliding-window online schedule; prints per-slot logs as CSV.
    SolveOnline {
        #[command(flatten)]
        common: Common,
        /// Window size; defaults to the config's `window`.
        #[arg(long)]
        window: Option<usize>,
        /// Restrict the online scheme to a baseline policy.
        #[arg(long, value_enum, default_value_t = OnlineScheme::Proposed)]
        scheme: OnlineScheme,
        /// Bank surplus harvested energy between windows.
        #[arg(long)]
        energy_carry: bool,
    },
    /// One offline baseline; prints the solution JSON.
    SolveBaseline {
        #[command(flatten)]
        common: Common,
        /// local_only, full_offload or myopic.
        #[arg(long)]
        scheme: String,
    },
    /// Monte-Carlo experiment; writes the result table as CSV.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        /// CSV path; defaults to the config's `output`, else stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-scheme plot series.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
        /// For `fig2_trace`: also write per-slot offline bit allocations here.
        #[arg(long)]
        bits_out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON) providing system parameters, geometry and arrivals.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Scenario JSON to solve instead of generating one.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Auto,
    Ellipsoid,
    InteriorPoint,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnlineScheme {
    Proposed,
    LocalOnly,
    FullOffload,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn instance(common: &Common) -> Result<(SystemParams, Scenario, PredictedScenario)> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let value = if cfg.family == Family::Fig2Trace { 0.0 } else { cfg.sweep[0] };
    let (p, truth, pred) = trial_instance(&cfg, value, 0)?;
    match &common.scenario {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let scen = Scenario::from_json(&text)?;
            let mut p = p;
            p.num_users = scen.num_users();
            p.num_slots = scen.num_slots();
            p.harvest_efficiency.resize(p.num_users, cfg.params.harvest_efficiency[0]);
            p.user_capacitance.resize(p.num_users, cfg.params.user_capacitance[0]);
            p.user_cycles_per_bit.resize(p.num_users, cfg.params.user_cycles_per_bit[0]);
            scen.validate(&p)?;
            let pred = PredictedScenario::exact(&scen);
            Ok((p, scen, pred))
        }
        None => Ok((p, truth, pred)),
    }
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn report(sol: &OfflineSolution) {
    eprintln!(
        "objective {:.9e} J, dual bound {:.9e} J, {} iterations, {:.3} s",
        sol.objective, sol.dual_value, sol.diagnostics.iterations, sol.diagnostics.runtime_s
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SolveOffline { common, method } => {
            let (p, scen, _) = instance(&common)?;
            let method = match method {
                Method::Auto => OfflineMethod::Auto,
                Method::Ellipsoid => OfflineMethod::Ellipsoid,
                Method::InteriorPoint => OfflineMethod::InteriorPoint,
            };
            let sol = solve_offline(&scen, &p, &OfflineOptions { method, ..Default::default() })?;
            report(&sol);
            write_out(common.out.as_deref(), sol.to_json()?.as_bytes())
        }
        Command::SolveOnline { common, window, scheme, energy_carry } => {
            let cfg = load_config(&common.config)?;
            let (p, scen, mut pred) = instance(&common)?;
            let m = window.unwrap_or(cfg.window);
            let restriction = match scheme {
                OnlineScheme::Proposed => Restriction::None,
                OnlineScheme::LocalOnly => Restriction::LocalOnly,
                OnlineScheme::FullOffload => Restriction::FullOffload,
            };
            let opts = OnlineOptions { energy_carry, restriction, ..Default::default() };
            let res = solve_sliding_window(&scen, &mut pred, m, &p, &opts)?;
            eprintln!("realized objective {:.9e} J over {} slots", res.objective, p.num_slots);
            let mut buf = Vec::new();
            write_slot_logs(&res.logs, &mut buf)?;
            write_out(common.out.as_deref(), &buf)
        }
        Command::SolveBaseline { common, scheme } => {
            let kind: BaselineKind = scheme.parse()?;
            let (p, scen, _) = instance(&common)?;
            let sol = solve_baseline(kind, &scen, &p, &OfflineOptions::default())?;
            report(&sol);
            write_out(common.out.as_deref(), sol.to_json()?.as_bytes())
        }
        Command::Experiment { config, seed, trials, out, plot_dir, bits_out } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                if t == 0 {
                    bail!("--trials must be at least 1");
                }
                cfg.trials = t;
            }
            let table = run_experiment(&cfg)?;
            if table.failures > 0 || table.audit_failures > 0 {
                eprintln!("{} failed runs, {} audit failures", table.failures, table.audit_failures);
            }
            match out.or_else(|| cfg.output.clone()) {
                Some(path) => emit_csv(&table, &path)?,
                None => write_csv(&table, std::io::stdout().lock())?,
            }
            if let Some(dir) = plot_dir {
                emit_plot_data(&table, &dir)?;
            }
            if let Some(path) = bits_out {
                if cfg.family != Family::Fig2Trace {
                    bail!("--bits-out applies to fig2_trace only");
                }
                fs::write(&path, trace_bits_csv(&cfg)?)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
