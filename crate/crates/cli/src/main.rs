use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qrisk::config::ExperimentConfig;
use qrisk::error::RunError;
use qrisk::{execute, summarize, ExperimentName, RunOptions, RunRecord};
use qrisk_core::qae_sim::qae_pmf;
use qrisk_core::qsp_sim::{CvarMode, MeasurementMode};
use qrisk_core::resource_model::{clock_rate_sweep, CostParams, ResourcePlan};
use qrisk_core::risk_engine::{
    cvar_qsp, var_classical, var_qae, var_qsp, var_semiclassical, BisectionOptions, QspParams, VarResult,
};
use qrisk_core::scenario_gen::{add_pricing_noise, sample_normal_scenarios, scenarios_from_tweaks, PricingModel, ScenarioSet};
use qrisk_core::threshold_fit::{FitCache, ThresholdKind, ThresholdSpec};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "qrisk", version, about = "Simulated quantum VaR/CVaR estimators and experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a bounded even threshold polynomial.
    FitThreshold(FitArgs),
    /// Generate a scenario set.
    Scenarios(ScenarioArgs),
    /// Canonical QAE outcome distribution as CSV.
    QaePmf {
        #[arg(long)]
        value: f64,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Empirical quantile of a scenario set.
    VarClassical {
        #[command(flatten)]
        input: SetArgs,
    },
    /// Quantile after adding pricing noise.
    VarSemiclassical {
        #[command(flatten)]
        input: SetArgs,
        #[arg(long)]
        eps_p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// VaR with the QAE comparator encoding.
    VarQae {
        #[command(flatten)]
        input: SetArgs,
        #[command(flatten)]
        bisection: BisectionArgs,
        #[arg(long)]
        m: u32,
    },
    /// VaR with the threshold-polynomial encoding.
    VarQsp {
        #[command(flatten)]
        input: SetArgs,
        #[command(flatten)]
        bisection: BisectionArgs,
        #[command(flatten)]
        qsp: QspArgs,
    },
    /// CVaR from the ramp and step encodings at the QSP VaR threshold.
    Cvar {
        #[command(flatten)]
        input: SetArgs,
        #[command(flatten)]
        bisection: BisectionArgs,
        #[command(flatten)]
        qsp: QspArgs,
        #[arg(long, value_enum, default_value_t = CvarModeArg::IdealValue)]
        mode: CvarModeArg,
    },
    /// T-depth plan and clock-rate sweep over loading depths.
    Resources(ResourceArgs),
    /// Run a named experiment from a JSON config.
    Experiment {
        name: String,
        #[arg(long)]
        config: PathBuf,
        /// Ignore a cached run with the same config hash.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Pool run records of one protocol and print the merged summary.
    Summarize {
        records: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Step,
    Ramp,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReadoutArg {
    AmplitudeSquared,
    FunctionValue,
}

impl From<ReadoutArg> for MeasurementMode {
    fn from(r: ReadoutArg) -> Self {
        match r {
            ReadoutArg::AmplitudeSquared => Self::AmplitudeSquared,
            ReadoutArg::FunctionValue => Self::FunctionValue,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CvarModeArg {
    IdealValue,
    FunctionValue,
    AmplitudeSquared,
}

impl From<CvarModeArg> for CvarMode {
    fn from(m: CvarModeArg) -> Self {
        match m {
            CvarModeArg::IdealValue => Self::IdealValue,
            CvarModeArg::FunctionValue => Self::FunctionValue,
            CvarModeArg::AmplitudeSquared => Self::AmplitudeSquared,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    mu: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Bound on |P|; defaults to `1 - eps`.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    degree: usize,
    #[arg(long, value_enum, default_value_t = KindArg::Step)]
    kind: KindArg,
    /// Objective grid size.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    mean: f64,
    #[arg(long, default_value_t = 0.09)]
    sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Add pricing noise of this standard deviation.
    #[arg(long)]
    eps_p: Option<f64>,
    /// Price tweak vectors instead: JSON `{portfolio, tweaks, probs}`.
    #[arg(long)]
    tweaks: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TweakFile {
    portfolio: Vec<PricingModel>,
    tweaks: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

#[derive(Args)]
struct SetArgs {
    /// Scenario set as CSV (`index,value,prob`) or JSON.
    #[arg(long)]
    scenarios: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    alpha: f64,
}

#[derive(Args)]
struct BisectionArgs {
    #[arg(long, default_value_t = 1e-4)]
    eps_a: f64,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value_t = 30)]
    k_max: usize,
    #[arg(long, default_value_t = 1.0)]
    v0: f64,
    /// Keep the per-round interval trace in the output.
    #[arg(long)]
    trace: bool,
}

impl BisectionArgs {
    fn options(&self) -> Result<BisectionOptions, RunError> {
        let mut o = BisectionOptions::new(self.eps_a, self.confidence)?;
        o.k_max = self.k_max;
        o.schedule.k_max = self.k_max;
        o.v0 = self.v0;
        o.schedule.validate()?;
        Ok(o)
    }
}

#[derive(Args)]
struct QspArgs {
    #[arg(long)]
    degree: usize,
    #[arg(long)]
    delta: f64,
    /// Fit tolerance `1 - c`.
    #[arg(long, default_value_t = 1e-3)]
    fit_eps: f64,
    #[arg(long, value_enum, default_value_t = ReadoutArg::AmplitudeSquared)]
    readout: ReadoutArg,
}

impl QspArgs {
    fn params(&self) -> QspParams {
        QspParams {
            degree: self.degree,
            delta: self.delta,
            eps: self.fit_eps,
            readout: self.readout.into(),
        }
    }
}

#[derive(Args)]
struct ResourceArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    eps_a: f64,
    /// Bisection rounds entering the end-to-end depth.
    #[arg(long)]
    k: f64,
    /// Per-round failure probability; defaults to 0.05 / 30.
    #[arg(long)]
    alpha_k: Option<f64>,
    #[arg(long = "n-scenarios", default_value_t = 50_000)]
    n_scenarios: usize,
    /// Cost parameters as JSON; missing keys take defaults.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Loading depths for the sweep; defaults to 10^3 .. 10^9.
    #[arg(long, value_delimiter = ',')]
    t_s: Vec<f64>,
    /// Write the sweep CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct ResourceReport {
    plan: ResourcePlan,
    sweep_rows: usize,
}

fn read(path: &Path) -> Result<String, RunError> {
    std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), RunError> {
    match out {
        Some(p) => qrisk_core::write_atomic(p, text.as_bytes()).map_err(RunError::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, RunError> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn load_set(path: &Path) -> Result<ScenarioSet, RunError> {
    let text = read(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(ScenarioSet::from_csv(&text)?)
    }
}

fn var_output(mut r: VarResult, trace: bool) -> Result<String, RunError> {
    if !trace {
        r.trace.clear();
    }
    json(&r)
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::FitThreshold(a) => {
            let kind = match a.kind {
                KindArg::Step => ThresholdKind::Step,
                KindArg::Ramp => ThresholdKind::Ramp,
            };
            let mut spec = ThresholdSpec::new(kind, a.mu, a.delta, a.eps, a.degree)?;
            if let Some(c) = a.c {
                spec = spec.with_c(c)?;
            }
            if let Some(m) = a.grid {
                spec = spec.with_grid_size(m)?;
            }
            let fit = FitCache::from_env().get_or_fit(&spec)?;
            emit(a.out.as_deref(), &json(&*fit)?)
        }
        Command::Scenarios(a) => {
            let mut set = match &a.tweaks {
                Some(path) => {
                    let t: TweakFile = serde_json::from_str(&read(path)?)?;
                    scenarios_from_tweaks(&t.portfolio, &t.tweaks, &t.probs)?
                }
                None => sample_normal_scenarios(a.n, a.mean, a.sd, a.seed)?,
            };
            if let Some(eps_p) = a.eps_p {
                set = add_pricing_noise(&set, eps_p, a.seed)?;
            }
            let text = match a.format {
                Format::Csv => set.to_csv(),
                Format::Json => json(&set)?,
            };
            emit(a.out.as_deref(), &text)
        }
        Command::QaePmf { value, m, out } => {
            let pmf = qae_pmf(value, m)?;
            let mut text = String::from("j,probability\n");
            for (j, p) in pmf.iter().enumerate() {
                let _ = writeln!(text, "{j},{p}");
            }
            emit(out.as_deref(), &text)
        }
        Command::VarClassical { input } => {
            let v = var_classical(&load_set(&input.scenarios)?, input.alpha)?;
            emit(None, &json(&serde_json::json!({ "alpha": input.alpha, "v_alpha": v }))?)
        }
        Command::VarSemiclassical { input, eps_p, seed } => {
            let v = var_semiclassical(&load_set(&input.scenarios)?, input.alpha, eps_p, seed)?;
            emit(
                None,
                &json(&serde_json::json!({ "alpha": input.alpha, "eps_p": eps_p, "seed": seed, "v_alpha": v }))?,
            )
        }
        Command::VarQae { input, bisection, m } => {
            let r = var_qae(&load_set(&input.scenarios)?, input.alpha, m, &bisection.options()?)?;
            emit(None, &var_output(r, bisection.trace)?)
        }
        Command::VarQsp { input, bisection, qsp } => {
            let cache = FitCache::from_env();
            let r = var_qsp(
                &load_set(&input.scenarios)?,
                input.alpha,
                &qsp.params(),
                &bisection.options()?,
                &cache,
            )?;
            emit(None, &var_output(r, bisection.trace)?)
        }
        Command::Cvar {
            input,
            bisection,
            qsp,
            mode,
        } => {
            let cache = FitCache::from_env();
            let set = load_set(&input.scenarios)?;
            let params = qsp.params();
            let mut var = var_qsp(&set, input.alpha, &params, &bisection.options()?, &cache)?;
            let cvar = cvar_qsp(&set, &var, &params, mode.into(), &cache, bisection.v0)?;
            if !bisection.trace {
                var.trace.clear();
            }
            emit(None, &json(&serde_json::json!({ "var": var, "cvar": cvar }))?)
        }
        Command::Resources(a) => {
            let params: CostParams = match &a.params {
                Some(p) => serde_json::from_str(&read(p)?)?,
                None => CostParams::default(),
            };
            params.validate()?;
            let alpha_k = a.alpha_k.unwrap_or(0.05 / 30.0);
            let t_s = if a.t_s.is_empty() {
                (0..=24).map(|i| 10f64.powf(3.0 + 0.25 * f64::from(i))).collect()
            } else {
                a.t_s.clone()
            };
            let plan = ResourcePlan::new(&params, a.d, a.eps_a, a.k, alpha_k, a.n_scenarios)?;
            let sweep = clock_rate_sweep(&params, a.d, a.eps_a, a.k, alpha_k, a.n_scenarios, &t_s)?;
            if let Some(path) = &a.csv {
                let mut text = String::from(qrisk::artifacts::CLOCK_RATE_COLUMNS);
                text.push('\n');
                for p in &sweep {
                    let _ = writeln!(text, "{},{},{},{},{},{}", p.n_scenarios, p.t_s, p.d, p.eps_a, p.k, p.clock_rate_hz);
                }
                emit(Some(path), &text)?;
            }
            emit(
                None,
                &json(&ResourceReport {
                    plan,
                    sweep_rows: sweep.len(),
                })?,
            )
        }
        Command::Experiment {
            name,
            config,
            force,
            jobs,
        } => {
            let expected: ExperimentName = name.parse()?;
            let cfg = ExperimentConfig::load(&config)?;
            if cfg.name != expected {
                return Err(RunError::Config(format!(
                    "config {} describes {}, not {expected}",
                    config.display(),
                    cfg.name
                )));
            }
            let opts = RunOptions {
                force,
                jobs,
                cache_root: None,
            };
            let (record, artifacts) = execute(&cfg, &opts)?;
            eprintln!(
                "{} {} -> {}{}",
                record.experiment,
                record.config_hash,
                artifacts.dir.display(),
                if artifacts.cache_hit { " (cached)" } else { "" }
            );
            Ok(())
        }
        Command::Summarize { records, out } => {
            let loaded = records
                .iter()
                .map(|p| Ok(serde_json::from_str::<RunRecord>(&read(p)?)?))
                .collect::<Result<Vec<_>, RunError>>()?;
            let merged = summarize(&loaded)?;
            emit(out.as_deref(), &json(&merged)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qrisk: {e}");
            ExitCode::FAILURE
        }
    }
}
