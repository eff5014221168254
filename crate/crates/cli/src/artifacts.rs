//! CSV/JSON artifacts and the run cache.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use qrisk_core::threshold_fit::{FitCache, CACHE_DIR_ENV};
use qrisk_core::write_atomic;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{io_err, RunError};
use crate::experiments::{run_experiment, Summary};
use crate::record::{RunRecord, Timing};

/// Header of every results file, per experiment kind.
pub const FIG5_COLUMNS: &str = "d,eps_theta,objective";
pub const SWEEP_COLUMNS: &str =
    "method,encoding_calls,eps_A,mean_error,param,std_error,p68_error,mean_rounds,mean_total_oracle_calls,repetitions";
pub const FIG7_COLUMNS: &str = "n_scenarios,d,eps_A,eps_Q,eps_C,feasible,k_rounds,k_effective,total_t_depth";
pub const CLOCK_RATE_COLUMNS: &str = "n_scenarios,t_s,d,eps_A,k,clock_rate_hz";
pub const CVAR_COLUMNS: &str = "mode,repetition,d,eps_A,mu_alpha,c_alpha,reference,relative_error,cvar_value";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    pub jobs: Option<usize>,
    /// Overrides `QRISK_CACHE_DIR` and the default `<output>/.cache`.
    pub cache_root: Option<PathBuf>,
}

/// Paths of the files a run produced.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub cache_hit: bool,
}

pub fn cache_root(config: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(r) = &opts.cache_root {
        return r.clone();
    }
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => config.output_dir().join(".cache"),
    }
}

fn run_cache_path(root: &Path, config: &ExperimentConfig) -> PathBuf {
    root.join("runs").join(format!("{}-{}.json", config.name, config.hash()))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, RunError> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(path, bytes).map_err(|e| match e {
        qrisk_core::Error::Io(source) => RunError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

/// Runs `config`, or reuses a cached record with the same hash, and writes
/// all artifacts into the output directory.
pub fn execute(config: &ExperimentConfig, opts: &RunOptions) -> Result<(RunRecord, Artifacts), RunError> {
    let root = cache_root(config, opts);
    let cached = run_cache_path(&root, config);
    let mut record = None;
    if !opts.force {
        if let Ok(text) = fs::read_to_string(&cached) {
            if let Ok(mut r) = serde_json::from_str::<RunRecord>(&text) {
                if r.config_hash == config.hash() {
                    r.config.output = config.output.clone();
                    r.timing = Timing {
                        wall_clock_seconds: 0.0,
                        cache_hit: true,
                    };
                    record = Some(r);
                }
            }
        }
    }
    let record = match record {
        Some(r) => r,
        None => {
            let fits = FitCache::with_dir(root.join("fits"));
            let r = run_experiment(config, &fits, opts.jobs)?;
            write(&cached, &to_json(&r)?)?;
            r
        }
    };
    let artifacts = write_artifacts(&record, &config.output_dir())?;
    Ok((record, artifacts))
}

/// Writes `record.json`, `summary.json`, `timing.json` and the CSV tables.
pub fn write_artifacts(record: &RunRecord, dir: &Path) -> Result<Artifacts, RunError> {
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<(), RunError> {
        let path = dir.join(name);
        write(&path, &bytes)?;
        files.push(path);
        Ok(())
    };
    put("record.json", to_json(record)?)?;
    put("summary.json", to_json(&record.summary)?)?;
    for (name, csv) in render_csv(record) {
        put(name, csv.into_bytes())?;
    }
    put("timing.json", to_json(&record.timing)?)?;
    Ok(Artifacts {
        dir: dir.to_path_buf(),
        files,
        cache_hit: record.timing.cache_hit,
    })
}

/// CSV tables of a record, by file name.
pub fn render_csv(record: &RunRecord) -> Vec<(&'static str, String)> {
    match &record.summary {
        Summary::Fig5(s) => {
            let mut out = format!("{FIG5_COLUMNS}\n");
            for p in &s.points {
                let eps = match s.readout {
                    qrisk_core::qsp_sim::MeasurementMode::FunctionValue => p.eps_theta_function_value,
                    qrisk_core::qsp_sim::MeasurementMode::AmplitudeSquared => p.eps_theta_amplitude_squared,
                };
                let _ = writeln!(out, "{},{},{}", p.d, eps, p.objective);
            }
            vec![("results.csv", out)]
        }
        Summary::Sweep(_) => {
            let mut out = format!("{SWEEP_COLUMNS}\n");
            for a in &record.aggregates {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    a.method,
                    a.encoding_calls,
                    a.eps_a,
                    a.mean_error,
                    a.param,
                    a.std_error,
                    a.p68_error,
                    a.mean_rounds,
                    a.mean_total_oracle_calls,
                    a.count
                );
            }
            vec![("results.csv", out)]
        }
        Summary::Fig7(s) => {
            let mut cells = format!("{FIG7_COLUMNS}\n");
            for c in &s.cells {
                let _ = writeln!(
                    cells,
                    "{},{},{},{},{},{},{},{},{}",
                    c.n_scenarios, c.d, c.eps_a, c.eps_q, c.eps_c, c.feasible, c.k_rounds, c.k_effective, c.total_t_depth
                );
            }
            let mut rates = format!("{CLOCK_RATE_COLUMNS}\n");
            for p in &s.curves {
                let _ = writeln!(rates, "{},{},{},{},{},{}", p.n_scenarios, p.t_s, p.d, p.eps_a, p.k, p.clock_rate_hz);
            }
            vec![("results.csv", cells), ("clock_rates.csv", rates)]
        }
        Summary::Cvar(_) => {
            let mut out = format!("{CVAR_COLUMNS}\n");
            let v0 = record.config.schedule.v0;
            for rep in &record.repetitions {
                let mut mu_alpha = f64::NAN;
                for m in &rep.measurements {
                    if m.method == "qsp" {
                        mu_alpha = m.estimate.sqrt();
                        continue;
                    }
                    let Some(mode) = m.method.strip_prefix("cvar_") else {
                        continue;
                    };
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{},{}",
                        mode,
                        rep.index,
                        m.param,
                        m.eps_a,
                        mu_alpha,
                        m.estimate,
                        m.reference,
                        m.relative_error(),
                        v0 - m.estimate
                    );
                }
            }
            vec![("results.csv", out)]
        }
    }
}
