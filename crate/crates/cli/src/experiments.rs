//! Named experiment protocols and their summaries.
//!
//! Every protocol runs repetitions as independent tasks on a rayon pool and
//! collects them in index order, so the record depends only on the config.

use std::collections::HashMap;
use std::time::Instant;

use qrisk_core::qae_sim::{qae_encoding_oracle_calls, QaeAggregate};
use qrisk_core::qsp_sim::{qsp_encoding_oracle_calls, CvarMode, MeasurementMode};
use qrisk_core::resource_model::{
    clock_rate_sweep, crossing_t_s, search_matching_params, CostParams, MatchCell, ResourcePlan, SweepPoint,
};
use qrisk_core::risk_engine::{
    bisect_var, conditional_amplitude_mean, cvar_qsp, propagate_error, qsp_step_probability, var_classical,
    var_semiclassical, AeModeSpec, BisectionOptions, NormalDist, QspParams, VarResult,
};
use qrisk_core::scenario_gen::{sample_normal_scenarios, ScenarioSet};
use qrisk_core::threshold_fit::{theta_error, DiscreteDensity, FitCache, ThresholdSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentName, QspSweep, RoundCount};
use crate::error::{config_err, RunError};
use crate::record::{aggregate, Aggregate, Measurement, Repetition, RunRecord};
use crate::stats::{linear_fit, log_log_slope};

/// Offset mixed into repetition seeds for the pricing-noise stream.
const NOISE_SEED_MIX: u64 = 0x9e37_79b9_7f4a_7c15;

/// Errors at least this multiple of the AE floor count as pre-plateau.
pub const PLATEAU_FACTOR: f64 = 2.0;

fn noise_seed(rep_seed: u64, stream: usize) -> u64 {
    rep_seed ^ NOISE_SEED_MIX.wrapping_mul(stream as u64 + 1)
}

/// Runs the protocol named in `config` on a pool of `jobs` threads.
pub fn run_experiment(config: &ExperimentConfig, fits: &FitCache, jobs: Option<usize>) -> Result<RunRecord, RunError> {
    let start = Instant::now();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| RunError::Pool(e.to_string()))?;
    let reps = pool.install(|| match config.name {
        ExperimentName::Fig5 => fig5_repetition(config, fits).map(|r| vec![r]),
        ExperimentName::Fig6 | ExperimentName::Custom => run_reps(config, |i| sweep_repetition(config, i, fits)),
        ExperimentName::Fig7 => run_reps(config, |i| fig7_repetition(config, i, fits)),
        ExperimentName::Cvar => run_reps(config, |i| cvar_repetition(config, i, fits)),
    })?;
    let summary = build_summary(config, &aggregate(&reps))?;
    let mut record = RunRecord::new(config.clone(), reps, summary);
    record.timing.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

fn run_reps<F>(config: &ExperimentConfig, f: F) -> Result<Vec<Repetition>, RunError>
where
    F: Fn(usize) -> Result<Repetition, RunError> + Sync + Send,
{
    config.repetition_indices().into_par_iter().map(f).collect()
}

/// Bisection options for one repetition; stochastic AE streams are offset
/// by the repetition seed.
fn rep_options(config: &ExperimentConfig, eps_a: f64, rep_seed: u64) -> Result<BisectionOptions, RunError> {
    let mut opts = config.schedule.options(eps_a)?;
    if let AeModeSpec::Stochastic { seed } = opts.ae_mode {
        opts.ae_mode = AeModeSpec::Stochastic {
            seed: seed.wrapping_add(rep_seed),
        };
    }
    Ok(opts)
}

fn qsp_params(q: &QspSweep, d: usize) -> QspParams {
    QspParams {
        degree: d,
        delta: q.delta_for(d),
        eps: q.eps,
        readout: q.readout,
    }
}

struct Cell<'a> {
    method: &'a str,
    param: f64,
    eps_a: f64,
    n_scenarios: usize,
    mean: f64,
}

impl Cell<'_> {
    fn from_var(&self, r: &VarResult, reference: f64) -> Measurement {
        Measurement {
            method: self.method.to_string(),
            param: self.param,
            eps_a: self.eps_a,
            n_scenarios: self.n_scenarios,
            mean: self.mean,
            estimate: r.threshold_value,
            reference,
            encoding_calls: r.encoding_calls_per_circuit,
            total_oracle_calls: r.total_oracle_calls,
            ae_calls: r.ae_calls,
            rounds: r.rounds,
            converged: r.converged,
        }
    }

    fn plain(&self, estimate: f64, reference: f64) -> Measurement {
        Measurement {
            method: self.method.to_string(),
            param: self.param,
            eps_a: self.eps_a,
            n_scenarios: self.n_scenarios,
            mean: self.mean,
            estimate,
            reference,
            encoding_calls: 0,
            total_oracle_calls: 0,
            ae_calls: 0,
            rounds: 0,
            converged: true,
        }
    }
}

/// QSP bisections for every `eps_A`, sharing probability evaluations at
/// repeated thresholds.
fn qsp_runs(
    set: &ScenarioSet,
    config: &ExperimentConfig,
    params: &QspParams,
    rep_seed: u64,
    fits: &FitCache,
) -> Result<Vec<(f64, VarResult)>, RunError> {
    let calls = qsp_encoding_oracle_calls(params.degree)?;
    let mut memo: HashMap<u64, f64> = HashMap::new();
    let mut out = Vec::with_capacity(config.eps_a.len());
    for &eps_a in &config.eps_a {
        let opts = rep_options(config, eps_a, rep_seed)?;
        let r = bisect_var(
            |mu| {
                if let Some(&p) = memo.get(&mu.to_bits()) {
                    return Ok(p);
                }
                let p = qsp_step_probability(set, mu, params, fits)?;
                memo.insert(mu.to_bits(), p);
                Ok(p)
            },
            config.alpha,
            calls,
            &opts,
        )?;
        out.push((eps_a, r));
    }
    Ok(out)
}

fn qae_runs(set: &ScenarioSet, config: &ExperimentConfig, m: u32, rep_seed: u64) -> Result<Vec<(f64, VarResult)>, RunError> {
    let calls = qae_encoding_oracle_calls(m)?;
    let agg = QaeAggregate::new(set, m)?;
    config
        .eps_a
        .iter()
        .map(|&eps_a| {
            let opts = rep_options(config, eps_a, rep_seed)?;
            Ok((eps_a, bisect_var(|mu| agg.prob_below(mu * mu), config.alpha, calls, &opts)?))
        })
        .collect()
}

fn fig5_repetition(config: &ExperimentConfig, fits: &FitCache) -> Result<Repetition, RunError> {
    let f = config.fig5.as_ref().ok_or_else(|| config_err("fig5 section missing"))?;
    let density = DiscreteDensity::normal(f.density_mean, f.density_sd, f.density_points)?;
    let per_degree: Vec<Vec<Measurement>> = f
        .degrees
        .par_iter()
        .map(|&d| -> Result<Vec<Measurement>, RunError> {
            let spec = ThresholdSpec::step(f.mu, f.delta, f.eps, d)?;
            let fit = fits.get_or_fit(&spec)?;
            let cell = |method| Cell {
                method,
                param: d as f64,
                eps_a: 0.0,
                n_scenarios: 0,
                mean: f.density_mean,
            };
            Ok(vec![
                cell("fit_objective").plain(fit.objective, 0.0),
                cell(theta_method(MeasurementMode::FunctionValue)).plain(
                    theta_error(&fit.series, &spec, &density, MeasurementMode::FunctionValue)?,
                    0.0,
                ),
                cell(theta_method(MeasurementMode::AmplitudeSquared)).plain(
                    theta_error(&fit.series, &spec, &density, MeasurementMode::AmplitudeSquared)?,
                    0.0,
                ),
            ])
        })
        .collect::<Result<_, _>>()?;
    Ok(Repetition {
        index: 0,
        seed: config.seed,
        measurements: per_degree.into_iter().flatten().collect(),
    })
}

fn theta_method(mode: MeasurementMode) -> &'static str {
    match mode {
        MeasurementMode::FunctionValue => "theta_function_value",
        MeasurementMode::AmplitudeSquared => "theta_amplitude_squared",
    }
}

fn sweep_repetition(config: &ExperimentConfig, index: usize, fits: &FitCache) -> Result<Repetition, RunError> {
    let seed = config.repetition_seed(index);
    let s = &config.scenarios;
    let set = sample_normal_scenarios(s.n, s.mean, s.sd, seed)?;
    let reference = var_classical(&set, config.alpha)?;
    let cell = |method, param, eps_a| Cell {
        method,
        param,
        eps_a,
        n_scenarios: s.n,
        mean: s.mean,
    };
    let mut out = Vec::new();
    if let Some(q) = &config.qsp {
        for &d in &q.degrees {
            for (eps_a, r) in qsp_runs(&set, config, &qsp_params(q, d), seed, fits)? {
                out.push(cell("qsp", d as f64, eps_a).from_var(&r, reference));
            }
        }
    }
    if let Some(q) = &config.qae {
        for &m in &q.qubits {
            for (eps_a, r) in qae_runs(&set, config, m, seed)? {
                out.push(cell("qae", f64::from(m), eps_a).from_var(&r, reference));
            }
        }
    }
    if let Some(b) = &config.baseline {
        for (i, &eps_p) in b.eps_p.iter().enumerate() {
            let v = var_semiclassical(&set, config.alpha, eps_p, noise_seed(seed, i))?;
            out.push(cell("semiclassical", eps_p, 0.0).plain(v, reference));
        }
    }
    Ok(Repetition {
        index,
        seed,
        measurements: out,
    })
}

fn fig7_repetition(config: &ExperimentConfig, index: usize, fits: &FitCache) -> Result<Repetition, RunError> {
    let f = config.fig7.as_ref().ok_or_else(|| config_err("fig7 section missing"))?;
    let q = config.qsp.as_ref().ok_or_else(|| config_err("fig7 needs a qsp sweep"))?;
    let seed = config.repetition_seed(index);
    let sd = config.scenarios.sd;
    let mut out = Vec::new();
    for &n in &f.n_scenarios {
        for &mean in &f.means {
            let reference = NormalDist { mean, sd }.quantile(1.0 - config.alpha)?;
            // One z-stream per repetition, shared across means.
            let set = sample_normal_scenarios(n, mean, sd, seed)?;
            let cell = |method, param, eps_a| Cell {
                method,
                param,
                eps_a,
                n_scenarios: n,
                mean,
            };
            let classical = var_semiclassical(&set, config.alpha, f.eps_p, noise_seed(seed, 0))?;
            out.push(cell("classical", f.eps_p, 0.0).plain(classical, reference));
            for &d in &q.degrees {
                for (eps_a, r) in qsp_runs(&set, config, &qsp_params(q, d), seed, fits)? {
                    out.push(cell("qsp", d as f64, eps_a).from_var(&r, reference));
                }
            }
        }
    }
    Ok(Repetition {
        index,
        seed,
        measurements: out,
    })
}

pub fn cvar_method(mode: CvarMode) -> &'static str {
    match mode {
        CvarMode::IdealValue => "cvar_ideal_value",
        CvarMode::FunctionValue => "cvar_function_value",
        CvarMode::AmplitudeSquared => "cvar_amplitude_squared",
    }
}

fn cvar_repetition(config: &ExperimentConfig, index: usize, fits: &FitCache) -> Result<Repetition, RunError> {
    let c = config.cvar.as_ref().ok_or_else(|| config_err("cvar section missing"))?;
    let q = config.qsp.as_ref().ok_or_else(|| config_err("cvar needs a qsp section"))?;
    let seed = config.repetition_seed(index);
    let s = &config.scenarios;
    let set = sample_normal_scenarios(s.n, s.mean, s.sd, seed)?;
    let reference = var_classical(&set, config.alpha)?;
    let cell = |method, param, eps_a| Cell {
        method,
        param,
        eps_a,
        n_scenarios: s.n,
        mean: s.mean,
    };
    let mut out = Vec::new();
    for &d in &q.degrees {
        let params = qsp_params(q, d);
        for (eps_a, var) in qsp_runs(&set, config, &params, seed, fits)? {
            out.push(cell("qsp", d as f64, eps_a).from_var(&var, reference));
            let exact = conditional_amplitude_mean(&set, var.mu_alpha)?;
            for &mode in &c.modes {
                let r = cvar_qsp(&set, &var, &params, mode, fits, config.schedule.v0)?;
                out.push(cell(cvar_method(mode), d as f64, eps_a).plain(r.c_alpha, exact));
            }
        }
    }
    Ok(Repetition {
        index,
        seed,
        measurements: out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Summary {
    Fig5(Fig5Summary),
    Sweep(SweepSummary),
    Fig7(Fig7Summary),
    Cvar(CvarSummary),
}

/// Recomputes the summary from pooled aggregates.
pub fn build_summary(config: &ExperimentConfig, aggregates: &[Aggregate]) -> Result<Summary, RunError> {
    Ok(match config.name {
        ExperimentName::Fig5 => Summary::Fig5(fig5_summary(config, aggregates)?),
        ExperimentName::Fig6 | ExperimentName::Custom => Summary::Sweep(sweep_summary(config, aggregates)?),
        ExperimentName::Fig7 => Summary::Fig7(fig7_summary(config, aggregates)?),
        ExperimentName::Cvar => Summary::Cvar(cvar_summary(config, aggregates)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Point {
    pub d: usize,
    pub objective: f64,
    pub eps_theta_function_value: f64,
    pub eps_theta_amplitude_squared: f64,
}

/// `eps_theta ~ a/d + b` together with the raw log-log slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseFit {
    pub readout: MeasurementMode,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub log_log_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig5Summary {
    /// Readout written to the CSV.
    pub readout: MeasurementMode,
    pub points: Vec<Fig5Point>,
    pub fits: Vec<InverseFit>,
}

impl Fig5Summary {
    pub fn fit(&self, readout: MeasurementMode) -> Option<&InverseFit> {
        self.fits.iter().find(|f| f.readout == readout)
    }
}

fn fig5_summary(config: &ExperimentConfig, aggregates: &[Aggregate]) -> Result<Fig5Summary, RunError> {
    let f = config.fig5.as_ref().ok_or_else(|| config_err("fig5 section missing"))?;
    let value = |method: &str, d: usize| {
        aggregates
            .iter()
            .find(|a| a.method == method && a.param == d as f64)
            .map(|a| a.mean_error)
            .ok_or_else(|| RunError::Heterogeneous(format!("missing {method} at d = {d}")))
    };
    let points = f
        .degrees
        .iter()
        .map(|&d| {
            Ok(Fig5Point {
                d,
                objective: value("fit_objective", d)?,
                eps_theta_function_value: value(theta_method(MeasurementMode::FunctionValue), d)?,
                eps_theta_amplitude_squared: value(theta_method(MeasurementMode::AmplitudeSquared), d)?,
            })
        })
        .collect::<Result<Vec<_>, RunError>>()?;
    let ds: Vec<f64> = points.iter().map(|p| p.d as f64).collect();
    let fits = [MeasurementMode::FunctionValue, MeasurementMode::AmplitudeSquared]
        .into_iter()
        .map(|readout| {
            let ys: Vec<f64> = points
                .iter()
                .map(|p| match readout {
                    MeasurementMode::FunctionValue => p.eps_theta_function_value,
                    MeasurementMode::AmplitudeSquared => p.eps_theta_amplitude_squared,
                })
                .collect();
            let ab = crate::stats::inverse_fit(&ds, &ys);
            InverseFit {
                readout,
                a: ab.map(|(a, _)| a),
                b: ab.map(|(_, b)| b),
                log_log_slope: log_log_slope(&ds, &ys),
            }
        })
        .collect();
    Ok(Fig5Summary {
        readout: f.readout,
        points,
        fits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub param: f64,
    pub encoding_calls: u64,
    pub mean_error: f64,
    pub std_error: f64,
    pub p68_error: f64,
    pub mean_total_oracle_calls: f64,
}

/// Mean error against encoding calls for one `(method, eps_A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub method: String,
    pub eps_a: f64,
    /// Value-space error induced by an `eps_A` probability error.
    pub floor: f64,
    pub points: Vec<CurvePoint>,
    /// Points with error at least `PLATEAU_FACTOR * floor`.
    pub pre_plateau_points: usize,
    pub pre_plateau_slope: Option<f64>,
    /// Log-log intercept of the pre-plateau fit.
    pub pre_plateau_intercept: Option<f64>,
    /// First call count from which every error stays below the plateau
    /// threshold.
    pub plateau_onset_calls: Option<u64>,
}

impl Curve {
    fn pre_plateau(&self) -> impl Iterator<Item = &CurvePoint> {
        self.points
            .iter()
            .filter(move |p| p.mean_error >= PLATEAU_FACTOR * self.floor)
    }

    /// Calls needed for `error` on the pre-plateau power law.
    pub fn calls_at(&self, error: f64) -> Option<f64> {
        let (s, c) = (self.pre_plateau_slope?, self.pre_plateau_intercept?);
        if s >= 0.0 {
            return None;
        }
        Some(((error.ln() - c) / s).exp())
    }

    fn pre_plateau_error_range(&self) -> Option<(f64, f64)> {
        let errs: Vec<f64> = self.pre_plateau().map(|p| p.mean_error).collect();
        if errs.is_empty() {
            return None;
        }
        Some((
            errs.iter().copied().fold(f64::INFINITY, f64::min),
            errs.iter().copied().fold(0.0, f64::max),
        ))
    }
}

/// QAE-to-QSP encoding-call ratio at equal mean error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedRatio {
    pub eps_a: f64,
    pub error: f64,
    pub qsp_calls: f64,
    pub qae_calls: f64,
    pub ratio: f64,
    /// The error level lies outside one of the observed pre-plateau ranges.
    pub extrapolated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauOrder {
    pub method: String,
    pub coarse_eps_a: f64,
    pub fine_eps_a: f64,
    pub coarse_onset_calls: Option<u64>,
    pub fine_onset_calls: Option<u64>,
    pub coarse_final_error: f64,
    pub fine_final_error: f64,
    pub coarse_plateaus_first: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub eps_p: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub p68_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub curves: Vec<Curve>,
    pub matched_ratio: Option<MatchedRatio>,
    pub plateau_order: Vec<PlateauOrder>,
    pub baselines: Vec<BaselineRow>,
}

impl SweepSummary {
    pub fn curve(&self, method: &str, eps_a: f64) -> Option<&Curve> {
        self.curves.iter().find(|c| c.method == method && c.eps_a == eps_a)
    }
}

fn build_curve(method: &str, eps_a: f64, floor: f64, aggregates: &[Aggregate]) -> Curve {
    let mut points: Vec<CurvePoint> = aggregates
        .iter()
        .filter(|a| a.method == method && a.eps_a == eps_a)
        .map(|a| CurvePoint {
            param: a.param,
            encoding_calls: a.encoding_calls,
            mean_error: a.mean_error,
            std_error: a.std_error,
            p68_error: a.p68_error,
            mean_total_oracle_calls: a.mean_total_oracle_calls,
        })
        .collect();
    points.sort_by_key(|p| p.encoding_calls);
    let threshold = PLATEAU_FACTOR * floor;
    let pre: Vec<&CurvePoint> = points.iter().filter(|p| p.mean_error >= threshold).collect();
    let lx: Vec<f64> = pre.iter().map(|p| (p.encoding_calls as f64).ln()).collect();
    let ly: Vec<f64> = pre.iter().map(|p| p.mean_error.ln()).collect();
    let fit = linear_fit(&lx, &ly);
    let onset = (0..points.len())
        .find(|&i| points[i..].iter().all(|p| p.mean_error < threshold))
        .map(|i| points[i].encoding_calls);
    Curve {
        method: method.to_string(),
        eps_a,
        floor,
        pre_plateau_points: pre.len(),
        pre_plateau_slope: fit.map(|(s, _)| s),
        pre_plateau_intercept: fit.map(|(_, c)| c),
        plateau_onset_calls: onset,
        points,
    }
}

fn matched_ratio(qsp: &Curve, qae: &Curve) -> Option<MatchedRatio> {
    let (qsp_lo, qsp_hi) = qsp.pre_plateau_error_range()?;
    let (qae_lo, qae_hi) = qae.pre_plateau_error_range()?;
    let (lo, hi) = (qsp_lo.max(qae_lo), qsp_hi.min(qae_hi));
    let (error, extrapolated) = if lo <= hi {
        ((lo * hi).sqrt(), false)
    } else {
        // Disjoint ranges: meet halfway in log space.
        ((lo * hi).sqrt(), true)
    };
    let qsp_calls = qsp.calls_at(error)?;
    let qae_calls = qae.calls_at(error)?;
    Some(MatchedRatio {
        eps_a: qsp.eps_a,
        error,
        qsp_calls,
        qae_calls,
        ratio: qae_calls / qsp_calls,
        extrapolated,
    })
}

fn sweep_summary(config: &ExperimentConfig, aggregates: &[Aggregate]) -> Result<SweepSummary, RunError> {
    let s = &config.scenarios;
    let dist = NormalDist { mean: s.mean, sd: s.sd };
    let mut eps_sorted = config.eps_a.clone();
    eps_sorted.sort_by(f64::total_cmp);
    eps_sorted.dedup();
    let mut curves = Vec::new();
    for method in ["qsp", "qae"] {
        let present = match method {
            "qsp" => config.qsp.is_some(),
            _ => config.qae.is_some(),
        };
        if !present {
            continue;
        }
        for &eps_a in &eps_sorted {
            let floor = propagate_error(eps_a, dist, config.alpha)?;
            curves.push(build_curve(method, eps_a, floor, aggregates));
        }
    }
    let find = |m: &str, e: f64| curves.iter().find(|c| c.method == m && c.eps_a == e);
    let matched_ratio = eps_sorted
        .first()
        .and_then(|&e| matched_ratio(find("qsp", e)?, find("qae", e)?));
    let mut plateau_order = Vec::new();
    if let (Some(&fine), Some(&coarse)) = (eps_sorted.first(), eps_sorted.last()) {
        if fine < coarse {
            for method in ["qsp", "qae"] {
                let (Some(f), Some(c)) = (find(method, fine), find(method, coarse)) else {
                    continue;
                };
                let last_err = |c: &Curve| c.points.last().map_or(f64::NAN, |p| p.mean_error);
                let earlier = match (c.plateau_onset_calls, f.plateau_onset_calls) {
                    (Some(co), Some(fo)) => co < fo,
                    (Some(_), None) => true,
                    _ => false,
                };
                plateau_order.push(PlateauOrder {
                    method: method.to_string(),
                    coarse_eps_a: coarse,
                    fine_eps_a: fine,
                    coarse_onset_calls: c.plateau_onset_calls,
                    fine_onset_calls: f.plateau_onset_calls,
                    coarse_final_error: last_err(c),
                    fine_final_error: last_err(f),
                    coarse_plateaus_first: earlier && last_err(c) > last_err(f),
                });
            }
        }
    }
    let baselines = aggregates
        .iter()
        .filter(|a| a.method == "semiclassical")
        .map(|a| BaselineRow {
            eps_p: a.param,
            mean_error: a.mean_error,
            std_error: a.std_error,
            p68_error: a.p68_error,
        })
        .collect();
    Ok(SweepSummary {
        curves,
        matched_ratio,
        plateau_order,
        baselines,
    })
}

/// Pooled error and cost of one `(N, d, eps_A)` cell, averaged over means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fig7Cell {
    pub n_scenarios: usize,
    pub d: usize,
    pub eps_a: f64,
    pub eps_q: f64,
    pub eps_c: f64,
    pub feasible: bool,
    /// Mean bisection rounds.
    pub k_rounds: f64,
    /// Mean AE calls over the calls of one full-precision round.
    pub k_effective: f64,
    /// Round count used in the cost model.
    pub k: f64,
    /// End-to-end T-depth at the reference loading depth.
    pub total_t_depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig7Choice {
    pub n_scenarios: usize,
    pub eps_c: f64,
    pub target: f64,
    /// Whether any cell met the target; otherwise `cell` has the lowest
    /// `eps_Q`.
    pub feasible: bool,
    pub cell: Fig7Cell,
    pub feasible_cells: Vec<(usize, f64)>,
    pub rate_at_reference_hz: f64,
    pub rate_at_min_t_s_hz: f64,
    /// `None` when the rate exceeds the reference even without loading cost.
    pub crossing_t_s: Option<f64>,
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig7Summary {
    pub round_count: RoundCount,
    pub alpha_k: f64,
    pub reference_t_s: f64,
    pub reference_rate_hz: f64,
    pub cells: Vec<Fig7Cell>,
    pub choices: Vec<Fig7Choice>,
    pub curves: Vec<SweepPoint>,
}

impl Fig7Summary {
    pub fn choice(&self, n: usize) -> Option<&Fig7Choice> {
        self.choices.iter().find(|c| c.n_scenarios == n)
    }
}

fn mean_over<F: Fn(&Aggregate) -> f64>(aggs: &[&Aggregate], f: F) -> f64 {
    aggs.iter().map(|a| f(a)).sum::<f64>() / aggs.len() as f64
}

fn fig7_summary(config: &ExperimentConfig, aggregates: &[Aggregate]) -> Result<Fig7Summary, RunError> {
    let f = config.fig7.as_ref().ok_or_else(|| config_err("fig7 section missing"))?;
    let q = config.qsp.as_ref().ok_or_else(|| config_err("fig7 needs a qsp sweep"))?;
    let alpha_k = config.schedule.alpha_per_round();
    let reference = CostParams {
        t_s: f.reference_t_s,
        ..config.resources
    };
    let pick = |method: &str, n: usize, param: Option<f64>, eps_a: f64| -> Result<Vec<&Aggregate>, RunError> {
        let found: Vec<&Aggregate> = aggregates
            .iter()
            .filter(|a| {
                a.method == method && a.n_scenarios == n && a.eps_a == eps_a && param.is_none_or(|p| a.param == p)
            })
            .collect();
        if found.is_empty() {
            return Err(RunError::Heterogeneous(format!("no {method} results for N = {n}")));
        }
        Ok(found)
    };
    let mut cells = Vec::new();
    let mut choices = Vec::new();
    let mut curves = Vec::new();
    for &n in &f.n_scenarios {
        let eps_c = mean_over(&pick("classical", n, None, 0.0)?, |a| a.std_error);
        let target = f.target_scale * eps_c;
        let mut row = Vec::new();
        for &d in &q.degrees {
            for &eps_a in &config.eps_a {
                let aggs = pick("qsp", n, Some(d as f64), eps_a)?;
                let eps_q = mean_over(&aggs, |a| a.p68_error);
                let k_rounds = mean_over(&aggs, |a| a.mean_rounds);
                let per_round = ResourcePlan::new(&reference, d, eps_a, 1.0, alpha_k, n)?.ae_calls_per_round;
                let k_effective = mean_over(&aggs, |a| a.mean_ae_calls) / per_round;
                let k = match f.round_count {
                    RoundCount::Effective => k_effective,
                    RoundCount::Bisection => k_rounds,
                };
                let plan = ResourcePlan::new(&reference, d, eps_a, k, alpha_k, n)?;
                row.push(Fig7Cell {
                    n_scenarios: n,
                    d,
                    eps_a,
                    eps_q,
                    eps_c,
                    feasible: eps_q <= target,
                    k_rounds,
                    k_effective,
                    k,
                    total_t_depth: plan.total_t_depth,
                });
            }
        }
        let match_cells: Vec<MatchCell> = row
            .iter()
            .map(|c| MatchCell {
                d: c.d,
                eps_a: c.eps_a,
                eps_q: c.eps_q,
                k: c.k,
                alpha_k,
            })
            .collect();
        let (feasible, chosen) = match search_matching_params(&reference, &match_cells, target) {
            Ok(m) => (true, m.cell),
            Err(qrisk_core::Error::NoFeasibleParameters { .. }) => {
                let best = match_cells
                    .iter()
                    .copied()
                    .min_by(|a, b| a.eps_q.total_cmp(&b.eps_q))
                    .expect("nonempty grid");
                (false, best)
            }
            Err(e) => return Err(e.into()),
        };
        let cell = *row
            .iter()
            .find(|c| c.d == chosen.d && c.eps_a == chosen.eps_a)
            .expect("chosen from row");
        let sweep = clock_rate_sweep(&config.resources, cell.d, cell.eps_a, cell.k, alpha_k, n, &f.t_s)?;
        let monotone = sweep.windows(2).all(|w| w[1].t_s < w[0].t_s || w[1].clock_rate_hz >= w[0].clock_rate_hz);
        let rate_at_min_t_s_hz = sweep
            .iter()
            .min_by(|a, b| a.t_s.total_cmp(&b.t_s))
            .map_or(f64::NAN, |p| p.clock_rate_hz);
        choices.push(Fig7Choice {
            n_scenarios: n,
            eps_c,
            target,
            feasible,
            cell,
            feasible_cells: row.iter().filter(|c| c.feasible).map(|c| (c.d, c.eps_a)).collect(),
            rate_at_reference_hz: ResourcePlan::new(&reference, cell.d, cell.eps_a, cell.k, alpha_k, n)?.clock_rate_hz,
            rate_at_min_t_s_hz,
            crossing_t_s: crossing_t_s(
                &config.resources,
                cell.d,
                cell.eps_a,
                cell.k,
                alpha_k,
                n,
                config.resources.advantage_reference_rate_hz,
            )?,
            monotone,
        });
        curves.extend(sweep);
        cells.extend(row);
    }
    Ok(Fig7Summary {
        round_count: f.round_count,
        alpha_k,
        reference_t_s: f.reference_t_s,
        reference_rate_hz: config.resources.advantage_reference_rate_hz,
        cells,
        choices,
        curves,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarRow {
    pub mode: CvarMode,
    pub d: usize,
    pub eps_a: f64,
    pub count: usize,
    pub mean_relative_error: f64,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvarSummary {
    pub rows: Vec<CvarRow>,
}

fn cvar_summary(config: &ExperimentConfig, aggregates: &[Aggregate]) -> CvarSummary {
    let modes = config.cvar.as_ref().map(|c| c.modes.clone()).unwrap_or_default();
    let rows = aggregates
        .iter()
        .filter_map(|a| {
            let mode = *modes.iter().find(|&&m| cvar_method(m) == a.method)?;
            Some(CvarRow {
                mode,
                d: a.param as usize,
                eps_a: a.eps_a,
                count: a.count,
                mean_relative_error: a.mean_relative_error,
                max_relative_error: a.max_relative_error,
            })
        })
        .collect();
    CvarSummary { rows }
}
