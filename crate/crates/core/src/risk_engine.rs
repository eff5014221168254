//! VaR and CVaR estimators: classical baselines and bisection drivers for the
//! two quantum encodings.
//!
//! Quantum thresholds `mu` live in amplitude space; the matching price level
//! is `mu^2` and the VaR is reported as `V_0 - mu^2`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::ae_sim::{refine_until_decided, AEInterval, AeMode, Decision, FailureBudget, PrecisionSchedule};
use crate::error::{invalid, Error, Result};
use crate::qae_sim::{qae_encoding_oracle_calls, QaeAggregate};
use crate::qsp_sim::{
    cvar_from_probs, ideal_ramp_value, prob_marked_ramp, prob_marked_step, qsp_encoding_oracle_calls,
    ConstantTransform, CvarMode, CvarResult, MeasurementMode, ThresholdTransform,
};
use crate::scenario_gen::{add_pricing_noise, ScenarioSet};
use crate::threshold_fit::{FitCache, FitResult, ThresholdKind, ThresholdSpec};

/// Cumulative-probability slack in the discrete quantile search.
const QUANTILE_TOL: f64 = 1e-12;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(())
}

/// Smallest value `v` with `P[V <= v] >= 1 - alpha`.
pub fn var_classical(set: &ScenarioSet, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if set.is_empty() {
        return Err(invalid("scenario set is empty"));
    }
    let mut atoms: Vec<(f64, f64)> = set.iter().collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let level = 1.0 - alpha - QUANTILE_TOL;
    let mut cum = 0.0;
    for (i, &(v, p)) in atoms.iter().enumerate() {
        cum += p;
        let last_of_value = atoms.get(i + 1).is_none_or(|next| next.0 != v);
        if last_of_value && cum >= level {
            return Ok(v);
        }
    }
    Ok(atoms.last().expect("nonempty").0)
}

/// Classical quantile of prices perturbed by pricing noise.
pub fn var_semiclassical(set: &ScenarioSet, alpha: f64, eps_p: f64, seed: u64) -> Result<f64> {
    var_classical(&add_pricing_noise(set, eps_p, seed)?, alpha)
}

/// Serializable choice of interval-centre model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum AeModeSpec {
    #[default]
    Deterministic,
    Stochastic {
        seed: u64,
    },
}

impl AeModeSpec {
    pub fn build(self) -> AeMode {
        match self {
            Self::Deterministic => AeMode::Deterministic,
            Self::Stochastic { seed } => AeMode::stochastic(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BisectionOptions {
    pub schedule: PrecisionSchedule,
    pub k_max: usize,
    pub ae_mode: AeModeSpec,
    /// Today's portfolio value `V_0`.
    pub v0: f64,
}

impl BisectionOptions {
    /// `k_max = 30`, deterministic intervals, `V_0 = 1`.
    pub fn new(eps_a: f64, confidence: f64) -> Result<Self> {
        let k_max = 30;
        Ok(Self {
            schedule: PrecisionSchedule::new(eps_a, 1.0 - confidence, k_max)?,
            k_max,
            ae_mode: AeModeSpec::Deterministic,
            v0: 1.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionRound {
    pub mu: f64,
    pub probability: f64,
    pub decision: Decision,
    pub intervals: Vec<AEInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarResult {
    /// Amplitude-space threshold.
    pub mu_alpha: f64,
    /// Price-space threshold `mu_alpha^2`.
    pub threshold_value: f64,
    /// `V_0 - mu_alpha^2`.
    pub var_value: f64,
    pub rounds: usize,
    /// Outer amplitude-estimation calls summed over all rounds.
    pub ae_calls: u64,
    /// AE calls times pricing-oracle calls per encoding circuit.
    pub total_oracle_calls: u64,
    pub encoding_calls_per_circuit: u64,
    pub confidence: f64,
    pub converged: bool,
    pub trace: Vec<BisectionRound>,
}

/// Algorithm-1 bisection over `mu` in [0, 1] for any probability model.
pub fn bisect_var<F>(
    mut prob: F,
    alpha: f64,
    encoding_calls: u64,
    opts: &BisectionOptions,
) -> Result<VarResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    check_alpha(alpha)?;
    opts.schedule.validate()?;
    if opts.k_max == 0 {
        return Err(invalid("k_max must be positive"));
    }
    let target = 1.0 - alpha;
    let mut budget = FailureBudget::new(opts.schedule.total_failure_budget);
    let mut mode = opts.ae_mode.build();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut trace = Vec::new();
    let mut ae_calls = 0u64;
    let mut converged_at = None;
    for _ in 0..opts.k_max {
        let mu = lo + (hi - lo) / 2.0;
        let p = prob(mu)?.clamp(0.0, 1.0);
        let r = refine_until_decided(p, target, &opts.schedule, &mut budget, &mut mode)?;
        ae_calls += r.oracle_calls();
        let decision = r.decision;
        trace.push(BisectionRound {
            mu,
            probability: p,
            decision,
            intervals: r.trace,
        });
        match decision {
            Decision::Below => lo = mu,
            Decision::Above => hi = mu,
            Decision::Converged => {
                converged_at = Some(mu);
                break;
            }
        }
    }
    let converged = converged_at.is_some();
    let mu_alpha = converged_at.unwrap_or(lo + (hi - lo) / 2.0);
    let threshold_value = mu_alpha * mu_alpha;
    Ok(VarResult {
        mu_alpha,
        threshold_value,
        var_value: opts.v0 - threshold_value,
        rounds: trace.len(),
        ae_calls,
        total_oracle_calls: ae_calls * encoding_calls,
        encoding_calls_per_circuit: encoding_calls,
        confidence: 1.0 - budget.consumed,
        converged,
        trace,
    })
}

/// Threshold-polynomial parameters for the QSP estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QspParams {
    pub degree: usize,
    pub delta: f64,
    pub eps: f64,
    pub readout: MeasurementMode,
}

impl QspParams {
    pub fn new(degree: usize, delta: f64) -> Self {
        Self {
            degree,
            delta,
            eps: 1e-3,
            readout: MeasurementMode::AmplitudeSquared,
        }
    }
}

/// Fitted polynomial for `mu`, or a constant when the gap leaves (0, 1).
fn threshold_transform(
    kind: ThresholdKind,
    mu: f64,
    params: &QspParams,
    cache: &FitCache,
) -> Result<Box<dyn ThresholdTransform>> {
    let lo = mu - params.delta / 2.0;
    let hi = mu + params.delta / 2.0;
    if lo <= 0.0 {
        return Ok(Box::new(ConstantTransform(0.0)));
    }
    if hi >= 1.0 {
        return match kind {
            ThresholdKind::Step => Ok(Box::new(ConstantTransform(1.0 - params.eps))),
            ThresholdKind::Ramp => Err(invalid("ramp gap extends past 1; reduce delta")),
        };
    }
    let spec = ThresholdSpec::new(kind, mu, params.delta, params.eps, params.degree)?;
    Ok(Box::new(CachedFit(cache.get_or_fit(&spec)?)))
}

/// A fit handed out by [`FitCache`], which certifies every series it holds.
struct CachedFit(Arc<FitResult>);

impl ThresholdTransform for CachedFit {
    fn apply(&self, x: f64) -> Result<f64> {
        self.0.series.eval(x)
    }
}

/// QSP VaR: bisection on the marked probability of the fitted step.
pub fn var_qsp(
    set: &ScenarioSet,
    alpha: f64,
    params: &QspParams,
    opts: &BisectionOptions,
    cache: &FitCache,
) -> Result<VarResult> {
    let calls = qsp_encoding_oracle_calls(params.degree)?;
    bisect_var(|mu| qsp_step_probability(set, mu, params, cache), alpha, calls, opts)
}

/// Marked probability of the fitted step at threshold `mu`.
pub fn qsp_step_probability(set: &ScenarioSet, mu: f64, params: &QspParams, cache: &FitCache) -> Result<f64> {
    let t = threshold_transform(ThresholdKind::Step, mu, params, cache)?;
    prob_marked_step(set, t.as_ref(), params.readout)
}

/// QAE VaR: bisection on the theta-space comparator probability.
pub fn var_qae(set: &ScenarioSet, alpha: f64, m: u32, opts: &BisectionOptions) -> Result<VarResult> {
    let calls = qae_encoding_oracle_calls(m)?;
    let agg = QaeAggregate::new(set, m)?;
    // Amplitude mu compares against price mu^2.
    bisect_var(|mu| agg.prob_below(mu * mu), alpha, calls, opts)
}

/// `P[sqrt(V) <= mu]`.
pub fn exact_cdf_amplitude(set: &ScenarioSet, mu: f64) -> f64 {
    set.iter().filter(|(v, _)| v.sqrt() <= mu).map(|(_, p)| p).sum()
}

/// CVaR from the ramp and step probabilities at the VaR threshold.
pub fn cvar_qsp(
    set: &ScenarioSet,
    var: &VarResult,
    params: &QspParams,
    mode: CvarMode,
    cache: &FitCache,
    v0: f64,
) -> Result<CvarResult> {
    let mu = var.mu_alpha;
    let (p_ramp, p_below) = match mode.measurement() {
        None => (ideal_ramp_value(set, mu), exact_cdf_amplitude(set, mu)),
        Some(readout) => {
            let ramp = threshold_transform(ThresholdKind::Ramp, mu, params, cache)?;
            let step = threshold_transform(ThresholdKind::Step, mu, params, cache)?;
            (
                prob_marked_ramp(set, ramp.as_ref(), readout)?,
                prob_marked_step(set, step.as_ref(), readout)?,
            )
        }
    };
    cvar_from_probs(p_ramp, p_below, mu, v0, mode)
}

/// `E[sqrt(V) | sqrt(V) <= mu]` by direct averaging.
pub fn conditional_amplitude_mean(set: &ScenarioSet, mu: f64) -> Result<f64> {
    let (num, den) = set
        .iter()
        .filter(|(v, _)| v.sqrt() <= mu)
        .fold((0.0, 0.0), |(n, d), (v, p)| (n + p * v.sqrt(), d + p));
    if den <= 0.0 {
        return Err(Error::UndefinedConditional);
    }
    Ok(num / den)
}

/// Normal price model for analytic error propagation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalDist {
    pub mean: f64,
    pub sd: f64,
}

impl NormalDist {
    /// `F^-1(p)`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("probability {p} must lie in (0, 1)")));
        }
        let n = Normal::new(self.mean, self.sd).map_err(|e| invalid(e.to_string()))?;
        Ok(n.inverse_cdf(p))
    }
}

/// First-order VaR error `delta_p / pdf(F^-1(1 - alpha))`.
pub fn propagate_error(delta_p: f64, dist: NormalDist, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let n = Normal::new(dist.mean, dist.sd).map_err(|e| invalid(e.to_string()))?;
    let q = n.inverse_cdf(1.0 - alpha);
    let density = n.pdf(q);
    if !q.is_finite() || !(density > f64::MIN_POSITIVE) {
        return Err(Error::SingularQuantile);
    }
    Ok(delta_p / density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_gen::sample_normal_scenarios;
    use crate::threshold_fit::IdealThreshold;
    use proptest::prelude::*;

    fn brute_var(values: &[f64], probs: &[f64], alpha: f64) -> f64 {
        let mut best = f64::INFINITY;
        for &v in values {
            let mass: f64 = values.iter().zip(probs).filter(|(w, _)| **w <= v).map(|(_, p)| p).sum();
            if mass >= 1.0 - alpha - 1e-12 && v < best {
                best = v;
            }
        }
        best
    }

    #[test]
    fn classical_examples() {
        let set = ScenarioSet::uniform((1..=10).map(|i| i as f64 / 10.0).collect()).unwrap();
        assert_eq!(var_classical(&set, 0.99).unwrap(), 0.1);
        let point = ScenarioSet::uniform(vec![0.37]).unwrap();
        for a in [0.01, 0.5, 0.99] {
            assert_eq!(var_classical(&point, a).unwrap(), 0.37);
        }
        assert!(var_classical(&set, 0.0).is_err());
    }

    #[test]
    fn classical_normal_quantile() {
        let set = sample_normal_scenarios(5000, 0.5, 0.09, 17).unwrap();
        let v = var_classical(&set, 0.99).unwrap();
        let q = 0.5 + 0.09 * Normal::new(0.0, 1.0).unwrap().inverse_cdf(0.01);
        let density = Normal::new(0.5, 0.09).unwrap().pdf(q);
        let se = (0.01f64 * 0.99 / 5000.0).sqrt() / density;
        assert!((v - q).abs() < 4.0 * se, "{v} vs {q} (se {se})");
    }

    #[test]
    fn semiclassical_zero_noise_is_classical() {
        let set = sample_normal_scenarios(1000, 0.5, 0.09, 3).unwrap();
        assert_eq!(var_semiclassical(&set, 0.99, 0.0, 1).unwrap(), var_classical(&set, 0.99).unwrap());
    }

    #[test]
    fn atom_exhausts_k_max() {
        let set = ScenarioSet::uniform(vec![0.25]).unwrap();
        let mut opts = BisectionOptions::new(1e-3, 0.95).unwrap();
        opts.k_max = 20;
        opts.schedule.k_max = 20;
        let ideal = IdealThreshold { kind: ThresholdKind::Step, mu: 0.0 };
        let r = bisect_var(
            |mu| prob_marked_step(&set, &IdealThreshold { mu, ..ideal }, MeasurementMode::AmplitudeSquared),
            0.01,
            1,
            &opts,
        )
        .unwrap();
        assert!(!r.converged);
        assert_eq!(r.rounds, 20);
        assert!((r.mu_alpha - 0.5).abs() < 2f64.powi(-19));
        assert!((r.var_value - 0.75).abs() < 1e-5);
    }

    #[test]
    fn exact_cdf_crossing_located() {
        let set = sample_normal_scenarios(301, 0.5, 0.09, 5).unwrap();
        let mut opts = BisectionOptions::new(1e-4, 0.95).unwrap();
        opts.k_max = 25;
        opts.schedule.k_max = 25;
        let r = bisect_var(|mu| Ok(exact_cdf_amplitude(&set, mu)), 0.05, 1, &opts).unwrap();
        let crossing = var_classical(&set, 0.05).unwrap().sqrt();
        assert!(!r.converged);
        assert!((r.mu_alpha - crossing).abs() <= 2f64.powi(-25), "{} {}", r.mu_alpha, crossing);
    }

    #[test]
    fn qae_with_many_qubits_tracks_exact_cdf() {
        let set = sample_normal_scenarios(401, 0.5, 0.09, 9).unwrap();
        let opts = BisectionOptions::new(1e-4, 0.95).unwrap();
        let r = var_qae(&set, 0.05, 14, &opts).unwrap();
        // The result may sit anywhere on the CDF plateau within eps_A of 0.95.
        let p = exact_cdf_amplitude(&set, r.mu_alpha);
        assert!((p - 0.95).abs() < 1.0 / 401.0, "{p}");
        let crossing = var_classical(&set, 0.05).unwrap();
        assert!((r.threshold_value - crossing).abs() < 2e-2, "{} vs {}", r.threshold_value, crossing);
        assert_eq!(r.encoding_calls_per_circuit, 16385);
        assert_eq!(r.total_oracle_calls, r.ae_calls * 16385);
        assert!(r.confidence >= 0.95 - 1e-12);
    }

    #[test]
    fn qsp_var_close_to_classical() {
        let set = sample_normal_scenarios(500, 0.5, 0.09, 2).unwrap();
        let opts = BisectionOptions::new(1e-3, 0.95).unwrap();
        let cache = FitCache::in_memory();
        let r = var_qsp(&set, 0.05, &QspParams::new(60, 0.05), &opts, &cache).unwrap();
        let classical = var_classical(&set, 0.05).unwrap();
        assert!((r.threshold_value - classical).abs() < 0.05);
        assert_eq!(r.total_oracle_calls, r.ae_calls * 59);
    }

    #[test]
    fn cvar_three_atoms() {
        let set = ScenarioSet::uniform(vec![0.04, 0.16, 0.36]).unwrap();
        let var = VarResult {
            mu_alpha: 0.5,
            threshold_value: 0.25,
            var_value: 0.75,
            rounds: 0,
            ae_calls: 0,
            total_oracle_calls: 0,
            encoding_calls_per_circuit: 1,
            confidence: 1.0,
            converged: true,
            trace: vec![],
        };
        let cache = FitCache::in_memory();
        let r = cvar_qsp(&set, &var, &QspParams::new(20, 0.05), CvarMode::IdealValue, &cache, 1.0).unwrap();
        assert!((r.c_alpha - 0.3).abs() < 1e-15);
        let single = ScenarioSet::uniform(vec![0.09, 0.81]).unwrap();
        let r = cvar_qsp(&single, &var, &QspParams::new(20, 0.05), CvarMode::IdealValue, &cache, 1.0).unwrap();
        assert!((r.cvar_value - 0.7).abs() < 1e-15);
    }

    #[test]
    fn error_propagation() {
        let std = NormalDist { mean: 0.0, sd: 1.0 };
        let m = propagate_error(1.0, std, 0.5).unwrap();
        assert!((m - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        let wide = propagate_error(1.0, NormalDist { mean: 0.0, sd: 3.0 }, 0.2).unwrap();
        assert!((wide - 3.0 * propagate_error(1.0, std, 0.2).unwrap()).abs() < 1e-10);
        // Numerical derivative of the inverse CDF.
        let n = Normal::new(0.5, 0.09).unwrap();
        let h = 1e-6;
        let num = (n.inverse_cdf(0.01 + h) - n.inverse_cdf(0.01 - h)) / (2.0 * h);
        let m = propagate_error(1.0, NormalDist { mean: 0.5, sd: 0.09 }, 0.99).unwrap();
        assert!((m - num).abs() / num < 1e-6);
    }

    #[test]
    fn normal_quantile() {
        let q = NormalDist { mean: 0.5, sd: 0.09 }.quantile(0.01).unwrap();
        // 0.5 + 0.09 * Phi^-1(0.01) with Phi^-1(0.01) = -2.3263478740408408.
        assert!((q - (0.5 - 0.09 * 2.3263478740408408)).abs() < 1e-12, "{q}");
        assert!(NormalDist { mean: 0.0, sd: 1.0 }.quantile(1.0).is_err());
    }

    proptest! {
        #[test]
        fn classical_matches_brute_force(
            atoms in prop::collection::vec((0u8..20, 1u32..100), 1..=12),
            alpha in 0.01f64..0.99,
        ) {
            let values: Vec<f64> = atoms.iter().map(|(v, _)| *v as f64 / 20.0).collect();
            let w: f64 = atoms.iter().map(|(_, p)| *p as f64).sum();
            let probs: Vec<f64> = atoms.iter().map(|(_, p)| *p as f64 / w).collect();
            let set = ScenarioSet::new(values.clone(), probs.clone()).unwrap();
            prop_assert_eq!(var_classical(&set, alpha).unwrap(), brute_var(&values, &probs, alpha));
        }

        #[test]
        fn classical_is_permutation_invariant_and_monotone(
            values in prop::collection::vec(0.0f64..0.8, 1..40),
            shift in 0.0f64..0.2,
            alpha in 0.01f64..0.99,
        ) {
            let set = ScenarioSet::uniform(values.clone()).unwrap();
            let mut rev = values.clone();
            rev.reverse();
            let rset = ScenarioSet::uniform(rev).unwrap();
            prop_assert_eq!(var_classical(&set, alpha).unwrap(), var_classical(&rset, alpha).unwrap());
            let up = ScenarioSet::uniform(values.iter().map(|v| v + shift).collect()).unwrap();
            prop_assert!(var_classical(&up, alpha).unwrap() >= var_classical(&set, alpha).unwrap());
        }

        #[test]
        fn bracket_contains_crossing(seed in 0u64..1000) {
            let set = sample_normal_scenarios(200, 0.5, 0.09, seed).unwrap();
            let mut opts = BisectionOptions::new(1e-4, 0.95).unwrap();
            opts.k_max = 20;
            opts.schedule.k_max = 20;
            let crossing = var_classical(&set, 0.05).unwrap().sqrt();
            let r = bisect_var(|mu| Ok(exact_cdf_amplitude(&set, mu)), 0.05, 1, &opts).unwrap();
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for round in &r.trace {
                match round.decision {
                    Decision::Below => lo = round.mu,
                    Decision::Above => hi = round.mu,
                    Decision::Converged => {}
                }
                prop_assert!(lo <= crossing && crossing <= hi);
            }
        }
    }
}
