//! Amplitude estimation as an interval oracle, with worst-case call counts,
//! a halving precision schedule and a failure-probability ledger.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{invalid, Error, Result};

/// Slack allowed when comparing consumed failure probability to the budget.
pub const BUDGET_SLACK: f64 = 1e-12;

/// Double-double value of `(1.4/eps) ln((2/alpha) log2(pi/(4 eps)))`.
pub(crate) fn iqae_bound_dd(eps_a: f64, alpha_k: f64) -> Result<TwoFloat> {
    if !(eps_a > 0.0 && eps_a < std::f64::consts::FRAC_PI_4) {
        return Err(invalid(format!("eps_A = {eps_a} must lie in (0, pi/4)")));
    }
    if !(alpha_k > 0.0 && alpha_k < 1.0) {
        return Err(invalid(format!("alpha_k = {alpha_k} must lie in (0, 1)")));
    }
    let eps = TwoFloat::from(eps_a);
    let ratio = twofloat::consts::PI / (eps * 4.0);
    if ratio <= 1.0 {
        return Err(invalid("log2(pi/(4 eps_A)) must be positive"));
    }
    let inner = (TwoFloat::from(2.0) / TwoFloat::from(alpha_k)) * ratio.log2();
    if inner <= 1.0 {
        return Err(invalid(format!(
            "(2/alpha) log2(pi/(4 eps)) = {} must exceed 1",
            f64::from(inner)
        )));
    }
    Ok(TwoFloat::from(1.4) / eps * ln_dd(inner))
}

// `TwoFloat::ln` goes through an inexact `exp` and loses about 1e-14; `log2` does not.
fn ln_dd(x: TwoFloat) -> TwoFloat {
    x.log2() * twofloat::consts::LN_2
}

/// `ceil((1.4/eps_A) ln((2/alpha_k) log2(pi/(4 eps_A))))`.
pub fn iqae_bound(eps_a: f64, alpha_k: f64) -> Result<u64> {
    let v = iqae_bound_dd(eps_a, alpha_k)?;
    // The low word only matters when the high word is already integral.
    let ceil = if v.hi().fract() == 0.0 && v.lo() > 0.0 {
        v.hi() + 1.0
    } else {
        v.hi().ceil()
    };
    Ok(ceil as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AEInterval {
    pub p_low: f64,
    pub p_high: f64,
    pub eps_k: f64,
    pub alpha_k: f64,
    /// Worst-case oracle calls from the IQAE bound.
    pub oracle_calls: u64,
    /// Largest Grover power, `ceil(pi / (4 eps_k))`.
    pub circuit_depth_factor: u64,
}

impl AEInterval {
    pub fn contains(&self, p: f64) -> bool {
        self.p_low <= p && p <= self.p_high
    }
}

/// How interval centres are placed.
#[derive(Debug, Clone)]
pub enum AeMode {
    /// Centre at the true probability.
    Deterministic,
    /// Centre perturbed by `N(0, (eps/2)^2)` truncated to `+-eps`.
    Stochastic(ChaCha8Rng),
}

impl AeMode {
    pub fn stochastic(seed: u64) -> Self {
        use rand::SeedableRng;
        Self::Stochastic(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::Deterministic)
    }
}

fn interval_at(center: f64, eps_k: f64, alpha_k: f64) -> Result<AEInterval> {
    let oracle_calls = iqae_bound(eps_k, alpha_k)?;
    Ok(AEInterval {
        p_low: (center - eps_k).clamp(0.0, 1.0),
        p_high: (center + eps_k).clamp(0.0, 1.0),
        eps_k,
        alpha_k,
        oracle_calls,
        circuit_depth_factor: (std::f64::consts::PI / (4.0 * eps_k)).ceil() as u64,
    })
}

/// Deterministic interval `[p - eps_k, p + eps_k]` clamped to [0, 1].
pub fn ae_interval(true_p: f64, eps_k: f64, alpha_k: f64) -> Result<AEInterval> {
    ae_interval_with(true_p, eps_k, alpha_k, &mut AeMode::Deterministic)
}

pub fn ae_interval_with(true_p: f64, eps_k: f64, alpha_k: f64, mode: &mut AeMode) -> Result<AEInterval> {
    if !(0.0..=1.0).contains(&true_p) {
        return Err(invalid(format!("probability {true_p} outside [0, 1]")));
    }
    let center = match mode {
        AeMode::Deterministic => true_p,
        AeMode::Stochastic(rng) => {
            let noise = Normal::new(0.0, eps_k / 2.0)
                .map_err(|e| invalid(e.to_string()))?
                .sample(rng);
            true_p + noise.clamp(-eps_k, eps_k)
        }
    };
    interval_at(center, eps_k, alpha_k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaAllocation {
    /// Equal share for every possible round.
    #[default]
    Uniform,
    /// Per-level shares doubling as `eps_k` halves.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionSchedule {
    pub eps_start: f64,
    pub eps_final: f64,
    pub shrink: f64,
    pub alpha_allocation: AlphaAllocation,
    pub total_failure_budget: f64,
    /// Bisection rounds the budget is spread over.
    pub k_max: usize,
}

impl PrecisionSchedule {
    /// Defaults: `eps_start = 0.1`, `shrink = 0.5`, uniform allocation.
    pub fn new(eps_final: f64, total_failure_budget: f64, k_max: usize) -> Result<Self> {
        let s = Self {
            eps_start: 0.1f64.max(eps_final),
            eps_final,
            shrink: 0.5,
            alpha_allocation: AlphaAllocation::Uniform,
            total_failure_budget,
            k_max,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_final > 0.0 && self.eps_final <= self.eps_start) {
            return Err(invalid("need 0 < eps_final <= eps_start"));
        }
        if self.eps_start >= std::f64::consts::FRAC_PI_4 {
            return Err(invalid("eps_start must be below pi/4"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(invalid("shrink factor must lie in (0, 1)"));
        }
        if !(self.total_failure_budget > 0.0 && self.total_failure_budget < 1.0) {
            return Err(invalid("failure budget must lie in (0, 1)"));
        }
        if self.k_max == 0 {
            return Err(invalid("k_max must be positive"));
        }
        Ok(())
    }

    /// Precision levels `eps_start shrink^s`, with the last one pinned to
    /// `eps_final`.
    pub fn levels(&self) -> Vec<f64> {
        let mut out = vec![];
        let mut e = self.eps_start;
        while e > self.eps_final * (1.0 + 1e-12) {
            out.push(e);
            e *= self.shrink;
        }
        out.push(self.eps_final);
        out
    }

    /// Failure probability assigned to each level within one bisection round.
    pub fn alphas(&self) -> Vec<f64> {
        let levels = self.levels().len();
        let per_round = self.total_failure_budget / self.k_max as f64;
        match self.alpha_allocation {
            AlphaAllocation::Uniform => vec![per_round / levels as f64; levels],
            AlphaAllocation::Geometric => {
                let total: f64 = (0..levels).map(|s| 2f64.powi(s as i32)).sum();
                (0..levels)
                    .map(|s| per_round * 2f64.powi(s as i32) / total)
                    .collect()
            }
        }
    }
}

/// Running total of failure probability spent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureBudget {
    pub total: f64,
    pub consumed: f64,
}

impl FailureBudget {
    pub fn new(total: f64) -> Self {
        Self { total, consumed: 0.0 }
    }

    pub fn remaining(&self) -> f64 {
        self.total - self.consumed
    }

    pub fn consume(&mut self, alpha: f64) -> Result<()> {
        if self.consumed + alpha > self.total + BUDGET_SLACK {
            return Err(Error::BudgetExhausted {
                requested: alpha,
                remaining: self.remaining(),
            });
        }
        self.consumed += alpha;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    /// The probability is certified below the target.
    Below,
    /// The probability is certified above the target.
    Above,
    /// The final precision was reached with the target inside the interval.
    Converged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub decision: Decision,
    pub trace: Vec<AEInterval>,
}

impl Refinement {
    pub fn oracle_calls(&self) -> u64 {
        self.trace.iter().map(|i| i.oracle_calls).sum()
    }

    pub fn alpha_consumed(&self) -> f64 {
        self.trace.iter().map(|i| i.alpha_k).sum()
    }
}

/// Tightens the interval around `true_p` until it excludes `target` or the
/// final precision is reached.
pub fn refine_until_decided(
    true_p: f64,
    target: f64,
    schedule: &PrecisionSchedule,
    budget: &mut FailureBudget,
    mode: &mut AeMode,
) -> Result<Refinement> {
    schedule.validate()?;
    let levels = schedule.levels();
    let alphas = schedule.alphas();
    let mut trace = Vec::with_capacity(levels.len());
    for (s, (&eps_k, &alpha_k)) in levels.iter().zip(&alphas).enumerate() {
        budget.consume(alpha_k)?;
        let iv = ae_interval_with(true_p, eps_k, alpha_k, mode)?;
        trace.push(iv);
        if iv.p_high < target {
            return Ok(Refinement {
                decision: Decision::Below,
                trace,
            });
        }
        if iv.p_low > target {
            return Ok(Refinement {
                decision: Decision::Above,
                trace,
            });
        }
        if s + 1 == levels.len() {
            break;
        }
    }
    Ok(Refinement {
        decision: Decision::Converged,
        trace,
    })
}

/// `step,eps_k,alpha_k,p_low,p_high,oracle_calls` with a header row.
pub fn trace_csv(trace: &[AEInterval]) -> String {
    let mut out = String::from("step,eps_k,alpha_k,p_low,p_high,oracle_calls\n");
    for (i, iv) in trace.iter().enumerate() {
        out.push_str(&format!(
            "{i},{},{},{},{},{}\n",
            iv.eps_k, iv.alpha_k, iv.p_low, iv.p_high, iv.oracle_calls
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schedule(eps_final: f64) -> PrecisionSchedule {
        PrecisionSchedule::new(eps_final, 0.05, 30).unwrap()
    }

    #[test]
    fn deterministic_intervals() {
        let iv = ae_interval(0.5, 0.1, 0.01).unwrap();
        assert!((iv.p_low - 0.4).abs() < 1e-15 && (iv.p_high - 0.6).abs() < 1e-15);
        let iv = ae_interval(0.005, 0.01, 0.01).unwrap();
        assert_eq!(iv.p_low, 0.0);
        assert!((iv.p_high - 0.015).abs() < 1e-15);
        assert!(ae_interval(0.5, 0.8, 0.01).is_err());
    }

    #[test]
    fn iqae_bound_reference_values() {
        // 50-digit evaluations of the bound before rounding up.
        assert_eq!(iqae_bound(1.2e-3, 0.05).unwrap(), 6913);
        assert_eq!(iqae_bound(1e-4, 0.05 / 240.0).unwrap(), 164_217);
    }

    #[test]
    fn iqae_bound_shape() {
        assert!(iqae_bound(1e-3, 0.01).unwrap() > iqae_bound(1e-3, 0.02).unwrap());
        let a = iqae_bound(1e-3, 0.01).unwrap();
        let b = iqae_bound(5e-4, 0.01).unwrap();
        assert!(b > 2 * a);
        assert!(iqae_bound(0.785, 0.9).is_err());
        assert!(iqae_bound(std::f64::consts::FRAC_PI_4, 0.1).is_err());
    }

    #[test]
    fn far_target_decided_immediately() {
        let mut b = FailureBudget::new(0.05);
        let r = refine_until_decided(0.5, 0.99, &schedule(1e-4), &mut b, &mut AeMode::Deterministic).unwrap();
        assert_eq!(r.decision, Decision::Below);
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn exact_target_converges() {
        let mut b = FailureBudget::new(0.05);
        let s = schedule(1e-4);
        let r = refine_until_decided(0.99, 0.99, &s, &mut b, &mut AeMode::Deterministic).unwrap();
        assert_eq!(r.decision, Decision::Converged);
        assert_eq!(r.trace.last().unwrap().eps_k, 1e-4);
        assert!(r.trace.iter().all(|iv| iv.contains(0.99)));
    }

    #[test]
    fn decision_step_follows_halving_arithmetic() {
        let eps_final = 1e-4;
        let s = schedule(eps_final);
        let mut b = FailureBudget::new(0.05);
        let r = refine_until_decided(0.99 - 3.0 * eps_final, 0.99, &s, &mut b, &mut AeMode::Deterministic).unwrap();
        assert_eq!(r.decision, Decision::Below);
        let want = (0.1 / (3.0 * eps_final)).log2().ceil() as usize;
        assert_eq!(r.trace.len() - 1, want);
    }

    #[test]
    fn schedule_levels_and_allocations() {
        let s = schedule(1e-3);
        let lv = s.levels();
        assert_eq!(lv.first(), Some(&0.1));
        assert_eq!(lv.last(), Some(&1e-3));
        assert_eq!(lv.len(), 8);
        let geo = PrecisionSchedule {
            alpha_allocation: AlphaAllocation::Geometric,
            ..s
        };
        for sched in [s, geo] {
            let total: f64 = sched.alphas().iter().sum::<f64>() * sched.k_max as f64;
            assert!((total - 0.05).abs() < 1e-15);
        }
        assert!(geo.alphas().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn budget_exhaustion() {
        let s = schedule(1e-3);
        let mut b = FailureBudget::new(0.05 / 30.0 / 8.0 * 2.5);
        let err = refine_until_decided(0.99, 0.99, &s, &mut b, &mut AeMode::Deterministic);
        assert!(matches!(err, Err(Error::BudgetExhausted { .. })));
    }

    #[test]
    fn stochastic_mode_stays_within_eps() {
        let mut mode = AeMode::stochastic(4);
        for _ in 0..200 {
            let iv = ae_interval_with(0.5, 0.01, 0.01, &mut mode).unwrap();
            assert!(iv.contains(0.5));
            assert!(iv.p_high - iv.p_low <= 0.02 + 1e-12);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let iv = ae_interval(0.5, 0.1, 0.01).unwrap();
        let csv = trace_csv(&[iv]);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("step,eps_k,alpha_k,p_low,p_high,oracle_calls"));
        assert!(lines.next().unwrap().starts_with("0,0.1,0.01,0.4,0.6,"));
    }

    proptest! {
        #[test]
        fn deterministic_refinement_never_misdecides(p in 0.0f64..=1.0, target in 0.5f64..0.999) {
            let s = schedule(1e-4);
            let mut b = FailureBudget::new(0.05);
            let r = refine_until_decided(p, target, &s, &mut b, &mut AeMode::Deterministic).unwrap();
            match r.decision {
                Decision::Below => prop_assert!(p < target),
                Decision::Above => prop_assert!(p > target),
                Decision::Converged => prop_assert!((p - target).abs() <= 1e-4 + 1e-15),
            }
            let calls: u64 = r.trace.iter().map(|iv| iqae_bound(iv.eps_k, iv.alpha_k).unwrap()).sum();
            prop_assert_eq!(r.oracle_calls(), calls);
            prop_assert!(b.consumed <= b.total + BUDGET_SLACK);
            for iv in &r.trace {
                prop_assert!(iv.p_low <= iv.p_high && iv.p_high - iv.p_low <= 2.0 * iv.eps_k + 1e-12);
            }
        }
    }
}
