//! T-depth and clock-rate model for the QSP VaR estimator.

use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::ae_sim::iqae_bound_dd;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    /// T-depth of the pricing operator.
    pub t_a: f64,
    /// T-depth of scenario loading.
    pub t_s: f64,
    /// Rotation synthesis precision.
    pub eps_r: f64,
    pub classical_seconds_per_scenario: f64,
    /// Clock rate needed for advantage when pricing a single derivative.
    pub advantage_reference_rate_hz: f64,
    /// Depth constant of the scenario-loading model.
    pub qram_depth_const: f64,
    /// Count constant of the scenario-loading model.
    pub qram_count_const: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            t_a: 3900.0,
            t_s: 0.0,
            eps_r: 1e-7,
            classical_seconds_per_scenario: 1.0,
            advantage_reference_rate_hz: 4.5e7,
            qram_depth_const: 1.0,
            qram_count_const: 1.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_a", self.t_a),
            ("eps_r", self.eps_r),
            ("classical_seconds_per_scenario", self.classical_seconds_per_scenario),
            ("advantage_reference_rate_hz", self.advantage_reference_rate_hz),
            ("qram_depth_const", self.qram_depth_const),
            ("qram_count_const", self.qram_count_const),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.t_s >= 0.0) || !self.t_s.is_finite() {
            return Err(invalid(format!("t_s = {} must be nonnegative", self.t_s)));
        }
        if self.eps_r >= 1.0 {
            return Err(invalid("eps_r must be below 1"));
        }
        Ok(())
    }

    pub fn with_t_s(self, t_s: f64) -> Self {
        Self { t_s, ..self }
    }
}

fn rotation_dd(eps_r: f64) -> TwoFloat {
    (TwoFloat::from(1.0) / TwoFloat::from(eps_r)).log2() * 3.0
}

fn iteration_dd(params: &CostParams, d: f64) -> TwoFloat {
    let d = TwoFloat::from(d);
    TwoFloat::from(params.t_s) + d * params.t_a + d * rotation_dd(params.eps_r)
}

/// `3 log2(1/eps_r)`, the T-depth of one synthesized rotation.
pub fn rotation_t_depth(eps_r: f64) -> Result<f64> {
    if !(eps_r > 0.0 && eps_r < 1.0) {
        return Err(invalid(format!("eps_r = {eps_r} must lie in (0, 1)")));
    }
    Ok(rotation_dd(eps_r).into())
}

/// `T_S + d T_A + 3 d log2(1/eps_r)`.
pub fn iteration_t_depth(params: &CostParams, d: usize) -> Result<f64> {
    params.validate()?;
    Ok(iteration_dd(params, d as f64).into())
}

/// `(2.8 k / eps_A) ln((2/alpha_k) log2(pi/(4 eps_A))) (T_S + d T_A + 3 d log2(1/eps_r))`,
/// evaluated in double-double arithmetic and rounded once.
pub fn total_t_depth(params: &CostParams, d: usize, eps_a: f64, k: f64, alpha_k: f64) -> Result<f64> {
    params.validate()?;
    if !(k > 0.0) || !k.is_finite() {
        return Err(invalid(format!("round count {k} must be positive")));
    }
    let bound = iqae_bound_dd(eps_a, alpha_k)?;
    // The constant is 1.4 per circuit times two circuits per call.
    let factor = TwoFloat::from(28.0) / TwoFloat::from(10.0) / TwoFloat::from(1.4);
    let t = bound * factor * TwoFloat::from(k) * iteration_dd(params, d as f64);
    Ok(t.into())
}

/// `total_t_depth / (n_scenarios * seconds per classical pricing)`.
pub fn clock_rate_for_parity(params: &CostParams, total_t_depth: f64, n_scenarios: usize) -> Result<f64> {
    params.validate()?;
    if n_scenarios == 0 {
        return Err(invalid("need at least one scenario"));
    }
    Ok(total_t_depth / (n_scenarios as f64 * params.classical_seconds_per_scenario))
}

/// Order-of-magnitude scenario-loading cost: depth `c1 (log2 n + log2(1/eps))`
/// and count `c2 n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadingCost {
    pub t_depth: f64,
    pub t_count: f64,
    /// Always true: the constants are calibration placeholders.
    pub order_of_magnitude_only: bool,
}

pub fn scenario_loading_cost(params: &CostParams, n: usize, eps: f64) -> Result<LoadingCost> {
    params.validate()?;
    if n == 0 {
        return Err(invalid("need at least one scenario"));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("eps = {eps} must lie in (0, 1)")));
    }
    Ok(LoadingCost {
        t_depth: params.qram_depth_const * ((n as f64).log2() + (1.0 / eps).log2()),
        t_count: params.qram_count_const * n as f64,
        order_of_magnitude_only: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourcePlan {
    pub d: usize,
    pub eps_a: f64,
    /// Bisection rounds entering the end-to-end formula.
    pub k: f64,
    pub alpha_k: f64,
    pub t_s: f64,
    pub rotation_t_depth: f64,
    pub per_iteration_t_depth: f64,
    /// Worst-case AE calls of one full-precision round (unrounded bound).
    pub ae_calls_per_round: f64,
    pub total_t_depth: f64,
    /// Pricing-oracle invocations, two circuits of `d` calls per AE call.
    pub total_oracle_calls: f64,
    pub n_scenarios: usize,
    pub clock_rate_hz: f64,
}

impl ResourcePlan {
    pub fn new(params: &CostParams, d: usize, eps_a: f64, k: f64, alpha_k: f64, n_scenarios: usize) -> Result<Self> {
        if d < 2 {
            return Err(invalid(format!("degree {d} must be at least 2")));
        }
        let bound: f64 = iqae_bound_dd(eps_a, alpha_k)?.into();
        let total = total_t_depth(params, d, eps_a, k, alpha_k)?;
        Ok(Self {
            d,
            eps_a,
            k,
            alpha_k,
            t_s: params.t_s,
            rotation_t_depth: rotation_t_depth(params.eps_r)?,
            per_iteration_t_depth: iteration_t_depth(params, d)?,
            ae_calls_per_round: bound,
            total_t_depth: total,
            total_oracle_calls: 2.0 * k * bound * d as f64,
            n_scenarios,
            clock_rate_hz: clock_rate_for_parity(params, total, n_scenarios)?,
        })
    }
}

/// One `(n_scenarios, t_s)` point of a clock-rate sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_scenarios: usize,
    pub t_s: f64,
    pub d: usize,
    pub eps_a: f64,
    pub k: f64,
    pub clock_rate_hz: f64,
}

/// Clock rate over a list of loading depths for fixed `(d, eps_A, k)`.
pub fn clock_rate_sweep(
    params: &CostParams,
    d: usize,
    eps_a: f64,
    k: f64,
    alpha_k: f64,
    n_scenarios: usize,
    t_s_values: &[f64],
) -> Result<Vec<SweepPoint>> {
    t_s_values
        .iter()
        .map(|&t_s| {
            let plan = ResourcePlan::new(&params.with_t_s(t_s), d, eps_a, k, alpha_k, n_scenarios)?;
            Ok(SweepPoint {
                n_scenarios,
                t_s,
                d,
                eps_a,
                k,
                clock_rate_hz: plan.clock_rate_hz,
            })
        })
        .collect()
}

/// Loading depth at which the clock rate equals `rate_hz`, or `None` when
/// the rate already exceeds it without any loading cost. The rate is affine
/// in `t_s`.
pub fn crossing_t_s(
    params: &CostParams,
    d: usize,
    eps_a: f64,
    k: f64,
    alpha_k: f64,
    n_scenarios: usize,
    rate_hz: f64,
) -> Result<Option<f64>> {
    const PROBE: f64 = 1e6;
    let rate = |t_s: f64| -> Result<f64> {
        Ok(ResourcePlan::new(&params.with_t_s(t_s), d, eps_a, k, alpha_k, n_scenarios)?.clock_rate_hz)
    };
    let at0 = rate(0.0)?;
    if at0 >= rate_hz {
        return Ok(None);
    }
    let slope = (rate(PROBE)? - at0) / PROBE;
    Ok(Some((rate_hz - at0) / slope))
}

/// Simulated error of one `(d, eps_A)` cell together with its measured
/// round count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCell {
    pub d: usize,
    pub eps_a: f64,
    pub eps_q: f64,
    pub k: f64,
    pub alpha_k: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub cell: MatchCell,
    pub total_t_depth: f64,
}

/// Cheapest cell (by end-to-end T-depth under `params`) whose error does not
/// exceed `target_error`.
pub fn search_matching_params(params: &CostParams, cells: &[MatchCell], target_error: f64) -> Result<MatchResult> {
    if cells.is_empty() {
        return Err(invalid("no cells to search"));
    }
    let mut best: Option<MatchResult> = None;
    for &cell in cells {
        if !(cell.eps_q <= target_error) {
            continue;
        }
        let depth = total_t_depth(params, cell.d, cell.eps_a, cell.k, cell.alpha_k)?;
        if best.is_none_or(|b| depth < b.total_t_depth) {
            best = Some(MatchResult {
                cell,
                total_t_depth: depth,
            });
        }
    }
    best.ok_or_else(|| Error::NoFeasibleParameters {
        target: target_error,
        best: cells.iter().map(|c| c.eps_q).fold(f64::INFINITY, f64::min),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> CostParams {
        CostParams::default()
    }

    #[test]
    fn rotation_depth_value() {
        let t = rotation_t_depth(1e-7).unwrap();
        assert!((t - 69.7604).abs() < 1e-3, "{t}");
    }

    #[test]
    fn iteration_depth_examples() {
        let p = params().with_t_s(3e5);
        let t = iteration_t_depth(&p, 600).unwrap();
        assert!((t - 2.681856e6).abs() < 1.0, "{t}");
        let one = p.with_t_s(0.0);
        let single: f64 = one.t_a + rotation_t_depth(one.eps_r).unwrap();
        assert!((iteration_dd(&one, 1.0).hi() - single).abs() < 1e-9);
    }

    #[test]
    fn total_depth_reference_value() {
        // 50-digit evaluation of the end-to-end formula.
        let p = params().with_t_s(3e5);
        let t = total_t_depth(&p, 600, 1.2e-3, 23.0, 0.05 / 23.0).unwrap();
        assert!((t / 1.3040015323740115e12 - 1.0).abs() < 1e-14, "{t}");
    }

    #[test]
    fn total_depth_scaling() {
        let p = params().with_t_s(3e5);
        let a = total_t_depth(&p, 600, 1.2e-3, 10.0, 0.001).unwrap();
        let b = total_t_depth(&p, 600, 1.2e-3, 20.0, 0.001).unwrap();
        assert!((b / a - 2.0).abs() < 1e-15);
        let c = total_t_depth(&p, 600, 0.6e-3, 10.0, 0.001).unwrap();
        assert!(c > 2.0 * a);
    }

    #[test]
    fn clock_rate_unit() {
        assert_eq!(clock_rate_for_parity(&params(), 5e4, 50_000).unwrap(), 1.0);
    }

    #[test]
    fn loading_cost_structure() {
        let p = params();
        let one = scenario_loading_cost(&p, 1, 1e-3).unwrap();
        assert!((one.t_depth - 1e3f64.log2()).abs() < 1e-12);
        let a = scenario_loading_cost(&p, 1000, 1e-3).unwrap();
        let b = scenario_loading_cost(&p, 2000, 1e-3).unwrap();
        assert!((b.t_depth - a.t_depth - 1.0).abs() < 1e-12);
        assert_eq!(b.t_count, 2.0 * a.t_count);
        let big = scenario_loading_cost(&p, 50_000, 1e-3).unwrap();
        assert!((big.t_depth - (15.61 + 9.97)).abs() < 0.01);
    }

    #[test]
    fn crossing_is_consistent() {
        let p = params();
        let ts = crossing_t_s(&p, 600, 1.2e-3, 1.0, 0.05 / 240.0, 50_000, 4.5e7).unwrap().unwrap();
        let plan = ResourcePlan::new(&p.with_t_s(ts), 600, 1.2e-3, 1.0, 0.05 / 240.0, 50_000).unwrap();
        assert!((plan.clock_rate_hz / 4.5e7 - 1.0).abs() < 1e-9);
        assert_eq!(crossing_t_s(&p, 600, 1.2e-3, 1.0, 0.05 / 240.0, 50_000, 1.0).unwrap(), None);
    }

    fn grid() -> Vec<MatchCell> {
        let mut cells = Vec::new();
        for d in [200, 400, 600, 800, 1000] {
            for eps_a in [6e-4, 1.2e-3, 2.5e-3, 5e-3] {
                cells.push(MatchCell {
                    d,
                    eps_a,
                    eps_q: 1.0 / d as f64 + eps_a,
                    k: 8.0,
                    alpha_k: 0.05 / 30.0,
                });
            }
        }
        cells
    }

    #[test]
    fn unconstrained_search_picks_cheapest_cell() {
        let best = search_matching_params(&params(), &grid(), f64::INFINITY).unwrap();
        assert_eq!((best.cell.d, best.cell.eps_a), (200, 5e-3));
    }

    #[test]
    fn search_respects_target() {
        let best = search_matching_params(&params(), &grid(), 1.0 / 600.0 + 1.2e-3).unwrap();
        assert!(best.cell.eps_q <= 1.0 / 600.0 + 1.2e-3);
        assert!(best.cell.d >= 600 && best.cell.eps_a <= 1.2e-3);
        match search_matching_params(&params(), &grid(), 1e-4) {
            Err(Error::NoFeasibleParameters { best, .. }) => assert!((best - (1e-3 + 6e-4)).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn total_depth_monotone(
            d in 2usize..2000,
            eps in 1e-4f64..0.1,
            k in 1.0f64..40.0,
            t_s in 0.0f64..1e8,
            eps_r in 1e-10f64..1e-3,
        ) {
            let p = CostParams { t_s, eps_r, ..CostParams::default() };
            let base = total_t_depth(&p, d, eps, k, 1e-3).unwrap();
            prop_assert!(total_t_depth(&p, d + 2, eps, k, 1e-3).unwrap() > base);
            prop_assert!(total_t_depth(&p, d, eps, k + 1.0, 1e-3).unwrap() > base);
            prop_assert!(total_t_depth(&p.with_t_s(t_s + 1e3), d, eps, k, 1e-3).unwrap() > base);
            prop_assert!(total_t_depth(&p, d, eps * 1.01, k, 1e-3).unwrap() < base);
            let looser = CostParams { eps_r: eps_r * 2.0, ..p };
            prop_assert!(total_t_depth(&looser, d, eps, k, 1e-3).unwrap() < base);
        }
    }
}
