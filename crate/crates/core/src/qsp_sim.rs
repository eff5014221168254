//! Threshold-polynomial encoding applied to price amplitudes.

use serde::{Deserialize, Serialize};

use crate::chebyshev::{clamp_to_domain, ChebSeries};
use crate::error::{invalid, Error, Result};
use crate::scenario_gen::ScenarioSet;
use crate::threshold_fit::IdealThreshold;

/// How the transformed amplitude turns into a marked-state probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementMode {
    /// `P(x)^2`, the physical squared-amplitude readout.
    #[default]
    AmplitudeSquared,
    /// `P(x)` itself.
    FunctionValue,
}

impl MeasurementMode {
    pub fn read(self, value: f64) -> f64 {
        match self {
            Self::AmplitudeSquared => value * value,
            Self::FunctionValue => value,
        }
    }
}

impl std::str::FromStr for MeasurementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amplitude_squared" => Ok(Self::AmplitudeSquared),
            "function_value" => Ok(Self::FunctionValue),
            other => Err(invalid(format!("unknown measurement mode {other:?}"))),
        }
    }
}

/// Something that maps an amplitude in [0, 1] to a transformed amplitude.
pub trait ThresholdTransform {
    fn apply(&self, x: f64) -> Result<f64>;

    /// Fails unless the transform is usable as a signal-processing polynomial.
    fn certify(&self) -> Result<()> {
        Ok(())
    }
}

impl ThresholdTransform for ChebSeries {
    fn apply(&self, x: f64) -> Result<f64> {
        self.eval(x)
    }

    fn certify(&self) -> Result<()> {
        self.check_bounded()
    }
}

impl ThresholdTransform for IdealThreshold {
    fn apply(&self, x: f64) -> Result<f64> {
        Ok(self.value(clamp_to_domain(x)?))
    }
}

/// A constant transform, used when the threshold gap leaves (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantTransform(pub f64);

impl ThresholdTransform for ConstantTransform {
    fn apply(&self, x: f64) -> Result<f64> {
        clamp_to_domain(x)?;
        Ok(self.0)
    }

    fn certify(&self) -> Result<()> {
        if self.0.abs() > 1.0 {
            return Err(invalid("constant transform exceeds one in magnitude"));
        }
        Ok(())
    }
}

impl<T: ThresholdTransform + ?Sized> ThresholdTransform for &T {
    fn apply(&self, x: f64) -> Result<f64> {
        (**self).apply(x)
    }

    fn certify(&self) -> Result<()> {
        (**self).certify()
    }
}

/// `sum_i p_i read(P(sqrt(V_i)))`.
pub fn prob_marked<T: ThresholdTransform + ?Sized>(
    set: &ScenarioSet,
    transform: &T,
    mode: MeasurementMode,
) -> Result<f64> {
    transform.certify()?;
    let mut acc = 0.0;
    for (v, p) in set.iter() {
        acc += p * mode.read(transform.apply(v.sqrt())?);
    }
    Ok(acc)
}

/// Marked probability of the step-threshold circuit.
pub fn prob_marked_step<T: ThresholdTransform + ?Sized>(
    set: &ScenarioSet,
    transform: &T,
    mode: MeasurementMode,
) -> Result<f64> {
    prob_marked(set, transform, mode)
}

/// Marked probability of the inverted-ramp circuit.
pub fn prob_marked_ramp<T: ThresholdTransform + ?Sized>(
    set: &ScenarioSet,
    transform: &T,
    mode: MeasurementMode,
) -> Result<f64> {
    prob_marked(set, transform, mode)
}

/// `sum_i p_i (mu - sqrt(V_i)) 1[sqrt(V_i) <= mu]`, the exact ramp sum.
pub fn ideal_ramp_value(set: &ScenarioSet, mu_alpha: f64) -> f64 {
    set.iter()
        .map(|(v, p)| {
            let a = v.sqrt();
            if a <= mu_alpha {
                p * (mu_alpha - a)
            } else {
                0.0
            }
        })
        .sum()
}

/// `d - 1` calls of the pricing oracle per encoding circuit.
pub fn qsp_encoding_oracle_calls(d: usize) -> Result<u64> {
    if d < 2 {
        return Err(invalid(format!("degree {d} must be at least 2")));
    }
    Ok(d as u64 - 1)
}

/// Which probability model produced a CVaR estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvarMode {
    /// Exact threshold sums; the conditional-mean algebra is exact.
    #[default]
    IdealValue,
    FunctionValue,
    AmplitudeSquared,
}

impl CvarMode {
    pub fn measurement(self) -> Option<MeasurementMode> {
        match self {
            Self::IdealValue => None,
            Self::FunctionValue => Some(MeasurementMode::FunctionValue),
            Self::AmplitudeSquared => Some(MeasurementMode::AmplitudeSquared),
        }
    }
}

impl std::str::FromStr for CvarMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal_value" => Ok(Self::IdealValue),
            "function_value" => Ok(Self::FunctionValue),
            "amplitude_squared" => Ok(Self::AmplitudeSquared),
            other => Err(invalid(format!("unknown CVaR mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvarResult {
    pub mu_alpha: f64,
    /// Conditional ramp mean `p_ramp / p_below`.
    pub c_hat: f64,
    /// Conditional amplitude mean below the threshold.
    pub c_alpha: f64,
    pub cvar_value: f64,
    pub p_marked_ramp: f64,
    pub p_below: f64,
    pub mode: CvarMode,
}

pub fn cvar_from_probs(
    p_marked_ramp: f64,
    p_below: f64,
    mu_alpha: f64,
    v0: f64,
    mode: CvarMode,
) -> Result<CvarResult> {
    if !(p_below > 0.0) {
        return Err(Error::UndefinedConditional);
    }
    let c_hat = p_marked_ramp / p_below;
    let c_alpha = mu_alpha - c_hat;
    Ok(CvarResult {
        mu_alpha,
        c_hat,
        c_alpha,
        cvar_value: v0 - c_alpha,
        p_marked_ramp,
        p_below,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threshold_fit::{fit_ramp, fit_step, ThresholdKind, ThresholdSpec};
    use proptest::prelude::*;

    fn three_atoms() -> ScenarioSet {
        ScenarioSet::uniform(vec![0.04, 0.16, 0.36]).unwrap()
    }

    fn exact_cdf(set: &ScenarioSet, mu: f64) -> f64 {
        set.iter().filter(|(v, _)| v.sqrt() <= mu).map(|(_, p)| p).sum()
    }

    #[test]
    fn ideal_step_gives_exact_cdf() {
        let set = ScenarioSet::uniform(vec![0.01, 0.2, 0.25, 0.5, 0.9]).unwrap();
        let ideal = IdealThreshold {
            kind: ThresholdKind::Step,
            mu: 0.5,
        };
        for mode in [MeasurementMode::AmplitudeSquared, MeasurementMode::FunctionValue] {
            let p = prob_marked_step(&set, &ideal, mode).unwrap();
            assert!((p - exact_cdf(&set, 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn outside_region_bound() {
        let spec = ThresholdSpec::step(0.5, 0.05, 1e-3, 60).unwrap();
        let fit = fit_step(&spec).unwrap();
        let set = ScenarioSet::uniform(vec![0.3, 0.5, 0.8, 1.0]).unwrap();
        let f = prob_marked_step(&set, &fit.series, MeasurementMode::FunctionValue).unwrap();
        let a = prob_marked_step(&set, &fit.series, MeasurementMode::AmplitudeSquared).unwrap();
        assert!(f.abs() <= fit.objective + 1e-12);
        assert!(a <= fit.objective.powi(2) + 1e-12);
    }

    #[test]
    fn unbounded_series_rejected() {
        let bad = ChebSeries::even(vec![0.8, 0.5]).unwrap();
        let set = three_atoms();
        assert!(prob_marked_step(&set, &bad, MeasurementMode::AmplitudeSquared).is_err());
    }

    #[test]
    fn ramp_point_masses() {
        let spec = ThresholdSpec::ramp(0.5, 0.02, 1e-3, 120).unwrap();
        let fit = fit_ramp(&spec).unwrap();
        // An objective node near the origin, as a price.
        let x0 = crate::chebyshev::cheb_grid(spec.grid_size).unwrap()[spec.grid_size / 2];
        let low = ScenarioSet::uniform(vec![x0 * x0]).unwrap();
        let high = ScenarioSet::uniform(vec![0.36]).unwrap();
        let mode = MeasurementMode::FunctionValue;
        let got = prob_marked_ramp(&low, &fit.series, mode).unwrap();
        assert!((got - (0.5 - x0)).abs() <= fit.objective + 1e-9, "{got} {x0}");
        assert!(prob_marked_ramp(&high, &fit.series, mode).unwrap().abs() <= fit.objective + 1e-12);
    }

    #[test]
    fn three_atom_example() {
        let set = three_atoms();
        let ideal = ideal_ramp_value(&set, 0.5);
        assert!((ideal - 0.4 / 3.0).abs() < 1e-15);
        let r = cvar_from_probs(ideal, 2.0 / 3.0, 0.5, 1.0, CvarMode::IdealValue).unwrap();
        assert!((r.c_hat - 0.2).abs() < 1e-15);
        assert!((r.c_alpha - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cvar_degenerate_cases() {
        let r = cvar_from_probs(0.0, 0.3, 0.42, 0.9, CvarMode::IdealValue).unwrap();
        assert_eq!(r.c_alpha, 0.42);
        let atom = ScenarioSet::uniform(vec![0.09]).unwrap();
        let r = cvar_from_probs(ideal_ramp_value(&atom, 0.5), 1.0, 0.5, 0.8, CvarMode::IdealValue).unwrap();
        assert!((r.c_alpha - 0.3).abs() < 1e-15);
        assert!((r.cvar_value - 0.5).abs() < 1e-15);
        assert!(matches!(
            cvar_from_probs(0.1, 0.0, 0.5, 1.0, CvarMode::IdealValue),
            Err(Error::UndefinedConditional)
        ));
    }

    #[test]
    fn oracle_call_counts() {
        assert_eq!(qsp_encoding_oracle_calls(2).unwrap(), 1);
        assert_eq!(qsp_encoding_oracle_calls(600).unwrap(), 599);
        assert_eq!(qsp_encoding_oracle_calls(1000).unwrap(), 999);
        assert!(qsp_encoding_oracle_calls(1).is_err());
    }

    proptest! {
        #[test]
        fn dominated_polynomials_give_smaller_probability(
            values in prop::collection::vec(0.0f64..1.0, 1..40),
            c0 in -0.4f64..0.4,
            c1 in -0.4f64..0.4,
            shift in 0.0f64..0.2,
        ) {
            let set = ScenarioSet::uniform(values).unwrap();
            let lo = ChebSeries::even(vec![c0, c1]).unwrap();
            let hi = ChebSeries::even(vec![c0 + shift, c1]).unwrap();
            let mode = MeasurementMode::FunctionValue;
            prop_assert!(prob_marked_step(&set, &lo, mode).unwrap() <= prob_marked_step(&set, &hi, mode).unwrap() + 1e-15);
        }

        #[test]
        fn ideal_cvar_is_conditional_mean(
            values in prop::collection::vec(0.0f64..1.0, 1..60),
            mu in 0.05f64..1.0,
        ) {
            let set = ScenarioSet::uniform(values).unwrap();
            let below: Vec<f64> = set.values().iter().map(|v| v.sqrt()).filter(|a| *a <= mu).collect();
            prop_assume!(!below.is_empty());
            let p_below = below.len() as f64 / set.len() as f64;
            let r = cvar_from_probs(ideal_ramp_value(&set, mu), p_below, mu, 1.0, CvarMode::IdealValue).unwrap();
            let brute = below.iter().sum::<f64>() / below.len() as f64;
            prop_assert!((r.c_alpha - brute).abs() < 1e-12);
            prop_assert!(r.c_alpha <= mu + 1e-12);
        }
    }
}
