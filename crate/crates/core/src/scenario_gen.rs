//! Scenario sets: normal sampling, pricing noise and a toy lognormal pricer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::error::{invalid, Error, Result};

const PROB_TOL: f64 = 1e-9;

/// Scenario prices in [0, 1] with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSet", into = "RawSet")]
pub struct ScenarioSet {
    values: Vec<f64>,
    probs: Vec<f64>,
    encoding: Option<Vec<Vec<f64>>>,
    clamped: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSet {
    values: Vec<f64>,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoding: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    clamped: usize,
}

impl TryFrom<RawSet> for ScenarioSet {
    type Error = Error;

    fn try_from(raw: RawSet) -> Result<Self> {
        let mut set = ScenarioSet::new(raw.values, raw.probs)?;
        set.clamped += raw.clamped;
        match raw.encoding {
            Some(enc) => set.with_encoding(enc),
            None => Ok(set),
        }
    }
}

impl From<ScenarioSet> for RawSet {
    fn from(s: ScenarioSet) -> Self {
        RawSet {
            values: s.values,
            probs: s.probs,
            encoding: s.encoding,
            clamped: s.clamped,
        }
    }
}

impl ScenarioSet {
    /// Values outside [0, 1] are clamped and counted; probabilities must be
    /// nonnegative and sum to one within 1e-9.
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("scenario set is empty"));
        }
        if values.len() != probs.len() {
            return Err(invalid(format!(
                "{} values but {} probabilities",
                values.len(),
                probs.len()
            )));
        }
        if let Some(i) = probs.iter().position(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(invalid(format!("probability {i} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("value {i} is not finite")));
        }
        let mut clamped = 0;
        let values = values
            .into_iter()
            .map(|v| {
                if (0.0..=1.0).contains(&v) {
                    v
                } else {
                    clamped += 1;
                    v.clamp(0.0, 1.0)
                }
            })
            .collect();
        Ok(Self {
            values,
            probs,
            encoding: None,
            clamped,
        })
    }

    /// Equal weights `1/n`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::new(values, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn with_encoding(mut self, encoding: Vec<Vec<f64>>) -> Result<Self> {
        if encoding.len() != self.values.len() {
            return Err(invalid("one tweak vector per scenario is required"));
        }
        self.encoding = Some(encoding);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn encoding(&self) -> Option<&[Vec<f64>]> {
        self.encoding.as_deref()
    }

    /// Number of values that had to be clamped into [0, 1].
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values.iter().copied().zip(self.probs.iter().copied())
    }

    /// `index,value,prob` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,value,prob\n");
        for (i, (v, p)) in self.iter().enumerate() {
            out.push_str(&format!("{i},{v},{p}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("index,value,prob") => {}
            other => return Err(invalid(format!("unexpected CSV header {other:?}"))),
        }
        let mut values = Vec::new();
        let mut probs = Vec::new();
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(invalid(format!("CSV row {row} has {} fields", fields.len())));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| invalid(format!("CSV row {row}: {e}")))
            };
            values.push(parse(fields[1])?);
            probs.push(parse(fields[2])?);
        }
        Self::new(values, probs)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` i.i.d. normal draws clamped to [0, 1] with uniform weights.
pub fn sample_normal_scenarios(n: usize, mean: f64, sd: f64, seed: u64) -> Result<ScenarioSet> {
    if n == 0 {
        return Err(invalid("need at least one scenario"));
    }
    let dist = Normal::new(mean, sd)
        .ok()
        .filter(|_| sd > 0.0 && mean.is_finite())
        .ok_or_else(|| invalid(format!("invalid normal parameters mean={mean}, sd={sd}")))?;
    let mut rng = rng(seed);
    let values = (0..n).map(|_| dist.sample(&mut rng)).collect();
    ScenarioSet::uniform(values)
}

/// Adds independent `N(0, eps_p^2)` noise to every value, clamping to [0, 1].
pub fn add_pricing_noise(set: &ScenarioSet, eps_p: f64, seed: u64) -> Result<ScenarioSet> {
    if !(eps_p >= 0.0) || !eps_p.is_finite() {
        return Err(invalid(format!("eps_p = {eps_p} must be nonnegative")));
    }
    if eps_p == 0.0 {
        return Ok(set.clone());
    }
    let dist = Normal::new(0.0, eps_p).map_err(|e| invalid(e.to_string()))?;
    let mut rng = rng(seed);
    let values = set
        .values
        .iter()
        .map(|v| v + dist.sample(&mut rng))
        .collect();
    let mut noisy = ScenarioSet::new(values, set.probs.clone())?;
    noisy.clamped += set.clamped;
    noisy.encoding = set.encoding.clone();
    Ok(noisy)
}

/// European call on one lognormal asset, priced by expectation over
/// equal-probability terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PricingModel {
    pub spot: f64,
    pub vol: f64,
    pub rate: f64,
    pub maturity: f64,
    pub strike: f64,
    pub path_points: usize,
    pub value_scale: f64,
}

impl PricingModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.value_scale > 0.0) {
            return Err(invalid(format!("value_scale = {} must be positive", self.value_scale)));
        }
        if !(self.spot > 0.0) || !(self.vol >= 0.0) || !(self.maturity > 0.0) || !(self.strike >= 0.0) {
            return Err(invalid("need spot > 0, vol >= 0, maturity > 0, strike >= 0"));
        }
        if !self.rate.is_finite() {
            return Err(invalid("rate must be finite"));
        }
        if self.path_points == 0 {
            return Err(invalid("need at least one path point"));
        }
        Ok(())
    }

    /// Equal-probability nodes `z_j = Phi^-1((j + 1/2) / P)`.
    fn nodes(&self) -> Vec<f64> {
        let std = StdNormal::standard();
        let p = self.path_points as f64;
        (0..self.path_points)
            .map(|j| std.inverse_cdf((j as f64 + 0.5) / p))
            .collect()
    }

    /// Discounted expected payoff under a relative spot tweak, unnormalized.
    pub fn discounted_expectation(&self, tweak: f64) -> Result<f64> {
        self.validate()?;
        if !(1.0 + tweak > 0.0) {
            return Err(invalid(format!("tweak {tweak} makes the spot nonpositive")));
        }
        let s0 = self.spot * (1.0 + tweak);
        let t = self.maturity;
        let drift = (self.rate - 0.5 * self.vol * self.vol) * t;
        let diffusion = self.vol * t.sqrt();
        let discount = (-self.rate * t).exp();
        if diffusion == 0.0 {
            return Ok(discount * (s0 * drift.exp() - self.strike).max(0.0));
        }
        let weight = 1.0 / self.path_points as f64;
        let mean: f64 = self
            .nodes()
            .into_iter()
            .map(|z| (s0 * (drift + diffusion * z).exp() - self.strike).max(0.0))
            .sum::<f64>()
            * weight;
        Ok(discount * mean)
    }
}

/// Normalized price in [0, 1] of one instrument under `tweak`.
pub fn price_expectation(model: &PricingModel, tweak: f64) -> Result<f64> {
    Ok((model.discounted_expectation(tweak)? / model.value_scale).clamp(0.0, 1.0))
}

/// Prices a portfolio under each scenario's tweak vector.
///
/// Only the first tweak factor moves the spot; the full vectors are kept as
/// the scenario encoding. The portfolio value is the sum of the instruments'
/// discounted expectations divided by the sum of their value scales.
pub fn scenarios_from_tweaks(
    portfolio: &[PricingModel],
    tweaks: &[Vec<f64>],
    probs: &[f64],
) -> Result<ScenarioSet> {
    if portfolio.is_empty() {
        return Err(invalid("portfolio is empty"));
    }
    if tweaks.len() != probs.len() {
        return Err(invalid("one probability per tweak vector is required"));
    }
    let scale: f64 = portfolio.iter().map(|m| m.value_scale).sum();
    let mut values = Vec::with_capacity(tweaks.len());
    for t in tweaks {
        let shift = t.first().copied().unwrap_or(0.0);
        let mut total = 0.0;
        for m in portfolio {
            total += m.discounted_expectation(shift)?;
        }
        values.push(total / scale);
    }
    ScenarioSet::new(values, probs.to_vec())?.with_encoding(tweaks.to_vec())
}
