//! Canonical amplitude-estimation outcome law and the theta-space comparator.
//!
//! A price `V` is loaded as the amplitude `sin(pi x)` with
//! `x = asin(sqrt(V)) / pi`. An `m`-qubit phase register then reads `j/M`
//! (`M = 2^m`) with probability `q_j(x)`, the Fejer kernel centred at `x`.
//! The mirrored branch at `1 - x` is folded in, so the outcome is an index
//! `f` in `0..=M/2` standing for the angle `f/M` in `[0, 1/2]`.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::scenario_gen::ScenarioSet;

/// Below this, `sin(pi delta)` is treated as zero and `q_j = 1`.
const SINGULAR_TOL: f64 = 1e-15;
/// Slack in the `f/M <= x_mu` comparison.
const COMPARATOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QaeGrid {
    m: u32,
}

impl QaeGrid {
    pub fn new(m: u32) -> Result<Self> {
        if !(1..=30).contains(&m) {
            return Err(invalid(format!("qubit count {m} must lie in 1..=30")));
        }
        Ok(Self { m })
    }

    pub fn qubits(&self) -> u32 {
        self.m
    }

    /// `M = 2^m`.
    pub fn size(&self) -> usize {
        1usize << self.m
    }

    /// Number of folded outcomes, `M/2 + 1`.
    pub fn folded_len(&self) -> usize {
        self.size() / 2 + 1
    }

    /// Largest folded index whose angle does not exceed that of `mu`.
    pub fn comparator_index(&self, mu: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::Domain(format!("threshold {mu} outside [0, 1]")));
        }
        let x = angle(mu);
        let f = ((x + COMPARATOR_TOL) * self.size() as f64).floor() as usize;
        Ok(f.min(self.size() / 2))
    }
}

/// `asin(sqrt(v)) / pi`, in [0, 1/2].
pub fn angle(v: f64) -> f64 {
    v.sqrt().asin() / PI
}

/// `q_j(x) = sin^2(M pi d) / (M^2 sin^2(pi d))`, `d = j/M - x`.
pub fn fejer(j: usize, x: f64, big_m: usize) -> f64 {
    let d = j as f64 / big_m as f64 - x;
    let s = (PI * d).sin();
    if s.abs() < SINGULAR_TOL {
        return 1.0;
    }
    let num = (big_m as f64 * PI * d).sin();
    let mf = big_m as f64;
    (num * num) / (mf * mf * s * s)
}

fn check_value(value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Domain(format!("value {value} outside [0, 1]")));
    }
    Ok(())
}

fn accumulate_folded(value: f64, grid: QaeGrid, weight: f64, out: &mut [f64]) {
    let big_m = grid.size();
    let half = big_m / 2;
    let x = angle(value);
    out[0] += weight * fejer(0, x, big_m);
    for f in 1..half {
        out[f] += weight * (fejer(f, x, big_m) + fejer(big_m - f, x, big_m));
    }
    out[half] += weight * fejer(half, x, big_m);
}

/// Folded outcome distribution over indices `0..=M/2`.
pub fn qae_pmf(value: f64, m: u32) -> Result<Vec<f64>> {
    check_value(value)?;
    let grid = QaeGrid::new(m)?;
    let mut out = vec![0.0; grid.folded_len()];
    accumulate_folded(value, grid, 1.0, &mut out);
    Ok(out)
}

/// Probability that the comparator flags `theta <= asin(sqrt(mu))`.
pub fn prob_below_qae(set: &ScenarioSet, m: u32, mu: f64) -> Result<f64> {
    Ok(QaeAggregate::new(set, m)?.prob_below(mu)?)
}

/// Probability-weighted folded pmf of a whole scenario set, so repeated
/// comparator queries cost one prefix-sum lookup.
#[derive(Debug, Clone)]
pub struct QaeAggregate {
    grid: QaeGrid,
    cumulative: Vec<f64>,
}

impl QaeAggregate {
    pub fn new(set: &ScenarioSet, m: u32) -> Result<Self> {
        let grid = QaeGrid::new(m)?;
        let mut pmf = vec![0.0; grid.folded_len()];
        for (v, p) in set.iter() {
            check_value(v)?;
            if p > 0.0 {
                accumulate_folded(v, grid, p, &mut pmf);
            }
        }
        let mut acc = 0.0;
        let cumulative = pmf
            .iter()
            .map(|q| {
                acc += q;
                acc
            })
            .collect();
        Ok(Self { grid, cumulative })
    }

    pub fn grid(&self) -> QaeGrid {
        self.grid
    }

    pub fn prob_below(&self, mu: f64) -> Result<f64> {
        let f = self.grid.comparator_index(mu)?;
        Ok(self.cumulative[f].min(1.0))
    }
}

/// `2^m + 1` pricing-oracle calls per encoding circuit.
pub fn qae_encoding_oracle_calls(m: u32) -> Result<u64> {
    if !(1..=62).contains(&m) {
        return Err(invalid(format!("qubit count {m} must lie in 1..=62")));
    }
    Ok((1u64 << m) + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn representable_value_is_point_mass() {
        let pmf = qae_pmf(0.5, 2).unwrap();
        assert_eq!(pmf.len(), 3);
        assert!((pmf[1] - 1.0).abs() < 1e-15);
        assert!(pmf[0].abs() < 1e-15 && pmf[2].abs() < 1e-15);
        assert!((qae_pmf(0.0, 5).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!((qae_pmf(1.0, 5).unwrap()[16] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pmf_matches_extended_precision_reference() {
        // Folded pmf for value 0.3, m = 4, evaluated with 50-digit arithmetic.
        let want = [
            0.00029286773555200075,
            0.0008073081054579202,
            0.0026723194889332422,
            0.9926015189804203,
            0.0021965080166400056,
            0.0006615115585025525,
            0.00036783001506676596,
            0.0002746213556192548,
            0.00012551474380800032,
        ];
        let got = qae_pmf(0.3, 4).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
    }

    #[test]
    fn normalization_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let v: f64 = rng.random();
            let m = rng.random_range(1..=12);
            let s: f64 = qae_pmf(v, m).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "v={v} m={m} sum={s}");
        }
    }

    #[test]
    fn domain_checks() {
        assert!(matches!(qae_pmf(1.1, 3), Err(Error::Domain(_))));
        assert!(matches!(qae_pmf(-0.1, 3), Err(Error::Domain(_))));
        assert!(qae_pmf(0.5, 0).is_err());
    }

    #[test]
    fn comparator_limits() {
        let set = ScenarioSet::uniform(vec![0.2, 0.4, 0.9]).unwrap();
        assert!((prob_below_qae(&set, 6, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let exact = ScenarioSet::uniform(vec![0.5]).unwrap();
        assert!((prob_below_qae(&exact, 2, 0.6).unwrap() - 1.0).abs() < 1e-12);
        // The tie at the grid point counts as below.
        assert!((prob_below_qae(&exact, 2, 0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn leakage_at_zero_shrinks_with_m() {
        let set = ScenarioSet::uniform(vec![0.3, 0.5]).unwrap();
        let a = prob_below_qae(&set, 4, 0.0).unwrap();
        let b = prob_below_qae(&set, 10, 0.0).unwrap();
        assert!(b < a && b < 1e-5);
    }

    #[test]
    fn converges_to_empirical_cdf() {
        let set = crate::scenario_gen::sample_normal_scenarios(500, 0.5, 0.09, 8).unwrap();
        let mu = 0.41;
        let exact: f64 = set.iter().filter(|(v, _)| *v <= mu).map(|(_, p)| p).sum();
        let errs: Vec<f64> = [8, 10, 12, 14]
            .iter()
            .map(|&m| (prob_below_qae(&set, m, mu).unwrap() - exact).abs())
            .collect();
        assert!(errs[3] < errs[0], "{errs:?}");
        assert!(errs[3] < 1e-2);
    }

    #[test]
    fn oracle_calls() {
        assert_eq!(qae_encoding_oracle_calls(1).unwrap(), 3);
        assert_eq!(qae_encoding_oracle_calls(4).unwrap(), 17);
        assert_eq!(qae_encoding_oracle_calls(14).unwrap(), 16385);
        assert!(qae_encoding_oracle_calls(0).is_err());
    }

    proptest! {
        #[test]
        fn prob_below_monotone_in_mu(
            values in prop::collection::vec(0.0f64..=1.0, 1..20),
            m in 1u32..9,
            a in 0.0f64..=1.0,
            b in 0.0f64..=1.0,
        ) {
            let set = ScenarioSet::uniform(values).unwrap();
            let agg = QaeAggregate::new(&set, m).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(agg.prob_below(lo).unwrap() <= agg.prob_below(hi).unwrap());
        }
    }
}
