//! Run records: per-repetition measurements, pooled aggregates and the
//! experiment summary.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentName};
use crate::error::RunError;
use crate::stats::{mean, percentile, std_dev};

/// Version of the CSV/JSON artifact layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// One estimator run inside a repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// `qsp`, `qae`, `classical`, `semiclassical` or `cvar_<mode>`.
    pub method: String,
    /// Degree, qubit count or pricing-noise level; zero when unused.
    pub param: f64,
    /// Final AE precision; zero for baselines.
    pub eps_a: f64,
    pub n_scenarios: usize,
    /// Mean of the scenario distribution.
    pub mean: f64,
    pub estimate: f64,
    pub reference: f64,
    pub encoding_calls: u64,
    pub total_oracle_calls: u64,
    pub ae_calls: u64,
    pub rounds: usize,
    pub converged: bool,
}

impl Measurement {
    pub fn signed_error(&self) -> f64 {
        self.estimate - self.reference
    }

    pub fn error(&self) -> f64 {
        self.signed_error().abs()
    }

    /// Absolute error when the reference is zero.
    pub fn relative_error(&self) -> f64 {
        if self.reference == 0.0 {
            self.error()
        } else {
            self.error() / self.reference.abs()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub index: usize,
    pub seed: u64,
    pub measurements: Vec<Measurement>,
}

/// Pooled statistics of one `(method, param, eps_a, n, mean)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: String,
    pub param: f64,
    pub eps_a: f64,
    pub n_scenarios: usize,
    pub mean: f64,
    pub encoding_calls: u64,
    pub count: usize,
    /// Mean absolute error.
    pub mean_error: f64,
    /// Standard deviation of the signed errors.
    pub std_error: f64,
    /// 68th percentile of the absolute errors.
    pub p68_error: f64,
    pub mean_relative_error: f64,
    pub max_relative_error: f64,
    pub mean_rounds: f64,
    pub mean_ae_calls: f64,
    pub mean_total_oracle_calls: f64,
    pub converged_fraction: f64,
}

type CellKey = (String, u64, u64, usize, u64);

fn cell_key(m: &Measurement) -> CellKey {
    (
        m.method.clone(),
        m.param.to_bits(),
        m.eps_a.to_bits(),
        m.n_scenarios,
        m.mean.to_bits(),
    )
}

/// Pools repetitions cell by cell, in first-appearance order.
pub fn aggregate(reps: &[Repetition]) -> Vec<Aggregate> {
    let mut order: Vec<CellKey> = Vec::new();
    let mut cells: BTreeMap<CellKey, Vec<&Measurement>> = BTreeMap::new();
    for m in reps.iter().flat_map(|r| &r.measurements) {
        let key = cell_key(m);
        let entry = cells.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(m);
    }
    order
        .into_iter()
        .map(|key| {
            let ms = &cells[&key];
            let first = ms[0];
            let abs: Vec<f64> = ms.iter().map(|m| m.error()).collect();
            let signed: Vec<f64> = ms.iter().map(|m| m.signed_error()).collect();
            let rel: Vec<f64> = ms.iter().map(|m| m.relative_error()).collect();
            let avg = |f: &dyn Fn(&Measurement) -> f64| mean(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
            Aggregate {
                method: first.method.clone(),
                param: first.param,
                eps_a: first.eps_a,
                n_scenarios: first.n_scenarios,
                mean: first.mean,
                encoding_calls: first.encoding_calls,
                count: ms.len(),
                mean_error: mean(&abs),
                std_error: std_dev(&signed),
                p68_error: percentile(&abs, 68.0),
                mean_relative_error: mean(&rel),
                max_relative_error: rel.iter().copied().fold(0.0, f64::max),
                mean_rounds: avg(&|m| m.rounds as f64),
                mean_ae_calls: avg(&|m| m.ae_calls as f64),
                mean_total_oracle_calls: avg(&|m| m.total_oracle_calls as f64),
                converged_fraction: avg(&|m| f64::from(u8::from(m.converged))),
            }
        })
        .collect()
}

/// Wall-clock data, kept out of the deterministic artifacts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub wall_clock_seconds: f64,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub experiment: ExperimentName,
    pub config_hash: String,
    pub library_version: String,
    pub config: ExperimentConfig,
    pub repetitions: Vec<Repetition>,
    pub aggregates: Vec<Aggregate>,
    pub summary: crate::experiments::Summary,
    /// Written to `timing.json`, never to the record itself.
    #[serde(skip)]
    pub timing: Timing,
}

impl RunRecord {
    pub fn new(
        config: ExperimentConfig,
        repetitions: Vec<Repetition>,
        summary: crate::experiments::Summary,
    ) -> Self {
        let aggregates = aggregate(&repetitions);
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: config.name,
            config_hash: config.hash(),
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            repetitions,
            aggregates,
            summary,
            timing: Timing::default(),
        }
    }
}

/// Pools records of one protocol run in disjoint repetition batches.
pub fn summarize(records: &[RunRecord]) -> Result<RunRecord, RunError> {
    let Some(first) = records.first() else {
        return Err(RunError::Heterogeneous("no records".into()));
    };
    if records.len() == 1 {
        return Ok(first.clone());
    }
    if let Some(other) = records.iter().find(|r| !first.config.same_protocol(&r.config)) {
        return Err(RunError::Heterogeneous(format!(
            "{} differs from {}",
            other.config_hash, first.config_hash
        )));
    }
    if first.experiment == ExperimentName::Fig5 {
        // Deterministic sweep without repetitions.
        return Ok(first.clone());
    }
    let mut reps: Vec<Repetition> = records.iter().flat_map(|r| r.repetitions.clone()).collect();
    reps.sort_by_key(|r| r.index);
    let start = reps[0].index;
    for (i, r) in reps.iter().enumerate() {
        if r.index != start + i {
            return Err(RunError::Heterogeneous(format!(
                "repetition batches overlap or leave a gap at index {}",
                r.index
            )));
        }
    }
    let config = ExperimentConfig {
        repetition_offset: start,
        repetitions: reps.len(),
        output: first.config.output.clone(),
        ..first.config.clone()
    };
    let aggregates = aggregate(&reps);
    let summary = crate::experiments::build_summary(&config, &aggregates)?;
    Ok(RunRecord::new(config, reps, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(method: &str, param: f64, estimate: f64) -> Measurement {
        Measurement {
            method: method.into(),
            param,
            eps_a: 1e-4,
            n_scenarios: 10,
            mean: 0.5,
            estimate,
            reference: 0.3,
            encoding_calls: 5,
            total_oracle_calls: 50,
            ae_calls: 10,
            rounds: 3,
            converged: true,
        }
    }

    #[test]
    fn aggregates_pool_by_cell_in_order() {
        let reps = vec![
            Repetition {
                index: 0,
                seed: 1,
                measurements: vec![meas("qsp", 4.0, 0.31), meas("qae", 3.0, 0.2)],
            },
            Repetition {
                index: 1,
                seed: 2,
                measurements: vec![meas("qsp", 4.0, 0.27), meas("qae", 3.0, 0.4)],
            },
        ];
        let agg = aggregate(&reps);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].method, "qsp");
        assert_eq!(agg[0].count, 2);
        assert!((agg[0].mean_error - 0.02).abs() < 1e-12);
        assert!((agg[1].mean_error - 0.1).abs() < 1e-12);
        assert!((agg[0].std_error - (0.04f64 * 0.04 / 2.0).sqrt()).abs() < 1e-12);
    }
}
