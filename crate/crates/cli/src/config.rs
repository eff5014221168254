//! Experiment configuration: a JSON document with every key checked.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qrisk_core::ae_sim::{AlphaAllocation, PrecisionSchedule};
use qrisk_core::qsp_sim::{CvarMode, MeasurementMode};
use qrisk_core::resource_model::CostParams;
use qrisk_core::risk_engine::{AeModeSpec, BisectionOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, RunError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentName {
    Fig5,
    Fig6,
    Fig7,
    Cvar,
    Custom,
}

impl ExperimentName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fig5 => "fig5",
            Self::Fig6 => "fig6",
            Self::Fig7 => "fig7",
            Self::Cvar => "cvar",
            Self::Custom => "custom",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self, RunError> {
        match s {
            "fig5" => Ok(Self::Fig5),
            "fig6" => Ok(Self::Fig6),
            "fig7" => Ok(Self::Fig7),
            "cvar" => Ok(Self::Cvar),
            "custom" => Ok(Self::Custom),
            other => Err(config_err(format!("unknown experiment {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            n: 5000,
            mean: 0.5,
            sd: 0.09,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    /// `1 - total failure budget`.
    pub confidence: f64,
    pub eps_start: f64,
    pub shrink: f64,
    pub alpha_allocation: AlphaAllocation,
    pub k_max: usize,
    pub ae_mode: AeModeSpec,
    /// Today's portfolio value.
    pub v0: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            eps_start: 0.1,
            shrink: 0.5,
            alpha_allocation: AlphaAllocation::Uniform,
            k_max: 30,
            ae_mode: AeModeSpec::Deterministic,
            v0: 1.0,
        }
    }
}

impl ScheduleParams {
    pub fn options(&self, eps_a: f64) -> Result<BisectionOptions, RunError> {
        let schedule = PrecisionSchedule {
            eps_start: self.eps_start.max(eps_a),
            eps_final: eps_a,
            shrink: self.shrink,
            alpha_allocation: self.alpha_allocation,
            total_failure_budget: 1.0 - self.confidence,
            k_max: self.k_max,
        };
        schedule.validate()?;
        Ok(BisectionOptions {
            schedule,
            k_max: self.k_max,
            ae_mode: self.ae_mode,
            v0: self.v0,
        })
    }

    /// Failure probability of one bisection round.
    pub fn alpha_per_round(&self) -> f64 {
        (1.0 - self.confidence) / self.k_max as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QspSweep {
    pub degrees: Vec<usize>,
    /// Fixed gap width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Gap width `delta_scale / d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_scale: Option<f64>,
    #[serde(default = "default_fit_eps")]
    pub eps: f64,
    #[serde(default)]
    pub readout: MeasurementMode,
}

fn default_fit_eps() -> f64 {
    1e-3
}

impl QspSweep {
    pub fn delta_for(&self, d: usize) -> f64 {
        match (self.delta, self.delta_scale) {
            (Some(delta), _) => delta,
            (None, Some(k)) => k / d as f64,
            (None, None) => unreachable!("validated"),
        }
    }

    fn validate(&self) -> Result<(), RunError> {
        if self.degrees.is_empty() {
            return Err(config_err("qsp.degrees is empty"));
        }
        if let Some(d) = self.degrees.iter().find(|&&d| d < 2 || d % 2 != 0) {
            return Err(config_err(format!("qsp degree {d} must be even and at least 2")));
        }
        match (self.delta, self.delta_scale) {
            (Some(_), Some(_)) => Err(config_err("set only one of qsp.delta and qsp.delta_scale")),
            (None, None) => Err(config_err("qsp needs delta or delta_scale")),
            (Some(v), None) | (None, Some(v)) if !(v > 0.0) => {
                Err(config_err("qsp gap width must be positive"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaeSweep {
    pub qubits: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig5Params {
    pub mu: f64,
    pub delta: f64,
    pub eps: f64,
    pub degrees: Vec<usize>,
    pub density_points: usize,
    pub density_mean: f64,
    pub density_sd: f64,
    pub readout: MeasurementMode,
}

impl Default for Fig5Params {
    fn default() -> Self {
        Self {
            mu: 0.5,
            delta: 1e-3,
            eps: 1e-3,
            degrees: vec![200, 400, 800, 1600],
            density_points: 20001,
            density_mean: 0.5,
            density_sd: 0.09,
            readout: MeasurementMode::FunctionValue,
        }
    }
}

/// How the round count entering the end-to-end T-depth is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundCount {
    /// Simulated AE calls divided by the calls of one full-precision round.
    #[default]
    Effective,
    /// Mean number of bisection rounds.
    Bisection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig7Params {
    pub n_scenarios: Vec<usize>,
    pub means: Vec<f64>,
    pub eps_p: f64,
    pub round_count: RoundCount,
    /// Loading depths for the clock-rate curves.
    pub t_s: Vec<f64>,
    /// Loading depth at which the small-`T_S` rate is reported.
    pub reference_t_s: f64,
    /// Relax the matching target, `eps_Q <= target_scale * eps_C`.
    pub target_scale: f64,
}

impl Default for Fig7Params {
    fn default() -> Self {
        Self {
            n_scenarios: vec![5000, 20000, 50000],
            means: vec![0.45, 0.48, 0.5, 0.52, 0.55],
            eps_p: 2e-3,
            round_count: RoundCount::Effective,
            t_s: (0..=24).map(|i| 10f64.powf(3.0 + 0.25 * i as f64)).collect(),
            reference_t_s: 3e5,
            target_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvarParams {
    pub modes: Vec<CvarMode>,
}

impl Default for CvarParams {
    fn default() -> Self {
        Self {
            modes: vec![CvarMode::IdealValue, CvarMode::FunctionValue, CvarMode::AmplitudeSquared],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    /// Pricing-noise levels for semi-classical runs; classical runs use none.
    #[serde(default)]
    pub eps_p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputParams {
    /// Artifact directory; defaults to `results/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: ExperimentName,
    pub seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    /// Index of the first repetition; batches with disjoint ranges pool.
    #[serde(default)]
    pub repetition_offset: usize,
    #[serde(default)]
    pub scenarios: ScenarioParams,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub eps_a: Vec<f64>,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qsp: Option<QspSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qae: Option<QaeSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig5: Option<Fig5Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fig7: Option<Fig7Params>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvar: Option<CvarParams>,
    #[serde(default)]
    pub resources: CostParams,
    #[serde(default)]
    pub output: OutputParams,
}

fn one() -> usize {
    1
}

fn default_alpha() -> f64 {
    0.99
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        let cfg = cfg.with_defaults();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Fills in the protocol sections a named experiment needs.
    pub fn with_defaults(mut self) -> Self {
        match self.name {
            ExperimentName::Fig5 => {
                self.fig5.get_or_insert_with(Fig5Params::default);
            }
            ExperimentName::Fig7 => {
                self.fig7.get_or_insert_with(Fig7Params::default);
            }
            ExperimentName::Cvar => {
                self.cvar.get_or_insert_with(CvarParams::default);
            }
            ExperimentName::Fig6 | ExperimentName::Custom => {}
        }
        self
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.repetitions == 0 {
            return Err(config_err("repetitions must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config_err("alpha must lie in (0, 1)"));
        }
        let s = &self.scenarios;
        if s.n == 0 || !(s.sd > 0.0) || !s.mean.is_finite() {
            return Err(config_err("scenarios need n >= 1 and sd > 0"));
        }
        if let Some(e) = self.eps_a.iter().find(|&&e| !(e > 0.0 && e < 0.785)) {
            return Err(config_err(format!("eps_a entry {e} must lie in (0, pi/4)")));
        }
        if let Some(q) = &self.qsp {
            q.validate()?;
        }
        if let Some(q) = &self.qae {
            if q.qubits.is_empty() {
                return Err(config_err("qae.qubits is empty"));
            }
            if let Some(m) = q.qubits.iter().find(|&&m| !(1..=30).contains(&m)) {
                return Err(config_err(format!("qae qubit count {m} must lie in 1..=30")));
            }
        }
        for &e in &self.eps_a {
            self.schedule.options(e)?;
        }
        self.resources.validate()?;
        let needs_sweep = |what: &str| -> Result<(), RunError> {
            if self.eps_a.is_empty() {
                return Err(config_err(format!("{what} needs a nonempty eps_a list")));
            }
            Ok(())
        };
        match self.name {
            ExperimentName::Fig5 => {
                let f = self.fig5.as_ref().ok_or_else(|| config_err("fig5 section missing"))?;
                if f.degrees.is_empty() {
                    return Err(config_err("fig5.degrees is empty"));
                }
            }
            ExperimentName::Fig6 => {
                needs_sweep("fig6")?;
                if self.qsp.is_none() || self.qae.is_none() {
                    return Err(config_err("fig6 needs both qsp and qae sweeps"));
                }
            }
            ExperimentName::Custom => {
                if self.qsp.is_none() && self.qae.is_none() && self.baseline.is_none() {
                    return Err(config_err("custom needs at least one of qsp, qae, baseline"));
                }
                if self.qsp.is_some() || self.qae.is_some() {
                    needs_sweep("custom")?;
                }
            }
            ExperimentName::Fig7 => {
                needs_sweep("fig7")?;
                if self.qsp.is_none() {
                    return Err(config_err("fig7 needs a qsp sweep"));
                }
                let f = self.fig7.as_ref().ok_or_else(|| config_err("fig7 section missing"))?;
                if f.n_scenarios.is_empty() || f.means.is_empty() || f.t_s.is_empty() {
                    return Err(config_err("fig7 sweeps must be nonempty"));
                }
                if !(f.target_scale > 0.0) {
                    return Err(config_err("fig7.target_scale must be positive"));
                }
            }
            ExperimentName::Cvar => {
                needs_sweep("cvar")?;
                if self.qsp.is_none() {
                    return Err(config_err("cvar needs a qsp section"));
                }
                let c = self.cvar.as_ref().ok_or_else(|| config_err("cvar section missing"))?;
                if c.modes.is_empty() {
                    return Err(config_err("cvar.modes is empty"));
                }
            }
        }
        Ok(())
    }

    /// Seed of repetition `i` counted from the offset.
    pub fn repetition_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }

    pub fn repetition_indices(&self) -> std::ops::Range<usize> {
        self.repetition_offset..self.repetition_offset + self.repetitions
    }

    /// SHA-256 of the canonical (key-sorted) JSON form, output section
    /// excluded.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output");
        }
        let mut canonical = String::new();
        write_canonical(&value, &mut canonical);
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same protocol up to which repetitions were run.
    pub fn same_protocol(&self, other: &Self) -> bool {
        let strip = |c: &Self| Self {
            repetitions: 1,
            repetition_offset: 0,
            output: OutputParams::default(),
            ..c.clone()
        };
        strip(self) == strip(other)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("results").join(self.name.as_str()))
    }
}

fn write_canonical(v: &serde_json::Value, out: &mut String) {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG6: &str = r#"{
        "name": "fig6", "seed": 7, "repetitions": 3,
        "eps_a": [1e-4, 5e-4],
        "qsp": {"degrees": [100, 200], "delta_scale": 8.0},
        "qae": {"qubits": [7, 8]}
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(FIG6).unwrap();
        assert_eq!(c.scenarios, ScenarioParams::default());
        assert_eq!(c.alpha, 0.99);
        assert_eq!(c.qsp.as_ref().unwrap().delta_for(200), 0.04);
        assert_eq!(c.repetition_seed(2), 9);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = FIG6.replace("\"seed\": 7", "\"seed\": 7, \"sed\": 1");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(RunError::Config(_))));
        let nested = FIG6.replace("\"qubits\": [7, 8]", "\"qubits\": [7, 8], \"m\": 3");
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let bad = FIG6.replace("\"seed\": 7,", "");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn hash_ignores_key_order_and_output() {
        let a = ExperimentConfig::from_json(FIG6).unwrap();
        let reordered = r#"{
            "qae": {"qubits": [7, 8]},
            "qsp": {"delta_scale": 8.0, "degrees": [100, 200]},
            "eps_a": [1e-4, 5e-4], "repetitions": 3, "seed": 7, "name": "fig6",
            "output": {"dir": "/tmp/elsewhere"}
        }"#;
        let b = ExperimentConfig::from_json(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 8;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn sweep_validation() {
        let bad = FIG6.replace("\"delta_scale\": 8.0", "\"delta_scale\": 8.0, \"delta\": 0.1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let odd = FIG6.replace("[100, 200]", "[101]");
        assert!(ExperimentConfig::from_json(&odd).is_err());
        let empty = FIG6.replace("[1e-4, 5e-4]", "[]");
        assert!(ExperimentConfig::from_json(&empty).is_err());
    }

    #[test]
    fn protocol_equality_ignores_batching() {
        let a = ExperimentConfig::from_json(FIG6).unwrap();
        let b = ExperimentConfig {
            repetition_offset: 3,
            repetitions: 10,
            ..a.clone()
        };
        assert!(a.same_protocol(&b));
        assert!(!a.same_protocol(&ExperimentConfig { alpha: 0.95, ..a.clone() }));
    }
}
