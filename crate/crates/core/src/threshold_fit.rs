//! Minimax polynomial fits to the step and inverted-ramp thresholds.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::chebyshev::{cheb_grid, ChebSeries, GridEvaluator, BOUNDED_TOL};
use crate::error::{invalid, Error, Result};
use crate::lp::{LpOptions, LpPoint, MinimaxLp};
use crate::qsp_sim::{MeasurementMode, ThresholdTransform};

/// Environment variable naming the on-disk polynomial and run cache.
pub const CACHE_DIR_ENV: &str = "QRISK_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Step,
    Ramp,
}

impl std::str::FromStr for ThresholdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(Self::Step),
            "ramp" => Ok(Self::Ramp),
            other => Err(invalid(format!("unknown threshold kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for ThresholdKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Step => "step",
            Self::Ramp => "ramp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub kind: ThresholdKind,
    pub mu: f64,
    pub delta: f64,
    pub eps: f64,
    pub c: f64,
    pub degree: usize,
    pub grid_size: usize,
}

/// `max(4d, 2000)`.
pub fn default_grid_size(degree: usize) -> usize {
    (4 * degree).max(2000)
}

impl ThresholdSpec {
    /// Spec with `c = 1 - eps` and the default grid.
    pub fn new(kind: ThresholdKind, mu: f64, delta: f64, eps: f64, degree: usize) -> Result<Self> {
        let spec = Self {
            kind,
            mu,
            delta,
            eps,
            c: 1.0 - eps,
            degree,
            grid_size: default_grid_size(degree),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn step(mu: f64, delta: f64, eps: f64, degree: usize) -> Result<Self> {
        Self::new(ThresholdKind::Step, mu, delta, eps, degree)
    }

    pub fn ramp(mu: f64, delta: f64, eps: f64, degree: usize) -> Result<Self> {
        Self::new(ThresholdKind::Ramp, mu, delta, eps, degree)
    }

    pub fn with_c(mut self, c: f64) -> Result<Self> {
        self.c = c;
        self.validate()?;
        Ok(self)
    }

    pub fn with_grid_size(mut self, m: usize) -> Result<Self> {
        self.grid_size = m;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let Self {
            mu,
            delta,
            eps,
            c,
            degree,
            grid_size,
            ..
        } = *self;
        if !(mu > 0.0 && mu < 1.0) {
            return Err(invalid(format!("mu = {mu} must lie in (0, 1)")));
        }
        if !(delta > 0.0) {
            return Err(invalid(format!("delta = {delta} must be positive")));
        }
        if !(mu - delta / 2.0 > 0.0 && mu + delta / 2.0 < 1.0) {
            return Err(invalid(format!(
                "gap [{}, {}] must lie strictly inside (0, 1)",
                mu - delta / 2.0,
                mu + delta / 2.0
            )));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid(format!("eps = {eps} must lie in (0, 1)")));
        }
        if !(c > 0.0 && c <= 1.0) {
            return Err(invalid(format!("c = {c} must lie in (0, 1]")));
        }
        if eps >= c {
            return Err(invalid(format!("eps = {eps} must be smaller than c = {c}")));
        }
        if degree < 2 || degree % 2 != 0 {
            return Err(invalid(format!("degree {degree} must be even and at least 2")));
        }
        if grid_size < degree || grid_size < 2 {
            return Err(invalid(format!(
                "grid size {grid_size} must be at least the degree {degree}"
            )));
        }
        Ok(())
    }

    pub fn gap(&self) -> (f64, f64) {
        (self.mu - self.delta / 2.0, self.mu + self.delta / 2.0)
    }

    /// Fit target at `x`, or `None` inside the unconstrained gap.
    pub fn target(&self, x: f64) -> Option<f64> {
        let (lo, hi) = self.gap();
        if x <= lo {
            Some(match self.kind {
                ThresholdKind::Step => self.c,
                ThresholdKind::Ramp => self.mu - x,
            })
        } else if x >= hi {
            Some(0.0)
        } else {
            None
        }
    }

    /// The exact threshold function the fit approximates.
    pub fn ideal(&self) -> IdealThreshold {
        IdealThreshold {
            kind: self.kind,
            mu: self.mu,
        }
    }
}

/// Exact step `1[x <= mu]` or inverted ramp `(mu - x) 1[x <= mu]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealThreshold {
    pub kind: ThresholdKind,
    pub mu: f64,
}

impl IdealThreshold {
    pub fn value(&self, x: f64) -> f64 {
        match (self.kind, x <= self.mu) {
            (_, false) => 0.0,
            (ThresholdKind::Step, true) => 1.0,
            (ThresholdKind::Ramp, true) => self.mu - x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ThresholdSpec,
    pub series: ChebSeries,
    /// Achieved minimax deviation over the objective grid points.
    pub objective: f64,
    pub inside_error: f64,
    pub outside_error: f64,
    pub solver_iterations: usize,
    /// Certified lower bound on the LP optimum.
    pub lower_bound: f64,
    /// Whether the dense check forced a rescale of the coefficients.
    pub rescaled: bool,
}

impl FitResult {
    pub fn meets_budget(&self) -> bool {
        self.objective <= self.spec.eps
    }
}

/// Grid points with `x >= 0`, as (grid index, x).
fn half_grid(m: usize) -> Result<Vec<(usize, f64)>> {
    Ok(cheb_grid(m)?
        .into_iter()
        .enumerate()
        .filter(|(_, x)| *x >= 0.0)
        .collect())
}

fn region_errors(spec: &ThresholdSpec, values: &[f64], points: &[(usize, f64)]) -> (f64, f64) {
    let (lo, _) = spec.gap();
    let mut inside = 0.0f64;
    let mut outside = 0.0f64;
    for &(j, x) in points {
        if let Some(target) = spec.target(x) {
            let e = (values[j] - target).abs();
            if x <= lo {
                inside = inside.max(e);
            } else {
                outside = outside.max(e);
            }
        }
    }
    (inside, outside)
}

pub fn fit_step(spec: &ThresholdSpec) -> Result<FitResult> {
    if spec.kind != ThresholdKind::Step {
        return Err(invalid("fit_step needs a step spec"));
    }
    fit(spec)
}

pub fn fit_ramp(spec: &ThresholdSpec) -> Result<FitResult> {
    if spec.kind != ThresholdKind::Ramp {
        return Err(invalid("fit_ramp needs a ramp spec"));
    }
    fit(spec)
}

/// Solves the discrete minimax LP for either threshold kind.
pub fn fit(spec: &ThresholdSpec) -> Result<FitResult> {
    spec.validate()?;
    let m = spec.grid_size;
    let n = spec.degree / 2 + 1;
    let grid = GridEvaluator::new(m);
    let points = half_grid(m)?;
    let lp = MinimaxLp {
        grid: &grid,
        points: points
            .iter()
            .map(|&(j, x)| LpPoint {
                grid_index: j,
                x,
                target: spec.target(x),
            })
            .collect(),
        n_coeffs: n,
        bound: spec.c,
    };
    let opts = LpOptions::for_size(n);
    let sol = match lp.solve(opts, None)? {
        Ok(sol) => sol,
        Err(stall) => {
            let mut series = ChebSeries::even(stall.coeffs)?;
            let values = grid.eval_even(series.coeffs());
            let peak = points.iter().map(|&(j, _)| values[j].abs()).fold(0.0, f64::max);
            if peak > spec.c {
                series.scale(spec.c / peak);
            }
            let values = grid.eval_even(series.coeffs());
            let (i, o) = region_errors(spec, &values, &points);
            return Err(Error::SolverFailure {
                iterations: stall.iterations,
                best_objective: i.max(o),
                incumbent: Some(Box::new(series)),
            });
        }
    };

    let mut series = ChebSeries::even(sol.coeffs)?;
    let peak = series.max_abs();
    let rescaled = peak > 1.0 + BOUNDED_TOL;
    if rescaled {
        series.scale(1.0 / peak);
    }
    let values = grid.eval_even(series.coeffs());
    let (inside_error, outside_error) = region_errors(spec, &values, &points);
    Ok(FitResult {
        spec: *spec,
        series,
        objective: inside_error.max(outside_error),
        inside_error,
        outside_error,
        solver_iterations: sol.iterations,
        lower_bound: sol.t,
        rescaled,
    })
}

/// Density sampled on a uniform grid of [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDensity {
    xs: Vec<f64>,
    weights: Vec<f64>,
    dx: f64,
}

impl DiscreteDensity {
    /// Checks that `sum(weights) * dx = 1` within 1e-9.
    pub fn new(xs: Vec<f64>, weights: Vec<f64>, dx: f64) -> Result<Self> {
        if xs.len() != weights.len() || xs.is_empty() {
            return Err(invalid("density grid and weights must be nonempty and of equal length"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("density weights must be finite and nonnegative"));
        }
        let mass: f64 = weights.iter().sum::<f64>() * dx;
        if (mass - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("density integrates to {mass}, not 1")));
        }
        Ok(Self { xs, weights, dx })
    }

    /// Normal density on `points` uniform nodes of [0, 1], renormalized.
    pub fn normal(mean: f64, sd: f64, points: usize) -> Result<Self> {
        if points < 2 || !(sd > 0.0) {
            return Err(invalid("normal density needs sd > 0 and at least two nodes"));
        }
        let dx = 1.0 / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| i as f64 * dx).collect();
        let mut weights: Vec<f64> = xs
            .iter()
            .map(|x| (-0.5 * ((x - mean) / sd).powi(2)).exp())
            .collect();
        let mass: f64 = weights.iter().sum::<f64>() * dx;
        weights.iter_mut().for_each(|w| *w /= mass);
        Self::new(xs, weights, dx)
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }
}

/// `|sum_i (P~(x_i) - theta(x_i)) p_i dx|` where `P~` is the transform read
/// out in `mode`.
pub fn theta_error<T: ThresholdTransform + ?Sized>(
    transform: &T,
    spec: &ThresholdSpec,
    dist: &DiscreteDensity,
    mode: MeasurementMode,
) -> Result<f64> {
    let ideal = spec.ideal();
    let mut acc = 0.0;
    for (&x, &w) in dist.xs.iter().zip(&dist.weights) {
        let v = mode.read(transform.apply(x)?);
        acc += (v - ideal.value(x)) * w;
    }
    Ok((acc * dist.dx).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FitKey {
    kind: ThresholdKind,
    mu_e12: i64,
    delta: u64,
    eps: u64,
    c: u64,
    degree: usize,
    grid_size: usize,
}

impl FitKey {
    fn of(spec: &ThresholdSpec) -> Self {
        Self {
            kind: spec.kind,
            mu_e12: (spec.mu * 1e12).round() as i64,
            delta: spec.delta.to_bits(),
            eps: spec.eps.to_bits(),
            c: spec.c.to_bits(),
            degree: spec.degree,
            grid_size: spec.grid_size,
        }
    }

    fn file_name(&self) -> String {
        format!(
            "fit-{}-mu{:013}-D{:016x}-e{:016x}-c{:016x}-d{}-M{}.json",
            self.kind, self.mu_e12, self.delta, self.eps, self.c, self.degree, self.grid_size
        )
    }
}

/// Memoized fits keyed by `(kind, mu to 12 decimals, delta, eps, c, d, M)`,
/// optionally persisted as JSON files in a directory.
#[derive(Debug, Default)]
pub struct FitCache {
    memory: Mutex<HashMap<FitKey, Arc<FitResult>>>,
    dir: Option<PathBuf>,
}

impl FitCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            memory: Mutex::default(),
            dir: Some(dir.into()),
        }
    }

    /// Persists under `$QRISK_CACHE_DIR/fits` when the variable is set.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::with_dir(PathBuf::from(d).join("fits")),
            _ => Self::in_memory(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.memory.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_fit(&self, spec: &ThresholdSpec) -> Result<Arc<FitResult>> {
        let key = FitKey::of(spec);
        let mut canonical = *spec;
        canonical.mu = key.mu_e12 as f64 / 1e12;
        canonical.validate()?;

        if let Some(hit) = self.memory.lock().expect("cache lock").get(&key) {
            return Ok(Arc::clone(hit));
        }
        if let Some(hit) = self.load(&key, &canonical) {
            let hit = Arc::new(hit);
            self.memory
                .lock()
                .expect("cache lock")
                .insert(key, Arc::clone(&hit));
            return Ok(hit);
        }
        let fitted = Arc::new(fit(&canonical)?);
        self.store(&key, &fitted)?;
        self.memory
            .lock()
            .expect("cache lock")
            .insert(key, Arc::clone(&fitted));
        Ok(fitted)
    }

    fn load(&self, key: &FitKey, spec: &ThresholdSpec) -> Option<FitResult> {
        let path = self.dir.as_ref()?.join(key.file_name());
        let text = fs::read_to_string(path).ok()?;
        let fit: FitResult = serde_json::from_str(&text).ok()?;
        (fit.spec == *spec && fit.series.check_bounded().is_ok()).then_some(fit)
    }

    fn store(&self, key: &FitKey, fit: &FitResult) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        fs::create_dir_all(dir)?;
        crate::write_atomic(&dir.join(key.file_name()), serde_json::to_string(fit)?.as_bytes())
    }
}
