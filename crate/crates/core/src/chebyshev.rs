//! Chebyshev bases of definite parity.
//!
//! A [`ChebSeries`] stores only the coefficients of the basis functions that
//! share its parity: `coeffs[k]` multiplies `T_{2k}` for even series and
//! `T_{2k+1}` for odd ones. Everything is evaluated through the step-two
//! recurrence `T_{n+2}(x) = 2 T_2(x) T_n(x) - T_{n-2}(x)`, never by expanding
//! into monomials, so degrees in the thousands stay well conditioned.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Inputs this close outside [-1, 1] are clamped onto the boundary.
pub const DOMAIN_SLACK: f64 = 1e-12;

/// Largest |P(x)| a series may reach on [-1, 1] and still be
/// usable as a signal-processing polynomial.
pub const BOUNDED_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    /// Number of same-parity basis functions up to degree `d`.
    pub fn basis_len(self, degree: usize) -> Result<usize> {
        match self {
            Parity::Even if degree % 2 == 0 => Ok(degree / 2 + 1),
            Parity::Odd if degree % 2 == 1 => Ok(degree / 2 + 1),
            _ => Err(invalid(format!("degree {degree} does not have {self} parity"))),
        }
    }
}

impl fmt::Display for Parity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parity::Even => f.write_str("even"),
            Parity::Odd => f.write_str("odd"),
        }
    }
}

/// A definite-parity Chebyshev series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSeries", into = "RawSeries")]
pub struct ChebSeries {
    parity: Parity,
    degree: usize,
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSeries {
    parity: Parity,
    degree: usize,
    coeffs: Vec<f64>,
}

impl TryFrom<RawSeries> for ChebSeries {
    type Error = Error;

    fn try_from(raw: RawSeries) -> Result<Self> {
        ChebSeries::new(raw.parity, raw.degree, raw.coeffs)
    }
}

impl From<ChebSeries> for RawSeries {
    fn from(s: ChebSeries) -> Self {
        RawSeries {
            parity: s.parity,
            degree: s.degree,
            coeffs: s.coeffs,
        }
    }
}

impl ChebSeries {
    pub fn new(parity: Parity, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        let expected = parity.basis_len(degree)?;
        if coeffs.len() != expected {
            return Err(invalid(format!(
                "{parity} series of degree {degree} needs {expected} coefficients, got {}",
                coeffs.len()
            )));
        }
        if let Some(k) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(invalid(format!("coefficient {k} is not finite")));
        }
        Ok(Self {
            parity,
            degree,
            coeffs,
        })
    }

    /// Even series `sum_k coeffs[k] T_{2k}`.
    pub fn even(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("an even series needs at least one coefficient"));
        }
        let degree = 2 * (coeffs.len() - 1);
        Self::new(Parity::Even, degree, coeffs)
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= factor);
    }

    /// Evaluates the series at `x` by backward recurrence.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let x = clamp_to_domain(x)?;
        Ok(self.eval_unchecked(x))
    }

    /// Evaluation without the domain check; callers guarantee |x| <= 1.
    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        let y = 2.0 * x * x - 1.0;
        let two_y = 2.0 * y;
        let c = &self.coeffs;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &ck in c[1..].iter().rev() {
            let b0 = ck + two_y * b1 - b2;
            b2 = b1;
            b1 = b0;
        }
        match self.parity {
            Parity::Even => c[0] + y * b1 - b2,
            Parity::Odd => {
                let t3 = x * (4.0 * x * x - 3.0);
                x * (c[0] - b2) + t3 * b1
            }
        }
    }

    /// Largest |P(x)| on [-1, 1]: a scan over a Chebyshev grid oversampling
    /// the degree 16x, then golden-section refinement in `theta = acos x`
    /// around every grid peak within 1% of the scan maximum.
    pub fn max_abs(&self) -> f64 {
        let m = (16 * (self.degree + 1) + 1).max(4097);
        let values: Vec<f64> = match self.parity {
            Parity::Even => GridEvaluator::new(m).eval_even(&self.coeffs),
            Parity::Odd => (0..m)
                .map(|j| self.eval_unchecked(-(j as f64 * PI / (m - 1) as f64).cos()))
                .collect(),
        };
        let abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        let scan = abs.iter().copied().fold(0.0, f64::max);
        let h = PI / (m - 1) as f64;
        let f = |theta: f64| self.eval_unchecked(-theta.cos()).abs();
        let mut best = scan;
        for j in 0..m {
            let left = if j > 0 { abs[j - 1] } else { f64::NEG_INFINITY };
            let right = abs.get(j + 1).copied().unwrap_or(f64::NEG_INFINITY);
            if abs[j] < 0.99 * scan || abs[j] < left || abs[j] < right {
                continue;
            }
            let theta = j as f64 * h;
            best = best.max(golden_max(&f, (theta - h).max(0.0), (theta + h).min(PI)));
        }
        best
    }

    /// Fails unless |P| <= 1 + 1e-9 on [-1, 1].
    pub fn check_bounded(&self) -> Result<()> {
        let peak = self.max_abs();
        if peak > 1.0 + BOUNDED_TOL {
            return Err(invalid(format!(
                "series is not bounded by one on [-1, 1] (max |P| = {peak:.12})"
            )));
        }
        Ok(())
    }
}

/// Maximum of a unimodal `f` on `[a, b]` by golden-section search.
fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = f(a).max(f(b)).max(fc).max(fd);
    for _ in 0..60 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
        best = best.max(fc).max(fd);
    }
    best
}

pub(crate) fn clamp_to_domain(x: f64) -> Result<f64> {
    if !x.is_finite() || x.abs() > 1.0 + DOMAIN_SLACK {
        return Err(Error::Domain(format!("x = {x} lies outside [-1, 1]")));
    }
    Ok(x.clamp(-1.0, 1.0))
}

/// Chebyshev-extrema grid `x_j = -cos(j pi / (M - 1))`, ascending.
pub fn cheb_grid(m: usize) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(invalid(format!("grid needs at least two points, got {m}")));
    }
    let step = PI / (m - 1) as f64;
    Ok((0..m).map(|j| grid_point(j, step)).collect())
}

#[inline]
fn grid_point(j: usize, step: f64) -> f64 {
    -(j as f64 * step).cos()
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Basis matrix with `A[j][k] = T_{2k}(x_j)` (or `T_{2k+1}` for odd parity).
pub fn basis_matrix(points: &[f64], degree: usize, parity: Parity) -> Result<Matrix> {
    let cols = parity.basis_len(degree)?;
    let mut data = Vec::with_capacity(points.len() * cols);
    for &x in points {
        let x = clamp_to_domain(x)?;
        let start = data.len();
        data.resize(start + cols, 0.0);
        fill_basis_row(x, parity, &mut data[start..]);
    }
    Ok(Matrix {
        rows: points.len(),
        cols,
        data,
    })
}

pub(crate) fn fill_basis_row(x: f64, parity: Parity, row: &mut [f64]) {
    let y = 2.0 * x * x - 1.0;
    let (first, second) = match parity {
        Parity::Even => (1.0, y),
        Parity::Odd => (x, x * (4.0 * x * x - 3.0)),
    };
    let n = row.len();
    if n > 0 {
        row[0] = first;
    }
    if n > 1 {
        row[1] = second;
    }
    for k in 2..n {
        row[k] = 2.0 * y * row[k - 1] - row[k - 2];
    }
}

/// Evaluates even series on every point of `cheb_grid(m)` at once.
///
/// On that grid `T_{2k}(x_j) = cos(2 pi k j / (m - 1))`, so the values are the
/// real part of a length-(m-1) DFT of the coefficient vector.
#[derive(Clone)]
pub struct GridEvaluator {
    m: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GridEvaluator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridEvaluator").field("m", &self.m).finish()
    }
}

impl GridEvaluator {
    /// `m >= 2`.
    pub fn new(m: usize) -> Self {
        assert!(m >= 2, "grid needs at least two points");
        let fft = FftPlanner::new().plan_fft_forward(m - 1);
        Self { m, fft }
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eval_even(&self, coeffs: &[f64]) -> Vec<f64> {
        let period = self.m - 1;
        let mut buf = vec![Complex::new(0.0, 0.0); period];
        // Frequencies alias modulo the period, which is exact for cosines on
        // this grid.
        for (k, &c) in coeffs.iter().enumerate() {
            buf[k % period].re += c;
        }
        self.fft.process(&mut buf);
        let mut out: Vec<f64> = buf.iter().map(|z| z.re).collect();
        out.push(out[0]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // T_n(x) = cos(n arccos x), evaluated independently of the recurrence.
    fn trig_even(coeffs: &[f64], x: f64) -> f64 {
        let t = x.clamp(-1.0, 1.0).acos();
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (2.0 * k as f64 * t).cos())
            .sum()
    }

    #[test]
    fn grid_small_cases() {
        assert_eq!(cheb_grid(2).unwrap(), vec![-1.0, 1.0]);
        let g3 = cheb_grid(3).unwrap();
        assert_eq!(g3[0], -1.0);
        assert!(g3[1].abs() < 1e-16);
        assert_eq!(g3[2], 1.0);
        let g5 = cheb_grid(5).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in g5.iter().zip([-1.0, -h, 0.0, h, 1.0]) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        assert!(g5.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grid_rejects_single_point() {
        assert!(matches!(cheb_grid(1), Err(Error::InvalidArgument(_))));
        assert!(matches!(cheb_grid(0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn eval_examples() {
        let one = ChebSeries::even(vec![1.0]).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert_eq!(one.eval(x).unwrap(), 1.0);
        }
        let t2 = ChebSeries::even(vec![0.0, 1.0]).unwrap();
        assert_eq!(t2.eval(0.0).unwrap(), -1.0);

        let s = ChebSeries::even(vec![0.5, 0.25, -0.125]).unwrap();
        let want = trig_even(s.coeffs(), 0.3);
        assert!((s.eval(0.3).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn eval_domain() {
        let s = ChebSeries::even(vec![0.2, 0.3]).unwrap();
        assert_eq!(s.eval(1.0 + 5e-13).unwrap(), s.eval(1.0).unwrap());
        assert!(matches!(s.eval(1.0 + 1e-9), Err(Error::Domain(_))));
        assert!(matches!(s.eval(f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn constructor_checks() {
        assert!(ChebSeries::new(Parity::Even, 3, vec![1.0, 2.0]).is_err());
        assert!(ChebSeries::new(Parity::Even, 4, vec![1.0, 2.0]).is_err());
        assert!(ChebSeries::new(Parity::Even, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(ChebSeries::new(Parity::Odd, 3, vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn odd_series_matches_trig() {
        let s = ChebSeries::new(Parity::Odd, 5, vec![0.3, -0.2, 0.1]).unwrap();
        for x in [-0.9, -0.2, 0.0, 0.4, 1.0] {
            let t = x_acos(x);
            let want = 0.3 * t.cos() - 0.2 * (3.0 * t).cos() + 0.1 * (5.0 * t).cos();
            assert!((s.eval(x).unwrap() - want).abs() < 1e-14);
            assert!((s.eval(-x).unwrap() + want).abs() < 1e-14);
        }
    }

    fn x_acos(x: f64) -> f64 {
        x.acos()
    }

    #[test]
    fn basis_matrix_structure() {
        let pts = cheb_grid(9).unwrap();
        let a = basis_matrix(&pts, 10, Parity::Even).unwrap();
        assert_eq!((a.rows(), a.cols()), (9, 6));
        for j in 0..a.rows() {
            assert_eq!(a.get(j, 0), 1.0);
        }
        let last = a.row(8);
        assert!(last.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let mid = a.row(4);
        for (k, v) in mid.iter().enumerate() {
            let want = if k % 2 == 0 { 1.0 } else { -1.0 };
            assert!((v - want).abs() < 1e-14);
        }
        assert!(basis_matrix(&pts, 9, Parity::Even).is_err());
        assert!(basis_matrix(&[1.5], 4, Parity::Even).is_err());
    }

    #[test]
    fn recurrence_matches_trig_definition_on_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..5 {
            let n = [1, 3, 40, 400, 1500][trial];
            let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) / n as f64).collect();
            let s = ChebSeries::even(coeffs).unwrap();
            for _ in 0..200 {
                let x: f64 = rng.random_range(-1.0..=1.0);
                let err = (s.eval(x).unwrap() - trig_even(s.coeffs(), x)).abs();
                assert!(err <= 1e-10, "n={n} x={x} err={err}");
            }
        }
    }

    #[test]
    fn grid_evaluator_agrees_with_clenshaw() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (m, n) in [(2, 1), (3, 2), (17, 5), (200, 150), (101, 300)] {
            let coeffs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = ChebSeries::even(coeffs).unwrap();
            let grid = cheb_grid(m).unwrap();
            let fast = GridEvaluator::new(m).eval_even(s.coeffs());
            for (x, v) in grid.iter().zip(&fast) {
                assert!((s.eval(*x).unwrap() - v).abs() < 1e-11, "m={m} n={n} x={x}");
            }
        }
    }

    #[test]
    fn bounded_certificate() {
        let ok = ChebSeries::even(vec![0.5, 0.5]).unwrap();
        assert!(ok.check_bounded().is_ok());
        let bad = ChebSeries::even(vec![0.6, 0.5]).unwrap();
        assert!(bad.check_bounded().is_err());
        assert!((bad.max_abs() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip_validates() {
        let s = ChebSeries::even(vec![0.1, -0.2, 0.3]).unwrap();
        let js = serde_json::to_string(&s).unwrap();
        assert_eq!(js, r#"{"parity":"even","degree":4,"coeffs":[0.1,-0.2,0.3]}"#);
        let back: ChebSeries = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        let broken = r#"{"parity":"even","degree":6,"coeffs":[0.1]}"#;
        assert!(serde_json::from_str::<ChebSeries>(broken).is_err());
    }

    proptest! {
        #[test]
        fn even_series_symmetric(coeffs in prop::collection::vec(-1.0f64..1.0, 1..60), x in -1.0f64..1.0) {
            let s = ChebSeries::even(coeffs).unwrap();
            prop_assert!((s.eval(x).unwrap() - s.eval(-x).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn basis_times_coeffs_is_pointwise_eval(
            coeffs in prop::collection::vec(-1.0f64..1.0, 1..40),
            pts in prop::collection::vec(-1.0f64..1.0, 1..30),
        ) {
            let s = ChebSeries::even(coeffs).unwrap();
            let a = basis_matrix(&pts, s.degree(), Parity::Even).unwrap();
            let via_matrix = a.mul_vec(s.coeffs());
            for (x, v) in pts.iter().zip(via_matrix) {
                prop_assert!((s.eval(*x).unwrap() - v).abs() <= 1e-10);
            }
        }
    }
}
