//! Dense dual simplex for discrete minimax fits on a Chebyshev grid.
//!
//! The unknowns are `z = (c_0, .., c_{n-1}, t)` and every constraint has the
//! form `alpha_r . z <= beta_r`:
//!
//! * error rows `s (f(x_j) - target_j) <= t` at objective points,
//! * magnitude rows `s f(x_j) <= bound` at every point,
//!
//! with `s = +-1` and `f(x) = sum_k c_k T_{2k}(x)`. The objective is `min t`.
//!
//! A basis is a set of `n + 1` tight rows. The solver keeps the explicit
//! inverse of the basis matrix and moves between dual-feasible bases, adding
//! the most violated row at each step. For a Haar system the alternating
//! error rows on any `n + 1` distinct points form a dual-feasible start, so
//! no phase one is needed; the iteration is a one-point exchange method with
//! the magnitude rows entering only when they bind. The value of `t` at every
//! dual-feasible basis is a lower bound on the optimum.

use nalgebra::DMatrix;

use crate::chebyshev::{fill_basis_row, GridEvaluator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RowKind {
    ErrorUpper,
    ErrorLower,
    MagnitudeUpper,
    MagnitudeLower,
}

impl RowKind {
    fn sign(self) -> f64 {
        match self {
            RowKind::ErrorUpper | RowKind::MagnitudeUpper => 1.0,
            RowKind::ErrorLower | RowKind::MagnitudeLower => -1.0,
        }
    }

    fn is_error(self) -> bool {
        matches!(self, RowKind::ErrorUpper | RowKind::ErrorLower)
    }
}

/// Identifies a constraint by its grid index, so bases can be carried over
/// between problems on the same grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowId {
    pub grid_index: usize,
    pub kind: RowKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpPoint {
    /// Index into the Chebyshev grid the evaluator was built for.
    pub grid_index: usize,
    pub x: f64,
    /// `None` for points in the unconstrained gap.
    pub target: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MinimaxLp<'a> {
    pub grid: &'a GridEvaluator,
    /// Points in ascending order of `x`.
    pub points: Vec<LpPoint>,
    pub n_coeffs: usize,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Primal feasibility tolerance on row violations.
    pub feasibility_tol: f64,
}

impl LpOptions {
    pub fn for_size(n_coeffs: usize) -> Self {
        Self {
            max_iterations: 40 * (n_coeffs + 1) + 2000,
            feasibility_tol: 1e-11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub coeffs: Vec<f64>,
    pub t: f64,
    pub iterations: usize,
    pub basis: Vec<RowId>,
}

/// Outcome when the iteration cap is reached first.
#[derive(Debug, Clone)]
pub struct LpStall {
    pub coeffs: Vec<f64>,
    pub lower_bound: f64,
    pub iterations: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const RESIDUAL_TOL: f64 = 1e-9;
const CHECK_EVERY: usize = 64;

struct State {
    dim: usize,
    rows: Vec<RowId>,
    /// Row-major inverse of the basis matrix.
    binv: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> MinimaxLp<'a> {
    fn point_of(&self, grid_index: usize) -> Option<&LpPoint> {
        self.points
            .binary_search_by(|p| p.grid_index.cmp(&grid_index))
            .ok()
            .map(|i| &self.points[i])
    }

    fn alpha(&self, row: RowId, out: &mut [f64]) {
        let p = self.point_of(row.grid_index).expect("row refers to a known point");
        let n = self.n_coeffs;
        fill_basis_row(p.x, crate::chebyshev::Parity::Even, &mut out[..n]);
        let s = row.kind.sign();
        out[..n].iter_mut().for_each(|v| *v *= s);
        out[n] = if row.kind.is_error() { -1.0 } else { 0.0 };
    }

    fn beta(&self, row: RowId) -> f64 {
        let p = self.point_of(row.grid_index).expect("row refers to a known point");
        match row.kind {
            RowKind::ErrorUpper => p.target.expect("error row at objective point"),
            RowKind::ErrorLower => -p.target.expect("error row at objective point"),
            RowKind::MagnitudeUpper | RowKind::MagnitudeLower => self.bound,
        }
    }

    fn valid_row(&self, row: RowId) -> bool {
        match self.point_of(row.grid_index) {
            Some(p) => !row.kind.is_error() || p.target.is_some(),
            None => false,
        }
    }

    /// Alternating error rows on evenly spread objective points.
    fn cold_basis(&self) -> Result<Vec<RowId>> {
        let objective: Vec<&LpPoint> = self.points.iter().filter(|p| p.target.is_some()).collect();
        let need = self.n_coeffs + 1;
        if objective.len() < need {
            return Err(Error::InvalidArgument(format!(
                "{} objective grid points cannot determine {} coefficients; enlarge the grid",
                objective.len(),
                self.n_coeffs
            )));
        }
        let span = (objective.len() - 1) as f64;
        let step = if need > 1 { span / (need - 1) as f64 } else { 0.0 };
        let mut rows = Vec::with_capacity(need);
        for i in 0..need {
            let idx = (i as f64 * step).round() as usize;
            let kind = if i % 2 == 0 {
                RowKind::ErrorUpper
            } else {
                RowKind::ErrorLower
            };
            rows.push(RowId {
                grid_index: objective[idx].grid_index,
                kind,
            });
        }
        Ok(rows)
    }

    fn factor(&self, rows: Vec<RowId>) -> Option<State> {
        let dim = self.n_coeffs + 1;
        let mut b = vec![0.0; dim * dim];
        for (i, r) in rows.iter().enumerate() {
            self.alpha(*r, &mut b[i * dim..(i + 1) * dim]);
        }
        let inv = DMatrix::from_row_slice(dim, dim, &b).lu().try_inverse()?;
        let mut binv = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                binv[i * dim + j] = inv[(i, j)];
            }
        }
        let beta: Vec<f64> = rows.iter().map(|r| self.beta(*r)).collect();
        let z = (0..dim)
            .map(|i| dot(&binv[i * dim..(i + 1) * dim], &beta))
            .collect();
        Some(State {
            dim,
            rows,
            binv,
            z,
        })
    }

    fn duals(state: &State) -> &[f64] {
        let d = state.dim;
        &state.binv[(d - 1) * d..]
    }

    fn dual_feasible(state: &State) -> bool {
        // y = -(last row of B^-1) must be nonnegative.
        Self::duals(state).iter().all(|v| *v <= 1e-9)
    }

    /// Most violated row at the current vertex, ties to the lowest grid index.
    fn most_violated(&self, state: &State, tol: f64) -> Option<(RowId, f64)> {
        let n = self.n_coeffs;
        let t = state.z[n];
        let f = self.grid.eval_even(&state.z[..n]);
        let mut best: Option<(RowId, f64)> = None;
        let mut consider = |row: RowId, v: f64| {
            if v > tol && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((row, v));
            }
        };
        for p in &self.points {
            let fj = f[p.grid_index];
            if let Some(target) = p.target {
                let e = fj - target;
                let kind = if e >= 0.0 {
                    RowKind::ErrorUpper
                } else {
                    RowKind::ErrorLower
                };
                consider(RowId { grid_index: p.grid_index, kind }, e.abs() - t);
            }
            let kind = if fj >= 0.0 {
                RowKind::MagnitudeUpper
            } else {
                RowKind::MagnitudeLower
            };
            consider(RowId { grid_index: p.grid_index, kind }, fj.abs() - self.bound);
        }
        best
    }

    fn residual(&self, state: &State, scratch: &mut [f64]) -> f64 {
        state
            .rows
            .iter()
            .map(|r| {
                self.alpha(*r, scratch);
                (dot(scratch, &state.z) - self.beta(*r)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Solves the LP, optionally starting from a basis of a nearby problem.
    pub fn solve(&self, opts: LpOptions, warm: Option<&[RowId]>) -> Result<std::result::Result<LpSolution, LpStall>> {
        let dim = self.n_coeffs + 1;
        let mut state = warm
            .filter(|rows| rows.len() == dim && rows.iter().all(|r| self.valid_row(*r)))
            .and_then(|rows| self.factor(rows.to_vec()))
            .filter(Self::dual_feasible);
        if state.is_none() {
            let rows = self.cold_basis()?;
            state = self.factor(rows);
        }
        let mut state = state.ok_or_else(|| Error::Internal("initial basis is singular".into()))?;
        if !Self::dual_feasible(&state) {
            return Err(Error::Internal("initial basis is not dual feasible".into()));
        }

        let mut alpha_q = vec![0.0; dim];
        let mut w = vec![0.0; dim];
        let mut col = vec![0.0; dim];
        let mut iterations = 0;
        loop {
            let Some((q, violation)) = self.most_violated(&state, opts.feasibility_tol) else {
                // Confirm optimality with a fresh factorization before returning.
                if self.residual(&state, &mut alpha_q) > RESIDUAL_TOL {
                    state = self
                        .factor(state.rows)
                        .ok_or_else(|| Error::Internal("basis became singular".into()))?;
                    if self.most_violated(&state, opts.feasibility_tol).is_some() {
                        continue;
                    }
                }
                let n = self.n_coeffs;
                return Ok(Ok(LpSolution {
                    coeffs: state.z[..n].to_vec(),
                    t: state.z[n],
                    iterations,
                    basis: state.rows,
                }));
            };
            if iterations >= opts.max_iterations {
                let n = self.n_coeffs;
                return Ok(Err(LpStall {
                    coeffs: state.z[..n].to_vec(),
                    lower_bound: state.z[n],
                    iterations,
                }));
            }
            iterations += 1;

            self.alpha(q, &mut alpha_q);
            // w = B^-T alpha_q
            w.iter_mut().for_each(|v| *v = 0.0);
            for (j, &a) in alpha_q.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, &state.binv[j * dim..(j + 1) * dim], &mut w);
                }
            }
            let duals = Self::duals(&state);
            let wmax = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let piv_tol = PIVOT_TOL * wmax.max(1.0);
            let mut ratio = f64::INFINITY;
            for i in 0..dim {
                if w[i] > piv_tol {
                    let y = (-duals[i]).max(0.0);
                    ratio = ratio.min(y / w[i]);
                }
            }
            if !ratio.is_finite() {
                return Err(Error::Internal("minimax LP reported infeasible".into()));
            }
            // Among near-ties prefer the largest pivot.
            let slack = ratio.abs() * 1e-9 + 1e-15;
            let mut p = usize::MAX;
            for i in 0..dim {
                if w[i] > piv_tol {
                    let y = (-duals[i]).max(0.0);
                    if y / w[i] <= ratio + slack && (p == usize::MAX || w[i] > w[p]) {
                        p = i;
                    }
                }
            }

            let wp = w[p];
            for j in 0..dim {
                col[j] = state.binv[j * dim + p];
            }
            let step = violation / wp;
            for j in 0..dim {
                state.z[j] -= step * col[j];
            }
            for j in 0..dim {
                let piv = col[j] / wp;
                let row = &mut state.binv[j * dim..(j + 1) * dim];
                if piv != 0.0 {
                    axpy(-piv, &w, row);
                }
                row[p] = piv;
            }
            state.rows[p] = q;

            if iterations % CHECK_EVERY == 0 && self.residual(&state, &mut alpha_q) > RESIDUAL_TOL {
                state = self
                    .factor(state.rows)
                    .ok_or_else(|| Error::Internal("basis became singular".into()))?;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}
