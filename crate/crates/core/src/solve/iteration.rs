use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::ModelParams;

use super::operator::operator_j0;
use super::{GridSpec, ValueGrid};

/// Largest violations of the structural properties of an iterate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GridCheck {
    /// Distance of the worst node from `[-1/c, 0]`.
    pub range: f64,
    /// Largest decrease between neighbours along either axis.
    pub monotone: f64,
    /// Largest midpoint-concavity defect along rows and columns.
    pub concavity: f64,
    /// Same along the two diagonals. Bilinear interpolation is concave only
    /// along grid lines, so this defect is a discretisation diagnostic.
    pub diagonal_concavity: f64,
    /// Largest increase over the previous iterate.
    pub ordering: f64,
}

impl GridCheck {
    pub fn worst(&self) -> f64 {
        self.range
            .max(self.monotone)
            .max(self.concavity)
            .max(self.ordering)
    }
}

/// Measures how far `grid` is from satisfying the iterate invariants.
pub fn check_grid_invariants(
    params: &ModelParams,
    grid: &ValueGrid,
    prev: Option<&ValueGrid>,
) -> GridCheck {
    let (n0, n1) = (grid.spec.n0, grid.spec.n1);
    let floor = -1.0 / params.c();
    let v = |i: usize, j: usize| grid.at(i, j);
    let mut out = GridCheck::default();
    for i in 0..n0 {
        for j in 0..n1 {
            let x = v(i, j);
            out.range = out.range.max(floor - x).max(x);
            if i + 1 < n0 {
                out.monotone = out.monotone.max(x - v(i + 1, j));
            }
            if j + 1 < n1 {
                out.monotone = out.monotone.max(x - v(i, j + 1));
            }
            let defect = |a: f64, b: f64| 0.5 * (a + b) - x;
            if i > 0 && i + 1 < n0 {
                out.concavity = out.concavity.max(defect(v(i - 1, j), v(i + 1, j)));
            }
            if j > 0 && j + 1 < n1 {
                out.concavity = out.concavity.max(defect(v(i, j - 1), v(i, j + 1)));
            }
            if i > 0 && j > 0 && i + 1 < n0 && j + 1 < n1 {
                let d = defect(v(i - 1, j - 1), v(i + 1, j + 1))
                    .max(defect(v(i - 1, j + 1), v(i + 1, j - 1)));
                out.diagonal_concavity = out.diagonal_concavity.max(d);
            }
        }
    }
    if let Some(p) = prev {
        out.ordering = grid
            .values
            .iter()
            .zip(&p.values)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max);
    }
    out
}

/// Tolerance on the invariant checks that abort the iteration.
const INVARIANT_TOL: f64 = 1e-9;

/// Number of iterations needed for the error bound to reach `target_err`.
fn iterations_for(params: &ModelParams, target_err: f64) -> usize {
    let mut n = 0;
    while params.error_bound(n) > target_err {
        n += 1;
    }
    n
}

/// One application of `J₀` at every node.
pub(crate) fn apply_j0(params: &ModelParams, spec: &GridSpec, prev: &ValueGrid) -> ValueGrid {
    let values = (0..spec.n0 * spec.n1)
        .into_par_iter()
        .map(|idx| operator_j0(params, prev, spec, spec.node(idx / spec.n1, idx % spec.n1)).value)
        .collect();
    let iteration = prev.iteration + 1;
    ValueGrid {
        spec: *spec,
        iteration,
        error_bound: params.error_bound(iteration),
        values,
    }
}

/// Computes `v₁, …, v_N` with `N = min(n_max, first n with (1/c)(μ/(μ+λ))ⁿ ≤ target_err)`.
pub fn value_iteration(
    params: &ModelParams,
    spec: &GridSpec,
    n_max: usize,
    target_err: f64,
) -> Result<Vec<ValueGrid>> {
    spec.validate(params)?;
    let n = n_max.min(iterations_for(params, target_err));
    let mut out: Vec<ValueGrid> = Vec::with_capacity(n);
    let zero = ValueGrid::zeros(*spec);
    for k in 1..=n {
        let prev = out.last().unwrap_or(&zero);
        let next = apply_j0(params, spec, prev);
        let check = check_grid_invariants(params, &next, Some(prev));
        let fatal = [
            ("range", check.range),
            ("monotonicity", check.monotone),
            ("pointwise decrease", check.ordering),
            ("concavity", check.concavity),
        ]
        .into_iter()
        .find(|(_, d)| *d > INVARIANT_TOL);
        if let Some((what, d)) = fatal {
            return Err(Error::SolverInvariant {
                iteration: k,
                detail: format!("{what} violated by {d:e}"),
            });
        }
        out.push(next);
    }
    Ok(out)
}
