use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::flow::{flow, Statistic};
use crate::model::ModelParams;

use super::operator::{operator_j_at, operator_jt, PathIntegral};
use super::{GridSpec, StateFunction, ValueGrid};

/// `γ(φ₀)`: the lowest `φ₁` on each grid line where `v ≥ -ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Boundary {
    pub abscissae: Vec<f64>,
    /// `+∞` where the line never reaches the zero set below `phiMax`.
    pub gamma: Vec<f64>,
    pub epsilon_level: f64,
}

/// Reads the numerical zero set `{v ≥ -ε}` off each `φ₀` grid line, with
/// linear inverse interpolation between the straddling nodes.
pub fn extract_boundary(grid: &ValueGrid, epsilon_level: f64) -> Boundary {
    let spec = &grid.spec;
    let h1 = spec.h1();
    let mut abscissae = Vec::with_capacity(spec.n0);
    let mut gamma = Vec::with_capacity(spec.n0);
    for i in 0..spec.n0 {
        abscissae.push(i as f64 * spec.h0());
        let level = -epsilon_level;
        let g = match (0..spec.n1).find(|&j| grid.at(i, j) >= level) {
            None => f64::INFINITY,
            Some(0) => 0.0,
            Some(j) => {
                let (a, b) = (grid.at(i, j - 1), grid.at(i, j));
                (j - 1) as f64 * h1 + h1 * (level - a) / (b - a)
            }
        };
        gamma.push(g);
    }
    Boundary {
        abscissae,
        gamma,
        epsilon_level,
    }
}

impl Boundary {
    /// Value at `φ₀` by linear interpolation between grid lines.
    pub fn at(&self, phi0: f64) -> f64 {
        let h = self.abscissae[1] - self.abscissae[0];
        let k = ((phi0 / h) as usize).min(self.abscissae.len() - 2);
        let f = phi0 / h - k as f64;
        let (a, b) = (self.gamma[k], self.gamma[k + 1]);
        if f <= 0.0 {
            a
        } else if f >= 1.0 {
            b
        } else {
            (1.0 - f) * a + f * b
        }
    }

    /// Largest increase along `φ₀` and largest midpoint-convexity defect,
    /// both over the finite part of the curve.
    pub fn shape_defects(&self) -> (f64, f64) {
        let g = &self.gamma;
        let mut rise: f64 = 0.0;
        let mut convex: f64 = 0.0;
        for k in 1..g.len() {
            if g[k].is_finite() && g[k - 1].is_finite() {
                rise = rise.max(g[k] - g[k - 1]);
            } else if g[k].is_infinite() && g[k - 1].is_finite() {
                rise = f64::INFINITY;
            }
            if k + 1 < g.len() && g[k - 1].is_finite() && g[k + 1].is_finite() {
                convex = convex.max(g[k] - 0.5 * (g[k - 1] + g[k + 1]));
            }
        }
        (rise, convex)
    }

    /// Errors if `γ` rises or bends concave by more than `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let (rise, convex) = self.shape_defects();
        if rise > tol || convex > tol {
            return Err(Error::SolverInvariant {
                iteration: 0,
                detail: format!(
                    "boundary not decreasing/convex: rise {rise:e}, convexity defect {convex:e}"
                ),
            });
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "phi0,gamma")?;
        for (x, g) in self.abscissae.iter().zip(&self.gamma) {
            writeln!(out, "{x},{g}")?;
        }
        Ok(())
    }
}

/// `|J_t f(s) − (J f(t, s) + e^{-(λ+μ)t} J₀ f(flow(t, s)))|`. The left side
/// uses a time grid anchored at zero, the right side one anchored at `t`.
pub fn check_delay_equation<F: StateFunction + ?Sized>(
    params: &ModelParams,
    f: &F,
    spec: &GridSpec,
    s: Statistic,
    t: f64,
) -> f64 {
    let lhs = operator_jt(params, f, spec, s, t).value;
    let shifted = flow(params, t, s);
    let tail = PathIntegral::new(
        params,
        f,
        shifted,
        spec.time_step,
        spec.time_horizon(params),
    )
    .minimize_from(0.0)
    .value;
    let rhs = operator_j_at(params, f, spec, s, t) + (-params.total_rate() * t).exp() * tail;
    (lhs - rhs).abs()
}

/// `rₙ`: first time the flow from `s` enters `{vₙ₊₁ ≥ -ε}`, or `+∞` if it
/// does not within the quadrature horizon. `grids[k]` holds `v_{k+1}`.
pub fn exit_time_rn(
    params: &ModelParams,
    grids: &[ValueGrid],
    n: usize,
    s: Statistic,
    epsilon_level: f64,
) -> Result<f64> {
    let grid = grids.get(n).ok_or_else(|| {
        Error::InvalidGrid(vec![format!(
            "v_{} not available ({} iterates)",
            n + 1,
            grids.len()
        )])
    })?;
    let spec = &grid.spec;
    let inside = |t: f64| grid.interpolate(flow(params, t, s)) >= -epsilon_level;
    if inside(0.0) {
        return Ok(0.0);
    }
    let horizon = spec.time_horizon(params);
    let mut t = 0.0;
    while t < horizon {
        let next = (t + spec.time_step).min(horizon);
        if inside(next) {
            let (mut lo, mut hi) = (t, next);
            while hi - lo > 1e-12 * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        t = next;
    }
    Ok(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::deterministic_exit_time;
    use crate::solve::value_iteration;

    #[test]
    fn boundary_from_synthetic_grid() {
        let spec = GridSpec {
            phi_max: 4.0,
            n0: 41,
            n1: 41,
            time_step: 0.01,
            horizon_tol: 1e-10,
        };
        let mut g = ValueGrid::zeros(spec);
        for i in 0..41 {
            for j in 0..41 {
                let s = spec.node(i, j);
                g.values[i * 41 + j] = -(2.05 - s.phi0 - s.phi1).max(0.0);
            }
        }
        let b = extract_boundary(&g, 0.0);
        for (x, y) in b.abscissae.iter().zip(&b.gamma) {
            assert!((y - (2.05 - x).max(0.0)).abs() <= spec.h1(), "{x}: {y}");
        }
        let b = extract_boundary(&g, 0.02);
        assert!((b.gamma[0] - 2.06).abs() < 1e-12);
        b.check(1e-12).unwrap();
    }

    #[test]
    fn r1_exit_time_agrees_with_flow() {
        let p = ModelParams::simple(2.5, 1.0, 1.0, 1.5, 0.0).unwrap();
        let spec = GridSpec::for_params(&p, 64);
        let grids = value_iteration(&p, &spec, 6, 0.0).unwrap();
        let eps = 1e-6 / p.c();
        for s in [
            Statistic::ORIGIN,
            Statistic::new(0.5, 0.3),
            Statistic::new(3.0, 0.0),
        ] {
            let r = exit_time_rn(&p, &grids, 4, s, eps).unwrap();
            let exact = deterministic_exit_time(&p, s);
            // one grid cell of slack along a flow moving at speed ≥ λ
            assert!(
                (r - exact).abs() < spec.h0() / p.lambda(),
                "{s}: {r} vs {exact}"
            );
        }
        assert!(exit_time_rn(&p, &grids, 9, Statistic::ORIGIN, eps).is_err());
    }

    #[test]
    fn delay_equation_at_zero_is_exact() {
        let p = ModelParams::simple(0.8, 0.5, 1.0, 1.4, 0.0).unwrap();
        let spec = GridSpec::for_params(&p, 48);
        let f = |s: Statistic| -1.0 / (1.0 + s.phi0 + s.phi1);
        assert_eq!(
            check_delay_equation(&p, &f, &spec, Statistic::new(0.3, 0.2), 0.0),
            0.0
        );
        let r = check_delay_equation(&p, &f, &spec, Statistic::new(0.3, 0.2), 0.77);
        assert!(r < 1e-6, "residual {r}");
    }
}
