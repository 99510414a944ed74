//! Value iteration for the stopping problem on a truncated square grid.
//!
//! `v₀ = 0`, `vₙ = J₀ vₙ₋₁`. The operators act on anything implementing
//! [`StateFunction`]; grids use bilinear interpolation and vanish outside the
//! square, which contains a closed-form superset of the continuation region.

mod boundary;
mod iteration;
mod operator;

pub use boundary::{check_delay_equation, exit_time_rn, extract_boundary, Boundary};
pub use iteration::{check_grid_invariants, value_iteration, GridCheck};
pub use operator::{operator_j0, operator_jt, operator_s, running_integrand, Minimum};

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::flow::{continuation_extent, Statistic};
use crate::model::ModelParams;

/// Grid and quadrature settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GridSpec {
    pub phi_max: f64,
    pub n0: usize,
    pub n1: usize,
    /// Quadrature step `Δs` in time along the flow.
    pub time_step: f64,
    /// Cutoff `ε_T` on the discount `e^{-(λ+μ)T}`.
    pub horizon_tol: f64,
}

impl GridSpec {
    /// Smallest admissible truncation bound.
    pub fn required_phi_max(params: &ModelParams) -> f64 {
        let level = params.level();
        2.0 * level.max(params.regime().xi.unwrap_or(0.0) + level)
    }

    /// Default settings with `n` nodes per axis.
    pub fn for_params(params: &ModelParams, n: usize) -> Self {
        let phi_max = Self::required_phi_max(params).max(2.0 * continuation_extent(params));
        GridSpec {
            phi_max,
            n0: n,
            n1: n,
            time_step: 0.05 / params.total_rate(),
            horizon_tol: 1e-10,
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let mut bad = Vec::new();
        let need = Self::required_phi_max(params);
        if !(self.phi_max.is_finite() && self.phi_max >= need * (1.0 - 1e-12)) {
            bad.push(format!(
                "phiMax {} is below the required {need}",
                self.phi_max
            ));
        }
        if self.n0 < 32 || self.n1 < 32 {
            bad.push(format!(
                "node counts ({}, {}) must be at least 32",
                self.n0, self.n1
            ));
        }
        let max_step = 0.1 / params.total_rate();
        if !(self.time_step > 0.0 && self.time_step <= max_step * (1.0 + 1e-12)) {
            bad.push(format!(
                "time step {} must lie in (0, {max_step}]",
                self.time_step
            ));
        }
        if !(self.horizon_tol > 0.0 && self.horizon_tol <= 1e-10) {
            bad.push(format!(
                "horizon tolerance {} must lie in (0, 1e-10]",
                self.horizon_tol
            ));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidGrid(bad))
        }
    }

    pub fn h0(&self) -> f64 {
        self.phi_max / (self.n0 - 1) as f64
    }

    pub fn h1(&self) -> f64 {
        self.phi_max / (self.n1 - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> Statistic {
        Statistic::new(i as f64 * self.h0(), j as f64 * self.h1())
    }

    /// Time `T` with `e^{-(λ+μ)T} = ε_T`.
    pub fn time_horizon(&self, params: &ModelParams) -> f64 {
        (1.0 / self.horizon_tol).ln() / params.total_rate()
    }
}

/// A bounded function of the statistic.
pub trait StateFunction: Sync {
    fn value(&self, s: Statistic) -> f64;
}

impl<F: Fn(Statistic) -> f64 + Sync> StateFunction for F {
    fn value(&self, s: Statistic) -> f64 {
        self(s)
    }
}

/// Node values of one iterate `vₙ`, stored row-major in `φ₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub spec: GridSpec,
    pub iteration: usize,
    pub error_bound: f64,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct GridHeader {
    spec: GridSpec,
    iteration: usize,
    error_bound: f64,
    params_digest: String,
}

impl ValueGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        ValueGrid {
            spec,
            iteration: 0,
            error_bound: f64::INFINITY,
            values: vec![0.0; spec.n0 * spec.n1],
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.spec.n1 + j]
    }

    /// Bilinear interpolation; zero outside `[0, phiMax]²`.
    pub fn interpolate(&self, s: Statistic) -> f64 {
        let pm = self.spec.phi_max;
        if !(s.phi0 >= 0.0 && s.phi1 >= 0.0 && s.phi0 <= pm && s.phi1 <= pm) {
            return 0.0;
        }
        let u = s.phi0 / self.spec.h0();
        let w = s.phi1 / self.spec.h1();
        let i = (u as usize).min(self.spec.n0 - 2);
        let j = (w as usize).min(self.spec.n1 - 2);
        let fu = u - i as f64;
        let fw = w - j as f64;
        let v00 = self.at(i, j);
        let v01 = self.at(i, j + 1);
        let v10 = self.at(i + 1, j);
        let v11 = self.at(i + 1, j + 1);
        (1.0 - fu) * ((1.0 - fw) * v00 + fw * v01) + fu * ((1.0 - fw) * v10 + fw * v11)
    }

    /// Largest absolute node difference.
    pub fn sup_distance(&self, other: &ValueGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "phi0,phi1,value")?;
        for i in 0..self.spec.n0 {
            for j in 0..self.spec.n1 {
                let s = self.spec.node(i, j);
                writeln!(out, "{},{},{}", s.phi0, s.phi1, self.at(i, j))?;
            }
        }
        Ok(())
    }

    pub fn header_json(&self, params: &ModelParams) -> Result<String> {
        let header = GridHeader {
            spec: self.spec,
            iteration: self.iteration,
            error_bound: self.error_bound,
            params_digest: params.digest(),
        };
        Ok(serde_json::to_string_pretty(&header)?)
    }

    /// Rebuilds a grid from its JSON header and CSV body.
    pub fn read(header: &str, csv: &str) -> Result<Self> {
        let h: GridHeader = serde_json::from_str(header)?;
        let spec = h.spec;
        let mut values = Vec::with_capacity(spec.n0 * spec.n1);
        for (k, line) in csv.lines().skip(1).enumerate() {
            let v = line
                .rsplit(',')
                .next()
                .and_then(|x| x.parse::<f64>().ok())
                .ok_or_else(|| Error::Parse(format!("grid row {}: {line:?}", k + 2)))?;
            values.push(v);
        }
        if values.len() != spec.n0 * spec.n1 {
            return Err(Error::Parse(format!(
                "grid has {} rows, header expects {}",
                values.len(),
                spec.n0 * spec.n1
            )));
        }
        Ok(ValueGrid {
            spec,
            iteration: h.iteration,
            error_bound: h.error_bound,
            values,
        })
    }
}

impl StateFunction for ValueGrid {
    fn value(&self, s: Statistic) -> f64 {
        self.interpolate(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_from(f: impl Fn(Statistic) -> f64) -> ValueGrid {
        let spec = GridSpec {
            phi_max: 4.0,
            n0: 33,
            n1: 41,
            time_step: 0.01,
            horizon_tol: 1e-10,
        };
        let mut g = ValueGrid::zeros(spec);
        for i in 0..spec.n0 {
            for j in 0..spec.n1 {
                g.values[i * spec.n1 + j] = f(spec.node(i, j));
            }
        }
        g
    }

    #[test]
    fn interpolation_contract() {
        let bil = |s: Statistic| -1.0 + 0.1 * s.phi0 + 0.2 * s.phi1 + 0.05 * s.phi0 * s.phi1;
        let g = grid_from(bil);
        let node = g.spec.node(7, 9);
        assert_eq!(g.interpolate(node), g.at(7, 9));
        let centre = Statistic::new(7.5 * g.spec.h0(), 9.5 * g.spec.h1());
        assert!((g.interpolate(centre) - bil(centre)).abs() < 1e-14);
        assert_eq!(g.interpolate(Statistic::new(4.01, 1.0)), 0.0);
        assert_eq!(g.interpolate(Statistic::new(1.0, 4.5)), 0.0);
        let corner = Statistic::new(4.0, 4.0);
        assert!((g.interpolate(corner) - bil(corner)).abs() < 1e-13);
    }

    #[test]
    fn spec_validation() {
        let p = ModelParams::simple(1.5, 0.25, 1.0, 1.5, 0.0).unwrap();
        let spec = GridSpec::for_params(&p, 64);
        spec.validate(&p).unwrap();
        assert!((spec.phi_max - 15.0).abs() < 1e-12);
        let bad = GridSpec {
            n0: 16,
            phi_max: 1.0,
            time_step: 1.0,
            horizon_tol: 1e-3,
            ..spec
        };
        match bad.validate(&p) {
            Err(Error::InvalidGrid(v)) => assert_eq!(v.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_round_trip() {
        let p = ModelParams::simple(1.5, 0.25, 1.0, 1.5, 0.0).unwrap();
        let mut g = grid_from(|s| -1.0 / (1.0 + s.phi0 + s.phi1));
        g.iteration = 3;
        g.error_bound = p.error_bound(3);
        let mut csv = Vec::new();
        g.write_csv(&mut csv).unwrap();
        let back = ValueGrid::read(
            &g.header_json(&p).unwrap(),
            std::str::from_utf8(&csv).unwrap(),
        )
        .unwrap();
        assert_eq!(back, g);
    }
}
