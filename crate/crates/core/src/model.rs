//! Problem parameters, the mark law with its likelihood ratio, and the
//! closed-form regime classification.
//!
//! The post-disorder arrival rate is `mu + 1` or `mu + 2`. Its law is pinned by
//! the first moment `m = 2 P{Λ = μ+2} + P{Λ = μ+1}`, so `P{Λ = μ+1} = 2 - m`
//! and `P{Λ = μ+2} = m - 1`.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::flow::Statistic;

/// Tolerance used when matching a finite-discrete mark against its support.
const SUPPORT_TOL: f64 = 1e-12;

/// Distribution of the jump sizes before (`β₀`) and after (`β₁`) the disorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum MarkModel {
    /// `β₁ = β₀`; marks carry no information and `r ≡ 1`.
    #[default]
    Degenerate,
    /// Exponential marks with rate `a0` before and `a1` after the disorder.
    ExponentialPair { a0: f64, a1: f64 },
    /// Marks on a finite support with probabilities `p0` (before) and `p1` (after).
    FiniteDiscrete {
        points: Vec<f64>,
        p0: Vec<f64>,
        p1: Vec<f64>,
    },
}

impl MarkModel {
    fn violations(&self, out: &mut Vec<String>) {
        match self {
            MarkModel::Degenerate => {}
            MarkModel::ExponentialPair { a0, a1 } => {
                if !(a0.is_finite() && *a0 > 0.0) {
                    out.push(format!(
                        "exponential mark rate a0 must be positive, got {a0}"
                    ));
                }
                if !(a1.is_finite() && *a1 > 0.0) {
                    out.push(format!(
                        "exponential mark rate a1 must be positive, got {a1}"
                    ));
                }
            }
            MarkModel::FiniteDiscrete { points, p0, p1 } => {
                if points.is_empty() {
                    out.push("finite mark support is empty".into());
                }
                if points.len() != p0.len() || points.len() != p1.len() {
                    out.push(format!(
                        "finite mark vectors differ in length: points={}, p0={}, p1={}",
                        points.len(),
                        p0.len(),
                        p1.len()
                    ));
                    return;
                }
                if points.iter().any(|y| !y.is_finite()) {
                    out.push("finite mark support contains a non-finite point".into());
                }
                for (i, a) in points.iter().enumerate() {
                    if points[..i].iter().any(|b| (a - b).abs() <= SUPPORT_TOL) {
                        out.push(format!("finite mark support point {a} is repeated"));
                    }
                }
                for (k, (&q0, &q1)) in p0.iter().zip(p1).enumerate() {
                    if !(q0 > 0.0) {
                        out.push(format!(
                            "pre-disorder probability at support point {} must be positive, got {q0}",
                            points[k]
                        ));
                    }
                    if !(q1 > 0.0) {
                        out.push(format!(
                            "post-disorder probability at support point {} must be positive (r > 0), got {q1}",
                            points[k]
                        ));
                    }
                }
                let s0: f64 = p0.iter().sum();
                let s1: f64 = p1.iter().sum();
                if (s0 - 1.0).abs() > 1e-12 {
                    out.push(format!("pre-disorder probabilities sum to {s0}, not 1"));
                }
                if (s1 - 1.0).abs() > 1e-12 {
                    out.push(format!("post-disorder probabilities sum to {s1}, not 1"));
                }
            }
        }
    }

    /// Radon-Nikodym derivative `dβ₁/dβ₀` at mark `y`.
    pub fn likelihood_ratio(&self, y: f64) -> Result<f64> {
        match self {
            MarkModel::Degenerate => Ok(1.0),
            MarkModel::ExponentialPair { a0, a1 } => {
                if !(y >= 0.0 && y.is_finite()) {
                    return Err(Error::MarkOutsideSupport { mark: y });
                }
                Ok((a1 / a0) * (-(a1 - a0) * y).exp())
            }
            MarkModel::FiniteDiscrete { points, p0, p1 } => points
                .iter()
                .position(|p| (p - y).abs() <= SUPPORT_TOL * p.abs().max(1.0))
                .map(|k| p1[k] / p0[k])
                .ok_or(Error::MarkOutsideSupport { mark: y }),
        }
    }
}

/// Parameter tuple as it appears on disk, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawParams {
    pub lambda: f64,
    pub c: f64,
    pub mu: f64,
    pub m: f64,
    #[serde(default)]
    pub pi: f64,
    #[serde(default)]
    pub marks: MarkModel,
}

/// Validated problem parameters.
///
/// Constructed only through [`ModelParams::new`] (or deserialization, which
/// validates), so every accessor may assume the invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    lambda: f64,
    c: f64,
    mu: f64,
    m: f64,
    pi: f64,
    marks: MarkModel,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        ModelParams::new(raw)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            lambda: p.lambda,
            c: p.c,
            mu: p.mu,
            m: p.m,
            pi: p.pi,
            marks: p.marks,
        }
    }
}

impl ModelParams {
    /// Validates a raw tuple, reporting every violated constraint at once.
    pub fn new(raw: RawParams) -> Result<Self> {
        let mut bad = Vec::new();
        let positive = |name: &str, v: f64, bad: &mut Vec<String>| {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("{name} must be positive and finite, got {v}"));
            }
        };
        positive("lambda", raw.lambda, &mut bad);
        positive("c", raw.c, &mut bad);
        positive("mu", raw.mu, &mut bad);
        if !(raw.m > 1.0 && raw.m < 2.0) {
            bad.push(format!(
                "m must lie strictly inside (1, 2), got {} (endpoints make the statistic one-dimensional)",
                raw.m
            ));
        }
        if !(raw.pi >= 0.0 && raw.pi < 1.0) {
            bad.push(format!("pi must lie in [0, 1), got {}", raw.pi));
        }
        raw.marks.violations(&mut bad);
        if !bad.is_empty() {
            return Err(Error::InvalidParams(bad));
        }
        Ok(ModelParams {
            lambda: raw.lambda,
            c: raw.c,
            mu: raw.mu,
            m: raw.m,
            pi: raw.pi,
            marks: raw.marks,
        })
    }

    /// Shorthand for degenerate marks.
    pub fn simple(lambda: f64, c: f64, mu: f64, m: f64, pi: f64) -> Result<Self> {
        Self::new(RawParams {
            lambda,
            c,
            mu,
            m,
            pi,
            marks: MarkModel::Degenerate,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawParams = serde_json::from_str(text)?;
        Self::new(raw)
    }

    pub fn raw(&self) -> RawParams {
        self.clone().into()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn c(&self) -> f64 {
        self.c
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn m(&self) -> f64 {
        self.m
    }
    pub fn pi(&self) -> f64 {
        self.pi
    }
    pub fn marks(&self) -> &MarkModel {
        &self.marks
    }

    /// `P{Λ = μ + 1}`.
    pub fn prob_plus_one(&self) -> f64 {
        2.0 - self.m
    }

    /// `P{Λ = μ + 2}`.
    pub fn prob_plus_two(&self) -> f64 {
        self.m - 1.0
    }

    /// Level `λ/c` of the advantageous region.
    pub fn level(&self) -> f64 {
        self.lambda / self.c
    }

    /// Combined killing rate `λ + μ` of the one-jump operator.
    pub fn total_rate(&self) -> f64 {
        self.lambda + self.mu
    }

    pub fn likelihood_ratio(&self, y: f64) -> Result<f64> {
        self.marks.likelihood_ratio(y)
    }

    /// Starting value of the statistic implied by the prior `pi`.
    pub fn initial_statistic(&self) -> Statistic {
        let odds = self.pi / (1.0 - self.pi);
        Statistic::new((2.0 - self.m) * odds, (self.m - 1.0) * odds)
    }

    pub fn regime(&self) -> RegimeClass {
        classify_regime(self)
    }

    /// Geometric contraction factor `μ/(μ+λ)` of the value iteration.
    pub fn contraction(&self) -> f64 {
        self.mu / (self.mu + self.lambda)
    }

    /// Uniform bound `(1/c)(μ/(μ+λ))ⁿ` on `vₙ - v`.
    pub fn error_bound(&self, n: usize) -> f64 {
        self.contraction().powi(n as i32) / self.c
    }

    /// Short stable fingerprint of the parameter tuple for report headers.
    pub fn digest(&self) -> String {
        // FNV-1a over the canonical JSON form
        let text = serde_json::to_string(&self.raw()).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Parameter regimes with qualitatively different stopping regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `λ ≥ 2`: stopping on leaving the advantageous region is optimal.
    R1,
    /// `λ ∈ [1,2)`, `c ≥ 2-λ`: same conclusion.
    R2,
    /// `λ ∈ (0,1)`, `c ≥ max(2-λ, 1-λ)`: same conclusion.
    R3,
    /// `λ ∈ [1,2)`, `c < 2-λ`: boundary detaches from the line below the corner.
    R4,
    /// `λ ∈ (0,1)`, upper band of `c`: same shape as R4.
    R5,
    /// `λ ∈ (0,1)`, middle band of `c`: the set `P` is known to stop.
    R6,
    /// `λ ∈ (0,1)`, small `c`: stopping happens only at arrivals.
    R7,
}

impl Regime {
    pub fn explicit(self) -> bool {
        matches!(self, Regime::R1 | Regime::R2 | Regime::R3)
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Regime tag plus the abscissa where the free boundary leaves the line
/// `φ₀ + φ₁ = λ/c`.
///
/// `xi` is `None` in R7, where no flow started in the advantageous region
/// ever leaves it and the boundary does not share a segment with that line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeClass {
    pub regime: Regime,
    pub xi: Option<f64>,
}

/// Thresholds in `c` that separate R3, R5, R6 and R7 for `λ < 1`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SmallLambdaThresholds {
    /// `max(2-λ, 1-λ)`
    pub upper: f64,
    /// `(2-λ)(1-λ)/(3-λ-m)`
    pub middle: f64,
    /// `2(1-λ)/(3-m)`
    pub lower: f64,
}

pub(crate) fn small_lambda_thresholds(lambda: f64, m: f64) -> SmallLambdaThresholds {
    SmallLambdaThresholds {
        upper: (2.0 - lambda).max(1.0 - lambda),
        middle: (2.0 - lambda) * (1.0 - lambda) / (3.0 - lambda - m),
        lower: 2.0 * (1.0 - lambda) / (3.0 - m),
    }
}

/// Assigns the unique regime. Ties at a threshold go to the regime with the
/// explicit (stronger) conclusion.
pub fn classify_regime(params: &ModelParams) -> RegimeClass {
    let (l, c, m) = (params.lambda, params.c, params.m);
    let corner = || l * (-1.0 + (2.0 - l) / c);
    if l >= 2.0 {
        return RegimeClass {
            regime: Regime::R1,
            xi: Some(0.0),
        };
    }
    if l >= 1.0 {
        return if c >= 2.0 - l {
            RegimeClass {
                regime: Regime::R2,
                xi: Some(0.0),
            }
        } else {
            RegimeClass {
                regime: Regime::R4,
                xi: Some(corner()),
            }
        };
    }
    let th = small_lambda_thresholds(l, m);
    if c >= th.upper {
        RegimeClass {
            regime: Regime::R3,
            xi: Some(0.0),
        }
    } else if c > th.middle {
        RegimeClass {
            regime: Regime::R5,
            xi: Some(corner()),
        }
    } else if c >= th.lower {
        RegimeClass {
            regime: Regime::R6,
            xi: Some(((2.0 - l) / c + m - 3.0).max(0.0)),
        }
    } else {
        RegimeClass {
            regime: Regime::R7,
            xi: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(lambda: f64, c: f64, mu: f64, m: f64, pi: f64) -> RawParams {
        RawParams {
            lambda,
            c,
            mu,
            m,
            pi,
            marks: MarkModel::Degenerate,
        }
    }

    #[test]
    fn accepts_interior_tuple() {
        assert!(ModelParams::new(raw(1.0, 1.0, 1.0, 1.5, 0.0)).is_ok());
    }

    #[test]
    fn rejects_m_endpoint() {
        let err = ModelParams::new(raw(1.0, 1.0, 1.0, 2.0, 0.0)).unwrap_err();
        assert!(err.to_string().contains("m must lie strictly inside"));
        assert!(ModelParams::new(raw(1.0, 1.0, 1.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn rejects_unit_prior() {
        let err = ModelParams::new(raw(1.0, 1.0, 1.0, 1.5, 1.0)).unwrap_err();
        assert!(err.to_string().contains("pi"));
    }

    #[test]
    fn lists_every_violation() {
        match ModelParams::new(raw(-1.0, 0.0, f64::NAN, 3.0, -0.1)) {
            Err(Error::InvalidParams(v)) => assert_eq!(v.len(), 5, "{v:?}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_uncharged_pre_point() {
        let mut r = raw(1.0, 1.0, 1.0, 1.5, 0.0);
        r.marks = MarkModel::FiniteDiscrete {
            points: vec![1.0, 2.0],
            p0: vec![1.0, 0.0],
            p1: vec![0.5, 0.5],
        };
        let err = ModelParams::new(r).unwrap_err();
        assert!(err.to_string().contains("support point 2"));
    }

    #[test]
    fn json_defaults_and_marks() {
        let p = ModelParams::from_json(r#"{"lambda":1,"c":1,"mu":1,"m":1.5}"#).unwrap();
        assert_eq!(p.pi(), 0.0);
        assert_eq!(p.marks(), &MarkModel::Degenerate);
        let q = ModelParams::from_json(
            r#"{"lambda":1,"c":1,"mu":1,"m":1.5,"pi":0.2,"marks":{"variant":"exponential_pair","a0":1,"a1":2}}"#,
        )
        .unwrap();
        assert_eq!(q.marks(), &MarkModel::ExponentialPair { a0: 1.0, a1: 2.0 });
        let back: ModelParams = serde_json::from_str(&serde_json::to_string(&q).unwrap()).unwrap();
        assert_eq!(back, q);
        assert!(serde_json::from_str::<ModelParams>(r#"{"lambda":1,"c":1,"mu":1,"m":2}"#).is_err());
    }

    #[test]
    fn likelihood_ratio_examples() {
        assert_eq!(MarkModel::Degenerate.likelihood_ratio(3.7).unwrap(), 1.0);
        let e = MarkModel::ExponentialPair { a0: 1.0, a1: 2.0 };
        assert_eq!(e.likelihood_ratio(0.0).unwrap(), 2.0);
        assert!(e.likelihood_ratio(-1.0).is_err());
        let d = MarkModel::FiniteDiscrete {
            points: vec![1.0, 2.0],
            p0: vec![0.5, 0.5],
            p1: vec![0.25, 0.75],
        };
        assert_eq!(d.likelihood_ratio(2.0).unwrap(), 1.5);
        assert!(matches!(
            d.likelihood_ratio(3.0),
            Err(Error::MarkOutsideSupport { .. })
        ));
    }

    #[test]
    fn finite_ratio_integrates_to_one() {
        let points = vec![0.5, 1.0, 4.0];
        let p0 = vec![0.2, 0.3, 0.5];
        let p1 = vec![0.6, 0.3, 0.1];
        let d = MarkModel::FiniteDiscrete {
            points: points.clone(),
            p0: p0.clone(),
            p1,
        };
        let total: f64 = points
            .iter()
            .zip(&p0)
            .map(|(y, w)| w * d.likelihood_ratio(*y).unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exponential_ratio_integrates_to_one() {
        // composite Simpson on [0, 60] against the rate-a0 density
        for (a0, a1) in [(1.0, 2.0), (2.0, 0.5), (1.5, 1.5)] {
            let e = MarkModel::ExponentialPair { a0, a1 };
            let n = 200_000;
            let upper = 60.0 / f64::min(a0, a1);
            let h = upper / n as f64;
            let f = |y: f64| e.likelihood_ratio(y).unwrap() * a0 * (-a0 * y).exp();
            let mut acc = f(0.0) + f(upper);
            for i in 1..n {
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
            }
            let total = acc * h / 3.0;
            assert!((total - 1.0).abs() < 1e-8, "a0={a0} a1={a1} total={total}");
        }
    }

    #[test]
    fn initial_statistic_examples() {
        let p = ModelParams::simple(1.0, 1.0, 1.0, 1.5, 0.0).unwrap();
        assert_eq!(p.initial_statistic(), Statistic::new(0.0, 0.0));
        let p = ModelParams::simple(1.0, 1.0, 1.0, 1.5, 0.5).unwrap();
        assert_eq!(p.initial_statistic(), Statistic::new(0.5, 0.5));
        let p = ModelParams::simple(1.0, 1.0, 1.0, 1.9, 0.5).unwrap();
        let s = p.initial_statistic();
        assert!((s.phi0 - 0.1).abs() < 1e-12 && (s.phi1 - 0.9).abs() < 1e-12);
    }

    fn class(l: f64, c: f64, m: f64) -> RegimeClass {
        classify_regime(&ModelParams::simple(l, c, 1.0, m, 0.0).unwrap())
    }

    #[test]
    fn regime_examples() {
        for c in [0.01, 1.0, 50.0] {
            assert_eq!(
                class(2.5, c, 1.5),
                RegimeClass {
                    regime: Regime::R1,
                    xi: Some(0.0)
                }
            );
        }
        let r4 = class(1.5, 0.25, 1.5);
        assert_eq!(r4.regime, Regime::R4);
        assert!((r4.xi.unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(class(0.5, 0.2, 1.5).regime, Regime::R7);
        assert_eq!(class(1.5, 0.7, 1.5).regime, Regime::R2);
        assert_eq!(class(0.5, 1.6, 1.5).regime, Regime::R3);
    }

    #[test]
    fn regime_ties_go_to_stronger_conclusion() {
        assert_eq!(class(1.5, 0.5, 1.5).regime, Regime::R2);
        assert_eq!(class(0.5, 1.5, 1.5).regime, Regime::R3);
        let th = small_lambda_thresholds(0.5, 1.5);
        assert_eq!(class(0.5, th.middle, 1.5).regime, Regime::R6);
        assert_eq!(class(0.5, th.lower, 1.5).regime, Regime::R6);
        assert!(th.lower < th.middle && th.middle < th.upper);
    }

    #[test]
    fn r6_corner_formula() {
        // λ=0.5, m=1.5: R6 band is [2/3, 0.75]
        let r = class(0.5, 0.7, 1.5);
        assert_eq!(r.regime, Regime::R6);
        let expected = 1.5 / 0.7 + 1.5 - 3.0;
        assert!((r.xi.unwrap() - expected).abs() < 1e-12);
    }
}
