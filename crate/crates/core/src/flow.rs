//! Deterministic motion of the sufficient statistic between arrivals, the
//! multiplicative update at arrivals, and the closed-form geometry of the
//! stopping problem (the line `l`, the advantageous region and the regions
//! known to lie inside or outside the stopping set).
//!
//! Between arrivals each coordinate solves a linear ODE,
//!
//! ```text
//! dφ₀/dt = λ(2-m) + (λ-1) φ₀
//! dφ₁/dt = λ(m-1) + (λ-2) φ₁
//! ```
//!
//! so flows are evaluated in closed form for any signed time.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{small_lambda_thresholds, ModelParams, Regime, RegimeClass};

/// Distance from 1 or 2 below which `λ` selects the linear flow branch.
const BRANCH_TOL: f64 = 1e-12;
/// Absolute time tolerance of root bracketing.
const ROOT_TOL: f64 = 1e-12;

/// A point `(φ₀, φ₁)` of the sufficient statistic.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Statistic {
    pub phi0: f64,
    pub phi1: f64,
}

impl Statistic {
    pub const ORIGIN: Statistic = Statistic {
        phi0: 0.0,
        phi1: 0.0,
    };

    pub const fn new(phi0: f64, phi1: f64) -> Self {
        Statistic { phi0, phi1 }
    }

    /// `φ₀ + φ₁`, the posterior odds of `{θ ≤ t}`.
    pub fn sum(&self) -> f64 {
        self.phi0 + self.phi1
    }

    pub fn is_valid(&self) -> bool {
        self.phi0.is_finite() && self.phi1.is_finite() && self.phi0 >= 0.0 && self.phi1 >= 0.0
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.phi0, self.phi1)
    }
}

/// Solution of `u' = inflow + rate·u` after time `t`.
#[inline]
fn linear_flow(rate: f64, inflow: f64, t: f64, u0: f64) -> f64 {
    let kt = rate * t;
    if rate.abs() < BRANCH_TOL {
        u0 + inflow * t
    } else if kt == 0.0 {
        u0
    } else {
        u0 * kt.exp() + inflow * t * (kt.exp_m1() / kt)
    }
}

#[inline]
fn rates(params: &ModelParams) -> (f64, f64, f64, f64) {
    let l = params.lambda();
    let m = params.m();
    let k0 = if (l - 1.0).abs() < BRANCH_TOL {
        0.0
    } else {
        l - 1.0
    };
    let k1 = if (l - 2.0).abs() < BRANCH_TOL {
        0.0
    } else {
        l - 2.0
    };
    (k0, l * (2.0 - m), k1, l * (m - 1.0))
}

/// Position after running the between-arrival dynamics for signed time `t`.
#[inline]
pub fn flow(params: &ModelParams, t: f64, s: Statistic) -> Statistic {
    let (k0, a0, k1, a1) = rates(params);
    Statistic {
        phi0: linear_flow(k0, a0, t, s.phi0),
        phi1: linear_flow(k1, a1, t, s.phi1),
    }
}

/// Velocity of the between-arrival dynamics at `s`.
pub fn drift(params: &ModelParams, s: Statistic) -> [f64; 2] {
    let l = params.lambda();
    let m = params.m();
    [
        l * (2.0 - m) + (l - 1.0) * s.phi0,
        l * (m - 1.0) + (l - 2.0) * s.phi1,
    ]
}

/// Update at an arrival carrying mark `y`.
pub fn jump_update(params: &ModelParams, s: Statistic, y: f64) -> Result<Statistic> {
    let r = params.likelihood_ratio(y)?;
    Ok(jump_with_ratio(params, s, r))
}

#[inline]
pub(crate) fn jump_with_ratio(params: &ModelParams, s: Statistic, r: f64) -> Statistic {
    let mu = params.mu();
    Statistic {
        phi0: (1.0 + 1.0 / mu) * r * s.phi0,
        phi1: (1.0 + 2.0 / mu) * r * s.phi1,
    }
}

/// `(λ-1)φ₀ + (λ-2)φ₁ + λ`: the time derivative of `φ₀ + φ₁` along the flow.
/// Zero exactly on the line `l`.
pub fn line_l_value(params: &ModelParams, s: Statistic) -> f64 {
    let l = params.lambda();
    (l - 1.0) * s.phi0 + (l - 2.0) * s.phi1 + l
}

/// Membership in the advantageous region `{φ₀ + φ₁ ≤ λ/c}` (closed).
pub fn in_advantageous(params: &ModelParams, s: Statistic) -> bool {
    s.sum() <= params.level()
}

/// Running cost `g(φ₀, φ₁) = φ₀ + φ₁ - λ/c`.
#[inline]
pub fn running_cost(params: &ModelParams, s: Statistic) -> f64 {
    s.sum() - params.level()
}

/// Fixed point of the between-arrival flow, which exists for `λ < 1`.
pub fn mean_reversion_level(params: &ModelParams) -> Option<Statistic> {
    let l = params.lambda();
    let m = params.m();
    (l < 1.0).then(|| Statistic::new(l * (2.0 - m) / (1.0 - l), l * (m - 1.0) / (2.0 - l)))
}

/// First `t ≥ 0` at which the deterministic flow from `s` reaches
/// `φ₀ + φ₁ ≥ λ/c`, or `+∞` if it never does.
pub fn deterministic_exit_time(params: &ModelParams, s: Statistic) -> f64 {
    first_sum_crossing(params, s, params.level(), f64::INFINITY).unwrap_or(f64::INFINITY)
}

/// First `t ∈ [0, t_max]` with `φ₀ + φ₁ ≥ level` along the flow from `s`.
///
/// The time derivative of the sum is a combination of two exponentials (or an
/// exponential and a constant on the linear branches), so it changes sign at
/// most once. That lets every case be settled by bracketing a single
/// critical time instead of scanning.
pub fn first_sum_crossing(
    params: &ModelParams,
    s: Statistic,
    level: f64,
    t_max: f64,
) -> Option<f64> {
    let excess = |t: f64| flow(params, t, s).sum() - level;
    let slope = |t: f64| line_l_value(params, flow(params, t, s));
    if excess(0.0) >= 0.0 {
        return Some(0.0);
    }
    if t_max.is_finite() {
        return crossing_on(&excess, &slope, 0.0, t_max);
    }

    let l = params.lambda();
    let scale = 1.0 / params.total_rate();
    if l >= 1.0 {
        // the φ₀ coordinate grows without bound
        let mut hi = scale;
        while hi < 1e12 {
            if let Some(t) = crossing_on(&excess, &slope, 0.0, hi) {
                return Some(t);
            }
            hi *= 2.0;
        }
        return None;
    }

    let fixed = mean_reversion_level(params).expect("λ < 1");
    let limit = fixed.sum() - level;
    let dx = s.phi0 - fixed.phi0;
    let dy = s.phi1 - fixed.phi1;
    // sign of the slope as t → ∞ is set by the slower mode (rate λ-1)
    let tail_sign = if dx != 0.0 {
        ((l - 1.0) * dx).signum()
    } else {
        ((l - 2.0) * dy).signum()
    };
    let d0 = slope(0.0);
    let bracket_hi = |pred: &dyn Fn(f64) -> bool| -> Option<f64> {
        let mut hi = scale;
        while hi < 1e12 {
            if pred(hi) {
                return Some(hi);
            }
            hi *= 2.0;
        }
        None
    };

    if d0 >= 0.0 && tail_sign >= 0.0 {
        if limit > 0.0 {
            let hi = bracket_hi(&|t| excess(t) >= 0.0)?;
            Some(bisect_first(&excess, 0.0, hi))
        } else {
            None
        }
    } else if d0 <= 0.0 && tail_sign <= 0.0 {
        None
    } else if d0 > 0.0 {
        let hi = bracket_hi(&|t| slope(t) <= 0.0)?;
        let peak = bisect_root(&slope, 0.0, hi);
        (excess(peak) >= 0.0).then(|| bisect_first(&excess, 0.0, peak))
    } else {
        if limit <= 0.0 {
            return None;
        }
        let hi = bracket_hi(&|t| slope(t) >= 0.0 && excess(t) >= 0.0)?;
        Some(bisect_first(&excess, 0.0, hi))
    }
}

fn crossing_on(
    excess: &dyn Fn(f64) -> f64,
    slope: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
) -> Option<f64> {
    let da = slope(a);
    let db = slope(b);
    if (da >= 0.0) == (db >= 0.0) || da == 0.0 || db == 0.0 {
        // monotone on [a, b]
        return (excess(b) >= 0.0).then(|| bisect_first(excess, a, b));
    }
    let tc = bisect_root(slope, a, b);
    if da > 0.0 {
        (excess(tc) >= 0.0).then(|| bisect_first(excess, a, tc))
    } else {
        (excess(b) >= 0.0).then(|| bisect_first(excess, tc, b))
    }
}

/// Smallest `t` in `[a, b]` with `f(t) ≥ 0`, given `f(a) < 0 ≤ f(b)`.
pub(crate) fn bisect_first(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Sign change of `f` on `[a, b]`.
fn bisect_root(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let lo_pos = f(lo) > 0.0;
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if (f(mid) > 0.0) == lo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Closed-form landmarks of the stopping problem for one parameter tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub class: RegimeClass,
    /// Intersection of the line `l` with `φ₀ + φ₁ = λ/c` (R4, R5).
    pub corner: Option<Statistic>,
    /// Time for the flow from the origin to reach the corner abscissa.
    pub corner_time: Option<f64>,
    /// `φ₁`-intercept of the flow curve through the corner, i.e. the point
    /// `(0, η)` whose forward flow touches the corner. Bounds the
    /// continuation region from above for `φ₀` left of the corner.
    pub intercept: Option<f64>,
    /// Fixed point of the between-arrival flow (`λ < 1`).
    pub mean_reversion: Option<Statistic>,
}

/// Computes the corner, the flow curve through it, and the fixed point.
pub fn region_spec(params: &ModelParams) -> RegionSpec {
    let class = params.regime();
    let mean_reversion = mean_reversion_level(params);
    let (mut corner, mut corner_time, mut intercept) = (None, None, None);
    if matches!(class.regime, Regime::R4 | Regime::R5) {
        let l = params.lambda();
        let c = params.c();
        let star = Statistic::new(l * (-1.0 + (2.0 - l) / c), l * (1.0 + (l - 1.0) / c));
        corner = Some(star);
        let inflow = l * (2.0 - params.m());
        let t_star = if (l - 1.0).abs() < BRANCH_TOL {
            Some(star.phi0 / inflow)
        } else {
            let k0 = l - 1.0;
            let arg = k0 * star.phi0 / inflow;
            (arg > -1.0).then(|| arg.ln_1p() / k0)
        };
        if let Some(t) = t_star {
            corner_time = Some(t);
            intercept = Some(flow(params, -t, star).phi1);
        }
    }
    RegionSpec {
        class,
        corner,
        corner_time,
        intercept,
        mean_reversion,
    }
}

/// Coordinate extent of a closed-form superset of the continuation region.
/// Every point with a coordinate beyond this value is known to stop.
pub fn continuation_extent(params: &ModelParams) -> f64 {
    let level = params.level();
    match params.regime().regime {
        Regime::R1 | Regime::R2 | Regime::R3 => level,
        Regime::R4 | Regime::R5 => {
            let spec = region_spec(params);
            level.max(spec.intercept.unwrap_or(level))
        }
        Regime::R6 | Regime::R7 => level.max(2.0 * jump_set_offset(params)),
    }
}

/// `1/c + m/2 - 3/2`; the set `P` (and `R`) is `φ₀ + φ₁/2 ≥` this value.
fn jump_set_offset(params: &ModelParams) -> f64 {
    1.0 / params.c() + 0.5 * params.m() - 1.5
}

/// Closed-form sets of the stopping analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    /// Superset of the continuation region in R4/R5.
    D,
    /// Known stopping set in R6.
    P,
    /// Set whose hitting time bounds the optimal time from above in R7.
    R,
    /// Entrance segment of the free boundary on `φ₀+φ₁ = λ/c` in R4.
    H,
    /// Exit segment of the free boundary on `φ₀+φ₁ = λ/c` in R6.
    F,
    /// Entrance segment of the free boundary on `φ₀+φ₁ = λ/c` in R5.
    A,
    /// Strip between the advantageous region and the line `l` in R3.
    Sh,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::D,
        Region::P,
        Region::R,
        Region::H,
        Region::F,
        Region::A,
        Region::Sh,
    ];

    /// Regimes in which the set is defined.
    pub fn regimes(self) -> &'static [Regime] {
        match self {
            Region::D => &[Regime::R4, Regime::R5],
            Region::P | Region::F => &[Regime::R6],
            Region::R => &[Regime::R7],
            Region::H => &[Regime::R4],
            Region::A => &[Regime::R5],
            Region::Sh => &[Regime::R3],
        }
    }

    fn regimes_label(self) -> &'static str {
        match self {
            Region::D => "R4 or R5",
            Region::P | Region::F => "R6",
            Region::R => "R7",
            Region::H => "R4",
            Region::A => "R5",
            Region::Sh => "R3",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::D => "D",
            Region::P => "P",
            Region::R => "R",
            Region::H => "H",
            Region::F => "F",
            Region::A => "A",
            Region::Sh => "Sh",
        }
    }
}

/// Whether `s` lies in `which`. Boundary points count as inside.
pub fn closed_form_membership(params: &ModelParams, s: Statistic, which: Region) -> Result<bool> {
    let class = params.regime();
    if !which.regimes().contains(&class.regime) {
        return Err(Error::RegionUndefined {
            region: which.name(),
            required: which.regimes_label(),
            actual: class.regime.to_string(),
        });
    }
    let l = params.lambda();
    let c = params.c();
    let level = params.level();
    let tol = 1e-9 * level.max(1.0);
    let on_line = (s.sum() - level).abs() <= tol;
    let inside = match which {
        Region::D => {
            let spec = region_spec(params);
            let corner = spec.corner.expect("corner exists in R4/R5");
            let top = spec.intercept.unwrap_or(level);
            if s.phi0 <= corner.phi0 {
                s.sum() <= top
            } else {
                s.sum() <= level
            }
        }
        Region::P => s.phi0 + 0.5 * s.phi1 - jump_set_offset(params) >= 0.0 && s.sum() >= level,
        Region::R => s.phi0 + 0.5 * s.phi1 - jump_set_offset(params) >= 0.0,
        Region::H => on_line && s.phi1 <= l * (1.0 + (l - 1.0) / c) + tol,
        Region::F => on_line && s.phi1 <= 2.0 * (-(1.0 - l) / c + 0.5 * (3.0 - params.m())) + tol,
        Region::A => on_line && s.phi1 <= l * (1.0 - (1.0 - l) / c) + tol,
        Region::Sh => s.sum() >= level && line_l_value(params, s) <= 0.0,
    };
    Ok(inside)
}

/// Upper end in `φ₁` of the boundary segment shared with `φ₀+φ₁ = λ/c`,
/// when the regime has one. The segment runs from `(ξ, λ/c-ξ)` to `(λ/c, 0)`.
pub fn shared_segment(params: &ModelParams) -> Option<(Statistic, Statistic)> {
    let xi = params.regime().xi?;
    let level = params.level();
    (xi < level).then(|| (Statistic::new(xi, level - xi), Statistic::new(level, 0.0)))
}

/// `c`-thresholds that delimit R5/R6/R7 for the current `λ, m`.
pub fn small_lambda_cuts(params: &ModelParams) -> Option<[f64; 3]> {
    (params.lambda() < 1.0).then(|| {
        let th = small_lambda_thresholds(params.lambda(), params.m());
        [th.lower, th.middle, th.upper]
    })
}
