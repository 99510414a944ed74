use crate::flow::{flow, jump_with_ratio, running_cost, Statistic};
use crate::model::{MarkModel, ModelParams};
use crate::quadrature::gl64;

use super::{GridSpec, StateFunction};

const EXP_MAP_POWER: f64 = 8.0;

/// `S f(s) = ∫ f(jump(s, y)) β₀(dy)`.
///
/// For exponential marks the half-line is mapped to `[0, 1]` by
/// `e^{-a₀y} = (1 - w)^Q`, which absorbs the density as the weight
/// `Q(1 - w)^{Q-1}`, and integrated with the 64-point Gauss–Legendre rule.
/// The power `Q` turns the algebraic endpoint behaviour of `r(y(w))` at
/// `w = 1` into a high-order zero.
pub fn operator_s<F: StateFunction + ?Sized>(params: &ModelParams, f: &F, s: Statistic) -> f64 {
    match params.marks() {
        MarkModel::Degenerate => f.value(jump_with_ratio(params, s, 1.0)),
        MarkModel::FiniteDiscrete { p0, p1, .. } => p0
            .iter()
            .zip(p1)
            .map(|(q0, q1)| q0 * f.value(jump_with_ratio(params, s, q1 / q0)))
            .sum(),
        MarkModel::ExponentialPair { a0, a1 } => {
            let (x, w) = gl64();
            x.iter()
                .zip(w)
                .map(|(xi, wi)| {
                    let w = 0.5 * (xi + 1.0);
                    let y = -EXP_MAP_POWER * (-w).ln_1p() / a0;
                    let r = (a1 / a0) * (-(a1 - a0) * y).exp();
                    let density = EXP_MAP_POWER * (1.0 - w).powf(EXP_MAP_POWER - 1.0);
                    0.5 * wi * density * f.value(jump_with_ratio(params, s, r))
                })
                .sum()
        }
    }
}

/// `g(s) + μ S f(s)`.
pub fn running_integrand<F: StateFunction + ?Sized>(
    params: &ModelParams,
    f: &F,
    s: Statistic,
) -> f64 {
    running_cost(params, s) + params.mu() * operator_s(params, f, s)
}

/// Infimum of `t ↦ J f(t, s)` and where it is attained (`+∞` for the tail).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Minimum {
    pub value: f64,
    pub time: f64,
}

/// `I(t) = ∫₀ᵗ e^{-(λ+μ)u} h(flow(u, s)) du` on a uniform time grid, with
/// panel-local Simpson evaluation between nodes.
pub(crate) struct PathIntegral<'a, F: StateFunction + ?Sized> {
    params: &'a ModelParams,
    f: &'a F,
    s: Statistic,
    dt: f64,
    rate: f64,
    /// Discounted integrand at the nodes.
    w: Vec<f64>,
    /// Cumulative integral at the nodes.
    cum: Vec<f64>,
}

impl<'a, F: StateFunction + ?Sized> PathIntegral<'a, F> {
    pub(crate) fn new(
        params: &'a ModelParams,
        f: &'a F,
        s: Statistic,
        dt: f64,
        t_end: f64,
    ) -> Self {
        let steps = (t_end / dt).ceil().max(1.0) as usize;
        let rate = params.total_rate();
        let mut out = PathIntegral {
            params,
            f,
            s,
            dt,
            rate,
            w: Vec::with_capacity(steps + 1),
            cum: Vec::with_capacity(steps + 1),
        };
        let mut acc = 0.0;
        let mut w_prev = out.integrand(0.0);
        out.w.push(w_prev);
        out.cum.push(0.0);
        for k in 0..steps {
            let t = k as f64 * dt;
            let w_mid = out.integrand(t + 0.5 * dt);
            let w_next = out.integrand(t + dt);
            acc += dt / 6.0 * (w_prev + 4.0 * w_mid + w_next);
            out.w.push(w_next);
            out.cum.push(acc);
            w_prev = w_next;
        }
        out
    }

    fn integrand(&self, t: f64) -> f64 {
        (-self.rate * t).exp()
            * running_integrand(self.params, self.f, flow(self.params, t, self.s))
    }

    pub(crate) fn node_time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub(crate) fn last(&self) -> usize {
        self.cum.len() - 1
    }

    /// `I(t)` for `t` in the gridded range.
    pub(crate) fn eval(&self, t: f64) -> f64 {
        let k = ((t / self.dt) as usize).min(self.last());
        let tk = self.node_time(k);
        let d = t - tk;
        if d <= 0.0 || k == self.last() {
            return self.cum[k];
        }
        self.cum[k] + d / 6.0 * (self.w[k] + 4.0 * self.integrand(tk + 0.5 * d) + self.integrand(t))
    }

    /// Value of never stopping: `I(T)` plus the tail `h(flow(T)) e^{-(λ+μ)T}/(λ+μ)`.
    pub(crate) fn infinite(&self) -> f64 {
        self.cum[self.last()] + self.w[self.last()] / self.rate
    }

    /// `inf_{t ∈ [t0, ∞]} I(t)`.
    pub(crate) fn minimize_from(&self, t0: f64) -> Minimum {
        let first = ((t0 / self.dt).floor() as usize + 1).min(self.last() + 1);
        let mut times = Vec::with_capacity(self.last() + 2 - first);
        let mut vals = Vec::with_capacity(times.capacity());
        times.push(t0);
        vals.push(self.eval(t0));
        for k in first..=self.last() {
            let t = self.node_time(k);
            if t > t0 {
                times.push(t);
                vals.push(self.cum[k]);
            }
        }
        let n = vals.len();
        let mut best = Minimum {
            value: self.infinite(),
            time: f64::INFINITY,
        };
        for (&t, &v) in times.iter().zip(&vals) {
            if v < best.value {
                best = Minimum { value: v, time: t };
            }
        }

        // Golden-section refinement around the lowest discrete local minima.
        let mut local: Vec<usize> = (0..n)
            .filter(|&k| {
                (k == 0 || vals[k] <= vals[k - 1]) && (k + 1 == n || vals[k] <= vals[k + 1])
            })
            .collect();
        local.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        local.truncate(3);
        for k in local {
            let lo = times[k.saturating_sub(1)];
            let hi = times[(k + 1).min(n - 1)];
            if hi > lo {
                let (t, v) = golden(|t| self.eval(t), lo, hi);
                if v < best.value {
                    best = Minimum { value: v, time: t };
                }
            }
        }
        best
    }
}

fn golden(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > 1e-8 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn clamp(params: &ModelParams, m: Minimum) -> Minimum {
    Minimum {
        value: m.value.clamp(-1.0 / params.c(), 0.0),
        time: m.time,
    }
}

/// `J₀ f(s) = inf_{t ∈ [0, ∞]} J f(t, s)`, clamped to `[-1/c, 0]`.
pub fn operator_j0<F: StateFunction + ?Sized>(
    params: &ModelParams,
    f: &F,
    spec: &GridSpec,
    s: Statistic,
) -> Minimum {
    let pi = PathIntegral::new(params, f, s, spec.time_step, spec.time_horizon(params));
    clamp(params, pi.minimize_from(0.0))
}

/// `J_t f(s) = inf_{u ∈ [t, ∞]} J f(u, s)` on a time grid anchored at zero.
pub fn operator_jt<F: StateFunction + ?Sized>(
    params: &ModelParams,
    f: &F,
    spec: &GridSpec,
    s: Statistic,
    t: f64,
) -> Minimum {
    let pi = PathIntegral::new(params, f, s, spec.time_step, t + spec.time_horizon(params));
    pi.minimize_from(t)
}

/// `J f(t, s) = I(t)` evaluated on a grid anchored at zero.
pub(crate) fn operator_j_at<F: StateFunction + ?Sized>(
    params: &ModelParams,
    f: &F,
    spec: &GridSpec,
    s: Statistic,
    t: f64,
) -> f64 {
    PathIntegral::new(params, f, s, spec.time_step, t.max(spec.time_step)).eval(t)
}
