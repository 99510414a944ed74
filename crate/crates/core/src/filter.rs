//! The sufficient statistic along an observed path.
//!
//! A trajectory stores one anchor per inter-arrival segment; any intermediate
//! value is recovered exactly from the closed-form flow.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::flow::{flow, jump_update, Statistic};
use crate::model::ModelParams;
use crate::quadrature::integrate_panels;
use crate::simulate::{stream_events, Event, PathRecord};

/// `[start, end)` with the statistic at `start` (post-jump if `start` is an arrival).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub anchor: Statistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
    pub jump_times: Vec<f64>,
    pub horizon: f64,
}

/// Runs the filter from `init` over `path`.
pub fn evolve_filter(
    params: &ModelParams,
    path: &PathRecord,
    init: Statistic,
) -> Result<Trajectory> {
    if !init.is_valid() {
        return Err(Error::InvalidParams(vec![format!(
            "initial statistic {init} is not valid"
        )]));
    }
    let mut segments = Vec::with_capacity(path.len() + 1);
    let mut jump_times = Vec::with_capacity(path.len());
    let mut start = 0.0;
    let mut anchor = init;
    for ev in stream_events(path) {
        match ev? {
            Event::Arrival { index, time, mark } => {
                let before = flow(params, time - start, anchor);
                let after = jump_update(params, before, mark).map_err(|e| Error::BadEvent {
                    index,
                    source: Box::new(e),
                })?;
                segments.push(Segment {
                    start,
                    end: time,
                    anchor,
                });
                jump_times.push(time);
                start = time;
                anchor = after;
            }
            Event::End { horizon } => {
                segments.push(Segment {
                    start,
                    end: horizon,
                    anchor,
                });
            }
        }
    }
    Ok(Trajectory {
        segments,
        jump_times,
        horizon: path.horizon,
    })
}

impl Trajectory {
    fn segment_index(&self, t: f64) -> usize {
        // Last segment whose start is ≤ t; zero-length segments at t=0 are skipped over.
        self.segments
            .partition_point(|s| s.start <= t)
            .saturating_sub(1)
    }

    /// Right-continuous value at `t ∈ [0, horizon]`.
    pub fn statistic_at(&self, params: &ModelParams, t: f64) -> Result<Statistic> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let seg = &self.segments[self.segment_index(t)];
        Ok(flow(params, t - seg.start, seg.anchor))
    }

    /// Left limit at `t ∈ (0, horizon]`.
    pub fn statistic_before(&self, params: &ModelParams, t: f64) -> Result<Statistic> {
        if !(t > 0.0 && t <= self.horizon) {
            return Err(Error::TimeOutOfRange {
                t,
                horizon: self.horizon,
            });
        }
        let i = self.segments.partition_point(|s| s.start < t) - 1;
        let seg = &self.segments[i];
        Ok(flow(params, t - seg.start, seg.anchor))
    }

    /// `∫₀^τ e^{-λt} g(Φ̃_t) dt` with `g = φ₀ + φ₁ − λ/c`, exactly per segment.
    pub fn discounted_cost_until(&self, params: &ModelParams, tau: f64) -> f64 {
        let l = params.lambda();
        let tau = tau.min(self.horizon);
        let mut total = 0.0;
        for seg in &self.segments {
            if seg.start >= tau {
                break;
            }
            let len = seg.end.min(tau) - seg.start;
            total += (-l * seg.start).exp() * discounted_cost(params, seg.anchor, len);
        }
        total
    }

    /// Rows `(t, φ₀, φ₁, posterior)` every `spacing` plus both sides of each jump.
    pub fn samples(&self, params: &ModelParams, spacing: f64) -> Vec<(f64, Statistic)> {
        let mut rows = Vec::new();
        for seg in &self.segments {
            let mut k = (seg.start / spacing).ceil() as u64;
            rows.push((seg.start, seg.anchor));
            loop {
                let t = k as f64 * spacing;
                if t >= seg.end {
                    break;
                }
                if t > seg.start {
                    rows.push((t, flow(params, t - seg.start, seg.anchor)));
                }
                k += 1;
            }
            if seg.end > seg.start || seg.end == self.horizon {
                rows.push((seg.end, flow(params, seg.end - seg.start, seg.anchor)));
            }
        }
        rows.dedup_by(|a, b| a.0 == b.0 && a.1 == b.1);
        rows
    }

    pub fn write_csv<W: Write>(
        &self,
        params: &ModelParams,
        spacing: f64,
        mut out: W,
    ) -> Result<()> {
        writeln!(out, "t,phi0,phi1,posterior")?;
        for (t, s) in self.samples(params, spacing) {
            writeln!(out, "{t},{},{},{}", s.phi0, s.phi1, posterior(s))?;
        }
        Ok(())
    }
}

/// Posterior probability of `{θ ≤ t}`.
pub fn posterior(s: Statistic) -> f64 {
    let odds = s.sum();
    odds / (1.0 + odds)
}

/// `(Φ⁽⁰⁾, Φ⁽¹⁾) = (φ₀ + φ₁, φ₀ + 2φ₁)`.
pub fn odds_reconstruct(s: Statistic) -> (f64, f64) {
    (s.phi0 + s.phi1, s.phi0 + 2.0 * s.phi1)
}

pub fn odds_inverse(big0: f64, big1: f64) -> Statistic {
    Statistic::new(2.0 * big0 - big1, big1 - big0)
}

/// Below this distance from 1 (or 2) the closed form loses digits to cancellation.
const NEAR_BRANCH: f64 = 1e-3;

/// `∫₀^L e^{-κt} u(t) dt` where `u' = inflow + (κ - ω) u`, `u(0) = u0`.
fn discounted_coordinate(kappa: f64, omega: f64, inflow: f64, u0: f64, len: f64) -> f64 {
    let rate = kappa - omega;
    if rate.abs() < NEAR_BRANCH {
        let f = |t: f64| {
            let kt = rate * t;
            let e = if kt == 0.0 { 1.0 } else { kt.exp_m1() / kt };
            (-kappa * t).exp() * (u0 * kt.exp() + inflow * t * e)
        };
        return integrate_panels(f, 0.0, len, 1.0 / omega.max(kappa));
    }
    // u = u∞ + (u0 − u∞) e^{rate t}, with u∞ = -inflow / rate.
    let u_inf = -inflow / rate;
    u_inf * (-(-kappa * len).exp_m1()) / kappa + (u0 - u_inf) * (-(-omega * len).exp_m1()) / omega
}

/// `∫₀^L e^{-λt} g(flow(t, s)) dt`.
pub fn discounted_cost(params: &ModelParams, s: Statistic, len: f64) -> f64 {
    if len <= 0.0 {
        return 0.0;
    }
    let l = params.lambda();
    let m = params.m();
    let x = discounted_coordinate(l, 1.0, l * (2.0 - m), s.phi0, len);
    let y = discounted_coordinate(l, 2.0, l * (m - 1.0), s.phi1, len);
    x + y + (-l * len).exp_m1() / params.c()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::drift;
    use crate::rng::replication_seed;
    use crate::simulate::sample_path_p;
    use proptest::prelude::*;

    fn rec(arrivals: Vec<f64>, horizon: f64) -> PathRecord {
        PathRecord {
            seed: 0,
            horizon,
            marks: vec![1.0; arrivals.len()],
            arrivals,
            hidden: None,
        }
    }

    #[test]
    fn no_arrivals_single_segment() {
        let p = ModelParams::simple(0.7, 1.0, 1.0, 1.3, 0.0).unwrap();
        let init = Statistic::new(0.2, 0.1);
        let tr = evolve_filter(&p, &rec(vec![], 4.0), init).unwrap();
        assert_eq!(tr.segments.len(), 1);
        for t in [0.0, 1.3, 4.0] {
            assert_eq!(tr.statistic_at(&p, t).unwrap(), flow(&p, t, init));
        }
        assert_eq!(tr.statistic_at(&p, 0.0).unwrap(), init);
        assert!(tr.statistic_at(&p, 4.01).is_err());
        assert!(tr.statistic_at(&p, -0.1).is_err());
    }

    #[test]
    fn jump_factors() {
        let p = ModelParams::simple(0.7, 1.0, 1.0, 1.3, 0.0).unwrap();
        let init = Statistic::new(1.0, 1.0);
        let tr = evolve_filter(&p, &rec(vec![0.8], 2.0), init).unwrap();
        let pre = flow(&p, 0.8, init);
        let post = tr.statistic_at(&p, 0.8).unwrap();
        assert!((post.phi0 - 2.0 * pre.phi0).abs() < 1e-15);
        assert!((post.phi1 - 3.0 * pre.phi1).abs() < 1e-15);
        assert_eq!(tr.statistic_before(&p, 0.8).unwrap(), pre);
        assert_eq!(tr.segments[1].start, 0.8);
        assert_eq!(tr.segments[0].end, 0.8);
    }

    #[test]
    fn unit_lambda_fixture() {
        // λ=1: x(t) = x0 + λ(2-m) t, y(t) = y0 e^{-t} + λ(m-1)(1-e^{-t}).
        let p = ModelParams::simple(1.0, 1.0, 1.0, 1.5, 0.0).unwrap();
        let tr = evolve_filter(&p, &rec(vec![1.0], 2.0), Statistic::ORIGIN).unwrap();
        let pre = tr.statistic_before(&p, 1.0).unwrap();
        assert!((pre.phi0 - 0.5).abs() < 1e-15);
        assert!((pre.phi1 - 0.316_060_279_414_278_83).abs() < 1e-15);
        let post = tr.statistic_at(&p, 1.0).unwrap();
        assert!((post.phi0 - 1.0).abs() < 1e-15);
        assert!((post.phi1 - 0.948_180_838_242_836_5).abs() < 1e-15);
    }

    #[test]
    fn bad_mark_names_event() {
        let p = ModelParams::new(crate::model::RawParams {
            marks: crate::model::MarkModel::ExponentialPair { a0: 1.0, a1: 2.0 },
            ..ModelParams::simple(0.7, 1.0, 1.0, 1.3, 0.0).unwrap().raw()
        })
        .unwrap();
        let mut path = rec(vec![0.5, 1.0, 1.5], 2.0);
        path.marks[2] = -1.0;
        match evolve_filter(&p, &path, Statistic::ORIGIN) {
            Err(Error::BadEvent { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn posterior_values() {
        assert_eq!(posterior(Statistic::ORIGIN), 0.0);
        assert!((posterior(Statistic::new(1.0, 1.0)) - 2.0 / 3.0).abs() < 1e-15);
        let mut prev = -1.0;
        for k in 0..40 {
            let v = posterior(Statistic::new(1.5f64.powi(k), 0.0));
            assert!(v > prev && v < 1.0);
            prev = v;
        }
    }

    #[test]
    fn odds_examples() {
        assert_eq!(odds_reconstruct(Statistic::ORIGIN), (0.0, 0.0));
        assert_eq!(odds_reconstruct(Statistic::new(1.0, 1.0)), (2.0, 3.0));
    }

    #[test]
    fn discounted_cost_matches_quadrature() {
        for &(l, m) in &[
            (0.5, 1.3),
            (1.0, 1.5),
            (1.0005, 1.2),
            (1.5, 1.7),
            (2.0, 1.5),
            (2.5, 1.1),
            (1.9995, 1.4),
        ] {
            let p = ModelParams::simple(l, 0.7, 1.0, m, 0.0).unwrap();
            let s = Statistic::new(0.3, 1.1);
            for len in [0.01, 0.7, 5.0] {
                let n = 200_000;
                let h = len / n as f64;
                let f = |t: f64| (-l * t).exp() * (flow(&p, t, s).sum() - p.level());
                let simpson: f64 = (0..n)
                    .map(|i| {
                        let a = i as f64 * h;
                        h / 6.0 * (f(a) + 4.0 * f(a + h / 2.0) + f(a + h))
                    })
                    .sum();
                let got = discounted_cost(&p, s, len);
                assert!(
                    (got - simpson).abs() < 1e-10 * (1.0 + simpson.abs()),
                    "l={l} len={len}: {got} vs {simpson}"
                );
            }
        }
    }

    #[test]
    fn trajectory_cost_adds_segments() {
        let p = ModelParams::simple(0.8, 1.0, 1.0, 1.4, 0.0).unwrap();
        let tr = evolve_filter(&p, &rec(vec![0.5, 1.25], 3.0), Statistic::new(0.1, 0.1)).unwrap();
        let n = 300_000;
        let h = 2.0 / n as f64;
        let brute: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                (-0.8 * t).exp() * (tr.statistic_at(&p, t).unwrap().sum() - p.level()) * h
            })
            .sum();
        assert!((tr.discounted_cost_until(&p, 2.0) - brute).abs() < 1e-8);
    }

    #[test]
    fn csv_has_both_sides_of_jumps() {
        let p = ModelParams::simple(0.8, 1.0, 1.0, 1.4, 0.0).unwrap();
        let tr = evolve_filter(&p, &rec(vec![0.55], 1.0), Statistic::new(0.1, 0.1)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&p, 0.25, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let times: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(times, vec![0.0, 0.25, 0.5, 0.55, 0.55, 0.75, 1.0]);
    }

    #[test]
    fn calibration() {
        let p = ModelParams::simple(0.5, 1.0, 1.0, 1.5, 0.1).unwrap();
        let t = 1.5;
        let bins = 10;
        let mut count = vec![0usize; bins];
        let mut hits = vec![0usize; bins];
        let mut mean = vec![0.0; bins];
        for i in 0..10_000 {
            let path = sample_path_p(&p, t, replication_seed(404, i)).unwrap();
            let tr = evolve_filter(&p, &path, p.initial_statistic()).unwrap();
            let q = posterior(tr.statistic_at(&p, t).unwrap());
            let b = ((q * bins as f64) as usize).min(bins - 1);
            count[b] += 1;
            mean[b] += q;
            hits[b] += usize::from(path.hidden.unwrap().theta <= t);
        }
        for b in 0..bins {
            if count[b] < 30 {
                continue;
            }
            let n = count[b] as f64;
            let q = mean[b] / n;
            let freq = hits[b] as f64 / n;
            let se = (q * (1.0 - q) / n).sqrt();
            assert!(
                (freq - q).abs() <= 3.0 * se,
                "bin {b}: freq {freq} vs {q} (se {se})"
            );
        }
    }

    proptest! {
        #[test]
        fn odds_round_trip(a in 0.0f64..50.0, b in 0.0f64..50.0) {
            let s = Statistic::new(a, b);
            let (o0, o1) = odds_reconstruct(s);
            let back = odds_inverse(o0, o1);
            prop_assert!((back.phi0 - a).abs() <= 1e-14 * (1.0 + a + b));
            prop_assert!((back.phi1 - b).abs() <= 1e-14 * (1.0 + a + b));
        }

        #[test]
        fn drift_matches_difference_quotient(
            l in 0.2f64..3.0, m in 1.0f64..2.0, seed in 0u64..1000, u in 0.0f64..1.0
        ) {
            let p = ModelParams::simple(l, 1.0, 1.0, m, 0.2).unwrap();
            let path = sample_path_p(&p, 5.0, seed).unwrap();
            let tr = evolve_filter(&p, &path, p.initial_statistic()).unwrap();
            let h = 1e-6;
            let t = u * (5.0 - h);
            let crosses = tr.jump_times.iter().any(|&j| j > t && j <= t + h);
            prop_assume!(!crosses);
            let a = tr.statistic_at(&p, t).unwrap();
            let b = tr.statistic_at(&p, t + h).unwrap();
            let d = drift(&p, a);
            let scale = 1.0 + a.phi0.abs() + a.phi1.abs();
            prop_assert!(((b.phi0 - a.phi0) / h - d[0]).abs() < 1e-4 * scale);
            prop_assert!(((b.phi1 - a.phi1) / h - d[1]).abs() < 1e-4 * scale);
            prop_assert!(posterior(b) >= 0.0 && posterior(b) < 1.0);
        }

        #[test]
        fn jumps_increase_both(seed in 0u64..500) {
            let p = ModelParams::simple(0.9, 1.0, 1.0, 1.5, 0.3).unwrap();
            let path = sample_path_p(&p, 5.0, seed).unwrap();
            let tr = evolve_filter(&p, &path, p.initial_statistic()).unwrap();
            for &j in &tr.jump_times {
                let a = tr.statistic_before(&p, j).unwrap();
                let b = tr.statistic_at(&p, j).unwrap();
                prop_assert!(b.phi0 > a.phi0 && b.phi1 > a.phi1);
            }
        }
    }
}
