//! Stopping rules applied to filtered trajectories, and Monte Carlo
//! estimation of their Bayes risk `P{τ < θ} + c E[(τ - θ)⁺]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::filter::{evolve_filter, posterior, Segment, Trajectory};
use crate::flow::{first_sum_crossing, flow, Statistic};
use crate::model::ModelParams;
use crate::rng::replication_seed;
use crate::simulate::{sample_path_p, sample_path_p0};
use crate::solve::ValueGrid;

/// A stopping rule.
#[derive(Debug, Clone)]
pub enum PolicySpec {
    ImmediateStop,
    /// Stop on leaving the advantageous region, `φ₀ + φ₁ ≥ λ/c`.
    TauL,
    /// Stop when the interpolated value reaches `-ε` outside the advantageous region.
    GridBoundary {
        grid: Arc<ValueGrid>,
        epsilon: f64,
    },
    /// The staged rule built from `v₁, …, vₙ` (`grids[k]` holds `v_{k+1}`):
    /// before the `k`-th arrival stop on reaching `{v_{n-k} ≥ -ε}`, and stop
    /// at the `n`-th arrival at the latest.
    StagedSn {
        grids: Arc<Vec<ValueGrid>>,
        epsilon: f64,
    },
    /// Stop when the posterior reaches `p_star`.
    PosteriorThreshold {
        p_star: f64,
    },
}

impl PolicySpec {
    pub fn name(&self) -> String {
        match self {
            PolicySpec::ImmediateStop => "ImmediateStop".into(),
            PolicySpec::TauL => "TauL".into(),
            PolicySpec::GridBoundary { .. } => "GridBoundary".into(),
            PolicySpec::StagedSn { grids, .. } => format!("StagedS{}", grids.len()),
            PolicySpec::PosteriorThreshold { p_star } => format!("PosteriorThreshold({p_star})"),
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        let eps_ok = |e: f64| e.is_finite() && e >= 0.0;
        match self {
            PolicySpec::ImmediateStop | PolicySpec::TauL => Ok(()),
            PolicySpec::PosteriorThreshold { p_star } if *p_star > 0.0 && *p_star < 1.0 => Ok(()),
            PolicySpec::PosteriorThreshold { p_star } => Err(Error::InvalidPolicy(format!(
                "threshold {p_star} must lie in (0, 1)"
            ))),
            PolicySpec::GridBoundary { epsilon, .. } | PolicySpec::StagedSn { epsilon, .. }
                if !eps_ok(*epsilon) =>
            {
                Err(Error::InvalidPolicy(format!(
                    "epsilon {epsilon} must be nonnegative"
                )))
            }
            PolicySpec::StagedSn { grids, .. } if grids.is_empty() => Err(Error::InvalidPolicy(
                "staged rule needs at least one grid".into(),
            )),
            PolicySpec::GridBoundary { grid, .. } => grid.spec.validate(params),
            PolicySpec::StagedSn { grids, .. } => {
                grids.iter().try_for_each(|g| g.spec.validate(params))
            }
        }
    }

    /// Default numerical zero level `1e-6/c`.
    pub fn default_epsilon(params: &ModelParams) -> f64 {
        1e-6 / params.c()
    }
}

/// When and how a rule stopped on one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopOutcome {
    /// Stopping time, or the horizon when censored.
    pub time: f64,
    pub censored: bool,
    /// Triggered by the update at an arrival rather than along a flow segment.
    pub at_arrival: bool,
}

impl StopOutcome {
    fn at(time: f64, at_arrival: bool) -> Self {
        StopOutcome {
            time,
            censored: false,
            at_arrival,
        }
    }
}

/// First `t ∈ [0, len]` with `stop(flow(t, anchor))`, by stepping and bisection.
fn first_hit_on_segment(
    params: &ModelParams,
    anchor: Statistic,
    len: f64,
    step: f64,
    stop: &dyn Fn(Statistic) -> bool,
) -> Option<f64> {
    let hit = |t: f64| stop(flow(params, t, anchor));
    let mut lo = 0.0;
    while lo < len {
        let hi = (lo + step).min(len);
        if hit(hi) {
            let (mut a, mut b) = (lo, hi);
            while b - a > 1e-12 * b.max(1.0) {
                let mid = 0.5 * (a + b);
                if hit(mid) {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return Some(b);
        }
        lo = hi;
    }
    None
}

fn scan_segments(
    traj: &Trajectory,
    mut on_segment: impl FnMut(usize, &Segment) -> Option<StopOutcome>,
) -> StopOutcome {
    traj.segments
        .iter()
        .enumerate()
        .find_map(|(k, seg)| on_segment(k, seg))
        .unwrap_or(StopOutcome {
            time: traj.horizon,
            censored: true,
            at_arrival: false,
        })
}

fn sum_level_rule(params: &ModelParams, traj: &Trajectory, level: f64) -> StopOutcome {
    scan_segments(traj, |k, seg| {
        if seg.anchor.sum() >= level {
            return Some(StopOutcome::at(seg.start, k > 0));
        }
        first_sum_crossing(params, seg.anchor, level, seg.end - seg.start)
            .map(|t| StopOutcome::at(seg.start + t, false))
    })
}

fn grid_stop(params: &ModelParams, grid: &ValueGrid, epsilon: f64, s: Statistic) -> bool {
    s.sum() >= params.level() && grid.interpolate(s) >= -epsilon
}

/// Applies `policy` to a filtered trajectory.
pub fn stopping_time(policy: &PolicySpec, params: &ModelParams, traj: &Trajectory) -> StopOutcome {
    match policy {
        PolicySpec::ImmediateStop => StopOutcome::at(0.0, false),
        PolicySpec::TauL => sum_level_rule(params, traj, params.level()),
        PolicySpec::PosteriorThreshold { p_star } => {
            sum_level_rule(params, traj, p_star / (1.0 - p_star))
        }
        PolicySpec::GridBoundary { grid, epsilon } => {
            let stop = |s: Statistic| grid_stop(params, grid, *epsilon, s);
            scan_segments(traj, |k, seg| {
                if stop(seg.anchor) {
                    return Some(StopOutcome::at(seg.start, k > 0));
                }
                first_hit_on_segment(
                    params,
                    seg.anchor,
                    seg.end - seg.start,
                    grid.spec.time_step,
                    &stop,
                )
                .map(|t| StopOutcome::at(seg.start + t, false))
            })
        }
        PolicySpec::StagedSn { grids, epsilon } => {
            let n = grids.len();
            scan_segments(traj, |k, seg| {
                if k >= n {
                    // k-th arrival with k = n: the rule has run out of stages.
                    return Some(StopOutcome::at(seg.start, true));
                }
                let grid = &grids[n - k - 1];
                let stop = |s: Statistic| grid_stop(params, grid, *epsilon, s);
                if stop(seg.anchor) {
                    return Some(StopOutcome::at(seg.start, k > 0));
                }
                first_hit_on_segment(
                    params,
                    seg.anchor,
                    seg.end - seg.start,
                    grid.spec.time_step,
                    &stop,
                )
                .map(|t| StopOutcome::at(seg.start + t, false))
            })
        }
    }
}

/// Which measure the paths were simulated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    P,
    P0,
}

/// Monte Carlo Bayes risk with its diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RiskEstimate {
    pub policy: String,
    pub params_digest: String,
    pub n_paths: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `P{τ < θ}`; under `P₀` this is not observed and reported as `None`.
    pub false_alarm_rate: Option<f64>,
    pub mean_delay: Option<f64>,
    pub censored_fraction: f64,
    pub measure: Measure,
}

impl RiskEstimate {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-path contribution to a P-measure estimate.
#[derive(Debug, Clone, Copy)]
struct PathLoss {
    false_alarm: f64,
    delay: f64,
    censored: bool,
}

fn mean_and_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

fn check_run(
    params: &ModelParams,
    policy: &PolicySpec,
    horizon: f64,
    n_paths: usize,
) -> Result<()> {
    policy.validate(params)?;
    if n_paths == 0 {
        return Err(Error::InvalidParams(vec![
            "number of paths must be positive".into(),
        ]));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParams(vec![format!(
            "horizon must be positive, got {horizon}"
        )]));
    }
    Ok(())
}

fn p_losses(
    policies: &[&PolicySpec],
    params: &ModelParams,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<PathLoss>>> {
    let per_path: Vec<Vec<PathLoss>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<PathLoss>> {
            let path = sample_path_p(params, horizon, replication_seed(seed, i))?;
            let theta = path.hidden.expect("simulated under P").theta;
            let traj = evolve_filter(params, &path, params.initial_statistic())?;
            Ok(policies
                .iter()
                .map(|p| {
                    let out = stopping_time(p, params, &traj);
                    if out.censored && theta > horizon {
                        PathLoss {
                            false_alarm: 0.0,
                            delay: 0.0,
                            censored: true,
                        }
                    } else {
                        PathLoss {
                            false_alarm: f64::from(u8::from(out.time < theta)),
                            delay: (out.time - theta).max(0.0),
                            censored: out.censored,
                        }
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..policies.len())
        .map(|k| per_path.iter().map(|row| row[k]).collect())
        .collect())
}

fn p_estimate(policy: &PolicySpec, params: &ModelParams, losses: &[PathLoss]) -> RiskEstimate {
    let c = params.c();
    let n = losses.len();
    let (estimate, stderr) = mean_and_stderr(losses.iter().map(|l| l.false_alarm + c * l.delay));
    let fa = losses.iter().map(|l| l.false_alarm).sum::<f64>() / n as f64;
    let delay = losses.iter().map(|l| l.delay).sum::<f64>() / n as f64;
    RiskEstimate {
        policy: policy.name(),
        params_digest: params.digest(),
        n_paths: n,
        estimate,
        stderr,
        false_alarm_rate: Some(fa),
        mean_delay: Some(delay),
        censored_fraction: losses.iter().filter(|l| l.censored).count() as f64 / n as f64,
        measure: Measure::P,
    }
}

/// Bayes risk by direct simulation under `P`.
pub fn bayes_risk_mc(
    policy: &PolicySpec,
    params: &ModelParams,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_run(params, policy, horizon, n_paths)?;
    let losses = p_losses(&[policy], params, horizon, n_paths, seed)?;
    Ok(p_estimate(policy, params, &losses[0]))
}

/// Per-path `P₀` estimates `1 - π + c(1 - π) ∫₀^τ e^{-λt} g(Φ̃_t) dt`, one column per policy.
fn p0_rows(
    policies: &[&PolicySpec],
    params: &ModelParams,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<Vec<(f64, bool)>>> {
    let q = 1.0 - params.pi();
    let per_path: Vec<Vec<(f64, bool)>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<(f64, bool)>> {
            let path = sample_path_p0(params, horizon, replication_seed(seed, i))?;
            let traj = evolve_filter(params, &path, params.initial_statistic())?;
            Ok(policies
                .iter()
                .map(|p| {
                    let out = stopping_time(p, params, &traj);
                    let integral = traj.discounted_cost_until(params, out.time);
                    (q + params.c() * q * integral, out.censored)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..policies.len())
        .map(|k| per_path.iter().map(|row| row[k]).collect())
        .collect())
}

fn p0_estimate(policy: &PolicySpec, params: &ModelParams, rows: &[(f64, bool)]) -> RiskEstimate {
    let n = rows.len();
    let (estimate, stderr) = mean_and_stderr(rows.iter().map(|r| r.0));
    RiskEstimate {
        policy: policy.name(),
        params_digest: params.digest(),
        n_paths: n,
        estimate,
        stderr,
        false_alarm_rate: None,
        mean_delay: None,
        censored_fraction: rows.iter().filter(|r| r.1).count() as f64 / n as f64,
        measure: Measure::P0,
    }
}

/// Bayes risk through the reference measure:
/// `1 - π + c(1 - π) E₀[∫₀^τ e^{-λt} g(Φ̃_t) dt]`.
pub fn bayes_risk_p0(
    policy: &PolicySpec,
    params: &ModelParams,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<RiskEstimate> {
    check_run(params, policy, horizon, n_paths)?;
    let rows = p0_rows(&[policy], params, horizon, n_paths, seed)?;
    Ok(p0_estimate(policy, params, &rows[0]))
}

/// Paired difference `risk(a) - risk(b)` on common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairedDifference {
    pub first: String,
    pub second: String,
    pub difference: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub risks: Vec<RiskEstimate>,
    pub differences: Vec<PairedDifference>,
}

/// Evaluates every policy on the same simulated paths, drawn under `measure`.
pub fn compare_policies(
    policies: &[PolicySpec],
    params: &ModelParams,
    horizon: f64,
    n_paths: usize,
    seed: u64,
    measure: Measure,
) -> Result<Comparison> {
    for p in policies {
        check_run(params, p, horizon, n_paths)?;
    }
    let refs: Vec<&PolicySpec> = policies.iter().collect();
    let (risks, columns): (Vec<RiskEstimate>, Vec<Vec<f64>>) = match measure {
        Measure::P => {
            let c = params.c();
            let losses = p_losses(&refs, params, horizon, n_paths, seed)?;
            policies
                .iter()
                .zip(&losses)
                .map(|(p, l)| {
                    let col = l.iter().map(|x| x.false_alarm + c * x.delay).collect();
                    (p_estimate(p, params, l), col)
                })
                .unzip()
        }
        Measure::P0 => {
            let rows = p0_rows(&refs, params, horizon, n_paths, seed)?;
            policies
                .iter()
                .zip(&rows)
                .map(|(p, r)| (p0_estimate(p, params, r), r.iter().map(|x| x.0).collect()))
                .unzip()
        }
    };
    let mut differences = Vec::new();
    for a in 0..policies.len() {
        for b in a + 1..policies.len() {
            let d = columns[a].iter().zip(&columns[b]).map(|(x, y)| x - y);
            let (difference, stderr) = mean_and_stderr(d);
            differences.push(PairedDifference {
                first: policies[a].name(),
                second: policies[b].name(),
                difference,
                stderr,
            });
        }
    }
    Ok(Comparison { risks, differences })
}

/// Mean hitting time of `{φ₀ + φ₁ ≥ η}` under `P₀` next to the bound `η(2 + 1/μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TauUCheck {
    pub mean: f64,
    pub stderr: f64,
    pub bound: f64,
    pub censored_fraction: f64,
}

impl TauUCheck {
    pub fn holds(&self) -> bool {
        self.mean <= self.bound + 3.0 * self.stderr
    }
}

pub fn tau_u_expectation_check(
    params: &ModelParams,
    eta: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TauUCheck> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParams(vec![format!(
            "eta must be positive, got {eta}"
        )]));
    }
    check_run(params, &PolicySpec::TauL, horizon, n_paths)?;
    let rows: Vec<StopOutcome> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| -> Result<StopOutcome> {
            let path = sample_path_p0(params, horizon, replication_seed(seed, i))?;
            let traj = evolve_filter(params, &path, params.initial_statistic())?;
            Ok(sum_level_rule(params, &traj, eta))
        })
        .collect::<Result<_>>()?;
    let (mean, stderr) = mean_and_stderr(rows.iter().map(|r| r.time));
    Ok(TauUCheck {
        mean,
        stderr,
        bound: eta * (2.0 + 1.0 / params.mu()),
        censored_fraction: rows.iter().filter(|r| r.censored).count() as f64 / n_paths as f64,
    })
}

/// Posterior probability at a stopping outcome, for reporting.
pub fn posterior_at_stop(
    params: &ModelParams,
    traj: &Trajectory,
    out: &StopOutcome,
) -> Result<f64> {
    traj.statistic_at(params, out.time).map(posterior)
}
