use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use disorder_core::filter::evolve_filter;
use disorder_core::flow::{
    continuation_extent, mean_reversion_level, region_spec, shared_segment, small_lambda_cuts,
    Region,
};
use disorder_core::policy::{compare_policies, Comparison, Measure, PolicySpec};
use disorder_core::rng::replication_seed;
use disorder_core::simulate::{sample_path_p, sample_path_p0, PathRecord};
use disorder_core::solve::{extract_boundary, value_iteration, GridSpec, ValueGrid};
use disorder_core::{ModelParams, RawParams, Regime, Statistic};
use serde::Serialize;

use crate::config::{input_error, read_input, write_file, Common, GridArgs};

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct RegimeReport {
    params: RawParams,
    params_digest: String,
    regime: Regime,
    xi: Option<f64>,
    level: f64,
    corner: Option<Statistic>,
    corner_time: Option<f64>,
    intercept: Option<f64>,
    mean_reversion: Option<Statistic>,
    small_lambda_cuts: Option<[f64; 3]>,
    shared_segment: Option<(Statistic, Statistic)>,
    continuation_extent: f64,
    regions: Vec<&'static str>,
}

pub fn regime(common: &Common) -> Result<()> {
    let params = common.model()?;
    let spec = region_spec(&params);
    let class = spec.class;
    let report = RegimeReport {
        params: params.raw(),
        params_digest: params.digest(),
        regime: class.regime,
        xi: class.xi,
        level: params.level(),
        corner: spec.corner,
        corner_time: spec.corner_time,
        intercept: spec.intercept,
        mean_reversion: mean_reversion_level(&params),
        small_lambda_cuts: small_lambda_cuts(&params),
        shared_segment: shared_segment(&params),
        continuation_extent: continuation_extent(&params),
        regions: Region::ALL
            .iter()
            .filter(|r| r.regimes().contains(&class.regime))
            .map(|r| r.name())
            .collect(),
    };
    common.ensure_dir("")?;
    write_file(&common.out_path("regime.json"), to_json(&report)?)?;

    let show = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6}"));
    let point = |s: Option<Statistic>| {
        s.map_or("-".to_string(), |s| {
            format!("({:.6}, {:.6})", s.phi0, s.phi1)
        })
    };
    println!("regime   {}", report.regime);
    println!("xi       {}", show(report.xi));
    println!("level    {:.6}", report.level);
    println!("corner   {}", point(report.corner));
    println!("M        {}", point(report.mean_reversion));
    println!("regions  {}", report.regions.join(" "));
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    /// Cap on the number of iterations.
    #[arg(long, default_value_t = 200)]
    pub n_max: usize,
    /// Stop once (1/c)(μ/(μ+λ))ⁿ falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub target_err: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SolveReport {
    params: RawParams,
    params_digest: String,
    spec: GridSpec,
    n_max: usize,
    target_err: f64,
    iterations: usize,
    error_bound: f64,
    last_sup_delta: f64,
}

fn grid_name(k: usize) -> String {
    format!("v_{k:03}")
}

pub fn solve(common: &Common, args: &SolveArgs) -> Result<()> {
    let params = common.model()?;
    let spec = args.grid.spec(&params)?;
    if !(args.target_err >= 0.0) {
        return Err(input_error(format!(
            "target error must be nonnegative, got {}",
            args.target_err
        )));
    }
    let grids = value_iteration(&params, &spec, args.n_max, args.target_err)?;
    let dir = common.ensure_dir("grids")?;
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let stale = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("v_"));
        if stale {
            fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
    }
    let mut log = String::from("n,sup_delta,bound\n");
    let mut prev = ValueGrid::zeros(spec);
    let mut last_delta = 0.0;
    for g in &grids {
        let name = grid_name(g.iteration);
        let mut csv = Vec::new();
        g.write_csv(&mut csv)?;
        write_file(&dir.join(format!("{name}.csv")), csv)?;
        write_file(
            &dir.join(format!("{name}.json")),
            g.header_json(&params)? + "\n",
        )?;
        last_delta = g.sup_distance(&prev);
        writeln!(log, "{},{},{}", g.iteration, last_delta, g.error_bound)?;
        prev = g.clone();
    }
    write_file(&common.out_path("convergence.csv"), log)?;
    let report = SolveReport {
        params: params.raw(),
        params_digest: params.digest(),
        spec,
        n_max: args.n_max,
        target_err: args.target_err,
        iterations: grids.len(),
        error_bound: params.error_bound(grids.len()),
        last_sup_delta: last_delta,
    };
    write_file(&common.out_path("solve.json"), to_json(&report)?)?;
    println!(
        "{} iterations on a {}x{} grid, phiMax {}, error bound {:.3e}",
        report.iterations, spec.n0, spec.n1, spec.phi_max, report.error_bound
    );
    Ok(())
}

/// Reads every `v_NNN` grid under `dir` in iteration order and checks that
/// they were solved for `params`.
fn load_grids(dir: &Path, params: &ModelParams) -> Result<Vec<ValueGrid>> {
    let entries = fs::read_dir(dir)
        .map_err(|e| input_error(format!("cannot read {}: {e}", dir.display())))?;
    let mut headers: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if name.starts_with("v_") && name.ends_with(".json") {
            headers.push(path);
        }
    }
    headers.sort();
    if headers.is_empty() {
        return Err(input_error(format!(
            "no solved grids in {}; run `solve` first",
            dir.display()
        )));
    }
    let digest = params.digest();
    let mut grids = Vec::with_capacity(headers.len());
    for (k, header_path) in headers.iter().enumerate() {
        let header = read_input(header_path)?;
        let meta: serde_json::Value = serde_json::from_str(&header)
            .map_err(|e| input_error(format!("{}: {e}", header_path.display())))?;
        if meta["paramsDigest"].as_str() != Some(digest.as_str()) {
            return Err(input_error(format!(
                "{} was solved for different parameters",
                header_path.display()
            )));
        }
        let csv = read_input(&header_path.with_extension("csv"))?;
        let grid = ValueGrid::read(&header, &csv)?;
        if grid.iteration != k + 1 {
            return Err(input_error(format!(
                "{}: expected iteration {}",
                header_path.display(),
                k + 1
            )));
        }
        grids.push(grid);
    }
    Ok(grids)
}

#[derive(Debug, Clone, Args)]
pub struct BoundaryArgs {
    /// Directory with solved grids; defaults to OUT/grids.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    /// Zero-set level ε; defaults to 1e-6/c.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BoundarySummary {
    iteration: usize,
    gamma_at_zero: f64,
    rise: f64,
    convexity_defect: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct BoundaryReport {
    params_digest: String,
    epsilon: f64,
    curves: Vec<BoundarySummary>,
}

/// Closed-form pieces of the stopping boundary as `(label, from, to)`.
fn closed_form_segments(params: &ModelParams) -> Vec<(&'static str, Statistic, Statistic)> {
    let (l, c, m) = (params.lambda(), params.c(), params.m());
    let level = params.level();
    let mut out = Vec::new();
    if let Some((a, b)) = shared_segment(params) {
        out.push(("line", a, b));
    }
    let on_line = |top: f64| {
        let top = top.clamp(0.0, level);
        (Statistic::new(level - top, top), Statistic::new(level, 0.0))
    };
    let k = 1.0 / c + 0.5 * m - 1.5;
    match params.regime().regime {
        Regime::R4 => {
            let (a, b) = on_line(l * (1.0 + (l - 1.0) / c));
            out.push(("H", a, b));
        }
        Regime::R5 => {
            let (a, b) = on_line(l * (1.0 - (1.0 - l) / c));
            out.push(("A", a, b));
        }
        Regime::R6 => {
            let (a, b) = on_line(2.0 * (-(1.0 - l) / c + 0.5 * (3.0 - m)));
            out.push(("F", a, b));
            out.push(("P", Statistic::new(0.0, 2.0 * k), Statistic::new(k, 0.0)));
        }
        Regime::R7 => {
            out.push(("R", Statistic::new(0.0, 2.0 * k), Statistic::new(k, 0.0)));
        }
        _ => {}
    }
    out
}

pub fn boundary(common: &Common, args: &BoundaryArgs) -> Result<()> {
    let params = common.model()?;
    let dir = args
        .grids
        .clone()
        .unwrap_or_else(|| common.out_path("grids"));
    let grids = load_grids(&dir, &params)?;
    let eps = args.epsilon.unwrap_or(PolicySpec::default_epsilon(&params));
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(input_error(format!(
            "epsilon must be nonnegative, got {eps}"
        )));
    }
    let out = common.ensure_dir("boundary")?;
    let mut curves = Vec::with_capacity(grids.len());
    for g in &grids {
        let b = extract_boundary(g, eps);
        let mut csv = Vec::new();
        b.write_csv(&mut csv)?;
        write_file(&out.join(format!("gamma_{:03}.csv", g.iteration)), csv)?;
        let (rise, convexity_defect) = b.shape_defects();
        curves.push(BoundarySummary {
            iteration: g.iteration,
            gamma_at_zero: b.gamma[0],
            rise,
            convexity_defect,
        });
    }
    let mut overlay = String::from("set,phi0,phi1\n");
    for (label, a, b) in closed_form_segments(&params) {
        writeln!(overlay, "{label},{},{}", a.phi0, a.phi1)?;
        writeln!(overlay, "{label},{},{}", b.phi0, b.phi1)?;
    }
    write_file(&out.join("closed_form.csv"), overlay)?;
    let report = BoundaryReport {
        params_digest: params.digest(),
        epsilon: eps,
        curves,
    };
    write_file(&out.join("boundary.json"), to_json(&report)?)?;
    let last = report.curves.last().expect("at least one grid");
    println!(
        "{} boundary curves, gamma(0) = {} at iteration {}",
        report.curves.len(),
        last.gamma_at_zero,
        last.iteration
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MeasureArg {
    /// Disorder time and post-disorder rate drawn from the prior.
    P,
    /// No disorder.
    P0,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::P => Measure::P,
            MeasureArg::P0 => Measure::P0,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct McArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub n_paths: usize,
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    #[arg(long, value_enum, default_value_t = MeasureArg::P)]
    pub measure: MeasureArg,
}

impl McArgs {
    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(input_error("--n-paths must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(input_error(format!(
                "--horizon must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }
}

pub fn simulate(common: &Common, args: &McArgs) -> Result<()> {
    let params = common.model()?;
    args.check()?;
    let records = (0..args.n_paths as u64)
        .map(|i| {
            let seed = replication_seed(args.seed, i);
            match args.measure {
                MeasureArg::P => sample_path_p(&params, args.horizon, seed),
                MeasureArg::P0 => sample_path_p0(&params, args.horizon, seed),
            }
        })
        .collect::<disorder_core::Result<Vec<_>>>()?;
    common.ensure_dir("")?;
    let path = common.out_path("paths.jsonl");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    PathRecord::write_jsonl(&records, &mut w)?;
    w.flush()?;
    let arrivals: usize = records.iter().map(PathRecord::len).sum();
    println!(
        "{} paths, {} arrivals -> {}",
        records.len(),
        arrivals,
        path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Args)]
pub struct FilterArgs {
    /// JSON-lines path file; defaults to OUT/paths.jsonl.
    #[arg(long)]
    pub paths: Option<PathBuf>,
    /// Sample spacing in time between arrivals.
    #[arg(long, default_value_t = 0.1)]
    pub spacing: f64,
}

pub fn filter(common: &Common, args: &FilterArgs) -> Result<()> {
    let params = common.model()?;
    if !(args.spacing > 0.0 && args.spacing.is_finite()) {
        return Err(input_error(format!(
            "--spacing must be positive, got {}",
            args.spacing
        )));
    }
    let src = args
        .paths
        .clone()
        .unwrap_or_else(|| common.out_path("paths.jsonl"));
    let file =
        File::open(&src).map_err(|e| input_error(format!("cannot read {}: {e}", src.display())))?;
    let records = PathRecord::read_jsonl(BufReader::new(file))?;
    let dir = common.ensure_dir("trajectories")?;
    for (i, rec) in records.iter().enumerate() {
        let traj = evolve_filter(&params, rec, params.initial_statistic())
            .with_context(|| format!("path {i} (seed {})", rec.seed))?;
        let mut csv = Vec::new();
        traj.write_csv(&params, args.spacing, &mut csv)?;
        write_file(&dir.join(format!("path_{i:05}.csv")), csv)?;

        let mut jumps = String::from("t,mark,phi0_before,phi1_before,phi0_after,phi1_after\n");
        for (t, y) in rec.arrivals.iter().zip(&rec.marks) {
            let before = traj.statistic_before(&params, *t)?;
            let after = traj.statistic_at(&params, *t)?;
            writeln!(
                jumps,
                "{t},{y},{},{},{},{}",
                before.phi0, before.phi1, after.phi0, after.phi1
            )?;
        }
        write_file(&dir.join(format!("path_{i:05}_jumps.csv")), jumps)?;
    }
    println!("{} trajectories -> {}", records.len(), dir.display());
    Ok(())
}

/// Policy names accepted by `evaluate --policy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyArg {
    Immediate,
    TauL,
    Grid,
    Staged,
    Threshold(f64),
}

impl FromStr for PolicyArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "immediate" => Ok(PolicyArg::Immediate),
            "tau-l" => Ok(PolicyArg::TauL),
            "grid" => Ok(PolicyArg::Grid),
            "staged" => Ok(PolicyArg::Staged),
            _ => s
                .strip_prefix("threshold:")
                .and_then(|p| p.parse().ok())
                .map(PolicyArg::Threshold)
                .ok_or_else(|| format!("unknown policy {s:?}; expected immediate, tau-l, grid, staged or threshold:P")),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub mc: McArgs,
    /// Comma-separated policies, compared on common random numbers.
    #[arg(long, value_delimiter = ',', default_value = "grid,tau-l,immediate")]
    pub policy: Vec<PolicyArg>,
    /// Directory with solved grids; defaults to OUT/grids.
    #[arg(long)]
    pub grids: Option<PathBuf>,
    /// Zero-set level ε; defaults to 1e-6/c.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct IdentityCheck {
    predicted: f64,
    estimate: f64,
    stderr: f64,
    z: f64,
    grid_iteration: usize,
    error_bound: f64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EvaluateReport {
    params_digest: String,
    seed: u64,
    n_paths: usize,
    horizon: f64,
    epsilon: f64,
    comparison: Comparison,
    identity: Option<IdentityCheck>,
}

pub fn evaluate(common: &Common, args: &EvaluateArgs) -> Result<()> {
    let params = common.model()?;
    args.mc.check()?;
    if args.policy.is_empty() {
        return Err(input_error("--policy lists no policies"));
    }
    let eps = args.epsilon.unwrap_or(PolicySpec::default_epsilon(&params));
    let needs_grids = args
        .policy
        .iter()
        .any(|p| matches!(p, PolicyArg::Grid | PolicyArg::Staged));
    let grids = if needs_grids {
        let dir = args
            .grids
            .clone()
            .unwrap_or_else(|| common.out_path("grids"));
        Arc::new(load_grids(&dir, &params)?)
    } else {
        Arc::new(Vec::new())
    };
    let last = grids.last().map(|g| Arc::new(g.clone()));
    let policies: Vec<PolicySpec> = args
        .policy
        .iter()
        .map(|p| match *p {
            PolicyArg::Immediate => PolicySpec::ImmediateStop,
            PolicyArg::TauL => PolicySpec::TauL,
            PolicyArg::Grid => PolicySpec::GridBoundary {
                grid: last.clone().expect("grids loaded"),
                epsilon: eps,
            },
            PolicyArg::Staged => PolicySpec::StagedSn {
                grids: grids.clone(),
                epsilon: eps,
            },
            PolicyArg::Threshold(p_star) => PolicySpec::PosteriorThreshold { p_star },
        })
        .collect();
    for p in &policies {
        p.validate(&params)?;
    }
    let cmp = compare_policies(
        &policies,
        &params,
        args.mc.horizon,
        args.mc.n_paths,
        args.mc.seed,
        args.mc.measure.into(),
    )?;

    let q = 1.0 - params.pi();
    let identity = args
        .policy
        .iter()
        .position(|p| *p == PolicyArg::Grid)
        .map(|k| {
            let g = last.as_ref().expect("grids loaded");
            let predicted = q + params.c() * q * g.interpolate(params.initial_statistic());
            let r = &cmp.risks[k];
            IdentityCheck {
                predicted,
                estimate: r.estimate,
                stderr: r.stderr,
                z: (r.estimate - predicted) / r.stderr,
                grid_iteration: g.iteration,
                error_bound: g.error_bound,
            }
        });
    if let Some(id) = &identity {
        let bias = params.c() * q * id.error_bound;
        if bias > id.stderr {
            eprintln!(
                "warning: grid v_{} has error bound {:e}; the risk may be off by up to {:e}, more than one standard error",
                id.grid_iteration, id.error_bound, bias
            );
        }
    }

    let report = EvaluateReport {
        params_digest: params.digest(),
        seed: args.mc.seed,
        n_paths: args.mc.n_paths,
        horizon: args.mc.horizon,
        epsilon: eps,
        comparison: cmp,
        identity,
    };
    common.ensure_dir("")?;
    write_file(&common.out_path("evaluation.json"), to_json(&report)?)?;

    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    let mut table =
        String::from("policy,estimate,stderr,false_alarm_rate,mean_delay,censored_fraction\n");
    for r in &report.comparison.risks {
        writeln!(
            table,
            "{},{},{},{},{},{}",
            r.policy,
            r.estimate,
            r.stderr,
            opt(r.false_alarm_rate),
            opt(r.mean_delay),
            r.censored_fraction
        )?;
    }
    write_file(&common.out_path("comparison.csv"), &table)?;

    println!("{:<28} {:>10} {:>10}", "policy", "risk", "stderr");
    for r in &report.comparison.risks {
        println!("{:<28} {:>10.5} {:>10.5}", r.policy, r.estimate, r.stderr);
    }
    for d in &report.comparison.differences {
        println!(
            "{} - {}: {:.6} ± {:.6}",
            d.first, d.second, d.difference, d.stderr
        );
    }
    if let Some(id) = &report.identity {
        println!("grid value predicts {:.5} (z = {:.2})", id.predicted, id.z);
    }
    Ok(())
}
