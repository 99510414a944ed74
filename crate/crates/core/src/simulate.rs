//! Seeded generation of observation paths.
//!
//! Under the reference measure `P₀` the observations form a compound Poisson
//! process with rate `μ` and marks `β₀` throughout. Under the physical measure
//! `P` the disorder time `θ` is drawn first (`θ = 0` with probability `π`,
//! otherwise exponential with rate `λ`), then the post-disorder rate
//! `Λ ∈ {μ+1, μ+2}`, and finally the two path segments.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{MarkModel, ModelParams};
use crate::rng::{stream, StreamPurpose};

/// Unobservable part of a path simulated under `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hidden {
    pub theta: f64,
    pub lambda_post: f64,
}

/// One observation path on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathWire", into = "PathWire")]
pub struct PathRecord {
    pub seed: u64,
    pub horizon: f64,
    pub arrivals: Vec<f64>,
    pub marks: Vec<f64>,
    pub hidden: Option<Hidden>,
}

#[derive(Serialize, Deserialize)]
struct PathWire {
    seed: u64,
    horizon: f64,
    theta: Option<f64>,
    lambda_post: Option<f64>,
    events: Vec<[f64; 2]>,
}

impl From<PathRecord> for PathWire {
    fn from(p: PathRecord) -> Self {
        PathWire {
            seed: p.seed,
            horizon: p.horizon,
            theta: p.hidden.map(|h| h.theta),
            lambda_post: p.hidden.map(|h| h.lambda_post),
            events: p
                .arrivals
                .iter()
                .zip(&p.marks)
                .map(|(&t, &y)| [t, y])
                .collect(),
        }
    }
}

impl TryFrom<PathWire> for PathRecord {
    type Error = Error;

    fn try_from(w: PathWire) -> Result<Self> {
        let hidden = match (w.theta, w.lambda_post) {
            (Some(theta), Some(lambda_post)) => Some(Hidden { theta, lambda_post }),
            (None, None) => None,
            _ => {
                return Err(Error::CorruptedPath(
                    "theta and lambda_post must be both present or both null".into(),
                ))
            }
        };
        let record = PathRecord {
            seed: w.seed,
            horizon: w.horizon,
            arrivals: w.events.iter().map(|e| e[0]).collect(),
            marks: w.events.iter().map(|e| e[1]).collect(),
            hidden,
        };
        record.validate()?;
        Ok(record)
    }
}

impl PathRecord {
    /// Checks ordering and range of the arrival times.
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::CorruptedPath(format!(
                "horizon {} is not positive",
                self.horizon
            )));
        }
        if self.arrivals.len() != self.marks.len() {
            return Err(Error::CorruptedPath(
                "arrival and mark counts differ".into(),
            ));
        }
        stream_events(self).try_for_each(|e| e.map(|_| ()))
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(records: &[PathRecord], mut out: W) -> Result<()> {
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<PathRecord>> {
        let mut out = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PathRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// An item of the ordered event stream of a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Arrival { index: usize, time: f64, mark: f64 },
    End { horizon: f64 },
}

/// Arrivals in time order followed by an end-of-horizon sentinel. Yields an
/// error (and stops) at the first out-of-order or out-of-range arrival.
pub fn stream_events(record: &PathRecord) -> impl Iterator<Item = Result<Event>> + '_ {
    let mut next = 0usize;
    let mut last = 0.0f64;
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        if next >= record.arrivals.len() || next >= record.marks.len() {
            done = true;
            return Some(Ok(Event::End {
                horizon: record.horizon,
            }));
        }
        let time = record.arrivals[next];
        let ordered = if next == 0 {
            time >= 0.0
        } else {
            time > last
        };
        if !ordered || !(time <= record.horizon) {
            done = true;
            return Some(Err(Error::CorruptedPath(format!(
                "arrival {next} at time {time} breaks ordering (previous {last}, horizon {})",
                record.horizon
            ))));
        }
        last = time;
        let index = next;
        next += 1;
        Some(Ok(Event::Arrival {
            index,
            time,
            mark: record.marks[index],
        }))
    })
}

impl MarkModel {
    /// Draws one mark from `β₁` when `post` is set, otherwise from `β₀`.
    pub fn sample<R: Rng + ?Sized>(&self, post: bool, rng: &mut R) -> f64 {
        match self {
            MarkModel::Degenerate => 1.0,
            MarkModel::ExponentialPair { a0, a1 } => {
                let rate = if post { *a1 } else { *a0 };
                let u: f64 = rng.random();
                -(-u).ln_1p() / rate
            }
            MarkModel::FiniteDiscrete { points, p0, p1 } => {
                let probs = if post { p1 } else { p0 };
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (y, p) in points.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *y;
                    }
                }
                *points.last().expect("validated non-empty support")
            }
        }
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if horizon > 0.0 && horizon.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(vec![format!(
            "horizon must be positive and finite, got {horizon}"
        )]))
    }
}

/// Appends arrivals of a rate-`rate` process on `(start, end]`.
fn poisson_segment(
    rng: &mut ChaCha8Rng,
    marks: &MarkModel,
    post: bool,
    rate: f64,
    start: f64,
    end: f64,
    arrivals: &mut Vec<f64>,
    values: &mut Vec<f64>,
) {
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = start;
    loop {
        t += gap.sample(rng);
        if t > end {
            break;
        }
        arrivals.push(t);
        values.push(marks.sample(post, rng));
    }
}

/// Path under the reference measure `P₀`.
pub fn sample_path_p0(params: &ModelParams, horizon: f64, seed: u64) -> Result<PathRecord> {
    check_horizon(horizon)?;
    let mut rng = stream(seed, StreamPurpose::PreChange);
    let mut arrivals = Vec::new();
    let mut marks = Vec::new();
    poisson_segment(
        &mut rng,
        params.marks(),
        false,
        params.mu(),
        0.0,
        horizon,
        &mut arrivals,
        &mut marks,
    );
    Ok(PathRecord {
        seed,
        horizon,
        arrivals,
        marks,
        hidden: None,
    })
}

/// Path under the physical measure `P`.
pub fn sample_path_p(params: &ModelParams, horizon: f64, seed: u64) -> Result<PathRecord> {
    check_horizon(horizon)?;
    let mut hidden_rng = stream(seed, StreamPurpose::Disorder);
    let theta = if hidden_rng.random::<f64>() < params.pi() {
        0.0
    } else {
        Exp::new(params.lambda())
            .expect("positive λ")
            .sample(&mut hidden_rng)
    };
    let lambda_post = if hidden_rng.random::<f64>() < params.prob_plus_two() {
        params.mu() + 2.0
    } else {
        params.mu() + 1.0
    };

    let mut arrivals = Vec::new();
    let mut marks = Vec::new();
    let mut pre = stream(seed, StreamPurpose::PreChange);
    poisson_segment(
        &mut pre,
        params.marks(),
        false,
        params.mu(),
        0.0,
        theta.min(horizon),
        &mut arrivals,
        &mut marks,
    );
    if theta < horizon {
        let mut post = stream(seed, StreamPurpose::PostChange);
        poisson_segment(
            &mut post,
            params.marks(),
            true,
            lambda_post,
            theta,
            horizon,
            &mut arrivals,
            &mut marks,
        );
    }
    Ok(PathRecord {
        seed,
        horizon,
        arrivals,
        marks,
        hidden: Some(Hidden { theta, lambda_post }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replication_seed;

    fn params(m: f64, pi: f64) -> ModelParams {
        ModelParams::simple(0.5, 1.0, 1.0, m, pi).unwrap()
    }

    /// Kolmogorov-Smirnov distance against the exponential CDF.
    fn ks_exponential(samples: &mut [f64], rate: f64) -> f64 {
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        samples
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-rate * x).exp();
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn p0_mean_count() {
        let p = params(1.5, 0.0);
        let n = 100_000;
        let total: usize = (0..n)
            .map(|i| {
                sample_path_p0(&p, 10.0, replication_seed(3, i))
                    .unwrap()
                    .len()
            })
            .sum();
        let mean = total as f64 / n as f64;
        assert!((mean - 10.0).abs() < 0.1, "mean {mean}");
    }

    #[test]
    fn rejects_empty_horizon() {
        assert!(sample_path_p0(&params(1.5, 0.0), 0.0, 1).is_err());
        assert!(sample_path_p(&params(1.5, 0.0), -1.0, 1).is_err());
    }

    #[test]
    fn same_seed_same_record() {
        let p = params(1.5, 0.3);
        assert_eq!(
            sample_path_p(&p, 20.0, 99).unwrap(),
            sample_path_p(&p, 20.0, 99).unwrap()
        );
        assert_eq!(
            sample_path_p0(&p, 20.0, 99).unwrap(),
            sample_path_p0(&p, 20.0, 99).unwrap()
        );
        assert_ne!(
            sample_path_p0(&p, 20.0, 99).unwrap(),
            sample_path_p0(&p, 20.0, 100).unwrap()
        );
    }

    #[test]
    fn zero_prior_gives_positive_disorder() {
        let p = params(1.5, 0.0);
        for i in 0..2000 {
            let h = sample_path_p(&p, 5.0, i).unwrap().hidden.unwrap();
            assert!(h.theta > 0.0);
        }
    }

    #[test]
    fn post_rate_frequency() {
        let p = params(1.5, 0.0);
        let n = 100_000;
        let twos = (0..n)
            .filter(|&i| {
                let h = sample_path_p(&p, 1.0, replication_seed(11, i))
                    .unwrap()
                    .hidden
                    .unwrap();
                h.lambda_post == p.mu() + 2.0
            })
            .count();
        let freq = twos as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.005, "freq {freq}");
    }

    #[test]
    fn post_disorder_rate_matches_lambda() {
        let p = params(1.5, 0.0);
        let (mut count, mut exposure) = (0usize, 0.0f64);
        for i in 0..20_000 {
            let rec = sample_path_p(&p, 10.0, replication_seed(5, i)).unwrap();
            let h = rec.hidden.unwrap();
            if h.lambda_post != p.mu() + 2.0 || h.theta >= rec.horizon {
                continue;
            }
            count += rec.arrivals.iter().filter(|&&t| t > h.theta).count();
            exposure += rec.horizon - h.theta;
        }
        let rate = count as f64 / exposure;
        assert!((rate - 3.0).abs() < 0.06, "rate {rate}");
    }

    #[test]
    fn p0_gaps_pass_ks() {
        let p = ModelParams::simple(0.5, 1.0, 2.0, 1.5, 0.0).unwrap();
        let rec = sample_path_p0(&p, 6000.0, 2024).unwrap();
        let mut gaps: Vec<f64> = std::iter::once(0.0)
            .chain(rec.arrivals.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[1] - w[0])
            .take(10_000)
            .collect();
        assert_eq!(gaps.len(), 10_000);
        let d = ks_exponential(&mut gaps, 2.0);
        assert!(d < 1.628 / 100.0, "KS distance {d}");
    }

    #[test]
    fn post_gaps_pass_ks_on_plus_one_paths() {
        let p = params(1.5, 0.0);
        let mut gaps = Vec::new();
        let mut i = 0;
        while gaps.len() < 10_000 {
            let rec = sample_path_p(&p, 600.0, replication_seed(77, i)).unwrap();
            i += 1;
            let h = rec.hidden.unwrap();
            if h.lambda_post != p.mu() + 1.0 || h.theta >= rec.horizon {
                continue;
            }
            let mut prev = h.theta;
            for &t in rec.arrivals.iter().filter(|&&t| t > h.theta) {
                gaps.push(t - prev);
                prev = t;
            }
        }
        gaps.truncate(10_000);
        let d = ks_exponential(&mut gaps, 2.0);
        assert!(d < 1.628 / 100.0, "KS distance {d}");
    }

    #[test]
    fn marks_follow_their_law() {
        let exp = MarkModel::ExponentialPair { a0: 2.0, a1: 0.5 };
        let mut rng = stream(1, StreamPurpose::PreChange);
        let n = 200_000;
        let pre: f64 = (0..n).map(|_| exp.sample(false, &mut rng)).sum::<f64>() / n as f64;
        let post: f64 = (0..n).map(|_| exp.sample(true, &mut rng)).sum::<f64>() / n as f64;
        assert!(
            (pre - 0.5).abs() < 0.01 && (post - 2.0).abs() < 0.03,
            "{pre} {post}"
        );
        let fin = MarkModel::FiniteDiscrete {
            points: vec![1.0, 2.0],
            p0: vec![0.25, 0.75],
            p1: vec![0.5, 0.5],
        };
        let twos = (0..n)
            .filter(|_| fin.sample(false, &mut rng) == 2.0)
            .count() as f64
            / n as f64;
        assert!((twos - 0.75).abs() < 0.005);
    }

    #[test]
    fn event_stream() {
        let mut rec = PathRecord {
            seed: 0,
            horizon: 3.0,
            arrivals: vec![],
            marks: vec![],
            hidden: None,
        };
        let ev: Vec<_> = stream_events(&rec).collect::<Result<_>>().unwrap();
        assert_eq!(ev, vec![Event::End { horizon: 3.0 }]);
        rec.arrivals = vec![0.5, 1.5];
        rec.marks = vec![1.0, 1.0];
        let ev: Vec<_> = stream_events(&rec).collect::<Result<_>>().unwrap();
        assert_eq!(ev.len(), 3);
        assert!(matches!(ev[1], Event::Arrival { index: 1, time, .. } if time == 1.5));
        rec.arrivals = vec![1.5, 0.5];
        let ev: Vec<_> = stream_events(&rec).collect();
        assert!(ev[0].is_ok() && ev[1].is_err());
        assert_eq!(ev.len(), 2);
    }

    #[test]
    fn jsonl_round_trip_and_schema() {
        let p = params(1.5, 0.2);
        let recs = vec![
            sample_path_p(&p, 5.0, 1).unwrap(),
            sample_path_p0(&p, 5.0, 2).unwrap(),
        ];
        let mut buf = Vec::new();
        PathRecord::write_jsonl(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["seed", "horizon", "theta", "lambda_post", "events"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert!(second["theta"].is_null() && second["lambda_post"].is_null());
        let back = PathRecord::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, recs);
        let bad = r#"{"seed":1,"horizon":2.0,"theta":null,"lambda_post":null,"events":[[1.0,1.0],[0.5,1.0]]}"#;
        assert!(PathRecord::read_jsonl(bad.as_bytes()).is_err());
    }
}
