//! Multiplication counts per data update and a wall-clock scaling
//! benchmark.
//!
//! The inversion of an `n × n` matrix is counted as `2n³`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::approx::approx_bank_step;
use crate::askf::AskfState;
use crate::decoupled::bank_step_traced;
use crate::error::{Error, Result};
use crate::scenario::FilterKind;
use crate::models::{LinearMeasurement, Observation, TargetId};
use crate::synthetic::{random_system, LinearSystem, SystemShape};

/// `n` targets, state dim `s`, bias dim `b`, measurement dim `m` per target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountModel {
    pub n: u64,
    pub s: u64,
    pub b: u64,
    pub m: u64,
}

fn inversion(n: u64) -> u128 {
    2 * (n as u128).pow(3)
}

/// Augmented-state filter, predict plus update.
pub fn askf_mult_count(cm: CountModel) -> u128 {
    let [n, s, b, m] = [cm.n, cm.s, cm.b, cm.m].map(u128::from);
    let ns_b = n * s + b;
    let c1 = n * s * s;
    let c2 = 2 * n * s * s * ns_b;
    let c3 = inversion(cm.m * cm.n)
        + m * m * n * n * ns_b
        + 2 * m * n * n * s * s
        + m * m * n * n * s
        + m * n * n * s * b
        + 2 * m * m * n * n * b
        + 2 * m * n * s * b
        + 2 * m * n * b * b;
    let c4 = m * n * (n * s + s + 2 * b);
    let c5 = m * n * ns_b * ns_b + m * n * n * s * s + m * n * n * s * b + m * n * s * b + m * n * b * b;
    c1 + c2 + c3 + c4 + c5
}

/// Decoupled filter: N branch updates, the bias fusion and N feedback
/// updates.
pub fn decoupled_mult_count(cm: CountModel) -> u128 {
    let [n, s, b, m] = [cm.n, cm.s, cm.b, cm.m].map(u128::from);
    let sb = s + b;
    let branch = inversion(cm.m) + 2 * m * m * sb + 3 * m * sb * sb + 3 * sb.pow(3) + 2 * m * sb + sb * sb;
    let fusion = (2 * n + 2) * inversion(cm.b) + (2 * n + 2) * b * b;
    let feedback = s * s * b + 3 * s * b * b + s * b;
    n * branch + fusion + n * feedback
}

/// Wall time per step of one filter on one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub filter: FilterKind,
    pub seconds_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub s: usize,
    pub b: usize,
    pub m: usize,
    pub steps: usize,
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `ln t` against `ln N`, per filter.
    pub slopes: Vec<(FilterKind, f64)>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    sxy / sxx
}

type Scan = BTreeMap<TargetId, LinearMeasurement<f64>>;

const REPEATS: usize = 5;
/// Minimum duration of one timed sample; short runs are batched up to it.
const MIN_SAMPLE_SECS: f64 = 0.02;

fn run_filter(filter: FilterKind, sys: &LinearSystem, scans: &[Scan]) -> Result<()> {
    match filter {
        FilterKind::Decoupled => {
            let mut bank = sys.bank.clone();
            for z in scans {
                bank = bank_step_traced(&bank, z, &sys.dynamics)?.0;
            }
            std::hint::black_box(&bank);
        }
        FilterKind::Approx => {
            let mut bank = sys.bank.clone();
            for z in scans {
                bank = approx_bank_step(&bank, z, &sys.dynamics)?;
            }
            std::hint::black_box(&bank);
        }
        FilterKind::Askf => {
            let mut state = AskfState::from_bank(&sys.bank)?;
            for z in scans {
                let predicted = state.predict_targets(&sys.dynamics)?;
                let b = predicted.bias_mean();
                let lins = z
                    .iter()
                    .map(|(id, obs)| Ok((*id, obs.linearize(&predicted.target_mean(*id)?, &b)?)))
                    .collect::<Result<_>>()?;
                state = predicted.update_targets(&lins)?;
            }
            std::hint::black_box(&state);
        }
    }
    Ok(())
}

/// Best-of-`REPEATS` seconds per step, each sample batching whole runs until
/// it lasts at least `MIN_SAMPLE_SECS`.
fn time_filter(filter: FilterKind, shape: SystemShape, steps: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(shape.n as u64);
    let sys = random_system(&mut rng, shape);
    let scans: Vec<_> = (0..steps).map(|_| sys.measure(&mut rng)).collect();
    let warm = Instant::now();
    run_filter(filter, &sys, &scans)?;
    let batch = (MIN_SAMPLE_SECS / warm.elapsed().as_secs_f64().max(1e-9)).ceil().max(1.0) as usize;
    let mut best = f64::INFINITY;
    for _ in 0..REPEATS {
        let start = Instant::now();
        for _ in 0..batch {
            run_filter(filter, &sys, &scans)?;
        }
        best = best.min(start.elapsed().as_secs_f64() / batch as f64);
    }
    Ok(best / steps as f64)
}

/// Times each filter on random linear systems for every `N` in `n_list`
/// and fits the log-log slope. Sweep points run sequentially on the calling
/// thread.
pub fn scaling_benchmark(filters: &[FilterKind], n_list: &[usize], template: CountModel, steps: usize) -> Result<BenchReport> {
    if n_list.len() < 3 {
        return Err(Error::Config(format!("scaling benchmark needs at least 3 values of N, got {}", n_list.len())));
    }
    if n_list.contains(&0) || steps == 0 {
        return Err(Error::Config("N and steps must be positive".into()));
    }
    let (s, b, m) = (template.s as usize, template.b as usize, template.m as usize);
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &filter in filters {
        let mut points = Vec::new();
        for &n in n_list {
            let t = time_filter(filter, SystemShape { n, s, b, m }, steps)?;
            rows.push(BenchRow {
                n,
                filter,
                seconds_per_step: t,
            });
            points.push((n as f64, t));
        }
        slopes.push((filter, log_log_slope(&points)));
    }
    Ok(BenchReport {
        s,
        b,
        m,
        steps,
        rows,
        slopes,
    })
}
