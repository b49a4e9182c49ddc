//! Monte-Carlo RMSE and average NEES with chi-square consistency bounds.
//!
//! Inputs are indexed `[run][step]`. Every run must have the same number of
//! steps.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scenario::MonteCarloOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    RmseLocation,
    /// Bias RMSE divided by the number of sensors.
    RmseBias,
    /// Bias RMSE per sensor component, `sqrt(mean ‖δ̂ − δ‖² / B)`.
    RmseBiasPerSensor,
    NeesLocation,
    NeesBias,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::RmseLocation => "rmse_location",
            MetricKind::RmseBias => "rmse_bias",
            MetricKind::RmseBiasPerSensor => "rmse_bias_per_sensor",
            MetricKind::NeesLocation => "nees_location",
            MetricKind::NeesBias => "nees_bias",
        }
    }
}

/// One metric over time for one filter and (optionally) one target.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub kind: MetricKind,
    pub filter: String,
    pub target: Option<u32>,
    pub values: Vec<f64>,
    pub bounds: Option<(f64, f64)>,
}

impl MetricSeries {
    /// Fraction of steps from `first_step` onward whose value lies within
    /// `bounds`. `None` when the series has no bounds.
    pub fn fraction_within(&self, first_step: usize) -> Option<f64> {
        let (lo, hi) = self.bounds?;
        Some(fraction_within(&self.values, lo, hi, first_step))
    }
}

pub fn fraction_within(values: &[f64], lo: f64, hi: f64, first_step: usize) -> f64 {
    let tail = &values[first_step.min(values.len())..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|v| **v >= lo && **v <= hi).count() as f64 / tail.len() as f64
}

fn check_shape<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<usize> {
    if a.is_empty() {
        return Err(Error::EmptyInput);
    }
    if a.len() != b.len() {
        return Err(Error::dims("metric runs", a.len(), b.len()));
    }
    let steps = a[0].len();
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != steps || rb.len() != steps {
            return Err(Error::dims("metric steps", steps, ra.len().min(rb.len())));
        }
    }
    Ok(steps)
}

fn mean_sq_error(estimates: &[Vec<DVector<f64>>], truths: &[Vec<DVector<f64>>]) -> Result<Vec<f64>> {
    let steps = check_shape(estimates, truths)?;
    let runs = estimates.len() as f64;
    Ok((0..steps)
        .map(|k| {
            estimates
                .iter()
                .zip(truths)
                .map(|(e, t)| (&e[k] - &t[k]).norm_squared())
                .sum::<f64>()
                / runs
        })
        .collect())
}

/// Per step, `sqrt(mean over runs ‖r̂ − r‖²)`.
pub fn rmse_location(estimates: &[Vec<DVector<f64>>], truths: &[Vec<DVector<f64>>]) -> Result<Vec<f64>> {
    Ok(mean_sq_error(estimates, truths)?.into_iter().map(f64::sqrt).collect())
}

/// Per step, `sqrt(mean ‖δ̂ − δ‖²) / n_sensors` and the per-sensor variant
/// `sqrt(mean ‖δ̂ − δ‖² / n_sensors)`.
pub fn rmse_bias(
    estimates: &[Vec<DVector<f64>>],
    truths: &[Vec<DVector<f64>>],
    n_sensors: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mse = mean_sq_error(estimates, truths)?;
    let b = n_sensors as f64;
    Ok((
        mse.iter().map(|v| v.sqrt() / b).collect(),
        mse.iter().map(|v| (v / b).sqrt()).collect(),
    ))
}

/// Per step, mean over runs of `eᵀ C⁻¹ e`.
pub fn nees(
    estimates: &[Vec<DVector<f64>>],
    truths: &[Vec<DVector<f64>>],
    covariances: &[Vec<DMatrix<f64>>],
) -> Result<Vec<f64>> {
    let steps = check_shape(estimates, truths)?;
    check_shape(estimates, covariances)?;
    let runs = estimates.len() as f64;
    (0..steps)
        .map(|k| {
            let mut acc = 0.0;
            for ((e, t), c) in estimates.iter().zip(truths).zip(covariances) {
                let err = &e[k] - &t[k];
                let w = linalg::spd_solve_vec(&c[k], &err).map_err(|_| Error::SingularCovariance)?;
                acc += err.dot(&w);
            }
            Ok(acc / runs)
        })
        .collect()
}

/// Two-sided chi-square interval for the average NEES over `n_runs` runs of
/// a `dim`-dimensional error: `[χ²_{nd}(α/2), χ²_{nd}(1 − α/2)] / n`.
pub fn nees_bounds(n_runs: usize, dim: usize, confidence: f64) -> (f64, f64) {
    let dof = (n_runs * dim).max(1) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    let alpha = 1.0 - confidence;
    let n = n_runs.max(1) as f64;
    (chi.inverse_cdf(alpha / 2.0) / n, chi.inverse_cdf(1.0 - alpha / 2.0) / n)
}

/// All figure metrics for every filter in a Monte-Carlo batch: per-target
/// location RMSE and NEES, and bias RMSE (both variants) and NEES.
pub fn compute_metrics(out: &MonteCarloOutput, n_sensors: usize, dims: usize) -> Result<Vec<MetricSeries>> {
    let runs = out.runs.len();
    if runs == 0 {
        return Err(Error::EmptyInput);
    }
    let n_targets = out.runs[0].truth.states[0].len();
    let mut series = Vec::new();
    for &filter in &out.filters {
        let name = filter.name().to_string();
        // [target][run][step]
        let mut est = vec![vec![Vec::new(); runs]; n_targets];
        let mut truth = vec![vec![Vec::new(); runs]; n_targets];
        let mut cov = vec![vec![Vec::new(); runs]; n_targets];
        // [run][step]
        let mut bias_est = vec![Vec::new(); runs];
        let mut bias_truth = vec![Vec::new(); runs];
        let mut bias_cov = vec![Vec::new(); runs];
        for (r, run) in out.runs.iter().enumerate() {
            for e in run.estimates.iter().filter(|e| e.filter == filter) {
                let i = e.target.0 as usize;
                est[i][r].push(e.x.rows(0, dims).into_owned());
                truth[i][r].push(run.truth.states[e.step][i].rows(0, dims).into_owned());
                cov[i][r].push(e.p_t.view((0, 0), (dims, dims)).into_owned());
                if i == 0 {
                    bias_est[r].push(e.bias.clone());
                    bias_truth[r].push(run.truth.bias.clone());
                    bias_cov[r].push(e.p_b.clone());
                }
            }
        }
        for i in 0..n_targets {
            let target = Some(i as u32);
            series.push(MetricSeries {
                kind: MetricKind::RmseLocation,
                filter: name.clone(),
                target,
                values: rmse_location(&est[i], &truth[i])?,
                bounds: None,
            });
            series.push(MetricSeries {
                kind: MetricKind::NeesLocation,
                filter: name.clone(),
                target,
                values: nees(&est[i], &truth[i], &cov[i])?,
                bounds: Some(nees_bounds(runs, dims, 0.95)),
            });
        }
        let (literal, per_sensor) = rmse_bias(&bias_est, &bias_truth, n_sensors)?;
        let bias_series = [
            (MetricKind::RmseBias, literal, None),
            (MetricKind::RmseBiasPerSensor, per_sensor, None),
            (
                MetricKind::NeesBias,
                nees(&bias_est, &bias_truth, &bias_cov)?,
                Some(nees_bounds(runs, n_sensors, 0.95)),
            ),
        ];
        for (kind, values, bounds) in bias_series {
            series.push(MetricSeries {
                kind,
                filter: name.clone(),
                target: None,
                values,
                bounds,
            });
        }
    }
    Ok(series)
}

/// Looks up one series by filter, kind and target.
pub fn find_series<'a>(series: &'a [MetricSeries], filter: &str, kind: MetricKind, target: Option<u32>) -> Option<&'a MetricSeries> {
    series.iter().find(|s| s.filter == filter && s.kind == kind && s.target == target)
}

pub const METRIC_SCHEMA: &str = "# debiaskf-metrics v1";

/// Writes `filter,step,metric,id,value,bound_low,bound_high` rows after a
/// version line.
pub fn write_metrics_csv<W: Write>(out: W, series: &[MetricSeries]) -> Result<()> {
    let mut out = out;
    writeln!(out, "{METRIC_SCHEMA}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["filter", "step", "metric", "id", "value", "bound_low", "bound_high"])?;
    for s in series {
        let (lo, hi) = s.bounds.map(|(l, h)| (l.to_string(), h.to_string())).unwrap_or_default();
        let id = s.target.map(|t| t.to_string()).unwrap_or_default();
        for (k, v) in s.values.iter().enumerate() {
            w.write_record([s.filter.as_str(), &k.to_string(), s.kind.name(), &id, &v.to_string(), &lo, &hi])?;
        }
    }
    w.flush()?;
    Ok(())
}
