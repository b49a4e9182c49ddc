//! CSV writers for truth, scans, estimate snapshots and benchmark reports.
//!
//! Every file starts with a `# debiaskf-<kind> v<version>` line followed by
//! the CSV header. Floats use the shortest round-trip representation, so a
//! fixed seed gives byte-identical files.

use std::io::Write;

use crate::complexity::BenchReport;
use crate::error::Result;
use crate::scenario::{EstimateRecord, TruthRecord};

pub const TRUTH_SCHEMA: &str = "# debiaskf-truth v1";
pub const MEASUREMENT_SCHEMA: &str = "# debiaskf-measurements v1";
pub const BIAS_SCHEMA: &str = "# debiaskf-bias v1";
pub const ESTIMATE_SCHEMA: &str = "# debiaskf-estimates v1";
pub const BENCH_SCHEMA: &str = "# debiaskf-bench v1";

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (0..n).map(move |i| format!("{prefix}{i}"))
}

fn start<W: Write>(mut out: W, schema: &str) -> Result<csv::Writer<W>> {
    writeln!(out, "{schema}")?;
    Ok(csv::WriterBuilder::new().flexible(false).from_writer(out))
}

fn first_len(runs: &[(usize, &TruthRecord)], pick: impl Fn(&TruthRecord) -> Option<usize>) -> usize {
    runs.iter().find_map(|(_, t)| pick(t)).unwrap_or(0)
}

/// Rows `run,step,target,x0..` for the true target states.
pub fn write_truth_csv<W: Write>(out: W, runs: &[(usize, &TruthRecord)]) -> Result<()> {
    let dim = first_len(runs, |t| t.states.first()?.first().map(|x| x.len()));
    let mut w = start(out, TRUTH_SCHEMA)?;
    w.write_record(["run", "step", "target"].map(String::from).into_iter().chain(indexed("x", dim)))?;
    for (run, truth) in runs {
        for (step, targets) in truth.states.iter().enumerate() {
            for (id, x) in targets.iter().enumerate() {
                let head = [run.to_string(), step.to_string(), id.to_string()];
                w.write_record(head.into_iter().chain(x.iter().map(f64::to_string)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `run,step,target,z0..` with the biased noisy scans.
pub fn write_measurements_csv<W: Write>(out: W, runs: &[(usize, &TruthRecord)]) -> Result<()> {
    let dim = first_len(runs, |t| t.measurements.first()?.first().map(|z| z.len()));
    let mut w = start(out, MEASUREMENT_SCHEMA)?;
    w.write_record(["run", "step", "target"].map(String::from).into_iter().chain(indexed("z", dim)))?;
    for (run, truth) in runs {
        for (step, targets) in truth.measurements.iter().enumerate() {
            for (id, z) in targets.iter().enumerate() {
                let head = [run.to_string(), step.to_string(), id.to_string()];
                w.write_record(head.into_iter().chain(z.iter().map(f64::to_string)))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `run,sensor,bias` with each run's true bias draw.
pub fn write_bias_csv<W: Write>(out: W, runs: &[(usize, &TruthRecord)]) -> Result<()> {
    let mut w = start(out, BIAS_SCHEMA)?;
    w.write_record(["run", "sensor", "bias"])?;
    for (run, truth) in runs {
        for (sensor, b) in truth.bias.iter().enumerate() {
            w.write_record([run.to_string(), sensor.to_string(), b.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows `run,step,filter,target,x0..,p0..,b0..,pb0..` where `p` and `pb` are
/// the diagonals of the target and fused bias covariances.
pub fn write_estimates_csv<W: Write>(out: W, records: &[EstimateRecord]) -> Result<()> {
    let (s, b) = records.first().map(|r| (r.x.len(), r.bias.len())).unwrap_or((0, 0));
    let mut w = start(out, ESTIMATE_SCHEMA)?;
    let header = ["run", "step", "filter", "target"]
        .map(String::from)
        .into_iter()
        .chain(indexed("x", s))
        .chain(indexed("p", s))
        .chain(indexed("b", b))
        .chain(indexed("pb", b));
    w.write_record(header)?;
    for r in records {
        let head = [r.run.to_string(), r.step.to_string(), r.filter.name().to_string(), r.target.to_string()];
        let (pt, pb) = (r.p_t.diagonal(), r.p_b.diagonal());
        let row = head
            .into_iter()
            .chain(r.x.iter().map(f64::to_string))
            .chain(pt.iter().map(f64::to_string))
            .chain(r.bias.iter().map(f64::to_string))
            .chain(pb.iter().map(f64::to_string));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows `filter,n,s,b,m,seconds_per_step,slope`; the slope repeats on every row of
/// its filter.
pub fn write_bench_csv<W: Write>(out: W, report: &BenchReport) -> Result<()> {
    let mut w = start(out, BENCH_SCHEMA)?;
    w.write_record(["filter", "n", "s", "b", "m", "seconds_per_step", "slope"])?;
    for row in &report.rows {
        let slope = report
            .slopes
            .iter()
            .find(|(f, _)| *f == row.filter)
            .map(|(_, s)| s.to_string())
            .unwrap_or_default();
        w.write_record([
            row.filter.name().to_string(),
            row.n.to_string(),
            report.s.to_string(),
            report.b.to_string(),
            report.m.to_string(),
            row.seconds_per_step.to_string(),
            slope,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TargetId;
    use crate::scenario::FilterKind;
    use nalgebra::{DMatrix, DVector};

    fn truth() -> TruthRecord {
        TruthRecord {
            states: vec![vec![DVector::from_vec(vec![1.0, 2.5])]; 2],
            measurements: vec![vec![DVector::from_vec(vec![3.0])]; 2],
            bias: DVector::from_vec(vec![0.25, -1.0]),
        }
    }

    fn text(f: impl FnOnce(&mut Vec<u8>)) -> String {
        let mut buf = Vec::new();
        f(&mut buf);
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn truth_layout() {
        let t = truth();
        let s = text(|b| write_truth_csv(b, &[(4, &t)]).unwrap());
        assert_eq!(s, "# debiaskf-truth v1\nrun,step,target,x0,x1\n4,0,0,1,2.5\n4,1,0,1,2.5\n");
        let s = text(|b| write_measurements_csv(b, &[(4, &t)]).unwrap());
        assert!(s.ends_with("run,step,target,z0\n4,0,0,3\n4,1,0,3\n"));
        let s = text(|b| write_bias_csv(b, &[(4, &t)]).unwrap());
        assert!(s.ends_with("4,0,0.25\n4,1,-1\n"));
    }

    #[test]
    fn estimates_carry_diagonals_and_tag() {
        let rec = EstimateRecord {
            run: 0,
            step: 3,
            filter: FilterKind::Approx,
            target: TargetId(2),
            x: DVector::from_vec(vec![1.0, 2.0]),
            p_t: DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 9.0]),
            bias: DVector::from_vec(vec![0.5]),
            p_b: DMatrix::from_element(1, 1, 2.0),
        };
        let s = text(|b| write_estimates_csv(b, &[rec]).unwrap());
        let lines: Vec<_> = s.lines().collect();
        assert_eq!(lines[0], ESTIMATE_SCHEMA);
        assert_eq!(lines[1], "run,step,filter,target,x0,x1,p0,p1,b0,pb0");
        assert_eq!(lines[2], "0,3,approx,2,1,2,4,9,0.5,2");
    }

    #[test]
    fn rejects_ragged_rows() {
        let mut t = truth();
        t.states[1][0] = DVector::from_vec(vec![1.0]);
        let mut buf = Vec::new();
        assert!(write_truth_csv(&mut buf, &[(0, &t)]).is_err());
    }
}
