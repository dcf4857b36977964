//! CSV and JSON writers. Floats are written with 17 significant digits in
//! scientific notation; lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use adreg::dynamics::TrajectoryRecord;
use adreg::regret::RegretReport;

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Bound ids applicable at every horizon, in key order.
pub fn applicable_bounds(report: &RegretReport) -> Vec<&str> {
    report
        .bounds
        .iter()
        .filter(|(_, v)| v.iter().all(|b| b.applicable))
        .map(|(k, _)| k.as_str())
        .collect()
}

pub fn regret_csv(report: &RegretReport) -> String {
    let ids = applicable_bounds(report);
    let mut out = String::from("T,control_regret_mean,control_regret_se,prediction_regret_mean,prediction_regret_se");
    for id in &ids {
        write!(out, ",bound_{id}").unwrap();
    }
    out.push('\n');
    for (j, t) in report.horizons.iter().enumerate() {
        let c = report.control[j];
        let p = report.prediction[j];
        write!(out, "{t},{},{},{},{}", num(c.mean), num(c.se), num(p.mean), num(p.se)).unwrap();
        for id in &ids {
            write!(out, ",{}", num(report.bounds[*id][j].value)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Header and rows `t = 0..=steps`. The last row has no input and no
/// prediction error; those cells are empty. Comparator columns appear only
/// when the comparator was simulated.
pub fn trajectory_csv(rec: &TrajectoryRecord) -> String {
    let n = rec.states_adaptive.dim();
    let m = rec.inputs.dim();
    let with_cmp = !rec.states_comparator.is_empty();
    let mut out = String::from("t");
    for i in 0..n {
        write!(out, ",x_{i}").unwrap();
    }
    if with_cmp {
        for i in 0..n {
            write!(out, ",xc_{i}").unwrap();
        }
    }
    for j in 0..m {
        write!(out, ",u_{j}").unwrap();
    }
    out.push_str(",prediction_error,estimate_norm\n");
    let steps = rec.steps();
    for t in 0..rec.states_adaptive.len() {
        write!(out, "{t}").unwrap();
        for v in rec.states_adaptive.row(t) {
            write!(out, ",{}", num(*v)).unwrap();
        }
        if with_cmp {
            for v in rec.states_comparator.row(t) {
                write!(out, ",{}", num(*v)).unwrap();
            }
        }
        if t < steps {
            for v in rec.inputs.row(t) {
                write!(out, ",{}", num(*v)).unwrap();
            }
            write!(out, ",{}", num(rec.prediction_errors[t])).unwrap();
        } else {
            out.push_str(&",".repeat(m + 1));
        }
        match rec.estimate_norms.get(t) {
            Some(v) => writeln!(out, ",{}", num(*v)).unwrap(),
            None => out.push_str(",\n"),
        }
    }
    out
}

pub fn cartpole_csv(costs: &[f64], diverged: &[bool]) -> String {
    let mut out = String::from("index,average_cost,diverged\n");
    for (i, (c, d)) in costs.iter().zip(diverged).enumerate() {
        writeln!(out, "{i},{},{}", num(*c), u8::from(*d)).unwrap();
    }
    out
}

pub fn write(dir: &Path, name: &str, contents: &str) -> io::Result<()> {
    fs::write(dir.join(name), contents)
}

pub fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(dir.join(name), text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use adreg::dynamics::Series;
    use adreg::linalg::Vector;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(-2.0), "-2.0000000000000000e0");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(num(f64::INFINITY), "inf");
    }

    #[test]
    fn trajectory_rows_and_blank_tail() {
        let mut xa = Series::new(1);
        let mut xc = Series::new(1);
        let mut u = Series::new(1);
        for v in [1.0, 0.5] {
            xa.push(&Vector::from_element(1, v));
            xc.push(&Vector::from_element(1, v));
        }
        u.push(&Vector::from_element(1, 0.25));
        let rec = TrajectoryRecord {
            seed: 0,
            horizon: 1,
            delay: 0,
            states_adaptive: xa,
            states_comparator: xc,
            inputs: u,
            noises: Series::new(1),
            estimates: None,
            estimate_norms: vec![0.0, 0.5],
            prediction_errors: vec![1.0],
            law_grad_sq: vec![0.0],
            diverged_at: None,
        };
        let csv = trajectory_csv(&rec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x_0,xc_0,u_0,prediction_error,estimate_norm");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1,5.0000000000000000e-1,5.0000000000000000e-1,,,"));
        assert!(!csv.contains('\r'));
    }
}
