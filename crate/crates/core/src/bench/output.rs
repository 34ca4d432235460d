use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::BenchError;
use crate::integrators::Trajectory;

pub const CSV_HEADER: &str = "k,t,f,f_gap,grad_norm2,grad_norm1,wall_s";

/// Shortest-round-trip formatting is not fixed-width; 17 significant digits
/// always round-trip an `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the header and one row per record; `f_gap` is `NaN` when `f*` is
/// unknown.
pub fn emit_csv(traj: &Trajectory, path: &Path) -> Result<(), BenchError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &traj.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.k,
                fmt_f64(r.t),
                fmt_f64(r.f),
                fmt_f64(traj.f_gap(r)),
                fmt_f64(r.grad_norm2),
                fmt_f64(r.grad_norm1),
                fmt_f64(r.wall_s)
            )?;
        }
        w.flush()
    };
    write().map_err(io_err(path))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), BenchError> {
    std::fs::write(path, text).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrators::{Record, TerminalReason};

    fn traj(records: Vec<Record>) -> Trajectory {
        Trajectory {
            records,
            terminal_reason: TerminalReason::MaxIters,
            f_star: Some(0.0),
        }
    }

    fn record(k: u64, f: f64) -> Record {
        Record {
            k,
            t: k as f64 * 0.1,
            x: vec![0.0],
            f,
            grad_norm2: 0.5,
            grad_norm1: 0.5,
            wall_s: 0.0,
        }
    }

    #[test]
    fn empty_trajectory_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        emit_csv(&traj(vec![]), &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            format!("{CSV_HEADER}\n")
        );
    }

    #[test]
    fn single_record_gives_two_lf_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.csv");
        emit_csv(&traj(vec![record(0, 1.0)]), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn values_round_trip_bit_exactly() {
        let values = [
            0.1 + 0.2,
            1.0 / 3.0,
            5e-324,
            1.7976931348623157e308,
            -2.5e-17,
            std::f64::consts::PI,
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        let recs = values
            .iter()
            .enumerate()
            .map(|(k, &f)| record(k as u64, f))
            .collect();
        emit_csv(&traj(recs), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let parsed: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        for (a, b) in values.iter().zip(&parsed) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unwritable_path_names_the_path() {
        let err = emit_csv(&traj(vec![]), Path::new("/nonexistent/dir/x.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/x.csv"));
    }
}
