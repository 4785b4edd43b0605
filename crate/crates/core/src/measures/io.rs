//! Line-oriented text formats.
//!
//! Measures: one atom per line, `t<TAB>mark<TAB>kind<TAB>mass`, where kind is
//! `inaccessible` or `predictable` for realised atoms (mass 1) and
//! `compensator` for compensator atoms (mark = kernel mean, mass = atom mass).
//! Grid paths: CSV with header `t,value`.

use std::fmt::Write as _;

use super::{AtomKind, CompensatorSpec, GridPath, MarkedPointMeasure, MeasureError, TimeGrid};

/// Fixed 17-significant-digit formatting used for every float written to disk.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_measure_tsv(mu: &MarkedPointMeasure, nu: Option<&CompensatorSpec>) -> String {
    let mut out = String::new();
    for a in mu.atoms() {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", fmt_f64(a.time), fmt_f64(a.mark), a.kind, fmt_f64(1.0));
    }
    if let Some(nu) = nu {
        for a in nu.atoms() {
            let mean = if a.mass() > 0.0 {
                a.kernel.integrate(|e| e) / a.mass()
            } else {
                0.0
            };
            let _ = writeln!(
                out,
                "{}\t{}\tcompensator\t{}",
                fmt_f64(a.time),
                fmt_f64(mean),
                fmt_f64(a.mass())
            );
        }
    }
    out
}

/// Reads the realised atoms back (compensator lines are skipped).
pub fn read_measure_tsv(text: &str, grid: &TimeGrid) -> Result<MarkedPointMeasure, MeasureError> {
    let mut atoms = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(MeasureError::Parse(format!(
                "line {}: expected 4 tab-separated columns",
                lineno + 1
            )));
        }
        if cols[2] == "compensator" {
            continue;
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| MeasureError::Parse(format!("line {}: {e}", lineno + 1)))
        };
        let kind: AtomKind = cols[2].parse()?;
        atoms.push((num(cols[0])?, num(cols[1])?, kind));
    }
    MarkedPointMeasure::new(grid, &atoms)
}

pub fn write_path_csv(path: &GridPath) -> String {
    let mut out = String::from("t,value\n");
    for (t, v) in path.grid().nodes().iter().zip(path.values()) {
        let _ = writeln!(out, "{},{}", fmt_f64(*t), fmt_f64(*v));
    }
    out
}
