//! CSV emission. Records end in `\n`, fields are quoted only when needed and
//! numbers use the shortest representation that reads back exactly.

use std::path::Path;

use fracsteer_core::control::SweepTable;
use fracsteer_core::noise::{NoiseRealization, QStructure};
use fracsteer_core::solver::Trajectory;

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "mode", "value", "interval_kind"];
pub const SWEEP_HEADER: [&str; 5] = ["lambda", "interval_index", "mean_sq_error", "std_error", "replicates"];
pub const NOISE_HEADER: [&str; 4] = ["t", "mode", "wiener", "fbm"];
pub const LEDGER_HEADER: [&str; 2] = ["quantity", "value"];

pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()
}

/// Grid values on `[0, T]`; modes are numbered from 1.
pub fn trajectory_rows(tr: &Trajectory) -> Vec<Vec<String>> {
    let path = &tr.path;
    let mut rows = Vec::with_capacity((path.len() - path.origin()) * path.modes());
    for k in path.origin()..path.len() {
        let t = path.time(k);
        let kind = tr.partition.kind_at(t).as_str();
        for (n, v) in path.row(k).iter().enumerate() {
            rows.push(vec![num(t), (n + 1).to_string(), num(*v), kind.to_string()]);
        }
    }
    rows
}

pub fn sweep_rows(table: &SweepTable) -> Vec<Vec<String>> {
    table
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.lambda),
                r.interval_index.to_string(),
                num(r.mean_sq_error),
                num(r.std_error),
                r.replicates.to_string(),
            ]
        })
        .collect()
}

/// Mode coordinates `√q_n β_n(t)` of both noises.
pub fn noise_rows(real: &NoiseRealization, wiener_q: &QStructure, fbm_q: &QStructure) -> Vec<Vec<String>> {
    let modes = real.wiener.ncols().max(real.fbm.ncols());
    let mut rows = Vec::with_capacity(real.grid.len() * modes);
    for (k, &t) in real.grid.iter().enumerate() {
        for n in 0..modes {
            let w = if n < real.wiener.ncols() {
                wiener_q.eigenvalues()[n].sqrt() * real.wiener[(k, n)]
            } else {
                0.0
            };
            let b = if n < real.fbm.ncols() {
                fbm_q.eigenvalues()[n].sqrt() * real.fbm[(k, n)]
            } else {
                0.0
            };
            rows.push(vec![num(t), (n + 1).to_string(), num(w), num(b)]);
        }
    }
    rows
}
