//! Text report emitted by a saliency evaluation run.

use std::path::Path;

use crate::error::EvalError;

/// Writes the report: a header describing the run, then one
/// `metric = value` line per metric.
pub fn write_report(
    path: impl AsRef<Path>,
    header: &[(String, String)],
    metrics: &[(String, f64)],
) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut out = String::new();
    for (k, v) in header {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out.push('\n');
    for (name, value) in metrics {
        out.push_str(&format!("{name} = {value:.6}\n"));
    }
    std::fs::write(path, out)
        .map_err(|e| EvalError::Io { path: path.display().to_string(), source: e })
}
