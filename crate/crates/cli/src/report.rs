//! Output rendering: the stable CSV schema and the `.meta` sidecar.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{serialize_config, ExperimentConfig};
use crate::runner::{ExecutionReport, ResultRow};

/// The one and only column layout. Absent values are empty fields.
pub const CSV_HEADER: &str =
    "k,gamma,mse_empirical_mean,mse_empirical_stderr,mse_predicted,alpha_star,beta_star";

fn push_opt(line: &mut String, value: Option<f64>) {
    line.push(',');
    if let Some(v) = value {
        // `Display` prints the shortest digits that round-trip, so the file
        // is byte-stable and lossless.
        write!(line, "{v}").expect("writing to String cannot fail");
    }
}

/// Renders rows (already ordered by the runner: `(gamma, k)` ascending) into
/// the stable CSV text form.
pub fn render_csv(rows: &[ResultRow]) -> String {
    debug_assert!(
        rows.windows(2)
            .all(|w| (w[0].gamma, w[0].k) <= (w[1].gamma, w[1].k)),
        "rows must be sorted by (gamma, k)"
    );
    let mut out = String::with_capacity(rows.len() * 64 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let mut line = format!("{},{}", row.k, row.gamma);
        push_opt(&mut line, row.mse_empirical_mean);
        push_opt(&mut line, row.mse_empirical_stderr);
        push_opt(&mut line, row.mse_predicted);
        push_opt(&mut line, row.alpha_star);
        push_opt(&mut line, row.beta_star);
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Hex SHA-256 of the canonical serialized configuration, so equivalent
/// configs hash identically regardless of formatting in the source file.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serialize_config(cfg).as_bytes());
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("writing to String cannot fail");
    }
    hex
}

/// The sidecar path: same stem, `.meta` extension.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut path = csv_path.to_path_buf();
    path.set_extension("meta");
    path
}

fn render_meta(cfg: &ExperimentConfig, report: &ExecutionReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "config_sha256 = {}", config_hash(cfg));
    let _ = writeln!(out, "drasym_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "mode = {}", cfg.mode);
    let _ = writeln!(out, "rows = {}", report.rows.len());
    let _ = writeln!(out, "wall_ms = {}", report.wall.as_millis());
    if let Some(argmins) = &report.argmin_per_snapshot {
        for (k, gamma) in argmins {
            let _ = writeln!(out, "argmin_gamma_at_k_{k} = {gamma}");
        }
    }
    out
}

/// Writes the CSV and its `.meta` sidecar; returns the sidecar path.
pub fn write_outputs(cfg: &ExperimentConfig, report: &ExecutionReport) -> io::Result<PathBuf> {
    fs::write(&cfg.output_path, render_csv(&report.rows))?;
    let meta = meta_path(&cfg.output_path);
    fs::write(&meta, render_meta(cfg, report))?;
    Ok(meta)
}
