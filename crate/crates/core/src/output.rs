//! Result serialization: per-state CSV files with exact-round-trip floats,
//! plus a run manifest tying every output directory to its configuration.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::SweepRecord;

/// Provenance for one run, written as `manifest.toml` next to the CSVs.
/// Timestamp and wall time vary between reruns; the CSVs do not.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub timestamp: String,
    pub sweep_kind: String,
    pub grid: Vec<f64>,
    pub method: String,
    pub wall_time: f64,
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(config_hash: impl Into<String>, seed: u64, sweep_kind: impl Into<String>) -> Self {
        RunManifest {
            config_hash: config_hash.into(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            timestamp: unix_timestamp(),
            sweep_kind: sweep_kind.into(),
            grid: Vec::new(),
            method: String::new(),
            wall_time: 0.0,
            warnings: Vec::new(),
        }
    }
}

fn unix_timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("{secs}")
}

/// 17 significant digits: enough for exact f64 round trips.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn sanitize(label: &str) -> String {
    // keep the sign distinction: "8+" and "8-" must not collide
    label
        .chars()
        .map(|c| match c {
            '+' => 'p',
            '-' => 'm',
            c if c.is_ascii_alphanumeric() => c,
            _ => '_',
        })
        .collect()
}

const CSV_HEADER: &str = "param,state,eta_mean,eta_spread,eta_loss,residual,n_samples";

fn csv_line(r: &SweepRecord) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        format_float(r.param),
        r.state,
        format_float(r.eta_mean),
        format_float(r.eta_spread),
        format_float(r.eta_loss),
        format_float(r.residual),
        r.n_samples
    )
}

/// Write one CSV per state family plus the manifest. Any I/O failure
/// removes everything written so far, so a directory never holds partial
/// output.
pub fn write_results(
    records: &[SweepRecord],
    manifest: &RunManifest,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let result = write_all(records, manifest, dir, &mut written);
    if let Err(e) = result {
        for f in &written {
            let _ = std::fs::remove_file(f);
        }
        return Err(e);
    }
    Ok(written)
}

fn write_all(
    records: &[SweepRecord],
    manifest: &RunManifest,
    dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    // group by state label, first-appearance order
    let mut families: Vec<&str> = Vec::new();
    for r in records {
        if !families.contains(&r.state.as_str()) {
            families.push(&r.state);
        }
    }
    if families.is_empty() {
        // an empty sweep still documents its header
        let path = dir.join(format!("{}.csv", manifest.sweep_kind));
        written.push(path.clone());
        std::fs::write(&path, format!("{CSV_HEADER}\n"))?;
    }
    for family in families {
        let path = dir.join(format!("{}_{}.csv", manifest.sweep_kind, sanitize(family)));
        written.push(path.clone());
        let mut f = std::fs::File::create(&path)?;
        writeln!(f, "{CSV_HEADER}")?;
        for r in records.iter().filter(|r| r.state == family) {
            writeln!(f, "{}", csv_line(r))?;
        }
    }

    let path = dir.join("manifest.toml");
    written.push(path.clone());
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, text)?;
    Ok(())
}

/// Auxiliary diagnostic table (plateau onsets, rank correlations, ...)
/// written with the same float discipline as the main CSVs.
pub fn write_diagnostic(
    dir: &Path,
    name: &str,
    header: &str,
    rows: &[String],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.csv"));
    let mut f = std::fs::File::create(&path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(path)
}
