//! Report, CSV tables, raw-sample dumps and the run manifest.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use fragsim::experiments::ConvergenceReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub experiment: String,
    pub version: String,
    pub created_unix: u64,
    pub passed: bool,
}

pub fn config_hash(canonical: &str) -> String {
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Refuses a directory holding results of a different configuration.
pub fn check_output_dir(dir: &Path, hash: &str) -> Result<(), CliError> {
    let manifest = dir.join(MANIFEST);
    if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| CliError::Runtime(format!("{}: {e}", manifest.display())))?;
        let old: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: unreadable manifest ({e}); refusing to overwrite", manifest.display())))?;
        if old.config_sha256 != hash {
            return Err(CliError::Validation(format!(
                "{} holds results of another configuration (hash {}); refusing to overwrite",
                dir.display(),
                old.config_sha256
            )));
        }
    } else if dir.join(REPORT).exists() {
        return Err(CliError::Validation(format!(
            "{} has a report but no manifest; refusing to overwrite",
            dir.display()
        )));
    }
    Ok(())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    series: &'a str,
    param: f64,
    t: f64,
    ks: f64,
    ks_se: f64,
    p_value: f64,
    n_sim: usize,
    n_ref: usize,
    scored: bool,
}

#[derive(Serialize)]
struct LaplaceRow<'a> {
    series: &'a str,
    param: f64,
    t: f64,
    q: f64,
    sim_mean: f64,
    sim_se: f64,
    ref_mean: f64,
    ref_se: f64,
}

#[derive(Serialize)]
struct CellRow {
    param: f64,
    mass: f64,
    time_factor: f64,
    epsilon: f64,
    chip_floor: f64,
    mass_floor: f64,
    events: u64,
    arity_truncations: u64,
    max_dust_jump: f64,
}

/// Writes everything into `dir`, the manifest last.
pub fn write_all(
    dir: &Path,
    report: &ConvergenceReport,
    manifest: &Manifest,
    dump_raw: bool,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(REPORT);
    let mut text = serde_json::to_string_pretty(report).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;

    write_csv(
        &dir.join("comparisons.csv"),
        report.comparisons.iter().map(|c| ComparisonRow {
            series: &c.series,
            param: c.param,
            t: c.t,
            ks: c.ks,
            ks_se: c.ks_se,
            p_value: c.p_value,
            n_sim: c.n_sim,
            n_ref: c.n_ref,
            scored: c.scored,
        }),
    )?;
    write_csv(
        &dir.join("laplace.csv"),
        report.comparisons.iter().flat_map(|c| {
            c.laplace.iter().map(move |l| LaplaceRow {
                series: &c.series,
                param: c.param,
                t: c.t,
                q: l.q,
                sim_mean: l.sim_mean,
                sim_se: l.sim_se,
                ref_mean: l.ref_mean,
                ref_se: l.ref_se,
            })
        }),
    )?;
    write_csv(
        &dir.join("cells.csv"),
        report.cells.iter().map(|c| CellRow {
            param: c.param,
            mass: c.mass,
            time_factor: c.time_factor,
            epsilon: c.truncation.epsilon,
            chip_floor: c.truncation.chip_floor,
            mass_floor: c.truncation.mass_floor,
            events: c.diagnostics.events,
            arity_truncations: c.diagnostics.arity_truncations,
            max_dust_jump: c.diagnostics.max_dust_jump,
        }),
    )?;
    write_csv(&dir.join("quantiles.csv"), &report.quantiles)?;
    write_csv(&dir.join("checks.csv"), &report.checks)?;
    write_csv(&dir.join("verdicts.csv"), &report.verdicts)?;

    let raw = dir.join("raw_samples.jsonl");
    if dump_raw {
        let f = fs::File::create(&raw).map_err(|e| io_err(&raw, e))?;
        let mut w = BufWriter::new(f);
        for r in &report.raw {
            serde_json::to_writer(&mut w, r).map_err(|e| io_err(&raw, e))?;
            w.write_all(b"\n").map_err(|e| io_err(&raw, e))?;
        }
        w.flush().map_err(|e| io_err(&raw, e))?;
    } else if raw.exists() {
        fs::remove_file(&raw).map_err(|e| io_err(&raw, e))?;
    }

    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|e| io_err(&path, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
