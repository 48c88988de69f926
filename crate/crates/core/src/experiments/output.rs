//! Artifact emission: atomic file writes, CSV tables with fixed headers,
//! and the JSON report. Numbers are printed with 17 significant digits so
//! artifacts round-trip f64 exactly.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::brown::BrownField;
use crate::error::{Error, Result};
use crate::randmat::SpectrumSample;

use super::RunReport;

/// Formats a float with 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes bytes atomically: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// field.csv: one row per grid node with potential, density, and the region
/// label as a string.
pub fn write_field_csv(dir: &Path, field: &BrownField) -> Result<PathBuf> {
    let n = field.grid.n;
    let mut out = String::with_capacity(n * n * 64);
    out.push_str("re,im,potential,density,label\n");
    for i in 0..n {
        for j in 0..n {
            let z = field.node(i, j);
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt(z.re),
                fmt(z.im),
                fmt(field.potential[(i, j)]),
                fmt(field.density[(i, j)]),
                field.region_at(i, j).as_str()
            ));
        }
    }
    let path = dir.join("field.csv");
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// eigenvalues.csv: one row per eigenvalue with its trial index.
pub fn write_eigenvalues_csv(dir: &Path, samples: &[SpectrumSample]) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str("trial,re,im\n");
    for s in samples {
        for l in &s.eigenvalues {
            out.push_str(&format!("{},{},{}\n", s.trial, fmt(l.re), fmt(l.im)));
        }
    }
    let path = dir.join("eigenvalues.csv");
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// svals.csv: singular values keyed by (trial, probe, rank), rank 0 being
/// the largest.
pub fn write_svals_csv(dir: &Path, samples: &[SpectrumSample]) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str("trial,lambda_re,lambda_im,rank,value\n");
    for s in samples {
        for (probe, svals) in &s.probes {
            for (rank, v) in svals.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    s.trial,
                    fmt(probe.re),
                    fmt(probe.im),
                    rank,
                    fmt(*v)
                ));
            }
        }
    }
    let path = dir.join("svals.csv");
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// density.csv for the convolution subcommand: (x, density) rows.
pub fn write_density_csv(dir: &Path, rows: &[(f64, f64)]) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str("x,density\n");
    for (x, d) in rows {
        out.push_str(&format!("{},{}\n", fmt(*x), fmt(*d)));
    }
    let path = dir.join("density.csv");
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// Arbitrary extra table, one header plus float rows.
pub fn write_table_csv(
    dir: &Path,
    name: &str,
    header: &str,
    rows: &[Vec<f64>],
) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| fmt(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let path = dir.join(name);
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// report.json with metrics, pass flags, timing, and provenance.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(report)?;
    let path = dir.join("report.json");
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Sampled cloud as CSV (re, im) for replotting.
pub fn write_cloud_csv(dir: &Path, name: &str, cloud: &[Complex64]) -> Result<PathBuf> {
    let mut out = String::new();
    out.push_str("re,im\n");
    for z in cloud {
        out.push_str(&format!("{},{}\n", fmt(z.re), fmt(z.im)));
    }
    let path = dir.join(name);
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}
