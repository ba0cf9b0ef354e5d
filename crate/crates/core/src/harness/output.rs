use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SimRng;

use super::runner::ResultRow;
use super::spec::ExperimentSpec;

pub const SNR_DEFINITION: &str = "SNR = E||A h||^2 / (N sigma_w^2) with E||h||^2 = 1 and unit-energy symbols";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            other => Err(Error::config(format!("unsupported output format {other:?}"))),
        }
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    crate_name: &'static str,
    crate_version: &'static str,
    seed: u64,
    rng: String,
    snr_definition: &'static str,
    nmse_definition: &'static str,
    success_definition: &'static str,
    ber_definition: &'static str,
    files: Vec<String>,
    spec: &'a ExperimentSpec,
}

fn write_csv(rows: &[&ResultRow], path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the result CSV(s) and a `metadata.json` sidecar into `dir`.
///
/// A spec with a single sparsity value produces `results.csv`; a sparsity
/// sweep produces one `results_n{n}.csv` per value so every file keeps the
/// same column set.
pub fn emit_results(rows: &[ResultRow], spec: &ExperimentSpec, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
    let OutputFormat::Csv = format;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sparsities: BTreeSet<usize> = spec.sparsity.iter().copied().collect();
    let mut files = Vec::new();
    if sparsities.len() <= 1 {
        let path = dir.join("results.csv");
        write_csv(&rows.iter().collect::<Vec<_>>(), &path)?;
        files.push(path);
    } else {
        for n in sparsities {
            let path = dir.join(format!("results_n{n}.csv"));
            let subset: Vec<&ResultRow> = rows.iter().filter(|r| r.sparsity == n).collect();
            write_csv(&subset, &path)?;
            files.push(path);
        }
    }
    let meta = Metadata {
        crate_name: env!("CARGO_PKG_NAME"),
        crate_version: env!("CARGO_PKG_VERSION"),
        seed: spec.seed,
        rng: format!(
            "{} seeded per stream via SplitMix64(seed, stream coordinates)",
            std::any::type_name::<SimRng>()
        ),
        snr_definition: SNR_DEFINITION,
        nmse_definition: "10 log10 of the mean of ||h_hat - h||^2 / ||h||^2 over every antenna of every trial, floored at -300 dB",
        success_definition: "fraction of per-antenna CIR estimates (over all trials) whose error ratio is below -10 dB",
        ber_definition: "bit errors over data carriers only (pilots excluded), Gray labels, zero-forcing with the estimate",
        files: files
            .iter()
            .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
            .collect(),
        spec,
    };
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    files.push(path);
    Ok(files)
}
