//! CSV tables, number formatting and the run manifest.

use std::path::{Path, PathBuf};

use qsg_core::estimators::EstimateWithError;
use qsg_core::ObservableRecord;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Version of the CSV column layouts written by this build.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Version of the manifest layout.
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Fixed decimal notation with 17 significant digits.
///
/// `x` gets `max(0, 16 - e)` decimals where `e` is its decimal exponent after
/// rounding. Non-finite values print as `NaN`, `inf` and `-inf`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return format!("{:.16}", 0.0);
    }
    let sci = format!("{x:.16e}");
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .expect("scientific formatting always has an exponent");
    let decimals = (16 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Column names of an [`ObservableRecord`] with `k` labels.
pub fn observable_header(k: usize) -> Vec<String> {
    let mut h: Vec<String> = ["U", "V", "q", "S", "H", "M", "p_max"].iter().map(|s| s.to_string()).collect();
    h.extend((0..k).map(|i| format!("mean_{i}")));
    h
}

pub fn observable_cells(r: &ObservableRecord) -> Vec<String> {
    let mut c: Vec<String> = [r.u, r.v, r.q, r.s, r.h, r.m, r.p_max].into_iter().map(fmt_f64).collect();
    c.extend(r.mean.weights().iter().copied().map(fmt_f64));
    c
}

/// An in-memory CSV table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(name: &str, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            name: name.to_string(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))
    }
}

/// Rows of `estimates.csv`.
pub struct Estimates {
    table: Table,
    config_hash: String,
}

impl Estimates {
    pub fn new(config_hash: &str) -> Self {
        Self {
            table: Table::new("estimates.csv", ["name", "value", "std_error", "n", "config_hash"]),
            config_hash: config_hash[..16].to_string(),
        }
    }

    pub fn push(&mut self, name: String, e: &EstimateWithError) {
        self.table.push(vec![
            name,
            fmt_f64(e.value),
            fmt_f64(e.std_error),
            e.n.to_string(),
            self.config_hash.clone(),
        ]);
    }

    pub fn into_table(self) -> Table {
        self.table
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
    pub rows: u64,
}

/// Provenance record written next to every set of outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub csv_schema_version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub seed: u64,
    pub build: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
}

pub fn build_id() -> String {
    let base = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
    match option_env!("QSG_BUILD_ID") {
        Some(extra) => format!("{base} ({extra})"),
        None => base.to_string(),
    }
}

/// Digest of the canonical JSON form of a config.
pub fn config_digest<T: Serialize>(config: &T) -> Result<(serde_json::Value, String), CliError> {
    let value = serde_json::to_value(config).map_err(|e| CliError::Runtime(e.to_string()))?;
    let bytes = serde_json::to_vec(&value).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((value, sha256_hex(&bytes)))
}

/// Output directory with a single writer per file.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn write(&mut self, table: &Table) -> Result<(), CliError> {
        let bytes = table.to_bytes()?;
        let path = self.dir.join(&table.name);
        std::fs::write(&path, &bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        self.files.push(OutputFile {
            file: table.name.clone(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            rows: table.rows.len() as u64,
        });
        Ok(())
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.outputs = self.files;
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        text.push('\n');
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(manifest)
    }
}
