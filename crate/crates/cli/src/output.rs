//! Run directory: CSV tables, JSON summaries, plots and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qbsde_core::numerics::{Grid, GridFunction, Region};

use crate::config::{Config, Experiment};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

/// One checked quantity of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    /// Absent for diagnostics that are reported but not judged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

impl Verdict {
    pub fn at_most(check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            check: check.into(),
            value,
            bound: Some(bound),
            pass: Some(value <= bound),
        }
    }

    pub fn flag(check: impl Into<String>, value: f64, pass: bool) -> Self {
        Self {
            check: check.into(),
            value,
            bound: None,
            pass: Some(pass),
        }
    }

    /// A compared quantity that is reported without a verdict.
    pub fn against(check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self {
            check: check.into(),
            value,
            bound: Some(bound),
            pass: None,
        }
    }

    pub fn info(check: impl Into<String>, value: f64) -> Self {
        Self {
            check: check.into(),
            value,
            bound: None,
            pass: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: Experiment,
    pub seed: Option<u64>,
    /// Hash of the effective configuration, canonical JSON.
    pub config_sha256: String,
    pub threads: usize,
    pub wall_time_s: f64,
    pub plots: bool,
    pub outputs: Vec<OutputFile>,
    pub verdicts: Vec<Verdict>,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|_| CliError::MissingManifest(dir.to_path_buf()))?;
        serde_json::from_str(&text).map_err(|e| CliError::Manifest {
            path,
            message: e.to_string(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn config_hash(cfg: &Config) -> Result<String, CliError> {
    Ok(sha256_hex(serde_json::to_string(cfg)?.as_bytes()))
}

/// Collects the files of one run and their hashes.
pub struct RunDir {
    root: PathBuf,
    files: Vec<OutputFile>,
    pub verdicts: Vec<Verdict>,
    pub plots: bool,
}

impl RunDir {
    pub fn create(root: &Path, plots: bool) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|source| CliError::Write {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            verdicts: Vec::new(),
            plots,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|source| CliError::Write { path, source })?;
        self.files.retain(|f| f.name != name);
        self.files.push(OutputFile {
            name: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Buffers a CSV produced by `f` and writes it.
    pub fn write_csv_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> Result<(), CliError>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        self.write_csv_with(name, |buf| {
            let mut w = csv_writer(buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush().map_err(csv::Error::from)?;
            Ok(())
        })
    }

    pub fn write_svg(&mut self, name: &str, svg: String) -> Result<(), CliError> {
        if self.plots {
            self.write(name, svg.as_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self, manifest: impl FnOnce(Vec<OutputFile>, Vec<Verdict>) -> Manifest) -> Result<Manifest, CliError> {
        let mut files = std::mem::take(&mut self.files);
        files.sort_by(|a, b| a.name.cmp(&b.name));
        let m = manifest(files, std::mem::take(&mut self.verdicts));
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        let path = self.path(MANIFEST);
        fs::write(&path, text).map_err(|source| CliError::Write { path, source })?;
        Ok(m)
    }
}

pub fn csv_writer<W: std::io::Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

/// `t, x, <name>_<c>...` for every time node and every node of `region`.
pub fn fields_csv(
    buf: &mut Vec<u8>,
    grid: &Grid,
    region: Region,
    fields: &[(&str, &GridFunction)],
) -> Result<(), CliError> {
    let mut w = csv_writer(buf);
    let mut header = vec!["t".to_string(), "x".to_string()];
    for (name, f) in fields {
        if f.dim() == 1 {
            header.push(name.to_string());
        } else {
            header.extend((0..f.dim()).map(|c| format!("{name}_{c}")));
        }
    }
    w.write_record(&header)?;
    let slices = fields.iter().map(|(_, f)| f.slices()).min().unwrap_or(0);
    let mut rec = Vec::with_capacity(header.len());
    for i in 0..slices {
        for j in grid.indices(region) {
            rec.clear();
            rec.push(grid.time.t(i).to_string());
            rec.push(grid.space.x(j).to_string());
            for (_, f) in fields {
                rec.extend(f.at(i, j).iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
