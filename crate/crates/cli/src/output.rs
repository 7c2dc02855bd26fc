//! Output directory with digested artifacts and the run manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";
pub const REPORT: &str = "report.txt";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Round-trip formatting: 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Everything a finished (or failed) run leaves behind.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config_digest: String,
    /// `(file name, sha256)` in write order.
    pub files: Vec<(String, String)>,
    /// Wall-clock seconds per stage; kept out of every digested file.
    pub timings: Vec<(String, f64)>,
    /// Headline numbers of the run.
    pub metrics: BTreeMap<String, f64>,
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn digest_of(&self, file: &str) -> Option<&str> {
        self.files.iter().find(|f| f.0 == file).map(|f| f.1.as_str())
    }
}

pub struct OutputDir {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io { path: dir.to_path_buf(), source: e })?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[(String, String)] {
        &self.files
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|e| CliError::Io { path, source: e })?;
        let digest = sha256_hex(contents.as_bytes());
        match self.files.iter_mut().find(|f| f.0 == name) {
            Some(f) => f.1 = digest,
            None => self.files.push((name.to_string(), digest)),
        }
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, &text)
    }

    /// Writes the manifest; it lists digests of every other file and is not
    /// itself digested.
    pub fn write_manifest(&self, record: &RunRecord) -> Result<(), CliError> {
        let mut text = String::from("kskdv manifest\n");
        let _ = writeln!(text, "version {}", record.version);
        let _ = writeln!(text, "subcommand {}", record.subcommand);
        let _ = writeln!(text, "seed {}", record.seed);
        let _ = writeln!(text, "config sha256:{}", record.config_digest);
        let _ = writeln!(text, "status {}", if record.failure.is_some() { "failed" } else { "ok" });
        for (name, digest) in &record.files {
            let _ = writeln!(text, "file {name} sha256:{digest}");
        }
        for (stage, secs) in &record.timings {
            let _ = writeln!(text, "timing {stage} {secs:.6}");
        }
        let path = self.dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| CliError::Io { path, source: e })
    }
}

/// `file` lines of a manifest as `(name, digest)` pairs.
pub fn manifest_digests(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.strip_prefix("file "))
        .filter_map(|l| l.split_once(' '))
        .map(|(name, digest)| (name.to_string(), digest.trim_start_matches("sha256:").to_string()))
        .collect()
}
