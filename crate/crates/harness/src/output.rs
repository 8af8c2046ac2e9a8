//! Result files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nnsp_core::io::write_csv;
use nnsp_core::Result;
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig};

pub const RNG_SCHEME: &str =
    "ChaCha8 per (seed, stream); user seeds spread by SplitMix64; chain seeds derived from the master seed and the sweep value";

/// Number formatting shared by every CSV: shortest round-trip decimal,
/// exponent form outside `[1e-4, 1e6)`.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v == 0.0 || (1e-4..1e6).contains(&v.abs()) || v.is_infinite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Output directory that records a content hash for every file written.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<(String, String)>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.root.join(name), bytes)?;
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), blob_hash(bytes)));
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = Vec::new();
        write_csv(&mut buf, header, rows)?;
        self.write_bytes(name, &buf)
    }

    /// Write `manifest.txt` and the canonical `config.txt`.
    pub fn finish(mut self, config: &ExperimentConfig, summary: &[(String, String)]) -> Result<PathBuf> {
        self.write_bytes("config.txt", config.to_text().as_bytes())?;
        let mut m = String::from("{\n");
        let field = |m: &mut String, k: &str, v: &str, last: bool| {
            m.push_str(&format!("  {}: {}{}\n", quote(k), quote(v), if last { "" } else { "," }));
        };
        field(&mut m, "tool", "nnsp", false);
        field(&mut m, "version", env!("CARGO_PKG_VERSION"), false);
        field(&mut m, "experiment", config.kind.name(), false);
        field(&mut m, "config_sha256", &config.hash(), false);
        field(&mut m, "rng", RNG_SCHEME, false);
        m.push_str("  \"files\": {\n");
        for (i, (name, h)) in self.files.iter().enumerate() {
            m.push_str("  ");
            field(&mut m, name, h, i + 1 == self.files.len());
        }
        m.push_str("  },\n  \"summary\": {\n");
        for (i, (k, v)) in summary.iter().enumerate() {
            m.push_str("  ");
            field(&mut m, k, v, i + 1 == summary.len());
        }
        m.push_str("  }\n}\n");
        let path = self.root.join("manifest.txt");
        fs::write(&path, m)?;
        Ok(path)
    }
}

/// Git-style content version: SHA-256 over `blob <len>\0` and the bytes.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("sha256:{}", hex(&h.finalize()))
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
