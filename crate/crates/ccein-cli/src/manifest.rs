//! Run-directory plumbing: the fixed `config/`—`artifacts/`—`metrics/`
//! layout and the `manifest` file listing every output with its SHA-256
//! digest, so a finished run is verifiable after the fact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FORMAT_VERSION: &str = "ccein-manifest v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Joins argv back into one display line, quoting arguments with whitespace.
pub fn shell_join(args: impl Iterator<Item = String>) -> String {
    args.map(|a| {
        if a.is_empty() || a.chars().any(char::is_whitespace) {
            format!("\"{a}\"")
        } else {
            a
        }
    })
    .collect::<Vec<_>>()
    .join(" ")
}

/// An open run directory. Files go through [`RunDir::write`] so the closing
/// manifest lists every one of them; nothing else may write into the run.
pub struct RunDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<RunDir, CliError> {
        for sub in ["config", "artifacts", "metrics"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| {
                CliError::Runtime(format!("cannot create {}: {e}", dir.display()))
            })?;
        }
        Ok(RunDir { root: root.to_path_buf(), files: BTreeMap::new() })
    }

    /// Writes one output file at a path relative to the run root and
    /// records its digest.
    pub fn write(&mut self, rel: &str, contents: &str) -> Result<(), CliError> {
        let path = self.root.join(rel);
        fs::write(&path, contents)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.files.insert(rel.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    /// Writes the manifest and consumes the run. `seeds` are the concrete
    /// episode seeds the command derived from the base seed.
    pub fn finish(
        self,
        command_line: &str,
        config_digest: &str,
        base_seed: u64,
        seeds: &[u64],
    ) -> Result<(), CliError> {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(out, "{MANIFEST_FORMAT_VERSION}").unwrap();
        writeln!(out, "command ccein {command_line}").unwrap();
        writeln!(out, "config {config_digest}").unwrap();
        writeln!(out, "seed {base_seed}").unwrap();
        let list = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        writeln!(out, "seeds {list}").unwrap();
        writeln!(out, "module ccein {}", ccein::VERSION).unwrap();
        writeln!(out, "module ccein-cli {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(out, "format trace {}", ccein::engine::TRACE_FORMAT_VERSION).unwrap();
        writeln!(out, "format world {}", ccein::scenario::WORLD_FORMAT_VERSION).unwrap();
        writeln!(out, "format policy {}", ccein::draosc::policy::CHECKPOINT_FORMAT_VERSION)
            .unwrap();
        writeln!(out, "format classifier {}", ccein::indec::CHECKPOINT_FORMAT_VERSION).unwrap();
        for (rel, digest) in &self.files {
            writeln!(out, "file {rel} {digest}").unwrap();
        }
        out.push_str("end\n");

        let path = self.root.join("manifest");
        fs::write(&path, out)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
