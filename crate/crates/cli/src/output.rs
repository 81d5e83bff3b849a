//! Run directories that clean up after a failed command.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

/// Files written by the current command. Unless [`OutputDir::commit`] is
/// called, dropping it deletes them, and the directory too if this command
/// created it and it is left empty.
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn open(root: &Path) -> Result<Self> {
        let created_root = !root.exists();
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Names of the files written so far, in order.
    pub fn written(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect()
    }

    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.path(name);
        if !self.written.contains(&path) {
            self.written.push(path.clone());
        }
        let file = File::create(&path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if self.created_root {
            // only succeeds when nothing else is inside
            let _ = std::fs::remove_dir(&self.root);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub config: RunConfig,
    pub outputs: Vec<String>,
}

impl Manifest {
    /// The hash covers the config without its output directory, so a
    /// replay elsewhere keeps the same hash.
    pub fn new(command: &str, config: &RunConfig, outputs: Vec<String>) -> Result<Self> {
        let mut hashed = config.clone();
        hashed.out = PathBuf::new();
        let canonical =
            serde_json::to_vec(&hashed).map_err(|e| CliError::Runtime(e.to_string()))?;
        let versions = BTreeMap::from([
            ("bbap-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
            ("bbap-core".to_string(), bbap_core::VERSION.to_string()),
        ]);
        Ok(Self {
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(&canonical)),
            seed: config.seed(),
            versions,
            config: config.clone(),
            outputs,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
