use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest(path: &Path) -> Result<FileDigest, CliError> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::open(path).map_err(io_err)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(io_err)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: path.display().to_string(),
        bytes,
        sha256: hex::encode(h.finalize()),
    })
}

/// Record of one stage run, written next to the stage outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub stage: String,
    pub inputs: Vec<FileDigest>,
    pub params: Value,
    pub counts: BTreeMap<String, Value>,
    pub outputs: Vec<FileDigest>,
    pub wall_time_s: f64,
    pub timestamp: String,
    #[serde(skip)]
    started: Option<Instant>,
}

impl Manifest {
    pub fn start(stage: &str) -> Self {
        Manifest {
            stage: stage.to_string(),
            inputs: Vec::new(),
            params: Value::Null,
            counts: BTreeMap::new(),
            outputs: Vec::new(),
            wall_time_s: 0.0,
            timestamp: String::new(),
            started: Some(Instant::now()),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<(), CliError> {
        self.outputs.push(digest(path)?);
        Ok(())
    }

    pub fn count(&mut self, key: &str, v: impl Serialize) {
        self.counts.insert(key.to_string(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// Stamps time and writes `<dir>/manifests/<stage>.json`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf, CliError> {
        self.wall_time_s = self.started.map_or(0.0, |t| t.elapsed().as_secs_f64());
        self.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let mdir = dir.join("manifests");
        let path = mdir.join(format!("{}.json", self.stage));
        let io_err = |source| CliError::Io { path: path.clone(), source };
        std::fs::create_dir_all(&mdir).map_err(io_err)?;
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| io_err(io::Error::other(e)))?;
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err)?;
        Ok(path)
    }
}
