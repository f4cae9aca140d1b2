//! Run manifests: everything needed to re-run a command and check that it
//! reproduced its outputs byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<serde_json::Value>,
    /// Free-form labels (algorithm, epsilon, grid cell key).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, serde_json::Value>,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub outputs: BTreeMap<String, String>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

pub fn now_unix() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        RunManifest {
            tool: "pegs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            argv,
            cwd: std::env::current_dir().unwrap_or_default(),
            started_unix: now_unix(),
            ..Default::default()
        }
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<String> {
        let h = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), h.clone());
        Ok(h)
    }

    pub fn add_output(&mut self, path: &Path) -> CliResult<()> {
        let h = sha256_file(path)?;
        self.outputs.insert(path.display().to_string(), h);
        Ok(())
    }

    pub fn label(&mut self, key: &str, value: impl Serialize) {
        self.labels
            .insert(key.into(), serde_json::to_value(value).expect("labels serialize"));
    }

    /// Writes this manifest next to every recorded output.
    pub fn write_all(&mut self) -> CliResult<()> {
        self.finished_unix = now_unix();
        let text = serde_json::to_string_pretty(self)?;
        for out in self.outputs.keys() {
            let path = manifest_path(Path::new(out));
            std::fs::write(&path, &text).map_err(|e| CliError::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Output paths whose current contents differ from the recorded hashes.
    pub fn mismatched_outputs(&self) -> CliResult<Vec<String>> {
        let base = &self.cwd;
        let mut bad = Vec::new();
        for (path, want) in &self.outputs {
            let p = base.join(path);
            match sha256_file(&p) {
                Ok(h) if &h == want => {}
                Ok(_) => bad.push(path.clone()),
                Err(CliError::Io { .. }) => bad.push(path.clone()),
                Err(e) => return Err(e),
            }
        }
        Ok(bad)
    }
}
