//! Run manifests: a JSON record of everything needed to reproduce a run
//! within one build — the command, the fully resolved configuration, seeds,
//! the RNG algorithm, output paths, and headline metrics. Written atomically
//! (temp file + rename) so a crash never leaves a half-written manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::numerics::RNG_ALGORITHM;
use crate::Result;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration, flag by flag.
    pub config: BTreeMap<String, serde_json::Value>,
    pub seed: u64,
    pub rng_algorithm: String,
    pub artifact_version: String,
    pub started_unix_ms: u128,
    pub ended_unix_ms: u128,
    pub output_files: Vec<String>,
    /// Headline metrics, e.g. max_correlation or p-values.
    pub metrics: BTreeMap<String, f64>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config: BTreeMap::new(),
            seed,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            artifact_version: ARTIFACT_VERSION.to_string(),
            started_unix_ms: now_ms(),
            ended_unix_ms: 0,
            output_files: Vec::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn set_config(&mut self, key: &str, value: impl serde::Serialize) {
        self.config.insert(key.to_string(), serde_json::to_value(value).expect("serializable"));
    }

    pub fn add_output(&mut self, path: &Path) {
        self.output_files.push(path.display().to_string());
    }

    pub fn set_metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.to_string(), value);
    }

    /// Stamps the end time and writes atomically: serialize to a sibling
    /// temp file, then rename over the target.
    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.ended_unix_ms = now_ms();
        let json = serde_json::to_string_pretty(self)?;
        let tmp_path = path.with_extension(format!("tmp.{}", std::process::id()));
        {
            let mut tmp = fs::File::create(&tmp_path)?;
            tmp.write_all(json.as_bytes())?;
            tmp.write_all(b"\n")?;
            tmp.sync_all()?;
        }
        fs::rename(&tmp_path, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
