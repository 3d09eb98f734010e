//! Run provenance and artifact sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backend::{records_digest, BackendConfig, ChoiceRecord};
use crate::error::{Error, Result};
use crate::seed::digest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool_version: String,
    pub seed: u64,
    pub backend_id: String,
    pub config: BackendConfig,
    pub config_digest: String,
    pub template_version: String,
    pub dropout_rate: f64,
    pub corpus_digest: String,
    pub n_scenarios: usize,
    pub n_records: usize,
    pub n_errors: usize,
    pub error_threshold: f64,
    pub records_digest: String,
    pub dimension_counts: BTreeMap<String, usize>,
    /// Known departures from the reference protocol for this run.
    pub deviations: Vec<String>,
    /// Wall-clock bounds in Unix seconds; stamped by the caller, not part
    /// of any digest.
    #[serde(default)]
    pub started_unix: Option<u64>,
    #[serde(default)]
    pub finished_unix: Option<u64>,
}

impl RunManifest {
    pub const SCHEMA: u32 = 1;

    /// Check that the manifest describes `records`.
    pub fn check_against(&self, records: &[ChoiceRecord]) -> Result<()> {
        let fail = |what: String| Err(Error::Parse(format!("manifest mismatch: {what}")));
        if self.schema != Self::SCHEMA {
            return fail(format!("schema {}", self.schema));
        }
        if self.n_records != records.len() {
            return fail(format!("{} records, manifest says {}", records.len(), self.n_records));
        }
        if self.n_records + self.n_errors != self.n_scenarios {
            return fail("records + errors != scenarios".into());
        }
        if self.config.digest() != self.config_digest {
            return fail("config digest".into());
        }
        if records_digest(records) != self.records_digest {
            return fail("records digest".into());
        }
        for r in records {
            if r.dropout_rate != self.dropout_rate || r.backend_id != self.backend_id {
                return fail(format!("record {} from another run", r.scenario_id));
            }
            r.check()?;
        }
        Ok(())
    }
}

/// Sidecar describing one output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactManifest {
    pub schema: u32,
    pub tool_version: String,
    pub command: String,
    pub output: String,
    pub output_digest: String,
    /// Input file name → sha256.
    pub inputs: BTreeMap<String, String>,
    pub parameters: BTreeMap<String, String>,
    /// Present on record files written by a corpus run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunManifest>,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(digest(&std::fs::read(path)?))
}

impl ArtifactManifest {
    pub fn new(command: &str, output: &Path) -> Result<Self> {
        Ok(ArtifactManifest {
            schema: RunManifest::SCHEMA,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            output: output
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            output_digest: file_digest(output)?,
            inputs: BTreeMap::new(),
            parameters: BTreeMap::new(),
            run: None,
        })
    }

    pub fn input(mut self, path: &Path) -> Result<Self> {
        self.inputs
            .insert(path.display().to_string(), file_digest(path)?);
        Ok(self)
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn write_beside(&self, output: &Path) -> Result<PathBuf> {
        let path = sidecar_path(output);
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }

    /// Re-hash the output and compare with the recorded digest.
    pub fn verify(output: &Path) -> Result<Self> {
        let m: ArtifactManifest = serde_json::from_slice(&std::fs::read(sidecar_path(output))?)?;
        if file_digest(output)? != m.output_digest {
            return Err(Error::Parse(format!(
                "{} does not match its manifest",
                output.display()
            )));
        }
        Ok(m)
    }
}
