//! Per-stage run manifests: parameters, input and output digests, details.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_DIR: &str = "manifests";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub toolkit_version: String,
    pub parameters: BTreeMap<String, String>,
    /// Role or path → sha256 of every file the stage read.
    pub inputs: BTreeMap<String, String>,
    /// Path relative to the run directory → sha256.
    pub outputs: BTreeMap<String, String>,
    #[serde(default)]
    pub details: serde_json::Value,
    pub elapsed_ms: u64,
}

pub fn file_digest(path: &Path) -> Result<String, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf).map_err(|e| CliError::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn manifest_path(run: &Path, stage: &str) -> PathBuf {
    run.join(MANIFEST_DIR).join(format!("{stage}.json"))
}

pub fn load(run: &Path, stage: &str) -> Result<Option<Manifest>, CliError> {
    let path = manifest_path(run, stage);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| CliError::Stale(format!("unreadable manifest {}: {e}", path.display())))
}

/// Loads the manifest of a finished stage and checks that none of its outputs
/// changed since.
pub fn verified(run: &Path, stage: &str, hint: &str) -> Result<Manifest, CliError> {
    let m = load(run, stage)?.ok_or_else(|| {
        CliError::Stale(format!("stage `{stage}` has not run in {}; run `{hint}` first", run.display()))
    })?;
    for (rel, want) in &m.outputs {
        let path = run.join(rel);
        let got = if path.exists() { file_digest(&path)? } else { "missing".into() };
        if &got != want {
            return Err(CliError::Stale(format!(
                "{} no longer matches the `{stage}` manifest (expected {}, found {}); re-run `{hint}`",
                path.display(),
                &want[..12.min(want.len())],
                &got[..12.min(got.len())]
            )));
        }
    }
    Ok(m)
}

/// Stage bookkeeping: identity (parameters and input digests) up front,
/// outputs recorded on completion.
pub struct StageRun {
    run: PathBuf,
    stage: String,
    parameters: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    start: Instant,
}

impl StageRun {
    pub fn new(run: &Path, stage: impl Into<String>) -> Self {
        Self {
            run: run.to_path_buf(),
            stage: stage.into(),
            parameters: BTreeMap::new(),
            inputs: BTreeMap::new(),
            start: Instant::now(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> Result<&mut Self, CliError> {
        self.inputs.insert(role.to_string(), file_digest(path)?);
        Ok(self)
    }

    /// Records every output of an upstream manifest as an input.
    pub fn upstream(&mut self, m: &Manifest) -> &mut Self {
        for (rel, d) in &m.outputs {
            self.inputs.insert(format!("{}:{rel}", m.stage), d.clone());
        }
        self
    }

    /// True when an earlier run with the same identity left intact outputs.
    pub fn up_to_date(&self) -> Result<bool, CliError> {
        let Some(m) = load(&self.run, &self.stage)? else { return Ok(false) };
        if m.parameters != self.parameters || m.inputs != self.inputs || m.toolkit_version != crate::VERSION {
            return Ok(false);
        }
        for (rel, want) in &m.outputs {
            let p = self.run.join(rel);
            if !p.exists() || &file_digest(&p)? != want {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn finish(self, outputs: &[PathBuf], details: serde_json::Value) -> Result<Manifest, CliError> {
        let mut out = BTreeMap::new();
        for p in outputs {
            let rel = p.strip_prefix(&self.run).unwrap_or(p);
            out.insert(rel.to_string_lossy().replace('\\', "/"), file_digest(p)?);
        }
        let m = Manifest {
            stage: self.stage,
            toolkit_version: crate::VERSION.to_string(),
            parameters: self.parameters,
            inputs: self.inputs,
            outputs: out,
            details,
            elapsed_ms: self.start.elapsed().as_millis() as u64,
        };
        let path = manifest_path(&self.run, &m.stage);
        let dir = path.parent().expect("manifest has a parent");
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Core(e.into()))?;
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(m)
    }
}
