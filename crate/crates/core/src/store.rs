//! Run directories: one JSON trace per episode plus a manifest.
//!
//! ```text
//! <run>/manifest.json
//! <run>/traces/<condition>-<agent>-<index>.json
//! <run>/prompts/<condition>-<agent>-<index>.txt   (optional sidecar)
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::environment::Condition;
use crate::harness::Tier;
use crate::trace::{EpisodeTrace, SCHEMA_VERSION, TraceError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_DIR: &str = "traces";
pub const PROMPT_DIR: &str = "prompts";
/// Separator between prompts in a sidecar file.
pub const PROMPT_SEPARATOR: &str = "\n\u{1e}\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub episode_index: u32,
    pub seed: u64,
    pub condition: Condition,
    pub agent: String,
    pub tier: Tier,
    pub sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompts: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub run_id: String,
    /// The plan that produced the run, as submitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<serde_json::Value>,
    pub episode_count: usize,
    pub episodes: Vec<ManifestEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{file}: {error}")]
    Trace { file: String, error: TraceError },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn trace_stem(trace: &EpisodeTrace) -> String {
    format!("{}-{}-{:04}", trace.config.condition, trace.scaffolding.agent, trace.episode_index)
}

/// Write traces (and optional prompt sidecars, parallel to `traces`) under
/// `dir`, then the manifest.
pub fn store_run(
    dir: &Path,
    run_id: &str,
    plan: Option<serde_json::Value>,
    traces: &[EpisodeTrace],
    prompts: Option<&[Option<Vec<String>>]>,
) -> Result<RunManifest, StoreError> {
    let trace_dir = dir.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(io(&trace_dir))?;
    let mut episodes = Vec::with_capacity(traces.len());
    for (i, trace) in traces.iter().enumerate() {
        let stem = trace_stem(trace);
        let file = format!("{TRACE_DIR}/{stem}.json");
        let path = dir.join(&file);
        if episodes.iter().any(|e: &ManifestEntry| e.file == file) {
            return Err(StoreError::Manifest(format!("two episodes map to {file}")));
        }
        let text = trace.to_json();
        fs::write(&path, &text).map_err(io(&path))?;
        let sidecar = match prompts.and_then(|p| p.get(i)).and_then(|p| p.as_ref()) {
            Some(list) => {
                let prompt_dir = dir.join(PROMPT_DIR);
                fs::create_dir_all(&prompt_dir).map_err(io(&prompt_dir))?;
                let rel = format!("{PROMPT_DIR}/{stem}.txt");
                let p = dir.join(&rel);
                fs::write(&p, list.join(PROMPT_SEPARATOR)).map_err(io(&p))?;
                Some(rel)
            }
            None => None,
        };
        episodes.push(ManifestEntry {
            file,
            episode_index: trace.episode_index,
            seed: trace.config.seed,
            condition: trace.config.condition,
            agent: trace.scaffolding.agent.clone(),
            tier: trace.scaffolding.tier,
            sha256: sha256(text.as_bytes()),
            prompts: sidecar,
        });
    }
    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION.to_string(),
        run_id: run_id.to_string(),
        plan,
        episode_count: episodes.len(),
        episodes,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io(&path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<RunManifest, StoreError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(StoreError::MissingFile(path.display().to_string()));
    }
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| StoreError::Manifest(e.to_string()))?;
    if manifest.episode_count != manifest.episodes.len() {
        return Err(StoreError::ManifestMismatch(format!(
            "episode_count is {} but {} episodes are listed",
            manifest.episode_count,
            manifest.episodes.len()
        )));
    }
    Ok(manifest)
}

/// Load every trace in manifest order, checking presence, digests and the
/// identity fields recorded in the manifest.
pub fn load_run(dir: &Path, strict: bool) -> Result<(RunManifest, Vec<EpisodeTrace>), StoreError> {
    let manifest = load_manifest(dir)?;
    let missing: Vec<&str> =
        manifest.episodes.iter().filter(|e| !dir.join(&e.file).is_file()).map(|e| e.file.as_str()).collect();
    if !missing.is_empty() {
        return Err(StoreError::ManifestMismatch(format!(
            "manifest lists {} episodes but {} files are present (missing: {})",
            manifest.episode_count,
            manifest.episode_count - missing.len(),
            missing.join(", ")
        )));
    }
    let mut traces = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let path: PathBuf = dir.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(io(&path))?;
        let trace =
            EpisodeTrace::from_json(&text, strict).map_err(|error| StoreError::Trace { file: entry.file.clone(), error })?;
        if sha256(text.as_bytes()) != entry.sha256 {
            return Err(StoreError::ManifestMismatch(format!("{} does not match its recorded digest", entry.file)));
        }
        if trace.episode_index != entry.episode_index
            || trace.config.seed != entry.seed
            || trace.scaffolding.agent != entry.agent
        {
            return Err(StoreError::ManifestMismatch(format!("{} does not match its manifest entry", entry.file)));
        }
        traces.push(trace);
    }
    Ok((manifest, traces))
}

/// Read a prompt sidecar back into its list of prompts.
pub fn load_prompts(dir: &Path, entry: &ManifestEntry) -> Result<Option<Vec<String>>, StoreError> {
    let Some(rel) = &entry.prompts else { return Ok(None) };
    let path = dir.join(rel);
    if !path.is_file() {
        return Err(StoreError::MissingFile(path.display().to_string()));
    }
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    Ok(Some(text.split(PROMPT_SEPARATOR).map(str::to_string).collect()))
}
