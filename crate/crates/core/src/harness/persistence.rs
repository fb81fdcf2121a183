use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{hex_sha256, HarnessError};
use crate::episodic_memory::{EpisodeRecord, EpisodicStore};
use crate::physical_space::MapSnapshot;
use crate::semantic_memory::RuleStore;
use crate::semantic_space::SemanticSnapshot;

pub const MEMORY_VERSION: u32 = 1;

const INDEX: &str = "index.json";
const RULES: &str = "rules.mem";

/// Everything an agent remembers between runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryBundle {
    pub episodic: EpisodicStore,
    pub rules: Option<RuleStore>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    version: u32,
    episodes: Vec<IndexEntry>,
    rules: Option<FileEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    episode_id: String,
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileEntry {
    file: String,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeFile {
    version: u32,
    episode_id: String,
    created_at: u64,
    scene_tag: Option<String>,
    semantic_space: SemanticSnapshot,
    physical_space: MapSnapshot,
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("memory serializes") + "\n"
}

fn write(dir: &Path, rel: &str, text: &str) -> Result<String, HarnessError> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
    Ok(hex_sha256(text.as_bytes()))
}

/// Writes the bundle under `dir`: `index.json` with a checksum per file,
/// one JSON file per episode, and `rules.mem`.
pub fn snapshot_memory(bundle: &MemoryBundle, dir: &Path) -> Result<(), HarnessError> {
    let mut index = Index {
        version: MEMORY_VERSION,
        episodes: Vec::new(),
        rules: None,
    };
    let old = dir.join("episodes");
    if old.is_dir() {
        std::fs::remove_dir_all(&old).map_err(|e| HarnessError::io(&old, e))?;
    }
    for (i, r) in bundle.episodic.records().iter().enumerate() {
        let file = format!("episodes/{i:06}.json");
        let body = EpisodeFile {
            version: MEMORY_VERSION,
            episode_id: r.episode_id.clone(),
            created_at: r.created_at,
            scene_tag: r.scene_tag.clone(),
            semantic_space: SemanticSnapshot::from_store(&r.semantic_space),
            physical_space: MapSnapshot::from_grid(&r.physical_space),
        };
        let sha256 = write(dir, &file, &pretty(&body))?;
        index.episodes.push(IndexEntry {
            episode_id: r.episode_id.clone(),
            file,
            sha256,
        });
    }
    let rules_path = dir.join(RULES);
    match &bundle.rules {
        Some(rules) => {
            let sha256 = write(dir, RULES, &rules.to_text())?;
            index.rules = Some(FileEntry {
                file: RULES.into(),
                sha256,
            });
        }
        None if rules_path.exists() => {
            std::fs::remove_file(&rules_path).map_err(|e| HarnessError::io(&rules_path, e))?;
        }
        None => {}
    }
    write(dir, INDEX, &pretty(&index))?;
    Ok(())
}

fn integrity(file: &str, reason: impl ToString) -> HarnessError {
    HarnessError::Integrity {
        file: file.to_string(),
        reason: reason.to_string(),
    }
}

fn read_checked(dir: &Path, rel: &str, sha256: &str) -> Result<String, HarnessError> {
    if rel.split(['/', '\\']).any(|p| p == ".." || p.is_empty()) {
        return Err(integrity(rel, "path escapes the memory directory"));
    }
    let path = dir.join(rel);
    let bytes = std::fs::read(&path).map_err(|e| integrity(rel, e))?;
    let actual = hex_sha256(&bytes);
    if actual != sha256 {
        return Err(integrity(rel, format!("checksum {actual} does not match the index")));
    }
    String::from_utf8(bytes).map_err(|e| integrity(rel, e))
}

fn check_version(file: &str, text: &str) -> Result<(), HarnessError> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| integrity(file, e))?;
    let found = v
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| integrity(file, "no version field"))?;
    if found != u64::from(MEMORY_VERSION) {
        return Err(HarnessError::Migration {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected: MEMORY_VERSION,
        });
    }
    Ok(())
}

/// Reads a bundle written by [`snapshot_memory`]. A different format version
/// is a migration error; a checksum or parse failure is an integrity error.
pub fn load_memory(dir: &Path) -> Result<MemoryBundle, HarnessError> {
    let index_path = dir.join(INDEX);
    let text = std::fs::read_to_string(&index_path).map_err(|e| HarnessError::io(&index_path, e))?;
    check_version(INDEX, &text)?;
    let index: Index = serde_json::from_str(&text).map_err(|e| integrity(INDEX, e))?;
    let mut episodic = EpisodicStore::new();
    for entry in &index.episodes {
        let text = read_checked(dir, &entry.file, &entry.sha256)?;
        check_version(&entry.file, &text)?;
        let body: EpisodeFile = serde_json::from_str(&text).map_err(|e| integrity(&entry.file, e))?;
        if body.episode_id != entry.episode_id {
            return Err(integrity(&entry.file, "episode id differs from the index"));
        }
        let record = EpisodeRecord {
            episode_id: body.episode_id,
            semantic_space: body.semantic_space.into_store().map_err(|e| integrity(&entry.file, e))?,
            physical_space: body.physical_space.to_grid().map_err(|e| integrity(&entry.file, e))?,
            created_at: body.created_at,
            scene_tag: body.scene_tag,
        };
        episodic.append(record).map_err(|e| integrity(&entry.file, e))?;
    }
    let rules = match &index.rules {
        Some(f) => {
            let text = read_checked(dir, &f.file, &f.sha256)?;
            Some(RuleStore::from_text(&text).map_err(|e| integrity(&f.file, e))?)
        }
        None => None,
    };
    Ok(MemoryBundle { episodic, rules })
}
