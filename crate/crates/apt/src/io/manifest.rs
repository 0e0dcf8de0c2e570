//! Dataset manifests: one JSON record per line. A record points at its
//! audio by relative path and carries everything the sequence builder
//! needs, so training never re-derives task logic from the waveform.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Meta {
    pub template_id: u32,
    pub seed: u64,
    /// Whether swapping the clip order must flip the answer.
    #[serde(default)]
    pub order_sensitive: bool,
    /// Text spliced in after each clip's prompt rows ("" for none);
    /// parallel to `audio_refs` when present.
    #[serde(default)]
    pub clip_texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Record {
    pub task: String,
    pub audio_refs: Vec<String>,
    pub prompt: String,
    pub target: String,
    pub meta: Meta,
}

impl Record {
    pub fn validate(&self) -> Result<()> {
        if self.audio_refs.is_empty() {
            return Err(Error::Manifest(format!(
                "{} record with no audio references",
                self.task
            )));
        }
        if !self.meta.clip_texts.is_empty() && self.meta.clip_texts.len() != self.audio_refs.len()
        {
            return Err(Error::Manifest(format!(
                "{} record: {} clip texts for {} clips",
                self.task,
                self.meta.clip_texts.len(),
                self.audio_refs.len()
            )));
        }
        if self.target.is_empty() {
            return Err(Error::Manifest(format!("{} record with empty target", self.task)));
        }
        Ok(())
    }

    /// Clip text for clip `i`, if any.
    pub fn clip_text(&self, i: usize) -> &str {
        self.meta.clip_texts.get(i).map(String::as_str).unwrap_or("")
    }
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut out = fs::File::create(path)?;
    for r in records {
        let line = serde_json::to_string(r)
            .map_err(|e| Error::Manifest(format!("serialize: {e}")))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?;
        r.validate()?;
        records.push(r);
    }
    if records.is_empty() {
        return Err(Error::Manifest(format!("{} is empty", path.display())));
    }
    Ok(records)
}

/// Hex sha256 of the manifest file, for asserting two runs saw identical
/// data.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
