//! Benchmark sample records, line-delimited dataset files, and manifests.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::equivalence::Equivalence;
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, Triplet};
use crate::Task;

/// Prefix of audio references that carry their sentence instead of audio.
pub const TEXT_PROXY_PREFIX: &str = "text-proxy:";

pub fn text_proxy_ref(sentence: &str) -> String {
    format!("{TEXT_PROXY_PREFIX}{sentence}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleInput {
    pub sentence: String,
    #[serde(default)]
    pub audio_ref: Option<String>,
    pub gold_entity_name: String,
    /// r-AQA pools only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant: Option<bool>,
}

/// The predicate behind a count question: items of `relation` whose object
/// is equivalent to `target`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountPredicate {
    pub relation: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_triplet: Option<Triplet>,
    /// Parallel to `inputs`.
    #[serde(default)]
    pub source_triplets: Vec<Triplet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<CountPredicate>,
}

/// One benchmark item of any of the three tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub task: Task,
    pub question: String,
    pub answer: String,
    pub inputs: Vec<SampleInput>,
    pub meta: SampleMeta,
}

impl Sample {
    pub fn gold_entities(&self, kb: &KnowledgeBase) -> Result<Vec<EntityId>> {
        self.inputs
            .iter()
            .map(|i| kb.resolve(&i.gold_entity_name))
            .collect()
    }

    /// Pool indices flagged relevant (r-AQA).
    pub fn gold_relevant(&self) -> Vec<usize> {
        self.inputs
            .iter()
            .enumerate()
            .filter(|(_, i)| i.relevant == Some(true))
            .map(|(k, _)| k)
            .collect()
    }

    /// Audio reference of an input, falling back to a text-proxy reference
    /// when none has been synthesized.
    pub fn audio_ref_or_proxy(&self, input: usize) -> String {
        let item = &self.inputs[input];
        item.audio_ref
            .clone()
            .unwrap_or_else(|| text_proxy_ref(&item.sentence))
    }

    pub(crate) fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidSample {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: Task,
    pub file: String,
    pub samples: usize,
    pub answer_type: String,
    pub unique_answers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_relevant_per_question: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_irrelevant_per_question: Option<f64>,
}

impl DatasetManifest {
    pub fn describe(task: Task, file: &str, samples: &[Sample]) -> Self {
        let unique: BTreeSet<&str> = samples.iter().map(|s| s.answer.as_str()).collect();
        let count_answer = |a: &str| samples.iter().filter(|s| s.answer == a).count();
        let n = samples.len().max(1) as f64;
        let relevant: usize = samples.iter().map(|s| s.gold_relevant().len()).sum();
        let pooled: usize = samples.iter().map(|s| s.inputs.len()).sum();
        DatasetManifest {
            task,
            file: file.to_string(),
            samples: samples.len(),
            answer_type: task.answer_type().to_string(),
            unique_answers: unique.len(),
            yes: (task == Task::MAqa).then(|| count_answer("Yes")),
            no: (task == Task::MAqa).then(|| count_answer("No")),
            avg_relevant_per_question: (task == Task::RAqa).then(|| relevant as f64 / n),
            avg_irrelevant_per_question: (task == Task::RAqa)
                .then(|| (pooled - relevant) as f64 / n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbSummary {
    pub entities: usize,
    pub triplets: usize,
}

/// Top-level manifest written next to the dataset files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub equivalence: Equivalence,
    pub kb: KbSummary,
    pub datasets: Vec<DatasetManifest>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `bytes` to a sibling temp file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("records serialize");
        out.push(b'\n');
    }
    out
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

/// Writes one task's samples as line-delimited records.
pub fn emit_dataset(samples: &[Sample], out_path: &Path) -> Result<DatasetManifest> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    if let Some(other) = samples.iter().find(|s| s.task != first.task) {
        return Err(other.invalid(format!(
            "mixed tasks in one dataset ({} and {})",
            first.task, other.task
        )));
    }
    write_atomic(out_path, &to_jsonl(samples))?;
    let file = out_path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(DatasetManifest::describe(first.task, &file, samples))
}

pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    read_jsonl(path)
}

pub fn write_manifest(dir: &Path, manifest: &SynthManifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&dir.join(MANIFEST_FILE), &bytes)
}

pub fn read_manifest(dir: &Path) -> Result<SynthManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path,
        line: 0,
        source,
    })
}

/// Loads a dataset file, or every dataset listed in a directory's manifest.
pub fn load_samples(path: &Path) -> Result<Vec<Sample>> {
    if path.is_dir() {
        let manifest = read_manifest(path)?;
        let mut all = Vec::new();
        for d in &manifest.datasets {
            all.extend(load_dataset(&path.join(&d.file))?);
        }
        Ok(all)
    } else {
        load_dataset(path)
    }
}
