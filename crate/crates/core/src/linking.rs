//! Audio entity linking: rank every knowledge-base entity by cosine
//! similarity between the transcript and the entity's knowledge text, and
//! take the top one.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapters::{AudioPayload, Transcriber};
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase, KnowledgeSource};
use crate::text::{cosine, TextEncoder, Vector, Vectorizer};

/// Encoder used for an index.
#[derive(Clone)]
pub enum EncoderChoice {
    /// TF-IDF fitted on the index's knowledge texts.
    TfIdf,
    /// A pre-trained encoder, e.g. a remote `/v1/encode` client.
    External(Arc<dyn TextEncoder>),
}

#[derive(Clone)]
enum IndexEncoder {
    TfIdf(Vectorizer),
    External(Arc<dyn TextEncoder>),
}

impl IndexEncoder {
    fn encode(&self, text: &str) -> Result<Vector> {
        match self {
            IndexEncoder::TfIdf(v) => Ok(v.encode(text)),
            IndexEncoder::External(e) => Ok(e.encode_texts(&[text])?.pop().unwrap_or_default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub entity: EntityId,
    pub name: String,
    pub knowledge_text: String,
    pub vector: Vector,
}

/// Per-entity knowledge texts and their vectors under one knowledge source.
#[derive(Clone)]
pub struct EntityIndex {
    source: KnowledgeSource,
    entries: Vec<IndexEntry>,
    encoder: IndexEncoder,
}

impl fmt::Debug for EntityIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EntityIndex")
            .field("source", &self.source)
            .field("entries", &self.entries.len())
            .finish()
    }
}

impl PartialEq for EntityIndex {
    fn eq(&self, other: &Self) -> bool {
        let same_encoder = match (&self.encoder, &other.encoder) {
            (IndexEncoder::TfIdf(a), IndexEncoder::TfIdf(b)) => a == b,
            (IndexEncoder::External(a), IndexEncoder::External(b)) => Arc::ptr_eq(a, b),
            _ => false,
        };
        same_encoder && self.source == other.source && self.entries == other.entries
    }
}

pub fn build_entity_index(
    kb: &KnowledgeBase,
    source: KnowledgeSource,
    encoder: &EncoderChoice,
) -> Result<EntityIndex> {
    if kb.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let texts: Vec<String> = kb
        .entity_ids()
        .map(|id| kb.knowledge_view(id, &source))
        .collect::<Result<_>>()?;
    let encoder = match encoder {
        EncoderChoice::TfIdf => IndexEncoder::TfIdf(Vectorizer::fit(&texts)?),
        EncoderChoice::External(e) => IndexEncoder::External(Arc::clone(e)),
    };
    let vectors = match &encoder {
        IndexEncoder::TfIdf(v) => texts.iter().map(|t| v.encode(t)).collect(),
        IndexEncoder::External(e) => {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            e.encode_texts(&refs)?
        }
    };
    let entries = kb
        .entity_ids()
        .zip(texts)
        .zip(vectors)
        .map(|((entity, knowledge_text), vector)| IndexEntry {
            entity,
            name: kb.name(entity).expect("id from kb").to_string(),
            knowledge_text,
            vector,
        })
        .collect();
    Ok(EntityIndex {
        source,
        entries,
        encoder,
    })
}

impl EntityIndex {
    pub fn source(&self) -> KnowledgeSource {
        self.source
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The TF-IDF vectorizer, when the index uses the built-in encoder.
    pub fn vectorizer(&self) -> Option<&Vectorizer> {
        match &self.encoder {
            IndexEncoder::TfIdf(v) => Some(v),
            IndexEncoder::External(_) => None,
        }
    }

    pub fn encode(&self, text: &str) -> Result<Vector> {
        self.encoder.encode(text)
    }

    /// Scores every entry against `query`, highest first; equal scores keep
    /// ascending entity id.
    pub fn rank(&self, query: &Vector) -> Vec<(EntityId, f64)> {
        let mut scores: Vec<(EntityId, f64)> = self
            .entries
            .iter()
            .map(|e| (e.entity, cosine(query, &e.vector)))
            .collect();
        sort_scores(&mut scores);
        scores
    }

    fn entry(&self, id: EntityId) -> &IndexEntry {
        &self.entries[id.index()]
    }
}

pub(crate) fn sort_scores(scores: &mut [(EntityId, f64)]) {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub chosen: EntityId,
    pub chosen_name: String,
    pub linked_knowledge: String,
    pub scores: Vec<(EntityId, f64)>,
    pub transcript: String,
}

pub fn link(transcript: &str, index: &EntityIndex) -> Result<LinkResult> {
    if index.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    let query = index.encode(transcript)?;
    let scores = index.rank(&query);
    let top = index.entry(scores[0].0);
    Ok(LinkResult {
        chosen: top.entity,
        chosen_name: top.name.clone(),
        linked_knowledge: top.knowledge_text.clone(),
        scores,
        transcript: transcript.to_string(),
    })
}

/// Element-wise [`link`], order preserved.
pub fn link_many<S: AsRef<str> + Sync>(
    transcripts: &[S],
    index: &EntityIndex,
) -> Result<Vec<LinkResult>> {
    transcripts
        .par_iter()
        .map(|t| link(t.as_ref(), index))
        .collect()
}

/// Bypasses ranking: the gold entity with its knowledge under `source`.
pub fn link_oracle(
    kb: &KnowledgeBase,
    gold: EntityId,
    source: &KnowledgeSource,
) -> Result<LinkResult> {
    Ok(LinkResult {
        chosen: gold,
        chosen_name: kb.name(gold)?.to_string(),
        linked_knowledge: kb.knowledge_view(gold, source)?,
        scores: vec![(gold, 1.0)],
        transcript: String::new(),
    })
}

pub fn transcribe(audio_ref: &str, asr: &dyn Transcriber) -> Result<String> {
    Ok(asr.transcribe(&AudioPayload::Ref(audio_ref.to_string()))?)
}

/// Replaces each character, independently with probability `rate`, by a
/// different random lowercase letter.
pub fn noise_inject(text: &str, rate: f64, seed: u64) -> Result<String> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "noise rate {rate} outside [0, 1]"
        )));
    }
    if rate == 0.0 {
        return Ok(text.to_string());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(text
        .chars()
        .map(|c| {
            if rng.gen::<f64>() >= rate {
                return c;
            }
            loop {
                let r = (b'a' + rng.gen_range(0..26u8)) as char;
                if r != c {
                    return r;
                }
            }
        })
        .collect())
}

/// One line of an exported linking trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTraceRecord {
    pub sample_id: String,
    pub input_index: usize,
    pub chosen_entity_name: String,
    pub gold_entity_name: Option<String>,
    pub top_k: Vec<ScoredName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredName {
    pub entity: String,
    pub score: f64,
}

pub const DEFAULT_TOP_K: usize = 5;

impl LinkTraceRecord {
    pub fn new(
        sample_id: &str,
        input_index: usize,
        result: &LinkResult,
        gold: Option<&str>,
        index: &EntityIndex,
        k: usize,
    ) -> Self {
        LinkTraceRecord {
            sample_id: sample_id.to_string(),
            input_index,
            chosen_entity_name: result.chosen_name.clone(),
            gold_entity_name: gold.map(str::to_string),
            top_k: result
                .scores
                .iter()
                .take(k)
                .map(|&(id, score)| ScoredName {
                    entity: index.entry(id).name.clone(),
                    score,
                })
                .collect(),
        }
    }
}
