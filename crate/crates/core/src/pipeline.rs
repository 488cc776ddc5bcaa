//! Knowledge-infused prompting and the three task pipelines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{AdapterError, Answerer, Transcriber};
use crate::error::{Error, Result};
use crate::kb::{normalize_name, EntityId, KnowledgeBase, KnowledgeSource};
use crate::linking::{link, link_oracle, transcribe, EncoderChoice, EntityIndex, LinkResult};
use crate::retrieval::{retrieve, RetrievalPolicy, RetrievalResult};
use crate::synth::templates::demonym;
use crate::synth::{relation_overlap, Equivalence, Sample};
use crate::text::tokenize;
use crate::Task;

pub const DEFAULT_INSTRUCTION: &str =
    "Answer the question using the audio and the provided knowledge.";
pub const KNOWLEDGE_HEADER: &str = "Knowledge:";
pub const QUESTION_PREFIX: &str = "Question: ";
pub const REFUSAL: &str = "unknown";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub instruction: String,
    pub knowledge_block: String,
    pub question: String,
    pub audio_refs: Vec<String>,
}

impl Prompt {
    /// Instruction, blank line, optional knowledge section, question line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.instruction);
        out.push_str("\n\n");
        if !self.knowledge_block.is_empty() {
            out.push_str(KNOWLEDGE_HEADER);
            out.push('\n');
            out.push_str(&self.knowledge_block);
            out.push_str("\n\n");
        }
        out.push_str(QUESTION_PREFIX);
        out.push_str(&self.question);
        out.push('\n');
        out
    }

    /// First 16 hex digits of the SHA-256 of the rendering.
    pub fn hash(&self) -> String {
        Sha256::digest(self.render().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

pub fn build_prompt(question: &str, knowledge: &[String], audio_refs: &[String]) -> Prompt {
    build_prompt_with(DEFAULT_INSTRUCTION, question, knowledge, audio_refs)
}

pub fn build_prompt_with(
    instruction: &str,
    question: &str,
    knowledge: &[String],
    audio_refs: &[String],
) -> Prompt {
    Prompt {
        instruction: instruction.to_string(),
        knowledge_block: knowledge
            .iter()
            .map(|k| k.trim())
            .filter(|k| !k.is_empty())
            .collect::<Vec<_>>()
            .join("\n\n"),
        question: question.to_string(),
        audio_refs: audio_refs.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkingMode {
    #[default]
    Predicted,
    /// Gold entities from the sample.
    Oracle,
}

impl fmt::Display for LinkingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkingMode::Predicted => "predicted",
            LinkingMode::Oracle => "oracle",
        })
    }
}

impl FromStr for LinkingMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "predicted" => Ok(LinkingMode::Predicted),
            "oracle" => Ok(LinkingMode::Oracle),
            _ => Err(format!(
                "unknown linking mode {s:?} (expected predicted or oracle)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub knowledge_enabled: bool,
    pub knowledge_source: KnowledgeSource,
    pub linking_mode: LinkingMode,
    pub retrieval: RetrievalPolicy,
    pub instruction: String,
    /// Samples processed concurrently.
    pub max_in_flight: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            knowledge_enabled: true,
            knowledge_source: KnowledgeSource::Full,
            linking_mode: LinkingMode::Predicted,
            retrieval: RetrievalPolicy::default(),
            instruction: DEFAULT_INSTRUCTION.to_string(),
            max_in_flight: 4,
        }
    }
}

/// Model roles a pipeline calls.
#[derive(Clone, Copy)]
pub struct Backends<'a> {
    pub asr: &'a dyn Transcriber,
    pub answerer: &'a dyn Answerer,
    pub retrieval_encoder: &'a EncoderChoice,
}

/// Everything a pipeline run needs. `index` is required for predicted
/// linking.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub kb: &'a KnowledgeBase,
    pub index: Option<&'a EntityIndex>,
    pub config: &'a PipelineConfig,
    pub backends: Backends<'a>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub sample_id: String,
    pub task: Option<Task>,
    pub generated_text: String,
    pub chosen_entities: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained_indices: Option<Vec<usize>>,
    pub prompt_hash: String,
    #[serde(skip)]
    pub links: Vec<LinkResult>,
    #[serde(skip)]
    pub retrieval: Option<RetrievalResult>,
    #[serde(skip)]
    pub prompt: Prompt,
}

impl AnswerRecord {
    pub fn chosen_ids(&self) -> Vec<EntityId> {
        self.links.iter().map(|l| l.chosen).collect()
    }
}

impl Pipeline<'_> {
    fn transcripts(&self, sample: &Sample, inputs: &[usize]) -> Result<Vec<String>> {
        inputs
            .iter()
            .map(|&i| transcribe(&sample.audio_ref_or_proxy(i), self.backends.asr))
            .collect()
    }

    fn index(&self) -> Result<&EntityIndex> {
        self.index
            .ok_or_else(|| Error::InvalidConfig("predicted linking needs an entity index".into()))
    }

    fn oracle(&self, sample: &Sample, input: usize) -> Result<LinkResult> {
        let gold = self.kb.resolve(&sample.inputs[input].gold_entity_name)?;
        link_oracle(self.kb, gold, &self.config.knowledge_source)
    }

    fn finish(
        &self,
        sample: &Sample,
        links: Vec<LinkResult>,
        audio_refs: Vec<String>,
        retrieval: Option<RetrievalResult>,
    ) -> Result<AnswerRecord> {
        let knowledge: Vec<String> = if self.config.knowledge_enabled {
            links.iter().map(|l| l.linked_knowledge.clone()).collect()
        } else {
            Vec::new()
        };
        let prompt = build_prompt_with(
            &self.config.instruction,
            &sample.question,
            &knowledge,
            &audio_refs,
        );
        let generated_text = self
            .backends
            .answerer
            .answer(&prompt.render(), &prompt.audio_refs)?;
        Ok(AnswerRecord {
            sample_id: sample.id.clone(),
            task: Some(sample.task),
            generated_text,
            chosen_entities: links.iter().map(|l| l.chosen_name.clone()).collect(),
            retained_indices: retrieval.as_ref().map(|r| r.retained.clone()),
            prompt_hash: prompt.hash(),
            links,
            retrieval,
            prompt,
        })
    }

    /// Transcripts of all inputs joined by a space, one link.
    pub fn answer_s_aqa(&self, sample: &Sample) -> Result<AnswerRecord> {
        if sample.inputs.is_empty() {
            return Err(sample.invalid("s-AQA sample has no inputs"));
        }
        let all: Vec<usize> = (0..sample.inputs.len()).collect();
        let refs: Vec<String> = all.iter().map(|&i| sample.audio_ref_or_proxy(i)).collect();
        let linked = match self.config.linking_mode {
            LinkingMode::Oracle => self.oracle(sample, 0)?,
            LinkingMode::Predicted => {
                let transcript = self.transcripts(sample, &all)?.join(" ");
                link(&transcript, self.index()?)?
            }
        };
        self.finish(sample, vec![linked], refs, None)
    }

    /// One link per input, knowledge in input order.
    pub fn answer_m_aqa(&self, sample: &Sample) -> Result<AnswerRecord> {
        if sample.inputs.len() != 2 {
            return Err(sample.invalid(format!(
                "m-AQA sample needs 2 inputs, has {}",
                sample.inputs.len()
            )));
        }
        let all = [0, 1];
        self.finish(
            sample,
            self.link_inputs(sample, &all)?,
            all.iter().map(|&i| sample.audio_ref_or_proxy(i)).collect(),
            None,
        )
    }

    fn link_inputs(&self, sample: &Sample, inputs: &[usize]) -> Result<Vec<LinkResult>> {
        match self.config.linking_mode {
            LinkingMode::Oracle => inputs.iter().map(|&i| self.oracle(sample, i)).collect(),
            LinkingMode::Predicted => {
                let index = self.index()?;
                self.transcripts(sample, inputs)?
                    .iter()
                    .map(|t| link(t, index))
                    .collect()
            }
        }
    }

    /// Retrieve, then link and answer over the retained items.
    pub fn answer_r_aqa(&self, sample: &Sample) -> Result<AnswerRecord> {
        if sample.inputs.is_empty() {
            return Err(Error::EmptyPool);
        }
        let all: Vec<usize> = (0..sample.inputs.len()).collect();
        let transcripts = self.transcripts(sample, &all)?;
        let encoder = self.backends.retrieval_encoder;
        let retrieval = match self.config.retrieval {
            RetrievalPolicy::Threshold(t) => retrieve(&sample.question, &transcripts, encoder, t)?,
            RetrievalPolicy::Gold => {
                let mut r = retrieve(&sample.question, &transcripts, encoder, 1.0)?;
                r.retained = sample.gold_relevant();
                r
            }
        };
        let links = match self.config.linking_mode {
            LinkingMode::Oracle => retrieval
                .retained
                .iter()
                .map(|&i| self.oracle(sample, i))
                .collect::<Result<Vec<_>>>()?,
            LinkingMode::Predicted => {
                let index = self.index()?;
                retrieval
                    .retained
                    .iter()
                    .map(|&i| link(&transcripts[i], index))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let refs = retrieval
            .retained
            .iter()
            .map(|&i| sample.audio_ref_or_proxy(i))
            .collect();
        self.finish(sample, links, refs, Some(retrieval))
    }

    pub fn answer(&self, sample: &Sample) -> Result<AnswerRecord> {
        match sample.task {
            Task::SAqa => self.answer_s_aqa(sample),
            Task::MAqa => self.answer_m_aqa(sample),
            Task::RAqa => self.answer_r_aqa(sample),
        }
    }
}

/// Splits a rendered prompt into its knowledge blocks and question.
pub fn parse_prompt(prompt: &str) -> (Vec<String>, String) {
    let question = prompt
        .rfind(QUESTION_PREFIX)
        .map(|i| prompt[i + QUESTION_PREFIX.len()..].trim().to_string())
        .unwrap_or_default();
    let header = format!("\n{KNOWLEDGE_HEADER}\n");
    let blocks = match (prompt.find(&header), prompt.rfind(QUESTION_PREFIX)) {
        (Some(start), Some(end)) if start + header.len() <= end => prompt
            [start + header.len()..end]
            .split("\n\n")
            .map(str::trim)
            .filter(|b| !b.is_empty())
            .map(str::to_string)
            .collect(),
        _ => Vec::new(),
    };
    (blocks, question)
}

#[derive(Debug, Clone, PartialEq)]
struct Fact {
    block: usize,
    relation: String,
    object: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum QuestionKind {
    Open,
    YesNo,
    Count,
}

fn question_kind(question: &str) -> QuestionKind {
    let tokens = tokenize(question);
    if tokens.windows(2).any(|w| w[0] == "how" && w[1] == "many") {
        return QuestionKind::Count;
    }
    const AUX: [&str; 10] = [
        "are", "is", "was", "were", "do", "does", "did", "have", "has", "can",
    ];
    match tokens.first() {
        Some(t) if AUX.contains(&t.as_str()) => QuestionKind::YesNo,
        _ => QuestionKind::Open,
    }
}

/// Deterministic answerer that reads the knowledge section of a prompt.
///
/// Facts are recovered from each knowledge block with the known entity
/// names and relations. The fact whose relation shares the most tokens with
/// the question is selected (objects named in the question break ties,
/// then the earliest fact wins):
/// - open questions get that fact's object;
/// - yes/no questions get "Yes" when every block's object for the selected
///   relation is equivalent to the first block's, else "No";
/// - "how many" questions get the number of blocks whose object for the
///   selected relation is named by the question.
///
/// Without knowledge the answer is `"unknown"`.
#[derive(Debug, Clone, PartialEq)]
pub struct MockOracleAnswerer {
    entity_names: Vec<String>,
    relations: Vec<String>,
    pub equivalence: Equivalence,
}

impl MockOracleAnswerer {
    pub fn new(
        entity_names: impl IntoIterator<Item = String>,
        relations: impl IntoIterator<Item = String>,
        equivalence: Equivalence,
    ) -> Self {
        let by_len_desc = |mut v: Vec<String>| {
            v.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
            v.dedup();
            v
        };
        MockOracleAnswerer {
            entity_names: by_len_desc(entity_names.into_iter().collect()),
            relations: by_len_desc(relations.into_iter().collect()),
            equivalence,
        }
    }

    pub fn from_kb(kb: &KnowledgeBase, equivalence: Equivalence) -> Self {
        Self::new(
            kb.entities().iter().map(|e| e.name.clone()),
            kb.relations(),
            equivalence,
        )
    }

    fn starts_with_ci<'t>(text: &'t str, prefix: &str) -> Option<&'t str> {
        let head = text.get(..prefix.len())?;
        (normalize_name(head) == normalize_name(prefix)).then(|| &text[prefix.len()..])
    }

    fn split_fact(&self, sentence: &str, anchored: bool) -> Option<(String, String)> {
        let sentence = sentence.trim().trim_end_matches('.').trim();
        if anchored {
            for r in &self.relations {
                if let Some(rest) = Self::starts_with_ci(sentence, r) {
                    if rest.starts_with(' ') && !rest.trim().is_empty() {
                        return Some((r.clone(), rest.trim().to_string()));
                    }
                }
            }
            return None;
        }
        let lower = sentence.to_lowercase();
        self.relations.iter().find_map(|r| {
            let needle = format!(" {} ", r.to_lowercase());
            lower.find(&needle).map(|at| {
                let object = sentence[at + needle.len()..].trim().to_string();
                (r.clone(), object)
            })
        })
    }

    fn facts(&self, block_no: usize, block: &str) -> Vec<Fact> {
        let subject = self
            .entity_names
            .iter()
            .find(|n| Self::starts_with_ci(block, n).is_some_and(|rest| rest.starts_with(' ')));
        let pieces: Vec<(String, bool)> = match subject {
            Some(name) => {
                let body = &block[name.len()..];
                body.split(&format!(". {name} "))
                    .map(|p| (p.trim().to_string(), true))
                    .collect()
            }
            None => block.split(". ").map(|p| (p.to_string(), false)).collect(),
        };
        pieces
            .iter()
            .filter_map(|(p, anchored)| self.split_fact(p, *anchored))
            .map(|(relation, object)| Fact {
                block: block_no,
                relation,
                object,
            })
            .collect()
    }

    fn hint(&self, object: &str, question: &str, q_tokens: &[String]) -> bool {
        self.equivalence.question_mentions(object, question)
            || demonym(object).is_some_and(|d| q_tokens.contains(&d.to_lowercase()))
    }

    pub fn mock_oracle_answer(&self, prompt: &str) -> String {
        let (blocks, question) = parse_prompt(prompt);
        let facts: Vec<Fact> = blocks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| self.facts(i, b))
            .collect();
        let q_tokens = tokenize(&question);
        let mut best: Option<(usize, bool, &Fact)> = None;
        for f in &facts {
            let key = (
                relation_overlap(&f.relation, &question),
                self.hint(&f.object, &question, &q_tokens),
            );
            if best.is_none_or(|(o, h, _)| key > (o, h)) {
                best = Some((key.0, key.1, f));
            }
        }
        let Some((_, _, chosen)) = best else {
            return REFUSAL.to_string();
        };
        let per_block: Vec<&str> = (0..blocks.len())
            .filter_map(|b| {
                facts
                    .iter()
                    .find(|f| f.block == b && f.relation == chosen.relation)
                    .map(|f| f.object.as_str())
            })
            .collect();
        match question_kind(&question) {
            QuestionKind::Open => chosen.object.clone(),
            QuestionKind::YesNo => {
                if per_block.len() < 2 {
                    return REFUSAL.to_string();
                }
                let same = per_block
                    .iter()
                    .all(|o| self.equivalence.equivalent(per_block[0], o));
                if same { "Yes" } else { "No" }.to_string()
            }
            QuestionKind::Count => per_block
                .iter()
                .filter(|o| self.equivalence.question_mentions(o, &question))
                .count()
                .to_string(),
        }
    }
}

impl Answerer for MockOracleAnswerer {
    fn answer(
        &self,
        prompt: &str,
        _audio_refs: &[String],
    ) -> std::result::Result<String, AdapterError> {
        Ok(self.mock_oracle_answer(prompt))
    }
}
