//! Benchmark synthesis: s-AQA, m-AQA and r-AQA samples drawn from a
//! triplet knowledge base.
//!
//! Only triplets whose relation occurs once for their entity are used as
//! question sources, so every question has a single correct object.

pub mod audio;
pub mod dataset;
pub mod equivalence;
pub mod templates;

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{mix_seed, normalize_name, EntityId, KnowledgeBase, Triplet};
use crate::text::tokenize;
use crate::Task;

pub use audio::{synth_audio, AudioFailure, AudioReport, AudioSource};
pub use dataset::{
    emit_dataset, load_dataset, load_samples, CountPredicate, DatasetManifest, Sample, SampleInput,
    SampleMeta, SynthManifest,
};
pub use equivalence::{Equivalence, EquivalenceKind};
pub use templates::{render_question, Template, TemplateTable};

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub const fn new(min: usize, max: usize) -> Self {
        CountRange { min, max }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.gen_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub max_input_sentences_per_sample: usize,
    pub yes_equivalence: Equivalence,
    pub relevant_per_question: CountRange,
    pub irrelevant_per_question: CountRange,
    /// `None` keeps every eligible s-AQA sample.
    pub s_aqa_samples: Option<usize>,
    pub m_aqa_samples: usize,
    pub r_aqa_samples: usize,
    pub templates: TemplateTable,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            max_input_sentences_per_sample: 3,
            yes_equivalence: Equivalence::ExactObject,
            relevant_per_question: CountRange::new(1, 3),
            irrelevant_per_question: CountRange::new(6, 11),
            s_aqa_samples: None,
            m_aqa_samples: 500,
            r_aqa_samples: 115,
            templates: TemplateTable::default(),
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        SynthConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.max_input_sentences_per_sample == 0 {
            return bad("max_input_sentences_per_sample must be positive");
        }
        for (name, r) in [
            ("relevant_per_question", self.relevant_per_question),
            ("irrelevant_per_question", self.irrelevant_per_question),
        ] {
            if r.min == 0 || r.min > r.max {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be a non-empty range of positive counts"
                )));
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SynthConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("synth config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn rng(&self, task: Task) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, task as u64 + 1))
    }
}

/// Number of relation tokens that also occur in the question.
pub fn relation_overlap(relation: &str, question: &str) -> usize {
    let q: HashSet<String> = tokenize(question).into_iter().collect();
    let mut rel = tokenize(relation);
    rel.sort();
    rel.dedup();
    rel.iter().filter(|t| q.contains(*t)).count()
}

/// Triplets whose relation occurs exactly once for the entity.
fn single_valued(triplets: &[Triplet]) -> Vec<usize> {
    (0..triplets.len())
        .filter(|&i| {
            triplets
                .iter()
                .filter(|t| t.relation == triplets[i].relation)
                .count()
                == 1
        })
        .collect()
}

fn input(t: &Triplet, relevant: Option<bool>) -> SampleInput {
    SampleInput {
        sentence: t.sentence(),
        audio_ref: None,
        gold_entity_name: t.subject.clone(),
        relevant,
    }
}

fn assign_ids(samples: &mut [Sample], task: Task) {
    for (i, s) in samples.iter_mut().enumerate() {
        s.id = format!("{}-{:05}", task, i);
    }
}

/// One sample per (entity, excluded triplet): the excluded triplet becomes
/// the question and up to `max_input_sentences_per_sample` of the entity's
/// other triplets become the spoken input.
pub fn gen_s_aqa(kb: &KnowledgeBase, config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = config.rng(Task::SAqa);
    let mut samples = Vec::new();
    for id in kb.entity_ids() {
        let triplets = kb.triplets(id)?;
        if triplets.len() < 2 {
            continue;
        }
        for i in single_valued(triplets) {
            let excluded = &triplets[i];
            let Ok(question) = render_question(
                &config.templates,
                &[excluded],
                Task::SAqa,
                &config.yes_equivalence,
            ) else {
                continue;
            };
            let own = relation_overlap(&excluded.relation, &question);
            if triplets.iter().any(|t| {
                t.relation != excluded.relation && relation_overlap(&t.relation, &question) >= own
            }) {
                continue;
            }
            let excluded_sentence = excluded.sentence();
            let mut rest: Vec<usize> = (0..triplets.len())
                .filter(|&j| j != i && !triplets[j].sentence().contains(&excluded_sentence))
                .collect();
            if rest.is_empty() {
                continue;
            }
            rest.shuffle(&mut rng);
            rest.truncate(config.max_input_sentences_per_sample);
            rest.sort_unstable();
            let sources: Vec<Triplet> = rest.iter().map(|&j| triplets[j].clone()).collect();
            samples.push(Sample {
                id: String::new(),
                task: Task::SAqa,
                question,
                answer: excluded.object.clone(),
                inputs: sources.iter().map(|t| input(t, None)).collect(),
                meta: SampleMeta {
                    excluded_triplet: Some(excluded.clone()),
                    source_triplets: sources,
                    predicate: None,
                },
            });
        }
    }
    if samples.is_empty() {
        return Err(Error::NoEligibleEntity);
    }
    if let Some(limit) = config.s_aqa_samples {
        if limit < samples.len() {
            let mut keep = rand::seq::index::sample(&mut rng, samples.len(), limit).into_vec();
            keep.sort_unstable();
            samples = keep.into_iter().map(|k| samples[k].clone()).collect();
        }
    }
    assign_ids(&mut samples, Task::SAqa);
    Ok(samples)
}

/// Candidate (entity, triplet index) lists per relation, restricted to
/// single-valued relations with templates for `task`.
fn by_relation(
    kb: &KnowledgeBase,
    config: &SynthConfig,
    task: Task,
) -> Vec<(String, Vec<(EntityId, usize)>)> {
    let mut out: Vec<(String, Vec<(EntityId, usize)>)> = Vec::new();
    for relation in kb.relations() {
        if !config.templates.has(&relation, task) {
            continue;
        }
        let mut members = Vec::new();
        for id in kb.entity_ids() {
            let triplets = kb.triplets(id).expect("id from kb");
            if let Some(&i) = single_valued(triplets)
                .iter()
                .find(|&&i| triplets[i].relation == relation)
            {
                members.push((id, i));
            }
        }
        out.push((relation, members));
    }
    out
}

/// Yes/No pairs over two entities sharing a relation, balanced within one.
pub fn gen_m_aqa(kb: &KnowledgeBase, config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = config.rng(Task::MAqa);
    let eq = &config.yes_equivalence;
    let mut yes = Vec::new();
    let mut no = Vec::new();
    for (_, members) in by_relation(kb, config, Task::MAqa) {
        for a in 0..members.len() {
            for b in a + 1..members.len() {
                let ta = &kb.triplets(members[a].0)?[members[a].1];
                let tb = &kb.triplets(members[b].0)?[members[b].1];
                let pair = (ta.clone(), tb.clone());
                if eq.equivalent(&ta.object, &tb.object) {
                    yes.push(pair);
                } else {
                    no.push(pair);
                }
            }
        }
    }
    if yes.is_empty() && no.is_empty() {
        return Err(Error::NoEligiblePair);
    }

    let render = |pairs: Vec<(Triplet, Triplet)>, rng: &mut ChaCha8Rng| {
        let mut rendered = Vec::new();
        for (a, b) in pairs {
            let (first, second) = if rng.gen_bool(0.5) { (b, a) } else { (a, b) };
            if let Ok(q) = render_question(&config.templates, &[&first, &second], Task::MAqa, eq) {
                rendered.push((first, second, q));
            }
        }
        rendered.shuffle(rng);
        rendered
    };
    let yes = render(yes, &mut rng);
    let no = render(no, &mut rng);

    let target = config.m_aqa_samples;
    let mut n_yes = yes.len().min(target.div_ceil(2));
    let mut n_no = no.len().min(target - n_yes);
    n_yes = n_yes.min(n_no + 1);
    n_no = n_no.min(n_yes + 1);

    let mut samples: Vec<Sample> = yes
        .into_iter()
        .take(n_yes)
        .map(|p| (p, "Yes"))
        .chain(no.into_iter().take(n_no).map(|p| (p, "No")))
        .map(|((a, b, question), answer)| Sample {
            id: String::new(),
            task: Task::MAqa,
            question,
            answer: answer.to_string(),
            inputs: vec![input(&a, None), input(&b, None)],
            meta: SampleMeta {
                excluded_triplet: None,
                source_triplets: vec![a, b],
                predicate: None,
            },
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::NoEligiblePair);
    }
    samples.shuffle(&mut rng);
    assign_ids(&mut samples, Task::MAqa);
    Ok(samples)
}

const R_AQA_ATTEMPTS_PER_SAMPLE: usize = 50;

/// Count questions over a pool of relevant items (sharing one relation)
/// and distractors that differ from every relevant item in subject,
/// relation and object.
pub fn gen_r_aqa(kb: &KnowledgeBase, config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = config.rng(Task::RAqa);
    let eq = &config.yes_equivalence;
    let relations: Vec<_> = by_relation(kb, config, Task::RAqa)
        .into_iter()
        .filter(|(_, m)| !m.is_empty())
        .collect();
    if relations.is_empty() {
        return Err(Error::InsufficientDistractors(
            "no relation with count templates".into(),
        ));
    }
    let all: Vec<&Triplet> = kb
        .entities()
        .iter()
        .flat_map(|e| e.triplets.iter())
        .collect();

    let mut samples = Vec::new();
    let mut last_failure = String::from("no attempt made");
    let budget = config.r_aqa_samples * R_AQA_ATTEMPTS_PER_SAMPLE;
    for _ in 0..budget {
        if samples.len() == config.r_aqa_samples {
            break;
        }
        let (relation, members) = &relations[rng.gen_range(0..relations.len())];
        let k = config.relevant_per_question.draw(&mut rng);
        if members.len() < k {
            last_failure = format!(
                "relation {relation:?} has {} entities, need {k}",
                members.len()
            );
            continue;
        }
        let chosen: Vec<&Triplet> = members
            .choose_multiple(&mut rng, k)
            .map(|&(id, i)| &kb.triplets(id).expect("id from kb")[i])
            .collect();
        let target = chosen[0];
        let Ok(question) = render_question(&config.templates, &[target], Task::RAqa, eq) else {
            last_failure = format!("no usable count template for {relation:?}");
            continue;
        };
        // The question text must pick out exactly the equivalent objects.
        if chosen.iter().any(|t| {
            eq.equivalent(&t.object, &target.object) != eq.question_mentions(&t.object, &question)
        }) {
            last_failure = "question text does not separate the relevant objects".into();
            continue;
        }

        let subjects: HashSet<String> = chosen.iter().map(|t| normalize_name(&t.subject)).collect();
        let objects: HashSet<String> = chosen.iter().map(|t| normalize_name(&t.object)).collect();
        let candidates: Vec<&Triplet> = all
            .iter()
            .copied()
            .filter(|t| {
                &t.relation != relation
                    && !subjects.contains(&normalize_name(&t.subject))
                    && !objects.contains(&normalize_name(&t.object))
            })
            .collect();
        let m = config.irrelevant_per_question.draw(&mut rng);
        if candidates.len() < m {
            last_failure = format!(
                "{} distractor candidates for relation {relation:?}, need {m}",
                candidates.len()
            );
            continue;
        }
        let distractors: Vec<&Triplet> = candidates.choose_multiple(&mut rng, m).copied().collect();

        let mut pool: Vec<(&Triplet, bool)> = chosen
            .iter()
            .map(|&t| (t, true))
            .chain(distractors.iter().map(|&t| (t, false)))
            .collect();
        pool.shuffle(&mut rng);
        let count = chosen
            .iter()
            .filter(|t| eq.equivalent(&t.object, &target.object))
            .count();
        samples.push(Sample {
            id: String::new(),
            task: Task::RAqa,
            question,
            answer: count.to_string(),
            inputs: pool.iter().map(|&(t, rel)| input(t, Some(rel))).collect(),
            meta: SampleMeta {
                excluded_triplet: None,
                source_triplets: pool.iter().map(|&(t, _)| t.clone()).collect(),
                predicate: Some(CountPredicate {
                    relation: relation.clone(),
                    target: target.object.clone(),
                }),
            },
        });
    }
    if samples.is_empty() {
        return Err(Error::InsufficientDistractors(last_failure));
    }
    assign_ids(&mut samples, Task::RAqa);
    Ok(samples)
}

pub fn generate(kb: &KnowledgeBase, config: &SynthConfig, task: Task) -> Result<Vec<Sample>> {
    match task {
        Task::SAqa => gen_s_aqa(kb, config),
        Task::MAqa => gen_m_aqa(kb, config),
        Task::RAqa => gen_r_aqa(kb, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{ingest_triplets, TripletRecord};

    fn make_kb(rows: &[(&str, &str, &str)]) -> KnowledgeBase {
        ingest_triplets(
            rows.iter()
                .enumerate()
                .map(|(i, (s, r, o))| TripletRecord::new(i + 1, s, r, o)),
        )
        .unwrap()
        .0
    }

    #[test]
    fn s_aqa_worked_example() {
        let kb = make_kb(&[
            ("Subway", "established in", "1965"),
            ("Subway", "serves", "salad and sandwich"),
        ]);
        let cfg = SynthConfig::default();
        let samples = gen_s_aqa(&kb, &cfg).unwrap();
        let s = samples
            .iter()
            .find(|s| s.question == "When was Subway established in?")
            .unwrap();
        assert_eq!(s.answer, "1965");
        assert_eq!(s.inputs.len(), 1);
        assert_eq!(s.inputs[0].sentence, "Subway serves salad and sandwich.");
        assert_eq!(
            s.meta.excluded_triplet,
            Some(Triplet::new("Subway", "established in", "1965").unwrap())
        );
    }

    #[test]
    fn single_triplet_entity_contributes_nothing() {
        let kb1 = make_kb(&[("KFC", "established in", "1952")]);
        assert!(matches!(
            gen_s_aqa(&kb1, &SynthConfig::default()),
            Err(Error::NoEligibleEntity)
        ));
        let kb2 = make_kb(&[
            ("KFC", "established in", "1952"),
            ("Subway", "established in", "1965"),
            ("Subway", "serves", "salad and sandwich"),
        ]);
        let samples = gen_s_aqa(&kb2, &SynthConfig::default()).unwrap();
        assert!(samples
            .iter()
            .all(|s| s.inputs[0].gold_entity_name == "Subway"));
    }

    #[test]
    fn multi_valued_relations_are_not_asked() {
        let kb = make_kb(&[
            ("Subway", "serves", "salad"),
            ("Subway", "serves", "sandwich"),
            ("Subway", "established in", "1965"),
        ]);
        let samples = gen_s_aqa(&kb, &SynthConfig::default()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].answer, "1965");
        assert_eq!(samples[0].inputs.len(), 2);
    }

    #[test]
    fn m_aqa_worked_examples() {
        let kb = make_kb(&[
            ("Subway", "established in", "1965"),
            ("Arby's", "established in", "1964"),
        ]);
        let cfg = SynthConfig {
            yes_equivalence: Equivalence::DecadeBucket,
            ..Default::default()
        };
        let samples = gen_m_aqa(&kb, &cfg).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].answer, "Yes");
        assert_eq!(
            samples[0].question,
            "Are these restaurants established in the same decade?"
        );

        let kb = make_kb(&[
            ("Hotto Motto", "origin country", "Japan"),
            ("Krispy Kreme", "origin country", "United States"),
        ]);
        let samples = gen_m_aqa(&kb, &SynthConfig::default()).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].answer, "No");
        let first = &samples[0].meta.source_triplets[0];
        let expected = if first.object == "Japan" {
            "Are these Japanese restaurants?"
        } else {
            "Are these American restaurants?"
        };
        assert_eq!(samples[0].question, expected);
    }

    #[test]
    fn m_aqa_no_shared_relation() {
        let kb = make_kb(&[
            ("Subway", "established in", "1965"),
            ("KFC", "serves", "chicken"),
        ]);
        assert!(matches!(
            gen_m_aqa(&kb, &SynthConfig::default()),
            Err(Error::NoEligiblePair)
        ));
    }

    #[test]
    fn r_aqa_needs_distractors() {
        let kb = make_kb(&[
            ("Subway", "origin country", "United States"),
            ("KFC", "origin country", "United States"),
        ]);
        assert!(matches!(
            gen_r_aqa(&kb, &SynthConfig::default()),
            Err(Error::InsufficientDistractors(_))
        ));
    }

    #[test]
    fn invalid_ranges() {
        let cfg = SynthConfig {
            relevant_per_question: CountRange::new(3, 2),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = SynthConfig {
            max_input_sentences_per_sample: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_toml() {
        let cfg = SynthConfig::from_toml_str(
            r#"
            seed = 9
            m_aqa_samples = 10
            [yes_equivalence]
            kind = "decade-bucket"
            [relevant_per_question]
            min = 2
            max = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.yes_equivalence, Equivalence::DecadeBucket);
        assert_eq!(cfg.relevant_per_question, CountRange::new(2, 2));
        assert_eq!(cfg.irrelevant_per_question, CountRange::new(6, 11));
        assert!(cfg.templates.has("serves", Task::SAqa));
    }

    #[test]
    fn relation_overlap_counts_distinct_tokens() {
        assert_eq!(
            relation_overlap("established in", "When was Subway established in?"),
            2
        );
        assert_eq!(
            relation_overlap("origin country", "Are these Japanese restaurants?"),
            0
        );
    }
}
