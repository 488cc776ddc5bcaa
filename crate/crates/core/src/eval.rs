//! Metrics, batch evaluation and report tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{normalize_name, EntityId, KnowledgeBase, KnowledgeSource};
use crate::linking::{build_entity_index, EncoderChoice};
use crate::pipeline::{AnswerRecord, Backends, LinkingMode, Pipeline, PipelineConfig};
use crate::retrieval::RetrievalPolicy;
use crate::synth::Sample;
use crate::Task;

/// 1 when the normalized gold answer occurs in the normalized generated text.
pub fn aqa_accuracy(generated: &str, gold: &str) -> Result<f64> {
    let gold = normalize_name(gold);
    if gold.is_empty() {
        return Err(Error::EmptyGold);
    }
    Ok(if normalize_name(generated).contains(&gold) {
        1.0
    } else {
        0.0
    })
}

/// 1 when every predicted entity equals its positional gold.
pub fn ael_accuracy(predicted: &[EntityId], gold: &[EntityId]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::ArityMismatch {
            predicted: predicted.len(),
            gold: gold.len(),
        });
    }
    Ok(if predicted == gold { 1.0 } else { 0.0 })
}

/// F1 between retained and gold index sets of a pool of `pool_len` items.
/// Both empty scores 1.
pub fn retrieval_f1(retained: &[usize], gold: &[usize], pool_len: usize) -> Result<f64> {
    if let Some(&index) = retained.iter().chain(gold).find(|&&i| i >= pool_len) {
        return Err(Error::IndexOutOfBounds {
            index,
            len: pool_len,
        });
    }
    let r: BTreeSet<usize> = retained.iter().copied().collect();
    let g: BTreeSet<usize> = gold.iter().copied().collect();
    if r.is_empty() && g.is_empty() {
        return Ok(1.0);
    }
    let hits = r.intersection(&g).count() as f64;
    if hits == 0.0 {
        return Ok(0.0);
    }
    let p = hits / r.len() as f64;
    let rc = hits / g.len() as f64;
    Ok(2.0 * p * rc / (p + rc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub knowledge_enabled: bool,
    pub knowledge_source: KnowledgeSource,
    pub knowledge_label: String,
    pub linking_mode: LinkingMode,
    pub retrieval: RetrievalPolicy,
}

impl From<&PipelineConfig> for ConfigEcho {
    fn from(c: &PipelineConfig) -> Self {
        ConfigEcho {
            knowledge_enabled: c.knowledge_enabled,
            knowledge_source: c.knowledge_source,
            knowledge_label: if c.knowledge_enabled {
                c.knowledge_source.label()
            } else {
                "None".to_string()
            },
            linking_mode: c.linking_mode,
            retrieval: c.retrieval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample_id: String,
    pub task: Task,
    pub gold_answer: String,
    pub generated_text: String,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ael: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_f1: Option<f64>,
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task: Task,
    pub samples: usize,
    pub failures: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub tasks: Vec<TaskSummary>,
    /// Over s-AQA and m-AQA rows.
    pub ael_accuracy: Option<f64>,
    /// Over r-AQA rows.
    pub retrieval_f1: Option<f64>,
    pub rows: Vec<SampleRow>,
}

impl EvalReport {
    pub fn accuracy(&self, task: Task) -> Option<f64> {
        self.tasks
            .iter()
            .find(|t| t.task == task)
            .map(|t| t.accuracy)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn score(sample: &Sample, kb: &KnowledgeBase, record: &AnswerRecord) -> Result<SampleRow> {
    let accuracy = aqa_accuracy(&record.generated_text, &sample.answer)?;
    let ael = match sample.task {
        Task::SAqa => {
            let gold = sample.gold_entities(kb)?;
            let gold = gold
                .first()
                .copied()
                .ok_or_else(|| sample.invalid("no inputs"))?;
            Some(ael_accuracy(&record.chosen_ids(), &[gold])?)
        }
        Task::MAqa => Some(ael_accuracy(
            &record.chosen_ids(),
            &sample.gold_entities(kb)?,
        )?),
        Task::RAqa => None,
    };
    let retrieval_f1 = match (&record.retrieval, sample.task) {
        (Some(r), Task::RAqa) => Some(retrieval_f1(
            &r.retained,
            &sample.gold_relevant(),
            r.scores.len(),
        )?),
        _ => None,
    };
    Ok(SampleRow {
        sample_id: sample.id.clone(),
        task: sample.task,
        gold_answer: sample.answer.clone(),
        generated_text: record.generated_text.clone(),
        accuracy,
        ael,
        retrieval_f1,
        failed: false,
        error: None,
    })
}

fn failure_row(sample: &Sample, error: &Error) -> SampleRow {
    SampleRow {
        sample_id: sample.id.clone(),
        task: sample.task,
        gold_answer: sample.answer.clone(),
        generated_text: String::new(),
        accuracy: 0.0,
        ael: (sample.task != Task::RAqa).then_some(0.0),
        retrieval_f1: (sample.task == Task::RAqa).then_some(0.0),
        failed: true,
        error: Some(error.to_string()),
    }
}

/// Report plus the raw answer records (`None` for failed samples).
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: EvalReport,
    pub records: Vec<Option<AnswerRecord>>,
}

/// Runs the pipeline on every sample, at most `max_in_flight` at a time.
/// Per-sample failures become flagged rows scored 0.
pub fn evaluate(samples: &[Sample], pipeline: &Pipeline<'_>) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pipeline.config.max_in_flight.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let outcomes: Vec<(SampleRow, Option<AnswerRecord>)> = pool.install(|| {
        samples
            .par_iter()
            .map(|s| {
                let result = pipeline
                    .answer(s)
                    .and_then(|rec| score(s, pipeline.kb, &rec).map(|row| (row, rec)));
                match result {
                    Ok((row, rec)) => (row, Some(rec)),
                    Err(e) => (failure_row(s, &e), None),
                }
            })
            .collect()
    });
    let (rows, records): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(Evaluation {
        report: summarize(ConfigEcho::from(pipeline.config), rows),
        records,
    })
}

pub fn run_eval(samples: &[Sample], pipeline: &Pipeline<'_>) -> Result<EvalReport> {
    Ok(evaluate(samples, pipeline)?.report)
}

/// Aggregates rows; every aggregate is the plain mean of its column.
pub fn summarize(config: ConfigEcho, rows: Vec<SampleRow>) -> EvalReport {
    let tasks = Task::ALL
        .iter()
        .filter_map(|&task| {
            let of: Vec<&SampleRow> = rows.iter().filter(|r| r.task == task).collect();
            mean(of.iter().map(|r| r.accuracy)).map(|accuracy| TaskSummary {
                task,
                samples: of.len(),
                failures: of.iter().filter(|r| r.failed).count(),
                accuracy,
            })
        })
        .collect();
    EvalReport {
        config,
        tasks,
        ael_accuracy: mean(rows.iter().filter_map(|r| r.ael)),
        retrieval_f1: mean(rows.iter().filter_map(|r| r.retrieval_f1)),
        rows,
    }
}

/// One labelled report per knowledge source, then optionally an oracle-
/// linking row with full knowledge. The source drives both the entity
/// index and the prompt knowledge.
pub fn ablation_suite(
    samples: &[Sample],
    kb: &KnowledgeBase,
    sources: &[KnowledgeSource],
    base: &PipelineConfig,
    backends: Backends<'_>,
    index_encoder: &EncoderChoice,
    include_oracle: bool,
) -> Result<Vec<(String, EvalReport)>> {
    if sources.is_empty() {
        return Err(Error::InvalidConfig(
            "ablation needs at least one knowledge source".into(),
        ));
    }
    let mut out = Vec::new();
    for &source in sources {
        let index = build_entity_index(kb, source, index_encoder)?;
        let config = PipelineConfig {
            knowledge_enabled: true,
            knowledge_source: source,
            linking_mode: LinkingMode::Predicted,
            ..base.clone()
        };
        let pipeline = Pipeline {
            kb,
            index: Some(&index),
            config: &config,
            backends,
        };
        out.push((source.label(), run_eval(samples, &pipeline)?));
    }
    if include_oracle {
        let config = PipelineConfig {
            knowledge_enabled: true,
            knowledge_source: KnowledgeSource::Full,
            linking_mode: LinkingMode::Oracle,
            ..base.clone()
        };
        let pipeline = Pipeline {
            kb,
            index: None,
            config: &config,
            backends,
        };
        out.push(("Oracle".to_string(), run_eval(samples, &pipeline)?));
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// Plain-text table: one row per labelled report, columns for knowledge,
/// linking, per-task accuracy, linking accuracy and retrieval F1.
pub fn render_table(reports: &[(String, EvalReport)]) -> String {
    let header = [
        "Model",
        "Knowledge",
        "Linking",
        "s-AQA",
        "m-AQA",
        "r-AQA",
        "AEL",
        "Ret-F1",
    ];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            vec![
                label.clone(),
                r.config.knowledge_label.clone(),
                r.config.linking_mode.to_string(),
                cell(r.accuracy(Task::SAqa)),
                cell(r.accuracy(Task::MAqa)),
                cell(r.accuracy(Task::RAqa)),
                cell(r.ael_accuracy),
                cell(r.retrieval_f1),
            ]
        })
        .collect();
    layout(&header, &rows)
}

/// Knowledge source / AEL accuracy / s-AQA accuracy rows.
pub fn render_ablation(reports: &[(String, EvalReport)]) -> String {
    let header = ["Knowledge source", "AEL Acc.", "s-AQA Acc."];
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|(label, r)| {
            vec![
                label.clone(),
                cell(r.ael_accuracy),
                cell(r.accuracy(Task::SAqa)),
            ]
        })
        .collect();
    layout(&header, &rows)
}

fn layout(header: &[&str], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let text: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", text.join("  ").trim_end());
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}
