//! Threshold retrieval over a pool of transcripts.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::retrieval_f1;
use crate::linking::EncoderChoice;
use crate::text::{cosine, Vectorizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Pool indices with score strictly above the threshold, in pool order.
    pub retained: Vec<usize>,
    pub scores: Vec<f64>,
    pub threshold: f64,
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidThreshold(threshold));
    }
    Ok(())
}

/// Cosine score of every transcript against the question. With TF-IDF the
/// vectorizer is fitted on the pool plus the question.
pub fn score_pool<S: AsRef<str>>(
    question: &str,
    transcripts: &[S],
    encoder: &EncoderChoice,
) -> Result<Vec<f64>> {
    if transcripts.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut texts: Vec<&str> = transcripts.iter().map(AsRef::as_ref).collect();
    texts.push(question);
    let mut vectors = match encoder {
        EncoderChoice::TfIdf => {
            let v = Vectorizer::fit(&texts)?;
            texts.iter().map(|t| v.encode(t)).collect()
        }
        EncoderChoice::External(e) => e.encode_texts(&texts)?,
    };
    let q = vectors.pop().unwrap_or_default();
    Ok(vectors.iter().map(|v| cosine(&q, v)).collect())
}

/// Applies the strict cutoff to precomputed scores.
pub fn apply_threshold(scores: Vec<f64>, threshold: f64) -> Result<RetrievalResult> {
    check_threshold(threshold)?;
    if scores.is_empty() {
        return Err(Error::EmptyPool);
    }
    let retained = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > threshold)
        .map(|(i, _)| i)
        .collect();
    Ok(RetrievalResult {
        retained,
        scores,
        threshold,
    })
}

pub fn retrieve<S: AsRef<str>>(
    question: &str,
    transcripts: &[S],
    encoder: &EncoderChoice,
    threshold: f64,
) -> Result<RetrievalResult> {
    check_threshold(threshold)?;
    apply_threshold(score_pool(question, transcripts, encoder)?, threshold)
}

/// Scored pool with gold relevance, used for calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevCase {
    pub scores: Vec<f64>,
    pub gold: Vec<usize>,
}

/// `0.00, 0.05, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

/// Mean retrieval F1 of a threshold over the dev cases.
pub fn mean_f1(cases: &[DevCase], threshold: f64) -> Result<f64> {
    let mut total = 0.0;
    for case in cases {
        let r = apply_threshold(case.scores.clone(), threshold)?;
        total += retrieval_f1(&r.retained, &case.gold, case.scores.len())?;
    }
    Ok(if cases.is_empty() {
        0.0
    } else {
        total / cases.len() as f64
    })
}

/// Grid value with the highest mean F1; ties go to the smallest value.
pub fn calibrate_threshold(cases: &[DevCase], grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let f1 = mean_f1(cases, t)?;
        best = match best {
            Some((bt, bf)) if bf > f1 || (bf == f1 && bt <= t) => Some((bt, bf)),
            _ => Some((t, f1)),
        };
    }
    Ok(best.map(|(t, _)| t).expect("grid is non-empty"))
}

/// How r-AQA pools are filtered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum RetrievalPolicy {
    Threshold(f64),
    /// Keep exactly the gold-relevant items.
    Gold,
}

impl Default for RetrievalPolicy {
    fn default() -> Self {
        RetrievalPolicy::Threshold(0.0)
    }
}

impl fmt::Display for RetrievalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrievalPolicy::Threshold(t) => write!(f, "{t}"),
            RetrievalPolicy::Gold => f.write_str("gold"),
        }
    }
}

impl FromStr for RetrievalPolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "gold" {
            return Ok(RetrievalPolicy::Gold);
        }
        let t: f64 = s.parse().map_err(|_| format!("invalid threshold {s:?}"))?;
        check_threshold(t).map_err(|e| e.to_string())?;
        Ok(RetrievalPolicy::Threshold(t))
    }
}

/// One line of an exported retrieval trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrace {
    pub sample_id: String,
    pub threshold: Option<f64>,
    pub scores: Vec<f64>,
    pub retained: Vec<bool>,
    pub gold: Vec<bool>,
}

impl RetrievalTrace {
    pub fn new(
        sample_id: &str,
        result: &RetrievalResult,
        gold: &[usize],
        gold_policy: bool,
    ) -> Self {
        let n = result.scores.len();
        let flags = |idx: &[usize]| (0..n).map(|i| idx.contains(&i)).collect();
        RetrievalTrace {
            sample_id: sample_id.to_string(),
            threshold: (!gold_policy).then_some(result.threshold),
            scores: result.scores.clone(),
            retained: flags(&result.retained),
            gold: flags(gold),
        }
    }
}
