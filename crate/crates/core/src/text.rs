//! Built-in TF-IDF text encoder and the cosine kernel shared by entity
//! linking and retrieval.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercased maximal runs of letters and digits.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Sparse vector with strictly increasing dimensions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    entries: Vec<(u32, f64)>,
}

impl Vector {
    pub fn zero() -> Self {
        Vector::default()
    }

    /// Builds from arbitrary `(dim, weight)` pairs: sorts, sums repeated
    /// dimensions and drops exact zeros.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|&(d, _)| d);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (d, w) in pairs {
            match entries.last_mut() {
                Some((last, acc)) if *last == d => *acc += w,
                _ => entries.push((d, w)),
            }
        }
        entries.retain(|&(_, w)| w != 0.0);
        Vector { entries }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Vector {
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(d, &w)| (d as u32, w))
                .collect(),
        }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn get(&self, dim: u32) -> f64 {
        self.entries
            .binary_search_by_key(&dim, |&(d, _)| d)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Vector::from_pairs(self.entries.iter().map(|&(d, w)| (d, w * factor)).collect())
    }

    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        let (a, b) = (&self.entries, &other.entries);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &Vector, v: &Vector) -> f64 {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (u.dot(v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Token-level TF-IDF with smoothed idf `ln((1 + D) / (1 + df)) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VectorizerRepr")]
pub struct Vectorizer {
    terms: Vec<String>,
    idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vectorizer {
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut terms = Vec::new();
        let mut df: Vec<usize> = Vec::new();
        for doc in corpus {
            let mut tokens = tokenize(doc.as_ref());
            let mut first_seen = Vec::new();
            for token in tokens.drain(..) {
                let dim = *index.entry(token.clone()).or_insert_with(|| {
                    terms.push(token);
                    df.push(0);
                    (terms.len() - 1) as u32
                });
                first_seen.push(dim);
            }
            first_seen.sort_unstable();
            first_seen.dedup();
            for dim in first_seen {
                df[dim as usize] += 1;
            }
        }
        let docs = corpus.len() as f64;
        let idf = df
            .iter()
            .map(|&d| ((1.0 + docs) / (1.0 + d as f64)).ln() + 1.0)
            .collect();
        Ok(Vectorizer { terms, idf, index })
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn dimension(&self, token: &str) -> Option<u32> {
        self.lookup(token)
    }

    pub fn idf(&self, token: &str) -> Option<f64> {
        self.lookup(token).map(|d| self.idf[d as usize])
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    fn lookup(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Term frequency times idf over in-vocabulary tokens.
    pub fn encode(&self, text: &str) -> Vector {
        let pairs = tokenize(text)
            .iter()
            .filter_map(|t| self.lookup(t))
            .map(|d| (d, self.idf[d as usize]))
            .collect();
        Vector::from_pairs(pairs)
    }
}

#[derive(Deserialize)]
struct VectorizerRepr {
    terms: Vec<String>,
    idf: Vec<f64>,
}

impl From<VectorizerRepr> for Vectorizer {
    fn from(repr: VectorizerRepr) -> Self {
        let index = repr
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vectorizer {
            terms: repr.terms,
            idf: repr.idf,
            index,
        }
    }
}

/// Anything that turns texts into vectors comparable by [`cosine`].
pub trait TextEncoder: Send + Sync {
    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vector>>;
}

impl TextEncoder for Vectorizer {
    fn encode_texts(&self, texts: &[&str]) -> Result<Vec<Vector>> {
        Ok(texts.iter().map(|t| self.encode(t)).collect())
    }
}
