use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::kb::normalize_name;
use crate::text::tokenize;

/// Decides when two objects of the same relation count as "the same" for
/// Yes/No and count questions.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Equivalence {
    /// Equal after case-fold and whitespace collapse.
    #[default]
    ExactObject,
    /// Four-digit years fall into their decade; anything else compares exactly.
    DecadeBucket,
    /// Objects map to a named class; unlisted objects compare exactly.
    Custom { classes: BTreeMap<String, String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EquivalenceKind {
    ExactObject,
    DecadeBucket,
    Custom,
}

impl fmt::Display for EquivalenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EquivalenceKind::ExactObject => "exact-object",
            EquivalenceKind::DecadeBucket => "decade-bucket",
            EquivalenceKind::Custom => "custom",
        })
    }
}

fn year(object: &str) -> Option<u32> {
    let s = object.trim();
    (s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()))
        .then(|| s.parse().ok())
        .flatten()
}

impl Equivalence {
    pub fn kind(&self) -> EquivalenceKind {
        match self {
            Equivalence::ExactObject => EquivalenceKind::ExactObject,
            Equivalence::DecadeBucket => EquivalenceKind::DecadeBucket,
            Equivalence::Custom { .. } => EquivalenceKind::Custom,
        }
    }

    /// Parses `exact`, `decade` (or their long forms). Custom tables only
    /// come from config files.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "exact" | "exact-object" => Some(Equivalence::ExactObject),
            "decade" | "decade-bucket" => Some(Equivalence::DecadeBucket),
            _ => None,
        }
    }

    pub fn class_of(&self, object: &str) -> String {
        match self {
            Equivalence::ExactObject => normalize_name(object),
            Equivalence::DecadeBucket => match year(object) {
                Some(y) => format!("{}s", y / 10 * 10),
                None => normalize_name(object),
            },
            Equivalence::Custom { classes } => classes
                .iter()
                .find(|(k, _)| normalize_name(k) == normalize_name(object))
                .map(|(_, class)| normalize_name(class))
                .unwrap_or_else(|| normalize_name(object)),
        }
    }

    pub fn equivalent(&self, a: &str, b: &str) -> bool {
        self.class_of(a) == self.class_of(b)
    }

    /// Surface phrase naming the class of `object` inside a question.
    pub fn describe(&self, object: &str) -> String {
        match self {
            Equivalence::ExactObject => object.trim().to_string(),
            Equivalence::DecadeBucket => match year(object) {
                Some(y) => format!("{}s", y / 10 * 10),
                None => object.trim().to_string(),
            },
            Equivalence::Custom { classes } => classes
                .iter()
                .find(|(k, _)| normalize_name(k) == normalize_name(object))
                .map(|(_, class)| class.clone())
                .unwrap_or_else(|| object.trim().to_string()),
        }
    }

    /// True when the question text names the class of `object`, i.e. the
    /// tokens of [`Equivalence::describe`] occur contiguously in it.
    pub fn question_mentions(&self, object: &str, question: &str) -> bool {
        contains_tokens(&tokenize(question), &tokenize(&self.describe(object)))
    }
}

pub(crate) fn contains_tokens(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}
