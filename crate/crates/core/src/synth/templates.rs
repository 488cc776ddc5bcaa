//! Question templates keyed by relation.
//!
//! Slots: `{subject}`, `{relation}`, `{object}`, `{object_demonym}` and
//! `{target}` (the object's class phrase under the active equivalence).
//! Multi-input questions take their slot values from the first triplet.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::equivalence::{Equivalence, EquivalenceKind};
use crate::error::{Error, Result};
use crate::kb::{normalize_name, Triplet};
use crate::Task;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "TemplateRepr")]
pub struct Template {
    pub text: String,
    /// When set, the template is only used under this equivalence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceKind>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TemplateRepr {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        equivalence: Option<EquivalenceKind>,
    },
}

impl From<TemplateRepr> for Template {
    fn from(repr: TemplateRepr) -> Self {
        match repr {
            TemplateRepr::Text(text) => Template {
                text,
                equivalence: None,
            },
            TemplateRepr::Full { text, equivalence } => Template { text, equivalence },
        }
    }
}

impl Template {
    pub fn new(text: &str) -> Self {
        Template {
            text: text.to_string(),
            equivalence: None,
        }
    }

    pub fn only_for(text: &str, kind: EquivalenceKind) -> Self {
        Template {
            text: text.to_string(),
            equivalence: Some(kind),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTemplates {
    #[serde(default)]
    pub s_aqa: Vec<Template>,
    #[serde(default)]
    pub m_aqa: Vec<Template>,
    #[serde(default)]
    pub r_aqa: Vec<Template>,
}

impl RelationTemplates {
    pub fn for_task(&self, task: Task) -> &[Template] {
        match task {
            Task::SAqa => &self.s_aqa,
            Task::MAqa => &self.m_aqa,
            Task::RAqa => &self.r_aqa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateTable {
    #[serde(default)]
    pub relations: BTreeMap<String, RelationTemplates>,
}

impl Default for TemplateTable {
    fn default() -> Self {
        let mut relations = BTreeMap::new();
        relations.insert(
            "established in".to_string(),
            RelationTemplates {
                s_aqa: vec![Template::new("When was {subject} established in?")],
                m_aqa: vec![
                    Template::only_for(
                        "Are these restaurants established in the same decade?",
                        EquivalenceKind::DecadeBucket,
                    ),
                    Template::only_for(
                        "Are these restaurants established in the same year?",
                        EquivalenceKind::ExactObject,
                    ),
                ],
                r_aqa: vec![Template::new(
                    "How many of these restaurants were established in {target}?",
                )],
            },
        );
        relations.insert(
            "serves".to_string(),
            RelationTemplates {
                s_aqa: vec![Template::new("What is it that {subject} serves?")],
                m_aqa: vec![Template::new("Do these restaurants both serve {object}?")],
                r_aqa: vec![Template::new(
                    "How many of these restaurants serves {target}?",
                )],
            },
        );
        relations.insert(
            "origin country".to_string(),
            RelationTemplates {
                s_aqa: vec![Template::new("What is the origin country of {subject}?")],
                m_aqa: vec![
                    Template::new("Are these {object_demonym} restaurants?"),
                    Template::new("Is {object} the origin country of these restaurants?"),
                ],
                r_aqa: vec![Template::new(
                    "How many of these restaurants have origin country {target}?",
                )],
            },
        );
        TemplateTable { relations }
    }
}

impl TemplateTable {
    pub fn empty() -> Self {
        TemplateTable {
            relations: BTreeMap::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("template table: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Entries from `other` replace same-relation entries here.
    pub fn merged(mut self, other: TemplateTable) -> Self {
        self.relations.extend(other.relations);
        self
    }

    pub fn get(&self, relation: &str) -> Option<&RelationTemplates> {
        self.relations.get(relation).or_else(|| {
            let key = normalize_name(relation);
            self.relations
                .iter()
                .find(|(k, _)| normalize_name(k) == key)
                .map(|(_, v)| v)
        })
    }

    pub fn has(&self, relation: &str, task: Task) -> bool {
        self.get(relation)
            .is_some_and(|t| !t.for_task(task).is_empty())
    }
}

const DEMONYMS: &[(&str, &str)] = &[
    ("australia", "Australian"),
    ("brazil", "Brazilian"),
    ("canada", "Canadian"),
    ("china", "Chinese"),
    ("france", "French"),
    ("germany", "German"),
    ("india", "Indian"),
    ("italy", "Italian"),
    ("japan", "Japanese"),
    ("mexico", "Mexican"),
    ("philippines", "Filipino"),
    ("south africa", "South African"),
    ("south korea", "Korean"),
    ("spain", "Spanish"),
    ("thailand", "Thai"),
    ("united kingdom", "British"),
    ("united states", "American"),
];

pub fn demonym(country: &str) -> Option<&'static str> {
    let key = normalize_name(country);
    DEMONYMS.iter().find(|(c, _)| *c == key).map(|&(_, d)| d)
}

fn fill(template: &str, reference: &Triplet, equivalence: &Equivalence) -> Option<String> {
    let mut out = template
        .replace("{subject}", &reference.subject)
        .replace("{relation}", &reference.relation)
        .replace("{target}", &equivalence.describe(&reference.object));
    if out.contains("{object_demonym}") {
        out = out.replace("{object_demonym}", demonym(&reference.object)?);
    }
    out = out.replace("{object}", &reference.object);
    (!out.contains('{')).then_some(out)
}

/// Renders the first usable template for `task`. `triplets[0]` supplies the
/// slot values. s-AQA renderings that contain the answer object are
/// rejected.
pub fn render_question(
    table: &TemplateTable,
    triplets: &[&Triplet],
    task: Task,
    equivalence: &Equivalence,
) -> Result<String> {
    let reference = triplets
        .first()
        .ok_or_else(|| Error::InvalidConfig("render_question needs a triplet".into()))?;
    let templates = table
        .get(&reference.relation)
        .map(|t| t.for_task(task))
        .unwrap_or_default();
    if templates.is_empty() {
        return Err(Error::MissingTemplate(reference.relation.clone()));
    }
    let answer = normalize_name(&reference.object);
    templates
        .iter()
        .filter(|t| t.equivalence.is_none_or(|k| k == equivalence.kind()))
        .filter_map(|t| fill(&t.text, reference, equivalence))
        .find(|q| task != Task::SAqa || !normalize_name(q).contains(&answer))
        .ok_or_else(|| Error::MissingTemplate(reference.relation.clone()))
}
