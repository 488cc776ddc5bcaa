//! Triplet knowledge base: ingestion, validation, and per-entity knowledge text.
//!
//! Input is either tab-separated `subject \t relation \t object` rows or
//! line-delimited JSON objects with `subject`, `relation`, `object` fields.
//! Both forms may be mixed in one file; `#` lines are comments.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense entity identifier, assigned in first-seen order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl Triplet {
    /// Trims every field and rejects empty fields or fields carrying a
    /// record separator (tab or newline).
    pub fn new(
        subject: impl AsRef<str>,
        relation: impl AsRef<str>,
        object: impl AsRef<str>,
    ) -> std::result::Result<Self, String> {
        let field = |name: &str, value: &str| -> std::result::Result<String, String> {
            let value = value.trim();
            if value.is_empty() {
                return Err(format!("empty {name}"));
            }
            if value.contains(['\t', '\n', '\r']) {
                return Err(format!("{name} contains a record separator"));
            }
            Ok(value.to_string())
        };
        Ok(Triplet {
            subject: field("subject", subject.as_ref())?,
            relation: field("relation", relation.as_ref())?,
            object: field("object", object.as_ref())?,
        })
    }

    /// `subject relation object.`
    pub fn sentence(&self) -> String {
        format!("{} {} {}.", self.subject, self.relation, self.object)
    }
}

/// Case-fold plus whitespace collapse.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub triplets: Vec<Triplet>,
}

/// Immutable after ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KbRepr", into = "KbRepr")]
pub struct KnowledgeBase {
    entities: Vec<Entity>,
    by_name: BTreeMap<String, EntityId>,
}

#[derive(Serialize, Deserialize)]
struct KbRepr {
    entities: Vec<Entity>,
}

impl From<KnowledgeBase> for KbRepr {
    fn from(kb: KnowledgeBase) -> Self {
        KbRepr {
            entities: kb.entities,
        }
    }
}

impl TryFrom<KbRepr> for KnowledgeBase {
    type Error = String;

    fn try_from(repr: KbRepr) -> std::result::Result<Self, String> {
        let mut by_name = BTreeMap::new();
        for (i, entity) in repr.entities.iter().enumerate() {
            let id = EntityId(i as u32);
            if by_name.insert(normalize_name(&entity.name), id).is_some() {
                return Err(format!("duplicate entity name {:?}", entity.name));
            }
            if let Some(t) = entity.triplets.iter().find(|t| t.subject != entity.name) {
                return Err(format!(
                    "triplet subject {:?} does not match entity {:?}",
                    t.subject, entity.name
                ));
            }
        }
        Ok(KnowledgeBase {
            entities: repr.entities,
            by_name,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub rows: usize,
    pub entities: usize,
    pub triplets: usize,
    pub duplicates_dropped: usize,
}

/// One parsed input row with its 1-based source line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletRecord {
    pub line: usize,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl TripletRecord {
    pub fn new(line: usize, subject: &str, relation: &str, object: &str) -> Self {
        TripletRecord {
            line,
            subject: subject.to_string(),
            relation: relation.to_string(),
            object: object.to_string(),
        }
    }
}

#[derive(Deserialize)]
struct JsonRow {
    #[serde(default)]
    subject: Option<String>,
    #[serde(default)]
    relation: Option<String>,
    #[serde(default)]
    object: Option<String>,
}

/// Splits input text into records. Rows with fewer than three fields are
/// reported as [`Error::MalformedRow`]; columns past the third are ignored.
pub fn parse_records(text: &str) -> Result<Vec<TripletRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if trimmed.starts_with('{') {
            let row: JsonRow = serde_json::from_str(trimmed).map_err(|e| Error::MalformedRow {
                line,
                reason: e.to_string(),
            })?;
            match (row.subject, row.relation, row.object) {
                (Some(s), Some(r), Some(o)) => records.push(TripletRecord {
                    line,
                    subject: s,
                    relation: r,
                    object: o,
                }),
                _ => {
                    return Err(Error::MalformedRow {
                        line,
                        reason: "record needs subject, relation and object".into(),
                    })
                }
            }
            continue;
        }
        let fields: Vec<&str> = raw.trim_end_matches('\r').split('\t').collect();
        if fields.len() < 3 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        records.push(TripletRecord::new(line, fields[0], fields[1], fields[2]));
    }
    Ok(records)
}

/// Groups records by subject entity. Duplicate triplets keep their first
/// occurrence; subjects that differ only in case or spacing fold into the
/// first-seen surface form.
pub fn ingest_triplets<I>(records: I) -> Result<(KnowledgeBase, IngestStats)>
where
    I: IntoIterator<Item = TripletRecord>,
{
    let mut entities: Vec<Entity> = Vec::new();
    let mut by_name: BTreeMap<String, EntityId> = BTreeMap::new();
    let mut seen: HashSet<(EntityId, String, String)> = HashSet::new();
    let mut stats = IngestStats::default();

    for record in records {
        stats.rows += 1;
        let triplet =
            Triplet::new(&record.subject, &record.relation, &record.object).map_err(|reason| {
                Error::MalformedRow {
                    line: record.line,
                    reason,
                }
            })?;
        let key = normalize_name(&triplet.subject);
        let id = *by_name.entry(key).or_insert_with(|| {
            entities.push(Entity {
                name: triplet.subject.clone(),
                triplets: Vec::new(),
            });
            EntityId((entities.len() - 1) as u32)
        });
        let entity = &mut entities[id.index()];
        if !seen.insert((id, triplet.relation.clone(), triplet.object.clone())) {
            stats.duplicates_dropped += 1;
            continue;
        }
        entity.triplets.push(Triplet {
            subject: entity.name.clone(),
            ..triplet
        });
    }

    if stats.rows == 0 {
        return Err(Error::EmptyInput);
    }
    stats.entities = entities.len();
    stats.triplets = entities.iter().map(|e| e.triplets.len()).sum();
    Ok((KnowledgeBase { entities, by_name }, stats))
}

pub fn load_kb(path: impl AsRef<Path>) -> Result<(KnowledgeBase, IngestStats)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ingest_triplets(parse_records(&text)?)
}

impl KnowledgeBase {
    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entity_ids(&self) -> impl ExactSizeIterator<Item = EntityId> + '_ {
        (0..self.entities.len()).map(|i| EntityId(i as u32))
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn entity(&self, id: EntityId) -> Result<&Entity> {
        self.entities
            .get(id.index())
            .ok_or(Error::UnknownEntity(id))
    }

    pub fn name(&self, id: EntityId) -> Result<&str> {
        Ok(&self.entity(id)?.name)
    }

    pub fn triplets(&self, id: EntityId) -> Result<&[Triplet]> {
        Ok(&self.entity(id)?.triplets)
    }

    /// Lookup under case-fold and whitespace normalization.
    pub fn lookup(&self, name: &str) -> Option<EntityId> {
        self.by_name.get(&normalize_name(name)).copied()
    }

    pub fn resolve(&self, name: &str) -> Result<EntityId> {
        self.lookup(name)
            .ok_or_else(|| Error::UnknownEntityName(name.to_string()))
    }

    pub fn triplet_count(&self) -> usize {
        self.entities.iter().map(|e| e.triplets.len()).sum()
    }

    /// Distinct relation strings in first-seen order.
    pub fn relations(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entities
            .iter()
            .flat_map(|e| e.triplets.iter())
            .filter(|t| seen.insert(t.relation.as_str()))
            .map(|t| t.relation.clone())
            .collect()
    }

    pub fn frame_knowledge_sentences(&self, id: EntityId) -> Result<Vec<String>> {
        Ok(self.triplets(id)?.iter().map(Triplet::sentence).collect())
    }

    pub fn knowledge_view(&self, id: EntityId, source: &KnowledgeSource) -> Result<String> {
        let entity = self.entity(id)?;
        let sentences = self.frame_knowledge_sentences(id)?;
        Ok(match *source {
            KnowledgeSource::NameOnly => entity.name.clone(),
            KnowledgeSource::Full => sentences.join(" "),
            KnowledgeSource::Partial { fraction, seed } => {
                let keep = partial_indices(sentences.len(), fraction, seed, id);
                keep.into_iter()
                    .map(|i| sentences[i].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
        })
    }
}

/// Number of sentences kept by a partial view: `ceil(fraction * m)`.
pub fn partial_size(m: usize, fraction: f64) -> usize {
    // Products such as 0.3 * 10 land a hair above the integer in binary.
    let k = (fraction * m as f64 - 1e-9).ceil();
    (k.max(0.0) as usize).min(m)
}

fn partial_indices(m: usize, fraction: f64, seed: u64, id: EntityId) -> Vec<usize> {
    let k = partial_size(m, fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, id.0 as u64));
    let mut keep = rand::seq::index::sample(&mut rng, m, k).into_vec();
    keep.sort_unstable();
    keep
}

/// SplitMix64 finalizer over `seed ^ salt`.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How much of an entity's knowledge is exposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnowledgeSource {
    NameOnly,
    Partial { fraction: f64, seed: u64 },
    Full,
}

impl KnowledgeSource {
    pub fn partial(fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::InvalidKnowledgeSource(format!(
                "partial fraction {fraction} must lie strictly between 0 and 1"
            )));
        }
        Ok(KnowledgeSource::Partial { fraction, seed })
    }

    /// Row label used in rendered tables.
    pub fn label(&self) -> String {
        match self {
            KnowledgeSource::NameOnly => "Entity-name".into(),
            KnowledgeSource::Partial { fraction, .. } => {
                format!("{}% knowledge", trim_float(fraction * 100.0))
            }
            KnowledgeSource::Full => "Full knowledge".into(),
        }
    }

    /// Replaces the seed of a partial source; other variants are unchanged.
    pub fn with_seed(self, seed: u64) -> Self {
        match self {
            KnowledgeSource::Partial { fraction, .. } => {
                KnowledgeSource::Partial { fraction, seed }
            }
            other => other,
        }
    }
}

fn trim_float(x: f64) -> String {
    let s = format!("{x:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KnowledgeSource::NameOnly => f.write_str("name"),
            KnowledgeSource::Full => f.write_str("full"),
            KnowledgeSource::Partial { fraction, seed } => {
                write!(f, "partial={}:{}", trim_float(*fraction), seed)
            }
        }
    }
}

/// Accepts `name`, `full`, `partial=<f>` and `partial=<f>:<seed>`.
impl FromStr for KnowledgeSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "name" | "name-only" | "entity-name" => return Ok(KnowledgeSource::NameOnly),
            "full" => return Ok(KnowledgeSource::Full),
            _ => {}
        }
        let bad = || Error::InvalidKnowledgeSource(s.to_string());
        let rest = s.strip_prefix("partial=").ok_or_else(bad)?;
        let (fraction, seed) = match rest.split_once(':') {
            Some((f, seed)) => (f, seed.parse::<u64>().map_err(|_| bad())?),
            None => (rest, 0),
        };
        let fraction: f64 = fraction.parse().map_err(|_| bad())?;
        KnowledgeSource::partial(fraction, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subway() -> KnowledgeBase {
        ingest_triplets([
            TripletRecord::new(1, "Subway", "established in", "1965"),
            TripletRecord::new(2, "Subway", "serves", "salad and sandwich"),
        ])
        .unwrap()
        .0
    }

    #[test]
    fn ingest_groups_by_subject() {
        let (kb, stats) = ingest_triplets([
            TripletRecord::new(1, "Subway", "established in", "1965"),
            TripletRecord::new(2, "Subway", "serves", "salad and sandwich"),
        ])
        .unwrap();
        assert_eq!(kb.len(), 1);
        assert_eq!(kb.triplets(EntityId(0)).unwrap().len(), 2);
        assert_eq!(stats.triplets, 2);
        assert_eq!(stats.duplicates_dropped, 0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            ingest_triplets(Vec::<TripletRecord>::new()),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            ingest_triplets(parse_records("# only a comment\n\n").unwrap()),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn duplicates_are_dropped_once() {
        let (kb, stats) = ingest_triplets([
            TripletRecord::new(1, "Subway", "serves", "salad and sandwich"),
            TripletRecord::new(2, "Subway", "serves", "salad and sandwich"),
        ])
        .unwrap();
        assert_eq!(kb.triplet_count(), 1);
        assert_eq!(stats.duplicates_dropped, 1);
    }

    #[test]
    fn names_fold_case_and_spacing() {
        let (kb, _) = ingest_triplets([
            TripletRecord::new(1, "Krispy Kreme", "origin country", "United States"),
            TripletRecord::new(2, "krispy   KREME", "established in", "1937"),
        ])
        .unwrap();
        assert_eq!(kb.len(), 1);
        let id = kb.lookup("KRISPY kreme").unwrap();
        assert_eq!(kb.name(id).unwrap(), "Krispy Kreme");
        assert!(kb
            .triplets(id)
            .unwrap()
            .iter()
            .all(|t| t.subject == "Krispy Kreme"));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "# header\nSubway\testablished in\t1965\nSubway\tserves\n";
        match parse_records(text) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "Subway\t \t1965\n";
        match ingest_triplets(parse_records(text).unwrap()) {
            Err(Error::MalformedRow { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_records_and_extra_fields() {
        let text = concat!(
            "{\"subject\":\"Subway\",\"relation\":\"serves\",\"object\":\"salad and sandwich\",\"qid\":\"Q1\"}\n",
            "Subway\testablished in\t1965\twikidata\n",
        );
        let (kb, _) = ingest_triplets(parse_records(text).unwrap()).unwrap();
        assert_eq!(
            kb.frame_knowledge_sentences(EntityId(0)).unwrap(),
            vec![
                "Subway serves salad and sandwich.",
                "Subway established in 1965."
            ]
        );
        let bad = "{\"subject\":\"Subway\",\"object\":\"x\"}\n";
        assert!(matches!(
            parse_records(bad),
            Err(Error::MalformedRow { line: 1, .. })
        ));
        let sep = "{\"subject\":\"Sub\\tway\",\"relation\":\"r\",\"object\":\"x\"}\n";
        assert!(matches!(
            ingest_triplets(parse_records(sep).unwrap()),
            Err(Error::MalformedRow { line: 1, .. })
        ));
    }

    #[test]
    fn framed_sentences() {
        let kb = subway();
        assert_eq!(
            kb.frame_knowledge_sentences(EntityId(0)).unwrap(),
            vec![
                "Subway established in 1965.",
                "Subway serves salad and sandwich."
            ]
        );
        assert!(matches!(
            kb.frame_knowledge_sentences(EntityId(9)),
            Err(Error::UnknownEntity(EntityId(9)))
        ));
    }

    #[test]
    fn views() {
        let kb = subway();
        let id = EntityId(0);
        assert_eq!(
            kb.knowledge_view(id, &KnowledgeSource::NameOnly).unwrap(),
            "Subway"
        );
        assert_eq!(
            kb.knowledge_view(id, &KnowledgeSource::Full).unwrap(),
            "Subway established in 1965. Subway serves salad and sandwich."
        );
    }

    #[test]
    fn partial_view_takes_ceil_fraction() {
        let rows: Vec<_> = (0..5)
            .map(|i| TripletRecord::new(i + 1, "KFC", &format!("rel{i}"), &format!("obj{i}")))
            .collect();
        let (kb, _) = ingest_triplets(rows).unwrap();
        let src = KnowledgeSource::partial(0.2, 11).unwrap();
        let a = kb.knowledge_view(EntityId(0), &src).unwrap();
        let b = kb.knowledge_view(EntityId(0), &src).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches('.').count(), 1);
        assert!(kb
            .frame_knowledge_sentences(EntityId(0))
            .unwrap()
            .contains(&a));
    }

    #[test]
    fn partial_size_rounding() {
        assert_eq!(partial_size(5, 0.2), 1);
        assert_eq!(partial_size(10, 0.3), 3);
        assert_eq!(partial_size(7, 0.2), 2);
        assert_eq!(partial_size(0, 0.5), 0);
        assert_eq!(partial_size(3, 0.999), 3);
    }

    #[test]
    fn knowledge_source_parsing() {
        assert_eq!(
            "name".parse::<KnowledgeSource>().unwrap(),
            KnowledgeSource::NameOnly
        );
        assert_eq!(
            "full".parse::<KnowledgeSource>().unwrap(),
            KnowledgeSource::Full
        );
        assert_eq!(
            "partial=0.2:7".parse::<KnowledgeSource>().unwrap(),
            KnowledgeSource::Partial {
                fraction: 0.2,
                seed: 7
            }
        );
        assert!("partial=1".parse::<KnowledgeSource>().is_err());
        assert!("partial=0".parse::<KnowledgeSource>().is_err());
        assert!("half".parse::<KnowledgeSource>().is_err());
        assert_eq!(
            KnowledgeSource::partial(0.2, 0).unwrap().label(),
            "20% knowledge"
        );
    }

    #[test]
    fn serialization_roundtrip_rebuilds_index() {
        let kb = subway();
        let json = serde_json::to_string(&kb).unwrap();
        let back: KnowledgeBase = serde_json::from_str(&json).unwrap();
        assert_eq!(back, kb);
        assert_eq!(back.lookup("subway"), Some(EntityId(0)));
    }
}
