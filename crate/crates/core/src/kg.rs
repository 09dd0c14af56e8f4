//! Triple ingestion, vocabularies, reverse relations, the filter index and
//! relation categorization.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type EntityId = usize;
pub type RelationId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl RawTriple {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        RawTriple {
            head: head.to_owned(),
            relation: relation.to_owned(),
            tail: tail.to_owned(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?} (train|valid|test)"))),
        }
    }
}

/// Parses a tab-separated `head\trelation\ttail` file, preserving order and
/// duplicates. Blank lines are skipped.
pub fn load_tsv(path: impl AsRef<Path>) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text, path)
}

pub fn parse_tsv(text: &str, origin: &Path) -> Result<Vec<RawTriple>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

/// Bidirectional name ↔ dense id map, ids in first-occurrence order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub relations: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Immutable triple store. Relation ids `0..|R|` are the original
/// relations; `r + |R|` is the reverse of `r`.
#[derive(Clone, Debug)]
pub struct TripleStore {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    filter: HashMap<(EntityId, RelationId), Vec<EntityId>>,
}

impl TripleStore {
    /// Builds vocabularies (train → valid → test first occurrence), the
    /// reverse relations and the all-split filter index.
    pub fn build(train: &[RawTriple], valid: &[RawTriple], test: &[RawTriple]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let mut entities = Vocab::default();
        let mut relations = Vocab::default();
        let mut encode = |raw: &[RawTriple]| -> Vec<Triple> {
            raw.iter()
                .map(|t| {
                    let h = entities.intern(&t.head);
                    let r = relations.intern(&t.relation);
                    let tl = entities.intern(&t.tail);
                    Triple::new(h, r, tl)
                })
                .collect()
        };
        let train = encode(train);
        let valid = encode(valid);
        let test = encode(test);

        let nrel = relations.len();
        let mut sets: HashMap<(EntityId, RelationId), BTreeSet<EntityId>> = HashMap::new();
        for t in train.iter().chain(&valid).chain(&test) {
            sets.entry((t.head, t.relation)).or_default().insert(t.tail);
            sets.entry((t.tail, t.relation + nrel)).or_default().insert(t.head);
        }
        let filter = sets
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().collect()))
            .collect();
        Ok(TripleStore {
            entities,
            relations,
            train,
            valid,
            test,
            filter,
        })
    }

    /// Loads `train.txt`, `valid.txt` and `test.txt` from a directory.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
            ));
        }
        let load = |s: Split| -> Result<Vec<RawTriple>> { load_tsv(dir.join(s.file_name())) };
        Self::build(&load(Split::Train)?, &load(Split::Valid)?, &load(Split::Test)?)
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    /// Original relations, without reverses.
    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Size of the relation id space including reverses.
    pub fn num_relation_ids(&self) -> usize {
        2 * self.relations.len()
    }

    pub fn reverse(&self, r: RelationId) -> RelationId {
        let n = self.num_relations();
        if r < n {
            r + n
        } else {
            r - n
        }
    }

    /// The original relation behind `r` (itself or the relation it reverses).
    pub fn base_relation(&self, r: RelationId) -> RelationId {
        r % self.num_relations()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relation_name(&self, r: RelationId) -> Option<String> {
        let n = self.num_relations();
        if r < n {
            self.relations.name(r).map(str::to_owned)
        } else {
            self.relations.name(r.checked_sub(n)?).map(|s| format!("{s}^-1"))
        }
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relations.id(name)
    }

    pub fn split(&self, s: Split) -> &[Triple] {
        match s {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// All true answers of `(entity, relation, ?)` over every split, sorted.
    pub fn known_answers(&self, entity: EntityId, relation: RelationId) -> &[EntityId] {
        self.filter.get(&(entity, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn filter_len(&self) -> usize {
        self.filter.len()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            entities: self.num_entities(),
            relations: self.num_relations(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    OneToOne,
    OneToN,
    NToOne,
    NToN,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::OneToOne, Category::OneToN, Category::NToOne, Category::NToN];

    pub fn label(self) -> &'static str {
        match self {
            Category::OneToOne => "1-1",
            Category::OneToN => "1-N",
            Category::NToOne => "N-1",
            Category::NToN => "N-N",
        }
    }

    pub fn classify(tph: f64, hpt: f64, threshold: f64) -> Self {
        match (tph > threshold, hpt > threshold) {
            (false, false) => Category::OneToOne,
            (true, false) => Category::OneToN,
            (false, true) => Category::NToOne,
            (true, true) => Category::NToN,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationCategory {
    pub category: Category,
    /// Average tails per head.
    pub tph: f64,
    /// Average heads per tail.
    pub hpt: f64,
}

/// Which triples feed the tails-per-head / heads-per-tail statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CategoryConvention {
    AllSplits,
    TrainOnly,
}

impl CategoryConvention {
    pub fn as_str(self) -> &'static str {
        match self {
            CategoryConvention::AllSplits => "all-splits",
            CategoryConvention::TrainOnly => "train-only",
        }
    }
}

impl std::str::FromStr for CategoryConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-splits" | "all" => Ok(CategoryConvention::AllSplits),
            "train-only" | "train" => Ok(CategoryConvention::TrainOnly),
            other => Err(Error::Config(format!(
                "unknown category convention {other:?} (all-splits|train-only)"
            ))),
        }
    }
}

pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

/// Categorizes original relations by average tails-per-head and
/// heads-per-tail over the distinct triples selected by `convention`.
pub fn categorize_relations(
    store: &TripleStore,
    threshold: f64,
    convention: CategoryConvention,
) -> Result<BTreeMap<RelationId, RelationCategory>> {
    if threshold <= 0.0 || !threshold.is_finite() {
        return Err(Error::Config(format!("category threshold must be positive, got {threshold}")));
    }
    let triples: HashSet<Triple> = match convention {
        CategoryConvention::AllSplits => Split::ALL
            .iter()
            .flat_map(|&s| store.split(s).iter().copied())
            .collect(),
        CategoryConvention::TrainOnly => store.split(Split::Train).iter().copied().collect(),
    };
    let mut count: BTreeMap<RelationId, usize> = BTreeMap::new();
    let mut heads: HashMap<RelationId, HashSet<EntityId>> = HashMap::new();
    let mut tails: HashMap<RelationId, HashSet<EntityId>> = HashMap::new();
    for t in &triples {
        *count.entry(t.relation).or_default() += 1;
        heads.entry(t.relation).or_default().insert(t.head);
        tails.entry(t.relation).or_default().insert(t.tail);
    }
    Ok(count
        .into_iter()
        .map(|(r, n)| {
            let tph = n as f64 / heads[&r].len() as f64;
            let hpt = n as f64 / tails[&r].len() as f64;
            (
                r,
                RelationCategory {
                    category: Category::classify(tph, hpt, threshold),
                    tph,
                    hpt,
                },
            )
        })
        .collect())
}

/// Number of `split` triples per category; relations absent from
/// `categories` are not counted.
pub fn category_counts(
    store: &TripleStore,
    categories: &BTreeMap<RelationId, RelationCategory>,
    split: Split,
) -> BTreeMap<Category, usize> {
    let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|&c| (c, 0)).collect();
    for t in store.split(split) {
        if let Some(c) = categories.get(&t.relation) {
            *out.entry(c.category).or_default() += 1;
        }
    }
    out
}

/// Standard dataset layout under a root directory: `<root>/<name>/{train,valid,test}.txt`.
pub fn dataset_dir(root: impl AsRef<Path>, name: &str) -> PathBuf {
    root.as_ref().join(name)
}
