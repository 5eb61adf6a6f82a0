//! Triple storage, id vocabularies and the filtered-candidate index.
//!
//! Ids are assigned in order of first appearance while reading train, then
//! valid, then test, so the same files always produce the same ids. The
//! filtered index covers the union of all three splits.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A fact `(head, relation, tail)` over integer ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Triple { head, relation, tail }
    }

    /// The entity occupying `side`.
    pub fn entity(&self, side: Side) -> usize {
        match side {
            Side::Head => self.head,
            Side::Tail => self.tail,
        }
    }

    /// Copy of this triple with the `side` slot replaced by `entity`.
    pub fn with_entity(&self, side: Side, entity: usize) -> Triple {
        match side {
            Side::Head => Triple { head: entity, ..*self },
            Side::Tail => Triple { tail: entity, ..*self },
        }
    }
}

/// Which entity slot of a triple is corrupted or queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Head, Side::Tail];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Error)]
pub enum KgError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected 3 tab-separated fields, found {found}")]
    Malformed { path: PathBuf, line: usize, found: usize },
    #[error("triple {triple:?} appears in both {first:?} and {second:?}")]
    OverlappingSplits {
        triple: Triple,
        first: Split,
        second: Split,
    },
    #[error("annotated negative {0:?} is a known triple")]
    NegativeIsKnown(Triple),
    #[error("triple {triple:?} is out of range for |E|={entities}, |R|={relations}")]
    OutOfRange {
        triple: Triple,
        entities: usize,
        relations: usize,
    },
}

/// Bidirectional label <-> id map; ids are dense and 0-based.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary whose ids are the positions in `labels`.
    pub fn from_labels<I: IntoIterator<Item = String>>(labels: I) -> Self {
        let mut vocab = Vocab::new();
        for label in labels {
            vocab.intern(&label);
        }
        vocab
    }

    /// Numeric labels `"0".."n"`, used for graphs built from raw ids.
    pub fn numbered(n: usize) -> Self {
        Self::from_labels((0..n).map(|i| i.to_string()))
    }

    /// Returns the id of `label`, assigning the next id on first sight.
    pub fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `id<TAB>label` lines in id order.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, label) in self.labels.iter().enumerate() {
            writeln!(out, "{id}\t{label}")?;
        }
        Ok(())
    }

    /// Inverse of [`Vocab::write_tsv`]; ids must be listed densely in order.
    pub fn read_tsv<R: BufRead>(input: R) -> std::io::Result<Self> {
        let mut vocab = Vocab::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (id, label) = line.split_once('\t').ok_or_else(|| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("line {}: missing tab", lineno + 1),
                )
            })?;
            let id: usize = id.parse().map_err(|_| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("line {}: bad id {id:?}", lineno + 1),
                )
            })?;
            if id != vocab.len() {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("line {}: expected id {}, found {id}", lineno + 1, vocab.len()),
                ));
            }
            vocab.intern(label);
        }
        Ok(vocab)
    }
}

/// Summary emitted after loading; cold-start items occur only outside train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub entity_count: usize,
    pub relation_count: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub true_negatives: usize,
    pub cold_start_entities: usize,
    pub cold_start_relations: usize,
}

/// Paths of a dataset in the usual `train.txt` / `valid.txt` / `test.txt` layout.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub negatives: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            train: dir.join("train.txt"),
            valid: dir.join("valid.txt"),
            test: dir.join("test.txt"),
            negatives: None,
        }
    }

    pub fn with_negatives(mut self, path: impl Into<PathBuf>) -> Self {
        self.negatives = Some(path.into());
        self
    }
}

/// An immutable knowledge graph with its splits and filter index.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    train: Vec<Triple>,
    valid: Vec<Triple>,
    test: Vec<Triple>,
    true_negatives: Vec<Triple>,
    known_tails: HashMap<(usize, usize), Vec<usize>>,
    known_heads: HashMap<(usize, usize), Vec<usize>>,
    negative_tails: HashMap<(usize, usize), Vec<usize>>,
    negative_heads: HashMap<(usize, usize), Vec<usize>>,
}

impl KnowledgeGraph {
    /// Builds a graph from id-level splits. Validates ranges and disjointness.
    pub fn from_splits(
        entities: Vocab,
        relations: Vocab,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
        true_negatives: Vec<Triple>,
    ) -> Result<Self, KgError> {
        let (ne, nr) = (entities.len(), relations.len());
        let mut owner: HashMap<Triple, Split> = HashMap::new();
        for (split, triples) in [(Split::Train, &train), (Split::Valid, &valid), (Split::Test, &test)] {
            for &t in triples {
                if t.head >= ne || t.tail >= ne || t.relation >= nr {
                    return Err(KgError::OutOfRange {
                        triple: t,
                        entities: ne,
                        relations: nr,
                    });
                }
                if let Some(&first) = owner.get(&t) {
                    if first != split {
                        return Err(KgError::OverlappingSplits {
                            triple: t,
                            first,
                            second: split,
                        });
                    }
                } else {
                    owner.insert(t, split);
                }
            }
        }

        let mut known_tails: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut known_heads: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for t in owner.keys() {
            known_tails.entry((t.head, t.relation)).or_default().push(t.tail);
            known_heads.entry((t.relation, t.tail)).or_default().push(t.head);
        }
        for v in known_tails.values_mut().chain(known_heads.values_mut()) {
            v.sort_unstable();
        }

        let mut negative_tails: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut negative_heads: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        let mut seen = HashSet::new();
        for &t in &true_negatives {
            if t.head >= ne || t.tail >= ne || t.relation >= nr {
                return Err(KgError::OutOfRange {
                    triple: t,
                    entities: ne,
                    relations: nr,
                });
            }
            if owner.contains_key(&t) {
                return Err(KgError::NegativeIsKnown(t));
            }
            // Keep file order (for reproducible sampling) but drop repeats.
            if seen.insert(t) {
                negative_tails.entry((t.head, t.relation)).or_default().push(t.tail);
                negative_heads.entry((t.relation, t.tail)).or_default().push(t.head);
            }
        }

        Ok(KnowledgeGraph {
            entities,
            relations,
            train,
            valid,
            test,
            true_negatives,
            known_tails,
            known_heads,
            negative_tails,
            negative_heads,
        })
    }

    /// Convenience constructor over numbered ids.
    pub fn from_ids(
        entity_count: usize,
        relation_count: usize,
        train: Vec<Triple>,
        valid: Vec<Triple>,
        test: Vec<Triple>,
    ) -> Result<Self, KgError> {
        Self::from_splits(
            Vocab::numbered(entity_count),
            Vocab::numbered(relation_count),
            train,
            valid,
            test,
            Vec::new(),
        )
    }

    /// Loads TSV split files, returning the graph and its load report.
    pub fn load(paths: &DatasetPaths) -> Result<(Self, LoadReport), KgError> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let train = read_triples(&paths.train, &mut entities, &mut relations)?;
        let (train_entities, train_relations) = (entities.len(), relations.len());
        let mut seen_in_train = vec![false; train_entities];
        let mut rel_in_train = vec![false; train_relations];
        for t in &train {
            seen_in_train[t.head] = true;
            seen_in_train[t.tail] = true;
            rel_in_train[t.relation] = true;
        }
        let valid = read_triples(&paths.valid, &mut entities, &mut relations)?;
        let test = read_triples(&paths.test, &mut entities, &mut relations)?;
        let negatives = match &paths.negatives {
            Some(p) => read_triples(p, &mut entities, &mut relations)?,
            None => Vec::new(),
        };

        // All train entities are marked seen, so cold-start ids are exactly the
        // ones interned after train.
        let cold_start_entities = entities.len() - train_entities;
        let cold_start_relations = relations.len() - train_relations;

        let graph = Self::from_splits(entities, relations, train, valid, test, negatives)?;
        let report = graph.report(cold_start_entities, cold_start_relations);
        tracing::info!(
            entities = report.entity_count,
            relations = report.relation_count,
            train = report.train,
            valid = report.valid,
            test = report.test,
            true_negatives = report.true_negatives,
            cold_start_entities = report.cold_start_entities,
            cold_start_relations = report.cold_start_relations,
            "loaded knowledge graph"
        );
        Ok((graph, report))
    }

    fn report(&self, cold_start_entities: usize, cold_start_relations: usize) -> LoadReport {
        LoadReport {
            entity_count: self.entity_count(),
            relation_count: self.relation_count(),
            train: self.train.len(),
            valid: self.valid.len(),
            test: self.test.len(),
            true_negatives: self.true_negatives.len(),
            cold_start_entities,
            cold_start_relations,
        }
    }

    /// Writes the graph's splits and vocabularies in the on-disk TSV layout.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (name, triples) in [
            ("train.txt", &self.train),
            ("valid.txt", &self.valid),
            ("test.txt", &self.test),
        ] {
            let mut out = BufWriter::new(File::create(dir.join(name))?);
            for t in triples.iter() {
                writeln!(
                    out,
                    "{}\t{}\t{}",
                    self.entities.labels[t.head], self.relations.labels[t.relation], self.entities.labels[t.tail]
                )?;
            }
            out.flush()?;
        }
        Ok(())
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn train(&self) -> &[Triple] {
        &self.train
    }

    pub fn valid(&self) -> &[Triple] {
        &self.valid
    }

    pub fn test(&self) -> &[Triple] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Triple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn true_negatives(&self) -> &[Triple] {
        &self.true_negatives
    }

    /// True iff `t` appears in train, valid or test.
    pub fn is_known(&self, t: &Triple) -> bool {
        self.known_tails
            .get(&(t.head, t.relation))
            .is_some_and(|tails| tails.binary_search(&t.tail).is_ok())
    }

    /// Sorted tails `t` with `(head, relation, t)` known.
    pub fn known_tails(&self, head: usize, relation: usize) -> &[usize] {
        self.known_tails.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    /// Sorted heads `h` with `(h, relation, tail)` known.
    pub fn known_heads(&self, relation: usize, tail: usize) -> &[usize] {
        self.known_heads.get(&(relation, tail)).map_or(&[], Vec::as_slice)
    }

    /// Known entities that fill the `side` slot given the rest of `query`.
    pub fn known_fillers(&self, query: &Triple, side: Side) -> &[usize] {
        match side {
            Side::Head => self.known_heads(query.relation, query.tail),
            Side::Tail => self.known_tails(query.head, query.relation),
        }
    }

    /// Annotated negative entities for the `side` slot of `query`, in file order.
    pub fn negative_fillers(&self, query: &Triple, side: Side) -> &[usize] {
        let found = match side {
            Side::Head => self.negative_heads.get(&(query.relation, query.tail)),
            Side::Tail => self.negative_tails.get(&(query.head, query.relation)),
        };
        found.map_or(&[], Vec::as_slice)
    }

    pub fn has_true_negatives(&self) -> bool {
        !self.true_negatives.is_empty()
    }
}

fn read_triples(path: &Path, entities: &mut Vocab, relations: &mut Vocab) -> Result<Vec<Triple>, KgError> {
    let io_err = |source| KgError::Io {
        path: path.to_owned(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    let mut triples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                path: path.to_owned(),
                line: i + 1,
                found: fields.len(),
            });
        }
        let head = entities.intern(fields[0]);
        let relation = relations.intern(fields[1]);
        let tail = entities.intern(fields[2]);
        triples.push(Triple::new(head, relation, tail));
    }
    Ok(triples)
}
