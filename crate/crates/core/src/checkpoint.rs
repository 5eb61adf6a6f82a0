//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "PUKGC1"  magic
//! u32       version
//! u8        scoring kind (0 = DistMult, 1 = TransE)
//! u64 x 3   d, |E|, |R|
//! f64 ...   entity table, row-major
//! f64 ...   relation table, row-major
//! labels    |E| entity labels then |R| relation labels, each u32 length + UTF-8
//! sections  zero or more tagged sections until EOF
//! ```
//!
//! The only section is `"GEN1"`: u64 d, u64 hidden, f64 dropout, then
//! `w1`, `b1`, `w2`, `b2` as f64.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::generator::GeneratorParams;
use crate::kg::Vocab;
use crate::scoring::{EmbeddingTable, ModelParams, ScoringKind};

pub const MAGIC: &[u8; 6] = b"PUKGC1";
pub const VERSION: u32 = 1;
pub const GEN_TAG: &[u8; 4] = b"GEN1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic header)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("unknown scoring kind tag {0}")]
    UnknownKind(u8),
    #[error("unknown section tag {0:?}")]
    UnknownSection([u8; 4]),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub entity_labels: Vocab,
    pub relation_labels: Vocab,
    pub generator: Option<GeneratorParams>,
}

fn kind_tag(kind: ScoringKind) -> u8 {
    match kind {
        ScoringKind::DistMult => 0,
        ScoringKind::TransE => 1,
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    xs.iter().try_for_each(|&x| w.write_f64::<LittleEndian>(x))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<usize, CheckpointError> {
    let n = r.read_u64::<LittleEndian>()?;
    usize::try_from(n).map_err(|_| CheckpointError::Corrupt(format!("{what} {n} does not fit in memory")))
}

fn write_labels<W: Write>(w: &mut W, labels: &[String]) -> io::Result<()> {
    for label in labels {
        w.write_u32::<LittleEndian>(label.len() as u32)?;
        w.write_all(label.as_bytes())?;
    }
    Ok(())
}

fn read_labels<R: Read>(r: &mut R, n: usize) -> Result<Vocab, CheckpointError> {
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        labels.push(String::from_utf8(buf).map_err(|e| CheckpointError::Corrupt(format!("label is not UTF-8: {e}")))?);
    }
    let vocab = Vocab::from_labels(labels);
    if vocab.len() != n {
        return Err(CheckpointError::Corrupt("duplicate labels".into()));
    }
    Ok(vocab)
}

impl Checkpoint {
    /// Checkpoint with numeric labels `0..n`.
    pub fn unlabeled(params: ModelParams, generator: Option<GeneratorParams>) -> Self {
        Checkpoint {
            entity_labels: Vocab::numbered(params.entity_count()),
            relation_labels: Vocab::numbered(params.relation_count()),
            params,
            generator,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        let p = &self.params;
        if self.entity_labels.len() != p.entity_count() || self.relation_labels.len() != p.relation_count() {
            return Err(CheckpointError::Corrupt("label maps do not match table sizes".into()));
        }
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(kind_tag(p.kind))?;
        for n in [p.dim(), p.entity_count(), p.relation_count()] {
            w.write_u64::<LittleEndian>(n as u64)?;
        }
        write_f64s(&mut w, p.entities.as_slice())?;
        write_f64s(&mut w, p.relations.as_slice())?;
        write_labels(&mut w, self.entity_labels.labels())?;
        write_labels(&mut w, self.relation_labels.labels())?;
        if let Some(gen) = &self.generator {
            w.write_all(GEN_TAG)?;
            w.write_u64::<LittleEndian>(gen.dim as u64)?;
            w.write_u64::<LittleEndian>(gen.hidden as u64)?;
            w.write_f64::<LittleEndian>(gen.dropout)?;
            for t in gen.tensors() {
                write_f64s(&mut w, t)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|_| CheckpointError::BadMagic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let kind = match r.read_u8()? {
            0 => ScoringKind::DistMult,
            1 => ScoringKind::TransE,
            other => return Err(CheckpointError::UnknownKind(other)),
        };
        let dim = read_len(&mut r, "dimension")?;
        let ne = read_len(&mut r, "entity count")?;
        let nr = read_len(&mut r, "relation count")?;
        let entities = EmbeddingTable::from_vec(ne, dim, read_f64s(&mut r, ne * dim)?);
        let relations = EmbeddingTable::from_vec(nr, dim, read_f64s(&mut r, nr * dim)?);
        let entity_labels = read_labels(&mut r, ne)?;
        let relation_labels = read_labels(&mut r, nr)?;

        let mut generator = None;
        loop {
            let mut tag = [0u8; 4];
            match r.read_exact(&mut tag) {
                Ok(()) => {}
                Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            if &tag != GEN_TAG {
                return Err(CheckpointError::UnknownSection(tag));
            }
            let gdim = read_len(&mut r, "generator dimension")?;
            let hidden = read_len(&mut r, "generator hidden size")?;
            let dropout = r.read_f64::<LittleEndian>()?;
            generator = Some(GeneratorParams {
                dim: gdim,
                hidden,
                dropout,
                w1: read_f64s(&mut r, hidden * gdim)?,
                b1: read_f64s(&mut r, hidden)?,
                w2: read_f64s(&mut r, gdim * hidden)?,
                b2: read_f64s(&mut r, gdim)?,
            });
        }

        Ok(Checkpoint {
            params: ModelParams {
                kind,
                entities,
                relations,
            },
            entity_labels,
            relation_labels,
            generator,
        })
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
