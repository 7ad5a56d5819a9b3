//! Versioned little-endian binary encoding of fitted models.
//!
//! Layout: magic `ERFM`, `u32` format version, master seed, training data,
//! level and penalty settings, parameter box, in-sample thresholds, then one
//! or two forests (intermediate first). Lengths are `u64`; training indices
//! are `u32`.

use std::io::{self, Cursor, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::data::TrainingSet;
use crate::erf::{ErfError, ErfModel};
use crate::forest::{Forest, ForestParams, Node, Tree};
use crate::gpd::ThetaBox;

pub const MAGIC: [u8; 4] = *b"ERFM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a model archive")]
    BadMagic,
    #[error("unsupported archive format version {0} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Model(#[from] ErfError),
}

/// A fitted model together with the master seed it was fitted from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub seed: u64,
    pub model: ErfModel,
}

impl ModelArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let m = &self.model;
        w.write_all(&MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;
        w.write_u64::<LE>(self.seed)?;
        let t = m.training();
        write_len(w, t.n())?;
        write_len(w, t.p())?;
        write_f64s(w, t.x_flat())?;
        write_f64s(w, t.y())?;
        w.write_f64::<LE>(m.tau_n())?;
        w.write_f64::<LE>(m.lambda())?;
        w.write_f64::<LE>(m.xi_anchor())?;
        let b = m.theta_box();
        for v in [b.sigma_lo_rel, b.sigma_hi_rel, b.xi_lo, b.xi_hi] {
            w.write_f64::<LE>(v)?;
        }
        write_f64s(w, m.intermediate_at_train())?;
        w.write_u8(if m.shares_forests() { 1 } else { 2 })?;
        write_forest(w, m.intermediate_forest())?;
        if !m.shares_forests() {
            write_forest(w, m.weight_forest())?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ArchiveError> {
        let mut r = Reader { cur: Cursor::new(bytes) };
        let mut magic = [0u8; 4];
        r.cur.read_exact(&mut magic).map_err(|_| ArchiveError::BadMagic)?;
        if magic != MAGIC {
            return Err(ArchiveError::BadMagic);
        }
        let version = r.cur.read_u32::<LE>()?;
        if version != FORMAT_VERSION {
            return Err(ArchiveError::UnsupportedVersion(version));
        }
        let seed = r.cur.read_u64::<LE>()?;
        let n = r.len(1)?;
        let p = r.len(1)?;
        let x = r.f64s()?;
        let y = r.f64s()?;
        if x.len() != n.saturating_mul(p) || y.len() != n {
            return Err(ArchiveError::Corrupt("training dimensions disagree".into()));
        }
        let training =
            TrainingSet::from_flat(x, p, y).map_err(|e| ArchiveError::Corrupt(format!("training data: {e}")))?;
        let tau_n = r.cur.read_f64::<LE>()?;
        let lambda = r.cur.read_f64::<LE>()?;
        let xi_anchor = r.cur.read_f64::<LE>()?;
        let theta_box = ThetaBox {
            sigma_lo_rel: r.cur.read_f64::<LE>()?,
            sigma_hi_rel: r.cur.read_f64::<LE>()?,
            xi_lo: r.cur.read_f64::<LE>()?,
            xi_hi: r.cur.read_f64::<LE>()?,
        };
        let thresholds = r.f64s()?;
        let forests = r.cur.read_u8()?;
        if !(1..=2).contains(&forests) {
            return Err(ArchiveError::Corrupt(format!("{forests} forests")));
        }
        let intermediate = r.forest()?;
        let weight = if forests == 2 { Some(r.forest()?) } else { None };
        if (r.cur.position() as usize) != bytes.len() {
            return Err(ArchiveError::Corrupt("trailing bytes".into()));
        }
        let model =
            ErfModel::from_parts(training, tau_n, intermediate, weight, thresholds, lambda, xi_anchor, theta_box)?;
        Ok(Self { seed, model })
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ArchiveError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn write_len<W: Write>(w: &mut W, len: usize) -> io::Result<()> {
    w.write_u64::<LE>(len as u64)
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> io::Result<()> {
    write_len(w, v.len())?;
    v.iter().try_for_each(|&x| w.write_f64::<LE>(x))
}

fn write_u32s<W: Write>(w: &mut W, v: &[u32]) -> io::Result<()> {
    write_len(w, v.len())?;
    v.iter().try_for_each(|&x| w.write_u32::<LE>(x))
}

fn write_opt<W: Write>(w: &mut W, v: Option<usize>) -> io::Result<()> {
    w.write_u8(u8::from(v.is_some()))?;
    write_len(w, v.unwrap_or(0))
}

fn write_forest<W: Write>(w: &mut W, f: &Forest) -> io::Result<()> {
    let params = f.params();
    write_len(w, params.num_trees)?;
    write_opt(w, params.subsample_size)?;
    w.write_u8(u8::from(params.honest))?;
    write_len(w, params.min_node_size)?;
    write_opt(w, params.mtry)?;
    w.write_f64::<LE>(params.balance_fraction)?;
    write_f64s(w, &params.split_quantile_levels)?;
    w.write_u64::<LE>(params.seed)?;
    write_len(w, f.training_n())?;
    write_len(w, f.p())?;
    write_len(w, f.trees().len())?;
    for tree in f.trees() {
        write_u32s(w, tree.prediction_indices())?;
        write_u32s(w, tree.split_indices())?;
        write_len(w, tree.nodes().len())?;
        for node in tree.nodes() {
            match node {
                Node::Split { variable, value, left, right } => {
                    w.write_u8(0)?;
                    write_len(w, *variable)?;
                    w.write_f64::<LE>(*value)?;
                    write_len(w, *left)?;
                    write_len(w, *right)?;
                }
                Node::Leaf { members } => {
                    w.write_u8(1)?;
                    write_u32s(w, members)?;
                }
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    /// A length whose elements take at least `width` bytes each, rejected
    /// when it cannot fit in the rest of the buffer.
    fn len(&mut self, width: usize) -> Result<usize, ArchiveError> {
        let v = self.cur.read_u64::<LE>()?;
        let len = usize::try_from(v).map_err(|_| ArchiveError::Corrupt("length overflow".into()))?;
        if len.saturating_mul(width) > self.remaining() {
            return Err(ArchiveError::Corrupt(format!("length {len} exceeds the remaining data")));
        }
        Ok(len)
    }

    fn f64s(&mut self) -> Result<Vec<f64>, ArchiveError> {
        let len = self.len(8)?;
        (0..len).map(|_| Ok(self.cur.read_f64::<LE>()?)).collect()
    }

    fn u32s(&mut self) -> Result<Vec<u32>, ArchiveError> {
        let len = self.len(4)?;
        (0..len).map(|_| Ok(self.cur.read_u32::<LE>()?)).collect()
    }

    fn flag(&mut self) -> Result<bool, ArchiveError> {
        match self.cur.read_u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(ArchiveError::Corrupt(format!("flag byte {b}"))),
        }
    }

    fn opt(&mut self) -> Result<Option<usize>, ArchiveError> {
        let some = self.flag()?;
        let v = self.cur.read_u64::<LE>()? as usize;
        Ok(some.then_some(v))
    }

    fn forest(&mut self) -> Result<Forest, ArchiveError> {
        let num_trees = self.cur.read_u64::<LE>()? as usize;
        let subsample_size = self.opt()?;
        let honest = self.flag()?;
        let min_node_size = self.cur.read_u64::<LE>()? as usize;
        let mtry = self.opt()?;
        let balance_fraction = self.cur.read_f64::<LE>()?;
        let split_quantile_levels = self.f64s()?;
        let seed = self.cur.read_u64::<LE>()?;
        let params = ForestParams {
            num_trees,
            subsample_size,
            honest,
            min_node_size,
            mtry,
            balance_fraction,
            split_quantile_levels,
            seed,
        };
        let training_n = self.cur.read_u64::<LE>()? as usize;
        let p = self.cur.read_u64::<LE>()? as usize;
        let count = self.len(1)?;
        if count != num_trees {
            return Err(ArchiveError::Corrupt("tree count disagrees with parameters".into()));
        }
        let mut trees = Vec::with_capacity(count);
        for _ in 0..count {
            let prediction = self.u32s()?;
            let split = self.u32s()?;
            let node_count = self.len(1)?;
            let mut nodes = Vec::with_capacity(node_count);
            for _ in 0..node_count {
                nodes.push(match self.cur.read_u8()? {
                    0 => Node::Split {
                        variable: self.cur.read_u64::<LE>()? as usize,
                        value: self.cur.read_f64::<LE>()?,
                        left: self.cur.read_u64::<LE>()? as usize,
                        right: self.cur.read_u64::<LE>()? as usize,
                    },
                    1 => Node::Leaf { members: self.u32s()? },
                    t => return Err(ArchiveError::Corrupt(format!("node tag {t}"))),
                });
            }
            trees.push(Tree::from_parts(nodes, prediction, split));
        }
        Forest::from_parts(trees, params, training_n, p).map_err(|e| ArchiveError::Corrupt(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::erf::{erf_fit, ErfConfig, Estimator};
    use crate::forest::ForestParams;
    use crate::sim::{generate, Family, SimSpec};
    use proptest::prelude::*;

    fn model(n: usize, trees: usize, share: bool, seed: u64) -> ErfModel {
        let data = generate(&SimSpec::new(Family::Example1, n, 2, seed).unwrap()).unwrap();
        let config = ErfConfig {
            forest: ForestParams::default().with_trees(trees).with_min_node_size(5).with_seed(seed),
            share_forests: share,
            lambda: 0.01,
            ..ErfConfig::default()
        };
        erf_fit(&data, &config).unwrap()
    }

    fn bits(m: &ErfModel, x: &[f64]) -> Vec<u64> {
        [Estimator::Erf, Estimator::Hill, Estimator::ExpShape]
            .into_iter()
            .flat_map(|e| match m.predict_quantiles(x, &[0.9, 0.999], e) {
                Ok(p) => p.into_iter().flat_map(|q| [q.q_extreme.to_bits(), q.theta.xi.to_bits()]).collect(),
                Err(e) => vec![e.to_string().len() as u64],
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn round_trip_predicts_identically(n in 40usize..=200, trees in 1usize..=20, share: bool, seed: u64) {
            let original = ModelArchive { seed, model: model(n, trees, share, seed) };
            let loaded = ModelArchive::from_bytes(&original.to_bytes()).unwrap();
            prop_assert_eq!(&loaded, &original);
            for x in [[0.5, -0.5], [-0.9, 0.1], [0.0, 0.0]] {
                prop_assert_eq!(bits(&loaded.model, &x), bits(&original.model, &x));
            }
        }
    }

    #[test]
    fn rejects_other_versions_and_damage() {
        let bytes = ModelArchive { seed: 1, model: model(80, 3, false, 1) }.to_bytes();
        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(ModelArchive::from_bytes(&v2), Err(ArchiveError::UnsupportedVersion(2))));
        assert!(matches!(ModelArchive::from_bytes(b"nope"), Err(ArchiveError::BadMagic)));
        assert!(ModelArchive::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelArchive::from_bytes(&extra).is_err());
    }
}
