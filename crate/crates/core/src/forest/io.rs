//! Forest model file, version 1. All integers and floats little-endian:
//!
//! ```text
//! "RFMD" u32 version u32 n_features
//! n_features × (u32 len, utf-8 name)
//! u64 seed  u8 has_oob  f64 oob_error
//! u32 n_trees, then per tree:
//!   u32 max_depth  u32 n_nodes
//!   per node: u8 0 + f64 positive_fraction            (leaf)
//!          or u8 1 + u32 feature f64 threshold u32 left u32 right (split)
//!   n_features × f64 impurity decrease
//! ```

use std::io::{Read, Write};

use super::{DecisionTree, ForestModel, Node};
use crate::codec::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::seed::short_hash;

const MAGIC: &[u8; 4] = b"RFMD";
const VERSION: u32 = 1;

impl ForestModel {
    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = LeWriter::new(writer);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u32(self.n_features as u32)?;
        for name in &self.feature_names {
            w.str(name)?;
        }
        w.u64(self.seed)?;
        w.u8(self.oob_error.is_some() as u8)?;
        w.f64(self.oob_error.unwrap_or(0.0))?;
        w.u32(self.trees.len() as u32)?;
        for tree in &self.trees {
            w.u32(tree.max_depth as u32)?;
            w.u32(tree.nodes.len() as u32)?;
            for node in &tree.nodes {
                match *node {
                    Node::Leaf { positive_fraction } => {
                        w.u8(0)?;
                        w.f64(positive_fraction)?;
                    }
                    Node::Split { feature, threshold, left, right } => {
                        w.u8(1)?;
                        w.u32(feature)?;
                        w.f64(threshold)?;
                        w.u32(left)?;
                        w.u32(right)?;
                    }
                }
            }
            for &v in &tree.importance {
                w.f64(v)?;
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let bad = |why: String| Error::format("<forest>", why);
        let mut r = LeReader::new(reader);
        if &r.array::<4>()? != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n_features = r.u32()? as usize;
        let feature_names = (0..n_features).map(|_| r.str()).collect::<Result<Vec<_>, _>>()?;
        let seed = r.u64()?;
        let has_oob = r.u8()? != 0;
        let oob = r.f64()?;
        let n_trees = r.u32()? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            let max_depth = r.u32()? as usize;
            let n_nodes = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
            for _ in 0..n_nodes {
                nodes.push(match r.u8()? {
                    0 => Node::Leaf { positive_fraction: r.f64()? },
                    1 => {
                        let (feature, threshold, left, right) = (r.u32()?, r.f64()?, r.u32()?, r.u32()?);
                        if feature as usize >= n_features || left as usize >= n_nodes || right as usize >= n_nodes {
                            return Err(bad("split references out of range".into()));
                        }
                        Node::Split { feature, threshold, left, right }
                    }
                    t => return Err(bad(format!("unknown node tag {t}"))),
                });
            }
            let importance = (0..n_features).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            trees.push(DecisionTree { nodes, max_depth, importance });
        }
        r.expect_eof().map_err(|_| bad("trailing bytes".into()))?;
        if trees.is_empty() {
            return Err(bad("model has no trees".into()));
        }
        Ok(ForestModel {
            trees,
            n_features,
            feature_names,
            seed,
            oob_error: has_oob.then_some(oob),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    /// Short content hash of the serialized model.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(short_hash(&self.to_bytes()?))
    }
}
