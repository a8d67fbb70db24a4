//! Binary model file.
//!
//! All integers little-endian.
//!
//! ```text
//! magic         4 bytes  "NPCF"
//! version       u8       1
//! feature_mode  u8       0 = transformed, 1 = raw
//! n_classes     u16
//!   class_id    u16      (repeated n_classes times)
//!   n_comp      u8
//!   switch      u8       flat switch index 0..12, n_comp times
//! n_trees       u32
//! max_depth     u32
//! min_leaf      u32
//! mtry          u32
//! seed          u64
//! per tree:
//!   n_nodes     u32
//!   preorder nodes:
//!     tag u8 = 0  leaf:     class_id u16
//!     tag u8 = 1  internal: feature_index u8, threshold f64
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::fault::{ClassSet, FaultSet, SwitchId};
use crate::features::FeatureMode;
use crate::forest::{Forest, ForestParams, Node, Tree};

pub const MODEL_MAGIC: [u8; 4] = *b"NPCF";
pub const MODEL_VERSION: u8 = 1;

const TAG_LEAF: u8 = 0;
const TAG_SPLIT: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_model<W: Write>(forest: &Forest, mut out: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.push(MODEL_VERSION);
    buf.push(match forest.feature_mode() {
        FeatureMode::Transformed => 0,
        FeatureMode::Raw => 1,
    });
    let classes = forest.classes();
    buf.extend_from_slice(&(classes.len() as u16).to_le_bytes());
    for class in classes.iter() {
        buf.extend_from_slice(&class.id.to_le_bytes());
        buf.push(class.components.len() as u8);
        for id in class.components.iter() {
            buf.push(id.index() as u8);
        }
    }
    let p = forest.params();
    put_u32(&mut buf, p.n_trees)?;
    put_u32(&mut buf, p.max_depth)?;
    put_u32(&mut buf, p.min_leaf)?;
    put_u32(&mut buf, p.mtry)?;
    buf.extend_from_slice(&p.seed.to_le_bytes());
    for tree in forest.trees() {
        put_u32(&mut buf, tree.nodes().len())?;
        for node in tree.nodes() {
            match *node {
                Node::Leaf { class } => {
                    buf.push(TAG_LEAF);
                    buf.extend_from_slice(&class.to_le_bytes());
                }
                Node::Split {
                    feature, threshold, ..
                } => {
                    buf.push(TAG_SPLIT);
                    buf.push(feature);
                    buf.extend_from_slice(&threshold.to_le_bytes());
                }
            }
        }
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "model file truncated at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_model<R: Read>(mut input: R) -> Result<Forest> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = cur.u8()?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported model version {version}"
        )));
    }
    let mode = match cur.u8()? {
        0 => FeatureMode::Transformed,
        1 => FeatureMode::Raw,
        other => return Err(Error::Format(format!("unknown feature mode tag {other}"))),
    };
    let n_classes = cur.u16()? as usize;
    let mut sets = Vec::with_capacity(n_classes);
    for expected in 0..n_classes {
        let id = cur.u16()? as usize;
        if id != expected {
            return Err(Error::Format(format!(
                "class ids out of order: {id} at {expected}"
            )));
        }
        let n = cur.u8()?;
        let mut set = FaultSet::EMPTY;
        for _ in 0..n {
            let idx = cur.u8()? as usize;
            let sw = SwitchId::from_index(idx)
                .ok_or_else(|| Error::Format(format!("bad switch index {idx}")))?;
            set.insert(sw);
        }
        sets.push(set);
    }
    let classes = ClassSet::new(sets).map_err(|e| Error::Format(e.to_string()))?;
    let params = ForestParams {
        n_trees: cur.u32()? as usize,
        max_depth: cur.u32()? as usize,
        min_leaf: cur.u32()? as usize,
        mtry: cur.u32()? as usize,
        seed: cur.u64()?,
    };
    params
        .validate(mode.dim())
        .map_err(|e| Error::Format(e.to_string()))?;

    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        let n_nodes = cur.u32()? as usize;
        if n_nodes == 0 {
            return Err(Error::Format(format!("tree {t} is empty")));
        }
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        let end = read_subtree(
            &mut cur,
            &mut nodes,
            mode.dim(),
            n_classes,
            0,
            params.max_depth,
        )?;
        if end != n_nodes {
            return Err(Error::Format(format!(
                "tree {t} declares {n_nodes} nodes but holds {end}"
            )));
        }
        trees.push(Tree::from_nodes(nodes)?);
    }
    if cur.pos != buf.len() {
        return Err(Error::Format("trailing bytes after last tree".into()));
    }
    Ok(Forest::from_parts(trees, params, classes, mode))
}

fn read_subtree(
    cur: &mut Cursor<'_>,
    nodes: &mut Vec<Node>,
    dim: usize,
    n_classes: usize,
    depth: usize,
    max_depth: usize,
) -> Result<usize> {
    match cur.u8()? {
        TAG_LEAF => {
            let class = cur.u16()?;
            if class as usize >= n_classes {
                return Err(Error::Format(format!("leaf class {class} out of range")));
            }
            nodes.push(Node::Leaf { class });
        }
        TAG_SPLIT => {
            if depth >= max_depth {
                return Err(Error::Format("tree deeper than max_depth".into()));
            }
            let feature = cur.u8()?;
            if feature as usize >= dim {
                return Err(Error::Format(format!(
                    "split feature {feature} out of range"
                )));
            }
            let threshold = cur.f64()?;
            let at = nodes.len();
            nodes.push(Node::Split {
                feature,
                threshold,
                right: 0,
            });
            read_subtree(cur, nodes, dim, n_classes, depth + 1, max_depth)?;
            let right_at = nodes.len() as u32;
            read_subtree(cur, nodes, dim, n_classes, depth + 1, max_depth)?;
            if let Node::Split { right, .. } = &mut nodes[at] {
                *right = right_at;
            }
        }
        tag => return Err(Error::Format(format!("unknown node tag {tag}"))),
    }
    Ok(nodes.len())
}
