//! Binary model container.
//!
//! ```text
//! "PSYM"  u32 version
//! section*: [u8; 4] tag, u64 payload length, payload
//! ```
//!
//! Sections appear in the order `TREE`, `SYMB`, `FILT`, `CTXT`. Integers are
//! little-endian u32 (u64 for lengths), reals little-endian f64.
//!
//! * `TREE`: part count, root, then per part its name (u32 length + UTF-8),
//!   level byte (0 high, 1 mid, 2 joint), box width and height, joint count
//!   and joints; then edge count and `(parent, child)` pairs.
//! * `SYMB`: cell size, feature dimension, root bias, then per part the
//!   symbol count and each symbol's `(geometric_type, visual_category)`.
//! * `FILT`: every filter, part by part, as a u64 length and its values.
//! * `CTXT`: per part a presence byte for the edge ending there; present
//!   edges store parent, child, both symbol counts and then, per symbol
//!   pair, a presence byte followed (if 1) by `w_dx, w_dy, w_dx2, w_dy2,
//!   bias, anchor_x, anchor_y`. An absent pair is incompatible.

use std::path::Path;

use crate::context::{ContextTable, EdgeTable, PairParams};
use crate::error::{PoseError, Result};
use crate::io::write_atomic;
use crate::model::{ModelParams, Symbol, SymbolId};
use crate::skeleton::{BoxSize, Level, PartDef, SkeletonTree};

pub const MAGIC: &[u8; 4] = b"PSYM";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model: the skeleton it was trained on and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub tree: SkeletonTree,
    pub params: ModelParams,
}

impl Model {
    pub fn new(tree: SkeletonTree, params: ModelParams) -> Result<Self> {
        params.validate(&tree)?;
        Ok(Model { tree, params })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        section(&mut out, b"TREE", encode_tree(&self.tree));
        section(&mut out, b"SYMB", encode_symbols(&self.params));
        section(&mut out, b"FILT", encode_filters(&self.params));
        section(&mut out, b"CTXT", encode_context(&self.params.context));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(PoseError::CorruptModel("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(PoseError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let tree = decode_tree(&mut r.section(b"TREE")?)?;
        let (cell_size, feature_dim, root_bias, ids) =
            decode_symbols(&mut r.section(b"SYMB")?, &tree)?;
        let symbols = decode_filters(&mut r.section(b"FILT")?, ids)?;
        let context = decode_context(&mut r.section(b"CTXT")?, &tree)?;
        if r.pos != bytes.len() {
            return Err(PoseError::CorruptModel("trailing bytes".into()));
        }
        Model::new(
            tree,
            ModelParams {
                cell_size,
                feature_dim,
                symbols,
                context,
                root_bias,
            },
        )
        .map_err(|e| PoseError::CorruptModel(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Model::from_bytes(&std::fs::read(path)?)
    }
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: Vec<u8>) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0
            .extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_tree(tree: &SkeletonTree) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(tree.len());
    w.u32(tree.root());
    for p in tree.parts() {
        w.u32(p.name.len());
        w.0.extend_from_slice(p.name.as_bytes());
        w.u8(p.level.code());
        w.u32(p.box_size.width);
        w.u32(p.box_size.height);
        w.u32(p.joints.len());
        for &j in &p.joints {
            w.u32(j);
        }
    }
    w.u32(tree.edges().len());
    for &(p, c) in tree.edges() {
        w.u32(p);
        w.u32(c);
    }
    w.0
}

fn encode_symbols(params: &ModelParams) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(params.cell_size);
    w.u32(params.feature_dim);
    w.f64(params.root_bias);
    for syms in &params.symbols {
        w.u32(syms.len());
        for s in syms {
            w.u32(s.id.geometric_type);
            w.u32(s.id.visual_category);
        }
    }
    w.0
}

fn encode_filters(params: &ModelParams) -> Vec<u8> {
    let mut w = Writer::default();
    for s in params.symbols.iter().flatten() {
        w.u64(s.filter.len());
        for &v in &s.filter {
            w.f64(v);
        }
    }
    w.0
}

fn encode_context(ctx: &ContextTable) -> Vec<u8> {
    let mut w = Writer::default();
    for slot in ctx.slots() {
        let Some(e) = slot else {
            w.u8(0);
            continue;
        };
        w.u8(1);
        w.u32(e.parent);
        w.u32(e.child);
        w.u32(e.parent_symbols);
        w.u32(e.child_symbols);
        for sp in 0..e.parent_symbols {
            for sc in 0..e.child_symbols {
                match e.get(sp, sc) {
                    None => w.u8(0),
                    Some(p) => {
                        w.u8(1);
                        for v in p.weights.iter().chain([&p.bias]).chain(&p.anchor) {
                            w.f64(*v);
                        }
                    }
                }
            }
        }
    }
    w.0
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| PoseError::CorruptModel("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    /// Reads a section header with the expected tag and returns its payload.
    fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>> {
        let found = self.take(4)?;
        if found != tag {
            return Err(PoseError::CorruptModel(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = usize::try_from(self.u64()?)
            .map_err(|_| PoseError::CorruptModel("section too long".into()))?;
        Ok(Reader {
            buf: self.take(len)?,
            pos: 0,
        })
    }
    fn finish(&self, tag: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(PoseError::CorruptModel(format!(
                "trailing bytes in section {tag}"
            )));
        }
        Ok(())
    }
}

/// Counts read from the file are bounded by the remaining bytes before any
/// allocation, so a corrupt length cannot trigger a huge allocation.
fn count(r: &mut Reader, min_item_bytes: usize) -> Result<usize> {
    let n = r.usize()?;
    if n.saturating_mul(min_item_bytes) > r.buf.len() - r.pos {
        return Err(PoseError::CorruptModel(format!(
            "count {n} exceeds remaining data"
        )));
    }
    Ok(n)
}

fn decode_tree(r: &mut Reader) -> Result<SkeletonTree> {
    let n = count(r, 17)?;
    let root = r.usize()?;
    let mut parts = Vec::with_capacity(n);
    for id in 0..n {
        let len = r.usize()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| PoseError::CorruptModel("part name is not UTF-8".into()))?
            .to_string();
        let level =
            Level::from_code(r.u8()?).ok_or_else(|| PoseError::CorruptModel("bad level".into()))?;
        let box_size = BoxSize::new(r.usize()?, r.usize()?);
        let nj = count(r, 4)?;
        let joints = (0..nj).map(|_| r.usize()).collect::<Result<_>>()?;
        parts.push(PartDef {
            id,
            name,
            level,
            box_size,
            joints,
        });
    }
    let ne = count(r, 8)?;
    let edges = (0..ne)
        .map(|_| Ok((r.usize()?, r.usize()?)))
        .collect::<Result<_>>()?;
    r.finish("TREE")?;
    SkeletonTree::new(parts, edges, root).map_err(|e| PoseError::CorruptModel(e.to_string()))
}

type SymbolHeader = (usize, usize, f64, Vec<Vec<SymbolId>>);

fn decode_symbols(r: &mut Reader, tree: &SkeletonTree) -> Result<SymbolHeader> {
    let cell_size = r.usize()?;
    let feature_dim = r.usize()?;
    let root_bias = r.f64()?;
    let mut ids = Vec::with_capacity(tree.len());
    for part in 0..tree.len() {
        let k = count(r, 8)?;
        ids.push(
            (0..k)
                .map(|_| {
                    Ok(SymbolId {
                        part,
                        geometric_type: r.usize()?,
                        visual_category: r.usize()?,
                    })
                })
                .collect::<Result<_>>()?,
        );
    }
    r.finish("SYMB")?;
    Ok((cell_size, feature_dim, root_bias, ids))
}

fn decode_filters(r: &mut Reader, ids: Vec<Vec<SymbolId>>) -> Result<Vec<Vec<Symbol>>> {
    let out = ids
        .into_iter()
        .map(|part| {
            part.into_iter()
                .map(|id| {
                    let len = usize::try_from(r.u64()?).unwrap_or(usize::MAX);
                    if len.saturating_mul(8) > r.buf.len() - r.pos {
                        return Err(PoseError::CorruptModel("filter length exceeds data".into()));
                    }
                    let filter = (0..len).map(|_| r.f64()).collect::<Result<_>>()?;
                    Ok(Symbol { id, filter })
                })
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    r.finish("FILT")?;
    Ok(out)
}

fn decode_context(r: &mut Reader, tree: &SkeletonTree) -> Result<ContextTable> {
    let mut edges = Vec::with_capacity(tree.len());
    for _ in 0..tree.len() {
        if r.u8()? == 0 {
            edges.push(None);
            continue;
        }
        let (parent, child) = (r.usize()?, r.usize()?);
        let (ps, cs) = (r.usize()?, r.usize()?);
        if ps.saturating_mul(cs) > r.buf.len() - r.pos {
            return Err(PoseError::CorruptModel("edge table exceeds data".into()));
        }
        let mut e = EdgeTable::new(parent, child, ps, cs);
        for sp in 0..ps {
            for sc in 0..cs {
                if r.u8()? == 1 {
                    let mut v = [0.0; 7];
                    for x in &mut v {
                        *x = r.f64()?;
                    }
                    e.set(
                        sp,
                        sc,
                        Some(PairParams {
                            weights: [v[0], v[1], v[2], v[3]],
                            bias: v[4],
                            anchor: [v[5], v[6]],
                        }),
                    );
                }
            }
        }
        edges.push(Some(e));
    }
    r.finish("CTXT")?;
    Ok(ContextTable::from_edges(edges))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let tree = SkeletonTree::default_human();
        let counts: Vec<usize> = (0..tree.len()).map(|p| 1 + p % 3).collect();
        let symbols = tree
            .parts()
            .iter()
            .map(|p| {
                (0..counts[p.id])
                    .map(|s| Symbol {
                        id: SymbolId {
                            part: p.id,
                            geometric_type: s,
                            visual_category: 0,
                        },
                        filter: (0..p.box_size.area() * 31)
                            .map(|i| (i as f64 * 0.37 + s as f64).sin())
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        let mut context = ContextTable::new(&tree, &counts);
        for e in context.edges_mut() {
            for sp in 0..e.parent_symbols {
                for sc in 0..e.child_symbols {
                    // leave one pair per multi-symbol edge incompatible
                    if (sp, sc) != (0, 1) {
                        e.set(
                            sp,
                            sc,
                            Some(PairParams {
                                weights: [0.1, -0.2, -0.05, -0.07],
                                bias: sp as f64 - 0.5 * sc as f64,
                                anchor: [1.5, -2.0],
                            }),
                        );
                    }
                }
            }
        }
        Model::new(
            tree,
            ModelParams {
                cell_size: 4,
                feature_dim: 31,
                symbols,
                context,
                root_bias: -0.25,
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = m.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_bytes(), bytes);
        let edge = back.params.context.edge(back.tree.edges()[0].1).unwrap();
        assert_eq!(
            edge.num_finite(),
            m.params.context.edge(edge.child).unwrap().num_finite()
        );
    }

    #[test]
    fn version_gate() {
        let mut bytes = model().to_bytes();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            Model::from_bytes(&bytes),
            Err(PoseError::VersionMismatch {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncation_and_garbage_are_corrupt() {
        let bytes = model().to_bytes();
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    Model::from_bytes(&bytes[..cut]),
                    Err(PoseError::CorruptModel(_))
                ),
                "cut {cut}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Model::from_bytes(&extra),
            Err(PoseError::CorruptModel(_))
        ));
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.psym");
        let m = model();
        m.save(&p).unwrap();
        assert_eq!(Model::load(&p).unwrap(), m);
    }
}
