//! Flat parameter vector and the joint feature map of a configuration.
//!
//! Layout: the root bias, then every symbol filter part by part, then five
//! slots `[w_dx, w_dy, w_dx2, w_dy2, bias]` per compatible symbol pair, edge
//! by edge. Incompatible pairs have no slots at all.

use std::ops::Range;

use crate::context::{deformation_feature, MAX_QUADRATIC};
use crate::error::{PoseError, Result};
use crate::features::{crop_patch_feature, FeatureMap};
use crate::model::ModelParams;
use crate::skeleton::SkeletonTree;

pub const PAIR_SLOTS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    filters: Vec<Vec<usize>>,
    filter_len: Vec<usize>,
    /// `pairs[child][sp * child_symbols + sc]`
    pairs: Vec<Vec<Option<usize>>>,
    child_symbols: Vec<usize>,
    len: usize,
    quadratic: Vec<usize>,
}

impl ParamLayout {
    pub fn new(params: &ModelParams, tree: &SkeletonTree) -> Result<Self> {
        params.validate(tree)?;
        let mut off = 1;
        let mut filters = Vec::with_capacity(tree.len());
        let mut filter_len = Vec::with_capacity(tree.len());
        for part in tree.parts() {
            let len = part.box_size.area() * params.feature_dim;
            filter_len.push(len);
            filters.push(
                (0..params.symbols[part.id].len())
                    .map(|_| {
                        off += len;
                        off - len
                    })
                    .collect(),
            );
        }
        let mut pairs = vec![Vec::new(); tree.len()];
        let mut child_symbols = vec![0; tree.len()];
        let mut quadratic = Vec::new();
        for &(_, c) in tree.edges() {
            let e = params.context.edge(c).expect("validated");
            child_symbols[c] = e.child_symbols;
            let mut slots = vec![None; e.parent_symbols * e.child_symbols];
            for (sp, sc, _) in e.finite_pairs() {
                slots[sp * e.child_symbols + sc] = Some(off);
                quadratic.extend([off + 2, off + 3]);
                off += PAIR_SLOTS;
            }
            pairs[c] = slots;
        }
        Ok(ParamLayout {
            filters,
            filter_len,
            pairs,
            child_symbols,
            len: off,
            quadratic,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn root_bias(&self) -> usize {
        0
    }

    pub fn filter_range(&self, part: usize, symbol: usize) -> Range<usize> {
        let o = self.filters[part][symbol];
        o..o + self.filter_len[part]
    }

    /// First of the five slots of a compatible pair, `None` if incompatible.
    pub fn pair_offset(&self, child: usize, sp: usize, sc: usize) -> Option<usize> {
        let n = self.child_symbols[child];
        if sc >= n {
            return None;
        }
        self.pairs.get(child)?.get(sp * n + sc).copied().flatten()
    }

    /// Indices of the quadratic deformation weights.
    pub fn quadratic_indices(&self) -> &[usize] {
        &self.quadratic
    }

    pub fn flatten(&self, params: &ModelParams) -> Vec<f64> {
        let mut theta = vec![0.0; self.len];
        theta[0] = params.root_bias;
        for (part, syms) in params.symbols.iter().enumerate() {
            for (s, sym) in syms.iter().enumerate() {
                theta[self.filter_range(part, s)].copy_from_slice(&sym.filter);
            }
        }
        for e in params.context.edges() {
            for (sp, sc, p) in e.finite_pairs() {
                let o = self.pair_offset(e.child, sp, sc).expect("same skeleton");
                theta[o..o + 4].copy_from_slice(&p.weights);
                theta[o + 4] = p.bias;
            }
        }
        theta
    }

    /// Writes `theta` into a copy of `template`; anchors and the context
    /// skeleton come from the template.
    pub fn unflatten(&self, theta: &[f64], template: &ModelParams) -> Result<ModelParams> {
        if theta.len() != self.len {
            return Err(PoseError::LengthMismatch {
                expected: self.len,
                actual: theta.len(),
            });
        }
        let mut out = template.clone();
        out.root_bias = theta[0];
        for (part, syms) in out.symbols.iter_mut().enumerate() {
            for (s, sym) in syms.iter_mut().enumerate() {
                sym.filter
                    .copy_from_slice(&theta[self.filter_range(part, s)]);
            }
        }
        for e in out.context.edges_mut() {
            let child = e.child;
            for (sp, sc, p) in e.finite_pairs_mut() {
                let o = self.pair_offset(child, sp, sc).expect("same skeleton");
                p.weights.copy_from_slice(&theta[o..o + 4]);
                p.bias = theta[o + 4];
            }
        }
        Ok(out)
    }

    /// Clamps the quadratic entries of `theta` to the concavity bound.
    pub fn project(&self, theta: &mut [f64]) {
        for &q in &self.quadratic {
            theta[q] = theta[q].min(MAX_QUADRATIC);
        }
    }
}

/// Sparse vector stored as disjoint dense blocks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeature {
    pub blocks: Vec<(usize, Vec<f64>)>,
}

impl SparseFeature {
    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|(o, b)| {
                b.iter()
                    .zip(&dense[*o..*o + b.len()])
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Inner product of two sparse vectors.
    pub fn dot_sparse(&self, other: &SparseFeature) -> f64 {
        let mut sum = 0.0;
        for (oa, a) in &self.blocks {
            for (ob, b) in &other.blocks {
                let lo = (*oa).max(*ob);
                let hi = (oa + a.len()).min(ob + b.len());
                for k in lo..hi {
                    sum += a[k - oa] * b[k - ob];
                }
            }
        }
        sum
    }

    pub fn norm_sq(&self) -> f64 {
        self.blocks.iter().flat_map(|(_, b)| b).map(|x| x * x).sum()
    }

    /// `dense += scale * self`
    pub fn add_to(&self, dense: &mut [f64], scale: f64) {
        for (o, b) in &self.blocks {
            for (d, x) in dense[*o..*o + b.len()].iter_mut().zip(b) {
                *d += scale * x;
            }
        }
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        self.add_to(&mut v, 1.0);
        v
    }
}

/// Joint feature of a configuration (`config[part] = (symbol, cell)`):
/// `<theta, phi>` equals the configuration's total score.
pub fn feature_vector(
    features: &FeatureMap,
    config: &[(usize, (usize, usize))],
    params: &ModelParams,
    layout: &ParamLayout,
    tree: &SkeletonTree,
) -> Result<SparseFeature> {
    if config.len() != tree.len() {
        return Err(PoseError::LengthMismatch {
            expected: tree.len(),
            actual: config.len(),
        });
    }
    let mut blocks = Vec::with_capacity(1 + 2 * tree.len());
    blocks.push((layout.root_bias(), vec![1.0]));
    for part in tree.parts() {
        let (s, loc) = config[part.id];
        if s >= params.symbols[part.id].len() {
            return Err(PoseError::InvalidArgument(format!(
                "part {} has no symbol {s}",
                part.id
            )));
        }
        if loc.0 >= features.cells_wide() || loc.1 >= features.cells_high() {
            return Err(PoseError::InvalidArgument(format!(
                "part {} location {loc:?} out of bounds",
                part.id
            )));
        }
        blocks.push((
            layout.filter_range(part.id, s).start,
            crop_patch_feature(features, loc, part.box_size),
        ));
    }
    for &(p, c) in tree.edges() {
        let (sp, lp) = config[p];
        let (sc, lc) = config[c];
        let o = layout
            .pair_offset(c, sp, sc)
            .ok_or(PoseError::InfeasibleConfiguration { edge: c })?;
        let pair = params
            .context
            .edge(c)
            .and_then(|e| e.get(sp, sc))
            .expect("slot implies pair");
        let d = deformation_feature(lp, lc, pair.anchor);
        blocks.push((o, vec![d[0], d[1], d[2], d[3], 1.0]));
    }
    Ok(SparseFeature { blocks })
}
