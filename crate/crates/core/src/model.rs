//! Learned model parameters and parse outputs.

use serde::{Deserialize, Serialize};

use crate::context::{compatibility_score, Compatibility, ContextTable};
use crate::error::{PoseError, Result};
use crate::features::{crop_patch_feature, dot, FeatureMap};
use crate::skeleton::SkeletonTree;

/// Identity of a visual symbol: the part it belongs to, the geometric type
/// it was discovered in, and its visual category within that type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SymbolId {
    pub part: usize,
    pub geometric_type: usize,
    pub visual_category: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Symbol {
    pub id: SymbolId,
    /// Box-shaped linear filter, laid out like [`crop_patch_feature`].
    pub filter: Vec<f64>,
}

/// Every learned parameter of the model. Symbols are addressed by their
/// index within the owning part; `symbols[part][s].id` gives the full id.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub cell_size: usize,
    pub feature_dim: usize,
    pub symbols: Vec<Vec<Symbol>>,
    pub context: ContextTable,
    pub root_bias: f64,
}

impl ModelParams {
    pub fn symbol_counts(&self) -> Vec<usize> {
        self.symbols.iter().map(Vec::len).collect()
    }

    pub fn validate(&self, tree: &SkeletonTree) -> Result<()> {
        if self.symbols.len() != tree.len() {
            return Err(PoseError::InvalidArgument(format!(
                "{} symbol lists for {} parts",
                self.symbols.len(),
                tree.len()
            )));
        }
        for part in tree.parts() {
            let len = part.box_size.area() * self.feature_dim;
            let syms = &self.symbols[part.id];
            if syms.is_empty() {
                return Err(PoseError::InfeasibleModel { part: part.id });
            }
            for s in syms {
                if s.filter.len() != len {
                    return Err(PoseError::LengthMismatch {
                        expected: len,
                        actual: s.filter.len(),
                    });
                }
            }
        }
        for &(p, c) in tree.edges() {
            let e = self.context.edge(c).ok_or_else(|| {
                PoseError::InvalidArgument(format!("missing context for edge {c}"))
            })?;
            if e.parent != p
                || e.parent_symbols != self.symbols[p].len()
                || e.child_symbols != self.symbols[c].len()
            {
                return Err(PoseError::InvalidArgument(format!(
                    "context table for edge {c} does not match symbols"
                )));
            }
            for (_, _, pair) in e.finite_pairs() {
                if pair.weights[2] > crate::context::MAX_QUADRATIC
                    || pair.weights[3] > crate::context::MAX_QUADRATIC
                {
                    return Err(PoseError::NonConcave(pair.weights[2].max(pair.weights[3])));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartParse {
    pub part: usize,
    /// Cell coordinates `(x, y)`.
    pub location: (usize, usize),
    /// Index into the part's symbol list.
    pub symbol: usize,
    pub symbol_id: SymbolId,
    /// Appearance score; the root part also carries the root bias.
    pub unary_score: f64,
    /// Compatibility score with the parent; zero for the root.
    pub pairwise_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseResult {
    pub parts: Vec<PartParse>,
    pub total_score: f64,
}

impl ParseResult {
    pub fn config(&self) -> Vec<(usize, (usize, usize))> {
        self.parts.iter().map(|p| (p.symbol, p.location)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBreakdown {
    pub unary: Vec<f64>,
    /// Indexed by child part; zero at the root.
    pub pairwise: Vec<f64>,
    pub root_bias: f64,
    pub total: f64,
}

/// Recomputes every appearance and compatibility term of a configuration
/// (`config[part] = (symbol, cell)`) from scratch.
pub fn score_configuration(
    config: &[(usize, (usize, usize))],
    params: &ModelParams,
    features: &FeatureMap,
    tree: &SkeletonTree,
) -> Result<ScoreBreakdown> {
    let mut unary = vec![0.0; tree.len()];
    let mut pairwise = vec![0.0; tree.len()];
    for part in tree.parts() {
        let (s, loc) = config[part.id];
        if loc.0 >= features.cells_wide() || loc.1 >= features.cells_high() {
            return Err(PoseError::InvalidArgument(format!(
                "part {} location {loc:?} out of bounds",
                part.id
            )));
        }
        let sym = params.symbols[part.id].get(s).ok_or_else(|| {
            PoseError::InvalidArgument(format!("part {} has no symbol {s}", part.id))
        })?;
        let patch = crop_patch_feature(features, loc, part.box_size);
        unary[part.id] = dot(&sym.filter, &patch);
    }
    for &(p, c) in tree.edges() {
        let (sp, lp) = config[p];
        let (sc, lc) = config[c];
        pairwise[c] = match compatibility_score(&params.context, c, sp, sc, lp, lc)? {
            Compatibility::Finite(v) => v,
            Compatibility::Incompatible => {
                return Err(PoseError::InfeasibleConfiguration { edge: c })
            }
        };
    }
    let total = unary.iter().sum::<f64>() + pairwise.iter().sum::<f64>() + params.root_bias;
    Ok(ScoreBreakdown {
        unary,
        pairwise,
        root_bias: params.root_bias,
        total,
    })
}

pub fn score_decomposition(
    result: &ParseResult,
    params: &ModelParams,
    features: &FeatureMap,
    tree: &SkeletonTree,
) -> Result<ScoreBreakdown> {
    score_configuration(&result.config(), params, features, tree)
}
