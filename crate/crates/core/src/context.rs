//! Symbol-wise geometric context: per edge and per ordered symbol pair, a
//! quadratic deformation cost around a learned anchor plus a bias. Symbol
//! pairs that never co-occur in training have no entry at all, which is how
//! an infinitely negative bias is represented.

use std::fmt::Write as _;

use crate::error::{PoseError, Result};
use crate::skeleton::SkeletonTree;

/// Upper bound on the quadratic deformation weights.
pub const MAX_QUADRATIC: f64 = -0.01;

pub const INITIAL_WEIGHTS: [f64; 4] = [0.0, 0.0, -0.05, -0.05];

/// `[dx, dy, dx^2, dy^2]`, with `d = (child - parent) - anchor` in cells.
pub type DeformationFeature = [f64; 4];

pub fn deformation_feature(
    parent: (usize, usize),
    child: (usize, usize),
    anchor: [f64; 2],
) -> DeformationFeature {
    let dx = (child.0 as f64 - parent.0 as f64) - anchor[0];
    let dy = (child.1 as f64 - parent.1 as f64) - anchor[1];
    [dx, dy, dx * dx, dy * dy]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairParams {
    pub weights: [f64; 4],
    pub bias: f64,
    pub anchor: [f64; 2],
}

impl PairParams {
    pub fn score(&self, parent: (usize, usize), child: (usize, usize)) -> f64 {
        let psi = deformation_feature(parent, child, self.anchor);
        self.weights
            .iter()
            .zip(psi)
            .map(|(w, p)| w * p)
            .sum::<f64>()
            + self.bias
    }

    pub fn clamp_quadratic(&mut self) {
        self.weights[2] = self.weights[2].min(MAX_QUADRATIC);
        self.weights[3] = self.weights[3].min(MAX_QUADRATIC);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Compatibility {
    Finite(f64),
    Incompatible,
}

impl Compatibility {
    pub fn finite(self) -> Option<f64> {
        match self {
            Compatibility::Finite(v) => Some(v),
            Compatibility::Incompatible => None,
        }
    }
}

/// Dense `parent_symbols x child_symbols` table for one edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTable {
    pub parent: usize,
    pub child: usize,
    pub parent_symbols: usize,
    pub child_symbols: usize,
    pairs: Vec<Option<PairParams>>,
}

impl EdgeTable {
    pub fn new(parent: usize, child: usize, parent_symbols: usize, child_symbols: usize) -> Self {
        EdgeTable {
            parent,
            child,
            parent_symbols,
            child_symbols,
            pairs: vec![None; parent_symbols * child_symbols],
        }
    }

    fn index(&self, sp: usize, sc: usize) -> Option<usize> {
        (sp < self.parent_symbols && sc < self.child_symbols).then(|| sp * self.child_symbols + sc)
    }

    pub fn get(&self, sp: usize, sc: usize) -> Option<&PairParams> {
        self.index(sp, sc).and_then(|i| self.pairs[i].as_ref())
    }

    pub fn get_mut(&mut self, sp: usize, sc: usize) -> Option<&mut PairParams> {
        self.index(sp, sc).and_then(move |i| self.pairs[i].as_mut())
    }

    pub fn set(&mut self, sp: usize, sc: usize, pair: Option<PairParams>) {
        let i = self.index(sp, sc).expect("symbol pair in range");
        self.pairs[i] = pair;
    }

    /// Finite pairs in (parent symbol, child symbol) order.
    pub fn finite_pairs(&self) -> impl Iterator<Item = (usize, usize, &PairParams)> {
        self.pairs.iter().enumerate().filter_map(move |(i, p)| {
            p.as_ref()
                .map(|p| (i / self.child_symbols, i % self.child_symbols, p))
        })
    }

    pub fn finite_pairs_mut(&mut self) -> impl Iterator<Item = (usize, usize, &mut PairParams)> {
        let cs = self.child_symbols;
        self.pairs
            .iter_mut()
            .enumerate()
            .filter_map(move |(i, p)| p.as_mut().map(|p| (i / cs, i % cs, p)))
    }

    pub fn num_finite(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_some()).count()
    }
}

/// Context tables for every edge, indexed by child part id.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTable {
    edges: Vec<Option<EdgeTable>>,
}

impl ContextTable {
    pub fn new(tree: &SkeletonTree, symbol_counts: &[usize]) -> Self {
        let mut edges = vec![None; tree.len()];
        for &(p, c) in tree.edges() {
            edges[c] = Some(EdgeTable::new(p, c, symbol_counts[p], symbol_counts[c]));
        }
        ContextTable { edges }
    }

    pub(crate) fn from_edges(edges: Vec<Option<EdgeTable>>) -> Self {
        ContextTable { edges }
    }

    /// Table of the edge ending at `child`.
    pub fn edge(&self, child: usize) -> Option<&EdgeTable> {
        self.edges.get(child).and_then(|e| e.as_ref())
    }

    pub fn edge_mut(&mut self, child: usize) -> Option<&mut EdgeTable> {
        self.edges.get_mut(child).and_then(|e| e.as_mut())
    }

    pub fn edges(&self) -> impl Iterator<Item = &EdgeTable> {
        self.edges.iter().flatten()
    }

    pub fn edges_mut(&mut self) -> impl Iterator<Item = &mut EdgeTable> {
        self.edges.iter_mut().flatten()
    }

    pub(crate) fn slots(&self) -> &[Option<EdgeTable>] {
        &self.edges
    }

    pub fn clamp_quadratic(&mut self) {
        for e in self.edges_mut() {
            for (_, _, p) in e.finite_pairs_mut() {
                p.clamp_quadratic();
            }
        }
    }

    /// `edge, parent_symbol, child_symbol, w_dx, w_dy, w_dx2, w_dy2, bias,
    /// anchor_x, anchor_y`; incompatible pairs are listed with bias `-inf`.
    pub fn to_csv(&self, tree: &SkeletonTree) -> String {
        let mut out = String::from(
            "edge,parent_symbol,child_symbol,w_dx,w_dy,w_dx2,w_dy2,bias,anchor_x,anchor_y\n",
        );
        for e in self.edges() {
            let name = format!("{}->{}", tree.part(e.parent).name, tree.part(e.child).name);
            for sp in 0..e.parent_symbols {
                for sc in 0..e.child_symbols {
                    match e.get(sp, sc) {
                        Some(p) => {
                            let _ = writeln!(
                                out,
                                "{name},{sp},{sc},{},{},{},{},{},{},{}",
                                p.weights[0],
                                p.weights[1],
                                p.weights[2],
                                p.weights[3],
                                p.bias,
                                p.anchor[0],
                                p.anchor[1]
                            );
                        }
                        None => {
                            let _ = writeln!(out, "{name},{sp},{sc},,,,,-inf,,");
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn compatibility_score(
    table: &ContextTable,
    edge: usize,
    parent_symbol: usize,
    child_symbol: usize,
    parent_loc: (usize, usize),
    child_loc: (usize, usize),
) -> Result<Compatibility> {
    let unknown = PoseError::UnknownSymbolPair {
        edge,
        parent: parent_symbol,
        child: child_symbol,
    };
    let e = table.edge(edge).ok_or(PoseError::InvalidArgument(format!(
        "no edge ends at part {edge}"
    )))?;
    if parent_symbol >= e.parent_symbols || child_symbol >= e.child_symbols {
        return Err(unknown);
    }
    Ok(match e.get(parent_symbol, child_symbol) {
        Some(p) => Compatibility::Finite(p.score(parent_loc, child_loc)),
        None => Compatibility::Incompatible,
    })
}

/// One part's placement in a training image: symbol index and cell.
pub type Placement = Option<(usize, (usize, usize))>;

/// Builds the context skeleton from per-image symbol assignments
/// (`assignments[image][part]`). A pair is finite when it co-occurs in at
/// least `min_count` images; its anchor is the mean child-minus-parent cell
/// offset over those images.
pub fn build_compatibility(
    assignments: &[Vec<Placement>],
    tree: &SkeletonTree,
    symbol_counts: &[usize],
    min_count: usize,
) -> Result<ContextTable> {
    let mut table = ContextTable::new(tree, symbol_counts);
    for &(p, c) in tree.edges() {
        let (np, nc) = (symbol_counts[p], symbol_counts[c]);
        let mut count = vec![0usize; np * nc];
        let mut sum = vec![[0.0f64; 2]; np * nc];
        for img in assignments {
            if let (Some((sp, lp)), Some((sc, lc))) = (img[p], img[c]) {
                if sp >= np || sc >= nc {
                    return Err(PoseError::UnknownSymbolPair {
                        edge: c,
                        parent: sp,
                        child: sc,
                    });
                }
                let i = sp * nc + sc;
                count[i] += 1;
                sum[i][0] += lc.0 as f64 - lp.0 as f64;
                sum[i][1] += lc.1 as f64 - lp.1 as f64;
            }
        }
        let edge = table.edge_mut(c).expect("edge exists");
        let mut any = false;
        for sp in 0..np {
            for sc in 0..nc {
                let i = sp * nc + sc;
                if count[i] >= min_count.max(1) {
                    any = true;
                    let n = count[i] as f64;
                    edge.set(
                        sp,
                        sc,
                        Some(PairParams {
                            weights: INITIAL_WEIGHTS,
                            bias: 0.0,
                            anchor: [sum[i][0] / n, sum[i][1] / n],
                        }),
                    );
                }
            }
        }
        if !any {
            return Err(PoseError::DisconnectedContext { edge: c });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{BoxSize, Level, PartDef};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn chain(n: usize) -> SkeletonTree {
        let parts = (0..n)
            .map(|id| PartDef {
                id,
                name: format!("p{id}"),
                level: Level::Mid,
                box_size: BoxSize::new(1, 1),
                joints: vec![0],
            })
            .collect();
        SkeletonTree::new(parts, (1..n).map(|c| (c - 1, c)).collect(), 0).unwrap()
    }

    #[test]
    fn deformation_feature_arithmetic() {
        assert_eq!(
            deformation_feature((10, 20), (13, 24), [0.0, 0.0]),
            [3.0, 4.0, 9.0, 16.0]
        );
        assert_eq!(
            deformation_feature((10, 20), (13, 24), [3.0, 4.0]),
            [0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn deformation_feature_matches_componentwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = (rng.random_range(0..50), rng.random_range(0..50));
            let b = (rng.random_range(0..50), rng.random_range(0..50));
            let anchor = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let f = deformation_feature(a, b, anchor);
            let dx = b.0 as f64 - a.0 as f64 - anchor[0];
            let dy = b.1 as f64 - a.1 as f64 - anchor[1];
            assert!((f[0] - dx).abs() < 1e-12 && (f[1] - dy).abs() < 1e-12);
            assert!((f[2] - dx.powi(2)).abs() < 1e-9 && (f[3] - dy.powi(2)).abs() < 1e-9);
        }
    }

    #[test]
    fn incompatible_pair_dominates() {
        let tree = chain(2);
        let table = ContextTable::new(&tree, &[2, 2]);
        for loc in [(0, 0), (5, 7)] {
            assert_eq!(
                compatibility_score(&table, 1, 0, 1, loc, (3, 3)).unwrap(),
                Compatibility::Incompatible
            );
        }
        assert!(matches!(
            compatibility_score(&table, 1, 2, 0, (0, 0), (0, 0)),
            Err(PoseError::UnknownSymbolPair { .. })
        ));
    }

    #[test]
    fn centered_quadratic_scores_zero() {
        let tree = chain(2);
        let mut table = ContextTable::new(&tree, &[1, 1]);
        table.edge_mut(1).unwrap().set(
            0,
            0,
            Some(PairParams {
                weights: [0.0, 0.0, -1.0, -1.0],
                bias: 0.0,
                anchor: [2.0, -1.0],
            }),
        );
        assert_eq!(
            compatibility_score(&table, 1, 0, 0, (4, 4), (6, 3)).unwrap(),
            Compatibility::Finite(0.0)
        );
    }

    #[test]
    fn score_matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = chain(2);
        for _ in 0..100 {
            let pair = PairParams {
                weights: [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-2.0..-0.01),
                    rng.random_range(-2.0..-0.01),
                ],
                bias: rng.random_range(-3.0..3.0),
                anchor: [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)],
            };
            let mut table = ContextTable::new(&tree, &[1, 1]);
            table.edge_mut(1).unwrap().set(0, 0, Some(pair));
            let a = (rng.random_range(0..30), rng.random_range(0..30));
            let b = (rng.random_range(0..30), rng.random_range(0..30));
            let dx = b.0 as f64 - a.0 as f64 - pair.anchor[0];
            let dy = b.1 as f64 - a.1 as f64 - pair.anchor[1];
            let expect = pair.weights[0] * dx
                + pair.weights[1] * dy
                + pair.weights[2] * dx * dx
                + pair.weights[3] * dy * dy
                + pair.bias;
            let got = compatibility_score(&table, 1, 0, 0, a, b)
                .unwrap()
                .finite()
                .unwrap();
            assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn concave_along_any_ray() {
        let pair = PairParams {
            weights: [0.0, 0.0, -0.01, -0.5],
            bias: 1.0,
            anchor: [3.0, -2.0],
        };
        for (ux, uy) in [(1i64, 0i64), (0, 1), (1, 1), (2, -1), (-1, -3)] {
            let mut prev = f64::INFINITY;
            for t in 0..8i64 {
                let c = ((20 + 3 + t * ux) as usize, (20 - 2 + t * uy) as usize);
                let v = pair.score((20, 20), c);
                assert!(v <= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn single_image_gives_one_pair_per_edge() {
        let tree = chain(3);
        let assignments = vec![vec![
            Some((1, (5, 5))),
            Some((0, (7, 4))),
            Some((2, (9, 9))),
        ]];
        let t = build_compatibility(&assignments, &tree, &[2, 2, 3], 1).unwrap();
        for e in t.edges() {
            assert_eq!(e.num_finite(), 1);
        }
        let p = t.edge(1).unwrap().get(1, 0).unwrap();
        assert_eq!(p.anchor, [2.0, -1.0]);
        assert_eq!(p.weights, INITIAL_WEIGHTS);
        assert_eq!(p.bias, 0.0);
        assert!(t.edge(2).unwrap().get(0, 2).is_some());
        assert!(t.edge(2).unwrap().get(1, 2).is_none());
    }

    #[test]
    fn anchors_are_pairwise_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = chain(2);
        let assignments: Vec<Vec<Placement>> = (0..40)
            .map(|_| {
                vec![
                    Some((
                        rng.random_range(0..2),
                        (rng.random_range(0..20), rng.random_range(0..20)),
                    )),
                    Some((
                        rng.random_range(0..3),
                        (rng.random_range(0..20), rng.random_range(0..20)),
                    )),
                ]
            })
            .collect();
        let t = build_compatibility(&assignments, &tree, &[2, 3], 1).unwrap();
        for sp in 0..2 {
            for sc in 0..3 {
                let matching: Vec<_> = assignments
                    .iter()
                    .filter(|a| a[0].unwrap().0 == sp && a[1].unwrap().0 == sc)
                    .collect();
                let entry = t.edge(1).unwrap().get(sp, sc);
                if matching.is_empty() {
                    assert!(entry.is_none());
                    continue;
                }
                let mx = matching
                    .iter()
                    .map(|a| a[1].unwrap().1 .0 as f64 - a[0].unwrap().1 .0 as f64)
                    .sum::<f64>()
                    / matching.len() as f64;
                let my = matching
                    .iter()
                    .map(|a| a[1].unwrap().1 .1 as f64 - a[0].unwrap().1 .1 as f64)
                    .sum::<f64>()
                    / matching.len() as f64;
                let a = entry.unwrap().anchor;
                assert!((a[0] - mx).abs() < 1e-12 && (a[1] - my).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn edge_without_pairs_is_disconnected() {
        let tree = chain(2);
        let assignments = vec![vec![Some((0, (1, 1))), None]];
        assert!(matches!(
            build_compatibility(&assignments, &tree, &[1, 1], 1),
            Err(PoseError::DisconnectedContext { edge: 1 })
        ));
    }
}
