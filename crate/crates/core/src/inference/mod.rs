//! Exact max-sum inference over the part tree.
//!
//! Each node's score map `m_j(p, s)` is its appearance response plus, for every
//! child, the best child placement and symbol under the pairwise context.
//! The inner maximization over child placements is a 2D distance transform
//! per (parent symbol, child symbol) pair; the maximization over child
//! symbols is an elementwise max of those transforms. Incompatible pairs are
//! simply never visited.

pub mod dt;

use rayon::prelude::*;

use crate::error::{PoseError, Result};
use crate::features::{box_origin, correlate_filter, FeatureMap};
use crate::grid::Grid;
use crate::model::{ModelParams, ParseResult, PartParse};
use crate::skeleton::SkeletonTree;

pub use dt::{
    distance_transform_1d, distance_transform_2d, distance_transform_2d_into, DistanceTransform1d,
    DistanceTransform2d,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackPointer {
    pub symbol: u32,
    pub cell: u32,
}

/// Score maps for every (part, symbol) and back-pointers for every edge.
/// `None` marks an unreachable symbol.
#[derive(Debug, Clone)]
pub struct ScoreMaps {
    pub width: usize,
    pub height: usize,
    pub unary: Vec<Vec<Grid>>,
    pub subtree: Vec<Vec<Option<Grid>>>,
    /// `pointers[child][parent_symbol][parent_cell]`.
    pub pointers: Vec<Vec<Option<Vec<BackPointer>>>>,
}

impl ScoreMaps {
    /// Best root score per cell and the symbol achieving it (lowest index on
    /// ties).
    pub fn root_best(&self, root: usize) -> Vec<Option<(usize, f64)>> {
        let n = self.width * self.height;
        let mut best: Vec<Option<(usize, f64)>> = vec![None; n];
        for (s, map) in self.subtree[root].iter().enumerate() {
            let Some(map) = map else { continue };
            for (i, &v) in map.data.iter().enumerate() {
                if best[i].is_none_or(|(_, b)| v > b) {
                    best[i] = Some((s, v));
                }
            }
        }
        best
    }
}

pub fn unary_maps(
    features: &FeatureMap,
    params: &ModelParams,
    tree: &SkeletonTree,
) -> Result<Vec<Vec<Grid>>> {
    let jobs: Vec<(usize, usize)> = tree
        .parts()
        .iter()
        .flat_map(|p| (0..params.symbols[p.id].len()).map(move |s| (p.id, s)))
        .collect();
    let maps: Vec<Result<Grid>> = jobs
        .par_iter()
        .map(|&(p, s)| {
            correlate_filter(
                features,
                &params.symbols[p][s].filter,
                tree.part(p).box_size,
            )
        })
        .collect();
    let mut out: Vec<Vec<Grid>> = vec![Vec::new(); tree.len()];
    for ((p, _), m) in jobs.into_iter().zip(maps) {
        out[p].push(m?);
    }
    Ok(out)
}

/// Leaf-to-root sweep producing every node's score maps.
pub fn pass_messages(
    features: &FeatureMap,
    params: &ModelParams,
    tree: &SkeletonTree,
) -> Result<ScoreMaps> {
    params.validate(tree)?;
    let (w, h) = (features.cells_wide(), features.cells_high());
    let unary = unary_maps(features, params, tree)?;
    let mut subtree: Vec<Vec<Option<Grid>>> = vec![Vec::new(); tree.len()];
    let mut pointers: Vec<Vec<Option<Vec<BackPointer>>>> = vec![Vec::new(); tree.len()];

    for j in tree.postorder() {
        let mut maps: Vec<Option<Grid>> = unary[j].iter().cloned().map(Some).collect();
        if j == tree.root() {
            for m in maps.iter_mut().flatten() {
                m.add_scalar(params.root_bias);
            }
        }
        for &c in tree.children(j) {
            let edge = params.context.edge(c).expect("validated");
            let child_maps = &subtree[c];
            let messages: Vec<Result<Option<Message>>> = (0..maps.len())
                .into_par_iter()
                .map(|sp| {
                    if maps[sp].is_none() {
                        return Ok(None);
                    }
                    child_message(edge, sp, child_maps)
                })
                .collect();
            let mut ptrs = Vec::with_capacity(maps.len());
            for (sp, msg) in messages.into_iter().enumerate() {
                match msg? {
                    Some((grid, bp)) => {
                        if let Some(m) = maps[sp].as_mut() {
                            m.add_assign(&grid);
                        }
                        ptrs.push(Some(bp));
                    }
                    None => {
                        maps[sp] = None;
                        ptrs.push(None);
                    }
                }
            }
            pointers[c] = ptrs;
        }
        if maps.iter().all(Option::is_none) {
            return Err(PoseError::InfeasibleModel { part: j });
        }
        subtree[j] = maps;
    }
    Ok(ScoreMaps {
        width: w,
        height: h,
        unary,
        subtree,
        pointers,
    })
}

/// Child-to-parent message: scores over parent cells and where each came from.
type Message = (Grid, Vec<BackPointer>);

/// Message from a child to one parent symbol: max over compatible child
/// symbols of the distance-transformed child maps plus the pair bias.
fn child_message(
    edge: &crate::context::EdgeTable,
    parent_symbol: usize,
    child_maps: &[Option<Grid>],
) -> Result<Option<Message>> {
    let mut best: Option<Message> = None;
    let mut t = DistanceTransform2d {
        values: Grid::new(0, 0, Vec::new()),
        sources: Vec::new(),
    };
    for (sc, child) in child_maps.iter().enumerate() {
        let (Some(child), Some(pair)) = (child, edge.get(parent_symbol, sc)) else {
            continue;
        };
        // D = w . [d, d^2] + b with d = (child - parent) - anchor. In terms of
        // the parent location the offset flips sign, so the linear weights
        // and the anchor are negated.
        let weights = [
            -pair.weights[0],
            -pair.weights[1],
            pair.weights[2],
            pair.weights[3],
        ];
        let anchor = [-pair.anchor[0], -pair.anchor[1]];
        distance_transform_2d_into(child, weights, anchor, &mut t)?;
        match best.as_mut() {
            None => {
                let mut values = t.values.clone();
                values.add_scalar(pair.bias);
                let bp = t
                    .sources
                    .iter()
                    .map(|&cell| BackPointer {
                        symbol: sc as u32,
                        cell: cell as u32,
                    })
                    .collect();
                best = Some((values, bp));
            }
            Some((values, bp)) => {
                let incoming = t.values.data.iter().zip(&t.sources);
                for ((best, ptr), (&v, &cell)) in
                    values.data.iter_mut().zip(bp.iter_mut()).zip(incoming)
                {
                    let v = v + pair.bias;
                    if v > *best {
                        *best = v;
                        *ptr = BackPointer {
                            symbol: sc as u32,
                            cell: cell as u32,
                        };
                    }
                }
            }
        }
    }
    Ok(best)
}

/// Follows back-pointers from a root placement to fill every part.
pub fn backtrack(
    maps: &ScoreMaps,
    params: &ModelParams,
    tree: &SkeletonTree,
    root_symbol: usize,
    root_cell: usize,
) -> ParseResult {
    let w = maps.width;
    let mut placement = vec![(0usize, 0usize); tree.len()];
    placement[tree.root()] = (root_symbol, root_cell);
    for &j in tree.preorder() {
        let (s, cell) = placement[j];
        for &c in tree.children(j) {
            let bp = maps.pointers[c][s]
                .as_ref()
                .expect("reachable parent symbol")[cell];
            placement[c] = (bp.symbol as usize, bp.cell as usize);
        }
    }
    let mut parts = Vec::with_capacity(tree.len());
    for part in tree.parts() {
        let (s, cell) = placement[part.id];
        let location = (cell % w, cell / w);
        let mut unary_score = maps.unary[part.id][s].data[cell];
        if part.id == tree.root() {
            unary_score += params.root_bias;
        }
        let pairwise_score = match tree.parent(part.id) {
            None => 0.0,
            Some(p) => {
                let (sp, pcell) = placement[p];
                let pair = params
                    .context
                    .edge(part.id)
                    .and_then(|e| e.get(sp, s))
                    .expect("back-pointers only follow compatible pairs");
                pair.score((pcell % w, pcell / w), location)
            }
        };
        parts.push(PartParse {
            part: part.id,
            location,
            symbol: s,
            symbol_id: params.symbols[part.id][s].id,
            unary_score,
            pairwise_score,
        });
    }
    let total_score = maps.subtree[tree.root()][root_symbol]
        .as_ref()
        .expect("reachable root symbol")
        .data[root_cell];
    ParseResult { parts, total_score }
}

/// Highest-scoring configuration. Ties go to the lowest root cell index,
/// then the lowest root symbol.
pub fn parse(
    features: &FeatureMap,
    params: &ModelParams,
    tree: &SkeletonTree,
) -> Result<ParseResult> {
    let maps = pass_messages(features, params, tree)?;
    let best = maps.root_best(tree.root());
    let mut arg: Option<(usize, usize, f64)> = None;
    for (cell, b) in best.iter().enumerate() {
        if let Some((s, v)) = *b {
            if arg.is_none_or(|(_, _, bv)| v > bv) {
                arg = Some((cell, s, v));
            }
        }
    }
    let (cell, s, _) = arg.ok_or(PoseError::InfeasibleModel { part: tree.root() })?;
    Ok(backtrack(&maps, params, tree, s, cell))
}

fn root_box(result: &ParseResult, tree: &SkeletonTree) -> (isize, isize, isize, isize) {
    let root = tree.root();
    let size = tree.part(root).box_size;
    let (x0, y0) = box_origin(result.parts[root].location, size);
    (x0, y0, x0 + size.width as isize, y0 + size.height as isize)
}

fn iou(a: (isize, isize, isize, isize), b: (isize, isize, isize, isize)) -> f64 {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0);
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0);
    let inter = (iw * ih) as f64;
    let area = |r: (isize, isize, isize, isize)| ((r.2 - r.0) * (r.3 - r.1)) as f64;
    inter / (area(a) + area(b) - inter)
}

/// Every local maximum of the root score above `threshold`, backtracked,
/// with overlapping root boxes (IoU > 0.5) suppressed in favour of the
/// higher score.
pub fn detect_all(
    features: &FeatureMap,
    params: &ModelParams,
    tree: &SkeletonTree,
    threshold: f64,
) -> Result<Vec<ParseResult>> {
    let maps = pass_messages(features, params, tree)?;
    let best = maps.root_best(tree.root());
    let (w, h) = (maps.width, maps.height);
    let mut peaks = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let Some((s, v)) = best[y * w + x] else {
                continue;
            };
            if v <= threshold {
                continue;
            }
            let mut is_peak = true;
            'nb: for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    if let Some((_, nv)) = best[ny * w + nx] {
                        if nv > v {
                            is_peak = false;
                            break 'nb;
                        }
                    }
                }
            }
            if is_peak {
                peaks.push((y * w + x, s, v));
            }
        }
    }
    peaks.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
    let mut kept: Vec<ParseResult> = Vec::new();
    for (cell, s, _) in peaks {
        let det = backtrack(&maps, params, tree, s, cell);
        let bx = root_box(&det, tree);
        if kept.iter().all(|k| iou(root_box(k, tree), bx) <= 0.5) {
            kept.push(det);
        }
    }
    Ok(kept)
}
