//! Visual symbol discovery for one part: geometric types by k-means over
//! offsets to the parent part, then visual categories inside each type by a
//! cross-validated latent SVM.

pub mod crossval;
pub mod kmeans;
pub mod lsvm;
pub mod svm;

use std::fmt::Write as _;

use log::warn;

use crate::error::{PoseError, Result};
use crate::model::SymbolId;

pub use crossval::{cross_validate, cross_validate_halves, CrossValidation, CvConfig, CvRound};
pub use kmeans::{kmeans, KMeans};
pub use lsvm::{
    argmax_classifier, lsvm_categorize, lsvm_from_labels, lsvm_objective, LatentCategorization,
};
pub use svm::{train_svm, LinearSvm, SvmConfig, SvmSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricGrouping {
    pub part: usize,
    pub reference_part: Option<usize>,
    pub centroids: Vec<[f64; 2]>,
    pub assignments: Vec<usize>,
}

impl GeometricGrouping {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, t: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == t)
            .collect()
    }
}

/// Groups relative offsets (pixels) into `k` geometric types.
pub fn geometric_cluster(offsets: &[[f64; 2]], k: usize, seed: u64) -> Result<GeometricGrouping> {
    let points: Vec<Vec<f64>> = offsets.iter().map(|o| o.to_vec()).collect();
    let km = kmeans(&points, k, seed)?;
    Ok(GeometricGrouping {
        part: 0,
        reference_part: None,
        centroids: km.centroids.iter().map(|c| [c[0], c[1]]).collect(),
        assignments: km.assignments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolLearningConfig {
    pub geometric_types: usize,
    pub symbols_per_type: usize,
    pub cv_rounds: usize,
    pub prune_fraction: f64,
    pub c: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnedSymbol {
    pub id: SymbolId,
    pub classifier: LinearSvm,
    pub survived: bool,
    /// Validation detections in the last round the symbol took part in.
    pub detections: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeReport {
    pub geometric_type: usize,
    pub instances: usize,
    pub k_in: usize,
    /// Per-round (objective, K after pruning).
    pub rounds: Vec<(f64, usize)>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolSet {
    pub part: usize,
    pub grouping: GeometricGrouping,
    /// Surviving and pruned symbols; survivors come first in id order.
    pub symbols: Vec<LearnedSymbol>,
    pub reports: Vec<TypeReport>,
}

impl SymbolSet {
    pub fn survivors(&self) -> impl Iterator<Item = &LearnedSymbol> {
        self.symbols.iter().filter(|s| s.survived)
    }

    pub fn num_survivors(&self) -> usize {
        self.survivors().count()
    }

    /// Index among survivors of the best-scoring symbol of geometric type
    /// `t`, or `None` if the type has no survivor.
    pub fn assign(&self, t: usize, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.survivors().enumerate() {
            if s.id.geometric_type != t {
                continue;
            }
            let v = s.classifier.score(x);
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn report_text(&self, part_name: &str) -> String {
        let mut out = format!(
            "part {} ({part_name}): {} geometric types, {} surviving symbols\n",
            self.part,
            self.grouping.k(),
            self.num_survivors()
        );
        for r in &self.reports {
            let _ = writeln!(
                out,
                "  type {}: {} instances, K_in {}, K_out {}{}",
                r.geometric_type,
                r.instances,
                r.k_in,
                r.rounds.last().map_or(0, |x| x.1),
                if r.fallback {
                    " (single-classifier fallback)"
                } else {
                    ""
                }
            );
            for (i, (obj, k)) in r.rounds.iter().enumerate() {
                let _ = writeln!(out, "    round {}: objective {obj:.6}, K {k}", i + 1);
            }
        }
        for s in &self.symbols {
            let _ = writeln!(
                out,
                "  symbol t{} v{}: {} detections, {}",
                s.id.geometric_type,
                s.id.visual_category,
                s.detections,
                if s.survived { "survived" } else { "pruned" }
            );
        }
        out
    }

    /// CSV rows: `part,geometric_type,round,objective,k_after` then
    /// `part,geometric_type,visual_category,detections,survived`.
    pub fn report_csv(&self) -> (String, String) {
        let mut rounds = String::new();
        for r in &self.reports {
            for (i, (obj, k)) in r.rounds.iter().enumerate() {
                let _ = writeln!(
                    rounds,
                    "{},{},{},{obj},{k}",
                    self.part,
                    r.geometric_type,
                    i + 1
                );
            }
        }
        let mut syms = String::new();
        for s in &self.symbols {
            let _ = writeln!(
                syms,
                "{},{},{},{},{}",
                self.part, s.id.geometric_type, s.id.visual_category, s.detections, s.survived
            );
        }
        (rounds, syms)
    }
}

/// Learns the symbol set of one part from per-instance offsets to the
/// reference part (pixels) and patch features, against a fixed negative set.
pub fn learn_part_symbols(
    part: usize,
    reference_part: Option<usize>,
    offsets: &[[f64; 2]],
    features: &[Vec<f64>],
    negatives: &[Vec<f64>],
    cfg: &SymbolLearningConfig,
) -> Result<SymbolSet> {
    if offsets.len() != features.len() {
        return Err(PoseError::InvalidArgument(
            "offsets and features differ in length".into(),
        ));
    }
    if features.is_empty() {
        return Err(PoseError::InsufficientSamples { needed: 1, got: 0 });
    }
    let k = cfg.geometric_types.clamp(1, offsets.len());
    let mut grouping = geometric_cluster(offsets, k, cfg.seed)?;
    grouping.part = part;
    grouping.reference_part = reference_part;

    let mut survivors = Vec::new();
    let mut pruned = Vec::new();
    let mut reports = Vec::new();
    for t in 0..grouping.k() {
        let members = grouping.members(t);
        if members.is_empty() {
            continue;
        }
        let inst: Vec<Vec<f64>> = members.iter().map(|&i| features[i].clone()).collect();
        let k_in = cfg.symbols_per_type.min(inst.len() / 2);
        let type_seed = cfg.seed.wrapping_add(1 + t as u64);
        let mut report = TypeReport {
            geometric_type: t,
            instances: inst.len(),
            k_in: k_in.max(1),
            rounds: Vec::new(),
            fallback: false,
        };
        let cv = if k_in >= 1 {
            let cv_cfg = CvConfig {
                k_in,
                rounds: cfg.cv_rounds,
                prune_fraction: cfg.prune_fraction,
                c: cfg.c,
                seed: type_seed,
            };
            match cross_validate(&inst, negatives, &cv_cfg) {
                Ok(cv) => Some(cv),
                Err(PoseError::DegenerateSymbolSet) => {
                    warn!(
                        "part {part} type {t}: every classifier pruned, falling back to one symbol"
                    );
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        match cv {
            Some(cv) => {
                report.rounds = cv.rounds.iter().map(|r| (r.objective, r.k_after)).collect();
                for r in &cv.rounds {
                    for (id, &n) in r.ids_before.iter().zip(&r.detections) {
                        if !cv.ids.contains(id)
                            && !pruned.iter().any(|s: &LearnedSymbol| {
                                s.id.geometric_type == t && s.id.visual_category == *id
                            })
                        {
                            pruned.push(LearnedSymbol {
                                id: SymbolId {
                                    part,
                                    geometric_type: t,
                                    visual_category: *id,
                                },
                                classifier: LinearSvm::zeros(0),
                                survived: false,
                                detections: n,
                            });
                        }
                    }
                }
                for ((w, &id), &n) in cv.classifiers.into_iter().zip(&cv.ids).zip(&cv.detections) {
                    survivors.push(LearnedSymbol {
                        id: SymbolId {
                            part,
                            geometric_type: t,
                            visual_category: id,
                        },
                        classifier: w,
                        survived: true,
                        detections: n,
                    });
                }
            }
            None => {
                report.fallback = k_in >= 1;
                let cat = lsvm_categorize(&inst, negatives, 1, cfg.c, type_seed)?;
                report.rounds = vec![(cat.objective_trace.last().copied().unwrap_or(0.0), 1)];
                survivors.push(LearnedSymbol {
                    id: SymbolId {
                        part,
                        geometric_type: t,
                        visual_category: 0,
                    },
                    classifier: cat.classifiers.into_iter().next().expect("one category"),
                    survived: true,
                    detections: inst.len(),
                });
            }
        }
        reports.push(report);
    }
    survivors.extend(pruned);
    Ok(SymbolSet {
        part,
        grouping,
        symbols: survivors,
        reports,
    })
}
