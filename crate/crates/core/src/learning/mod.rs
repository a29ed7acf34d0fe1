//! Joint learning of filters, deformation weights and biases.
//!
//! Positives contribute one margin constraint each, built from their
//! annotated configuration. Negatives are mined: every epoch each negative
//! image is parsed with the current parameters and its best configuration
//! becomes a new constraint if it violates the margin. The cache is then
//! re-solved with [`qp::QpState::solve`].

pub mod layout;
pub mod qp;

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use crate::error::{PoseError, Result};
use crate::features::FeatureMap;
use crate::inference::parse;
use crate::model::ModelParams;
use crate::skeleton::SkeletonTree;

pub use layout::{feature_vector, ParamLayout, SparseFeature};
pub use qp::{Constraint, MarginAudit, QpConfig, QpSolve, QpState};

/// Margin above which a cached negative counts as inactive.
pub const EVICTION_MARGIN: f64 = 1.1;
/// Consecutive inactive epochs before a cached negative is dropped.
pub const EVICTION_PATIENCE: usize = 2;

/// A violated negative: its constraint group, feature and configuration.
type MinedNegative = (usize, SparseFeature, Vec<(usize, (usize, usize))>);

#[derive(Debug, Clone, PartialEq)]
pub struct PositiveExample {
    pub features: FeatureMap,
    /// `(symbol, cell)` per part.
    pub config: Vec<(usize, (usize, usize))>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub c: f64,
    pub epochs: usize,
    pub qp: QpConfig,
    /// Mine the first round of negatives with the initial parameters
    /// rather than with all-zero filters.
    pub init_from_symbols: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 0.002,
            epochs: 10,
            qp: QpConfig::default(),
            init_from_symbols: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub new_negatives: usize,
    pub cached: usize,
    pub evicted: usize,
    /// Primal over the enlarged cache before re-solving.
    pub objective_before: f64,
    pub objective: f64,
    pub dual: f64,
    pub passes: usize,
    pub seconds: f64,
    /// Objective rose by more than 1e-6 over the re-solve.
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub layout: ParamLayout,
    pub qp: QpState,
    pub report: Vec<EpochReport>,
}

impl TrainOutcome {
    pub fn report_csv(&self) -> String {
        let mut out = String::from(
            "epoch,cached_constraints,objective,violated_negatives,wall_seconds,objective_before,dual,passes,evicted,flagged\n",
        );
        for r in &self.report {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.3},{},{},{},{},{}",
                r.epoch,
                r.cached,
                r.objective,
                r.new_negatives,
                r.seconds,
                r.objective_before,
                r.dual,
                r.passes,
                r.evicted,
                r.flagged
            );
        }
        out
    }
}

/// Learns all parameters of `init` (whose context skeleton and anchors stay
/// fixed) from annotated positives and person-free negatives.
pub fn train(
    positives: &[PositiveExample],
    negatives: &[FeatureMap],
    init: &ModelParams,
    tree: &SkeletonTree,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if negatives.is_empty() {
        return Err(PoseError::InsufficientSamples { needed: 1, got: 0 });
    }
    let layout = ParamLayout::new(init, tree)?;
    let mut qp = QpState::new(layout.len(), layout.quadratic_indices(), cfg.c, cfg.qp.seed);
    let mut feasible = 0;
    for (n, pos) in positives.iter().enumerate() {
        match feature_vector(&pos.features, &pos.config, init, &layout, tree) {
            Ok(phi) => {
                qp.add(phi, 1.0, n, pos.config.clone(), false);
                feasible += 1;
            }
            Err(PoseError::InfeasibleConfiguration { edge }) => {
                warn!("positive {n} skipped: incompatible symbol pair on edge {edge}");
            }
            Err(e) => return Err(e),
        }
    }
    if feasible == 0 {
        return Err(PoseError::NoFeasiblePositive);
    }
    let neg_group = positives.len();

    let mut current = if cfg.init_from_symbols {
        let mut p = init.clone();
        p.context.clamp_quadratic();
        p
    } else {
        layout.unflatten(qp.theta(), init)?
    };
    let mut report = Vec::new();
    for epoch in 1..=cfg.epochs.max(1) {
        let start = Instant::now();
        let mined: Vec<Result<Option<MinedNegative>>> = negatives
            .par_iter()
            .enumerate()
            .map(|(n, f)| {
                let best = parse(f, &current, tree)?;
                let group = neg_group + n;
                let config = best.config();
                // the first epoch runs before any solve, so every best
                // configuration is taken
                if epoch > 1 && best.total_score <= -1.0 + qp.slack(group) + 1e-9 {
                    return Ok(None);
                }
                if qp.contains(group, &config) {
                    return Ok(None);
                }
                let phi = feature_vector(f, &config, init, &layout, tree)?;
                Ok(Some((group, phi, config)))
            })
            .collect();
        let mut new_negatives = 0;
        for m in mined {
            if let Some((group, phi, config)) = m? {
                qp.add(phi, -1.0, group, config, true);
                new_negatives += 1;
            }
        }
        if epoch > 1 && new_negatives == 0 {
            break;
        }
        let objective_before = qp.primal();
        let solve = qp.solve_below(&cfg.qp, objective_before);
        let evicted = qp.evict(EVICTION_MARGIN, EVICTION_PATIENCE);
        current = layout.unflatten(qp.theta(), init)?;
        let flagged = solve.primal > objective_before + 1e-6;
        if flagged {
            warn!(
                "epoch {epoch}: objective rose from {objective_before} to {}",
                solve.primal
            );
        }
        info!(
            "epoch {epoch}: {new_negatives} new negatives, {} cached, objective {:.6}",
            qp.len(),
            solve.primal
        );
        report.push(EpochReport {
            epoch,
            new_negatives,
            cached: qp.len(),
            evicted,
            objective_before,
            objective: solve.primal,
            dual: solve.dual,
            passes: solve.passes,
            seconds: start.elapsed().as_secs_f64(),
            flagged,
        });
    }
    Ok(TrainOutcome {
        params: current,
        layout,
        qp,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{ContextTable, PairParams, INITIAL_WEIGHTS, MAX_QUADRATIC};
    use crate::model::{score_configuration, Symbol, SymbolId};
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

    fn model(
        tree: &SkeletonTree,
        syms: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
        holes: bool,
    ) -> ModelParams {
        let symbols = (0..tree.len())
            .map(|p| {
                (0..syms)
                    .map(|v| Symbol {
                        id: SymbolId {
                            part: p,
                            geometric_type: 0,
                            visual_category: v,
                        },
                        filter: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    })
                    .collect()
            })
            .collect();
        let mut context = ContextTable::new(tree, &vec![syms; tree.len()]);
        for e in context.edges_mut() {
            for a in 0..syms {
                for b in 0..syms {
                    if holes && a != b && a + b != 1 {
                        continue;
                    }
                    e.set(
                        a,
                        b,
                        Some(PairParams {
                            weights: [
                                rng.random_range(-0.5..0.5),
                                rng.random_range(-0.5..0.5),
                                rng.random_range(-1.0..-0.01),
                                rng.random_range(-1.0..-0.01),
                            ],
                            bias: rng.random_range(-1.0..1.0),
                            anchor: [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                        }),
                    );
                }
            }
        }
        ModelParams {
            cell_size: 4,
            feature_dim: dim,
            symbols,
            context,
            root_bias: rng.random_range(-1.0..1.0),
        }
    }

    fn random_map(w: usize, h: usize, dim: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        FeatureMap::new(
            w,
            h,
            dim,
            4,
            (0..w * h * dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn flatten_round_trip_and_structural_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tree = chain(4);
        let params = model(&tree, 3, 2, &mut rng, true);
        let layout = ParamLayout::new(&params, &tree).unwrap();
        let finite: usize = params.context.edges().map(|e| e.num_finite()).sum();
        assert!(finite < 3 * 9);
        assert_eq!(layout.len(), 1 + 4 * 3 * 2 + 5 * finite);
        assert_eq!(layout.quadratic_indices().len(), 2 * finite);
        let theta = layout.flatten(&params);
        assert_eq!(layout.unflatten(&theta, &params).unwrap(), params);
        for e in params.context.edges() {
            for sp in 0..3 {
                for sc in 0..3 {
                    assert_eq!(
                        layout.pair_offset(e.child, sp, sc).is_some(),
                        e.get(sp, sc).is_some()
                    );
                }
            }
        }
    }

    #[test]
    fn inner_product_equals_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tree = chain(3);
        let params = model(&tree, 2, 3, &mut rng, false);
        let layout = ParamLayout::new(&params, &tree).unwrap();
        let theta = layout.flatten(&params);
        let map = random_map(6, 5, 3, &mut rng);
        for _ in 0..50 {
            let config: Vec<_> = (0..3)
                .map(|_| {
                    (
                        rng.random_range(0..2),
                        (rng.random_range(0..6), rng.random_range(0..5)),
                    )
                })
                .collect();
            let phi = feature_vector(&map, &config, &params, &layout, &tree).unwrap();
            let total = score_configuration(&config, &params, &map, &tree)
                .unwrap()
                .total;
            assert!((phi.dot(&theta) - total).abs() < 1e-9);
            assert_eq!(phi.dot(&vec![0.0; layout.len()]), 0.0);
        }
    }

    #[test]
    fn incompatible_configuration_has_no_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tree = chain(2);
        let params = model(&tree, 3, 1, &mut rng, true);
        let layout = ParamLayout::new(&params, &tree).unwrap();
        let map = random_map(3, 3, 1, &mut rng);
        let r = feature_vector(&map, &[(0, (0, 0)), (2, (1, 1))], &params, &layout, &tree);
        assert!(matches!(
            r,
            Err(PoseError::InfeasibleConfiguration { edge: 1 })
        ));
    }

    #[test]
    fn zero_c_leaves_only_clamped_quadratics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tree = chain(2);
        let mut params = model(&tree, 1, 2, &mut rng, false);
        params
            .context
            .edge_mut(1)
            .unwrap()
            .get_mut(0, 0)
            .unwrap()
            .weights = INITIAL_WEIGHTS;
        let pos = PositiveExample {
            features: random_map(4, 4, 2, &mut rng),
            config: vec![(0, (1, 1)), (0, (2, 1))],
        };
        let negs = vec![random_map(4, 4, 2, &mut rng)];
        let cfg = TrainConfig {
            c: 0.0,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&[pos], &negs, &params, &tree, &cfg).unwrap();
        let quad = out.layout.quadratic_indices();
        for (k, &t) in out.qp.theta().iter().enumerate() {
            let expect = if quad.contains(&k) {
                MAX_QUADRATIC
            } else {
                0.0
            };
            assert_eq!(t, expect);
        }
    }

    #[test]
    fn no_feasible_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tree = chain(2);
        let params = model(&tree, 3, 1, &mut rng, true);
        let pos = PositiveExample {
            features: random_map(3, 3, 1, &mut rng),
            config: vec![(0, (0, 0)), (2, (0, 0))],
        };
        let r = train(
            &[pos],
            &[random_map(3, 3, 1, &mut rng)],
            &params,
            &tree,
            &TrainConfig::default(),
        );
        assert!(matches!(r, Err(PoseError::NoFeasiblePositive)));
    }

    #[test]
    fn objective_never_rises_over_a_resolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tree = chain(3);
        let params = model(&tree, 2, 3, &mut rng, false);
        let positives: Vec<PositiveExample> = (0..4)
            .map(|_| PositiveExample {
                features: random_map(6, 6, 3, &mut rng),
                config: (0..3)
                    .map(|_| {
                        (
                            rng.random_range(0..2),
                            (rng.random_range(0..6), rng.random_range(0..6)),
                        )
                    })
                    .collect(),
            })
            .collect();
        let negs: Vec<FeatureMap> = (0..6).map(|_| random_map(6, 6, 3, &mut rng)).collect();
        let cfg = TrainConfig {
            c: 1.0,
            epochs: 6,
            ..TrainConfig::default()
        };
        let out = train(&positives, &negs, &params, &tree, &cfg).unwrap();
        assert!(!out.report.is_empty());
        for r in &out.report {
            assert!(!r.flagged, "{r:?}");
            assert!(r.objective - r.dual <= 1e-3 + 1e-12);
        }
        let audit = out.qp.margin_audit(1e-3);
        assert_eq!(audit.violations, 0);
        assert!(out.report_csv().starts_with("epoch,cached_constraints"));
    }
}
