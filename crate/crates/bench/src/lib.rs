//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pose_core::data::synth::render_sample;
use pose_core::{
    extract_features, ContextTable, FeatureMap, Grid, ModelParams, PairParams, SkeletonTree,
    Symbol, SymbolId, SynthConfig, FEATURE_DIM,
};

/// Square grid of uniform scores in [-1, 1).
pub fn random_grid(side: usize, seed: u64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::new(
        side,
        side,
        (0..side * side)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
}

/// Features of one rendered synthetic figure.
pub fn synthetic_features(seed: u64) -> FeatureMap {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let sample = render_sample(&cfg, 0).expect("default synth config renders");
    extract_features(&sample.image, 4).expect("rendered image has cells")
}

/// Random filters with `symbols` symbols per part; every symbol pair is
/// compatible, so message passing does the full amount of work.
pub fn random_model(tree: &SkeletonTree, symbols: usize, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filters = tree
        .parts()
        .iter()
        .map(|p| {
            (0..symbols)
                .map(|s| Symbol {
                    id: SymbolId {
                        part: p.id,
                        geometric_type: s,
                        visual_category: 0,
                    },
                    filter: (0..p.box_size.area() * FEATURE_DIM)
                        .map(|_| rng.random_range(-0.1..0.1))
                        .collect(),
                })
                .collect()
        })
        .collect();
    let mut context = ContextTable::new(tree, &vec![symbols; tree.len()]);
    for edge in context.edges_mut() {
        for sp in 0..edge.parent_symbols {
            for sc in 0..edge.child_symbols {
                edge.set(
                    sp,
                    sc,
                    Some(PairParams {
                        weights: [0.0, 0.0, -0.05, -0.05],
                        bias: rng.random_range(-0.1..0.1),
                        anchor: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
                    }),
                );
            }
        }
    }
    ModelParams {
        cell_size: 4,
        feature_dim: FEATURE_DIM,
        symbols: filters,
        context,
        root_bias: 0.0,
    }
}
