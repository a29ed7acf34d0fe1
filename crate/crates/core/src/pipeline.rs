//! End-to-end training and parsing on annotated images.
//!
//! Training runs in stages: part locations from joints, geometric types per
//! part (offsets to the parent part), visual symbols within each type,
//! symbol assignment of every training instance, the compatibility table
//! from co-occurrences, and finally joint max-margin training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{build_compatibility, Placement};
use crate::error::{PoseError, Result};
use crate::evaluation::{joints_from_parse, PredictedPose};
use crate::features::{crop_patch_feature, extract_features, FeatureMap, FEATURE_DIM};
use crate::image::ImageBuffer;
use crate::inference::{detect_all, parse};
use crate::learning::{train, PositiveExample, TrainConfig, TrainOutcome};
use crate::model::{ModelParams, ParseResult, Symbol};
use crate::model_io::Model;
use crate::skeleton::{derive_part_instances, Annotation, Level, SkeletonTree};
use crate::symbols::{learn_part_symbols, SymbolLearningConfig, SymbolSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub cell_size: usize,
    /// Geometric types for high- and mid-level parts.
    pub k_large: usize,
    pub k_small: usize,
    /// Visual symbols per geometric type.
    pub sym_large: usize,
    pub sym_small: usize,
    pub cv_rounds: usize,
    pub prune_fraction: f64,
    /// Slack weight of the joint training problem.
    pub c: f64,
    /// Slack weight of the per-type symbol classifiers.
    pub symbol_c: f64,
    /// Random negative patches per negative image for symbol learning.
    pub negative_patches: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            cell_size: 4,
            k_large: 8,
            k_small: 6,
            sym_large: 2,
            sym_small: 4,
            cv_rounds: 10,
            prune_fraction: 0.05,
            c: 0.002,
            symbol_c: 0.01,
            negative_patches: 20,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

pub struct TrainedPipeline {
    pub model: Model,
    pub symbol_sets: Vec<SymbolSet>,
    pub outcome: TrainOutcome,
    /// Training images used (all parts visible).
    pub used: usize,
}

impl TrainedPipeline {
    /// Per-part symbol learning summary.
    pub fn symbol_report(&self) -> String {
        self.symbol_sets
            .iter()
            .map(|s| s.report_text(&self.model.tree.part(s.part).name))
            .collect()
    }
}

/// Caps the global worker pool at `POSE_THREADS` when set. Calling it more
/// than once, or after the pool started, leaves the pool as it is.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("POSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        PoseError::InvalidArgument(format!("POSE_THREADS={v:?} is not a positive integer"))
    })?;
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn features_of(images: &[&ImageBuffer], cell_size: usize) -> Result<Vec<FeatureMap>> {
    images
        .par_iter()
        .map(|im| extract_features(im, cell_size))
        .collect()
}

/// Trains a model on `(image, annotation)` pairs at the working scale.
/// Images with an invisible joint are left out.
pub fn train_pipeline(
    positives: &[(ImageBuffer, Annotation)],
    negatives: &[ImageBuffer],
    tree: &SkeletonTree,
    cfg: &PipelineConfig,
) -> Result<TrainedPipeline> {
    if negatives.is_empty() {
        return Err(PoseError::InsufficientSamples { needed: 1, got: 0 });
    }
    let located: Vec<(&ImageBuffer, Vec<[f64; 2]>)> = positives
        .iter()
        .filter_map(|(im, a)| {
            let parts: Option<Vec<_>> = derive_part_instances(a, tree).into_iter().collect();
            if parts.is_none() {
                log::warn!("{}: invisible joint, left out of training", a.image_id);
            }
            parts.map(|p| (im, p))
        })
        .collect();
    if located.is_empty() {
        return Err(PoseError::NoFeasiblePositive);
    }
    let n = located.len();
    let pos_maps = features_of(
        &located.iter().map(|(im, _)| *im).collect::<Vec<_>>(),
        cfg.cell_size,
    )?;
    let neg_maps = features_of(&negatives.iter().collect::<Vec<_>>(), cfg.cell_size)?;
    let cells: Vec<Vec<(usize, usize)>> = located
        .iter()
        .zip(&pos_maps)
        .map(|((_, pts), map)| pts.iter().map(|&p| map.pixel_to_cell(p)).collect())
        .collect();
    log::info!("{n} training images, {} negatives", negatives.len());

    // Symbols, part by part.
    let symbol_sets: Vec<SymbolSet> = tree
        .parts()
        .par_iter()
        .map(|part| {
            let large = part.level.is_large();
            let parent = tree.parent(part.id);
            let offsets: Vec<[f64; 2]> = located
                .iter()
                .map(|(_, pts)| match parent {
                    Some(p) => [pts[part.id][0] - pts[p][0], pts[part.id][1] - pts[p][1]],
                    None => [0.0, 0.0],
                })
                .collect();
            let feats: Vec<Vec<f64>> = (0..n)
                .map(|i| crop_patch_feature(&pos_maps[i], cells[i][part.id], part.box_size))
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4e50_0000);
            rng.set_stream(part.id as u64);
            let negs: Vec<Vec<f64>> = neg_maps
                .iter()
                .flat_map(|m| {
                    (0..cfg.negative_patches)
                        .map(|_| {
                            let loc = (
                                rng.random_range(0..m.cells_wide()),
                                rng.random_range(0..m.cells_high()),
                            );
                            crop_patch_feature(m, loc, part.box_size)
                        })
                        .collect::<Vec<_>>()
                })
                .collect();
            let scfg = SymbolLearningConfig {
                // the root has no reference part, so a single type
                geometric_types: if parent.is_none() {
                    1
                } else if large {
                    cfg.k_large
                } else {
                    cfg.k_small
                },
                symbols_per_type: if large { cfg.sym_large } else { cfg.sym_small },
                cv_rounds: cfg.cv_rounds,
                prune_fraction: cfg.prune_fraction,
                c: cfg.symbol_c,
                seed: cfg.seed.wrapping_add(1000 * part.id as u64),
            };
            learn_part_symbols(part.id, parent, &offsets, &feats, &negs, &scfg)
        })
        .collect::<Result<_>>()?;

    // Initial parameters from the learned classifiers.
    let symbols: Vec<Vec<Symbol>> = symbol_sets
        .iter()
        .map(|set| {
            set.survivors()
                .map(|s| Symbol {
                    id: s.id,
                    filter: s.classifier.weights.clone(),
                })
                .collect()
        })
        .collect();
    let counts: Vec<usize> = symbols.iter().map(Vec::len).collect();
    let assignments: Vec<Vec<Placement>> = (0..n)
        .map(|i| {
            tree.parts()
                .iter()
                .map(|part| {
                    let set = &symbol_sets[part.id];
                    let x = crop_patch_feature(&pos_maps[i], cells[i][part.id], part.box_size);
                    let t = set.grouping.assignments[i];
                    let s = set.assign(t, &x).or_else(|| best_survivor(set, &x));
                    s.map(|s| (s, cells[i][part.id]))
                })
                .collect()
        })
        .collect();
    let context = build_compatibility(&assignments, tree, &counts, 1)?;
    let init = ModelParams {
        cell_size: cfg.cell_size,
        feature_dim: FEATURE_DIM,
        symbols,
        context,
        root_bias: 0.0,
    };
    let examples: Vec<PositiveExample> = pos_maps
        .into_iter()
        .zip(&assignments)
        .map(|(features, a)| PositiveExample {
            features,
            config: a
                .iter()
                .map(|p| p.expect("every part has a survivor"))
                .collect(),
        })
        .collect();
    let tcfg = TrainConfig {
        c: cfg.c,
        ..cfg.train
    };
    let outcome = train(&examples, &neg_maps, &init, tree, &tcfg)?;
    let model = Model::new(tree.clone(), outcome.params.clone())?;
    Ok(TrainedPipeline {
        model,
        symbol_sets,
        outcome,
        used: n,
    })
}

fn best_survivor(set: &SymbolSet, x: &[f64]) -> Option<usize> {
    set.survivors()
        .enumerate()
        .map(|(i, s)| (i, s.classifier.score(x)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRecord {
    pub part: String,
    /// Pixel centre of the part's cell.
    pub x: f64,
    pub y: f64,
    pub geometric_type: usize,
    pub visual_category: usize,
    pub score: f64,
}

/// One line of the parse output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParseRecord {
    pub image_id: String,
    /// 0 for the best detection of the image.
    #[serde(default)]
    pub rank: usize,
    pub parts: Vec<PartRecord>,
    pub joints: Vec<[f64; 2]>,
    pub total_score: f64,
}

impl ParseRecord {
    pub fn from_parse(image_id: &str, rank: usize, r: &ParseResult, model: &Model) -> Result<Self> {
        let cs = model.params.cell_size;
        Ok(ParseRecord {
            image_id: image_id.to_string(),
            rank,
            parts: r
                .parts
                .iter()
                .map(|p| {
                    let c = crate::features::cell_center(p.location, cs);
                    PartRecord {
                        part: model.tree.part(p.part).name.clone(),
                        x: c[0],
                        y: c[1],
                        geometric_type: p.symbol_id.geometric_type,
                        visual_category: p.symbol_id.visual_category,
                        score: p.unary_score + p.pairwise_score,
                    }
                })
                .collect(),
            joints: joints_from_parse(r, &model.tree, cs)?,
            total_score: r.total_score,
        })
    }

    pub fn prediction(&self) -> PredictedPose {
        PredictedPose {
            image_id: self.image_id.clone(),
            joints: self.joints.clone(),
        }
    }
}

/// Best parse of one image, or every detection above `threshold` in
/// decreasing score order.
pub fn parse_image(
    model: &Model,
    image_id: &str,
    image: &ImageBuffer,
    threshold: Option<f64>,
) -> Result<(Vec<ParseResult>, Vec<ParseRecord>)> {
    let f = extract_features(image, model.params.cell_size)?;
    let results = match threshold {
        None => vec![parse(&f, &model.params, &model.tree)?],
        Some(t) => detect_all(&f, &model.params, &model.tree, t)?,
    };
    let records = results
        .iter()
        .enumerate()
        .map(|(k, r)| ParseRecord::from_parse(image_id, k, r, model))
        .collect::<Result<_>>()?;
    Ok((results, records))
}

pub fn records_to_jsonl(records: &[ParseRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn records_from_jsonl(text: &str, path: &std::path::Path) -> Result<Vec<ParseRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PoseError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Overlay colour of a part, by body region.
pub fn part_color(name: &str) -> [u8; 3] {
    let region = name.trim_start_matches("r_").trim_start_matches("l_");
    match region {
        "upper_body" | "neck" => [255, 220, 0],
        "lower_body" => [255, 140, 0],
        "head" | "head_top" => [255, 0, 0],
        "upper_arm" | "shoulder" | "elbow" => [0, 255, 255],
        "lower_arm" | "wrist" => [255, 0, 255],
        "upper_leg" | "hip" | "knee" => [0, 200, 0],
        "lower_leg" | "ankle" => [0, 0, 255],
        _ => [255, 255, 255],
    }
}

/// Draws every part's box on an RGB copy of `image`: solid outlines for the
/// person's left side and for unpaired parts, dashed for the right.
pub fn draw_overlay(image: &ImageBuffer, result: &ParseResult, model: &Model) -> ImageBuffer {
    let mut out = image.to_rgb();
    let cs = model.params.cell_size as isize;
    // large parts first so joints stay visible
    let mut order: Vec<_> = result.parts.iter().collect();
    order.sort_by_key(|p| model.tree.part(p.part).level != Level::Joint);
    order.reverse();
    for p in order {
        let def = model.tree.part(p.part);
        let color = part_color(&def.name);
        let dashed = def.name.starts_with("r_");
        let (ox, oy) = crate::features::box_origin(p.location, def.box_size);
        let (x0, y0) = (ox * cs, oy * cs);
        let (x1, y1) = (
            x0 + def.box_size.width as isize * cs - 1,
            y0 + def.box_size.height as isize * cs - 1,
        );
        let mut put = |x: isize, y: isize, k: isize| {
            if dashed && (k / 3) % 2 == 1 {
                return;
            }
            if x >= 0 && y >= 0 && (x as usize) < out.width() && (y as usize) < out.height() {
                out.set_pixel(x as usize, y as usize, &color);
            }
        };
        for x in x0..=x1 {
            put(x, y0, x - x0);
            put(x, y1, x - x0);
        }
        for y in y0..=y1 {
            put(x0, y, y - y0);
            put(x1, y, y - y0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, render_negative, SynthConfig};

    #[test]
    fn palette_covers_every_default_part() {
        for p in SkeletonTree::default_human().parts() {
            assert_ne!(part_color(&p.name), [255, 255, 255], "{}", p.name);
        }
    }

    #[test]
    fn parse_records_round_trip() {
        let r = ParseRecord {
            image_id: "a.pgm".into(),
            rank: 0,
            parts: vec![PartRecord {
                part: "head".into(),
                x: 2.0,
                y: 6.0,
                geometric_type: 1,
                visual_category: 0,
                score: -0.5,
            }],
            joints: vec![[1.0, 2.0]; 14],
            total_score: 3.25,
        };
        let text = records_to_jsonl(&[r.clone(), r.clone()]).unwrap();
        let back = records_from_jsonl(&text, std::path::Path::new("x")).unwrap();
        assert_eq!(back, vec![r.clone(), r]);
        let err = records_from_jsonl("{}\n", std::path::Path::new("x")).unwrap_err();
        assert!(matches!(err, PoseError::Parse { line: 1, .. }));
    }

    #[test]
    fn tiny_training_run_is_deterministic() {
        let scfg = SynthConfig {
            seed: 1,
            ..SynthConfig::default()
        };
        let pos: Vec<_> = generate_synthetic(&scfg, 4)
            .unwrap()
            .into_iter()
            .map(|s| (s.image, s.annotation))
            .collect();
        let neg: Vec<_> = (0..2).map(|i| render_negative(&scfg, i).unwrap()).collect();
        let cfg = PipelineConfig {
            k_large: 2,
            k_small: 2,
            cv_rounds: 2,
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        };
        let tree = SkeletonTree::default_human();
        let a = train_pipeline(&pos, &neg, &tree, &cfg).unwrap();
        let b = train_pipeline(&pos, &neg, &tree, &cfg).unwrap();
        assert_eq!(a.model.to_bytes(), b.model.to_bytes());
        let (results, records) = parse_image(&a.model, "x", &pos[0].0, None).unwrap();
        assert_eq!(results.len(), 1);
        assert_eq!(records[0].joints.len(), 14);
        let overlay = draw_overlay(&pos[0].0, &results[0], &a.model);
        assert_eq!(overlay.channels(), 3);
    }
}
