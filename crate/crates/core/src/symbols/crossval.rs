//! Cross-validated pruning of latent categories.
//!
//! The training set is split once into halves. Each round trains the
//! surviving classifiers on one half, counts how many instances of the other
//! half each classifier detects, removes classifiers whose count falls below
//! `prune_fraction` of a uniform share, and swaps the halves.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::kmeans::kmeans;
use super::lsvm::{argmax_classifier, lsvm_from_labels};
use super::svm::{LinearSvm, SvmConfig};
use crate::error::{PoseError, Result};

/// Score above which a validation instance counts as detected.
pub const DETECTION_MARGIN: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CvRound {
    pub k_before: usize,
    pub k_after: usize,
    pub objective: f64,
    /// Detections per classifier (before pruning), aligned with `ids_before`.
    pub detections: Vec<usize>,
    pub ids_before: Vec<usize>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossValidation {
    pub classifiers: Vec<LinearSvm>,
    /// Identity (initial classifier index in `0..k_in`) of each survivor.
    pub ids: Vec<usize>,
    /// Detections of each survivor in the final validation pass.
    pub detections: Vec<usize>,
    pub k_in: usize,
    pub rounds: Vec<CvRound>,
}

impl CrossValidation {
    pub fn k_out(&self) -> usize {
        self.classifiers.len()
    }

    /// Number of classifiers alive after each round.
    pub fn k_trace(&self) -> Vec<usize> {
        self.rounds.iter().map(|r| r.k_after).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub k_in: usize,
    pub rounds: usize,
    pub prune_fraction: f64,
    pub c: f64,
    pub seed: u64,
}

/// Splits `instances` into two seeded random halves and runs
/// [`cross_validate_halves`].
pub fn cross_validate(
    instances: &[Vec<f64>],
    neg: &[Vec<f64>],
    cfg: &CvConfig,
) -> Result<CrossValidation> {
    if cfg.k_in == 0 || instances.len() < 2 * cfg.k_in {
        return Err(PoseError::InsufficientSamples {
            needed: 2 * cfg.k_in.max(1),
            got: instances.len(),
        });
    }
    let mut order: Vec<usize> = (0..instances.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9));
    let half = instances.len() / 2;
    let h1: Vec<Vec<f64>> = order[..half]
        .iter()
        .map(|&i| instances[i].clone())
        .collect();
    let h2: Vec<Vec<f64>> = order[half..]
        .iter()
        .map(|&i| instances[i].clone())
        .collect();
    cross_validate_halves(&h1, &h2, neg, cfg)
}

pub fn cross_validate_halves(
    h1: &[Vec<f64>],
    h2: &[Vec<f64>],
    neg: &[Vec<f64>],
    cfg: &CvConfig,
) -> Result<CrossValidation> {
    if cfg.rounds == 0 {
        return Err(PoseError::InvalidArgument(
            "at least one round is required".into(),
        ));
    }
    if cfg.k_in == 0 || h1.len() < cfg.k_in || h2.is_empty() {
        return Err(PoseError::InsufficientSamples {
            needed: cfg.k_in.max(1),
            got: h1.len().min(h2.len()),
        });
    }
    let svm_cfg = SvmConfig::default();
    let (mut train, mut valid) = (h1, h2);
    let mut ids: Vec<usize> = (0..cfg.k_in).collect();
    let mut classifiers: Vec<LinearSvm> = Vec::new();
    let mut detections = Vec::new();
    let mut rounds = Vec::with_capacity(cfg.rounds);

    for round in 0..cfg.rounds {
        let k_before = ids.len();
        let init = if round == 0 {
            kmeans(train, k_before, cfg.seed)?.assignments
        } else {
            train
                .iter()
                .map(|x| argmax_classifier(&classifiers, x).0)
                .collect()
        };
        let cat = lsvm_from_labels(train, neg, init, k_before, cfg.c, &svm_cfg)?;
        ids = cat.origin.iter().map(|&o| ids[o]).collect();
        classifiers = cat.classifiers;
        let objective = cat.objective_trace.last().copied().unwrap_or(0.0);

        let mut counts = vec![0usize; classifiers.len()];
        for x in valid {
            let (j, s) = argmax_classifier(&classifiers, x);
            if s > DETECTION_MARGIN {
                counts[j] += 1;
            }
        }
        let threshold = cfg.prune_fraction * (valid.len() as f64 / classifiers.len() as f64);
        let ids_before = ids.clone();
        let keep: Vec<bool> = counts.iter().map(|&n| (n as f64) >= threshold).collect();
        if !keep.iter().any(|&k| k) {
            return Err(PoseError::DegenerateSymbolSet);
        }
        let mut it = keep.iter();
        classifiers.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        ids.retain(|_| *it.next().unwrap());
        detections = counts
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&n, _)| n)
            .collect();
        rounds.push(CvRound {
            k_before,
            k_after: ids.len(),
            objective,
            detections: counts,
            ids_before,
            threshold,
        });
        std::mem::swap(&mut train, &mut valid);
    }
    Ok(CrossValidation {
        classifiers,
        ids,
        detections,
        k_in: cfg.k_in,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blob(rng: &mut ChaCha8Rng, center: &[f64], n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.random_range(-0.3..0.3))
                    .collect()
            })
            .collect()
    }

    fn cfg(k_in: usize, rounds: usize, prune_fraction: f64) -> CvConfig {
        CvConfig {
            k_in,
            rounds,
            prune_fraction,
            c: 1.0,
            seed: 3,
        }
    }

    #[test]
    fn insufficient_instances() {
        let x = vec![vec![0.0]; 3];
        assert!(matches!(
            cross_validate(&x, &[vec![1.0]], &cfg(2, 1, 0.05)),
            Err(PoseError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn classifier_absent_from_validation_half_is_pruned() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let neg = blob(&mut rng, &[-3.0, -3.0, 0.0], 20);
        let mut h1 = blob(&mut rng, &[3.0, 0.0, 0.0], 6);
        h1.extend(blob(&mut rng, &[0.0, 3.0, 3.0], 6));
        let h2 = blob(&mut rng, &[3.0, 0.0, 0.0], 12);
        let cv = cross_validate_halves(&h1, &h2, &neg, &cfg(2, 1, 0.05)).unwrap();
        assert_eq!(cv.k_out(), 1);
        assert_eq!(
            cv.rounds[0].detections.iter().filter(|&&n| n == 0).count(),
            1
        );
    }

    #[test]
    fn all_pruned_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let neg = blob(&mut rng, &[-3.0, 0.0], 20);
        let h1 = blob(&mut rng, &[3.0, 0.0], 6);
        // validation instances look like negatives: nothing is detected
        let h2 = blob(&mut rng, &[-3.0, 0.0], 6);
        assert!(matches!(
            cross_validate_halves(&h1, &h2, &neg, &cfg(1, 1, 0.5)),
            Err(PoseError::DegenerateSymbolSet)
        ));
    }
}
