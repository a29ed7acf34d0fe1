//! Latent SVM subcategory discovery.
//!
//! Positives carry a latent category label; negatives are shared by every
//! category. The objective is
//!
//! ```text
//! sum_k 1/2 |w_k|^2
//!   + C sum_{i in pos} max(0, 1 - w_{l_i} . x_i)
//!   + C sum_k sum_{i in neg} max(0, 1 + w_k . x_i)
//! ```
//!
//! minimized by alternating between K independent SVM solves with labels
//! fixed and relabeling every positive to its highest-scoring category.
//! Both steps can only lower the objective, so the trace is non-increasing.

use rayon::prelude::*;

use super::kmeans::kmeans;
use super::svm::{train_svm, LinearSvm, SvmConfig};
use crate::error::{PoseError, Result};

pub const MAX_ROUNDS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCategorization {
    pub classifiers: Vec<LinearSvm>,
    /// Category of each positive, indexing `classifiers`.
    pub labels: Vec<usize>,
    /// For each surviving classifier, the index of the initial category it
    /// descends from.
    pub origin: Vec<usize>,
    pub c: f64,
    /// Objective after each round of SVM solves.
    pub objective_trace: Vec<f64>,
    pub rounds: usize,
}

impl LatentCategorization {
    pub fn k(&self) -> usize {
        self.classifiers.len()
    }
}

/// Highest-scoring classifier and its score; ties go to the lowest index.
pub fn argmax_classifier(classifiers: &[LinearSvm], x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, w) in classifiers.iter().enumerate() {
        let s = w.score(x);
        if s > best.1 {
            best = (k, s);
        }
    }
    best
}

/// Full latent-SVM objective for the given labels and classifiers.
pub fn lsvm_objective(
    classifiers: &[LinearSvm],
    labels: &[usize],
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    c: f64,
) -> f64 {
    let neg_refs: Vec<&[f64]> = neg.iter().map(Vec::as_slice).collect();
    classifiers
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let mine: Vec<&[f64]> = pos
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == k)
                .map(|(x, _)| x.as_slice())
                .collect();
            w.objective(&mine, &neg_refs, c)
        })
        .sum()
}

/// Categorization with k-means initial labels.
pub fn lsvm_categorize(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    k: usize,
    c: f64,
    seed: u64,
) -> Result<LatentCategorization> {
    if pos.len() < k {
        return Err(PoseError::InsufficientSamples {
            needed: k,
            got: pos.len(),
        });
    }
    let init = kmeans(pos, k, seed)?;
    lsvm_from_labels(pos, neg, init.assignments, k, c, &SvmConfig::default())
}

/// Categorization from explicit initial labels in `0..k`.
pub fn lsvm_from_labels(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    init_labels: Vec<usize>,
    k: usize,
    c: f64,
    cfg: &SvmConfig,
) -> Result<LatentCategorization> {
    if neg.is_empty() {
        return Err(PoseError::InsufficientSamples { needed: 1, got: 0 });
    }
    if pos.is_empty() || k == 0 {
        return Err(PoseError::InsufficientSamples {
            needed: k.max(1),
            got: pos.len(),
        });
    }
    if init_labels.len() != pos.len() || init_labels.iter().any(|&l| l >= k) {
        return Err(PoseError::InvalidArgument(
            "initial labels out of range".into(),
        ));
    }
    let dim = pos[0].len();
    let neg_refs: Vec<&[f64]> = neg.iter().map(Vec::as_slice).collect();

    let mut labels = init_labels;
    let mut origin: Vec<usize> = (0..k).collect();
    let mut classifiers: Vec<Option<LinearSvm>> = vec![None; k];
    compact(&mut labels, &mut origin, &mut classifiers);

    let mut objective_trace = Vec::new();
    let mut rounds = 0;
    while rounds < MAX_ROUNDS {
        rounds += 1;
        let solved: Vec<LinearSvm> = (0..origin.len())
            .into_par_iter()
            .map(|k| {
                let mine: Vec<&[f64]> = pos
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == k)
                    .map(|(x, _)| x.as_slice())
                    .collect();
                let fresh = train_svm(&mine, &neg_refs, c, cfg).model;
                match &classifiers[k] {
                    // keep the previous classifier if the solver's tolerance
                    // left the fresh one marginally worse
                    Some(prev)
                        if prev.objective(&mine, &neg_refs, c)
                            < fresh.objective(&mine, &neg_refs, c) =>
                    {
                        prev.clone()
                    }
                    _ => fresh,
                }
            })
            .collect();
        classifiers = solved.into_iter().map(Some).collect();
        let current: Vec<LinearSvm> = classifiers.iter().flatten().cloned().collect();
        objective_trace.push(lsvm_objective(&current, &labels, pos, neg, c));

        let relabeled: Vec<usize> = pos
            .iter()
            .map(|x| argmax_classifier(&current, x).0)
            .collect();
        let stable = relabeled == labels;
        labels = relabeled;
        compact(&mut labels, &mut origin, &mut classifiers);
        if stable {
            break;
        }
    }
    let classifiers: Vec<LinearSvm> = classifiers
        .into_iter()
        .map(|w| w.unwrap_or_else(|| LinearSvm::zeros(dim)))
        .collect();
    Ok(LatentCategorization {
        classifiers,
        labels,
        origin,
        c,
        objective_trace,
        rounds,
    })
}

/// Drops categories without positives and renumbers labels densely.
fn compact(
    labels: &mut [usize],
    origin: &mut Vec<usize>,
    classifiers: &mut Vec<Option<LinearSvm>>,
) {
    let k = origin.len();
    let mut count = vec![0usize; k];
    for &l in labels.iter() {
        count[l] += 1;
    }
    if count.iter().all(|&n| n > 0) {
        return;
    }
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    for j in 0..k {
        if count[j] > 0 {
            remap[j] = next;
            next += 1;
        }
    }
    for l in labels.iter_mut() {
        *l = remap[*l];
    }
    let keep = |j: &usize| count[*j] > 0;
    *origin = (0..k).filter(keep).map(|j| origin[j]).collect();
    *classifiers = (0..k).filter(keep).map(|j| classifiers[j].take()).collect();
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob(rng: &mut ChaCha8Rng, center: &[f64], n: usize, spread: f64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + rng.random_range(-spread..spread))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_clusters_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = blob(&mut rng, &[4.0, 0.0, 1.0], 12, 0.5);
        let b = blob(&mut rng, &[0.0, 4.0, 1.0], 12, 0.5);
        let neg = blob(&mut rng, &[-2.0, -2.0, 0.0], 20, 0.5);
        let pos: Vec<Vec<f64>> = a.iter().chain(&b).cloned().collect();
        let r = lsvm_categorize(&pos, &neg, 2, 1.0, 1).unwrap();
        assert_eq!(r.k(), 2);
        let la = r.labels[0];
        assert!(r.labels[..12].iter().all(|&l| l == la));
        assert!(r.labels[12..].iter().all(|&l| l != la));
    }

    #[test]
    fn labels_are_argmax_after_final_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pos = blob(&mut rng, &[1.0, 1.0, 1.0, 1.0], 30, 1.5);
        let neg = blob(&mut rng, &[-1.0, 0.0, 0.0, -1.0], 30, 1.5);
        let r = lsvm_categorize(&pos, &neg, 3, 0.1, 2).unwrap();
        for (x, &l) in pos.iter().zip(&r.labels) {
            assert_eq!(argmax_classifier(&r.classifiers, x).0, l);
        }
    }

    #[test]
    fn rejects_empty_negatives() {
        let pos = vec![vec![1.0], vec![2.0]];
        assert!(lsvm_categorize(&pos, &[], 1, 1.0, 0).is_err());
        assert!(lsvm_categorize(&pos, &[vec![0.0]], 3, 1.0, 0).is_err());
    }

    #[test]
    fn empty_category_is_dropped() {
        let pos = vec![vec![1.0, 0.0], vec![1.1, 0.0], vec![0.9, 0.1]];
        let neg = vec![vec![-1.0, 0.0]];
        // category 1 starts empty
        let r = lsvm_from_labels(&pos, &neg, vec![0, 0, 2], 3, 1.0, &SvmConfig::default()).unwrap();
        assert!(r.k() <= 2);
        assert!(!r.origin.contains(&1));
    }
}
