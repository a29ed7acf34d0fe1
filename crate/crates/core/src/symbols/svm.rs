//! Hinge-loss linear SVM solved by dual coordinate descent.
//!
//! The bias is learned as the weight of a constant feature equal to one, so
//! it is regularized together with the weights:
//! `min 1/2 (|w|^2 + b^2) + C sum_i max(0, 1 - y_i (w . x_i + b))`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::dot;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn zeros(dim: usize) -> Self {
        LinearSvm {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    #[inline]
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.weights, &self.weights) + self.bias * self.bias
    }

    /// Regularizer plus hinge losses over the given examples.
    pub fn objective(&self, pos: &[&[f64]], neg: &[&[f64]], c: f64) -> f64 {
        0.5 * self.norm_sq() + c * hinge_sum(self, pos, neg)
    }
}

pub(crate) fn hinge_sum(svm: &LinearSvm, pos: &[&[f64]], neg: &[&[f64]]) -> f64 {
    let p: f64 = pos.iter().map(|x| (1.0 - svm.score(x)).max(0.0)).sum();
    let n: f64 = neg.iter().map(|x| (1.0 + svm.score(x)).max(0.0)).sum();
    p + n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    /// Absolute duality-gap tolerance.
    pub gap_tol: f64,
    /// Duality gap tolerance relative to the primal objective.
    pub rel_gap_tol: f64,
    pub max_epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            gap_tol: 1e-3,
            rel_gap_tol: 1e-5,
            max_epochs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub model: LinearSvm,
    pub primal: f64,
    pub dual: f64,
    pub epochs: usize,
}

/// Solves the SVM to `gap <= min(gap_tol, rel_gap_tol * primal)` or
/// `max_epochs`. Deterministic: the coordinate order is a fixed-seed shuffle.
pub fn train_svm(pos: &[&[f64]], neg: &[&[f64]], c: f64, cfg: &SvmConfig) -> SvmSolution {
    let dim = pos.first().or(neg.first()).map_or(0, |x| x.len());
    let examples: Vec<(&[f64], f64)> = pos
        .iter()
        .map(|x| (*x, 1.0))
        .chain(neg.iter().map(|x| (*x, -1.0)))
        .collect();
    let n = examples.len();
    let mut model = LinearSvm::zeros(dim);
    let mut alpha = vec![0.0; n];
    let qd: Vec<f64> = examples.iter().map(|(x, _)| dot(x, x) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);

    let mut primal = model.objective(pos, neg, c);
    let mut dual = 0.0;
    let mut epochs = 0;
    if c <= 0.0 || n == 0 {
        return SvmSolution {
            model,
            primal,
            dual,
            epochs,
        };
    }
    while epochs < cfg.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        for &i in &order {
            let (x, y) = examples[i];
            let g = y * model.score(x) - 1.0;
            let a = alpha[i];
            let pg = if a == 0.0 {
                g.min(0.0)
            } else if a == c {
                g.max(0.0)
            } else {
                g
            };
            if pg == 0.0 {
                continue;
            }
            let new_a = (a - g / qd[i]).clamp(0.0, c);
            let step = (new_a - a) * y;
            if step != 0.0 {
                for (w, xi) in model.weights.iter_mut().zip(x) {
                    *w += step * xi;
                }
                model.bias += step;
                alpha[i] = new_a;
            }
        }
        primal = model.objective(pos, neg, c);
        dual = alpha.iter().sum::<f64>() - 0.5 * model.norm_sq();
        let gap = primal - dual;
        if gap <= cfg.gap_tol.min(cfg.rel_gap_tol * primal.abs()) {
            break;
        }
    }
    SvmSolution {
        model,
        primal,
        dual,
        epochs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(|x| x.as_slice()).collect()
    }

    #[test]
    fn separable_problem_is_separated() {
        let pos = vec![vec![2.0, 2.0], vec![3.0, 1.5], vec![2.5, 3.0]];
        let neg = vec![vec![-2.0, -1.0], vec![-1.5, -3.0]];
        let sol = train_svm(&refs(&pos), &refs(&neg), 10.0, &SvmConfig::default());
        for x in &pos {
            assert!(sol.model.score(x) >= 1.0 - 1e-3);
        }
        for x in &neg {
            assert!(sol.model.score(x) <= -1.0 + 1e-3);
        }
        assert!(sol.primal - sol.dual <= 1e-3);
    }

    #[test]
    fn zero_c_gives_zero_model() {
        let pos = vec![vec![1.0]];
        let neg = vec![vec![-1.0]];
        let sol = train_svm(&refs(&pos), &refs(&neg), 0.0, &SvmConfig::default());
        assert_eq!(sol.model, LinearSvm::zeros(1));
    }

    #[test]
    fn weak_duality_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pos: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..2.0)).collect())
            .collect();
        let neg: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..5).map(|_| rng.random_range(-2.0..1.0)).collect())
            .collect();
        let sol = train_svm(&refs(&pos), &refs(&neg), 0.5, &SvmConfig::default());
        assert!(sol.dual <= sol.primal + 1e-12);
        assert!(sol.primal - sol.dual <= 1e-3);
    }
}
