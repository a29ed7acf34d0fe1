//! Dual coordinate descent for the margin QP over a constraint cache.
//!
//! Primal:
//!
//! ```text
//! min 1/2 |theta|^2 + C sum_n xi_n
//!   s.t. y_i <theta, phi_i> >= 1 - xi_{n(i)},  xi_n >= 0,
//!        theta_q <= MAX_QUADRATIC for every quadratic slot q
//! ```
//!
//! Constraints of the same example `n` share one slack. With
//! `v = sum_i alpha_i y_i phi_i` the minimizing theta is the projection of
//! `v` onto the box, so the dual is
//! `D(alpha) = sum alpha + 1/2 |proj(v) - v|^2 - 1/2 |v|^2` subject to
//! `alpha >= 0` and `sum_{i in n} alpha_i <= C`. Its gradient in `alpha_i`
//! is `1 - y_i <theta, phi_i>` and its curvature along any direction `d` is
//! at most `|sum_i d_i y_i phi_i|^2`.
//!
//! The solver keeps the Gram matrix of the cache and `v` only on the
//! quadratic slots, so a coordinate step costs O(cache size).

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layout::SparseFeature;
use crate::context::MAX_QUADRATIC;

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub phi: SparseFeature,
    /// +1 for positives, -1 for negatives.
    pub sign: f64,
    /// Example the constraint belongs to; constraints of one example share
    /// a slack.
    pub group: usize,
    /// Configuration the constraint was built from, for de-duplication.
    pub key: Vec<(usize, (usize, usize))>,
    pub evictable: bool,
    alpha: f64,
    /// `(position in the quadratic slot list, value)`
    quad: Vec<(usize, f64)>,
    inactive_epochs: usize,
}

impl Constraint {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpConfig {
    pub gap_tol: f64,
    pub max_passes: usize,
    pub seed: u64,
}

impl Default for QpConfig {
    fn default() -> Self {
        QpConfig {
            gap_tol: 1e-3,
            max_passes: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSolve {
    pub primal: f64,
    pub dual: f64,
    pub passes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginAudit {
    pub checked: usize,
    pub violations: usize,
    /// Largest shortfall `1 - xi - y <theta, phi>` over all constraints.
    pub worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpState {
    pub c: f64,
    len: usize,
    quad_slots: Vec<usize>,
    quad_pos: HashMap<usize, usize>,
    /// `v` on the quadratic slots.
    qv: Vec<f64>,
    constraints: Vec<Constraint>,
    /// `gram[i][j] = y_i y_j <phi_i, phi_j>`
    gram: Vec<Vec<f64>>,
    /// `kv[i] = y_i <phi_i, v>`
    kv: Vec<f64>,
    group_sum: Vec<f64>,
    theta: Vec<f64>,
    rng: ChaCha8Rng,
}

impl QpState {
    pub fn new(len: usize, quadratic: &[usize], c: f64, seed: u64) -> Self {
        let quad_pos = quadratic.iter().enumerate().map(|(p, &k)| (k, p)).collect();
        let mut theta = vec![0.0; len];
        for &q in quadratic {
            theta[q] = MAX_QUADRATIC;
        }
        QpState {
            c,
            len,
            quad_slots: quadratic.to_vec(),
            quad_pos,
            qv: vec![0.0; quadratic.len()],
            constraints: Vec::new(),
            gram: Vec::new(),
            kv: Vec::new(),
            group_sum: Vec::new(),
            theta,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Current parameters, `proj(v)`.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn contains(&self, group: usize, key: &[(usize, (usize, usize))]) -> bool {
        self.constraints
            .iter()
            .any(|c| c.group == group && c.key == key)
    }

    pub fn add(
        &mut self,
        phi: SparseFeature,
        sign: f64,
        group: usize,
        key: Vec<(usize, (usize, usize))>,
        evictable: bool,
    ) {
        if self.group_sum.len() <= group {
            self.group_sum.resize(group + 1, 0.0);
        }
        let mut quad = Vec::new();
        for (o, b) in &phi.blocks {
            for (k, &x) in (*o..*o + b.len()).zip(b) {
                if x != 0.0 {
                    if let Some(&p) = self.quad_pos.get(&k) {
                        quad.push((p, x));
                    }
                }
            }
        }
        let row: Vec<f64> = self
            .constraints
            .iter()
            .map(|c| sign * c.sign * phi.dot_sparse(&c.phi))
            .collect();
        for (g, &k) in self.gram.iter_mut().zip(&row) {
            g.push(k);
        }
        let mut row = row;
        row.push(phi.norm_sq());
        self.gram.push(row);
        // alpha starts at zero, so v is unchanged
        self.kv.push(sign * phi.dot(&self.v_dense()));
        self.constraints.push(Constraint {
            phi,
            sign,
            group,
            key,
            evictable,
            alpha: 0.0,
            quad,
            inactive_epochs: 0,
        });
    }

    fn v_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        for c in &self.constraints {
            if c.alpha != 0.0 {
                c.phi.add_to(&mut v, c.alpha * c.sign);
            }
        }
        v
    }

    fn refresh_theta(&mut self) {
        let mut v = self.v_dense();
        for &q in &self.quad_slots {
            v[q] = v[q].min(MAX_QUADRATIC);
        }
        self.theta = v;
    }

    /// Recomputes `kv` from the Gram matrix to shed accumulated rounding.
    fn refresh_kv(&mut self) {
        let alpha: Vec<f64> = self.constraints.iter().map(|c| c.alpha).collect();
        for (kv, row) in self.kv.iter_mut().zip(&self.gram) {
            *kv = row.iter().zip(&alpha).map(|(k, a)| k * a).sum();
        }
    }

    /// `y_i <theta, phi_i>`
    fn margin(&self, i: usize) -> f64 {
        let c = &self.constraints[i];
        let corr: f64 = c
            .quad
            .iter()
            .map(|&(p, x)| x * (self.qv[p].min(MAX_QUADRATIC) - self.qv[p]))
            .sum();
        self.kv[i] + c.sign * corr
    }

    /// Slack of every group at the current theta.
    pub fn slacks(&self) -> Vec<f64> {
        let mut xi = vec![0.0f64; self.group_sum.len()];
        for i in 0..self.constraints.len() {
            let g = self.constraints[i].group;
            xi[g] = xi[g].max(1.0 - self.margin(i));
        }
        xi
    }

    pub fn slack(&self, group: usize) -> f64 {
        (0..self.constraints.len())
            .filter(|&i| self.constraints[i].group == group)
            .map(|i| 1.0 - self.margin(i))
            .fold(0.0, f64::max)
    }

    fn v_norm_sq(&self) -> f64 {
        self.constraints
            .iter()
            .zip(&self.kv)
            .map(|(c, kv)| c.alpha * kv)
            .sum()
    }

    /// `(|theta|^2 - |v|^2, |theta - v|^2)`, both supported on the quadratic
    /// slots.
    fn quad_terms(&self) -> (f64, f64) {
        let mut diff_norm = 0.0;
        let mut gap = 0.0;
        for &v in &self.qv {
            let t = v.min(MAX_QUADRATIC);
            diff_norm += t * t - v * v;
            gap += (t - v) * (t - v);
        }
        (diff_norm, gap)
    }

    pub fn primal(&self) -> f64 {
        let (diff_norm, _) = self.quad_terms();
        0.5 * (self.v_norm_sq() + diff_norm) + self.c * self.slacks().iter().sum::<f64>()
    }

    pub fn dual(&self) -> f64 {
        let sum_alpha: f64 = self.constraints.iter().map(|c| c.alpha).sum();
        let (_, gap) = self.quad_terms();
        sum_alpha + 0.5 * gap - 0.5 * self.v_norm_sq()
    }

    fn step(&mut self, i: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        let c = &mut self.constraints[i];
        c.alpha += delta;
        self.group_sum[c.group] += delta;
        let scale = delta * c.sign;
        for &(p, x) in &c.quad {
            self.qv[p] += scale * x;
        }
        for (kv, row) in self.kv.iter_mut().zip(&self.gram) {
            *kv += delta * row[i];
        }
    }

    /// Warm-started solve until the duality gap falls below `gap_tol`.
    pub fn solve(&mut self, cfg: &QpConfig) -> QpSolve {
        self.solve_below(cfg, f64::INFINITY)
    }

    /// Like [`QpState::solve`], but keeps iterating (within `max_passes`)
    /// until the primal is also at most `ceiling`, so that a warm-started
    /// re-solve never ends above the objective it started from.
    pub fn solve_below(&mut self, cfg: &QpConfig, ceiling: f64) -> QpSolve {
        let n = self.constraints.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut passes = 0;
        let mut primal = self.primal();
        let mut dual = self.dual();
        if self.c > 0.0 && n > 0 {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); self.group_sum.len()];
            for (i, c) in self.constraints.iter().enumerate() {
                groups[c.group].push(i);
            }
            while passes < cfg.max_passes && (primal - dual > cfg.gap_tol || primal > ceiling) {
                passes += 1;
                order.shuffle(&mut self.rng);
                for &i in &order {
                    let q = self.gram[i][i];
                    if q <= 0.0 {
                        continue;
                    }
                    let g = 1.0 - self.margin(i);
                    let a = self.constraints[i].alpha;
                    let hi = self.c - (self.group_sum[self.constraints[i].group] - a);
                    let new_a = (a + g / q).clamp(0.0, hi.max(0.0));
                    self.step(i, new_a - a);
                }
                // transfer weight inside saturated groups
                for members in groups.iter().filter(|m| m.len() > 1) {
                    for _ in 0..members.len() {
                        if !self.transfer(members) {
                            break;
                        }
                    }
                }
                self.refresh_kv();
                primal = self.primal();
                dual = self.dual();
            }
        }
        self.refresh_theta();
        QpSolve {
            primal,
            dual,
            passes,
        }
    }

    /// One pairwise move inside a group whose slack budget is exhausted:
    /// weight flows from the active constraint with the smallest gradient to
    /// the one with the largest. Returns whether anything moved.
    fn transfer(&mut self, members: &[usize]) -> bool {
        let g = self.constraints[members[0]].group;
        if self.group_sum[g] < self.c * (1.0 - 1e-9) {
            return false;
        }
        let grads: Vec<f64> = members.iter().map(|&i| 1.0 - self.margin(i)).collect();
        let (mut up, mut down) = (None::<usize>, None::<usize>);
        for (k, &i) in members.iter().enumerate() {
            if up.is_none_or(|u| grads[k] > grads[u]) {
                up = Some(k);
            }
            if self.constraints[i].alpha > 0.0 && down.is_none_or(|d| grads[k] < grads[d]) {
                down = Some(k);
            }
        }
        let (Some(u), Some(d)) = (up, down) else {
            return false;
        };
        if u == d || grads[u] - grads[d] <= 1e-12 {
            return false;
        }
        let (iu, id) = (members[u], members[d]);
        let curv = (self.gram[iu][iu] + self.gram[id][id] - 2.0 * self.gram[iu][id]).max(1e-12);
        let t = ((grads[u] - grads[d]) / curv).min(self.constraints[id].alpha);
        self.step(id, -t);
        self.step(iu, t);
        t > 0.0
    }

    /// Drops evictable constraints that have had zero weight and margin
    /// above `margin` for `patience` consecutive calls. Returns the number
    /// removed.
    pub fn evict(&mut self, margin: f64, patience: usize) -> usize {
        let margins: Vec<f64> = (0..self.constraints.len())
            .map(|i| self.margin(i))
            .collect();
        for (c, &m) in self.constraints.iter_mut().zip(&margins) {
            if c.evictable && c.alpha == 0.0 && m > margin {
                c.inactive_epochs += 1;
            } else {
                c.inactive_epochs = 0;
            }
        }
        let keep: Vec<bool> = self
            .constraints
            .iter()
            .map(|c| c.inactive_epochs < patience)
            .collect();
        let before = self.constraints.len();
        let mut it = keep.iter();
        self.constraints.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.kv.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.gram.retain(|_| *it.next().unwrap());
        for row in &mut self.gram {
            let mut it = keep.iter();
            row.retain(|_| *it.next().unwrap());
        }
        before - self.constraints.len()
    }

    /// Checks `y <theta, phi> >= 1 - xi_n - tol` on every cached constraint.
    pub fn margin_audit(&self, tol: f64) -> MarginAudit {
        let xi = self.slacks();
        let mut audit = MarginAudit {
            checked: 0,
            violations: 0,
            worst: f64::NEG_INFINITY,
        };
        for (i, c) in self.constraints.iter().enumerate() {
            // recomputed from theta, independently of the cached Gram terms
            let short = 1.0 - xi[c.group] - c.sign * c.phi.dot(&self.theta);
            audit.checked += 1;
            audit.worst = audit.worst.max(short);
            if short > tol {
                audit.violations += 1;
            }
            debug_assert!((c.sign * c.phi.dot(&self.theta) - self.margin(i)).abs() < 1e-6);
        }
        audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn dense(v: Vec<f64>) -> SparseFeature {
        SparseFeature {
            blocks: vec![(0, v)],
        }
    }

    #[test]
    fn zero_c_leaves_only_the_clamp() {
        let mut qp = QpState::new(3, &[2], 0.0, 0);
        qp.add(dense(vec![1.0, 0.0, 0.0]), 1.0, 0, vec![], false);
        qp.solve(&QpConfig::default());
        assert_eq!(qp.theta(), &[0.0, 0.0, MAX_QUADRATIC]);
    }

    #[test]
    fn single_constraint_hits_margin() {
        // min 1/2 |t|^2 s.t. t . (2, 0) >= 1 -> t = (0.5, 0)
        let mut qp = QpState::new(2, &[], 10.0, 0);
        qp.add(dense(vec![2.0, 0.0]), 1.0, 0, vec![], false);
        let s = qp.solve(&QpConfig::default());
        assert!((qp.theta()[0] - 0.5).abs() < 1e-6);
        assert!(s.primal - s.dual <= 1e-3);
    }

    #[test]
    fn projection_is_exact_when_clamp_binds() {
        // the constraint pulls the quadratic slot positive; the optimum
        // sits on the clamp and the other slot takes up the margin
        let mut qp = QpState::new(2, &[1], 100.0, 0);
        qp.add(dense(vec![1.0, 1.0]), 1.0, 0, vec![], false);
        let s = qp.solve(&QpConfig {
            gap_tol: 1e-10,
            ..QpConfig::default()
        });
        assert!((qp.theta()[1] - MAX_QUADRATIC).abs() < 1e-12);
        assert!((qp.theta()[0] - (1.0 - MAX_QUADRATIC)).abs() < 1e-5);
        assert!(s.primal - s.dual <= 1e-10);
    }

    #[test]
    fn shared_slack_groups_reach_small_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut qp = QpState::new(6, &[4, 5], 0.5, 1);
        for i in 0..30 {
            let v: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            qp.add(
                dense(v),
                if i % 3 == 0 { 1.0 } else { -1.0 },
                i % 7,
                vec![(i, (0, 0))],
                true,
            );
        }
        let s = qp.solve(&QpConfig::default());
        assert!(s.primal - s.dual <= 1e-3, "gap {}", s.primal - s.dual);
        assert!(s.dual <= s.primal + 1e-12);
        for q in [4, 5] {
            assert!(qp.theta()[q] <= MAX_QUADRATIC);
        }
        for g in 0..7 {
            let sum: f64 = qp
                .constraints()
                .iter()
                .filter(|c| c.group == g)
                .map(|c| c.alpha())
                .sum();
            assert!(sum <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn eviction_needs_consecutive_inactivity() {
        let mut qp = QpState::new(1, &[], 1.0, 0);
        qp.add(dense(vec![1.0]), 1.0, 0, vec![], false);
        qp.add(dense(vec![-5.0]), -1.0, 1, vec![], true);
        qp.solve(&QpConfig::default());
        assert_eq!(qp.evict(1.1, 2), 0);
        assert_eq!(qp.evict(1.1, 2), 1);
        assert_eq!(qp.len(), 1);
    }
}
