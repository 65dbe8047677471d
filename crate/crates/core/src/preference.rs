//! Preferential Gaussian process: probit pairwise likelihood over latent
//! utilities, Laplace posterior at the observed points, and Gaussian
//! predictions elsewhere.
//!
//! Inputs live in whatever coordinates the caller chooses; the optimizer
//! feeds box-normalized vectors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::stats::{inverse_mills, log_normal_cdf, normal_cdf};

pub const MAX_NEWTON_ITERATIONS: usize = 100;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const MAX_JITTER: f64 = 1e-2;

/// Probability that an item with utility `g1` is preferred over one with
/// utility `g2`.
pub fn pref_likelihood(g1: f64, g2: f64) -> f64 {
    normal_cdf(g1 - g2)
}

/// Squared-exponential kernel with per-dimension lengthscales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    /// Diagonal nugget added to the covariance of observed points.
    pub jitter: f64,
}

impl SeKernel {
    pub fn isotropic(dim: usize, lengthscale: f64) -> Self {
        Self {
            signal_variance: 1.0,
            lengthscales: vec![lengthscale; dim],
            jitter: 1e-6,
        }
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| ((x - y) / l).powi(2))
            .sum();
        self.signal_variance * (-0.5 * r2).exp()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.signal_variance > 0.0
            && self.jitter >= 0.0
            && !self.lengthscales.is_empty()
            && self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("invalid kernel {self:?}")))
        }
    }

    fn gram(&self, points: &[Vec<f64>], jitter: f64) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| {
            self.eval(&points[i], &points[j]) + if i == j { jitter } else { 0.0 }
        })
    }
}

/// One pairwise outcome expressed as indices into a point list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub winner: usize,
    pub loser: usize,
}

/// A duel between two parameter vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelOutcome {
    pub phi_win: Vec<f64>,
    pub phi_lose: Vec<f64>,
    pub trial_index: usize,
}

/// Unique points in first-seen order and the comparisons over them.
pub fn index_duels(duels: &[DuelOutcome]) -> Result<(Vec<Vec<f64>>, Vec<Comparison>)> {
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut find = |p: &Vec<f64>| -> usize {
        match points.iter().position(|q| q == p) {
            Some(i) => i,
            None => {
                points.push(p.clone());
                points.len() - 1
            }
        }
    };
    let mut comps = Vec::with_capacity(duels.len());
    for d in duels {
        if d.phi_win == d.phi_lose {
            return Err(Error::InvalidParam(format!(
                "duel {} compares a point with itself",
                d.trial_index
            )));
        }
        let winner = find(&d.phi_win);
        let loser = find(&d.phi_lose);
        comps.push(Comparison { winner, loser });
    }
    Ok((points, comps))
}

fn log_likelihood(comps: &[Comparison], g: &DVector<f64>) -> f64 {
    comps.iter().map(|c| log_normal_cdf(g[c.winner] - g[c.loser])).sum()
}

fn grad_log_likelihood(comps: &[Comparison], g: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(g.len());
    for c in comps {
        let r = inverse_mills(g[c.winner] - g[c.loser]);
        out[c.winner] += r;
        out[c.loser] -= r;
    }
    out
}

/// Negative Hessian of the log likelihood.
fn likelihood_curvature(comps: &[Comparison], g: &DVector<f64>) -> DMatrix<f64> {
    let n = g.len();
    let mut w = DMatrix::zeros(n, n);
    for c in comps {
        let z = g[c.winner] - g[c.loser];
        let r = inverse_mills(z);
        let wd = r * (z + r);
        w[(c.winner, c.winner)] += wd;
        w[(c.loser, c.loser)] += wd;
        w[(c.winner, c.loser)] -= wd;
        w[(c.loser, c.winner)] -= wd;
    }
    w
}

fn cholesky_with_jitter(kernel: &SeKernel, points: &[Vec<f64>]) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = kernel.jitter.max(0.0);
    loop {
        if let Some(ch) = Cholesky::new(kernel.gram(points, jitter)) {
            return Ok((ch, jitter));
        }
        let next = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if next > MAX_JITTER {
            return Err(Error::InvalidParam("kernel matrix is singular even with jitter".into()));
        }
        warn!(from = jitter, to = next, "escalating kernel jitter");
        jitter = next;
    }
}

/// Gradient of `log p(duels | g) + log N(g | 0, K)` with respect to `g`.
pub fn grad_log_posterior(
    points: &[Vec<f64>],
    comps: &[Comparison],
    g: &[f64],
    kernel: &SeKernel,
) -> Result<Vec<f64>> {
    if g.len() != points.len() {
        return Err(crate::error::shape_err(points.len(), g.len()));
    }
    let (chol, _) = cholesky_with_jitter(kernel, points)?;
    let g = DVector::from_column_slice(g);
    Ok((grad_log_likelihood(comps, &g) - chol.solve(&g)).as_slice().to_vec())
}

/// The Laplace objective itself, up to an additive constant.
pub fn log_posterior(points: &[Vec<f64>], comps: &[Comparison], g: &[f64], kernel: &SeKernel) -> Result<f64> {
    let (chol, _) = cholesky_with_jitter(kernel, points)?;
    let g = DVector::from_column_slice(g);
    Ok(log_likelihood(comps, &g) - 0.5 * g.dot(&chol.solve(&g)))
}

#[derive(Clone, Debug)]
pub struct PreferencePosterior {
    pub kernel: SeKernel,
    /// Jitter actually used after escalation.
    pub jitter: f64,
    pub points: Vec<Vec<f64>>,
    pub comparisons: Vec<Comparison>,
    pub g_hat: Vec<f64>,
    pub iterations: usize,
    chol_k: Option<Cholesky<f64, Dyn>>,
    /// Factor of `I + Lᵀ W L`.
    chol_b: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl PreferencePosterior {
    /// Posterior with no observations; predictions revert to the prior.
    pub fn prior(kernel: SeKernel) -> Self {
        Self {
            jitter: kernel.jitter,
            kernel,
            points: Vec::new(),
            comparisons: Vec::new(),
            g_hat: Vec::new(),
            iterations: 0,
            chol_k: None,
            chol_b: None,
            alpha: DVector::zeros(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.points.iter().map(|p| {
                self.kernel.eval(p, x) + if p.as_slice() == x { self.jitter } else { 0.0 }
            }),
        )
    }

    /// `L⁻¹ k(X, x)`.
    fn whitened(&self, x: &[f64]) -> DVector<f64> {
        let k = self.cross(x);
        match &self.chol_k {
            Some(ch) => ch.l_dirty().solve_lower_triangular(&k).expect("cholesky factor is nonsingular"),
            None => k,
        }
    }

    /// `(I − B⁻¹) v`.
    fn reduce(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.chol_b {
            Some(b) => v - b.solve(v),
            None => DVector::zeros(v.len()),
        }
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.cross(x).dot(&self.alpha)
    }

    /// Predictive mean and variance of `g(x)`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let prior = self.kernel.eval(x, x);
        if self.is_empty() {
            return (0.0, prior);
        }
        let v = self.whitened(x);
        let var = prior - v.dot(&self.reduce(&v));
        (self.cross(x).dot(&self.alpha), var.max(1e-15))
    }

    /// Precomputed quantities for joint predictions against a fixed point.
    pub fn anchor(&self, x: &[f64]) -> Anchor {
        let (mean, var) = self.predict(x);
        let reduced = if self.is_empty() {
            DVector::zeros(0)
        } else {
            self.reduce(&self.whitened(x))
        };
        Anchor {
            point: x.to_vec(),
            mean,
            var,
            reduced,
        }
    }

    /// Mean, variance of `g(x)` and its covariance with `g(anchor)`.
    pub fn predict_joint(&self, x: &[f64], anchor: &Anchor) -> (f64, f64, f64) {
        let prior_cov = self.kernel.eval(x, &anchor.point);
        if self.is_empty() {
            return (0.0, self.kernel.eval(x, x), prior_cov);
        }
        let v = self.whitened(x);
        let var = self.kernel.eval(x, x) - v.dot(&self.reduce(&v));
        let cov = prior_cov - v.dot(&anchor.reduced);
        (self.cross(x).dot(&self.alpha), var.max(1e-15), cov)
    }
}

#[derive(Clone, Debug)]
pub struct Anchor {
    pub point: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    reduced: DVector<f64>,
}

/// Fits the Laplace approximation by damped Newton iterations.
pub fn fit_laplace(points: Vec<Vec<f64>>, comparisons: Vec<Comparison>, kernel: &SeKernel) -> Result<PreferencePosterior> {
    kernel.validate()?;
    if points.is_empty() {
        return Ok(PreferencePosterior::prior(kernel.clone()));
    }
    for p in &points {
        if p.len() != kernel.dim() {
            return Err(crate::error::shape_err(kernel.dim(), p.len()));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("preference point"));
        }
    }
    for c in &comparisons {
        if c.winner >= points.len() || c.loser >= points.len() || c.winner == c.loser {
            return Err(Error::InvalidParam(format!("bad comparison {c:?}")));
        }
    }
    let n = points.len();
    let (chol, jitter) = cholesky_with_jitter(kernel, &points)?;
    let l = chol.l();
    let objective = |g: &DVector<f64>| log_likelihood(&comparisons, g) - 0.5 * g.dot(&chol.solve(g));

    let mut g = DVector::zeros(n);
    let mut psi = objective(&g);
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let grad_ll = grad_log_likelihood(&comparisons, &g);
        let grad = &grad_ll - chol.solve(&g);
        grad_norm = grad.amax();
        if grad_norm < GRADIENT_TOLERANCE {
            break;
        }
        if iterations == MAX_NEWTON_ITERATIONS {
            return Err(Error::NotConverged { iterations, grad_norm });
        }
        iterations += 1;
        let w = likelihood_curvature(&comparisons, &g);
        let b = DMatrix::identity(n, n) + l.transpose() * &w * &l;
        let chol_b = Cholesky::new(b).ok_or(Error::NonFinite("Newton system"))?;
        let rhs = &w * &g + &grad_ll;
        let target = &l * chol_b.solve(&(l.transpose() * rhs));
        let step = target - &g;
        let mut t = 1.0;
        loop {
            let cand = &g + &step * t;
            let value = objective(&cand);
            if value >= psi || t < 1e-10 {
                g = cand;
                psi = value;
                break;
            }
            t *= 0.5;
        }
    }
    let w = likelihood_curvature(&comparisons, &g);
    let b = DMatrix::identity(n, n) + l.transpose() * &w * &l;
    let chol_b = Cholesky::new(b).ok_or(Error::NonFinite("posterior curvature"))?;
    let alpha = chol.solve(&g);
    Ok(PreferencePosterior {
        kernel: kernel.clone(),
        jitter,
        points,
        comparisons,
        g_hat: g.as_slice().to_vec(),
        iterations,
        chol_k: Some(chol),
        chol_b: Some(chol_b),
        alpha,
    })
}

/// Fits directly from duels, indexing the unique points first.
pub fn fit_duels(duels: &[DuelOutcome], kernel: &SeKernel) -> Result<PreferencePosterior> {
    let (points, comps) = index_duels(duels)?;
    fit_laplace(points, comps, kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn likelihood_values() {
        assert_eq!(pref_likelihood(0.3, 0.3), 0.5);
        assert!((pref_likelihood(1.0, 0.0) - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn single_duel_prefers_winner() {
        let k = SeKernel::isotropic(1, 0.2);
        let post = fit_laplace(pts(&[0.1, 0.9]), vec![Comparison { winner: 0, loser: 1 }], &k).unwrap();
        assert!(post.g_hat[0] > post.g_hat[1]);
        assert!(post.g_hat[0] > 0.0);
    }

    #[test]
    fn symmetric_duels_cancel() {
        let k = SeKernel::isotropic(1, 0.2);
        let comps = vec![Comparison { winner: 0, loser: 1 }, Comparison { winner: 1, loser: 0 }];
        let post = fit_laplace(pts(&[0.2, 0.5]), comps, &k).unwrap();
        assert!((post.g_hat[0] - post.g_hat[1]).abs() < 1e-8);
    }

    #[test]
    fn prior_prediction() {
        let post = PreferencePosterior::prior(SeKernel::isotropic(2, 0.2));
        assert_eq!(post.predict(&[0.3, 0.3]), (0.0, 1.0));
    }

    #[test]
    fn far_prediction_reverts_to_prior() {
        let k = SeKernel::isotropic(1, 0.2);
        let post = fit_laplace(pts(&[0.0, 0.1]), vec![Comparison { winner: 0, loser: 1 }], &k).unwrap();
        let (m, v) = post.predict(&[2.5]);
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-6);
    }

    #[test]
    fn variance_shrinks_with_repeated_evidence() {
        let k = SeKernel::isotropic(1, 0.2);
        let comps = vec![Comparison { winner: 0, loser: 1 }; 20];
        let post = fit_laplace(pts(&[0.2, 0.8]), comps, &k).unwrap();
        assert!(post.predict(&[0.2]).1 < 1.0);
    }

    #[test]
    fn prediction_at_training_point_is_map_value() {
        let k = SeKernel::isotropic(1, 0.3);
        let comps = vec![
            Comparison { winner: 0, loser: 1 },
            Comparison { winner: 2, loser: 1 },
            Comparison { winner: 0, loser: 2 },
        ];
        let post = fit_laplace(pts(&[0.1, 0.4, 0.5]), comps, &k).unwrap();
        for (i, p) in post.points.iter().enumerate() {
            assert!((post.mean(p) - post.g_hat[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_vanishes_at_map_and_prior_only_gradient() {
        let k = SeKernel::isotropic(1, 0.3);
        let points = pts(&[0.1, 0.4, 0.7]);
        let comps = vec![Comparison { winner: 0, loser: 1 }, Comparison { winner: 1, loser: 2 }];
        let post = fit_laplace(points.clone(), comps.clone(), &k).unwrap();
        let grad = grad_log_posterior(&points, &comps, &post.g_hat, &k).unwrap();
        assert!(grad.iter().all(|v| v.abs() < 1e-6));

        let g = [0.3, -0.2, 0.5];
        let grad = grad_log_posterior(&points, &[], &g, &k).unwrap();
        let kmat = k.gram(&points, k.jitter);
        let expected = -kmat.cholesky().unwrap().solve(&DVector::from_column_slice(&g));
        for i in 0..3 {
            assert!((grad[i] - expected[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn index_duels_rejects_self_comparison() {
        let d = DuelOutcome { phi_win: vec![0.5], phi_lose: vec![0.5], trial_index: 1 };
        assert!(index_duels(&[d]).is_err());
    }

    #[test]
    fn coincident_points_trigger_jitter_escalation() {
        let mut k = SeKernel::isotropic(1, 0.2);
        k.jitter = 0.0;
        let post = fit_laplace(pts(&[0.3, 0.3 + 1e-12]), vec![Comparison { winner: 0, loser: 1 }], &k).unwrap();
        assert!(post.jitter > 0.0);
    }

    fn duel_strategy() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0usize..5, 0usize..5), 1..12)
            .prop_map(|v| v.into_iter().filter(|(a, b)| a != b).collect::<Vec<_>>())
            .prop_filter("at least one duel", |v| !v.is_empty())
    }

    fn as_duels(pairs: &[(usize, usize)]) -> Vec<DuelOutcome> {
        let grid = [0.05, 0.3, 0.45, 0.7, 0.95];
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(w, l))| DuelOutcome { phi_win: vec![grid[w]], phi_lose: vec![grid[l]], trial_index: i })
            .collect()
    }

    fn map_by_point(post: &PreferencePosterior) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = post.points.iter().map(|p| p[0]).zip(post.g_hat.iter().copied()).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    proptest! {
        #[test]
        fn duel_order_invariance(pairs in duel_strategy(), rot in 0usize..12) {
            let k = SeKernel::isotropic(1, 0.2);
            let duels = as_duels(&pairs);
            let mut shuffled = duels.clone();
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
            shuffled.reverse();
            let a = map_by_point(&fit_duels(&duels, &k).unwrap());
            let b = map_by_point(&fit_duels(&shuffled, &k).unwrap());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 - y.1).abs() < 1e-8);
            }
        }

        #[test]
        fn label_flip_negates_map(pairs in duel_strategy()) {
            let k = SeKernel::isotropic(1, 0.2);
            let flipped: Vec<(usize, usize)> = pairs.iter().map(|&(w, l)| (l, w)).collect();
            let a = map_by_point(&fit_duels(&as_duels(&pairs), &k).unwrap());
            let b = map_by_point(&fit_duels(&as_duels(&flipped), &k).unwrap());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x.1 + y.1).abs() < 1e-8);
            }
        }

        #[test]
        fn duplicate_duel_never_shrinks_margin(pairs in duel_strategy(), pick in 0usize..12) {
            let k = SeKernel::isotropic(1, 0.2);
            let duels = as_duels(&pairs);
            let d = duels[pick % duels.len()].clone();
            let before = fit_duels(&duels, &k).unwrap();
            let mut more = duels.clone();
            more.push(d.clone());
            let after = fit_duels(&more, &k).unwrap();
            let margin = |p: &PreferencePosterior| p.mean(&d.phi_win) - p.mean(&d.phi_lose);
            prop_assert!(margin(&after) >= margin(&before) - 1e-9);
        }

        #[test]
        fn posterior_gradient_matches_finite_differences(
            pairs in duel_strategy(),
            g in prop::collection::vec(-1.5f64..1.5, 5),
        ) {
            let k = SeKernel::isotropic(1, 0.4);
            let (points, comps) = index_duels(&as_duels(&pairs)).unwrap();
            let g = &g[..points.len()];
            let grad = grad_log_posterior(&points, &comps, g, &k).unwrap();
            let h = 1e-5;
            for i in 0..g.len() {
                let mut p = g.to_vec();
                p[i] += h;
                let mut m = g.to_vec();
                m[i] -= h;
                let fd = (log_posterior(&points, &comps, &p, &k).unwrap()
                    - log_posterior(&points, &comps, &m, &k).unwrap()) / (2.0 * h);
                let denom = fd.abs().max(grad[i].abs()).max(1e-3);
                prop_assert!((fd - grad[i]).abs() / denom < 1e-5, "{} vs {}", fd, grad[i]);
            }
        }
    }
}
