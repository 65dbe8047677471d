//! Champion/challenger duel proposals over a fixed candidate pool.
//!
//! The champion maximizes the posterior mean of the latent utility. The
//! challenger maximizes the variance of `Φ(g(φ) − g(champion))`, estimated
//! by Monte Carlo with common random numbers so that ties resolve to the
//! lowest candidate index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{PhiBox, UserParams, N_PARAMS};
use crate::preference::{fit_duels, DuelOutcome, PreferencePosterior, SeKernel};
use crate::stats::normal_cdf;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub pool_size: usize,
    pub mc_samples: usize,
    pub lengthscale: f64,
    pub signal_variance: f64,
    pub jitter: f64,
    /// Indices of the searched dimensions; the rest stay at the box midpoint.
    pub search_dims: Vec<usize>,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            pool_size: 512,
            mc_samples: 256,
            lengthscale: 0.2,
            signal_variance: 1.0,
            jitter: 1e-6,
            search_dims: (0..N_PARAMS).collect(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn kernel(&self) -> SeKernel {
        SeKernel {
            signal_variance: self.signal_variance,
            lengthscales: vec![self.lengthscale; self.search_dims.len()],
            jitter: self.jitter,
        }
    }
}

/// Seeded uniform candidates in the unit cube.
pub fn candidate_pool(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x706f_6f6c);
    (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect()
}

/// Standard normals shared by every candidate in one acquisition.
pub fn acquisition_normals(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d63);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Population variance of `Φ(μ + σ z)` over the supplied normals.
pub fn probit_variance(mu: f64, sigma: f64, normals: &[f64]) -> f64 {
    let vals: Vec<f64> = normals.iter().map(|z| normal_cdf(mu + sigma * z)).collect();
    let m = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64
}

/// Index of the candidate with the largest posterior mean.
pub fn select_champion(posterior: &PreferencePosterior, candidates: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let m = posterior.mean(c);
        if m > best_val {
            best = i;
            best_val = m;
        }
    }
    best
}

/// Index of the most uncertain challenger to `champion`.
pub fn select_challenger(
    posterior: &PreferencePosterior,
    candidates: &[Vec<f64>],
    champion: usize,
    normals: &[f64],
) -> usize {
    let anchor = posterior.anchor(&candidates[champion]);
    let mut best = usize::MAX;
    let mut best_val = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        if i == champion || c == &candidates[champion] {
            continue;
        }
        let (m, v, cov) = posterior.predict_joint(c, &anchor);
        let var_d = (v + anchor.var - 2.0 * cov).max(0.0);
        let score = probit_variance(m - anchor.mean, var_d.sqrt(), normals);
        if score > best_val {
            best = i;
            best_val = score;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelRecord {
    pub trial: usize,
    /// Candidate coordinates in the normalized search space.
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub chose_first: bool,
}

/// Optimizer state for one session.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub phi_box: PhiBox,
    pool: Vec<Vec<f64>>,
    normals: Vec<f64>,
    history: Vec<DuelRecord>,
    posterior: PreferencePosterior,
    pending: Option<(Vec<f64>, Vec<f64>)>,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, phi_box: PhiBox) -> Result<Self> {
        let pool = candidate_pool(config.pool_size, config.search_dims.len(), config.seed);
        Self::with_pool(config, phi_box, pool)
    }

    /// State over an explicit pool of normalized search-space points.
    pub fn with_pool(config: OptimizerConfig, phi_box: PhiBox, pool: Vec<Vec<f64>>) -> Result<Self> {
        let dims = &config.search_dims;
        if dims.is_empty() || dims.iter().any(|&d| d >= N_PARAMS) {
            return Err(Error::InvalidParam(format!("bad search dimensions {dims:?}")));
        }
        if pool.len() < 2 || pool.iter().any(|p| p.len() != dims.len()) {
            return Err(Error::InvalidParam("candidate pool needs two points of the search dimension".into()));
        }
        let kernel = config.kernel();
        kernel.validate()?;
        Ok(Self {
            normals: acquisition_normals(config.mc_samples.max(1), config.seed),
            posterior: PreferencePosterior::prior(kernel),
            config,
            phi_box,
            pool,
            history: Vec::new(),
            pending: None,
        })
    }

    pub fn trial_count(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[DuelRecord] {
        &self.history
    }

    pub fn posterior(&self) -> &PreferencePosterior {
        &self.posterior
    }

    pub fn pool(&self) -> &[Vec<f64>] {
        &self.pool
    }

    /// Pool points followed by historical points not already in the pool.
    pub fn candidates(&self) -> Vec<Vec<f64>> {
        let mut out = self.pool.clone();
        for r in &self.history {
            for p in [&r.first, &r.second] {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
        }
        out
    }

    /// Maps normalized search coordinates to a full parameter set.
    pub fn to_phi(&self, point: &[f64]) -> UserParams {
        let b = &self.phi_box;
        let mut v = b.midpoint();
        for (&d, &x) in self.config.search_dims.iter().zip(point) {
            v[d] = b.low[d] + x * (b.high[d] - b.low[d]);
        }
        UserParams::from_array(&v)
    }

    fn champion_point(&self, candidates: &[Vec<f64>]) -> usize {
        select_champion(&self.posterior, candidates)
    }

    /// Proposes the next duel as normalized search-space points. Repeated
    /// calls without a recorded choice return the same pair.
    pub fn propose(&mut self) -> (Vec<f64>, Vec<f64>) {
        if let Some(p) = &self.pending {
            return p.clone();
        }
        let candidates = self.candidates();
        let champ = self.champion_point(&candidates);
        let chall = select_challenger(&self.posterior, &candidates, champ, &self.normals);
        let pair = (candidates[champ].clone(), candidates[chall].clone());
        self.pending = Some(pair.clone());
        pair
    }

    pub fn propose_duel(&mut self) -> (UserParams, UserParams) {
        let (a, b) = self.propose();
        (self.to_phi(&a), self.to_phi(&b))
    }

    pub fn pending(&self) -> Option<&(Vec<f64>, Vec<f64>)> {
        self.pending.as_ref()
    }

    /// Records the outcome of the pending duel numbered `trial` (1-based).
    pub fn record_choice(&mut self, trial: usize, chose_first: bool) -> Result<()> {
        let expected = self.history.len() + 1;
        if trial != expected {
            return Err(Error::StaleTrial { expected, got: trial });
        }
        let (first, second) = match self.pending.take() {
            Some(p) => p,
            None => return Err(Error::StaleTrial { expected, got: trial }),
        };
        self.history.push(DuelRecord {
            trial,
            first,
            second,
            chose_first,
        });
        self.refit()
    }

    fn refit(&mut self) -> Result<()> {
        let duels: Vec<DuelOutcome> = self
            .history
            .iter()
            .map(|r| {
                let (w, l) = if r.chose_first { (&r.first, &r.second) } else { (&r.second, &r.first) };
                DuelOutcome {
                    phi_win: w.clone(),
                    phi_lose: l.clone(),
                    trial_index: r.trial,
                }
            })
            .collect();
        self.posterior = fit_duels(&duels, &self.config.kernel())?;
        Ok(())
    }

    /// Normalized coordinates of the current champion.
    pub fn best_point(&self) -> Result<Vec<f64>> {
        if self.history.is_empty() {
            return Err(Error::NoDuels);
        }
        let candidates = self.candidates();
        Ok(candidates[self.champion_point(&candidates)].clone())
    }

    pub fn best_phi(&self) -> Result<UserParams> {
        Ok(self.to_phi(&self.best_point()?))
    }

    /// Rebuilds a state by replaying recorded choices.
    pub fn replay(config: OptimizerConfig, phi_box: PhiBox, choices: &[bool]) -> Result<Self> {
        let mut s = Self::new(config, phi_box)?;
        for (i, &c) in choices.iter().enumerate() {
            s.propose();
            s.record_choice(i + 1, c)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(seed: u64) -> OptimizerState {
        OptimizerState::new(OptimizerConfig { seed, ..Default::default() }, PhiBox::default()).unwrap()
    }

    #[test]
    fn zero_duels_champion_is_first_pool_point() {
        let mut s = state(3);
        let (a, b) = s.propose();
        assert_eq!(a, s.pool()[0]);
        assert_ne!(a, b);
        assert!(matches!(s.best_phi(), Err(Error::NoDuels)));
    }

    #[test]
    fn proposals_are_stable_until_recorded() {
        let mut s = state(1);
        let p = s.propose();
        assert_eq!(s.propose(), p);
        s.record_choice(1, true).unwrap();
        assert_eq!(s.trial_count(), 1);
        assert!(matches!(s.record_choice(1, true), Err(Error::StaleTrial { .. })));
        assert!(matches!(s.record_choice(2, true), Err(Error::StaleTrial { .. })));
    }

    #[test]
    fn winner_has_higher_mean() {
        let mut s = state(2);
        let (a, b) = s.propose();
        s.record_choice(1, false).unwrap();
        let best = s.best_point().unwrap();
        assert!(s.posterior().mean(&best) > s.posterior().mean(&a));
        assert_eq!(best, b);
    }

    #[test]
    fn equal_seeds_and_histories_agree() {
        let choices = [true, false, false, true, true, false, true];
        let a = OptimizerState::replay(OptimizerConfig { seed: 9, ..Default::default() }, PhiBox::default(), &choices).unwrap();
        let b = OptimizerState::replay(OptimizerConfig { seed: 9, ..Default::default() }, PhiBox::default(), &choices).unwrap();
        assert_eq!(a.best_phi().unwrap(), b.best_phi().unwrap());
        assert_eq!(a.history(), b.history());
    }

    #[test]
    fn probit_variance_grows_with_spread() {
        let z = acquisition_normals(256, 0);
        assert!(probit_variance(0.3, 0.0, &z) < 1e-25);
        assert!(probit_variance(0.0, 1.0, &z) > probit_variance(0.0, 0.5, &z));
    }

    #[test]
    fn unsearched_dimensions_stay_at_midpoint() {
        let cfg = OptimizerConfig { search_dims: vec![0, 2], pool_size: 8, ..Default::default() };
        let s = OptimizerState::new(cfg, PhiBox::default()).unwrap();
        let phi = s.to_phi(&[0.0, 1.0]).to_array();
        let b = PhiBox::default();
        let mid = b.midpoint();
        assert_eq!(phi[0], b.low[0]);
        assert_eq!(phi[2], b.high[2]);
        assert_eq!(phi[1], mid[1]);
        assert_eq!(phi[12], mid[12]);
    }
}
