//! Simulated participant: prefers the percept with the lower reconstruction
//! error, with a probit choice rule and optional lapses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::encoding_loss;
use crate::error::{Error, Result};
use crate::phosphene::Percept;
use crate::stats::normal_cdf;
use crate::target::TargetImage;

/// Temperature at which the agent picks the lower-error percept in 85% of
/// optimization duels: the fixed point of
/// `experiment::runner::calibrate_agent` for the reference encoder
/// (20,000 training steps, seed 0).
pub const DEFAULT_TEMPERATURE: f64 = 0.0143;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub temperature: f64,
    pub lapse_rate: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            lapse_rate: 0.0,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParam(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.lapse_rate) {
            return Err(Error::InvalidParam(format!("lapse rate must be in [0, 1], got {}", self.lapse_rate)));
        }
        Ok(())
    }
}

/// Probability of choosing the first option given both errors.
pub fn choice_probability(mse_first: f64, mse_second: f64, temperature: f64) -> f64 {
    normal_cdf((mse_second - mse_first) / temperature)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentDecision {
    pub chose_first: bool,
    /// Probability of choosing the first option under the error rule
    /// (before lapses).
    pub p_first: f64,
}

/// Draws a choice from precomputed errors.
pub fn choose_by_error<R: Rng + ?Sized>(mse_first: f64, mse_second: f64, config: &AgentConfig, rng: &mut R) -> AgentDecision {
    let p_first = choice_probability(mse_first, mse_second, config.temperature);
    let lapse = rng.random::<f64>() < config.lapse_rate;
    let u: f64 = rng.random();
    let chose_first = if lapse { u < 0.5 } else { u < p_first };
    AgentDecision { chose_first, p_first }
}

/// Chooses between two percepts of `target`.
pub fn agent_choose<R: Rng + ?Sized>(
    first: &Percept,
    second: &Percept,
    target: &TargetImage,
    config: &AgentConfig,
    rng: &mut R,
) -> Result<AgentDecision> {
    config.validate()?;
    let m1 = encoding_loss(first, target)?;
    let m2 = encoding_loss(second, target)?;
    Ok(choose_by_error(m1, m2, config, rng))
}

/// Fraction of trials where the observed choice matches the agent's more
/// probable choice; indifferent trials count half.
pub fn agreement(chose_first: &[bool], agent_p_first: &[f64]) -> Result<f64> {
    if chose_first.len() != agent_p_first.len() {
        return Err(crate::error::shape_err(chose_first.len(), agent_p_first.len()));
    }
    if chose_first.is_empty() {
        return Err(Error::NoDuels);
    }
    let total: f64 = chose_first
        .iter()
        .zip(agent_p_first)
        .map(|(&c, &p)| {
            if p == 0.5 {
                0.5
            } else if (p > 0.5) == c {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / chose_first.len() as f64)
}

/// Temperature at which the mean probability of picking the lower-error
/// option over `error_gaps` (absolute error differences) equals `rate`.
pub fn calibrate_temperature(error_gaps: &[f64], rate: f64) -> Result<f64> {
    if error_gaps.is_empty() || !(0.5..1.0).contains(&rate) {
        return Err(Error::InvalidParam("calibration needs gaps and a rate in [0.5, 1)".into()));
    }
    let hit = |t: f64| error_gaps.iter().map(|g| normal_cdf(g.abs() / t)).sum::<f64>() / error_gaps.len() as f64;
    let (mut lo, mut hi) = (1e-12_f64, 1e3_f64);
    if hit(lo) < rate {
        return Err(Error::InvalidParam("rate unreachable: too many zero gaps".into()));
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if hit(mid) > rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}
