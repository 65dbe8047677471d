//! Experimental conditions and simulated subjects.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{PhiBox, UserParams};
use crate::phosphene::ThresholdProfile;

/// Stream ids used when deriving per-purpose generators from a seed.
pub(crate) mod stream {
    pub const SUBJECT: u64 = 1;
    pub const PROFILE: u64 = 2;
    pub const OPTIMIZER: u64 = 3;
    pub const DUEL: u64 = 4;
    pub const AGENT: u64 = 5;
    pub const HELDOUT: u64 = 6;
    pub const RUN: u64 = 7;
}

/// Independent generator for `(seed, purpose, index)`.
pub fn derived_rng(seed: u64, purpose: u64, index: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | (index & 0xffff_ffff));
    rng
}

pub fn derived_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    derived_rng(seed, purpose, index).random()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKind {
    Main,
    ThresholdMisspecification,
    OutOfDistribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub kind: ConditionKind,
    /// Range of the factor multiplying the assumed thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tm_factor_range: Option<(f64, f64)>,
    /// Fraction of each range added on both sides for ground-truth draws.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_extension: Option<f64>,
}

impl Condition {
    pub fn main() -> Self {
        Self {
            kind: ConditionKind::Main,
            tm_factor_range: None,
            ood_extension: None,
        }
    }

    pub fn threshold_misspecification() -> Self {
        Self {
            kind: ConditionKind::ThresholdMisspecification,
            tm_factor_range: Some((1.0, 4.0)),
            ood_extension: None,
        }
    }

    pub fn out_of_distribution() -> Self {
        Self {
            kind: ConditionKind::OutOfDistribution,
            tm_factor_range: None,
            ood_extension: Some(0.25),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ConditionKind::Main => "main",
            ConditionKind::ThresholdMisspecification => "tm",
            ConditionKind::OutOfDistribution => "ood",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ConditionKind::Main => self.tm_factor_range.is_none() && self.ood_extension.is_none(),
            ConditionKind::ThresholdMisspecification => {
                self.ood_extension.is_none()
                    && matches!(self.tm_factor_range, Some((lo, hi)) if lo > 0.0 && lo <= hi)
            }
            ConditionKind::OutOfDistribution => {
                self.tm_factor_range.is_none() && matches!(self.ood_extension, Some(f) if f > 0.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("inconsistent condition {self:?}")))
        }
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "main" => Ok(Self::main()),
            "tm" | "threshold_misspecification" => Ok(Self::threshold_misspecification()),
            "ood" | "out_of_distribution" => Ok(Self::out_of_distribution()),
            _ => Err(Error::UnknownCondition(s.to_string())),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSpec {
    pub id: String,
    pub seed: u64,
    pub condition: Condition,
    pub true_phi: UserParams,
    pub true_profile: ThresholdProfile,
    /// Assumed over true threshold ratio used by every encoder.
    pub threshold_factor: f64,
}

const MAX_REJECTIONS: usize = 100_000;

/// Draws a subject for `condition`. Ground truth lies inside `phi_box` for
/// the main and misspecification conditions and outside it for OOD.
pub fn make_subject(condition: &Condition, seed: u64, phi_box: &PhiBox, n_electrodes: usize) -> Result<SubjectSpec> {
    condition.validate()?;
    let mut rng = derived_rng(seed, stream::SUBJECT, 0);
    let true_phi = match condition.kind {
        ConditionKind::Main | ConditionKind::ThresholdMisspecification => UserParams::from_array(&phi_box.sample(&mut rng)),
        ConditionKind::OutOfDistribution => {
            let wide = phi_box.expanded(condition.ood_extension.unwrap_or(0.25));
            let mut found = None;
            for _ in 0..MAX_REJECTIONS {
                let v = wide.sample(&mut rng);
                let phi = UserParams::from_array(&v);
                if !phi_box.contains(&v) && phi.validate().is_ok() {
                    found = Some(phi);
                    break;
                }
            }
            found.ok_or_else(|| Error::InvalidParam("no valid out-of-distribution draw".into()))?
        }
    };
    let threshold_factor = match condition.tm_factor_range {
        Some((lo, hi)) if hi > lo => rng.random_range(lo..=hi),
        Some((lo, _)) => lo,
        None => 1.0,
    };
    let true_profile = ThresholdProfile::sample_with(n_electrodes, &mut derived_rng(seed, stream::PROFILE, 0));
    Ok(SubjectSpec {
        id: format!("{}-{seed}", condition.name()),
        seed,
        condition: condition.clone(),
        true_phi,
        true_profile,
        threshold_factor,
    })
}
