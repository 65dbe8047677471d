//! User-specific perceptual parameters and the box they are searched in.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_PARAMS: usize = 13;

/// Field names in canonical vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "rho",
    "lambda",
    "od_x",
    "od_y",
    "impl_x",
    "impl_y",
    "impl_rot",
    "bright_scale",
    "size_gain",
    "streak_scale",
    "theta_mean",
    "theta_spread",
    "freq_gain",
];

/// The 13 parameters that govern how one user perceives stimulation.
///
/// Lengths are in microns on the retina, positions of the optic disc in
/// degrees of visual angle, currents in microamps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserParams {
    /// Base phosphene size (µm).
    pub rho: f64,
    /// Axon-aligned elongation, 0 = round.
    pub lambda: f64,
    pub od_x: f64,
    pub od_y: f64,
    /// Implant center offset (µm).
    pub impl_x: f64,
    pub impl_y: f64,
    /// Implant rotation (rad).
    pub impl_rot: f64,
    pub bright_scale: f64,
    /// How strongly phosphene size grows with amplitude above threshold.
    pub size_gain: f64,
    /// Spread of axonal streaks at a given elongation.
    pub streak_scale: f64,
    /// Mean perceptual threshold (µA).
    pub theta_mean: f64,
    /// Relative per-electrode threshold variation.
    pub theta_spread: f64,
    /// Frequency to brightness coupling.
    pub freq_gain: f64,
}

impl UserParams {
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        [
            self.rho,
            self.lambda,
            self.od_x,
            self.od_y,
            self.impl_x,
            self.impl_y,
            self.impl_rot,
            self.bright_scale,
            self.size_gain,
            self.streak_scale,
            self.theta_mean,
            self.theta_spread,
            self.freq_gain,
        ]
    }

    pub fn from_array(v: &[f64; N_PARAMS]) -> Self {
        Self {
            rho: v[0],
            lambda: v[1],
            od_x: v[2],
            od_y: v[3],
            impl_x: v[4],
            impl_y: v[5],
            impl_rot: v[6],
            bright_scale: v[7],
            size_gain: v[8],
            streak_scale: v[9],
            theta_mean: v[10],
            theta_spread: v[11],
            freq_gain: v[12],
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; N_PARAMS] = v.try_into().map_err(|_| {
            Error::InvalidParam(format!("expected {N_PARAMS} values, got {}", v.len()))
        })?;
        Ok(Self::from_array(&arr))
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.to_array();
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidParam(format!("{} is not finite", PARAM_NAMES[i])));
        }
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParam(msg.to_string()))
            }
        };
        check(self.rho > 0.0, "rho must be > 0")?;
        check((0.0..1.0).contains(&self.lambda), "lambda must lie in [0, 1)")?;
        check(self.bright_scale > 0.0, "bright_scale must be > 0")?;
        check(self.size_gain >= 0.0, "size_gain must be >= 0")?;
        check(self.streak_scale > 0.0, "streak_scale must be > 0")?;
        check(self.theta_mean > 0.0, "theta_mean must be > 0")?;
        check(self.theta_spread >= 0.0, "theta_spread must be >= 0")?;
        Ok(())
    }
}

/// Per-dimension `[low, high]` ranges for the 13 parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiBox {
    pub low: [f64; N_PARAMS],
    pub high: [f64; N_PARAMS],
}

impl Default for PhiBox {
    fn default() -> Self {
        Self::new(
            [100.0, 0.0, -17.0, -2.0, -400.0, -400.0, -0.5, 0.5, 0.0, 0.5, 10.0, 0.0, 0.0],
            [300.0, 0.6, -13.0, 2.0, 400.0, 400.0, 0.5, 1.5, 0.5, 1.5, 50.0, 0.3, 0.5],
        )
        .expect("default box is valid")
    }
}

impl PhiBox {
    pub fn new(low: [f64; N_PARAMS], high: [f64; N_PARAMS]) -> Result<Self> {
        for i in 0..N_PARAMS {
            if !(low[i] < high[i]) {
                return Err(Error::InvalidParam(format!(
                    "box dimension {} has low {} >= high {}",
                    PARAM_NAMES[i], low[i], high[i]
                )));
            }
        }
        Ok(Self { low, high })
    }

    pub fn midpoint(&self) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| 0.5 * (self.low[i] + self.high[i]))
    }

    /// Min-max normalization into the unit cube (values outside the box map
    /// outside `[0, 1]`).
    pub fn normalize(&self, v: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| (v[i] - self.low[i]) / (self.high[i] - self.low[i]))
    }

    pub fn denormalize(&self, u: &[f64; N_PARAMS]) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| self.low[i] + u[i] * (self.high[i] - self.low[i]))
    }

    pub fn contains(&self, v: &[f64; N_PARAMS]) -> bool {
        (0..N_PARAMS).all(|i| v[i] >= self.low[i] && v[i] <= self.high[i])
    }

    /// Box grown by `frac` of its width on every side.
    pub fn expanded(&self, frac: f64) -> Self {
        let w: [f64; N_PARAMS] = std::array::from_fn(|i| self.high[i] - self.low[i]);
        Self {
            low: std::array::from_fn(|i| self.low[i] - frac * w[i]),
            high: std::array::from_fn(|i| self.high[i] + frac * w[i]),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> [f64; N_PARAMS] {
        std::array::from_fn(|i| rng.random_range(self.low[i]..self.high[i]))
    }
}

/// The guess used by an encoder that is not personalized: the midpoint of
/// every range.
pub fn dse_default_phi(phi_box: &PhiBox) -> UserParams {
    UserParams::from_array(&phi_box.midpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midpoint_of_unit_box() {
        let b = PhiBox::new([0.0; N_PARAMS], [1.0; N_PARAMS]).unwrap();
        assert!(dse_default_phi(&b).to_array().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn midpoint_rho_and_asymmetric() {
        let mut low = [0.0; N_PARAMS];
        let mut high = [1.0; N_PARAMS];
        low[0] = 100.0;
        high[0] = 500.0;
        low[3] = -1.0;
        high[3] = 3.0;
        let phi = dse_default_phi(&PhiBox::new(low, high).unwrap());
        assert_eq!(phi.rho, 300.0);
        assert_eq!(phi.od_y, 1.0);
    }

    #[test]
    fn rejects_degenerate_box() {
        let mut high = [1.0; N_PARAMS];
        high[5] = 0.0;
        assert!(PhiBox::new([0.0; N_PARAMS], high).is_err());
    }

    #[test]
    fn default_midpoint_is_valid() {
        dse_default_phi(&PhiBox::default()).validate().unwrap();
    }

    #[test]
    fn validate_rejects_bad_lambda() {
        let mut p = dse_default_phi(&PhiBox::default());
        p.lambda = 1.0;
        assert!(p.validate().is_err());
        p.lambda = -0.1;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn vector_roundtrip(v in prop::array::uniform13(-1e3f64..1e3)) {
            let p = UserParams::from_array(&v);
            prop_assert_eq!(p.to_array(), v);
            let json = serde_json::to_string(&p).unwrap();
            let back: UserParams = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn normalize_inverts(u in prop::array::uniform13(0.0f64..1.0)) {
            let b = PhiBox::default();
            let back = b.normalize(&b.denormalize(&u));
            for i in 0..N_PARAMS {
                prop_assert!((back[i] - u[i]).abs() < 1e-12);
            }
        }
    }
}
