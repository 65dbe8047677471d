//! Stimulus encoders: the per-pixel baseline and the deep stimulus encoder
//! (DSE) that inverts the forward model.

pub mod checkpoint;
pub mod dse;
pub mod naive;
pub mod render_grad;
pub mod train;

pub use dse::{DseArch, DseModel};
pub use naive::naive_encode;
pub use train::{dse_train, TrainConfig, TrainReport};

use crate::error::Result;
use crate::phosphene::{percept_mse, Percept, IDEAL_BRIGHTNESS};
use crate::target::TargetImage;

/// Reconstruction error of a rendered percept against its target. The
/// percept is rescaled so that ideal brightness maps to a white target pixel.
pub fn encoding_loss(percept: &Percept, target: &TargetImage) -> Result<f64> {
    let reference = Percept::from_data(
        target.height,
        target.width,
        percept.half_extent_deg,
        target.pixels.clone(),
    )?;
    percept_mse(&percept.scaled(1.0 / IDEAL_BRIGHTNESS), &reference)
}
