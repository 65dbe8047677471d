//! Brightness-scale examples shown during the tutorial.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{dse_default_phi, PhiBox};
use crate::percept_io::encode_png_base64;
use crate::phosphene::{
    render_percept, ArraySpec, ElectrodeArray, GridSpec, Percept, Pulse, Stimulus, ThresholdProfile,
    MICRONS_PER_DEGREE, REFERENCE_FREQUENCY_HZ,
};

/// Anchors of the displayed scale: darkness, ideal, overly bright,
/// extremely bright.
pub const SCALE_LEVELS: [f64; 4] = [0.0, 2.0, 5.0, 10.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleExample {
    pub level: f64,
    pub brightness: String,
    /// Base64 8-bit grayscale PNG.
    pub image: String,
    pub image_width: usize,
    pub image_height: usize,
}

/// A single round phosphene of unit determinant at the field center driven
/// at `level` times threshold. Its peak equals `level`.
pub fn scale_percept(level: f64, half_extent_deg: f64) -> Result<Percept> {
    let mut user = dse_default_phi(&PhiBox::default());
    user.rho = MICRONS_PER_DEGREE;
    user.lambda = 0.0;
    user.impl_x = 0.0;
    user.impl_y = 0.0;
    user.impl_rot = 0.0;
    user.bright_scale = 1.0;
    user.size_gain = 0.0;
    let spec = ArraySpec {
        rows: 1,
        cols: 1,
        pitch_um: 400.0,
    };
    let array = ElectrodeArray::new(spec, &user, &ThresholdProfile::uniform(1))?;
    let stimulus = Stimulus {
        pulses: vec![Pulse::new(level * array.thresholds_ua[0], REFERENCE_FREQUENCY_HZ)],
    };
    // An odd grid puts a pixel center on the phosphene center.
    let grid = GridSpec {
        height: 49,
        width: 49,
        half_extent_deg,
    };
    render_percept(&stimulus, &array, &user, &grid)
}

pub fn brightness_scale(cap: f64) -> Result<Vec<ScaleExample>> {
    SCALE_LEVELS
        .iter()
        .map(|&level| {
            let p = scale_percept(level, 4.0)?;
            Ok(ScaleExample {
                level,
                brightness: p.displayed_brightness(),
                image: encode_png_base64(&p, cap)?,
                image_width: p.width,
                image_height: p.height,
            })
        })
        .collect()
}
