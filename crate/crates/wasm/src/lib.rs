//! Browser bindings for the demo page in `www/`.
//!
//! Every export returns JSON; images are base64 PNGs ready for a `data:`
//! URL. Parameter vectors follow the order of `PARAM_NAMES`.

use hilo_core::digits::render_digit;
use hilo_core::encoders::naive_encode;
use hilo_core::params::{dse_default_phi, N_PARAMS, PARAM_NAMES};
use hilo_core::percept_io::encode_png_base64;
use hilo_core::phosphene::{
    phosphene_params, render_percept, ArraySpec, ElectrodeArray, GridSpec, Pulse, Stimulus, ThresholdProfile,
    IDEAL_BRIGHTNESS,
};
use hilo_core::session::brightness_scale;
use hilo_core::target::TargetImage;
use hilo_core::{Error, PhiBox, Result, UserParams};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Brightness at which displayed images saturate.
const DISPLAY_CAP: f64 = 10.0;

fn user(phi: &[f64]) -> Result<UserParams> {
    let u = UserParams::from_slice(phi)?;
    u.validate()?;
    Ok(u)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string(v)?)
}

/// Names, box limits and default values of the user parameters.
pub fn parameters_json() -> Result<String> {
    let b = PhiBox::default();
    to_json(&json!({
        "names": PARAM_NAMES,
        "low": b.low,
        "high": b.high,
        "default": dse_default_phi(&b).to_array(),
    }))
}

/// A synthetic digit encoded by the naive encoder with
/// `amp_max = amp_units · theta_mean` and rendered for `phi`.
pub fn digit_percept_json(phi: &[f64], digit: u8, amp_units: f64) -> Result<String> {
    if !(amp_units > 0.0 && amp_units.is_finite()) {
        return Err(Error::InvalidParam(format!("amplitude scale must be > 0, got {amp_units}")));
    }
    let u = user(phi)?;
    let mut rng = ChaCha8Rng::seed_from_u64(u64::from(digit));
    let target = TargetImage::from_u8(28, 28, &render_digit(digit, &mut rng), format!("digit {}", digit % 10))?.resized(16, 16);
    let spec = ArraySpec::default();
    let stimulus = naive_encode(&target, &spec, amp_units * u.theta_mean)?;
    let array = ElectrodeArray::new(spec, &u, &ThresholdProfile::uniform(spec.n_electrodes()))?;
    let percept = render_percept(&stimulus, &array, &u, &GridSpec::default())?;
    let target_view = target.as_percept(&GridSpec { height: 16, width: 16, half_extent_deg: 1.0 })?;
    to_json(&json!({
        "image": encode_png_base64(&percept, DISPLAY_CAP)?,
        "width": percept.width,
        "height": percept.height,
        "brightness": percept.displayed_brightness(),
        "target": encode_png_base64(&target_view, 1.0)?,
        "active_electrodes": stimulus.pulses.iter().filter(|p| p.amplitude_ua > 0.0).count(),
    }))
}

/// One electrode at the array center driven at `multiple` times its
/// threshold: brightness-law value, blob shape and rendered image.
pub fn phosphene_json(phi: &[f64], multiple: f64, frequency_hz: f64) -> Result<String> {
    let mut u = user(phi)?;
    u.impl_x = 0.0;
    u.impl_y = 0.0;
    let spec = ArraySpec { rows: 1, cols: 1, pitch_um: 400.0 };
    let array = ElectrodeArray::new(spec, &u, &ThresholdProfile::uniform(1))?;
    let pulse = Pulse::new(multiple * array.thresholds_ua[0], frequency_hz);
    let p = phosphene_params(&array, 0, &pulse, &u)?;
    let grid = GridSpec { height: 64, width: 64, half_extent_deg: 4.0 };
    let percept = render_percept(&Stimulus { pulses: vec![pulse] }, &array, &u, &grid)?;
    to_json(&json!({
        "image": encode_png_base64(&percept, DISPLAY_CAP)?,
        "width": percept.width,
        "height": percept.height,
        "brightness_law": p.brightness,
        "peak": p.peak(),
        "displayed": percept.displayed_brightness(),
        "sigma_major_deg": p.sigma_major,
        "sigma_minor_deg": p.sigma_minor,
        "angle_rad": p.angle,
    }))
}

/// The anchor percepts shown during the tutorial.
pub fn brightness_scale_json() -> Result<String> {
    to_json(&brightness_scale(DISPLAY_CAP)?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn parameters() -> std::result::Result<String, JsError> {
    js(parameters_json())
}

#[wasm_bindgen(js_name = digitPercept)]
pub fn digit_percept(phi: &[f64], digit: u8, amp_units: f64) -> std::result::Result<String, JsError> {
    js(digit_percept_json(phi, digit, amp_units))
}

#[wasm_bindgen]
pub fn phosphene(phi: &[f64], multiple: f64, frequency_hz: f64) -> std::result::Result<String, JsError> {
    js(phosphene_json(phi, multiple, frequency_hz))
}

#[wasm_bindgen(js_name = brightnessScale)]
pub fn brightness_scale_js() -> std::result::Result<String, JsError> {
    js(brightness_scale_json())
}

/// Default amplitude scale of the naive encoder in units of `theta_mean`.
#[wasm_bindgen(js_name = idealBrightness)]
pub fn ideal_brightness() -> f64 {
    IDEAL_BRIGHTNESS
}

#[wasm_bindgen(js_name = paramCount)]
pub fn param_count() -> usize {
    N_PARAMS
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    fn default_phi() -> Vec<f64> {
        dse_default_phi(&PhiBox::default()).to_array().to_vec()
    }

    #[test]
    fn parameters_describe_the_box() {
        let v: Value = serde_json::from_str(&parameters_json().unwrap()).unwrap();
        assert_eq!(v["names"].as_array().unwrap().len(), N_PARAMS);
        assert_eq!(v["default"][0], 200.0);
    }

    #[test]
    fn digit_percept_renders() {
        let v: Value = serde_json::from_str(&digit_percept_json(&default_phi(), 8, 2.0).unwrap()).unwrap();
        assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(48), Some(48)));
        assert!(v["active_electrodes"].as_u64().unwrap() > 0);
        let dark: Value = serde_json::from_str(&digit_percept_json(&default_phi(), 8, 0.4).unwrap()).unwrap();
        assert_eq!(dark["brightness"], "0.0");
        assert!(digit_percept_json(&default_phi()[..5], 8, 2.0).is_err());
        assert!(digit_percept_json(&default_phi(), 8, -1.0).is_err());
    }

    #[test]
    fn phosphene_follows_the_brightness_law() {
        let mut phi = default_phi();
        phi[7] = 1.0; // bright_scale
        phi[12] = 0.4; // freq_gain
        let v: Value = serde_json::from_str(&phosphene_json(&phi, 2.0, 20.0).unwrap()).unwrap();
        assert_eq!(v["brightness_law"], 2.0);
        let below: Value = serde_json::from_str(&phosphene_json(&phi, 0.9, 20.0).unwrap()).unwrap();
        assert_eq!(below["brightness_law"], 0.0);
        assert_eq!(below["displayed"], "0.0");
    }

    #[test]
    fn scale_has_four_anchors() {
        let v: Value = serde_json::from_str(&brightness_scale_json().unwrap()).unwrap();
        let shown: Vec<&str> = v.as_array().unwrap().iter().map(|e| e["brightness"].as_str().unwrap()).collect();
        assert_eq!(shown, ["0.0", "2.0", "5.0", "10.0"]);
    }
}
