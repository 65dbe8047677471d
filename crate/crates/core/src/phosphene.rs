//! Forward model: electrode geometry, axon-aligned Gaussian phosphenes and
//! their summation into a percept.
//!
//! Each supra-threshold electrode contributes
//!
//! ```text
//! b(x, y) = 2π · b_e · det(Σ_e) · N([x, y] | μ_e, Σ_e)
//!         = b_e · √det(Σ_e) · exp(-½ dᵀ Σ_e⁻¹ d)
//! ```
//!
//! where `Σ_e = R(α_e) diag(σ_major², σ_minor²) R(α_e)ᵀ` is aligned with the
//! local axon direction `α_e`. Contributions are summed over electrodes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::params::UserParams;

/// Linear retinotopic magnification.
pub const MICRONS_PER_DEGREE: f64 = 280.0;
/// Frequency at which the brightness law reduces to `A / θ_e`.
pub const REFERENCE_FREQUENCY_HZ: f64 = 20.0;
pub const DEFAULT_PULSE_DURATION_MS: f64 = 0.45;
/// Brightness judged ideal on the displayed scale (1 is threshold).
pub const IDEAL_BRIGHTNESS: f64 = 2.0;

/// Rectangular electrode grid with uniform pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub rows: usize,
    pub cols: usize,
    pub pitch_um: f64,
}

impl Default for ArraySpec {
    fn default() -> Self {
        Self {
            rows: 10,
            cols: 10,
            pitch_um: 400.0,
        }
    }
}

impl ArraySpec {
    pub fn n_electrodes(&self) -> usize {
        self.rows * self.cols
    }
}

/// Pixel grid over a square patch of the visual field centered on fixation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Half-width of the field in degrees.
    pub half_extent_deg: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            half_extent_deg: 14.0,
        }
    }
}

impl GridSpec {
    /// Coarse grid that matches the 16×16 encoder targets and covers the
    /// default array.
    pub fn target() -> Self {
        Self {
            height: 16,
            width: 16,
            half_extent_deg: 8.0,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Pixel-center x coordinates (deg), left to right.
    pub fn xs(&self) -> Vec<f64> {
        let step = 2.0 * self.half_extent_deg / self.width as f64;
        (0..self.width)
            .map(|j| -self.half_extent_deg + (j as f64 + 0.5) * step)
            .collect()
    }

    /// Pixel-center y coordinates (deg), top row first.
    pub fn ys(&self) -> Vec<f64> {
        let step = 2.0 * self.half_extent_deg / self.height as f64;
        (0..self.height)
            .map(|i| self.half_extent_deg - (i as f64 + 0.5) * step)
            .collect()
    }
}

/// Canonical grid centered at the origin, rotated by `impl_rot` and shifted by
/// `(impl_x, impl_y)`. Row 0 is the top row; electrodes are row-major.
pub fn electrode_positions(spec: &ArraySpec, user: &UserParams) -> Vec<[f64; 2]> {
    let (s, c) = user.impl_rot.sin_cos();
    let x0 = (spec.cols as f64 - 1.0) / 2.0;
    let y0 = (spec.rows as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(spec.n_electrodes());
    for i in 0..spec.rows {
        for j in 0..spec.cols {
            let x = (j as f64 - x0) * spec.pitch_um;
            let y = (y0 - i as f64) * spec.pitch_um;
            out.push([c * x - s * y + user.impl_x, s * x + c * y + user.impl_y]);
        }
    }
    out
}

/// Per-electrode standardized threshold offsets `u_e`, fixed for a subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdProfile(pub Vec<f64>);

impl ThresholdProfile {
    pub fn uniform(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Standard normal draws clipped to `[-0.9, 3]`.
    pub fn sample(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::sample_with(n, &mut rng)
    }

    pub fn sample_with<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self(
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z.clamp(-0.9, 3.0)
                })
                .collect(),
        )
    }

    /// `θ_e / theta_mean` for each electrode.
    pub fn relative_thresholds(&self, spread: f64) -> Vec<f64> {
        self.0.iter().map(|u| 1.0 + spread * u).collect()
    }
}

/// An electrode array placed on a particular retina.
#[derive(Clone, Debug, PartialEq)]
pub struct ElectrodeArray {
    pub spec: ArraySpec,
    /// Retinal coordinates (µm).
    pub positions_um: Vec<[f64; 2]>,
    /// Perceptual thresholds θ_e (µA).
    pub thresholds_ua: Vec<f64>,
}

impl ElectrodeArray {
    pub fn new(spec: ArraySpec, user: &UserParams, profile: &ThresholdProfile) -> Result<Self> {
        if profile.0.len() != spec.n_electrodes() {
            return Err(shape_err(
                format!("{} threshold offsets", spec.n_electrodes()),
                profile.0.len(),
            ));
        }
        let thresholds_ua: Vec<f64> = profile
            .relative_thresholds(user.theta_spread)
            .into_iter()
            .map(|r| r * user.theta_mean)
            .collect();
        if thresholds_ua.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidParam("thresholds must be positive".into()));
        }
        Ok(Self {
            spec,
            positions_um: electrode_positions(&spec, user),
            thresholds_ua,
        })
    }

    pub fn n_electrodes(&self) -> usize {
        self.positions_um.len()
    }
}

/// One electrode's stimulation: amplitude (µA), frequency (Hz), pulse
/// duration (ms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amplitude_ua: f64,
    pub frequency_hz: f64,
    pub pulse_duration_ms: f64,
}

impl Pulse {
    pub fn new(amplitude_ua: f64, frequency_hz: f64) -> Self {
        Self {
            amplitude_ua,
            frequency_hz,
            pulse_duration_ms: DEFAULT_PULSE_DURATION_MS,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.amplitude_ua.is_finite()
            || !self.frequency_hz.is_finite()
            || !self.pulse_duration_ms.is_finite()
        {
            return Err(Error::NonFinite("stimulus"));
        }
        if self.amplitude_ua < 0.0 || self.frequency_hz <= 0.0 || self.pulse_duration_ms <= 0.0 {
            return Err(Error::InvalidParam(format!("invalid pulse {self:?}")));
        }
        Ok(())
    }
}

/// The `n_e × 3` stimulus matrix, one row per electrode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub pulses: Vec<Pulse>,
}

impl Stimulus {
    pub fn zeros(n: usize) -> Self {
        Self {
            pulses: vec![Pulse::new(0.0, REFERENCE_FREQUENCY_HZ); n],
        }
    }

    pub fn len(&self) -> usize {
        self.pulses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pulses.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.pulses.iter().try_for_each(Pulse::validate)
    }

    pub fn as_matrix(&self) -> Vec<[f64; 3]> {
        self.pulses
            .iter()
            .map(|p| [p.amplitude_ua, p.frequency_hz, p.pulse_duration_ms])
            .collect()
    }
}

/// Gaussian blob parameters for one electrode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhospheneParams {
    /// Visual-field center (deg).
    pub center: [f64; 2],
    /// Covariance (deg²).
    pub covariance: [[f64; 2]; 2],
    pub brightness: f64,
    pub sigma_major: f64,
    pub sigma_minor: f64,
    /// Orientation of the major axis (rad).
    pub angle: f64,
}

impl PhospheneParams {
    pub fn sqrt_det(&self) -> f64 {
        self.sigma_major * self.sigma_minor
    }

    /// Analytic maximum of the blob.
    pub fn peak(&self) -> f64 {
        self.brightness * self.sqrt_det()
    }
}

/// Orientation of the axon bundle passing through `p` (deg): the tangent at
/// `p` of the circle through `p` and the optic disc that leaves the disc
/// horizontally. The tangent direction is the complex square of the offset
/// from the disc, hence the doubled angle.
pub fn axon_angle(p: [f64; 2], user: &UserParams) -> f64 {
    2.0 * (p[1] - user.od_y).atan2(p[0] - user.od_x)
}

/// Elongation factor `σ_major / σ_minor`.
pub fn elongation(user: &UserParams) -> f64 {
    1.0 + user.streak_scale * user.lambda / (1.0 - user.lambda)
}

/// Brightness law in threshold units: zero below threshold, `r` times the
/// frequency factor otherwise.
pub fn brightness_law(ratio: f64, frequency_hz: f64, user: &UserParams) -> f64 {
    if ratio < 1.0 {
        return 0.0;
    }
    let freq = (1.0 + user.freq_gain * (frequency_hz / REFERENCE_FREQUENCY_HZ - 1.0)).max(0.0);
    user.bright_scale * ratio * freq
}

/// Effective size (deg) at amplitude ratio `ratio = A / θ_e`.
pub fn effective_size_deg(ratio: f64, user: &UserParams) -> f64 {
    let r = ratio.max(1.0);
    user.rho * (1.0 + user.size_gain * (r - 1.0)) / MICRONS_PER_DEGREE
}

pub fn phosphene_params(
    array: &ElectrodeArray,
    electrode: usize,
    pulse: &Pulse,
    user: &UserParams,
) -> Result<PhospheneParams> {
    pulse.validate()?;
    if electrode >= array.n_electrodes() {
        return Err(shape_err(
            format!("electrode index < {}", array.n_electrodes()),
            electrode,
        ));
    }
    let pos = array.positions_um[electrode];
    let center = [pos[0] / MICRONS_PER_DEGREE, pos[1] / MICRONS_PER_DEGREE];
    let ratio = pulse.amplitude_ua / array.thresholds_ua[electrode];
    let sigma_minor = effective_size_deg(ratio, user);
    let sigma_major = sigma_minor * elongation(user);
    let angle = axon_angle(center, user);
    let (s, c) = angle.sin_cos();
    let (a2, b2) = (sigma_major * sigma_major, sigma_minor * sigma_minor);
    let covariance = [
        [c * c * a2 + s * s * b2, c * s * (a2 - b2)],
        [c * s * (a2 - b2), s * s * a2 + c * c * b2],
    ];
    Ok(PhospheneParams {
        center,
        covariance,
        brightness: brightness_law(ratio, pulse.frequency_hz, user),
        sigma_major,
        sigma_minor,
        angle,
    })
}

/// Rendered brightness image in threshold-scale units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percept {
    pub height: usize,
    pub width: usize,
    pub half_extent_deg: f64,
    /// Row-major, top row first.
    pub data: Vec<f64>,
    pub max_brightness: f64,
}

impl Percept {
    pub fn from_data(height: usize, width: usize, half_extent_deg: f64, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(height * width, data.len()));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParam("percept values must be finite and >= 0".into()));
        }
        let max_brightness = data.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            height,
            width,
            half_extent_deg,
            data,
            max_brightness,
        })
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            height: grid.height,
            width: grid.width,
            half_extent_deg: grid.half_extent_deg,
            data: vec![0.0; grid.n_pixels()],
            max_brightness: 0.0,
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Copy with every pixel multiplied by `factor` (≥ 0).
    pub fn scaled(&self, factor: f64) -> Self {
        let data: Vec<f64> = self.data.iter().map(|v| v * factor).collect();
        Self {
            max_brightness: self.max_brightness * factor,
            data,
            ..*self
        }
    }

    /// Maximum brightness as shown next to a stimulus: one decimal.
    pub fn displayed_brightness(&self) -> String {
        format!("{:.1}", self.max_brightness)
    }
}

/// Adds one phosphene into `out` over the pixel grid.
fn splat(out: &mut [f64], xs: &[f64], ys: &[f64], p: &PhospheneParams) {
    if p.brightness <= 0.0 {
        return;
    }
    let (s, c) = p.angle.sin_cos();
    let inv_major = 1.0 / p.sigma_major;
    let inv_minor = 1.0 / p.sigma_minor;
    let scale = p.peak();
    let width = xs.len();
    for (i, &y) in ys.iter().enumerate() {
        let dy = y - p.center[1];
        let row = &mut out[i * width..(i + 1) * width];
        for (px, &x) in row.iter_mut().zip(xs) {
            let dx = x - p.center[0];
            let u = (c * dx + s * dy) * inv_major;
            let v = (c * dy - s * dx) * inv_minor;
            *px += scale * (-0.5 * (u * u + v * v)).exp();
        }
    }
}

/// Renders `stimulus` through the forward model on `grid`.
pub fn render_percept(
    stimulus: &Stimulus,
    array: &ElectrodeArray,
    user: &UserParams,
    grid: &GridSpec,
) -> Result<Percept> {
    if stimulus.len() != array.n_electrodes() {
        return Err(shape_err(
            format!("{} electrodes", array.n_electrodes()),
            stimulus.len(),
        ));
    }
    let xs = grid.xs();
    let ys = grid.ys();
    let mut data = vec![0.0; grid.n_pixels()];
    for (e, pulse) in stimulus.pulses.iter().enumerate() {
        let p = phosphene_params(array, e, pulse, user)?;
        splat(&mut data, &xs, &ys, &p);
    }
    let max_brightness = data.iter().copied().fold(0.0, f64::max);
    Ok(Percept {
        height: grid.height,
        width: grid.width,
        half_extent_deg: grid.half_extent_deg,
        data,
        max_brightness,
    })
}

pub fn percept_mse(a: &Percept, b: &Percept) -> Result<f64> {
    if a.height != b.height || a.width != b.width {
        return Err(shape_err(
            format!("{}x{}", a.height, a.width),
            format!("{}x{}", b.height, b.width),
        ));
    }
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{dse_default_phi, PhiBox};
    use std::f64::consts::PI;

    fn user() -> UserParams {
        let mut u = dse_default_phi(&PhiBox::default());
        u.impl_x = 0.0;
        u.impl_y = 0.0;
        u.impl_rot = 0.0;
        u
    }

    fn sorted(mut v: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
        for p in &mut v {
            p[0] = (p[0] * 1e6).round() / 1e6;
            p[1] = (p[1] * 1e6).round() / 1e6;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn grid_corners() {
        let spec = ArraySpec { rows: 2, cols: 2, pitch_um: 400.0 };
        let pos = electrode_positions(&spec, &user());
        assert_eq!(
            sorted(pos),
            vec![[-200.0, -200.0], [-200.0, 200.0], [200.0, -200.0], [200.0, 200.0]]
        );
    }

    #[test]
    fn quarter_turn_maps_grid_onto_itself() {
        let spec = ArraySpec { rows: 2, cols: 2, pitch_um: 400.0 };
        let mut u = user();
        let base = sorted(electrode_positions(&spec, &u));
        u.impl_rot = PI / 2.0;
        let rotated = electrode_positions(&spec, &u);
        // top-left (-200, 200) goes to (-200, -200)
        assert!((rotated[0][0] + 200.0).abs() < 1e-9 && (rotated[0][1] + 200.0).abs() < 1e-9);
        assert_eq!(sorted(rotated), base);
    }

    #[test]
    fn offset_row() {
        let spec = ArraySpec { rows: 1, cols: 2, pitch_um: 400.0 };
        let mut u = user();
        u.impl_x = 100.0;
        let pos = electrode_positions(&spec, &u);
        assert!((pos[0][0] + 100.0).abs() < 1e-12 && pos[0][1].abs() < 1e-12);
        assert!((pos[1][0] - 300.0).abs() < 1e-12 && pos[1][1].abs() < 1e-12);
    }

    fn single(u: &UserParams) -> ElectrodeArray {
        let spec = ArraySpec { rows: 1, cols: 1, pitch_um: 400.0 };
        ElectrodeArray::new(spec, u, &ThresholdProfile::uniform(1)).unwrap()
    }

    #[test]
    fn brightness_anchors() {
        let mut u = user();
        u.bright_scale = 1.0;
        let arr = single(&u);
        let theta = arr.thresholds_ua[0];
        let at = |a: f64| phosphene_params(&arr, 0, &Pulse::new(a, REFERENCE_FREQUENCY_HZ), &u).unwrap();
        assert_eq!(at(theta).brightness, 1.0);
        assert_eq!(at(2.0 * theta).brightness, 2.0);
        assert_eq!(at(0.0).brightness, 0.0);
        assert_eq!(at(0.999 * theta).brightness, 0.0);
    }

    #[test]
    fn covariance_is_spd_and_aligned() {
        let mut u = user();
        u.lambda = 0.5;
        let arr = single(&u);
        let p = phosphene_params(&arr, 0, &Pulse::new(3.0 * u.theta_mean, 20.0), &u).unwrap();
        let s = p.covariance;
        assert!((s[0][1] - s[1][0]).abs() < 1e-15);
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        assert!(s[0][0] > 0.0 && det > 0.0);
        assert!((det.sqrt() - p.sqrt_det()).abs() < 1e-12);
        assert!(p.sigma_major > p.sigma_minor);
    }

    #[test]
    fn rejects_non_finite_and_mismatched() {
        let u = user();
        let arr = single(&u);
        assert!(phosphene_params(&arr, 0, &Pulse::new(f64::NAN, 20.0), &u).is_err());
        let bad = Stimulus::zeros(2);
        assert!(render_percept(&bad, &arr, &u, &GridSpec::default()).is_err());
    }

    #[test]
    fn zero_stimulus_renders_black() {
        let u = user();
        let arr = ElectrodeArray::new(ArraySpec::default(), &u, &ThresholdProfile::uniform(100)).unwrap();
        let p = render_percept(&Stimulus::zeros(100), &arr, &u, &GridSpec::default()).unwrap();
        assert!(p.data.iter().all(|&v| v == 0.0));
        assert_eq!(p.max_brightness, 0.0);
    }

    #[test]
    fn mse_basics() {
        let g = GridSpec { height: 4, width: 4, half_extent_deg: 1.0 };
        let zeros = Percept::zeros(&g);
        let ones = Percept::from_data(4, 4, 1.0, vec![1.0; 16]).unwrap();
        assert_eq!(percept_mse(&zeros, &zeros).unwrap(), 0.0);
        assert_eq!(percept_mse(&zeros, &ones).unwrap(), 1.0);
        assert_eq!(percept_mse(&ones, &zeros).unwrap(), 1.0);
        let other = Percept::zeros(&GridSpec { height: 2, width: 8, half_extent_deg: 1.0 });
        assert!(percept_mse(&zeros, &other).is_err());
    }

    #[test]
    fn axon_angle_is_horizontal_on_disc_meridian() {
        let u = user();
        assert!(axon_angle([0.0, u.od_y], &u).abs() < 1e-12);
    }
}
