//! A differentiable re-implementation of the forward model, in threshold
//! units, used to train the DSE. Geometry (positions, axon directions,
//! elongation) depends only on the user parameters and is precomputed; the
//! stimulus enters through brightness and effective size.
//!
//! With `σ_minor = ρ` and `σ_major = kρ`, one phosphene contributes
//! `b k ρ² exp(-Q / 2ρ²)` where `Q = (u/k)² + v²` in axis-aligned
//! coordinates, so only `b` and `ρ` carry gradients.

use crate::params::UserParams;
use crate::phosphene::{
    axon_angle, elongation, electrode_positions, ArraySpec, GridSpec, ThresholdProfile, MICRONS_PER_DEGREE,
    REFERENCE_FREQUENCY_HZ,
};

#[derive(Clone, Debug)]
pub struct RenderGeometry {
    n_pixels: usize,
    /// `n_e × n_pixels`, row-major by electrode.
    q: Vec<f64>,
    elong: f64,
    rho_deg: f64,
    size_gain: f64,
    bright_scale: f64,
    freq_gain: f64,
    rel_thresholds: Vec<f64>,
}

impl RenderGeometry {
    pub fn new(spec: &ArraySpec, user: &UserParams, profile: &ThresholdProfile, grid: &GridSpec) -> Self {
        let xs = grid.xs();
        let ys = grid.ys();
        let elong = elongation(user);
        let positions = electrode_positions(spec, user);
        let mut q = Vec::with_capacity(positions.len() * grid.n_pixels());
        for pos in &positions {
            let center = [pos[0] / MICRONS_PER_DEGREE, pos[1] / MICRONS_PER_DEGREE];
            let (s, c) = axon_angle(center, user).sin_cos();
            for &y in &ys {
                for &x in &xs {
                    let (dx, dy) = (x - center[0], y - center[1]);
                    let u = (c * dx + s * dy) / elong;
                    let v = c * dy - s * dx;
                    q.push(u * u + v * v);
                }
            }
        }
        Self {
            n_pixels: grid.n_pixels(),
            q,
            elong,
            rho_deg: user.rho / MICRONS_PER_DEGREE,
            size_gain: user.size_gain,
            bright_scale: user.bright_scale,
            freq_gain: user.freq_gain,
            rel_thresholds: profile.relative_thresholds(user.theta_spread),
        }
    }

    pub fn n_electrodes(&self) -> usize {
        self.rel_thresholds.len()
    }

    fn freq_factor(&self, f: f64) -> f64 {
        1.0 + self.freq_gain * (f / REFERENCE_FREQUENCY_HZ - 1.0)
    }

    /// Percept for amplitudes in units of `theta_mean` and frequencies in Hz.
    pub fn render(&self, units: &[f64], freq: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_pixels];
        for e in 0..self.n_electrodes() {
            let ratio = units[e] / self.rel_thresholds[e];
            if ratio < 1.0 {
                continue;
            }
            let b = self.bright_scale * ratio * self.freq_factor(freq[e]).max(0.0);
            if b <= 0.0 {
                continue;
            }
            let rho = self.rho_deg * (1.0 + self.size_gain * (ratio - 1.0));
            let scale = b * self.elong * rho * rho;
            let inv = -0.5 / (rho * rho);
            let q = &self.q[e * self.n_pixels..(e + 1) * self.n_pixels];
            for (o, &qp) in out.iter_mut().zip(q) {
                *o += scale * (qp * inv).exp();
            }
        }
        out
    }

    /// Loss `mean_p (pixel / ideal - target)²` and its gradient with respect
    /// to `units` and `freq`.
    pub fn loss_and_grad(&self, units: &[f64], freq: &[f64], target: &[f64], ideal: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n_e = self.n_electrodes();
        let pixels = self.render(units, freq);
        let np = self.n_pixels as f64;
        let mut loss = 0.0;
        let mut dpix = vec![0.0; self.n_pixels];
        for ((d, &p), &t) in dpix.iter_mut().zip(&pixels).zip(target) {
            let r = p / ideal - t;
            loss += r * r;
            *d = 2.0 * r / (ideal * np);
        }
        loss /= np;

        let mut du = vec![0.0; n_e];
        let mut df = vec![0.0; n_e];
        for e in 0..n_e {
            let rel = self.rel_thresholds[e];
            let ratio = units[e] / rel;
            if ratio < 1.0 {
                continue;
            }
            let ff = self.freq_factor(freq[e]);
            if ff <= 0.0 {
                continue;
            }
            let b = self.bright_scale * ratio * ff;
            let rho = self.rho_deg * (1.0 + self.size_gain * (ratio - 1.0));
            let rho2 = rho * rho;
            let inv = -0.5 / rho2;
            let q = &self.q[e * self.n_pixels..(e + 1) * self.n_pixels];
            // dL/db and dL/dρ accumulated over pixels
            let mut g_b = 0.0;
            let mut g_rho = 0.0;
            for (&qp, &d) in q.iter().zip(&dpix) {
                let ex = (qp * inv).exp();
                g_b += d * self.elong * rho2 * ex;
                g_rho += d * b * self.elong * ex * (2.0 * rho + qp / rho);
            }
            let db_dratio = self.bright_scale * ff;
            let drho_dratio = self.rho_deg * self.size_gain;
            du[e] = (g_b * db_dratio + g_rho * drho_dratio) / rel;
            df[e] = g_b * self.bright_scale * ratio * self.freq_gain / REFERENCE_FREQUENCY_HZ;
        }
        (loss, du, df)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{dse_default_phi, PhiBox};
    use crate::phosphene::{render_percept, ElectrodeArray, Pulse, Stimulus};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_forward_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let phi_box = PhiBox::default();
        let spec = ArraySpec::default();
        let grid = GridSpec::target();
        for _ in 0..5 {
            let user = crate::params::UserParams::from_array(&phi_box.sample(&mut rng));
            let profile = ThresholdProfile::sample(spec.n_electrodes(), rng.random());
            let units: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..4.0)).collect();
            let freq: Vec<f64> = (0..100).map(|_| rng.random_range(5.0..60.0)).collect();
            let geo = RenderGeometry::new(&spec, &user, &profile, &grid);
            let fast = geo.render(&units, &freq);

            let array = ElectrodeArray::new(spec, &user, &profile).unwrap();
            let stim = Stimulus {
                pulses: units
                    .iter()
                    .zip(&freq)
                    .map(|(&u, &f)| Pulse::new(u * user.theta_mean, f))
                    .collect(),
            };
            let slow = render_percept(&stim, &array, &user, &grid).unwrap();
            let mad = fast.iter().zip(&slow.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / fast.len() as f64;
            assert!(mad < 1e-5, "mean abs diff {mad}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut user = dse_default_phi(&PhiBox::default());
        user.freq_gain = 0.3;
        user.size_gain = 0.4;
        let spec = ArraySpec { rows: 3, cols: 3, pitch_um: 400.0 };
        let grid = GridSpec { height: 8, width: 8, half_extent_deg: 3.0 };
        let profile = ThresholdProfile::sample(9, 5);
        let geo = RenderGeometry::new(&spec, &user, &profile, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let units: Vec<f64> = (0..9).map(|_| rng.random_range(1.5..3.0)).collect();
        let freq: Vec<f64> = (0..9).map(|_| rng.random_range(10.0..40.0)).collect();
        let target: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, du, df) = geo.loss_and_grad(&units, &freq, &target, 2.0);
        let h = 1e-6;
        for e in 0..9 {
            let mut up = units.clone();
            up[e] += h;
            let mut dn = units.clone();
            dn[e] -= h;
            let fd = (geo.loss_and_grad(&up, &freq, &target, 2.0).0 - geo.loss_and_grad(&dn, &freq, &target, 2.0).0) / (2.0 * h);
            assert!((fd - du[e]).abs() <= 1e-6 * fd.abs().max(1e-3), "du[{e}]: {fd} vs {}", du[e]);
            let mut fp = freq.clone();
            fp[e] += h;
            let mut fm = freq.clone();
            fm[e] -= h;
            let fd = (geo.loss_and_grad(&units, &fp, &target, 2.0).0 - geo.loss_and_grad(&units, &fm, &target, 2.0).0) / (2.0 * h);
            assert!((fd - df[e]).abs() <= 1e-6 * fd.abs().max(1e-3), "df[{e}]: {fd} vs {}", df[e]);
        }
    }
}
