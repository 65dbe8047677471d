//! The deep stimulus encoder: a fully connected residual network mapping a
//! target image and user parameters to a stimulus.
//!
//! Layout: `stem = lrelu(W x + b)`, then `blocks` residual blocks
//! `h ← h + lrelu(BN(W h + b))`, then a linear head whose outputs pass through
//! sigmoid range maps (amplitude in `[0, amp_max]` threshold units, frequency
//! in `[freq_min, freq_max]` Hz).

use ndarray::{Array1, Array2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::params::{PhiBox, UserParams, N_PARAMS};
use crate::phosphene::{ArraySpec, Pulse, Stimulus, DEFAULT_PULSE_DURATION_MS};
use crate::target::TargetImage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DseArch {
    pub target_height: usize,
    pub target_width: usize,
    pub array: ArraySpec,
    pub hidden: usize,
    pub blocks: usize,
    pub leaky_slope: f64,
    /// Upper end of the amplitude range, in units of `theta_mean`.
    pub amp_max_units: f64,
    pub freq_min_hz: f64,
    pub freq_max_hz: f64,
    pub pulse_duration_ms: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for DseArch {
    fn default() -> Self {
        Self {
            target_height: 16,
            target_width: 16,
            array: ArraySpec::default(),
            hidden: 256,
            blocks: 4,
            leaky_slope: 0.01,
            amp_max_units: 10.0,
            freq_min_hz: 5.0,
            freq_max_hz: 60.0,
            pulse_duration_ms: DEFAULT_PULSE_DURATION_MS,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl DseArch {
    pub fn input_dim(&self) -> usize {
        self.target_height * self.target_width + N_PARAMS
    }

    pub fn n_electrodes(&self) -> usize {
        self.array.n_electrodes()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.n_electrodes()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn init(fan_in: usize, fan_out: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        Self {
            w: Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(rng)),
            b: Array1::zeros(fan_out),
        }
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub lin: Linear,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DseModel {
    pub arch: DseArch,
    /// Box used to normalize the parameter inputs.
    pub phi_box: PhiBox,
    pub stem: Linear,
    pub blocks: Vec<ResBlock>,
    pub head: Linear,
}

/// Activations kept from a training-mode forward pass.
pub(crate) struct Cache {
    x: Array2<f64>,
    stem_pre: Array2<f64>,
    /// Input of each block, then the final hidden state.
    hidden: Vec<Array2<f64>>,
    blocks: Vec<BlockCache>,
    pub(crate) batch_mean: Vec<Array1<f64>>,
    pub(crate) batch_var: Vec<Array1<f64>>,
}

struct BlockCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    pre_act: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl DseModel {
    pub fn new(arch: DseArch, phi_box: PhiBox, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = arch.hidden;
        let stem = Linear::init(arch.input_dim(), h, (2.0 / arch.input_dim() as f64).sqrt(), &mut rng);
        let blocks = (0..arch.blocks)
            .map(|_| ResBlock {
                lin: Linear::init(h, h, (1.0 / h as f64).sqrt(), &mut rng),
                gamma: Array1::from_elem(h, 0.5),
                beta: Array1::zeros(h),
                running_mean: Array1::zeros(h),
                running_var: Array1::ones(h),
            })
            .collect();
        let mut head = Linear::init(h, arch.output_dim(), 0.1 / (h as f64).sqrt(), &mut rng);
        let n_e = arch.n_electrodes();
        for k in 0..n_e {
            head.b[k] = -1.0;
            head.b[n_e + k] = -0.5;
        }
        Self {
            arch,
            phi_box,
            stem,
            blocks,
            head,
        }
    }

    /// Flattened target followed by box-normalized parameters.
    pub fn input_row(&self, target: &TargetImage, phi: &UserParams) -> Result<Vec<f64>> {
        if target.height != self.arch.target_height || target.width != self.arch.target_width {
            return Err(shape_err(
                format!("{}x{} target", self.arch.target_height, self.arch.target_width),
                format!("{}x{}", target.height, target.width),
            ));
        }
        let mut row = target.pixels.clone();
        row.extend(self.phi_box.normalize(&phi.to_array()));
        Ok(row)
    }

    fn lrelu(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.arch.leaky_slope * v
        }
    }

    fn lrelu_grad(&self, v: f64) -> f64 {
        if v > 0.0 {
            1.0
        } else {
            self.arch.leaky_slope
        }
    }

    /// Inference-mode logits (normalization uses running statistics).
    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = self.stem.apply(x).mapv(|v| self.lrelu(v));
        for blk in &self.blocks {
            let z = blk.lin.apply(&h);
            let inv_std = blk.running_var.mapv(|v| 1.0 / (v + self.arch.bn_eps).sqrt());
            let n = (z - &blk.running_mean) * &inv_std * &blk.gamma + &blk.beta;
            h = h + n.mapv(|v| self.lrelu(v));
        }
        self.head.apply(&h)
    }

    /// Range maps: returns `(amplitude units, frequency Hz)` per row.
    pub fn outputs(&self, logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let n_e = self.arch.n_electrodes();
        let a = &self.arch;
        let units = logits
            .slice(ndarray::s![.., ..n_e])
            .mapv(|v| a.amp_max_units * sigmoid(v));
        let freq = logits
            .slice(ndarray::s![.., n_e..])
            .mapv(|v| a.freq_min_hz + (a.freq_max_hz - a.freq_min_hz) * sigmoid(v));
        (units, freq)
    }

    /// Stimuli for several targets under one parameter set, with amplitudes
    /// converted to µA using `theta_ua` as the assumed mean threshold.
    pub fn encode_batch(&self, targets: &[&TargetImage], phi: &UserParams, theta_ua: f64) -> Result<Vec<Stimulus>> {
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        let dim = self.arch.input_dim();
        let mut x = Array2::zeros((targets.len(), dim));
        for (i, t) in targets.iter().enumerate() {
            let row = self.input_row(t, phi)?;
            x.row_mut(i).assign(&Array1::from(row));
        }
        let (units, freq) = self.outputs(&self.logits(&x));
        Ok(units
            .outer_iter()
            .zip(freq.outer_iter())
            .map(|(u, f)| Stimulus {
                pulses: u
                    .iter()
                    .zip(f.iter())
                    .map(|(&u, &f)| Pulse {
                        amplitude_ua: u * theta_ua,
                        frequency_hz: f,
                        pulse_duration_ms: self.arch.pulse_duration_ms,
                    })
                    .collect(),
            })
            .collect())
    }

    pub fn encode_with_threshold(&self, target: &TargetImage, phi: &UserParams, theta_ua: f64) -> Result<Stimulus> {
        Ok(self.encode_batch(&[target], phi, theta_ua)?.remove(0))
    }

    /// Encodes assuming the thresholds stated in `phi`.
    pub fn forward(&self, target: &TargetImage, phi: &UserParams) -> Result<Stimulus> {
        self.encode_with_threshold(target, phi, phi.theta_mean)
    }

    pub(crate) fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, Cache) {
        let batch = x.nrows() as f64;
        let stem_pre = self.stem.apply(x);
        let mut h = stem_pre.mapv(|v| self.lrelu(v));
        let mut hidden = Vec::with_capacity(self.blocks.len() + 1);
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut batch_mean = Vec::new();
        let mut batch_var = Vec::new();
        for blk in &self.blocks {
            let z = blk.lin.apply(&h);
            let mean = z.sum_axis(Axis(0)) / batch;
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / batch;
            let inv_std = var.mapv(|v| 1.0 / (v + self.arch.bn_eps).sqrt());
            let xhat = centered * &inv_std;
            let pre_act = &xhat * &blk.gamma + &blk.beta;
            let next = &h + &pre_act.mapv(|v| self.lrelu(v));
            hidden.push(h);
            h = next;
            caches.push(BlockCache { xhat, inv_std, pre_act });
            batch_mean.push(mean);
            batch_var.push(var);
        }
        let logits = self.head.apply(&h);
        hidden.push(h);
        (
            logits,
            Cache {
                x: x.clone(),
                stem_pre,
                hidden,
                blocks: caches,
                batch_mean,
                batch_var,
            },
        )
    }

    /// Gradients of the loss given `d_logits`, in [`Self::params_mut`] order.
    pub(crate) fn backward(&self, cache: &Cache, d_logits: &Array2<f64>) -> Vec<Vec<f64>> {
        let batch = d_logits.nrows() as f64;
        let last = cache.hidden.last().expect("hidden state");
        let head_w = d_logits.t().dot(last);
        let head_b = d_logits.sum_axis(Axis(0));
        let mut dh = d_logits.dot(&self.head.w);

        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (k, blk) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[k];
            let h_in = &cache.hidden[k];
            let mut dn = dh.clone();
            Zip::from(&mut dn).and(&bc.pre_act).for_each(|d, &p| *d *= self.lrelu_grad(p));
            let dgamma = (&dn * &bc.xhat).sum_axis(Axis(0));
            let dbeta = dn.sum_axis(Axis(0));
            let dxhat = dn * &blk.gamma;
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &bc.xhat).sum_axis(Axis(0));
            let dz = ((&dxhat * batch) - &sum_dxhat - &(&bc.xhat * &sum_dxhat_xhat)) * &(&bc.inv_std / batch);
            let dw = dz.t().dot(h_in);
            let db = dz.sum_axis(Axis(0));
            dh = dh + dz.dot(&blk.lin.w);
            block_grads.push([dw.iter().copied().collect(), db.to_vec(), dgamma.to_vec(), dbeta.to_vec()]);
        }
        block_grads.reverse();

        let mut dpre = dh;
        Zip::from(&mut dpre).and(&cache.stem_pre).for_each(|d, &p| *d *= self.lrelu_grad(p));
        let stem_w = dpre.t().dot(&cache.x);
        let stem_b = dpre.sum_axis(Axis(0));

        let mut grads = vec![stem_w.iter().copied().collect(), stem_b.to_vec()];
        for g in block_grads {
            grads.extend(g);
        }
        grads.push(head_w.iter().copied().collect());
        grads.push(head_b.to_vec());
        grads
    }

    /// Exponential moving average of batch statistics.
    pub(crate) fn update_running_stats(&mut self, cache: &Cache) {
        let m = self.arch.bn_momentum;
        for (k, blk) in self.blocks.iter_mut().enumerate() {
            blk.running_mean = &blk.running_mean * (1.0 - m) + &cache.batch_mean[k] * m;
            blk.running_var = &blk.running_var * (1.0 - m) + &cache.batch_var[k] * m;
        }
    }

    /// Trainable tensors as flat slices: stem, each block's linear and
    /// normalization affine, head.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.push(self.stem.w.as_slice_mut().expect("contiguous"));
        out.push(self.stem.b.as_slice_mut().expect("contiguous"));
        for blk in &mut self.blocks {
            out.push(blk.lin.w.as_slice_mut().expect("contiguous"));
            out.push(blk.lin.b.as_slice_mut().expect("contiguous"));
            out.push(blk.gamma.as_slice_mut().expect("contiguous"));
            out.push(blk.beta.as_slice_mut().expect("contiguous"));
        }
        out.push(self.head.w.as_slice_mut().expect("contiguous"));
        out.push(self.head.b.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn param_count(&self) -> usize {
        let blocks: usize = self
            .blocks
            .iter()
            .map(|b| b.lin.w.len() + b.lin.b.len() + b.gamma.len() + b.beta.len())
            .sum();
        self.stem.w.len() + self.stem.b.len() + blocks + self.head.w.len() + self.head.b.len()
    }

    pub fn is_finite(&self) -> bool {
        let mut all = self.stem.w.iter().chain(&self.stem.b).chain(&self.head.w).chain(&self.head.b);
        all.all(|v| v.is_finite())
            && self.blocks.iter().all(|b| {
                b.lin.w.iter()
                    .chain(&b.lin.b)
                    .chain(&b.gamma)
                    .chain(&b.beta)
                    .chain(&b.running_mean)
                    .chain(&b.running_var)
                    .all(|v| v.is_finite())
            })
    }
}
