//! DSE training: sample (target, user parameters, threshold profile)
//! triples, render the network's stimuli through the differentiable forward
//! model, and minimize the mean log reconstruction error with Adam.
//!
//! A short warm start first regresses the network onto the naive encoder's
//! stimulus. Validation and checkpoint selection use the plain mean error.

use std::io::Write;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use super::dse::{DseArch, DseModel};
use super::render_grad::RenderGeometry;
use crate::error::{Error, Result};
use crate::params::{PhiBox, UserParams};
use crate::phosphene::{GridSpec, ThresholdProfile, IDEAL_BRIGHTNESS, REFERENCE_FREQUENCY_HZ};
use crate::target::{area_resample, TargetImage};

/// Lower bound on a per-sample error inside the logarithm.
const LOSS_FLOOR: f64 = 1e-9;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Adam step size for the rendered objective.
    pub learning_rate: f64,
    /// Adam step size during the warm start.
    pub warm_start_learning_rate: f64,
    /// Validation cadence in steps.
    pub eval_every: usize,
    pub val_size: usize,
    /// Evaluations without improvement before the step size is halved.
    pub patience: usize,
    /// Initial steps regressing onto the naive encoder's stimulus before
    /// minimizing the rendered loss.
    pub warm_start_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 50_000,
            batch_size: 32,
            learning_rate: 1e-4,
            warm_start_learning_rate: 1e-3,
            eval_every: 500,
            val_size: 256,
            patience: 4,
            warm_start_steps: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<MetricRow>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    pub best_step: usize,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,train_loss,val_loss")?;
        for r in &self.rows {
            writeln!(w, "{},{},{}", r.step, r.train_loss, r.val_loss)?;
        }
        Ok(())
    }
}

/// One training or validation example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub target: usize,
    pub phi: UserParams,
    pub profile: ThresholdProfile,
}

pub fn draw_samples<R: Rng + ?Sized>(
    n: usize,
    n_targets: usize,
    phi_box: &PhiBox,
    n_electrodes: usize,
    rng: &mut R,
) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            target: rng.random_range(0..n_targets),
            phi: UserParams::from_array(&phi_box.sample(rng)),
            profile: ThresholdProfile::sample_with(n_electrodes, rng),
        })
        .collect()
}

fn training_grid(arch: &DseArch) -> GridSpec {
    GridSpec {
        height: arch.target_height,
        width: arch.target_width,
        ..GridSpec::target()
    }
}

fn inputs(model: &DseModel, samples: &[Sample], targets: &[TargetImage]) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((samples.len(), model.arch.input_dim()));
    for (i, s) in samples.iter().enumerate() {
        let row = model.input_row(&targets[s.target], &s.phi)?;
        for (dst, v) in x.row_mut(i).iter_mut().zip(row) {
            *dst = v;
        }
    }
    Ok(x)
}

/// Per-sample reconstruction losses and gradients with respect to the
/// amplitude units and frequencies.
fn render_losses(
    model: &DseModel,
    samples: &[Sample],
    targets: &[TargetImage],
    units: &Array2<f64>,
    freq: &Array2<f64>,
) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let grid = training_grid(&model.arch);
    let idx: Vec<usize> = (0..samples.len()).collect();
    crate::par_map(&idx, |&i| {
        let s = &samples[i];
        let geo = RenderGeometry::new(&model.arch.array, &s.phi, &s.profile, &grid);
        let u = units.row(i).to_vec();
        let f = freq.row(i).to_vec();
        geo.loss_and_grad(&u, &f, &targets[s.target].pixels, IDEAL_BRIGHTNESS)
    })
}

/// Training-mode objective over a batch, the mean of `ln(mse)`, with
/// gradients for every trainable tensor. Also returns the plain mean error.
pub(crate) fn batch_objective_and_grads(
    model: &DseModel,
    samples: &[Sample],
    targets: &[TargetImage],
) -> Result<(f64, f64, Vec<Vec<f64>>, super::dse::Cache)> {
    let x = inputs(model, samples, targets)?;
    let (logits, cache) = model.forward_train(&x);
    let (units, freq) = model.outputs(&logits);
    let per_sample = render_losses(model, samples, targets, &units, &freq);
    let b = samples.len() as f64;
    let n_e = model.arch.n_electrodes();
    let a = &model.arch;
    let f_range = a.freq_max_hz - a.freq_min_hz;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut objective = 0.0;
    let mut mse = 0.0;
    for (i, (l, du, df)) in per_sample.iter().enumerate() {
        let l = l.max(LOSS_FLOOR);
        objective += l.ln();
        mse += l;
        let w = 1.0 / (l * b);
        for e in 0..n_e {
            let sa = units[[i, e]] / a.amp_max_units;
            d_logits[[i, e]] = w * du[e] * a.amp_max_units * sa * (1.0 - sa);
            let sf = (freq[[i, e]] - a.freq_min_hz) / f_range;
            d_logits[[i, n_e + e]] = w * df[e] * f_range * sf * (1.0 - sf);
        }
    }
    let grads = model.backward(&cache, &d_logits);
    Ok((objective / b, mse / b, grads, cache))
}

/// The training objective on a batch (training-mode normalization) and its
/// gradient for every tensor, in the order of [`DseModel::params_mut`].
pub fn training_objective(model: &DseModel, samples: &[Sample], targets: &[TargetImage]) -> Result<(f64, Vec<Vec<f64>>)> {
    let (objective, _, grads, _) = batch_objective_and_grads(model, samples, targets)?;
    Ok((objective, grads))
}

/// Squared error between the network's stimulus and the naive encoder's
/// (amplitudes in threshold units, frequency relative to its range), with
/// gradients for every trainable tensor.
fn warm_start_loss_and_grads(
    model: &DseModel,
    samples: &[Sample],
    targets: &[TargetImage],
) -> Result<(f64, Vec<Vec<f64>>, super::dse::Cache)> {
    let a = &model.arch;
    let x = inputs(model, samples, targets)?;
    let (logits, cache) = model.forward_train(&x);
    let (units, freq) = model.outputs(&logits);
    let n_e = a.n_electrodes();
    let f_range = a.freq_max_hz - a.freq_min_hz;
    let norm = (samples.len() * n_e) as f64;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let t = &targets[s.target];
        let pooled = area_resample(&t.pixels, t.height, t.width, a.array.rows, a.array.cols);
        for e in 0..n_e {
            let ru = units[[i, e]] - IDEAL_BRIGHTNESS * pooled[e];
            let rf = (freq[[i, e]] - REFERENCE_FREQUENCY_HZ) / f_range;
            loss += ru * ru + rf * rf;
            let sa = units[[i, e]] / a.amp_max_units;
            d_logits[[i, e]] = 2.0 * ru * a.amp_max_units * sa * (1.0 - sa) / norm;
            let sf = (freq[[i, e]] - a.freq_min_hz) / f_range;
            d_logits[[i, n_e + e]] = 2.0 * rf * sf * (1.0 - sf) / norm;
        }
    }
    let grads = model.backward(&cache, &d_logits);
    Ok((loss / norm, grads, cache))
}

/// Mean reconstruction loss with frozen (inference-mode) weights.
pub fn evaluate_loss(model: &DseModel, samples: &[Sample], targets: &[TargetImage]) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(64) {
        let x = inputs(model, chunk, targets)?;
        let (units, freq) = model.outputs(&model.logits(&x));
        total += render_losses(model, chunk, targets, &units, &freq)
            .iter()
            .map(|r| r.0)
            .sum::<f64>();
    }
    Ok(total / samples.len() as f64)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &mut DseModel) -> Self {
        let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut DseModel, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, p) in model.params_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for i in 0..p.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Splits `targets` into training and validation pools (last tenth held out).
fn split(n: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    if n < 20 {
        return (0..n, 0..n);
    }
    let n_val = (n / 10).max(1);
    (0..n - n_val, n - n_val..n)
}

/// Trains a DSE over `phi_box` and returns the best-validation checkpoint.
pub fn dse_train(
    arch: DseArch,
    phi_box: &PhiBox,
    targets: &[TargetImage],
    config: &TrainConfig,
) -> Result<(DseModel, TrainReport)> {
    if targets.is_empty() {
        return Err(Error::InvalidParam("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = DseModel::new(arch, phi_box.clone(), rng.random());
    let n_e = model.arch.n_electrodes();
    let (train_range, val_range) = split(targets.len());
    let train_targets = &targets[train_range];
    let val_targets = &targets[val_range];
    let val_samples = draw_samples(config.val_size, val_targets.len(), phi_box, n_e, &mut rng);

    let mut adam = Adam::new(&mut model);
    for step in 1..=config.warm_start_steps {
        let batch = draw_samples(config.batch_size, train_targets.len(), phi_box, n_e, &mut rng);
        let (loss, grads, cache) = warm_start_loss_and_grads(&model, &batch, train_targets)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss });
        }
        adam.step(&mut model, &grads, config.warm_start_learning_rate);
        model.update_running_stats(&cache);
    }

    let initial = evaluate_loss(&model, &val_samples, val_targets)?;
    let mut report = TrainReport {
        rows: vec![MetricRow {
            step: 0,
            train_loss: f64::NAN,
            val_loss: initial,
        }],
        initial_val_loss: initial,
        best_val_loss: initial,
        best_step: 0,
    };
    let mut best = model.clone();
    let mut adam = Adam::new(&mut model);
    let mut lr = config.learning_rate;
    let mut stale = 0;
    let mut running = 0.0;
    let mut running_n = 0;

    for step in 1..=config.steps {
        let batch = draw_samples(config.batch_size, train_targets.len(), phi_box, n_e, &mut rng);
        let (objective, loss, grads, cache) = batch_objective_and_grads(&model, &batch, train_targets)?;
        if !objective.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged { step, loss });
        }
        adam.step(&mut model, &grads, lr);
        model.update_running_stats(&cache);
        running += loss;
        running_n += 1;

        if step % config.eval_every == 0 || step == config.steps {
            let val = evaluate_loss(&model, &val_samples, val_targets)?;
            if !val.is_finite() {
                return Err(Error::TrainingDiverged { step, loss: val });
            }
            let train_loss = running / running_n as f64;
            running = 0.0;
            running_n = 0;
            report.rows.push(MetricRow {
                step,
                train_loss,
                val_loss: val,
            });
            info!(step, train_loss, val_loss = val, lr, "dse training");
            if val < report.best_val_loss {
                report.best_val_loss = val;
                report.best_step = step;
                best = model.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    lr *= 0.5;
                    stale = 0;
                }
            }
        }
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phosphene::ArraySpec;

    fn tiny_arch() -> DseArch {
        DseArch {
            target_height: 4,
            target_width: 4,
            array: ArraySpec { rows: 2, cols: 2, pitch_um: 1200.0 },
            hidden: 6,
            blocks: 2,
            ..DseArch::default()
        }
    }

    fn targets(n: usize, seed: u64) -> Vec<TargetImage> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                TargetImage::new(4, 4, (0..16).map(|_| rng.random_range(0.0..1.0)).collect(), "number one").unwrap()
            })
            .collect()
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let phi_box = PhiBox::default();
        let mut model = DseModel::new(tiny_arch(), phi_box.clone(), 4);
        // push amplitudes well above threshold so no electrode sits on the
        // brightness discontinuity
        for k in 0..4 {
            model.head.b[k] = 0.5;
        }
        let ts = targets(3, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let batch = draw_samples(3, ts.len(), &phi_box, 4, &mut rng);
        let (_, _, grads, _) = batch_objective_and_grads(&model, &batch, &ts).unwrap();

        let h = 1e-6;
        let n_tensors = grads.len();
        let mut checked = 0;
        for k in 0..n_tensors {
            for i in [0usize, 3, 5] {
                if i >= grads[k].len() {
                    continue;
                }
                let mut plus = model.clone();
                plus.params_mut()[k][i] += h;
                let mut minus = model.clone();
                minus.params_mut()[k][i] -= h;
                let lp = batch_objective_and_grads(&plus, &batch, &ts).unwrap().0;
                let lm = batch_objective_and_grads(&minus, &batch, &ts).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                let an = grads[k][i];
                let denom = fd.abs().max(an.abs());
                if denom < 1e-8 {
                    continue;
                }
                let rel = (fd - an).abs() / denom;
                assert!(rel < 1e-3, "tensor {k} index {i}: analytic {an} vs fd {fd} (rel {rel})");
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn validation_never_worse_than_init_and_deterministic() {
        let ts = targets(8, 2);
        let config = TrainConfig {
            steps: 1,
            batch_size: 4,
            eval_every: 1,
            val_size: 8,
            ..TrainConfig::default()
        };
        let (m1, r1) = dse_train(tiny_arch(), &PhiBox::default(), &ts, &config).unwrap();
        assert!(r1.best_val_loss <= r1.initial_val_loss);
        let (m2, r2) = dse_train(tiny_arch(), &PhiBox::default(), &ts, &config).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.best_val_loss, r2.best_val_loss);
        let mut csv = Vec::new();
        r1.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("step,train_loss,val_loss\n0,"));
    }

    #[test]
    fn frozen_loss_is_deterministic() {
        let ts = targets(4, 3);
        let model = DseModel::new(tiny_arch(), PhiBox::default(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples = draw_samples(6, 4, &PhiBox::default(), 4, &mut rng);
        assert_eq!(
            evaluate_loss(&model, &samples, &ts).unwrap(),
            evaluate_loss(&model, &samples, &ts).unwrap()
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(dse_train(tiny_arch(), &PhiBox::default(), &[], &TrainConfig::default()).is_err());
    }
}
