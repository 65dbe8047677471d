//! Shared, read-only inputs of every session: the trained encoder, the
//! target pools, the grids and the optimizer settings.

use rand::seq::index::sample;

use crate::encoders::{checkpoint, naive_encode, DseModel};
use crate::error::{Error, Result};
use crate::experiment::{derived_rng, stream, SubjectSpec};
use crate::optimizer::OptimizerConfig;
use crate::params::{dse_default_phi, PhiBox, UserParams};
use crate::percept_io::DEFAULT_DISPLAY_CAP;
use crate::phosphene::{render_percept, ArraySpec, ElectrodeArray, GridSpec, Percept, Stimulus};
use crate::target::TargetImage;

/// Held-out targets used for each session's error trace.
pub const HELDOUT_TARGETS: usize = 32;

#[derive(Clone, Debug)]
pub struct SessionContext {
    pub model: DseModel,
    pub model_fingerprint: String,
    /// Targets shown during duels.
    pub duel_targets: Vec<TargetImage>,
    /// Pool from which each session draws its held-out targets; disjoint
    /// from `duel_targets`.
    pub heldout_pool: Vec<TargetImage>,
    /// Grid used for displayed percepts.
    pub display_grid: GridSpec,
    /// Brightness mapped to white in displayed images.
    pub display_cap: f64,
    /// Optimizer settings; the seed is replaced per session.
    pub optimizer: OptimizerConfig,
    pub heldout_per_session: usize,
}

impl SessionContext {
    pub fn new(model: DseModel, duel_targets: Vec<TargetImage>, heldout_pool: Vec<TargetImage>) -> Result<Self> {
        let (h, w) = (model.arch.target_height, model.arch.target_width);
        if duel_targets.is_empty() || heldout_pool.is_empty() {
            return Err(Error::InvalidParam("duel and held-out target pools must be non-empty".into()));
        }
        if let Some(t) = duel_targets.iter().chain(&heldout_pool).find(|t| (t.height, t.width) != (h, w)) {
            return Err(crate::error::shape_err(format!("{h}x{w} targets"), format!("{}x{}", t.height, t.width)));
        }
        Ok(Self {
            model_fingerprint: checkpoint::fingerprint(&model)?,
            model,
            duel_targets,
            heldout_pool,
            display_grid: GridSpec::default(),
            display_cap: DEFAULT_DISPLAY_CAP,
            optimizer: OptimizerConfig::default(),
            heldout_per_session: HELDOUT_TARGETS,
        })
    }

    pub fn phi_box(&self) -> &PhiBox {
        &self.model.phi_box
    }

    pub fn array_spec(&self) -> ArraySpec {
        self.model.arch.array
    }

    /// Grid on which reconstruction error is measured: one pixel per target
    /// pixel over the central field.
    pub fn loss_grid(&self) -> GridSpec {
        GridSpec {
            height: self.model.arch.target_height,
            width: self.model.arch.target_width,
            ..GridSpec::target()
        }
    }

    pub fn optimizer_config(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            seed,
            ..self.optimizer.clone()
        }
    }

    /// Seeded held-out subset for one session.
    pub fn heldout_indices(&self, seed: u64) -> Vec<usize> {
        let n = self.heldout_pool.len();
        let k = self.heldout_per_session.min(n);
        let mut idx = sample(&mut derived_rng(seed, stream::HELDOUT, 0), n, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Which encoder, with which parameters, produced a percept.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Contender {
    /// DSE at a candidate in normalized search coordinates.
    Candidate { point: Vec<f64> },
    /// DSE at the parameters chosen by optimization.
    Hilo,
    /// DSE at the box midpoint.
    DseDefault,
    Naive,
}

/// A subject's retina plus the encoders' view of it.
#[derive(Clone, Debug)]
pub struct SubjectWorld {
    pub spec: SubjectSpec,
    pub array: ElectrodeArray,
    pub default_phi: UserParams,
}

impl SubjectWorld {
    pub fn new(ctx: &SessionContext, spec: SubjectSpec) -> Result<Self> {
        let array = ElectrodeArray::new(ctx.array_spec(), &spec.true_phi, &spec.true_profile)?;
        Ok(Self {
            default_phi: dse_default_phi(ctx.phi_box()),
            spec,
            array,
        })
    }

    /// Stimuli of the DSE evaluated at `phi`, with the assumed thresholds.
    pub fn dse_stimuli(&self, ctx: &SessionContext, phi: &UserParams, targets: &[&TargetImage]) -> Result<Vec<Stimulus>> {
        ctx.model
            .encode_batch(targets, phi, phi.theta_mean * self.spec.threshold_factor)
    }

    /// Naive encoder whose white level sits at ideal brightness under the
    /// default (assumed) threshold.
    pub fn naive_stimulus(&self, ctx: &SessionContext, target: &TargetImage) -> Result<Stimulus> {
        let amp_max = crate::phosphene::IDEAL_BRIGHTNESS * self.default_phi.theta_mean * self.spec.threshold_factor;
        naive_encode(target, &ctx.array_spec(), amp_max)
    }

    /// Stimuli for `targets` from an encoder whose DSE parameters are `phi`,
    /// or from the naive encoder when `phi` is `None`.
    pub fn stimuli(&self, ctx: &SessionContext, phi: Option<&UserParams>, targets: &[&TargetImage]) -> Result<Vec<Stimulus>> {
        match phi {
            Some(phi) => self.dse_stimuli(ctx, phi, targets),
            None => targets.iter().map(|t| self.naive_stimulus(ctx, t)).collect(),
        }
    }

    /// Renders through the subject's true parameters.
    pub fn render(&self, stimulus: &Stimulus, grid: &GridSpec) -> Result<Percept> {
        render_percept(stimulus, &self.array, &self.spec.true_phi, grid)
    }

    /// Mean reconstruction error over `targets` on the loss grid.
    pub fn mean_loss(&self, ctx: &SessionContext, phi: Option<&UserParams>, targets: &[&TargetImage]) -> Result<f64> {
        if targets.is_empty() {
            return Err(Error::InvalidParam("no targets".into()));
        }
        let stimuli = self.stimuli(ctx, phi, targets)?;
        let grid = ctx.loss_grid();
        let pairs: Vec<(&Stimulus, &&TargetImage)> = stimuli.iter().zip(targets).collect();
        let losses = crate::par_map(&pairs, |(s, t)| {
            self.render(s, &grid)
                .and_then(|p| crate::encoders::encoding_loss(&p, t))
        });
        let mut total = 0.0;
        for l in losses {
            total += l?;
        }
        Ok(total / targets.len() as f64)
    }
}
