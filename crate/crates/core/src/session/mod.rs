//! One participant's run through the tutorial, optimization and evaluation
//! phases, persisted as a replayable event log.

pub mod context;
pub mod log;
pub mod scale;

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use context::{Contender, SessionContext, SubjectWorld, HELDOUT_TARGETS};
pub use log::{parse_events, read_events, Event, EventLog};
pub use scale::{brightness_scale, ScaleExample, SCALE_LEVELS};

use crate::agent::{choice_probability, DEFAULT_TEMPERATURE};
use crate::encoders::encoding_loss;
use crate::error::{Error, Result};
use crate::experiment::analysis::log_odds;
use crate::experiment::{derived_rng, derived_seed, make_subject, stream, Condition, SubjectSpec};
use crate::optimizer::{OptimizerConfig, OptimizerState};
use crate::params::UserParams;
use crate::percept_io::encode_png_base64;
use crate::phosphene::Stimulus;
use crate::target::TargetImage;

pub const TUTORIAL_DUELS: usize = 4;
pub const OPTIMIZATION_DUELS: usize = 60;
pub const EVALUATION_DUELS: usize = 39;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Tutorial,
    Optimization,
    Evaluation,
    Complete,
}

impl Phase {
    /// Number of duels in the phase.
    pub fn total(self) -> usize {
        match self {
            Phase::Tutorial => TUTORIAL_DUELS,
            Phase::Optimization => OPTIMIZATION_DUELS,
            Phase::Evaluation => EVALUATION_DUELS,
            Phase::Complete => 0,
        }
    }

    pub fn next(self) -> Phase {
        match self {
            Phase::Tutorial => Phase::Optimization,
            Phase::Optimization => Phase::Evaluation,
            Phase::Evaluation | Phase::Complete => Phase::Complete,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            _ => Err(Error::InvalidParam(format!("side must be left or right, got {s:?}"))),
        }
    }
}

/// Opponent of the optimized encoder in an evaluation duel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Naive,
    DseDefault,
}

impl Baseline {
    pub const ALL: [Baseline; 2] = [Baseline::Naive, Baseline::DseDefault];

    /// Odd evaluation trials face the naive encoder, even ones the default
    /// DSE: 20 and 19 duels.
    pub fn for_trial(trial: usize) -> Self {
        if trial % 2 == 1 {
            Baseline::Naive
        } else {
            Baseline::DseDefault
        }
    }

    pub fn contender(self) -> Contender {
        match self {
            Baseline::Naive => Contender::Naive,
            Baseline::DseDefault => Contender::DseDefault,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Naive => "naive",
            Baseline::DseDefault => "dse_default",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelSpec {
    /// Zero-based position among all duels of the session.
    pub sequence: usize,
    pub phase: Phase,
    /// One-based position within the phase.
    pub trial: usize,
    pub target_index: usize,
    pub first: Contender,
    pub second: Contender,
    pub first_on_left: bool,
}

impl DuelSpec {
    pub fn left(&self) -> &Contender {
        if self.first_on_left {
            &self.first
        } else {
            &self.second
        }
    }

    pub fn right(&self) -> &Contender {
        if self.first_on_left {
            &self.second
        } else {
            &self.first
        }
    }

    pub fn chose_first(&self, side: Side) -> bool {
        (side == Side::Left) == self.first_on_left
    }
}

/// What a participant sees. The target appears only as its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelPayload {
    pub session_id: String,
    pub phase: Phase,
    pub trial: usize,
    pub phase_total: usize,
    pub target_label: String,
    /// Base64 8-bit grayscale PNG.
    pub left_image: String,
    pub right_image: String,
    pub left_brightness: String,
    pub right_brightness: String,
    pub image_width: usize,
    pub image_height: usize,
}

#[derive(Clone, Debug)]
pub struct PendingDuel {
    pub spec: DuelSpec,
    /// Reconstruction errors under the subject's true parameters.
    pub loss_first: f64,
    pub loss_second: f64,
    stimuli: [Stimulus; 2],
    payload: Option<DuelPayload>,
}

impl PendingDuel {
    pub fn loss_left(&self) -> f64 {
        if self.spec.first_on_left {
            self.loss_first
        } else {
            self.loss_second
        }
    }

    pub fn loss_right(&self) -> f64 {
        if self.spec.first_on_left {
            self.loss_second
        } else {
            self.loss_first
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub duel: DuelSpec,
    pub target_label: String,
    pub side: Side,
    pub chose_first: bool,
    pub loss_first: f64,
    pub loss_second: f64,
    /// Probability that the simulated agent picks the first option.
    pub agent_p_first: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChoiceAck {
    pub accepted_phase: Phase,
    pub accepted_trial: usize,
    pub phase: Phase,
    pub phase_advanced: bool,
    pub next_trial: Option<usize>,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub id: String,
    pub condition: String,
    pub seed: u64,
    pub phase: Phase,
    /// Duels finished in the current phase.
    pub completed_in_phase: usize,
    pub phase_total: usize,
    pub completed_total: usize,
    pub complete: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTally {
    pub baseline: Baseline,
    /// Duels in which the baseline was chosen.
    pub k: usize,
    pub n: usize,
    /// Corrected log odds of choosing the baseline; negative favors the
    /// optimized encoder.
    pub log_odds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub id: String,
    pub condition: Condition,
    pub seed: u64,
    pub subject: SubjectSpec,
    pub hilo_point: Vec<f64>,
    pub hilo_phi: UserParams,
    /// Held-out error of the champion encoder after each optimization duel.
    pub mse_trace: Vec<f64>,
    pub heldout_loss_hilo: f64,
    pub heldout_loss_default: f64,
    pub heldout_loss_naive: f64,
    pub tallies: Vec<BaselineTally>,
    /// Agreement between recorded choices and the simulated agent.
    pub agreement: f64,
    pub trials: Vec<TrialRecord>,
}

impl SessionResult {
    pub fn tally(&self, baseline: Baseline) -> Option<&BaselineTally> {
        self.tallies.iter().find(|t| t.baseline == baseline)
    }
}

/// Deterministic session id for a condition and seed.
pub fn session_id(condition: &Condition, seed: u64) -> String {
    let digest = Sha256::digest(format!("{}:{seed}", condition.name()).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Session {
    ctx: Arc<SessionContext>,
    id: String,
    condition: Condition,
    seed: u64,
    world: SubjectWorld,
    heldout: Vec<usize>,
    optimizer: OptimizerState,
    phase: Phase,
    completed_in_phase: usize,
    sequence: usize,
    pending: Option<PendingDuel>,
    records: Vec<TrialRecord>,
    mse_trace: Vec<f64>,
    loss_cache: HashMap<Vec<u64>, f64>,
    hilo_point: Option<Vec<f64>>,
    log: EventLog,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("condition", &self.condition.name())
            .field("seed", &self.seed)
            .field("phase", &self.phase)
            .field("completed_in_phase", &self.completed_in_phase)
            .finish()
    }
}

impl Session {
    /// Starts a session in the tutorial phase and logs its creation.
    pub fn create(ctx: Arc<SessionContext>, condition: Condition, seed: u64, mut log: EventLog) -> Result<Self> {
        let subject = make_subject(&condition, seed, ctx.phi_box(), ctx.array_spec().n_electrodes())?;
        let id = session_id(&condition, seed);
        let optimizer = ctx.optimizer_config(derived_seed(seed, stream::OPTIMIZER, 0));
        log.append(Event::SessionCreated {
            id: id.clone(),
            condition: condition.clone(),
            seed,
            subject: subject.clone(),
            model_fingerprint: ctx.model_fingerprint.clone(),
            optimizer: optimizer.clone(),
        })?;
        Self::assemble(ctx, id, condition, seed, subject, optimizer, log)
    }

    fn assemble(
        ctx: Arc<SessionContext>,
        id: String,
        condition: Condition,
        seed: u64,
        subject: SubjectSpec,
        optimizer: OptimizerConfig,
        log: EventLog,
    ) -> Result<Self> {
        let world = SubjectWorld::new(&ctx, subject)?;
        let optimizer = OptimizerState::new(optimizer, ctx.phi_box().clone())?;
        Ok(Self {
            heldout: ctx.heldout_indices(seed),
            ctx,
            id,
            condition,
            seed,
            world,
            optimizer,
            phase: Phase::Tutorial,
            completed_in_phase: 0,
            sequence: 0,
            pending: None,
            records: Vec::new(),
            mse_trace: Vec::new(),
            loss_cache: HashMap::new(),
            hilo_point: None,
            log,
        })
    }

    /// Rebuilds a session from its events by re-running every step and
    /// checking that each regenerated event matches the logged one. Returns
    /// the session (with an in-memory log) and the number of logged events
    /// consumed.
    pub fn replay(ctx: Arc<SessionContext>, events: &[Event]) -> Result<Self> {
        let Some(Event::SessionCreated {
            id,
            condition,
            seed,
            subject,
            model_fingerprint,
            optimizer,
        }) = events.first()
        else {
            return Err(Error::ReplayDiverged("log must start with session_created".into()));
        };
        if *model_fingerprint != ctx.model_fingerprint {
            return Err(Error::ReplayDiverged(format!(
                "log was written with model {model_fingerprint}, loaded model is {}",
                ctx.model_fingerprint
            )));
        }
        let regenerated = make_subject(condition, *seed, ctx.phi_box(), ctx.array_spec().n_electrodes())?;
        if regenerated != *subject || session_id(condition, *seed) != *id {
            return Err(Error::ReplayDiverged("subject or id does not match its seed".into()));
        }
        let mut session = Self::assemble(
            ctx,
            id.clone(),
            condition.clone(),
            *seed,
            subject.clone(),
            optimizer.clone(),
            EventLog::detached(vec![events[0].clone()]),
        )?;
        for (i, event) in events.iter().enumerate().skip(1) {
            match event {
                Event::DuelProposed { .. } => {
                    session.ensure_pending()?;
                }
                Event::ChoiceRecorded { phase, trial, side, .. } => {
                    session.post_choice(*trial, *side, Some(*phase))?;
                }
                Event::PhaseAdvanced { .. } | Event::SessionCreated { .. } => {}
            }
            let produced = session.log.events();
            if produced.len() <= i || produced[i] != *event {
                return Err(Error::ReplayDiverged(format!("event {} differs from its regeneration", i + 1)));
            }
        }
        Ok(session)
    }

    /// Reopens a session from its log file, repairs a torn final line and
    /// appends any events the crash prevented from being written.
    pub fn open(ctx: Arc<SessionContext>, path: &Path) -> Result<Self> {
        let events = read_events(path, true)?;
        let mut session = Self::replay(ctx, &events)?;
        let produced = session.log.events().to_vec();
        let mut log = EventLog::detached(events.clone());
        log.attach(path)?;
        for e in &produced[events.len()..] {
            log.append(e.clone())?;
        }
        session.log = log;
        Ok(session)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn condition(&self) -> &Condition {
        &self.condition
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn subject(&self) -> &SubjectSpec {
        &self.world.spec
    }

    pub fn world(&self) -> &SubjectWorld {
        &self.world
    }

    pub fn context(&self) -> &Arc<SessionContext> {
        &self.ctx
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn mse_trace(&self) -> &[f64] {
        &self.mse_trace
    }

    pub fn events(&self) -> &[Event] {
        self.log.events()
    }

    pub fn is_complete(&self) -> bool {
        self.phase == Phase::Complete
    }

    pub fn status(&self) -> SessionStatus {
        SessionStatus {
            id: self.id.clone(),
            condition: self.condition.name().to_string(),
            seed: self.seed,
            phase: self.phase,
            completed_in_phase: self.completed_in_phase,
            phase_total: self.phase.total(),
            completed_total: self.records.len(),
            complete: self.is_complete(),
        }
    }

    fn target(&self, index: usize) -> &TargetImage {
        &self.ctx.duel_targets[index]
    }

    /// DSE parameters behind a contender; `None` for the naive encoder.
    fn contender_phi(&self, c: &Contender) -> Result<Option<UserParams>> {
        Ok(match c {
            Contender::Candidate { point } => Some(self.optimizer.to_phi(point)),
            Contender::Hilo => {
                let p = self
                    .hilo_point
                    .as_ref()
                    .ok_or_else(|| Error::InvalidParam("optimized parameters are not available yet".into()))?;
                Some(self.optimizer.to_phi(p))
            }
            Contender::DseDefault => Some(self.world.default_phi),
            Contender::Naive => None,
        })
    }

    fn stimulus(&self, c: &Contender, target: &TargetImage) -> Result<Stimulus> {
        let phi = self.contender_phi(c)?;
        Ok(self.world.stimuli(&self.ctx, phi.as_ref(), &[target])?.remove(0))
    }

    fn duel_loss(&self, stimulus: &Stimulus, target: &TargetImage) -> Result<f64> {
        encoding_loss(&self.world.render(stimulus, &self.ctx.loss_grid())?, target)
    }

    /// Generates the next duel if none is pending.
    pub fn ensure_pending(&mut self) -> Result<&PendingDuel> {
        if self.pending.is_none() {
            let pending = self.next_duel()?;
            self.log.append(Event::DuelProposed {
                sequence: pending.spec.sequence,
                phase: pending.spec.phase,
                trial: pending.spec.trial,
                target_index: pending.spec.target_index,
                first: pending.spec.first.clone(),
                second: pending.spec.second.clone(),
                first_on_left: pending.spec.first_on_left,
            })?;
            self.pending = Some(pending);
        }
        Ok(self.pending.as_ref().expect("pending duel"))
    }

    fn next_duel(&mut self) -> Result<PendingDuel> {
        let phase = self.phase;
        let trial = self.completed_in_phase + 1;
        let n_targets = self.ctx.duel_targets.len();
        let mut rng = derived_rng(self.seed, stream::DUEL, self.sequence as u64);
        let (first, second, target_index) = match phase {
            Phase::Complete => return Err(Error::SessionComplete),
            Phase::Tutorial => (Contender::DseDefault, Contender::Naive, (trial - 1) % n_targets),
            Phase::Optimization => {
                let (a, b) = self.optimizer.propose();
                let t = rng.random_range(0..n_targets);
                (Contender::Candidate { point: a }, Contender::Candidate { point: b }, t)
            }
            Phase::Evaluation => {
                let t = rng.random_range(0..n_targets);
                (Contender::Hilo, Baseline::for_trial(trial).contender(), t)
            }
        };
        let first_on_left = rng.random::<bool>();
        let target = self.target(target_index);
        let stimuli = [self.stimulus(&first, target)?, self.stimulus(&second, target)?];
        Ok(PendingDuel {
            loss_first: self.duel_loss(&stimuli[0], target)?,
            loss_second: self.duel_loss(&stimuli[1], target)?,
            stimuli,
            payload: None,
            spec: DuelSpec {
                sequence: self.sequence,
                phase,
                trial,
                target_index,
                first,
                second,
                first_on_left,
            },
        })
    }

    /// The pending duel as shown to a participant. Repeated calls return
    /// the same payload until a choice is recorded.
    pub fn current_duel(&mut self) -> Result<DuelPayload> {
        self.ensure_pending()?;
        let pending = self.pending.as_ref().expect("pending duel");
        if let Some(p) = &pending.payload {
            return Ok(p.clone());
        }
        let grid = self.ctx.display_grid;
        let cap = self.ctx.display_cap;
        let order = if pending.spec.first_on_left { [0, 1] } else { [1, 0] };
        let left = self.world.render(&pending.stimuli[order[0]], &grid)?;
        let right = self.world.render(&pending.stimuli[order[1]], &grid)?;
        let payload = DuelPayload {
            session_id: self.id.clone(),
            phase: pending.spec.phase,
            trial: pending.spec.trial,
            phase_total: pending.spec.phase.total(),
            target_label: self.target(pending.spec.target_index).label.clone(),
            left_image: encode_png_base64(&left, cap)?,
            right_image: encode_png_base64(&right, cap)?,
            left_brightness: left.displayed_brightness(),
            right_brightness: right.displayed_brightness(),
            image_width: grid.width,
            image_height: grid.height,
        };
        self.pending.as_mut().expect("pending duel").payload = Some(payload.clone());
        Ok(payload)
    }

    fn point_key(point: &[f64]) -> Vec<u64> {
        point.iter().map(|v| v.to_bits()).collect()
    }

    fn heldout_targets(&self) -> Vec<&TargetImage> {
        self.heldout.iter().map(|&i| &self.ctx.heldout_pool[i]).collect()
    }

    /// Held-out error of the DSE at a search point, memoized.
    fn heldout_loss_at(&mut self, point: &[f64]) -> Result<f64> {
        let key = Self::point_key(point);
        if let Some(&v) = self.loss_cache.get(&key) {
            return Ok(v);
        }
        let phi = self.optimizer.to_phi(point);
        let v = self.world.mean_loss(&self.ctx, Some(&phi), &self.heldout_targets())?;
        self.loss_cache.insert(key, v);
        Ok(v)
    }

    /// Records a choice for the pending duel. The choice reaches the log
    /// before any state changes; a mismatched trial (or phase, when given)
    /// is rejected as stale.
    pub fn post_choice(&mut self, trial: usize, side: Side, phase: Option<Phase>) -> Result<ChoiceAck> {
        if self.is_complete() {
            return Err(Error::SessionComplete);
        }
        let spec = self.ensure_pending()?.spec.clone();
        if trial != spec.trial || phase.is_some_and(|p| p != spec.phase) {
            return Err(Error::StaleTrial {
                expected: spec.trial,
                got: trial,
            });
        }
        let chose_first = spec.chose_first(side);
        let mut staged = None;
        if spec.phase == Phase::Optimization {
            let mut opt = self.optimizer.clone();
            opt.record_choice(trial, chose_first)?;
            let champion = opt.best_point()?;
            staged = Some((opt, champion));
        }
        let champion_loss = match &staged {
            Some((opt, champion)) => {
                let key = Self::point_key(champion);
                match self.loss_cache.get(&key) {
                    Some(&v) => Some(v),
                    None => {
                        let phi = opt.to_phi(champion);
                        let v = self.world.mean_loss(&self.ctx, Some(&phi), &self.heldout_targets())?;
                        self.loss_cache.insert(key, v);
                        Some(v)
                    }
                }
            }
            None => None,
        };

        self.log.append(Event::ChoiceRecorded {
            sequence: spec.sequence,
            phase: spec.phase,
            trial,
            side,
            chose_first,
        })?;

        let pending = self.pending.take().expect("pending duel");
        self.records.push(TrialRecord {
            target_label: self.target(spec.target_index).label.clone(),
            side,
            chose_first,
            loss_first: pending.loss_first,
            loss_second: pending.loss_second,
            agent_p_first: choice_probability(pending.loss_first, pending.loss_second, DEFAULT_TEMPERATURE),
            duel: spec.clone(),
        });
        if let Some((opt, _)) = staged {
            self.optimizer = opt;
        }
        if let Some(v) = champion_loss {
            self.mse_trace.push(v);
        }
        self.sequence += 1;
        self.completed_in_phase += 1;

        let mut advanced = false;
        if self.completed_in_phase == self.phase.total() {
            let from = self.phase;
            let to = from.next();
            let mut hilo_phi = None;
            if to == Phase::Evaluation {
                let point = self.optimizer.best_point()?;
                hilo_phi = Some(self.optimizer.to_phi(&point));
                self.hilo_point = Some(point);
            }
            self.phase = to;
            self.completed_in_phase = 0;
            advanced = true;
            self.log.append(Event::PhaseAdvanced { from, to, hilo_phi })?;
        }
        Ok(ChoiceAck {
            accepted_phase: spec.phase,
            accepted_trial: trial,
            phase: self.phase,
            phase_advanced: advanced,
            next_trial: (!self.is_complete()).then_some(self.completed_in_phase + 1),
            complete: self.is_complete(),
        })
    }

    /// Summary of a completed session.
    pub fn results(&mut self) -> Result<SessionResult> {
        if !self.is_complete() {
            return Err(Error::SessionIncomplete);
        }
        let hilo_point = self.hilo_point.clone().expect("optimized point after optimization");
        let heldout_loss_hilo = self.heldout_loss_at(&hilo_point)?;
        let targets = self.heldout_targets();
        let heldout_loss_default = self.world.mean_loss(&self.ctx, Some(&self.world.default_phi), &targets)?;
        let heldout_loss_naive = self.world.mean_loss(&self.ctx, None, &targets)?;
        let mut tallies = Vec::new();
        for b in Baseline::ALL {
            let duels: Vec<&TrialRecord> = self
                .records
                .iter()
                .filter(|r| r.duel.phase == Phase::Evaluation && r.duel.second == b.contender())
                .collect();
            let k = duels.iter().filter(|r| !r.chose_first).count();
            tallies.push(BaselineTally {
                baseline: b,
                k,
                n: duels.len(),
                log_odds: log_odds(k, duels.len())?,
            });
        }
        let scored: Vec<&TrialRecord> = self.records.iter().filter(|r| r.duel.phase != Phase::Tutorial).collect();
        let choices: Vec<bool> = scored.iter().map(|r| r.chose_first).collect();
        let probs: Vec<f64> = scored.iter().map(|r| r.agent_p_first).collect();
        Ok(SessionResult {
            id: self.id.clone(),
            condition: self.condition.clone(),
            seed: self.seed,
            subject: self.world.spec.clone(),
            hilo_phi: self.optimizer.to_phi(&hilo_point),
            hilo_point,
            mse_trace: self.mse_trace.clone(),
            heldout_loss_hilo,
            heldout_loss_default,
            heldout_loss_naive,
            tallies,
            agreement: crate::agent::agreement(&choices, &probs)?,
            trials: self.records.clone(),
        })
    }
}
