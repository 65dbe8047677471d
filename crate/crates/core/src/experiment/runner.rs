//! Batch simulation: sessions driven end to end by the simulated agent.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::analysis::{write_log_odds, write_mse_curves, ConditionSummary};
use super::condition::{derived_rng, derived_seed, stream, Condition};
use crate::agent::{calibrate_temperature, choose_by_error, AgentConfig};
use crate::error::Result;
use crate::session::{EventLog, Phase, Session, SessionContext, SessionResult, Side};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub condition: Condition,
    pub subjects: usize,
    pub seed: u64,
    pub agent: AgentConfig,
}

/// Seed of the `index`-th subject of a run.
pub fn subject_seed(run_seed: u64, index: usize) -> u64 {
    derived_seed(run_seed, stream::RUN, index as u64)
}

/// Plays `session` to completion with the agent.
pub fn drive_session(session: &mut Session, agent: &AgentConfig) -> Result<()> {
    agent.validate()?;
    let mut rng = derived_rng(session.seed(), stream::AGENT, agent.seed);
    while !session.is_complete() {
        let p = session.ensure_pending()?;
        let (phase, trial) = (p.spec.phase, p.spec.trial);
        let d = choose_by_error(p.loss_left(), p.loss_right(), agent, &mut rng);
        let side = if d.chose_first { Side::Left } else { Side::Right };
        session.post_choice(trial, side, Some(phase))?;
    }
    Ok(())
}

/// Creates, plays and summarizes one session.
pub fn run_session(ctx: Arc<SessionContext>, condition: &Condition, seed: u64, agent: &AgentConfig, log: EventLog) -> Result<SessionResult> {
    let mut session = Session::create(ctx, condition.clone(), seed, log)?;
    drive_session(&mut session, agent)?;
    session.results()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: SimulationConfig,
    pub summary: ConditionSummary,
    pub sessions: Vec<SessionResult>,
}

/// Runs every subject of `config`, in parallel when enabled. With
/// `log_dir`, each session's events go to `<log_dir>/<id>.jsonl`.
pub fn run_experiment(ctx: Arc<SessionContext>, config: &SimulationConfig, log_dir: Option<&Path>) -> Result<ExperimentResult> {
    let seeds: Vec<u64> = (0..config.subjects).map(|i| subject_seed(config.seed, i)).collect();
    let sessions = crate::par_map(&seeds, |&seed| {
        let log = match log_dir {
            Some(dir) => {
                let id = crate::session::session_id(&config.condition, seed);
                EventLog::create(&dir.join(format!("{id}.jsonl")))?
            }
            None => EventLog::memory(),
        };
        run_session(ctx.clone(), &config.condition, seed, &config.agent, log)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        summary: ConditionSummary::from_results(&sessions)?,
        config: config.clone(),
        sessions,
    })
}

/// Writes `results.json`, `summary.json`, `mse_curves.csv` and
/// `log_odds.csv` into `dir`; returns their paths.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = ["results.json", "summary.json", "mse_curves.csv", "log_odds.csv"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    serde_json::to_writer(BufWriter::new(File::create(&paths[0])?), result)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(&paths[1])?), &result.summary)?;
    write_mse_curves(&result.summary.mse_curve, BufWriter::new(File::create(&paths[2])?))?;
    write_log_odds(&result.sessions, BufWriter::new(File::create(&paths[3])?))?;
    Ok(paths)
}

/// Reads `results.json` from a directory written by [`write_outputs`].
pub fn read_results(dir: &Path) -> Result<ExperimentResult> {
    let f = File::open(dir.join("results.json"))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
}

/// Seed of the calibration rollout.
pub const CALIBRATION_SEED: u64 = 0xca1;

/// Temperature at which the agent picks the lower-error option in a
/// fraction `rate` of the optimization duels it itself generates: rollouts
/// of `subjects` main-condition sessions alternate with recalibration until
/// the temperature changes by less than 0.1%.
pub fn calibrate_agent(ctx: Arc<SessionContext>, subjects: usize, rate: f64) -> Result<f64> {
    let mut temperature = crate::agent::DEFAULT_TEMPERATURE;
    for _ in 0..20 {
        let config = SimulationConfig {
            condition: Condition::main(),
            subjects,
            seed: CALIBRATION_SEED,
            agent: AgentConfig {
                temperature,
                ..AgentConfig::default()
            },
        };
        let run = run_experiment(ctx.clone(), &config, None)?;
        let gaps: Vec<f64> = run
            .sessions
            .iter()
            .flat_map(|s| &s.trials)
            .filter(|t| t.duel.phase == Phase::Optimization)
            .map(|t| (t.loss_first - t.loss_second).abs())
            .collect();
        let next = calibrate_temperature(&gaps, rate)?;
        let done = ((next - temperature) / temperature).abs() < 1e-3;
        temperature = next;
        if done {
            break;
        }
    }
    Ok(temperature)
}
