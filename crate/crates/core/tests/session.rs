use std::collections::HashSet;
use std::sync::{Arc, OnceLock};

use hilo_core::agent::AgentConfig;
use hilo_core::encoders::{DseArch, DseModel};
use hilo_core::experiment::{drive_session, load_target_pools, Condition};
use hilo_core::session::{
    Baseline, Event, EventLog, Phase, Session, SessionContext, Side, EVALUATION_DUELS, OPTIMIZATION_DUELS,
    TUTORIAL_DUELS,
};
use hilo_core::{Error, PhiBox};

fn ctx() -> Arc<SessionContext> {
    static CTX: OnceLock<Arc<SessionContext>> = OnceLock::new();
    CTX.get_or_init(|| {
        let arch = DseArch { hidden: 32, blocks: 1, ..DseArch::default() };
        let model = DseModel::new(arch, PhiBox::default(), 7);
        let pools = load_target_pools(None, (16, 16), 24, 40).unwrap();
        Arc::new(SessionContext::new(model, pools.duel, pools.heldout).unwrap())
    })
    .clone()
}

fn session(condition: Condition, seed: u64) -> Session {
    Session::create(ctx(), condition, seed, EventLog::memory()).unwrap()
}

fn choose(s: &mut Session, side: Side) {
    let p = s.current_duel().unwrap();
    s.post_choice(p.trial, side, Some(p.phase)).unwrap();
}

#[test]
fn phases_advance_at_fixed_counts() {
    let mut s = session(Condition::main(), 1);
    let mut boundaries = Vec::new();
    let mut n = 0;
    while !s.is_complete() {
        let p = s.current_duel().unwrap();
        let ack = s.post_choice(p.trial, if n % 3 == 0 { Side::Left } else { Side::Right }, Some(p.phase)).unwrap();
        n += 1;
        if ack.phase_advanced {
            boundaries.push((n, ack.phase));
        }
    }
    assert_eq!(
        boundaries,
        vec![
            (TUTORIAL_DUELS, Phase::Optimization),
            (TUTORIAL_DUELS + OPTIMIZATION_DUELS, Phase::Evaluation),
            (TUTORIAL_DUELS + OPTIMIZATION_DUELS + EVALUATION_DUELS, Phase::Complete),
        ]
    );
    assert_eq!(s.mse_trace().len(), OPTIMIZATION_DUELS);
    assert_eq!(s.optimizer().trial_count(), OPTIMIZATION_DUELS);
    assert!(matches!(s.post_choice(1, Side::Left, None), Err(Error::SessionComplete)));
    assert!(matches!(s.current_duel(), Err(Error::SessionComplete)));

    let r = s.results().unwrap();
    assert_eq!(r.tally(Baseline::Naive).unwrap().n, 20);
    assert_eq!(r.tally(Baseline::DseDefault).unwrap().n, 19);
    let eval: Vec<_> = r.trials.iter().filter(|t| t.duel.phase == Phase::Evaluation).collect();
    assert!(eval.iter().all(|t| t.duel.first == hilo_core::session::Contender::Hilo));
    assert_eq!(eval.iter().filter(|t| !t.chose_first).count(), r.tallies.iter().map(|t| t.k).sum::<usize>());
}

#[test]
fn tutorial_does_not_touch_the_optimizer() {
    let mut s = session(Condition::main(), 2);
    for _ in 0..TUTORIAL_DUELS {
        assert_eq!(s.phase(), Phase::Tutorial);
        choose(&mut s, Side::Left);
    }
    assert_eq!(s.phase(), Phase::Optimization);
    assert_eq!(s.optimizer().trial_count(), 0);
    assert!(s.mse_trace().is_empty());
    assert_eq!(s.records().len(), TUTORIAL_DUELS);
}

#[test]
fn stale_and_duplicate_submissions_are_rejected() {
    let mut s = session(Condition::main(), 3);
    let p = s.current_duel().unwrap();
    assert!(matches!(s.post_choice(p.trial + 1, Side::Left, None), Err(Error::StaleTrial { expected: 1, got: 2 })));
    assert!(matches!(
        s.post_choice(p.trial, Side::Left, Some(Phase::Evaluation)),
        Err(Error::StaleTrial { .. })
    ));
    s.post_choice(p.trial, Side::Right, Some(p.phase)).unwrap();
    let before = s.events().len();
    assert!(matches!(s.post_choice(p.trial, Side::Right, Some(p.phase)), Err(Error::StaleTrial { expected: 2, got: 1 })));
    assert_eq!(s.records().len(), 1);
    // A rejected post may generate the next duel but never records a choice.
    assert!(s.events()[before..].iter().all(|e| !matches!(e, Event::ChoiceRecorded { .. })));
}

#[test]
fn payload_is_stable_and_hides_the_target() {
    let mut s = session(Condition::main(), 4);
    let a = s.current_duel().unwrap();
    let b = s.current_duel().unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_value(&a).unwrap();
    let keys: HashSet<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    for forbidden in ["target", "target_index", "target_image", "loss_first", "loss_second"] {
        assert!(!keys.contains(forbidden), "{forbidden} leaked");
    }
    assert!(a.target_label.starts_with("number "));
    assert_eq!((a.image_width, a.image_height), (48, 48));
    choose(&mut s, Side::Left);
    assert_eq!(s.current_duel().unwrap().trial, 2);
}

#[test]
fn results_require_completion() {
    let mut s = session(Condition::main(), 5);
    assert!(matches!(s.results(), Err(Error::SessionIncomplete)));
    choose(&mut s, Side::Left);
    assert!(matches!(s.results(), Err(Error::SessionIncomplete)));
}

#[test]
fn sides_are_balanced() {
    let mut left = 0;
    let mut total = 0;
    for seed in 0..3 {
        let mut s = session(Condition::main(), 100 + seed);
        drive_session(&mut s, &AgentConfig::default()).unwrap();
        left += s.records().iter().filter(|r| r.duel.first_on_left).count();
        total += s.records().len();
    }
    let sd = (total as f64 * 0.25).sqrt();
    assert!((left as f64 - total as f64 / 2.0).abs() < 4.0 * sd, "{left}/{total}");
}

#[test]
fn misspecification_factor_is_logged() {
    let s = session(Condition::threshold_misspecification(), 6);
    match &s.events()[0] {
        Event::SessionCreated { subject, .. } => {
            assert!((1.0..=4.0).contains(&subject.threshold_factor));
            assert_eq!(subject.threshold_factor, s.subject().threshold_factor);
        }
        e => panic!("first event {e:?}"),
    }
    assert_eq!(session(Condition::main(), 6).subject().threshold_factor, 1.0);
}

#[test]
fn creation_is_deterministic_per_seed() {
    let mut a = session(Condition::main(), 8);
    let mut b = session(Condition::main(), 8);
    let mut c = session(Condition::main(), 9);
    assert_eq!(a.id(), b.id());
    assert_ne!(a.id(), c.id());
    assert_eq!(a.subject(), b.subject());
    assert_ne!(a.subject().true_phi, c.subject().true_phi);
    for i in 0..12 {
        let side = if i % 2 == 0 { Side::Left } else { Side::Right };
        choose(&mut a, side);
        choose(&mut b, side);
        choose(&mut c, side);
    }
    assert_eq!(a.events(), b.events());
    assert_ne!(a.events(), c.events());
}

#[test]
fn tampered_log_fails_replay() {
    let mut s = session(Condition::main(), 10);
    for _ in 0..8 {
        choose(&mut s, Side::Left);
    }
    let mut events = s.events().to_vec();
    let replayed = Session::replay(ctx(), &events).unwrap();
    assert_eq!(replayed.records(), s.records());

    let pos = events.iter().rposition(|e| matches!(e, Event::DuelProposed { .. })).unwrap();
    if let Event::DuelProposed { first_on_left, .. } = &mut events[pos] {
        *first_on_left = !*first_on_left;
    }
    assert!(matches!(Session::replay(ctx(), &events), Err(Error::ReplayDiverged(_))));
}

#[test]
fn pure_lapse_agent_completes() {
    let mut s = session(Condition::out_of_distribution(), 11);
    let agent = AgentConfig { lapse_rate: 1.0, ..AgentConfig::default() };
    drive_session(&mut s, &agent).unwrap();
    let r = s.results().unwrap();
    assert_eq!(r.trials.len(), TUTORIAL_DUELS + OPTIMIZATION_DUELS + EVALUATION_DUELS);
    assert!(r.mse_trace.iter().all(|v| v.is_finite()));
    assert!(!PhiBox::default().contains(&r.subject.true_phi.to_array()));
}
