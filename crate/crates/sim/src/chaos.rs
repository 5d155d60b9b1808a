//! Randomized interleavings of fetch, submit, skip and lease expiry driven
//! straight at the engine, with safety checks after every step.

use std::collections::{BTreeMap, BTreeSet};

use microcrowd_core::event::{EventBody, SubmissionOutcome};
use microcrowd_core::model::{ConflictState, MicrotaskKind, MicrotaskState, ProjectState, Timestamp};
use microcrowd_core::transition::{check_transition, EntityKind};
use microcrowd_core::{value, Engine, EngineConfig, Event, MicrotaskId, ProjectId, SchedulerConfig, State, Submission, WorkerId};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::Scenario;
use crate::worker::respond;

#[derive(Debug, Clone)]
pub struct ChaosConfig {
    pub workers: usize,
    /// Random actions before the honest drain.
    pub steps: usize,
    pub lease_seconds: u64,
    /// After the random phase, finish the project with honest workers.
    pub drain: bool,
}

impl Default for ChaosConfig {
    fn default() -> Self {
        ChaosConfig { workers: 3, steps: 40, lease_seconds: 60, drain: false }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChaosStats {
    pub actions: u64,
    pub rejected: u64,
    pub transitions_checked: u64,
    pub transition_violations: Vec<String>,
    pub double_assignments: u64,
    pub writer_overlaps: u64,
    /// Rejected calls that still changed the log.
    pub dirty_rejections: u64,
    /// ImplementBehavior handed out while its function had an open conflict.
    pub implement_during_conflict: u64,
    pub other_violations: Vec<String>,
    pub completed: bool,
}

impl ChaosStats {
    pub fn clean(&self) -> bool {
        self.transition_violations.is_empty()
            && self.double_assignments == 0
            && self.writer_overlaps == 0
            && self.dirty_rejections == 0
            && self.implement_during_conflict == 0
            && self.other_violations.is_empty()
    }
}

struct Chaos<'a> {
    scenario: &'a Scenario,
    engine: Engine,
    project: ProjectId,
    workers: Vec<WorkerId>,
    /// Every (worker, microtask) pair ever assigned, for stale replays.
    history: Vec<(WorkerId, MicrotaskId)>,
    now: Timestamp,
    rng: ChaCha8Rng,
    stats: ChaosStats,
}

impl Chaos<'_> {
    fn held(&self, w: WorkerId) -> Option<MicrotaskId> {
        self.engine.state().workers[&w].assigned_microtask_id
    }

    fn fetch(&mut self, w: WorkerId) -> bool {
        let state = self.engine.state();
        let seq = state.last_seq;
        let conflicted: BTreeSet<_> =
            state.conflicts.values().filter(|c| c.state == ConflictState::Open).map(|c| c.function_id).collect();
        match self.engine.fetch_next(w, self.now) {
            Ok(Some(a)) => {
                self.history.push((w, a.microtask_id));
                let f = self.engine.state().microtasks[&a.microtask_id].function_id;
                if a.kind == MicrotaskKind::ImplementBehavior && conflicted.contains(&f) {
                    self.stats.implement_during_conflict += 1;
                }
                true
            }
            Ok(None) => false,
            Err(_) => {
                self.rejected(seq);
                false
            }
        }
    }

    fn rejected(&mut self, seq_before: u64) {
        self.stats.rejected += 1;
        if self.engine.state().last_seq != seq_before {
            self.stats.dirty_rejections += 1;
        }
    }

    fn submit(&mut self, w: WorkerId, m: MicrotaskId, accurate: bool) -> bool {
        let seq = self.engine.state().last_seq;
        let Some(view) = self.engine.microtask_view(m) else { return false };
        let body = match respond(self.scenario, &view, accurate, &mut self.rng) {
            Ok(b) => b,
            Err(e) => {
                self.stats.other_violations.push(format!("no response for {m}: {e}"));
                return false;
            }
        };
        match self.engine.apply_submission(Submission { microtask_id: m, worker_id: w, body }, self.now) {
            Ok(_) => true,
            Err(_) => {
                self.rejected(seq);
                false
            }
        }
    }

    fn skip(&mut self, w: WorkerId, m: MicrotaskId) {
        let seq = self.engine.state().last_seq;
        if self.engine.skip(w, m, self.now).is_err() {
            self.rejected(seq);
        }
    }

    fn random_step(&mut self) {
        let w = *self.workers.choose(&mut self.rng).expect("workers");
        let roll = self.rng.gen_range(0..100);
        match (roll, self.held(w)) {
            (0..=29, None) => {
                self.fetch(w);
            }
            (0..=29, Some(m)) => {
                // holding already: the service must refuse a second task
                let seq = self.engine.state().last_seq;
                if self.engine.fetch_next(w, self.now).is_ok() {
                    self.stats.other_violations.push(format!("{w} fetched while holding {m}"));
                } else {
                    self.rejected(seq);
                }
            }
            (30..=54, Some(m)) => {
                self.submit(w, m, true);
            }
            (55..=66, Some(m)) => {
                self.submit(w, m, false);
            }
            (67..=74, Some(m)) => self.skip(w, m),
            (75..=82, _) => {
                // someone else's task, or one this worker lost
                let pick = self.history.choose(&mut self.rng).copied();
                if let Some((_, m)) = pick {
                    if self.held(w) != Some(m) && self.submit(w, m, true) {
                        self.stats.other_violations.push(format!("{w} submitted {m} without holding it"));
                    }
                }
            }
            (83..=99, _) => {
                let lease = self.engine.config().scheduler.lease_seconds * 1000;
                self.now += self.rng.gen_range(0..=lease * 3 / 2);
                let seq = self.engine.state().last_seq;
                if self.engine.reclaim_expired(self.now).is_err() {
                    self.rejected(seq);
                }
            }
            _ => {
                if self.held(w).is_none() {
                    self.fetch(w);
                }
            }
        }
        self.stats.actions += 1;
        self.check_safety();
    }

    fn check_safety(&mut self) {
        let state = self.engine.state();
        let mut holders: BTreeMap<MicrotaskId, Vec<WorkerId>> = BTreeMap::new();
        for worker in state.workers.values() {
            if let Some(m) = worker.assigned_microtask_id {
                holders.entry(m).or_default().push(worker.id);
                let mt = &state.microtasks[&m];
                if mt.state != MicrotaskState::Assigned || mt.assigned_worker_id != Some(worker.id) {
                    self.stats.other_violations.push(format!("{} holds {m} in state {:?}", worker.id, mt.state));
                }
            }
        }
        self.stats.double_assignments += holders.values().filter(|ws| ws.len() > 1).count() as u64;
        let mut writers: BTreeMap<_, u32> = BTreeMap::new();
        for mt in state.microtasks.values() {
            if mt.state == MicrotaskState::Assigned && !holders.contains_key(&mt.id) {
                self.stats.other_violations.push(format!("{} is assigned but nobody holds it", mt.id));
            }
            if mt.in_flight() && mt.kind().is_writer() {
                *writers.entry(mt.function_id).or_default() += 1;
            }
        }
        self.stats.writer_overlaps += writers.values().filter(|n| **n > 1).count() as u64;
    }

    /// Honest workers finish whatever is left.
    fn drain(&mut self) {
        let lease = self.engine.config().scheduler.lease_seconds * 1000;
        self.now += lease + 1;
        let _ = self.engine.reclaim_expired(self.now);
        let mut idle_rounds = 0;
        for _ in 0..5_000 {
            if self.engine.state().projects[&self.project].state == ProjectState::Complete {
                self.stats.completed = true;
                return;
            }
            let mut progressed = false;
            for w in self.workers.clone() {
                progressed |= match self.held(w) {
                    Some(m) => self.submit(w, m, true),
                    None => self.fetch(w),
                };
                self.check_safety();
            }
            idle_rounds = if progressed { 0 } else { idle_rounds + 1 };
            if idle_rounds > 2 {
                return;
            }
        }
    }
}

fn state_name<T: serde::Serialize>(s: &T) -> String {
    value::to_value(s).as_str().unwrap_or_default().to_string()
}

/// Replays `events` and checks every state change against the lifecycle
/// relations. Returns the number of transitions checked and the violations.
pub fn audit_transitions(events: &[Event]) -> (u64, Vec<String>) {
    let mut state = State::new();
    let mut violations = Vec::new();
    let mut steps: Vec<(EntityKind, String, String, u64)> = Vec::new();
    let mut check = |entity: EntityKind, from: &str, to: &str, at: u64| steps.push((entity, from.into(), to.into(), at));

    for event in events {
        let behaviors: BTreeMap<_, _> = state.behaviors.iter().map(|(id, b)| (*id, state_name(&b.state))).collect();
        let functions: BTreeMap<_, _> = state.functions.iter().map(|(id, f)| (*id, state_name(&f.state))).collect();
        let mt_state = |id: &MicrotaskId| state.microtasks.get(id).map(|m| state_name(&m.state)).unwrap_or_default();
        let seq = event.seq;
        match &event.body {
            EventBody::MicrotaskAssigned { microtask_id, .. } => check(EntityKind::Microtask, &mt_state(microtask_id), "Assigned", seq),
            EventBody::MicrotaskSkipped { microtask_id, .. } => {
                check(EntityKind::Microtask, &mt_state(microtask_id), "Skipped", seq);
                check(EntityKind::Microtask, "Skipped", "Queued", seq);
            }
            EventBody::MicrotaskTimedOut { microtask_id, .. } => {
                check(EntityKind::Microtask, &mt_state(microtask_id), "TimedOut", seq);
                check(EntityKind::Microtask, "TimedOut", "Queued", seq);
            }
            EventBody::SubmissionApplied { microtask_id, outcome, .. } => {
                check(EntityKind::Microtask, &mt_state(microtask_id), "Submitted", seq);
                let to = match outcome {
                    SubmissionOutcome::Completed => "Completed",
                    SubmissionOutcome::Requeued => "Queued",
                };
                check(EntityKind::Microtask, "Submitted", to, seq);
            }
            EventBody::MicrotaskQueued { microtask } if microtask.state != MicrotaskState::Queued => {
                violations.push(format!("seq {seq}: {} created as {:?}", microtask.id, microtask.state));
            }
            _ => {}
        }
        if let Err(e) = state.apply(event) {
            violations.push(format!("seq {seq}: fold rejected the event: {e}"));
            break;
        }
        for (id, b) in &state.behaviors {
            let now = state_name(&b.state);
            match behaviors.get(id) {
                Some(before) if *before != now => check(EntityKind::Behavior, before, &now, seq),
                None if now != "Identified" => violations.push(format!("seq {seq}: {id} born as {now}")),
                _ => {}
            }
        }
        for (id, f) in &state.functions {
            let now = state_name(&f.state);
            match functions.get(id) {
                Some(before) if *before != now => check(EntityKind::Function, before, &now, seq),
                None if now != "Specified" => violations.push(format!("seq {seq}: {id} born as {now}")),
                _ => {}
            }
        }
    }
    for (entity, from, to, at) in &steps {
        if let Err(e) = check_transition(*entity, from, to) {
            violations.push(format!("seq {at}: {e}"));
        }
    }
    (steps.len() as u64, violations)
}

/// One randomized interleaving over `scenario`'s project.
pub fn run_chaos(scenario: &Scenario, seed: u64, config: &ChaosConfig) -> ChaosStats {
    run_chaos_keep(scenario, seed, config).0
}

/// Like [`run_chaos`], also handing back the engine for inspection.
pub fn run_chaos_keep(scenario: &Scenario, seed: u64, config: &ChaosConfig) -> (ChaosStats, Engine) {
    let engine_config = EngineConfig {
        scheduler: SchedulerConfig { lease_seconds: config.lease_seconds, ..scenario.scheduler.clone() },
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(engine_config);
    let project = engine.create_project(scenario.project_spec.clone(), 0).expect("scenario project is valid");
    let workers =
        (0..config.workers.max(1)).map(|i| engine.register_worker(&format!("c{i}"), 0).expect("register")).collect();

    let mut chaos = Chaos {
        scenario,
        engine,
        project,
        workers,
        history: Vec::new(),
        now: 0,
        rng: ChaCha8Rng::seed_from_u64(seed),
        stats: ChaosStats::default(),
    };
    for _ in 0..config.steps {
        chaos.random_step();
    }
    if config.drain {
        chaos.drain();
    }

    let (checked, violations) = audit_transitions(chaos.engine.log().events());
    chaos.stats.transitions_checked = checked;
    chaos.stats.transition_violations = violations;

    match chaos.engine.log().replay(None) {
        Ok(replayed) if replayed.canonical() == chaos.engine.state().canonical() => {}
        Ok(_) => chaos.stats.other_violations.push("replayed state differs from live state".into()),
        Err(e) => chaos.stats.other_violations.push(format!("replay failed: {e}")),
    }
    let open: BTreeSet<_> = chaos.engine.state().queue.keys().copied().collect();
    for id in open {
        if chaos.engine.state().microtasks[&id].state != MicrotaskState::Queued {
            chaos.stats.other_violations.push(format!("{id} is in the queue but not Queued"));
        }
    }
    (chaos.stats, chaos.engine)
}
