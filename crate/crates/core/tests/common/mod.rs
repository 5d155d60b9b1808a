#![allow(dead_code)]

use microcrowd_core::model::{
    Assertion, EndpointDescription, Field, HttpMethod, ImplementationDraft, Microtask, MicrotaskKind, ProjectSpec,
    ScalarType, Table,
};
use microcrowd_core::scheduler::Assignment;
use microcrowd_core::{
    Engine, EngineConfig, EngineError, MicrotaskId, ProjectId, Submission, SubmissionBody, SubmitResult, Value,
    WorkerId,
};

pub fn n(x: i64) -> Value {
    Value::int(x)
}

pub fn s(x: &str) -> Value {
    Value::str(x)
}

pub fn endpoint(method: HttpMethod, path: &str, name: &str, params: &[(&str, ScalarType)]) -> EndpointDescription {
    EndpointDescription {
        method,
        path: path.to_string(),
        name: name.to_string(),
        description: format!("{name} endpoint"),
        request_schema: params.iter().map(|(p, t)| Field::new(*p, t.clone())).collect(),
        response_schema: vec![Field::new("result", ScalarType::Object)],
    }
}

pub fn todo_spec() -> ProjectSpec {
    ProjectSpec {
        name: "todo".to_string(),
        endpoints: vec![
            endpoint(HttpMethod::Post, "/todos", "addTodo", &[("title", ScalarType::String)]),
            endpoint(HttpMethod::Get, "/todos", "listTodos", &[]),
            endpoint(HttpMethod::Put, "/todos/{id}", "renameTodo", &[("id", ScalarType::Number), ("title", ScalarType::String)]),
            endpoint(HttpMethod::Delete, "/todos/{id}", "deleteTodo", &[("id", ScalarType::Number)]),
        ],
    }
}

/// A project with a single one-parameter function `f`.
pub fn single_spec() -> ProjectSpec {
    ProjectSpec {
        name: "single".to_string(),
        endpoints: vec![endpoint(HttpMethod::Post, "/f", "f", &[("x", ScalarType::Number)])],
    }
}

pub fn test_body(pairs: &[(Value, Value)]) -> SubmissionBody {
    SubmissionBody::WriteTest { assertions: pairs.iter().map(|(a, e)| Assertion::new(vec![a.clone()], e.clone())).collect() }
}

pub fn table_body(default: Value, pairs: &[(Value, Value)]) -> ImplementationDraft {
    let mut table = Table::new(default);
    for (a, v) in pairs {
        table.set(vec![a.clone()], v.clone());
    }
    ImplementationDraft::table(table)
}

pub fn implement(draft: ImplementationDraft) -> SubmissionBody {
    SubmissionBody::ImplementBehavior { implementation: draft }
}

/// Drives an engine the way a crowd would. Workers that receive a
/// microtask the test is not after keep holding it until claimed.
pub struct Rig {
    pub engine: Engine,
    pub now: u64,
    parked: Vec<(WorkerId, MicrotaskId)>,
}

impl Rig {
    pub fn new(config: EngineConfig) -> Rig {
        Rig { engine: Engine::new(config), now: 1_000, parked: Vec::new() }
    }

    pub fn with_project(spec: ProjectSpec) -> (Rig, ProjectId) {
        let mut rig = Rig::new(EngineConfig::default());
        let project = rig.engine.create_project(spec, rig.now).expect("valid spec");
        (rig, project)
    }

    pub fn worker(&mut self) -> WorkerId {
        self.engine.register_worker("tester", self.now).unwrap()
    }

    pub fn fetch(&mut self, worker: WorkerId) -> Option<Assignment> {
        self.engine.fetch_next(worker, self.now).unwrap()
    }

    /// Gets a worker holding a microtask of `kind` that satisfies `pred`.
    pub fn claim(&mut self, kind: MicrotaskKind, pred: impl Fn(&Microtask) -> bool) -> (WorkerId, MicrotaskId) {
        let matches = |engine: &Engine, id: MicrotaskId| {
            let mt = &engine.state().microtasks[&id];
            mt.kind() == kind && pred(mt)
        };
        let state = self.engine.state();
        self.parked.retain(|(w, m)| {
            let mt = &state.microtasks[m];
            mt.state == microcrowd_core::model::MicrotaskState::Assigned && mt.assigned_worker_id == Some(*w)
        });
        if let Some(pos) = self.parked.iter().position(|(_, m)| matches(&self.engine, *m)) {
            return self.parked.remove(pos);
        }
        for _ in 0..200 {
            let w = self.worker();
            match self.fetch(w) {
                Some(a) if matches(&self.engine, a.microtask_id) => return (w, a.microtask_id),
                Some(a) => self.parked.push((w, a.microtask_id)),
                None => break,
            }
        }
        panic!("no {kind} microtask available");
    }

    pub fn claim_kind(&mut self, kind: MicrotaskKind) -> (WorkerId, MicrotaskId) {
        self.claim(kind, |_| true)
    }

    /// Submits; a rejected submission leaves the worker holding the task,
    /// so it goes back to the parked set.
    pub fn submit(&mut self, worker: WorkerId, microtask: MicrotaskId, body: SubmissionBody) -> Result<SubmitResult, EngineError> {
        let result = self.engine.apply_submission(Submission { microtask_id: microtask, worker_id: worker, body }, self.now);
        let mt = &self.engine.state().microtasks[&microtask];
        if result.is_err() && mt.assigned_worker_id == Some(worker) && !self.parked.contains(&(worker, microtask)) {
            self.parked.push((worker, microtask));
        }
        result
    }

    /// Claims an identify task and submits `statement`; returns the new behavior.
    pub fn identify(&mut self, statement: &str) -> microcrowd_core::BehaviorId {
        let (w, m) = self.claim_kind(MicrotaskKind::IdentifyBehavior);
        let function = self.engine.state().microtasks[&m].function_id;
        self.submit(w, m, SubmissionBody::new_statement(statement)).unwrap();
        self.engine.state().behaviors_of(function).last().unwrap().id
    }

    /// Claims the WriteTest microtask for `behavior` and submits `body`.
    pub fn write_test(&mut self, behavior: microcrowd_core::BehaviorId, body: SubmissionBody) -> Result<SubmitResult, EngineError> {
        let (w, m) = self.claim(MicrotaskKind::WriteTest, |mt| {
            matches!(mt.payload, microcrowd_core::model::MicrotaskPayload::WriteTest { behavior_id, .. } if behavior_id == behavior)
        });
        self.submit(w, m, body)
    }

    pub fn kinds(&self, ids: &[MicrotaskId]) -> Vec<MicrotaskKind> {
        ids.iter().map(|id| self.engine.state().microtasks[id].kind()).collect()
    }
}
