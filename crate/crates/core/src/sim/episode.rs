use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use super::{bind, Binding, Bindings, Observation, Policy, Scenario, SimError, World};
use crate::action_codec::{detokenize, validate_length, TokenSeq};
use crate::egot::{current_thought, Event, ExecutionState, LogKind, NodeStatus, TaskGraph, TaskType};
use crate::Scalar;

/// One entry of an episode trace. `tick` counts policy steps from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    /// The policy emitted the wrong number of tokens; nothing moved.
    WrongTokenCount {
        tick: u64,
        got: usize,
        expected: usize,
    },
    /// A node's success condition became true in the world.
    PredicateFired {
        tick: u64,
        node: String,
    },
    NodeDone {
        tick: u64,
        node: String,
    },
    Invalidated {
        tick: u64,
        node: String,
    },
    Perturbed {
        tick: u64,
        robot: usize,
        object: String,
    },
}

/// A node whose success condition held before all its prerequisites were done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkipEvent {
    pub tick: u64,
    pub node: String,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub ticks: u64,
    pub trace: Vec<TraceEvent>,
    pub skips: Vec<SkipEvent>,
    pub reentries: usize,
    pub wrong_token_counts: usize,
}

/// Drop whatever `robot` holds at the first tick at or after `at_tick`
/// where it holds something.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Perturbation {
    pub at_tick: u64,
    pub robot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EpisodeOptions {
    pub max_ticks: u64,
    pub perturbation: Option<Perturbation>,
}

/// A running episode, advanced one tick at a time.
pub struct Episode<'a, S: Scalar> {
    scenario: &'a Scenario<S>,
    bindings: Bindings,
    world: World<S>,
    state: ExecutionState,
    trace: Vec<TraceEvent>,
    via_progress: Vec<usize>,
    last_pred: Vec<bool>,
    log_seen: usize,
    reentries: usize,
    ticks: u64,
}

impl<'a, S: Scalar> Episode<'a, S> {
    pub fn new(scenario: &'a Scenario<S>, graph: &TaskGraph) -> Result<Self, SimError> {
        let bindings = bind(&scenario.world, graph)?;
        let state = ExecutionState::start(Arc::new(graph.clone()))?;
        let n = graph.nodes().len();
        let mut ep = Self {
            scenario,
            bindings,
            world: scenario.world.clone(),
            log_seen: state.log().len(),
            state,
            trace: Vec::new(),
            via_progress: vec![0; n],
            last_pred: vec![false; n],
            reentries: 0,
            ticks: 0,
        };
        ep.last_pred = (0..n).map(|i| ep.predicate(i)).collect();
        Ok(ep)
    }

    pub fn world(&self) -> &World<S> {
        &self.world
    }

    pub fn state(&self) -> &ExecutionState {
        &self.state
    }

    pub fn graph(&self) -> &TaskGraph {
        self.state.graph()
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn is_success(&self) -> bool {
        self.state.is_complete()
    }

    /// Per robot, the description of what it is working on.
    pub fn thoughts(&self) -> Vec<(String, String)> {
        current_thought(&self.state, self.state.graph())
    }

    pub fn observation(&self) -> Observation<'_, S> {
        Observation {
            world: &self.world,
            state: &self.state,
            graph: self.state.graph(),
            scenario: self.scenario,
            bindings: &self.bindings,
            via_progress: &self.via_progress,
        }
    }

    /// Asks the policy for tokens and, if there are exactly `7 * N` of them,
    /// applies them to the world and updates the graph state.
    pub fn step(&mut self, policy: &mut dyn Policy<S>) -> Result<(), SimError> {
        let tokens = policy.act(&self.observation());
        self.ticks += 1;
        let n = self.world.robots.len();
        if validate_length(&tokens, n, self.scenario.spec.bins()).is_err() {
            self.trace.push(TraceEvent::WrongTokenCount { tick: self.ticks, got: tokens.len(), expected: 7 * n });
            return Ok(());
        }
        let seq = TokenSeq::new(tokens, n).expect("length validated");
        let actions = detokenize(&seq, &self.scenario.spec).expect("tokens validated");
        self.world.step(&actions)?;
        self.track_via();
        self.settle()
    }

    /// Takes the held object away from `robot` and reacts to the loss.
    pub fn perturb(&mut self, robot: usize) -> Result<String, SimError> {
        let object = self.world.drop_held(robot)?;
        self.trace.push(TraceEvent::Perturbed { tick: self.ticks, robot, object: object.clone() });
        self.settle()?;
        Ok(object)
    }

    fn node_robot(&self, i: usize) -> Option<usize> {
        self.bindings.robot[i]
    }

    fn predicate(&self, i: usize) -> bool {
        match &self.bindings.nodes[i] {
            Binding::Grasp { object } => {
                self.world.holder_of(object).is_some() && self.world.holder_of(object) == self.node_robot(i)
            }
            Binding::Release { object, region } => {
                let o = &self.world.objects[object];
                o.held_by.is_none()
                    && self.world.regions[region].contains(o.position)
                    && self.scenario.stack_consistent(&self.world, region)
                    && self.via_progress[i] >= self.scenario.via_path(object).len()
            }
            Binding::Unbound => false,
        }
    }

    fn track_via(&mut self) {
        let radius = self.world.params.grasp_radius;
        for i in 0..self.via_progress.len() {
            if let Binding::Release { object, .. } = &self.bindings.nodes[i] {
                let path = self.scenario.via_path(object);
                let Some(r) = self.node_robot(i) else { continue };
                let robot = &self.world.robots[r];
                if let Some(next) = path.get(self.via_progress[i]) {
                    if robot.holding.as_deref() == Some(object.as_str()) && robot.position.dist(*next) <= radius {
                        self.via_progress[i] += 1;
                    }
                }
            }
        }
    }

    fn advance(&mut self, event: Event) -> Result<(), SimError> {
        self.state.advance(&event)?;
        for entry in &self.state.log()[self.log_seen..] {
            let node = entry.node.clone();
            match entry.kind {
                LogKind::Done => self.trace.push(TraceEvent::NodeDone { tick: self.ticks, node }),
                LogKind::Invalidated => self.trace.push(TraceEvent::Invalidated { tick: self.ticks, node }),
                _ => {}
            }
        }
        self.log_seen = self.state.log().len();
        Ok(())
    }

    /// Feeds world facts into the graph until nothing changes: active nodes
    /// whose condition holds are completed, then done grasps that lost
    /// their object before its release are invalidated.
    fn settle(&mut self) -> Result<(), SimError> {
        let n = self.last_pred.len();
        for i in 0..n {
            let p = self.predicate(i);
            if p && !self.last_pred[i] {
                let node = self.graph().nodes()[i].id.clone();
                self.trace.push(TraceEvent::PredicateFired { tick: self.ticks, node });
            }
            self.last_pred[i] = p;
        }
        loop {
            let mut changed = false;
            for i in 0..n {
                if self.state.status_at(i) != NodeStatus::Active {
                    continue;
                }
                let ty = self.graph().nodes()[i].task_type;
                if ty == TaskType::End || (ty.is_physical() && self.last_pred[i]) {
                    let id = self.graph().nodes()[i].id.clone();
                    self.advance(Event::NodeDone(id))?;
                    changed = true;
                }
            }
            if !self.state.is_complete() {
                for g in 0..n {
                    let Binding::Grasp { object } = &self.bindings.nodes[g] else { continue };
                    if self.state.status_at(g) != NodeStatus::Done {
                        continue;
                    }
                    let released =
                        self.bindings.paired_release[g].is_some_and(|r| self.state.status_at(r) == NodeStatus::Done);
                    if released || self.world.holder_of(object) == self.node_robot(g) {
                        continue;
                    }
                    if let Some(r) = self.bindings.paired_release[g] {
                        self.via_progress[r] = 0;
                    }
                    let id = self.graph().nodes()[g].id.clone();
                    self.advance(Event::PostconditionInvalidated(id))?;
                    self.reentries += 1;
                    changed = true;
                }
            }
            if !changed {
                return Ok(());
            }
        }
    }

    pub fn into_result(self) -> EpisodeResult {
        let skips = detect_skip(&self.trace, self.state.graph());
        let wrong_token_counts = self.trace.iter().filter(|e| matches!(e, TraceEvent::WrongTokenCount { .. })).count();
        EpisodeResult {
            success: self.state.is_complete(),
            ticks: self.ticks,
            trace: self.trace,
            skips,
            reentries: self.reentries,
            wrong_token_counts,
        }
    }
}

pub fn run_episode<S: Scalar>(
    scenario: &Scenario<S>,
    graph: &TaskGraph,
    policy: &mut dyn Policy<S>,
    max_ticks: u64,
) -> Result<EpisodeResult, SimError> {
    run_episode_with(scenario, graph, policy, EpisodeOptions { max_ticks, perturbation: None })
}

/// Runs until the graph completes or the tick budget is spent.
pub fn run_episode_with<S: Scalar>(
    scenario: &Scenario<S>,
    graph: &TaskGraph,
    policy: &mut dyn Policy<S>,
    options: EpisodeOptions,
) -> Result<EpisodeResult, SimError> {
    run_episode_observed(scenario, graph, policy, options, |_| ())
}

/// [`run_episode_with`] that hands the episode to `on_tick` once before the
/// first tick and again after every tick (perturbation included).
pub fn run_episode_observed<S: Scalar>(
    scenario: &Scenario<S>,
    graph: &TaskGraph,
    policy: &mut dyn Policy<S>,
    options: EpisodeOptions,
    mut on_tick: impl FnMut(&Episode<'_, S>),
) -> Result<EpisodeResult, SimError> {
    let mut ep = Episode::new(scenario, graph)?;
    let mut pending = options.perturbation;
    on_tick(&ep);
    while ep.ticks() < options.max_ticks && !ep.is_success() {
        ep.step(policy)?;
        if let Some(p) = pending {
            let holding = ep.world().robots.get(p.robot).ok_or(SimError::UnknownRobot(p.robot))?.holding.is_some();
            if ep.ticks() >= p.at_tick && holding && !ep.is_success() {
                ep.perturb(p.robot)?;
                pending = None;
            }
        }
        on_tick(&ep);
    }
    Ok(ep.into_result())
}

/// Replays the trace and reports every Grasp or Release condition that
/// fired while one of the node's dependencies was not done.
pub fn detect_skip(trace: &[TraceEvent], graph: &TaskGraph) -> Vec<SkipEvent> {
    let mut done: HashSet<&str> = HashSet::new();
    let mut skips = Vec::new();
    for ev in trace {
        match ev {
            TraceEvent::NodeDone { node, .. } => {
                done.insert(node);
            }
            TraceEvent::Invalidated { node, .. } => {
                done.remove(node.as_str());
            }
            TraceEvent::PredicateFired { tick, node } => {
                if !graph.node(node).is_some_and(|n| n.task_type.is_physical()) {
                    continue;
                }
                let missing: Vec<String> =
                    graph.dependencies(node).into_iter().filter(|d| !done.contains(d)).map(String::from).collect();
                if !missing.is_empty() {
                    skips.push(SkipEvent { tick: *tick, node: node.clone(), missing });
                }
            }
            _ => {}
        }
    }
    skips
}
