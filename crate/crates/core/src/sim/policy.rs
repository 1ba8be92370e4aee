use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Binding, Bindings, Gripper, RobotState, Scenario, Vec2, World};
use crate::action_codec::{tokenize_all, ActionVector, BinningSpec};
use crate::egot::{schedule, ExecutionState, TaskGraph};
use crate::Scalar;

/// Everything a policy may look at before emitting one tick of tokens.
pub struct Observation<'a, S: Scalar> {
    pub world: &'a World<S>,
    pub state: &'a ExecutionState,
    pub graph: &'a TaskGraph,
    pub scenario: &'a Scenario<S>,
    pub bindings: &'a Bindings,
    /// Per node, how many via points of its path have been visited.
    pub via_progress: &'a [usize],
}

/// Maps an observation to a raw token list. Nothing forces the output to
/// have `7 * N` tokens; the episode loop checks.
pub trait Policy<S: Scalar> {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32>;
}

impl<S: Scalar, P: Policy<S> + ?Sized> Policy<S> for &mut P {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32> {
        (**self).act(obs)
    }
}

impl<S: Scalar, P: Policy<S> + ?Sized> Policy<S> for Box<P> {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32> {
        (**self).act(obs)
    }
}

/// Emits the same tokens every tick.
#[derive(Debug, Clone)]
pub struct FixedPolicy(pub Vec<u32>);

impl<S: Scalar> Policy<S> for FixedPolicy {
    fn act(&mut self, _: &Observation<'_, S>) -> Vec<u32> {
        self.0.clone()
    }
}

/// With probability `rate` per tick, cuts the wrapped policy's output down
/// to a single robot's 7 tokens, the way a policy trained only on
/// single-arm data ends its sequence early.
pub struct LengthCorrupter<P> {
    inner: P,
    rate: f64,
    rng: ChaCha8Rng,
}

impl<P> LengthCorrupter<P> {
    pub fn new(inner: P, rate: f64, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { inner, rate: rate.clamp(0.0, 1.0), rng }
    }
}

impl<S: Scalar, P: Policy<S>> Policy<S> for LengthCorrupter<P> {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32> {
        let mut tokens = self.inner.act(obs);
        if self.rng.gen_bool(self.rate) {
            tokens.truncate(7);
        }
        tokens
    }
}

fn gripper_value<S: Scalar>(g: Gripper) -> S {
    match g {
        Gripper::Open => S::one(),
        Gripper::Closed => S::zero(),
    }
}

fn hold<S: Scalar>(r: &RobotState<S>) -> ActionVector<S> {
    ActionVector::planar(S::zero(), S::zero(), gripper_value(r.gripper))
}

fn encode<S: Scalar>(actions: &[ActionVector<S>], spec: &BinningSpec<S>) -> Vec<u32> {
    tokenize_all(actions, spec).expect("controller actions are finite").into_tokens()
}

/// Zero-motion tokens for every robot, keeping each gripper as it is.
pub fn hold_tokens<S: Scalar>(world: &World<S>, spec: &BinningSpec<S>) -> Vec<u32> {
    encode(&world.robots.iter().map(hold).collect::<Vec<_>>(), spec)
}

/// Proportional step toward `target`, and whether it arrives this tick.
fn approach<S: Scalar>(from: Vec2<S>, target: Vec2<S>, limit: S) -> (Vec2<S>, bool) {
    let d = target - from;
    (d.clamp_each(limit), d.max_abs() <= limit)
}

fn grasp_action<S: Scalar>(r: &RobotState<S>, target: Vec2<S>, limit: S) -> ActionVector<S> {
    if r.holding.is_some() {
        return hold(r);
    }
    let (d, arrives) = approach(r.position, target, limit);
    // A closed empty gripper opens on the way; an open one closes on arrival.
    let close = r.gripper == Gripper::Open && arrives;
    ActionVector::planar(d.x, d.y, if close { S::zero() } else { S::one() })
}

fn release_action<S: Scalar>(
    r: &RobotState<S>,
    object: &str,
    drop_at: Vec2<S>,
    via: &[Vec2<S>],
    visited: usize,
    limit: S,
) -> ActionVector<S> {
    if r.holding.as_deref() != Some(object) {
        return hold(r);
    }
    if let Some(&next) = via.get(visited) {
        let (d, _) = approach(r.position, next, limit);
        return ActionVector::planar(d.x, d.y, S::zero());
    }
    let (d, arrives) = approach(r.position, drop_at, limit);
    ActionVector::planar(d.x, d.y, if arrives { S::one() } else { S::zero() })
}

fn node_action<S: Scalar>(obs: &Observation<'_, S>, robot: usize, node: usize, grasp_lead: Vec2<S>) -> ActionVector<S> {
    let r = &obs.world.robots[robot];
    let limit = obs.world.params.max_step;
    match &obs.bindings.nodes[node] {
        Binding::Grasp { object } => {
            let p = obs.world.objects[object].position + grasp_lead;
            grasp_action(r, p, limit)
        }
        Binding::Release { object, region } => release_action(
            r,
            object,
            obs.world.regions[region].center(),
            obs.scenario.via_path(object),
            obs.via_progress[node],
            limit,
        ),
        Binding::Unbound => hold(r),
    }
}

/// Scripted expert: each robot works on its active graph node and holds
/// still otherwise. Always emits `7 * N` tokens.
pub fn oracle_policy<S: Scalar>(obs: &Observation<'_, S>) -> Vec<u32> {
    let actions: Vec<ActionVector<S>> = obs
        .graph
        .robots()
        .iter()
        .enumerate()
        .map(|(i, decl)| match obs.state.active_of(&decl.id) {
            Some(node) => node_action(obs, i, node, Vec2::default()),
            None => hold(&obs.world.robots[i]),
        })
        .collect();
    encode(&actions, &obs.scenario.spec)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePolicy;

impl<S: Scalar> Policy<S> for OraclePolicy {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32> {
        oracle_policy(obs)
    }
}

/// Graph-blind controller: each robot runs through its own Grasp and
/// Release nodes in plan order as fast as it can, never waiting for the
/// other robot. Grasps aim where the object will be next tick, so a robot
/// can snatch an object out of a moving gripper.
#[derive(Debug, Clone, Default)]
pub struct GreedyPolicy<S> {
    queues: Option<Vec<Vec<usize>>>,
    cursor: Vec<usize>,
    last_seen: BTreeMap<String, Vec2<S>>,
}

impl<S: Scalar> GreedyPolicy<S> {
    pub fn new() -> Self {
        Self { queues: None, cursor: Vec::new(), last_seen: BTreeMap::new() }
    }

    fn queues(graph: &TaskGraph) -> Vec<Vec<usize>> {
        let plan = schedule(graph).expect("episode graphs validate");
        plan.per_robot
            .iter()
            .map(|rp| {
                rp.nodes
                    .iter()
                    .filter_map(|id| graph.index_of(id))
                    .filter(|&i| graph.nodes()[i].task_type.is_physical())
                    .collect()
            })
            .collect()
    }
}

impl<S: Scalar> Policy<S> for GreedyPolicy<S> {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32> {
        let queues = self.queues.get_or_insert_with(|| Self::queues(obs.graph));
        self.cursor.resize(queues.len(), 0);
        let mut actions = Vec::with_capacity(queues.len());
        for (i, queue) in queues.iter().enumerate() {
            let robot = &obs.world.robots[i];
            while let Some(&node) = queue.get(self.cursor[i]) {
                let finished = match &obs.bindings.nodes[node] {
                    Binding::Grasp { object } => robot.holding.as_deref() == Some(object.as_str()),
                    Binding::Release { object, .. } => robot.holding.as_deref() != Some(object.as_str()),
                    Binding::Unbound => true,
                };
                if !finished {
                    break;
                }
                self.cursor[i] += 1;
            }
            let action = match queue.get(self.cursor[i]) {
                Some(&node) => {
                    let lead = match &obs.bindings.nodes[node] {
                        Binding::Grasp { object } => {
                            let now = obs.world.objects[object].position;
                            self.last_seen.get(object).map(|&before| now - before).unwrap_or_default()
                        }
                        _ => Vec2::default(),
                    };
                    node_action(obs, i, node, lead)
                }
                None => hold(robot),
            };
            actions.push(action);
        }
        self.last_seen = obs.world.objects.iter().map(|(id, o)| (id.clone(), o.position)).collect();
        encode(&actions, &obs.scenario.spec)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::action_codec::{detokenize, TokenSeq};
    use crate::sim::{bind, load_scenario};

    fn observe<S: Scalar, R>(
        scenario: &Scenario<S>,
        graph: &TaskGraph,
        world: &World<S>,
        f: impl FnOnce(&Observation<'_, S>) -> R,
    ) -> R {
        let state = ExecutionState::start(Arc::new(graph.clone())).unwrap();
        let bindings = bind(world, graph).unwrap();
        let progress = vec![0; graph.nodes().len()];
        f(&Observation { world, state: &state, graph, scenario, bindings: &bindings, via_progress: &progress })
    }

    #[test]
    fn closes_on_arrival() {
        let (s, g) = load_scenario::<f64>("BuildBlocks", 1).unwrap();
        let mut w = s.world.clone();
        w.robots[0].position = w.objects["pink"].position;
        w.robots[0].gripper = Gripper::Open;
        let tokens = observe(&s, &g, &w, oracle_policy);
        assert_eq!(tokens.len(), 14);
        let acts = detokenize(&TokenSeq::new(tokens, 2).unwrap(), &s.spec).unwrap();
        assert!(acts[0].gripper() < 0.5);
        assert!(acts[0].dx().abs() < 1e-3 && acts[0].dy().abs() < 1e-3);
    }

    #[test]
    fn waiting_robot_holds_still() {
        let (s, g) = load_scenario::<f64>("InsertPlate", 2).unwrap();
        let tokens = observe(&s, &g, &s.world, oracle_policy);
        assert_eq!(&tokens[7..], &hold_tokens(&s.world, &s.spec)[7..]);
        let acts = detokenize(&TokenSeq::new(tokens, 2).unwrap(), &s.spec).unwrap();
        assert!(acts[1].dx().abs() < 1e-3 && acts[1].dy().abs() < 1e-3);
    }

    #[test]
    fn step_is_bounded() {
        let (s, g) = load_scenario::<f64>("PickFruits", 0).unwrap();
        let tokens = observe(&s, &g, &s.world, |o| GreedyPolicy::new().act(o));
        let acts = detokenize(&TokenSeq::new(tokens, 2).unwrap(), &s.spec).unwrap();
        for a in acts {
            assert!(a.dx().abs() <= 0.05 && a.dy().abs() <= 0.05);
        }
    }
}
