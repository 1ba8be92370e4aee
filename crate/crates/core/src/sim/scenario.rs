use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Rect, SimError, Vec2, World, WorldParams};
use crate::action_codec::BinningSpec;
use crate::egot::{parse_graph, schedule, TaskGraph, TaskType};
use crate::Scalar;

/// The six collaborative task analogs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TaskName {
    PickBread,
    PickFruits,
    WipePlate,
    InsertPlate,
    PullString,
    BuildBlocks,
}

impl TaskName {
    pub const ALL: [TaskName; 6] = [
        TaskName::PickBread,
        TaskName::PickFruits,
        TaskName::WipePlate,
        TaskName::InsertPlate,
        TaskName::PullString,
        TaskName::BuildBlocks,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskName::PickBread => "PickBread",
            TaskName::PickFruits => "PickFruits",
            TaskName::WipePlate => "WipePlate",
            TaskName::InsertPlate => "InsertPlate",
            TaskName::PullString => "PullString",
            TaskName::BuildBlocks => "BuildBlocks",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskName {
    type Err = SimError;

    /// Case-insensitive; `-` and `_` are ignored, so `pick-bread` works.
    fn from_str(s: &str) -> Result<Self, SimError> {
        let key: String = s.chars().filter(|c| *c != '-' && *c != '_').flat_map(char::to_lowercase).collect();
        Self::ALL
            .into_iter()
            .find(|t| t.name().to_lowercase() == key)
            .ok_or_else(|| SimError::UnknownScenario(s.to_string()))
    }
}

/// Initial world plus the task-specific success conditions.
#[derive(Debug, Clone)]
pub struct Scenario<S> {
    pub name: TaskName,
    pub seed: u64,
    pub world: World<S>,
    /// Rectangle each object's initial position was drawn from.
    pub ranges: BTreeMap<String, Rect<S>>,
    /// Per region, the required bottom-to-top order of the listed objects.
    pub stack_order: BTreeMap<String, Vec<String>>,
    /// Per object, points it must be carried over before it is set down.
    pub via: BTreeMap<String, Vec<Vec2<S>>>,
    pub spec: BinningSpec<S>,
}

impl<S: Scalar> Scenario<S> {
    pub fn via_path(&self, object: &str) -> &[Vec2<S>] {
        self.via.get(object).map(Vec::as_slice).unwrap_or(&[])
    }

    /// True if no two listed objects resting in `region` are out of order.
    pub fn stack_consistent(&self, world: &World<S>, region: &str) -> bool {
        let Some(order) = self.stack_order.get(region) else { return true };
        let ranks: Vec<usize> =
            world.resting_in(region).iter().filter_map(|o| order.iter().position(|x| x == o)).collect();
        ranks.windows(2).all(|w| w[0] < w[1])
    }
}

/// What a node acts on in the world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Binding {
    Grasp {
        object: String,
    },
    Release {
        object: String,
        region: String,
    },
    /// Waiting, End and Complete nodes have no physical target.
    Unbound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Bindings {
    /// Indexed like the graph's nodes.
    pub nodes: Vec<Binding>,
    /// For each Grasp node, the Release of the same robot that follows it.
    pub paired_release: Vec<Option<usize>>,
    /// World robot index of each node, `None` for Complete.
    pub robot: Vec<Option<usize>>,
}

/// Resolves node targets against the world: Grasp targets name objects,
/// Release targets name regions and release whatever the robot's previous
/// Grasp picked up.
pub fn bind<S: Scalar>(world: &World<S>, graph: &TaskGraph) -> Result<Bindings, SimError> {
    let plan = schedule(graph)?;
    if graph.robots().len() != world.robots.len() {
        let id = graph.robots().get(world.robots.len()).map(|r| r.id.clone()).unwrap_or_else(|| "graph".to_string());
        return Err(SimError::BindingError {
            node: id,
            missing: format!(
                "the scenario has {} robots, the graph declares {}",
                world.robots.len(),
                graph.robots().len()
            ),
        });
    }
    let n = graph.nodes().len();
    let mut nodes = vec![Binding::Unbound; n];
    let mut paired_release = vec![None; n];
    let robot = graph.nodes().iter().map(|node| node.robot.as_deref().and_then(|r| graph.robot_index(r))).collect();
    for rp in &plan.per_robot {
        let mut last_grasp: Option<(usize, String)> = None;
        for id in &rp.nodes {
            let i = graph.index_of(id).expect("plan lists graph nodes");
            let node = &graph.nodes()[i];
            let missing = |what: String| SimError::BindingError { node: id.clone(), missing: what };
            match node.task_type {
                TaskType::Grasp => {
                    let object = node.target.clone().ok_or_else(|| missing("target object".into()))?;
                    if !world.objects.contains_key(&object) {
                        return Err(missing(format!("object `{object}`")));
                    }
                    nodes[i] = Binding::Grasp { object: object.clone() };
                    last_grasp = Some((i, object));
                }
                TaskType::Release => {
                    let region = node.target.clone().ok_or_else(|| missing("target region".into()))?;
                    if !world.regions.contains_key(&region) {
                        return Err(missing(format!("region `{region}`")));
                    }
                    let (g, object) = last_grasp.take().ok_or_else(|| missing("preceding grasp".into()))?;
                    paired_release[g] = Some(i);
                    nodes[i] = Binding::Release { object, region };
                }
                _ => {}
            }
        }
    }
    Ok(Bindings { nodes, paired_release, robot })
}

const ROBOTS: &str = "robot R1 \"left\"\nrobot R2 \"right\"\n";

const PICK_FRUITS: &str = r#"node g1 grasp R1 "pick up the banana" at banana
node r1 release R1 "put the banana in the bowl" at bowl after g1
node e1 end R1 after r1
node g2 grasp R2 "pick up the mango" at mango
node w2 waiting R2 "wait for the banana" after g2 r1
node r2 release R2 "put the mango in the bowl" at bowl after w2
node e2 end R2 after r2
node c complete after e1 e2
"#;

const WIPE_PLATE: &str = r#"node g1 grasp R1 "pick up the sponge" at sponge
node r1 release R1 "wipe the plate and set the sponge down" at tray after g1
node e1 end R1 after r1
node c complete after e1
"#;

const INSERT_PLATE: &str = r#"node g1 grasp R1 "pick up the plate" at plate
node r1 release R1 "hand the plate over" at handover after g1
node e1 end R1 after r1
node w2 waiting R2 "wait for the plate" after r1
node g2 grasp R2 "take the plate" at plate after w2
node r2 release R2 "insert the plate into the rack" at rack after g2
node e2 end R2 after r2
node c complete after e1 e2
"#;

const PULL_STRING: &str = r#"node g1 grasp R1 "grasp the left end of the string" at end_a
node g2 grasp R2 "grasp the right end of the string" at end_b
node w1 waiting R1 "wait for the right end" after g1 g2
node w2 waiting R2 "wait for the left end" after g1 g2
node r1 release R1 "pull the left end to its mark" at mark_a after w1
node r2 release R2 "pull the right end to its mark" at mark_b after w2
node e1 end R1 after r1
node e2 end R2 after r2
node c complete after e1 e2
"#;

const BUILD_BLOCKS: &str = r#"node g1 grasp R1 "pick up the pink column" at pink
node r1 release R1 "place the pink column" at base after g1
node g2 grasp R2 "pick up the blue column" at blue
node w2 waiting R2 "wait for the pink column" after g2 r1
node r2 release R2 "place the blue column" at base after w2
node g3 grasp R1 "pick up the wedge" at wedge after r1
node w1 waiting R1 "wait for the blue column" after g3 r2
node r3 release R1 "place the wedge as the roof" at base after w1
node e1 end R1 after r3
node e2 end R2 after r2
node c complete after e1 e2
"#;

/// Graph text for a task. PickBread depends on which side the bread is on.
fn graph_text(name: TaskName, bread_on_left: bool) -> String {
    let body = match name {
        TaskName::PickBread => {
            let k = if bread_on_left { 1 } else { 2 };
            format!(
                "node g{k} grasp R{k} \"pick up the bread\" at bread\n\
                 node r{k} release R{k} \"place the bread on the plate\" at plate after g{k}\n\
                 node e{k} end R{k} after r{k}\n\
                 node c complete after e{k}\n"
            )
        }
        TaskName::PickFruits => PICK_FRUITS.to_string(),
        TaskName::WipePlate => WIPE_PLATE.to_string(),
        TaskName::InsertPlate => INSERT_PLATE.to_string(),
        TaskName::PullString => PULL_STRING.to_string(),
        TaskName::BuildBlocks => BUILD_BLOCKS.to_string(),
    };
    format!("{ROBOTS}{body}")
}

type R = (f64, f64, f64, f64);

struct Layout {
    objects: Vec<(&'static str, R)>,
    regions: Vec<(&'static str, R)>,
    stack: Option<(&'static str, Vec<&'static str>)>,
    via: Option<(&'static str, Vec<(f64, f64)>)>,
}

fn layout(name: TaskName, bread_on_left: bool) -> Layout {
    let none = Layout { objects: vec![], regions: vec![], stack: None, via: None };
    match name {
        TaskName::PickBread => Layout {
            objects: vec![("bread", if bread_on_left { (0.08, 0.2, 0.16, 0.4) } else { (0.84, 0.2, 0.92, 0.4) })],
            regions: vec![("plate", (0.44, 0.24, 0.56, 0.36))],
            ..none
        },
        TaskName::PickFruits => Layout {
            objects: vec![("banana", (0.08, 0.2, 0.16, 0.4)), ("mango", (0.72, 0.2, 0.78, 0.4))],
            regions: vec![("bowl", (0.55, 0.25, 0.65, 0.35))],
            stack: Some(("bowl", vec!["banana", "mango"])),
            ..none
        },
        TaskName::WipePlate => Layout {
            objects: vec![("sponge", (0.1, 0.1, 0.18, 0.2))],
            regions: vec![("plate", (0.42, 0.22, 0.62, 0.42)), ("tray", (0.25, 0.45, 0.35, 0.55))],
            via: Some((
                "sponge",
                vec![(0.45, 0.25), (0.59, 0.25), (0.45, 0.32), (0.59, 0.32), (0.45, 0.39), (0.59, 0.39)],
            )),
            ..none
        },
        TaskName::InsertPlate => Layout {
            objects: vec![("plate", (0.1, 0.25, 0.16, 0.35))],
            regions: vec![("handover", (0.6, 0.25, 0.7, 0.35)), ("rack", (0.9, 0.08, 0.98, 0.18))],
            ..none
        },
        TaskName::PullString => Layout {
            objects: vec![("end_a", (0.3, 0.25, 0.35, 0.35)), ("end_b", (0.65, 0.25, 0.7, 0.35))],
            regions: vec![("mark_a", (0.04, 0.25, 0.14, 0.35)), ("mark_b", (0.86, 0.25, 0.96, 0.35))],
            ..none
        },
        TaskName::BuildBlocks => Layout {
            objects: vec![
                ("pink", (0.1, 0.2, 0.16, 0.3)),
                ("blue", (0.68, 0.2, 0.74, 0.3)),
                ("wedge", (0.1, 0.4, 0.16, 0.5)),
            ],
            regions: vec![("base", (0.5, 0.25, 0.6, 0.35))],
            stack: Some(("base", vec!["pink", "blue", "wedge"])),
            ..none
        },
    }
}

fn rect<S: Scalar>((x0, y0, x1, y1): R) -> Rect<S> {
    Rect::new(S::lit(x0), S::lit(y0), S::lit(x1), S::lit(y1))
}

/// Builds a task analog with object positions drawn uniformly from their
/// ranges, and the task graph that goes with it.
pub fn load_scenario<S: Scalar>(name: &str, seed: u64) -> Result<(Scenario<S>, TaskGraph), SimError> {
    let task: TaskName = name.parse()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bread_on_left = rng.gen_bool(0.5);
    let lay = layout(task, bread_on_left);
    let homes = [Vec2::new(S::lit(0.2), S::lit(0.3)), Vec2::new(S::lit(0.8), S::lit(0.3))];
    let mut world = World::new(WorldParams::default(), &homes);
    for (id, r) in &lay.regions {
        world.add_region(id, rect(*r));
    }
    let mut ranges = BTreeMap::new();
    for (id, r) in &lay.objects {
        let (x0, y0, x1, y1) = *r;
        let p = Vec2::new(S::lit(rng.gen_range(x0..=x1)), S::lit(rng.gen_range(y0..=y1)));
        world.add_object(id, p);
        ranges.insert(id.to_string(), rect(*r));
    }
    let stack_order = lay
        .stack
        .into_iter()
        .map(|(region, objs)| (region.to_string(), objs.into_iter().map(String::from).collect()))
        .collect();
    let via = lay
        .via
        .into_iter()
        .map(|(obj, pts)| (obj.to_string(), pts.into_iter().map(|(x, y)| Vec2::new(S::lit(x), S::lit(y))).collect()))
        .collect();
    let graph = parse_graph(&graph_text(task, bread_on_left))?;
    let scenario = Scenario { name: task, seed, world, ranges, stack_order, via, spec: BinningSpec::default() };
    bind(&scenario.world, &graph)?;
    Ok((scenario, graph))
}
