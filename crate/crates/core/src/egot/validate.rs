use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{TaskGraph, TaskType};

/// The structural rule a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Rule {
    DuplicateRobot,
    DuplicateNode,
    UnknownRobot,
    UnknownNode,
    SelfEdge,
    DuplicateEdge,
    Acyclicity,
    /// A Complete node carries a robot, or another node lacks one.
    RobotAssignment,
    MissingDescription,
    CompleteCount,
    CompleteNotSink,
    /// A node other than Complete has no outgoing edge.
    ExtraSink,
    EndCount,
    EndToComplete,
    /// Some node of the robot is not a predecessor of its End node.
    EndNotLast,
    GripperDiscipline,
    WaitingWithoutPeer,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::DuplicateRobot => "duplicate robot",
            Rule::DuplicateNode => "duplicate node",
            Rule::UnknownRobot => "unknown robot",
            Rule::UnknownNode => "unknown node",
            Rule::SelfEdge => "self edge",
            Rule::DuplicateEdge => "duplicate edge",
            Rule::Acyclicity => "acyclicity",
            Rule::RobotAssignment => "robot assignment",
            Rule::MissingDescription => "missing description",
            Rule::CompleteCount => "complete count",
            Rule::CompleteNotSink => "complete not sink",
            Rule::ExtraSink => "extra sink",
            Rule::EndCount => "end count",
            Rule::EndToComplete => "end to complete",
            Rule::EndNotLast => "end not last",
            Rule::GripperDiscipline => "gripper discipline",
            Rule::WaitingWithoutPeer => "waiting without peer",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    /// Witnessing node, robot or edge endpoint ids.
    pub ids: Vec<String>,
}

impl Violation {
    fn new<I, S>(rule: Rule, ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { rule, ids: ids.into_iter().map(Into::into).collect() }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} [{}]", self.rule, self.ids.join(", "))
    }
}

/// Checks every structural rule and returns all violations found.
pub fn validate(graph: &TaskGraph) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    references(graph, &mut out);
    let acyclic = cycles(graph, &mut out);
    terminal(graph, &mut out);
    ends(graph, &mut out);
    if acyclic {
        gripper(graph, &mut out);
    }
    waiting(graph, &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn references(g: &TaskGraph, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for r in g.robots() {
        if !seen.insert(r.id.as_str()) {
            out.push(Violation::new(Rule::DuplicateRobot, [r.id.as_str()]));
        }
    }
    let mut seen = HashSet::new();
    for n in g.nodes() {
        if !seen.insert(n.id.as_str()) {
            out.push(Violation::new(Rule::DuplicateNode, [n.id.as_str()]));
        }
        match (&n.robot, n.task_type) {
            (Some(_), TaskType::Complete)
            | (None, TaskType::Grasp | TaskType::Release | TaskType::Waiting | TaskType::End) => {
                out.push(Violation::new(Rule::RobotAssignment, [n.id.as_str()]))
            }
            (Some(r), _) if g.robot_index(r).is_none() => {
                out.push(Violation::new(Rule::UnknownRobot, [n.id.as_str(), r.as_str()]))
            }
            _ => {}
        }
        if n.task_type.is_physical() && n.description.trim().is_empty() {
            out.push(Violation::new(Rule::MissingDescription, [n.id.as_str()]));
        }
    }
    let mut seen = HashSet::new();
    for e in g.edges() {
        for end in [&e.from, &e.to] {
            if g.node(end).is_none() {
                out.push(Violation::new(Rule::UnknownNode, [end.as_str()]));
            }
        }
        if e.from == e.to {
            out.push(Violation::new(Rule::SelfEdge, [e.from.as_str()]));
        } else if !seen.insert((e.from.as_str(), e.to.as_str())) {
            out.push(Violation::new(Rule::DuplicateEdge, [e.from.as_str(), e.to.as_str()]));
        }
    }
}

/// Reports each non-trivial strongly connected component. Returns true if
/// the graph has no cycle (self edges are reported separately).
fn cycles(g: &TaskGraph, out: &mut Vec<Violation>) -> bool {
    let n = g.nodes().len();
    let reach: Vec<Vec<bool>> = (0..n).map(|i| g.descendants(i)).collect();
    let mut assigned = vec![false; n];
    let mut acyclic = true;
    for i in 0..n {
        if assigned[i] || !(0..n).any(|j| j != i && reach[i][j] && reach[j][i]) {
            continue;
        }
        let mut comp: Vec<&str> = (0..n)
            .filter(|&j| j == i || (reach[i][j] && reach[j][i]))
            .inspect(|&j| assigned[j] = true)
            .map(|j| g.nodes()[j].id.as_str())
            .collect();
        comp.sort_unstable();
        out.push(Violation::new(Rule::Acyclicity, comp));
        acyclic = false;
    }
    acyclic
}

fn terminal(g: &TaskGraph, out: &mut Vec<Violation>) {
    let completes: Vec<usize> =
        (0..g.nodes().len()).filter(|&i| g.nodes()[i].task_type == TaskType::Complete).collect();
    if completes.len() != 1 {
        out.push(Violation::new(Rule::CompleteCount, completes.iter().map(|&i| g.nodes()[i].id.as_str())));
    }
    for &c in &completes {
        if !g.succs(c).is_empty() {
            out.push(Violation::new(Rule::CompleteNotSink, [g.nodes()[c].id.as_str()]));
        }
    }
    let sinks: Vec<&str> = g
        .nodes()
        .iter()
        .enumerate()
        .filter(|&(i, n)| n.task_type != TaskType::Complete && g.succs(i).is_empty())
        .map(|(_, n)| n.id.as_str())
        .collect();
    if !sinks.is_empty() {
        out.push(Violation::new(Rule::ExtraSink, sinks));
    }
}

fn by_robot(g: &TaskGraph) -> BTreeMap<&str, Vec<usize>> {
    let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, n) in g.nodes().iter().enumerate() {
        if let Some(r) = &n.robot {
            m.entry(r.as_str()).or_default().push(i);
        }
    }
    m
}

fn ends(g: &TaskGraph, out: &mut Vec<Violation>) {
    for (robot, idx) in by_robot(g) {
        let ends: Vec<usize> = idx.iter().copied().filter(|&i| g.nodes()[i].task_type == TaskType::End).collect();
        if ends.len() != 1 {
            let mut ids = vec![robot];
            ids.extend(ends.iter().map(|&i| g.nodes()[i].id.as_str()));
            out.push(Violation::new(Rule::EndCount, ids));
            continue;
        }
        let end = ends[0];
        if !g.succs(end).iter().any(|&s| g.nodes()[s].task_type == TaskType::Complete) {
            out.push(Violation::new(Rule::EndToComplete, [g.nodes()[end].id.as_str()]));
        }
        let late: Vec<&str> =
            idx.iter().filter(|&&i| i != end && !g.descendants(i)[end]).map(|&i| g.nodes()[i].id.as_str()).collect();
        if !late.is_empty() {
            let mut ids = vec![g.nodes()[end].id.as_str()];
            ids.extend(late);
            out.push(Violation::new(Rule::EndNotLast, ids));
        }
    }
}

/// A robot's Grasp and Release nodes must be totally ordered by the graph
/// and alternate, starting with a Grasp.
fn gripper(g: &TaskGraph, out: &mut Vec<Violation>) {
    for (_, idx) in by_robot(g) {
        let mut gr: Vec<usize> = idx.into_iter().filter(|&i| g.nodes()[i].task_type.is_physical()).collect();
        let reach: BTreeMap<usize, Vec<bool>> = gr.iter().map(|&i| (i, g.descendants(i))).collect();
        let mut unordered = false;
        for (a_pos, &a) in gr.iter().enumerate() {
            for &b in &gr[a_pos + 1..] {
                if !reach[&a][b] && !reach[&b][a] {
                    out.push(Violation::new(
                        Rule::GripperDiscipline,
                        [g.nodes()[a].id.as_str(), g.nodes()[b].id.as_str()],
                    ));
                    unordered = true;
                }
            }
        }
        if unordered {
            continue;
        }
        // Totally ordered: the number of ancestors within the set is the rank.
        let rank: BTreeMap<usize, usize> =
            gr.iter().map(|&i| (i, gr.iter().filter(|&&j| reach[&j][i]).count())).collect();
        gr.sort_by_key(|i| rank[i]);
        let mut expect = TaskType::Grasp;
        let mut prev: Option<usize> = None;
        for &i in &gr {
            let n = &g.nodes()[i];
            if n.task_type != expect {
                let ids: Vec<&str> = prev.iter().map(|&p| g.nodes()[p].id.as_str()).chain([n.id.as_str()]).collect();
                out.push(Violation::new(Rule::GripperDiscipline, ids));
                break;
            }
            expect = if expect == TaskType::Grasp { TaskType::Release } else { TaskType::Grasp };
            prev = Some(i);
        }
    }
}

fn waiting(g: &TaskGraph, out: &mut Vec<Violation>) {
    for (i, n) in g.nodes().iter().enumerate() {
        if n.task_type != TaskType::Waiting {
            continue;
        }
        let has_peer =
            g.preds(i).iter().any(|&p| matches!((&g.nodes()[p].robot, &n.robot), (Some(a), Some(b)) if a != b));
        if !has_peer {
            out.push(Violation::new(Rule::WaitingWithoutPeer, [n.id.as_str()]));
        }
    }
}
