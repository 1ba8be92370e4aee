//! Embodied task graphs: typed sub-task nodes assigned to robots, with
//! completion-before dependencies between them.
//!
//! A graph is authored in a small line-oriented DSL ([`parse_graph`]),
//! checked against the structural rules in [`validate`], linearized by
//! [`schedule`] and executed step by step through [`ExecutionState`].

mod exec;
mod parse;
mod render;
mod schedule;
mod validate;

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use exec::{current_thought, Event, ExecutionState, LogEntry, LogKind, NodeStatus};
pub use parse::{parse_graph, parse_graph_unchecked, serialize};
pub use render::render_dot;
pub use schedule::{schedule, Barrier, Plan, RobotPlan};
pub use validate::{validate, Rule, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EgotError {
    #[error("line {line}, column {col}: expected {expected}")]
    Syntax { line: usize, col: usize, expected: String },
    #[error("invalid graph: {}", join(.0))]
    Semantic(Vec<Violation>),
    #[error("graph does not validate: {}", join(.0))]
    NotValidated(Vec<Violation>),
    #[error("illegal transition: {event} on node `{node}` in status {from}")]
    IllegalTransition { node: String, from: NodeStatus, event: String },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TaskType {
    /// Gripper engages an object; the robot is occupied until a Release.
    Grasp,
    /// Object leaves the gripper, usually at a placement location.
    Release,
    /// Synchronization point: the robot idles until another robot's work is done.
    Waiting,
    /// All of this robot's work is finished.
    End,
    /// Unique terminal node of the whole graph.
    Complete,
}

impl TaskType {
    pub const ALL: [TaskType; 5] =
        [TaskType::Grasp, TaskType::Release, TaskType::Waiting, TaskType::End, TaskType::Complete];

    pub fn keyword(self) -> &'static str {
        match self {
            TaskType::Grasp => "grasp",
            TaskType::Release => "release",
            TaskType::Waiting => "waiting",
            TaskType::End => "end",
            TaskType::Complete => "complete",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.keyword() == s)
    }

    /// Types whose completion is decided by the world rather than by the graph.
    pub fn is_physical(self) -> bool {
        matches!(self, TaskType::Grasp | TaskType::Release)
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RobotDecl {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TaskNode {
    pub id: String,
    pub task_type: TaskType,
    /// `None` only for the Complete node.
    pub robot: Option<String>,
    pub description: String,
    /// Object or region the sub-task acts on, resolved by the simulator.
    pub target: Option<String>,
}

/// `from` must be done before `to` may start.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct DependencyEdge {
    pub from: String,
    pub to: String,
}

impl DependencyEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>) -> Self {
        Self { from: from.into(), to: to.into() }
    }
}

/// Robots, typed nodes and dependency edges. Construction does not check
/// the structural rules; see [`validate`].
#[derive(Debug, Clone)]
pub struct TaskGraph {
    robots: Vec<RobotDecl>,
    nodes: Vec<TaskNode>,
    edges: Vec<DependencyEdge>,
    index: HashMap<String, usize>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl PartialEq for TaskGraph {
    fn eq(&self, other: &Self) -> bool {
        self.robots == other.robots && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl Eq for TaskGraph {}

impl TaskGraph {
    pub fn from_parts(robots: Vec<RobotDecl>, nodes: Vec<TaskNode>, edges: Vec<DependencyEdge>) -> Self {
        let mut index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            index.entry(n.id.clone()).or_insert(i);
        }
        let mut preds = vec![Vec::new(); nodes.len()];
        let mut succs = vec![Vec::new(); nodes.len()];
        for e in &edges {
            if let (Some(&a), Some(&b)) = (index.get(&e.from), index.get(&e.to)) {
                if !succs[a].contains(&b) {
                    succs[a].push(b);
                    preds[b].push(a);
                }
            }
        }
        Self { robots, nodes, edges, index, preds, succs }
    }

    pub fn robots(&self) -> &[RobotDecl] {
        &self.robots
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[DependencyEdge] {
        &self.edges
    }

    pub fn node(&self, id: &str) -> Option<&TaskNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn robot_index(&self, robot: &str) -> Option<usize> {
        self.robots.iter().position(|r| r.id == robot)
    }

    /// Direct prerequisites of node `i`, by node index.
    pub fn preds(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    pub fn succs(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    pub fn dependencies(&self, id: &str) -> Vec<&str> {
        self.index_of(id)
            .map(|i| self.preds[i].iter().map(|&p| self.nodes[p].id.as_str()).collect())
            .unwrap_or_default()
    }

    pub fn nodes_of<'a>(&'a self, robot: &'a str) -> impl Iterator<Item = &'a TaskNode> + 'a {
        self.nodes.iter().filter(move |n| n.robot.as_deref() == Some(robot))
    }

    pub fn complete_node(&self) -> Option<&TaskNode> {
        self.nodes.iter().find(|n| n.task_type == TaskType::Complete)
    }

    /// True if the edge joins nodes of two different robots.
    pub fn is_barrier(&self, edge: &DependencyEdge) -> bool {
        match (self.node(&edge.from), self.node(&edge.to)) {
            (Some(a), Some(b)) => matches!((&a.robot, &b.robot), (Some(x), Some(y)) if x != y),
            _ => false,
        }
    }

    /// Nodes reachable from `start` (excluding `start` unless on a cycle).
    pub fn descendants(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = self.succs[start].clone();
        while let Some(v) = stack.pop() {
            if !seen[v] {
                seen[v] = true;
                stack.extend(self.succs[v].iter().copied());
            }
        }
        seen
    }

    /// Same robots and nodes, and the same edge set irrespective of order.
    pub fn structurally_equal(&self, other: &TaskGraph) -> bool {
        let mut a = self.edges.clone();
        let mut b = other.edges.clone();
        a.sort();
        b.sort();
        self.robots == other.robots && self.nodes == other.nodes && a == b
    }

    /// The graph has a cross-robot edge leaving a Release node, i.e. one
    /// robot hands an object or a placement over to another.
    pub fn has_handover(&self) -> bool {
        self.edges.iter().any(|e| {
            self.is_barrier(e) && self.node(&e.from).map(|n| n.task_type == TaskType::Release).unwrap_or(false)
        })
    }
}

/// The two-robot plate handover used throughout docs and tests.
pub const HANDOVER_EXAMPLE: &str = r#"robot R1 "left"
robot R2 "right"
node g1 grasp R1 "grasp plate"
node w2 waiting R2 "wait for plate" after g1
node r1 release R1 "release plate to right" after g1
node g2 grasp R2 "grasp plate from left" after r1 w2
node e1 end R1 after r1
node e2 end R2 after g2
node c complete after e1 e2
"#;
