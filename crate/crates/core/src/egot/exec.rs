use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::{validate, EgotError, TaskGraph, TaskType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Pending,
    Active,
    Done,
    /// Transient: a done Grasp whose postcondition was lost, before it is
    /// re-activated within the same event.
    Invalidated,
}

impl fmt::Display for NodeStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeStatus::Pending => "pending",
            NodeStatus::Active => "active",
            NodeStatus::Done => "done",
            NodeStatus::Invalidated => "invalidated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", content = "node", rename_all = "snake_case")]
pub enum Event {
    NodeDone(String),
    /// The attempt failed; the node stays active and is retried.
    NodeFailed(String),
    /// A done Grasp no longer holds its object.
    PostconditionInvalidated(String),
}

impl Event {
    pub fn node(&self) -> &str {
        match self {
            Event::NodeDone(n) | Event::NodeFailed(n) | Event::PostconditionInvalidated(n) => n,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Event::NodeDone(_) => "node_done",
            Event::NodeFailed(_) => "node_failed",
            Event::PostconditionInvalidated(_) => "postcondition_invalidated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LogKind {
    Activated,
    Done,
    Failed,
    Invalidated,
    /// An active node went back to pending because a prerequisite was lost.
    Reset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub node: String,
    pub kind: LogKind,
}

/// Per-node status of one execution of a validated graph.
///
/// A node is activated as soon as all its dependencies are done and its
/// robot has no other active node; ties go to the lowest node id. Waiting
/// and Complete nodes finish the moment they activate.
#[derive(Debug, Clone)]
pub struct ExecutionState {
    graph: Arc<TaskGraph>,
    status: Vec<NodeStatus>,
    by_id: Vec<usize>,
    log: Vec<LogEntry>,
}

impl ExecutionState {
    pub fn start(graph: Arc<TaskGraph>) -> Result<Self, EgotError> {
        validate(&graph).map_err(EgotError::NotValidated)?;
        let mut by_id: Vec<usize> = (0..graph.nodes().len()).collect();
        by_id.sort_by(|&a, &b| graph.nodes()[a].id.cmp(&graph.nodes()[b].id));
        let mut s = Self { status: vec![NodeStatus::Pending; graph.nodes().len()], graph, by_id, log: Vec::new() };
        s.propagate();
        Ok(s)
    }

    pub fn graph(&self) -> &TaskGraph {
        &self.graph
    }

    pub fn status(&self, id: &str) -> Option<NodeStatus> {
        self.graph.index_of(id).map(|i| self.status[i])
    }

    pub fn status_at(&self, index: usize) -> NodeStatus {
        self.status[index]
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// The active node of `robot`, if any.
    pub fn active_of(&self, robot: &str) -> Option<usize> {
        (0..self.status.len())
            .find(|&i| self.status[i] == NodeStatus::Active && self.graph.nodes()[i].robot.as_deref() == Some(robot))
    }

    pub fn is_complete(&self) -> bool {
        self.graph.complete_node().and_then(|c| self.status(&c.id)).map(|s| s == NodeStatus::Done).unwrap_or(false)
    }

    fn record(&mut self, i: usize, kind: LogKind) {
        self.log.push(LogEntry { node: self.graph.nodes()[i].id.clone(), kind });
    }

    fn set(&mut self, i: usize, status: NodeStatus, kind: LogKind) {
        self.status[i] = status;
        self.record(i, kind);
    }

    fn deps_done(&self, i: usize) -> bool {
        self.graph.preds(i).iter().all(|&p| self.status[p] == NodeStatus::Done)
    }

    fn all_ends_done(&self) -> bool {
        self.graph.nodes().iter().zip(&self.status).all(|(n, &s)| n.task_type != TaskType::End || s == NodeStatus::Done)
    }

    fn propagate(&mut self) {
        loop {
            let mut changed = false;
            for k in 0..self.by_id.len() {
                let i = self.by_id[k];
                if self.status[i] != NodeStatus::Pending || !self.deps_done(i) {
                    continue;
                }
                let node = &self.graph.nodes()[i];
                match node.task_type {
                    TaskType::Waiting => {
                        self.set(i, NodeStatus::Active, LogKind::Activated);
                        self.set(i, NodeStatus::Done, LogKind::Done);
                        changed = true;
                    }
                    TaskType::Complete => {
                        if self.all_ends_done() {
                            self.set(i, NodeStatus::Active, LogKind::Activated);
                            self.set(i, NodeStatus::Done, LogKind::Done);
                            changed = true;
                        }
                    }
                    _ => {
                        let robot = node.robot.clone().unwrap_or_default();
                        if self.active_of(&robot).is_none() {
                            self.set(i, NodeStatus::Active, LogKind::Activated);
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    fn illegal(&self, i: usize, event: &Event) -> EgotError {
        EgotError::IllegalTransition {
            node: self.graph.nodes()[i].id.clone(),
            from: self.status[i],
            event: event.name().to_string(),
        }
    }

    /// Applies one event and activates whatever became ready.
    pub fn advance(&mut self, event: &Event) -> Result<(), EgotError> {
        let i = self.graph.index_of(event.node()).ok_or_else(|| EgotError::UnknownNode(event.node().to_string()))?;
        match event {
            Event::NodeDone(_) => {
                if self.status[i] != NodeStatus::Active {
                    return Err(self.illegal(i, event));
                }
                self.set(i, NodeStatus::Done, LogKind::Done);
            }
            Event::NodeFailed(_) => {
                if self.status[i] != NodeStatus::Active {
                    return Err(self.illegal(i, event));
                }
                self.record(i, LogKind::Failed);
            }
            Event::PostconditionInvalidated(_) => {
                let node = &self.graph.nodes()[i];
                if self.status[i] != NodeStatus::Done || node.task_type != TaskType::Grasp {
                    return Err(self.illegal(i, event));
                }
                let robot = node.robot.clone().unwrap_or_default();
                self.set(i, NodeStatus::Invalidated, LogKind::Invalidated);
                let below = self.graph.descendants(i);
                let reset: Vec<usize> =
                    (0..below.len()).filter(|&j| below[j] && self.status[j] == NodeStatus::Active).collect();
                for j in reset {
                    self.set(j, NodeStatus::Pending, LogKind::Reset);
                }
                if let Some(j) = self.active_of(&robot) {
                    self.set(j, NodeStatus::Pending, LogKind::Reset);
                }
                self.set(i, NodeStatus::Active, LogKind::Activated);
            }
        }
        self.propagate();
        Ok(())
    }
}

/// What each declared robot is doing: the active node's description
/// verbatim, otherwise `"waiting"` while work remains, else `"done"`.
pub fn current_thought(state: &ExecutionState, graph: &TaskGraph) -> Vec<(String, String)> {
    let complete = state.is_complete();
    graph
        .robots()
        .iter()
        .map(|r| {
            let thought = if complete {
                "done".to_string()
            } else if let Some(i) = state.active_of(&r.id) {
                let n = &graph.nodes()[i];
                if n.description.is_empty() {
                    if n.task_type == TaskType::End { "done" } else { "waiting" }.to_string()
                } else {
                    n.description.clone()
                }
            } else if graph.nodes_of(&r.id).any(|n| state.status(&n.id) != Some(NodeStatus::Done)) {
                "waiting".to_string()
            } else {
                "done".to_string()
            };
            (r.id.clone(), thought)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egot::{parse_graph, HANDOVER_EXAMPLE};

    const BLOCKS: &str = r#"robot R1 "left"
robot R2 "right"
node g1 grasp R1 "pick up the pink column" at pink
node r1 release R1 "place the pink column" at base after g1
node e1 end R1 after r1
node g2 grasp R2 "pick up the blue column" at blue
node w2 waiting R2 "wait for the pink column" after g2 r1
node r2 release R2 "place the blue column" at base after w2
node e2 end R2 after r2
node c complete after e1 e2
"#;

    fn state(text: &str) -> ExecutionState {
        ExecutionState::start(Arc::new(parse_graph(text).unwrap())).unwrap()
    }

    fn done(s: &mut ExecutionState, id: &str) {
        s.advance(&Event::NodeDone(id.into())).unwrap();
    }

    fn thought(s: &ExecutionState, robot: &str) -> String {
        current_thought(s, s.graph()).into_iter().find(|(r, _)| r == robot).unwrap().1
    }

    #[test]
    fn handover_runs_to_complete() {
        let mut s = state(HANDOVER_EXAMPLE);
        assert_eq!(s.status("g1"), Some(NodeStatus::Active));
        assert_eq!(s.status("g2"), Some(NodeStatus::Pending));
        assert_eq!(thought(&s, "R2"), "waiting");
        done(&mut s, "g1");
        assert_eq!(s.status("w2"), Some(NodeStatus::Done));
        assert_eq!(s.status("g2"), Some(NodeStatus::Pending));
        done(&mut s, "r1");
        assert_eq!(s.status("g2"), Some(NodeStatus::Active));
        assert_eq!(thought(&s, "R2"), "grasp plate from left");
        done(&mut s, "e1");
        assert_eq!(thought(&s, "R1"), "done");
        done(&mut s, "g2");
        assert!(!s.is_complete());
        done(&mut s, "e2");
        assert!(s.is_complete());
        assert_eq!(current_thought(&s, s.graph()).iter().filter(|(_, t)| t == "done").count(), 2);
    }

    #[test]
    fn done_on_pending_is_illegal() {
        let mut s = state(HANDOVER_EXAMPLE);
        let err = s.advance(&Event::NodeDone("g2".into())).unwrap_err();
        assert_eq!(
            err,
            EgotError::IllegalTransition { node: "g2".into(), from: NodeStatus::Pending, event: "node_done".into() }
        );
    }

    #[test]
    fn failure_keeps_node_active() {
        let mut s = state(HANDOVER_EXAMPLE);
        s.advance(&Event::NodeFailed("g1".into())).unwrap();
        assert_eq!(s.status("g1"), Some(NodeStatus::Active));
        assert_eq!(s.log().last().unwrap().kind, LogKind::Failed);
    }

    #[test]
    fn invalidated_grasp_reenters() {
        let mut s = state(BLOCKS);
        done(&mut s, "g1");
        assert_eq!(s.status("r1"), Some(NodeStatus::Active));
        assert_eq!(thought(&s, "R1"), "place the pink column");
        s.advance(&Event::PostconditionInvalidated("g1".into())).unwrap();
        assert_eq!(s.status("g1"), Some(NodeStatus::Active));
        assert_eq!(s.status("r1"), Some(NodeStatus::Pending));
        assert_eq!(thought(&s, "R1"), "pick up the pink column");
        for id in ["g1", "r1", "e1", "g2", "r2", "e2"] {
            done(&mut s, id);
        }
        assert!(s.is_complete());
    }

    #[test]
    fn only_done_grasps_can_be_invalidated() {
        let mut s = state(BLOCKS);
        assert!(s.advance(&Event::PostconditionInvalidated("g1".into())).is_err());
        done(&mut s, "g1");
        done(&mut s, "r1");
        assert!(s.advance(&Event::PostconditionInvalidated("r1".into())).is_err());
        assert!(matches!(s.advance(&Event::NodeDone("zz".into())), Err(EgotError::UnknownNode(_))));
    }

    #[test]
    fn one_active_node_per_robot() {
        let s = state(BLOCKS);
        for r in ["R1", "R2"] {
            let active = s.graph().nodes_of(r).filter(|n| s.status(&n.id) == Some(NodeStatus::Active)).count();
            assert_eq!(active, 1);
        }
    }
}
