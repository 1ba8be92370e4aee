use std::collections::BTreeSet;

use serde::Serialize;

use super::{validate, EgotError, TaskGraph};

/// A cross-robot dependency: `to` (on `to_robot`) may not start until
/// `from` (on `from_robot`) is done.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Barrier {
    pub from: String,
    pub to: String,
    pub from_robot: String,
    pub to_robot: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RobotPlan {
    pub robot: String,
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Plan {
    /// Global linearization, Complete last.
    pub order: Vec<String>,
    /// The order restricted to each declared robot, in declaration order.
    pub per_robot: Vec<RobotPlan>,
    pub barriers: Vec<Barrier>,
}

impl Plan {
    pub fn robot(&self, id: &str) -> Option<&[String]> {
        self.per_robot.iter().find(|p| p.robot == id).map(|p| p.nodes.as_slice())
    }
}

/// Topological order with the lowest ready node id taken first.
pub fn schedule(graph: &TaskGraph) -> Result<Plan, EgotError> {
    validate(graph).map_err(EgotError::NotValidated)?;
    let nodes = graph.nodes();
    let mut indeg: Vec<usize> = (0..nodes.len()).map(|i| graph.preds(i).len()).collect();
    let mut ready: BTreeSet<(&str, usize)> =
        (0..nodes.len()).filter(|&i| indeg[i] == 0).map(|i| (nodes[i].id.as_str(), i)).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some((id, i)) = ready.pop_first() {
        order.push(id.to_string());
        for &s in graph.succs(i) {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.insert((nodes[s].id.as_str(), s));
            }
        }
    }
    let per_robot = graph
        .robots()
        .iter()
        .map(|r| RobotPlan {
            robot: r.id.clone(),
            nodes: order
                .iter()
                .filter(|id| graph.node(id).and_then(|n| n.robot.as_deref()) == Some(r.id.as_str()))
                .cloned()
                .collect(),
        })
        .collect();
    let barriers = graph
        .edges()
        .iter()
        .filter(|e| graph.is_barrier(e))
        .map(|e| Barrier {
            from: e.from.clone(),
            to: e.to.clone(),
            from_robot: graph.node(&e.from).and_then(|n| n.robot.clone()).unwrap_or_default(),
            to_robot: graph.node(&e.to).and_then(|n| n.robot.clone()).unwrap_or_default(),
        })
        .collect();
    Ok(Plan { order, per_robot, barriers })
}
