use std::collections::HashMap;

use etk_core::egot::{
    parse_graph, schedule, serialize, validate, DependencyEdge, RobotDecl, TaskGraph, TaskNode, TaskType,
};
use proptest::prelude::*;

/// Random valid graphs: each robot alternates grasp/release along a chain
/// and finishes with an end node; cross-robot edges only run from a lower
/// chain position to a higher one, so the result is acyclic.
fn arb_graph() -> impl Strategy<Value = TaskGraph> {
    (
        1usize..=3,
        prop::collection::vec(1usize..=3, 3),
        prop::collection::vec((0usize..3, 0usize..3, 0usize..3, 0usize..3), 0..5),
    )
        .prop_map(|(robots, lens, cross)| {
            let decls: Vec<RobotDecl> =
                (0..robots).map(|r| RobotDecl { id: format!("R{r}"), label: format!("arm \"{r}\"") }).collect();
            let mut nodes = Vec::new();
            let mut edges = Vec::new();
            let mut chains: Vec<Vec<String>> = Vec::new();
            for (r, &len) in lens.iter().enumerate().take(robots) {
                let mut chain = Vec::new();
                for k in 0..len {
                    let (t, verb) = if k % 2 == 0 { (TaskType::Grasp, "pick") } else { (TaskType::Release, "place") };
                    let id = format!("n{r}_{k}");
                    nodes.push(TaskNode {
                        id: id.clone(),
                        task_type: t,
                        robot: Some(format!("R{r}")),
                        description: format!("{verb} item {k}"),
                        target: None,
                    });
                    if let Some(prev) = chain.last() {
                        edges.push(DependencyEdge::new(prev, id.clone()));
                    }
                    chain.push(id);
                }
                let end = format!("e{r}");
                nodes.push(TaskNode {
                    id: end.clone(),
                    task_type: TaskType::End,
                    robot: Some(format!("R{r}")),
                    description: String::new(),
                    target: None,
                });
                edges.push(DependencyEdge::new(chain.last().unwrap(), end.clone()));
                chains.push(chain);
            }
            nodes.push(TaskNode {
                id: "done".into(),
                task_type: TaskType::Complete,
                robot: None,
                description: String::new(),
                target: None,
            });
            for r in 0..robots {
                edges.push(DependencyEdge::new(format!("e{r}"), "done"));
            }
            for (ra, ka, rb, kb) in cross {
                let (ra, rb) = (ra % robots, rb % robots);
                if ra == rb || ka >= kb || ka >= chains[ra].len() || kb >= chains[rb].len() {
                    continue;
                }
                let e = DependencyEdge::new(chains[ra][ka].clone(), chains[rb][kb].clone());
                if !edges.contains(&e) {
                    edges.push(e);
                }
            }
            TaskGraph::from_parts(decls, nodes, edges)
        })
}

proptest! {
    #[test]
    fn generated_graphs_validate_and_round_trip(g in arb_graph()) {
        prop_assert!(validate(&g).is_ok(), "{:?}", validate(&g));
        let text = serialize(&g);
        let back = parse_graph(&text).unwrap();
        prop_assert!(g.structurally_equal(&back));
        prop_assert_eq!(serialize(&back), text);
    }

    #[test]
    fn plans_respect_every_edge(g in arb_graph()) {
        let plan = schedule(&g).unwrap();
        let pos: HashMap<&str, usize> = plan.order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        prop_assert_eq!(pos.len(), g.nodes().len());
        for e in g.edges() {
            prop_assert!(pos[e.from.as_str()] < pos[e.to.as_str()], "{} !< {}", e.from, e.to);
        }
        prop_assert_eq!(plan.order.last().map(String::as_str), Some("done"));
        let cross = g.edges().iter().filter(|e| g.is_barrier(e)).count();
        prop_assert_eq!(plan.barriers.len(), cross);
        for rp in &plan.per_robot {
            let idx: Vec<usize> = rp.nodes.iter().map(|id| pos[id.as_str()]).collect();
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
