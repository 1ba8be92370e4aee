use std::fmt::Write as _;

use super::{TaskGraph, TaskType};

fn shape(t: TaskType) -> &'static str {
    match t {
        TaskType::Grasp => "box",
        TaskType::Release => "ellipse",
        TaskType::Waiting => "diamond",
        TaskType::End => "octagon",
        TaskType::Complete => "doublecircle",
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz text with one line per node and one per edge. Edges between
/// different robots are drawn dashed.
pub fn render_dot(graph: &TaskGraph) -> String {
    let mut s = String::from("digraph egot {\n    rankdir=LR;\n");
    for n in graph.nodes() {
        let mut label = format!("{}: {}", n.id, n.task_type);
        if let Some(r) = &n.robot {
            let _ = write!(label, " [{r}]");
        }
        if !n.description.is_empty() {
            let _ = write!(label, "\\n{}", escape(&n.description));
        }
        let _ = writeln!(s, "    \"{}\" [label=\"{}\", shape={}];", escape(&n.id), label, shape(n.task_type));
    }
    for e in graph.edges() {
        let style = if graph.is_barrier(e) { " [style=dashed]" } else { "" };
        let _ = writeln!(s, "    \"{}\" -> \"{}\"{};", escape(&e.from), escape(&e.to), style);
    }
    s.push_str("}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::egot::{parse_graph, serialize, HANDOVER_EXAMPLE};

    #[test]
    fn counts_lines() {
        let g = parse_graph("robot R \"r\"\nnode g grasp R \"take\"\nnode e end R after g\nnode c complete after e\n")
            .unwrap();
        let dot = render_dot(&g);
        assert_eq!(dot.lines().filter(|l| l.contains("[label=")).count(), 3);
        assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 2);
    }

    #[test]
    fn dashed_iff_cross_robot() {
        let g = parse_graph(HANDOVER_EXAMPLE).unwrap();
        let dot = render_dot(&g);
        for (e, line) in g.edges().iter().zip(dot.lines().filter(|l| l.contains("->"))) {
            assert_eq!(line.contains("dashed"), g.is_barrier(e), "{line}");
        }
        assert_eq!(render_dot(&parse_graph(&serialize(&g)).unwrap()), dot);
    }
}
