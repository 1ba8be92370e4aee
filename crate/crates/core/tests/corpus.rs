use std::fs;
use std::path::PathBuf;

use etk_core::egot::{parse_graph, schedule, serialize, EgotError, TaskType};

fn corpus(dir: &str) -> Vec<(String, String)> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(dir);
    let mut files: Vec<_> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "egot"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn every_corpus_graph_validates_and_round_trips() {
    let graphs = corpus("graphs");
    assert!(graphs.len() >= 30, "only {} graphs", graphs.len());
    for (name, text) in &graphs {
        let g = parse_graph(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(g.nodes().len() <= 8, "{name} has {} nodes", g.nodes().len());
        assert_eq!(g.nodes().iter().filter(|n| n.task_type == TaskType::Complete).count(), 1);
        let again = parse_graph(&serialize(&g)).unwrap();
        assert!(g.structurally_equal(&again), "{name}");
        assert_eq!(serialize(&again), serialize(&g), "{name}");
        assert_eq!(schedule(&g).unwrap().order.len(), g.nodes().len());
    }
}

#[test]
fn bad_fixtures_report_their_position() {
    let bad = corpus("bad");
    assert!(!bad.is_empty());
    for (name, text) in &bad {
        let want = text.lines().next().and_then(|l| l.strip_prefix("# expect ")).expect("header");
        let (line, col) = want.split_once(':').unwrap();
        match parse_graph(text) {
            Err(EgotError::Syntax { line: l, col: c, .. }) => {
                assert_eq!((l, c), (line.parse().unwrap(), col.trim().parse().unwrap()), "{name}");
            }
            other => panic!("{name}: expected a syntax error, got {other:?}"),
        }
    }
}
