//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Run with `cargo test --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use etk_core::ablation::{run_ablation, Arm, ExperimentConfig};
use etk_core::action_codec::{detokenize, tokenize, ActionVector, BinningSpec, DOF};
use etk_core::dataset::{synthetic_unimanual, Dataset};
use etk_core::egot::{
    parse_graph, schedule, serialize, validate, DependencyEdge, EgotError, NodeStatus, Rule, TaskGraph, TaskNode,
    TaskType, HANDOVER_EXAMPLE,
};
use etk_core::scp::{audit_file, draw_partners, generate_scp_dataset, provenance_path, ScpConfig};
use etk_core::sim::{load_scenario, run_episode, Episode, GreedyPolicy, OraclePolicy, TaskName};
use etk_core::toy_policy::{continue_pretrain, eval_token_count, fit, Weight};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn within(limit: Duration, took: Duration, what: &str) -> Result<(), String> {
    ensure(took < limit, || format!("{what} took {took:.2?}, limit {limit:?}"))
}

fn scp_corpus(dir: &std::path::Path) -> Result<(Dataset, PathBuf), String> {
    let spec = BinningSpec::<f64>::default();
    let source = synthetic_unimanual(10_000, 11, &spec);
    let path = dir.join("uni.jsonl");
    source.save(&path).map_err(|e| e.to_string())?;
    Ok((source, path))
}

/// Criterion 1: every cross-sampled line has 14 tokens, the audit is clean and no
/// sample is its own partner.
fn scp_length_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, src_path) = scp_corpus(dir.path())?;
    let out = dir.path().join("scp.jsonl");
    let start = Instant::now();
    let source = Dataset::load(&src_path).map_err(|e| e.to_string())?;
    let config = ScpConfig::new(2, 42).map_err(|e| e.to_string())?;
    let generated = generate_scp_dataset(&source, &config, 64).map_err(|e| e.to_string())?;
    generated.save(&out).map_err(|e| e.to_string())?;
    let report = audit_file(&out, Some(&source)).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let reloaded = Dataset::load(&out).map_err(|e| e.to_string())?;
    let fourteen = reloaded.samples().iter().filter(|s| s.tokens.len() == 14).count();
    ensure(reloaded.len() == 10_000 && fourteen == 10_000, || {
        format!("{fourteen}/{} samples have 14 tokens", reloaded.len())
    })?;
    ensure(report.correct_length_fraction == 1.0, || {
        format!("audit length fraction {}", report.correct_length_fraction)
    })?;
    ensure(report.self_partners.is_empty(), || format!("{} self-partners", report.self_partners.len()))?;
    ensure(report.is_clean(), || format!("audit not clean: {report:?}"))?;
    within(Duration::from_secs(5), took, "generate + audit")?;
    Ok(format!("10000/10000 of length 14, audit clean, {took:.2?}"))
}

/// Criterion 2: same seed, same bytes.
fn scp_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (source, _) = scp_corpus(dir.path())?;
    let mut files = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}.jsonl"));
        let config = ScpConfig::new(2, 42).map_err(|e| e.to_string())?;
        generate_scp_dataset(&source, &config, 64).and_then(|g| g.save(&out)).map_err(|e| e.to_string())?;
        let data = fs::read(&out).map_err(|e| e.to_string())?;
        let prov = fs::read(provenance_path(&out)).map_err(|e| e.to_string())?;
        files.push((data, prov));
    }
    ensure(files[0].0 == files[1].0, || "dataset bytes differ".into())?;
    ensure(files[0].1 == files[1].1, || "provenance bytes differ".into())?;
    Ok(format!("{} + {} bytes identical", files[0].0.len(), files[0].1.len()))
}

/// Criterion 3: partners of one batch member are uniform over the other seven.
fn partner_uniformity() -> Outcome {
    let draws = 100_000;
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts = [0u64; 8];
    for k in 0..draws {
        let own = k % n;
        let p = draw_partners(&mut rng, n, own, 1)[0];
        ensure(p != own, || format!("drew self at draw {k}"))?;
        // Relabel so the seven candidates of every `own` share bins 0..7.
        counts[(p + n - own - 1) % n] += 1;
    }
    ensure(counts[n - 1] == 0, || "relabelling produced an eighth bin".into())?;
    let expected = draws as f64 / 7.0;
    let stat: f64 = counts[..7].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(6.0).unwrap().cdf(stat);
    ensure(p > 0.01, || format!("chi2 = {stat:.3}, p = {p:.4}"))?;
    Ok(format!("chi2 = {stat:.3} on 6 dof, p = {p:.3}"))
}

/// Criterion 4: round-trip error within half a bin; monotone across every boundary.
fn codec_properties() -> Outcome {
    let spec = BinningSpec::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for dim in 0..DOF {
        let r = spec.range(dim);
        let half = spec.bin_width(dim) / 2.0;
        for _ in 0..10_000 {
            let mut v = [0.0; DOF];
            v[dim] = rng.gen_range(r.lo..=r.hi);
            let toks = tokenize(&ActionVector::from_array(v), &spec).map_err(|e| e.to_string())?;
            let back = detokenize(&toks, &spec).map_err(|e| e.to_string())?[0].components[dim];
            let err = (back - v[dim]).abs();
            worst = worst.max(err / half);
            ensure(err <= half * (1.0 + 1e-9), || format!("dim {dim}: |{back} - {}| > {half}", v[dim]))?;
        }
        let w = spec.bin_width(dim);
        let mut prev = 0u32;
        for k in 0..=spec.bins() {
            let edge = r.lo + w * k as f64;
            for x in [edge - w * 1e-6, edge, edge + w * 1e-6] {
                let t = spec.token_for(dim, x);
                ensure(t >= prev, || format!("dim {dim}: token drops at boundary {k}"))?;
                prev = t;
            }
            if k > 0 && k < spec.bins() {
                ensure(
                    spec.token_for(dim, edge - w * 1e-6) == k - 1 && spec.token_for(dim, edge + w * 1e-6) == k,
                    || format!("dim {dim}: boundary {k} misassigned"),
                )?;
            }
        }
        ensure(prev == spec.bins() - 1, || format!("dim {dim}: top token {prev}"))?;
    }
    Ok(format!("7 x 10^4 values, worst error {:.3} half-bins, 257 boundaries per dim", worst))
}

/// Criterion 5: wrong-length rates of the three toy models.
fn toy_length_experiment() -> Outcome {
    let start = Instant::now();
    let spec = BinningSpec::<f64>::default();
    let uni = synthetic_unimanual(2000, 5, &spec);
    let pre = fit(uni.samples(), spec.bins()).map_err(|e| e.to_string())?;
    let scp = generate_scp_dataset(&uni, &ScpConfig::new(2, 5).unwrap(), 64).map_err(|e| e.to_string())?;
    let post = continue_pretrain(&pre, scp.dataset.samples(), Weight::Replace);
    // Weighting the SCP counts by the size ratio gives equal stop mass at 7 and 14.
    let ratio = uni.len() as f64 / scp.dataset.len() as f64;
    let mixed = continue_pretrain(&pre, scp.dataset.samples(), Weight::Finite(ratio));
    let trials = 10_000;
    let rates = [
        eval_token_count(&pre, trials, 2, 1),
        eval_token_count(&post, trials, 2, 1),
        eval_token_count(&mixed, trials, 2, 1),
    ];
    let took = start.elapsed();
    ensure(rates[0] == 1.0, || format!("pre-SCP rate {}", rates[0]))?;
    ensure(rates[1] == 0.0, || format!("post-SCP rate {}", rates[1]))?;
    ensure((rates[2] - 0.5).abs() <= 0.05, || format!("mixture rate {}", rates[2]))?;
    within(Duration::from_secs(10), took, "toy experiment")?;
    Ok(format!("rates {:.2} / {:.2} / {:.3}, {took:.2?}", rates[0], rates[1], rates[2]))
}

fn corpus(dir: &str) -> Vec<(String, String)> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(dir);
    let mut files: Vec<_> = fs::read_dir(root)
        .map(|rd| {
            rd.filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "egot"))
                .map(|p| {
                    (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read_to_string(&p).unwrap_or_default())
                })
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

/// Every topological order of `g`, by exhaustive search.
fn linearizations(g: &TaskGraph) -> HashSet<Vec<String>> {
    fn go(g: &TaskGraph, placed: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut HashSet<Vec<String>>) {
        if placed.len() == used.len() {
            out.insert(placed.iter().map(|&i| g.nodes()[i].id.clone()).collect());
            return;
        }
        for i in 0..used.len() {
            if !used[i] && g.preds(i).iter().all(|&p| used[p]) {
                used[i] = true;
                placed.push(i);
                go(g, placed, used, out);
                placed.pop();
                used[i] = false;
            }
        }
    }
    let mut out = HashSet::new();
    go(g, &mut Vec::new(), &mut vec![false; g.nodes().len()], &mut out);
    out
}

fn flags(g: &TaskGraph, rule: Rule) -> bool {
    validate(g).err().is_some_and(|v| v.iter().any(|x| x.rule == rule))
}

/// Criterion 6: plans are legal linearizations; seeded mutations never validate.
fn scheduler_soundness() -> Outcome {
    let graphs = corpus("graphs");
    ensure(graphs.len() >= 30, || format!("corpus has {} graphs", graphs.len()))?;
    ensure(graphs.iter().any(|(_, t)| parse_graph(t).ok() == parse_graph(HANDOVER_EXAMPLE).ok()), || {
        "handover example missing from corpus".into()
    })?;
    let (mut mutants, mut caught) = (0, 0);
    for (name, text) in &graphs {
        let g = parse_graph(text).map_err(|e| format!("{name}: {e}"))?;
        ensure(g.nodes().len() <= 8, || format!("{name}: {} nodes", g.nodes().len()))?;
        let plan = schedule(&g).map_err(|e| format!("{name}: {e}"))?;
        ensure(linearizations(&g).contains(&plan.order), || {
            format!("{name}: plan {:?} is not a linearization", plan.order)
        })?;

        let robots = g.robots().to_vec();
        let nodes = g.nodes().to_vec();
        let edges = g.edges().to_vec();

        let e = &edges[0];
        let mut cyc = edges.clone();
        cyc.push(DependencyEdge::new(e.to.clone(), e.from.clone()));
        let dup_complete = {
            let mut n = nodes.clone();
            n.push(TaskNode {
                id: "c_extra".into(),
                task_type: TaskType::Complete,
                robot: None,
                description: String::new(),
                target: None,
            });
            let mut ed = edges.clone();
            for end in nodes.iter().filter(|n| n.task_type == TaskType::End) {
                ed.push(DependencyEdge::new(end.id.clone(), "c_extra"));
            }
            TaskGraph::from_parts(robots.clone(), n, ed)
        };
        let flipped = {
            let mut n = nodes.clone();
            let first = plan
                .order
                .iter()
                .find(|id| matches!(g.node(id).map(|x| x.task_type), Some(TaskType::Grasp)))
                .ok_or_else(|| format!("{name}: no grasp to flip"))?;
            let node = n.iter_mut().find(|x| &x.id == first).unwrap();
            node.task_type = TaskType::Release;
            TaskGraph::from_parts(robots.clone(), n, edges.clone())
        };
        for (mutant, rule) in [
            (TaskGraph::from_parts(robots.clone(), nodes.clone(), cyc), Rule::Acyclicity),
            (dup_complete, Rule::CompleteCount),
            (flipped, Rule::GripperDiscipline),
        ] {
            mutants += 1;
            if flags(&mutant, rule) {
                caught += 1;
            }
        }
    }
    ensure(caught == mutants, || format!("caught {caught}/{mutants} mutants"))?;
    Ok(format!("{} graphs, plans legal, {caught}/{mutants} mutants flagged", graphs.len()))
}

/// Criterion 7: dropping the pink column sends the left arm back to picking it up.
fn reentry() -> Outcome {
    let budget = 500;
    let (mut ok, mut reactivated) = (0, 0);
    for seed in 0..100 {
        let (scenario, graph) = load_scenario::<f64>("BuildBlocks", seed).map_err(|e| e.to_string())?;
        let mut ep = Episode::new(&scenario, &graph).map_err(|e| e.to_string())?;
        let mut policy = OraclePolicy;
        let mut perturbed = false;
        while ep.ticks() < budget && !ep.is_success() {
            ep.step(&mut policy).map_err(|e| e.to_string())?;
            if !perturbed && ep.ticks() >= 6 && ep.world().robots[0].holding.as_deref() == Some("pink") {
                ep.perturb(0).map_err(|e| e.to_string())?;
                perturbed = true;
                let thought = ep.thoughts()[0].1.clone();
                if ep.state().status("g1") == Some(NodeStatus::Active) && thought == "pick up the pink column" {
                    reactivated += 1;
                }
            }
        }
        let res = ep.into_result();
        if perturbed && res.success && res.reentries == 1 {
            ok += 1;
        }
    }
    ensure(reactivated == 100, || format!("grasp re-activated with the pick-up thought in {reactivated}/100"))?;
    ensure(ok >= 95, || format!("{ok}/100 perturbed episodes succeeded"))?;
    Ok(format!("re-activated 100/100, succeeded {ok}/100"))
}

/// Criterion 8: the greedy controller skips on handovers; the gated oracle never does.
fn skip_detection() -> Outcome {
    let (mut handover_eps, mut skipped) = (0, 0);
    let mut oracle_skips = 0;
    let mut per_task = BTreeMap::new();
    for task in TaskName::ALL {
        for seed in 0..100 {
            let (scenario, graph) = load_scenario::<f64>(task.name(), seed).map_err(|e| e.to_string())?;
            let oracle = run_episode(&scenario, &graph, &mut OraclePolicy, 500).map_err(|e| e.to_string())?;
            oracle_skips += oracle.skips.len();
            if graph.has_handover() {
                let greedy =
                    run_episode(&scenario, &graph, &mut GreedyPolicy::new(), 500).map_err(|e| e.to_string())?;
                handover_eps += 1;
                if !greedy.skips.is_empty() {
                    skipped += 1;
                    *per_task.entry(task.name()).or_insert(0) += 1;
                }
            }
        }
    }
    ensure(handover_eps > 0, || "no handover-class tasks".into())?;
    let frac = skipped as f64 / handover_eps as f64;
    ensure(frac >= 0.8, || format!("greedy skipped in {skipped}/{handover_eps} handover episodes ({per_task:?})"))?;
    ensure(oracle_skips == 0, || format!("oracle produced {oracle_skips} skips"))?;
    Ok(format!("greedy skipped {skipped}/{handover_eps} handover episodes, oracle 0 skips over 600"))
}

/// Criterion 9: full > no-egot > no-scp by at least ten points each.
fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let report = run_ablation(&ExperimentConfig::new(0..50)).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let [full, no_egot, no_scp] = Arm::ALL.map(|a| report.average_rate(a) * 100.0);
    ensure(report.cells.iter().all(|c| c.episodes == 50), || "missing episodes".into())?;
    ensure(full - no_egot >= 10.0 && no_egot - no_scp >= 10.0, || {
        format!("averages {full:.1}% / {no_egot:.1}% / {no_scp:.1}%")
    })?;
    within(Duration::from_secs(300), took, "ablation")?;
    Ok(format!("{full:.1}% > {no_egot:.1}% > {no_scp:.1}%, {took:.2?}"))
}

/// Criterion 10: parse, serialize, parse is a fixed point; syntax errors carry positions.
fn dsl_round_trip() -> Outcome {
    let graphs = corpus("graphs");
    ensure(!graphs.is_empty(), || "empty corpus".into())?;
    for (name, text) in &graphs {
        let first = parse_graph(text).map_err(|e| format!("{name}: {e}"))?;
        let s1 = serialize(&first);
        let second = parse_graph(&s1).map_err(|e| format!("{name} reparse: {e}"))?;
        ensure(first.structurally_equal(&second) && serialize(&second) == s1, || format!("{name}: not idempotent"))?;
    }
    let bad = corpus("bad");
    ensure(!bad.is_empty(), || "no syntax fixtures".into())?;
    let mut seen = BTreeSet::new();
    for (name, text) in &bad {
        let want = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# expect "))
            .and_then(|p| p.split_once(':'))
            .and_then(|(l, c)| Some((l.trim().parse::<usize>().ok()?, c.trim().parse::<usize>().ok()?)))
            .ok_or_else(|| format!("{name}: missing `# expect L:C` header"))?;
        match parse_graph(text) {
            Err(EgotError::Syntax { line, col, .. }) => {
                ensure((line, col) == want, || {
                    format!("{name}: reported {line}:{col}, expected {}:{}", want.0, want.1)
                })?;
                seen.insert(name.clone());
            }
            other => return Err(format!("{name}: expected a syntax error, got {other:?}")),
        }
    }
    Ok(format!("{} graphs idempotent, {} fixtures positioned", graphs.len(), seen.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("scp length contract", scp_length_contract),
        ("scp determinism", scp_determinism),
        ("partner uniformity", partner_uniformity),
        ("token codec", codec_properties),
        ("toy length experiment", toy_length_experiment),
        ("scheduler soundness", scheduler_soundness),
        ("re-entry", reentry),
        ("skip detection", skip_detection),
        ("ablation ordering", ablation_ordering),
        ("graph dsl", dsl_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
