//! `etk`: command-line front end for the embodiment-transfer toolkit.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use etk_core::ablation::{parse_seed_range, run_ablation, ExperimentConfig};
use etk_core::action_codec::BinningSpec;
use etk_core::dataset::{stats, synthetic_unimanual, Dataset};
use etk_core::egot::{parse_graph, parse_graph_unchecked, render_dot, schedule, validate, TaskGraph};
use etk_core::scp::{audit_file, generate_scp_dataset, provenance_path, ScpConfig};
use etk_core::sim::{
    load_scenario, render_svg, run_episode_observed, EpisodeOptions, EpisodeResult, GreedyPolicy, OraclePolicy,
    Perturbation, Policy, TaskName,
};
use etk_core::toy_policy::{continue_pretrain, eval_token_count, fit, ModelGatedPolicy, NextTokenModel, Weight};

const DEFAULT_SEED: &str = "0";

#[derive(Parser)]
#[command(
    name = "etk",
    version,
    about = "Embodiment-transfer toolkit: SCP data, task graphs, simulation and ablations"
)]
struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect or synthesize token datasets.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Synthetic continued pretraining data.
    #[command(subcommand)]
    Scp(ScpCmd),
    /// Task graph tools.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Simulated episodes.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Count-based next-token model.
    #[command(subcommand)]
    Toy(ToyCmd),
    /// Run the three-arm ablation described by a TOML config.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Sample, embodiment and token-length counts.
    Stats { path: PathBuf },
    /// Write a synthetic single-arm corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, env = "ETK_SEED", default_value = DEFAULT_SEED)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum ScpCmd {
    /// Cross-sample a single-arm dataset into N-robot targets.
    Generate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        robots: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, env = "ETK_SEED", default_value = DEFAULT_SEED)]
        seed: u64,
    },
    /// Re-check an SCP output against its provenance sidecar.
    Audit {
        out: PathBuf,
        /// Source dataset, enables the exact prefix check.
        #[arg(long)]
        source: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphCmd {
    Validate {
        file: PathBuf,
    },
    Plan {
        file: PathBuf,
    },
    Render {
        file: PathBuf,
        /// Graphviz output; currently the only format, so the flag is optional.
        #[arg(long)]
        dot: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyKind {
    Oracle,
    Greedy,
    Toy,
}

#[derive(Args)]
struct SimRun {
    #[arg(long)]
    task: String,
    #[arg(long, value_enum, default_value_t = PolicyKind::Oracle)]
    policy: PolicyKind,
    /// Toy model gating the oracle's output length (required for `--policy toy`).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Graph file, or `builtin` for the task's own graph.
    #[arg(long, default_value = "builtin")]
    graph: String,
    /// Half-open seed range `a..b`; defaults to ten seeds from ETK_SEED.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long, default_value_t = 500)]
    budget: u64,
    /// Drop what a robot holds at the first tick >= K: `tick:K[:robot]`.
    #[arg(long)]
    perturb: Option<String>,
    /// Also write the per-seed CSV here.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Write one SVG snapshot per tick into `<dir>/seed<S>/`.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SimCmd {
    Run(SimRun),
}

#[derive(Subcommand)]
enum ToyCmd {
    /// Fit a model on a dataset.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
    /// Continue a model on SCP data, in place unless `--out` is given.
    Scp {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        /// Non-negative weight, or `replace`.
        #[arg(long, default_value = "replace")]
        weight: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wrong-length rate for N robots.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 2)]
        robots: usize,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, env = "ETK_SEED", default_value = DEFAULT_SEED)]
        seed: u64,
    },
}

/// Writes to stdout, ignoring a closed pipe (`etk ... | head`).
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn print_json(v: &serde_json::Value) {
    emit(&(serde_json::to_string_pretty(v).expect("json values serialize") + "\n"));
}

fn dataset_cmd(cmd: DatasetCmd, json_out: bool) -> Result<()> {
    match cmd {
        DatasetCmd::Stats { path } => {
            let ds = Dataset::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let st = stats(&ds);
            if json_out {
                print_json(&json!({ "manifest": ds.manifest(), "stats": st }));
            } else {
                println!("{}: {} samples", ds.manifest().name, st.samples);
                for (n, c) in &st.embodiments {
                    println!("  {n} robot(s): {c}");
                }
                for (len, c) in &st.lengths {
                    println!("  length {len}: {c}");
                }
            }
        }
        DatasetCmd::Synth { out, samples, seed } => {
            let ds = synthetic_unimanual(samples, seed, &BinningSpec::default());
            ds.save(&out)?;
            if json_out {
                print_json(&json!({ "out": out, "samples": ds.len(), "seed": seed }));
            } else {
                println!("wrote {} samples to {}", ds.len(), out.display());
            }
        }
    }
    Ok(())
}

fn scp_cmd(cmd: ScpCmd, json_out: bool) -> Result<bool> {
    match cmd {
        ScpCmd::Generate { input, out, robots, batch, seed } => {
            let ds = Dataset::load(&input).with_context(|| format!("loading {}", input.display()))?;
            let generated = generate_scp_dataset(&ds, &ScpConfig::new(robots, seed)?, batch)?;
            generated.save(&out)?;
            let dropped = generated.dataset.manifest().dropped.unwrap_or(0);
            if json_out {
                print_json(&json!({
                    "out": out,
                    "provenance": provenance_path(&out),
                    "samples": generated.dataset.len(),
                    "dropped": dropped,
                }));
            } else {
                println!(
                    "wrote {} samples to {} ({} dropped), provenance in {}",
                    generated.dataset.len(),
                    out.display(),
                    dropped,
                    provenance_path(&out).display()
                );
            }
            Ok(true)
        }
        ScpCmd::Audit { out, source } => {
            let source = source.map(Dataset::load).transpose()?;
            let report = audit_file(&out, source.as_ref())?;
            if json_out {
                print_json(&json!({ "clean": report.is_clean(), "report": report }));
            } else {
                println!(
                    "{} samples, {:.4} correct length, {} self-partners, partner dispersion p = {:.3}: {}",
                    report.samples,
                    report.correct_length_fraction,
                    report.self_partners.len(),
                    report.partner_p_value,
                    if report.is_clean() { "clean" } else { "NOT clean" }
                );
            }
            Ok(report.is_clean())
        }
    }
}

fn read_graph_unchecked(file: &Path) -> Result<TaskGraph> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    parse_graph_unchecked(&text).with_context(|| file.display().to_string())
}

fn graph_cmd(cmd: GraphCmd, json_out: bool) -> Result<bool> {
    match cmd {
        GraphCmd::Validate { file } => {
            let g = read_graph_unchecked(&file)?;
            let violations = validate(&g).err().unwrap_or_default();
            if json_out {
                print_json(&json!({ "valid": violations.is_empty(), "violations": violations }));
            } else if violations.is_empty() {
                println!("{}: valid ({} robots, {} nodes)", file.display(), g.robots().len(), g.nodes().len());
            } else {
                for v in &violations {
                    println!("{}: {v}", file.display());
                }
            }
            Ok(violations.is_empty())
        }
        GraphCmd::Plan { file } => {
            let plan = schedule(&read_graph_unchecked(&file)?)?;
            if json_out {
                print_json(&serde_json::to_value(&plan)?);
            } else {
                println!("order: {}", plan.order.join(" "));
                for rp in &plan.per_robot {
                    println!("{}: {}", rp.robot, rp.nodes.join(" "));
                }
                for b in &plan.barriers {
                    println!("barrier {} ({}) -> {} ({})", b.from, b.from_robot, b.to, b.to_robot);
                }
            }
            Ok(true)
        }
        GraphCmd::Render { file, dot: _ } => {
            let text = fs::read_to_string(&file)?;
            let dot = render_dot(&parse_graph(&text).with_context(|| file.display().to_string())?);
            if json_out {
                print_json(&json!({ "dot": dot }));
            } else {
                emit(&dot);
            }
            Ok(true)
        }
    }
}

fn parse_perturb(s: &str) -> Result<Perturbation> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["tick", k] => Ok(Perturbation { at_tick: k.parse()?, robot: 0 }),
        ["tick", k, r] => Ok(Perturbation { at_tick: k.parse()?, robot: r.parse()? }),
        _ => bail!("perturbation `{s}` is not of the form tick:K[:robot]"),
    }
}

fn seed_from_env() -> Result<u64> {
    match std::env::var("ETK_SEED") {
        Ok(v) => v.trim().parse().with_context(|| format!("ETK_SEED=`{v}` is not an integer")),
        Err(_) => Ok(DEFAULT_SEED.parse()?),
    }
}

const SIM_CSV_HEADER: &str = "task,seed,success,ticks,skips,reentries";

fn sim_run(args: SimRun, json_out: bool) -> Result<bool> {
    let task: TaskName = args.task.parse()?;
    let seeds = match &args.seeds {
        Some(s) => parse_seed_range(s)?,
        None => {
            let start = seed_from_env()?;
            start..start + 10
        }
    };
    let graph_override = match args.graph.as_str() {
        "builtin" => None,
        path => Some(parse_graph(&fs::read_to_string(path).with_context(|| format!("reading {path}"))?)?),
    };
    let model = match (args.policy, &args.model) {
        (PolicyKind::Toy, Some(p)) => Some(NextTokenModel::load(p)?),
        (PolicyKind::Toy, None) => bail!("--policy toy needs --model"),
        _ => None,
    };
    let perturbation = args.perturb.as_deref().map(parse_perturb).transpose()?;
    let options = EpisodeOptions { max_ticks: args.budget, perturbation };

    let mut rows = Vec::new();
    let mut csv = format!("{SIM_CSV_HEADER}\n");
    let mut all_ok = true;
    for seed in seeds {
        let outcome =
            run_one(task, seed, graph_override.as_ref(), args.policy, model.as_ref(), options, args.svg_dir.as_deref());
        match outcome {
            Ok(res) => {
                csv.push_str(&format!(
                    "{task},{seed},{},{},{},{}\n",
                    res.success,
                    res.ticks,
                    res.skips.len(),
                    res.reentries
                ));
                rows.push(json!({
                    "task": task.name(),
                    "seed": seed,
                    "success": res.success,
                    "ticks": res.ticks,
                    "skips": res.skips.len(),
                    "reentries": res.reentries,
                    "wrong_token_counts": res.wrong_token_counts,
                }));
            }
            Err(e) => {
                all_ok = false;
                eprintln!("task {task}, seed {seed}: {e:#}");
                rows.push(json!({ "task": task.name(), "seed": seed, "error": format!("{e:#}") }));
            }
        }
    }
    if let Some(path) = &args.csv {
        fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    }
    if json_out {
        print_json(&serde_json::Value::Array(rows));
    } else {
        emit(&csv);
    }
    Ok(all_ok)
}

fn run_one(
    task: TaskName,
    seed: u64,
    graph_override: Option<&TaskGraph>,
    kind: PolicyKind,
    model: Option<&NextTokenModel>,
    options: EpisodeOptions,
    svg_dir: Option<&Path>,
) -> Result<EpisodeResult> {
    let (scenario, builtin) = load_scenario::<f64>(task.name(), seed)?;
    let graph = graph_override.unwrap_or(&builtin);
    let mut policy: Box<dyn Policy<f64>> = match (kind, model) {
        (PolicyKind::Oracle, _) => Box::new(OraclePolicy),
        (PolicyKind::Greedy, _) => Box::new(GreedyPolicy::new()),
        (PolicyKind::Toy, Some(m)) => Box::new(ModelGatedPolicy::new(OraclePolicy, m, seed)),
        (PolicyKind::Toy, None) => return Err(anyhow!("--policy toy needs --model")),
    };
    let frames = svg_dir.map(|d| d.join(format!("seed{seed}")));
    if let Some(dir) = &frames {
        fs::create_dir_all(dir)?;
    }
    let mut write_err = None;
    let result = run_episode_observed(&scenario, graph, &mut *policy, options, |ep| {
        if let (Some(dir), None) = (&frames, &write_err) {
            let path = dir.join(format!("tick{:05}.svg", ep.ticks()));
            if let Err(e) = fs::write(&path, render_svg(ep.world())) {
                write_err = Some(anyhow!(e).context(format!("writing {}", path.display())));
            }
        }
    })?;
    match write_err {
        Some(e) => Err(e),
        None => Ok(result),
    }
}

fn toy_cmd(cmd: ToyCmd, json_out: bool) -> Result<()> {
    match cmd {
        ToyCmd::Fit { input, out, alpha } => {
            let ds = Dataset::load(&input)?;
            let model = fit(ds.samples(), BinningSpec::<f64>::default().bins())?.with_alpha(alpha);
            model.save(&out)?;
            if json_out {
                print_json(&json!({ "out": out, "positions": model.positions(), "alpha": alpha }));
            } else {
                println!("fit {} samples, {} positions -> {}", ds.len(), model.positions(), out.display());
            }
        }
        ToyCmd::Scp { model, input, weight, out } => {
            let base = NextTokenModel::load(&model)?;
            let w: Weight = weight.parse()?;
            let ds = Dataset::load(&input)?;
            let next = continue_pretrain(&base, ds.samples(), w);
            let dest = out.unwrap_or(model);
            next.save(&dest)?;
            if json_out {
                print_json(&json!({ "out": dest, "weight": weight, "samples": ds.len() }));
            } else {
                println!("continued on {} samples (weight {weight}) -> {}", ds.len(), dest.display());
            }
        }
        ToyCmd::Eval { model, robots, trials, seed } => {
            let m = NextTokenModel::load(&model)?;
            let rate = eval_token_count(&m, trials, robots, seed);
            if json_out {
                print_json(&json!({ "robots": robots, "trials": trials, "seed": seed, "wrong_length_rate": rate }));
            } else {
                println!("wrong-length rate for {robots} robots over {trials} trials: {rate}");
            }
        }
    }
    Ok(())
}

fn ablate(config: &Path, out: Option<PathBuf>, json_out: bool) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if out.is_some() {
        cfg.output_dir = out;
    }
    let report = run_ablation(&cfg)?;
    if let Some(dir) = &cfg.output_dir {
        report.write_to(dir)?;
    }
    if json_out {
        print_json(&serde_json::to_value(&report)?);
    } else {
        emit(&report.to_table());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let json_out = cli.json;
    match cli.command {
        Command::Dataset(c) => dataset_cmd(c, json_out).map(|_| true),
        Command::Scp(c) => scp_cmd(c, json_out),
        Command::Graph(c) => graph_cmd(c, json_out),
        Command::Sim(SimCmd::Run(args)) => sim_run(args, json_out),
        Command::Toy(c) => toy_cmd(c, json_out).map(|_| true),
        Command::Ablate { config, out } => ablate(&config, out, json_out).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json_out = cli.json;
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            if json_out {
                print_json(&json!({ "error": format!("{e:#}") }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}
