//! Three-arm ablation: the full stack, the stack without task graphs, and
//! the stack without synthetic continued pretraining.
//!
//! Every arm runs the same tasks and seeds. The length behaviour of each
//! arm comes from toy next-token models calibrated at the start of the run:
//! a model fit only on single-arm data (what a policy knows before SCP) and
//! the same model after continued pretraining on an SCP corpus.

use std::fmt::{self, Write as _};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_codec::BinningSpec;
use crate::dataset::synthetic_unimanual;
use crate::scp::{generate_scp_dataset, ScpConfig, ScpError};
use crate::sim::{load_scenario, run_episode, GreedyPolicy, LengthCorrupter, OraclePolicy, Policy, SimError, TaskName};
use crate::toy_policy::{continue_pretrain, eval_token_count, fit, ToyError, Weight};

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("config: {0}")]
    Config(String),
    #[error("task {task}, seed {seed}, arm {arm}: {source}")]
    Episode {
        arm: Arm,
        task: TaskName,
        seed: u64,
        #[source]
        source: SimError,
    },
    #[error("calibration: {0}")]
    Scp(#[from] ScpError),
    #[error("calibration: {0}")]
    Toy(#[from] ToyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Full,
    NoEgot,
    NoScp,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Full, Arm::NoEgot, Arm::NoScp];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoEgot => "no-egot",
            Arm::NoScp => "no-scp",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arm {
    type Err = AblationError;

    fn from_str(s: &str) -> Result<Self, AblationError> {
        Arm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| AblationError::Config(format!("unknown arm `{s}` (expected full, no-egot or no-scp)")))
    }
}

/// Parses `a..b` (half-open). Empty ranges are rejected.
pub fn parse_seed_range(s: &str) -> Result<Range<u64>, AblationError> {
    let bad = || AblationError::Config(format!("seed range `{s}` is not of the form a..b"));
    let (a, b) = s.trim().split_once("..").ok_or_else(bad)?;
    let start: u64 = a.trim().parse().map_err(|_| bad())?;
    let end: u64 = b.trim().parse().map_err(|_| bad())?;
    if start >= end {
        return Err(AblationError::Config(format!("seed range `{s}` is empty")));
    }
    Ok(start..end)
}

/// Settings for the toy-model calibration step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    /// Size of the synthetic single-arm corpus.
    pub samples: usize,
    pub seed: u64,
    /// Sampled sequences per wrong-length estimate.
    pub trials: usize,
    pub batch_size: usize,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { samples: 2000, seed: 7, trials: 4000, batch_size: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tasks: Vec<TaskName>,
    pub arms: Vec<Arm>,
    pub seeds: Range<u64>,
    /// Tick budget per episode.
    pub budget: u64,
    pub output_dir: Option<PathBuf>,
    pub calibration: Calibration,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    tasks: Option<Vec<String>>,
    arms: Option<Vec<String>>,
    seeds: String,
    budget: Option<u64>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    calibration: Calibration,
}

impl ExperimentConfig {
    pub const DEFAULT_BUDGET: u64 = 500;

    /// All six tasks, all three arms.
    pub fn new(seeds: Range<u64>) -> Self {
        Self {
            tasks: TaskName::ALL.to_vec(),
            arms: Arm::ALL.to_vec(),
            seeds,
            budget: Self::DEFAULT_BUDGET,
            output_dir: None,
            calibration: Calibration::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, AblationError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| AblationError::Config(e.to_string()))?;
        let tasks = match raw.tasks {
            Some(t) => t
                .iter()
                .map(|s| s.parse::<TaskName>().map_err(|e| AblationError::Config(e.to_string())))
                .collect::<Result<_, _>>()?,
            None => TaskName::ALL.to_vec(),
        };
        let arms = match raw.arms {
            Some(a) => a.iter().map(|s| s.parse()).collect::<Result<_, _>>()?,
            None => Arm::ALL.to_vec(),
        };
        let config = Self {
            tasks,
            arms,
            seeds: parse_seed_range(&raw.seeds)?,
            budget: raw.budget.unwrap_or(Self::DEFAULT_BUDGET),
            output_dir: raw.output_dir,
            calibration: raw.calibration,
        };
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AblationError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn check(&self) -> Result<(), AblationError> {
        if self.tasks.is_empty() || self.arms.is_empty() {
            return Err(AblationError::Config("need at least one task and one arm".into()));
        }
        if self.seeds.is_empty() {
            return Err(AblationError::Config("seed range is empty".into()));
        }
        if self.budget == 0 {
            return Err(AblationError::Config("budget must be positive".into()));
        }
        if self.calibration.samples == 0 || self.calibration.trials == 0 {
            return Err(AblationError::Config("calibration needs samples and trials".into()));
        }
        Ok(())
    }
}

/// Measured wrong-length rates of the two toy models on two-arm sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibratedRates {
    pub pre_scp: f64,
    pub post_scp: f64,
}

/// Fits the single-arm model, continues it on an SCP corpus built from the
/// same data and measures both wrong-length rates.
pub fn calibrate(c: &Calibration) -> Result<CalibratedRates, AblationError> {
    let spec = BinningSpec::<f64>::default();
    let unimanual = synthetic_unimanual(c.samples, c.seed, &spec);
    let pre = fit(unimanual.samples(), spec.bins())?;
    let scp = generate_scp_dataset(&unimanual, &ScpConfig::new(2, c.seed)?, c.batch_size)?;
    let post = continue_pretrain(&pre, scp.dataset.samples(), Weight::Replace);
    Ok(CalibratedRates {
        pre_scp: eval_token_count(&pre, c.trials, 2, c.seed),
        post_scp: eval_token_count(&post, c.trials, 2, c.seed),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub arm: Arm,
    pub task: TaskName,
    pub successes: u64,
    pub episodes: u64,
}

impl Cell {
    pub fn rate(&self) -> f64 {
        rate(self.successes, self.episodes)
    }
}

fn rate(successes: u64, episodes: u64) -> f64 {
    if episodes == 0 {
        0.0
    } else {
        successes as f64 / episodes as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rates: CalibratedRates,
    /// One cell per (arm, task), arms outer, in config order.
    pub cells: Vec<Cell>,
}

impl AblationReport {
    /// Pooled counts over all tasks of `arm`.
    pub fn average(&self, arm: Arm) -> (u64, u64) {
        self.cells.iter().filter(|c| c.arm == arm).fold((0, 0), |(s, e), c| (s + c.successes, e + c.episodes))
    }

    pub fn average_rate(&self, arm: Arm) -> f64 {
        let (s, e) = self.average(arm);
        rate(s, e)
    }

    fn arms(&self) -> Vec<Arm> {
        let mut arms: Vec<Arm> = Vec::new();
        for c in &self.cells {
            if !arms.contains(&c.arm) {
                arms.push(c.arm);
            }
        }
        arms
    }

    fn tasks(&self) -> Vec<TaskName> {
        let mut tasks: Vec<TaskName> = Vec::new();
        for c in &self.cells {
            if !tasks.contains(&c.task) {
                tasks.push(c.task);
            }
        }
        tasks
    }

    /// `arm,task,successes,episodes,rate` rows followed by one `average`
    /// row per arm. Rates are printed in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,task,successes,episodes,rate\n");
        for c in &self.cells {
            let _ = writeln!(out, "{},{},{},{},{}", c.arm, c.task.name(), c.successes, c.episodes, c.rate());
        }
        for arm in self.arms() {
            let (s, e) = self.average(arm);
            let _ = writeln!(out, "{arm},average,{s},{e},{}", rate(s, e));
        }
        out
    }

    /// Fixed-width table: one row per arm, one column per task plus the
    /// average, rates as percentages.
    pub fn to_table(&self) -> String {
        let tasks = self.tasks();
        let mut out = format!("{:<8}", "arm");
        for t in &tasks {
            let _ = write!(out, " {:>11}", t.name());
        }
        out.push_str("     average\n");
        for arm in self.arms() {
            let _ = write!(out, "{:<8}", arm.name());
            for t in &tasks {
                match self.cells.iter().find(|c| c.arm == arm && c.task == *t) {
                    Some(c) => {
                        let _ = write!(out, " {:>10.1}%", 100.0 * c.rate());
                    }
                    None => {
                        let _ = write!(out, " {:>11}", "-");
                    }
                }
            }
            let _ = writeln!(out, " {:>10.1}%", 100.0 * self.average_rate(arm));
        }
        let _ =
            writeln!(out, "wrong-length rate: {:.3} before SCP, {:.3} after", self.rates.pre_scp, self.rates.post_scp);
        out
    }

    /// Writes `ablation.csv`, `ablation.txt` and `ablation.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<(), AblationError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("ablation.csv"), self.to_csv())?;
        std::fs::write(dir.join("ablation.txt"), self.to_table())?;
        let json = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(dir.join("ablation.json"), json + "\n")?;
        Ok(())
    }
}

/// Runs one episode of `arm` on `task`. The corrupter's stream is keyed by
/// task and arm so arms never share random draws.
pub fn run_arm(arm: Arm, task: TaskName, seed: u64, budget: u64, rates: CalibratedRates) -> Result<bool, SimError> {
    let (scenario, graph) = load_scenario::<f64>(task.name(), seed)?;
    let stream = task as u64 * 4 + arm as u64;
    let mut policy: Box<dyn Policy<f64>> = match arm {
        Arm::Full => Box::new(LengthCorrupter::new(OraclePolicy, rates.post_scp, seed, stream)),
        Arm::NoEgot => Box::new(LengthCorrupter::new(GreedyPolicy::new(), rates.post_scp, seed, stream)),
        Arm::NoScp => Box::new(LengthCorrupter::new(OraclePolicy, rates.pre_scp, seed, stream)),
    };
    Ok(run_episode(&scenario, &graph, &mut *policy, budget)?.success)
}

/// Runs every (arm, task, seed) episode in parallel. Cells come back in
/// config order regardless of scheduling.
pub fn run_ablation(config: &ExperimentConfig) -> Result<AblationReport, AblationError> {
    config.check()?;
    let rates = calibrate(&config.calibration)?;
    run_with_rates(config, rates)
}

/// Like [`run_ablation`] with the calibration step skipped.
pub fn run_with_rates(config: &ExperimentConfig, rates: CalibratedRates) -> Result<AblationReport, AblationError> {
    config.check()?;
    let jobs: Vec<(Arm, TaskName, u64)> = config
        .arms
        .iter()
        .flat_map(|&a| config.tasks.iter().flat_map(move |&t| config.seeds.clone().map(move |s| (a, t, s))))
        .collect();
    let outcomes: Vec<bool> = jobs
        .par_iter()
        .map(|&(arm, task, seed)| {
            run_arm(arm, task, seed, config.budget, rates).map_err(|source| AblationError::Episode {
                arm,
                task,
                seed,
                source,
            })
        })
        .collect::<Result<_, _>>()?;
    let per_cell = config.seeds.clone().count();
    let mut cells = Vec::with_capacity(config.arms.len() * config.tasks.len());
    for (chunk, &(arm, task, _)) in outcomes.chunks(per_cell).zip(jobs.iter().step_by(per_cell)) {
        let successes = chunk.iter().filter(|&&ok| ok).count() as u64;
        cells.push(Cell { arm, task, successes, episodes: chunk.len() as u64 });
    }
    Ok(AblationReport { rates, cells })
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDEAL: CalibratedRates = CalibratedRates { pre_scp: 1.0, post_scp: 0.0 };

    #[test]
    fn full_grid_has_eighteen_rows_and_three_averages() {
        let mut config = ExperimentConfig::new(0..2);
        config.budget = 300;
        let report = run_with_rates(&config, IDEAL).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 18 + 3);
        assert_eq!(lines.iter().filter(|l| l.contains(",average,")).count(), 3);
        for arm in Arm::ALL {
            let (s, e) = report.average(arm);
            assert_eq!(e, 12);
            let line = lines.iter().find(|l| l.starts_with(&format!("{arm},average,"))).unwrap();
            let rate: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(rate, s as f64 / e as f64);
        }
        let table = report.to_table();
        assert!(table.lines().next().unwrap().contains("BuildBlocks"));
    }

    #[test]
    fn oracle_single_episode_succeeds() {
        let config =
            ExperimentConfig { tasks: vec![TaskName::PickBread], arms: vec![Arm::Full], ..ExperimentConfig::new(3..4) };
        let report = run_with_rates(&config, IDEAL).unwrap();
        assert_eq!(report.cells.len(), 1);
        assert_eq!(report.cells[0].rate(), 1.0);
    }

    #[test]
    fn empty_seed_range_is_a_config_error() {
        assert!(matches!(parse_seed_range("5..5"), Err(AblationError::Config(_))));
        assert!(matches!(parse_seed_range("nope"), Err(AblationError::Config(_))));
        let err = ExperimentConfig::from_toml("seeds = \"9..3\"\n").unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml(
            "tasks = [\"pick-bread\", \"BuildBlocks\"]\narms = [\"no-scp\"]\nseeds = \"0..4\"\nbudget = 50\n[calibration]\ntrials = 10\n",
        )
        .unwrap();
        assert_eq!(c.tasks, vec![TaskName::PickBread, TaskName::BuildBlocks]);
        assert_eq!(c.arms, vec![Arm::NoScp]);
        assert_eq!(c.seeds, 0..4);
        assert_eq!(c.calibration.trials, 10);
        assert_eq!(c.calibration.samples, Calibration::default().samples);
        assert!(ExperimentConfig::from_toml("seeds = \"0..1\"\nbogus = 1\n").is_err());
    }

    #[test]
    fn calibration_separates_the_models() {
        let rates = calibrate(&Calibration { samples: 300, trials: 500, ..Calibration::default() }).unwrap();
        assert!(rates.pre_scp > 0.95, "{rates:?}");
        assert!(rates.post_scp < 0.05, "{rates:?}");
    }
}
