//! Flat trajectory datasets of (observation, instruction, action tokens) samples.
//!
//! On disk a dataset is JSONL: a tagged manifest on the first line, then one
//! sample per line.
//!
//! ```text
//! {"manifest":{"name":"demo","seed":42,"source":"synthetic","bins":256}}
//! {"obs":"img/0001","instr":"pick up the cup","tokens":[128,128,128,128,128,128,255],"n_robots":1,"tag":"ur5e"}
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action_codec::{tokenize, ActionVector, BinningSpec, TokenSeq, DOF};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("sample {index}: {reason}")]
    InvariantViolation { index: usize, reason: String },
    #[error("batch size must be at least 1")]
    InvalidBatchSize,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub seed: u64,
    pub source: String,
    pub bins: u32,
    /// Tail batches discarded by synthetic generation; absent for plain corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dropped: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestLine {
    manifest: Manifest,
}

/// One sample line as written on disk, before the token contract is checked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSample {
    pub obs: String,
    pub instr: String,
    pub tokens: Vec<u32>,
    pub n_robots: usize,
    pub tag: String,
}

impl From<&Sample> for RawSample {
    fn from(s: &Sample) -> Self {
        RawSample {
            obs: s.observation_ref.clone(),
            instr: s.instruction.clone(),
            tokens: s.tokens.tokens().to_vec(),
            n_robots: s.tokens.embodiments(),
            tag: s.embodiment_tag.clone(),
        }
    }
}

/// Reads manifest and sample lines without enforcing sample invariants.
/// Used by auditors that must report malformed samples instead of rejecting the file.
pub fn load_raw(path: impl AsRef<Path>) -> Result<(Manifest, Vec<RawSample>), DatasetError> {
    let mut manifest = None;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| DatasetError::Parse { line: idx + 1, reason: e.to_string() };
        if manifest.is_none() {
            manifest = Some(serde_json::from_str::<ManifestLine>(&line).map_err(parse_err)?.manifest);
        } else {
            out.push(serde_json::from_str::<RawSample>(&line).map_err(parse_err)?);
        }
    }
    let manifest = manifest.ok_or(DatasetError::Parse { line: 1, reason: "empty file: no manifest".into() })?;
    Ok((manifest, out))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub observation_ref: String,
    pub instruction: String,
    pub tokens: TokenSeq,
    pub embodiment_tag: String,
}

impl Sample {
    pub fn new(
        observation_ref: impl Into<String>,
        instruction: impl Into<String>,
        tokens: TokenSeq,
        embodiment_tag: impl Into<String>,
    ) -> Self {
        Self {
            observation_ref: observation_ref.into(),
            instruction: instruction.into(),
            tokens,
            embodiment_tag: embodiment_tag.into(),
        }
    }

    pub fn embodiments(&self) -> usize {
        self.tokens.embodiments()
    }
}

/// An immutable, validated list of samples sharing one bin layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    manifest: Manifest,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(manifest: Manifest, samples: Vec<Sample>) -> Result<Self, DatasetError> {
        if samples.is_empty() {
            return Err(DatasetError::InvariantViolation { index: 0, reason: "dataset has no samples".into() });
        }
        for (index, s) in samples.iter().enumerate() {
            check_sample(index, s, manifest.bins)?;
        }
        Ok(Self { manifest, samples })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        Self::from_reader(File::open(path)?)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, DatasetError> {
        let mut manifest: Option<Manifest> = None;
        let mut samples = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match manifest {
                None => {
                    let m: ManifestLine = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
                        line: line_no,
                        reason: format!("expected manifest record: {e}"),
                    })?;
                    manifest = Some(m.manifest);
                }
                Some(ref m) => {
                    let rec: RawSample = serde_json::from_str(&line)
                        .map_err(|e| DatasetError::Parse { line: line_no, reason: e.to_string() })?;
                    let index = samples.len();
                    let tokens = TokenSeq::new(rec.tokens, rec.n_robots)
                        .map_err(|e| DatasetError::InvariantViolation { index, reason: e.to_string() })?;
                    let sample = Sample::new(rec.obs, rec.instr, tokens, rec.tag);
                    check_sample(index, &sample, m.bins)?;
                    samples.push(sample);
                }
            }
        }
        let Some(manifest) = manifest else {
            return Err(DatasetError::Parse { line: 1, reason: "empty file: no manifest".into() });
        };
        if samples.is_empty() {
            return Err(DatasetError::Parse { line: 2, reason: "no samples".into() });
        }
        Ok(Self { manifest, samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), DatasetError> {
        let header = ManifestLine { manifest: self.manifest.clone() };
        serde_json::to_writer(&mut *w, &header).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let rec = RawSample::from(s);
            serde_json::to_writer(&mut *w, &rec).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits utf-8")
    }
}

fn check_sample(index: usize, s: &Sample, bins: u32) -> Result<(), DatasetError> {
    if s.instruction.trim().is_empty() {
        return Err(DatasetError::InvariantViolation { index, reason: "instruction is empty".into() });
    }
    s.tokens.check_range(bins).map_err(|e| DatasetError::InvariantViolation { index, reason: e.to_string() })
}

/// Indices of one batch, in draw order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn samples<'a>(&'a self, dataset: &'a Dataset) -> impl Iterator<Item = &'a Sample> + 'a {
        self.indices.iter().map(move |&i| &dataset.samples[i])
    }
}

/// Seeded shuffle of all indices split into `ceil(len / n)` batches; the
/// last batch keeps the remainder.
pub fn batches(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<Batch>, DatasetError> {
    if n == 0 {
        return Err(DatasetError::InvalidBatchSize);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    Ok(order.chunks(n).map(|c| Batch { indices: c.to_vec() }).collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub samples: usize,
    /// robots per sample -> sample count
    pub embodiments: BTreeMap<usize, usize>,
    /// token count per sample -> sample count
    pub lengths: BTreeMap<usize, usize>,
    /// per action dimension: token id -> occurrences over all robots
    pub per_dimension: Vec<BTreeMap<u32, usize>>,
}

impl DatasetStats {
    pub fn merge(&self, other: &DatasetStats) -> DatasetStats {
        let mut out = self.clone();
        out.samples += other.samples;
        for (k, v) in &other.embodiments {
            *out.embodiments.entry(*k).or_default() += v;
        }
        for (k, v) in &other.lengths {
            *out.lengths.entry(*k).or_default() += v;
        }
        out.per_dimension.resize(DOF, BTreeMap::new());
        for (d, hist) in other.per_dimension.iter().enumerate() {
            for (k, v) in hist {
                *out.per_dimension[d].entry(*k).or_default() += v;
            }
        }
        out
    }
}

pub fn stats(dataset: &Dataset) -> DatasetStats {
    stats_of(dataset.samples())
}

pub fn stats_of(samples: &[Sample]) -> DatasetStats {
    let mut st = DatasetStats { per_dimension: vec![BTreeMap::new(); DOF], ..Default::default() };
    for s in samples {
        st.samples += 1;
        *st.embodiments.entry(s.embodiments()).or_default() += 1;
        *st.lengths.entry(s.tokens.len()).or_default() += 1;
        for (pos, &t) in s.tokens.tokens().iter().enumerate() {
            *st.per_dimension[pos % DOF].entry(t).or_default() += 1;
        }
    }
    st
}

const INSTRUCTIONS: [&str; 8] = [
    "pick up the red block",
    "put the cup on the saucer",
    "open the drawer",
    "move the sponge to the sink",
    "place the carrot in the pot",
    "push the button",
    "stack the green block on the blue block",
    "close the microwave door",
];

/// A seeded single-arm corpus standing in for large unimanual pre-training data.
pub fn synthetic_unimanual(samples: usize, seed: u64, spec: &BinningSpec<f64>) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new_inclusive(-0.8f64, 0.8);
    let mut out = Vec::with_capacity(samples);
    for k in 0..samples {
        let mut c = [0.0; DOF];
        for (d, slot) in c.iter_mut().enumerate().take(DOF - 1) {
            let r = spec.range(d);
            let mid = (r.lo + r.hi) / 2.0;
            *slot = mid + unit.sample(&mut rng) * (r.hi - r.lo) / 2.0;
        }
        c[DOF - 1] = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        let tokens = tokenize(&ActionVector::from_array(c), spec).expect("finite synthetic action");
        let instr = INSTRUCTIONS[rng.gen_range(0..INSTRUCTIONS.len())];
        out.push(Sample::new(format!("synthetic/{k:06}"), instr, tokens, "single-arm"));
    }
    let manifest = Manifest {
        name: "synthetic-unimanual".into(),
        seed,
        source: "seeded synthetic single-arm corpus".into(),
        bins: spec.bins(),
        dropped: None,
    };
    Dataset::new(manifest, out).expect("generator emits valid samples")
}
