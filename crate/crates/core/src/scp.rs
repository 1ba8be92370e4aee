//! Cross-sampled synthetic multi-robot targets.
//!
//! Within a batch, every unimanual sample keeps its own observation,
//! instruction and seven tokens, and gets `N - 1` partner samples drawn
//! uniformly without replacement from the rest of the batch. The partners'
//! tokens are appended in draw order, giving a `7 * N` token target.
//!
//! `N = 2` is the two-arm case; larger `N` is an extension of the same rule.
//!
//! Every generated dataset comes with a provenance sidecar (`<out>.prov.jsonl`)
//! listing the source index and partner indices of each output line, which is
//! what [`audit_scp`] checks against.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::action_codec::{concat_embodiments, DOF};
use crate::dataset::{batches, Batch, Dataset, DatasetError, Manifest, RawSample, Sample};

#[derive(Debug, Error)]
pub enum ScpError {
    #[error("batch of {n} samples cannot supply {required} distinct embodiments")]
    BatchTooSmall { n: usize, required: usize },
    #[error("sample {index} is not unimanual")]
    NotUnimanual { index: usize },
    #[error("target embodiments must be at least 2, got {0}")]
    InvalidEmbodiments(usize),
    #[error("missing provenance: {0}")]
    MissingProvenance(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartnerPolicy {
    #[default]
    DistinctWithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScpConfig {
    target_embodiments: usize,
    seed: u64,
    partner_policy: PartnerPolicy,
}

impl ScpConfig {
    pub fn new(target_embodiments: usize, seed: u64) -> Result<Self, ScpError> {
        if target_embodiments < 2 {
            return Err(ScpError::InvalidEmbodiments(target_embodiments));
        }
        Ok(Self { target_embodiments, seed, partner_policy: PartnerPolicy::DistinctWithoutReplacement })
    }

    pub fn target_embodiments(&self) -> usize {
        self.target_embodiments
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn partner_policy(&self) -> PartnerPolicy {
        self.partner_policy
    }
}

/// Source and partner indices (into the source dataset) of one output sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub i: usize,
    pub partners: Vec<usize>,
}

/// rng stream for batch `batch_index`; stream 0 belongs to the batch shuffle.
pub fn batch_rng(seed: u64, batch_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch_index as u64 + 1);
    rng
}

/// Draws `count` distinct positions from `0..n` excluding `own`, in draw order.
pub fn draw_partners<R: Rng + ?Sized>(rng: &mut R, n: usize, own: usize, count: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n - 1, count).into_iter().map(|k| if k < own { k } else { k + 1 }).collect()
}

pub fn cross_sample_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    batch: &Batch,
    config: &ScpConfig,
    rng: &mut R,
) -> Result<Vec<(Sample, Provenance)>, ScpError> {
    let n = batch.len();
    let required = config.target_embodiments;
    if n < required {
        return Err(ScpError::BatchTooSmall { n, required });
    }
    let samples = dataset.samples();
    if let Some(&index) = batch.indices.iter().find(|&&i| samples[i].embodiments() != 1) {
        return Err(ScpError::NotUnimanual { index });
    }
    let mut out = Vec::with_capacity(n);
    for (pos, &i) in batch.indices.iter().enumerate() {
        let partners: Vec<usize> =
            draw_partners(rng, n, pos, required - 1).into_iter().map(|p| batch.indices[p]).collect();
        let mut parts = Vec::with_capacity(required);
        parts.push(samples[i].tokens.clone());
        parts.extend(partners.iter().map(|&j| samples[j].tokens.clone()));
        let tokens = concat_embodiments(&parts).expect("at least one part");
        let src = &samples[i];
        let synth = Sample::new(
            src.observation_ref.clone(),
            src.instruction.clone(),
            tokens,
            format!("{}x{}", src.embodiment_tag, required),
        );
        out.push((synth, Provenance { i, partners }));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScpOutput {
    pub dataset: Dataset,
    pub provenance: Vec<Provenance>,
}

impl ScpOutput {
    /// Writes the dataset to `path` and the sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScpError> {
        let path = path.as_ref();
        self.dataset.save(path)?;
        save_provenance(&self.provenance, provenance_path(path))
    }
}

pub fn provenance_path(out: impl AsRef<Path>) -> PathBuf {
    let mut s = out.as_ref().as_os_str().to_owned();
    s.push(".prov.jsonl");
    PathBuf::from(s)
}

pub fn save_provenance(prov: &[Provenance], path: impl AsRef<Path>) -> Result<(), ScpError> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in prov {
        serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_provenance(path: impl AsRef<Path>) -> Result<Vec<Provenance>, ScpError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ScpError::MissingProvenance(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p = serde_json::from_str(&line)
            .map_err(|e| ScpError::MissingProvenance(format!("{} line {}: {e}", path.display(), idx + 1)))?;
        out.push(p);
    }
    Ok(out)
}

/// Runs the whole corpus through seeded batches and cross-samples every batch
/// that can supply `N` distinct samples. Smaller tail batches are dropped and
/// counted in the output manifest.
pub fn generate_scp_dataset(dataset: &Dataset, config: &ScpConfig, batch_size: usize) -> Result<ScpOutput, ScpError> {
    let required = config.target_embodiments;
    if let Some(index) = dataset.samples().iter().position(|s| s.embodiments() != 1) {
        return Err(ScpError::NotUnimanual { index });
    }
    if batch_size < required {
        return Err(ScpError::BatchTooSmall { n: batch_size, required });
    }
    let all = batches(dataset, batch_size, config.seed)?;
    let dropped: usize = all.iter().filter(|b| b.len() < required).map(Batch::len).sum();
    let per_batch: Vec<Vec<(Sample, Provenance)>> = all
        .par_iter()
        .enumerate()
        .filter(|(_, b)| b.len() >= required)
        .map(|(k, b)| cross_sample_batch(dataset, b, config, &mut batch_rng(config.seed, k)))
        .collect::<Result<_, _>>()?;
    let (samples, provenance): (Vec<_>, Vec<_>) = per_batch.into_iter().flatten().unzip();
    let src = dataset.manifest();
    let manifest = Manifest {
        name: format!("{}-scp{}", src.name, required),
        seed: config.seed,
        source: format!("cross-sampled from {} (robots={required}, batch={batch_size})", src.name),
        bins: src.bins,
        dropped: Some(dropped as u64),
    };
    Ok(ScpOutput { dataset: Dataset::new(manifest, samples)?, provenance })
}

/// Independent re-check of a cross-sampled dataset against its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub samples: usize,
    pub correct_length_fraction: f64,
    pub own_tokens_lead_fraction: f64,
    /// Output lines whose token count is not `7 * (partners + 1)`.
    pub wrong_length: Vec<usize>,
    /// Output lines whose leading seven tokens disagree with the source sample.
    pub wrong_prefix: Vec<usize>,
    /// Output lines whose appended partner tokens disagree with the partner's own tokens.
    pub wrong_segments: Vec<usize>,
    pub self_partners: Vec<usize>,
    /// Output lines naming a partner that is not itself a source of any output line.
    pub unknown_partners: Vec<usize>,
    /// Chi-square dispersion of how often each source is drawn as a partner.
    pub partner_dispersion: f64,
    pub partner_dof: usize,
    /// Upper-tail p-value of the dispersion; small values mean some sources
    /// are drawn far more often than uniform sampling would allow.
    pub partner_p_value: f64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.wrong_length.is_empty()
            && self.wrong_prefix.is_empty()
            && self.wrong_segments.is_empty()
            && self.self_partners.is_empty()
            && self.unknown_partners.is_empty()
    }
}

/// Checks length, prefix and partner invariants of raw output lines.
///
/// Without `source`, the prefix check is the cross-consistency between each
/// line's first seven tokens and every segment other lines copied from it.
pub fn audit_scp(
    records: &[RawSample],
    provenance: &[Provenance],
    source: Option<&Dataset>,
) -> Result<AuditReport, ScpError> {
    if records.len() != provenance.len() {
        return Err(ScpError::MissingProvenance(format!(
            "{} samples but {} provenance lines",
            records.len(),
            provenance.len()
        )));
    }
    let n = records.len();
    let by_source: HashMap<usize, usize> = provenance.iter().enumerate().map(|(k, p)| (p.i, k)).collect();

    let mut length_ok = vec![true; n];
    let mut prefix_ok = vec![true; n];
    let mut segment_ok = vec![true; n];
    let mut self_partners = Vec::new();
    let mut unknown_partners = Vec::new();
    let mut drawn = vec![0usize; n];

    for (k, (rec, prov)) in records.iter().zip(provenance).enumerate() {
        let robots = prov.partners.len() + 1;
        length_ok[k] = rec.tokens.len() == DOF * robots && rec.n_robots == robots;
        if prov.partners.contains(&prov.i) {
            self_partners.push(k);
        }
        if let Some(src) = source {
            match src.samples().get(prov.i) {
                Some(s) => {
                    if rec.tokens.get(..DOF) != Some(s.tokens.tokens()) {
                        prefix_ok[k] = false;
                    }
                }
                None => prefix_ok[k] = false,
            }
        }
        let mut unknown = false;
        for (m, j) in prov.partners.iter().enumerate() {
            let Some(&owner) = by_source.get(j) else {
                unknown = true;
                continue;
            };
            drawn[owner] += 1;
            if !length_ok[k] {
                continue;
            }
            let segment = &rec.tokens[DOF * (m + 1)..DOF * (m + 2)];
            match source {
                Some(src) => {
                    if src.samples().get(*j).map(|s| s.tokens.tokens()) != Some(segment) {
                        segment_ok[k] = false;
                    }
                }
                None => {
                    if records[owner].tokens.get(..DOF) != Some(segment) {
                        prefix_ok[owner] = false;
                        segment_ok[k] = false;
                    }
                }
            }
        }
        if unknown {
            unknown_partners.push(k);
        }
    }

    let total: usize = drawn.iter().sum();
    let (dispersion, dof, p_value) = if n > 1 && total > 0 {
        let mean = total as f64 / n as f64;
        let stat: f64 = drawn.iter().map(|&d| (d as f64 - mean).powi(2) / mean).sum();
        let dof = n - 1;
        let chi = ChiSquared::new(dof as f64).expect("positive dof");
        (stat, dof, 1.0 - chi.cdf(stat))
    } else {
        (0.0, 0, 1.0)
    };

    let collect = |flags: &[bool]| flags.iter().enumerate().filter(|(_, ok)| !**ok).map(|(k, _)| k).collect::<Vec<_>>();
    let wrong_length = collect(&length_ok);
    let wrong_prefix = collect(&prefix_ok);
    let wrong_segments = collect(&segment_ok);
    let frac = |bad: usize| if n == 0 { 1.0 } else { (n - bad) as f64 / n as f64 };
    Ok(AuditReport {
        samples: n,
        correct_length_fraction: frac(wrong_length.len()),
        own_tokens_lead_fraction: frac(wrong_prefix.len()),
        wrong_length,
        wrong_prefix,
        wrong_segments,
        self_partners,
        unknown_partners,
        partner_dispersion: dispersion,
        partner_dof: dof,
        partner_p_value: p_value,
    })
}

/// Audits a dataset file using its `.prov.jsonl` sidecar.
pub fn audit_file(out: impl AsRef<Path>, source: Option<&Dataset>) -> Result<AuditReport, ScpError> {
    let out = out.as_ref();
    let prov_path = provenance_path(out);
    if !prov_path.exists() {
        return Err(ScpError::MissingProvenance(format!("{} not found", prov_path.display())));
    }
    let provenance = load_provenance(&prov_path)?;
    let (_, records) = crate::dataset::load_raw(out)?;
    audit_scp(&records, &provenance, source)
}

pub fn audit_output(output: &ScpOutput, source: Option<&Dataset>) -> Result<AuditReport, ScpError> {
    let records: Vec<RawSample> = output.dataset.samples().iter().map(RawSample::from).collect();
    audit_scp(&records, &output.provenance, source)
}
