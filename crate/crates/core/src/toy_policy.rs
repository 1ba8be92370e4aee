//! Count-based next-token model for studying output length.
//!
//! The model keeps, for every position, how often each action token and
//! the stop symbol occurred there in training. Sampling walks positions
//! left to right, so the generated length follows the training lengths
//! exactly when smoothing is off. Instructions and observations are not
//! modelled.
//!
//! # Model file
//!
//! Plain UTF-8 text, one record per line:
//!
//! ```text
//! etk-toy-model v1
//! bins 256
//! alpha 0
//! positions 15
//! pos 0 17:3 128:1
//! pos 7 stop:3
//! ```
//!
//! `pos` lines list only non-zero counts as `token:count` or
//! `stop:count`; counts are decimal floats. Positions without a line have
//! no mass.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::action_codec::validate_length;
use crate::dataset::Sample;
use crate::sim::{Observation, Policy};
use crate::Scalar;

const MAGIC: &str = "etk-toy-model v1";

#[derive(Debug, Error)]
pub enum ToyError {
    #[error("cannot fit a model on an empty dataset")]
    EmptyDataset,
    #[error("model file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("invalid weight `{0}` (expected a non-negative number or `replace`)")]
    InvalidWeight(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How strongly continued pretraining counts relative to the old counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Finite(f64),
    /// Discard the old counts entirely.
    Replace,
}

impl FromStr for Weight {
    type Err = ToyError;

    fn from_str(s: &str) -> Result<Self, ToyError> {
        match s.trim() {
            "replace" | "inf" => Ok(Weight::Replace),
            t => match t.parse::<f64>() {
                Ok(w) if w.is_finite() && w >= 0.0 => Ok(Weight::Finite(w)),
                _ => Err(ToyError::InvalidWeight(s.to_string())),
            },
        }
    }
}

/// Per-position categorical counts over `bins` action tokens plus stop.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenModel {
    bins: u32,
    alpha: f64,
    /// `counts[p][k]`; index `bins` is the stop symbol.
    counts: Vec<Vec<f64>>,
}

impl NextTokenModel {
    pub fn empty(bins: u32, alpha: f64) -> Self {
        Self { bins, alpha, counts: Vec::new() }
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Index of the stop symbol, one past the largest action token.
    pub fn stop_symbol(&self) -> usize {
        self.bins as usize
    }

    pub fn positions(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, position: usize, symbol: usize) -> f64 {
        self.counts.get(position).and_then(|c| c.get(symbol)).copied().unwrap_or(0.0)
    }

    fn ensure(&mut self, positions: usize) {
        let width = self.bins as usize + 1;
        if self.counts.len() < positions {
            self.counts.resize(positions, vec![0.0; width]);
        }
    }

    fn add(&mut self, samples: &[Sample], weight: f64) {
        for s in samples {
            let t = s.tokens.tokens();
            self.ensure(t.len() + 1);
            for (p, &tok) in t.iter().enumerate() {
                self.counts[p][tok as usize] += weight;
            }
            let stop = self.stop_symbol();
            self.counts[t.len()][stop] += weight;
        }
    }

    /// Probability over symbols at `position`, or `None` if it has no mass.
    pub fn distribution(&self, position: usize) -> Option<Vec<f64>> {
        let row = self.counts.get(position)?;
        let total: f64 = row.iter().sum::<f64>() + self.alpha * row.len() as f64;
        (total > 0.0).then(|| row.iter().map(|c| (c + self.alpha) / total).collect())
    }

    /// Probability of stopping after exactly `emitted` tokens, given that
    /// generation got that far. Positions without mass stop for certain.
    pub fn stop_probability(&self, emitted: usize) -> f64 {
        self.distribution(emitted).map_or(1.0, |d| d[self.stop_symbol()])
    }

    /// Cumulative tables for fast repeated sampling.
    pub fn sampler(&self) -> Sampler {
        let cdfs = (0..self.positions())
            .map(|p| {
                self.distribution(p).map(|d| {
                    let mut acc = 0.0;
                    d.into_iter()
                        .map(|x| {
                            acc += x;
                            acc
                        })
                        .collect()
                })
            })
            .collect();
        Sampler { cdfs, stop: self.stop_symbol() }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC}\nbins {}\nalpha {}\npositions {}\n", self.bins, self.alpha, self.positions());
        for (p, row) in self.counts.iter().enumerate() {
            if row.iter().all(|&c| c == 0.0) {
                continue;
            }
            let _ = write!(s, "pos {p}");
            for (k, &c) in row.iter().enumerate().filter(|(_, &c)| c != 0.0) {
                if k == self.stop_symbol() {
                    let _ = write!(s, " stop:{c}");
                } else {
                    let _ = write!(s, " {k}:{c}");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ToyError> {
        let err = |line: usize, reason: &str| ToyError::Format { line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, MAGIC)) => {}
            Some((n, _)) => return Err(err(n, "expected `etk-toy-model v1` header")),
            None => return Err(err(1, "empty model file")),
        }
        let mut header = |key: &str| -> Result<(usize, String), ToyError> {
            let (n, l) = lines.next().ok_or_else(|| err(0, &format!("missing `{key}`")))?;
            let v = l
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| err(n, &format!("expected `{key}`")))?;
            Ok((n, v.trim().to_string()))
        };
        let (n, v) = header("bins")?;
        let bins: u32 = v.parse().ok().filter(|&b| b >= 2).ok_or_else(|| err(n, "bins must be an integer >= 2"))?;
        let (n, v) = header("alpha")?;
        let alpha: f64 =
            v.parse().ok().filter(|a: &f64| a.is_finite() && *a >= 0.0).ok_or_else(|| err(n, "bad alpha"))?;
        let (n, v) = header("positions")?;
        let positions: usize = v.parse().map_err(|_| err(n, "bad positions"))?;
        let mut model = Self::empty(bins, alpha);
        model.ensure(positions);
        for (n, l) in lines {
            let mut parts = l.split_whitespace();
            if parts.next() != Some("pos") {
                return Err(err(n, "expected `pos`"));
            }
            let p: usize = parts
                .next()
                .and_then(|x| x.parse().ok())
                .filter(|&p| p < positions)
                .ok_or_else(|| err(n, "bad position"))?;
            for cell in parts {
                let (k, c) = cell.split_once(':').ok_or_else(|| err(n, "expected `symbol:count`"))?;
                let sym = if k == "stop" {
                    bins as usize
                } else {
                    k.parse::<usize>().ok().filter(|&k| k < bins as usize).ok_or_else(|| err(n, "bad token id"))?
                };
                let c: f64 =
                    c.parse().ok().filter(|c: &f64| c.is_finite() && *c >= 0.0).ok_or_else(|| err(n, "bad count"))?;
                model.counts[p][sym] = c;
            }
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ToyError> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ToyError> {
        Ok(fs::write(path, self.to_text())?)
    }
}

/// Prepared cumulative distributions of a [`NextTokenModel`].
#[derive(Debug, Clone)]
pub struct Sampler {
    cdfs: Vec<Option<Vec<f64>>>,
    stop: usize,
}

impl Sampler {
    /// Draws tokens until the stop symbol, a position without mass, or
    /// `hard_cap` tokens.
    pub fn sample(&self, rng: &mut impl RngCore, hard_cap: usize) -> Vec<u32> {
        let mut out = Vec::new();
        while out.len() < hard_cap {
            let Some(Some(cdf)) = self.cdfs.get(out.len()) else { break };
            let u: f64 = rng.gen::<f64>() * cdf[cdf.len() - 1];
            let k = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
            if k == self.stop {
                break;
            }
            out.push(k as u32);
        }
        out
    }
}

/// Counts every token at its position and the stop symbol right after
/// the last token.
pub fn fit(samples: &[Sample], bins: u32) -> Result<NextTokenModel, ToyError> {
    if samples.is_empty() {
        return Err(ToyError::EmptyDataset);
    }
    let mut m = NextTokenModel::empty(bins, 0.0);
    m.add(samples, 1.0);
    Ok(m)
}

/// Adds `weight` times the counts of `scp` onto `model`.
pub fn continue_pretrain(model: &NextTokenModel, scp: &[Sample], weight: Weight) -> NextTokenModel {
    match weight {
        Weight::Replace => {
            let mut m = NextTokenModel::empty(model.bins, model.alpha);
            m.add(scp, 1.0);
            m
        }
        Weight::Finite(w) => {
            let mut m = model.clone();
            if w > 0.0 {
                m.add(scp, w);
            }
            m
        }
    }
}

pub fn sample_sequence(model: &NextTokenModel, rng: &mut impl RngCore, hard_cap: usize) -> Vec<u32> {
    model.sampler().sample(rng, hard_cap)
}

fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Fraction of `trials` sampled sequences that fail the `7 * robots`
/// length check. Trial `t` draws from stream `t` of the seeded generator.
pub fn eval_token_count(model: &NextTokenModel, trials: usize, robots: usize, seed: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let sampler = model.sampler();
    let cap = 7 * robots + 8;
    let wrong: usize = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let seq = sampler.sample(&mut trial_rng(seed, t), cap);
            usize::from(validate_length(&seq, robots, model.bins).is_err())
        })
        .sum();
    wrong as f64 / trials as f64
}

/// Lets a fitted model decide each tick's output length: when the model
/// samples the right length the wrapped controller's tokens go out,
/// otherwise the model's own sample does.
pub struct ModelGatedPolicy<P> {
    inner: P,
    sampler: Sampler,
    rng: ChaCha8Rng,
}

impl<P> ModelGatedPolicy<P> {
    pub fn new(inner: P, model: &NextTokenModel, seed: u64) -> Self {
        Self { inner, sampler: model.sampler(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl<S: Scalar, P: Policy<S>> Policy<S> for ModelGatedPolicy<P> {
    fn act(&mut self, obs: &Observation<'_, S>) -> Vec<u32> {
        let want = 7 * obs.world.robots.len();
        let sampled = self.sampler.sample(&mut self.rng, want + 8);
        let tokens = self.inner.act(obs);
        if sampled.len() == want {
            tokens
        } else {
            sampled
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action_codec::{BinningSpec, TokenSeq};
    use crate::dataset::synthetic_unimanual;

    fn fixed_length(len: usize, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|k| {
                let toks: Vec<u32> = (0..len).map(|p| ((k * 31 + p * 7) % 256) as u32).collect();
                Sample::new(format!("o/{k}"), "do it", TokenSeq::new(toks, len / 7).unwrap(), "t")
            })
            .collect()
    }

    #[test]
    fn single_length_forces_stop() {
        let m7 = fit(&fixed_length(7, 50), 256).unwrap();
        assert_eq!(m7.stop_probability(7), 1.0);
        assert_eq!(m7.stop_probability(3), 0.0);
        let m14 = fit(&fixed_length(14, 50), 256).unwrap();
        assert_eq!(m14.stop_probability(14), 1.0);
        assert_eq!((0..14).map(|p| m14.count(p, 256)).sum::<f64>(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            assert_eq!(sample_sequence(&m7, &mut rng, 100).len(), 7);
            assert!(sample_sequence(&m7, &mut rng, 3).len() <= 3);
        }
    }

    #[test]
    fn distributions_sum_to_one() {
        let m = fit(&fixed_length(7, 20), 256).unwrap().with_alpha(0.5);
        for p in 0..m.positions() {
            let s: f64 = m.distribution(p).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(fit(&[], 256), Err(ToyError::EmptyDataset)));
        let empty = NextTokenModel::empty(256, 0.0);
        assert_eq!(empty.stop_probability(0), 1.0);
    }

    #[test]
    fn continued_pretraining_weights() {
        let uni = fit(&fixed_length(7, 40), 256).unwrap();
        let scp = fixed_length(14, 20);
        assert_eq!(continue_pretrain(&uni, &scp, Weight::Finite(0.0)), uni);
        let replaced = continue_pretrain(&uni, &scp, Weight::Replace);
        assert_eq!(replaced, fit(&scp, 256).unwrap());
        assert_eq!(eval_token_count(&replaced, 500, 2, 3), 0.0);
        assert_eq!(eval_token_count(&uni, 500, 2, 3), 1.0);
        let half = continue_pretrain(&uni, &scp, Weight::Finite(2.0));
        assert!((half.stop_probability(7) - 0.5).abs() < 1e-12);
        let rate = eval_token_count(&half, 10_000, 2, 9);
        assert!((rate - 0.5).abs() <= 0.05, "{rate}");
        assert_eq!(rate, eval_token_count(&half, 10_000, 2, 9));
    }

    #[test]
    fn rate_is_monotone_in_weight() {
        let uni = fit(&fixed_length(7, 40), 256).unwrap();
        let scp = fixed_length(14, 40);
        let rates: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0, 8.0]
            .iter()
            .map(|&w| eval_token_count(&continue_pretrain(&uni, &scp, Weight::Finite(w)), 4000, 2, 5))
            .collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0] + 0.03), "{rates:?}");
        assert_eq!(rates[0], 1.0);
    }

    #[test]
    fn text_round_trip() {
        let ds = synthetic_unimanual(64, 4, &BinningSpec::default());
        let m = continue_pretrain(&fit(ds.samples(), 256).unwrap(), &fixed_length(14, 10), Weight::Finite(0.3))
            .with_alpha(0.25);
        let back = NextTokenModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(matches!(NextTokenModel::from_text("nope\n"), Err(ToyError::Format { line: 1, .. })));
        assert!(matches!(
            NextTokenModel::from_text("etk-toy-model v1\nbins 4\nalpha 0\npositions 2\npos 0 9:1\n"),
            Err(ToyError::Format { line: 5, .. })
        ));
    }

    #[test]
    fn weights_parse() {
        assert_eq!("replace".parse::<Weight>().unwrap(), Weight::Replace);
        assert_eq!("1.5".parse::<Weight>().unwrap(), Weight::Finite(1.5));
        assert!("-1".parse::<Weight>().is_err());
    }
}
