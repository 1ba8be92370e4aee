//! Discretization of continuous 7-DoF robot actions into integer tokens.
//!
//! Every dimension is split into `bins` uniform bins over a closed range.
//! One robot produces exactly [`DOF`] tokens per step; a step for `N` robots
//! is the concatenation of the per-robot sequences in robot order.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::scalar::Scalar;

/// Tokens per robot per step.
pub const DOF: usize = 7;

/// Names of the seven action dimensions, in token order.
pub const DIMENSION_NAMES: [&str; DOF] = ["dx", "dy", "dz", "droll", "dpitch", "dyaw", "gripper"];

pub const DEFAULT_BINS: u32 = 256;

/// Index of the gripper component.
pub const GRIPPER: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CodecError {
    #[error("action component `{dimension}` is not finite")]
    NonFiniteAction { dimension: &'static str },
    #[error("token {id} at position {position} is outside [0, {bins})")]
    TokenOutOfRange { position: usize, id: u32, bins: u32 },
    #[error("cannot concatenate an empty list of token sequences")]
    EmptyInput,
    #[error("invalid binning spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Contract(#[from] TokenContractViolation),
    #[error("binning config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("binning config io: {0}")]
    Io(String),
}

/// Outcome of checking a raw token list against the per-embodiment contract.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenContractViolation {
    #[error("wrong token count: got {got}, expected {expected}")]
    WrongTokenCount { got: usize, expected: usize },
    #[error("token {id} at position {position} is outside [0, {bins})")]
    TokenOutOfRange { position: usize, id: u32, bins: u32 },
}

/// One robot's continuous control command.
///
/// Components in order: translation delta (m), orientation delta (rad),
/// gripper aperture in `[0, 1]` with 0 closed and 1 open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVector<S = f64> {
    pub components: [S; DOF],
}

impl<S: Scalar> ActionVector<S> {
    pub fn new(dx: S, dy: S, dz: S, droll: S, dpitch: S, dyaw: S, gripper: S) -> Self {
        Self { components: [dx, dy, dz, droll, dpitch, dyaw, gripper] }
    }

    pub fn from_array(components: [S; DOF]) -> Self {
        Self { components }
    }

    pub fn zero() -> Self {
        Self { components: [S::zero(); DOF] }
    }

    /// Planar motion with every rotation at zero.
    pub fn planar(dx: S, dy: S, gripper: S) -> Self {
        let z = S::zero();
        Self::new(dx, dy, z, z, z, z, gripper)
    }

    pub fn dx(&self) -> S {
        self.components[0]
    }

    pub fn dy(&self) -> S {
        self.components[1]
    }

    pub fn gripper(&self) -> S {
        self.components[GRIPPER]
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.components.iter().position(|v| !v.is_finite())
    }
}

/// Closed interval for one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimRange<S = f64> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> DimRange<S> {
    pub fn new(lo: S, hi: S) -> Self {
        Self { lo, hi }
    }

    pub fn clamp(&self, v: S) -> S {
        v.max(self.lo).min(self.hi)
    }
}

/// Uniform per-dimension bin layout shared by every token of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningSpec<S = f64> {
    ranges: [DimRange<S>; DOF],
    bins: u32,
}

impl<S: Scalar> Default for BinningSpec<S> {
    /// ±0.05 m translation, ±0.25 rad rotation, gripper in [0, 1], 256 bins.
    fn default() -> Self {
        let t = DimRange::new(S::lit(-0.05), S::lit(0.05));
        let r = DimRange::new(S::lit(-0.25), S::lit(0.25));
        let g = DimRange::new(S::zero(), S::one());
        Self { ranges: [t, t, t, r, r, r, g], bins: DEFAULT_BINS }
    }
}

impl<S: Scalar> BinningSpec<S> {
    pub fn new(ranges: [DimRange<S>; DOF], bins: u32) -> Result<Self, CodecError> {
        if bins < 2 {
            return Err(CodecError::InvalidSpec(format!("bins must be >= 2, got {bins}")));
        }
        for (d, r) in ranges.iter().enumerate() {
            if !(r.lo.is_finite() && r.hi.is_finite() && r.lo < r.hi) {
                return Err(CodecError::InvalidSpec(format!(
                    "dimension `{}` needs finite lo < hi, got [{}, {}]",
                    DIMENSION_NAMES[d], r.lo, r.hi
                )));
            }
        }
        Ok(Self { ranges, bins })
    }

    /// Same range on all seven dimensions.
    pub fn uniform(lo: S, hi: S, bins: u32) -> Result<Self, CodecError> {
        Self::new([DimRange::new(lo, hi); DOF], bins)
    }

    pub fn with_bins(&self, bins: u32) -> Result<Self, CodecError> {
        Self::new(self.ranges, bins)
    }

    pub fn bins(&self) -> u32 {
        self.bins
    }

    pub fn range(&self, dim: usize) -> DimRange<S> {
        self.ranges[dim]
    }

    pub fn ranges(&self) -> &[DimRange<S>; DOF] {
        &self.ranges
    }

    pub fn bin_width(&self, dim: usize) -> S {
        let r = self.ranges[dim];
        (r.hi - r.lo) / S::from_u32(self.bins).unwrap()
    }

    /// Token for one finite value; out-of-range values land in the edge bins.
    pub fn token_for(&self, dim: usize, value: S) -> u32 {
        let r = self.ranges[dim];
        let v = r.clamp(value);
        let k = ((v - r.lo) / self.bin_width(dim)).floor();
        let k = k.to_u32().unwrap_or(0);
        k.min(self.bins - 1)
    }

    /// Bin center for a token id. The id must be in range.
    pub fn center(&self, dim: usize, id: u32) -> S {
        let r = self.ranges[dim];
        r.lo + (S::from_u32(id).unwrap() + S::lit(0.5)) * self.bin_width(dim)
    }

    /// Parses the `name = lo,hi,bins` text format.
    pub fn from_config_str(text: &str) -> Result<Self, CodecError> {
        let mut ranges: [Option<DimRange<S>>; DOF] = [None; DOF];
        let mut bins: Option<u32> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| CodecError::Config { line: line_no, reason };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected `name = lo,hi,bins`".into()))?;
            let key = key.trim();
            let dim = DIMENSION_NAMES
                .iter()
                .position(|n| *n == key)
                .ok_or_else(|| err(format!("unknown dimension `{key}`")))?;
            if ranges[dim].is_some() {
                return Err(err(format!("dimension `{key}` given twice")));
            }
            let fields: Vec<&str> = value.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 comma-separated fields, got {}", fields.len())));
            }
            let lo: f64 = fields[0].parse().map_err(|_| err(format!("bad lo `{}`", fields[0])))?;
            let hi: f64 = fields[1].parse().map_err(|_| err(format!("bad hi `{}`", fields[1])))?;
            let b: u32 = fields[2].parse().map_err(|_| err(format!("bad bins `{}`", fields[2])))?;
            match bins {
                Some(prev) if prev != b => {
                    return Err(err(format!("bins {b} differs from earlier {prev}")));
                }
                _ => bins = Some(b),
            }
            ranges[dim] = Some(DimRange::new(S::lit(lo), S::lit(hi)));
        }
        let mut out = [DimRange::new(S::zero(), S::one()); DOF];
        for (d, r) in ranges.iter().enumerate() {
            out[d] = r.ok_or_else(|| CodecError::Config {
                line: text.lines().count(),
                reason: format!("missing dimension `{}`", DIMENSION_NAMES[d]),
            })?;
        }
        Self::new(out, bins.unwrap_or(DEFAULT_BINS))
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        for (d, r) in self.ranges.iter().enumerate() {
            let _ = writeln!(s, "{} = {},{},{}", DIMENSION_NAMES[d], r.lo.as_f64(), r.hi.as_f64(), self.bins);
        }
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let text = std::fs::read_to_string(path).map_err(|e| CodecError::Io(e.to_string()))?;
        Self::from_config_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        std::fs::write(path, self.to_config_string()).map_err(|e| CodecError::Io(e.to_string()))
    }
}

/// Discrete action tokens for one step of `embodiments` robots.
///
/// Construction guarantees `tokens.len() == 7 * embodiments`; the id range
/// depends on the bin count and is checked with [`TokenSeq::check_range`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    tokens: Vec<u32>,
    embodiments: usize,
}

impl TokenSeq {
    pub fn new(tokens: Vec<u32>, embodiments: usize) -> Result<Self, TokenContractViolation> {
        let expected = DOF * embodiments;
        if embodiments == 0 || tokens.len() != expected {
            return Err(TokenContractViolation::WrongTokenCount { got: tokens.len(), expected });
        }
        Ok(Self { tokens, embodiments })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn into_tokens(self) -> Vec<u32> {
        self.tokens
    }

    pub fn embodiments(&self) -> usize {
        self.embodiments
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The seven tokens of robot `robot`.
    pub fn robot(&self, robot: usize) -> &[u32] {
        &self.tokens[robot * DOF..(robot + 1) * DOF]
    }

    pub fn check_range(&self, bins: u32) -> Result<(), TokenContractViolation> {
        check_ids(&self.tokens, bins)
    }
}

fn check_ids(tokens: &[u32], bins: u32) -> Result<(), TokenContractViolation> {
    match tokens.iter().position(|&t| t >= bins) {
        Some(position) => Err(TokenContractViolation::TokenOutOfRange { position, id: tokens[position], bins }),
        None => Ok(()),
    }
}

pub fn tokenize<S: Scalar>(action: &ActionVector<S>, spec: &BinningSpec<S>) -> Result<TokenSeq, CodecError> {
    if let Some(d) = action.first_non_finite() {
        return Err(CodecError::NonFiniteAction { dimension: DIMENSION_NAMES[d] });
    }
    let tokens = (0..DOF).map(|d| spec.token_for(d, action.components[d])).collect();
    Ok(TokenSeq { tokens, embodiments: 1 })
}

/// Tokenizes one action per robot and concatenates them in robot order.
pub fn tokenize_all<S: Scalar>(actions: &[ActionVector<S>], spec: &BinningSpec<S>) -> Result<TokenSeq, CodecError> {
    let parts = actions.iter().map(|a| tokenize(a, spec)).collect::<Result<Vec<_>, _>>()?;
    concat_embodiments(&parts)
}

/// Maps every token to its bin center, one action vector per embodiment.
pub fn detokenize<S: Scalar>(seq: &TokenSeq, spec: &BinningSpec<S>) -> Result<Vec<ActionVector<S>>, CodecError> {
    if let Err(TokenContractViolation::TokenOutOfRange { position, id, bins }) = seq.check_range(spec.bins()) {
        return Err(CodecError::TokenOutOfRange { position, id, bins });
    }
    Ok(seq
        .tokens
        .chunks_exact(DOF)
        .map(|chunk| {
            let mut c = [S::zero(); DOF];
            for (d, &id) in chunk.iter().enumerate() {
                c[d] = spec.center(d, id);
            }
            ActionVector::from_array(c)
        })
        .collect())
}

pub fn concat_embodiments(parts: &[TokenSeq]) -> Result<TokenSeq, CodecError> {
    if parts.is_empty() {
        return Err(CodecError::EmptyInput);
    }
    let embodiments = parts.iter().map(TokenSeq::embodiments).sum();
    let tokens = parts.iter().flat_map(|p| p.tokens.iter().copied()).collect();
    Ok(TokenSeq { tokens, embodiments })
}

/// Checks a raw decoder output against the `7 * N` contract.
pub fn validate_length(tokens: &[u32], expected_embodiments: usize, bins: u32) -> Result<(), TokenContractViolation> {
    let expected = DOF * expected_embodiments;
    if tokens.len() != expected {
        return Err(TokenContractViolation::WrongTokenCount { got: tokens.len(), expected });
    }
    check_ids(tokens, bins)
}
