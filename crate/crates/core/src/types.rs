//! Domain types and the small numeric primitives everything else is built on.
//!
//! All values are 64-bit internally. Constructors validate finiteness, so a
//! value of any of these types can be assumed well-formed downstream.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-way stance label. The integer encoding is `Left = 0`, `Center = 1`,
/// `Right = 2`, which is also the component order of a [`LogitTriple`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Left = 0,
    Center = 1,
    Right = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Left, Label::Center, Label::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Left => "Left",
            Label::Center => "Center",
            Label::Right => "Right",
        }
    }

    /// One-letter abbreviation used in compact reports.
    pub fn short(self) -> char {
        match self {
            Label::Left => 'L',
            Label::Center => 'C',
            Label::Right => 'R',
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseLabelError(pub String);

impl fmt::Display for ParseLabelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "unknown label {:?}", self.0)
    }
}

impl std::error::Error for ParseLabelError {}

impl FromStr for Label {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "Left" => Ok(Label::Left),
            "Center" => Ok(Label::Center),
            "Right" => Ok(Label::Right),
            other => Err(ParseLabelError(other.to_string())),
        }
    }
}

/// Unnormalized scores `(z_L, z_C, z_R)`, all finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitTriple([f64; 3]);

impl LogitTriple {
    pub fn new(left: f64, center: f64, right: f64) -> Result<Self> {
        Self::from_array([left, center, right])
    }

    pub fn from_array(values: [f64; 3]) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(LogitTriple(values))
        } else {
            Err(Error::NonFinite(format!("logit triple {values:?}")))
        }
    }

    pub fn left(&self) -> f64 {
        self.0[0]
    }

    pub fn center(&self) -> f64 {
        self.0[1]
    }

    pub fn right(&self) -> f64 {
        self.0[2]
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.0
    }

    /// Adds `shift` to every component.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::from_array(self.0.map(|v| v + shift))
    }
}

/// Dense hidden-state vector of dimension `d >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenVector(Vec<f64>);

impl HiddenVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidConfig("hidden vector must have d >= 1".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("hidden vector entry {pos}")));
        }
        Ok(HiddenVector(values))
    }

    /// Widens single-precision activations, as produced by most inference stacks.
    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// One labeled example: the extracted hidden state and base logits of a text.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub facet: String,
    pub h: HiddenVector,
    pub z: LogitTriple,
    pub y: Label,
}

impl Sample {
    pub fn new(
        id: impl Into<String>,
        facet: impl Into<String>,
        h: HiddenVector,
        z: LogitTriple,
        y: Label,
    ) -> Result<Self> {
        let facet = facet.into();
        if facet.is_empty() {
            return Err(Error::InvalidConfig("sample facet must be non-empty".into()));
        }
        Ok(Sample {
            id: id.into(),
            facet,
            h,
            z,
            y,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }
}

/// The trainable head: two linear probes and the redistribution coefficient.
///
/// `mu_raw` is unconstrained; the coefficient actually used is
/// `mu = sigmoid(mu_raw)`, which lies in the open interval (0, 1). The same
/// struct doubles as the container for gradients, in which case `mu_raw`
/// holds the derivative with respect to `mu_raw`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringParams {
    pub v_s: Vec<f64>,
    pub b_s: f64,
    pub v_g: Vec<f64>,
    pub b_g: f64,
    pub mu_raw: f64,
}

impl SteeringParams {
    /// All-zero head of dimension `d` (`mu = 0.5`).
    pub fn zeros(d: usize) -> Self {
        SteeringParams {
            v_s: vec![0.0; d],
            b_s: 0.0,
            v_g: vec![0.0; d],
            b_g: 0.0,
            mu_raw: 0.0,
        }
    }

    pub fn new(v_s: Vec<f64>, b_s: f64, v_g: Vec<f64>, b_g: f64, mu_raw: f64) -> Result<Self> {
        let params = SteeringParams {
            v_s,
            b_s,
            v_g,
            b_g,
            mu_raw,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.v_s.is_empty() {
            return Err(Error::InvalidConfig("probe dimension must be >= 1".into()));
        }
        if self.v_s.len() != self.v_g.len() {
            return Err(Error::DimensionMismatch {
                context: "steering params (v_s vs v_g)",
                expected: self.v_s.len(),
                found: self.v_g.len(),
            });
        }
        if !self.flat_iter().all(f64::is_finite) {
            return Err(Error::NonFinite("steering params".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.v_s.len()
    }

    pub fn mu(&self) -> f64 {
        sigmoid(self.mu_raw)
    }

    /// Number of scalar parameters, `2d + 3`.
    pub fn num_params(&self) -> usize {
        2 * self.dim() + 3
    }

    fn flat_iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.v_s
            .iter()
            .copied()
            .chain(std::iter::once(self.b_s))
            .chain(self.v_g.iter().copied())
            .chain([self.b_g, self.mu_raw])
    }

    /// Flat layout: `[v_s; b_s; v_g; b_g; mu_raw]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.flat_iter().collect()
    }

    pub fn from_flat(d: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * d + 3 {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected: 2 * d + 3,
                found: flat.len(),
            });
        }
        Ok(SteeringParams {
            v_s: flat[..d].to_vec(),
            b_s: flat[d],
            v_g: flat[d + 1..2 * d + 1].to_vec(),
            b_g: flat[2 * d + 1],
            mu_raw: flat[2 * d + 2],
        })
    }

    pub(crate) fn check_dim(&self, h: &HiddenVector) -> Result<()> {
        if self.dim() != h.dim() {
            return Err(Error::DimensionMismatch {
                context: "probe vs hidden vector",
                expected: self.dim(),
                found: h.dim(),
            });
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow for large `x` or underflow-to-zero for
/// moderately negative `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &LogitTriple) -> [f64; 3] {
    let v = z.as_array();
    let m = v[0].max(v[1]).max(v[2]);
    let e = v.map(|x| (x - m).exp());
    let sum = e[0] + e[1] + e[2];
    e.map(|x| x / sum)
}

/// `ln Σ exp(z_k)`, stable.
pub fn log_sum_exp(z: &LogitTriple) -> f64 {
    let v = z.as_array();
    let m = v[0].max(v[1]).max(v[2]);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Label of the largest component; ties go to the lowest index (L < C < R).
pub fn argmax_label(z: &LogitTriple) -> Label {
    let v = z.as_array();
    let mut best = 0;
    for k in 1..3 {
        if v[k] > v[best] {
            best = k;
        }
    }
    Label::ALL[best]
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
