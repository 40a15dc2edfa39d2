//! Dual-probe logit steering.
//!
//! A frozen model supplies, per input, a hidden state `h` and three base
//! logits `z = (z_L, z_C, z_R)`. A small head reads two scalars off `h` (a
//! signed direction `s` and a non-negative magnitude `g`) and uses them to
//! shift `z` before the softmax. Only the head is trained.
//!
//! Modules:
//!
//! * [`types`]: labels, logit triples, samples, head parameters, and the
//!   softmax/softplus/argmax primitives;
//! * [`probe`]: the two probes and the logit update;
//! * [`trainer`]: loss, analytic gradient, finite-difference oracle,
//!   full-batch training and the few-shot split;
//! * [`metrics`]: accuracy, macro-F1, confusion and baseline-relative reports;
//! * [`geometry`]: PCA, class ordering, center-band spread and group dynamics;
//! * [`data`]: dataset and head file formats plus the planted generator.

pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod probe;
pub mod rng;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
pub use probe::{calibrate, compute_g, compute_s, predict, Prediction, ProbeOutput};
pub use trainer::{few_shot_split, train, Optimizer, TrainConfig, TrainResult};
pub use types::{argmax_label, softmax, softplus, HiddenVector, Label, LogitTriple, Sample, SteeringParams};
