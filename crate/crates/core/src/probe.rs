//! Dual-probe decomposition and asymmetric logit calibration.
//!
//! Two scalar readouts are taken from a hidden state `h`:
//!
//! * `s = v_s · h + b_s`, a signed Left/Right direction;
//! * `g = softplus(v_g · h + b_g)`, a non-negative correction magnitude.
//!
//! They adjust the base logits as
//!
//! ```text
//! ẑ_L = z_L − s − g/2
//! ẑ_C = z_C + μ·g
//! ẑ_R = z_R + μ·s − g/2
//! ```
//!
//! The Left update carries the full `−s` while the Right update carries
//! `+μ·s`; this asymmetry is intentional and preserved as written.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{argmax_label, dot, softmax, softplus, HiddenVector, Label, LogitTriple, Sample, SteeringParams};

/// The two probe readouts for one hidden state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutput {
    pub s: f64,
    /// Always `>= 0`.
    pub g: f64,
}

/// Directional term `s = v_s · h + b_s`.
pub fn compute_s(params: &SteeringParams, h: &HiddenVector) -> Result<f64> {
    params.check_dim(h)?;
    Ok(dot(&params.v_s, h.as_slice()) + params.b_s)
}

/// Pre-activation of the magnitude probe, `v_g · h + b_g`.
pub fn g_preactivation(params: &SteeringParams, h: &HiddenVector) -> Result<f64> {
    params.check_dim(h)?;
    Ok(dot(&params.v_g, h.as_slice()) + params.b_g)
}

/// Magnitude term `g = softplus(v_g · h + b_g)`.
pub fn compute_g(params: &SteeringParams, h: &HiddenVector) -> Result<f64> {
    g_preactivation(params, h).map(softplus)
}

pub fn probe(params: &SteeringParams, h: &HiddenVector) -> Result<ProbeOutput> {
    Ok(ProbeOutput {
        s: compute_s(params, h)?,
        g: compute_g(params, h)?,
    })
}

/// Applies the asymmetric update to `z`.
///
/// `g` must be non-negative; it is never clamped here, a negative value is a
/// caller bug and is reported as such.
pub fn calibrate(z: &LogitTriple, s: f64, g: f64, mu: f64) -> Result<LogitTriple> {
    if g < 0.0 || g.is_nan() {
        return Err(Error::NegativeMagnitude(g));
    }
    let half_g = 0.5 * g;
    LogitTriple::new(
        z.left() - s - half_g,
        z.center() + mu * g,
        z.right() + mu * s - half_g,
    )
}

/// Everything `predict` derives for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub probe: ProbeOutput,
    pub calibrated: LogitTriple,
    pub probs: [f64; 3],
    pub label: Label,
}

pub fn predict(params: &SteeringParams, sample: &Sample) -> Result<Prediction> {
    let probe = probe(params, &sample.h)?;
    let calibrated = calibrate(&sample.z, probe.s, probe.g, params.mu())?;
    Ok(Prediction {
        probe,
        calibrated,
        probs: softmax(&calibrated),
        label: argmax_label(&calibrated),
    })
}
