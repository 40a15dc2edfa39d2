//! Cross-entropy training of a [`SteeringParams`] head on a small labeled set.
//!
//! The objective is the summed negative log-likelihood of the gold labels
//! under the calibrated softmax, plus `l2_penalty · (‖v_s‖² + ‖v_g‖²)`. The
//! backbone never appears here: samples are read-only and only the head's
//! `2d + 3` scalars change.
//!
//! Reductions over samples are sequential in data order, so loss and
//! gradient are bitwise reproducible for a given input order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::{calibrate, g_preactivation, compute_s};
use crate::rng::SeededRng;
use crate::types::{log_sum_exp, sigmoid, softmax, softplus, Sample, SteeringParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GradientDescent,
    /// Adam with the usual bias correction.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l2_penalty: f64,
    /// Std of the seeded gaussian added to `v_s`, `v_g` at init. Zero means
    /// an exactly zero start.
    pub init_scale: f64,
    pub optimizer: Optimizer,
    /// Stop after this many epochs without a strict loss improvement.
    pub early_stop_patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 500,
            seed: 0,
            l2_penalty: 1e-4,
            init_scale: 0.0,
            optimizer: Optimizer::default(),
            early_stop_patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::InvalidConfig("l2_penalty must be >= 0".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::InvalidConfig("init_scale must be >= 0".into()));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            let in_unit = |b: f64| (0.0..1.0).contains(&b);
            if !in_unit(beta1) || !in_unit(beta2) || !(eps > 0.0) {
                return Err(Error::InvalidConfig("adam betas must be in [0, 1), eps > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub params: SteeringParams,
    /// Loss of the initial head, before any update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Loss after each epoch's update.
    pub loss_history: Vec<f64>,
    pub epochs_run: usize,
}

fn check_data(params: &SteeringParams, data: &[Sample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    params.validate()?;
    for sample in data {
        params.check_dim(&sample.h)?;
    }
    Ok(())
}

fn l2_term(params: &SteeringParams, l2_penalty: f64) -> f64 {
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    l2_penalty * (sq(&params.v_s) + sq(&params.v_g))
}

/// Summed cross-entropy plus the L2 penalty on the probe vectors.
pub fn loss(params: &SteeringParams, data: &[Sample], l2_penalty: f64) -> Result<f64> {
    check_data(params, data)?;
    let mu = params.mu();
    let mut total = 0.0;
    for sample in data {
        let s = compute_s(params, &sample.h)?;
        let g = softplus(g_preactivation(params, &sample.h)?);
        let zhat = calibrate(&sample.z, s, g, mu)?;
        total += log_sum_exp(&zhat) - zhat.get(sample.y);
    }
    Ok(total + l2_term(params, l2_penalty))
}

/// Analytic gradient of [`loss`], returned in the shape of the parameters.
///
/// Per sample, with `δ = p − onehot(y)`:
/// `∂L/∂s = −δ_L + μ δ_R`, `∂L/∂g = −δ_L/2 + μ δ_C − δ_R/2`,
/// `∂L/∂μ = g δ_C + s δ_R`; then through `s = v_s·h + b_s`,
/// `g = softplus(a)` with `a = v_g·h + b_g` (`dg/da = sigmoid(a)`), and
/// `μ = sigmoid(mu_raw)` (`dμ/dmu_raw = μ(1 − μ)`).
pub fn grad(params: &SteeringParams, data: &[Sample], l2_penalty: f64) -> Result<SteeringParams> {
    check_data(params, data)?;
    let d = params.dim();
    let mu = params.mu();
    let mut out = SteeringParams::zeros(d);
    let mut d_mu = 0.0;

    for sample in data {
        let h = sample.h.as_slice();
        let s = compute_s(params, &sample.h)?;
        let a = g_preactivation(params, &sample.h)?;
        let g = softplus(a);
        let zhat = calibrate(&sample.z, s, g, mu)?;

        let mut delta = softmax(&zhat);
        delta[sample.y.index()] -= 1.0;
        let [dl, dc, dr] = delta;

        let ds = -dl + mu * dr;
        let da = (-0.5 * dl + mu * dc - 0.5 * dr) * sigmoid(a);
        d_mu += g * dc + s * dr;

        for (k, &hk) in h.iter().enumerate() {
            out.v_s[k] += ds * hk;
            out.v_g[k] += da * hk;
        }
        out.b_s += ds;
        out.b_g += da;
    }

    for k in 0..d {
        out.v_s[k] += 2.0 * l2_penalty * params.v_s[k];
        out.v_g[k] += 2.0 * l2_penalty * params.v_g[k];
    }
    out.mu_raw = d_mu * mu * (1.0 - mu);
    Ok(out)
}

/// Central finite differences of [`loss`], one coordinate at a time.
///
/// Test oracle for [`grad`]; it only ever evaluates the loss.
pub fn finite_diff_grad(
    params: &SteeringParams,
    data: &[Sample],
    l2_penalty: f64,
    step: f64,
) -> Result<SteeringParams> {
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be > 0, got {step}")));
    }
    check_data(params, data)?;
    let d = params.dim();
    let base = params.to_flat();
    let mut out = vec![0.0; base.len()];
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        let plus = loss(&SteeringParams::from_flat(d, &probe)?, data, l2_penalty)?;
        probe[i] = base[i] - step;
        let minus = loss(&SteeringParams::from_flat(d, &probe)?, data, l2_penalty)?;
        probe[i] = base[i];
        out[i] = (plus - minus) / (2.0 * step);
    }
    SteeringParams::from_flat(d, &out)
}

/// Fits a head by full-batch descent on `data`.
///
/// Starts from `v_s = v_g = 0` (plus `init_scale` seeded noise),
/// `b_s = b_g = 0` and `mu_raw = 0`. The run is a pure function of
/// `(data order, config)`.
pub fn train(data: &[Sample], config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    let d = data.first().ok_or(Error::EmptyDataset)?.dim();

    let mut params = SteeringParams::zeros(d);
    if config.init_scale > 0.0 {
        let mut rng = SeededRng::new(config.seed);
        for v in params.v_s.iter_mut().chain(params.v_g.iter_mut()) {
            *v = config.init_scale * rng.gaussian();
        }
    }
    let initial_loss = loss(&params, data, config.l2_penalty)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: 0,
            loss: initial_loss,
        });
    }

    let mut theta = params.to_flat();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = initial_loss;
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let g = grad(&params, data, config.l2_penalty)?.to_flat();
        match config.optimizer {
            Optimizer::GradientDescent => {
                for (t, gi) in theta.iter_mut().zip(&g) {
                    *t -= config.learning_rate * gi;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(epoch as i32);
                let bc2 = 1.0 - beta2.powi(epoch as i32);
                for i in 0..theta.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = m[i] / bc1;
                    let v_hat = v[i] / bc2;
                    theta[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                loss: f64::NAN,
            });
        }
        params = SteeringParams::from_flat(d, &theta)?;
        let current = loss(&params, data, config.l2_penalty)?;
        if !current.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: current,
            });
        }
        history.push(current);

        if let Some(patience) = config.early_stop_patience {
            if current < best {
                best = current;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }

    let epochs_run = history.len();
    Ok(TrainResult {
        params,
        initial_loss,
        final_loss: *history.last().expect("epochs >= 1"),
        loss_history: history,
        epochs_run,
    })
}

/// Splits `data` into a small training set and a held-out evaluation set.
///
/// Selection uses a seeded Fisher–Yates shuffle; both halves keep the input
/// order. Unstratified, the training set has `round(fraction · n)` samples
/// (at least one). Stratified, each facet contributes
/// `max(1, round(fraction · n_facet))`, with facets visited in sorted order
/// from a single random stream.
pub fn few_shot_split(
    data: &[Sample],
    fraction: f64,
    seed: u64,
    stratify_by_facet: bool,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must be in (0, 1), got {fraction}"
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = SeededRng::new(seed);
    let mut in_train = vec![false; data.len()];

    let mut pick = |indices: &mut Vec<usize>, rng: &mut SeededRng| {
        let n_train = ((fraction * indices.len() as f64).round() as usize).clamp(1, indices.len());
        rng.shuffle(indices);
        for &i in &indices[..n_train] {
            in_train[i] = true;
        }
    };

    if stratify_by_facet {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, sample) in data.iter().enumerate() {
            groups.entry(sample.facet.as_str()).or_default().push(i);
        }
        for (facet, indices) in groups.iter_mut() {
            if indices.is_empty() {
                return Err(Error::EmptyFacet(facet.to_string()));
            }
            pick(indices, &mut rng);
        }
    } else {
        let mut indices: Vec<usize> = (0..data.len()).collect();
        pick(&mut indices, &mut rng);
    }

    let (train, eval): (Vec<_>, Vec<_>) = data
        .iter()
        .zip(&in_train)
        .partition(|(_, &selected)| selected);
    Ok((
        train.into_iter().map(|(s, _)| s.clone()).collect(),
        eval.into_iter().map(|(s, _)| s.clone()).collect(),
    ))
}
