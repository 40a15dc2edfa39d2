//! Representation-geometry and probe-dynamics diagnostics.
//!
//! PCA runs power iteration directly on the centered data matrix
//! (`C v = Xᵀ(X v) / n`), so the `d × d` covariance is never formed.
//! Later components are found by projecting out the earlier ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::probe;
use crate::rng::SeededRng;
use crate::types::{argmax_label, dot, HiddenVector, Label, Sample, SteeringParams};

const PCA_TOLERANCE: f64 = 1e-9;
const PCA_MAX_ITERS: usize = 10_000;
const PCA_SEED: u64 = 0x0005_eed0_f9ca;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// Unit directions, one per component.
    pub directions: Vec<Vec<f64>>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sum of all eigenvalues of the (population) covariance.
    pub total_variance: f64,
    /// `projections[i][j]` is sample `i` on component `j`.
    pub projections: Vec<Vec<f64>>,
}

impl PcaResult {
    pub fn component(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.projections.iter().map(move |p| p[j])
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for u in basis {
        let c = dot(v, u);
        for (x, ui) in v.iter_mut().zip(u) {
            *x -= c * ui;
        }
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Flips `v` so its largest-magnitude coordinate is positive.
fn canonical_sign(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Top-`k` principal components of `vectors`.
pub fn pca_top_k(vectors: &[HiddenVector], k: usize) -> Result<PcaResult> {
    let d = vectors.first().ok_or(Error::EmptyDataset)?.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidConfig(format!("k must be in 1..={d}, got {k}")));
    }
    if vectors.len() < k + 1 {
        return Err(Error::InvalidConfig(format!(
            "PCA with k = {k} needs at least {} vectors, got {}",
            k + 1,
            vectors.len()
        )));
    }
    for v in vectors {
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "PCA input",
                expected: d,
                found: v.dim(),
            });
        }
    }

    let n = vectors.len() as f64;
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.as_slice()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.as_slice().iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let total_variance = centered.iter().map(|x| dot(x, x)).sum::<f64>() / n;

    let cov_times = |v: &[f64]| {
        let mut out = vec![0.0; d];
        for x in &centered {
            let c = dot(x, v);
            for (o, xi) in out.iter_mut().zip(x) {
                *o += c * xi;
            }
        }
        out.iter_mut().for_each(|o| *o /= n);
        out
    };

    // Anything below this is numerically a null direction.
    let null_floor = 1e-12 * total_variance.max(f64::MIN_POSITIVE);
    let mut rng = SeededRng::new(PCA_SEED);
    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);

    for component in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
        project_out(&mut v, &directions);
        normalize(&mut v);

        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..PCA_MAX_ITERS {
            let mut w = cov_times(&v);
            project_out(&mut w, &directions);
            if normalize(&mut w) <= null_floor {
                // Remaining spectrum is zero: any orthogonal unit vector will do.
                converged = true;
                break;
            }
            // Compare up to sign.
            if dot(&w, &v) < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            residual = w.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            v = w;
            if residual < PCA_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence { component, residual });
        }

        project_out(&mut v, &directions);
        normalize(&mut v);
        canonical_sign(&mut v);
        let eigenvalue = dot(&v, &cov_times(&v)).max(0.0);
        eigenvalues.push(eigenvalue);
        directions.push(v);
    }

    let projections = centered
        .iter()
        .map(|x| directions.iter().map(|u| dot(x, u)).collect())
        .collect();

    Ok(PcaResult {
        directions,
        eigenvalues,
        mean,
        total_variance,
        projections,
    })
}

fn class_values(values: &[f64], labels: &[Label]) -> Result<[Vec<f64>; 3]> {
    if values.len() != labels.len() {
        return Err(Error::LengthMismatch {
            preds: values.len(),
            gold: labels.len(),
        });
    }
    let mut out: [Vec<f64>; 3] = Default::default();
    for (&v, l) in values.iter().zip(labels) {
        out[l.index()].push(v);
    }
    if let Some(missing) = Label::ALL.into_iter().find(|l| out[l.index()].is_empty()) {
        return Err(Error::MissingClass(missing));
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// Class-mean projections on PC1 in Left, Center, Right order.
    pub means: [f64; 3],
    pub score: f64,
}

/// Scores the Left → Center → Right ordering of class means on PC1.
///
/// `+1` for strictly increasing means, `-1` for strictly decreasing, and
/// otherwise (number of adjacent pairs agreeing with the better orientation)
/// / 2, signed by that orientation (positive on a tie). The magnitude does
/// not depend on the arbitrary sign of PC1.
pub fn ordering_score(pca: &PcaResult, labels: &[Label]) -> Result<OrderingReport> {
    let pc1: Vec<f64> = pca.component(0).collect();
    let groups = class_values(&pc1, labels)?;
    let means = [mean(&groups[0]), mean(&groups[1]), mean(&groups[2])];
    Ok(OrderingReport {
        means,
        score: ordering_from_means(means),
    })
}

pub fn ordering_from_means(means: [f64; 3]) -> f64 {
    let pairs = [(means[0], means[1]), (means[1], means[2])];
    let up = pairs.iter().filter(|(a, b)| a < b).count();
    let down = pairs.iter().filter(|(a, b)| a > b).count();
    if up >= down {
        up as f64 / 2.0
    } else {
        -(down as f64) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterBandReport {
    /// Population std of PC1 projections per class (L, C, R).
    pub pc1_std: [f64; 3],
    /// Same on PC2, when at least two components were computed.
    pub pc2_std: Option<[f64; 3]>,
    /// Whether Center has the strictly smallest PC1 spread. `None` when any
    /// class has fewer than two samples.
    pub center_tightest: Option<bool>,
}

pub fn center_band_stats(pca: &PcaResult, labels: &[Label]) -> Result<CenterBandReport> {
    let pc1: Vec<f64> = pca.component(0).collect();
    let g1 = class_values(&pc1, labels)?;
    let pc1_std = [std_dev(&g1[0]), std_dev(&g1[1]), std_dev(&g1[2])];
    let pc2_std = if pca.directions.len() >= 2 {
        let pc2: Vec<f64> = pca.component(1).collect();
        let g2 = class_values(&pc2, labels)?;
        Some([std_dev(&g2[0]), std_dev(&g2[1]), std_dev(&g2[2])])
    } else {
        None
    };
    let center_tightest = if g1.iter().all(|g| g.len() >= 2) {
        Some(pc1_std[1] < pc1_std[0] && pc1_std[1] < pc1_std[2])
    } else {
        None
    };
    Ok(CenterBandReport {
        pc1_std,
        pc2_std,
        center_tightest,
    })
}

/// Interaction groups keyed on (gold label, zero-shot prediction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    /// Left gold, Left predicted.
    A,
    /// Right gold, Left predicted.
    B,
    /// Center gold, Left predicted.
    C,
    /// Left or Right gold, Center predicted.
    D,
}

impl Group {
    pub const ALL: [Group; 4] = [Group::A, Group::B, Group::C, Group::D];

    pub fn assign(gold: Label, baseline: Label) -> Option<Group> {
        match (gold, baseline) {
            (Label::Left, Label::Left) => Some(Group::A),
            (Label::Right, Label::Left) => Some(Group::B),
            (Label::Center, Label::Left) => Some(Group::C),
            (Label::Left | Label::Right, Label::Center) => Some(Group::D),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::A => "aligned",
            Group::B => "conflict",
            Group::C => "neutralization",
            Group::D => "injection",
        }
    }

    pub fn rule(self) -> &'static str {
        match self {
            Group::A => "gold=Left, baseline=Left",
            Group::B => "gold=Right, baseline=Left",
            Group::C => "gold=Center, baseline=Left",
            Group::D => "gold in {Left, Right}, baseline=Center",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: Group,
    pub rule: String,
    pub count: usize,
    /// `None` for an empty group or when no head was supplied.
    pub mean_s: Option<f64>,
    pub mean_g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDynamics {
    pub groups: Vec<GroupStats>,
    /// Samples whose (gold, baseline) pair matches no group.
    pub other: usize,
}

impl GroupDynamics {
    pub fn get(&self, group: Group) -> &GroupStats {
        &self.groups[group as usize]
    }
}

pub fn group_dynamics(params: &SteeringParams, data: &[Sample]) -> Result<GroupDynamics> {
    group_dynamics_with(data, Some(|_: &Sample| Ok(params)))
}

/// Group counts only, with no probe statistics.
pub fn group_counts(data: &[Sample]) -> Result<GroupDynamics> {
    group_dynamics_with(data, None::<fn(&Sample) -> Result<&'static SteeringParams>>)
}

/// Group statistics with a head chosen per sample; `None` gives counts only.
pub fn group_dynamics_with<'p, F>(data: &[Sample], mut head_for: Option<F>) -> Result<GroupDynamics>
where
    F: FnMut(&Sample) -> Result<&'p SteeringParams>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sums = [(0usize, 0.0f64, 0.0f64); 4];
    let mut other = 0;
    for sample in data {
        let Some(group) = Group::assign(sample.y, argmax_label(&sample.z)) else {
            other += 1;
            continue;
        };
        let slot = &mut sums[group as usize];
        slot.0 += 1;
        if let Some(head_for) = head_for.as_mut() {
            let out = probe(head_for(sample)?, &sample.h)?;
            slot.1 += out.s;
            slot.2 += out.g;
        }
    }
    let with_head = head_for.is_some();
    let groups = Group::ALL
        .into_iter()
        .zip(sums)
        .map(|(group, (count, s, g))| {
            let defined = with_head && count > 0;
            GroupStats {
                group,
                rule: group.rule().to_string(),
                count,
                mean_s: defined.then(|| s / count as f64),
                mean_g: defined.then(|| g / count as f64),
            }
        })
        .collect();
    Ok(GroupDynamics { groups, other })
}
