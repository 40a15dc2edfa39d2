//! Accuracy, macro-F1, confusion matrices and baseline-relative reports.
//!
//! F1 convention: a zero precision or recall denominator yields 0 for that
//! quantity, and every one of the three classes enters the macro average,
//! including classes absent from both gold and predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probe::predict;
use crate::types::{argmax_label, Label, Sample, SteeringParams};

fn check_lengths(preds: &[Label], gold: &[Label]) -> Result<()> {
    if preds.len() != gold.len() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            gold: gold.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn accuracy(preds: &[Label], gold: &[Label]) -> Result<f64> {
    check_lengths(preds, gold)?;
    let hits = preds.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Rows are gold labels, columns predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..3).map(|k| self.counts[k][k]).sum()
    }

    /// Row-normalized rates. An empty gold row stays all-zero; see
    /// [`ConfusionMatrix::empty_rows`].
    pub fn normalized(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for (row, counts) in out.iter_mut().zip(&self.counts) {
            let n: u64 = counts.iter().sum();
            if n > 0 {
                for (r, &c) in row.iter_mut().zip(counts) {
                    *r = c as f64 / n as f64;
                }
            }
        }
        out
    }

    pub fn empty_rows(&self) -> Vec<Label> {
        Label::ALL
            .into_iter()
            .filter(|l| self.counts[l.index()].iter().sum::<u64>() == 0)
            .collect()
    }

    pub fn predicted_totals(&self) -> [u64; 3] {
        let mut out = [0; 3];
        for row in &self.counts {
            for (o, c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    /// Most-predicted class (lowest index on ties).
    pub fn modal_prediction(&self) -> Label {
        let totals = self.predicted_totals();
        let mut best = 0;
        for k in 1..3 {
            if totals[k] > totals[best] {
                best = k;
            }
        }
        Label::ALL[best]
    }

    /// Share of all predictions that land in the modal predicted class.
    pub fn collapse_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.predicted_totals()[self.modal_prediction().index()] as f64 / total as f64
    }

    pub fn per_class_f1(&self) -> [f64; 3] {
        let predicted = self.predicted_totals();
        let mut out = [0.0; 3];
        for k in 0..3 {
            let tp = self.counts[k][k] as f64;
            let gold_k: u64 = self.counts[k].iter().sum();
            let precision = if predicted[k] == 0 { 0.0 } else { tp / predicted[k] as f64 };
            let recall = if gold_k == 0 { 0.0 } else { tp / gold_k as f64 };
            out[k] = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
        }
        out
    }

    pub fn macro_f1(&self) -> f64 {
        self.per_class_f1().iter().sum::<f64>() / 3.0
    }
}

pub fn confusion(preds: &[Label], gold: &[Label]) -> Result<ConfusionMatrix> {
    check_lengths(preds, gold)?;
    let mut m = ConfusionMatrix::default();
    for (p, g) in preds.iter().zip(gold) {
        m.counts[g.index()][p.index()] += 1;
    }
    Ok(m)
}

pub fn per_class_f1(preds: &[Label], gold: &[Label]) -> Result<[f64; 3]> {
    Ok(confusion(preds, gold)?.per_class_f1())
}

pub fn macro_f1(preds: &[Label], gold: &[Label]) -> Result<f64> {
    Ok(confusion(preds, gold)?.macro_f1())
}

/// Metrics for one prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; 3],
    pub confusion: ConfusionMatrix,
    pub confusion_normalized: [[f64; 3]; 3],
    pub collapse_fraction: f64,
    pub modal_prediction: Label,
}

impl Scores {
    pub fn compute(preds: &[Label], gold: &[Label]) -> Result<Self> {
        let confusion = confusion(preds, gold)?;
        Ok(Scores {
            accuracy: confusion.trace() as f64 / confusion.total() as f64,
            macro_f1: confusion.macro_f1(),
            per_class_f1: confusion.per_class_f1(),
            confusion_normalized: confusion.normalized(),
            collapse_fraction: confusion.collapse_fraction(),
            modal_prediction: confusion.modal_prediction(),
            confusion,
        })
    }
}

/// Steered metrics next to the zero-shot baseline (argmax of raw `z`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSlice {
    pub n: usize,
    pub calibrated: Scores,
    pub baseline: Scores,
    pub delta_acc: f64,
    pub delta_f1: f64,
}

impl EvalSlice {
    fn compute(preds: &[Label], baseline: &[Label], gold: &[Label]) -> Result<Self> {
        let calibrated = Scores::compute(preds, gold)?;
        let baseline = Scores::compute(baseline, gold)?;
        Ok(EvalSlice {
            n: gold.len(),
            delta_acc: calibrated.accuracy - baseline.accuracy,
            delta_f1: calibrated.macro_f1 - baseline.macro_f1,
            calibrated,
            baseline,
        })
    }
}

/// Unweighted means over facets, the alternative to pooling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetMean {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub baseline_accuracy: f64,
    pub baseline_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pooled over every evaluated sample.
    pub overall: EvalSlice,
    pub per_facet: BTreeMap<String, EvalSlice>,
    pub facet_mean: FacetMean,
}

/// Evaluates one head over all of `data`.
pub fn evaluate(params: &SteeringParams, data: &[Sample]) -> Result<EvalReport> {
    evaluate_with(data, |_| Ok(params))
}

/// Evaluates with a head chosen per sample (e.g. one head per facet).
pub fn evaluate_with<'p, F>(data: &[Sample], mut head_for: F) -> Result<EvalReport>
where
    F: FnMut(&Sample) -> Result<&'p SteeringParams>,
{
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(data.len());
    for sample in data {
        preds.push(predict(head_for(sample)?, sample)?.label);
    }
    let baseline: Vec<Label> = data.iter().map(|s| argmax_label(&s.z)).collect();
    let gold: Vec<Label> = data.iter().map(|s| s.y).collect();
    let overall = EvalSlice::compute(&preds, &baseline, &gold)?;

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, sample) in data.iter().enumerate() {
        groups.entry(&sample.facet).or_default().push(i);
    }
    let mut per_facet = BTreeMap::new();
    for (facet, idx) in groups {
        let pick = |v: &[Label]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        per_facet.insert(
            facet.to_string(),
            EvalSlice::compute(&pick(&preds), &pick(&baseline), &pick(&gold))?,
        );
    }

    let n = per_facet.len() as f64;
    let mean = |f: fn(&EvalSlice) -> f64| per_facet.values().map(f).sum::<f64>() / n;
    let facet_mean = FacetMean {
        accuracy: mean(|s| s.calibrated.accuracy),
        macro_f1: mean(|s| s.calibrated.macro_f1),
        baseline_accuracy: mean(|s| s.baseline.accuracy),
        baseline_macro_f1: mean(|s| s.baseline.macro_f1),
    };

    Ok(EvalReport {
        overall,
        per_facet,
        facet_mean,
    })
}

/// Signed four-decimal rendering, e.g. `+0.3000`.
pub fn format_delta(delta: f64) -> String {
    format!("{delta:+.4}")
}

/// Signed percentage-point rendering of a fractional delta, e.g. `+20.95`.
pub fn format_delta_points(delta: f64) -> String {
    format!("{:+.2}", 100.0 * delta)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// Method-level table: accuracy and macro-F1 in percent with deltas in
    /// points against the zero-shot row.
    pub fn method_table(&self) -> String {
        let o = &self.overall;
        let rows = [
            ("Zero-shot", o.baseline.accuracy, o.baseline.macro_f1, None),
            ("Steered", o.calibrated.accuracy, o.calibrated.macro_f1, Some((o.delta_acc, o.delta_f1))),
        ];
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>8} {:>8}",
            "Method", "Accuracy", "Macro-F1", "ΔAcc", "ΔF1"
        );
        for (name, acc, f1, delta) in rows {
            let (da, df) = match delta {
                Some((a, f)) => (format_delta_points(a), format_delta_points(f)),
                None => ("-".to_string(), "-".to_string()),
            };
            let _ = writeln!(
                out,
                "{:<12} {:>9.2} {:>9.2} {:>8} {:>8}",
                name,
                100.0 * acc,
                100.0 * f1,
                da,
                df
            );
        }
        out
    }

    /// Per-facet macro-F1 recovery table with an `Avg` row over facets.
    pub fn facet_table(&self) -> String {
        let width = self
            .per_facet
            .keys()
            .map(|k| k.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>8} {:>8} {:>19}",
            "Facet", "n", "Base Acc", "Base F1", "Steered F1 (Δ)"
        );
        for (facet, slice) in &self.per_facet {
            let _ = writeln!(
                out,
                "{:<width$} {:>6} {:>8.4} {:>8.4} {:>19}",
                facet,
                slice.n,
                slice.baseline.accuracy,
                slice.baseline.macro_f1,
                format!("{:.4} ({})", slice.calibrated.macro_f1, format_delta(slice.delta_f1)),
            );
        }
        let m = &self.facet_mean;
        let _ = writeln!(
            out,
            "{:<width$} {:>6} {:>8.4} {:>8.4} {:>19}",
            "Avg",
            "-",
            m.baseline_accuracy,
            m.baseline_macro_f1,
            format!(
                "{:.4} ({})",
                m.macro_f1,
                format_delta(m.macro_f1 - m.baseline_macro_f1)
            ),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::types::{HiddenVector, LogitTriple};
    use approx::assert_relative_eq;
    use Label::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[Left, Center, Right], &[Left, Center, Right]).unwrap(), 1.0);
        assert_eq!(accuracy(&[Left, Left, Left], &[Left, Center, Right]).unwrap(), 1.0 / 3.0);
        assert!(matches!(accuracy(&[Left], &[Left, Right]), Err(Error::LengthMismatch { .. })));
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn delta_arithmetic_fixture() {
        // Qwen rows of the main results table: 65.88 vs 44.93.
        assert_eq!(format_delta_points(0.6588 - 0.4493), "+20.95");
        assert_eq!(format_delta(0.3730 - 0.0730), "+0.3000");
        assert_eq!(format_delta(-0.0441), "-0.0441");
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[Left, Center, Right], &[Left, Center, Right]).unwrap(), 1.0);

        // All-Left on balanced gold: F1_L = 2·(1/3·1)/(1/3+1) = 1/2.
        let n = 4;
        let gold: Vec<Label> = Label::ALL.iter().flat_map(|&l| std::iter::repeat_n(l, n)).collect();
        let preds = vec![Left; 3 * n];
        let f1 = per_class_f1(&preds, &gold).unwrap();
        assert_relative_eq!(f1[0], 0.5, epsilon = 1e-15);
        assert_eq!((f1[1], f1[2]), (0.0, 0.0));
        assert_relative_eq!(macro_f1(&preds, &gold).unwrap(), 1.0 / 6.0, epsilon = 1e-15);

        assert_relative_eq!(macro_f1(&[Left; 5], &[Left; 5]).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn confusion_examples() {
        let m = confusion(&[Left, Left, Left], &[Left, Center, Right]).unwrap();
        assert_eq!(m.normalized(), [[1.0, 0.0, 0.0]; 3]);
        assert_eq!(m.collapse_fraction(), 1.0);
        assert_eq!(m.modal_prediction(), Left);

        let m = confusion(&[Left, Center, Right, Right], &[Left, Center, Right, Right]).unwrap();
        assert_eq!(
            m.normalized(),
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
        );
        assert!(m.empty_rows().is_empty());

        let m = confusion(&[Right], &[Right]).unwrap();
        assert_eq!(m.empty_rows(), vec![Left, Center]);
        assert_eq!(m.normalized()[0], [0.0; 3]);
    }

    fn random_labels(rng: &mut SeededRng, n: usize) -> Vec<Label> {
        (0..n).map(|_| Label::ALL[rng.below(3)]).collect()
    }

    #[test]
    fn metric_invariants_on_random_sets() {
        let mut rng = SeededRng::new(17);
        for _ in 0..200 {
            let n = 1 + rng.below(40);
            let preds = random_labels(&mut rng, n);
            let gold = random_labels(&mut rng, n);
            let m = confusion(&preds, &gold).unwrap();
            assert_eq!(m.total(), n as u64);
            assert_eq!(accuracy(&preds, &gold).unwrap(), m.trace() as f64 / n as f64);
            let f1 = m.macro_f1();
            assert!((0.0..=1.0).contains(&f1));
            let diagonal = m.trace() == n as u64;
            let all_present = m.empty_rows().is_empty();
            assert_eq!(f1 == 1.0, diagonal && all_present);

            // Joint permutation leaves everything unchanged.
            let mut order: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut order);
            let p2: Vec<Label> = order.iter().map(|&i| preds[i]).collect();
            let g2: Vec<Label> = order.iter().map(|&i| gold[i]).collect();
            assert_eq!(confusion(&p2, &g2).unwrap(), m);
            assert_eq!(macro_f1(&p2, &g2).unwrap(), f1);
        }
    }

    fn sample(id: &str, facet: &str, z: [f64; 3], y: Label) -> Sample {
        Sample::new(
            id,
            facet,
            HiddenVector::new(vec![1.0, -0.5]).unwrap(),
            LogitTriple::from_array(z).unwrap(),
            y,
        )
        .unwrap()
    }

    #[test]
    fn identity_limit_reproduces_baseline() {
        let data = vec![
            sample("a", "MF", [2.0, 0.0, 0.0], Left),
            sample("b", "MF", [2.0, 0.1, 0.0], Center),
            sample("c", "SS", [0.0, 3.0, 0.0], Right),
            sample("d", "SS", [0.0, 0.0, 1.0], Right),
        ];
        let mut params = SteeringParams::zeros(2);
        params.b_g = -1e6;
        let report = evaluate(&params, &data).unwrap();
        assert_eq!(report.overall.calibrated, report.overall.baseline);
        assert_eq!(report.overall.delta_acc, 0.0);
        assert_eq!(report.overall.delta_f1, 0.0);
        assert_eq!(report.per_facet.len(), 2);
        assert_eq!(report.per_facet["SS"].n, 2);
        assert_eq!(report.per_facet["MF"].baseline.accuracy, 0.5);
    }

    #[test]
    fn missing_head_propagates() {
        let data = vec![sample("a", "MF", [0.0; 3], Left)];
        let err = evaluate_with(&data, |s| Err(Error::MissingFacet(s.facet.clone()))).unwrap_err();
        assert!(err.to_string().contains("MF"));
    }

    #[test]
    fn tables_render_expected_columns() {
        let data = vec![
            sample("a", "PeR", [2.0, 0.0, 0.0], Left),
            sample("b", "PeR", [2.0, 0.0, 0.0], Center),
        ];
        let report = evaluate(&SteeringParams::zeros(2), &data).unwrap();
        let t = report.method_table();
        assert!(t.starts_with("Method"));
        assert!(t.contains("Zero-shot") && t.contains("Steered"));
        let f = report.facet_table();
        assert!(f.contains("PeR") && f.contains("Avg"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(json["overall"]["delta_acc"].is_number());
    }
}
