//! Plot-ready reports written to `--out-dir`:
//!
//! * `collapse.tsv` and `confusion.tsv`: prediction collapse and row-normalized
//!   confusion, zero-shot and (with a heads file) steered, overall and per facet;
//! * `projections.tsv`: per-facet PCA coordinates of every sample;
//! * `geometry.tsv`: per-facet class means on PC1, ordering score and class spreads;
//! * `dynamics.tsv`: interaction-group counts, plus mean `s`/`g` with heads;
//! * `report.json`: everything except the projections.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use dualsteer::data::{self, HeadSet};
use dualsteer::geometry::{center_band_stats, group_dynamics_with, ordering_score, pca_top_k, GroupDynamics};
use dualsteer::metrics::Scores;
use dualsteer::{argmax_label, predict, Label, Sample};
use serde_json::{json, Value};

use super::cell;
use crate::manifest::RunManifest;
use crate::{DiagnoseArgs, Failure};

const OVERALL: &str = "(all)";

fn scopes(samples: &[Sample]) -> Vec<(String, Vec<&Sample>)> {
    let mut by_facet: BTreeMap<&str, Vec<&Sample>> = BTreeMap::new();
    for s in samples {
        by_facet.entry(&s.facet).or_default().push(s);
    }
    let mut out = vec![(OVERALL.to_string(), samples.iter().collect())];
    out.extend(by_facet.into_iter().map(|(k, v)| (k.to_string(), v)));
    out
}

fn predictions(scope: &[&Sample], heads: Option<&HeadSet>) -> anyhow::Result<Vec<(&'static str, Vec<Label>)>> {
    let mut out = vec![("zero-shot", scope.iter().map(|s| argmax_label(&s.z)).collect())];
    if let Some(heads) = heads {
        let mut preds = Vec::with_capacity(scope.len());
        for s in scope {
            preds.push(predict(heads.head_for(&s.facet)?, s)?.label);
        }
        out.push(("steered", preds));
    }
    Ok(out)
}

fn collapse_reports(dir: &Path, scopes: &[(String, Vec<&Sample>)], heads: Option<&HeadSet>) -> anyhow::Result<Value> {
    let mut summary = super::tsv_writer(&dir.join("collapse.tsv"))?;
    summary.write_record(["scope", "predictor", "n", "accuracy", "macro_f1", "collapse_fraction", "modal_prediction"])?;
    let mut conf = super::tsv_writer(&dir.join("confusion.tsv"))?;
    conf.write_record(["scope", "predictor", "gold", "n_gold", "rate_Left", "rate_Center", "rate_Right"])?;
    let mut json_out = serde_json::Map::new();
    for (scope, members) in scopes {
        let gold: Vec<Label> = members.iter().map(|s| s.y).collect();
        let mut per_pred = serde_json::Map::new();
        for (predictor, preds) in predictions(members, heads)? {
            let scores = Scores::compute(&preds, &gold)?;
            summary.write_record([
                scope.clone(),
                predictor.to_string(),
                members.len().to_string(),
                scores.accuracy.to_string(),
                scores.macro_f1.to_string(),
                scores.collapse_fraction.to_string(),
                scores.modal_prediction.to_string(),
            ])?;
            for label in Label::ALL {
                let row = scores.confusion_normalized[label.index()];
                let n_gold: u64 = scores.confusion.counts[label.index()].iter().sum();
                conf.write_record([
                    scope.clone(),
                    predictor.to_string(),
                    label.to_string(),
                    n_gold.to_string(),
                    row[0].to_string(),
                    row[1].to_string(),
                    row[2].to_string(),
                ])?;
            }
            per_pred.insert(predictor.to_string(), json!(scores));
        }
        json_out.insert(scope.clone(), Value::Object(per_pred));
    }
    summary.flush()?;
    conf.flush()?;
    Ok(Value::Object(json_out))
}

fn geometry_reports(dir: &Path, scopes: &[(String, Vec<&Sample>)]) -> anyhow::Result<Value> {
    let mut proj = super::tsv_writer(&dir.join("projections.tsv"))?;
    proj.write_record(["facet", "id", "label", "pc1", "pc2"])?;
    let mut geo = super::tsv_writer(&dir.join("geometry.tsv"))?;
    geo.write_record([
        "facet",
        "n",
        "explained_pc1",
        "explained_pc2",
        "mean_pc1_Left",
        "mean_pc1_Center",
        "mean_pc1_Right",
        "ordering_score",
        "std_pc1_Left",
        "std_pc1_Center",
        "std_pc1_Right",
        "std_pc2_Left",
        "std_pc2_Center",
        "std_pc2_Right",
        "center_tightest",
    ])?;
    let mut json_out = serde_json::Map::new();
    // PCA is per facet only; pooling facets would mix unrelated axes.
    for (facet, members) in scopes.iter().filter(|(k, _)| k != OVERALL) {
        let vectors: Vec<_> = members.iter().map(|s| s.h.clone()).collect();
        let labels: Vec<Label> = members.iter().map(|s| s.y).collect();
        let k = vectors[0].dim().min(2);
        let pca = pca_top_k(&vectors, k).with_context(|| format!("PCA for facet {facet:?}"))?;
        let ordering = ordering_score(&pca, &labels).with_context(|| format!("ordering for facet {facet:?}"))?;
        let band = center_band_stats(&pca, &labels)?;
        for (s, p) in members.iter().zip(&pca.projections) {
            proj.write_record([
                facet.clone(),
                s.id.clone(),
                s.y.to_string(),
                p[0].to_string(),
                cell(p.get(1).copied()),
            ])?;
        }
        let explained = |j: usize| pca.eigenvalues.get(j).map(|e| e / pca.total_variance);
        let pc2 = |c: usize| cell(band.pc2_std.map(|v| v[c]));
        geo.write_record([
            facet.clone(),
            members.len().to_string(),
            cell(explained(0)),
            cell(explained(1)),
            ordering.means[0].to_string(),
            ordering.means[1].to_string(),
            ordering.means[2].to_string(),
            ordering.score.to_string(),
            band.pc1_std[0].to_string(),
            band.pc1_std[1].to_string(),
            band.pc1_std[2].to_string(),
            pc2(0),
            pc2(1),
            pc2(2),
            band.center_tightest.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
        json_out.insert(
            facet.clone(),
            json!({
                "eigenvalues": pca.eigenvalues,
                "total_variance": pca.total_variance,
                "ordering": ordering,
                "center_band": band,
            }),
        );
    }
    proj.flush()?;
    geo.flush()?;
    Ok(Value::Object(json_out))
}

fn dynamics(members: &[&Sample], heads: Option<&HeadSet>) -> dualsteer::Result<GroupDynamics> {
    let owned: Vec<Sample> = members.iter().map(|s| (*s).clone()).collect();
    match heads {
        Some(h) => group_dynamics_with(&owned, Some(|s: &Sample| h.head_for(&s.facet))),
        None => dualsteer::geometry::group_counts(&owned),
    }
}

fn dynamics_report(dir: &Path, scopes: &[(String, Vec<&Sample>)], heads: Option<&HeadSet>) -> anyhow::Result<Value> {
    let mut w = super::tsv_writer(&dir.join("dynamics.tsv"))?;
    let mut header = vec!["scope", "group", "name", "rule", "count"];
    if heads.is_some() {
        header.extend(["mean_s", "mean_g"]);
    }
    w.write_record(&header)?;
    let mut json_out = serde_json::Map::new();
    for (scope, members) in scopes {
        let dyn_ = dynamics(members, heads)?;
        for stats in &dyn_.groups {
            let mut row = vec![
                scope.clone(),
                format!("{:?}", stats.group),
                stats.group.name().to_string(),
                stats.rule.clone(),
                stats.count.to_string(),
            ];
            if heads.is_some() {
                row.extend([cell(stats.mean_s), cell(stats.mean_g)]);
            }
            w.write_record(&row)?;
        }
        let mut row = vec![scope.clone(), "other".into(), "other".into(), "no group rule".into(), dyn_.other.to_string()];
        if heads.is_some() {
            row.extend([String::new(), String::new()]);
        }
        w.write_record(&row)?;
        json_out.insert(scope.clone(), json!(dyn_));
    }
    w.flush()?;
    Ok(Value::Object(json_out))
}

pub fn run(args: &DiagnoseArgs, argv: &[String]) -> Result<(), Failure> {
    let (meta, samples) = data::load(&args.data)?;
    let heads = match &args.params {
        Some(path) => {
            let (_, heads) = data::load_heads(path)?;
            heads.check_dim(meta.d)?;
            Some(heads)
        }
        None => None,
    };
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let dir = args.out_dir.as_path();
    let scopes = scopes(&samples);

    let report = json!({
        "collapse": collapse_reports(dir, &scopes, heads.as_ref())?,
        "geometry": geometry_reports(dir, &scopes)?,
        "dynamics": dynamics_report(dir, &scopes, heads.as_ref())?,
    });
    let mut text = serde_json::to_string_pretty(&report).context("serializing report")?;
    text.push('\n');
    super::write_text(&dir.join("report.json"), &text)?;

    let mut manifest = RunManifest::new("diagnose", argv, json!({ "with_heads": heads.is_some() })).dataset(&args.data);
    if let Some(p) = &args.params {
        manifest = manifest.dataset(p);
    }
    for name in ["collapse.tsv", "confusion.tsv", "projections.tsv", "geometry.tsv", "dynamics.tsv", "report.json"] {
        manifest.output(&dir.join(name));
    }
    manifest.write(&dir.join("manifest.json"))?;

    for (scope, value) in report["collapse"].as_object().into_iter().flatten() {
        if let Some(z) = value.get("zero-shot") {
            println!("{scope}: zero-shot collapse fraction {}", z["collapse_fraction"]);
        }
    }
    Ok(())
}
