use std::collections::BTreeMap;

use anyhow::Context;
use dualsteer::data::{self, HeadSet, HeadsHeader, GLOBAL_FACET};
use dualsteer::{few_shot_split, train, Optimizer, Sample, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::manifest::{sidecar, RunManifest};
use crate::{usage_error, Failure, OptimizerArg, TrainArgs};

/// The split a heads file was trained on, stored in its header under `split`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    /// `(train, eval)`.
    pub fn apply(&self, samples: &[Sample]) -> dualsteer::Result<(Vec<Sample>, Vec<Sample>)> {
        few_shot_split(samples, self.fraction, self.seed, self.stratified)
    }

    pub fn from_header(header: &HeadsHeader) -> anyhow::Result<Self> {
        let raw = header
            .extra
            .get("split")
            .context("heads file records no split; train it with `dualsteer train` or drop --heldout")?;
        serde_json::from_value(raw.clone()).context("malformed split record in heads header")
    }
}

pub fn train_config(args: &TrainArgs) -> TrainConfig {
    let mut config = TrainConfig {
        seed: args.seed,
        early_stop_patience: args.patience,
        ..TrainConfig::default()
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(l2) = args.l2 {
        config.l2_penalty = l2;
    }
    if let Some(s) = args.init_scale {
        config.init_scale = s;
    }
    if args.optimizer == OptimizerArg::Gd {
        config.optimizer = Optimizer::GradientDescent;
    }
    config
}

pub fn run(args: &TrainArgs, argv: &[String]) -> Result<(), Failure> {
    let config = train_config(args);
    config.validate().map_err(|e| usage_error("train", e))?;
    let split = SplitSpec {
        fraction: args.fraction,
        seed: args.seed,
        stratified: !args.no_stratify,
    };

    let (meta, samples) = data::load(&args.data)?;
    let (train_set, eval_set) = split.apply(&samples)?;

    let mut parts: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    if args.global {
        parts.insert(GLOBAL_FACET.to_string(), train_set.clone());
    } else {
        for sample in &train_set {
            parts.entry(sample.facet.clone()).or_default().push(sample.clone());
        }
    }

    let mut heads = HeadSet::default();
    let mut record_extra = BTreeMap::new();
    let mut loss_rows: Vec<Vec<String>> = vec![vec!["facet".into(), "epoch".into(), "loss".into()]];
    println!("{:<20} {:>7} {:>12} {:>12} {:>7}", "facet", "n_train", "loss_init", "loss_final", "epochs");
    for (facet, part) in &parts {
        let result = train(part, &config).with_context(|| format!("training facet {facet:?}"))?;
        println!(
            "{:<20} {:>7} {:>12.4} {:>12.4} {:>7}",
            facet,
            part.len(),
            result.initial_loss,
            result.final_loss,
            result.epochs_run
        );
        loss_rows.push(vec![facet.clone(), "0".into(), result.initial_loss.to_string()]);
        for (epoch, loss) in result.loss_history.iter().enumerate() {
            loss_rows.push(vec![facet.clone(), (epoch + 1).to_string(), loss.to_string()]);
        }
        let extra: BTreeMap<String, Value> = [
            ("n_train".to_string(), json!(part.len())),
            ("initial_loss".to_string(), json!(result.initial_loss)),
            ("final_loss".to_string(), json!(result.final_loss)),
            ("epochs_run".to_string(), json!(result.epochs_run)),
        ]
        .into();
        record_extra.insert(facet.clone(), extra);
        heads.heads.insert(facet.clone(), result.params);
    }

    let header_extra: BTreeMap<String, Value> = [
        ("split".to_string(), json!(split)),
        ("train_config".to_string(), json!(config)),
        ("mode".to_string(), json!(if args.global { "global" } else { "per_facet" })),
        ("n_train".to_string(), json!(train_set.len())),
        ("n_eval".to_string(), json!(eval_set.len())),
        ("model".to_string(), json!(meta.model)),
        ("layer".to_string(), json!(meta.layer)),
    ]
    .into();
    super::write_text(&args.out, &data::heads_to_string(&heads, header_extra, &record_extra)?)?;

    let loss_path = sidecar(&args.out, "loss.tsv");
    let mut w = super::tsv_writer(&loss_path)?;
    for row in &loss_rows {
        w.write_record(row).context("writing loss summary")?;
    }
    w.flush().context("writing loss summary")?;

    let resolved = json!({ "split": split, "train": config, "global": args.global });
    let mut manifest = RunManifest::new("train", argv, resolved).dataset(&args.data);
    manifest.seed = Some(args.seed);
    manifest.output(&args.out);
    manifest.output(&loss_path);
    manifest.write(&sidecar(&args.out, "manifest.json"))?;
    Ok(())
}
