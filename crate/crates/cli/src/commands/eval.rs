use std::path::Path;

use dualsteer::data::{self, HeadSet};
use dualsteer::metrics::{evaluate_with, EvalReport};
use dualsteer::Sample;
use serde_json::json;

use super::train::SplitSpec;
use crate::manifest::{sidecar, RunManifest};
use crate::{EvalArgs, Failure};

/// Loads heads and data, checks they agree, and narrows to the held-out
/// part of the recorded split when asked.
pub fn load_pair(params: &Path, data_path: &Path, heldout: bool) -> anyhow::Result<(HeadSet, Vec<Sample>)> {
    let (header, heads) = data::load_heads(params)?;
    let (meta, samples) = data::load(data_path)?;
    heads.check_dim(meta.d)?;
    let samples = if heldout {
        SplitSpec::from_header(&header)?.apply(&samples)?.1
    } else {
        samples
    };
    Ok((heads, samples))
}

pub fn report(heads: &HeadSet, samples: &[Sample]) -> dualsteer::Result<EvalReport> {
    evaluate_with(samples, |s| heads.head_for(&s.facet))
}

pub fn run(args: &EvalArgs, argv: &[String]) -> Result<(), Failure> {
    let (heads, samples) = load_pair(&args.params, &args.data, args.heldout)?;
    let report = report(&heads, &samples)?;
    let table = format!("{}\n{}", report.method_table(), report.facet_table());

    super::write_text(&args.out_json, &(report.to_json() + "\n"))?;
    let mut manifest = RunManifest::new("eval", argv, json!({ "heldout": args.heldout }))
        .dataset(&args.data)
        .dataset(&args.params);
    manifest.output(&args.out_json);
    if let Some(path) = &args.out_table {
        super::write_text(path, &table)?;
        manifest.output(path);
    }
    manifest.write(&sidecar(&args.out_json, "manifest.json"))?;
    print!("{table}");
    Ok(())
}
