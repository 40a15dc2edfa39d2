use dualsteer::data::{self, SynthConfig};
use serde_json::json;

use crate::manifest::{sidecar, RunManifest};
use crate::{usage_error, Failure, SynthArgs};

pub fn config_from(args: &SynthArgs) -> SynthConfig {
    let mut config = SynthConfig {
        seed: args.seed,
        ..SynthConfig::default()
    };
    if let Some(d) = args.d {
        config.d = d;
    }
    if let Some(n) = args.n_per_class {
        config.n_per_class = n;
    }
    if let Some(a) = args.alpha {
        config.axis_strength = a;
    }
    if let Some(s) = args.sigma {
        config.noise_sigma = s;
    }
    if let Some(t) = args.center_tightness {
        config.center_tightness = t;
    }
    if let Some(b) = args.collapse_bias {
        config.collapse_bias = b;
    }
    if let Some(f) = &args.facets {
        config.facet_names = f.clone();
    }
    config
}

pub fn run(args: &SynthArgs, argv: &[String]) -> Result<(), Failure> {
    let config = config_from(args);
    config.validate().map_err(|e| usage_error("synth", e))?;
    let samples = data::synth_gen(&config)?;
    super::write_text(&args.out, &data::to_canonical_string(&config.meta(), &samples)?)?;

    let mut manifest = RunManifest::new("synth", argv, json!(config));
    manifest.seed = Some(config.seed);
    manifest.output(&args.out);
    manifest.write(&sidecar(&args.out, "manifest.json"))?;
    println!("wrote {} samples (d = {}) to {}", samples.len(), config.d, args.out.display());
    Ok(())
}
