//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fail.
//!
//! Run alone with `cargo test -p dualsteer-tool --test criteria`.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dualsteer::data::{self, SynthConfig};
use dualsteer::geometry::{center_band_stats, group_dynamics, ordering_score, pca_top_k, Group};
use dualsteer::metrics::{confusion, macro_f1};
use dualsteer::rng::SeededRng;
use dualsteer::trainer::{finite_diff_grad, grad};
use dualsteer::{
    calibrate, few_shot_split, softplus, train, HiddenVector, Label, LogitTriple, Sample, SteeringParams, TrainConfig,
};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_triple(rng: &mut SeededRng, scale: f64) -> LogitTriple {
    LogitTriple::new(scale * rng.gaussian(), scale * rng.gaussian(), scale * rng.gaussian()).unwrap()
}

fn random_label(rng: &mut SeededRng) -> Label {
    Label::from_index(rng.below(3)).unwrap()
}

fn gradient_oracle() -> Outcome {
    const STEP: f64 = 1e-5;
    const REL_TOL: f64 = 1e-5;
    const ABS_FLOOR: f64 = 1e-8;
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = 0;
    for fixture in 0..20u64 {
        let d = [1, 4, 16][fixture as usize % 3];
        let mut rng = SeededRng::new(0xfd00 + fixture);
        let vec = |rng: &mut SeededRng| (0..d).map(|_| 0.5 * rng.gaussian()).collect::<Vec<_>>();
        let v_s = vec(&mut rng);
        let v_g = vec(&mut rng);
        let params = SteeringParams::new(v_s, rng.gaussian(), v_g, rng.gaussian(), rng.gaussian()).unwrap();
        let samples: Vec<Sample> = (0..8)
            .map(|i| {
                let h = HiddenVector::new((0..d).map(|_| rng.gaussian()).collect()).unwrap();
                let z = random_triple(&mut rng, 2.0);
                Sample::new(format!("f{fixture}-{i}"), "fixture", h, z, random_label(&mut rng)).unwrap()
            })
            .collect();
        let l2 = 0.01;
        let analytic = grad(&params, &samples, l2).unwrap().to_flat();
        let numeric = finite_diff_grad(&params, &samples, l2, STEP).unwrap().to_flat();
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(ABS_FLOOR);
            worst = worst.max(rel);
            if rel >= REL_TOL {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(5),
        format!(
            "20 fixtures, d in {{1,4,16}}; max rel err {worst:.2e} (tol {REL_TOL:e}), {failures} coords over; {:.2} s (< 5 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn calibration_identity() -> Outcome {
    let mut rng = SeededRng::new(0x1de);
    let mut mismatches = 0;
    for i in 0..1000 {
        let scale = [1e-3, 1.0, 1e3, 1e8][i % 4];
        let z = random_triple(&mut rng, scale);
        let out = calibrate(&z, 0.0, 0.0, rng.uniform()).unwrap();
        let same = (0..3).all(|k| out.as_array()[k].to_bits() == z.as_array()[k].to_bits());
        mismatches += usize::from(!same);
    }
    outcome(mismatches == 0, format!("1000 triples, {mismatches} not bitwise equal"))
}

fn calibration_algebra() -> Outcome {
    let mut rng = SeededRng::new(0xa19);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z = random_triple(&mut rng, 5.0);
        let s = 5.0 * rng.gaussian();
        let g = softplus(3.0 * rng.gaussian());
        let mu = rng.uniform();
        let out = calibrate(&z, s, g, mu).unwrap();
        let shift: f64 = out.as_array().iter().sum::<f64>() - z.as_array().iter().sum::<f64>();
        worst = worst.max((shift - (mu - 1.0) * (s + g)).abs());
    }
    outcome(worst <= 1e-9, format!("1000 cases, max |residual| {worst:.2e} (tol 1e-9)"))
}

fn g_symmetry() -> Outcome {
    // Dyadic operands keep every operation exact, so equality is bitwise.
    let mut rng = SeededRng::new(0x5e7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let grid = |rng: &mut SeededRng, span: usize| (rng.below(2 * span) as f64 - span as f64) / 64.0;
        let z = LogitTriple::new(grid(&mut rng, 8192), grid(&mut rng, 8192), grid(&mut rng, 8192)).unwrap();
        let g = rng.below(8192) as f64 / 64.0;
        let mu = rng.below(257) as f64 / 256.0;
        let out = calibrate(&z, 0.0, g, mu).unwrap();
        if out.left() - z.left() != out.right() - z.right() {
            mismatches += 1;
        }
    }
    // Arbitrary floats, for information: rounding of z - g/2 depends on z.
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let z = random_triple(&mut rng, 5.0);
        let g = softplus(3.0 * rng.gaussian());
        let out = calibrate(&z, 0.0, g, rng.uniform()).unwrap();
        worst = worst.max(((out.left() - z.left()) - (out.right() - z.right())).abs());
    }
    outcome(
        mismatches == 0,
        format!("1000 dyadic cases, {mismatches} unequal; arbitrary floats max |diff| {worst:.1e}"),
    )
}

fn dualsteer_cmd(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dualsteer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "dualsteer {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// synth (seed 7) -> train (fraction 0.2, seed 7, default training settings)
/// -> eval on the held-out part, through the binary.
fn planted_pipeline(dir: &Path, alpha: &str) -> serde_json::Value {
    dualsteer_cmd(
        dir,
        &[
            "synth", "--d", "16", "--n-per-class", "300", "--alpha", alpha, "--sigma", "1.0", "--collapse-bias", "3.0",
            "--seed", "7", "--out", "data.jsonl",
        ],
    );
    dualsteer_cmd(dir, &["train", "--data", "data.jsonl", "--out", "heads.jsonl", "--fraction", "0.2", "--seed", "7"]);
    dualsteer_cmd(
        dir,
        &["eval", "--params", "heads.jsonl", "--data", "data.jsonl", "--heldout", "--out-json", "eval.json"],
    );
    serde_json::from_str(&fs::read_to_string(dir.join("eval.json")).unwrap()).unwrap()
}

fn planted_recovery() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    let report = planted_pipeline(tmp.path(), "2.0");
    let elapsed = start.elapsed();
    let o = &report["overall"];
    let f = |v: &serde_json::Value| v.as_f64().unwrap();
    let base_acc = f(&o["baseline"]["accuracy"]);
    let collapse = f(&o["baseline"]["collapse_fraction"]);
    let acc = f(&o["calibrated"]["accuracy"]);
    let f1 = f(&o["calibrated"]["macro_f1"]);
    let dacc = f(&o["delta_acc"]);
    let checks = [
        (base_acc <= 0.40, format!("baseline acc {base_acc:.4} (<= 0.40)")),
        (collapse >= 0.95, format!("collapse {collapse:.4} (>= 0.95)")),
        (acc >= 0.90, format!("held-out acc {acc:.4} (>= 0.90)")),
        (f1 >= 0.85, format!("macro-F1 {f1:.4} (>= 0.85)")),
        (dacc >= 0.50, format!("Δacc {dacc:+.4} (>= +0.50)")),
        (elapsed < Duration::from_secs(30), format!("{:.2} s (< 30 s)", elapsed.as_secs_f64())),
    ];
    let detail = checks
        .iter()
        .map(|(ok, text)| format!("{}{text}", if *ok { "" } else { "MISS " }))
        .collect::<Vec<_>>()
        .join("; ");
    outcome(checks.iter().all(|(ok, _)| *ok), detail)
}

fn null_model() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let report = planted_pipeline(tmp.path(), "0.0");
    let acc = report["overall"]["calibrated"]["accuracy"].as_f64().unwrap();
    outcome(
        (acc - 0.33).abs() <= 0.07,
        format!("alpha = 0 held-out acc {acc:.4} (0.33 ± 0.07)"),
    )
}

fn planted_config(axis_strength: f64) -> SynthConfig {
    SynthConfig {
        d: 16,
        n_per_class: 300,
        seed: 7,
        axis_strength,
        noise_sigma: 1.0,
        collapse_bias: 3.0,
        ..SynthConfig::default()
    }
}

fn geometry() -> Outcome {
    let samples = data::synth_gen(&planted_config(2.0)).unwrap();
    let vectors: Vec<HiddenVector> = samples.iter().map(|s| s.h.clone()).collect();
    let labels: Vec<Label> = samples.iter().map(|s| s.y).collect();
    let pca = pca_top_k(&vectors, 2).unwrap();
    let ordering = ordering_score(&pca, &labels).unwrap();
    let band = center_band_stats(&pca, &labels).unwrap();
    let [l, c, r] = band.pc1_std;
    outcome(
        ordering.score.abs() == 1.0 && band.center_tightest == Some(true),
        format!("|ordering| {}; PC1 std L/C/R {l:.3}/{c:.3}/{r:.3}", ordering.score.abs()),
    )
}

/// Planted data (every Center sample baseline-Left) plus an injection slice:
/// every even-indexed Right-gold sample gets its Left and Center logits
/// swapped, so its zero-shot prediction becomes Center.
fn neutralization_heavy() -> Vec<Sample> {
    let mut samples = data::synth_gen(&planted_config(2.0)).unwrap();
    for (i, s) in samples.iter_mut().filter(|s| s.y == Label::Right).enumerate() {
        if i % 2 == 0 {
            let [zl, zc, zr] = s.z.as_array();
            s.z = LogitTriple::new(zc, zl, zr).unwrap();
        }
    }
    samples
}

fn group_dynamics_check() -> Outcome {
    let samples = neutralization_heavy();
    let (train_set, eval_set) = few_shot_split(&samples, 0.2, 7, true).unwrap();
    let head = train(&train_set, &TrainConfig::default()).unwrap().params;
    let dynamics = group_dynamics(&head, &eval_set).unwrap();
    let c = dynamics.get(Group::C);
    let d = dynamics.get(Group::D);
    let pass = match (c.mean_g, d.mean_g) {
        (Some(gc), Some(gd)) => gc > gd,
        _ => false,
    };
    outcome(
        pass,
        format!(
            "held-out mean g: C {:.4} (n={}) vs D {:.4} (n={})",
            c.mean_g.unwrap_or(f64::NAN),
            c.count,
            d.mean_g.unwrap_or(f64::NAN),
            d.count
        ),
    )
}

/// Counting by pairs, independent of the library's matrix code.
fn brute_force(preds: &[Label], gold: &[Label]) -> ([[u64; 3]; 3], f64) {
    let mut counts = [[0u64; 3]; 3];
    for g in 0..3 {
        for p in 0..3 {
            counts[g][p] = preds
                .iter()
                .zip(gold)
                .filter(|(pp, gg)| pp.index() == p && gg.index() == g)
                .count() as u64;
        }
    }
    let mut f1_sum = 0.0;
    for k in Label::ALL {
        let tp = preds.iter().zip(gold).filter(|(p, g)| **p == k && **g == k).count() as f64;
        let fp = preds.iter().zip(gold).filter(|(p, g)| **p == k && **g != k).count() as f64;
        let fn_ = preds.iter().zip(gold).filter(|(p, g)| **p != k && **g == k).count() as f64;
        let denom = 2.0 * tp + fp + fn_;
        f1_sum += if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
    }
    (counts, f1_sum / 3.0)
}

fn metrics_oracle() -> Outcome {
    let mut rng = SeededRng::new(0xf1);
    let mut worst = 0.0f64;
    let mut confusion_mismatch = 0;
    for set in 0..100 {
        let n = 1 + rng.below(200);
        // Some sets never predict one class, some never contain one.
        let classes = if set % 5 == 0 { 2 } else { 3 };
        let preds: Vec<Label> = (0..n).map(|_| Label::from_index(rng.below(classes)).unwrap()).collect();
        let gold: Vec<Label> = (0..n).map(|_| random_label(&mut rng)).collect();
        let (counts, f1) = brute_force(&preds, &gold);
        if confusion(&preds, &gold).unwrap().counts != counts {
            confusion_mismatch += 1;
        }
        worst = worst.max((macro_f1(&preds, &gold).unwrap() - f1).abs());
    }
    outcome(
        confusion_mismatch == 0 && worst <= 1e-9,
        format!("100 sets; {confusion_mismatch} confusion mismatches, max |ΔF1| {worst:.1e} (tol 1e-9)"),
    )
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    dualsteer_cmd(dir, &["synth", "--d", "16", "--n-per-class", "100", "--seed", "7", "--facets", "a,b", "--out", "data.jsonl"]);
    let flags = ["train", "--data", "data.jsonl", "--out", "heads.jsonl", "--seed", "11", "--init-scale", "0.05"];
    dualsteer_cmd(dir, &flags);
    let first = fs::read(dir.join("heads.jsonl")).unwrap();
    dualsteer_cmd(dir, &flags);
    let second = fs::read(dir.join("heads.jsonl")).unwrap();
    outcome(first == second, format!("two train runs, {} bytes, identical: {}", first.len(), first == second))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient oracle", gradient_oracle),
        ("calibration identity", calibration_identity),
        ("calibration algebra", calibration_algebra),
        ("left/right symmetry of g", g_symmetry),
        ("planted recovery", planted_recovery),
        ("null-model guard", null_model),
        ("geometry", geometry),
        ("group dynamics", group_dynamics_check),
        ("metrics oracle", metrics_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = check();
        failed += usize::from(!result.pass);
        println!("{} {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
