//! Dataset files, the planted-structure generator, and head files.
//!
//! # Dataset format (version 1)
//!
//! UTF-8, one JSON object per line. Line 1 is the header:
//!
//! ```text
//! {"format_version":1,"d":16,"layer":"final","model":"synthetic","facets":["MF","SS"], ...}
//! ```
//!
//! Extra header keys are kept verbatim (producers record things like the
//! readout position there). Every following non-blank line is a sample:
//!
//! ```text
//! {"id":"MF-L-00000","facet":"MF","label":"Left","h":[0.1,-2.3,...],"z":[3.0,0.0,0.0]}
//! ```
//!
//! `save` writes samples sorted by id and numbers in shortest round-trip
//! form, so `load ∘ save` is the identity and repeated saves are
//! byte-identical.
//!
//! # Head format
//!
//! Same line convention: a header (`"kind":"steering_heads"`) followed by one
//! record per facet, or a single record with facet `"*"` for a global head.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::types::{HiddenVector, Label, LogitTriple, Sample, SteeringParams};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub d: usize,
    #[serde(default)]
    pub layer: String,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub facets: Vec<String>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl DatasetMeta {
    pub fn new(d: usize, layer: impl Into<String>, model: impl Into<String>) -> Self {
        DatasetMeta {
            format_version: FORMAT_VERSION,
            d,
            layer: layer.into(),
            model: model.into(),
            facets: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    facet: String,
    label: String,
    h: Vec<f64>,
    z: Vec<f64>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_header(line_no: usize, line: &str) -> Result<DatasetMeta> {
    let meta: DatasetMeta =
        serde_json::from_str(line).map_err(|e| parse_err(line_no, format!("bad header: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(parse_err(
            line_no,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.d == 0 {
        return Err(parse_err(line_no, "header d must be >= 1"));
    }
    Ok(meta)
}

fn parse_record(line_no: usize, line: &str, meta: &DatasetMeta) -> Result<Sample> {
    let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
    let y: Label = rec.label.parse().map_err(|_| Error::UnknownLabel {
        line: line_no,
        value: rec.label.clone(),
    })?;
    if rec.h.len() != meta.d {
        return Err(Error::RecordDimension {
            id: rec.id,
            expected: meta.d,
            found: rec.h.len(),
        });
    }
    if rec.facet.is_empty() {
        return Err(parse_err(line_no, format!("record {:?} has an empty facet", rec.id)));
    }
    if !meta.facets.is_empty() && !meta.facets.contains(&rec.facet) {
        return Err(parse_err(
            line_no,
            format!("record {:?} has facet {:?} not listed in the header", rec.id, rec.facet),
        ));
    }
    let z: [f64; 3] = rec
        .z
        .as_slice()
        .try_into()
        .map_err(|_| parse_err(line_no, format!("z must have 3 entries, got {}", rec.z.len())))?;
    let wrap = |e: Error| parse_err(line_no, e.to_string());
    Sample::new(
        rec.id,
        rec.facet,
        HiddenVector::new(rec.h).map_err(wrap)?,
        LogitTriple::from_array(z).map_err(wrap)?,
        y,
    )
}

/// Reads and validates a dataset, streaming line by line.
pub fn load(path: impl AsRef<Path>) -> Result<(DatasetMeta, Vec<Sample>)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();

    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing header"))?
        .map_err(|e| Error::io(path, e))?;
    let meta = parse_header(1, &header)?;

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample = parse_record(line_no, &line, &meta)?;
        if !seen.insert(sample.id.clone()) {
            return Err(Error::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    Ok((meta, samples))
}

/// Renders the canonical file contents. Fails before producing anything if a
/// sample violates the dataset invariants.
pub fn to_canonical_string(meta: &DatasetMeta, samples: &[Sample]) -> Result<String> {
    let mut seen = HashSet::new();
    for s in samples {
        if s.dim() != meta.d {
            return Err(Error::RecordDimension {
                id: s.id.clone(),
                expected: meta.d,
                found: s.dim(),
            });
        }
        if !s.h.as_slice().iter().chain(&s.z.as_array()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("sample {:?}", s.id)));
        }
        if !seen.insert(s.id.as_str()) {
            return Err(Error::DuplicateId(s.id.clone()));
        }
    }

    let mut header = meta.clone();
    header.format_version = FORMAT_VERSION;
    let facets: BTreeSet<String> = meta
        .facets
        .iter()
        .cloned()
        .chain(samples.iter().map(|s| s.facet.clone()))
        .collect();
    header.facets = facets.into_iter().collect();

    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for s in sorted {
        let rec = Record {
            id: s.id.clone(),
            facet: s.facet.clone(),
            label: s.y.as_str().to_string(),
            h: s.h.as_slice().to_vec(),
            z: s.z.as_array().to_vec(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn save(meta: &DatasetMeta, samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = to_canonical_string(meta, samples)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Settings for [`synth_gen`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub d: usize,
    pub n_per_class: usize,
    pub seed: u64,
    /// Distance of the Left/Right class centers from the origin along the axis.
    pub axis_strength: f64,
    pub noise_sigma: f64,
    /// Multiplier on `noise_sigma` for the Center cluster.
    pub center_tightness: f64,
    /// Added to `z_L` of every sample.
    pub collapse_bias: f64,
    pub facet_names: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 16,
            n_per_class: 300,
            seed: 0,
            axis_strength: 2.0,
            noise_sigma: 1.0,
            center_tightness: 0.5,
            collapse_bias: 3.0,
            facet_names: vec!["synthetic".to_string()],
        }
    }
}

/// Std of the label-independent jitter on the base logits.
pub const SYNTH_LOGIT_JITTER: f64 = 0.1;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d < 2 {
            return bad(format!("d must be >= 2, got {}", self.d));
        }
        if self.n_per_class == 0 {
            return bad("n_per_class must be >= 1".into());
        }
        // Zero strength is allowed: it is the no-signal control.
        if !(self.axis_strength >= 0.0 && self.axis_strength.is_finite()) {
            return bad(format!("axis_strength must be >= 0, got {}", self.axis_strength));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be > 0, got {}", self.noise_sigma));
        }
        if !(self.center_tightness > 0.0 && self.center_tightness <= 1.0) {
            return bad(format!(
                "center_tightness must be in (0, 1], got {}",
                self.center_tightness
            ));
        }
        if !(self.collapse_bias >= 0.0 && self.collapse_bias.is_finite()) {
            return bad(format!("collapse_bias must be >= 0, got {}", self.collapse_bias));
        }
        if self.facet_names.is_empty() || self.facet_names.iter().any(String::is_empty) {
            return bad("facet_names must be non-empty strings".into());
        }
        let unique: HashSet<&String> = self.facet_names.iter().collect();
        if unique.len() != self.facet_names.len() {
            return bad("facet_names must be distinct".into());
        }
        Ok(())
    }

    pub fn meta(&self) -> DatasetMeta {
        let mut meta = DatasetMeta::new(self.d, "synthetic", "planted");
        meta.facets = self.facet_names.clone();
        meta
    }
}

/// Generates a dataset with a planted ideological axis and a Left-collapsed
/// readout.
///
/// Per facet (in the given order): draw a unit axis `u` from `d` gaussians;
/// then for Left, Center, Right in turn, `n_per_class` samples with
/// `h = c + σ·ε` (`c = −α·u, 0, +α·u`; `σ` scaled by `center_tightness` for
/// Center) and `z = (collapse_bias, 0, 0) + 0.1·ε'`. All draws come from one
/// [`SeededRng`] stream in exactly that order. Ids are
/// `"{facet}-{L|C|R}-{index:05}"`.
pub fn synth_gen(config: &SynthConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let mut out = Vec::with_capacity(3 * config.n_per_class * config.facet_names.len());
    for facet in &config.facet_names {
        let mut axis: Vec<f64> = (0..config.d).map(|_| rng.gaussian()).collect();
        let norm = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
        axis.iter_mut().for_each(|x| *x /= norm);

        for label in Label::ALL {
            let (offset, sigma) = match label {
                Label::Left => (-config.axis_strength, config.noise_sigma),
                Label::Center => (0.0, config.noise_sigma * config.center_tightness),
                Label::Right => (config.axis_strength, config.noise_sigma),
            };
            for i in 0..config.n_per_class {
                let h: Vec<f64> = axis.iter().map(|u| offset * u + sigma * rng.gaussian()).collect();
                let z = [
                    config.collapse_bias + SYNTH_LOGIT_JITTER * rng.gaussian(),
                    SYNTH_LOGIT_JITTER * rng.gaussian(),
                    SYNTH_LOGIT_JITTER * rng.gaussian(),
                ];
                out.push(Sample::new(
                    format!("{facet}-{}-{i:05}", label.short()),
                    facet.clone(),
                    HiddenVector::new(h)?,
                    LogitTriple::from_array(z)?,
                    label,
                )?);
            }
        }
    }
    Ok(out)
}

/// Facet key used for a head shared by all facets.
pub const GLOBAL_FACET: &str = "*";

/// Trained heads keyed by facet, or one global head under [`GLOBAL_FACET`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadSet {
    pub heads: BTreeMap<String, SteeringParams>,
}

impl HeadSet {
    pub fn global(params: SteeringParams) -> Self {
        let mut heads = BTreeMap::new();
        heads.insert(GLOBAL_FACET.to_string(), params);
        HeadSet { heads }
    }

    pub fn is_global(&self) -> bool {
        self.heads.len() == 1 && self.heads.contains_key(GLOBAL_FACET)
    }

    pub fn dim(&self) -> Option<usize> {
        self.heads.values().next().map(SteeringParams::dim)
    }

    /// The head for `facet`: its own if present, else the global one.
    pub fn head_for(&self, facet: &str) -> Result<&SteeringParams> {
        self.heads
            .get(facet)
            .or_else(|| self.heads.get(GLOBAL_FACET))
            .ok_or_else(|| Error::MissingFacet(facet.to_string()))
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        for params in self.heads.values() {
            if params.dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "heads vs dataset",
                    expected: d,
                    found: params.dim(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadsHeader {
    pub format_version: u32,
    pub kind: String,
    pub d: usize,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

pub const HEADS_KIND: &str = "steering_heads";

#[derive(Serialize, Deserialize)]
struct HeadRecord {
    facet: String,
    #[serde(flatten)]
    params: SteeringParams,
    /// Informational; `mu_raw` is authoritative.
    mu: f64,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

/// Renders a head file. `header_extra` and `record_extra` add informational
/// fields (split settings, final loss, ...).
pub fn heads_to_string(
    heads: &HeadSet,
    header_extra: BTreeMap<String, Value>,
    record_extra: &BTreeMap<String, BTreeMap<String, Value>>,
) -> Result<String> {
    let d = heads
        .dim()
        .ok_or_else(|| Error::InvalidConfig("no heads to write".into()))?;
    heads.check_dim(d)?;
    let header = HeadsHeader {
        format_version: FORMAT_VERSION,
        kind: HEADS_KIND.to_string(),
        d,
        extra: header_extra,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for (facet, params) in &heads.heads {
        params.validate()?;
        let rec = HeadRecord {
            facet: facet.clone(),
            params: params.clone(),
            mu: params.mu(),
            extra: record_extra.get(facet).cloned().unwrap_or_default(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn load_heads(path: impl AsRef<Path>) -> Result<(HeadsHeader, HeadSet)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let header: HeadsHeader =
        serde_json::from_str(first).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.kind != HEADS_KIND || header.format_version != FORMAT_VERSION {
        return Err(parse_err(1, "not a version-1 steering_heads file"));
    }
    let mut heads = HeadSet::default();
    for (i, line) in lines {
        let rec: HeadRecord = serde_json::from_str(line).map_err(|e| parse_err(i + 1, e.to_string()))?;
        rec.params.validate().map_err(|e| parse_err(i + 1, e.to_string()))?;
        if rec.params.dim() != header.d {
            return Err(parse_err(
                i + 1,
                format!("head {:?} has d = {}, header d = {}", rec.facet, rec.params.dim(), header.d),
            ));
        }
        if heads.heads.insert(rec.facet.clone(), rec.params).is_some() {
            return Err(parse_err(i + 1, format!("duplicate head for facet {:?}", rec.facet)));
        }
    }
    if heads.heads.is_empty() {
        return Err(parse_err(1, "head file has no records"));
    }
    Ok((header, heads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn small_config() -> SynthConfig {
        SynthConfig {
            d: 4,
            n_per_class: 5,
            seed: 3,
            facet_names: vec!["MF".into(), "SS".into()],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = synth_gen(&small_config()).unwrap();
        let b = synth_gen(&small_config()).unwrap();
        assert_eq!(a.len(), 30);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.id, y.id);
            let bits = |s: &Sample| s.h.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
            assert_eq!(x.z, y.z);
        }
        let other = synth_gen(&SynthConfig { seed: 4, ..small_config() }).unwrap();
        assert_ne!(other[0].h, a[0].h);
    }

    #[test]
    fn synth_config_validation() {
        assert!(SynthConfig { d: 1, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { n_per_class: 0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { center_tightness: 0.0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { noise_sigma: -1.0, ..SynthConfig::default() }.validate().is_err());
        assert!(SynthConfig { axis_strength: 0.0, ..SynthConfig::default() }.validate().is_ok());
        assert!(SynthConfig { facet_names: vec!["a".into(), "a".into()], ..SynthConfig::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let cfg = small_config();
        let samples = synth_gen(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.jsonl");
        let p2 = dir.path().join("b.jsonl");
        save(&cfg.meta(), &samples, &p1).unwrap();
        save(&cfg.meta(), &samples, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());

        let (meta, loaded) = load(&p1).unwrap();
        assert_eq!(meta.d, 4);
        assert_eq!(meta.facets, vec!["MF", "SS"]);
        let mut expected = samples.clone();
        expected.sort_by(|a, b| a.id.cmp(&b.id));
        assert_eq!(loaded, expected);

        save(&meta, &loaded, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    fn write_file(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    const HEADER: &str = r#"{"format_version":1,"d":2,"layer":"28","model":"m","facets":[]}"#;

    #[test]
    fn header_only_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "e.jsonl", &format!("{HEADER}\n"));
        let (meta, samples) = load(&p).unwrap();
        assert!(samples.is_empty());
        assert_eq!(meta.layer, "28");
    }

    #[test]
    fn load_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"id":"a","facet":"f","label":"Left","h":[1.0,2.0],"z":[0,0,0]}"#;

        let short = r#"{"id":"short-one","facet":"f","label":"Left","h":[1.0],"z":[0,0,0]}"#;
        let p = write_file(&dir, "dim.jsonl", &format!("{HEADER}\n{good}\n{short}\n"));
        let err = load(&p).unwrap_err();
        assert!(matches!(err, Error::RecordDimension { .. }));
        assert!(err.to_string().contains("short-one"));

        let p = write_file(&dir, "dup.jsonl", &format!("{HEADER}\n{good}\n{good}\n"));
        assert!(matches!(load(&p).unwrap_err(), Error::DuplicateId(id) if id == "a"));

        let bad_label = good.replace("Left", "Centre");
        let p = write_file(&dir, "lbl.jsonl", &format!("{HEADER}\n{bad_label}\n"));
        assert!(matches!(load(&p).unwrap_err(), Error::UnknownLabel { line: 2, .. }));

        let p = write_file(&dir, "junk.jsonl", &format!("{HEADER}\n{good}\n{{not json\n"));
        assert!(matches!(load(&p).unwrap_err(), Error::Parse { line: 3, .. }));

        let z2 = good.replace("[0,0,0]", "[0,0]");
        let p = write_file(&dir, "z.jsonl", &format!("{HEADER}\n{z2}\n"));
        assert!(matches!(load(&p).unwrap_err(), Error::Parse { line: 2, .. }));

        let listed = r#"{"format_version":1,"d":2,"facets":["MF"]}"#;
        let p = write_file(&dir, "facet.jsonl", &format!("{listed}\n{good}\n"));
        assert!(matches!(load(&p).unwrap_err(), Error::Parse { line: 2, .. }));

        let v2 = HEADER.replace("\"format_version\":1", "\"format_version\":2");
        let p = write_file(&dir, "v2.jsonl", &format!("{v2}\n"));
        assert!(load(&p).is_err());

        assert!(matches!(load(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn extra_header_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let header = r#"{"format_version":1,"d":2,"layer":"final","model":"m","facets":[],"position":"last"}"#;
        let p = write_file(&dir, "x.jsonl", &format!("{header}\n"));
        let (meta, _) = load(&p).unwrap();
        assert_eq!(meta.extra["position"], "last");
        let text = to_canonical_string(&meta, &[]).unwrap();
        assert!(text.contains("\"position\":\"last\""));
    }

    #[test]
    fn save_rejects_invalid_samples() {
        let meta = DatasetMeta::new(3, "", "");
        let s = Sample::new(
            "a",
            "f",
            HiddenVector::new(vec![1.0, 2.0]).unwrap(),
            LogitTriple::new(0.0, 0.0, 0.0).unwrap(),
            Label::Left,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("never.jsonl");
        assert!(save(&meta, &[s], &p).is_err());
        assert!(!p.exists());
    }

    #[test]
    fn heads_round_trip() {
        let mut heads = HeadSet::default();
        heads.heads.insert(
            "MF".into(),
            SteeringParams::new(vec![0.1, -0.2], 0.3, vec![1e-17, 5.0], -1.5, 0.25).unwrap(),
        );
        heads.heads.insert("SS".into(), SteeringParams::zeros(2));
        let mut extra = BTreeMap::new();
        extra.insert("split_fraction".to_string(), Value::from(0.2));
        let text = heads_to_string(&heads, extra, &BTreeMap::new()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = write_file(&dir, "heads.jsonl", &text);
        let (header, loaded) = load_heads(&p).unwrap();
        assert_eq!(header.d, 2);
        assert_eq!(header.extra["split_fraction"], 0.2);
        assert_eq!(loaded, heads);
        assert!(loaded.head_for("XX").is_err());
        assert!(!loaded.is_global());

        let global = HeadSet::global(SteeringParams::zeros(2));
        assert!(global.is_global());
        assert!(global.head_for("anything").is_ok());
        assert!(global.check_dim(3).is_err());
    }
}
