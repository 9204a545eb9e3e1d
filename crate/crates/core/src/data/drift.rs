//! Chemical-sensor drift batches in sparse `label idx:value` text format.
//!
//! Ten files, `batch1.dat` through `batch10.dat`, ordered chronologically
//! over a multi-year collection. Each line is one experiment: an integer
//! class label 1-6 followed by `index:value` pairs over 128 features (16
//! sensors times 8 aggregate features). Labels are remapped to 0-5.

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const FEATURES: usize = 128;
pub const NUM_CLASSES: usize = 6;
pub const NUM_BATCHES: usize = 10;

/// UCI label order for the six analytes.
pub const DRIFT_CLASS_NAMES: [&str; NUM_CLASSES] =
    ["ethanol", "ethylene", "ammonia", "acetaldehyde", "acetone", "toluene"];

fn class_names() -> Vec<String> {
    DRIFT_CLASS_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Parse one sparse batch file. Absent feature indices densify to zero and
/// are reported in the returned warning count.
pub fn load_drift_batch(path: &Path) -> Result<(LabeledSet, usize)> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    let mut sparse_lines = 0usize;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let label_raw: i64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|e| Error::Parse { line: lineno, msg: format!("bad label: {e}") })?;
        if !(1..=NUM_CLASSES as i64).contains(&label_raw) {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("label {label_raw} outside 1..{NUM_CLASSES}"),
            });
        }
        let mut values = vec![0.0f32; FEATURES];
        let mut seen = 0usize;
        for pair in fields {
            let (i_str, v_str) = pair.split_once(':').ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("expected idx:value, found {pair:?}"),
            })?;
            let i: usize = i_str
                .parse()
                .map_err(|e| Error::Parse { line: lineno, msg: format!("bad index: {e}") })?;
            if !(1..=FEATURES).contains(&i) {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("feature index {i} outside 1..{FEATURES}"),
                });
            }
            let v: f32 = v_str
                .parse()
                .map_err(|e| Error::Parse { line: lineno, msg: format!("bad value: {e}") })?;
            values[i - 1] = v;
            seen += 1;
        }
        if seen < FEATURES {
            sparse_lines += 1;
        }
        instances.push(Tensor::from_vec(values)?);
        labels.push((label_raw - 1) as usize);
    }
    let set = LabeledSet::new(instances, labels, NUM_CLASSES, class_names())?;
    Ok((set, sparse_lines))
}

/// Load `batch1.dat` .. `batch10.dat` from a directory, in chronological
/// order.
pub fn load_drift_batches(dir: &Path) -> Result<Vec<LabeledSet>> {
    let mut batches = Vec::with_capacity(NUM_BATCHES);
    for b in 1..=NUM_BATCHES {
        let path = dir.join(format!("batch{b}.dat"));
        if !path.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("missing drift batch file {}", path.display()),
            )));
        }
        let (set, _) = load_drift_batch(&path)?;
        batches.push(set);
    }
    Ok(batches)
}

/// Write a batch in the sparse format the loader reads; dense (every index
/// present), which keeps round-trips exact.
pub fn write_drift_batch(path: &Path, set: &LabeledSet) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for (inst, &label) in set.instances().iter().zip(set.labels()) {
        let mut line = String::with_capacity(FEATURES * 12);
        line.push_str(&(label + 1).to_string());
        for (i, v) in inst.data().iter().enumerate() {
            line.push(' ');
            line.push_str(&format!("{}:{}", i + 1, v));
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Severity of the synthetic sensor drift per batch. Batches 1-2 are the
/// clean training era; batch 4 is an anomalous spike; later batches decay
/// progressively.
const DRIFT_SEVERITY: [f64; NUM_BATCHES] = [0.0, 0.02, 0.06, 0.75, 0.10, 0.35, 0.55, 0.75, 0.9, 1.1];

/// Instance counts roughly shaped like the real collection: larger early
/// training batches, moderate later ones.
const BATCH_SIZES: [usize; NUM_BATCHES] = [360, 600, 300, 240, 300, 300, 240, 240, 240, 300];

/// Synthetic drift fixture with the same shape and format as the public
/// dataset: 6 gas classes, 128 raw features with large dynamic range, and a
/// per-batch drift schedule. Stands in when the real batch files are not
/// on disk.
pub fn gen_synthetic_drift_batches(seed: u64) -> Result<Vec<LabeledSet>> {
    let mut rng = Rng::new(seed);

    // Per-class sensor response pattern: 16 sensors x 8 features, with the
    // first feature per sensor a large steady-state level and the rest
    // smaller aggregates.
    let mut prototypes = vec![vec![0.0f64; FEATURES]; NUM_CLASSES];
    let mut feature_scale = vec![0.0f64; FEATURES];
    for s in 0..16 {
        for f in 0..8 {
            feature_scale[s * 8 + f] = if f == 0 {
                8000.0
            } else if f == 1 {
                40.0
            } else {
                12.0
            };
        }
    }
    for proto in prototypes.iter_mut() {
        for (i, p) in proto.iter_mut().enumerate() {
            *p = rng.normal(0.0, 1.0) * feature_scale[i];
        }
    }

    // Direction the sensor responses wander in as the sensors age, plus a
    // second direction for the batch-4 anomaly.
    let drift_dir: Vec<f64> = (0..FEATURES).map(|i| rng.normal(0.0, 0.9) * feature_scale[i]).collect();
    let spike_dir: Vec<f64> = (0..FEATURES).map(|i| rng.normal(0.0, 1.1) * feature_scale[i]).collect();

    let mut batches = Vec::with_capacity(NUM_BATCHES);
    for (b, (&severity, &size)) in DRIFT_SEVERITY.iter().zip(&BATCH_SIZES).enumerate() {
        let spike = if b == 3 { 1.25 } else { 0.0 };
        let gain_drift = 1.0 + severity * 0.4;
        let mut instances = Vec::with_capacity(size);
        let mut labels = Vec::with_capacity(size);
        for _ in 0..size {
            let class = rng.below(NUM_CLASSES);
            let concentration = rng.uniform(0.6, 1.4);
            let mut values = Vec::with_capacity(FEATURES);
            for i in 0..FEATURES {
                let clean = prototypes[class][i] * concentration;
                let drifted = clean * gain_drift
                    + severity * drift_dir[i]
                    + spike * spike_dir[i]
                    + rng.normal(0.0, 0.08) * feature_scale[i];
                values.push(drifted as f32);
            }
            instances.push(Tensor::from_vec(values)?);
            labels.push(class);
        }
        batches.push(LabeledSet::new(instances, labels, NUM_CLASSES, class_names())?);
    }
    Ok(batches)
}
