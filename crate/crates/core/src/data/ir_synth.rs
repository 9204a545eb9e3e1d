//! Synthetic infrared leak/clean signal generator.
//!
//! Real infrared recordings of gas releases are not redistributable, so
//! this generator is a morphological stand-in: leak signals sit on a bright
//! plateau, drop suddenly to a darker level at a random onset and then
//! fluctuate under wind; clean signals wander slowly with sensor noise.
//! Every instance is min-max normalized to [0,1].

use super::{minmax_normalize, LabeledSet};
use crate::error::{err_fmt, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrSynthConfig {
    /// Intensity plateau before a leak reaches the sensor.
    pub baseline_level: f64,
    /// Intensity level the signal collapses to after gas arrives.
    pub drop_level: f64,
    /// Sensor noise on the plateau and on clean signals.
    pub pre_noise_std: f64,
    /// Extra fluctuation after the drop.
    pub post_noise_std: f64,
    /// Random-walk step of the wind component after the drop.
    pub wind_std: f64,
    /// Largest slow-drift amplitude of clean signals.
    pub clean_drift_max: f64,
    /// Onset index drawn uniformly from `[start, end)`.
    pub onset_range: (usize, usize),
    pub length: usize,
    /// Samples per second; two seconds of signal at the default length.
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for IrSynthConfig {
    fn default() -> Self {
        IrSynthConfig {
            baseline_level: 95.0,
            drop_level: 70.0,
            pre_noise_std: 0.8,
            post_noise_std: 2.5,
            wind_std: 1.2,
            clean_drift_max: 6.0,
            // Keeps the drop inside a centered 32-sample crop of a
            // 50-sample signal; random training crops can still land past
            // the onset, which leaves some genuinely hard windows.
            onset_range: (14, 28),
            length: 50,
            sample_rate: 25.0,
            seed: 0,
        }
    }
}

impl IrSynthConfig {
    fn validate(&self) -> Result<()> {
        if self.drop_level >= self.baseline_level {
            return Err(err_fmt!(
                Parameter,
                "drop level {} must be below baseline {}",
                self.drop_level,
                self.baseline_level
            ));
        }
        let (lo, hi) = self.onset_range;
        if lo >= hi || hi > self.length {
            return Err(err_fmt!(
                Parameter,
                "onset range [{lo}, {hi}) invalid for length {}",
                self.length
            ));
        }
        if self.length == 0 {
            return Err(Error::Parameter("length must be positive".into()));
        }
        Ok(())
    }
}

/// Raw (unnormalized) leak signal and its onset index.
pub(crate) fn gen_leak_raw(cfg: &IrSynthConfig, rng: &mut Rng) -> (Vec<f64>, usize) {
    let onset = cfg.onset_range.0 + rng.below(cfg.onset_range.1 - cfg.onset_range.0);
    let drift_amp = rng.uniform(0.3, 1.5);
    let drift_period = rng.uniform(cfg.length as f64, 3.0 * cfg.length as f64);
    let drift_phase = rng.uniform(0.0, std::f64::consts::TAU);
    let mut wind = 0.0;
    let mut out = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        let v = if t < onset {
            cfg.baseline_level
                + drift_amp * (std::f64::consts::TAU * t as f64 / drift_period + drift_phase).sin()
                + rng.normal(0.0, cfg.pre_noise_std)
        } else {
            wind += rng.normal(0.0, cfg.wind_std);
            cfg.drop_level + wind + rng.normal(0.0, cfg.post_noise_std)
        };
        out.push(v);
    }
    (out, onset)
}

/// Raw clean-air signal: slow drift plus noise and a weak random walk.
pub(crate) fn gen_clean_raw(cfg: &IrSynthConfig, rng: &mut Rng) -> Vec<f64> {
    let drift_amp = rng.uniform(0.5, cfg.clean_drift_max);
    let drift_period = rng.uniform(0.8 * cfg.length as f64, 3.0 * cfg.length as f64);
    let drift_phase = rng.uniform(0.0, std::f64::consts::TAU);
    let mut walk = 0.0;
    let mut out = Vec::with_capacity(cfg.length);
    for t in 0..cfg.length {
        walk += rng.normal(0.0, 0.3 * cfg.wind_std);
        out.push(
            cfg.baseline_level
                + drift_amp * (std::f64::consts::TAU * t as f64 / drift_period + drift_phase).sin()
                + walk
                + rng.normal(0.0, cfg.pre_noise_std),
        );
    }
    out
}

fn to_instance(raw: &[f64]) -> Tensor<f32> {
    let t = Tensor::from_vec(raw.iter().map(|&v| v as f32).collect()).expect("nonempty");
    let (norm, _) = minmax_normalize(&t);
    norm.reshape(&[raw.len(), 1]).expect("same length")
}

pub const IR_CLASS_NAMES: [&str; 2] = ["clean", "leak"];

/// Generate `n_leak` leak instances (label 1) and `n_clean` clean instances
/// (label 0), each min-max normalized with shape `[length, 1]`.
pub fn gen_ir_dataset(cfg: &IrSynthConfig, n_leak: usize, n_clean: usize) -> Result<LabeledSet> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut instances = Vec::with_capacity(n_leak + n_clean);
    let mut labels = Vec::with_capacity(n_leak + n_clean);
    for _ in 0..n_leak {
        let (raw, _) = gen_leak_raw(cfg, &mut rng);
        instances.push(to_instance(&raw));
        labels.push(1);
    }
    for _ in 0..n_clean {
        let raw = gen_clean_raw(cfg, &mut rng);
        instances.push(to_instance(&raw));
        labels.push(0);
    }
    LabeledSet::new(
        instances,
        labels,
        2,
        IR_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}

/// Read a dataset written by [`LabeledSet::to_csv`]: label, then the
/// flattened signal, one instance per line. Signals get shape `[T, 1]`.
pub fn read_ir_csv(path: &Path) -> Result<LabeledSet> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let label: usize = parts
            .next()
            .unwrap_or_default()
            .trim()
            .parse()
            .map_err(|e| Error::Parse { line: lineno + 1, msg: format!("bad label: {e}") })?;
        let values: Vec<f32> = parts
            .map(|p| {
                p.trim()
                    .parse::<f32>()
                    .map_err(|e| Error::Parse { line: lineno + 1, msg: format!("bad value: {e}") })
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::Parse { line: lineno + 1, msg: "no signal values".into() });
        }
        let t = values.len();
        instances.push(Tensor::from_data(&[t, 1], values)?);
        labels.push(label);
    }
    LabeledSet::new(
        instances,
        labels,
        2,
        IR_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_shapes() {
        let cfg = IrSynthConfig::default();
        let set = gen_ir_dataset(&cfg, 3, 5).unwrap();
        assert_eq!(set.len(), 8);
        assert_eq!(set.labels()[..3], [1, 1, 1]);
        assert!(set.labels()[3..].iter().all(|&l| l == 0));
        assert_eq!(set.instance_shape().unwrap(), &[50, 1]);
        let clean_only = gen_ir_dataset(&cfg, 0, 4).unwrap();
        assert!(clean_only.labels().iter().all(|&l| l == 0));
    }

    #[test]
    fn instances_are_normalized() {
        let set = gen_ir_dataset(&IrSynthConfig::default(), 10, 10).unwrap();
        for inst in set.instances() {
            for &v in inst.data() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn leak_drops_below_plateau() {
        // The plateau mean exceeds the post-onset mean in at least 99% of draws.
        let cfg = IrSynthConfig::default();
        let mut rng = Rng::new(123);
        let mut ok = 0;
        let trials = 2000;
        for _ in 0..trials {
            let (raw, onset) = gen_leak_raw(&cfg, &mut rng);
            let pre: f64 = raw[..onset].iter().sum::<f64>() / onset as f64;
            let post: f64 = raw[onset..].iter().sum::<f64>() / (raw.len() - onset) as f64;
            if pre > post {
                ok += 1;
            }
        }
        assert!(ok as f64 / trials as f64 >= 0.99, "{ok}/{trials}");
    }

    #[test]
    fn same_seed_identical_dataset() {
        let cfg = IrSynthConfig { seed: 77, ..IrSynthConfig::default() };
        let a = gen_ir_dataset(&cfg, 5, 5).unwrap();
        let b = gen_ir_dataset(&cfg, 5, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = IrSynthConfig::default();
        let set = gen_ir_dataset(&cfg, 2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ir.csv");
        std::fs::write(&path, set.to_csv()).unwrap();
        let back = read_ir_csv(&path).unwrap();
        assert_eq!(set, back);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = IrSynthConfig { drop_level: 100.0, ..IrSynthConfig::default() };
        assert!(gen_ir_dataset(&cfg, 1, 1).is_err());
        let cfg = IrSynthConfig { onset_range: (40, 60), ..IrSynthConfig::default() };
        assert!(gen_ir_dataset(&cfg, 1, 1).is_err());
    }
}
