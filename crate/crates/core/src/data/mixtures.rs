//! Dynamic gas-mixture time series: parsing and single-analyte extraction.
//!
//! The raw recordings are two long whitespace-delimited text files, 19
//! columns per line: elapsed time in seconds, two gas concentration
//! set-points, then 16 metal-oxide sensor readings, sampled at 100 Hz.
//! Classifier instances are windows where exactly one analyte is present,
//! resampled to one reading every two seconds.

use super::LabeledSet;
use crate::error::{err_fmt, Error, Result};
use crate::tensor::Tensor;
use std::io::{BufRead, BufReader};
use std::path::Path;

pub const SENSOR_CHANNELS: usize = 16;
pub const COLUMNS: usize = 3 + SENSOR_CHANNELS;
/// Window length in seconds and the spacing between retained samples.
pub const SEGMENT_SECONDS: f64 = 100.0;
pub const SAMPLE_SPACING_SECONDS: f64 = 2.0;
/// Settling margin after a set-point switch before a window may start.
pub const GUARD_SECONDS: f64 = 10.0;

/// Canonical class order for the three analytes.
pub const MIXTURE_CLASS_NAMES: [&str; 3] = ["co", "ethylene", "methane"];

pub fn mixture_class_index(gas: &str) -> Result<usize> {
    MIXTURE_CLASS_NAMES
        .iter()
        .position(|&g| g == gas)
        .ok_or_else(|| err_fmt!(Schema, "unknown gas {gas:?}, expected one of {MIXTURE_CLASS_NAMES:?}"))
}

/// Which gases the two set-point columns refer to, e.g. ("co", "ethylene").
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSchema {
    pub gas_a: String,
    pub gas_b: String,
}

impl MixtureSchema {
    pub fn new(gas_a: &str, gas_b: &str) -> Result<Self> {
        mixture_class_index(gas_a)?;
        mixture_class_index(gas_b)?;
        Ok(MixtureSchema { gas_a: gas_a.into(), gas_b: gas_b.into() })
    }
}

/// One recording: strictly increasing time axis, two concentration
/// set-point tracks and 16 sensor channels.
#[derive(Clone, Debug)]
pub struct MixtureSeries {
    pub schema: MixtureSchema,
    pub time: Vec<f64>,
    pub conc_a: Vec<f64>,
    pub conc_b: Vec<f64>,
    /// Row-major `[T, 16]`.
    pub readings: Vec<f32>,
}

impl MixtureSeries {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }
}

/// Parse a mixture file. A single leading header line is tolerated and
/// skipped; every other line must carry exactly 19 decimal columns.
pub fn load_mixture_series(path: &Path, schema: MixtureSchema) -> Result<MixtureSeries> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut series = MixtureSeries {
        schema,
        time: Vec::new(),
        conc_a: Vec::new(),
        conc_b: Vec::new(),
        readings: Vec::new(),
    };
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let first_numeric = fields[0].parse::<f64>().is_ok();
        if idx == 0 && !first_numeric {
            continue; // header
        }
        if fields.len() != COLUMNS {
            return Err(Error::Schema(format!(
                "line {lineno}: expected {COLUMNS} columns, found {}",
                fields.len()
            )));
        }
        let mut values = [0.0f64; COLUMNS];
        for (c, field) in fields.iter().enumerate() {
            values[c] = field.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("column {}: {e}", c + 1),
            })?;
        }
        if let Some(&prev) = series.time.last() {
            if values[0] <= prev {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("time column not increasing: {} after {prev}", values[0]),
                });
            }
        }
        series.time.push(values[0]);
        series.conc_a.push(values[1]);
        series.conc_b.push(values[2]);
        series
            .readings
            .extend(values[3..].iter().map(|&v| v as f32));
    }
    Ok(series)
}

/// Analyte exposure state of one sample.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Exposure {
    None,
    OnlyA,
    OnlyB,
    Both,
}

fn exposure(a: f64, b: f64) -> Exposure {
    match (a > 0.0, b > 0.0) {
        (false, false) => Exposure::None,
        (true, false) => Exposure::OnlyA,
        (false, true) => Exposure::OnlyB,
        (true, true) => Exposure::Both,
    }
}

/// Extraction result: the labeled instances plus skip diagnostics.
pub struct ExtractedSegments {
    pub set: LabeledSet,
    pub warnings: Vec<String>,
    /// Instances found per class, in canonical class order.
    pub class_counts: Vec<usize>,
}

/// Cut the series into single-analyte instances.
///
/// A maximal run where exactly one set-point is nonzero qualifies when it
/// still spans 100 s after a 10 s settling guard; every non-overlapping
/// 100 s window inside it becomes one `[50, 16]` instance sampled every
/// two seconds. Shorter runs are skipped with a warning.
pub fn extract_single_analyte_segments(series: &MixtureSeries) -> Result<ExtractedSegments> {
    if series.len() < 2 {
        return Err(Error::Data("series too short to segment".into()));
    }
    let mut dts: Vec<f64> = series.time.windows(2).map(|w| w[1] - w[0]).collect();
    dts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dt = dts[dts.len() / 2];
    if !(dt > 0.0) {
        return Err(Error::Data("cannot infer sampling interval".into()));
    }
    let stride = (SAMPLE_SPACING_SECONDS / dt).round().max(1.0) as usize;
    let window = (SEGMENT_SECONDS / dt).round() as usize;
    let guard = (GUARD_SECONDS / dt).round() as usize;
    let samples_per_instance = window / stride;

    let mut instances = Vec::new();
    let mut labels = Vec::new();
    let mut warnings = Vec::new();
    let mut class_counts = vec![0usize; MIXTURE_CLASS_NAMES.len()];

    let mut run_start = 0usize;
    let mut run_state = exposure(series.conc_a[0], series.conc_b[0]);
    let n = series.len();
    for i in 1..=n {
        let state = if i < n {
            exposure(series.conc_a[i], series.conc_b[i])
        } else {
            Exposure::Both // sentinel forcing the last run to flush
        };
        if state == run_state && i < n {
            continue;
        }
        let run_end = i;
        if matches!(run_state, Exposure::OnlyA | Exposure::OnlyB) {
            let gas = match run_state {
                Exposure::OnlyA => &series.schema.gas_a,
                _ => &series.schema.gas_b,
            };
            let label = mixture_class_index(gas)?;
            let usable_start = run_start + guard;
            let mut start = usable_start;
            let mut extracted = 0usize;
            while start + window <= run_end {
                let mut data = Vec::with_capacity(samples_per_instance * SENSOR_CHANNELS);
                for s in 0..samples_per_instance {
                    let row = start + s * stride;
                    let base = row * SENSOR_CHANNELS;
                    data.extend_from_slice(&series.readings[base..base + SENSOR_CHANNELS]);
                }
                instances.push(Tensor::from_data(&[samples_per_instance, SENSOR_CHANNELS], data)?);
                labels.push(label);
                class_counts[label] += 1;
                extracted += 1;
                start += window;
            }
            if extracted == 0 {
                let dur = (run_end - run_start) as f64 * dt;
                warnings.push(format!(
                    "skipped {gas} exposure at t={:.1}s: {dur:.1}s is shorter than {}s plus guard",
                    series.time[run_start], SEGMENT_SECONDS
                ));
            }
        }
        run_start = i;
        run_state = state;
    }

    let set = LabeledSet::new(
        instances,
        labels,
        MIXTURE_CLASS_NAMES.len(),
        MIXTURE_CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
    )?;
    Ok(ExtractedSegments { set, warnings, class_counts })
}

/// Per-channel min-max normalization of one `[T, C]` instance; applied by
/// the training pipelines so the sensor scales match the network's expected
/// dynamic range.
pub fn normalize_instance(x: &Tensor<f32>) -> Tensor<f32> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    let mut out = x.data().to_vec();
    for ci in 0..c {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for ti in 0..t {
            let v = x.data()[ti * c + ci];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        for ti in 0..t {
            let v = &mut out[ti * c + ci];
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }
    Tensor::from_data(x.shape(), out).expect("same shape")
}

/// Synthetic stand-in for the two public mixture recordings, written in
/// the same 19-column text format at 1 Hz. Each gas drives the four sensor
/// types with its own amplitude pattern and rise dynamics; exposures are
/// sized to yield one extraction window each, with occasional short bursts
/// and two-gas phases that the extractor must skip.
pub mod synth {
    use super::*;
    use crate::rng::Rng;
    use std::io::Write;
    use std::path::PathBuf;

    /// (amplitude per sensor type, rise time constant in seconds)
    fn gas_profile(gas: &str) -> ([f64; 4], f64) {
        match gas {
            "co" => ([1.6, 0.9, 0.25, 0.1], 22.0),
            "ethylene" => ([0.5, 1.4, 1.1, 0.3], 12.0),
            // methane: concentrated on the last sensor type, fast response
            _ => ([0.15, 0.2, 0.45, 1.8], 5.0),
        }
    }

    struct Exposure {
        gas_col: usize, // 0 = gas_a, 1 = gas_b
        duration: usize,
        conc: f64,
    }

    fn write_series(
        path: &PathBuf,
        schema: &MixtureSchema,
        exposures: &[Exposure],
        rng: &mut Rng,
    ) -> crate::error::Result<()> {
        let base: Vec<f64> = (0..SENSOR_CHANNELS).map(|_| rng.uniform(500.0, 3000.0)).collect();
        let gain: Vec<f64> = (0..SENSOR_CHANNELS).map(|_| rng.uniform(0.85, 1.15)).collect();
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "Time(s) {}(ppm) {}(ppm) 16-sensor-readings", schema.gas_a, schema.gas_b)?;

        let mut t = 0usize;
        let mut response = vec![0.0f64; SENSOR_CHANNELS];
        let emit = |t: usize,
                        conc_a: f64,
                        conc_b: f64,
                        response: &mut Vec<f64>,
                        active: Option<(&str, f64)>,
                        rng: &mut Rng,
                        file: &mut std::fs::File|
         -> crate::error::Result<()> {
            for s in 0..SENSOR_CHANNELS {
                let target = match active {
                    Some((gas, conc)) => {
                        let (amp, _) = gas_profile(gas);
                        amp[s / 4] * conc * gain[s] * 0.45 * base[s]
                    }
                    None => 0.0,
                };
                let tc = match active {
                    Some((gas, _)) => gas_profile(gas).1,
                    None => 30.0, // recovery
                };
                response[s] += (target - response[s]) / tc;
            }
            let mut line = format!("{}.0 {} {}", t, conc_a, conc_b);
            for s in 0..SENSOR_CHANNELS {
                let noise = rng.normal(0.0, 0.004) * base[s];
                line.push_str(&format!(" {:.3}", base[s] + response[s] + noise));
            }
            writeln!(file, "{line}")?;
            Ok(())
        };

        for exposure in exposures {
            // settling gap
            let gap = 20 + rng.below(15);
            for _ in 0..gap {
                emit(t, 0.0, 0.0, &mut response, None, rng, &mut file)?;
                t += 1;
            }
            let gas = if exposure.gas_col == 0 { &schema.gas_a } else { &schema.gas_b };
            let (a, b) = if exposure.gas_col == 0 {
                (exposure.conc, 0.0)
            } else {
                (0.0, exposure.conc)
            };
            for _ in 0..exposure.duration {
                emit(t, a, b, &mut response, Some((gas, exposure.conc)), rng, &mut file)?;
                t += 1;
            }
        }
        // trailing gap so the last exposure run terminates cleanly
        for _ in 0..20 {
            emit(t, 0.0, 0.0, &mut response, None, rng, &mut file)?;
            t += 1;
        }
        Ok(())
    }

    fn schedule(n_a: usize, n_b: usize, rng: &mut Rng) -> Vec<Exposure> {
        let mut exposures = Vec::new();
        for i in 0..n_a.max(n_b) {
            if i < n_a {
                exposures.push(Exposure {
                    gas_col: 0,
                    duration: 115 + rng.below(40),
                    conc: rng.uniform(0.5, 2.0),
                });
            }
            if i < n_b {
                exposures.push(Exposure {
                    gas_col: 1,
                    duration: 115 + rng.below(40),
                    conc: rng.uniform(0.5, 2.0),
                });
            }
            // short burst the extractor must skip
            if i % 9 == 0 {
                exposures.push(Exposure {
                    gas_col: (i / 9) % 2,
                    duration: 40 + rng.below(30),
                    conc: rng.uniform(0.5, 2.0),
                });
            }
        }
        exposures
    }

    /// Write the two synthetic recordings into `dir`; returns their paths.
    /// Extraction yields 49 CO, 116 ethylene and 50 methane instances.
    pub fn gen_synthetic_mixture_files(
        dir: &std::path::Path,
        seed: u64,
    ) -> crate::error::Result<(PathBuf, PathBuf)> {
        let mut rng = Rng::new(seed);
        let co_path = dir.join("ethylene_CO_synth.txt");
        let schema_a = MixtureSchema::new("co", "ethylene")?;
        let exposures = schedule(49, 58, &mut rng);
        write_series(&co_path, &schema_a, &exposures, &mut rng)?;

        let methane_path = dir.join("ethylene_methane_synth.txt");
        let schema_b = MixtureSchema::new("methane", "ethylene")?;
        let exposures = schedule(50, 58, &mut rng);
        write_series(&methane_path, &schema_b, &exposures, &mut rng)?;
        Ok((co_path, methane_path))
    }
}
