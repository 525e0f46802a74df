//! Threshold-based spike detection on extracellular voltage traces, plus the
//! trace synthesizer used to validate it against ground truth.
//!
//! Detection is peak-to-peak: a spike is declared where the min-max excursion
//! inside a sliding window of one peak lifetime exceeds `threshold_k` times
//! the robust noise SD, and is timestamped at the larger-magnitude extremum.
//! Detections closer than the refractory period are suppressed.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mea::{ElectrodeCoord, SAMPLE_RATE_HZ};

/// Sampled extracellular voltage (microvolts) on one electrode at 20 kHz.
#[derive(Clone, PartialEq, Debug)]
pub struct VoltageTrace {
    pub samples: Vec<f64>,
    pub electrode: ElectrodeCoord,
}

/// Detector parameters. `threshold_k` is in multiples of the noise SD and
/// applies to the peak-to-peak excursion.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct DetectorParams {
    pub threshold_k: f64,
    pub peak_lifetime_ms: f64,
    pub refractory_ms: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            threshold_k: 8.0,
            peak_lifetime_ms: 1.0,
            refractory_ms: 2.0,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_k > 0.0) {
            return Err(Error::InvalidConfig("threshold_k must be positive".into()));
        }
        if !(self.peak_lifetime_ms > 0.0) || !(self.refractory_ms > 0.0) {
            return Err(Error::InvalidConfig(
                "peak_lifetime_ms and refractory_ms must be positive".into(),
            ));
        }
        if self.peak_lifetime_ms >= self.refractory_ms {
            return Err(Error::InvalidConfig(
                "peak_lifetime_ms must be smaller than refractory_ms".into(),
            ));
        }
        Ok(())
    }

    fn lifetime_samples(&self) -> usize {
        ((self.peak_lifetime_ms / 1000.0) * SAMPLE_RATE_HZ as f64).round().max(1.0) as usize
    }

    fn refractory_samples(&self) -> usize {
        ((self.refractory_ms / 1000.0) * SAMPLE_RATE_HZ as f64).round().max(1.0) as usize
    }
}

/// The canonical synthetic spike waveform: 1.5 ms, negative-leading, with a
/// single dominant trough. Only used to build validation traces.
pub fn default_template() -> Vec<f64> {
    let n = 30; // 1.5 ms at 20 kHz
    let mut template = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64;
        // sharp negative lobe peaking at t = 5, slower positive overshoot
        let trough = -40.0 * (t / 5.0) * (1.0 - t / 5.0).exp();
        let overshoot = if t > 8.0 {
            20.0 * ((t - 8.0) / 8.0) * (1.0 - (t - 8.0) / 8.0).exp()
        } else {
            0.0
        };
        template.push(trough + overshoot);
    }
    template
}

fn template_extremum(template: &[f64]) -> Result<usize> {
    if template.is_empty() {
        return Err(Error::InvalidConfig("template must be nonempty".into()));
    }
    let mut best = 0usize;
    let mut ties = 1usize;
    for (i, &v) in template.iter().enumerate().skip(1) {
        if v.abs() > template[best].abs() {
            best = i;
            ties = 1;
        } else if v.abs() == template[best].abs() {
            ties += 1;
        }
    }
    if ties > 1 {
        return Err(Error::InvalidConfig(
            "template must have a unique extremum".into(),
        ));
    }
    Ok(best)
}

/// Builds a ground-truth trace: white Gaussian noise of SD `noise_sd_uv` plus
/// the template added at every spike, aligned on the template extremum.
pub fn synthesize_trace(
    spike_samples: &[u32],
    duration_samples: u32,
    noise_sd_uv: f64,
    template: &[f64],
    electrode: ElectrodeCoord,
    seed: u64,
) -> Result<VoltageTrace> {
    let extremum = template_extremum(template)?;
    if !(noise_sd_uv >= 0.0) || !noise_sd_uv.is_finite() {
        return Err(Error::InvalidConfig("noise_sd_uv must be non-negative".into()));
    }
    let n = duration_samples as usize;
    let mut samples = vec![0.0f64; n];
    if noise_sd_uv > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sd_uv).expect("valid sd");
        for s in samples.iter_mut() {
            *s = normal.sample(&mut rng);
        }
    }
    for &spike in spike_samples {
        let start = spike as i64 - extremum as i64;
        for (j, &v) in template.iter().enumerate() {
            let idx = start + j as i64;
            if idx >= 0 && (idx as usize) < n {
                samples[idx as usize] += v;
            }
        }
    }
    Ok(VoltageTrace { samples, electrode })
}

// robust SD: median absolute deviation scaled for Gaussian consistency
fn mad_sd(samples: &[f64]) -> f64 {
    fn median(values: &mut [f64]) -> f64 {
        values.sort_by(f64::total_cmp);
        let n = values.len();
        if n % 2 == 1 {
            values[n / 2]
        } else {
            0.5 * (values[n / 2 - 1] + values[n / 2])
        }
    }
    let mut copy: Vec<f64> = samples.to_vec();
    let med = median(&mut copy);
    let mut deviations: Vec<f64> = samples.iter().map(|&v| (v - med).abs()).collect();
    1.4826 * median(&mut deviations)
}

/// Robust noise SD estimate (MAD x 1.4826). Requires at least 1000 samples.
pub fn estimate_noise_sd(trace: &VoltageTrace) -> Result<f64> {
    if trace.samples.len() < 1000 {
        return Err(Error::TraceTooShort {
            len: trace.samples.len(),
            min: 1000,
        });
    }
    if trace.samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("voltage trace".into()));
    }
    Ok(mad_sd(&trace.samples))
}

/// Detects spike times on one trace. Returns sample indices in ascending
/// order. Traces shorter than two samples yield no detections.
pub fn detect_spikes(trace: &VoltageTrace, params: &DetectorParams) -> Result<Vec<u32>> {
    params.validate()?;
    let samples = &trace.samples;
    if samples.len() < 2 {
        return Ok(Vec::new());
    }
    let noise_sd = mad_sd(samples);
    let threshold = params.threshold_k * noise_sd;
    let window = params.lifetime_samples();
    let refractory = params.refractory_samples();

    let mut detections = Vec::new();
    let mut t = 0usize;
    while t + 1 < samples.len() {
        let end = (t + window).min(samples.len());
        let mut min_idx = t;
        let mut max_idx = t;
        for i in t..end {
            if samples[i] < samples[min_idx] {
                min_idx = i;
            }
            if samples[i] > samples[max_idx] {
                max_idx = i;
            }
        }
        if samples[max_idx] - samples[min_idx] > threshold {
            let spike = if samples[min_idx].abs() >= samples[max_idx].abs() {
                min_idx
            } else {
                max_idx
            };
            detections.push(spike as u32);
            t = spike + refractory;
        } else {
            t += 1;
        }
    }
    Ok(detections)
}

// ---------------------------------------------------------------------------
// Trace files: 16-byte header (magic "MEATRACE", row u8, col u8, two reserved
// zero bytes, sample count u32 LE) followed by the samples as f32 LE.
// ---------------------------------------------------------------------------

const TRACE_MAGIC: &[u8; 8] = b"MEATRACE";

pub fn write_trace(trace: &VoltageTrace, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + trace.samples.len() * 4);
    out.extend_from_slice(TRACE_MAGIC);
    out.push(trace.electrode.row);
    out.push(trace.electrode.col);
    out.extend_from_slice(&[0u8, 0u8]);
    out.extend_from_slice(&(trace.samples.len() as u32).to_le_bytes());
    for &v in &trace.samples {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<VoltageTrace> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..8] != TRACE_MAGIC {
        return Err(Error::Format("not a MEATRACE file".into()));
    }
    let electrode = ElectrodeCoord::new(bytes[8] as usize, bytes[9] as usize)?;
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + count * 4 {
        return Err(Error::Format(format!(
            "trace length mismatch: header says {count} samples, file holds {}",
            (bytes.len() - 16) / 4
        )));
    }
    let samples = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(VoltageTrace { samples, electrode })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coord() -> ElectrodeCoord {
        ElectrodeCoord::new(7, 9).unwrap()
    }

    #[test]
    fn template_has_unique_trough() {
        let template = default_template();
        let extremum = template_extremum(&template).unwrap();
        assert!(template[extremum] < 0.0, "negative-leading");
        let p2p = template.iter().cloned().fold(f64::MIN, f64::max)
            - template.iter().cloned().fold(f64::MAX, f64::min);
        assert!(p2p > 40.0, "peak-to-peak {p2p}");
    }

    #[test]
    fn synthesize_noiseless() {
        let template = default_template();
        let extremum = template_extremum(&template).unwrap();
        let quiet = synthesize_trace(&[], 2000, 0.0, &template, coord(), 1).unwrap();
        assert!(quiet.samples.iter().all(|&v| v == 0.0));

        let one = synthesize_trace(&[1000], 2000, 0.0, &template, coord(), 1).unwrap();
        for (i, &v) in one.samples.iter().enumerate() {
            let j = i as i64 - (1000 - extremum as i64);
            let expected = if j >= 0 && (j as usize) < template.len() {
                template[j as usize]
            } else {
                0.0
            };
            assert_eq!(v, expected, "sample {i}");
        }
        assert_eq!(one.samples[1000], template[extremum]);
    }

    #[test]
    fn synthesize_is_deterministic() {
        let template = default_template();
        let a = synthesize_trace(&[500], 4000, 5.0, &template, coord(), 77).unwrap();
        let b = synthesize_trace(&[500], 4000, 5.0, &template, coord(), 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_sd_estimate_is_consistent() {
        let template = default_template();
        let trace = synthesize_trace(&[], 40_000, 5.0, &template, coord(), 3).unwrap();
        let est = estimate_noise_sd(&trace).unwrap();
        assert!((est - 5.0).abs() / 5.0 < 0.10, "estimate {est}");
    }

    #[test]
    fn noise_sd_robust_to_outliers() {
        // 1% large outliers barely move the MAD estimate
        let template = default_template();
        let mut trace = synthesize_trace(&[], 40_000, 5.0, &template, coord(), 4).unwrap();
        for i in (0..trace.samples.len()).step_by(100) {
            trace.samples[i] += 500.0;
        }
        let est = estimate_noise_sd(&trace).unwrap();
        assert!((est - 5.0).abs() / 5.0 < 0.15, "estimate {est}");
        // whereas the plain SD blows up
        let mean: f64 = trace.samples.iter().sum::<f64>() / trace.samples.len() as f64;
        let plain = (trace.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (trace.samples.len() - 1) as f64)
            .sqrt();
        assert!(plain > 2.0 * est);
    }

    #[test]
    fn noise_sd_constant_trace_is_zero() {
        let trace = VoltageTrace {
            samples: vec![3.25; 2000],
            electrode: coord(),
        };
        assert_eq!(estimate_noise_sd(&trace).unwrap(), 0.0);
    }

    #[test]
    fn noise_sd_short_trace_errors() {
        let trace = VoltageTrace {
            samples: vec![0.0; 999],
            electrode: coord(),
        };
        assert!(matches!(
            estimate_noise_sd(&trace),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn detect_all_zero_trace_is_empty() {
        let trace = VoltageTrace {
            samples: vec![0.0; 5000],
            electrode: coord(),
        };
        assert!(detect_spikes(&trace, &DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn detect_three_clean_spikes() {
        let template = default_template();
        let truth = [1000u32, 3000, 5000];
        // tiny noise floor so the threshold is meaningful but the spikes dominate
        let trace = synthesize_trace(&truth, 8000, 1.0, &template, coord(), 9).unwrap();
        let detections = detect_spikes(&trace, &DetectorParams::default()).unwrap();
        assert_eq!(detections.len(), 3, "detections {detections:?}");
        for (&found, &expected) in detections.iter().zip(truth.iter()) {
            assert!(
                (found as i64 - expected as i64).abs() <= 5, // 0.25 ms
                "found {found}, expected {expected}"
            );
        }
    }

    #[test]
    fn detect_refractory_merges_close_spikes() {
        let template = default_template();
        // two true spikes half a refractory period apart (20 samples)
        let trace = synthesize_trace(&[1000, 1020], 4000, 6.0, &template, coord(), 5).unwrap();
        let detections = detect_spikes(&trace, &DetectorParams::default()).unwrap();
        assert_eq!(detections.len(), 1, "detections {detections:?}");
    }

    #[test]
    fn detection_count_bounded_by_refractory() {
        let template = default_template();
        let spikes: Vec<u32> = (0..100).map(|i| 100 + i * 190).collect();
        let trace = synthesize_trace(&spikes, 20_000, 2.0, &template, coord(), 6).unwrap();
        let params = DetectorParams::default();
        let detections = detect_spikes(&trace, &params).unwrap();
        let bound = trace.samples.len() / params.refractory_samples() + 1;
        assert!(detections.len() <= bound);
    }

    #[test]
    fn trace_file_round_trip() {
        let template = default_template();
        let trace = synthesize_trace(&[300], 2000, 4.0, &template, coord(), 11).unwrap();
        let path = std::env::temp_dir().join(format!("trace-{}.bin", std::process::id()));
        write_trace(&trace, &path).unwrap();
        let back = read_trace(&path).unwrap();
        assert_eq!(back.electrode, trace.electrode);
        assert_eq!(back.samples.len(), trace.samples.len());
        // storage is f32; round-trip is exact at f32 precision
        for (&a, &b) in trace.samples.iter().zip(&back.samples) {
            assert_eq!(a as f32, b as f32);
        }
        fs::remove_file(&path).unwrap();
    }
}
