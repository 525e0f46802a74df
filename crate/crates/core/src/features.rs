//! Feature extraction: one trial becomes a 4096-dimensional vector of
//! per-electrode spike counts in the post-stimulus chunk, with the stimulated
//! square region zeroed out so the classifier sees propagated activity only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mea::{require_valid, ElectrodeCoord, StimulusPattern, GRID_ELECTRODES, GRID_SIDE};
use crate::raster::TrialRecording;
use crate::stats::activity;

/// Default exclusion margin around the stimulated bounding box, in electrodes.
pub const DEFAULT_MARGIN: u32 = 2;

/// Post-stimulus spike counts in row-major electrode order. Values at
/// `excluded` indices are zero; the vector length is always 4096.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FeatureVector {
    pub values: Vec<u32>,
    pub label: u32,
    pub trial_id: u32,
    pub excluded: Vec<u16>,
}

impl FeatureVector {
    /// Classifier input: counts scaled by `1 / c_samples` into [0, 1].
    pub fn scaled(&self, c_samples: u32) -> Vec<f64> {
        self.values
            .iter()
            .map(|&v| v as f64 / c_samples as f64)
            .collect()
    }
}

/// Axis-aligned bounding box of all pattern poles, dilated by `margin` on
/// each side and clipped to the grid; returned in row-major order.
pub fn exclusion_zone(pattern: &StimulusPattern, margin: u32) -> Vec<ElectrodeCoord> {
    let mut min_row = i64::MAX;
    let mut max_row = i64::MIN;
    let mut min_col = i64::MAX;
    let mut max_col = i64::MIN;
    for pair in &pattern.pairs {
        for coord in [pair.positive, pair.negative] {
            min_row = min_row.min(coord.row as i64);
            max_row = max_row.max(coord.row as i64);
            min_col = min_col.min(coord.col as i64);
            max_col = max_col.max(coord.col as i64);
        }
    }
    if min_row > max_row {
        return Vec::new(); // empty pattern
    }
    let clip = |v: i64| v.clamp(0, GRID_SIDE as i64 - 1) as usize;
    let (r0, r1) = (clip(min_row - margin as i64), clip(max_row + margin as i64));
    let (c0, c1) = (clip(min_col - margin as i64), clip(max_col + margin as i64));
    let mut zone = Vec::with_capacity((r1 - r0 + 1) * (c1 - c0 + 1));
    for row in r0..=r1 {
        for col in c0..=c1 {
            zone.push(ElectrodeCoord {
                row: row as u8,
                col: col as u8,
            });
        }
    }
    zone
}

/// Extracts the feature vector for one trial: per-electrode activity in the
/// `c_samples` window starting at the stimulus onset, zeroed inside the
/// exclusion zone of `pattern` dilated by `margin`.
pub fn extract(
    trial: &TrialRecording,
    pattern: &StimulusPattern,
    c_samples: u32,
    margin: u32,
    trial_id: u32,
) -> Result<FeatureVector> {
    require_valid(pattern)?;
    let onset = trial.stimulus_onset_sample;
    if onset as u64 + c_samples as u64 > trial.raster.duration_samples() as u64 {
        return Err(Error::WindowOutOfRange {
            start: onset as i64,
            end: onset as i64 + c_samples as i64,
            duration: trial.raster.duration_samples(),
        });
    }
    let mut values = Vec::with_capacity(GRID_ELECTRODES);
    for index in 0..GRID_ELECTRODES {
        let electrode = ElectrodeCoord::from_index(index)?;
        values.push(activity(&trial.raster, electrode, onset, c_samples)?);
    }
    let mut excluded: Vec<u16> = exclusion_zone(pattern, margin)
        .iter()
        .map(|c| c.index() as u16)
        .collect();
    excluded.sort_unstable();
    for &index in &excluded {
        values[index as usize] = 0;
    }
    Ok(FeatureVector {
        values,
        label: pattern.class_label,
        trial_id,
        excluded,
    })
}

// ---------------------------------------------------------------------------
// Feature CSV: one row per trial, "label,trial_id,v0,...,v4095". The leading
// columns are integers; values may be integers (spike counts) or reals (state
// vectors from the artificial reservoir), so readers parse them as f64.
// ---------------------------------------------------------------------------

/// Writes labeled feature rows; `values` entries format with `Display`.
pub fn write_rows_csv<T: std::fmt::Display>(
    rows: &[(u32, u32, Vec<T>)],
    path: &Path,
) -> Result<()> {
    let mut out = String::new();
    for (label, trial_id, values) in rows {
        if values.len() != GRID_ELECTRODES {
            return Err(Error::Format(format!(
                "feature row must have {GRID_ELECTRODES} values, got {}",
                values.len()
            )));
        }
        out.push_str(&format!("{label},{trial_id}"));
        for v in values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_features_csv(features: &[FeatureVector], path: &Path) -> Result<()> {
    let rows: Vec<(u32, u32, Vec<u32>)> = features
        .iter()
        .map(|f| (f.label, f.trial_id, f.values.clone()))
        .collect();
    write_rows_csv(&rows, path)
}

/// Reads feature rows as `(label, trial_id, values)` with f64 values.
pub fn read_rows_csv(path: &Path) -> Result<Vec<(u32, u32, Vec<f64>)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.trim().split(',');
        let label: u32 = parts
            .next()
            .ok_or(Error::Parse {
                line: ln + 1,
                msg: "missing label".into(),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                line: ln + 1,
                msg: format!("bad label: {e}"),
            })?;
        let trial_id: u32 = parts
            .next()
            .ok_or(Error::Parse {
                line: ln + 1,
                msg: "missing trial_id".into(),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                line: ln + 1,
                msg: format!("bad trial_id: {e}"),
            })?;
        let values: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: ln + 1,
                    msg: format!("bad value {s:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != GRID_ELECTRODES {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("expected {GRID_ELECTRODES} values, got {}", values.len()),
            });
        }
        rows.push((label, trial_id, values));
    }
    Ok(rows)
}

/// Reads a feature CSV of integer counts back into [`FeatureVector`]s.
/// The exclusion set is not persisted; loaded vectors carry an empty one.
pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>> {
    read_rows_csv(path)?
        .into_iter()
        .map(|(label, trial_id, values)| {
            let counts: Vec<u32> = values
                .iter()
                .map(|&v| {
                    if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) {
                        Ok(v as u32)
                    } else {
                        Err(Error::Format(format!("non-integer spike count {v}")))
                    }
                })
                .collect::<Result<_>>()?;
            Ok(FeatureVector {
                values: counts,
                label,
                trial_id,
                excluded: Vec::new(),
            })
        })
        .collect()
}
