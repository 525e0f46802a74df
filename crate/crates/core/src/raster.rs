//! Spike rasters: per-electrode spike times at 20 kHz. The raster is the
//! common currency between the simulator, the detector, the response
//! statistics and the feature extractor.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mea::{ElectrodeCoord, GRID_ELECTRODES, GRID_SIDE, SAMPLE_RATE_HZ};

/// Per-electrode sorted spike sample indices over a fixed-length recording.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SpikeRaster {
    duration_samples: u32,
    channels: Vec<Vec<u32>>,
}

impl SpikeRaster {
    pub fn empty(duration_samples: u32) -> Self {
        Self {
            duration_samples,
            channels: vec![Vec::new(); GRID_ELECTRODES],
        }
    }

    /// Builds a raster from raw channels, enforcing the invariants: exactly
    /// 4096 channels, strictly increasing sample indices, all within range.
    pub fn from_channels(duration_samples: u32, channels: Vec<Vec<u32>>) -> Result<Self> {
        if channels.len() != GRID_ELECTRODES {
            return Err(Error::Format(format!(
                "expected {GRID_ELECTRODES} channels, got {}",
                channels.len()
            )));
        }
        for (idx, channel) in channels.iter().enumerate() {
            for window in channel.windows(2) {
                if window[1] <= window[0] {
                    return Err(Error::Format(format!(
                        "channel {idx}: spike samples not strictly increasing"
                    )));
                }
            }
            if let Some(&last) = channel.last() {
                if last >= duration_samples {
                    return Err(Error::Format(format!(
                        "channel {idx}: spike at {last} beyond duration {duration_samples}"
                    )));
                }
            }
        }
        Ok(Self {
            duration_samples,
            channels,
        })
    }

    pub fn duration_samples(&self) -> u32 {
        self.duration_samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        SAMPLE_RATE_HZ
    }

    pub fn channel(&self, electrode: ElectrodeCoord) -> &[u32] {
        &self.channels[electrode.index()]
    }

    pub fn channel_by_index(&self, index: usize) -> &[u32] {
        &self.channels[index]
    }

    /// Appends a spike to a channel; out-of-order pushes are a programming
    /// error, duplicate samples (several neurons on one electrode firing in
    /// the same frame) collapse into one.
    pub(crate) fn push_spike(&mut self, electrode_index: usize, sample: u32) {
        debug_assert!(sample < self.duration_samples);
        let channel = &mut self.channels[electrode_index];
        match channel.last() {
            Some(&last) if last == sample => {}
            Some(&last) => {
                debug_assert!(last < sample, "spikes must be pushed in time order");
                channel.push(sample);
            }
            None => channel.push(sample),
        }
    }

    /// Spike count per electrode, row-major.
    pub fn counts(&self) -> Vec<u32> {
        self.channels.iter().map(|c| c.len() as u32).collect()
    }

    pub fn total_spikes(&self) -> u64 {
        self.channels.iter().map(|c| c.len() as u64).sum()
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(
            w,
            "MEARASTER v1 {} {}",
            self.duration_samples, SAMPLE_RATE_HZ
        )?;
        for (index, channel) in self.channels.iter().enumerate() {
            let row = index / GRID_SIDE;
            let col = index % GRID_SIDE;
            for &sample in channel {
                writeln!(w, "{row},{col},{sample}")?;
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty raster file".into()))?
            .1
            .map(|h| (0usize, h))
            .map_err(Error::Io)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "MEARASTER" || fields[1] != "v1" {
            return Err(Error::Format(
                "expected header 'MEARASTER v1 <duration_samples> <rate>'".into(),
            ));
        }
        let duration_samples: u32 = fields[2].parse().map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad duration: {e}"),
        })?;
        if fields[3] != "20000" {
            return Err(Error::Format(format!(
                "unsupported sample rate {} (only 20000 Hz)",
                fields[3]
            )));
        }
        let mut channels = vec![Vec::new(); GRID_ELECTRODES];
        for (ln, line) in lines {
            let line = line.map_err(Error::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.trim().split(',').collect();
            if parts.len() != 3 {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: "expected 'row,col,sample'".into(),
                });
            }
            let parse = |s: &str| -> Result<u32> {
                s.parse().map_err(|e| Error::Parse {
                    line: ln + 1,
                    msg: format!("bad number {s:?}: {e}"),
                })
            };
            let (row, col, sample) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
            let coord = ElectrodeCoord::new(row as usize, col as usize)?;
            channels[coord.index()].push(sample);
        }
        for channel in &mut channels {
            channel.sort_unstable();
            channel.dedup();
        }
        Self::from_channels(duration_samples, channels)
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }
}

/// One stimulus repetition: the recorded raster and where in it the stimulus
/// was delivered.
#[derive(Clone, PartialEq, Debug)]
pub struct TrialRecording {
    pub raster: SpikeRaster,
    pub stimulus_onset_sample: u32,
    pub pattern_label: u32,
}

impl TrialRecording {
    /// Checks the onset leaves at least `c_samples` of recording on each side.
    pub fn check_window(&self, c_samples: u32) -> Result<()> {
        if self.stimulus_onset_sample < c_samples {
            return Err(Error::WindowOutOfRange {
                start: self.stimulus_onset_sample as i64 - c_samples as i64,
                end: self.stimulus_onset_sample as i64,
                duration: self.raster.duration_samples(),
            });
        }
        let end = self.stimulus_onset_sample as u64 + c_samples as u64;
        if end > self.raster.duration_samples() as u64 {
            return Err(Error::WindowOutOfRange {
                start: self.stimulus_onset_sample as i64,
                end: end as i64,
                duration: self.raster.duration_samples(),
            });
        }
        Ok(())
    }
}

/// Writes a trial set: one `trial_<i>.raster` per trial plus an index file
/// `trials.csv` with lines `trial_id,label,onset_sample,raster_file`.
/// Returns the paths written (index file last).
pub fn save_trials(dir: &Path, trials: &[TrialRecording]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut index = String::from("trial_id,label,onset_sample,raster_file\n");
    for (i, trial) in trials.iter().enumerate() {
        let name = format!("trial_{i:03}.raster");
        let path = dir.join(&name);
        trial.raster.write_to(&path)?;
        index.push_str(&format!(
            "{i},{},{},{name}\n",
            trial.pattern_label, trial.stimulus_onset_sample
        ));
        written.push(path);
    }
    let index_path = dir.join("trials.csv");
    fs::write(&index_path, index)?;
    written.push(index_path);
    Ok(written)
}

/// Reads a trial set written by [`save_trials`].
pub fn load_trials(dir: &Path) -> Result<Vec<TrialRecording>> {
    let index_path = dir.join("trials.csv");
    let text = fs::read_to_string(&index_path)?;
    let mut trials = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != 4 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "expected 'trial_id,label,onset_sample,raster_file'".into(),
            });
        }
        let label: u32 = parts[1].parse().map_err(|e| Error::Parse {
            line: ln + 1,
            msg: format!("bad label: {e}"),
        })?;
        let onset: u32 = parts[2].parse().map_err(|e| Error::Parse {
            line: ln + 1,
            msg: format!("bad onset: {e}"),
        })?;
        let raster = SpikeRaster::read_from(&dir.join(parts[3]))?;
        trials.push(TrialRecording {
            raster,
            stimulus_onset_sample: onset,
            pattern_label: label,
        });
    }
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_channels_validates() {
        let mut channels = vec![Vec::new(); GRID_ELECTRODES];
        channels[5] = vec![1, 2, 3];
        assert!(SpikeRaster::from_channels(10, channels.clone()).is_ok());
        channels[5] = vec![3, 2];
        assert!(SpikeRaster::from_channels(10, channels.clone()).is_err());
        channels[5] = vec![3, 10];
        assert!(SpikeRaster::from_channels(10, channels.clone()).is_err());
        channels[5] = vec![2, 2];
        assert!(SpikeRaster::from_channels(10, channels).is_err());
    }

    #[test]
    fn push_spike_dedupes_same_sample() {
        let mut raster = SpikeRaster::empty(100);
        raster.push_spike(0, 5);
        raster.push_spike(0, 5);
        raster.push_spike(0, 7);
        assert_eq!(raster.channel_by_index(0), &[5, 7]);
    }

    #[test]
    fn file_round_trip() {
        let mut raster = SpikeRaster::empty(1000);
        raster.push_spike(0, 1);
        raster.push_spike(0, 999);
        raster.push_spike(4095, 500);
        raster.push_spike(64, 3);
        let mut buf = Vec::new();
        raster.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("MEARASTER v1 1000 20000\n"));
        let back = SpikeRaster::read(&buf[..]).unwrap();
        assert_eq!(raster, back);
    }

    #[test]
    fn trial_window_check() {
        let trial = TrialRecording {
            raster: SpikeRaster::empty(600),
            stimulus_onset_sample: 300,
            pattern_label: 0,
        };
        assert!(trial.check_window(200).is_ok());
        assert!(trial.check_window(301).is_err());
        let tight = TrialRecording {
            raster: SpikeRaster::empty(400),
            stimulus_onset_sample: 300,
            pattern_label: 0,
        };
        assert!(tight.check_window(200).is_err());
    }

    #[test]
    fn trial_set_round_trip() {
        let dir = tempdir();
        let mut raster = SpikeRaster::empty(600);
        raster.push_spike(17, 250);
        let trials = vec![
            TrialRecording {
                raster: raster.clone(),
                stimulus_onset_sample: 300,
                pattern_label: 2,
            },
            TrialRecording {
                raster,
                stimulus_onset_sample: 300,
                pattern_label: 2,
            },
        ];
        save_trials(&dir, &trials).unwrap();
        let back = load_trials(&dir).unwrap();
        assert_eq!(trials, back);
        fs::remove_dir_all(&dir).unwrap();
    }

    fn tempdir() -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "mea-raster-test-{}-{:?}",
            std::process::id(),
            std::thread::current().id()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }
}
