//! Experiment orchestration: spontaneous calibration, site selection,
//! pattern generation, the stimulation protocol, both reservoir paths,
//! repeated split/train/evaluate rounds, report emission, and the artifact
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::classifier::{self, Sample, SplitSpec, TrainSpec};
use crate::config::ExperimentConfig;
use crate::culture::{
    build_culture, find_hotspots, run_protocol, simulate_spontaneous, CultureConfig,
};
use crate::detect::{default_template, detect_spikes, synthesize_trace, DetectorParams};
use crate::error::{Error, Result};
use crate::esn::{build_reservoir, esn_features, estimate_noise, EsnConfig};
use crate::features::{extract, FeatureVector};
use crate::mea::{
    make_bar, make_digit, make_pointwise, write_pattern, Digit, Direction, ElectrodeCoord,
    Orientation, Scenario, StimulusPattern, GRID_ELECTRODES,
};
use crate::raster::{save_trials, SpikeRaster, TrialRecording};
use crate::seed::derive_seed;
use crate::stats::{aggregate, emit_map_image, write_map_csv, DEFAULT_C_SAMPLES};

/// Length of the spontaneous recording used for hotspot selection and noise
/// calibration.
pub const SPONTANEOUS_DURATION_S: f64 = 10.0;
/// Noise SD used when re-synthesizing voltage traces from rasters for the
/// detection fidelity path; the canonical template has 10x this peak-to-peak.
pub const TRACE_NOISE_SD_UV: f64 = 6.0;

/// One class row of the results table. Accuracies are fractions in [0, 1],
/// mean and sample SD over the repeated splits.
#[derive(Clone, PartialEq, Debug)]
pub struct ClassResult {
    pub class_name: String,
    pub brc_mean: f64,
    pub brc_sd: f64,
    pub esn_mean: f64,
    pub esn_sd: f64,
}

/// Per-class rows plus the scenario average (the arithmetic mean of the
/// class rows, column by column).
#[derive(Clone, PartialEq, Debug)]
pub struct ResultsTable {
    pub scenario: Scenario,
    pub classes: Vec<ClassResult>,
    pub average: ClassResult,
}

impl ResultsTable {
    /// Overall mean accuracy per path (the average row's means).
    pub fn brc_overall(&self) -> f64 {
        self.average.brc_mean
    }

    pub fn esn_overall(&self) -> f64 {
        self.average.esn_mean
    }
}

fn clamp_coord(coord: ElectrodeCoord, row_range: (u8, u8), col_range: (u8, u8)) -> ElectrodeCoord {
    ElectrodeCoord {
        row: coord.row.clamp(row_range.0, row_range.1),
        col: coord.col.clamp(col_range.0, col_range.1),
    }
}

/// Builds the scenario's stimulus patterns from spontaneous activity:
/// pointwise uses four separated hotspots; bars and digits center on the
/// single most active site (clamped so every footprint stays in-grid).
pub fn scenario_patterns(
    scenario: Scenario,
    spontaneous: &SpikeRaster,
) -> Result<(Vec<StimulusPattern>, Vec<ElectrodeCoord>)> {
    match scenario {
        Scenario::Pointwise => {
            let hotspots = find_hotspots(spontaneous, 4)?;
            let mut patterns = Vec::with_capacity(4);
            for (label, &site) in hotspots.iter().enumerate() {
                // first in-grid 4-neighbor becomes the negative pole
                let direction = [Direction::East, Direction::South, Direction::West, Direction::North]
                    .into_iter()
                    .find(|d| {
                        let (dr, dc) = d.delta();
                        site.offset(dr, dc).is_ok()
                    })
                    .expect("every electrode has an in-grid neighbor");
                patterns.push(make_pointwise(site, direction, label as u32)?);
            }
            Ok((patterns, hotspots))
        }
        Scenario::Bars => {
            let hotspots = find_hotspots(spontaneous, 1)?;
            let center = clamp_coord(hotspots[0], (5, 58), (5, 58));
            let orientations = [
                Orientation::Deg0,
                Orientation::Deg45,
                Orientation::Deg90,
                Orientation::Deg135,
            ];
            let patterns = orientations
                .iter()
                .enumerate()
                .map(|(label, &o)| make_bar(center, o, 5, 1, label as u32))
                .collect::<Result<Vec<_>>>()?;
            Ok((patterns, vec![center]))
        }
        Scenario::Digits => {
            let hotspots = find_hotspots(spontaneous, 1)?;
            let center = hotspots[0];
            // anchor is the top-left positive pole; shift so the digit body
            // sits around the hotspot
            let anchor = clamp_coord(
                ElectrodeCoord {
                    row: center.row.saturating_sub(2),
                    col: center.col.saturating_sub(2),
                },
                (1, 56),
                (1, 58),
            );
            let digits = [Digit::Zero, Digit::One, Digit::Eight];
            let patterns = digits
                .iter()
                .enumerate()
                .map(|(label, &d)| make_digit(d, anchor, label as u32))
                .collect::<Result<Vec<_>>>()?;
            Ok((patterns, vec![anchor]))
        }
    }
}

fn class_name(scenario: Scenario, index: usize) -> String {
    match scenario {
        Scenario::Pointwise => format!("point_{}", index + 1),
        Scenario::Bars => format!("bar_{}deg", [0, 45, 90, 135][index]),
        Scenario::Digits => format!("digit_{}", [0u32, 1, 8][index]),
    }
}

/// Replaces each trial's raster with the raster recovered by synthesizing a
/// voltage trace per electrode and running spike detection on it.
pub fn redetect_trials(
    trials: &[TrialRecording],
    master_seed: u64,
    stage_tag: &str,
) -> Result<Vec<TrialRecording>> {
    let template = default_template();
    let params = DetectorParams::default();
    let mut out = Vec::with_capacity(trials.len());
    for (trial_index, trial) in trials.iter().enumerate() {
        let duration = trial.raster.duration_samples();
        let mut channels: Vec<Vec<u32>> = Vec::with_capacity(GRID_ELECTRODES);
        for e in 0..GRID_ELECTRODES {
            let spikes = trial.raster.channel_by_index(e);
            let seed = derive_seed(
                master_seed,
                &format!("{stage_tag}-trace-{trial_index}"),
                e as u64,
            );
            let trace = synthesize_trace(
                spikes,
                duration,
                TRACE_NOISE_SD_UV,
                &template,
                ElectrodeCoord::from_index(e)?,
                seed,
            )?;
            channels.push(detect_spikes(&trace, &params)?);
        }
        out.push(TrialRecording {
            raster: SpikeRaster::from_channels(duration, channels)?,
            stimulus_onset_sample: trial.stimulus_onset_sample,
            pattern_label: trial.pattern_label,
        });
    }
    Ok(out)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs the configured scenario end to end and writes all artifacts under
/// `out_dir`. Returns the results table.
///
/// Stage seeds derive from `master_seed` alone: culture build, spontaneous
/// run, per-pattern protocols, reservoir build, noise estimation, per-trial
/// reservoir noise, and per-repeat split/train seeds. Both reservoir paths
/// share the split and training seeds of each repeat, so comparisons are
/// paired.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path) -> Result<ResultsTable> {
    config.validate()?;
    let master = config.master_seed;
    let scenario = config.scenario;
    let scenario_dir = out_dir.join(scenario.to_string());
    fs::create_dir_all(&scenario_dir)?;

    // (1) culture and spontaneous activity
    let culture_config = CultureConfig {
        seed: derive_seed(master, "culture", 0),
        ..config.culture
    };
    let state = build_culture(&culture_config)?;
    let spontaneous =
        simulate_spontaneous(&state, SPONTANEOUS_DURATION_S, derive_seed(master, "spontaneous", 0))?;
    spontaneous.write_to(&scenario_dir.join("spontaneous.raster"))?;

    // (2) site selection and (3) patterns
    let (patterns, sites) = scenario_patterns(scenario, &spontaneous)?;
    let mut sites_text = String::from("row,col\n");
    for site in &sites {
        sites_text.push_str(&format!("{},{}\n", site.row, site.col));
    }
    fs::write(scenario_dir.join("sites.csv"), sites_text)?;

    let class_count = patterns.len();
    let mut bio_per_class: Vec<Vec<Sample>> = Vec::with_capacity(class_count);

    // (4) protocol, (5) features, response maps
    for pattern in &patterns {
        let label = pattern.class_label;
        write_pattern(pattern, &scenario_dir.join(format!("pattern_{label}.txt")))?;
        let class_dir = scenario_dir.join(format!("class_{label}"));
        let mut trials = run_protocol(
            &state,
            pattern,
            &config.protocol,
            derive_seed(master, "protocol", label as u64),
        )?;
        if config.detect_from_traces {
            trials = redetect_trials(&trials, master, &format!("class-{label}"))?;
        }
        save_trials(&class_dir, &trials)?;

        let map = aggregate(&trials, DEFAULT_C_SAMPLES)?;
        emit_map_image(&map, &class_dir.join("respmap.ppm"))?;
        write_map_csv(&map, &class_dir.join("respmap.csv"))?;

        let mut features: Vec<FeatureVector> = Vec::with_capacity(trials.len());
        for (i, trial) in trials.iter().enumerate() {
            features.push(extract(
                trial,
                pattern,
                DEFAULT_C_SAMPLES,
                config.margin,
                i as u32,
            )?);
        }
        crate::features::write_features_csv(&features, &class_dir.join("features.csv"))?;

        bio_per_class.push(
            features
                .iter()
                .map(|f| Sample {
                    label: f.label,
                    features: f.scaled(DEFAULT_C_SAMPLES),
                })
                .collect(),
        );
    }

    // (5b) artificial reservoir path on the identical patterns
    let esn_config = EsnConfig {
        seed: derive_seed(master, "esn", 0),
        ..config.esn
    };
    let reservoir = build_reservoir(&esn_config)?;
    let noise = estimate_noise(&spontaneous, 25, derive_seed(master, "esn-noise", 0))?;
    let esn_dir = scenario_dir.join("esn");
    fs::create_dir_all(&esn_dir)?;
    let mut esn_per_class: Vec<Vec<Sample>> = Vec::with_capacity(class_count);
    for pattern in &patterns {
        let label = pattern.class_label;
        let mut rows: Vec<(u32, u32, Vec<f64>)> = Vec::new();
        let mut samples = Vec::new();
        for i in 0..config.protocol.repetitions_n {
            let state_vector = esn_features(
                &reservoir,
                pattern,
                &noise,
                derive_seed(master, &format!("esn-trial-{label}"), i as u64),
            )?;
            rows.push((label, i, state_vector.clone()));
            samples.push(Sample {
                label,
                features: state_vector,
            });
        }
        crate::features::write_rows_csv(&rows, &esn_dir.join(format!("class_{label}.csv")))?;
        esn_per_class.push(samples);
    }

    // (6) repeated paired split/train/evaluate
    let models_dir = scenario_dir.join("models");
    fs::create_dir_all(&models_dir)?;
    let mut brc_per_class_acc: Vec<Vec<f64>> = vec![Vec::new(); class_count];
    let mut esn_per_class_acc: Vec<Vec<f64>> = vec![Vec::new(); class_count];
    for repeat in 0..config.repeats_r {
        let split_spec = SplitSpec {
            seed: derive_seed(master, "split", repeat as u64),
            ..config.split
        };
        let train_spec = TrainSpec {
            seed: derive_seed(master, "train", repeat as u64),
            ..config.train
        };
        let (brc_train, brc_test) = classifier::split(&bio_per_class, &split_spec)?;
        let (esn_train, esn_test) = classifier::split(&esn_per_class, &split_spec)?;

        let brc_report = classifier::train(&brc_train, &train_spec, class_count)?;
        let esn_report = classifier::train(&esn_train, &train_spec, class_count)?;
        classifier::write_model(
            &brc_report.model,
            &models_dir.join(format!("repeat_{repeat}_brc.model")),
        )?;
        classifier::write_model(
            &esn_report.model,
            &models_dir.join(format!("repeat_{repeat}_esn.model")),
        )?;

        let brc_eval = classifier::evaluate(&brc_report.model, &brc_test)?;
        let esn_eval = classifier::evaluate(&esn_report.model, &esn_test)?;
        for k in 0..class_count {
            brc_per_class_acc[k].push(brc_eval.per_class[k]);
            esn_per_class_acc[k].push(esn_eval.per_class[k]);
        }
    }

    // (7) aggregate
    let mut classes = Vec::with_capacity(class_count);
    for k in 0..class_count {
        let (brc_mean, brc_sd) = mean_sd(&brc_per_class_acc[k]);
        let (esn_mean, esn_sd) = mean_sd(&esn_per_class_acc[k]);
        classes.push(ClassResult {
            class_name: class_name(scenario, k),
            brc_mean,
            brc_sd,
            esn_mean,
            esn_sd,
        });
    }
    let n = classes.len() as f64;
    let average = ClassResult {
        class_name: "average".into(),
        brc_mean: classes.iter().map(|c| c.brc_mean).sum::<f64>() / n,
        brc_sd: classes.iter().map(|c| c.brc_sd).sum::<f64>() / n,
        esn_mean: classes.iter().map(|c| c.esn_mean).sum::<f64>() / n,
        esn_sd: classes.iter().map(|c| c.esn_sd).sum::<f64>() / n,
    };
    let table = ResultsTable {
        scenario,
        classes,
        average,
    };

    // (8) reports and manifest
    emit_report(&table, &out_dir.join("results.csv"), &out_dir.join("results.txt"))?;
    write_manifest(out_dir)?;
    Ok(table)
}

/// CSV rendering of a results table (class rows then the average row).
pub fn results_csv_string(table: &ResultsTable) -> String {
    let mut out = String::from("scenario,class,brc_mean,brc_sd,esn_mean,esn_sd\n");
    for row in table.classes.iter().chain(std::iter::once(&table.average)) {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4}\n",
            table.scenario, row.class_name, row.brc_mean, row.brc_sd, row.esn_mean, row.esn_sd
        ));
    }
    out
}

/// Human-readable rendering mirroring the table layout of the accuracy
/// summary: one row per class, then the scenario average. Values are rounded
/// like the CSV so both renderings agree.
pub fn results_text_string(table: &ResultsTable) -> String {
    let round4 = |v: f64| (v * 10_000.0).round() / 10_000.0;
    let mut out = String::new();
    out.push_str(&format!("Scenario: {}\n", table.scenario));
    out.push_str(&format!(
        "  {:<12} {:>18} {:>18}\n",
        "class", "BRC acc (%)", "ESN acc (%)"
    ));
    for row in table.classes.iter().chain(std::iter::once(&table.average)) {
        out.push_str(&format!(
            "  {:<12} {:>9.1} +- {:>4.1} {:>9.1} +- {:>4.1}\n",
            row.class_name,
            100.0 * round4(row.brc_mean),
            100.0 * round4(row.brc_sd),
            100.0 * round4(row.esn_mean),
            100.0 * round4(row.esn_sd),
        ));
    }
    out
}

/// Writes the CSV and text reports.
pub fn emit_report(table: &ResultsTable, csv_path: &Path, text_path: &Path) -> Result<()> {
    if table.classes.is_empty() {
        return Err(Error::InvalidConfig("results table has no classes".into()));
    }
    fs::write(csv_path, results_csv_string(table))?;
    fs::write(text_path, results_text_string(table))?;
    Ok(())
}

fn collect_files(dir: &Path, base: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.path());
    for entry in entries {
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, base, files)?;
        } else {
            files.push(path.strip_prefix(base).unwrap().to_path_buf());
        }
    }
    Ok(())
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes `manifest.txt`: one `sha256  relative/path` line per artifact file
/// (sorted), excluding the manifest itself.
pub fn write_manifest(out_dir: &Path) -> Result<()> {
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files)?;
    let mut out = String::new();
    for rel in files {
        if rel == Path::new("manifest.txt") {
            continue;
        }
        let hash = sha256_hex(&out_dir.join(&rel))?;
        out.push_str(&format!("{hash}  {}\n", rel.display()));
    }
    fs::write(out_dir.join("manifest.txt"), out)?;
    Ok(())
}

/// Recomputes every hash in `manifest.txt`; errors on the first mismatch or
/// missing file.
pub fn verify_manifest(out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(out_dir.join("manifest.txt"))?;
    for (ln, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((hash, rel)) = line.split_once("  ") else {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "expected '<sha256>  <path>'".into(),
            });
        };
        let actual = sha256_hex(&out_dir.join(rel))?;
        if actual != hash {
            return Err(Error::Format(format!(
                "hash mismatch for {rel}: manifest {hash}, actual {actual}"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ResultsTable {
        let classes = vec![
            ClassResult {
                class_name: "point_1".into(),
                brc_mean: 1.0,
                brc_sd: 0.0,
                esn_mean: 0.9,
                esn_sd: 0.1,
            },
            ClassResult {
                class_name: "point_2".into(),
                brc_mean: 0.8,
                brc_sd: 0.2,
                esn_mean: 0.7,
                esn_sd: 0.3,
            },
        ];
        let average = ClassResult {
            class_name: "average".into(),
            brc_mean: 0.9,
            brc_sd: 0.1,
            esn_mean: 0.8,
            esn_sd: 0.2,
        };
        ResultsTable {
            scenario: Scenario::Pointwise,
            classes,
            average,
        }
    }

    #[test]
    fn csv_layout_is_fixed() {
        let expected = "scenario,class,brc_mean,brc_sd,esn_mean,esn_sd\n\
                        pointwise,point_1,1.0000,0.0000,0.9000,0.1000\n\
                        pointwise,point_2,0.8000,0.2000,0.7000,0.3000\n\
                        pointwise,average,0.9000,0.1000,0.8000,0.2000\n";
        assert_eq!(results_csv_string(&table()), expected);
    }

    #[test]
    fn average_row_is_mean_of_class_rows() {
        let t = table();
        let mean_brc: f64 =
            t.classes.iter().map(|c| c.brc_mean).sum::<f64>() / t.classes.len() as f64;
        assert!((t.average.brc_mean - mean_brc).abs() < 1e-12);
    }

    #[test]
    fn empty_table_errors() {
        let empty = ResultsTable {
            scenario: Scenario::Pointwise,
            classes: vec![],
            average: table().average,
        };
        let dir = std::env::temp_dir();
        assert!(emit_report(&empty, &dir.join("r.csv"), &dir.join("r.txt")).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = std::env::temp_dir().join(format!("manifest-test-{}", std::process::id()));
        fs::create_dir_all(dir.join("sub")).unwrap();
        fs::write(dir.join("a.txt"), "alpha").unwrap();
        fs::write(dir.join("sub/b.txt"), "beta").unwrap();
        write_manifest(&dir).unwrap();
        verify_manifest(&dir).unwrap();
        // tamper
        fs::write(dir.join("a.txt"), "gamma").unwrap();
        assert!(verify_manifest(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sd_zero_for_single_repeat() {
        let (mean, sd) = mean_sd(&[0.75]);
        assert_eq!(mean, 0.75);
        assert_eq!(sd, 0.0);
    }
}
