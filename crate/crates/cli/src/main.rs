//! Command-line front end for the MEA reservoir workbench.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mea_reservoir_core::classifier::{self, SplitSpec, TrainSpec};
use mea_reservoir_core::config::{
    parse_culture_config, parse_esn_config, read_experiment_config, ExperimentConfig,
};
use mea_reservoir_core::culture::{
    build_culture, find_hotspots, run_protocol, simulate_spontaneous, ProtocolSpec,
};
use mea_reservoir_core::detect::{detect_spikes, read_trace, DetectorParams};
use mea_reservoir_core::error::{Error, Result};
use mea_reservoir_core::esn::{
    build_reservoir, esn_features, estimate_noise, EsnConfig, NoiseModel,
};
use mea_reservoir_core::experiment::{results_text_string, run_experiment, verify_manifest};
use mea_reservoir_core::features::{extract, write_features_csv, write_rows_csv, DEFAULT_MARGIN};
use mea_reservoir_core::mea::{
    make_bar, make_digit, make_pointwise, read_pattern, validate_pattern, write_pattern, Digit,
    Direction, ElectrodeCoord, Orientation, Scenario,
};
use mea_reservoir_core::raster::{load_trials, save_trials, SpikeRaster};
use mea_reservoir_core::seed::derive_seed;
use mea_reservoir_core::stats::{aggregate, emit_map_image, write_map_csv, DEFAULT_C_SAMPLES};

/// Default master seed for experiment runs.
const DEFAULT_MASTER_SEED: u64 = 7;

#[derive(Parser)]
#[command(name = "mea-reservoir", about = "Simulated MEA reservoir computing workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stimulus pattern generation and validation
    Pattern {
        #[command(subcommand)]
        command: PatternCommand,
    },
    /// Culture simulation
    Simulate {
        #[command(subcommand)]
        command: SimulateCommand,
    },
    /// Spike detection on a voltage trace file
    Detect {
        /// Trace file (binary MEATRACE format)
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        threshold_k: f64,
        #[arg(long, default_value_t = 1.0)]
        peak_lifetime_ms: f64,
        #[arg(long, default_value_t = 2.0)]
        refractory_ms: f64,
    },
    /// Response map from a recorded trial set
    Respmap {
        /// Directory holding trials.csv and trial rasters
        #[arg(long)]
        trials: PathBuf,
        /// Output stem; writes <out>.ppm and <out>.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature extraction
    Features {
        #[command(subcommand)]
        command: FeaturesCommand,
    },
    /// Artificial reservoir baseline
    Esn {
        #[command(subcommand)]
        command: EsnCommand,
    },
    /// Linear readout training and evaluation
    Clf {
        #[command(subcommand)]
        command: ClfCommand,
    },
    /// Full experiment orchestration
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
    /// Re-render the text report from a results CSV
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Subcommand)]
enum PatternCommand {
    /// Generate a stimulus pattern file
    Gen(PatternGenArgs),
    /// Validate a pattern file, printing violations
    Validate {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Args)]
struct PatternGenArgs {
    /// Pattern family: pointwise | bars | digits
    #[arg(long)]
    scenario: String,
    /// Center (pointwise/bars) or top-left anchor (digits) as "row,col"
    #[arg(long)]
    center: String,
    #[arg(long, default_value_t = 0)]
    label: u32,
    /// Pointwise: negative-pole direction N|E|S|W
    #[arg(long, default_value = "E")]
    direction: String,
    /// Bars: orientation in degrees (0|45|90|135)
    #[arg(long, default_value_t = 0)]
    orientation: u32,
    /// Bars: number of pairs
    #[arg(long, default_value_t = 5)]
    n_pairs: usize,
    /// Bars: dilation steps between consecutive pairs
    #[arg(long, default_value_t = 1)]
    dilation: u32,
    /// Digits: which digit (0|1|8)
    #[arg(long, default_value_t = 1)]
    digit: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SimulateCommand {
    /// Simulate spontaneous activity and write a raster file
    Spontaneous {
        /// Culture config file (flat key-value, `culture.` keys)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also print the top-k hotspots
        #[arg(long, default_value_t = 0)]
        hotspots: usize,
    },
    /// Run the repeated stimulation protocol for one pattern
    Protocol {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stimulus pattern file
        #[arg(long)]
        pattern: PathBuf,
        #[arg(long, default_value_t = 25)]
        repetitions: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory for trial rasters + trials.csv
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum FeaturesCommand {
    /// Extract feature vectors from a trial set
    Extract {
        /// Directory holding trials.csv (from `simulate protocol`)
        #[arg(long)]
        trials: PathBuf,
        /// The stimulus pattern the trials responded to
        #[arg(long)]
        pattern: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MARGIN)]
        margin: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EsnCommand {
    /// Build the reservoir and report its spectral scaling
    Build {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        seed: u64,
    },
    /// Produce reservoir state vectors for a pattern (feature CSV)
    Features {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pattern: PathBuf,
        /// Spontaneous raster used to calibrate input noise
        #[arg(long)]
        spontaneous: PathBuf,
        #[arg(long, default_value_t = 25)]
        trials: u32,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ClfCommand {
    /// Split a feature CSV, train the perceptron, report test accuracy
    Train {
        /// Feature CSVs (one or more; rows carry their class labels)
        #[arg(long, required = true)]
        features: Vec<PathBuf>,
        #[arg(long, default_value_t = 20)]
        n_train: usize,
        #[arg(long, default_value_t = 5)]
        n_test: usize,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        learning_rate: f64,
        #[arg(long, default_value_t = 1)]
        batch_size: usize,
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on a feature CSV
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, required = true)]
        features: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run a full scenario end to end
    Run {
        /// Experiment config file; committed defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario override: pointwise | bars | digits
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Recover rasters through trace synthesis + spike detection
        #[arg(long, default_value_t = false)]
        detect_from_traces: bool,
    },
    /// Verify the artifact manifest of a previous run
    Verify {
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn parse_coord(s: &str) -> Result<ElectrodeCoord> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Parse {
            line: 0,
            msg: format!("expected 'row,col', got {s:?}"),
        });
    }
    let row: usize = parts[0].trim().parse().map_err(|e| Error::Parse {
        line: 0,
        msg: format!("bad row: {e}"),
    })?;
    let col: usize = parts[1].trim().parse().map_err(|e| Error::Parse {
        line: 0,
        msg: format!("bad col: {e}"),
    })?;
    ElectrodeCoord::new(row, col)
}

fn load_culture_config(
    path: &Option<PathBuf>,
) -> Result<mea_reservoir_core::culture::CultureConfig> {
    match path {
        Some(p) => parse_culture_config(&std::fs::read_to_string(p)?),
        None => Ok(mea_reservoir_core::culture::CultureConfig::default()),
    }
}

fn load_esn_config(path: &Option<PathBuf>) -> Result<EsnConfig> {
    match path {
        Some(p) => parse_esn_config(&std::fs::read_to_string(p)?),
        None => Ok(EsnConfig::default()),
    }
}

fn pattern_gen(args: &PatternGenArgs) -> Result<()> {
    let center = parse_coord(&args.center)?;
    let pattern = match Scenario::parse(&args.scenario)? {
        Scenario::Pointwise => {
            make_pointwise(center, Direction::parse(&args.direction)?, args.label)?
        }
        Scenario::Bars => make_bar(
            center,
            Orientation::from_degrees(args.orientation)?,
            args.n_pairs,
            args.dilation,
            args.label,
        )?,
        Scenario::Digits => make_digit(Digit::from_value(args.digit)?, center, args.label)?,
    };
    write_pattern(&pattern, &args.out)?;
    println!("wrote {} pairs to {}", pattern.pairs.len(), args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pattern { command } => match command {
            PatternCommand::Gen(args) => pattern_gen(&args),
            PatternCommand::Validate { file } => {
                let pattern = read_pattern(&file)?;
                let report = validate_pattern(&pattern);
                if report.is_ok() {
                    println!("ok: {} pairs", pattern.pairs.len());
                    Ok(())
                } else {
                    for violation in &report.violations {
                        println!("violation: {violation}");
                    }
                    Err(Error::InvalidPattern(format!(
                        "{} violation(s)",
                        report.violations.len()
                    )))
                }
            }
        },
        Command::Simulate { command } => match command {
            SimulateCommand::Spontaneous {
                config,
                duration_s,
                seed,
                out,
                hotspots,
            } => {
                let culture = load_culture_config(&config)?;
                let state = build_culture(&culture)?;
                let raster = simulate_spontaneous(&state, duration_s, seed)?;
                raster.write_to(&out)?;
                println!(
                    "wrote {} spikes over {} samples to {}",
                    raster.total_spikes(),
                    raster.duration_samples(),
                    out.display()
                );
                if hotspots > 0 {
                    for spot in find_hotspots(&raster, hotspots)? {
                        println!("hotspot: {},{}", spot.row, spot.col);
                    }
                }
                Ok(())
            }
            SimulateCommand::Protocol {
                config,
                pattern,
                repetitions,
                seed,
                out_dir,
            } => {
                let culture = load_culture_config(&config)?;
                let state = build_culture(&culture)?;
                let pattern = read_pattern(&pattern)?;
                let protocol = ProtocolSpec {
                    repetitions_n: repetitions,
                    ..ProtocolSpec::default()
                };
                let trials = run_protocol(&state, &pattern, &protocol, seed)?;
                save_trials(&out_dir, &trials)?;
                println!("wrote {} trials to {}", trials.len(), out_dir.display());
                Ok(())
            }
        },
        Command::Detect {
            trace,
            threshold_k,
            peak_lifetime_ms,
            refractory_ms,
        } => {
            let trace = read_trace(&trace)?;
            let params = DetectorParams {
                threshold_k,
                peak_lifetime_ms,
                refractory_ms,
            };
            let spikes = detect_spikes(&trace, &params)?;
            for s in &spikes {
                println!("{s}");
            }
            eprintln!("{} detections", spikes.len());
            Ok(())
        }
        Command::Respmap { trials, out } => {
            let trials = load_trials(&trials)?;
            let map = aggregate(&trials, DEFAULT_C_SAMPLES)?;
            let ppm = out.with_extension("ppm");
            let csv = out.with_extension("csv");
            emit_map_image(&map, &ppm)?;
            write_map_csv(&map, &csv)?;
            println!("wrote {} and {}", ppm.display(), csv.display());
            Ok(())
        }
        Command::Features { command } => match command {
            FeaturesCommand::Extract {
                trials,
                pattern,
                margin,
                out,
            } => {
                let trials = load_trials(&trials)?;
                let pattern = read_pattern(&pattern)?;
                let features = trials
                    .iter()
                    .enumerate()
                    .map(|(i, t)| extract(t, &pattern, DEFAULT_C_SAMPLES, margin, i as u32))
                    .collect::<Result<Vec<_>>>()?;
                write_features_csv(&features, &out)?;
                println!("wrote {} feature rows to {}", features.len(), out.display());
                Ok(())
            }
        },
        Command::Esn { command } => match command {
            EsnCommand::Build { config, seed } => {
                let mut esn = load_esn_config(&config)?;
                if config.is_none() {
                    esn.seed = seed;
                }
                let reservoir = build_reservoir(&esn)?;
                println!(
                    "n_units {} nnz {} raw spectral radius {:.6} scaled to {}",
                    esn.n_units,
                    reservoir.weights.nnz(),
                    reservoir.raw_spectral_radius,
                    esn.spectral_radius
                );
                Ok(())
            }
            EsnCommand::Features {
                config,
                pattern,
                spontaneous,
                trials,
                seed,
                out,
            } => {
                let esn = load_esn_config(&config)?;
                let reservoir = build_reservoir(&esn)?;
                let pattern = read_pattern(&pattern)?;
                let raster = SpikeRaster::read_from(&spontaneous)?;
                let noise: NoiseModel =
                    estimate_noise(&raster, 25, derive_seed(seed, "esn-noise", 0))?;
                let mut rows = Vec::with_capacity(trials as usize);
                for i in 0..trials {
                    let state = esn_features(
                        &reservoir,
                        &pattern,
                        &noise,
                        derive_seed(seed, "esn-trial", i as u64),
                    )?;
                    rows.push((pattern.class_label, i, state));
                }
                write_rows_csv(&rows, &out)?;
                println!("wrote {} state vectors to {}", rows.len(), out.display());
                Ok(())
            }
        },
        Command::Clf { command } => match command {
            ClfCommand::Train {
                features,
                n_train,
                n_test,
                epochs,
                learning_rate,
                batch_size,
                seed,
                out,
            } => {
                let per_class = load_feature_classes(&features)?;
                let class_count = per_class.len();
                let (train_set, test_set) = classifier::split(
                    &per_class,
                    &SplitSpec {
                        n_train,
                        n_test,
                        seed: derive_seed(seed, "split", 0),
                    },
                )?;
                let report = classifier::train(
                    &train_set,
                    &TrainSpec {
                        epochs,
                        learning_rate,
                        batch_size,
                        seed: derive_seed(seed, "train", 0),
                    },
                    class_count,
                )?;
                classifier::write_model(&report.model, &out)?;
                println!(
                    "trained {} classes, final epoch loss {:.6}",
                    class_count,
                    report.epoch_losses.last().unwrap()
                );
                if !test_set.is_empty() {
                    let eval = classifier::evaluate(&report.model, &test_set)?;
                    println!("held-out accuracy {:.4}", eval.accuracy);
                }
                println!("wrote model to {}", out.display());
                Ok(())
            }
            ClfCommand::Eval { model, features } => {
                let model = classifier::read_model(&model)?;
                let mut samples = Vec::new();
                for path in &features {
                    for (label, _, values) in mea_reservoir_core::features::read_rows_csv(path)? {
                        samples.push(classifier::Sample {
                            label,
                            features: values,
                        });
                    }
                }
                let eval = classifier::evaluate(&model, &samples)?;
                println!("accuracy,{:.4}", eval.accuracy);
                for (k, recall) in eval.per_class.iter().enumerate() {
                    println!("class_{k},{recall:.4}");
                }
                Ok(())
            }
        },
        Command::Experiment { command } => match command {
            ExperimentCommand::Run {
                config,
                scenario,
                seed,
                out_dir,
                detect_from_traces,
            } => {
                let mut experiment = match &config {
                    Some(path) => read_experiment_config(path)?,
                    None => {
                        ExperimentConfig::default_for(Scenario::Pointwise, DEFAULT_MASTER_SEED)
                    }
                };
                if let Some(s) = &scenario {
                    let parsed = Scenario::parse(s)?;
                    if config.is_none() {
                        experiment = ExperimentConfig::default_for(
                            parsed,
                            seed.unwrap_or(DEFAULT_MASTER_SEED),
                        );
                    } else {
                        experiment.scenario = parsed;
                    }
                }
                if let Some(s) = seed {
                    experiment.master_seed = s;
                }
                if detect_from_traces {
                    experiment.detect_from_traces = true;
                }
                let table = run_experiment(&experiment, &out_dir)?;
                print!("{}", results_text_string(&table));
                println!("artifacts in {}", out_dir.display());
                Ok(())
            }
            ExperimentCommand::Verify { out_dir } => {
                verify_manifest(&out_dir)?;
                println!("manifest ok");
                Ok(())
            }
        },
        Command::Report { results } => {
            let text = std::fs::read_to_string(&results)?;
            print!("{}", render_results_csv(&text)?);
            Ok(())
        }
    }
}

/// Groups labeled feature rows by class; labels must form 0..K.
fn load_feature_classes(paths: &[PathBuf]) -> Result<Vec<Vec<classifier::Sample>>> {
    let mut by_label: std::collections::BTreeMap<u32, Vec<classifier::Sample>> =
        std::collections::BTreeMap::new();
    for path in paths {
        for (label, _, values) in mea_reservoir_core::features::read_rows_csv(path)? {
            by_label.entry(label).or_default().push(classifier::Sample {
                label,
                features: values,
            });
        }
    }
    let labels: Vec<u32> = by_label.keys().cloned().collect();
    for (expected, &actual) in labels.iter().enumerate() {
        if expected as u32 != actual {
            return Err(Error::InvalidConfig(format!(
                "class labels must form 0..K, found {labels:?}"
            )));
        }
    }
    Ok(by_label.into_values().collect())
}

/// Rebuilds the aligned text table from a results CSV.
fn render_results_csv(csv: &str) -> Result<String> {
    let mut out = String::new();
    let mut current_scenario = String::new();
    for (ln, line) in csv.lines().enumerate() {
        if ln == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "expected 6 columns".into(),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::Parse {
                line: ln + 1,
                msg: format!("bad number {s:?}: {e}"),
            })
        };
        if fields[0] != current_scenario {
            current_scenario = fields[0].to_string();
            out.push_str(&format!("Scenario: {current_scenario}\n"));
            out.push_str(&format!(
                "  {:<12} {:>18} {:>18}\n",
                "class", "BRC acc (%)", "ESN acc (%)"
            ));
        }
        out.push_str(&format!(
            "  {:<12} {:>9.1} +- {:>4.1} {:>9.1} +- {:>4.1}\n",
            fields[1],
            100.0 * parse(fields[2])?,
            100.0 * parse(fields[3])?,
            100.0 * parse(fields[4])?,
            100.0 * parse(fields[5])?,
        ));
    }
    if out.is_empty() {
        return Err(Error::Format("results CSV has no rows".into()));
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
