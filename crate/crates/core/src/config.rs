//! Flat key-value configuration files: `key = value` lines, `#` comments,
//! section prefixes like `culture.membrane_tau_ms = 15`. Unknown keys are
//! rejected so typos fail loudly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::classifier::{SplitSpec, TrainSpec};
use crate::culture::CultureConfig;
use crate::error::{Error, Result};
use crate::esn::EsnConfig;
use crate::mea::Scenario;

/// Parsed key-value store; typed getters consume keys and [`KeyValues::finish`]
/// rejects leftovers.
#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected 'key = value', got {line:?}"),
                });
            };
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), (ln + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("duplicate key {key:?}"),
                });
            }
        }
        Ok(Self { entries })
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    pub fn take_parsed<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        match self.take_raw(key) {
            None => Ok(default),
            Some((line, value)) => value.parse().map_err(|e| Error::Parse {
                line,
                msg: format!("bad value for {key}: {e}"),
            }),
        }
    }

    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take_raw(key) {
            None => Ok(default),
            Some((line, value)) => match value.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                other => Err(Error::Parse {
                    line,
                    msg: format!("bad boolean for {key}: {other:?}"),
                }),
            },
        }
    }

    pub fn take_scenario(&mut self, key: &str, default: Scenario) -> Result<Scenario> {
        match self.take_raw(key) {
            None => Ok(default),
            Some((line, value)) => Scenario::parse(&value).map_err(|_| Error::Parse {
                line,
                msg: format!("bad scenario {value:?} (pointwise|bars|digits)"),
            }),
        }
    }

    /// Errors if any key was never consumed.
    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().next() {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key {key:?}"),
            });
        }
        Ok(())
    }
}

pub fn culture_from_kv(kv: &mut KeyValues, prefix: &str) -> Result<CultureConfig> {
    let d = CultureConfig::default();
    let key = |name: &str| format!("{prefix}{name}");
    Ok(CultureConfig {
        neurons_per_electrode: kv
            .take_parsed(&key("neurons_per_electrode"), d.neurons_per_electrode)?,
        membrane_tau_ms: kv.take_parsed(&key("membrane_tau_ms"), d.membrane_tau_ms)?,
        threshold_mv: kv.take_parsed(&key("threshold_mv"), d.threshold_mv)?,
        reset_mv: kv.take_parsed(&key("reset_mv"), d.reset_mv)?,
        refractory_ms: kv.take_parsed(&key("refractory_ms"), d.refractory_ms)?,
        synapse_sparsity: kv.take_parsed(&key("synapse_sparsity"), d.synapse_sparsity)?,
        synaptic_weight_scale: kv
            .take_parsed(&key("synaptic_weight_scale"), d.synaptic_weight_scale)?,
        connection_radius: kv.take_parsed(&key("connection_radius"), d.connection_radius)?,
        background_rate_hz: kv.take_parsed(&key("background_rate_hz"), d.background_rate_hz)?,
        stim_gain_mv_per_ua: kv.take_parsed(&key("stim_gain_mv_per_ua"), d.stim_gain_mv_per_ua)?,
        seed: kv.take_parsed(&key("seed"), d.seed)?,
    })
}

pub fn culture_to_string(config: &CultureConfig, prefix: &str) -> String {
    format!(
        "{prefix}neurons_per_electrode = {}\n\
         {prefix}membrane_tau_ms = {}\n\
         {prefix}threshold_mv = {}\n\
         {prefix}reset_mv = {}\n\
         {prefix}refractory_ms = {}\n\
         {prefix}synapse_sparsity = {}\n\
         {prefix}synaptic_weight_scale = {}\n\
         {prefix}connection_radius = {}\n\
         {prefix}background_rate_hz = {}\n\
         {prefix}stim_gain_mv_per_ua = {}\n\
         {prefix}seed = {}\n",
        config.neurons_per_electrode,
        config.membrane_tau_ms,
        config.threshold_mv,
        config.reset_mv,
        config.refractory_ms,
        config.synapse_sparsity,
        config.synaptic_weight_scale,
        config.connection_radius,
        config.background_rate_hz,
        config.stim_gain_mv_per_ua,
        config.seed,
    )
}

pub fn esn_from_kv(kv: &mut KeyValues, prefix: &str) -> Result<EsnConfig> {
    let d = EsnConfig::default();
    let key = |name: &str| format!("{prefix}{name}");
    Ok(EsnConfig {
        n_units: kv.take_parsed(&key("n_units"), d.n_units)?,
        sparsity: kv.take_parsed(&key("sparsity"), d.sparsity)?,
        spectral_radius: kv.take_parsed(&key("spectral_radius"), d.spectral_radius)?,
        input_scale: kv.take_parsed(&key("input_scale"), d.input_scale)?,
        seed: kv.take_parsed(&key("seed"), d.seed)?,
    })
}

pub fn esn_to_string(config: &EsnConfig, prefix: &str) -> String {
    format!(
        "{prefix}n_units = {}\n{prefix}sparsity = {}\n{prefix}spectral_radius = {}\n\
         {prefix}input_scale = {}\n{prefix}seed = {}\n",
        config.n_units, config.sparsity, config.spectral_radius, config.input_scale, config.seed,
    )
}

/// Parses a standalone culture config file (`culture.` prefix optional keys).
pub fn parse_culture_config(text: &str) -> Result<CultureConfig> {
    let mut kv = KeyValues::parse(text)?;
    let config = culture_from_kv(&mut kv, "culture.")?;
    kv.finish()?;
    config.validate()?;
    Ok(config)
}

pub fn parse_esn_config(text: &str) -> Result<EsnConfig> {
    let mut kv = KeyValues::parse(text)?;
    let config = esn_from_kv(&mut kv, "esn.")?;
    kv.finish()?;
    config.validate()?;
    Ok(config)
}

/// Everything a full experiment run needs. All stage seeds derive from
/// `master_seed`; the sub-config `seed` fields only matter when the
/// sub-configs are used standalone.
#[derive(Clone, PartialEq, Debug)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub culture: CultureConfig,
    pub protocol: crate::culture::ProtocolSpec,
    pub esn: EsnConfig,
    pub split: SplitSpec,
    pub train: TrainSpec,
    pub repeats_r: u32,
    pub margin: u32,
    pub detect_from_traces: bool,
    pub master_seed: u64,
}

impl ExperimentConfig {
    /// Committed defaults per scenario. Pointwise and bars use the
    /// local-connectivity culture; digits use the sparse long-range culture
    /// (see [`CultureConfig::long_range`]).
    pub fn default_for(scenario: Scenario, master_seed: u64) -> Self {
        let culture = match scenario {
            Scenario::Pointwise | Scenario::Bars => CultureConfig::default(),
            Scenario::Digits => CultureConfig::long_range(),
        };
        Self {
            scenario,
            culture,
            protocol: crate::culture::ProtocolSpec::default(),
            esn: EsnConfig::default(),
            split: SplitSpec::default(),
            train: TrainSpec::default(),
            repeats_r: 10,
            margin: crate::features::DEFAULT_MARGIN,
            detect_from_traces: false,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.culture.validate()?;
        self.protocol.validate()?;
        self.esn.validate()?;
        self.train.validate()?;
        if self.repeats_r < 1 {
            return Err(Error::InvalidConfig("repeats_r must be >= 1".into()));
        }
        if self.split.n_train + self.split.n_test != self.protocol.repetitions_n as usize {
            return Err(Error::InvalidConfig(format!(
                "split sizes {}+{} must equal protocol repetitions {}",
                self.split.n_train, self.split.n_test, self.protocol.repetitions_n
            )));
        }
        Ok(())
    }
}

pub fn parse_experiment_config(text: &str) -> Result<ExperimentConfig> {
    let mut kv = KeyValues::parse(text)?;
    let defaults = ExperimentConfig::default_for(Scenario::Pointwise, 0);
    let config = ExperimentConfig {
        scenario: kv.take_scenario("scenario", defaults.scenario)?,
        culture: culture_from_kv(&mut kv, "culture.")?,
        protocol: crate::culture::ProtocolSpec {
            repetitions_n: kv
                .take_parsed("protocol.repetitions_n", defaults.protocol.repetitions_n)?,
            interval_t_s: kv.take_parsed("protocol.interval_t_s", defaults.protocol.interval_t_s)?,
            pre_window_ms: kv
                .take_parsed("protocol.pre_window_ms", defaults.protocol.pre_window_ms)?,
            post_window_ms: kv
                .take_parsed("protocol.post_window_ms", defaults.protocol.post_window_ms)?,
        },
        esn: esn_from_kv(&mut kv, "esn.")?,
        split: SplitSpec {
            n_train: kv.take_parsed("split.n_train", defaults.split.n_train)?,
            n_test: kv.take_parsed("split.n_test", defaults.split.n_test)?,
            seed: kv.take_parsed("split.seed", defaults.split.seed)?,
        },
        train: TrainSpec {
            epochs: kv.take_parsed("train.epochs", defaults.train.epochs)?,
            learning_rate: kv.take_parsed("train.learning_rate", defaults.train.learning_rate)?,
            batch_size: kv.take_parsed("train.batch_size", defaults.train.batch_size)?,
            seed: kv.take_parsed("train.seed", defaults.train.seed)?,
        },
        repeats_r: kv.take_parsed("repeats_r", defaults.repeats_r)?,
        margin: kv.take_parsed("margin", defaults.margin)?,
        detect_from_traces: kv.take_bool("detect_from_traces", defaults.detect_from_traces)?,
        master_seed: kv.take_parsed("master_seed", defaults.master_seed)?,
    };
    kv.finish()?;
    config.validate()?;
    Ok(config)
}

pub fn experiment_to_string(config: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("scenario = {}\n", config.scenario));
    out.push_str(&format!("master_seed = {}\n", config.master_seed));
    out.push_str(&format!("repeats_r = {}\n", config.repeats_r));
    out.push_str(&format!("margin = {}\n", config.margin));
    out.push_str(&format!("detect_from_traces = {}\n", config.detect_from_traces));
    out.push_str(&culture_to_string(&config.culture, "culture."));
    out.push_str(&format!(
        "protocol.repetitions_n = {}\nprotocol.interval_t_s = {}\n\
         protocol.pre_window_ms = {}\nprotocol.post_window_ms = {}\n",
        config.protocol.repetitions_n,
        config.protocol.interval_t_s,
        config.protocol.pre_window_ms,
        config.protocol.post_window_ms,
    ));
    out.push_str(&esn_to_string(&config.esn, "esn."));
    out.push_str(&format!(
        "split.n_train = {}\nsplit.n_test = {}\nsplit.seed = {}\n",
        config.split.n_train, config.split.n_test, config.split.seed,
    ));
    out.push_str(&format!(
        "train.epochs = {}\ntrain.learning_rate = {}\ntrain.batch_size = {}\ntrain.seed = {}\n",
        config.train.epochs, config.train.learning_rate, config.train.batch_size, config.train.seed,
    ));
    out
}

pub fn read_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    parse_experiment_config(&fs::read_to_string(path)?)
}
