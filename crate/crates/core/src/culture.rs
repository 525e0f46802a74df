//! Simulated stand-in for the cultured network: a recurrent
//! leaky-integrate-and-fire population anchored to the 64x64 electrode grid.
//!
//! The model is event-driven. Membrane potentials decay exponentially toward
//! rest (0 mV) and change only at events: background drive, stimulation
//! injections, and delta-synapse deliveries one synaptic delay after a
//! presynaptic spike. Because inputs are impulses, threshold crossings can
//! only happen at events, so skipping quiescent samples is exact.
//!
//! Every operation is a pure function of `(config, seed)`; repeated runs are
//! byte-identical. Randomness comes exclusively from `ChaCha8Rng` streams
//! seeded through [`crate::seed::derive_seed`].

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mea::{
    require_valid, ElectrodeCoord, PulseSpec, StimulusPattern, GRID_SIDE, SAMPLE_RATE_HZ,
};
use crate::raster::{SpikeRaster, TrialRecording};
use crate::seed::derive_seed;

/// Synaptic transmission delay.
pub const SYNAPTIC_DELAY_MS: f64 = 1.0;
/// Fraction of excitatory neurons; the rest project negative weights.
pub const EXCITATORY_FRACTION: f64 = 0.8;
/// Minimum pairwise Chebyshev distance between selected hotspots. Evoked
/// halos span roughly ten electrodes, so stimulation sites need at least
/// this much clearance to give distinguishable responses.
pub const HOTSPOT_MIN_SEPARATION: u32 = 24;

/// Simulated-culture parameters.
///
/// The stimulated electrodes each host several neurons that fire as a
/// synchronized volley; synaptic weights stay at half the firing threshold so
/// an isolated background spike can never ignite a cascade (two coincident
/// inputs cannot reach threshold), while three or more same-frame volley
/// inputs can. That gates propagation on stimulation and keeps spontaneous
/// activity at the background rate.
///
/// The defaults are the committed local-connectivity calibration used for the
/// pointwise and bar scenarios; [`CultureConfig::long_range`] is the committed
/// sparse long-range calibration used for the digit scenario, whose cascades
/// carry pattern identity past the excluded square.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct CultureConfig {
    pub neurons_per_electrode: u32,
    pub membrane_tau_ms: f64,
    pub threshold_mv: f64,
    pub reset_mv: f64,
    pub refractory_ms: f64,
    pub synapse_sparsity: f64,
    pub synaptic_weight_scale: f64,
    pub connection_radius: f64,
    pub background_rate_hz: f64,
    pub stim_gain_mv_per_ua: f64,
    pub seed: u64,
}

impl Default for CultureConfig {
    fn default() -> Self {
        Self {
            neurons_per_electrode: 8,
            membrane_tau_ms: 0.3,
            threshold_mv: 15.0,
            reset_mv: 0.0,
            refractory_ms: 10.0,
            synapse_sparsity: 0.55,
            synaptic_weight_scale: 7.5,
            connection_radius: 2.5,
            background_rate_hz: 1.0,
            stim_gain_mv_per_ua: 3.0,
            seed: 1,
        }
    }
}

impl CultureConfig {
    /// Sparse long-range calibration: fewer, farther synapses give each
    /// stimulated pair private projections well beyond the exclusion zone.
    pub fn long_range() -> Self {
        Self {
            neurons_per_electrode: 6,
            refractory_ms: 6.0,
            synapse_sparsity: 0.10,
            connection_radius: 12.0,
            background_rate_hz: 0.5,
            ..Self::default()
        }
    }
}

impl CultureConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.into()))
            }
        };
        check(self.neurons_per_electrode >= 1, "neurons_per_electrode must be >= 1")?;
        check(
            self.membrane_tau_ms > 0.0 && self.membrane_tau_ms.is_finite(),
            "membrane_tau_ms must be positive",
        )?;
        check(
            self.refractory_ms > 0.0 && self.refractory_ms.is_finite(),
            "refractory_ms must be positive",
        )?;
        check(self.threshold_mv > self.reset_mv, "threshold_mv must exceed reset_mv")?;
        check(
            self.synapse_sparsity > 0.0 && self.synapse_sparsity <= 1.0,
            "synapse_sparsity must be in (0, 1]",
        )?;
        check(
            self.synaptic_weight_scale >= 0.0 && self.synaptic_weight_scale.is_finite(),
            "synaptic_weight_scale must be non-negative",
        )?;
        check(
            self.connection_radius >= 0.0 && self.connection_radius.is_finite(),
            "connection_radius must be non-negative",
        )?;
        check(
            self.background_rate_hz >= 0.0 && self.background_rate_hz.is_finite(),
            "background_rate_hz must be non-negative",
        )?;
        check(self.stim_gain_mv_per_ua.is_finite(), "stim_gain_mv_per_ua must be finite")?;
        Ok(())
    }

    fn refractory_samples(&self) -> u32 {
        ((self.refractory_ms / 1000.0) * SAMPLE_RATE_HZ as f64).round() as u32
    }

    /// Background events depolarize by twice the threshold so an isolated
    /// event reliably fires a neuron at or near rest.
    fn background_kick_mv(&self) -> f64 {
        2.0 * self.threshold_mv
    }
}

/// Immutable built network: neuron types and the synapse table in CSR form.
/// Dynamic state (potentials, refractory clocks) lives inside each run.
#[derive(Clone, Debug)]
pub struct CultureState {
    config: CultureConfig,
    grid_side: usize,
    excitatory: Vec<bool>,
    syn_offsets: Vec<u32>,
    syn_targets: Vec<u32>,
    syn_weights: Vec<f64>,
}

impl CultureState {
    pub fn config(&self) -> &CultureConfig {
        &self.config
    }

    pub fn n_neurons(&self) -> usize {
        self.excitatory.len()
    }

    pub fn synapse_count(&self) -> usize {
        self.syn_targets.len()
    }

    pub fn excitatory_count(&self) -> usize {
        self.excitatory.iter().filter(|&&e| e).count()
    }

    fn neurons_of_electrode(&self, electrode_index: usize) -> std::ops::Range<u32> {
        let npe = self.config.neurons_per_electrode;
        (electrode_index as u32 * npe)..((electrode_index as u32 + 1) * npe)
    }

    fn anchor_electrode(&self, neuron: u32) -> usize {
        (neuron / self.config.neurons_per_electrode) as usize
    }
}

/// Builds the network deterministically from `config.seed`.
///
/// Neuron types are drawn first (one Bernoulli per neuron, in index order),
/// then outgoing synapses per source neuron: candidate targets are the
/// neurons anchored within `connection_radius` (Euclidean, electrode units),
/// scanned in row-major electrode order; each is accepted with probability
/// `synapse_sparsity` and assigned a weight uniform in (0, weight_scale],
/// signed by the source neuron's type.
pub fn build_culture(config: &CultureConfig) -> Result<CultureState> {
    build_culture_with_grid(config, GRID_SIDE)
}

/// Reduced-grid variant used by tests; `build_culture` is the 64x64 case.
pub(crate) fn build_culture_with_grid(config: &CultureConfig, side: usize) -> Result<CultureState> {
    config.validate()?;
    let npe = config.neurons_per_electrode as usize;
    let n_electrodes = side * side;
    let n_neurons = n_electrodes * npe;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let excitatory: Vec<bool> = (0..n_neurons)
        .map(|_| rng.gen::<f64>() < EXCITATORY_FRACTION)
        .collect();

    let radius = config.connection_radius;
    let reach = radius.floor() as i64;
    let radius_sq = radius * radius;
    let mut syn_offsets = Vec::with_capacity(n_neurons + 1);
    let mut syn_targets: Vec<u32> = Vec::new();
    let mut syn_weights: Vec<f64> = Vec::new();
    syn_offsets.push(0u32);
    for src in 0..n_neurons {
        let src_electrode = src / npe;
        let (r0, c0) = ((src_electrode / side) as i64, (src_electrode % side) as i64);
        for dr in -reach..=reach {
            let row = r0 + dr;
            if row < 0 || row >= side as i64 {
                continue;
            }
            for dc in -reach..=reach {
                let col = c0 + dc;
                if col < 0 || col >= side as i64 {
                    continue;
                }
                if (dr * dr + dc * dc) as f64 > radius_sq {
                    continue;
                }
                let electrode = (row as usize) * side + col as usize;
                for tgt in electrode * npe..(electrode + 1) * npe {
                    if tgt == src {
                        continue;
                    }
                    if rng.gen::<f64>() < config.synapse_sparsity {
                        // uniform in (0, scale]: 1 - u with u in [0, 1)
                        let magnitude = config.synaptic_weight_scale * (1.0 - rng.gen::<f64>());
                        let weight = if excitatory[src] { magnitude } else { -magnitude };
                        syn_targets.push(tgt as u32);
                        syn_weights.push(weight);
                    }
                }
            }
        }
        syn_offsets.push(syn_targets.len() as u32);
    }

    Ok(CultureState {
        config: *config,
        grid_side: side,
        excitatory,
        syn_offsets,
        syn_targets,
        syn_weights,
    })
}

/// Renders a pulse as one signed current sample (uA) per frame. Phase widths
/// round up to whole frames, so any positive width yields at least one frame.
pub fn render_pulse(pulse: &PulseSpec, sample_rate_hz: u32) -> Vec<f64> {
    let frames = |width_us: f64| -> usize {
        if width_us <= 0.0 {
            0
        } else {
            (width_us * sample_rate_hz as f64 / 1e6).ceil() as usize
        }
    };
    let n_pos = frames(pulse.width_pos_us);
    let n_neg = frames(pulse.width_neg_us);
    let mut waveform = Vec::with_capacity(n_pos + n_neg);
    waveform.extend(std::iter::repeat(pulse.amplitude_ua).take(n_pos));
    waveform.extend(std::iter::repeat(-pulse.amplitude_ua).take(n_neg));
    waveform
}

/// Protocol parameters for repeated stimulation.
///
/// `interval_t_s` is the nominal inter-trial interval; the simulator realizes
/// it by resetting dynamic state to rest between trials instead of simulating
/// the gap, and keeps the value as metadata.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ProtocolSpec {
    pub repetitions_n: u32,
    pub interval_t_s: f64,
    pub pre_window_ms: f64,
    pub post_window_ms: f64,
}

impl Default for ProtocolSpec {
    fn default() -> Self {
        Self {
            repetitions_n: 25,
            interval_t_s: 10.0,
            pre_window_ms: 15.0,
            post_window_ms: 15.0,
        }
    }
}

impl ProtocolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions_n < 2 {
            return Err(Error::InvalidConfig(
                "repetitions_n must be >= 2 (statistics require it)".into(),
            ));
        }
        if !(self.pre_window_ms >= 10.0) || !(self.post_window_ms >= 10.0) {
            return Err(Error::InvalidConfig(
                "pre/post windows must be at least 10 ms".into(),
            ));
        }
        if !(self.interval_t_s > 0.0) {
            return Err(Error::InvalidConfig("interval_t_s must be positive".into()));
        }
        Ok(())
    }

    pub fn pre_samples(&self) -> u32 {
        ((self.pre_window_ms / 1000.0) * SAMPLE_RATE_HZ as f64).round() as u32
    }

    pub fn post_samples(&self) -> u32 {
        ((self.post_window_ms / 1000.0) * SAMPLE_RATE_HZ as f64).round() as u32
    }
}

// deterministic integer power; avoids libm pow in the hot path
fn pow_u32(base: f64, mut exp: u32) -> f64 {
    let mut acc = 1.0;
    let mut b = base;
    while exp > 0 {
        if exp & 1 == 1 {
            acc *= b;
        }
        b *= b;
        exp >>= 1;
    }
    acc
}

/// Core event loop shared by trials and spontaneous runs. `stim_events` are
/// `(sample, neuron, delta_mv)` injections, already in delivery order.
fn simulate_events(
    state: &CultureState,
    duration_samples: u32,
    stim_events: &[(u32, u32, f64)],
    rng: &mut ChaCha8Rng,
) -> SpikeRaster {
    assert_eq!(
        state.grid_side, GRID_SIDE,
        "only full-grid cultures can be simulated"
    );
    let config = &state.config;
    let n = state.n_neurons();
    let fs = SAMPLE_RATE_HZ as f64;
    let decay = (-1.0 / (fs * config.membrane_tau_ms / 1000.0)).exp();
    let refr_samples = config.refractory_samples();
    let delay_samples = ((SYNAPTIC_DELAY_MS / 1000.0) * fs).round().max(1.0) as u32;
    let kick = config.background_kick_mv();

    let mut buckets: Vec<Vec<(u32, f64)>> = vec![Vec::new(); duration_samples as usize];

    // background drive: per-neuron Poisson arrivals via exponential gaps
    if config.background_rate_hz > 0.0 {
        for neuron in 0..n as u32 {
            let mut t = 0.0f64;
            loop {
                let u: f64 = rng.gen();
                t += -(1.0 - u).ln() / config.background_rate_hz;
                let sample = (t * fs) as u64;
                if sample >= duration_samples as u64 {
                    break;
                }
                buckets[sample as usize].push((neuron, kick));
            }
        }
    }
    for &(sample, neuron, dv) in stim_events {
        if sample < duration_samples {
            buckets[sample as usize].push((neuron, dv));
        }
    }

    let mut raster = SpikeRaster::empty(duration_samples);
    let mut v = vec![0.0f64; n];
    let mut last_update = vec![0u32; n];
    let mut refr_until = vec![0u32; n];

    for s in 0..duration_samples {
        if buckets[s as usize].is_empty() {
            continue;
        }
        let bucket = std::mem::take(&mut buckets[s as usize]);
        for (neuron, dv) in bucket {
            let i = neuron as usize;
            if s < refr_until[i] {
                continue; // membrane clamped during refractory period
            }
            let dt = s - last_update[i];
            if dt > 0 {
                v[i] *= pow_u32(decay, dt);
                last_update[i] = s;
            }
            v[i] += dv;
            if v[i] >= config.threshold_mv {
                raster.push_spike(state.anchor_electrode(neuron), s);
                v[i] = config.reset_mv;
                refr_until[i] = s + refr_samples;
                let delivery = s + delay_samples;
                if delivery < duration_samples {
                    let from = state.syn_offsets[i] as usize;
                    let to = state.syn_offsets[i + 1] as usize;
                    for k in from..to {
                        buckets[delivery as usize].push((state.syn_targets[k], state.syn_weights[k]));
                    }
                }
            }
        }
    }
    raster
}

/// Runs one stimulation trial: `pre_window + pulse + post_window` of
/// simulated recording. Neurons at each pair's positive electrode receive
/// `+stim_gain * I(t)` millivolts per pulse frame, negative-pole neurons the
/// opposite sign. Returns the electrode-level raster and the onset sample.
pub fn run_trial(
    state: &CultureState,
    pattern: &StimulusPattern,
    protocol: &ProtocolSpec,
    trial_seed: u64,
) -> Result<TrialRecording> {
    require_valid(pattern)?;
    protocol.validate()?;
    let waveform = render_pulse(&pattern.pulse, SAMPLE_RATE_HZ);
    let pre = protocol.pre_samples();
    let post = protocol.post_samples();
    let duration = pre + waveform.len() as u32 + post;

    let gain = state.config.stim_gain_mv_per_ua;
    let mut stim_events = Vec::new();
    for (k, &current_ua) in waveform.iter().enumerate() {
        if current_ua == 0.0 {
            continue;
        }
        let sample = pre + k as u32;
        for pair in &pattern.pairs {
            for neuron in state.neurons_of_electrode(pair.positive.index()) {
                stim_events.push((sample, neuron, gain * current_ua));
            }
            for neuron in state.neurons_of_electrode(pair.negative.index()) {
                stim_events.push((sample, neuron, -gain * current_ua));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let raster = simulate_events(state, duration, &stim_events, &mut rng);
    Ok(TrialRecording {
        raster,
        stimulus_onset_sample: pre,
        pattern_label: pattern.class_label,
    })
}

/// Runs the full protocol: `repetitions_n` independent trials with state
/// reset to rest between them. Trial seeds derive from `(seed, "trial", i)`.
pub fn run_protocol(
    state: &CultureState,
    pattern: &StimulusPattern,
    protocol: &ProtocolSpec,
    seed: u64,
) -> Result<Vec<TrialRecording>> {
    protocol.validate()?;
    (0..protocol.repetitions_n)
        .map(|i| run_trial(state, pattern, protocol, derive_seed(seed, "trial", i as u64)))
        .collect()
}

/// Simulates unstimulated activity for hotspot selection and noise
/// calibration.
pub fn simulate_spontaneous(
    state: &CultureState,
    duration_s: f64,
    seed: u64,
) -> Result<SpikeRaster> {
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "spontaneous duration must be positive, got {duration_s}"
        )));
    }
    let duration = (duration_s * SAMPLE_RATE_HZ as f64).round() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(simulate_events(state, duration, &[], &mut rng))
}

/// Picks the `k` most active electrodes subject to pairwise Chebyshev
/// separation of at least [`HOTSPOT_MIN_SEPARATION`]. Only electrodes with at
/// least one spike are candidates; ties break in row-major order.
pub fn find_hotspots(raster: &SpikeRaster, k: usize) -> Result<Vec<ElectrodeCoord>> {
    if k == 0 {
        return Err(Error::InvalidConfig("hotspot count must be >= 1".into()));
    }
    let counts = raster.counts();
    let mut candidates: Vec<(u32, usize)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, &c)| (c, i))
        .collect();
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut selected: Vec<ElectrodeCoord> = Vec::with_capacity(k);
    for (_, index) in candidates {
        let coord = ElectrodeCoord::from_index(index)?;
        if selected
            .iter()
            .all(|s| s.chebyshev(&coord) >= HOTSPOT_MIN_SEPARATION)
        {
            selected.push(coord);
            if selected.len() == k {
                return Ok(selected);
            }
        }
    }
    Err(Error::HotspotsUnsatisfiable {
        requested: k,
        found: selected.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mea::{make_pointwise, Direction, PulseShape, GRID_ELECTRODES};

    fn coord(row: usize, col: usize) -> ElectrodeCoord {
        ElectrodeCoord::new(row, col).unwrap()
    }

    #[test]
    fn render_pulse_monophasic_rounds_up() {
        let pulse = PulseSpec::monophasic(10.0, 20.0);
        let waveform = render_pulse(&pulse, 20_000);
        assert_eq!(waveform, vec![10.0]);
    }

    #[test]
    fn render_pulse_biphasic() {
        let pulse = PulseSpec::biphasic(4.0, 100.0, 100.0);
        let waveform = render_pulse(&pulse, 20_000);
        assert_eq!(waveform, vec![4.0, 4.0, -4.0, -4.0]);
    }

    #[test]
    fn render_pulse_zero_amplitude() {
        let pulse = PulseSpec {
            shape: PulseShape::Monophasic,
            amplitude_ua: 0.0,
            width_pos_us: 100.0,
            width_neg_us: 0.0,
        };
        let waveform = render_pulse(&pulse, 20_000);
        assert_eq!(waveform, vec![0.0, 0.0]);
    }

    #[test]
    fn build_is_deterministic() {
        let config = CultureConfig::default();
        let a = build_culture_with_grid(&config, 16).unwrap();
        let b = build_culture_with_grid(&config, 16).unwrap();
        assert_eq!(a.excitatory, b.excitatory);
        assert_eq!(a.syn_offsets, b.syn_offsets);
        assert_eq!(a.syn_targets, b.syn_targets);
        assert_eq!(a.syn_weights, b.syn_weights);
    }

    #[test]
    fn full_sparsity_wide_radius_is_complete() {
        let config = CultureConfig {
            synapse_sparsity: 1.0,
            connection_radius: 90.0,
            ..CultureConfig::default()
        };
        let state = build_culture_with_grid(&config, 8).unwrap();
        let n = state.n_neurons();
        assert_eq!(state.synapse_count(), n * (n - 1));
    }

    #[test]
    fn synapse_count_within_binomial_bounds() {
        let config = CultureConfig {
            neurons_per_electrode: 1,
            synapse_sparsity: 0.3,
            connection_radius: 2.5,
            seed: 7,
            ..CultureConfig::default()
        };
        let side = 8;
        let state = build_culture_with_grid(&config, side).unwrap();
        // independent enumeration of eligible ordered pairs
        let mut eligible = 0u64;
        let r_sq = config.connection_radius * config.connection_radius;
        for a in 0..side * side {
            for b in 0..side * side {
                if a == b {
                    continue;
                }
                let (ar, ac) = ((a / side) as f64, (a % side) as f64);
                let (br, bc) = ((b / side) as f64, (b % side) as f64);
                if (ar - br).powi(2) + (ac - bc).powi(2) <= r_sq {
                    eligible += 1;
                }
            }
        }
        let mean = config.synapse_sparsity * eligible as f64;
        let sd = (eligible as f64 * config.synapse_sparsity * (1.0 - config.synapse_sparsity))
            .sqrt();
        let count = state.synapse_count() as f64;
        assert!(
            (count - mean).abs() <= 3.0 * sd,
            "count {count} outside {mean} +- 3*{sd}"
        );
    }

    #[test]
    fn excitatory_fraction_close_to_nominal() {
        let state = build_culture_with_grid(&CultureConfig::default(), 32).unwrap();
        let frac = state.excitatory_count() as f64 / state.n_neurons() as f64;
        assert!((frac - EXCITATORY_FRACTION).abs() < 0.05);
    }

    #[test]
    fn quiet_config_gives_empty_raster() {
        let config = CultureConfig {
            background_rate_hz: 0.0,
            stim_gain_mv_per_ua: 0.0,
            ..CultureConfig::default()
        };
        let state = build_culture(&config).unwrap();
        let pattern = make_pointwise(coord(20, 20), Direction::East, 0).unwrap();
        let trial = run_trial(&state, &pattern, &ProtocolSpec::default(), 5).unwrap();
        assert_eq!(trial.raster.total_spikes(), 0);
    }

    #[test]
    fn trials_are_deterministic() {
        let state = build_culture(&CultureConfig::default()).unwrap();
        let pattern = make_pointwise(coord(20, 20), Direction::East, 0).unwrap();
        let protocol = ProtocolSpec::default();
        let a = run_trial(&state, &pattern, &protocol, 99).unwrap();
        let b = run_trial(&state, &pattern, &protocol, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn protocol_trials_are_distinct_with_noise() {
        let state = build_culture(&CultureConfig::default()).unwrap();
        let pattern = make_pointwise(coord(20, 20), Direction::East, 0).unwrap();
        let protocol = ProtocolSpec {
            repetitions_n: 25,
            ..ProtocolSpec::default()
        };
        let trials = run_protocol(&state, &pattern, &protocol, 4242).unwrap();
        assert_eq!(trials.len(), 25);
        for pair in trials.windows(2) {
            assert_ne!(pair[0].raster, pair[1].raster);
        }
    }

    #[test]
    fn quiet_protocol_trials_are_identical() {
        let config = CultureConfig {
            background_rate_hz: 0.0,
            stim_gain_mv_per_ua: 0.0,
            ..CultureConfig::default()
        };
        let state = build_culture(&config).unwrap();
        let pattern = make_pointwise(coord(20, 20), Direction::East, 0).unwrap();
        let protocol = ProtocolSpec {
            repetitions_n: 2,
            ..ProtocolSpec::default()
        };
        let trials = run_protocol(&state, &pattern, &protocol, 1).unwrap();
        assert_eq!(trials[0].raster, trials[1].raster);
        assert_eq!(trials[0].raster.total_spikes(), 0);
    }

    #[test]
    fn pole_fires_during_stimulus() {
        let state = build_culture(&CultureConfig::default()).unwrap();
        let pattern = make_pointwise(coord(30, 30), Direction::East, 0).unwrap();
        let trial = run_trial(&state, &pattern, &ProtocolSpec::default(), 7).unwrap();
        let onset = trial.stimulus_onset_sample;
        let pole_spikes = trial.raster.channel(coord(30, 30));
        assert!(
            pole_spikes.iter().any(|&s| s >= onset && s < onset + 2),
            "positive pole should fire at stimulus onset, spikes: {pole_spikes:?}"
        );
    }

    // weak coupling: synapses too feeble to fire anything, so output rate
    // tracks the background rate
    fn weak_config(rate: f64) -> CultureConfig {
        CultureConfig {
            neurons_per_electrode: 1,
            synaptic_weight_scale: 0.01,
            synapse_sparsity: 0.05,
            background_rate_hz: rate,
            ..CultureConfig::default()
        }
    }

    #[test]
    fn spontaneous_rate_matches_background_poisson() {
        let state = build_culture(&weak_config(1.0)).unwrap();
        let raster = simulate_spontaneous(&state, 10.0, 13).unwrap();
        let expected = 1.0 * 10.0 * GRID_ELECTRODES as f64;
        let sd = expected.sqrt();
        let total = raster.total_spikes() as f64;
        // allow 3 sigma plus the small refractory-collision deficit
        assert!(
            (total - expected).abs() <= 3.0 * sd + 0.005 * expected,
            "total {total} vs expected {expected} +- {sd}"
        );
    }

    #[test]
    fn spontaneous_empty_without_drive() {
        let state = build_culture(&weak_config(0.0)).unwrap();
        let raster = simulate_spontaneous(&state, 2.0, 13).unwrap();
        assert_eq!(raster.total_spikes(), 0);
    }

    #[test]
    fn spontaneous_deterministic() {
        let state = build_culture(&CultureConfig::default()).unwrap();
        let a = simulate_spontaneous(&state, 1.0, 5).unwrap();
        let b = simulate_spontaneous(&state, 1.0, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pre_window_rate_matches_background() {
        let state = build_culture(&weak_config(2.0)).unwrap();
        let pattern = make_pointwise(coord(20, 20), Direction::East, 0).unwrap();
        let protocol = ProtocolSpec::default();
        let trials = run_protocol(&state, &pattern, &protocol, 77).unwrap();
        let pre = protocol.pre_samples();
        let mut total = 0u64;
        for trial in &trials {
            for e in 0..GRID_ELECTRODES {
                total += trial
                    .raster
                    .channel_by_index(e)
                    .iter()
                    .filter(|&&s| s < pre)
                    .count() as u64;
            }
        }
        let window_s = pre as f64 / SAMPLE_RATE_HZ as f64;
        let expected = 2.0 * window_s * GRID_ELECTRODES as f64 * trials.len() as f64;
        let sd = expected.sqrt();
        assert!(
            (total as f64 - expected).abs() <= 3.0 * sd + 0.005 * expected,
            "total {total} vs expected {expected} +- {sd}"
        );
    }

    #[test]
    fn refractory_interval_respected() {
        // electrode-level inter-spike intervals obey the refractory period
        // only when one neuron sits on each electrode
        let config = CultureConfig {
            neurons_per_electrode: 1,
            ..CultureConfig::default()
        };
        let state = build_culture(&config).unwrap();
        let pattern = make_pointwise(coord(31, 31), Direction::South, 0).unwrap();
        let trial = run_trial(&state, &pattern, &ProtocolSpec::default(), 11).unwrap();
        let refr = state.config.refractory_samples();
        for e in 0..GRID_ELECTRODES {
            for w in trial.raster.channel_by_index(e).windows(2) {
                assert!(w[1] - w[0] >= refr, "ISI {} < {refr}", w[1] - w[0]);
            }
        }
    }

    #[test]
    fn hotspots_pick_concentrated_sites() {
        let mut raster = SpikeRaster::empty(1000);
        for (i, idx) in [coord(5, 5), coord(5, 40), coord(40, 5), coord(40, 40)]
            .iter()
            .enumerate()
        {
            for s in 0..(10 - i as u32) {
                raster.push_spike(idx.index(), s * 10);
            }
        }
        let spots = find_hotspots(&raster, 4).unwrap();
        assert_eq!(
            spots,
            vec![coord(5, 5), coord(5, 40), coord(40, 5), coord(40, 40)]
        );
    }

    #[test]
    fn hotspots_tie_break_row_major() {
        let mut raster = SpikeRaster::empty(10);
        for e in 0..GRID_ELECTRODES {
            raster.push_spike(e, 0);
        }
        let spots = find_hotspots(&raster, 3).unwrap();
        assert_eq!(spots, vec![coord(0, 0), coord(0, 24), coord(0, 48)]);
    }

    #[test]
    fn hotspots_error_when_unsatisfiable() {
        // activity confined to an 8x8 corner: every pair is within Chebyshev 7
        let mut raster = SpikeRaster::empty(10);
        for r in 0..8 {
            for c in 0..8 {
                raster.push_spike(coord(r, c).index(), 0);
            }
        }
        let err = find_hotspots(&raster, 5).unwrap_err();
        match err {
            Error::HotspotsUnsatisfiable { requested, found } => {
                assert_eq!(requested, 5);
                assert_eq!(found, 1);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
