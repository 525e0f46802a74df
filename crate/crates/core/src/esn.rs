//! Artificial comparison reservoir: a sparse random recurrent network of
//! rate units scaled to a target spectral radius, driven once by the stimulus
//! image plus noise calibrated from spontaneous activity.

use std::collections::HashSet;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::mea::{require_valid, StimulusPattern, GRID_ELECTRODES};
use crate::raster::SpikeRaster;
use crate::seed::derive_seed;

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct EsnConfig {
    pub n_units: usize,
    pub sparsity: f64,
    pub spectral_radius: f64,
    pub input_scale: f64,
    pub seed: u64,
}

impl Default for EsnConfig {
    fn default() -> Self {
        Self {
            n_units: GRID_ELECTRODES,
            sparsity: 0.10,
            spectral_radius: 0.9,
            input_scale: 1.0,
            seed: 2,
        }
    }
}

impl EsnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 {
            return Err(Error::InvalidConfig("n_units must be positive".into()));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::InvalidConfig("sparsity must be in (0, 1]".into()));
        }
        if !(self.spectral_radius > 0.0) || !self.spectral_radius.is_finite() {
            return Err(Error::InvalidConfig("spectral_radius must be positive".into()));
        }
        if !self.input_scale.is_finite() {
            return Err(Error::InvalidConfig("input_scale must be finite".into()));
        }
        Ok(())
    }
}

/// Square sparse matrix in CSR layout.
#[derive(Clone, PartialEq, Debug)]
pub struct SparseMatrix {
    n: usize,
    row_ptr: Vec<u32>,
    col: Vec<u32>,
    val: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate positions are
    /// rejected.
    pub fn from_triplets(n: usize, mut triplets: Vec<(u32, u32, f64)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for w in triplets.windows(2) {
            if w[0].0 == w[1].0 && w[0].1 == w[1].1 {
                return Err(Error::Format(format!(
                    "duplicate matrix entry at ({}, {})",
                    w[0].0, w[0].1
                )));
            }
        }
        let mut row_ptr = vec![0u32; n + 1];
        for &(r, c, _) in &triplets {
            if r as usize >= n || c as usize >= n {
                return Err(Error::Format(format!("entry ({r}, {c}) outside {n}x{n}")));
            }
            row_ptr[r as usize + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col = triplets.iter().map(|t| t.1).collect();
        let val = triplets.iter().map(|t| t.2).collect();
        Ok(Self { n, row_ptr, col, val })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.val
    }

    pub fn scale_values(&mut self, factor: f64) {
        for v in &mut self.val {
            *v *= factor;
        }
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for row in 0..self.n {
            let mut acc = 0.0;
            let from = self.row_ptr[row] as usize;
            let to = self.row_ptr[row + 1] as usize;
            for k in from..to {
                acc += self.val[k] * x[self.col[k] as usize];
            }
            y[row] = acc;
        }
    }
}

/// Settings for the spectral radius estimator.
///
/// The estimator is power iteration with a short linear-recurrence readout:
/// random matrices of this kind have a dominant *complex pair* of
/// eigenvalues, so a scalar Rayleigh quotient does not settle. Instead the
/// last `fit_order + 1` iterates are fit with an order-`fit_order` linear
/// recurrence (least squares over all components) and the dominant modulus
/// is the largest root of the recurrence polynomial. Convergence is declared
/// when the estimate changes by at most `tolerance` (relatively) between
/// checks `check_stride` iterations apart.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct PowerIterOptions {
    pub max_iterations: usize,
    pub fit_order: usize,
    pub tolerance: f64,
    pub check_stride: usize,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            fit_order: 8,
            tolerance: 1e-8,
            check_stride: 10,
        }
    }
}

// Durand-Kerner root finder for a monic polynomial with real coefficients
// a[0] + a[1] z + ... + a[m-1] z^{m-1} + z^m; returns the largest root
// modulus. Deterministic: fixed starting points, fixed iteration cap.
fn max_root_modulus(coeffs_low_to_high: &[f64]) -> f64 {
    let m = coeffs_low_to_high.len();
    if m == 0 {
        return 0.0;
    }
    let eval = |z: Complex64| -> Complex64 {
        let mut acc = Complex64::new(1.0, 0.0); // leading monic term
        for &a in coeffs_low_to_high.iter().rev() {
            acc = acc * z + Complex64::new(a, 0.0);
        }
        acc
    };
    let base = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..m).map(|i| base.powu(i as u32 + 1)).collect();
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..m {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..m {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() < 1e-300 {
                continue;
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = max_step.max(step.norm() / (1.0 + roots[i].norm()));
        }
        if max_step < 1e-13 {
            break;
        }
    }
    roots.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

// modified Gram-Schmidt least squares: minimizes ||B c - y||; None when the
// basis is (numerically) rank deficient
fn least_squares(basis: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = basis.len();
    let n = y.len();
    let mut q: Vec<Vec<f64>> = basis.to_vec();
    let mut r = vec![vec![0.0f64; m]; m];
    for j in 0..m {
        let original: f64 = (0..n).map(|t| q[j][t] * q[j][t]).sum::<f64>().sqrt();
        // orthogonalize twice for stability
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = (0..n).map(|t| q[i][t] * q[j][t]).sum();
                r[i][j] += dot;
                for t in 0..n {
                    q[j][t] -= dot * q[i][t];
                }
            }
        }
        let norm: f64 = (0..n).map(|t| q[j][t] * q[j][t]).sum::<f64>().sqrt();
        if !(norm > 1e-12 * original) || norm == 0.0 {
            return None; // column collinear with earlier ones
        }
        r[j][j] = norm;
        for t in 0..n {
            q[j][t] /= norm;
        }
    }
    // c = R^{-1} Q^T y
    let mut qty = vec![0.0f64; m];
    for (j, qj) in q.iter().enumerate() {
        qty[j] = (0..n).map(|t| qj[t] * y[t]).sum();
    }
    let mut c = vec![0.0f64; m];
    for j in (0..m).rev() {
        let mut acc = qty[j];
        for k in j + 1..m {
            acc -= r[j][k] * c[k];
        }
        c[j] = acc / r[j][j];
    }
    Some(c)
}

/// Estimates the spectral radius of `matrix` by power iteration with a
/// recurrence readout (see [`PowerIterOptions`]). The start vector is drawn
/// from `start_seed`. Errors if the estimate has not stabilized within the
/// iteration budget.
pub fn estimate_spectral_radius(
    matrix: &SparseMatrix,
    opts: &PowerIterOptions,
    start_seed: u64,
) -> Result<f64> {
    let n = matrix.n();
    let m = opts.fit_order.max(1).min(n.max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(start_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut x: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::NonFinite("zero start vector".into()));
    }
    for v in &mut x {
        *v /= norm;
    }

    // ring of the last m+1 normalized iterates with cumulative log scales
    let mut history: Vec<Vec<f64>> = vec![x];
    let mut scales: Vec<f64> = vec![0.0];
    let mut estimate: Option<f64> = None;

    let mut y = vec![0.0f64; n];
    for iteration in 1..=opts.max_iterations {
        matrix.matvec(history.last().unwrap(), &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0); // iterate annihilated: nilpotent direction
        }
        if !norm.is_finite() {
            return Err(Error::NonFinite("power iteration overflow".into()));
        }
        let scale = scales.last().unwrap() + norm.ln();
        history.push(y.iter().map(|v| v / norm).collect());
        scales.push(scale);
        if history.len() > m + 1 {
            history.remove(0);
            scales.remove(0);
        }

        if history.len() == m + 1 && iteration % opts.check_stride == 0 {
            // fit z_m = sum_j c_j z_j in units of the newest iterate's scale.
            // Once the iteration has settled into an invariant subspace of
            // dimension d < m the full basis is collinear, so reduce the fit
            // order until the recent columns are independent.
            let last_scale = *scales.last().unwrap();
            let mut fit: Option<Vec<f64>> = None;
            for order in (1..=m).rev() {
                let basis: Vec<Vec<f64>> = (m - order..m)
                    .map(|j| {
                        let factor = (scales[j] - last_scale).exp();
                        history[j].iter().map(|v| v * factor).collect()
                    })
                    .collect();
                if let Some(c) = least_squares(&basis, &history[m]) {
                    fit = Some(c);
                    break;
                }
            }
            let Some(c) = fit else { continue };
            let coeffs: Vec<f64> = c.iter().map(|&v| -v).collect();
            let rho = max_root_modulus(&coeffs);
            if !rho.is_finite() {
                continue;
            }
            if let Some(prev) = estimate {
                if (rho - prev).abs() <= opts.tolerance * rho.max(1e-300) {
                    return Ok(rho);
                }
            }
            estimate = Some(rho);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
    })
}

/// The built comparison reservoir: recurrent weights scaled to the configured
/// spectral radius.
#[derive(Clone, Debug)]
pub struct Reservoir {
    pub weights: SparseMatrix,
    pub config: EsnConfig,
    /// Spectral radius estimated for the unscaled matrix during the build.
    pub raw_spectral_radius: f64,
}

/// Builds the recurrent matrix: exactly `round(sparsity * n^2)` nonzero
/// entries at uniformly sampled positions (self-loops allowed), values
/// uniform in [-1, 1], then rescaled so the dominant eigenvalue magnitude
/// equals `spectral_radius`.
///
/// Position sampling draws uniform linear indices with rejection until the
/// target count of distinct positions is reached; values are assigned in
/// sorted position order. The power iteration start vector derives from
/// `(seed, "esn-power", 0)`.
pub fn build_reservoir(config: &EsnConfig) -> Result<Reservoir> {
    config.validate()?;
    let n = config.n_units;
    let total = n as u64 * n as u64;
    let nnz = (config.sparsity * total as f64).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut positions: Vec<u64> = Vec::with_capacity(nnz as usize);
    let mut seen: HashSet<u64> = HashSet::with_capacity(nnz as usize * 2);
    while (positions.len() as u64) < nnz {
        let p = rng.gen_range(0..total);
        if seen.insert(p) {
            positions.push(p);
        }
    }
    positions.sort_unstable();
    let triplets: Vec<(u32, u32, f64)> = positions
        .iter()
        .map(|&p| {
            let value = rng.gen::<f64>() * 2.0 - 1.0;
            ((p / n as u64) as u32, (p % n as u64) as u32, value)
        })
        .collect();
    let mut weights = SparseMatrix::from_triplets(n, triplets)?;

    let opts = PowerIterOptions::default();
    let raw = estimate_spectral_radius(&weights, &opts, derive_seed(config.seed, "esn-power", 0))?;
    if raw <= 0.0 {
        return Err(Error::NonFinite(
            "cannot rescale a matrix with zero spectral radius".into(),
        ));
    }
    weights.scale_values(config.spectral_radius / raw);
    Ok(Reservoir {
        weights,
        config: *config,
        raw_spectral_radius: raw,
    })
}

/// Input noise statistics measured from spontaneous activity: the average
/// spike count per electrode per 10 ms window.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct NoiseModel {
    pub mean_count: f64,
    pub n_windows: u32,
}

/// Window length used by [`estimate_noise`]: 10 ms at 20 kHz.
const NOISE_WINDOW_SAMPLES: u32 = 200;

/// Averages spike counts over `n_windows` randomly selected non-overlapping
/// 10 ms windows of the spontaneous raster.
pub fn estimate_noise(spontaneous: &SpikeRaster, n_windows: u32, seed: u64) -> Result<NoiseModel> {
    let slots = spontaneous.duration_samples() / NOISE_WINDOW_SAMPLES;
    if slots < n_windows {
        return Err(Error::InsufficientDuration {
            have: spontaneous.duration_samples(),
            need: n_windows * NOISE_WINDOW_SAMPLES,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<u32> = Vec::with_capacity(n_windows as usize);
    let mut seen = HashSet::new();
    while (chosen.len() as u32) < n_windows {
        let slot = rng.gen_range(0..slots);
        if seen.insert(slot) {
            chosen.push(slot);
        }
    }
    let mut total: u64 = 0;
    for &slot in &chosen {
        let start = slot * NOISE_WINDOW_SAMPLES;
        let end = start + NOISE_WINDOW_SAMPLES;
        for e in 0..GRID_ELECTRODES {
            let channel = spontaneous.channel_by_index(e);
            let lo = channel.partition_point(|&s| s < start);
            let hi = channel.partition_point(|&s| s < end);
            total += (hi - lo) as u64;
        }
    }
    Ok(NoiseModel {
        mean_count: total as f64 / (n_windows as u64 * GRID_ELECTRODES as u64) as f64,
        n_windows,
    })
}

/// Row-major stimulus image: `+input_scale` at positive poles, `-input_scale`
/// at negative poles, zero elsewhere.
pub fn stimulus_image(pattern: &StimulusPattern, input_scale: f64) -> Result<Vec<f64>> {
    require_valid(pattern)?;
    let mut image = vec![0.0f64; GRID_ELECTRODES];
    for pair in &pattern.pairs {
        image[pair.positive.index()] = input_scale;
        image[pair.negative.index()] = -input_scale;
    }
    Ok(image)
}

/// Drives the reservoir once from rest and returns the state after one
/// presentation step plus one evolution step:
/// `u = image + eta`, `x1 = tanh(u)`, `x2 = tanh(W x1 + u)`.
/// The noise `eta` is iid Gaussian with SD `noise.mean_count`, drawn from
/// `trial_seed` and superimposed on the input for both steps.
pub fn esn_features(
    reservoir: &Reservoir,
    pattern: &StimulusPattern,
    noise: &NoiseModel,
    trial_seed: u64,
) -> Result<Vec<f64>> {
    if reservoir.weights.n() != GRID_ELECTRODES {
        return Err(Error::InvalidConfig(format!(
            "stimulus mapping requires {GRID_ELECTRODES} units, reservoir has {}",
            reservoir.weights.n()
        )));
    }
    let mut u = stimulus_image(pattern, reservoir.config.input_scale)?;
    if noise.mean_count > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let normal = Normal::new(0.0, noise.mean_count).expect("valid sd");
        for v in &mut u {
            *v += normal.sample(&mut rng);
        }
    }
    let x1: Vec<f64> = u.iter().map(|&v| v.tanh()).collect();
    let mut x2 = vec![0.0f64; u.len()];
    reservoir.weights.matvec(&x1, &mut x2);
    for (x, &drive) in x2.iter_mut().zip(u.iter()) {
        *x = (*x + drive).tanh();
    }
    Ok(x2)
}
