//! Per-electrode response statistics: activity and response counts around a
//! stimulus, aggregation over repeated trials with Student-t confidence
//! categories, and the color-coded response map image.
//!
//! Window convention is half-open: the post chunk is `[t_s, t_s + C)` and the
//! pre chunk `[t_s - C, t_s)`, so the onset sample belongs to the post chunk
//! only and the chunks never overlap.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mea::{ElectrodeCoord, GRID_ELECTRODES, GRID_SIDE};
use crate::raster::{SpikeRaster, TrialRecording};

/// The default chunk: 10 ms at 20 kHz.
pub const DEFAULT_C_SAMPLES: u32 = 200;

/// Number of spikes on `electrode` in the half-open window
/// `[t_s, t_s + c_samples)`.
pub fn activity(
    raster: &SpikeRaster,
    electrode: ElectrodeCoord,
    t_s: u32,
    c_samples: u32,
) -> Result<u32> {
    let end = t_s as u64 + c_samples as u64;
    if end > raster.duration_samples() as u64 {
        return Err(Error::WindowOutOfRange {
            start: t_s as i64,
            end: end as i64,
            duration: raster.duration_samples(),
        });
    }
    let channel = raster.channel(electrode);
    let lo = channel.partition_point(|&s| s < t_s);
    let hi = channel.partition_point(|&s| (s as u64) < end);
    Ok((hi - lo) as u32)
}

/// Post-chunk activity minus pre-chunk activity around the stimulus onset.
pub fn response(
    raster: &SpikeRaster,
    electrode: ElectrodeCoord,
    t_s: u32,
    c_samples: u32,
) -> Result<i64> {
    if t_s < c_samples {
        return Err(Error::WindowOutOfRange {
            start: t_s as i64 - c_samples as i64,
            end: t_s as i64,
            duration: raster.duration_samples(),
        });
    }
    let post = activity(raster, electrode, t_s, c_samples)?;
    let pre = activity(raster, electrode, t_s - c_samples, c_samples)?;
    Ok(post as i64 - pre as i64)
}

/// Confidence category of a per-electrode mean response.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Significance {
    Pos99,
    Pos95,
    None,
    Neg95,
    Neg99,
}

impl Significance {
    pub fn token(&self) -> &'static str {
        match self {
            Significance::Pos99 => "pos99",
            Significance::Pos95 => "pos95",
            Significance::None => "none",
            Significance::Neg95 => "neg95",
            Significance::Neg99 => "neg99",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pos99" => Ok(Significance::Pos99),
            "pos95" => Ok(Significance::Pos95),
            "none" => Ok(Significance::None),
            "neg95" => Ok(Significance::Neg95),
            "neg99" => Ok(Significance::Neg99),
            other => Err(Error::Format(format!("unknown significance {other:?}"))),
        }
    }

    /// Pixel color in the response map image.
    pub fn rgb(&self) -> [u8; 3] {
        match self {
            Significance::Pos99 => [255, 0, 0],
            Significance::Pos95 => [0, 255, 0],
            Significance::None => [0, 0, 0],
            Significance::Neg95 => [0, 255, 255],
            Significance::Neg99 => [255, 255, 0],
        }
    }
}

/// Mean/SD/category of one electrode's responses over the trial set.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ElectrodeResponse {
    pub mean: f64,
    pub sd: f64,
    pub n: u32,
    pub category: Significance,
}

/// Per-electrode aggregate over all repetitions, row-major.
#[derive(Clone, PartialEq, Debug)]
pub struct ResponseMap {
    cells: Vec<ElectrodeResponse>,
}

impl ResponseMap {
    pub fn cell(&self, electrode: ElectrodeCoord) -> &ElectrodeResponse {
        &self.cells[electrode.index()]
    }

    pub fn cells(&self) -> &[ElectrodeResponse] {
        &self.cells
    }
}

/// Two-sided confidence categorization. A degenerate SD of exactly zero
/// yields a zero-width interval: 99%-significant when the mean is nonzero,
/// `None` otherwise.
fn categorize(mean: f64, sd: f64, n: u32, t95: f64, t99: f64) -> Significance {
    if sd == 0.0 {
        return if mean > 0.0 {
            Significance::Pos99
        } else if mean < 0.0 {
            Significance::Neg99
        } else {
            Significance::None
        };
    }
    let se = sd / (n as f64).sqrt();
    if mean - t99 * se > 0.0 {
        Significance::Pos99
    } else if mean + t99 * se < 0.0 {
        Significance::Neg99
    } else if mean - t95 * se > 0.0 {
        Significance::Pos95
    } else if mean + t95 * se < 0.0 {
        Significance::Neg95
    } else {
        Significance::None
    }
}

/// Aggregates per-trial responses into a [`ResponseMap`].
///
/// All trials must share duration and onset; at least two are required for a
/// sample standard deviation.
pub fn aggregate(trials: &[TrialRecording], c_samples: u32) -> Result<ResponseMap> {
    if trials.len() < 2 {
        return Err(Error::NotEnoughTrials {
            n: trials.len(),
            min: 2,
        });
    }
    let first = &trials[0];
    for (i, trial) in trials.iter().enumerate() {
        if trial.raster.duration_samples() != first.raster.duration_samples()
            || trial.stimulus_onset_sample != first.stimulus_onset_sample
        {
            return Err(Error::MisalignedTrials(format!(
                "trial {i} has duration {} / onset {}, expected {} / {}",
                trial.raster.duration_samples(),
                trial.stimulus_onset_sample,
                first.raster.duration_samples(),
                first.stimulus_onset_sample
            )));
        }
        trial.check_window(c_samples)?;
    }
    let n = trials.len() as u32;
    let t95 = tdist::quantile(0.975, (n - 1) as f64);
    let t99 = tdist::quantile(0.995, (n - 1) as f64);

    let mut cells = Vec::with_capacity(GRID_ELECTRODES);
    for index in 0..GRID_ELECTRODES {
        let electrode = ElectrodeCoord::from_index(index)?;
        let mut values = Vec::with_capacity(trials.len());
        for trial in trials {
            values.push(response(
                &trial.raster,
                electrode,
                trial.stimulus_onset_sample,
                c_samples,
            )? as f64);
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (values.len() - 1) as f64;
        let sd = var.sqrt();
        cells.push(ElectrodeResponse {
            mean,
            sd,
            n,
            category: categorize(mean, sd, n, t95, t99),
        });
    }
    Ok(ResponseMap { cells })
}

/// Writes the 64x64 response map as a binary P6 pixmap.
pub fn emit_map_image(map: &ResponseMap, path: &Path) -> Result<()> {
    let mut data = Vec::with_capacity(GRID_ELECTRODES * 3 + 16);
    data.extend_from_slice(format!("P6\n{GRID_SIDE} {GRID_SIDE}\n255\n").as_bytes());
    for cell in &map.cells {
        data.extend_from_slice(&cell.category.rgb());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&data)?;
    Ok(())
}

/// Writes the response map as CSV: `row,col,mean,sd,category`.
pub fn write_map_csv(map: &ResponseMap, path: &Path) -> Result<()> {
    let mut out = String::from("row,col,mean,sd,category\n");
    for (index, cell) in map.cells.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            index / GRID_SIDE,
            index % GRID_SIDE,
            cell.mean,
            cell.sd,
            cell.category.token()
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Student's t distribution, implemented locally: CDF through the regularized
/// incomplete beta function and quantiles by monotone bisection. Validated
/// against published critical-value tables.
pub mod tdist {
    /// Lanczos log-gamma (g = 7, n = 9 coefficients).
    fn ln_gamma(x: f64) -> f64 {
        const COEFFS: [f64; 8] = [
            676.5203681218851,
            -1259.1392167224028,
            771.32342877765313,
            -176.61502916214059,
            12.507343278686905,
            -0.13857109526572012,
            9.9843695780195716e-6,
            1.5056327351493116e-7,
        ];
        if x < 0.5 {
            // reflection
            let pi = std::f64::consts::PI;
            return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut acc = 0.99999999999980993;
        for (i, &c) in COEFFS.iter().enumerate() {
            acc += c / (x + (i + 1) as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }

    /// Continued fraction for the incomplete beta (Lentz's method).
    fn betacf(a: f64, b: f64, x: f64) -> f64 {
        const MAX_ITER: usize = 300;
        const EPS: f64 = 1e-15;
        const FPMIN: f64 = 1e-300;
        let qab = a + b;
        let qap = a + 1.0;
        let qam = a - 1.0;
        let mut c = 1.0;
        let mut d = 1.0 - qab * x / qap;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        d = 1.0 / d;
        let mut h = d;
        for m in 1..=MAX_ITER {
            let m = m as f64;
            let m2 = 2.0 * m;
            let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = 1.0 + aa / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            h *= d * c;
            let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if d.abs() < FPMIN {
                d = FPMIN;
            }
            c = 1.0 + aa / c;
            if c.abs() < FPMIN {
                c = FPMIN;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < EPS {
                break;
            }
        }
        h
    }

    /// Regularized incomplete beta `I_x(a, b)`.
    fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let ln_front =
            ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
        let front = ln_front.exp();
        if x < (a + 1.0) / (a + b + 2.0) {
            front * betacf(a, b, x) / a
        } else {
            1.0 - front * betacf(b, a, 1.0 - x) / b
        }
    }

    /// CDF of Student's t with `df` degrees of freedom.
    pub fn cdf(t: f64, df: f64) -> f64 {
        let x = df / (df + t * t);
        let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, x);
        if t >= 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    /// Inverse CDF for `p` in (0, 1), by bisection on the monotone CDF.
    pub fn quantile(p: f64, df: f64) -> f64 {
        assert!(p > 0.0 && p < 1.0, "p must be in (0, 1)");
        assert!(df > 0.0, "df must be positive");
        if (p - 0.5).abs() < 1e-16 {
            return 0.0;
        }
        // bracket the root, then bisect
        let mut lo = -1.0;
        let mut hi = 1.0;
        while cdf(lo, df) > p {
            lo *= 2.0;
        }
        while cdf(hi, df) < p {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid, df) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * (1.0 + hi.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coord(row: usize, col: usize) -> ElectrodeCoord {
        ElectrodeCoord::new(row, col).unwrap()
    }

    fn raster_with(spikes: &[(usize, u32)], duration: u32) -> SpikeRaster {
        let mut channels = vec![Vec::new(); GRID_ELECTRODES];
        for &(e, s) in spikes {
            channels[e].push(s);
        }
        for c in &mut channels {
            c.sort_unstable();
            c.dedup();
        }
        SpikeRaster::from_channels(duration, channels).unwrap()
    }

    #[test]
    fn activity_counts_half_open() {
        let e = coord(3, 7);
        let raster = raster_with(&[(e.index(), 5), (e.index(), 10), (e.index(), 199), (e.index(), 200)], 400);
        assert_eq!(activity(&raster, e, 0, 200).unwrap(), 3);
        assert_eq!(activity(&raster, e, 200, 200).unwrap(), 1);
    }

    #[test]
    fn activity_empty_raster() {
        let raster = SpikeRaster::empty(400);
        assert_eq!(activity(&raster, coord(0, 0), 0, 200).unwrap(), 0);
    }

    #[test]
    fn activity_window_out_of_range() {
        let raster = SpikeRaster::empty(100);
        assert!(matches!(
            activity(&raster, coord(0, 0), 0, 200),
            Err(Error::WindowOutOfRange { .. })
        ));
    }

    #[test]
    fn response_examples() {
        let e = coord(1, 1);
        // symmetric: two spikes each side
        let symmetric = raster_with(
            &[(e.index(), 50), (e.index(), 150), (e.index(), 250), (e.index(), 350)],
            400,
        );
        assert_eq!(response(&symmetric, e, 200, 200).unwrap(), 0);
        // 4 post, 1 pre
        let skewed = raster_with(
            &[
                (e.index(), 100),
                (e.index(), 210),
                (e.index(), 220),
                (e.index(), 230),
                (e.index(), 240),
            ],
            400,
        );
        assert_eq!(response(&skewed, e, 200, 200).unwrap(), 3);
        // empty
        let empty = SpikeRaster::empty(400);
        assert_eq!(response(&empty, e, 200, 200).unwrap(), 0);
        // pre window underflow
        assert!(response(&empty, e, 100, 200).is_err());
    }

    fn trial(spikes: &[(usize, u32)]) -> TrialRecording {
        TrialRecording {
            raster: raster_with(spikes, 600),
            stimulus_onset_sample: 300,
            pattern_label: 0,
        }
    }

    #[test]
    fn aggregate_all_zero() {
        let trials = vec![trial(&[]), trial(&[]), trial(&[])];
        let map = aggregate(&trials, 200).unwrap();
        for cell in map.cells() {
            assert_eq!(cell.mean, 0.0);
            assert_eq!(cell.sd, 0.0);
            assert_eq!(cell.category, Significance::None);
            assert_eq!(cell.n, 3);
        }
    }

    #[test]
    fn aggregate_constant_positive_is_pos99() {
        let e = coord(10, 10);
        // +3 response on every trial: 3 post-spikes, 0 pre
        let trials: Vec<TrialRecording> = (0..25)
            .map(|_| trial(&[(e.index(), 310), (e.index(), 320), (e.index(), 330)]))
            .collect();
        let map = aggregate(&trials, 200).unwrap();
        let cell = map.cell(e);
        assert_eq!(cell.mean, 3.0);
        assert_eq!(cell.sd, 0.0);
        assert_eq!(cell.category, Significance::Pos99);
    }

    #[test]
    fn aggregate_rejects_single_trial() {
        assert!(matches!(
            aggregate(&[trial(&[])], 200),
            Err(Error::NotEnoughTrials { n: 1, min: 2 })
        ));
    }

    #[test]
    fn aggregate_rejects_misaligned() {
        let a = trial(&[]);
        let mut b = trial(&[]);
        b.stimulus_onset_sample = 301;
        assert!(matches!(
            aggregate(&[a, b], 200),
            Err(Error::MisalignedTrials(_))
        ));
    }

    #[test]
    fn aggregate_mean_is_exact_for_integers() {
        let e = coord(2, 2);
        // responses 1, 2, 4 -> mean 7/3
        let trials = vec![
            trial(&[(e.index(), 310)]),
            trial(&[(e.index(), 310), (e.index(), 320)]),
            trial(&[(e.index(), 310), (e.index(), 320), (e.index(), 330), (e.index(), 340)]),
        ];
        let map = aggregate(&trials, 200).unwrap();
        assert_eq!(map.cell(e).mean * 3.0, 7.0);
    }

    #[test]
    fn t_quantiles_match_published_tables() {
        let cases = [
            (0.975, 4.0, 2.776445),
            (0.995, 4.0, 4.604095),
            (0.975, 24.0, 2.063899),
            (0.995, 24.0, 2.796940),
        ];
        for (p, df, expected) in cases {
            let q = tdist::quantile(p, df);
            assert!(
                (q - expected).abs() < 1e-5,
                "quantile({p}, {df}) = {q}, expected {expected}"
            );
        }
    }

    #[test]
    fn t_cdf_quantile_round_trip() {
        for df in [1.0, 4.0, 24.0, 100.0] {
            for p in [0.6, 0.9, 0.975, 0.995] {
                let q = tdist::quantile(p, df);
                assert!((tdist::cdf(q, df) - p).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pixmap_all_none_is_black() {
        let trials = vec![trial(&[]), trial(&[])];
        let map = aggregate(&trials, 200).unwrap();
        let path = std::env::temp_dir().join(format!("map-none-{}.ppm", std::process::id()));
        emit_map_image(&map, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n64 64\n255\n"));
        let pixels = &bytes[b"P6\n64 64\n255\n".len()..];
        assert_eq!(pixels.len(), GRID_ELECTRODES * 3);
        assert!(pixels.iter().all(|&b| b == 0));
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn pixmap_single_pos99_top_left() {
        let e = coord(0, 0);
        let trials: Vec<TrialRecording> = (0..5)
            .map(|_| trial(&[(e.index(), 310)]))
            .collect();
        let map = aggregate(&trials, 200).unwrap();
        let path = std::env::temp_dir().join(format!("map-red-{}.ppm", std::process::id()));
        emit_map_image(&map, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let pixels = &bytes[b"P6\n64 64\n255\n".len()..];
        assert_eq!(&pixels[0..3], &[255, 0, 0]);
        assert!(pixels[3..].iter().all(|&b| b == 0));
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn pixmap_round_trips_category_grid() {
        // one electrode per category; parse the emitted pixmap back
        let mut sets: Vec<Vec<i32>> = vec![vec![0; 25]; 4];
        sets[0] = vec![3; 25]; // sd 0, mean > 0 -> pos99
        sets[1] = vec![-3; 25]; // neg99
        // mean 1, sd 2 -> t = 2.5, between the 95% and 99% critical values
        let mut marginal = vec![3i32; 12];
        marginal.extend(vec![-1; 12]);
        marginal.push(1);
        sets[2] = marginal.clone();
        sets[3] = marginal.iter().map(|v| -v).collect(); // neg95
        let trials: Vec<TrialRecording> = (0..25)
            .map(|index| {
                let mut t = trial(&[]);
                let mut channels = vec![Vec::new(); GRID_ELECTRODES];
                for (e, values) in sets.iter().enumerate() {
                    let v = values[index];
                    if v > 0 {
                        channels[e] = (0..v as u32).map(|i| 310 + i).collect();
                    } else if v < 0 {
                        channels[e] = (0..(-v) as u32).map(|i| 110 + i).collect();
                    }
                }
                t.raster = SpikeRaster::from_channels(600, channels).unwrap();
                t
            })
            .collect();
        let map = aggregate(&trials, 200).unwrap();
        assert_eq!(map.cells()[0].category, Significance::Pos99);
        assert_eq!(map.cells()[1].category, Significance::Neg99);
        assert_eq!(map.cells()[2].category, Significance::Pos95);
        assert_eq!(map.cells()[3].category, Significance::Neg95);
        let path = std::env::temp_dir().join(format!("map-rt-{}.ppm", std::process::id()));
        emit_map_image(&map, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P6\n64 64\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let recovered: Vec<Significance> = bytes[header.len()..]
            .chunks_exact(3)
            .map(|px| match [px[0], px[1], px[2]] {
                [255, 0, 0] => Significance::Pos99,
                [0, 255, 0] => Significance::Pos95,
                [0, 255, 255] => Significance::Neg95,
                [255, 255, 0] => Significance::Neg99,
                [0, 0, 0] => Significance::None,
                other => panic!("unexpected pixel {other:?}"),
            })
            .collect();
        for (cell, cat) in map.cells().iter().zip(&recovered) {
            assert_eq!(cell.category, *cat);
        }
        fs::remove_file(&path).unwrap();
    }

    #[test]
    fn categorize_pos99_implies_pos95_rule() {
        let t95 = tdist::quantile(0.975, 24.0);
        let t99 = tdist::quantile(0.995, 24.0);
        // scan a grid of means and sds; wherever the 99% rule fires, the 95%
        // rule (with the narrower interval) must fire too
        for i in 0..200 {
            let mean = -5.0 + i as f64 * 0.05;
            for j in 1..50 {
                let sd = j as f64 * 0.1;
                let se = sd / 5.0;
                if mean - t99 * se > 0.0 {
                    assert!(mean - t95 * se > 0.0);
                }
                if mean + t99 * se < 0.0 {
                    assert!(mean + t95 * se < 0.0);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn response_equals_bruteforce(
            spikes in proptest::collection::vec((0usize..GRID_ELECTRODES, 0u32..600), 0..200),
            t_s in 200u32..400,
        ) {
            let raster = raster_with(&spikes, 600);
            let mut dedup = spikes.clone();
            dedup.sort_unstable();
            dedup.dedup();
            for e in [coord(0, 0), coord(10, 20), coord(63, 63)] {
                let brute_post = dedup.iter()
                    .filter(|&&(idx, s)| idx == e.index() && s >= t_s && s < t_s + 200)
                    .count() as i64;
                let brute_pre = dedup.iter()
                    .filter(|&&(idx, s)| idx == e.index() && s >= t_s - 200 && s < t_s)
                    .count() as i64;
                prop_assert_eq!(response(&raster, e, t_s, 200).unwrap(), brute_post - brute_pre);
            }
        }

        #[test]
        fn category_scale_invariant(
            mean in -5.0f64..5.0,
            sd in 0.01f64..5.0,
            scale in 0.01f64..100.0,
        ) {
            let t95 = tdist::quantile(0.975, 24.0);
            let t99 = tdist::quantile(0.995, 24.0);
            let a = categorize(mean, sd, 25, t95, t99);
            let b = categorize(mean * scale, sd * scale, 25, t95, t99);
            prop_assert_eq!(a, b);
        }
    }
}
