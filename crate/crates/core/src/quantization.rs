//! Uniform mid-point quantizers, subtractive dither, and empirical checks of
//! the dithered error statistics.
//!
//! A `b`-bit quantizer on `[x_min, x_max]` has resolution
//! `eps = (x_max - x_min) / 2^b`. Encoding maps `x` to the cell index
//! `floor((x - x_min) / eps)` clamped to `0..2^b`, decoding returns the cell
//! midpoint. Subtractive dither adds `w ~ U[-eps/2, eps/2]` before encoding and
//! removes it after decoding, which makes the reconstruction error independent
//! of the signal and uniform on `[-eps/2, eps/2]`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng_from_seed};

pub const MAX_WORD_LENGTH: u32 = 32;

/// Relative widening applied on each side when a quantizer range is derived
/// from observed data.
pub const DATA_RANGE_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    x_min: f64,
    x_max: f64,
    word_length: u32,
    eps: f64,
}

/// Result of one quantization: the decoded value and whether the encoder
/// clamped its input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    pub saturated: bool,
}

impl Quantizer {
    pub fn new(x_min: f64, x_max: f64, word_length: u32) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::InvalidRange { x_min, x_max });
        }
        if word_length == 0 || word_length > MAX_WORD_LENGTH {
            return Err(Error::InvalidWordLength(word_length));
        }
        // division by a power of two is exact
        let eps = (x_max - x_min) / 2f64.powi(word_length as i32);
        Ok(Self {
            x_min,
            x_max,
            word_length,
            eps,
        })
    }

    /// Quantizer whose range covers `[lo, hi]` widened by
    /// [`DATA_RANGE_MARGIN`] of the span on each side. A degenerate span
    /// (constant signal) is widened relative to `max(|lo|, 1)`.
    pub fn covering(lo: f64, hi: f64, word_length: u32) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(Error::InvalidRange {
                x_min: lo,
                x_max: hi,
            });
        }
        let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
        Self::new(
            lo - DATA_RANGE_MARGIN * span,
            hi + DATA_RANGE_MARGIN * span,
            word_length,
        )
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn word_length(&self) -> u32 {
        self.word_length
    }

    pub fn resolution(&self) -> f64 {
        self.eps
    }

    pub fn levels(&self) -> u64 {
        1u64 << self.word_length
    }

    /// Cell index of `x`; values outside the range saturate to the end cells.
    /// `x == x_max` belongs to the top cell.
    pub fn encode(&self, x: f64) -> (u64, bool) {
        let top = self.levels() - 1;
        if x.is_nan() {
            return (0, true);
        }
        let saturated = x < self.x_min || x > self.x_max;
        let cell = ((x - self.x_min) / self.eps).floor();
        let code = if cell <= 0.0 {
            0
        } else if cell >= top as f64 {
            top
        } else {
            cell as u64
        };
        (code, saturated)
    }

    pub fn decode(&self, code: u64) -> f64 {
        self.eps * code as f64 + self.x_min + 0.5 * self.eps
    }

    /// Plain mid-point quantization `decode(encode(x))`.
    pub fn quantize(&self, x: f64) -> Quantized {
        let (code, saturated) = self.encode(x);
        Quantized {
            value: self.decode(code),
            saturated,
        }
    }

    /// Subtractive dither: `Q(x + w) - w`.
    pub fn dither_quantize(&self, x: f64, w: f64) -> Quantized {
        let q = self.quantize(x + w);
        Quantized {
            value: q.value - w,
            saturated: q.saturated,
        }
    }
}

/// Seeded stream of i.i.d. dither samples.
///
/// Samples are drawn as `(u - 1/2) * eps` with `u` uniform on `[0, 1)`, so
/// one stream can serve quantizers of different resolution.
#[derive(Debug, Clone)]
pub struct DitherStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl DitherStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: rng_from_seed(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `(label, index)`.
    pub fn substream(&self, label: &str, index: u64) -> Self {
        Self::new(derive_seed(self.seed, label, &[index]))
    }

    pub fn next_dither(&mut self, eps: f64) -> f64 {
        let u: f64 = self.rng.random();
        (u - 0.5) * eps
    }
}

/// Quantizers applied to the coordinates of a vector signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "quantizers", rename_all = "kebab-case")]
pub enum QuantizerBank {
    Shared(Quantizer),
    PerCoordinate(Vec<Quantizer>),
}

impl QuantizerBank {
    pub fn get(&self, i: usize) -> &Quantizer {
        match self {
            QuantizerBank::Shared(q) => q,
            QuantizerBank::PerCoordinate(qs) => &qs[i],
        }
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            QuantizerBank::Shared(_) => Ok(()),
            QuantizerBank::PerCoordinate(qs) if qs.len() == n => Ok(()),
            QuantizerBank::PerCoordinate(qs) => Err(Error::DimensionMismatch {
                context: "quantizer bank",
                expected: qs.len(),
                actual: n,
            }),
        }
    }

    /// Largest resolution across coordinates.
    pub fn max_resolution(&self) -> f64 {
        match self {
            QuantizerBank::Shared(q) => q.resolution(),
            QuantizerBank::PerCoordinate(qs) => {
                qs.iter().map(Quantizer::resolution).fold(0.0, f64::max)
            }
        }
    }

    /// Bank covering per-row data ranges of `rows` (each row one coordinate).
    pub fn covering_rows<I>(rows: I, word_length: u32) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        rows.into_iter()
            .map(|(lo, hi)| Quantizer::covering(lo, hi, word_length))
            .collect::<Result<Vec<_>>>()
            .map(QuantizerBank::PerCoordinate)
    }
}

/// Dither-quantizes `x` coordinatewise, drawing exactly `x.len()` samples
/// from `stream`. Returns the decoded vector and the number of saturated
/// coordinates.
pub fn dither_quantize_vector(
    bank: &QuantizerBank,
    x: &[f64],
    stream: &mut DitherStream,
) -> Result<(Vec<f64>, usize)> {
    bank.check_dim(x.len())?;
    let mut saturations = 0;
    let out = x
        .iter()
        .enumerate()
        .map(|(i, &xi)| {
            let q = bank.get(i);
            let w = stream.next_dither(q.resolution());
            let r = q.dither_quantize(xi, w);
            saturations += r.saturated as usize;
            r.value
        })
        .collect();
    Ok((out, saturations))
}

/// Realized quantization errors, one row per coordinate and one column per
/// time index.
#[derive(Debug, Clone)]
pub struct ErrorSampleSet {
    errors: DMatrix<f64>,
}

impl ErrorSampleSet {
    /// Validates that every entry lies in `[-eps/2, eps/2]` (up to rounding).
    pub fn new(errors: DMatrix<f64>, eps: f64) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let bound = 0.5 * eps * (1.0 + 1e-9);
        if let Some(bad) = errors.iter().find(|e| !(e.abs() <= bound)) {
            return Err(Error::InvalidArgument(format!(
                "error sample {bad} outside [-eps/2, eps/2] for eps = {eps}"
            )));
        }
        Ok(Self { errors })
    }

    pub fn errors(&self) -> &DMatrix<f64> {
        &self.errors
    }
}

/// Dithered errors of `q` on `dim` independent signals drawn uniformly from
/// the non-saturating part of its range, `samples` time steps each.
pub fn sample_dither_errors(q: &Quantizer, dim: usize, samples: usize, seed: u64) -> Result<ErrorSampleSet> {
    let eps = q.resolution();
    let (lo, hi) = (q.x_min() + 0.5 * eps, q.x_max() - 0.5 * eps);
    let mut signal = rng_from_seed(derive_seed(seed, "signal", &[]));
    let mut dither = DitherStream::new(derive_seed(seed, "dither", &[]));
    let mut errors = DMatrix::zeros(dim, samples);
    for t in 0..samples {
        for i in 0..dim {
            let x = if hi > lo { signal.random_range(lo..hi) } else { lo };
            let w = dither.next_dither(eps);
            errors[(i, t)] = q.dither_quantize(x, w).value - x;
        }
    }
    ErrorSampleSet::new(errors, eps)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateMoments {
    pub mean: f64,
    pub variance: f64,
    pub lag1_autocovariance: f64,
    pub z_mean: f64,
    pub z_variance: f64,
    pub z_lag1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossMoment {
    pub i: usize,
    pub j: usize,
    pub covariance: f64,
    pub z: f64,
}

/// Empirical error moments next to their dithered-uniform targets
/// (mean 0, variance `eps^2/12`, zero lag-1 and cross covariances).
#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub eps: f64,
    pub samples: usize,
    pub target_variance: f64,
    pub coordinates: Vec<CoordinateMoments>,
    pub cross: Vec<CrossMoment>,
    /// Set when some coordinate has zero empirical variance.
    pub degenerate_variance: bool,
}

impl MomentReport {
    pub fn max_abs_z(&self) -> f64 {
        self.coordinates
            .iter()
            .flat_map(|c| [c.z_mean, c.z_variance, c.z_lag1])
            .chain(self.cross.iter().map(|c| c.z))
            .fold(0.0, |acc, z| acc.max(z.abs()))
    }
}

/// Moment report with z-scores against the uniform-error law. Standard
/// deviations use the exact moments of `U[-eps/2, eps/2]`: `sd(mean) =
/// eps/sqrt(12 T)`, `sd(var) = eps^2/sqrt(180 T)`, `sd(product mean) =
/// (eps^2/12)/sqrt(T)`.
pub fn error_moment_report(samples: &ErrorSampleSet, eps: f64) -> Result<MomentReport> {
    let e = samples.errors();
    let (dim, t) = e.shape();
    if t == 0 || dim == 0 {
        return Err(Error::EmptySampleSet);
    }
    let tf = t as f64;
    let target_variance = eps * eps / 12.0;
    let sd_mean = eps / (12.0 * tf).sqrt();
    let sd_var = eps * eps / (180.0 * tf).sqrt();

    let means: Vec<f64> = (0..dim).map(|i| e.row(i).sum() / tf).collect();
    let mut degenerate = false;
    let coordinates = (0..dim)
        .map(|i| {
            let row = e.row(i);
            let m = means[i];
            let variance = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / tf;
            degenerate |= variance == 0.0;
            let (lag1, z_lag1) = if t > 1 {
                let c = (0..t - 1)
                    .map(|k| (row[k] - m) * (row[k + 1] - m))
                    .sum::<f64>()
                    / (tf - 1.0);
                (c, c / (target_variance / (tf - 1.0).sqrt()))
            } else {
                (0.0, 0.0)
            };
            CoordinateMoments {
                mean: m,
                variance,
                lag1_autocovariance: lag1,
                z_mean: m / sd_mean,
                z_variance: (variance - target_variance) / sd_var,
                z_lag1,
            }
        })
        .collect();

    let sd_cross = target_variance / tf.sqrt();
    let mut cross = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            let c = (0..t)
                .map(|k| (e[(i, k)] - means[i]) * (e[(j, k)] - means[j]))
                .sum::<f64>()
                / tf;
            cross.push(CrossMoment {
                i,
                j,
                covariance: c,
                z: c / sd_cross,
            });
        }
    }

    Ok(MomentReport {
        eps,
        samples: t,
        target_variance,
        coordinates,
        cross,
        degenerate_variance: degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn resolution_matches_formula() {
        assert_eq!(Quantizer::new(-1.0, 1.0, 4).unwrap().resolution(), 0.125);
        assert_eq!(Quantizer::new(-1.0, 1.0, 1).unwrap().resolution(), 1.0);
        assert_eq!(Quantizer::new(0.0, 10.0, 3).unwrap().resolution(), 1.25);
    }

    #[test]
    fn rejects_bad_ranges_and_word_lengths() {
        assert!(matches!(
            Quantizer::new(1.0, 1.0, 4),
            Err(Error::InvalidRange { .. })
        ));
        assert!(matches!(
            Quantizer::new(2.0, 1.0, 4),
            Err(Error::InvalidRange { .. })
        ));
        assert!(matches!(
            Quantizer::new(0.0, 1.0, 0),
            Err(Error::InvalidWordLength(0))
        ));
        assert!(matches!(
            Quantizer::new(0.0, 1.0, 33),
            Err(Error::InvalidWordLength(33))
        ));
        assert!(Quantizer::new(0.0, 1.0, 32).is_ok());
    }

    #[test]
    fn zero_dither_is_plain_midpoint() {
        let q = Quantizer::new(-1.0, 1.0, 4).unwrap();
        let r = q.dither_quantize(0.3, 0.0);
        // cell [0.25, 0.375)
        assert_eq!(r.value, 0.3125);
        assert!((r.value - 0.3).abs() <= 0.0625);
        assert!(!r.saturated);
    }

    #[test]
    fn midpoints_are_fixed_points() {
        let q = Quantizer::new(-1.0, 1.0, 4).unwrap();
        for code in 0..q.levels() {
            let mid = q.decode(code);
            assert_eq!(q.dither_quantize(mid, 0.0).value, mid);
        }
    }

    #[test]
    fn upper_edge_goes_to_top_cell_and_saturation_is_flagged() {
        let q = Quantizer::new(-1.0, 1.0, 3).unwrap();
        let top = q.quantize(1.0);
        assert_eq!(top.value, 1.0 - 0.125);
        assert!(!top.saturated);
        let low = q.quantize(-1.0);
        assert_eq!(low.value, -1.0 + 0.125);
        assert!(!low.saturated);
        assert!(q.quantize(1.5).saturated);
        assert!(q.quantize(-1.0000001).saturated);
        assert_eq!(q.quantize(7.0).value, top.value);
    }

    #[test]
    fn covering_widens_by_margin() {
        let q = Quantizer::covering(-1.0, 1.0, 4).unwrap();
        assert!((q.x_min() + 1.1).abs() < 1e-15);
        assert!((q.x_max() - 1.1).abs() < 1e-15);
        let c = Quantizer::covering(1.0, 1.0, 4).unwrap();
        assert!(c.x_min() < 1.0 && c.x_max() > 1.0);
    }

    #[test]
    fn dithered_error_within_eps_on_grid() {
        let q = Quantizer::new(-1.0, 1.0, 5).unwrap();
        let eps = q.resolution();
        for i in 1..400 {
            let x = -1.0 + 2.0 * i as f64 / 400.0;
            for j in 0..=20 {
                let w = -eps / 2.0 + eps * j as f64 / 20.0;
                let r = q.dither_quantize(x, w);
                if (x + w) > -1.0 && (x + w) < 1.0 {
                    assert!((r.value - x).abs() <= eps / 2.0 + 1e-15);
                    assert!(!r.saturated);
                }
                assert!((r.value - x).abs() <= eps + 1e-15);
            }
        }
    }

    #[test]
    fn vector_dither_consumes_one_sample_per_coordinate() {
        let bank = QuantizerBank::Shared(Quantizer::new(-1.0, 1.0, 6).unwrap());
        let mut a = DitherStream::new(11);
        let mut b = DitherStream::new(11);
        let (x1, _) = dither_quantize_vector(&bank, &[0.0, 0.0, 0.0], &mut a).unwrap();
        let (x2, _) = dither_quantize_vector(&bank, &[0.0, 0.0, 0.0], &mut b).unwrap();
        assert_eq!(x1, x2);
        for v in &x1 {
            assert!(v.abs() <= bank.max_resolution() / 2.0);
        }
        // exactly three draws were consumed
        let mut c = DitherStream::new(11);
        for _ in 0..3 {
            c.next_dither(1.0);
        }
        assert_eq!(a.next_dither(1.0), c.next_dither(1.0));
    }

    #[test]
    fn per_coordinate_bank_checks_dimension() {
        let q = Quantizer::new(-1.0, 1.0, 6).unwrap();
        let bank = QuantizerBank::PerCoordinate(vec![q, q]);
        let mut s = DitherStream::new(1);
        assert!(matches!(
            dither_quantize_vector(&bank, &[0.0; 3], &mut s),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_errors_flag_degenerate_variance() {
        let set = ErrorSampleSet::new(DMatrix::zeros(2, 100), 0.1).unwrap();
        let r = error_moment_report(&set, 0.1).unwrap();
        assert!(r.degenerate_variance);
        assert_eq!(r.coordinates[0].mean, 0.0);
        assert_eq!(r.coordinates[0].variance, 0.0);
        assert_eq!(r.cross[0].covariance, 0.0);
    }

    #[test]
    fn empty_and_out_of_bound_sets_are_rejected() {
        assert!(matches!(
            ErrorSampleSet::new(DMatrix::zeros(1, 0), 0.1),
            Err(Error::EmptySampleSet)
        ));
        assert!(ErrorSampleSet::new(DMatrix::from_element(1, 3, 0.2), 0.1).is_err());
    }

    proptest! {
        #[test]
        fn midpoint_decode_is_idempotent(x in -3.0f64..3.0, b in 1u32..16) {
            let q = Quantizer::new(-1.0, 2.0, b).unwrap();
            let once = q.quantize(x).value;
            prop_assert_eq!(q.quantize(once).value, once);
        }

        #[test]
        fn midpoint_error_in_half_open_band(x in -1.0f64..=1.0, b in 1u32..24) {
            let q = Quantizer::new(-1.0, 1.0, b).unwrap();
            let e = q.quantize(x).value - x;
            let h = q.resolution() / 2.0;
            prop_assert!(e > -h - 1e-15 && e <= h + 1e-15);
        }
    }
}
