//! DFT and DCT periodograms.
//!
//! The DFT periodogram uses the unitary `1/√n` scaling and keeps the
//! non-redundant half spectrum, bins `0..=n/2`. The DCT periodogram is the
//! absolute value of the orthonormal DCT-II, bins `0..n`, with the `1/√2`
//! weight on bin 0 so that a constant `c` maps to `c·√n` at bin 0.

use std::cell::RefCell;
use std::f64::consts::PI;

use ndarray::ArrayView3;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SpectralTransform {
    #[default]
    Dft,
    Dct,
}

impl SpectralTransform {
    /// Number of stored bins for an input of length `n`.
    pub fn bin_count(self, n: usize) -> usize {
        match self {
            SpectralTransform::Dft => n / 2 + 1,
            SpectralTransform::Dct => n,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SpectralTransform::Dft => "FFT",
            SpectralTransform::Dct => "DCT",
        }
    }
}

impl std::str::FromStr for SpectralTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dft" | "fft" => Ok(SpectralTransform::Dft),
            "dct" => Ok(SpectralTransform::Dct),
            other => Err(Error::InvalidConfig(format!("unknown transform {other:?}"))),
        }
    }
}

/// Power per frequency bin of one real sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Periodogram {
    pub power: Vec<f64>,
    pub n_input: usize,
    pub transform: SpectralTransform,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let plan = if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Transform coefficients of one sequence, kept so that the periodogram's
/// derivative can be evaluated without recomputing the transform.
#[derive(Debug, Clone)]
pub struct Spectrum {
    n: usize,
    coeffs: Coefficients,
}

#[derive(Debug, Clone)]
enum Coefficients {
    /// Unitary DFT coefficients for bins `0..=n/2`.
    Dft(Vec<Complex64>),
    /// Orthonormal DCT-II coefficients for bins `0..n`.
    Dct(Vec<f64>),
}

impl Spectrum {
    /// Accepts any `n ≥ 1`; a length-1 sequence yields `y²` (DFT) or `|y|`
    /// (DCT) as its single power value.
    pub fn compute(x: &[f64], transform: SpectralTransform) -> Self {
        let n = x.len();
        assert!(n >= 1, "spectrum of an empty sequence");
        let coeffs = match transform {
            SpectralTransform::Dft => Coefficients::Dft(dft_half(x)),
            SpectralTransform::Dct => Coefficients::Dct(dct_ortho(x)),
        };
        Self { n, coeffs }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn transform(&self) -> SpectralTransform {
        match self.coeffs {
            Coefficients::Dft(_) => SpectralTransform::Dft,
            Coefficients::Dct(_) => SpectralTransform::Dct,
        }
    }

    pub fn power(&self) -> Vec<f64> {
        match &self.coeffs {
            Coefficients::Dft(c) => c.iter().map(|z| z.re * z.re + z.im * z.im).collect(),
            Coefficients::Dct(c) => c.iter().map(|v| v.abs()).collect(),
        }
    }

    /// Vector-Jacobian product: returns `∂(Σ_j upstream_j · Φ_j) / ∂x`.
    ///
    /// `|·|` contributes `sign(C_j)` with `sign(0) = 0`.
    pub fn power_vjp(&self, upstream: &[f64]) -> Vec<f64> {
        let n = self.n;
        match &self.coeffs {
            Coefficients::Dft(c) => {
                assert_eq!(upstream.len(), c.len());
                // ∂Φ_j/∂x_t = (2/√n)·Re(X_j·e^{+2πi jt/n})
                let mut buf = vec![Complex64::new(0.0, 0.0); n];
                for (j, (z, u)) in c.iter().zip(upstream).enumerate() {
                    buf[j] = z * *u;
                }
                fft_in_place(&mut buf, true);
                let scale = 2.0 / (n as f64).sqrt();
                buf.iter().map(|z| scale * z.re).collect()
            }
            Coefficients::Dct(c) => {
                assert_eq!(upstream.len(), c.len());
                let weights: Vec<f64> = c
                    .iter()
                    .zip(upstream)
                    .map(|(v, u)| if *v == 0.0 { 0.0 } else { u * v.signum() })
                    .collect();
                dct_ortho_transpose(&weights)
            }
        }
    }
}

/// Unitary DFT, bins `0..=n/2`.
pub fn dft_half(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    fft_in_place(&mut buf, false);
    let scale = 1.0 / (n as f64).sqrt();
    buf.truncate(n / 2 + 1);
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

fn dct_bin_scale(j: usize, n: usize) -> f64 {
    let base = (2.0 / n as f64).sqrt();
    if j == 0 {
        base * std::f64::consts::FRAC_1_SQRT_2
    } else {
        base
    }
}

/// Orthonormal DCT-II through one length-`n` complex FFT of the even/odd
/// reordered input.
pub fn dct_ortho(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n.div_ceil(2) {
        v[k].re = x[2 * k];
    }
    for k in 0..n / 2 {
        v[n - 1 - k].re = x[2 * k + 1];
    }
    fft_in_place(&mut v, false);
    (0..n)
        .map(|j| {
            let twiddle = Complex64::from_polar(1.0, -PI * j as f64 / (2 * n) as f64);
            dct_bin_scale(j, n) * (twiddle * v[j]).re
        })
        .collect()
}

/// Transpose (equivalently the inverse) of [`dct_ortho`], via a length-`2n`
/// inverse FFT.
pub fn dct_ortho_transpose(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * n];
    for (j, uj) in u.iter().enumerate() {
        let twiddle = Complex64::from_polar(1.0, PI * j as f64 / (2 * n) as f64);
        buf[j] = twiddle * (dct_bin_scale(j, n) * uj);
    }
    fft_in_place(&mut buf, true);
    buf[..n].iter().map(|z| z.re).collect()
}

fn check_len(x: &[f64]) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::InputTooShort {
            needed: 2,
            got: x.len(),
        });
    }
    Ok(())
}

pub fn periodogram_dft(x: &[f64]) -> Result<Periodogram> {
    periodogram(x, SpectralTransform::Dft)
}

pub fn periodogram_dct(x: &[f64]) -> Result<Periodogram> {
    periodogram(x, SpectralTransform::Dct)
}

pub fn periodogram(x: &[f64], transform: SpectralTransform) -> Result<Periodogram> {
    check_len(x)?;
    Ok(Periodogram {
        power: Spectrum::compute(x, transform).power(),
        n_input: x.len(),
        transform,
    })
}

/// Periodograms of every (series, feature) slice, series-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodogramBatch {
    pub n_series: usize,
    pub n_features: usize,
    pub grams: Vec<Periodogram>,
}

impl PeriodogramBatch {
    pub fn get(&self, series: usize, feature: usize) -> &Periodogram {
        &self.grams[series * self.n_features + feature]
    }
}

/// Applies the periodogram along the time axis of each `(n, f)` slice.
pub fn batch_periodogram(
    values: ArrayView3<'_, f64>,
    transform: SpectralTransform,
) -> Result<PeriodogramBatch> {
    let (n_series, n_time, n_features) = values.dim();
    if n_time < 2 {
        return Err(Error::InputTooShort {
            needed: 2,
            got: n_time,
        });
    }
    let mut grams = Vec::with_capacity(n_series * n_features);
    let mut lane = vec![0.0; n_time];
    for n in 0..n_series {
        for f in 0..n_features {
            for (t, v) in lane.iter_mut().enumerate() {
                *v = values[[n, t, f]];
            }
            grams.push(periodogram(&lane, transform)?);
        }
    }
    Ok(PeriodogramBatch {
        n_series,
        n_features,
        grams,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        assert_eq!(a.len(), b.len());
        let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= rel * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn dft_constant_signal() {
        let p = periodogram_dft(&[1.0; 4]).unwrap();
        assert_close(&p.power, &[4.0, 0.0, 0.0], 1e-15);
        assert_eq!(p.n_input, 4);
    }

    #[test]
    fn dft_unit_impulse() {
        let p = periodogram_dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_close(&p.power, &[0.25, 0.25, 0.25], 1e-15);
    }

    #[test]
    fn dft_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 8);
        assert_close(&periodogram_dft(&x).unwrap().power, &oracle::dft_power(&x), 1e-12);
    }

    #[test]
    fn dct_constant_signal() {
        let p = periodogram_dct(&[1.0; 4]).unwrap();
        assert_close(&p.power, &[2.0, 0.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn dct_sign_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_vec(&mut rng, 9);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(periodogram_dct(&x).unwrap().power, periodogram_dct(&neg).unwrap().power);
    }

    #[test]
    fn dct_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_vec(&mut rng, 8);
        assert_close(&periodogram_dct(&x).unwrap().power, &oracle::dct_power(&x), 1e-12);
    }

    #[test]
    fn too_short_inputs_rejected() {
        assert!(matches!(periodogram_dft(&[1.0]), Err(Error::InputTooShort { .. })));
        assert!(matches!(periodogram_dct(&[]), Err(Error::InputTooShort { .. })));
    }

    #[test]
    fn length_one_spectrum_is_degenerate_power() {
        assert_eq!(Spectrum::compute(&[-3.0], SpectralTransform::Dft).power(), vec![9.0]);
        assert!((Spectrum::compute(&[-3.0], SpectralTransform::Dct).power()[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn dct_transpose_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in [1, 2, 3, 7, 16, 33] {
            let x = random_vec(&mut rng, n);
            let back = dct_ortho_transpose(&dct_ortho(&x));
            assert_close(&back, &x, 1e-12);
        }
    }

    #[test]
    fn batch_shapes_and_slices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let values = ndarray::Array3::from_shape_fn((2, 4, 3), |_| rng.random_range(-1.0..1.0));
        let b = batch_periodogram(values.view(), SpectralTransform::Dft).unwrap();
        assert_eq!(b.grams.len(), 6);
        assert!(b.grams.iter().all(|g| g.power.len() == 3));
        let b = batch_periodogram(values.view(), SpectralTransform::Dct).unwrap();
        assert!(b.grams.iter().all(|g| g.power.len() == 4));

        let x = random_vec(&mut rng, 8);
        let single = ndarray::Array3::from_shape_vec((1, 8, 1), x.clone()).unwrap();
        let b = batch_periodogram(single.view(), SpectralTransform::Dft).unwrap();
        assert_eq!(b.get(0, 0), &periodogram_dft(&x).unwrap());
    }

    #[test]
    fn batch_identical_slices_identical_grams() {
        let lane: Vec<f64> = (0..16).map(|t| (t as f64 * 0.7).sin()).collect();
        let values = ndarray::Array3::from_shape_fn((3, 16, 2), |(_, t, _)| lane[t]);
        let b = batch_periodogram(values.view(), SpectralTransform::Dct).unwrap();
        assert!(b.grams.windows(2).all(|w| w[0] == w[1]));
    }

    fn fd_check(x: &[f64], transform: SpectralTransform, upstream: &[f64]) {
        let analytic = Spectrum::compute(x, transform).power_vjp(upstream);
        let f = |y: &[f64]| -> f64 {
            Spectrum::compute(y, transform)
                .power()
                .iter()
                .zip(upstream)
                .map(|(p, u)| p * u)
                .sum()
        };
        let h = 1e-6;
        for t in 0..x.len() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[t] += h;
            xm[t] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            assert!((fd - analytic[t]).abs() < 1e-6 * (1.0 + fd.abs()), "t={t}: {fd} vs {}", analytic[t]);
        }
    }

    #[test]
    fn power_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for n in [2, 5, 8, 13] {
            let x = random_vec(&mut rng, n);
            for transform in [SpectralTransform::Dft, SpectralTransform::Dct] {
                let up = random_vec(&mut rng, transform.bin_count(n));
                fd_check(&x, transform, &up);
            }
        }
    }

    proptest! {
        #[test]
        fn dft_shift_invariance(x in prop::collection::vec(-10.0f64..10.0, 2..80), s in 0usize..80) {
            let n = x.len();
            let shifted: Vec<f64> = (0..n).map(|t| x[(t + s) % n]).collect();
            let a = periodogram_dft(&x).unwrap().power;
            let b = periodogram_dft(&shifted).unwrap().power;
            let scale = a.iter().fold(1.0f64, |m, v| m.max(*v));
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn dft_parseval(x in prop::collection::vec(-10.0f64..10.0, 2..100)) {
            let n = x.len();
            let p = periodogram_dft(&x).unwrap().power;
            // interior bins stand for themselves and their conjugate mirror
            let full: f64 = p.iter().enumerate().map(|(j, v)| {
                let mirrored = j != 0 && !(n % 2 == 0 && j == n / 2);
                if mirrored { 2.0 * v } else { *v }
            }).sum();
            let energy: f64 = x.iter().map(|v| v * v).sum();
            prop_assert!((full - energy).abs() <= 1e-9 * energy.max(1.0));
        }

        #[test]
        fn power_is_nonnegative(x in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            for t in [SpectralTransform::Dft, SpectralTransform::Dct] {
                let p = periodogram(&x, t).unwrap();
                prop_assert_eq!(p.power.len(), t.bin_count(x.len()));
                prop_assert!(p.power.iter().all(|v| *v >= 0.0 && v.is_finite()));
            }
        }
    }
}
