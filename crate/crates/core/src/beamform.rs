//! MVDR beamforming from speech and noise spatial covariance matrices.
//!
//! Weights follow the covariance-quotient form w = (Phi_n^-1 Phi_x / trace) u_ref
//! and are applied as w^H y, which passes the reference-channel image of a
//! rank-one source undistorted.

use ndarray::{Array1, Array2, Array3, ArrayView2, ArrayView3};
use ndarray::parallel::prelude::*;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, HermitianCholesky};
use crate::stft::Spectrogram;

/// Default diagonal loading applied when the noise SCM fails to factor.
const NOISE_LOADING: f64 = 1e-6;

/// Trace magnitudes below this are treated as a degenerate speech SCM.
const TRACE_EPSILON: f64 = 1e-300;

/// Beamforming weights, per frequency or per frame and frequency.
#[derive(Debug, Clone)]
pub enum WeightsData {
    /// shape (bins, channels)
    Static(Array2<Complex64>),
    /// shape (frames, bins, channels)
    TimeVarying(Array3<Complex64>),
}

#[derive(Debug, Clone)]
pub struct BeamformerWeights {
    pub data: WeightsData,
    pub reference_channel: usize,
}

/// MVDR weights for one frequency: w = (Phi_n^-1 Phi_x / tr(Phi_n^-1 Phi_x)) u_ref.
///
/// A noise SCM that fails to factor is retried with diagonal loading; a
/// vanishing trace (no speech energy) is a numerical error.
pub fn mvdr_weights(
    phi_x: ArrayView2<Complex64>,
    phi_n: ArrayView2<Complex64>,
    reference: usize,
) -> Result<Array1<Complex64>> {
    let d = phi_x.nrows();
    if phi_n.nrows() != d || reference >= d {
        return Err(Error::invalid("SCM dimensions or reference channel out of range"));
    }
    let (chol, _) = HermitianCholesky::new_loaded(phi_n, NOISE_LOADING)
        .map_err(|_| Error::numerical("noise SCM singular even after loading"))?;
    let m = chol.solve_mat(phi_x);
    let tr = linalg::trace(m.view());
    if tr.norm() < TRACE_EPSILON {
        return Err(Error::numerical("trace of Phi_n^-1 Phi_x vanishes"));
    }
    Ok(m.column(reference).mapv(|v| v / tr))
}

/// MVDR weights for every frequency, shapes (bins, D, D).
pub fn mvdr_weights_per_freq(
    phi_x: ArrayView3<Complex64>,
    phi_n: ArrayView3<Complex64>,
    reference: usize,
) -> Result<BeamformerWeights> {
    let bins = phi_x.shape()[0];
    let d = phi_x.shape()[1];
    if phi_n.shape() != phi_x.shape() {
        return Err(Error::invalid("speech and noise SCM sets differ in shape"));
    }
    let mut weights = Array2::zeros((bins, d));
    let rows: Vec<Result<Array1<Complex64>>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            mvdr_weights(
                phi_x.index_axis(ndarray::Axis(0), f),
                phi_n.index_axis(ndarray::Axis(0), f),
                reference,
            )
        })
        .collect();
    for (f, row) in rows.into_iter().enumerate() {
        let w = row.map_err(|e| Error::numerical(format!("bin {f}: {e}")))?;
        weights.row_mut(f).assign(&w);
    }
    Ok(BeamformerWeights { data: WeightsData::Static(weights), reference_channel: reference })
}

/// Per-frame MVDR weights from time-varying SCM sequences, shapes
/// (frames, bins, D, D). A bin that fails at some frame falls back to the
/// previous frame's weights (the reference selector before any success).
pub fn mvdr_weights_time_varying(
    phi_x: &ndarray::ArrayView4<Complex64>,
    phi_n: &ndarray::ArrayView4<Complex64>,
    reference: usize,
) -> Result<BeamformerWeights> {
    let (frames, bins, d) = (phi_x.shape()[0], phi_x.shape()[1], phi_x.shape()[2]);
    if phi_n.shape() != phi_x.shape() {
        return Err(Error::invalid("speech and noise SCM sequences differ in shape"));
    }
    if reference >= d {
        return Err(Error::invalid("reference channel out of range"));
    }
    let mut weights = Array3::zeros((frames, bins, d));
    let mut selector = Array1::zeros(d);
    selector[reference] = Complex64::new(1.0, 0.0);
    for f in 0..bins {
        let mut last: Array1<Complex64> = selector.clone();
        for t in 0..frames {
            match mvdr_weights(
                phi_x.slice(ndarray::s![t, f, .., ..]),
                phi_n.slice(ndarray::s![t, f, .., ..]),
                reference,
            ) {
                Ok(w) => last = w,
                Err(_) => {}
            }
            weights.slice_mut(ndarray::s![t, f, ..]).assign(&last);
        }
    }
    Ok(BeamformerWeights { data: WeightsData::TimeVarying(weights), reference_channel: reference })
}

/// Apply beamforming weights: out[t, f] = w_f^H y[t, f].
pub fn apply(spec: &Spectrogram, weights: &BeamformerWeights) -> Result<Spectrogram> {
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let mut out = Spectrogram::zeros(frames, 1, spec.config);
    match &weights.data {
        WeightsData::Static(w) => {
            if w.shape() != [bins, channels] {
                return Err(Error::invalid("weight dimensions do not match spectrogram"));
            }
            for t in 0..frames {
                for f in 0..bins {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for d in 0..channels {
                        acc += w[(f, d)].conj() * spec.data[(t, f, d)];
                    }
                    out.data[(t, f, 0)] = acc;
                }
            }
        }
        WeightsData::TimeVarying(w) => {
            if w.shape() != [frames, bins, channels] {
                return Err(Error::invalid("weight dimensions do not match spectrogram"));
            }
            for t in 0..frames {
                for f in 0..bins {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for d in 0..channels {
                        acc += w[(t, f, d)].conj() * spec.data[(t, f, d)];
                    }
                    out.data[(t, f, 0)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Pick the reference channel maximizing the average diagonal SNR proxy
/// sum_f Phi_x[d,d] / Phi_n[d,d]. Channels whose noise diagonal vanishes at
/// every bin are excluded; ties go to the lowest index.
pub fn select_reference(phi_x: ArrayView3<Complex64>, phi_n: ArrayView3<Complex64>) -> usize {
    let bins = phi_x.shape()[0];
    let d = phi_x.shape()[1];
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for ch in 0..d {
        let mut score = 0.0;
        let mut valid = 0usize;
        for f in 0..bins {
            let noise = phi_n[(f, ch, ch)].re;
            if noise > 0.0 {
                score += phi_x[(f, ch, ch)].re / noise;
                valid += 1;
            }
        }
        if valid == 0 {
            continue;
        }
        let score = score / valid as f64;
        if score > best_score {
            best_score = score;
            best = ch;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{Array3 as NdArray3, Array4};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use crate::stft::{StftConfig, Window};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vector(d: usize, rng: &mut ChaCha8Rng) -> Array1<Complex64> {
        Array1::from_shape_fn(d, |_| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    fn random_pd(d: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
        let mut a = Array2::<Complex64>::zeros((d, d));
        for _ in 0..(2 * d) {
            let v = random_vector(d, rng);
            for i in 0..d {
                for j in 0..d {
                    a[(i, j)] += v[i] * v[j].conj();
                }
            }
        }
        for i in 0..d {
            a[(i, i)] += c(0.1, 0.0);
        }
        a
    }

    fn outer(h: &Array1<Complex64>) -> Array2<Complex64> {
        let d = h.len();
        Array2::from_shape_fn((d, d), |(i, j)| h[i] * h[j].conj())
    }

    #[test]
    fn white_noise_weights_match_matched_filter() {
        // Phi_n = sigma^2 I, Phi_x = h h^H -> w = h conj(h_ref) / |h|^2
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sigma2 in [0.1, 1.0, 7.5] {
            let h = random_vector(4, &mut rng);
            let phi_x = outer(&h);
            let phi_n = Array2::from_shape_fn((4, 4), |(i, j)| {
                if i == j { c(sigma2, 0.0) } else { c(0.0, 0.0) }
            });
            let w = mvdr_weights(phi_x.view(), phi_n.view(), 2).unwrap();
            let hn2: f64 = h.iter().map(|v| v.norm_sqr()).sum();
            for i in 0..4 {
                let want = h[i] * h[2].conj() / hn2;
                assert_abs_diff_eq!(w[i].re, want.re, epsilon = 1e-10);
                assert_abs_diff_eq!(w[i].im, want.im, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn weights_invariant_to_scm_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi_x = random_pd(3, &mut rng);
        let phi_n = random_pd(3, &mut rng);
        let w = mvdr_weights(phi_x.view(), phi_n.view(), 0).unwrap();
        let wx = mvdr_weights(phi_x.mapv(|v| v * 17.0).view(), phi_n.view(), 0).unwrap();
        let wn = mvdr_weights(phi_x.view(), phi_n.mapv(|v| v * 0.03).view(), 0).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(w[i].re, wx[i].re, epsilon = 1e-12);
            assert_abs_diff_eq!(w[i].im, wx[i].im, epsilon = 1e-12);
            assert_abs_diff_eq!(w[i].re, wn[i].re, epsilon = 1e-10);
            assert_abs_diff_eq!(w[i].im, wn[i].im, epsilon = 1e-10);
        }
    }

    #[test]
    fn single_channel_weight_is_one() {
        let phi_x = Array2::from_elem((1, 1), c(3.7, 0.0));
        let phi_n = Array2::from_elem((1, 1), c(0.2, 0.0));
        let w = mvdr_weights(phi_x.view(), phi_n.view(), 0).unwrap();
        assert_abs_diff_eq!(w[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w[0].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn distortionless_over_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h = random_vector(4, &mut rng);
            let phi_x = outer(&h);
            let phi_n = random_pd(4, &mut rng);
            let w = mvdr_weights(phi_x.view(), phi_n.view(), 1).unwrap();
            let response: Complex64 = (0..4).map(|i| w[i].conj() * h[i]).sum();
            let err = (response - h[1]).norm() / h[1].norm();
            assert!(err < 1e-8, "distortion {err}");
        }
    }

    #[test]
    fn apply_selector_weight_returns_reference_channel() {
        let cfg = StftConfig::new(4, 2, 4, Window::SqrtHann, 16_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = NdArray3::from_shape_fn((5, 3, 2), |_| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let spec = Spectrogram::new(data, cfg).unwrap();
        let mut w = Array2::zeros((3, 2));
        for f in 0..3 {
            w[(f, 1)] = c(1.0, 0.0);
        }
        let bf = BeamformerWeights { data: WeightsData::Static(w), reference_channel: 1 };
        let out = apply(&spec, &bf).unwrap();
        for t in 0..5 {
            for f in 0..3 {
                assert_eq!(out.data[(t, f, 0)], spec.data[(t, f, 1)]);
            }
        }
    }

    #[test]
    fn apply_zero_spectrogram_gives_zero() {
        let cfg = StftConfig::new(4, 2, 4, Window::SqrtHann, 16_000).unwrap();
        let spec = Spectrogram::zeros(4, 3, cfg);
        let w = Array2::from_elem((3, 3), c(0.3, -0.2));
        let bf = BeamformerWeights { data: WeightsData::Static(w), reference_channel: 0 };
        let out = apply(&spec, &bf).unwrap();
        assert!(out.data.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn select_reference_prefers_strong_speech_channel() {
        // identical channels -> 0; doubling one channel's speech diagonal
        // selects that channel
        let bins = 4;
        let d = 3;
        let mut phi_x = Array3::zeros((bins, d, d));
        let mut phi_n = Array3::zeros((bins, d, d));
        for f in 0..bins {
            for ch in 0..d {
                phi_x[(f, ch, ch)] = c(1.0, 0.0);
                phi_n[(f, ch, ch)] = c(0.5, 0.0);
            }
        }
        assert_eq!(select_reference(phi_x.view(), phi_n.view()), 0);
        for f in 0..bins {
            phi_x[(f, 2, 2)] = c(2.0, 0.0);
        }
        assert_eq!(select_reference(phi_x.view(), phi_n.view()), 2);
    }

    #[test]
    fn select_reference_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bins = 6;
        let d = 3;
        let mut phi_x = Array3::zeros((bins, d, d));
        let mut phi_n = Array3::zeros((bins, d, d));
        for f in 0..bins {
            let x = random_pd(d, &mut rng);
            let n = random_pd(d, &mut rng);
            phi_x.slice_mut(ndarray::s![f, .., ..]).assign(&x);
            phi_n.slice_mut(ndarray::s![f, .., ..]).assign(&n);
        }
        let mut scores = vec![0.0; d];
        for ch in 0..d {
            for f in 0..bins {
                scores[ch] += phi_x[(f, ch, ch)].re / phi_n[(f, ch, ch)].re;
            }
        }
        let oracle = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(select_reference(phi_x.view(), phi_n.view()), oracle);
    }

    #[test]
    fn time_varying_weights_fall_back_on_failure() {
        let frames = 3;
        let bins = 2;
        let d = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut phi_x = Array4::zeros((frames, bins, d, d));
        let mut phi_n = Array4::zeros((frames, bins, d, d));
        for t in 0..frames {
            for f in 0..bins {
                let x = random_pd(d, &mut rng);
                let n = random_pd(d, &mut rng);
                phi_x.slice_mut(ndarray::s![t, f, .., ..]).assign(&x);
                phi_n.slice_mut(ndarray::s![t, f, .., ..]).assign(&n);
            }
        }
        // frame 1, bin 0: zero speech SCM -> vanishing trace -> reuse frame 0
        phi_x.slice_mut(ndarray::s![1, 0, .., ..]).fill(c(0.0, 0.0));
        let w = mvdr_weights_time_varying(&phi_x.view(), &phi_n.view(), 0).unwrap();
        if let WeightsData::TimeVarying(w) = &w.data {
            for ch in 0..d {
                assert_eq!(w[(1, 0, ch)], w[(0, 0, ch)]);
                assert_ne!(w[(1, 1, ch)], w[(0, 1, ch)]);
            }
        } else {
            panic!("expected time-varying weights");
        }
    }
}
