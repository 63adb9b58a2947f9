//! Weighted prediction error dereverberation.
//!
//! Late reverberation is modeled as a multichannel linear prediction from
//! frames at least `delay` steps in the past; the filter and the per-bin
//! time-varying source variance are estimated alternately and the predicted
//! tail is subtracted from the observation.

use ndarray::{Array2, Array3, Axis};
use ndarray::parallel::prelude::*;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, HermitianCholesky};
use crate::stft::Spectrogram;

/// Diagonal loading factor on the prediction normal equations.
const NORMAL_EQUATION_LOADING: f64 = 1e-6;

/// Prediction geometry and iteration count.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WpeConfig {
    /// Prediction gap in frames; the first predicted lag.
    pub delay: usize,
    /// Number of prediction taps (lags delay .. delay + taps - 1).
    pub taps: usize,
    pub iterations: usize,
    /// Lower bound on the estimated variance.
    pub lambda_floor: f64,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self { delay: 3, taps: 10, iterations: 3, lambda_floor: 1e-10 }
    }
}

impl WpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delay == 0 {
            return Err(Error::config("wpe delay must be >= 1"));
        }
        if self.taps == 0 {
            return Err(Error::config("wpe taps must be >= 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("wpe iterations must be >= 1"));
        }
        if self.lambda_floor <= 0.0 {
            return Err(Error::config("wpe lambda_floor must be > 0"));
        }
        Ok(())
    }

    /// Stacked regressor dimension D * taps.
    pub fn stacked_dim(&self, channels: usize) -> usize {
        channels * self.taps
    }
}

/// Stacked prediction matrices per frequency, shape (bins, D*taps, D).
///
/// The predicted late tail is G^H applied to the delayed stack; tap block i
/// corresponds to lag delay + i.
#[derive(Debug, Clone)]
pub struct WpeFilter {
    pub g: Array3<Complex64>,
}

impl WpeFilter {
    pub fn zeros(bins: usize, stacked: usize, channels: usize) -> Self {
        Self { g: Array3::zeros((bins, stacked, channels)) }
    }
}

/// Per-bin time-varying variance, shape (frames, bins), floored.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceField {
    pub lambda: Array2<f64>,
}

/// Delayed regressor stack, shape (frames, bins, D*taps):
/// [y_{t-delay}; y_{t-delay-1}; ...], zero for negative frame indices.
pub fn build_delayed_stack(spec: &Spectrogram, config: &WpeConfig) -> Result<Array3<Complex64>> {
    config.validate()?;
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    if frames <= config.delay {
        return Err(Error::invalid(format!(
            "need more than delay ({}) frames, got {}",
            config.delay, frames
        )));
    }
    let stacked = config.stacked_dim(channels);
    let mut stack = Array3::zeros((frames, bins, stacked));
    for t in 0..frames {
        for tap in 0..config.taps {
            let lag = config.delay + tap;
            if lag > t {
                break;
            }
            for f in 0..bins {
                for d in 0..channels {
                    stack[(t, f, tap * channels + d)] = spec.data[(t - lag, f, d)];
                }
            }
        }
    }
    Ok(stack)
}

fn estimate_with_stack(
    spec: &Spectrogram,
    stack: &Array3<Complex64>,
    lambda: &VarianceField,
    config: &WpeConfig,
) -> Result<WpeFilter> {
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let stacked = config.stacked_dim(channels);
    if lambda.lambda.dim() != (frames, bins) {
        return Err(Error::invalid("variance field does not match spectrogram"));
    }
    let mut filter = WpeFilter::zeros(bins, stacked, channels);
    filter
        .g
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(f, mut g_f)| {
            let mut r = Array2::<Complex64>::zeros((stacked, stacked));
            let mut p = Array2::<Complex64>::zeros((stacked, channels));
            for t in 0..frames {
                let w = 1.0 / lambda.lambda[(t, f)];
                for i in 0..stacked {
                    let yi = stack[(t, f, i)];
                    if yi.norm_sqr() == 0.0 {
                        continue;
                    }
                    for j in i..stacked {
                        r[(i, j)] += w * yi * stack[(t, f, j)].conj();
                    }
                    for d in 0..channels {
                        p[(i, d)] += w * yi * spec.data[(t, f, d)].conj();
                    }
                }
            }
            for i in 0..stacked {
                for j in 0..i {
                    r[(i, j)] = r[(j, i)].conj();
                }
            }
            linalg::diagonal_load(&mut r, NORMAL_EQUATION_LOADING);
            match HermitianCholesky::new(r.view()) {
                Ok(chol) => {
                    g_f.assign(&chol.solve_mat(p.view()));
                }
                Err(_) => {
                    log::warn!("wpe normal equations singular at bin {f}, using zero filter");
                }
            }
        });
    Ok(filter)
}

/// Solve the variance-weighted normal equations for the prediction filter.
pub fn estimate_filter(
    spec: &Spectrogram,
    lambda: &VarianceField,
    config: &WpeConfig,
) -> Result<WpeFilter> {
    let stack = build_delayed_stack(spec, config)?;
    estimate_with_stack(spec, &stack, lambda, config)
}

fn apply_with_stack(
    spec: &Spectrogram,
    stack: &Array3<Complex64>,
    filter: &WpeFilter,
) -> Spectrogram {
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let stacked = stack.shape()[2];
    let mut out = spec.clone();
    for t in 0..frames {
        for f in 0..bins {
            for d in 0..channels {
                let mut pred = Complex64::new(0.0, 0.0);
                for i in 0..stacked {
                    pred += filter.g[(f, i, d)].conj() * stack[(t, f, i)];
                }
                out.data[(t, f, d)] -= pred;
            }
        }
    }
    out
}

/// Subtract the predicted late reverberation: x = y - G^H stack.
pub fn apply_filter(
    spec: &Spectrogram,
    filter: &WpeFilter,
    config: &WpeConfig,
) -> Result<Spectrogram> {
    let stack = build_delayed_stack(spec, config)?;
    if filter.g.shape() != [spec.bins(), stack.shape()[2], spec.channels()] {
        return Err(Error::invalid("filter dimensions do not match spectrogram"));
    }
    Ok(apply_with_stack(spec, &stack, filter))
}

/// Channel-averaged power, floored: lambda[t, f] = max(floor, mean_d |x|^2).
pub fn update_lambda(dereverbed: &Spectrogram, config: &WpeConfig) -> VarianceField {
    let (frames, bins, channels) = (dereverbed.frames(), dereverbed.bins(), dereverbed.channels());
    let lambda = Array2::from_shape_fn((frames, bins), |(t, f)| {
        let power: f64 = (0..channels)
            .map(|d| dereverbed.data[(t, f, d)].norm_sqr())
            .sum();
        (power / channels as f64).max(config.lambda_floor)
    });
    VarianceField { lambda }
}

fn objective(dereverbed: &Spectrogram, lambda: &VarianceField) -> f64 {
    let channels = dereverbed.channels() as f64;
    let mut total = 0.0;
    for t in 0..dereverbed.frames() {
        for f in 0..dereverbed.bins() {
            let l = lambda.lambda[(t, f)];
            let power: f64 = (0..dereverbed.channels())
                .map(|d| dereverbed.data[(t, f, d)].norm_sqr())
                .sum();
            total += channels * l.ln() + power / l;
        }
    }
    total
}

/// Alternate filter estimation, prediction subtraction and variance updates.
///
/// Returns the dereverberated spectrogram, the final filter and the
/// per-iteration value of the negative log-likelihood surrogate
/// sum(D log lambda + |x|^2 / lambda), which is non-increasing.
pub fn run_wpe(spec: &Spectrogram, config: &WpeConfig) -> Result<(Spectrogram, WpeFilter, Vec<f64>)> {
    config.validate()?;
    let stack = build_delayed_stack(spec, config)?;
    let mut lambda = update_lambda(spec, config);
    let mut trace = Vec::with_capacity(config.iterations);
    let mut filter = WpeFilter::zeros(spec.bins(), stack.shape()[2], spec.channels());
    let mut dereverbed = spec.clone();
    for _ in 0..config.iterations {
        filter = estimate_with_stack(spec, &stack, &lambda, config)?;
        dereverbed = apply_with_stack(spec, &stack, &filter);
        lambda = update_lambda(&dereverbed, config);
        trace.push(objective(&dereverbed, &lambda));
    }
    Ok((dereverbed, filter, trace))
}
