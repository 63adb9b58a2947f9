//! Short-time Fourier analysis and synthesis for multi-channel signals.
//!
//! Analysis reflect-pads the signal so edge samples are representable, then
//! slides a windowed DFT; synthesis is weighted overlap-add with per-sample
//! normalization by the accumulated window product, which gives perfect
//! reconstruction on the interior for any overlapping configuration whose
//! shift divides the frame length.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum accumulated window power treated as covered by overlap-add.
const OLA_EPSILON: f64 = 1e-12;

/// Analysis/synthesis window shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Hann,
    SqrtHann,
}

impl Window {
    /// Periodic window samples of the given length.
    pub fn samples(self, len: usize) -> Array1<f64> {
        Array1::from_shape_fn(len, |n| {
            let hann = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos());
            match self {
                Window::Hann => hann,
                Window::SqrtHann => hann.sqrt(),
            }
        })
    }
}

/// Frame geometry and window for STFT processing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub window: Window,
    pub sample_rate_hz: u32,
}

impl StftConfig {
    pub fn new(
        frame_length: usize,
        frame_shift: usize,
        fft_size: usize,
        window: Window,
        sample_rate_hz: u32,
    ) -> Result<Self> {
        let cfg = Self { frame_length, frame_shift, fft_size, window, sample_rate_hz };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 512/128 sqrt-Hann at 16 kHz; the default geometry used throughout.
    pub fn default_16k() -> Self {
        Self {
            frame_length: 512,
            frame_shift: 128,
            fft_size: 512,
            window: Window::SqrtHann,
            sample_rate_hz: 16_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_shift == 0 || self.frame_length == 0 {
            return Err(Error::config("frame_length and frame_shift must be positive"));
        }
        if self.frame_length % self.frame_shift != 0 {
            return Err(Error::config(format!(
                "frame_shift {} must divide frame_length {}",
                self.frame_shift, self.frame_length
            )));
        }
        if self.fft_size < self.frame_length {
            return Err(Error::config(format!(
                "fft_size {} must be >= frame_length {}",
                self.fft_size, self.frame_length
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        Ok(())
    }

    /// Number of one-sided frequency bins.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Reflect padding added at each edge before framing.
    pub fn edge_padding(&self) -> usize {
        self.frame_length - self.frame_shift
    }

    /// Frequency in Hz of one-sided bin `f`.
    pub fn bin_frequency_hz(&self, f: usize) -> f64 {
        f as f64 * self.sample_rate_hz as f64 / self.fft_size as f64
    }

    /// Frames produced when analyzing a signal of the given length.
    pub fn num_frames(&self, signal_len: usize) -> usize {
        let covered = signal_len + 2 * self.edge_padding();
        if covered < self.frame_length {
            return 0;
        }
        (covered - self.frame_length).div_ceil(self.frame_shift) + 1
    }

    /// Shortest signal length whose analysis yields exactly `frames` frames.
    pub fn signal_len_for_frames(&self, frames: usize) -> usize {
        assert!(frames >= 1);
        (frames - 1) * self.frame_shift + self.frame_length - 2 * self.edge_padding()
    }
}

/// Real multi-channel time-domain signal, shape (samples, channels).
#[derive(Debug, Clone)]
pub struct MultiChannelSignal {
    pub samples: Array2<f64>,
    pub sample_rate_hz: u32,
}

impl MultiChannelSignal {
    pub fn new(samples: Array2<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.ncols() == 0 {
            return Err(Error::invalid("signal must have at least one channel"));
        }
        if sample_rate_hz == 0 {
            return Err(Error::invalid("sample_rate_hz must be positive"));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn mono(samples: Array1<f64>, sample_rate_hz: u32) -> Result<Self> {
        let n = samples.len();
        Self::new(samples.into_shape_with_order((n, 1)).unwrap(), sample_rate_hz)
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, d: usize) -> ArrayView1<'_, f64> {
        self.samples.column(d)
    }
}

/// Complex STFT tensor, shape (frames, bins, channels), one-sided spectrum.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub data: Array3<Complex64>,
    pub config: StftConfig,
}

impl Spectrogram {
    pub fn new(data: Array3<Complex64>, config: StftConfig) -> Result<Self> {
        config.validate()?;
        if data.shape()[1] != config.num_bins() {
            return Err(Error::invalid(format!(
                "spectrogram has {} bins, config implies {}",
                data.shape()[1],
                config.num_bins()
            )));
        }
        Ok(Self { data, config })
    }

    pub fn zeros(frames: usize, channels: usize, config: StftConfig) -> Self {
        Self {
            data: Array3::zeros((frames, config.num_bins(), channels)),
            config,
        }
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }
}

fn reflect_pad(x: ArrayView1<f64>, pad: usize, aligned_len: usize) -> Array1<f64> {
    let n = x.len();
    let mut out = Array1::zeros(aligned_len);
    for i in 0..pad {
        out[i] = x[pad - i];
    }
    for i in 0..n {
        out[pad + i] = x[i];
    }
    for i in 0..pad {
        out[pad + n + i] = x[n - 2 - i];
    }
    out
}

/// Forward STFT of all channels.
///
/// The first frame starts `frame_length - frame_shift` samples before the
/// signal (reflect padding), and the padded signal is zero-extended so the
/// last frame aligns with the shift grid.
pub fn analyze(signal: &MultiChannelSignal, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let len = signal.len();
    if len < config.frame_length {
        return Err(Error::invalid(format!(
            "signal of {} samples is shorter than one frame ({})",
            len, config.frame_length
        )));
    }
    let pad = config.edge_padding();
    let frames = config.num_frames(len);
    let padded_len = (frames - 1) * config.frame_shift + config.frame_length;
    let bins = config.num_bins();
    let channels = signal.channels();
    let window = config.window.samples(config.frame_length);
    let n = config.fft_size;

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut out = Array3::zeros((frames, bins, channels));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for d in 0..channels {
        let padded = reflect_pad(signal.channel(d), pad, padded_len);
        for t in 0..frames {
            let start = t * config.frame_shift;
            for i in 0..n {
                buf[i] = if i < config.frame_length {
                    Complex64::new(padded[start + i] * window[i], 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out[(t, f, d)] = buf[f];
            }
        }
    }
    Spectrogram::new(out, *config)
}

/// Inverse STFT by normalized overlap-add.
///
/// The output covers the analyzed signal; because framing is aligned to the
/// shift grid it may run up to `frame_shift - 1` samples longer than the
/// original, with the surplus reconstructing the zero extension.
pub fn synthesize(spec: &Spectrogram) -> Result<MultiChannelSignal> {
    let config = &spec.config;
    config.validate()?;
    let frames = spec.frames();
    let channels = spec.channels();
    if frames == 0 {
        return Err(Error::invalid("cannot synthesize an empty spectrogram"));
    }
    let n = config.fft_size;
    let bins = config.num_bins();
    let pad = config.edge_padding();
    let padded_len = (frames - 1) * config.frame_shift + config.frame_length;
    let out_len = padded_len - 2 * pad;
    let window = config.window.samples(config.frame_length);

    // Accumulated analysis*synthesis window product per padded sample.
    let mut norm = Array1::<f64>::zeros(padded_len);
    for t in 0..frames {
        let start = t * config.frame_shift;
        for i in 0..config.frame_length {
            norm[start + i] += window[i] * window[i];
        }
    }

    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut acc = Array2::<f64>::zeros((padded_len, channels));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];

    for d in 0..channels {
        for t in 0..frames {
            buf[..bins].iter_mut().enumerate().for_each(|(f, b)| *b = spec.data[(t, f, d)]);
            for f in bins..n {
                buf[f] = spec.data[(t, n - f, d)].conj();
            }
            ifft.process(&mut buf);
            let start = t * config.frame_shift;
            for i in 0..config.frame_length {
                acc[(start + i, d)] += buf[i].re / n as f64 * window[i];
            }
        }
    }

    let mut samples = Array2::<f64>::zeros((out_len, channels));
    for i in 0..out_len {
        let w = norm[pad + i];
        if w > OLA_EPSILON {
            for d in 0..channels {
                samples[(i, d)] = acc[(pad + i, d)] / w;
            }
        }
    }
    MultiChannelSignal::new(samples, config.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, channels: usize, seed: u64) -> MultiChannelSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples =
            Array2::from_shape_fn((len, channels), |_| rng.random_range(-1.0..1.0));
        MultiChannelSignal::new(samples, 16_000).unwrap()
    }

    /// Naive O(N^2) DFT of a windowed frame, one-sided.
    fn dft_oracle(frame: &[f64], window: &Array1<f64>, fft_size: usize) -> Vec<Complex64> {
        let bins = fft_size / 2 + 1;
        (0..bins)
            .map(|f| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (n, &x) in frame.iter().enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * f as f64 * n as f64
                        / fft_size as f64;
                    acc += Complex64::from_polar(x * window[n], phase);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn rejects_short_signal() {
        let cfg = StftConfig::default_16k();
        let sig = random_signal(100, 1, 0);
        assert!(matches!(analyze(&sig, &cfg), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(StftConfig::new(512, 100, 512, Window::Hann, 16_000).is_err());
        assert!(StftConfig::new(512, 128, 256, Window::Hann, 16_000).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let cfg = StftConfig::default_16k();
        let sig = MultiChannelSignal::new(Array2::zeros((2048, 2)), 16_000).unwrap();
        let spec = analyze(&sig, &cfg).unwrap();
        assert!(spec.data.iter().all(|c| c.norm() == 0.0));
        let back = synthesize(&spec).unwrap();
        assert!(back.samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn impulse_frame_matches_windowed_dft() {
        // frame_shift == frame_length: no edge padding, frame 0 is the raw
        // first frame, so analysis equals the DFT of the windowed content.
        let cfg = StftConfig::new(256, 256, 256, Window::Hann, 16_000).unwrap();
        let mut samples = Array2::zeros((512, 1));
        samples[(0, 0)] = 1.0;
        samples[(17, 0)] = -0.5;
        let sig = MultiChannelSignal::new(samples, 16_000).unwrap();
        let spec = analyze(&sig, &cfg).unwrap();

        let window = cfg.window.samples(256);
        let mut frame = vec![0.0; 256];
        frame[0] = 1.0;
        frame[17] = -0.5;
        let expect = dft_oracle(&frame, &window, 256);
        for f in 0..cfg.num_bins() {
            assert_abs_diff_eq!(spec.data[(0, f, 0)].re, expect[f].re, epsilon = 1e-10);
            assert_abs_diff_eq!(spec.data[(0, f, 0)].im, expect[f].im, epsilon = 1e-10);
            // impulse at sample 0 contributes window[0] to every bin
            let _ = window[0];
        }
    }

    #[test]
    fn sinusoid_peaks_at_its_bin_and_matches_dft_oracle() {
        let cfg = StftConfig::default_16k();
        let k = 32; // bin-center frequency k*fs/fft_size
        let freq = cfg.bin_frequency_hz(k);
        let len = 4096;
        let samples = Array2::from_shape_fn((len, 1), |(n, _)| {
            (2.0 * std::f64::consts::PI * freq * n as f64 / 16_000.0).sin()
        });
        let sig = MultiChannelSignal::new(samples, 16_000).unwrap();
        let spec = analyze(&sig, &cfg).unwrap();

        let pad = cfg.edge_padding();
        let window = cfg.window.samples(cfg.frame_length);
        let padded = reflect_pad(
            sig.channel(0),
            pad,
            (spec.frames() - 1) * cfg.frame_shift + cfg.frame_length,
        );
        // interior frames: fully inside the original signal
        let first = pad / cfg.frame_shift + 1;
        for t in (first..spec.frames() - first).step_by(5) {
            let start = t * cfg.frame_shift;
            let frame: Vec<f64> =
                (0..cfg.frame_length).map(|i| padded[start + i]).collect();
            let expect = dft_oracle(&frame, &window, cfg.fft_size);
            let mut best = 0;
            for f in 0..cfg.num_bins() {
                assert_abs_diff_eq!(spec.data[(t, f, 0)].re, expect[f].re, epsilon = 1e-8);
                assert_abs_diff_eq!(spec.data[(t, f, 0)].im, expect[f].im, epsilon = 1e-8);
                if spec.data[(t, f, 0)].norm() > spec.data[(t, best, 0)].norm() {
                    best = f;
                }
            }
            assert_eq!(best, k, "energy should concentrate at bin {k} in frame {t}");
        }
    }

    #[test]
    fn parseval_within_frame() {
        let cfg = StftConfig::default_16k();
        let sig = random_signal(3000, 1, 3);
        let spec = analyze(&sig, &cfg).unwrap();
        let window = cfg.window.samples(cfg.frame_length);
        let pad = cfg.edge_padding();
        let padded = reflect_pad(
            sig.channel(0),
            pad,
            (spec.frames() - 1) * cfg.frame_shift + cfg.frame_length,
        );
        let t = 4;
        let start = t * cfg.frame_shift;
        let time_energy: f64 = (0..cfg.frame_length)
            .map(|i| (padded[start + i] * window[i]).powi(2))
            .sum();
        let n = cfg.fft_size;
        let mut freq_energy = spec.data[(t, 0, 0)].norm_sqr();
        freq_energy += spec.data[(t, n / 2, 0)].norm_sqr();
        for f in 1..n / 2 {
            freq_energy += 2.0 * spec.data[(t, f, 0)].norm_sqr();
        }
        assert_abs_diff_eq!(freq_energy / n as f64, time_energy, epsilon = 1e-10);
    }

    #[test]
    fn linearity() {
        let cfg = StftConfig::default_16k();
        let x = random_signal(2000, 2, 1);
        let y = random_signal(2000, 2, 2);
        let combo = MultiChannelSignal::new(2.5 * &x.samples - 0.5 * &y.samples, 16_000).unwrap();
        let sx = analyze(&x, &cfg).unwrap();
        let sy = analyze(&y, &cfg).unwrap();
        let sc = analyze(&combo, &cfg).unwrap();
        for (c, (a, b)) in sc.data.iter().zip(sx.data.iter().zip(sy.data.iter())) {
            let want = 2.5 * a - 0.5 * b;
            assert_abs_diff_eq!(c.re, want.re, epsilon = 1e-9);
            assert_abs_diff_eq!(c.im, want.im, epsilon = 1e-9);
        }
    }

    fn roundtrip_error(sig: &MultiChannelSignal, cfg: &StftConfig) -> f64 {
        let spec = analyze(sig, cfg).unwrap();
        let back = synthesize(&spec).unwrap();
        let lo = cfg.frame_length;
        let hi = sig.len() - cfg.frame_length;
        let mut max_err: f64 = 0.0;
        let mut max_val: f64 = 0.0;
        for i in lo..hi {
            for d in 0..sig.channels() {
                max_err = max_err.max((back.samples[(i, d)] - sig.samples[(i, d)]).abs());
                max_val = max_val.max(sig.samples[(i, d)].abs());
            }
        }
        max_err / max_val
    }

    #[test]
    fn perfect_reconstruction_four_channels() {
        let cfg = StftConfig::default_16k();
        let sig = random_signal(8000, 4, 7);
        assert!(roundtrip_error(&sig, &cfg) < 1e-6);
    }

    #[test]
    fn perfect_reconstruction_hann_window() {
        let cfg = StftConfig::new(256, 64, 512, Window::Hann, 8_000).unwrap();
        let sig = random_signal(4000, 2, 9);
        assert!(roundtrip_error(&sig, &cfg) < 1e-6);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn reconstruction_over_cola_configs(
                shift_pow in 5usize..7,
                overlap_factor in 2usize..5,
                channels in 1usize..3,
                seed in 0u64..1000,
            ) {
                let shift = 1 << shift_pow;
                let frame = shift * overlap_factor;
                let cfg = StftConfig::new(frame, shift, frame.next_power_of_two(),
                    Window::SqrtHann, 16_000).unwrap();
                let sig = random_signal(frame * 12 + 37, channels, seed);
                prop_assert!(roundtrip_error(&sig, &cfg) < 1e-6);
            }
        }
    }
}
