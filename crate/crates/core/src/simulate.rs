//! Far-field scene simulator.
//!
//! Renders multi-channel mixtures under four signal models of increasing
//! fidelity (anechoic steering, narrowband multiplicative transfer, short
//! convolutive transfer across frames, and an autoregressive reverberation
//! generator), together with per-source images, the noise draw, one-hot
//! dominance masks and per-frame activities. Everything is seeded, so a
//! rendered scene doubles as a reproducible oracle.

use ndarray::{Array1, Array2, Array3, Array4};
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spatial_mixture::{ActivityMatrix, MaskSet};
use crate::stft::{analyze, MultiChannelSignal, Spectrogram, StftConfig};

/// Default speed of sound in m/s.
pub const SOUND_SPEED: f64 = 343.0;

/// Spectral radius bound enforced on autoregressive generators.
const AR_RADIUS_LIMIT: f64 = 0.9;

/// Frame-energy threshold (relative to the per-source peak) above which a
/// source counts as active.
const ACTIVITY_THRESHOLD: f64 = 1e-4;

/// RNG stream ids so sources, transfer taps and noise never share draws.
const STREAM_SOURCE_BASE: u64 = 1;
const STREAM_CTF: u64 = 100;
const STREAM_AR: u64 = 101;
const STREAM_NOISE: u64 = 200;

/// Signal model used to place sources into the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneModel {
    Anechoic,
    Narrowband,
    Ctf,
    ArReverb,
}

/// Geometry, sources and noise level of a scene to render.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub doas: Vec<f64>,
    pub mic_positions: Vec<[f64; 3]>,
    pub source_signals: Vec<MultiChannelSignal>,
    pub noise_sigma: f64,
    pub sound_speed: f64,
    pub model: SceneModel,
}

impl SceneSpec {
    pub fn num_sources(&self) -> usize {
        self.source_signals.len()
    }

    pub fn num_channels(&self) -> usize {
        self.mic_positions.len()
    }

    fn validate(&self) -> Result<()> {
        if self.source_signals.is_empty() {
            return Err(Error::config("scene needs at least one source"));
        }
        if self.mic_positions.is_empty() {
            return Err(Error::config("scene needs at least one microphone"));
        }
        if self.doas.len() != self.source_signals.len() {
            return Err(Error::config(format!(
                "doas: expected {} entries, got {}",
                self.source_signals.len(),
                self.doas.len()
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma must be >= 0"));
        }
        let rate = self.source_signals[0].sample_rate_hz;
        for (k, s) in self.source_signals.iter().enumerate() {
            if s.channels() != 1 {
                return Err(Error::config(format!("source {k} must be single channel")));
            }
            if s.sample_rate_hz != rate {
                return Err(Error::config("all sources must share a sample rate"));
            }
        }
        Ok(())
    }
}

/// Convolutive transfer function taps, shape (sources, bins, taps, channels).
#[derive(Debug, Clone)]
pub struct CtfSpec {
    pub taps: Array4<Complex64>,
    pub early_split: usize,
}

impl CtfSpec {
    pub fn new(taps: Array4<Complex64>, early_split: usize) -> Result<Self> {
        if taps.shape()[2] == 0 {
            return Err(Error::config("ctf needs at least one tap"));
        }
        if early_split > taps.shape()[2] {
            return Err(Error::config("early_split must not exceed tap count"));
        }
        Ok(Self { taps, early_split })
    }

    pub fn num_taps(&self) -> usize {
        self.taps.shape()[2]
    }

    /// Random transfer with a steering-vector direct path and exponentially
    /// decaying reflection taps (factor `decay` per tap).
    pub fn decaying_random(
        scene: &SceneSpec,
        stft: &StftConfig,
        num_taps: usize,
        early_split: usize,
        decay: f64,
        seed: u64,
    ) -> Result<Self> {
        let (k, d) = (scene.num_sources(), scene.num_channels());
        let bins = stft.num_bins();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_CTF);
        let mut taps = Array4::zeros((k, bins, num_taps, d));
        for src in 0..k {
            for f in 0..bins {
                let h = steering_vector(
                    scene.doas[src],
                    &scene.mic_positions,
                    stft.bin_frequency_hz(f),
                    scene.sound_speed,
                );
                for ch in 0..d {
                    taps[(src, f, 0, ch)] = h[ch];
                }
            }
            for tau in 1..num_taps {
                let scale = 0.5 * decay.powi(tau as i32);
                for f in 0..bins {
                    for ch in 0..d {
                        taps[(src, f, tau, ch)] = scale * complex_normal(&mut rng);
                    }
                }
            }
        }
        Self::new(taps, early_split)
    }
}

/// Autoregressive reverberation generator, shape (bins, taps, D, D), with
/// prediction starting `delay` frames back.
#[derive(Debug, Clone)]
pub struct ArReverbSpec {
    pub matrices: Array4<Complex64>,
    pub delay: usize,
}

impl ArReverbSpec {
    pub fn new(matrices: Array4<Complex64>, delay: usize) -> Result<Self> {
        if delay == 0 {
            return Err(Error::config("ar delay must be >= 1"));
        }
        if matrices.shape()[1] == 0 {
            return Err(Error::config("ar needs at least one tap"));
        }
        if matrices.shape()[2] != matrices.shape()[3] {
            return Err(Error::config("ar matrices must be square"));
        }
        Ok(Self { matrices, delay })
    }

    pub fn num_taps(&self) -> usize {
        self.matrices.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.matrices.shape()[2]
    }

    /// Random generator rescaled per frequency so the companion-matrix
    /// spectral radius stays at or below 0.9.
    pub fn random_stable(
        bins: usize,
        num_taps: usize,
        delay: usize,
        channels: usize,
        strength: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_AR);
        let scale = strength / (channels as f64 * num_taps as f64).sqrt();
        let mut mats = Array4::zeros((bins, num_taps, channels, channels));
        for f in 0..bins {
            for tau in 0..num_taps {
                for i in 0..channels {
                    for j in 0..channels {
                        mats[(f, tau, i, j)] = scale * complex_normal(&mut rng);
                    }
                }
            }
        }
        let mut spec = Self::new(mats, delay)?;
        spec.stabilize(AR_RADIUS_LIMIT);
        Ok(spec)
    }

    /// Spectral radius of the recursion's companion matrix at bin `f`.
    pub fn spectral_radius(&self, f: usize) -> f64 {
        let d = self.channels();
        let order = self.delay + self.num_taps() - 1;
        let n = d * order;
        let mut companion = Array2::<Complex64>::zeros((n, n));
        for tau in 1..=order {
            if tau >= self.delay {
                let g = tau - self.delay;
                for i in 0..d {
                    for j in 0..d {
                        companion[(i, (tau - 1) * d + j)] = self.matrices[(f, g, i, j)];
                    }
                }
            }
        }
        for row in d..n {
            companion[(row, row - d)] = Complex64::new(1.0, 0.0);
        }
        crate::linalg::spectral_radius(companion.view())
    }

    /// Rescale taps so every per-frequency spectral radius is <= `limit`.
    ///
    /// Scaling tap `tau` by s^tau moves every companion eigenvalue from z to
    /// s*z, so one rescale lands exactly on the limit.
    pub fn stabilize(&mut self, limit: f64) {
        let bins = self.matrices.shape()[0];
        for f in 0..bins {
            let radius = self.spectral_radius(f);
            if radius > limit {
                let s = limit / radius;
                for tau in 0..self.num_taps() {
                    let factor = s.powi((self.delay + tau) as i32);
                    for i in 0..self.channels() {
                        for j in 0..self.channels() {
                            self.matrices[(f, tau, i, j)] *= factor;
                        }
                    }
                }
            }
        }
    }
}

/// Everything a rendered scene exposes as ground truth.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub mixture: Spectrogram,
    /// Per-source spatial images; mixture = sum of images + noise, exactly.
    pub images: Vec<Spectrogram>,
    pub noise: Spectrogram,
    /// One-hot dominance masks, class 0 = noise.
    pub oracle_masks: MaskSet,
    /// Direct-plus-early images; present for the ctf and ar_reverb models.
    pub early_images: Option<Vec<Spectrogram>>,
    /// Per-frame source activity derived from image frame energy.
    pub oracle_activities: ActivityMatrix,
}

/// Far-field steering vector for a plane wave from azimuth `doa` (radians,
/// x-y plane). Delays are taken relative to the array centroid; each entry
/// has unit modulus.
pub fn steering_vector(
    doa: f64,
    mic_positions: &[[f64; 3]],
    frequency_hz: f64,
    sound_speed: f64,
) -> Array1<Complex64> {
    let d = mic_positions.len();
    let mut centroid = [0.0; 3];
    for p in mic_positions {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v / d as f64;
        }
    }
    let dir = [doa.cos(), doa.sin(), 0.0];
    Array1::from_shape_fn(d, |i| {
        let r = mic_positions[i];
        let proj =
            (r[0] - centroid[0]) * dir[0] + (r[1] - centroid[1]) * dir[1] + (r[2] - centroid[2]) * dir[2];
        let delay = -proj / sound_speed;
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * frequency_hz * delay)
    })
}

fn complex_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Add circular complex Gaussian noise with per-bin variance `sigma^2`.
pub fn add_noise(spec: &Spectrogram, sigma: f64, rng_seed: u64) -> Result<Spectrogram> {
    if sigma < 0.0 {
        return Err(Error::invalid("noise sigma must be >= 0"));
    }
    let mut out = spec.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    rng.set_stream(STREAM_NOISE);
    for v in out.data.iter_mut() {
        *v += sigma * complex_normal(&mut rng);
    }
    Ok(out)
}

fn noise_draw(frames: usize, bins: usize, channels: usize, sigma: f64, seed: u64, config: StftConfig) -> Spectrogram {
    let mut spec = Spectrogram::zeros(frames, channels, config);
    debug_assert_eq!(spec.bins(), bins);
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_NOISE);
        for v in spec.data.iter_mut() {
            *v = sigma * complex_normal(&mut rng);
        }
    }
    spec
}

/// Render a scene under its signal model.
///
/// Returns the mixture, per-source images, the noise draw, one-hot dominance
/// masks over (noise, source 1..K) and per-frame activities. The mixture is
/// computed as the running sum of the returned images plus noise, in source
/// order, so additivity holds bit-exactly.
pub fn render(
    scene: &SceneSpec,
    stft: &StftConfig,
    ctf: Option<&CtfSpec>,
    ar: Option<&ArReverbSpec>,
    rng_seed: u64,
) -> Result<RenderedScene> {
    scene.validate()?;
    if scene.source_signals[0].sample_rate_hz != stft.sample_rate_hz {
        return Err(Error::config("scene sample rate differs from stft config"));
    }
    let k = scene.num_sources();
    let d = scene.num_channels();
    let bins = stft.num_bins();

    // Analyze sources, zero-padded to a common frame count.
    let max_len = scene.source_signals.iter().map(|s| s.len()).max().unwrap();
    let mut sources = Vec::with_capacity(k);
    for sig in &scene.source_signals {
        let mut padded = Array2::zeros((max_len, 1));
        padded
            .slice_mut(ndarray::s![..sig.len(), ..])
            .assign(&sig.samples);
        let padded = MultiChannelSignal::new(padded, sig.sample_rate_hz)?;
        sources.push(analyze(&padded, stft)?);
    }
    let frames = sources[0].frames();

    let steering = |src: usize, f: usize| {
        steering_vector(
            scene.doas[src],
            &scene.mic_positions,
            stft.bin_frequency_hz(f),
            scene.sound_speed,
        )
    };

    let mut images: Vec<Spectrogram> = Vec::with_capacity(k);
    let mut early_images: Option<Vec<Spectrogram>> = None;

    match scene.model {
        SceneModel::Anechoic => {
            for src in 0..k {
                let mut img = Spectrogram::zeros(frames, d, *stft);
                for f in 0..bins {
                    let h = steering(src, f);
                    for t in 0..frames {
                        let s = sources[src].data[(t, f, 0)];
                        for ch in 0..d {
                            img.data[(t, f, ch)] = h[ch] * s;
                        }
                    }
                }
                images.push(img);
            }
        }
        SceneModel::Narrowband => {
            let ctf = ctf.ok_or_else(|| Error::config("narrowband model requires a ctf spec"))?;
            check_ctf(ctf, k, bins, d)?;
            // Multiplicative transfer: the convolution over frames collapses
            // to the summed taps.
            for src in 0..k {
                let mut img = Spectrogram::zeros(frames, d, *stft);
                for f in 0..bins {
                    let mut atf = vec![Complex64::new(0.0, 0.0); d];
                    for tau in 0..ctf.num_taps() {
                        for ch in 0..d {
                            atf[ch] += ctf.taps[(src, f, tau, ch)];
                        }
                    }
                    for t in 0..frames {
                        let s = sources[src].data[(t, f, 0)];
                        for ch in 0..d {
                            img.data[(t, f, ch)] = atf[ch] * s;
                        }
                    }
                }
                images.push(img);
            }
        }
        SceneModel::Ctf => {
            let ctf = ctf.ok_or_else(|| Error::config("ctf model requires a ctf spec"))?;
            check_ctf(ctf, k, bins, d)?;
            let mut early = Vec::with_capacity(k);
            for src in 0..k {
                let mut img = Spectrogram::zeros(frames, d, *stft);
                let mut img_early = Spectrogram::zeros(frames, d, *stft);
                for f in 0..bins {
                    for t in 0..frames {
                        for tau in 0..ctf.num_taps().min(t + 1) {
                            let s = sources[src].data[(t - tau, f, 0)];
                            for ch in 0..d {
                                let v = ctf.taps[(src, f, tau, ch)] * s;
                                img.data[(t, f, ch)] += v;
                                if tau < ctf.early_split {
                                    img_early.data[(t, f, ch)] += v;
                                }
                            }
                        }
                    }
                }
                images.push(img);
                early.push(img_early);
            }
            early_images = Some(early);
        }
        SceneModel::ArReverb => {
            let ar = ar.ok_or_else(|| Error::config("ar_reverb model requires an ar spec"))?;
            if ar.matrices.shape()[0] != bins || ar.channels() != d {
                return Err(Error::config("ar spec dimensions do not match scene"));
            }
            let mut early = Vec::with_capacity(k);
            for src in 0..k {
                let mut img_early = Spectrogram::zeros(frames, d, *stft);
                for f in 0..bins {
                    let h = steering(src, f);
                    for t in 0..frames {
                        let s = sources[src].data[(t, f, 0)];
                        for ch in 0..d {
                            img_early.data[(t, f, ch)] = h[ch] * s;
                        }
                    }
                }
                // y_t = early_t + sum_i G_i y_{t-delay-i}, per frequency
                let mut img = img_early.clone();
                for f in 0..bins {
                    for t in 0..frames {
                        for tau in 0..ar.num_taps() {
                            let lag = ar.delay + tau;
                            if lag > t {
                                break;
                            }
                            for i in 0..d {
                                let mut acc = Complex64::new(0.0, 0.0);
                                for j in 0..d {
                                    acc += ar.matrices[(f, tau, i, j)] * img.data[(t - lag, f, j)];
                                }
                                img.data[(t, f, i)] += acc;
                            }
                        }
                    }
                }
                images.push(img);
                early.push(img_early);
            }
            early_images = Some(early);
        }
    }

    let noise = noise_draw(frames, bins, d, scene.noise_sigma, rng_seed, *stft);

    let mut mixture = Spectrogram::zeros(frames, d, *stft);
    for img in &images {
        mixture.data += &img.data;
    }
    mixture.data += &noise.data;

    // One-hot dominance masks from reference-channel power.
    let mut masks = Array3::zeros((k + 1, frames, bins));
    for t in 0..frames {
        for f in 0..bins {
            let mut best = 0usize;
            let mut best_power = noise.data[(t, f, 0)].norm_sqr();
            for (src, img) in images.iter().enumerate() {
                let p = img.data[(t, f, 0)].norm_sqr();
                if p > best_power {
                    best_power = p;
                    best = src + 1;
                }
            }
            masks[(best, t, f)] = 1.0;
        }
    }
    let oracle_masks = MaskSet::new(masks)?;

    // Per-frame activity: frame energy above a fraction of the source's peak.
    let mut activities = Array2::zeros((k, frames));
    for (src, img) in images.iter().enumerate() {
        let energy: Vec<f64> = (0..frames)
            .map(|t| (0..bins).map(|f| img.data[(t, f, 0)].norm_sqr()).sum())
            .collect();
        let peak = energy.iter().cloned().fold(0.0, f64::max);
        for t in 0..frames {
            if peak > 0.0 && energy[t] > ACTIVITY_THRESHOLD * peak {
                activities[(src, t)] = 1.0;
            }
        }
    }
    let oracle_activities = ActivityMatrix::new(activities)?;

    Ok(RenderedScene {
        mixture,
        images,
        noise,
        oracle_masks,
        early_images,
        oracle_activities,
    })
}

fn check_ctf(ctf: &CtfSpec, k: usize, bins: usize, d: usize) -> Result<()> {
    let shape = ctf.taps.shape();
    if shape[0] != k || shape[1] != bins || shape[3] != d {
        return Err(Error::config(format!(
            "ctf spec shaped {:?} does not match scene (sources {}, bins {}, channels {})",
            shape, k, bins, d
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON scene description
// ---------------------------------------------------------------------------

fn default_level() -> f64 {
    1.0
}

fn default_sound_speed() -> f64 {
    SOUND_SPEED
}

fn default_duration() -> f64 {
    2.0
}

fn default_sample_rate() -> u32 {
    16_000
}

fn default_ctf_decay() -> f64 {
    0.5
}

fn default_ar_strength() -> f64 {
    0.5
}

/// One source entry in a scene document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    /// Pure tone.
    Sine {
        frequency_hz: f64,
        #[serde(default = "default_level")]
        level: f64,
    },
    /// White Gaussian noise.
    White {
        #[serde(default = "default_level")]
        level: f64,
    },
    /// Burst-modulated noise with silence gaps, a stand-in for speech.
    SpeechLike {
        #[serde(default = "default_level")]
        level: f64,
    },
    /// First channel of a WAV file (path relative to the scene document).
    Wav { path: String },
}

/// Parameters for randomly generated convolutive transfer taps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CtfFileSpec {
    pub taps: usize,
    pub early_split: usize,
    #[serde(default = "default_ctf_decay")]
    pub decay: f64,
}

/// Parameters for a randomly generated stable AR reverberation generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArFileSpec {
    pub taps: usize,
    pub delay: usize,
    #[serde(default = "default_ar_strength")]
    pub strength: f64,
}

/// On-disk scene description; see docs/formats.md for the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub model: SceneModel,
    pub doas_rad: Vec<f64>,
    pub mic_positions_m: Vec<[f64; 3]>,
    pub sources: Vec<SourceSpec>,
    pub noise_sigma: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_sound_speed")]
    pub sound_speed_mps: f64,
    #[serde(default)]
    pub stft: Option<StftConfig>,
    #[serde(default)]
    pub ctf: Option<CtfFileSpec>,
    #[serde(default)]
    pub ar: Option<ArFileSpec>,
}

/// A scene document resolved into renderable specs.
#[derive(Debug, Clone)]
pub struct BuiltScene {
    pub scene: SceneSpec,
    pub stft: StftConfig,
    pub ctf: Option<CtfSpec>,
    pub ar: Option<ArReverbSpec>,
}

impl BuiltScene {
    pub fn render(&self, seed: u64) -> Result<RenderedScene> {
        render(&self.scene, &self.stft, self.ctf.as_ref(), self.ar.as_ref(), seed)
    }
}

/// Generate a burst-gap modulated noise signal.
pub fn speech_like_signal(len: usize, level: f64, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut out = Array1::zeros(len);
    let mut n = 0usize;
    while n < len {
        let burst = rng.random_range(1600..4800usize);
        let gap = rng.random_range(800..4800usize);
        let amp = level * rng.random_range(0.4..1.0);
        for i in 0..burst.min(len - n) {
            let x = i as f64 / burst as f64;
            let env = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * x).cos());
            let w: f64 = rng.sample(StandardNormal);
            out[n + i] = amp * env * w;
        }
        n += burst + gap;
    }
    out
}

/// Resolve a scene document into signals and transfer specs.
///
/// `base_dir` anchors relative WAV paths; `seed` drives all generated
/// sources and transfer taps.
pub fn build_scene(file: &SceneFile, base_dir: &Path, seed: u64) -> Result<BuiltScene> {
    let stft = file.stft.unwrap_or_else(StftConfig::default_16k);
    let stft = StftConfig::new(
        stft.frame_length,
        stft.frame_shift,
        stft.fft_size,
        stft.window,
        file.sample_rate_hz,
    )?;
    if file.sources.is_empty() {
        return Err(Error::config("sources: at least one source required"));
    }
    if file.doas_rad.len() != file.sources.len() {
        return Err(Error::config(format!(
            "doas_rad: expected {} entries, got {}",
            file.sources.len(),
            file.doas_rad.len()
        )));
    }
    if file.duration_s <= 0.0 {
        return Err(Error::config("duration_s must be positive"));
    }
    let len = (file.duration_s * file.sample_rate_hz as f64).round() as usize;

    let mut signals = Vec::with_capacity(file.sources.len());
    for (k, src) in file.sources.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_SOURCE_BASE + k as u64);
        let samples = match src {
            SourceSpec::Sine { frequency_hz, level } => Array1::from_shape_fn(len, |n| {
                level
                    * (2.0 * std::f64::consts::PI * frequency_hz * n as f64
                        / file.sample_rate_hz as f64)
                        .sin()
            }),
            SourceSpec::White { level } => {
                Array1::from_shape_fn(len, |_| level * rng.sample::<f64, _>(StandardNormal))
            }
            SourceSpec::SpeechLike { level } => speech_like_signal(len, *level, &mut rng),
            SourceSpec::Wav { path } => {
                let full = base_dir.join(path);
                let sig = crate::io_formats::read_wav(&full)?;
                if sig.sample_rate_hz != file.sample_rate_hz {
                    return Err(Error::config(format!(
                        "sources[{k}].path: sample rate {} does not match scene rate {}",
                        sig.sample_rate_hz, file.sample_rate_hz
                    )));
                }
                sig.channel(0).to_owned()
            }
        };
        signals.push(MultiChannelSignal::mono(samples, file.sample_rate_hz)?);
    }

    let scene = SceneSpec {
        doas: file.doas_rad.clone(),
        mic_positions: file.mic_positions_m.clone(),
        source_signals: signals,
        noise_sigma: file.noise_sigma,
        sound_speed: file.sound_speed_mps,
        model: file.model,
    };
    scene.validate()?;

    let ctf = match (&file.ctf, file.model) {
        (Some(c), SceneModel::Ctf | SceneModel::Narrowband) => Some(CtfSpec::decaying_random(
            &scene,
            &stft,
            c.taps,
            c.early_split,
            c.decay,
            seed,
        )?),
        (None, SceneModel::Ctf | SceneModel::Narrowband) => {
            return Err(Error::config("ctf: section required for this model"));
        }
        _ => None,
    };
    let ar = match (&file.ar, file.model) {
        (Some(a), SceneModel::ArReverb) => Some(ArReverbSpec::random_stable(
            stft.num_bins(),
            a.taps,
            a.delay,
            scene.num_channels(),
            a.strength,
            seed,
        )?),
        (None, SceneModel::ArReverb) => {
            return Err(Error::config("ar: section required for this model"));
        }
        _ => None,
    };

    Ok(BuiltScene { scene, stft, ctf, ar })
}
