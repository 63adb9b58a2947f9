//! Spatial mixture model for time-frequency mask estimation.
//!
//! Observations are modeled per frequency as a mixture of complex angular
//! central Gaussian components over the direction of the multi-channel STFT
//! vector; the posterior class probabilities are the masks. Supports
//! diarization-guided posteriors, where per-frame activities gate the
//! speaker classes before renormalization, and greedy alignment of the
//! per-frequency class permutations.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, Axis};
use ndarray::parallel::prelude::*;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, HermitianCholesky};
use crate::stft::Spectrogram;

/// Diagonal loading applied to shape matrices before inversion.
const SHAPE_LOADING: f64 = 1e-10;

/// Bins with vector norm below this factor times the mean norm get uniform
/// posteriors instead of evaluating the angular density.
const LOW_ENERGY_FACTOR: f64 = 1e-12;

/// Magnitude of the random Hermitian perturbation used to break symmetry at
/// initialization.
const INIT_PERTURBATION: f64 = 0.1;

/// Per-source time-frequency posteriors; class 0 is the noise class.
/// Shape (classes, frames, bins); each bin's class column sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub masks: Array3<f64>,
}

impl MaskSet {
    pub fn new(masks: Array3<f64>) -> Result<Self> {
        for &m in masks.iter() {
            if !(0.0..=1.0).contains(&m) {
                return Err(Error::invalid(format!("mask value {m} outside [0, 1]")));
            }
        }
        for t in 0..masks.shape()[1] {
            for f in 0..masks.shape()[2] {
                let total: f64 = masks.slice(ndarray::s![.., t, f]).sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "masks at frame {t}, bin {f} sum to {total}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { masks })
    }

    pub fn num_classes(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.masks.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.masks.shape()[2]
    }
}

/// Per-frame source activities in [0, 1], shape (sources, frames).
/// Row k guides mask class k + 1 (the noise class is never gated).
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityMatrix {
    pub activities: Array2<f64>,
}

impl ActivityMatrix {
    pub fn new(activities: Array2<f64>) -> Result<Self> {
        for &a in activities.iter() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("activity value {a} outside [0, 1]")));
            }
        }
        Ok(Self { activities })
    }

    pub fn num_sources(&self) -> usize {
        self.activities.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.activities.shape()[1]
    }
}

/// Mixture weights and shape matrices, per class and frequency.
///
/// Weights sum to one over classes at each frequency; shape matrices are
/// Hermitian positive definite with trace normalized to the channel count.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    /// pi, shape (classes, bins)
    pub weights: Array2<f64>,
    /// B, shape (classes, bins, channels, channels)
    pub shapes: Array4<Complex64>,
}

impl MixtureModel {
    pub fn num_classes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.shapes.shape()[2]
    }
}

/// Output of [`run_em`].
#[derive(Debug, Clone)]
pub struct EmResult {
    pub masks: MaskSet,
    pub model: MixtureModel,
    /// Total data log-likelihood after each iteration's update.
    pub log_likelihood: Vec<f64>,
}

fn cacg_log_norm(channels: usize) -> f64 {
    let mut log_fact = 0.0;
    for i in 2..channels {
        log_fact += (i as f64).ln();
    }
    log_fact - (2.0f64).ln() - channels as f64 * std::f64::consts::PI.ln()
}

/// Inverse and log-determinant of a loaded shape matrix.
struct ShapeInverse {
    inv: Array2<Complex64>,
    logdet: f64,
}

impl ShapeInverse {
    fn from_shape(b: ArrayView2<Complex64>) -> Self {
        let mut loaded = b.to_owned();
        linalg::diagonal_load(&mut loaded, SHAPE_LOADING);
        match HermitianCholesky::new(loaded.view()) {
            Ok(chol) => Self { inv: chol.inverse(), logdet: chol.ln_determinant() },
            Err(_) => {
                log::warn!("shape matrix not invertible after loading, using identity");
                Self { inv: Array2::eye(b.nrows()), logdet: 0.0 }
            }
        }
    }
}

/// Log density of the complex angular central Gaussian with shape `b`,
/// evaluated on the direction of `y`.
///
/// Scale-invariant in `y`; a zero vector falls back to the uniform density.
pub fn class_log_density(y: ArrayView1<Complex64>, b: ArrayView2<Complex64>) -> f64 {
    let d = y.len();
    let norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let c = cacg_log_norm(d);
    if norm == 0.0 {
        return c;
    }
    let unit: Vec<Complex64> = y.iter().map(|v| v / norm).collect();
    let shape = ShapeInverse::from_shape(b);
    let q = linalg::quadratic_form(shape.inv.view(), &unit).max(f64::MIN_POSITIVE);
    c - shape.logdet - d as f64 * q.ln()
}

fn check_guide(guide: &ActivityMatrix, classes: usize, frames: usize) -> Result<()> {
    if guide.num_sources() != classes - 1 || guide.frames() != frames {
        return Err(Error::invalid(format!(
            "guide shaped {}x{} does not match {} speaker classes over {} frames",
            guide.num_sources(),
            guide.frames(),
            classes - 1,
            frames
        )));
    }
    Ok(())
}

/// Mean vector norm over all bins; used for the low-energy gate.
fn mean_norm(spec: &Spectrogram) -> f64 {
    let (t, f) = (spec.frames(), spec.bins());
    let total: f64 = spec
        .data
        .iter()
        .map(|c| c.norm_sqr())
        .collect::<Vec<_>>()
        .chunks(spec.channels())
        .map(|chunk| chunk.iter().sum::<f64>().sqrt())
        .sum();
    total / (t * f) as f64
}

/// Posterior class probabilities for every bin (the E-step).
///
/// With a guide, speaker-class posteriors are multiplied by the per-frame
/// activity before renormalization; the noise class keeps weight one. A zero
/// activity therefore forces exactly-zero masks.
pub fn e_step(
    spec: &Spectrogram,
    model: &MixtureModel,
    guide: Option<&ActivityMatrix>,
) -> Result<MaskSet> {
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let classes = model.num_classes();
    if model.bins() != bins || model.channels() != channels {
        return Err(Error::invalid("mixture model dimensions do not match spectrogram"));
    }
    if let Some(g) = guide {
        check_guide(g, classes, frames)?;
    }
    let low_energy = LOW_ENERGY_FACTOR * mean_norm(spec);
    let log_const = cacg_log_norm(channels);

    let mut masks = Array3::zeros((classes, frames, bins));
    masks
        .axis_iter_mut(Axis(2))
        .into_par_iter()
        .enumerate()
        .for_each(|(f, mut mask_f)| {
            let shapes: Vec<ShapeInverse> = (0..classes)
                .map(|k| ShapeInverse::from_shape(model.shapes.slice(ndarray::s![k, f, .., ..])))
                .collect();
            let mut unit = vec![Complex64::new(0.0, 0.0); channels];
            let mut log_scores = vec![0.0f64; classes];
            for t in 0..frames {
                let y = spec.data.slice(ndarray::s![t, f, ..]);
                let norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                if norm <= low_energy {
                    log_scores.iter_mut().for_each(|s| *s = 0.0);
                } else {
                    for (u, v) in unit.iter_mut().zip(y.iter()) {
                        *u = v / norm;
                    }
                    for k in 0..classes {
                        let q = linalg::quadratic_form(shapes[k].inv.view(), &unit)
                            .max(f64::MIN_POSITIVE);
                        log_scores[k] = model.weights[(k, f)].max(f64::MIN_POSITIVE).ln()
                            + log_const
                            - shapes[k].logdet
                            - channels as f64 * q.ln();
                    }
                }
                let max = log_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..classes {
                    let gate = match (k, guide) {
                        (0, _) | (_, None) => 1.0,
                        (_, Some(g)) => g.activities[(k - 1, t)],
                    };
                    let score = gate * (log_scores[k] - max).exp();
                    mask_f[(k, t)] = score;
                    total += score;
                }
                if total > 0.0 {
                    for k in 0..classes {
                        mask_f[(k, t)] /= total;
                    }
                } else {
                    mask_f[(0, t)] = 1.0;
                }
            }
        });
    MaskSet::new(masks)
}

/// Re-estimate mixture weights and shape matrices (the M-step).
///
/// The shape update is one fixed-point step of the weighted outer-product
/// equation, using the previous model's shapes in the quadratic-form
/// denominator, followed by trace normalization.
pub fn m_step(spec: &Spectrogram, masks: &MaskSet, previous: &MixtureModel) -> Result<MixtureModel> {
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let classes = masks.num_classes();
    if masks.frames() != frames || masks.bins() != bins {
        return Err(Error::invalid("mask dimensions do not match spectrogram"));
    }
    if previous.num_classes() != classes || previous.bins() != bins {
        return Err(Error::invalid("previous model dimensions do not match masks"));
    }

    let mut weights = Array2::zeros((classes, bins));
    let mut shapes = Array4::zeros((classes, bins, channels, channels));
    weights
        .axis_iter_mut(Axis(1))
        .into_par_iter()
        .zip(shapes.axis_iter_mut(Axis(1)).into_par_iter())
        .enumerate()
        .for_each(|(f, (mut w_f, mut b_f))| {
            let old: Vec<ShapeInverse> = (0..classes)
                .map(|k| ShapeInverse::from_shape(previous.shapes.slice(ndarray::s![k, f, .., ..])))
                .collect();
            let mut unit = vec![Complex64::new(0.0, 0.0); channels];
            for k in 0..classes {
                let mut numer = Array2::<Complex64>::zeros((channels, channels));
                let mut mass = 0.0f64;
                let mut weight_sum = 0.0f64;
                for t in 0..frames {
                    let m = masks.masks[(k, t, f)];
                    weight_sum += m;
                    let y = spec.data.slice(ndarray::s![t, f, ..]);
                    let norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                    if m == 0.0 || norm == 0.0 {
                        continue;
                    }
                    for (u, v) in unit.iter_mut().zip(y.iter()) {
                        *u = v / norm;
                    }
                    let q = linalg::quadratic_form(old[k].inv.view(), &unit)
                        .max(f64::MIN_POSITIVE);
                    let scale = m / q;
                    for i in 0..channels {
                        for j in 0..channels {
                            numer[(i, j)] += scale * unit[i] * unit[j].conj();
                        }
                    }
                    mass += m;
                }
                w_f[k] = weight_sum / frames as f64;
                if mass > 0.0 {
                    let mut b = numer.mapv(|v| v * channels as f64 / mass);
                    linalg::hermitianize(&mut b);
                    let tr = linalg::trace(b.view()).re;
                    if tr > 0.0 {
                        b.mapv_inplace(|v| v * channels as f64 / tr);
                        b_f.slice_mut(ndarray::s![k, .., ..]).assign(&b);
                        continue;
                    }
                }
                log::warn!("class {k} at bin {f} has no mask mass, reinitializing shape");
                b_f.slice_mut(ndarray::s![k, .., ..]).assign(&Array2::eye(channels));
            }
        });
    Ok(MixtureModel { weights, shapes })
}

/// Total data log-likelihood of the mixture (with guide gating if present).
pub fn log_likelihood(
    spec: &Spectrogram,
    model: &MixtureModel,
    guide: Option<&ActivityMatrix>,
) -> f64 {
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let classes = model.num_classes();
    let low_energy = LOW_ENERGY_FACTOR * mean_norm(spec);
    let log_const = cacg_log_norm(channels);

    let per_bin: Vec<f64> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let shapes: Vec<ShapeInverse> = (0..classes)
                .map(|k| ShapeInverse::from_shape(model.shapes.slice(ndarray::s![k, f, .., ..])))
                .collect();
            let mut unit = vec![Complex64::new(0.0, 0.0); channels];
            let mut total = 0.0;
            for t in 0..frames {
                let y = spec.data.slice(ndarray::s![t, f, ..]);
                let norm = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                let mut log_terms = Vec::with_capacity(classes);
                for k in 0..classes {
                    let gate = match (k, guide) {
                        (0, _) | (_, None) => 1.0,
                        (_, Some(g)) => g.activities[(k - 1, t)],
                    };
                    if gate == 0.0 {
                        continue;
                    }
                    let logp = if norm <= low_energy {
                        log_const
                    } else {
                        for (u, v) in unit.iter_mut().zip(y.iter()) {
                            *u = v / norm;
                        }
                        let q = linalg::quadratic_form(shapes[k].inv.view(), &unit)
                            .max(f64::MIN_POSITIVE);
                        log_const - shapes[k].logdet - channels as f64 * q.ln()
                    };
                    log_terms.push(gate.ln() + model.weights[(k, f)].max(f64::MIN_POSITIVE).ln() + logp);
                }
                let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                total += max + log_terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            }
            total
        })
        .collect();
    per_bin.iter().sum()
}

fn initial_model(
    classes: usize,
    bins: usize,
    channels: usize,
    seed: u64,
) -> MixtureModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Array2::from_elem((classes, bins), 1.0 / classes as f64);
    let mut shapes = Array4::zeros((classes, bins, channels, channels));
    for k in 0..classes {
        // random Hermitian perturbation, Frobenius-normalized so identity
        // plus the perturbation stays positive definite
        let mut h = Array2::<Complex64>::zeros((channels, channels));
        for i in 0..channels {
            for j in 0..channels {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                h[(i, j)] = Complex64::new(re, im);
            }
        }
        linalg::hermitianize(&mut h);
        let fro = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let mut b = Array2::<Complex64>::eye(channels);
        if fro > 0.0 {
            b = b + h.mapv(|v| v * (INIT_PERTURBATION / fro));
        }
        let tr = linalg::trace(b.view()).re;
        b.mapv_inplace(|v| v * channels as f64 / tr);
        for f in 0..bins {
            shapes.slice_mut(ndarray::s![k, f, .., ..]).assign(&b);
        }
    }
    MixtureModel { weights, shapes }
}

/// Run EM for a fixed number of iterations.
///
/// `num_classes` counts every class including noise (so two speakers plus
/// noise is 3). Returns the posterior masks of the final model, the model,
/// and the log-likelihood after each iteration.
pub fn run_em(
    spec: &Spectrogram,
    num_classes: usize,
    iterations: usize,
    guide: Option<&ActivityMatrix>,
    rng_seed: u64,
) -> Result<EmResult> {
    if num_classes < 2 {
        return Err(Error::invalid("need at least two classes (one source plus noise)"));
    }
    if iterations == 0 {
        return Err(Error::invalid("iterations must be >= 1"));
    }
    if spec.frames() < num_classes {
        return Err(Error::invalid(format!(
            "{} frames cannot support {} classes",
            spec.frames(),
            num_classes
        )));
    }
    if let Some(g) = guide {
        check_guide(g, num_classes, spec.frames())?;
    }

    let mut model = initial_model(num_classes, spec.bins(), spec.channels(), rng_seed);
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let masks = e_step(spec, &model, guide)?;
        model = m_step(spec, &masks, &model)?;
        trace.push(log_likelihood(spec, &model, guide));
    }
    let masks = e_step(spec, &model, guide)?;
    Ok(EmResult { masks, model, log_likelihood: trace })
}

fn cosine(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    u.dot(&v) / (nu * nv)
}

/// Resolve the per-frequency class permutation ambiguity of speaker classes.
///
/// Frequencies are visited in ascending order; each one is greedily matched
/// against the running average temporal activity profile of the already
/// aligned bins, using cosine similarity. The noise class never moves.
pub fn align_permutations(masks: &MaskSet) -> MaskSet {
    let classes = masks.num_classes();
    let (frames, bins) = (masks.frames(), masks.bins());
    let speakers = classes - 1;
    if speakers <= 1 || bins == 0 {
        return masks.clone();
    }

    let mut aligned = Array3::zeros((classes, frames, bins));
    // slot profiles: running average over aligned frequencies
    let mut profiles = Array2::<f64>::zeros((speakers, frames));
    for s in 0..speakers {
        for t in 0..frames {
            profiles[(s, t)] = masks.masks[(s + 1, t, 0)];
        }
    }
    let mut count = 1.0f64;
    for t in 0..frames {
        aligned[(0, t, 0)] = masks.masks[(0, t, 0)];
        for s in 0..speakers {
            aligned[(s + 1, t, 0)] = masks.masks[(s + 1, t, 0)];
        }
    }

    for f in 1..bins {
        // greedy assignment on cosine scores
        let mut scores = Array2::<f64>::zeros((speakers, speakers));
        for slot in 0..speakers {
            for class in 0..speakers {
                scores[(slot, class)] = cosine(
                    profiles.row(slot),
                    masks.masks.slice(ndarray::s![class + 1, .., f]),
                );
            }
        }
        let mut assignment = vec![usize::MAX; speakers];
        let mut slot_used = vec![false; speakers];
        let mut class_used = vec![false; speakers];
        for _ in 0..speakers {
            let mut best = (0usize, 0usize, f64::NEG_INFINITY);
            for slot in 0..speakers {
                if slot_used[slot] {
                    continue;
                }
                for class in 0..speakers {
                    if class_used[class] {
                        continue;
                    }
                    if scores[(slot, class)] > best.2 {
                        best = (slot, class, scores[(slot, class)]);
                    }
                }
            }
            assignment[best.0] = best.1;
            slot_used[best.0] = true;
            class_used[best.1] = true;
        }

        for t in 0..frames {
            aligned[(0, t, f)] = masks.masks[(0, t, f)];
        }
        for slot in 0..speakers {
            let class = assignment[slot];
            for t in 0..frames {
                let v = masks.masks[(class + 1, t, f)];
                aligned[(slot + 1, t, f)] = v;
                profiles[(slot, t)] = (profiles[(slot, t)] * count + v) / (count + 1.0);
            }
        }
        count += 1.0;
    }

    MaskSet { masks: aligned }
}
