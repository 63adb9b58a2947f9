//! Spatial covariance estimation from masked observations.
//!
//! Covers mask-weighted block averaging, rank-one instantaneous SCMs,
//! first-order recursive tracking with a forgetting factor, and the
//! generalized weighted accumulation that subsumes both.

use ndarray::{Array2, Array3, Array4, Array5, ArrayView2, ArrayView3, Axis};
use ndarray::parallel::prelude::*;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::spatial_mixture::MaskSet;
use crate::stft::Spectrogram;

/// Identity scale used when a class has no mask mass at some frequency.
const EMPTY_CLASS_EPSILON: f64 = 1e-10;

/// Per-class, per-frequency Hermitian spatial covariance matrices,
/// shape (classes, bins, channels, channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSet {
    pub mats: Array4<Complex64>,
}

impl ScmSet {
    pub fn num_classes(&self) -> usize {
        self.mats.shape()[0]
    }

    pub fn bins(&self) -> usize {
        self.mats.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.mats.shape()[2]
    }

    /// All per-frequency matrices of one class, shape (bins, D, D).
    pub fn class(&self, k: usize) -> ArrayView3<'_, Complex64> {
        self.mats.index_axis(Axis(0), k)
    }
}

/// Time-indexed SCM sequence, shape (classes, frames, bins, channels, channels).
#[derive(Debug, Clone, PartialEq)]
pub struct ScmSequence {
    pub mats: Array5<Complex64>,
}

impl ScmSequence {
    pub fn frames(&self) -> usize {
        self.mats.shape()[1]
    }

    /// The SCM set at frame `t`.
    pub fn at(&self, t: usize) -> ScmSet {
        ScmSet { mats: self.mats.index_axis(Axis(1), t).to_owned() }
    }
}

/// Rank-one mask-weighted outer products per class, frame and frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct IscmSequence {
    pub psi: Array5<Complex64>,
}

impl IscmSequence {
    pub fn num_classes(&self) -> usize {
        self.psi.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.psi.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.psi.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.psi.shape()[3]
    }
}

/// Accumulation coefficients c[t, t'] for the generalized SCM estimate,
/// either shared across classes or one matrix per class.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    /// shape (1, T, T) when shared, (classes, T, T) otherwise
    pub weights: Array3<f64>,
}

impl WeightProfile {
    fn validate(weights: &Array3<f64>) -> Result<()> {
        if weights.shape()[1] != weights.shape()[2] {
            return Err(Error::invalid("weight profile must be square in time"));
        }
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("weight profile entries must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn shared(weights: Array2<f64>) -> Result<Self> {
        let (t, t2) = weights.dim();
        let weights = weights.into_shape_with_order((1, t, t2)).unwrap();
        Self::validate(&weights)?;
        Ok(Self { weights })
    }

    pub fn per_class(weights: Array3<f64>) -> Result<Self> {
        Self::validate(&weights)?;
        Ok(Self { weights })
    }

    /// Identity accumulation: the output reproduces the ISCM sequence.
    pub fn identity(frames: usize) -> Self {
        Self { weights: Array3::from_shape_fn((1, frames, frames), |(_, t, u)| f64::from(t == u)) }
    }

    /// Exponential-forgetting accumulation, c[t, t'] = beta^(t-t') for t' <= t.
    pub fn recursive(beta: f64, frames: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::invalid(format!("beta {beta} outside [0, 1)")));
        }
        let weights = Array3::from_shape_fn((1, frames, frames), |(_, t, u)| {
            if u <= t {
                beta.powi((t - u) as i32)
            } else {
                0.0
            }
        });
        Ok(Self { weights })
    }

    /// Mask-mass-normalized block weights from per-class temporal profiles
    /// (shape classes x frames): every row t is profile[c, .] / sum.
    pub fn block_from_profiles(profiles: ArrayView2<f64>) -> Result<Self> {
        let (classes, frames) = profiles.dim();
        let mut weights = Array3::zeros((classes, frames, frames));
        for c in 0..classes {
            let mass: f64 = profiles.row(c).sum();
            if mass <= 0.0 {
                return Err(Error::invalid(format!("class {c} profile has no mass")));
            }
            for t in 0..frames {
                for u in 0..frames {
                    weights[(c, t, u)] = profiles[(c, u)] / mass;
                }
            }
        }
        Self::per_class(weights)
    }

    fn class_weights(&self, k: usize) -> ArrayView2<'_, f64> {
        let idx = if self.weights.shape()[0] == 1 { 0 } else { k };
        self.weights.index_axis(Axis(0), idx)
    }
}

fn check_mask_shapes(spec: &Spectrogram, masks: &MaskSet) -> Result<()> {
    if masks.frames() != spec.frames() || masks.bins() != spec.bins() {
        return Err(Error::invalid(format!(
            "masks shaped {}x{} do not match spectrogram {}x{}",
            masks.frames(),
            masks.bins(),
            spec.frames(),
            spec.bins()
        )));
    }
    Ok(())
}

/// Mask-weighted rank-one outer products Psi[k,t,f] = m * y y^H.
pub fn instantaneous_scm(spec: &Spectrogram, masks: &MaskSet) -> Result<IscmSequence> {
    check_mask_shapes(spec, masks)?;
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let classes = masks.num_classes();
    let mut psi = Array5::zeros((classes, frames, bins, channels, channels));
    for k in 0..classes {
        for t in 0..frames {
            for f in 0..bins {
                let m = masks.masks[(k, t, f)];
                if m == 0.0 {
                    continue;
                }
                for i in 0..channels {
                    for j in 0..channels {
                        psi[(k, t, f, i, j)] =
                            m * spec.data[(t, f, i)] * spec.data[(t, f, j)].conj();
                    }
                }
            }
        }
    }
    Ok(IscmSequence { psi })
}

/// Mask-mass-normalized block average Phi[k,f] = sum_t m y y^H / sum_t m.
///
/// A class with zero mask mass at some frequency falls back to a scaled
/// identity with a warning.
pub fn block_scm(spec: &Spectrogram, masks: &MaskSet) -> Result<ScmSet> {
    check_mask_shapes(spec, masks)?;
    let (frames, bins, channels) = (spec.frames(), spec.bins(), spec.channels());
    let classes = masks.num_classes();
    let mut mats = Array4::zeros((classes, bins, channels, channels));
    mats.axis_iter_mut(Axis(1))
        .into_par_iter()
        .enumerate()
        .for_each(|(f, mut out_f)| {
            for k in 0..classes {
                let mut acc = Array2::<Complex64>::zeros((channels, channels));
                let mut mass = 0.0f64;
                for t in 0..frames {
                    let m = masks.masks[(k, t, f)];
                    if m == 0.0 {
                        continue;
                    }
                    mass += m;
                    for i in 0..channels {
                        for j in 0..channels {
                            acc[(i, j)] +=
                                m * spec.data[(t, f, i)] * spec.data[(t, f, j)].conj();
                        }
                    }
                }
                if mass > 0.0 {
                    acc.mapv_inplace(|v| v / mass);
                    linalg::hermitianize(&mut acc);
                } else {
                    log::warn!("class {k} has no mask mass at bin {f}, using scaled identity");
                    acc = Array2::eye(channels).mapv(|v: Complex64| v * EMPTY_CLASS_EPSILON);
                }
                out_f.slice_mut(ndarray::s![k, .., ..]).assign(&acc);
            }
        });
    Ok(ScmSet { mats })
}

/// First-order recursive accumulation Phi[t] = beta Phi[t-1] + Psi[t].
///
/// Starts from Phi[0] = Psi[0], so the recursion equals the explicit sum
/// sum_tau beta^(t-tau) Psi[tau]. Unnormalized by design: downstream MVDR
/// weights are invariant to the accumulated scale.
pub fn recursive_scm(iscm: &IscmSequence, beta: f64) -> Result<ScmSequence> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::invalid(format!("beta {beta} outside [0, 1)")));
    }
    let mut mats = iscm.psi.clone();
    let frames = iscm.frames();
    for k in 0..iscm.num_classes() {
        for t in 1..frames {
            let prev = mats.slice(ndarray::s![k, t - 1, .., .., ..]).to_owned();
            mats.slice_mut(ndarray::s![k, t, .., .., ..])
                .zip_mut_with(&prev, |c, p| *c += beta * p);
        }
    }
    Ok(ScmSequence { mats })
}

/// Generalized weighted accumulation Phi[t] = sum_t' c[t, t'] Psi[t'].
pub fn weighted_scm(iscm: &IscmSequence, weights: &WeightProfile) -> Result<ScmSequence> {
    let frames = iscm.frames();
    let classes = iscm.num_classes();
    if weights.weights.shape()[1] != frames {
        return Err(Error::invalid(format!(
            "weight profile spans {} frames, ISCM has {}",
            weights.weights.shape()[1],
            frames
        )));
    }
    if weights.weights.shape()[0] != 1 && weights.weights.shape()[0] != classes {
        return Err(Error::invalid(format!(
            "weight profile has {} class planes, expected 1 or {}",
            weights.weights.shape()[0],
            classes
        )));
    }
    let (bins, channels) = (iscm.bins(), iscm.channels());
    let mut mats = Array5::zeros((classes, frames, bins, channels, channels));
    for k in 0..classes {
        let w = weights.class_weights(k);
        for t in 0..frames {
            for u in 0..frames {
                let c = w[(t, u)];
                if c == 0.0 {
                    continue;
                }
                let psi = iscm.psi.slice(ndarray::s![k, u, .., .., ..]);
                mats.slice_mut(ndarray::s![k, t, .., .., ..])
                    .zip_mut_with(&psi, |o, p| *o += c * p);
            }
        }
    }
    Ok(ScmSequence { mats })
}

/// Diagonal loading: Phi + loading * trace(Phi)/D * I, per class and bin.
pub fn condition(scm: &ScmSet, loading: f64) -> ScmSet {
    let mut out = scm.clone();
    let channels = scm.channels();
    for k in 0..scm.num_classes() {
        for f in 0..scm.bins() {
            let mut m = out.mats.slice_mut(ndarray::s![k, f, .., ..]);
            let tr: f64 = (0..channels).map(|i| m[(i, i)].re).sum();
            let shift = Complex64::new(loading * tr / channels as f64, 0.0);
            for i in 0..channels {
                m[(i, i)] += shift;
            }
        }
    }
    out
}
