//! End-to-end enhancement pipeline: WPE front-end, mask estimation (EM,
//! guided EM, or externally supplied masks), SCM accumulation, MVDR per
//! source, and inverse STFT.
//!
//! The stage order is fixed; individual stages are skippable through the
//! configuration. All randomness is funneled through one seed.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beamform;
use crate::error::{Error, Result};
use crate::io_formats;
use crate::scm::{self, ScmSet, WeightProfile};
use crate::spatial_mixture::{self, ActivityMatrix, MaskSet};
use crate::stft::{analyze, synthesize, MultiChannelSignal, StftConfig};
use crate::wpe::{self, WpeConfig};

/// Where the time-frequency masks come from.
#[derive(Debug, Clone)]
pub enum MaskSource {
    /// EM on the (possibly dereverberated) input spectrogram.
    Em { num_classes: usize, iterations: usize, align: bool },
    /// Externally computed masks, e.g. from a neural estimator.
    External(MaskSet),
}

/// How spatial covariances are accumulated over time.
#[derive(Debug, Clone)]
pub enum ScmMode {
    Block,
    Recursive { beta: f64 },
    Weighted(WeightProfile),
}

#[derive(Debug, Clone, Copy)]
pub enum ReferenceMode {
    Auto,
    Fixed(usize),
}

/// What the per-source MVDR treats as interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterferenceModel {
    NoiseOnly,
    NoisePlusOtherSources,
}

/// Fully resolved pipeline settings.
#[derive(Debug, Clone)]
pub struct EnhanceSettings {
    pub stft: StftConfig,
    pub wpe: Option<WpeConfig>,
    pub mask_source: MaskSource,
    pub guide: Option<ActivityMatrix>,
    pub scm_mode: ScmMode,
    pub reference: ReferenceMode,
    pub interference: InterferenceModel,
    pub seed: u64,
}

/// Per-stage wall-clock timing.
#[derive(Debug, Clone, Serialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

/// Everything the pipeline produced.
#[derive(Debug)]
pub struct EnhanceOutput {
    /// One single-channel signal per separated source, input length.
    pub sources: Vec<MultiChannelSignal>,
    pub masks: MaskSet,
    pub reference_channel: usize,
    pub em_log_likelihood: Option<Vec<f64>>,
    pub wpe_objective: Option<Vec<f64>>,
    pub timings: Vec<StageTiming>,
}

fn noise_plus_others(scm: &ScmSet, target: usize) -> ndarray::Array3<num_complex::Complex64> {
    let mut acc = scm.class(0).to_owned();
    for k in 1..scm.num_classes() {
        if k != target {
            acc += &scm.class(k);
        }
    }
    acc
}

/// Run the enhancement chain on a multi-channel input.
pub fn enhance(input: &MultiChannelSignal, settings: &EnhanceSettings) -> Result<EnhanceOutput> {
    if input.channels() < 2 {
        return Err(Error::config(
            "beamforming requires at least two input channels",
        ));
    }
    if input.sample_rate_hz != settings.stft.sample_rate_hz {
        return Err(Error::config(format!(
            "input sample rate {} does not match configured {}",
            input.sample_rate_hz, settings.stft.sample_rate_hz
        )));
    }
    let mut timings = Vec::new();
    let mut time = |name: &str, start: Instant| {
        timings.push(StageTiming { stage: name.to_string(), millis: start.elapsed().as_secs_f64() * 1e3 });
    };

    let start = Instant::now();
    let mut spec = analyze(input, &settings.stft)?;
    time("stft", start);

    let mut wpe_objective = None;
    if let Some(cfg) = &settings.wpe {
        let start = Instant::now();
        let (dereverbed, _, trace) = wpe::run_wpe(&spec, cfg)?;
        spec = dereverbed;
        wpe_objective = Some(trace);
        time("wpe", start);
    }

    let start = Instant::now();
    let mut em_log_likelihood = None;
    let masks = match &settings.mask_source {
        MaskSource::Em { num_classes, iterations, align } => {
            let result = spatial_mixture::run_em(
                &spec,
                *num_classes,
                *iterations,
                settings.guide.as_ref(),
                settings.seed,
            )?;
            em_log_likelihood = Some(result.log_likelihood);
            if *align {
                spatial_mixture::align_permutations(&result.masks)
            } else {
                result.masks
            }
        }
        MaskSource::External(m) => {
            if m.frames() != spec.frames() || m.bins() != spec.bins() {
                return Err(Error::invalid(format!(
                    "external masks shaped {}x{} do not match spectrogram {}x{}",
                    m.frames(),
                    m.bins(),
                    spec.frames(),
                    spec.bins()
                )));
            }
            m.clone()
        }
    };
    time("masks", start);
    if masks.num_classes() < 2 {
        return Err(Error::config("need at least one source class besides noise"));
    }

    let start = Instant::now();
    let block = scm::block_scm(&spec, &masks)?;
    let classes = block.num_classes();
    // reference selection always uses the block statistics as a proxy
    let mut speech_sum = block.class(1).to_owned();
    for k in 2..classes {
        speech_sum += &block.class(k);
    }
    let reference_channel = match settings.reference {
        ReferenceMode::Fixed(d) => {
            if d >= input.channels() {
                return Err(Error::config(format!(
                    "reference channel {d} out of range for {} channels",
                    input.channels()
                )));
            }
            d
        }
        ReferenceMode::Auto => beamform::select_reference(speech_sum.view(), block.class(0)),
    };
    time("scm", start);

    let start = Instant::now();
    let mut sources = Vec::with_capacity(classes - 1);
    match &settings.scm_mode {
        ScmMode::Block => {
            for k in 1..classes {
                let phi_n = match settings.interference {
                    InterferenceModel::NoiseOnly => block.class(0).to_owned(),
                    InterferenceModel::NoisePlusOtherSources => noise_plus_others(&block, k),
                };
                let weights =
                    beamform::mvdr_weights_per_freq(block.class(k), phi_n.view(), reference_channel)?;
                let out = beamform::apply(&spec, &weights)?;
                sources.push(out);
            }
        }
        ScmMode::Recursive { .. } | ScmMode::Weighted(_) => {
            let iscm = scm::instantaneous_scm(&spec, &masks)?;
            let seq = match &settings.scm_mode {
                ScmMode::Recursive { beta } => scm::recursive_scm(&iscm, *beta)?,
                ScmMode::Weighted(profile) => scm::weighted_scm(&iscm, profile)?,
                ScmMode::Block => unreachable!(),
            };
            for k in 1..classes {
                let phi_x = seq.mats.index_axis(ndarray::Axis(0), k);
                let phi_n = match settings.interference {
                    InterferenceModel::NoiseOnly => {
                        seq.mats.index_axis(ndarray::Axis(0), 0).to_owned()
                    }
                    InterferenceModel::NoisePlusOtherSources => {
                        let mut acc = seq.mats.index_axis(ndarray::Axis(0), 0).to_owned();
                        for j in 1..classes {
                            if j != k {
                                acc += &seq.mats.index_axis(ndarray::Axis(0), j);
                            }
                        }
                        acc
                    }
                };
                let weights = beamform::mvdr_weights_time_varying(
                    &phi_x,
                    &phi_n.view(),
                    reference_channel,
                )?;
                let out = beamform::apply(&spec, &weights)?;
                sources.push(out);
            }
        }
    }
    time("beamform", start);

    let start = Instant::now();
    let sources = sources
        .iter()
        .map(|s| {
            let full = synthesize(s)?;
            let len = input.len().min(full.len());
            MultiChannelSignal::new(
                full.samples.slice(ndarray::s![..len, ..]).to_owned(),
                full.sample_rate_hz,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    time("istft", start);

    Ok(EnhanceOutput {
        sources,
        masks,
        reference_channel,
        em_log_likelihood,
        wpe_objective,
        timings,
    })
}

// ---------------------------------------------------------------------------
// JSON configuration
// ---------------------------------------------------------------------------

fn default_em_iterations() -> usize {
    20
}

fn default_true() -> bool {
    true
}

/// EM section of the pipeline configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    /// Total class count including noise (two speakers plus noise = 3).
    pub num_classes: usize,
    #[serde(default = "default_em_iterations")]
    pub iterations: usize,
    /// Align per-frequency class permutations after EM.
    #[serde(default = "default_true")]
    pub align: bool,
}

/// SCM accumulation section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScmSection {
    Block,
    Recursive { beta: f64 },
    /// Path to a WGT1 weight-profile file, relative to the config document.
    Weighted { path: String },
}

/// Reference channel: "auto" or an explicit index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSection {
    Channel(usize),
    Named(String),
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection::Named("auto".to_string())
    }
}

/// Metric references for the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Per-source reference WAVs (reference-channel images).
    pub sources: Vec<String>,
    /// Compare each output's SI-SDR against the mixture's as a gain.
    #[serde(default = "default_true")]
    pub mixture_baseline: bool,
}

fn default_interference() -> InterferenceModel {
    InterferenceModel::NoisePlusOtherSources
}

/// On-disk pipeline configuration; see docs/formats.md for the schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub stft: Option<StftConfig>,
    /// Present enables the WPE front-end.
    #[serde(default)]
    pub wpe: Option<WpeConfig>,
    /// Exactly one of `em` and `masks_path` must be set.
    #[serde(default)]
    pub em: Option<EmSection>,
    #[serde(default)]
    pub masks_path: Option<String>,
    /// ACT1 activity file guiding the EM posteriors.
    #[serde(default)]
    pub guide_path: Option<String>,
    pub scm: ScmSection,
    #[serde(default)]
    pub reference: ReferenceSection,
    /// Per-source output WAV paths.
    pub outputs: Vec<String>,
    #[serde(default)]
    pub references: Option<EvalSection>,
    #[serde(default = "default_interference")]
    pub interference: InterferenceModel,
}

impl PipelineConfig {
    /// Resolve file paths and validate cross-field constraints.
    ///
    /// `base_dir` anchors relative paths; `sample_rate_hz` comes from the
    /// input signal and must agree with any explicit STFT section.
    pub fn resolve(&self, base_dir: &Path, sample_rate_hz: u32, seed: u64) -> Result<EnhanceSettings> {
        let stft = match &self.stft {
            Some(cfg) => {
                if cfg.sample_rate_hz != sample_rate_hz {
                    return Err(Error::config(format!(
                        "stft.sample_rate_hz {} does not match input rate {sample_rate_hz}",
                        cfg.sample_rate_hz
                    )));
                }
                *cfg
            }
            None => {
                let mut cfg = StftConfig::default_16k();
                cfg.sample_rate_hz = sample_rate_hz;
                cfg
            }
        };
        stft.validate()?;
        if let Some(w) = &self.wpe {
            w.validate()?;
        }
        let mask_source = match (&self.em, &self.masks_path) {
            (Some(em), None) => MaskSource::Em {
                num_classes: em.num_classes,
                iterations: em.iterations,
                align: em.align,
            },
            (None, Some(path)) => {
                MaskSource::External(io_formats::read_mask(&base_dir.join(path))?)
            }
            (Some(_), Some(_)) => {
                return Err(Error::config("em and masks_path are mutually exclusive"));
            }
            (None, None) => {
                return Err(Error::config("one of em or masks_path is required"));
            }
        };
        let guide = match &self.guide_path {
            Some(path) => Some(io_formats::read_activity(&base_dir.join(path))?),
            None => None,
        };
        let scm_mode = match &self.scm {
            ScmSection::Block => ScmMode::Block,
            ScmSection::Recursive { beta } => ScmMode::Recursive { beta: *beta },
            ScmSection::Weighted { path } => {
                ScmMode::Weighted(io_formats::read_weights(&base_dir.join(path))?)
            }
        };
        let reference = match &self.reference {
            ReferenceSection::Channel(d) => ReferenceMode::Fixed(*d),
            ReferenceSection::Named(name) if name == "auto" => ReferenceMode::Auto,
            ReferenceSection::Named(other) => {
                return Err(Error::config(format!(
                    "reference must be \"auto\" or a channel index, got {other:?}"
                )));
            }
        };
        if self.outputs.is_empty() {
            return Err(Error::config("outputs: at least one output path required"));
        }
        Ok(EnhanceSettings {
            stft,
            wpe: self.wpe,
            mask_source,
            guide,
            scm_mode,
            reference,
            interference: self.interference,
            seed,
        })
    }
}
