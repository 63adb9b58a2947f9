//! Bit-exact file interfaces: WAV audio, mask/activity/weight tensors and a
//! debug SCM dump.
//!
//! Binary layouts are normative and documented in docs/formats.md. All
//! multi-byte fields are little-endian; tensor payloads are float32 except
//! the SCM dump, which keeps float64 for debugging fidelity.

use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scm::{ScmSet, WeightProfile};
use crate::spatial_mixture::{ActivityMatrix, MaskSet};
use crate::stft::MultiChannelSignal;

pub const MASK_MAGIC: &[u8; 4] = b"MSK1";
pub const ACTIVITY_MAGIC: &[u8; 4] = b"ACT1";
pub const SCM_MAGIC: &[u8; 4] = b"SCM1";
pub const WEIGHT_MAGIC: &[u8; 4] = b"WGT1";

/// Tolerance for probability payloads: values in [-1e-3, 1+1e-3] are
/// accepted and clamped to [0, 1]; anything further out is rejected.
const PROB_SLACK: f32 = 1e-3;

/// Sample encoding for WAV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    /// IEEE float32; round-trips bit-exactly.
    Float32,
    /// 16-bit PCM; values clamped to [-1, 1).
    Pcm16,
}

/// Read a PCM16 or IEEE float32 WAV file.
///
/// PCM16 samples are scaled by 1/32768, so -32768 maps to -1.0. Any other
/// codec is a format error naming the codec.
pub fn read_wav(path: &Path) -> Result<MultiChannelSignal> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::format(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (format, bits) => {
            return Err(Error::format(format!(
                "{}: unsupported codec {format:?}/{bits}-bit (expected float32 or pcm16)",
                path.display()
            )));
        }
    };
    let frames = interleaved.len() / channels;
    let mut samples = Array2::zeros((frames, channels));
    for t in 0..frames {
        for c in 0..channels {
            samples[(t, c)] = interleaved[t * channels + c];
        }
    }
    MultiChannelSignal::new(samples, spec.sample_rate)
}

/// Write a WAV file with the requested sample encoding.
pub fn write_wav(path: &Path, signal: &MultiChannelSignal, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: signal.channels() as u16,
        sample_rate: signal.sample_rate_hz,
        bits_per_sample: match encoding {
            WavEncoding::Float32 => 32,
            WavEncoding::Pcm16 => 16,
        },
        sample_format: match encoding {
            WavEncoding::Float32 => hound::SampleFormat::Float,
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for t in 0..signal.len() {
        for c in 0..signal.channels() {
            let v = signal.samples[(t, c)];
            match encoding {
                WavEncoding::Float32 => writer.write_sample(v as f32)?,
                WavEncoding::Pcm16 => {
                    let scaled = (v * 32768.0).round().clamp(-32768.0, 32767.0);
                    writer.write_sample(scaled as i16)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

fn read_exact_or_format(reader: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|_| Error::format(format!("truncated {what}")))
}

fn read_u32(reader: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact_or_format(reader, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}

fn check_magic(reader: &mut impl Read, magic: &[u8; 4], what: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    read_exact_or_format(reader, &mut buf, what)?;
    if &buf != magic {
        return Err(Error::format(format!(
            "bad magic {:?} for {what}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_f32_payload(reader: &mut impl Read, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    let mut read = 0usize;
    while read < bytes.len() {
        match reader.read(&mut bytes[read..]) {
            Ok(0) => break,
            Ok(n) => read += n,
            Err(e) => return Err(Error::Io(e)),
        }
    }
    if read != bytes.len() {
        return Err(Error::format(format!(
            "truncated {what} payload: expected {} bytes, got {read}",
            bytes.len()
        )));
    }
    // no trailing garbage
    let mut probe = [0u8; 1];
    if reader.read(&mut probe)? != 0 {
        return Err(Error::format(format!("{what} has trailing bytes beyond declared payload")));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn validate_probability(v: f32, what: &str) -> Result<f64> {
    if !v.is_finite() || !(-PROB_SLACK..=1.0 + PROB_SLACK).contains(&v) {
        return Err(Error::format(format!("{what} value {v} outside [0, 1]")));
    }
    Ok(f64::from(v).clamp(0.0, 1.0))
}

/// Read an MSK1 mask tensor: magic, K+1/T/F u32, float32 payload in
/// class-major (k*T*F + t*F + f) order.
pub fn read_mask(path: &Path) -> Result<MaskSet> {
    let mut reader = BufReader::new(File::open(path)?);
    check_magic(&mut reader, MASK_MAGIC, "mask file header")?;
    let classes = read_u32(&mut reader, "mask file header")? as usize;
    let frames = read_u32(&mut reader, "mask file header")? as usize;
    let bins = read_u32(&mut reader, "mask file header")? as usize;
    let payload = read_f32_payload(&mut reader, classes * frames * bins, "mask file")?;
    let mut masks = Array3::zeros((classes, frames, bins));
    for k in 0..classes {
        for t in 0..frames {
            for f in 0..bins {
                masks[(k, t, f)] =
                    validate_probability(payload[k * frames * bins + t * bins + f], "mask")?;
            }
        }
    }
    MaskSet::new(masks).map_err(|e| Error::format(e.to_string()))
}

pub fn write_mask(path: &Path, masks: &MaskSet) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(MASK_MAGIC)?;
    writer.write_all(&(masks.num_classes() as u32).to_le_bytes())?;
    writer.write_all(&(masks.frames() as u32).to_le_bytes())?;
    writer.write_all(&(masks.bins() as u32).to_le_bytes())?;
    for k in 0..masks.num_classes() {
        for t in 0..masks.frames() {
            for f in 0..masks.bins() {
                writer.write_all(&(masks.masks[(k, t, f)] as f32).to_le_bytes())?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read an ACT1 activity matrix: magic, K/T u32, float32 payload in
/// class-major (k*T + t) order.
pub fn read_activity(path: &Path) -> Result<ActivityMatrix> {
    let mut reader = BufReader::new(File::open(path)?);
    check_magic(&mut reader, ACTIVITY_MAGIC, "activity file header")?;
    let sources = read_u32(&mut reader, "activity file header")? as usize;
    let frames = read_u32(&mut reader, "activity file header")? as usize;
    let payload = read_f32_payload(&mut reader, sources * frames, "activity file")?;
    let mut acts = Array2::zeros((sources, frames));
    for k in 0..sources {
        for t in 0..frames {
            acts[(k, t)] = validate_probability(payload[k * frames + t], "activity")?;
        }
    }
    ActivityMatrix::new(acts).map_err(|e| Error::format(e.to_string()))
}

pub fn write_activity(path: &Path, activity: &ActivityMatrix) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(ACTIVITY_MAGIC)?;
    writer.write_all(&(activity.num_sources() as u32).to_le_bytes())?;
    writer.write_all(&(activity.frames() as u32).to_le_bytes())?;
    for k in 0..activity.num_sources() {
        for t in 0..activity.frames() {
            writer.write_all(&(activity.activities[(k, t)] as f32).to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a WGT1 accumulation-weight profile: magic, planes/T u32, float32
/// payload in (plane, row, column) order. One plane means shared weights.
pub fn read_weights(path: &Path) -> Result<WeightProfile> {
    let mut reader = BufReader::new(File::open(path)?);
    check_magic(&mut reader, WEIGHT_MAGIC, "weight file header")?;
    let planes = read_u32(&mut reader, "weight file header")? as usize;
    let frames = read_u32(&mut reader, "weight file header")? as usize;
    let payload = read_f32_payload(&mut reader, planes * frames * frames, "weight file")?;
    let mut weights = Array3::zeros((planes, frames, frames));
    for p in 0..planes {
        for t in 0..frames {
            for u in 0..frames {
                let v = payload[p * frames * frames + t * frames + u];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::format(format!("weight value {v} must be finite and >= 0")));
                }
                weights[(p, t, u)] = f64::from(v);
            }
        }
    }
    WeightProfile::per_class(weights).map_err(|e| Error::format(e.to_string()))
}

pub fn write_weights(path: &Path, profile: &WeightProfile) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(WEIGHT_MAGIC)?;
    let shape = profile.weights.shape();
    writer.write_all(&(shape[0] as u32).to_le_bytes())?;
    writer.write_all(&(shape[1] as u32).to_le_bytes())?;
    for v in profile.weights.iter() {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

/// Write an SCM1 debug dump: magic, classes/F/D u32, then float64
/// real/imag interleaved in (class, bin, row, column) order. Not a
/// stability-guaranteed interchange format.
pub fn write_scm(path: &Path, scm: &ScmSet) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writer.write_all(SCM_MAGIC)?;
    writer.write_all(&(scm.num_classes() as u32).to_le_bytes())?;
    writer.write_all(&(scm.bins() as u32).to_le_bytes())?;
    writer.write_all(&(scm.channels() as u32).to_le_bytes())?;
    for v in scm.mats.iter() {
        writer.write_all(&v.re.to_le_bytes())?;
        writer.write_all(&v.im.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_scm(path: &Path) -> Result<ScmSet> {
    let mut reader = BufReader::new(File::open(path)?);
    check_magic(&mut reader, SCM_MAGIC, "scm file header")?;
    let classes = read_u32(&mut reader, "scm file header")? as usize;
    let bins = read_u32(&mut reader, "scm file header")? as usize;
    let channels = read_u32(&mut reader, "scm file header")? as usize;
    let count = classes * bins * channels * channels;
    let mut bytes = vec![0u8; count * 16];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::format("truncated scm payload".to_string()))?;
    let mut mats = Array4::zeros((classes, bins, channels, channels));
    for (i, v) in mats.iter_mut().enumerate() {
        let re = f64::from_le_bytes(bytes[i * 16..i * 16 + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[i * 16 + 8..i * 16 + 16].try_into().unwrap());
        *v = Complex64::new(re, im);
    }
    Ok(ScmSet { mats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3 as NdArray3;
    use std::io::Write as _;
    use tempfile::tempdir;

    #[test]
    fn wav_float32_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples = Array2::from_shape_fn((64, 3), |(t, c)| {
            ((t * 3 + c) as f64 * 0.7).sin() as f32 as f64
        });
        let sig = MultiChannelSignal::new(samples, 16_000).unwrap();
        write_wav(&path, &sig, WavEncoding::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate_hz, 16_000);
        assert_eq!(back.samples, sig.samples);
        // writing again produces identical bytes
        let path2 = dir.path().join("b.wav");
        write_wav(&path2, &back, WavEncoding::Float32).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn pcm16_scaling_convention() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.wav");
        let mut samples = Array2::zeros((4, 1));
        samples[(0, 0)] = -1.0;
        samples[(1, 0)] = 0.5;
        samples[(2, 0)] = 32767.0 / 32768.0;
        let sig = MultiChannelSignal::new(samples, 8_000).unwrap();
        write_wav(&path, &sig, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples[(0, 0)], -1.0);
        assert_eq!(back.samples[(1, 0)], 0.5);
        assert_eq!(back.samples[(2, 0)], 32767.0 / 32768.0);
    }

    #[test]
    fn hand_built_pcm16_wav_fixture() {
        // 4 channels x 2 frames, interleaved PCM16, byte-level construction
        let dir = tempdir().unwrap();
        let path = dir.path().join("fixture.wav");
        let mut bytes = Vec::new();
        let data_len = 8i32 * 2; // 8 samples, 2 bytes each
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&(36 + data_len).to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes()); // PCM
        bytes.extend_from_slice(&4u16.to_le_bytes()); // channels
        bytes.extend_from_slice(&16000u32.to_le_bytes());
        bytes.extend_from_slice(&(16000u32 * 8).to_le_bytes()); // byte rate
        bytes.extend_from_slice(&8u16.to_le_bytes()); // block align
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&(data_len as u32).to_le_bytes());
        let samples: [i16; 8] = [-32768, -16384, 0, 16384, 32767, 1, -1, 100];
        for s in samples {
            bytes.extend_from_slice(&s.to_le_bytes());
        }
        File::create(&path).unwrap().write_all(&bytes).unwrap();

        let sig = read_wav(&path).unwrap();
        assert_eq!(sig.channels(), 4);
        assert_eq!(sig.len(), 2);
        // deinterleaving: frame 0 = first four samples
        assert_eq!(sig.samples[(0, 0)], -1.0);
        assert_eq!(sig.samples[(0, 1)], -0.5);
        assert_eq!(sig.samples[(0, 2)], 0.0);
        assert_eq!(sig.samples[(0, 3)], 0.5);
        assert_eq!(sig.samples[(1, 0)], 32767.0 / 32768.0);
        assert_eq!(sig.samples[(1, 1)], 1.0 / 32768.0);
        assert_eq!(sig.samples[(1, 2)], -1.0 / 32768.0);
        assert_eq!(sig.samples[(1, 3)], 100.0 / 32768.0);
    }

    #[test]
    fn mask_roundtrip_and_hand_built_fixture() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.msk");
        // hand-built: K+1 = 3, T = 2, F = 4
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MSK1");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        let mut expect = NdArray3::zeros((3, 2, 4));
        for k in 0..3 {
            for t in 0..2 {
                for f in 0..4 {
                    let v = match k {
                        0 => 0.5,
                        1 => 0.25,
                        _ => 0.25,
                    };
                    expect[(k, t, f)] = v;
                    bytes.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let masks = read_mask(&path).unwrap();
        assert_eq!(masks.masks, expect);

        let path2 = dir.path().join("m2.msk");
        write_mask(&path2, &masks).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn mask_errors_name_the_problem() {
        let dir = tempdir().unwrap();
        // bad magic
        let path = dir.path().join("bad.msk");
        File::create(&path).unwrap().write_all(b"XXXXrest").unwrap();
        let err = read_mask(&path).unwrap_err().to_string();
        assert!(err.contains("bad magic"), "{err}");
        // truncated payload reports expected vs actual bytes
        let path = dir.path().join("trunc.msk");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MSK1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // only 1 of 4 values
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let err = read_mask(&path).unwrap_err().to_string();
        assert!(err.contains("expected 16 bytes, got 4"), "{err}");
        // out-of-range value
        let path = dir.path().join("range.msk");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"MSK1");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        File::create(&path).unwrap().write_all(&bytes).unwrap();
        let err = read_mask(&path).unwrap_err().to_string();
        assert!(err.contains("outside [0, 1]"), "{err}");
    }

    #[test]
    fn activity_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.act");
        let mut acts = Array2::zeros((2, 5));
        for t in 0..5 {
            acts[(0, t)] = if t % 2 == 0 { 1.0 } else { 0.0 };
            acts[(1, t)] = 0.25;
        }
        let activity = ActivityMatrix::new(acts).unwrap();
        write_activity(&path, &activity).unwrap();
        let back = read_activity(&path).unwrap();
        assert_eq!(back.activities, activity.activities);
    }

    #[test]
    fn scm_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.scm");
        let mats = Array4::from_shape_fn((2, 3, 2, 2), |(k, f, i, j)| {
            Complex64::new((k + f + i) as f64 * 0.25, j as f64 - 0.5)
        });
        let scm = ScmSet { mats };
        write_scm(&path, &scm).unwrap();
        let back = read_scm(&path).unwrap();
        assert_eq!(back.mats, scm.mats);
    }

    #[test]
    fn weights_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.wgt");
        let profile = WeightProfile::recursive(0.5, 4).unwrap();
        write_weights(&path, &profile).unwrap();
        let back = read_weights(&path).unwrap();
        // values pass through f32
        for (a, b) in profile.weights.iter().zip(back.weights.iter()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]

            #[test]
            fn mask_file_roundtrip_is_bit_exact(
                classes in 1usize..4,
                frames in 1usize..6,
                bins in 1usize..6,
                seed in 0u64..1000,
            ) {
                use rand::prelude::*;
                let dir = tempdir().unwrap();
                let path = dir.path().join("rt.msk");
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                // dyadic values are exact in f32, so the roundtrip is lossless
                let mut masks = NdArray3::zeros((classes, frames, bins));
                for t in 0..frames {
                    for f in 0..bins {
                        let hot = rng.random_range(0..classes);
                        if classes > 1 && rng.random_bool(0.5) {
                            let other = (hot + 1) % classes;
                            masks[(hot, t, f)] = 0.75;
                            masks[(other, t, f)] = 0.25;
                        } else {
                            masks[(hot, t, f)] = 1.0;
                        }
                    }
                }
                let set = MaskSet::new(masks).unwrap();
                write_mask(&path, &set).unwrap();
                let back = read_mask(&path).unwrap();
                prop_assert_eq!(back.masks, set.masks);
                // second write is byte-identical
                let path2 = dir.path().join("rt2.msk");
                write_mask(&path2, &back).unwrap();
                prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
            }
        }
    }
}
