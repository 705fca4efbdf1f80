//! PCM WAV I/O, SNR mixing and deterministic test signals.
//!
//! Only 16-bit mono PCM is accepted. Samples are held as `f64` in `[-1, 1)`
//! using a fixed 1/32768 scale in both directions, so a write followed by a
//! read differs from the clamped input by at most one quantization step.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;
/// Largest representable sample after quantization, `1 - 2^-15`.
pub const PCM_MAX: f64 = 32767.0 / 32768.0;

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl SampleBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "non-finite sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn silence(len: usize, sample_rate_hz: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Reads a 16-bit mono PCM WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<SampleBuffer> {
    let path = path.as_ref();
    read_wav_inner(path).map_err(|e| e.at(path))
}

fn read_wav_inner(path: &Path) -> Result<SampleBuffer> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannelCount(spec.channels));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| f64::from(v) / PCM_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    SampleBuffer::new(samples, spec.sample_rate)
}

/// Quantizes one sample: clamp to `[-1, 1 - 2^-15]`, then round to the nearest code.
pub fn quantize(sample: f64) -> i16 {
    let clamped = sample.clamp(-1.0, PCM_MAX);
    (clamped * PCM_SCALE).round() as i16
}

/// Writes a 16-bit mono PCM WAV file.
pub fn write_wav(buffer: &SampleBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_wav_inner(buffer, path).map_err(|e| e.at(path))
}

fn write_wav_inner(buffer: &SampleBuffer, path: &Path) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    {
        let mut w = writer.get_i16_writer(buffer.samples.len() as u32);
        for &s in &buffer.samples {
            w.write_sample(quantize(s));
        }
        w.flush()?;
    }
    writer.finalize()?;
    Ok(())
}

/// Adds `noise` to `clean` scaled so the mixture has exactly `snr_db` SNR.
///
/// Excess noise is truncated. Returns the mixture and the applied noise scale.
pub fn mix_at_snr(
    clean: &SampleBuffer,
    noise: &SampleBuffer,
    snr_db: f64,
) -> Result<(SampleBuffer, f64)> {
    if clean.sample_rate_hz != noise.sample_rate_hz {
        return Err(Error::SampleRateMismatch {
            left: clean.sample_rate_hz,
            right: noise.sample_rate_hz,
        });
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "snr_db must be finite, got {snr_db}"
        )));
    }
    if noise.len() < clean.len() {
        return Err(Error::TooShort {
            needed: clean.len(),
            got: noise.len(),
        });
    }
    let noise = &noise.samples[..clean.len()];
    let clean_energy = clean.energy();
    let noise_energy = energy(noise);
    if clean_energy <= 0.0 {
        return Err(Error::ZeroEnergy("clean signal"));
    }
    if noise_energy <= 0.0 {
        return Err(Error::ZeroEnergy("noise signal"));
    }
    let scale = (clean_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = clean
        .samples
        .iter()
        .zip(noise)
        .map(|(c, n)| c + scale * n)
        .collect();
    Ok((SampleBuffer::new(mixed, clean.sample_rate_hz)?, scale))
}

/// Deterministic speech-like test signal.
///
/// A harmonic series on a gliding pitch in 100..250 Hz, amplitude-modulated
/// at 2..6 Hz, laid out as voiced segments separated by exact-zero gaps of at
/// least 100 ms. The signal always opens with a 200..300 ms gap so noise
/// trackers have something to bootstrap on. Peak is normalized to 0.5.
pub fn synth_speech_like(seed: u64, duration_s: f64, sample_rate_hz: u32) -> Result<SampleBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if sample_rate_hz == 0 {
        return Err(Error::InvalidParameter(
            "sample rate must be positive".into(),
        ));
    }
    let fs = f64::from(sample_rate_hz);
    let len = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let f0 = rng.gen_range(100.0..=250.0);
    let harmonics: usize = rng.gen_range(3..=5);
    let amps: Vec<f64> = (1..=harmonics)
        .map(|h| rng.gen_range(0.5..1.0) / h as f64)
        .collect();
    let mut phases: Vec<f64> = (0..harmonics)
        .map(|_| rng.gen_range(0.0..2.0 * PI))
        .collect();
    let mod_rate = rng.gen_range(2.0..=6.0);
    let taper = (0.03 * fs).round().max(1.0);

    let mut out = vec![0.0; len];
    let mut pos = (rng.gen_range(0.20..0.30) * fs).round() as usize;
    while pos < len {
        let seg_len = (rng.gen_range(0.35..0.80) * fs).round() as usize;
        let gap_len = (rng.gen_range(0.10..0.25) * fs).round() as usize;
        let glide = rng.gen_range(-0.15..0.15);
        let level = rng.gen_range(0.6..1.0);
        let end = (pos + seg_len).min(len);
        let span = (end - pos) as f64;
        for (i, slot) in out[pos..end].iter_mut().enumerate() {
            let progress = i as f64 / span;
            let pitch = f0 * (1.0 + glide * (progress - 0.5));
            let t = i as f64 / fs;
            let envelope = 0.25 + 0.75 * (0.5 - 0.5 * (2.0 * PI * mod_rate * t).cos());
            let edge = (i as f64).min(span - 1.0 - i as f64).max(0.0);
            let ramp = if edge < taper {
                (0.5 * PI * edge / taper).sin().powi(2)
            } else {
                1.0
            };
            let mut v = 0.0;
            for (h, (amp, phase)) in amps.iter().zip(phases.iter_mut()).enumerate() {
                let freq = pitch * (h + 1) as f64;
                *phase = (*phase + 2.0 * PI * freq / fs) % (2.0 * PI);
                if freq < 0.5 * fs {
                    v += amp * phase.sin();
                }
            }
            *slot = level * envelope * ramp * v;
        }
        pos = end + gap_len;
    }

    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let gain = 0.5 / peak;
        out.iter_mut().for_each(|v| *v *= gain);
    }
    SampleBuffer::new(out, sample_rate_hz)
}

/// Deterministic white Gaussian noise with standard deviation 0.1.
pub fn white_noise(seed: u64, duration_s: f64, sample_rate_hz: u32) -> Result<SampleBuffer> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let len = (duration_s * f64::from(sample_rate_hz)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..len)
        .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SampleBuffer::new(samples, sample_rate_hz)
}
