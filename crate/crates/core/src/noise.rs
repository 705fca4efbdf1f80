//! Energy-ratio voice activity detection and VAD-gated recursive noise tracking.

use crate::error::{Error, Result};
use crate::stft::ComplexSpectrumFrame;

const ENERGY_FLOOR: f64 = 1e-12;

/// Per-bin noise power estimate `|D[k]|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseProfile {
    pub mag_sq: Vec<f64>,
    pub beta: f64,
    pub init_frame_count: usize,
}

impl NoiseProfile {
    pub fn total_power(&self) -> f64 {
        self.mag_sq.iter().sum()
    }

    pub fn magnitude(&self, k: usize) -> f64 {
        self.mag_sq[k].sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct VadDecision {
    pub is_speech: bool,
    pub frame_snr_db: f64,
}

/// Mean of `|Y[k]|^2` over the first `count` frames.
pub fn init_noise(
    first_frames: &[ComplexSpectrumFrame],
    count: usize,
    beta: f64,
) -> Result<NoiseProfile> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "noise beta must be in (0,1), got {beta}"
        )));
    }
    if count == 0 || first_frames.len() < count {
        return Err(Error::TooShort {
            needed: count.max(1),
            got: first_frames.len(),
        });
    }
    let n = first_frames[0].len();
    let mut mag_sq = vec![0.0; n];
    for frame in &first_frames[..count] {
        for (acc, p) in mag_sq.iter_mut().zip(frame.power()) {
            *acc += p;
        }
    }
    mag_sq.iter_mut().for_each(|v| *v /= count as f64);
    Ok(NoiseProfile {
        mag_sq,
        beta,
        init_frame_count: count,
    })
}

pub fn vad_classify(
    frame: &ComplexSpectrumFrame,
    profile: &NoiseProfile,
    threshold_db: f64,
) -> VadDecision {
    let frame_energy: f64 = frame.power().iter().sum();
    let frame_snr_db = 10.0 * (frame_energy / profile.total_power().max(ENERGY_FLOOR)).log10();
    VadDecision {
        is_speech: frame_snr_db > threshold_db,
        frame_snr_db,
    }
}

/// `mag_sq <- beta * mag_sq + (1 - beta) * |Y|^2` on non-speech frames.
pub fn update_noise(
    profile: &mut NoiseProfile,
    frame: &ComplexSpectrumFrame,
    decision: VadDecision,
) {
    if decision.is_speech {
        return;
    }
    let beta = profile.beta;
    for (d, p) in profile.mag_sq.iter_mut().zip(frame.power()) {
        *d = beta * *d + (1.0 - beta) * p;
    }
}
