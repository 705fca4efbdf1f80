//! Objective evaluation: overall SNR, segmental SNR and spectrogram export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::audio::{energy, SampleBuffer};
use crate::error::{Error, Result};
use crate::stft::{frame_signal, Dft, StftConfig};

pub const OVERALL_SNR_CAP_DB: f64 = 99.0;
const RESIDUAL_FLOOR: f64 = 1e-20;
pub const SEGSNR_MIN_DB: f64 = -10.0;
pub const SEGSNR_MAX_DB: f64 = 35.0;
const SILENT_FRAME_ENERGY: f64 = 1e-12;
pub const DEFAULT_SEGSNR_FRAME_LEN: usize = 160;
const SPECTROGRAM_FLOOR: f64 = 1e-10;
const PGM_DB_RANGE: (f64, f64) = (-80.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub snrseg_improvement_db: f64,
    pub overall_snr_improvement_db: f64,
    pub input_snr_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pesq: Option<f64>,
    /// Clamped per-frame SegSNR of the enhanced signal.
    pub per_frame_segsnr: Vec<f64>,
}

fn check_lengths(clean: &SampleBuffer, test: &SampleBuffer) -> Result<()> {
    if clean.len() != test.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: test.len(),
        });
    }
    Ok(())
}

fn residual_energy(clean: &[f64], test: &[f64]) -> f64 {
    clean.iter().zip(test).map(|(c, t)| (c - t).powi(2)).sum()
}

pub fn overall_snr_db(clean: &SampleBuffer, test: &SampleBuffer) -> Result<f64> {
    check_lengths(clean, test)?;
    let signal = clean.energy();
    if signal <= 0.0 {
        return Err(Error::ZeroEnergy("clean reference"));
    }
    let residual = residual_energy(clean.samples(), test.samples());
    if residual < RESIDUAL_FLOOR {
        return Ok(OVERALL_SNR_CAP_DB);
    }
    Ok(10.0 * (signal / residual).log10())
}

/// Mean clamped SNR over non-overlapping frames whose reference is not silent.
pub fn segsnr_db(
    clean: &SampleBuffer,
    test: &SampleBuffer,
    frame_len: usize,
) -> Result<(f64, Vec<f64>)> {
    check_lengths(clean, test)?;
    if frame_len == 0 {
        return Err(Error::InvalidParameter(
            "segsnr frame length must be positive".into(),
        ));
    }
    let per_frame: Vec<f64> = clean
        .samples()
        .chunks_exact(frame_len)
        .zip(test.samples().chunks_exact(frame_len))
        .filter(|(c, _)| energy(c) >= SILENT_FRAME_ENERGY)
        .map(|(c, t)| {
            let snr = 10.0 * (energy(c) / residual_energy(c, t)).log10();
            snr.clamp(SEGSNR_MIN_DB, SEGSNR_MAX_DB)
        })
        .collect();
    if per_frame.is_empty() {
        return Err(Error::NoVoicedFrames);
    }
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok((mean, per_frame))
}

pub fn improvement(
    clean: &SampleBuffer,
    noisy: &SampleBuffer,
    enhanced: &SampleBuffer,
    frame_len: usize,
) -> Result<EvalReport> {
    check_lengths(clean, noisy)?;
    check_lengths(clean, enhanced)?;
    let (seg_noisy, _) = segsnr_db(clean, noisy, frame_len)?;
    let (seg_enhanced, per_frame) = segsnr_db(clean, enhanced, frame_len)?;
    let input_snr_db = overall_snr_db(clean, noisy)?;
    let output_snr_db = overall_snr_db(clean, enhanced)?;
    Ok(EvalReport {
        snrseg_improvement_db: seg_enhanced - seg_noisy,
        overall_snr_improvement_db: output_snr_db - input_snr_db,
        input_snr_db,
        pesq: None,
        per_frame_segsnr: per_frame,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramFormat {
    Csv,
    Pgm,
}

/// Magnitude in dB for bins `0..=n/2` of every frame, one row per frame.
pub fn spectrogram_db(buffer: &SampleBuffer, config: &StftConfig) -> Result<Vec<Vec<f64>>> {
    if buffer.len() < config.frame_len() {
        return Err(Error::TooShort {
            needed: config.frame_len(),
            got: buffer.len(),
        });
    }
    let seq = frame_signal(buffer, config)?;
    let dft = Dft::new(config.dft_size());
    let half = config.dft_size() / 2;
    Ok(seq
        .frames
        .iter()
        .map(|f| {
            dft.forward(f).bins[..=half]
                .iter()
                .map(|b| 20.0 * (b.norm() + SPECTROGRAM_FLOOR).log10())
                .collect()
        })
        .collect())
}

/// Formats with six significant digits, fixed-point where `%g` would be.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci
        .split('e')
        .nth(1)
        .and_then(|e| e.parse().ok())
        .unwrap_or(0);
    if (-5..6).contains(&exp) {
        format!("{:.*}", (5 - exp) as usize, x)
    } else {
        sci
    }
}

fn pgm_level(db: f64) -> u8 {
    let (lo, hi) = PGM_DB_RANGE;
    let t = (db.clamp(lo, hi) - lo) / (hi - lo);
    (t * 255.0).round() as u8
}

pub fn spectrogram_export(
    buffer: &SampleBuffer,
    config: &StftConfig,
    path: impl AsRef<Path>,
    format: SpectrogramFormat,
) -> Result<()> {
    let path = path.as_ref();
    let rows = spectrogram_db(buffer, config)?;
    let write = || -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        match format {
            SpectrogramFormat::Csv => {
                for row in &rows {
                    let line: Vec<String> = row.iter().map(|&v| format_sig6(v)).collect();
                    out.write_all(line.join(",").as_bytes())?;
                    out.write_all(b"\n")?;
                }
            }
            SpectrogramFormat::Pgm => {
                let width = rows.len();
                let height = rows[0].len();
                write!(out, "P5\n{width} {height}\n255\n")?;
                // top row is the highest frequency bin
                for bin in (0..height).rev() {
                    let line: Vec<u8> = rows.iter().map(|r| pgm_level(r[bin])).collect();
                    out.write_all(&line)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    };
    write().map_err(|e| e.at(path))
}
