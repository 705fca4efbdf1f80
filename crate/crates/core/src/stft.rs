//! Windowed framing, DFT and normalized overlap-add.
//!
//! The DFT length always equals the frame length, so the magnitude step runs
//! a mixed-radix length-100 transform and the phase step a length-256 one.
//! Overlap-add divides by the summed analysis window, which makes the
//! analysis/synthesis pair an identity for any window and hop.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::SampleBuffer;
use crate::error::{Error, Result};

/// Floor applied to the overlap-add window envelope.
pub const ENVELOPE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Hamming,
    /// Periodic Hann.
    ModifiedHanning,
    Rectangular,
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::Hamming => "hamming",
            WindowKind::ModifiedHanning => "modified_hanning",
            WindowKind::Rectangular => "rectangular",
        })
    }
}

/// Periodic analysis window of the given length.
pub fn make_window(kind: WindowKind, length: usize) -> Result<Vec<f64>> {
    if length < 2 {
        return Err(Error::InvalidParameter(format!(
            "window length must be at least 2, got {length}"
        )));
    }
    let n = length as f64;
    Ok((0..length)
        .map(|i| {
            let c = (2.0 * PI * i as f64 / n).cos();
            match kind {
                WindowKind::Hamming => 0.54 - 0.46 * c,
                WindowKind::ModifiedHanning => 0.5 - 0.5 * c,
                WindowKind::Rectangular => 1.0,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawStftConfig")]
pub struct StftConfig {
    window: WindowKind,
    frame_len: usize,
    hop: usize,
}

#[derive(Deserialize)]
struct RawStftConfig {
    window: WindowKind,
    frame_len: usize,
    hop: usize,
}

impl TryFrom<RawStftConfig> for StftConfig {
    type Error = Error;

    fn try_from(raw: RawStftConfig) -> Result<Self> {
        StftConfig::new(raw.window, raw.frame_len, raw.hop)
    }
}

impl StftConfig {
    pub fn new(window: WindowKind, frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len < 2 {
            return Err(Error::InvalidParameter(format!(
                "frame_len must be at least 2, got {frame_len}"
            )));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::InvalidParameter(format!(
                "hop must be in 1..={frame_len}, got {hop}"
            )));
        }
        Ok(Self {
            window,
            frame_len,
            hop,
        })
    }

    /// Hamming, 100 samples, 50% overlap.
    pub fn m_step_default() -> Self {
        Self {
            window: WindowKind::Hamming,
            frame_len: 100,
            hop: 50,
        }
    }

    /// Modified Hanning, 256 samples, 64 samples of overlap.
    pub fn p_step_default() -> Self {
        Self {
            window: WindowKind::ModifiedHanning,
            frame_len: 256,
            hop: 192,
        }
    }

    pub fn window_kind(&self) -> WindowKind {
        self.window
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn dft_size(&self) -> usize {
        self.frame_len
    }

    pub fn window(&self) -> Vec<f64> {
        make_window(self.window, self.frame_len).expect("frame_len validated at construction")
    }

    /// Number of frames needed so that frame starts cover every sample.
    pub fn frame_count(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }

    /// Leading zeros that give the first real sample the same window
    /// overlap as any interior sample.
    pub fn lead_padding(&self) -> usize {
        self.frame_len - self.hop
    }
}

/// Windowed frames of a signal; frame `l` starts at sample `l * hop`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Vec<f64>>,
    pub config: StftConfig,
    pub original_len: usize,
}

impl FrameSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

pub fn frame_signal(buffer: &SampleBuffer, config: &StftConfig) -> Result<FrameSequence> {
    frame_samples(buffer.samples(), config)
}

pub(crate) fn frame_samples(samples: &[f64], config: &StftConfig) -> Result<FrameSequence> {
    if samples.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let window = config.window();
    let frames = (0..config.frame_count(samples.len()))
        .map(|l| {
            let start = l * config.hop;
            window
                .iter()
                .enumerate()
                .map(|(n, w)| w * samples.get(start + n).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    Ok(FrameSequence {
        frames,
        config: *config,
        original_len: samples.len(),
    })
}

/// Complex DFT bins of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrumFrame {
    pub bins: Vec<Complex64>,
}

impl ComplexSpectrumFrame {
    pub fn new(bins: Vec<Complex64>) -> Self {
        Self { bins }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            bins: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Per-bin |X[k]|^2, mirrored from the lower half so that
    /// `power[k] == power[n - k]` holds exactly.
    pub fn power(&self) -> Vec<f64> {
        let n = self.bins.len();
        let mut p: Vec<f64> = self.bins.iter().map(|b| b.norm_sqr()).collect();
        for k in 1..n.div_ceil(2) {
            p[n - k] = p[k];
        }
        p
    }

    pub fn max_abs(&self) -> f64 {
        self.bins.iter().fold(0.0f64, |m, b| m.max(b.norm()))
    }

    /// Largest `|X[k] - conj(X[n-k])|` relative to the largest bin magnitude.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        let n = self.bins.len();
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let worst = (1..n)
            .map(|k| (self.bins[k] - self.bins[n - k].conj()).norm())
            .chain(std::iter::once(self.bins[0].im.abs()))
            .fold(0.0f64, f64::max);
        worst / scale
    }
}

/// Real part of an inverse DFT along with what was discarded.
#[derive(Debug, Clone, PartialEq)]
pub struct RealFrame {
    pub samples: Vec<f64>,
    /// Largest |imaginary part| of the inverse transform output.
    pub max_imag: f64,
}

/// Planned forward/inverse transforms for one length.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Dft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `X[k] = sum_n x[n] exp(-j 2 pi n k / N)`.
    pub fn forward(&self, frame: &[f64]) -> ComplexSpectrumFrame {
        assert_eq!(frame.len(), self.len, "frame length must equal DFT size");
        let mut bins: Vec<Complex64> = frame.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward.process(&mut bins);
        ComplexSpectrumFrame { bins }
    }

    /// `Re(IDFT(X))` with 1/N normalization.
    pub fn inverse_real(&self, spectrum: &ComplexSpectrumFrame) -> RealFrame {
        assert_eq!(
            spectrum.len(),
            self.len,
            "spectrum length must equal DFT size"
        );
        let mut buf = spectrum.bins.clone();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.len as f64;
        let max_imag = buf.iter().fold(0.0f64, |m, c| m.max((c.im * scale).abs()));
        RealFrame {
            samples: buf.iter().map(|c| c.re * scale).collect(),
            max_imag,
        }
    }
}

pub fn forward_dft(frame: &[f64]) -> ComplexSpectrumFrame {
    Dft::new(frame.len()).forward(frame)
}

pub fn inverse_dft_real(spectrum: &ComplexSpectrumFrame) -> RealFrame {
    Dft::new(spectrum.len()).inverse_real(spectrum)
}

/// `max |Im|` of the inverse transform relative to the largest bin magnitude.
pub fn relative_imag_residue(spectrum: &ComplexSpectrumFrame, inverse: &RealFrame) -> f64 {
    let scale = spectrum.max_abs();
    if scale == 0.0 {
        0.0
    } else {
        inverse.max_imag / scale
    }
}

/// Sums frames at `l * hop` and divides by the summed analysis window.
pub fn overlap_add(
    frames: &[Vec<f64>],
    config: &StftConfig,
    original_len: usize,
) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::InvalidParameter(
            "overlap_add needs at least one frame".into(),
        ));
    }
    let window = config.window();
    let total = ((frames.len() - 1) * config.hop + config.frame_len).max(original_len);
    let mut acc = vec![0.0; total];
    let mut envelope = vec![0.0; total];
    for (l, frame) in frames.iter().enumerate() {
        if frame.len() != config.frame_len {
            return Err(Error::LengthMismatch {
                left: frame.len(),
                right: config.frame_len,
            });
        }
        let start = l * config.hop;
        for (n, (v, w)) in frame.iter().zip(&window).enumerate() {
            acc[start + n] += v;
            envelope[start + n] += w;
        }
    }
    acc.truncate(original_len);
    Ok(acc
        .iter()
        .zip(&envelope)
        .map(|(v, e)| v / e.max(ENVELOPE_FLOOR))
        .collect())
}
