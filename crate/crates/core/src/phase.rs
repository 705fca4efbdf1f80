//! Phase compensation weighted by speech-presence probability.
//!
//! Each frame of the intermediate signal gets a real, anti-symmetric offset
//! `phi[k] = mu * rho[k] * Lambda[k] * V` added before taking the angle, with
//! the magnitude kept. `rho` is near 1 where speech is unlikely and near 0
//! where it is certain. Because the offset is anti-symmetric, the two members
//! of a conjugate pair are pushed in opposite directions; when `|Z|` is small
//! against `|phi|` they land nearly opposite each other and cancel in the real
//! part of the inverse transform.
//!
//! The a posteriori SNR is measured against a VAD-gated noise power tracked on
//! the intermediate signal itself.

use rustfft::num_complex::Complex64;

use crate::audio::SampleBuffer;
use crate::error::{Error, Result};
use crate::noise::{init_noise, update_noise, vad_classify, NoiseProfile};
use crate::params::EnhancementParams;
use crate::stft::{frame_samples, overlap_add, relative_imag_residue, ComplexSpectrumFrame, Dft};

const SNR_FLOOR: f64 = 1e-12;

/// How the compensation strength `rho` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoMode {
    Probabilistic,
    Constant(f64),
}

/// Cross-frame memory of the frame-presence decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SppState {
    pub prev_xi_frame: f64,
}

impl SppState {
    pub fn new(params: &EnhancementParams) -> Self {
        Self {
            prev_xi_frame: params.xi_min,
        }
    }
}

/// All intermediate quantities of one compensated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCompFrame {
    pub v: f64,
    pub gamma: Vec<f64>,
    pub xi: Vec<f64>,
    /// Smoothed SNRs over the non-redundant half, bins `0..=n/2`.
    pub xi_local: Vec<f64>,
    pub xi_global: Vec<f64>,
    /// Full-length, mirrored so that `p[k] == p[n - k]`.
    pub p_local: Vec<f64>,
    pub p_global: Vec<f64>,
    pub p_frame: Option<f64>,
    pub rho: Vec<f64>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
}

/// Frame RMS of the spectrum, `sqrt(mean |Z[k]|^2)`.
pub fn noise_proxy_v(z: &ComplexSpectrumFrame) -> f64 {
    if z.is_empty() {
        return 0.0;
    }
    (z.bins.iter().map(|b| b.norm_sqr()).sum::<f64>() / z.len() as f64).sqrt()
}

/// `|Z[k]|^2 / noise_power[k]`.
pub fn posterior_snr(z: &ComplexSpectrumFrame, noise_power: &[f64]) -> Vec<f64> {
    z.power()
        .iter()
        .zip(noise_power)
        .map(|(p, d)| p / d.max(SNR_FLOOR))
        .collect()
}

pub fn a_priori_xi(gamma: &[f64], alpha_xi: f64) -> Vec<f64> {
    gamma.iter().map(|g| (1.0 - alpha_xi) * g).collect()
}

/// Hann-shaped weights of length `2w + 1`, normalized to sum to one.
pub fn smoothing_window(w: usize) -> Vec<f64> {
    let raw: Vec<f64> = (-(w as isize)..=w as isize)
        .map(|i| 0.5 + 0.5 * (std::f64::consts::PI * i as f64 / (w + 1) as f64).cos())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|h| h / total).collect()
}

/// Convolves `xi` with [`smoothing_window`]; indices outside the slice count as zero.
pub fn smooth_xi(xi: &[f64], w: usize) -> Vec<f64> {
    let h = smoothing_window(w);
    let n = xi.len() as isize;
    let w = w as isize;
    (0..n)
        .map(|k| {
            (-w..=w)
                .filter_map(|i| {
                    let j = k - i;
                    (0..n)
                        .contains(&j)
                        .then(|| h[(i + w) as usize] * xi[j as usize])
                })
                .sum()
        })
        .collect()
}

/// Log-linear presence probability between `xi_min` (0) and `xi_max` (1).
pub fn presence_prob(xi_psi: f64, xi_min: f64, xi_max: f64) -> f64 {
    if xi_psi <= xi_min {
        0.0
    } else if xi_psi >= xi_max {
        1.0
    } else {
        (xi_psi / xi_min).ln() / (xi_max / xi_min).ln()
    }
}

/// Soft frame-presence value used when the frame SNR is not rising.
pub fn mu_tau(xi_frame: f64, params: &EnhancementParams) -> f64 {
    let lo = params.xi_peak * params.xi_min;
    let hi = params.xi_peak * params.xi_max;
    if xi_frame <= lo {
        0.0
    } else if xi_frame >= hi {
        1.0
    } else {
        (xi_frame / lo).ln() / (params.xi_max / params.xi_min).ln()
    }
}

/// Decision for a frame with mean a priori SNR `xi_frame`.
pub fn frame_presence_from_mean(
    xi_frame: f64,
    state: &mut SppState,
    params: &EnhancementParams,
) -> f64 {
    let p = if xi_frame < params.xi_min {
        0.0
    } else if xi_frame > state.prev_xi_frame && xi_frame > params.xi_min {
        1.0
    } else {
        mu_tau(xi_frame, params)
    };
    state.prev_xi_frame = xi_frame;
    p
}

pub fn frame_presence(xi: &[f64], state: &mut SppState, params: &EnhancementParams) -> f64 {
    let mean = if xi.is_empty() {
        0.0
    } else {
        xi.iter().sum::<f64>() / xi.len() as f64
    };
    frame_presence_from_mean(mean, state, params)
}

pub fn rho(p_local: f64, p_global: f64, p_frame: f64) -> f64 {
    (1.0 - p_local * p_global * p_frame).max(0.0).sqrt()
}

/// `+1` on the lower half, `-1` on the upper half, `0` at DC and Nyquist.
pub fn lambda_weights(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let twice = 2 * k;
            if k > 0 && twice < n {
                1.0
            } else if twice > n {
                -1.0
            } else {
                0.0
            }
        })
        .collect()
}

pub fn phase_comp_function(mu: f64, rho: &[f64], lambda: &[f64], v: f64) -> Vec<f64> {
    rho.iter()
        .zip(lambda)
        .map(|(r, l)| mu * r * l * v)
        .collect()
}

/// `X[k] = |Z[k]| e^{j angle(Z[k] + phi[k])}`.
pub fn apply_phase_compensation(z: &ComplexSpectrumFrame, phi: &[f64]) -> ComplexSpectrumFrame {
    ComplexSpectrumFrame::new(
        z.bins
            .iter()
            .zip(phi)
            .map(|(&b, &p)| {
                let shifted = b + p;
                let mag = b.norm();
                if mag == 0.0 || shifted.norm() == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::from_polar(mag, shifted.arg())
                }
            })
            .collect(),
    )
}

fn mirror_half(half: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|k| half[k.min(n - k)]).collect()
}

/// Computes every compensation quantity for one frame and advances `state`.
pub fn compensation_frame(
    z: &ComplexSpectrumFrame,
    noise_power: &[f64],
    state: &mut SppState,
    params: &EnhancementParams,
    mode: RhoMode,
) -> PhaseCompFrame {
    let n = z.len();
    let v = noise_proxy_v(z);
    let gamma = posterior_snr(z, noise_power);
    let xi = a_priori_xi(&gamma, params.alpha_xi);
    let lambda = lambda_weights(n);

    let (xi_local, xi_global, p_local, p_global, p_frame, rho_bins) = match mode {
        RhoMode::Constant(value) => (
            Vec::new(),
            Vec::new(),
            Vec::new(),
            Vec::new(),
            None,
            vec![value; n],
        ),
        RhoMode::Probabilistic => {
            let half = &xi[..=n / 2];
            let xi_local = smooth_xi(half, params.w_local);
            let xi_global = smooth_xi(half, params.w_global);
            let prob = |s: &[f64]| -> Vec<f64> {
                let p: Vec<f64> = s
                    .iter()
                    .map(|&x| presence_prob(x, params.xi_min, params.xi_max))
                    .collect();
                mirror_half(&p, n)
            };
            let p_local = prob(&xi_local);
            let p_global = prob(&xi_global);
            let p_frame = frame_presence(&xi, state, params);
            let rho_bins = p_local
                .iter()
                .zip(&p_global)
                .map(|(l, g)| rho(*l, *g, p_frame))
                .collect();
            (
                xi_local,
                xi_global,
                p_local,
                p_global,
                Some(p_frame),
                rho_bins,
            )
        }
    };
    let phi = phase_comp_function(params.mu, &rho_bins, &lambda, v);
    PhaseCompFrame {
        v,
        gamma,
        xi,
        xi_local,
        xi_global,
        p_local,
        p_global,
        p_frame,
        rho: rho_bins,
        lambda,
        phi,
    }
}

/// Fails if any probability or `rho` left `[0, 1]`.
pub fn check_probabilities(frame: &PhaseCompFrame, index: usize) -> Result<()> {
    let in_unit = |x: f64| (0.0..=1.0).contains(&x);
    let named = [
        ("p_local", &frame.p_local),
        ("p_global", &frame.p_global),
        ("rho", &frame.rho),
    ];
    for (name, values) in named {
        if let Some(k) = values.iter().position(|&x| !in_unit(x)) {
            return Err(Error::ContractViolation(format!(
                "{name} = {} outside [0,1] at frame {index} bin {k}",
                values[k]
            )));
        }
    }
    if let Some(p) = frame.p_frame {
        if !in_unit(p) {
            return Err(Error::ContractViolation(format!(
                "p_frame = {p} outside [0,1] at frame {index}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct PStepFrameTrace<'a> {
    pub index: usize,
    pub input: &'a ComplexSpectrumFrame,
    pub noise: &'a NoiseProfile,
    pub comp: &'a PhaseCompFrame,
    pub output: &'a ComplexSpectrumFrame,
    /// `max |Im|` of the inverse transform relative to the largest bin.
    pub imag_residue: f64,
}

pub trait PStepObserver {
    fn on_frame(&mut self, trace: &PStepFrameTrace<'_>);
}

impl PStepObserver for () {
    fn on_frame(&mut self, _: &PStepFrameTrace<'_>) {}
}

impl<F: FnMut(&PStepFrameTrace<'_>)> PStepObserver for F {
    fn on_frame(&mut self, trace: &PStepFrameTrace<'_>) {
        self(trace)
    }
}

#[derive(Debug, Clone)]
pub struct PStepOutput {
    pub enhanced: SampleBuffer,
    pub max_imag_residue: f64,
    pub frames: usize,
}

pub fn run_p_step(
    intermediate: &SampleBuffer,
    params: &EnhancementParams,
    mode: RhoMode,
) -> Result<PStepOutput> {
    run_p_step_observed(intermediate, params, mode, &mut ())
}

pub fn run_p_step_observed(
    intermediate: &SampleBuffer,
    params: &EnhancementParams,
    mode: RhoMode,
    observer: &mut dyn PStepObserver,
) -> Result<PStepOutput> {
    params.validate()?;
    if let RhoMode::Constant(value) = mode {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidParameter(format!(
                "constant rho must be in [0,1], got {value}"
            )));
        }
    }
    let cfg = params.p_config;
    if intermediate.len() < cfg.frame_len() {
        return Err(Error::TooShort {
            needed: cfg.frame_len(),
            got: intermediate.len(),
        });
    }

    let pad = cfg.lead_padding();
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(intermediate.samples());
    let seq = frame_samples(&padded, &cfg)?;
    let dft = Dft::new(cfg.dft_size());
    let spectra: Vec<ComplexSpectrumFrame> = seq.frames.iter().map(|f| dft.forward(f)).collect();

    let bootstrap = params.init_frame_count.min(spectra.len());
    let mut noise = init_noise(&spectra, bootstrap, params.noise_beta)?;
    let mut state = SppState::new(params);
    let mut out_frames = Vec::with_capacity(spectra.len());
    let mut max_imag_residue = 0.0f64;

    for (index, z) in spectra.iter().enumerate() {
        let comp = compensation_frame(z, &noise.mag_sq, &mut state, params, mode);
        check_probabilities(&comp, index)?;
        let x_hat = apply_phase_compensation(z, &comp.phi);
        let inv = dft.inverse_real(&x_hat);
        let imag_residue = relative_imag_residue(&x_hat, &inv);
        observer.on_frame(&PStepFrameTrace {
            index,
            input: z,
            noise: &noise,
            comp: &comp,
            output: &x_hat,
            imag_residue,
        });
        max_imag_residue = max_imag_residue.max(imag_residue);
        out_frames.push(inv.samples);
        let decision = vad_classify(z, &noise, params.vad_threshold_db);
        update_noise(&mut noise, z, decision);
    }

    let mut out = overlap_add(&out_frames, &cfg, padded.len())?;
    out.drain(..pad);
    Ok(PStepOutput {
        enhanced: SampleBuffer::new(out, intermediate.sample_rate_hz())?,
        max_imag_residue,
        frames: spectra.len(),
    })
}
