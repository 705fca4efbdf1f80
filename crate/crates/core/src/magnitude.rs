//! Magnitude compensation by spectral subtraction with cross-terms.
//!
//! The noise tracker only yields `|D[k]|`; the complex noise estimate used in
//! the cross-term is taken in phase with the noisy bin, `D = |D| e^{j angle(Y)}`.
//! Under that choice the cross-term gain collapses to `|1 - |D|/|Y||` and the
//! estimated clean power `|Y - D|^2` can never go negative, so no bin is ever
//! floored. The classical rule is kept alongside as a baseline; it floors
//! negative power estimates and counts each one.

use rustfft::num_complex::Complex64;

use crate::audio::SampleBuffer;
use crate::error::{Error, Result};
use crate::noise::{init_noise, update_noise, vad_classify, NoiseProfile, VadDecision};
use crate::params::EnhancementParams;
use crate::stft::{frame_samples, overlap_add, relative_imag_residue, ComplexSpectrumFrame, Dft};

/// Floor on `|Y|^2` denominators.
pub const POWER_FLOOR: f64 = 1e-12;

/// `1 - |D|^2 / |Y|^2`; negative when the noise estimate exceeds the observation.
pub fn classical_ss_gain_sq(y_mag_sq: f64, d_mag_sq: f64) -> f64 {
    1.0 - d_mag_sq / y_mag_sq.max(POWER_FLOOR)
}

/// Cross-term `((Y - D) D* + (Y - D)* D) / |Y|^2` with `D` in phase with `Y`.
pub fn cross_term_chi(y: Complex64, d_mag: f64) -> f64 {
    let d = noise_in_phase(y, d_mag);
    let diff = y - d;
    let num = diff * d.conj() + diff.conj() * d;
    num.re / y.norm_sqr().max(POWER_FLOOR)
}

/// `sqrt(|h_ss^2 - chi|)`.
pub fn mss_gain(h_ss_sq: f64, chi: f64) -> f64 {
    (h_ss_sq - chi).abs().sqrt()
}

fn noise_in_phase(y: Complex64, d_mag: f64) -> Complex64 {
    let mag = y.norm();
    if mag > 0.0 {
        y * (d_mag / mag)
    } else {
        Complex64::new(d_mag, 0.0)
    }
}

/// Per-bin gain terms for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MssGainFrame {
    pub h_ss_sq: Vec<f64>,
    pub chi: Vec<f64>,
    pub h_mss: Vec<f64>,
}

/// Gain terms for every bin.
///
/// `h_mss` is evaluated from the factored numerator `|Y - D|^2`, which is
/// algebraically `|Y|^2 (h_ss^2 - chi)`; subtracting the two rounded terms
/// directly loses about half the significant digits wherever `|D| ~ |Y|`.
pub fn mss_gains(y: &ComplexSpectrumFrame, profile: &NoiseProfile) -> MssGainFrame {
    let n = y.len();
    let power = y.power();
    let mut out = MssGainFrame {
        h_ss_sq: Vec::with_capacity(n),
        chi: Vec::with_capacity(n),
        h_mss: Vec::with_capacity(n),
    };
    for (k, &bin) in y.bins.iter().enumerate() {
        let d_mag = profile.magnitude(k);
        out.h_ss_sq
            .push(classical_ss_gain_sq(power[k], profile.mag_sq[k]));
        out.chi.push(cross_term_chi(bin, d_mag));
        let residual = power[k].sqrt() - d_mag;
        out.h_mss
            .push(residual.abs() / power[k].max(POWER_FLOOR).sqrt());
    }
    out
}

/// `Z[k] = H_MSS[k] |Y[k]| e^{j angle(Y[k])}`.
pub fn apply_magnitude_compensation(
    y: &ComplexSpectrumFrame,
    profile: &NoiseProfile,
) -> ComplexSpectrumFrame {
    let gains = mss_gains(y, profile);
    apply_gains(y, &gains.h_mss)
}

fn apply_gains(y: &ComplexSpectrumFrame, gains: &[f64]) -> ComplexSpectrumFrame {
    ComplexSpectrumFrame::new(y.bins.iter().zip(gains).map(|(b, g)| b * *g).collect())
}

/// Gain rule applied in the magnitude step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubtractionRule {
    /// Cross-term rule; never floors.
    CrossTerm,
    /// Power subtraction with half-wave rectification.
    Classical,
}

/// Everything the magnitude step computed for one frame.
#[derive(Debug)]
pub struct MStepFrameTrace<'a> {
    pub index: usize,
    pub noisy: &'a ComplexSpectrumFrame,
    /// The profile the gains were computed from (state after the previous frame).
    pub profile: &'a NoiseProfile,
    pub decision: VadDecision,
    /// Per-bin amplitude gain actually applied.
    pub gains: &'a [f64],
    /// Cross-term breakdown; `None` for the classical rule.
    pub mss: Option<&'a MssGainFrame>,
    pub rectified_bins: usize,
    pub output: &'a ComplexSpectrumFrame,
    pub imag_residue: f64,
}

pub trait MStepObserver {
    fn on_frame(&mut self, trace: &MStepFrameTrace<'_>);
}

impl MStepObserver for () {
    fn on_frame(&mut self, _: &MStepFrameTrace<'_>) {}
}

impl<F: FnMut(&MStepFrameTrace<'_>)> MStepObserver for F {
    fn on_frame(&mut self, trace: &MStepFrameTrace<'_>) {
        self(trace)
    }
}

#[derive(Debug, Clone)]
pub struct MStepOutput {
    pub intermediate: SampleBuffer,
    pub vad_track: Vec<VadDecision>,
    /// Bins whose power estimate had to be floored at zero.
    pub rectified_bins: usize,
    /// Worst relative imaginary residue over all synthesis frames.
    pub max_imag_residue: f64,
}

impl MStepOutput {
    pub fn speech_ratio(&self) -> f64 {
        if self.vad_track.is_empty() {
            return 0.0;
        }
        self.vad_track.iter().filter(|d| d.is_speech).count() as f64 / self.vad_track.len() as f64
    }
}

pub fn min_m_step_len(params: &EnhancementParams) -> usize {
    params.init_frame_count * params.m_config.hop() + params.m_config.frame_len()
}

pub fn run_m_step(noisy: &SampleBuffer, params: &EnhancementParams) -> Result<MStepOutput> {
    run_magnitude_step(noisy, params, SubtractionRule::CrossTerm, &mut ())
}

/// Full analysis-modification-synthesis pass with the magnitude-step framing.
pub fn run_magnitude_step(
    noisy: &SampleBuffer,
    params: &EnhancementParams,
    rule: SubtractionRule,
    observer: &mut dyn MStepObserver,
) -> Result<MStepOutput> {
    params.validate()?;
    let cfg = params.m_config;
    let needed = min_m_step_len(params);
    if noisy.len() < needed {
        return Err(Error::TooShort {
            needed,
            got: noisy.len(),
        });
    }

    let pad = cfg.lead_padding();
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(noisy.samples());
    let seq = frame_samples(&padded, &cfg)?;
    let dft = Dft::new(cfg.dft_size());
    let spectra: Vec<ComplexSpectrumFrame> = seq.frames.iter().map(|f| dft.forward(f)).collect();

    let mut profile = init_noise(&spectra, params.init_frame_count, params.noise_beta)?;
    let mut vad_track = Vec::with_capacity(spectra.len());
    let mut out_frames = Vec::with_capacity(spectra.len());
    let mut rectified_total = 0;
    let mut max_imag_residue = 0.0f64;

    for (index, y) in spectra.iter().enumerate() {
        let decision = vad_classify(y, &profile, params.vad_threshold_db);
        let (gains, mss, rectified) = match rule {
            SubtractionRule::CrossTerm => {
                let mss = mss_gains(y, &profile);
                if let Some(k) = mss.h_mss.iter().position(|g| !(g.is_finite() && *g >= 0.0)) {
                    return Err(Error::ContractViolation(format!(
                        "magnitude gain {} at frame {index} bin {k}",
                        mss.h_mss[k]
                    )));
                }
                (mss.h_mss.clone(), Some(mss), 0)
            }
            SubtractionRule::Classical => {
                let mut rectified = 0;
                let gains = y
                    .power()
                    .iter()
                    .zip(&profile.mag_sq)
                    .map(|(&py, &pd)| {
                        let g = classical_ss_gain_sq(py, pd);
                        if g < 0.0 {
                            rectified += 1;
                            0.0
                        } else {
                            g.sqrt()
                        }
                    })
                    .collect::<Vec<_>>();
                (gains, None, rectified)
            }
        };
        let z = apply_gains(y, &gains);
        let inv = dft.inverse_real(&z);
        let imag_residue = relative_imag_residue(&z, &inv);
        observer.on_frame(&MStepFrameTrace {
            index,
            noisy: y,
            profile: &profile,
            decision,
            gains: &gains,
            mss: mss.as_ref(),
            rectified_bins: rectified,
            output: &z,
            imag_residue,
        });
        rectified_total += rectified;
        max_imag_residue = max_imag_residue.max(imag_residue);
        out_frames.push(inv.samples);
        vad_track.push(decision);
        update_noise(&mut profile, y, decision);
    }

    let mut out = overlap_add(&out_frames, &cfg, padded.len())?;
    out.drain(..pad);
    Ok(MStepOutput {
        intermediate: SampleBuffer::new(out, noisy.sample_rate_hz())?,
        vad_track,
        rectified_bins: rectified_total,
        max_imag_residue,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{energy, synth_speech_like, white_noise};
    use crate::stft::forward_dft;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(mag_sq: Vec<f64>) -> NoiseProfile {
        NoiseProfile {
            mag_sq,
            beta: 0.7,
            init_frame_count: 6,
        }
    }

    #[test]
    fn classical_gain_examples() {
        assert_eq!(classical_ss_gain_sq(3.0, 0.0), 1.0);
        assert_eq!(classical_ss_gain_sq(3.0, 3.0), 0.0);
        assert_eq!(classical_ss_gain_sq(4.0, 1.0), 0.75);
        assert!(classical_ss_gain_sq(1.0, 2.0) < 0.0);
    }

    #[test]
    fn chi_examples() {
        let y = Complex64::new(0.6, -0.8) * 2.0;
        assert!(cross_term_chi(y, 0.0).abs() < 1e-15);
        assert!(cross_term_chi(y, 2.0).abs() < 1e-15);
        assert!((cross_term_chi(y, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mss_gain_examples() {
        assert!((mss_gain(0.81, 0.0) - 0.9).abs() < 1e-15);
        assert!((mss_gain(0.75, 0.5) - 0.5).abs() < 1e-15);
        assert!((mss_gain(0.2, 0.9) - 0.7f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_profile_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = forward_dft(&x);
        let z = apply_magnitude_compensation(&y, &profile(vec![0.0; 100]));
        assert_eq!(z, y);
    }

    #[test]
    fn profile_equal_to_observation_zeroes_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = forward_dft(&x);
        let g = mss_gains(&y, &profile(y.power()));
        for k in 0..100 {
            assert!(g.chi[k].abs() < 1e-12);
            assert!(g.h_ss_sq[k].abs() < 1e-12);
        }
        let z = apply_magnitude_compensation(&y, &profile(y.power()));
        assert!(z.bins.iter().all(|b| b.norm() < 1e-12 * y.max_abs()));
    }

    proptest! {
        #[test]
        fn gain_matches_closed_form_and_keeps_phase(seed in 0u64..2000, scale in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y = forward_dft(&x);
            let noise: Vec<f64> = {
                let half: Vec<f64> = (0..=50).map(|_| rng.gen_range(0.0..scale)).collect();
                (0..100).map(|k| half[k.min(100 - k)]).collect()
            };
            let p = profile(noise);
            let g = mss_gains(&y, &p);
            let z = apply_magnitude_compensation(&y, &p);
            for k in 0..100 {
                let ymag = y.bins[k].norm();
                let d = p.mag_sq[k].sqrt();
                let closed = (1.0 - d / ymag).abs();
                prop_assert!((g.h_mss[k] - closed).abs() <= 1e-12 * closed.max(1.0));
                prop_assert!((z.bins[k].norm() - closed * ymag).abs() <= 1e-12 * ymag.max(d).max(1.0));
                // Same value through the sqrt(|h_ss^2 - chi|) route, limited by cancellation.
                prop_assert!((mss_gain(g.h_ss_sq[k], g.chi[k]) - g.h_mss[k]).abs() <= 1e-6 * closed.max(1.0));
                if z.bins[k].norm() > 0.0 {
                    let dphi = (z.bins[k] * y.bins[k].conj()).arg();
                    prop_assert!(dphi.abs() < 1e-12);
                }
            }
            prop_assert!(z.conjugate_symmetry_error() < 1e-10);
        }
    }

    #[test]
    fn silence_in_silence_out() {
        let params = EnhancementParams::default();
        let silent = SampleBuffer::silence(4000, 8000).unwrap();
        let out = run_m_step(&silent, &params).unwrap();
        assert!(out.intermediate.samples().iter().all(|v| v.abs() < 1e-10));
        assert_eq!(out.intermediate.len(), 4000);
    }

    #[test]
    fn too_short_for_bootstrap() {
        let params = EnhancementParams::default();
        let short = SampleBuffer::silence(399, 8000).unwrap();
        assert!(matches!(
            run_m_step(&short, &params),
            Err(Error::TooShort { needed: 400, .. })
        ));
        assert!(run_m_step(&SampleBuffer::silence(400, 8000).unwrap(), &params).is_ok());
    }

    #[test]
    fn white_noise_keeps_rayleigh_residual() {
        // complex Gaussian bins: E(|Y| - sqrt(P))^2 / P = 2 - sqrt(pi)
        let expected = 2.0 - std::f64::consts::PI.sqrt();
        let params = EnhancementParams::default();
        for seed in 0..5 {
            let noise = white_noise(seed, 2.0, 8000).unwrap();
            let out = run_m_step(&noise, &params).unwrap();
            let ratio = out.intermediate.energy() / noise.energy();
            assert!(
                (ratio - expected).abs() < 0.015,
                "seed {seed}: energy ratio {ratio}"
            );
            assert!(ratio < 0.25);
        }
    }

    #[test]
    fn clean_speech_passes_nearly_unchanged() {
        let params = EnhancementParams::default();
        for seed in 0..5 {
            let clean = synth_speech_like(seed, 2.0, 8000).unwrap();
            let out = run_m_step(&clean, &params).unwrap();
            let x = clean.samples();
            let z = out.intermediate.samples();
            let voiced: Vec<usize> = (0..x.len()).filter(|&i| x[i].abs() > 1e-3).collect();
            let err: f64 = voiced.iter().map(|&i| (x[i] - z[i]).powi(2)).sum();
            let sig: f64 = voiced.iter().map(|&i| x[i] * x[i]).sum();
            let rel = (err / sig).sqrt();
            assert!(rel < 0.15, "seed {seed}: relative rms error {rel}");
        }
    }

    #[test]
    fn classical_rule_rectifies_cross_term_rule_never_does() {
        let params = EnhancementParams::default();
        let noise = white_noise(1, 1.0, 8000).unwrap();
        let mss = run_magnitude_step(&noise, &params, SubtractionRule::CrossTerm, &mut ()).unwrap();
        let ss = run_magnitude_step(&noise, &params, SubtractionRule::Classical, &mut ()).unwrap();
        assert_eq!(mss.rectified_bins, 0);
        assert!(ss.rectified_bins > 0);
        assert!(energy(ss.intermediate.samples()) > 0.0);
    }

    #[test]
    fn observer_sees_causal_profile() {
        let params = EnhancementParams::default();
        let noise = white_noise(2, 0.5, 8000).unwrap();
        let mut seen = Vec::new();
        let mut obs =
            |t: &MStepFrameTrace<'_>| seen.push((t.index, t.profile.mag_sq[3], t.decision));
        run_magnitude_step(&noise, &params, SubtractionRule::CrossTerm, &mut obs).unwrap();
        // Replay the recursion independently from the traced decisions.
        for w in seen.windows(2) {
            let (_, prev, dec) = w[0];
            let (_, next, _) = w[1];
            if dec.is_speech {
                assert_eq!(prev, next);
            } else {
                assert_ne!(prev, next);
            }
        }
    }
}
