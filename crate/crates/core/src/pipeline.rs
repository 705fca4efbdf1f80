//! End-to-end orchestration: enhance, mix, eval and batch grids.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{mix_at_snr, read_wav, write_wav, SampleBuffer};
use crate::error::{Error, Result};
use crate::magnitude::{run_magnitude_step, MStepObserver, SubtractionRule};
use crate::metrics::{improvement, EvalReport, DEFAULT_SEGSNR_FRAME_LEN};
use crate::params::{EnhancementParams, ParamsFile};
use crate::phase::{run_p_step_observed, PStepObserver, RhoMode};

/// Which stages run, and how.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Mspp,
    MOnly,
    /// Phase step applied straight to the noisy input.
    POnly(RhoMode),
    SsBaseline,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Mspp => f.write_str("mspp"),
            Mode::MOnly => f.write_str("m-only"),
            Mode::POnly(RhoMode::Probabilistic) => f.write_str("p-only"),
            Mode::POnly(RhoMode::Constant(rho)) => write!(f, "p-only:{rho}"),
            Mode::SsBaseline => f.write_str("ss-baseline"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    /// Accepts `mspp`, `m-only`, `ss-baseline`, `p-only` and `p-only:<rho>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mspp" => Ok(Mode::Mspp),
            "m-only" => Ok(Mode::MOnly),
            "ss-baseline" => Ok(Mode::SsBaseline),
            "p-only" => Ok(Mode::POnly(RhoMode::Probabilistic)),
            other => {
                let rho = other
                    .strip_prefix("p-only:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown mode `{other}`")))?;
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::Config(format!(
                        "constant rho must be in [0,1], got {rho}"
                    )));
                }
                Ok(Mode::POnly(RhoMode::Constant(rho)))
            }
        }
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTimings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_step_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_step_s: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Enhancement {
    pub enhanced: SampleBuffer,
    /// Fraction of magnitude-step frames the VAD marked as speech.
    pub speech_ratio: Option<f64>,
    pub rectified_bins: Option<usize>,
    pub max_imag_residue: f64,
    pub timings: StageTimings,
}

pub fn enhance_buffer(
    noisy: &SampleBuffer,
    params: &EnhancementParams,
    mode: Mode,
) -> Result<Enhancement> {
    enhance_buffer_observed(noisy, params, mode, &mut (), &mut ())
}

/// [`enhance_buffer`] with per-frame callbacks into both steps.
pub fn enhance_buffer_observed(
    noisy: &SampleBuffer,
    params: &EnhancementParams,
    mode: Mode,
    m_observer: &mut dyn MStepObserver,
    p_observer: &mut dyn PStepObserver,
) -> Result<Enhancement> {
    params.validate()?;
    let mut timings = StageTimings::default();
    let (intermediate, speech_ratio, rectified_bins, mut max_imag_residue) = match mode {
        Mode::POnly(_) => (noisy.clone(), None, None, 0.0),
        Mode::Mspp | Mode::MOnly | Mode::SsBaseline => {
            let rule = if mode == Mode::SsBaseline {
                SubtractionRule::Classical
            } else {
                SubtractionRule::CrossTerm
            };
            let start = Instant::now();
            let m = run_magnitude_step(noisy, params, rule, m_observer)?;
            timings.m_step_s = Some(start.elapsed().as_secs_f64());
            let ratio = m.speech_ratio();
            (
                m.intermediate,
                Some(ratio),
                Some(m.rectified_bins),
                m.max_imag_residue,
            )
        }
    };
    let enhanced = match mode {
        Mode::Mspp | Mode::POnly(_) => {
            let rho = match mode {
                Mode::POnly(rho) => rho,
                _ => RhoMode::Probabilistic,
            };
            let start = Instant::now();
            let p = run_p_step_observed(&intermediate, params, rho, p_observer)?;
            timings.p_step_s = Some(start.elapsed().as_secs_f64());
            max_imag_residue = max_imag_residue.max(p.max_imag_residue);
            p.enhanced
        }
        Mode::MOnly | Mode::SsBaseline => intermediate,
    };
    if enhanced.len() != noisy.len() {
        return Err(Error::ContractViolation(format!(
            "output length {} differs from input length {}",
            enhanced.len(),
            noisy.len()
        )));
    }
    Ok(Enhancement {
        enhanced,
        speech_ratio,
        rectified_bins,
        max_imag_residue,
        timings,
    })
}

/// Record of one command invocation. Field order and map ordering are fixed
/// so identical runs serialize to identical bytes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamsFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vad_speech_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rectified_bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_imag_residue: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<EvalReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<StageTimings>,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Self::default()
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest is plain data");
        text.push('\n');
        text
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::Io(e).at(path))
    }
}

fn path_string(path: &Path) -> String {
    path.display().to_string()
}

fn check_same_len(reference: &SampleBuffer, other: &SampleBuffer, other_path: &Path) -> Result<()> {
    if reference.len() != other.len() {
        return Err(Error::LengthMismatch {
            left: reference.len(),
            right: other.len(),
        }
        .at(other_path));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct EnhanceOptions<'a> {
    /// Clean reference; when given, metrics are added to the manifest.
    pub clean: Option<&'a Path>,
    pub segsnr_frame_len: Option<usize>,
    pub timings: bool,
}

pub fn enhance(
    noisy_path: &Path,
    out_path: &Path,
    params: &EnhancementParams,
    mode: Mode,
    options: &EnhanceOptions<'_>,
) -> Result<RunManifest> {
    params.validate()?;
    let noisy = read_wav(noisy_path)?;
    let clean = options
        .clean
        .map(|p| read_wav(p).and_then(|c| check_same_len(&c, &noisy, noisy_path).map(|_| c)));
    let clean = clean.transpose()?;
    let result = enhance_buffer(&noisy, params, mode).map_err(|e| e.at(noisy_path))?;
    write_wav(&result.enhanced, out_path)?;

    let mut manifest = RunManifest::new("enhance");
    manifest
        .inputs
        .insert("noisy".into(), path_string(noisy_path));
    manifest
        .outputs
        .insert("enhanced".into(), path_string(out_path));
    manifest.mode = Some(mode);
    manifest.params = Some(params.to_file());
    manifest.vad_speech_ratio = result.speech_ratio;
    manifest.rectified_bins = result.rectified_bins;
    manifest.max_imag_residue = Some(result.max_imag_residue);
    if let (Some(clean), Some(clean_path)) = (clean, options.clean) {
        manifest
            .inputs
            .insert("clean".into(), path_string(clean_path));
        let frame_len = options.segsnr_frame_len.unwrap_or(DEFAULT_SEGSNR_FRAME_LEN);
        manifest.metrics = Some(
            improvement(&clean, &noisy, &result.enhanced, frame_len)
                .map_err(|e| e.at(clean_path))?,
        );
    }
    if options.timings {
        manifest.timings = Some(result.timings);
    }
    Ok(manifest)
}

pub fn mix(
    clean_path: &Path,
    noise_path: &Path,
    snr_db: f64,
    out_path: &Path,
) -> Result<RunManifest> {
    let clean = read_wav(clean_path)?;
    let noise = read_wav(noise_path)?;
    let (mixed, scale) = mix_at_snr(&clean, &noise, snr_db).map_err(|e| e.at(noise_path))?;
    write_wav(&mixed, out_path)?;
    let mut manifest = RunManifest::new("mix");
    manifest
        .inputs
        .insert("clean".into(), path_string(clean_path));
    manifest
        .inputs
        .insert("noise".into(), path_string(noise_path));
    manifest
        .outputs
        .insert("noisy".into(), path_string(out_path));
    manifest.snr_db = Some(snr_db);
    manifest.noise_scale = Some(scale);
    Ok(manifest)
}

pub fn eval(
    clean_path: &Path,
    noisy_path: &Path,
    enhanced_path: &Path,
    segsnr_frame_len: usize,
) -> Result<EvalReport> {
    let clean = read_wav(clean_path)?;
    let noisy = read_wav(noisy_path)?;
    let enhanced = read_wav(enhanced_path)?;
    check_same_len(&clean, &noisy, noisy_path)?;
    check_same_len(&clean, &enhanced, enhanced_path)?;
    improvement(&clean, &noisy, &enhanced, segsnr_frame_len).map_err(|e| e.at(clean_path))
}

/// Key-value text form of an evaluation report.
pub fn report_text(report: &EvalReport) -> String {
    toml::to_string(report).expect("report is plain data")
}

/// Grid description read from a TOML file. Relative paths resolve against
/// the file's directory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchManifest {
    pub clean: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
    pub snr_db: Vec<f64>,
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub segsnr_frame_len: Option<usize>,
    /// Parameter file applied to every cell.
    #[serde(default)]
    pub config: Option<PathBuf>,
}

impl BatchManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io(e).at(path))?;
        let mut manifest: Self =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()).at(path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in manifest
            .clean
            .iter_mut()
            .chain(manifest.noise.iter_mut())
            .chain(manifest.config.iter_mut())
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        manifest.validate().map_err(|e| e.at(path))?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<()> {
        if self.clean.is_empty()
            || self.noise.is_empty()
            || self.snr_db.is_empty()
            || self.modes.is_empty()
        {
            return Err(Error::Config(
                "clean, noise, snr_db and modes must all be non-empty".into(),
            ));
        }
        if let Some(v) = self.snr_db.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("snr level {v} is not finite")));
        }
        if self.segsnr_frame_len == Some(0) {
            return Err(Error::Config("segsnr_frame_len must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRow {
    pub clean: String,
    pub noise: String,
    pub snr_db: f64,
    pub mode: Mode,
    pub input_snr_db: f64,
    pub snrseg_improvement_db: f64,
    pub overall_snr_improvement_db: f64,
    pub rectified_bins: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub rows: Vec<BatchRow>,
    pub results_csv: PathBuf,
    pub summary_csv: PathBuf,
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cell_name(clean: &Path, noise: &Path, snr_db: f64) -> String {
    format!("{}__{}__{}dB.wav", stem(clean), stem(noise), snr_db)
}

fn mode_dir(mode: Mode) -> String {
    mode.to_string().replace(':', "_rho")
}

/// Runs mix, enhance and eval for every (clean, noise, snr, mode) cell.
///
/// Cells run in parallel; rows come back in manifest order. Metrics use the
/// noisy signal as written to disk, so rerunning `enhance` on a written
/// mixture reproduces the batch output.
pub fn batch(
    manifest: &BatchManifest,
    params: &EnhancementParams,
    out_dir: &Path,
) -> Result<BatchOutcome> {
    params.validate()?;
    manifest.validate()?;
    let frame_len = manifest
        .segsnr_frame_len
        .unwrap_or(DEFAULT_SEGSNR_FRAME_LEN);
    let noisy_dir = out_dir.join("noisy");
    fs::create_dir_all(&noisy_dir).map_err(|e| Error::Io(e).at(&noisy_dir))?;
    for mode in &manifest.modes {
        let dir = out_dir.join("enhanced").join(mode_dir(*mode));
        fs::create_dir_all(&dir).map_err(|e| Error::Io(e).at(&dir))?;
    }

    let cleans: Vec<SampleBuffer> = manifest.clean.iter().map(read_wav).collect::<Result<_>>()?;
    let noises: Vec<SampleBuffer> = manifest.noise.iter().map(read_wav).collect::<Result<_>>()?;

    let mut mix_cells = Vec::new();
    for ci in 0..cleans.len() {
        for ni in 0..noises.len() {
            for &snr in &manifest.snr_db {
                mix_cells.push((ci, ni, snr));
            }
        }
    }
    let noisy: Vec<SampleBuffer> = mix_cells
        .par_iter()
        .map(|&(ci, ni, snr)| {
            let (mixed, _) =
                mix_at_snr(&cleans[ci], &noises[ni], snr).map_err(|e| e.at(&manifest.noise[ni]))?;
            let path = noisy_dir.join(cell_name(&manifest.clean[ci], &manifest.noise[ni], snr));
            write_wav(&mixed, &path)?;
            read_wav(&path)
        })
        .collect::<Result<_>>()?;

    let grid: Vec<(usize, Mode)> = (0..mix_cells.len())
        .flat_map(|cell| manifest.modes.iter().map(move |&m| (cell, m)))
        .collect();
    let rows: Vec<BatchRow> = grid
        .par_iter()
        .map(|&(cell, mode)| {
            let (ci, ni, snr) = mix_cells[cell];
            let name = cell_name(&manifest.clean[ci], &manifest.noise[ni], snr);
            let noisy_path = noisy_dir.join(&name);
            let result =
                enhance_buffer(&noisy[cell], params, mode).map_err(|e| e.at(&noisy_path))?;
            let out_path = out_dir.join("enhanced").join(mode_dir(mode)).join(&name);
            write_wav(&result.enhanced, &out_path)?;
            let report = improvement(&cleans[ci], &noisy[cell], &result.enhanced, frame_len)
                .map_err(|e| e.at(&manifest.clean[ci]))?;
            Ok(BatchRow {
                clean: stem(&manifest.clean[ci]),
                noise: stem(&manifest.noise[ni]),
                snr_db: snr,
                mode,
                input_snr_db: report.input_snr_db,
                snrseg_improvement_db: report.snrseg_improvement_db,
                overall_snr_improvement_db: report.overall_snr_improvement_db,
                rectified_bins: result.rectified_bins,
            })
        })
        .collect::<Result<_>>()?;

    let results_csv = out_dir.join("results.csv");
    fs::write(&results_csv, results_table(&rows)).map_err(|e| Error::Io(e).at(&results_csv))?;
    let summary_csv = out_dir.join("summary.csv");
    fs::write(
        &summary_csv,
        summary_table(&rows, &manifest.snr_db, &manifest.modes),
    )
    .map_err(|e| Error::Io(e).at(&summary_csv))?;
    Ok(BatchOutcome {
        rows,
        results_csv,
        summary_csv,
    })
}

fn fmt_num(x: f64) -> String {
    crate::metrics::format_sig6(x)
}

/// One line per grid cell.
pub fn results_table(rows: &[BatchRow]) -> String {
    let mut out = String::from(
        "clean,noise,snr_db,mode,input_snr_db,snrseg_improvement_db,overall_snr_improvement_db,rectified_bins\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.clean,
            r.noise,
            r.snr_db,
            r.mode,
            fmt_num(r.input_snr_db),
            fmt_num(r.snrseg_improvement_db),
            fmt_num(r.overall_snr_improvement_db),
            r.rectified_bins.map(|n| n.to_string()).unwrap_or_default()
        ));
    }
    out
}

/// Mean SegSNR improvement with SNR levels as rows and modes as columns.
pub fn summary_table(rows: &[BatchRow], snr_levels: &[f64], modes: &[Mode]) -> String {
    let mut out = String::from("snr_db");
    for m in modes {
        out.push_str(&format!(",{m}"));
    }
    out.push('\n');
    for &snr in snr_levels {
        out.push_str(&snr.to_string());
        for &m in modes {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.snr_db == snr && r.mode == m)
                .map(|r| r.snrseg_improvement_db)
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len().max(1) as f64;
            out.push_str(&format!(",{}", fmt_num(mean)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{synth_speech_like, white_noise};

    #[test]
    fn mode_strings_round_trip() {
        for text in [
            "mspp",
            "m-only",
            "p-only",
            "ss-baseline",
            "p-only:1",
            "p-only:0.5",
        ] {
            let mode: Mode = text.parse().unwrap();
            assert_eq!(mode.to_string(), text);
        }
        assert!("p-only:2".parse::<Mode>().is_err());
        assert!("fast".parse::<Mode>().is_err());
    }

    #[test]
    fn m_only_on_silence_is_silence() {
        let silent = SampleBuffer::silence(8000, 8000).unwrap();
        let out = enhance_buffer(&silent, &EnhancementParams::default(), Mode::MOnly).unwrap();
        assert!(out.enhanced.samples().iter().all(|v| v.abs() < 1e-10));
    }

    fn noisy_input() -> SampleBuffer {
        let clean = synth_speech_like(11, 2.0, 8000).unwrap();
        let noise = white_noise(12, 2.0, 8000).unwrap();
        mix_at_snr(&clean, &noise, 0.0).unwrap().0
    }

    #[test]
    fn every_mode_preserves_length_and_finiteness() {
        let noisy = noisy_input();
        let params = EnhancementParams::default();
        for mode in [
            Mode::Mspp,
            Mode::MOnly,
            Mode::SsBaseline,
            Mode::POnly(RhoMode::Probabilistic),
            Mode::POnly(RhoMode::Constant(1.0)),
        ] {
            let out = enhance_buffer(&noisy, &params, mode).unwrap();
            assert_eq!(out.enhanced.len(), noisy.len(), "{mode}");
            assert!(out.enhanced.samples().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn rectification_only_in_baseline() {
        let noisy = noisy_input();
        let params = EnhancementParams::default();
        let base = enhance_buffer(&noisy, &params, Mode::SsBaseline).unwrap();
        let ours = enhance_buffer(&noisy, &params, Mode::Mspp).unwrap();
        assert!(base.rectified_bins.unwrap() > 0);
        assert_eq!(ours.rectified_bins, Some(0));
    }

    #[test]
    fn p_only_skips_magnitude_step() {
        let noisy = noisy_input();
        let out = enhance_buffer(
            &noisy,
            &EnhancementParams::default(),
            Mode::POnly(RhoMode::Constant(0.0)),
        )
        .unwrap();
        assert!(out.speech_ratio.is_none());
        let err: f64 = out
            .enhanced
            .samples()
            .iter()
            .zip(noisy.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9);
    }

    #[test]
    fn summary_pivots_means() {
        let row = |snr: f64, mode: Mode, v: f64| BatchRow {
            clean: "c".into(),
            noise: "n".into(),
            snr_db: snr,
            mode,
            input_snr_db: snr,
            snrseg_improvement_db: v,
            overall_snr_improvement_db: v,
            rectified_bins: None,
        };
        let rows = vec![
            row(0.0, Mode::Mspp, 1.0),
            row(0.0, Mode::Mspp, 3.0),
            row(0.0, Mode::MOnly, 5.0),
            row(-10.0, Mode::Mspp, 4.0),
            row(-10.0, Mode::MOnly, 6.0),
        ];
        let text = summary_table(&rows, &[0.0, -10.0], &[Mode::Mspp, Mode::MOnly]);
        assert_eq!(
            text,
            "snr_db,mspp,m-only\n0,2.00000,5.00000\n-10,4.00000,6.00000\n"
        );
    }

    #[test]
    fn batch_manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.toml");
        fs::write(
            &path,
            "clean = [\"c.wav\"]\nnoise = [\"/abs/n.wav\"]\nsnr_db = [0.0]\nmodes = [\"mspp\", \"p-only:1\"]\n",
        )
        .unwrap();
        let m = BatchManifest::load(&path).unwrap();
        assert_eq!(m.clean[0], dir.path().join("c.wav"));
        assert_eq!(m.noise[0], PathBuf::from("/abs/n.wav"));
        assert_eq!(m.modes[1], Mode::POnly(RhoMode::Constant(1.0)));

        fs::write(
            &path,
            "clean = []\nnoise = [\"n\"]\nsnr_db = [0.0]\nmodes = [\"mspp\"]\n",
        )
        .unwrap();
        assert_eq!(BatchManifest::load(&path).unwrap_err().exit_code(), 2);
    }
}
