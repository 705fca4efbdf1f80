use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mspp::audio::{synth_speech_like, white_noise, write_wav};
use mspp::metrics::{spectrogram_export, SpectrogramFormat, DEFAULT_SEGSNR_FRAME_LEN};
use mspp::phase::RhoMode;
use mspp::pipeline::{self, BatchManifest, EnhanceOptions, Mode, RunManifest};
use mspp::{EnhancementParams, Error, Result};

#[derive(Parser)]
#[command(name = "mspp", version, about = "Single-channel speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ParamArgs {
    /// TOML parameter file; flags below override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    noise_beta: Option<f64>,
    #[arg(long)]
    vad_threshold_db: Option<f64>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<EnhancementParams> {
        let mut params = match &self.config {
            Some(path) => EnhancementParams::load(path)?,
            None => EnhancementParams::default(),
        };
        if let Some(v) = self.mu {
            params.mu = v;
        }
        if let Some(v) = self.noise_beta {
            params.noise_beta = v;
        }
        if let Some(v) = self.vad_threshold_db {
            params.vad_threshold_db = v;
        }
        params.validate()?;
        Ok(params)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Enhance a noisy mono 16-bit WAV.
    Enhance {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
        /// mspp, m-only, p-only or ss-baseline.
        #[arg(long, default_value = "mspp")]
        mode: String,
        /// Constant compensation strength for p-only mode.
        #[arg(long)]
        rho: Option<f64>,
        /// Clean reference for metrics in the manifest.
        #[arg(long)]
        clean: Option<PathBuf>,
        /// Where to write the JSON run manifest; stdout if absent.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Record per-stage wall-clock time in the manifest.
        #[arg(long)]
        timings: bool,
    },
    /// Mix clean speech with noise at a target SNR.
    Mix {
        clean: PathBuf,
        noise: PathBuf,
        output: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        snr: f64,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Report SegSNR and overall SNR improvement.
    Eval {
        clean: PathBuf,
        noisy: PathBuf,
        enhanced: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEGSNR_FRAME_LEN)]
        segsnr_frame_len: usize,
    },
    /// Run a mix, enhance and eval grid described by a TOML file.
    Batch {
        manifest: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Generate a deterministic test signal.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3.0)]
        duration: f64,
        #[arg(long, default_value_t = 8000)]
        sample_rate: u32,
        /// Generate noise of this kind instead of speech.
        #[arg(long)]
        noise: Option<NoiseKind>,
    },
    /// Export a dB-magnitude spectrogram as CSV or PGM.
    Spectrogram {
        input: PathBuf,
        output: PathBuf,
        /// Inferred from the output extension when absent.
        #[arg(long)]
        format: Option<Format>,
        /// Use the framing of this step.
        #[arg(long, default_value = "p")]
        step: Step,
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    White,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pgm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Step {
    M,
    P,
}

fn parse_mode(mode: &str, rho: Option<f64>) -> Result<Mode> {
    let mode: Mode = mode.parse()?;
    match (mode, rho) {
        (m, None) => Ok(m),
        (Mode::POnly(_), Some(r)) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("--rho must be in [0,1], got {r}")));
            }
            Ok(Mode::POnly(RhoMode::Constant(r)))
        }
        (m, Some(_)) => Err(Error::Config(format!(
            "--rho only applies to p-only, not {m}"
        ))),
    }
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Error::Io(e).at(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_manifest(manifest: &RunManifest, path: Option<&Path>) -> Result<()> {
    emit(&manifest.to_json(), path)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Enhance {
            input,
            output,
            params,
            mode,
            rho,
            clean,
            manifest,
            timings,
        } => {
            let mode = parse_mode(&mode, rho)?;
            let params = params.resolve()?;
            let options = EnhanceOptions {
                clean: clean.as_deref(),
                segsnr_frame_len: None,
                timings,
            };
            let m = pipeline::enhance(&input, &output, &params, mode, &options)?;
            emit_manifest(&m, manifest.as_deref())
        }
        Command::Mix {
            clean,
            noise,
            output,
            snr,
            manifest,
        } => {
            let m = pipeline::mix(&clean, &noise, snr, &output)?;
            emit_manifest(&m, manifest.as_deref())
        }
        Command::Eval {
            clean,
            noisy,
            enhanced,
            report,
            segsnr_frame_len,
        } => {
            let r = pipeline::eval(&clean, &noisy, &enhanced, segsnr_frame_len)?;
            emit(&pipeline::report_text(&r), report.as_deref())
        }
        Command::Batch {
            manifest,
            out_dir,
            params,
        } => {
            let grid = BatchManifest::load(&manifest)?;
            let mut resolved = params.resolve()?;
            if params.config.is_none() {
                if let Some(config) = &grid.config {
                    resolved = ParamArgs {
                        config: Some(config.clone()),
                        ..params
                    }
                    .resolve()?;
                }
            }
            let outcome = pipeline::batch(&grid, &resolved, &out_dir)?;
            print!(
                "{}",
                fs::read_to_string(&outcome.summary_csv)
                    .map_err(|e| Error::Io(e).at(&outcome.summary_csv))?
            );
            Ok(())
        }
        Command::Synth {
            output,
            seed,
            duration,
            sample_rate,
            noise,
        } => {
            let buffer = match noise {
                Some(NoiseKind::White) => white_noise(seed, duration, sample_rate)?,
                None => synth_speech_like(seed, duration, sample_rate)?,
            };
            write_wav(&buffer, &output)
        }
        Command::Spectrogram {
            input,
            output,
            format,
            step,
            params,
        } => {
            let format = match format {
                Some(Format::Csv) => SpectrogramFormat::Csv,
                Some(Format::Pgm) => SpectrogramFormat::Pgm,
                None => match output.extension().and_then(|e| e.to_str()) {
                    Some("csv") => SpectrogramFormat::Csv,
                    Some("pgm") => SpectrogramFormat::Pgm,
                    _ => return Err(Error::Config("cannot infer format; pass --format".into())),
                },
            };
            let params = params.resolve()?;
            let config = match step {
                Step::M => params.m_config,
                Step::P => params.p_config,
            };
            let buffer = mspp::audio::read_wav(&input)?;
            spectrogram_export(&buffer, &config, &output, format).map_err(|e| e.at(&input))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mspp: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
