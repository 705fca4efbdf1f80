use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mspp::audio::{read_wav, synth_speech_like, white_noise, write_wav};
use mspp::SampleBuffer;
use tempfile::TempDir;

fn mspp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mspp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", stderr(out));
    serde_json::from_slice(&out.stdout).expect("manifest is JSON")
}

/// Workspace with clean.wav, white.wav and a 0 dB mixture noisy.wav.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_wav(
        &synth_speech_like(4, 2.0, 8000).unwrap(),
        dir.path().join("clean.wav"),
    )
    .unwrap();
    write_wav(
        &white_noise(5, 2.0, 8000).unwrap(),
        dir.path().join("white.wav"),
    )
    .unwrap();
    let out = mspp(
        &["mix", "clean.wav", "white.wav", "noisy.wav", "--snr", "0"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    dir
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

#[test]
fn enhance_default_mode_keeps_length() {
    let dir = workspace();
    let m = json(&mspp(&["enhance", "noisy.wav", "out.wav"], dir.path()));
    assert_eq!(m["mode"], "mspp");
    assert_eq!(m["rectified_bins"], 0);
    assert!(m.get("timings").is_none());
    let noisy = read_wav(p(&dir, "noisy.wav")).unwrap();
    let out = read_wav(p(&dir, "out.wav")).unwrap();
    assert_eq!(out.len(), noisy.len());
}

#[test]
fn m_only_on_silence_writes_silence() {
    let dir = tempfile::tempdir().unwrap();
    write_wav(
        &SampleBuffer::silence(4000, 8000).unwrap(),
        dir.path().join("s.wav"),
    )
    .unwrap();
    json(&mspp(
        &["enhance", "s.wav", "o.wav", "--mode", "m-only"],
        dir.path(),
    ));
    let out = read_wav(dir.path().join("o.wav")).unwrap();
    assert!(out.samples().iter().all(|&v| v == 0.0));
}

#[test]
fn baseline_rectifies_and_mspp_does_not() {
    let dir = workspace();
    let base = json(&mspp(
        &["enhance", "noisy.wav", "b.wav", "--mode", "ss-baseline"],
        dir.path(),
    ));
    let ours = json(&mspp(&["enhance", "noisy.wav", "m.wav"], dir.path()));
    assert!(base["rectified_bins"].as_u64().unwrap() > 0);
    assert_eq!(ours["rectified_bins"].as_u64(), Some(0));
}

#[test]
fn p_only_takes_constant_rho() {
    let dir = workspace();
    let m = json(&mspp(
        &[
            "enhance",
            "noisy.wav",
            "o.wav",
            "--mode",
            "p-only",
            "--rho",
            "1",
        ],
        dir.path(),
    ));
    assert_eq!(m["mode"], "p-only:1");
    assert!(m.get("vad_speech_ratio").is_none());
    let bad = mspp(
        &[
            "enhance",
            "noisy.wav",
            "o.wav",
            "--mode",
            "mspp",
            "--rho",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn enhance_with_clean_reports_metrics_and_opt_in_timings() {
    let dir = workspace();
    let m = json(&mspp(
        &[
            "enhance",
            "noisy.wav",
            "o.wav",
            "--clean",
            "clean.wav",
            "--timings",
        ],
        dir.path(),
    ));
    assert!(m["metrics"]["snrseg_improvement_db"].is_f64());
    assert!((m["metrics"]["input_snr_db"].as_f64().unwrap()).abs() < 0.1);
    assert!(m["timings"]["m_step_s"].is_f64());
}

#[test]
fn manifests_are_deterministic() {
    let dir = workspace();
    let a = mspp(
        &["enhance", "noisy.wav", "a.wav", "--clean", "clean.wav"],
        dir.path(),
    );
    let b = mspp(
        &["enhance", "noisy.wav", "a.wav", "--clean", "clean.wav"],
        dir.path(),
    );
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn flags_override_config_file() {
    let dir = workspace();
    fs::write(p(&dir, "cfg.toml"), "mu = 0.9\nnoise_beta = 0.5\n").unwrap();
    let m = json(&mspp(
        &[
            "enhance",
            "noisy.wav",
            "o.wav",
            "--config",
            "cfg.toml",
            "--mu",
            "0.4",
        ],
        dir.path(),
    ));
    assert_eq!(m["params"]["mu"], 0.4);
    assert_eq!(m["params"]["noise_beta"], 0.5);
    assert_eq!(m["params"]["xi_min_db"], -10.0);
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = workspace();
    fs::write(p(&dir, "cfg.toml"), "alpha_xi = 2.0\n").unwrap();
    let out = mspp(
        &["enhance", "noisy.wav", "o.wav", "--config", "cfg.toml"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("cfg.toml"));
    let out = mspp(&["enhance", "noisy.wav"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!p(&dir, "o.wav").exists());
}

#[test]
fn too_short_input_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    write_wav(
        &SampleBuffer::silence(100, 8000).unwrap(),
        dir.path().join("s.wav"),
    )
    .unwrap();
    let out = mspp(&["enhance", "s.wav", "o.wav"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("s.wav"));
}

#[test]
fn mix_of_equal_energies_at_zero_db_has_unit_scale() {
    let dir = workspace();
    let m = json(&mspp(
        &["mix", "clean.wav", "clean.wav", "x.wav", "--snr", "0"],
        dir.path(),
    ));
    assert_eq!(m["noise_scale"], 1.0);
    assert_eq!(m["snr_db"], 0.0);
}

#[test]
fn mix_with_missing_noise_leaves_no_output() {
    let dir = workspace();
    let out = mspp(
        &["mix", "clean.wav", "nope.wav", "x.wav", "--snr", "-5"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nope.wav"));
    assert!(!p(&dir, "x.wav").exists());
}

#[test]
fn eval_of_unchanged_signal_is_zero() {
    let dir = workspace();
    let out = mspp(&["eval", "clean.wav", "noisy.wav", "noisy.wav"], dir.path());
    assert!(out.status.success());
    let report: toml::Value = toml::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["snrseg_improvement_db"].as_float(), Some(0.0));
    assert_eq!(report["overall_snr_improvement_db"].as_float(), Some(0.0));
}

#[test]
fn eval_of_clean_is_clamp_minus_noisy_segsnr() {
    let dir = workspace();
    let out = mspp(
        &[
            "eval",
            "clean.wav",
            "noisy.wav",
            "clean.wav",
            "--report",
            "r.toml",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let report: toml::Value =
        toml::from_str(&fs::read_to_string(p(&dir, "r.toml")).unwrap()).unwrap();
    let clean = read_wav(p(&dir, "clean.wav")).unwrap();
    let noisy = read_wav(p(&dir, "noisy.wav")).unwrap();
    let (seg_noisy, _) = mspp::metrics::segsnr_db(&clean, &noisy, 160).unwrap();
    let got = report["snrseg_improvement_db"].as_float().unwrap();
    assert!((got - (35.0 - seg_noisy)).abs() < 1e-12);
}

#[test]
fn eval_length_mismatch_names_the_file() {
    let dir = workspace();
    write_wav(
        &synth_speech_like(4, 1.0, 8000).unwrap(),
        p(&dir, "short.wav"),
    )
    .unwrap();
    let out = mspp(&["eval", "clean.wav", "noisy.wav", "short.wav"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("short.wav"), "{}", stderr(&out));
}

#[test]
fn malformed_wav_is_an_io_error() {
    let dir = workspace();
    fs::write(p(&dir, "junk.wav"), b"RIFFjunk").unwrap();
    let out = mspp(&["enhance", "junk.wav", "o.wav"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn batch_counts_rows_and_summarizes() {
    let dir = workspace();
    fs::write(
        p(&dir, "grid.toml"),
        "clean = [\"clean.wav\"]\nnoise = [\"white.wav\"]\nsnr_db = [-10.0, 0.0]\nmodes = [\"mspp\", \"m-only\"]\n",
    )
    .unwrap();
    let out = mspp(&["batch", "grid.toml", "--out-dir", "run"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let results = fs::read_to_string(p(&dir, "run/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 4);
    let summary = fs::read_to_string(p(&dir, "run/summary.csv")).unwrap();
    assert_eq!(stdout(&out), summary);
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "snr_db,mspp,m-only");
    assert!(lines[1].starts_with("-10,") && lines[2].starts_with("0,"));
    for line in &lines[1..] {
        let mspp: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(mspp > 0.0, "{line}");
    }
}

#[test]
fn batch_snr_sweep_writes_one_mixture_per_level() {
    let dir = workspace();
    fs::write(
        p(&dir, "grid.toml"),
        "clean = [\"clean.wav\"]\nnoise = [\"white.wav\"]\nsnr_db = [10, 5, 0, -5, -10, -15, -20, -25, -30]\nmodes = [\"m-only\"]\n",
    )
    .unwrap();
    let out = mspp(&["batch", "grid.toml", "--out-dir", "sweep"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_dir(p(&dir, "sweep/noisy")).unwrap().count(), 9);
}

#[test]
fn synth_and_spectrogram() {
    let dir = tempfile::tempdir().unwrap();
    assert!(mspp(
        &["synth", "a.wav", "--seed", "3", "--duration", "1"],
        dir.path()
    )
    .status
    .success());
    assert!(mspp(
        &["synth", "b.wav", "--seed", "3", "--duration", "1"],
        dir.path()
    )
    .status
    .success());
    assert_eq!(
        fs::read(dir.path().join("a.wav")).unwrap(),
        fs::read(dir.path().join("b.wav")).unwrap()
    );
    assert_eq!(read_wav(dir.path().join("a.wav")).unwrap().len(), 8000);
    assert!(mspp(
        &["synth", "n.wav", "--noise", "white", "--duration", "1"],
        dir.path()
    )
    .status
    .success());

    assert!(mspp(&["spectrogram", "a.wav", "a.pgm"], dir.path())
        .status
        .success());
    let pgm = fs::read(dir.path().join("a.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n"));
    assert!(mspp(
        &["spectrogram", "a.wav", "a.csv", "--step", "m"],
        dir.path()
    )
    .status
    .success());
    let csv = fs::read_to_string(dir.path().join("a.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 51);
    assert_eq!(
        mspp(&["spectrogram", "a.wav", "a.png"], dir.path())
            .status
            .code(),
        Some(2)
    );
}
