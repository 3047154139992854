use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SPEECH: &str = r#"{
  "kind": "diag_gmm", "dim": 64, "basis": "fourier",
  "components": [
    {"weight": 0.0, "variances": {"floor": 1e-6, "bands": [{"lo": 0.0, "hi": 0.3, "variance": 1.0}]}},
    {"weight": 1.0, "variances": {"floor": 1e-6, "bands": [{"lo": 0.0, "hi": 0.6, "variance": 0.4}]}}
  ],
  "conditional_views": {"a": [1.0, 0.0]}
}"#;

const NOISE: &str = r#"{
  "kind": "spectral_gaussian", "dim": 64,
  "variances": {"floor": 1e-6, "bands": [{"lo": 0.6, "hi": 1.0, "variance": 0.2}]}
}"#;

fn config(eta0: f64, alpha: f64) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "sampler": {{"n_annealing": 6, "sigma_max": 2.0, "n_mc": 5, "eta0": {eta0}, "delta": 0.1,
               "alpha": {alpha}, "omega": 0.5, "likelihood": {{"kind": "waveform"}}}},
  "priors": {{"speech": "speech.json", "noise": "noise.json"}},
  "conditions": ["a"],
  "mix": {{"k_speakers": 1, "sir_db": 0.0, "snr_db": 5.0, "duration": 64}},
  "seed": 7,
  "bench": {{"seeds": [0, 1]}}
}}"#
    )
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new(eta0: f64, alpha: f64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("speech.json"), SPEECH).unwrap();
        fs::write(dir.path().join("noise.json"), NOISE).unwrap();
        fs::write(dir.path().join("run.json"), config(eta0, alpha)).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self) -> PathBuf {
        self.path("run.json")
    }
}

fn ssnaps(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ssnaps"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(ws: &Workspace) -> PathBuf {
    let out = ws.path("synth");
    let res = ssnaps(&[&"synth", &"--config", &ws.config(), &"--out", &out]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    out
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&ssnaps(&[&"--help"])), 0);
    assert_eq!(code(&ssnaps(&[&"separate", &"--help"])), 0);
    assert_eq!(code(&ssnaps(&[&"--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    for args in [
        vec!["frobnicate"],
        vec![],
        vec!["eval", "--colour", "x.wav"],
        vec!["schedule"],
    ] {
        let args: Vec<&dyn AsRef<std::ffi::OsStr>> = args.iter().map(|a| a as _).collect();
        let out = ssnaps(&args);
        assert_eq!(code(&out), 1, "{}", stderr(&out));
        assert!(stderr(&out).contains("Usage"), "{}", stderr(&out));
    }
}

#[test]
fn eval_of_identical_files_prints_the_cap() {
    let ws = Workspace::new(1e-3, 0.3);
    let dir = synth(&ws);
    let reference = dir.join("speech_1.wav");
    let out = ssnaps(&[&"eval", &reference, &reference]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).trim_end().ends_with("100.0000"));
    assert_eq!(code(&ssnaps(&[&"eval", &reference])), 1);
}

#[test]
fn schedule_csv_has_one_row_per_level() {
    let ws = Workspace::new(1e-3, 0.3);
    let out = ssnaps(&[&"schedule", &"--config", &ws.config()]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);
}

#[test]
fn separate_writes_sources_and_manifest() {
    let ws = Workspace::new(1e-3, 0.3);
    let dir = synth(&ws);
    let out_dir = ws.path("sep");
    let res = ssnaps(&[
        &"separate",
        &dir.join("mixture.wav"),
        &"--config",
        &ws.config(),
        &"--out",
        &out_dir,
        &"--trace",
    ]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    for f in ["speech_1.wav", "noise.wav", "manifest.json", "timing.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["schema_version"], 1);
    assert_eq!(manifest["input"], "mixture.wav");
    assert_eq!(manifest["nfe"]["speech_per_source"][0], 2 * 2 * 6);
    assert_eq!(manifest["trace"].as_array().unwrap().len(), 6);
    assert_eq!(manifest["priors"]["noise"]["kind"], "spectral_gaussian");
}

#[test]
fn seed_flag_overrides_the_config() {
    let ws = Workspace::new(1e-3, 0.3);
    let dir = synth(&ws);
    let run = |seed: &str, out: &Path| {
        let res = ssnaps(&[
            &"separate",
            &dir.join("mixture.wav"),
            &"--config",
            &ws.config(),
            &"--seed",
            &seed,
            &"--out",
            &out,
        ]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        fs::read(out.join("speech_1.wav")).unwrap()
    };
    assert_ne!(run("1", &ws.path("s1")), run("2", &ws.path("s2")));
}

#[test]
fn invalid_alpha_exits_one_naming_the_field() {
    let ws = Workspace::new(1e-3, 0.0);
    let res = ssnaps(&[
        &"separate",
        &"missing.wav",
        &"--config",
        &ws.config(),
        &"--out",
        &ws.path("o"),
    ]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("alpha"), "{}", stderr(&res));
}

#[test]
fn divergence_exits_two() {
    let good = Workspace::new(1e-3, 0.3);
    let dir = synth(&good);
    let bad = Workspace::new(1e4, 1e-3);
    let res = ssnaps(&[
        &"separate",
        &dir.join("mixture.wav"),
        &"--config",
        &bad.config(),
        &"--out",
        &bad.path("o"),
    ]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    assert!(stderr(&res).contains("divergence") || stderr(&res).contains("non-finite"));
}

#[test]
fn offscreen_mode_must_match_the_subcommand() {
    let ws = Workspace::new(1e-3, 0.3);
    let dir = synth(&ws);
    let res = ssnaps(&[
        &"offscreen-separate",
        &dir.join("mixture.wav"),
        &"--config",
        &ws.config(),
        &"--out",
        &ws.path("o"),
    ]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("offscreen"));
}

#[test]
fn bench_writes_reports() {
    let ws = Workspace::new(1e-3, 0.3);
    let out = ws.path("bench");
    let res = ssnaps(&[&"bench", &"--config", &ws.config(), &"--out", &out, &"--workers", &"2"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 3);
    assert!(fs::read_to_string(out.join("report.md"))
        .unwrap()
        .contains("| SSNAPS | 1 |"));
    let res = ssnaps(&[&"bench", &"--config", &ws.config(), &"--out", &out, &"--workers", &"0"]);
    assert_eq!(code(&res), 1);
}

#[test]
fn inputs_are_left_untouched() {
    let ws = Workspace::new(1e-3, 0.3);
    let dir = synth(&ws);
    let before = fs::read(dir.join("mixture.wav")).unwrap();
    let cfg_before = fs::read(ws.config()).unwrap();
    let res = ssnaps(&[
        &"separate",
        &dir.join("mixture.wav"),
        &"--config",
        &ws.config(),
        &"--out",
        &dir,
    ]);
    assert_eq!(code(&res), 0);
    assert_eq!(fs::read(dir.join("mixture.wav")).unwrap(), before);
    assert_eq!(fs::read(ws.config()).unwrap(), cfg_before);
}
