use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 5

[directions]
samples_per_class = 60

[face]
real_per_class = 10
augment_neutrals = 2

[face.train]
epochs = 5

[gait]
pretrain_per_class = 10

[gait.train]
epochs = 2

[cohort]
subjects_per_class = 15
controls = 4

[fusion]
epochs = 20

[evaluation]
folds = 3
"#;

fn pdscreen(config: &Path, out: &Path, args: &[&str], workers: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdscreen"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg(workers.to_string())
        .args(args)
        .env_remove("PDSCREEN_OUT_DIR")
        .env_remove("PDSCREEN_WORKERS")
        .output()
        .expect("spawn pdscreen")
}

fn ok(config: &Path, out: &Path, args: &[&str], workers: usize) -> String {
    let o = pdscreen(config, out, args, workers);
    assert!(
        o.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.in.toml");
    fs::write(&p, text).unwrap();
    p
}

/// Runs the full pipeline and returns the metric artifacts.
fn pipeline(config: &Path, out: &Path, workers: usize) -> Vec<(String, Vec<u8>)> {
    for cmd in [
        &["simulate"][..],
        &["train-gait"],
        &["train-face"],
        &["train-fusion", "--fold", "0"],
        &["evaluate", "--fold", "0"],
        &["compare"],
        &["report"],
    ] {
        ok(config, out, cmd, workers);
    }
    [
        "reports/metrics.json",
        "reports/predictions.jsonl",
        "reports/comparison.json",
        "reports/face_accuracy.json",
        "reports/gait_trace.json",
        "reports/fusion_trace.json",
    ]
    .iter()
    .map(|f| (f.to_string(), fs::read(out.join(f)).unwrap()))
    .collect()
}

#[test]
fn reruns_reproduce_metrics_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let first = pipeline(&cfg, &tmp.path().join("a"), 1);
    let second = pipeline(&cfg, &tmp.path().join("b"), 1);
    let parallel = pipeline(&cfg, &tmp.path().join("c"), 4);
    for ((name, a), ((_, b), (_, c))) in first.iter().zip(second.iter().zip(&parallel)) {
        assert!(a == b, "{name} differs between reruns");
        assert!(a == c, "{name} differs between 1 and 4 workers");
    }

    let comparison = fs::read_to_string(tmp.path().join("a/reports/comparison.txt")).unwrap();
    let rows: Vec<&str> = comparison
        .lines()
        .filter(|l| {
            ["gait-only", "face-only", "fusion"]
                .iter()
                .any(|n| l.starts_with(n))
        })
        .collect();
    assert_eq!(rows.len(), 3, "{comparison}");
    assert!(tmp.path().join("a/reports/summary.txt").exists());
    let log = fs::read_to_string(tmp.path().join("a/logs/compare.json")).unwrap();
    assert!(
        log.contains("\"seed\": 5") && log.contains("config_hash"),
        "{log}"
    );
}

#[test]
fn fit_direction_reports_oracle_cosine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    ok(&cfg, &out, &["simulate"], 1);
    let data = out.join("data");
    let stdout = ok(
        &cfg,
        &out,
        &[
            "fit-direction",
            "--a",
            data.join("latents/neutral.bin").to_str().unwrap(),
            "--b",
            data.join("latents/surprise.bin").to_str().unwrap(),
            "--oracle",
            data.join("oracle/surprise.json").to_str().unwrap(),
        ],
        1,
    );
    let cosine: f64 = stdout
        .lines()
        .find_map(|l| l.strip_prefix("cosine="))
        .expect("cosine line")
        .parse()
        .unwrap();
    assert!(cosine >= 0.95, "{stdout}");
    assert!(out.join("directions/surprise.json").exists());
}

#[test]
fn invert_and_synthesize_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    ok(&cfg, &out, &["simulate"], 1);
    let image = fs::read_dir(out.join("data/images"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("_neutral.png"))
        .unwrap();
    ok(
        &cfg,
        &out,
        &[
            "invert",
            "--image",
            image.to_str().unwrap(),
            "--name",
            "probe",
        ],
        1,
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("reports/invert_probe.json")).unwrap())
            .unwrap();
    let body = report.get("body").unwrap_or(&report);
    assert!(
        body["reconstruction_mse"].as_f64().unwrap() <= 1e-4,
        "{report}"
    );
    ok(
        &cfg,
        &out,
        &[
            "synthesize",
            "--latent",
            out.join("latents/probe.bin").to_str().unwrap(),
            "--direction",
            out.join("data/oracle/happiness.json").to_str().unwrap(),
            "--strength",
            "2",
            "--name",
            "happy",
        ],
        1,
    );
    assert!(out.join("images/happy.png").exists());
}

#[test]
fn unknown_config_key_exits_2_naming_section_and_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[fusion]\nlearning_rat = 0.1\n");
    let o = pdscreen(&cfg, &tmp.path().join("run"), &["simulate"], 1);
    assert_eq!(o.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(
        stderr.contains("fusion") && stderr.contains("learning_rat"),
        "{stderr}"
    );
}

#[test]
fn invalid_value_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[evaluation]\nfolds = 1\n");
    let o = pdscreen(&cfg, &tmp.path().join("run"), &["simulate"], 1);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn missing_inputs_fail_with_error_record() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = pdscreen(&cfg, &out, &["evaluate"], 1);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("logs/evaluate.error.json").exists());
}
