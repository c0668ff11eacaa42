use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crfid::siggen::{
    label_seed, synth_sweeps, DeformationCase, GeneratorConfig, Position, TagLabel,
};
use crfid::touchstone::write_s2p;

const QUICK_CONFIG: &str = r#"
[generator]
noise_std = 0.0
ripple_amplitude = 0.0
jitter_std = 0.0

[pipeline]
rfe = false
cnn_width_divisor = 64

[[pipeline.grid]]
Gbt = { n_estimators = 60, learning_rate = 0.1, max_depth = 3, min_samples_split = 2 }
"#;

fn crfid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crfid"))
        .args(args)
        .env_remove("CRFID_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn generate_scaled_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = crfid(&["generate", "--scale", "0.1", "--seed", "5", "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv = read(&a.join("dataset.csv"));
    assert_eq!(csv.lines().count(), 961);
    assert_eq!(csv, read(&b.join("dataset.csv")));
    let manifest = read(&a.join("dataset.manifest.json"));
    assert!(manifest.contains("\"seed\": 5") && manifest.contains("\"subcommand\": \"generate\""));

    let c = dir.path().join("c");
    let o = Command::new(env!("CARGO_BIN_EXE_crfid"))
        .args(["generate", "--scale", "0.1", "--out", s(&c)])
        .env("CRFID_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(read(&c.join("dataset.csv")), csv);
}

#[test]
fn generate_full_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let o = crfid(&["generate", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0);
    let csv = read(&dir.path().join("dataset.csv"));
    assert_eq!(csv.lines().count(), 9601);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("missing.csv");
    let o = crfid(&[
        "train",
        "--data",
        s(&data),
        "--task",
        "sensing",
        "--model",
        "cnn1",
    ]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("cnn1"));
    assert_eq!(code(&crfid(&["generate", "--bogus"])), 1);
    assert_eq!(code(&crfid(&["generate", "--scale", "1.5"])), 1);
    assert_eq!(code(&crfid(&["report"])), 1);
    assert_eq!(
        code(&crfid(&[
            "train",
            "--data",
            s(&data),
            "--task",
            "weight",
            "--model",
            "gbt"
        ])),
        1
    );
    // missing dataset is a data error
    assert_eq!(
        code(&crfid(&[
            "train",
            "--data",
            s(&data),
            "--task",
            "id",
            "--model",
            "gbt"
        ])),
        2
    );
    assert_eq!(code(&crfid(&["--help"])), 0);
}

fn write_sweeps(dir: &Path, cfg: &GeneratorConfig, label: &TagLabel) -> Vec<String> {
    let (tag, iso, reference) = synth_sweeps(label, cfg, label_seed(cfg, label)).unwrap();
    [("tag", tag), ("iso", iso), ("ref", reference)]
        .iter()
        .map(|(name, sweep)| {
            let p = dir.join(format!("{name}.s2p"));
            fs::write(&p, write_s2p(sweep).unwrap()).unwrap();
            p.to_str().unwrap().to_string()
        })
        .collect()
}

#[test]
fn train_predict_report_flow() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("quick.toml");
    fs::write(&config, QUICK_CONFIG).unwrap();
    let out = root.join("out");
    let data = out.join("dataset.csv");
    let cfg = ["--config", s(&config)];

    let o = crfid(&[&cfg[..], &["generate", "--scale", "0.25", "--out", s(&out)]].concat());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    for task in ["id", "sensing"] {
        let o = crfid(
            &[
                &cfg[..],
                &[
                    "train",
                    "--data",
                    s(&data),
                    "--task",
                    task,
                    "--model",
                    "gbt",
                    "--out",
                    s(&out),
                ],
            ]
            .concat(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let report = read(&out.join("gbt_id_report.csv"));
    assert!(report.starts_with("model,task,metric,position,case,value\n"));
    for metric in ["train_rmse", "val_rmse", "test_rmse"] {
        assert!(report.contains(&format!("gbt,id,{metric},,,")), "{metric}");
    }
    for f in [
        "gbt_id.model",
        "gbt_id_predictions.csv",
        "gbt_id_grid.csv",
        "gbt_id.manifest.json",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    // noiseless tag 7 at 0.3 pF from a Touchstone triple
    let gen = GeneratorConfig::noiseless();
    let label = TagLabel {
        tag_id: 7,
        capacitance_pf: 0.3,
        position: Position::P1,
        case: DeformationCase::Ci,
        reading: 0,
    };
    let files = write_sweeps(root, &gen, &label);
    let mut decoded = Vec::new();
    for model in ["gbt_id.model", "gbt_sensing.model"] {
        let pred_dir = root.join(format!("pred_{model}"));
        let model_path = out.join(model);
        let args = [
            &[
                "predict",
                "--model-file",
                s(&model_path),
                "--out",
                s(&pred_dir),
                "--s2p",
            ][..],
            &files.iter().map(String::as_str).collect::<Vec<_>>()[..],
        ]
        .concat();
        let o = crfid(&args);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let csv = read(&pred_dir.join("predictions.csv"));
        let row: Vec<String> = csv
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .map(str::to_string)
            .collect();
        decoded.push(row[7].clone());
    }
    assert_eq!(decoded, ["7", "0.3"]);

    // labelled rows: actual, predicted and error columns
    let pred_dir = root.join("pred_rows");
    let o = crfid(&[
        "predict",
        "--model-file",
        s(&out.join("gbt_id.model")),
        "--data",
        s(&data),
        "--out",
        s(&pred_dir),
    ]);
    assert_eq!(code(&o), 0);
    let csv = read(&pred_dir.join("predictions.csv"));
    assert!(csv.starts_with(
        "tag_id,capacitance_pf,position,case,reading,actual,predicted,decoded,error\n"
    ));
    assert_eq!(csv.lines().count(), 2401);

    let o = crfid(&[
        "report",
        s(&out.join("gbt_id_report.csv")),
        s(&out.join("gbt_sensing_report.csv")),
        "--out",
        s(&root.join("summary")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&root.join("summary/summary.csv"));
    assert_eq!(summary.lines().count(), 3);
    let cases = read(&root.join("summary/per_case.csv"));
    let id_rmse: Vec<&str> = cases
        .lines()
        .filter(|l| l.starts_with("gbt,id,rmse,"))
        .collect();
    assert_eq!(id_rmse.len(), 4);
    assert!(id_rmse.iter().all(|l| l.split(',').count() == 9));

    // corrupted model file
    let mut bytes = fs::read(out.join("gbt_id.model")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = root.join("bad.model");
    fs::write(&bad, bytes).unwrap();
    let o = crfid(&[
        "predict",
        "--model-file",
        s(&bad),
        "--data",
        s(&data),
        "--out",
        s(&root.join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("checksum"));
    let bad_report = root.join("bad_report.csv");
    fs::write(&bad_report, "a,b\n1,2\n").unwrap();
    assert_eq!(
        code(&crfid(&[
            "report",
            s(&bad_report),
            "--out",
            s(&root.join("y"))
        ])),
        2
    );
}

#[test]
fn epochs_override_in_manifest_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("quick.toml");
    fs::write(&config, QUICK_CONFIG).unwrap();
    let data = root.join("dataset.csv");
    let o = crfid(&[
        "--config",
        s(&config),
        "generate",
        "--scale",
        "0.25",
        "--out",
        s(root),
    ]);
    assert_eq!(code(&o), 0);
    let mut runs = Vec::new();
    for run in ["r1", "r2"] {
        let out = root.join(run);
        let o = crfid(&[
            "--config",
            s(&config),
            "train",
            "--data",
            s(&data),
            "--task",
            "id",
            "--model",
            "cnn3",
            "--epochs",
            "3",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let manifest = read(&out.join("cnn3_id.manifest.json"));
        assert!(manifest.contains("\"epochs\": \"3\""), "{manifest}");
        assert_eq!(read(&out.join("cnn3_id_history.csv")).lines().count(), 4);
        runs.push((
            fs::read(out.join("cnn3_id.model")).unwrap(),
            read(&out.join("cnn3_id_report.csv")),
            read(&out.join("cnn3_id_predictions.csv")),
        ));
    }
    assert_eq!(runs[0], runs[1]);
}
