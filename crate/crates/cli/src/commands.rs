use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crfid::pipeline::{
    decode_accuracy, load_model, run_pipeline, save_model, sha256_hex, Dataset, EvalReport,
    ModelChoice, PipelineError, PredictionTable, Task,
};
use crfid::rcs::calibrate_on;
use crfid::siggen::{
    build_dataset, label_seed, synth_sweeps, DeformationCase, GeneratorConfig, FULL_READINGS,
};
use crfid::touchstone::{parse_s2p, resample_to_grid, write_s2p, FrequencySweep};
use serde::Serialize;

use crate::config::CliConfig;
use crate::{Cli, Command, GenerateArgs, PredictArgs, ReportArgs, TrainArgs};

/// Bad flags or flag combinations; exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

/// Unreadable or malformed input; exit code 2.
#[derive(Debug)]
pub struct DataError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
impl std::error::Error for DataError {}

/// 1 usage, 2 data or format, 3 numerical failure.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return match p {
                _ if p.is_numerical() => 3,
                PipelineError::Incompatible { .. } | PipelineError::Config(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

#[derive(Debug, Serialize)]
struct Manifest {
    subcommand: &'static str,
    config_path: Option<String>,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config_digest: String,
    settings: BTreeMap<&'static str, String>,
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path.display().to_string());
        Ok(path)
    }

    fn finish(mut self, stem: &str, mut manifest: Manifest) -> Result<()> {
        let name = format!("{stem}.manifest.json");
        manifest.outputs = std::mem::take(&mut self.written);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
        self.write(&name, json)?;
        Ok(())
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = CliConfig::load(cli.config.as_deref(), cli.seed)?;
    let config_path = cli.config.as_deref().map(display);
    match cli.command {
        Command::Generate(a) => generate(&cfg, config_path, &a),
        Command::Train(a) => train(cfg, config_path, &a),
        Command::Predict(a) => predict(&cfg, config_path, &a),
        Command::Report(a) => report(&cfg, config_path, &a),
    }
}

/// Readings per group for a scale in (0, 1].
fn readings_for_scale(scale: f64) -> Result<usize> {
    if !(scale > 0.0 && scale <= 1.0) {
        bail!(UsageError(format!(
            "--scale must be in (0, 1], got {scale}"
        )));
    }
    Ok(((FULL_READINGS as f64 * scale).round() as usize).max(1))
}

fn generate(cfg: &CliConfig, config_path: Option<String>, a: &GenerateArgs) -> Result<()> {
    let readings = readings_for_scale(a.scale)?;
    let gen = GeneratorConfig {
        readings_per_group: readings,
        ..cfg.generator.clone()
    };
    let items = build_dataset(&gen).map_err(PipelineError::from)?;
    eprintln!(
        "generated {} signatures ({readings} readings per group)",
        items.len()
    );
    let data = Dataset::from_labeled(items);
    let mut out = Outputs::new(&a.out)?;
    out.write("dataset.csv", data.to_csv_string())?;

    if a.s2p > 0 {
        fs::create_dir_all(a.out.join("s2p")).context("cannot create s2p directory")?;
        for label in data.labels.iter().take(a.s2p) {
            let (tag, iso, reference) =
                synth_sweeps(label, &gen, label_seed(&gen, label)).map_err(PipelineError::from)?;
            let stem = format!(
                "tag{}_c{}_{}_{}_r{}",
                label.tag_id, label.capacitance_pf, label.position, label.case, label.reading
            );
            for (suffix, sweep) in [("tag", &tag), ("iso", &iso), ("ref", &reference)] {
                let text = write_s2p(sweep).map_err(|e| DataError(e.to_string()))?;
                out.write(&format!("s2p/{stem}_{suffix}.s2p"), text)?;
            }
        }
    }

    let settings = BTreeMap::from([
        ("scale", a.scale.to_string()),
        ("readings_per_group", readings.to_string()),
        ("rows", data.len().to_string()),
    ]);
    out.finish(
        "dataset",
        Manifest {
            subcommand: "generate",
            config_path,
            seed: gen.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            config_digest: sha256_hex(gen.to_toml_string().as_bytes()),
            settings,
        },
    )
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let file =
        fs::File::open(path).with_context(|| format!("cannot open dataset {}", path.display()))?;
    Dataset::read_csv(std::io::BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))
}

fn train(mut cfg: CliConfig, config_path: Option<String>, a: &TrainArgs) -> Result<()> {
    let task: Task = a.task.parse()?;
    let model: ModelChoice = a.model.parse()?;
    if !model.supports(task) {
        return Err(PipelineError::Incompatible {
            model: model.to_string(),
            task,
        }
        .into());
    }
    let cnn = &mut cfg.pipeline.cnn;
    if let Some(epochs) = a.epochs {
        if epochs == 0 {
            bail!(UsageError("--epochs must be at least 1".into()));
        }
        cnn.max_epochs = epochs;
        cnn.patience = cnn.patience.min(epochs - 1);
    }
    let mut settings = BTreeMap::from([("task", task.to_string()), ("model", model.to_string())]);
    if matches!(model, ModelChoice::Cnn(_)) {
        settings.insert("epochs", cnn.max_epochs.to_string());
        settings.insert("patience", cnn.patience.to_string());
        settings.insert(
            "cnn_width_divisor",
            cfg.pipeline.cnn_width_divisor.to_string(),
        );
        if let Some(cap) = cfg.pipeline.cnn_conv_cap {
            settings.insert("cnn_conv_cap", cap.to_string());
        }
    }

    let data = read_dataset(&a.data)?;
    eprintln!("loaded {} rows from {}", data.len(), a.data.display());
    let result = run_pipeline(task, model, &data, &cfg.pipeline, &mut |msg| {
        eprintln!("{msg}")
    })?;

    let stem = format!("{model}_{task}");
    let mut out = Outputs::new(&a.out)?;
    let model_path = out.dir.join(format!("{stem}.model"));
    save_model(&result.model, &model_path)?;
    out.written.push(display(&model_path));
    out.write(&format!("{stem}_report.csv"), result.report.to_csv())?;
    out.write(
        &format!("{stem}_predictions.csv"),
        result.predictions.to_csv()?,
    )?;
    if let Some(h) = &result.history {
        out.write(&format!("{stem}_history.csv"), crfid::cnn::history_csv(h))?;
    }
    if let Some(g) = &result.grid {
        out.write(&format!("{stem}_grid.csv"), g.to_csv())?;
    }
    if let Some(r) = &result.rfe {
        out.write(&format!("{stem}_rfe.csv"), r.to_csv())?;
    }
    out.finish(
        &stem,
        Manifest {
            subcommand: "train",
            config_path,
            seed: cfg.pipeline.seed,
            inputs: vec![display(&a.data)],
            outputs: Vec::new(),
            config_digest: result.model.config_digest.clone(),
            settings,
        },
    )
}

fn read_sweep(path: &Path) -> Result<FrequencySweep> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_s2p(&text).map_err(|e| DataError(format!("{}: {e}", path.display())).into())
}

fn predict(cfg: &CliConfig, config_path: Option<String>, a: &PredictArgs) -> Result<()> {
    let model =
        load_model(&a.model_file).with_context(|| format!("loading {}", a.model_file.display()))?;
    let mut inputs = vec![display(&a.model_file)];
    let table = match (&a.data, &a.s2p) {
        (Some(path), _) => {
            let data = read_dataset(path)?;
            inputs.push(display(path));
            let sigs: Vec<_> = (0..data.len()).map(|i| data.signature(i)).collect();
            PredictionTable {
                task: model.task,
                predicted: model.predict_signatures(&sigs)?,
                labels: data.labels.into_iter().map(Some).collect(),
            }
        }
        (None, Some(files)) => {
            let grid = model.preprocessing.grid;
            let mut sweeps = Vec::with_capacity(3);
            for f in files {
                let sweep = read_sweep(f)?;
                let sweep = if grid.matches(&sweep.frequencies) {
                    sweep
                } else {
                    resample_to_grid(&sweep, &grid)
                        .map_err(|e| DataError(format!("{}: {e}", f.display())))?
                };
                sweeps.push(sweep);
                inputs.push(display(f));
            }
            let sig = calibrate_on(
                &grid,
                &sweeps[0],
                &sweeps[1],
                &sweeps[2],
                &cfg.generator.plate,
            )
            .map_err(|e| DataError(format!("calibration failed: {e}")))?;
            PredictionTable {
                task: model.task,
                predicted: model.predict_signatures(&[sig])?,
                labels: vec![None],
            }
        }
        (None, None) => bail!(UsageError("either --data or --s2p is required".into())),
    };

    let targets: Vec<f64> = table
        .labels
        .iter()
        .flatten()
        .map(|l| model.task.target(l))
        .collect();
    if targets.len() == table.predicted.len() {
        let acc = decode_accuracy(model.task, &table.predicted, &targets)?;
        eprintln!(
            "{} rows, decode accuracy {:.2}%",
            targets.len(),
            acc * 100.0
        );
    } else {
        for p in &table.predicted {
            eprintln!("predicted {p:.4} -> {}", model.task.decode(*p)?);
        }
    }
    let mut out = Outputs::new(&a.out)?;
    out.write("predictions.csv", table.to_csv()?)?;
    out.finish(
        "predictions",
        Manifest {
            subcommand: "predict",
            config_path,
            seed: cfg.pipeline.seed,
            inputs,
            outputs: Vec::new(),
            config_digest: model.config_digest.clone(),
            settings: BTreeMap::from([
                ("task", model.task.to_string()),
                ("model", model.model.to_string()),
            ]),
        },
    )
}

fn report(cfg: &CliConfig, config_path: Option<String>, a: &ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    for path in &a.reports {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        reports.extend(
            EvalReport::parse_csv(&text).with_context(|| format!("parsing {}", path.display()))?,
        );
    }
    if reports.is_empty() {
        bail!(DataError("no reports given".into()));
    }
    let mut summary =
        String::from("model,task,train_rmse,val_rmse,test_rmse,test_nrmse_pct,test_decode_accuracy,overfit_warning\n");
    let mut cases = String::from("model,task,stat,position");
    for c in DeformationCase::ALL {
        cases.push_str(&format!(",{c}"));
    }
    cases.push('\n');
    for r in &reports {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.model,
            r.task,
            r.train_rmse,
            r.val_rmse,
            r.test_rmse,
            r.test_nrmse_pct,
            r.test_decode_accuracy,
            r.overfit_warning
        ));
        for (stat, matrix) in [
            ("rmse", r.cases.matrix_csv(|c| c.rmse)),
            ("std", r.cases.matrix_csv(|c| c.std_abs_error)),
        ] {
            for line in matrix.lines().skip(1) {
                cases.push_str(&format!("{},{},{stat},{line}\n", r.model, r.task));
            }
        }
    }
    let mut out = Outputs::new(&a.out)?;
    out.write("summary.csv", summary)?;
    out.write("per_case.csv", cases)?;
    let digest_input: String = reports.iter().map(|r| r.to_csv()).collect();
    out.finish(
        "summary",
        Manifest {
            subcommand: "report",
            config_path,
            seed: cfg.pipeline.seed,
            inputs: a.reports.iter().map(|p| display(p)).collect(),
            outputs: Vec::new(),
            config_digest: sha256_hex(digest_input.as_bytes()),
            settings: BTreeMap::from([("reports", reports.len().to_string())]),
        },
    )
}
