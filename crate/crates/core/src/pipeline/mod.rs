//! Splitting, task orchestration, metrics and model persistence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cnn::{self, CnnError, EpochRecord, Split, TrainConfig};
use crate::dsp::{filtfilt, DspError, FilterSpec};
use crate::features::{
    all_feature_names, apply_scaler, extract_all, fit_scaler, fit_scaler_flat, FeatureError,
    FeatureMatrix, WindowSpec, CATALOG_VERSION,
};
use crate::ml::{grid_search_cv, rfe_cv, GridResult, MlError, ModelKind, ModelParams, RfeResult};
use crate::rcs::RcsSignature;
use crate::siggen::{SiggenError, TagLabel};

pub mod dataset;
pub mod metrics;
pub mod persist;
pub mod report;
pub mod split;

pub use dataset::Dataset;
pub use metrics::{
    decode_accuracy, decode_id, decode_sensing, improvement_percent, normalized_rmse,
    per_case_report, rmse, CaseCell, CaseTable,
};
pub use persist::{
    load_model, load_model_as, save_model, InputKind, ModelBody, ModelFamily, ModelFileError,
    PersistedModel, Preprocessing,
};
pub use report::{EvalReport, PredictionTable};
pub use split::{stratified_split, SplitAssignment, SplitTag};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("I/O error: {0}")]
    Io(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model {model} cannot be used for the {task} task")]
    Incompatible { model: String, task: Task },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Ml(#[from] MlError),
    #[error(transparent)]
    Cnn(#[from] CnnError),
    #[error(transparent)]
    Siggen(#[from] SiggenError),
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            PipelineError::Io(e.to_string())
        } else {
            PipelineError::Format(e.to_string())
        }
    }
}

impl PipelineError {
    /// Non-finite values or divergence, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PipelineError::Numerical(_)
                | PipelineError::Cnn(CnnError::Diverged { .. })
                | PipelineError::Ml(MlError::NonFinite { .. } | MlError::NonFiniteTarget(_))
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Id,
    Sensing,
}

impl Task {
    pub const ALL: [Task; 2] = [Task::Id, Task::Sensing];

    pub fn name(self) -> &'static str {
        match self {
            Task::Id => "id",
            Task::Sensing => "sensing",
        }
    }

    /// Width of the target interval used for normalised RMSE.
    pub fn range(self) -> f64 {
        match self {
            Task::Id => 7.0,
            Task::Sensing => 0.7,
        }
    }

    pub fn target(self, label: &TagLabel) -> f64 {
        match self {
            Task::Id => label.tag_id as f64,
            Task::Sensing => label.capacitance_pf,
        }
    }

    pub fn decode(self, prediction: f64) -> Result<f64, PipelineError> {
        match self {
            Task::Id => decode_id(prediction).map(f64::from),
            Task::Sensing => decode_sensing(prediction),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                PipelineError::Config(format!("unknown task {s:?} (expected id or sensing)"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelChoice {
    Classical(ModelKind),
    /// Architecture 1..=4.
    Cnn(u8),
}

impl ModelChoice {
    pub const NAMES: [&'static str; 8] = ["svr", "dt", "rf", "gbt", "cnn1", "cnn2", "cnn3", "cnn4"];

    /// Models 1 and 3 estimate the ID, models 2 and 4 the capacitance.
    pub fn supports(self, task: Task) -> bool {
        match self {
            ModelChoice::Classical(_) => true,
            ModelChoice::Cnn(id) => (id % 2 == 1) == (task == Task::Id),
        }
    }
}

impl fmt::Display for ModelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelChoice::Classical(k) => write!(f, "{k}"),
            ModelChoice::Cnn(id) => write!(f, "cnn{id}"),
        }
    }
}

impl FromStr for ModelChoice {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        if let Some(id) = lower.strip_prefix("cnn") {
            if let Ok(id @ 1..=4) = id.parse::<u8>() {
                return Ok(ModelChoice::Cnn(id));
            }
        } else if let Ok(k) = lower.parse::<ModelKind>() {
            return Ok(ModelChoice::Classical(k));
        }
        Err(PipelineError::Config(format!(
            "unknown model {s:?} (expected one of {})",
            Self::NAMES.join(", ")
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed for splits, folds, forests and CNN training.
    pub seed: u64,
    pub filter: FilterSpec,
    pub windows: WindowSpec,
    pub cv_folds: usize,
    /// Run recursive feature elimination before the grid search.
    pub rfe: bool,
    /// Replaces the built-in grid for the kinds it contains.
    pub grid: Option<Vec<ModelParams>>,
    /// CNN training; its `seed` is overridden by the master seed.
    pub cnn: TrainConfig,
    /// Divides conv filters and hidden dense units of the CNNs.
    pub cnn_width_divisor: usize,
    /// Upper bound on conv filters per layer, applied after the divisor.
    pub cnn_conv_cap: Option<usize>,
    /// Validation RMSE above this multiple of training RMSE is flagged.
    pub overfit_ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            filter: FilterSpec::default(),
            windows: WindowSpec::default(),
            cv_folds: 3,
            rfe: true,
            grid: None,
            cnn: TrainConfig::default(),
            cnn_width_divisor: 1,
            cnn_conv_cap: None,
            overfit_ratio: 1.5,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.filter.validate()?;
        self.cnn.validate()?;
        if self.cv_folds < 2 {
            return Err(PipelineError::Config("cv_folds must be at least 2".into()));
        }
        if self.cnn_width_divisor == 0 {
            return Err(PipelineError::Config(
                "cnn_width_divisor must be at least 1".into(),
            ));
        }
        if self.cnn_conv_cap == Some(0) {
            return Err(PipelineError::Config(
                "cnn_conv_cap must be at least 1".into(),
            ));
        }
        if !(self.overfit_ratio > 0.0) {
            return Err(PipelineError::Config(
                "overfit_ratio must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 identifying this configuration for a task and model.
    pub fn digest(&self, task: Task, model: ModelChoice) -> String {
        let bytes = bincode::serialize(&(self, task, model)).expect("config serialises");
        Sha256::digest(bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn grid_for(&self, kind: ModelKind) -> Vec<ModelParams> {
        let custom: Vec<ModelParams> = self
            .grid
            .iter()
            .flatten()
            .filter(|p| p.kind() == kind)
            .cloned()
            .collect();
        if custom.is_empty() {
            ModelParams::default_grid(kind, self.seed)
        } else {
            custom
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub model: PersistedModel,
    pub report: EvalReport,
    pub split: SplitAssignment,
    /// Test-split predictions.
    pub predictions: PredictionTable,
    pub rfe: Option<RfeResult>,
    pub grid: Option<GridResult>,
    pub history: Option<Vec<EpochRecord>>,
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Filters every row, splits, trains and evaluates one model on one task.
///
/// Classical models are tuned on the training split, checked against the
/// validation split, then refitted on train+val unless validation RMSE
/// exceeds `overfit_ratio` times training RMSE. CNNs train on the
/// training split with early stopping on the validation split and keep the
/// best checkpoint.
pub fn run_pipeline(
    task: Task,
    model: ModelChoice,
    data: &Dataset,
    config: &PipelineConfig,
    log: &mut dyn FnMut(&str),
) -> Result<PipelineOutput, PipelineError> {
    config.validate()?;
    if !model.supports(task) {
        return Err(PipelineError::Incompatible {
            model: model.to_string(),
            task,
        });
    }
    if data.is_empty() {
        return Err(PipelineError::Data("dataset is empty".into()));
    }
    let split = stratified_split(&data.labels, config.seed)?;
    let (n_train, n_val, n_test) = split.counts();
    log(&format!(
        "split: {n_train} train, {n_val} val, {n_test} test"
    ));
    let signatures: Vec<RcsSignature> = (0..data.len()).map(|i| data.signature(i)).collect();
    let filtered = signatures
        .iter()
        .map(|s| filtfilt(s, &config.filter))
        .collect::<Result<Vec<_>, _>>()?;
    let y: Vec<f64> = data.labels.iter().map(|l| task.target(l)).collect();
    let tr = split.indices(SplitTag::Train);
    let va = split.indices(SplitTag::Val);
    let te = split.indices(SplitTag::Test);
    let (y_tr, y_va) = (pick(&y, &tr), pick(&y, &va));

    let digest = config.digest(task, model);
    let preprocessing_grid = data.grid;
    let (persisted, train_rmse, val_rmse, rfe, grid, history) = match model {
        ModelChoice::Classical(kind) => {
            let rows = filtered
                .iter()
                .map(|s| extract_all(s, &config.windows))
                .collect::<Result<Vec<_>, _>>()?;
            let x = FeatureMatrix::from_vectors(&rows)?;
            if !x.is_finite() {
                return Err(PipelineError::Numerical("non-finite feature values".into()));
            }
            let x_tr = x.select_rows(&tr);
            let scaler = fit_scaler(&x_tr)?;
            let xs_tr = apply_scaler(&scaler, &x_tr)?;
            let rfe = if config.rfe {
                log(&format!(
                    "{kind}: feature elimination over {} features",
                    x.n_cols()
                ));
                Some(rfe_cv(
                    &ModelParams::rfe_estimator(kind, config.seed),
                    &xs_tr,
                    &y_tr,
                    config.cv_folds,
                    config.seed,
                )?)
            } else {
                None
            };
            let mask = rfe
                .as_ref()
                .map_or_else(|| vec![true; x.n_cols()], |r| r.mask.clone());
            let n_selected = mask.iter().filter(|&&m| m).count();
            let xm_tr = xs_tr.select_columns(&mask);
            let grid = grid_search_cv(
                &xm_tr,
                &y_tr,
                &config.grid_for(kind),
                config.cv_folds,
                config.seed,
            )?;
            log(&format!(
                "{kind}: {n_selected} features kept, best {} (cv rmse {:.4})",
                grid.best.describe(),
                grid.table[grid.best_index].mean_rmse
            ));
            let stage_a = grid.best.fit(&xm_tr, &y_tr)?;
            let xm_va = apply_scaler(&scaler, &x.select_rows(&va))?.select_columns(&mask);
            let train_rmse = rmse(&stage_a.predict(&xm_tr), &y_tr)?;
            let val_rmse = rmse(&stage_a.predict(&xm_va), &y_va)?;

            let (selected_scaler, regressor) = if val_rmse > config.overfit_ratio * train_rmse {
                log(&format!(
                    "{kind}: overfitting gate closed, keeping the train-only fit"
                ));
                (scaler.select(&mask), stage_a)
            } else {
                let mut dev: Vec<usize> = tr.iter().chain(&va).copied().collect();
                dev.sort_unstable();
                let x_dev = x.select_rows(&dev);
                let dev_scaler = fit_scaler(&x_dev)?;
                let xm_dev = apply_scaler(&dev_scaler, &x_dev)?.select_columns(&mask);
                let regressor = grid.best.fit(&xm_dev, &pick(&y, &dev))?;
                (dev_scaler.select(&mask), regressor)
            };
            let persisted = PersistedModel {
                task,
                model,
                preprocessing: Preprocessing {
                    grid: preprocessing_grid,
                    filter: config.filter,
                    input: InputKind::Features {
                        windows: config.windows,
                        catalog_version: CATALOG_VERSION,
                        names: all_feature_names(),
                        mask,
                    },
                    scaler: selected_scaler,
                },
                body: ModelBody::Classical(regressor),
                config_digest: digest,
            };
            (persisted, train_rmse, val_rmse, rfe, Some(grid), None)
        }
        ModelChoice::Cnn(id) => {
            let spec = cnn::model_spec_capped(id, config.cnn_width_divisor, config.cnn_conv_cap)?;
            let width = data.grid.n_points;
            if spec.input.size() != width {
                return Err(PipelineError::Data(format!(
                    "signatures have {width} points, the network expects {}",
                    spec.input.size()
                )));
            }
            let flat = |idx: &[usize]| -> Vec<f64> {
                idx.iter()
                    .flat_map(|&i| filtered[i].rcs.iter().copied())
                    .collect()
            };
            let scaler = fit_scaler_flat(&flat(&tr), width, tr.len())?;
            let standardize = |mut v: Vec<f64>| {
                for row in v.chunks_exact_mut(width) {
                    scaler.transform_row(row);
                }
                v
            };
            let x_tr = standardize(flat(&tr));
            let x_va = standardize(flat(&va));
            let train_cfg = TrainConfig {
                seed: config.seed,
                ..config.cnn.clone()
            };
            log(&format!(
                "{model}: {} trainable parameters, up to {} epochs",
                spec.n_params()?,
                train_cfg.max_epochs
            ));
            let trained = cnn::train_with(
                &spec,
                Split { x: &x_tr, y: &y_tr },
                Split { x: &x_va, y: &y_va },
                &train_cfg,
                |r| {
                    log(&format!(
                        "epoch {:>3}: train {:.6} val {:.6}",
                        r.epoch, r.train_loss, r.val_loss
                    ))
                },
            )?;
            log(&format!(
                "{model}: best epoch {} (val loss {:.6}){}",
                trained.best_epoch,
                trained.best_val_loss(),
                if trained.stopped_early {
                    ", stopped early"
                } else {
                    ""
                }
            ));
            let train_rmse = rmse(&trained.network.predict(&x_tr, tr.len())?, &y_tr)?;
            let val_rmse = rmse(&trained.network.predict(&x_va, va.len())?, &y_va)?;
            let persisted = PersistedModel {
                task,
                model,
                preprocessing: Preprocessing {
                    grid: preprocessing_grid,
                    filter: config.filter,
                    input: InputKind::RawSignal,
                    scaler,
                },
                body: ModelBody::Cnn(trained.network),
                config_digest: digest,
            };
            (
                persisted,
                train_rmse,
                val_rmse,
                None,
                None,
                Some(trained.history),
            )
        }
    };

    let overfit_warning = val_rmse > config.overfit_ratio * train_rmse;
    if overfit_warning {
        log(&format!(
            "warning: validation RMSE {val_rmse:.4} exceeds {} x training RMSE {train_rmse:.4}",
            config.overfit_ratio
        ));
    }

    let test_sigs: Vec<RcsSignature> = te.iter().map(|&i| signatures[i].clone()).collect();
    let predicted = persisted.predict_signatures(&test_sigs)?;
    if let Some(i) = predicted.iter().position(|p| !p.is_finite()) {
        return Err(PipelineError::Numerical(format!(
            "non-finite prediction for test row {}",
            te[i]
        )));
    }
    let y_te = pick(&y, &te);
    let test_labels = pick(&data.labels, &te);
    let test_rmse = rmse(&predicted, &y_te)?;
    let report = EvalReport {
        model: model.to_string(),
        task,
        n_train,
        n_val,
        n_test,
        train_rmse,
        val_rmse,
        test_rmse,
        test_nrmse_pct: normalized_rmse(test_rmse, task.range()),
        test_decode_accuracy: decode_accuracy(task, &predicted, &y_te)?,
        overfit_warning,
        cases: per_case_report(&predicted, &y_te, &test_labels)?,
    };
    log(&format!(
        "{model}/{task}: rmse train {train_rmse:.4} val {val_rmse:.4} test {test_rmse:.4} ({:.2}%), decode accuracy {:.2}%",
        report.test_nrmse_pct,
        report.test_decode_accuracy * 100.0
    ));
    Ok(PipelineOutput {
        model: persisted,
        report,
        split,
        predictions: PredictionTable {
            task,
            labels: test_labels.into_iter().map(Some).collect(),
            predicted,
        },
        rfe,
        grid,
        history,
    })
}
