//! A small 1D CNN engine: valid convolutions, max pooling, batch norm,
//! dropout and dense layers in f64, trained with Adam on MSE.

use thiserror::Error;

mod kernels;
pub mod net;
pub mod optim;
pub mod spec;
pub mod train;

pub use net::{ForwardCache, Gradients, LayerParams, Mode, Network};
pub use optim::{adam_step, adam_update, AdamConfig, AdamState};
pub use spec::{
    model_1_spec, model_2_spec, model_3_spec, model_4_spec, model_spec, model_spec_capped,
    Activation, ArchitectureSpec, LayerSpec, Shape, SIGNATURE_LEN,
};
pub use train::{
    history_csv, mse, train, train_with, EpochRecord, Split, TrainConfig, TrainedModel,
};

#[derive(Debug, Error, PartialEq)]
pub enum CnnError {
    #[error("invalid architecture: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch at layer {layer}: expected {expected} values, found {found}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("forward cache is stale (cache version {cache}, network version {network})")]
    StaleCache { cache: u64, network: u64 },
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{which} loss became non-finite at epoch {epoch}")]
    Diverged { epoch: usize, which: &'static str },
}
