//! Versioned binary model files.
//!
//! Layout: magic `CRFIDMDL`, format version (u32 LE), model kind byte,
//! target byte, length-prefixed metadata block, length-prefixed parameter
//! block, then the SHA-256 of everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelChoice, PipelineError, Task};
use crate::cnn::Network;
use crate::dsp::{filtfilt, FilterSpec};
use crate::features::{all_feature_names, extract_all, ScalerStats, WindowSpec, CATALOG_VERSION};
use crate::ml::{ModelKind, Regressor};
use crate::rcs::RcsSignature;
use crate::touchstone::CanonicalGrid;

pub const MAGIC: &[u8; 8] = b"CRFIDMDL";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 1 + 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum ModelFileError {
    #[error("not a model file")]
    BadMagic,
    #[error("unsupported model format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("model file truncated: {0}")]
    Truncated(&'static str),
    #[error("model file checksum mismatch")]
    DigestMismatch,
    #[error("expected a {expected} model, file holds {found}")]
    KindMismatch { expected: String, found: String },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error("preprocessing mismatch: {0}")]
    Preprocessing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelFamily {
    Classical,
    Cnn,
}

impl ModelFamily {
    fn name(self) -> &'static str {
        match self {
            ModelFamily::Classical => "classical",
            ModelFamily::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InputKind {
    /// Catalog plus windowed features, masked, then standardised.
    Features {
        windows: WindowSpec,
        catalog_version: u32,
        names: Vec<String>,
        mask: Vec<bool>,
    },
    /// The filtered signal, standardised per frequency bin.
    RawSignal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub grid: CanonicalGrid,
    pub filter: FilterSpec,
    pub input: InputKind,
    pub scaler: ScalerStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelBody {
    Classical(Regressor),
    Cnn(Network),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    task: Task,
    model: ModelChoice,
    preprocessing: Preprocessing,
    config_digest: String,
}

/// A trained model with everything needed to predict from raw signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistedModel {
    pub task: Task,
    pub model: ModelChoice,
    pub preprocessing: Preprocessing,
    pub body: ModelBody,
    /// Hex SHA-256 of the training configuration.
    pub config_digest: String,
}

fn kind_byte(model: ModelChoice) -> u8 {
    match model {
        ModelChoice::Classical(k) => match k {
            ModelKind::Dt => 0,
            ModelKind::Rf => 1,
            ModelKind::Gbt => 2,
            ModelKind::Svr => 3,
        },
        ModelChoice::Cnn(id) => 0x10 | id,
    }
}

fn target_byte(task: Task) -> u8 {
    match task {
        Task::Id => 0,
        Task::Sensing => 1,
    }
}

fn take_block<'a>(rest: &mut &'a [u8], what: &'static str) -> Result<&'a [u8], ModelFileError> {
    if rest.len() < 8 {
        return Err(ModelFileError::Truncated(what));
    }
    let len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| ModelFileError::Truncated(what))?;
    if rest.len() - 8 < len {
        return Err(ModelFileError::Truncated(what));
    }
    let (block, tail) = rest[8..].split_at(len);
    *rest = tail;
    Ok(block)
}

fn corrupt(e: impl std::fmt::Display) -> ModelFileError {
    ModelFileError::Corrupt(e.to_string())
}

impl PersistedModel {
    pub fn family(&self) -> ModelFamily {
        match self.body {
            ModelBody::Classical(_) => ModelFamily::Classical,
            ModelBody::Cnn(_) => ModelFamily::Cnn,
        }
    }

    /// Errors unless the model belongs to `family`.
    pub fn expect_family(self, family: ModelFamily) -> Result<Self, ModelFileError> {
        if self.family() == family {
            Ok(self)
        } else {
            Err(ModelFileError::KindMismatch {
                expected: family.name().into(),
                found: format!("{} ({})", self.family().name(), self.model),
            })
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Metadata {
            task: self.task,
            model: self.model,
            preprocessing: self.preprocessing.clone(),
            config_digest: self.config_digest.clone(),
        };
        let meta = bincode::serialize(&meta).expect("metadata serialises");
        let body = bincode::serialize(&self.body).expect("parameters serialise");
        let mut out = Vec::with_capacity(HEADER_LEN + 16 + meta.len() + body.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(kind_byte(self.model));
        out.push(target_byte(self.task));
        for block in [&meta, &body] {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            out.extend_from_slice(block);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        if bytes.len() < MAGIC.len() {
            return Err(ModelFileError::Truncated("header"));
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(ModelFileError::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(ModelFileError::Truncated("header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(ModelFileError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        if bytes.len() < HEADER_LEN + DIGEST_LEN {
            return Err(ModelFileError::Truncated("checksum"));
        }
        let (content, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let (kind, target) = (content[12], content[13]);
        let mut rest = &content[HEADER_LEN..];
        let meta_bytes = take_block(&mut rest, "metadata");
        let body_bytes = take_block(&mut rest, "parameters");
        // a short file typically cuts into the blocks, so report that first
        if Sha256::digest(content).as_slice() != digest {
            meta_bytes?;
            body_bytes?;
            return Err(ModelFileError::DigestMismatch);
        }
        let (meta_bytes, body_bytes) = (meta_bytes?, body_bytes?);
        if !rest.is_empty() {
            return Err(corrupt("trailing bytes after parameter block"));
        }
        let meta: Metadata = bincode::deserialize(meta_bytes).map_err(corrupt)?;
        let body: ModelBody = bincode::deserialize(body_bytes).map_err(corrupt)?;
        if kind_byte(meta.model) != kind || target_byte(meta.task) != target {
            return Err(corrupt("header does not match metadata"));
        }
        let body = match body {
            // rebuild to validate layer sizes against the architecture
            ModelBody::Cnn(net) => ModelBody::Cnn(
                Network::from_parts(net.spec.clone(), net.params().to_vec()).map_err(corrupt)?,
            ),
            b => b,
        };
        let model = PersistedModel {
            task: meta.task,
            model: meta.model,
            preprocessing: meta.preprocessing,
            body,
            config_digest: meta.config_digest,
        };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<(), ModelFileError> {
        let p = &self.preprocessing;
        match (&self.body, &p.input) {
            (
                ModelBody::Classical(r),
                InputKind::Features {
                    catalog_version,
                    names,
                    mask,
                    ..
                },
            ) => {
                if *catalog_version != CATALOG_VERSION || *names != all_feature_names() {
                    return Err(ModelFileError::Preprocessing(format!(
                        "feature catalog version {catalog_version} differs from this build (version {CATALOG_VERSION})"
                    )));
                }
                let selected = mask.iter().filter(|&&m| m).count();
                if mask.len() != names.len() || p.scaler.width() != selected {
                    return Err(corrupt("feature mask and scaler widths disagree"));
                }
                if ModelChoice::Classical(r.kind()) != self.model {
                    return Err(corrupt("regressor kind does not match header"));
                }
            }
            (ModelBody::Cnn(net), InputKind::RawSignal) => {
                if net.spec.input.size() != p.grid.n_points || p.scaler.width() != p.grid.n_points {
                    return Err(ModelFileError::Preprocessing(format!(
                        "network input {} and scaler width {} do not match the {}-point grid",
                        net.spec.input.size(),
                        p.scaler.width(),
                        p.grid.n_points
                    )));
                }
            }
            _ => return Err(corrupt("input kind does not match model family")),
        }
        Ok(())
    }

    /// Filters, preprocesses and predicts raw (unfiltered) signatures.
    pub fn predict_signatures(
        &self,
        signatures: &[RcsSignature],
    ) -> Result<Vec<f64>, PipelineError> {
        let p = &self.preprocessing;
        let mut inputs = Vec::with_capacity(signatures.len());
        for (i, sig) in signatures.iter().enumerate() {
            if sig.len() != p.grid.n_points || !p.grid.matches(&sig.frequencies) {
                return Err(ModelFileError::Preprocessing(format!(
                    "signature {i} has {} points, model expects the {}-point grid {}..{} Hz",
                    sig.len(),
                    p.grid.n_points,
                    p.grid.f_start,
                    p.grid.f_stop
                ))
                .into());
            }
            if sig.filtered {
                return Err(PipelineError::Data(format!(
                    "signature {i} is already filtered"
                )));
            }
            inputs.push(filtfilt(sig, &p.filter)?);
        }
        match (&self.body, &p.input) {
            (ModelBody::Classical(reg), InputKind::Features { windows, mask, .. }) => inputs
                .iter()
                .map(|sig| {
                    let all = extract_all(sig, windows)?;
                    let mut row: Vec<f64> = all
                        .values
                        .iter()
                        .zip(mask)
                        .filter(|(_, &m)| m)
                        .map(|(v, _)| *v)
                        .collect();
                    p.scaler.transform_row(&mut row);
                    Ok(reg.predict_row(&row))
                })
                .collect(),
            (ModelBody::Cnn(net), InputKind::RawSignal) => {
                let mut x = Vec::with_capacity(inputs.len() * p.grid.n_points);
                for sig in &inputs {
                    let start = x.len();
                    x.extend_from_slice(&sig.rcs);
                    p.scaler.transform_row(&mut x[start..]);
                }
                Ok(net.predict(&x, inputs.len())?)
            }
            _ => {
                Err(ModelFileError::Corrupt("input kind does not match model family".into()).into())
            }
        }
    }
}

pub fn save_model(model: &PersistedModel, path: &Path) -> Result<(), PipelineError> {
    std::fs::write(path, model.to_bytes())
        .map_err(|e| PipelineError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Result<PersistedModel, PipelineError> {
    let bytes = std::fs::read(path)
        .map_err(|e| PipelineError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(PersistedModel::from_bytes(&bytes)?)
}

/// [`load_model`] that also requires the given model family.
pub fn load_model_as(path: &Path, family: ModelFamily) -> Result<PersistedModel, PipelineError> {
    Ok(load_model(path)?.expect_family(family)?)
}
