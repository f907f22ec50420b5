//! Checkpoint files: JSON metadata with weights stored as base64 strings of
//! little-endian `f64` bytes, so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use evidra_core::backbone::{DenseLayer, MlpConfig, MlpParams};
use evidra_core::baselines::{UncertaintyMethod, UncertaintyScorer};
use evidra_core::calibration::{ThresholdCalibration, ThresholdConfig};
use evidra_core::losses::ScheduleState;
use evidra_core::trainer::{Objective, TrainConfig, TrainedModel};
use evidra_core::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's bytes.
pub fn file_fingerprint(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str, expected: usize) -> CliResult<Vec<f64>> {
    let bytes = STANDARD.decode(text).map_err(|e| CliError::Data(format!("bad base64 array: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(CliError::Data(format!("array holds {} bytes, expected {} f64 values", bytes.len(), expected)));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_in × fan_out`.
    pub weights: String,
    pub bias: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodedParams {
    pub layers: Vec<EncodedLayer>,
}

impl EncodedParams {
    pub fn encode(params: &MlpParams) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| EncodedLayer {
                fan_in: l.weights.rows(),
                fan_out: l.weights.cols(),
                weights: encode_f64s(l.weights.as_slice()),
                bias: encode_f64s(&l.bias),
            })
            .collect();
        Self { layers }
    }

    pub fn decode(&self, cfg: &MlpConfig) -> CliResult<MlpParams> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let w = decode_f64s(&l.weights, l.fan_in * l.fan_out)?;
                Ok(DenseLayer { weights: Matrix::from_vec(l.fan_in, l.fan_out, w)?, bias: decode_f64s(&l.bias, l.fan_out)? })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let params = MlpParams { layers };
        if !params.matches(cfg) {
            return Err(CliError::Data("stored parameters do not match the network configuration".into()));
        }
        if !params.is_finite() {
            return Err(CliError::Numeric("checkpoint parameters contain non-finite values".into()));
        }
        Ok(params)
    }
}

/// A calibrated threshold for one uncertainty method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationRecord {
    pub scorer: UncertaintyScorer,
    pub threshold: ThresholdConfig,
    pub theta: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub objective: f64,
    pub validation_fingerprint: String,
    pub n_validation: usize,
    pub n_wrong: usize,
}

impl CalibrationRecord {
    pub fn new(scorer: UncertaintyScorer, cal: &ThresholdCalibration, validation_fingerprint: String, n_validation: usize, n_wrong: usize) -> Self {
        Self {
            scorer,
            threshold: cal.config,
            theta: cal.theta,
            tpr: cal.tpr_at_theta(),
            fpr: cal.fpr_at_theta(),
            objective: cal.objective_at_theta(),
            validation_fingerprint,
            n_validation,
            n_wrong,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub mlp: MlpConfig,
    pub objective: Objective,
    /// Schedule state after the last completed epoch.
    pub schedule: ScheduleState,
    pub train_config: TrainConfig,
    /// SHA-256 of the training CSV.
    pub dataset_fingerprint: String,
    pub params: EncodedParams,
    pub snapshots: Vec<EncodedParams>,
    /// Keyed by method name.
    pub calibrations: BTreeMap<UncertaintyMethod, CalibrationRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel, train_config: TrainConfig, dataset_fingerprint: String) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            mlp: model.config.clone(),
            objective: model.objective,
            schedule: model.schedule,
            train_config,
            dataset_fingerprint,
            params: EncodedParams::encode(&model.params),
            snapshots: model.snapshots.iter().map(EncodedParams::encode).collect(),
            calibrations: BTreeMap::new(),
        }
    }

    pub fn model(&self) -> CliResult<TrainedModel> {
        Ok(TrainedModel {
            config: self.mlp.clone(),
            params: self.params.decode(&self.mlp)?,
            objective: self.objective,
            schedule: self.schedule,
            snapshots: self.snapshots.iter().map(|s| s.decode(&self.mlp)).collect::<CliResult<_>>()?,
        })
    }

    pub fn calibration(&self, method: UncertaintyMethod) -> CliResult<&CalibrationRecord> {
        self.calibrations.get(&method).ok_or_else(|| {
            CliError::Usage(format!("checkpoint has no calibrated threshold for method {method}; run `evidra calibrate --method {method}` first"))
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| CliError::Data(format!("invalid checkpoint: {e}")))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(CliError::Data(format!("unsupported checkpoint format_version {}, expected {FORMAT_VERSION}", ck.format_version)));
        }
        ck.mlp.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| e.context(path.display()))
    }
}
