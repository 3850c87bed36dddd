//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! decimal form, so loading a checkpoint reproduces predictions bit for bit.

use std::path::Path;

use fhnet_core::cv::ModelKind;
use fhnet_core::direct::PretuneConfig;
use fhnet_core::fhn::{DriveConfig, FhnParams};
use fhnet_core::forest::{rf_predict, RandomForest};
use fhnet_core::hrv::{FEATURE_COUNT, FEATURE_SET_VERSION};
use fhnet_core::net::{HybridModel, MlpParams, ModelLayout, ParamVector, RateScaling, Standardizer};
use fhnet_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_text, write_text};

pub const FORMAT: &str = "fhnet-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model_kind: ModelKind,
    /// HRV feature set the model consumes, if any.
    pub feature_set: Option<String>,
    /// Seed every random choice in training derived from.
    pub seed: u64,
    pub model: StoredModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StoredModel {
    Hybrid(Box<HybridRecord>),
    Forest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridRecord {
    pub n_neurons: usize,
    pub fhn: Vec<FhnParams>,
    /// Trained drive amplitude; `drive.amplitude` keeps the initial value.
    pub amplitude: f64,
    pub drive: DriveConfig,
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub rate_scaling: RateScaling,
    pub hrv_scaler: Option<Standardizer>,
    pub train: TrainConfig,
    pub pretune: Option<PretuneConfig>,
}

/// A checkpoint turned back into something that can score segments.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    Hybrid(Box<HybridModel>),
    Forest(RandomForest),
}

impl LoadedModel {
    pub fn needs_hrv(&self) -> bool {
        match self {
            LoadedModel::Hybrid(m) => m.layout().n_hrv > 0,
            LoadedModel::Forest(_) => true,
        }
    }

    pub fn predict(&self, intervals: &[u32], hrv: Option<&[f64]>) -> Result<f64> {
        match self {
            LoadedModel::Hybrid(m) => Ok(m.predict(intervals, hrv)?),
            LoadedModel::Forest(rf) => {
                let x = hrv.ok_or_else(|| Error::Compatibility("forest needs HRV features".into()))?;
                if x.len() != rf.n_features {
                    return Err(Error::Compatibility(format!(
                        "forest expects {} features, got {}",
                        rf.n_features,
                        x.len()
                    )));
                }
                Ok(rf_predict(rf, x))
            }
        }
    }
}

impl Checkpoint {
    pub fn hybrid(
        kind: ModelKind,
        model: &HybridModel,
        train: &TrainConfig,
        pretune: Option<PretuneConfig>,
        seed: u64,
    ) -> Self {
        let head = model.params.head();
        let layout = model.layout();
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            model_kind: kind,
            feature_set: (layout.n_hrv > 0).then(|| FEATURE_SET_VERSION.to_string()),
            seed,
            model: StoredModel::Hybrid(Box::new(HybridRecord {
                n_neurons: layout.n_neurons,
                fhn: model.params.population(),
                amplitude: model.params.amplitude(),
                drive: model.drive,
                layer_sizes: head.sizes,
                weights: head.weights,
                biases: head.biases,
                rate_scaling: model.rates.clone(),
                hrv_scaler: model.hrv.clone(),
                train: train.clone(),
                pretune,
            })),
        }
    }

    pub fn forest(forest: RandomForest, seed: u64) -> Self {
        Checkpoint {
            format: FORMAT.to_string(),
            version: VERSION,
            model_kind: ModelKind::Traditional,
            feature_set: Some(FEATURE_SET_VERSION.to_string()),
            seed,
            model: StoredModel::Forest(forest),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT {
            return Err(Error::Version(format!("format tag {:?}", ck.format)));
        }
        if ck.version != VERSION {
            return Err(Error::Version(format!("version {} (this build reads {VERSION})", ck.version)));
        }
        if let Some(fs) = &ck.feature_set {
            if fs != FEATURE_SET_VERSION {
                return Err(Error::Compatibility(format!(
                    "feature set {fs}, this build computes {FEATURE_SET_VERSION}"
                )));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }

    /// Rebuilds the model, checking that the stored pieces agree.
    pub fn to_model(&self) -> Result<LoadedModel> {
        match &self.model {
            StoredModel::Forest(rf) => {
                if rf.n_features != FEATURE_COUNT {
                    return Err(Error::Compatibility(format!(
                        "forest trained on {} features, this build computes {FEATURE_COUNT}",
                        rf.n_features
                    )));
                }
                Ok(LoadedModel::Forest(rf.clone()))
            }
            StoredModel::Hybrid(r) => {
                let n_hrv = r.hrv_scaler.as_ref().map_or(0, Standardizer::len);
                if n_hrv != 0 && n_hrv != FEATURE_COUNT {
                    return Err(Error::Compatibility(format!(
                        "model expects {n_hrv} HRV features, this build computes {FEATURE_COUNT}"
                    )));
                }
                if r.fhn.len() != r.n_neurons || r.rate_scaling.smooth.len() != r.n_neurons {
                    return Err(Error::Compatibility("oscillator table does not match n_neurons".into()));
                }
                let hidden = r
                    .layer_sizes
                    .get(1..r.layer_sizes.len().saturating_sub(1))
                    .unwrap_or_default()
                    .to_vec();
                let layout = ModelLayout::new(r.n_neurons, n_hrv, hidden)?;
                let head = MlpParams {
                    sizes: r.layer_sizes.clone(),
                    weights: r.weights.clone(),
                    biases: r.biases.clone(),
                };
                let sizes = layout.layer_sizes();
                let layers_fit = head.weights.len() == sizes.len() - 1
                    && head.biases.len() == sizes.len() - 1
                    && sizes.windows(2).enumerate().all(|(l, w)| {
                        head.weights[l].len() == w[0] * w[1] && head.biases[l].len() == w[1]
                    });
                if !layers_fit {
                    return Err(Error::Compatibility("head arrays do not match layer sizes".into()));
                }
                let params = ParamVector::assemble(layout, &r.fhn, r.amplitude, &head)?;
                let mut model = HybridModel::new(params, r.drive)?;
                model.rates = r.rate_scaling.clone();
                model.hrv = r.hrv_scaler.clone();
                Ok(LoadedModel::Hybrid(Box::new(model)))
            }
        }
    }
}
