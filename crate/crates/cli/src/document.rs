//! The persisted model document: everything `predict` and `export` need
//! without retraining — config hash, the parsed config itself, alphabets,
//! and each channel's full parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hmmix_core::config::PipelineConfig;
use hmmix_core::hmm::CategoricalHmm;
use hmmix_core::ingest::Dataset;
use hmmix_core::mixture::{MixtureModel, ParameterExport};

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelDocument {
    pub config_hash: String,
    pub hidden_marker: String,
    pub hidden_alphabet: Vec<String>,
    pub alphabets: BTreeMap<String, Vec<String>>,
    pub config: PipelineConfig,
    pub channels: BTreeMap<String, ParameterExport>,
}

pub fn config_hash(config_text: &str) -> String {
    let digest = Sha256::digest(config_text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelDocument {
    pub fn from_model(
        model: &MixtureModel,
        dataset: &Dataset,
        config_text: &str,
    ) -> hmmix_core::Result<Self> {
        let mut channels = BTreeMap::new();
        for marker in model.channels().keys() {
            channels.insert(marker.clone(), model.export_parameters(marker)?);
        }
        Ok(Self {
            config_hash: config_hash(config_text),
            hidden_marker: model.hidden_marker().to_string(),
            hidden_alphabet: model.hidden_alphabet().to_vec(),
            alphabets: dataset.alphabets.clone(),
            config: model.config().clone(),
            channels,
        })
    }

    pub fn to_model(&self) -> hmmix_core::Result<MixtureModel> {
        let mut channels = BTreeMap::new();
        for (marker, export) in &self.channels {
            channels.insert(
                marker.clone(),
                CategoricalHmm::new(
                    export.transition.clone(),
                    export.emission.clone(),
                    export.initial.clone(),
                    export.hidden_labels.clone(),
                    export.symbol_labels.clone(),
                )?,
            );
        }
        MixtureModel::from_channels(self.hidden_marker.clone(), channels, self.config.clone())
    }
}
