//! The query engine: one HMM per observed marker, all sharing the hidden
//! marker's states, combined according to layer and marker weights.
//!
//! A query carries equal-length encoded trails for any subset of the
//! configured markers. Weights rebalance over the markers actually present,
//! so partial observations degrade gracefully instead of failing. Smoothed
//! posteriors combine as the weighted sum of per-channel posteriors; state
//! sequences decode over pooled per-step log-emission scores so the result
//! always respects the shared transition structure.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::estimation;
use crate::hmm::{self, CategoricalHmm, EMISSION_FLOOR};
use crate::ingest::Dataset;

/// A prediction request: the hidden marker to reason about, equal-length
/// encoded trails per observed marker, and optional weight overrides
/// (rebalanced over the present markers before use).
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub hidden_marker: String,
    pub observation: BTreeMap<String, Vec<usize>>,
    pub layer_weights: Option<BTreeMap<String, f64>>,
    pub marker_weights: Option<BTreeMap<String, f64>>,
}

impl Query {
    pub fn new(hidden_marker: impl Into<String>, observation: BTreeMap<String, Vec<usize>>) -> Self {
        Self {
            hidden_marker: hidden_marker.into(),
            observation,
            layer_weights: None,
            marker_weights: None,
        }
    }
}

/// Decoded optimal state sequence for a query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSequence {
    pub labels: Vec<String>,
    pub path: Vec<usize>,
    pub log_score: f64,
}

/// Owned copies of one channel's parameters, fit for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterExport {
    pub marker: String,
    pub hidden_labels: Vec<String>,
    pub symbol_labels: Vec<String>,
    pub transition: Array2<f64>,
    pub emission: Array2<f64>,
    pub initial: Array1<f64>,
}

/// The mixture: per-marker channel HMMs sharing one hidden state space.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    hidden_marker: String,
    hidden_alphabet: Vec<String>,
    channels: BTreeMap<String, CategoricalHmm>,
    config: PipelineConfig,
}

impl MixtureModel {
    /// Extract every channel from a dataset and assemble the mixture.
    pub fn build(
        dataset: &Dataset,
        config: &PipelineConfig,
        hidden_marker: &str,
        smoothing: f64,
    ) -> Result<Self> {
        let channels = estimation::build_all(dataset, config, hidden_marker, smoothing)?;
        let hidden_alphabet = dataset.alphabet(hidden_marker)?.to_vec();
        Ok(Self {
            hidden_marker: hidden_marker.to_string(),
            hidden_alphabet,
            channels,
            config: config.clone(),
        })
    }

    /// Assemble from already-built channels (e.g. a persisted model),
    /// verifying that they share the hidden structure.
    pub fn from_channels(
        hidden_marker: impl Into<String>,
        channels: BTreeMap<String, CategoricalHmm>,
        config: PipelineConfig,
    ) -> Result<Self> {
        let hidden_marker = hidden_marker.into();
        config.marker(&hidden_marker)?;
        let Some(reference) = channels.values().next() else {
            return Err(Error::InvalidModel("mixture has no channels".into()));
        };
        let hidden_alphabet = reference.hidden_labels().to_vec();
        for (marker, hmm) in &channels {
            config.marker(marker)?;
            if marker == &hidden_marker {
                return Err(Error::InvalidModel(
                    "hidden marker cannot be one of its own channels".into(),
                ));
            }
            if hmm.hidden_labels() != hidden_alphabet.as_slice()
                || hmm.transition() != reference.transition()
                || hmm.initial() != reference.initial()
            {
                return Err(Error::InvalidModel(format!(
                    "channel `{marker}` does not share the mixture's hidden structure"
                )));
            }
        }
        Ok(Self {
            hidden_marker,
            hidden_alphabet,
            channels,
            config,
        })
    }

    pub fn hidden_marker(&self) -> &str {
        &self.hidden_marker
    }

    pub fn hidden_alphabet(&self) -> &[String] {
        &self.hidden_alphabet
    }

    pub fn channels(&self) -> &BTreeMap<String, CategoricalHmm> {
        &self.channels
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn channel(&self, marker: &str) -> Result<&CategoricalHmm> {
        self.channels
            .get(marker)
            .ok_or_else(|| Error::UnknownMarker(marker.to_string()))
    }

    /// Transition matrix shared by every channel.
    pub fn shared_transition(&self) -> &Array2<f64> {
        self.channels
            .values()
            .next()
            .expect("mixture always has at least one channel")
            .transition()
    }

    /// Initial distribution shared by every channel.
    pub fn shared_initial(&self) -> &Array1<f64> {
        self.channels
            .values()
            .next()
            .expect("mixture always has at least one channel")
            .initial()
    }

    /// Encode state labels for one channel against its symbol alphabet.
    pub fn encode_labels(&self, marker: &str, labels: &[String]) -> Result<Vec<usize>> {
        let alphabet = self.channel(marker)?.symbol_labels();
        labels
            .iter()
            .enumerate()
            .map(|(position, label)| {
                alphabet
                    .iter()
                    .position(|a| a == label)
                    .ok_or_else(|| Error::UnknownLabel {
                        marker: marker.to_string(),
                        label: label.clone(),
                        position,
                    })
            })
            .collect()
    }

    fn validate_query(&self, query: &Query) -> Result<usize> {
        if query.hidden_marker != self.hidden_marker {
            return Err(Error::InvalidInput(format!(
                "query targets hidden marker `{}` but the model was built for `{}`",
                query.hidden_marker, self.hidden_marker
            )));
        }
        if query.observation.is_empty() {
            return Err(Error::InvalidInput("query carries no trails".into()));
        }
        let mut len = None;
        for (marker, states) in &query.observation {
            if marker == &self.hidden_marker {
                return Err(Error::InvalidInput(
                    "the hidden marker cannot appear among the observed trails".into(),
                ));
            }
            self.channel(marker)?;
            if states.is_empty() {
                return Err(Error::InvalidInput(format!("trail `{marker}` is empty")));
            }
            match len {
                None => len = Some(states.len()),
                Some(l) if l != states.len() => {
                    return Err(Error::InvalidInput(format!(
                        "trail `{marker}` has length {}, others have {l}",
                        states.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(len.unwrap())
    }

    /// Effective trail weight per present marker: zero-weight trails are
    /// dropped up front, then layer weights renormalize over the layers that
    /// still have a present marker and marker weights within each such
    /// layer. The result sums to 1 unless every trail had weight zero, in
    /// which case all entries are 0.
    pub fn effective_weights(&self, query: &Query) -> Result<BTreeMap<String, f64>> {
        self.validate_query(query)?;
        let marker_weight = |name: &str| -> f64 {
            query
                .marker_weights
                .as_ref()
                .and_then(|m| m.get(name).copied())
                .unwrap_or(self.config.markers[name].weight)
        };
        let layer_weight = |name: &str| -> f64 {
            query
                .layer_weights
                .as_ref()
                .and_then(|m| m.get(name).copied())
                .unwrap_or(self.config.layers[name].weight)
        };

        let mut surviving: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for marker in query.observation.keys() {
            let layer = self.config.markers[marker].layer.as_str();
            if marker_weight(marker) > 0.0 && layer_weight(layer) > 0.0 {
                surviving.entry(layer).or_default().push(marker);
            }
        }

        let mut weights: BTreeMap<String, f64> =
            query.observation.keys().map(|m| (m.clone(), 0.0)).collect();
        if surviving.is_empty() {
            return Ok(weights);
        }
        let layer_total: f64 = surviving.keys().map(|l| layer_weight(l)).sum();
        for (layer, markers) in &surviving {
            let layer_share = layer_weight(layer) / layer_total;
            let marker_total: f64 = markers.iter().map(|m| marker_weight(m)).sum();
            for marker in markers {
                weights.insert(
                    marker.to_string(),
                    layer_share * marker_weight(marker) / marker_total,
                );
            }
        }
        Ok(weights)
    }

    /// One trail's weighted smoothed-posterior contribution: the trail
    /// weight times the channel's posterior matrix.
    pub fn trail_evaluation(&self, query: &Query, marker: &str) -> Result<Array2<f64>> {
        let weights = self.effective_weights(query)?;
        let Some(weight) = weights.get(marker) else {
            return Err(Error::UnknownMarker(marker.to_string()));
        };
        let channel = self.channel(marker)?;
        let gammas = hmm::posteriors_with_floor(channel, &query.observation[marker], EMISSION_FLOOR)?;
        Ok(gammas.gammas() * *weight)
    }

    /// The weighted sum of all trail evaluations, row-renormalized. Rows
    /// already sum to 1 up to float drift because the weights do.
    pub fn observation_evaluation(&self, query: &Query) -> Result<Array2<f64>> {
        let weights = self.effective_weights(query)?;
        if weights.values().all(|&w| w == 0.0) {
            return Err(Error::Evaluation(
                "every trail in the query has weight zero".into(),
            ));
        }
        let t_len = query.observation.values().next().unwrap().len();
        let n = self.hidden_alphabet.len();
        let mut combined = Array2::<f64>::zeros((t_len, n));
        for (marker, states) in &query.observation {
            let weight = weights[marker];
            if weight == 0.0 {
                continue;
            }
            let channel = &self.channels[marker];
            let gammas = hmm::posteriors_with_floor(channel, states, EMISSION_FLOOR)?;
            combined += &(gammas.gammas() * weight);
        }
        for mut row in combined.rows_mut() {
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        Ok(combined)
    }

    /// Capability 1: smoothed posterior per hidden state and time step, with
    /// the hidden labels bound for presentation.
    pub fn predict_posteriors(&self, query: &Query) -> Result<(Array2<f64>, Vec<String>)> {
        Ok((self.observation_evaluation(query)?, self.hidden_alphabet.clone()))
    }

    /// Capability 2: push the final smoothed posterior `steps` steps through
    /// the shared transition matrix; large step counts approximate its
    /// stationary distribution.
    pub fn predict_future(&self, query: &Query, steps: usize) -> Result<(Array2<f64>, Vec<String>)> {
        if steps == 0 {
            return Err(Error::InvalidInput("need at least one future step".into()));
        }
        let (posteriors, labels) = self.predict_posteriors(query)?;
        let current = posteriors.row(posteriors.nrows() - 1).to_owned();
        let reference = self.channels.values().next().unwrap();
        Ok((hmm::extrapolate(reference, &current, steps)?, labels))
    }

    /// Capability 3: the optimal hidden state sequence. Per-step emission
    /// scores pool across channels as the weight-weighted sum of floored
    /// log-emissions; decoding then runs over the shared transition and
    /// initial parameters, so the returned path never crosses a
    /// zero-probability transition.
    pub fn predict_state_sequence(&self, query: &Query) -> Result<DecodedSequence> {
        let weights = self.effective_weights(query)?;
        if weights.values().all(|&w| w == 0.0) {
            return Err(Error::Evaluation(
                "every trail in the query has weight zero".into(),
            ));
        }
        let t_len = query.observation.values().next().unwrap().len();
        let n = self.hidden_alphabet.len();
        let mut log_scores = Array2::<f64>::zeros((t_len, n));
        for (marker, states) in &query.observation {
            let weight = weights[marker];
            if weight == 0.0 {
                continue;
            }
            let channel = &self.channels[marker];
            channel.check_obs(states)?;
            let b = channel.emission();
            for (t, &o) in states.iter().enumerate() {
                for i in 0..n {
                    log_scores[(t, i)] += weight * b[(i, o)].max(EMISSION_FLOOR).ln();
                }
            }
        }
        let log_initial = self.shared_initial().mapv(f64::ln);
        let log_transition = self.shared_transition().mapv(f64::ln);
        let result = hmm::viterbi_kernel(&log_initial, &log_transition, &log_scores)?;
        let labels = result
            .path
            .iter()
            .map(|&i| self.hidden_alphabet[i].clone())
            .collect();
        Ok(DecodedSequence {
            labels,
            path: result.path,
            log_score: result.log_prob,
        })
    }

    /// Capability 4: owned copies of one channel's parameters.
    pub fn export_parameters(&self, marker: &str) -> Result<ParameterExport> {
        let channel = self.channel(marker)?;
        Ok(ParameterExport {
            marker: marker.to_string(),
            hidden_labels: channel.hidden_labels().to_vec(),
            symbol_labels: channel.symbol_labels().to_vec(),
            transition: channel.transition().clone(),
            emission: channel.emission().clone(),
            initial: channel.initial().clone(),
        })
    }
}
