//! Parameter extraction: build each channel HMM directly from labeled
//! trails instead of training it. The hidden marker's observed states are
//! taken as the hidden state sequence, so transition, emission, and initial
//! probabilities are plain (optionally smoothed) count ratios.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::hmm::CategoricalHmm;
use crate::ingest::Dataset;

/// Rows of additive-smoothed count ratios; zero-count rows fall back to
/// uniform when there is no smoothing mass either.
fn rows_to_stochastic(counts: &Array2<f64>, alpha: f64) -> Array2<f64> {
    let (n, m) = counts.dim();
    let mut out = Array2::<f64>::zeros((n, m));
    for i in 0..n {
        let total: f64 = counts.row(i).sum() + alpha * m as f64;
        if total > 0.0 {
            for j in 0..m {
                out[(i, j)] = ((counts[(i, j)] + alpha) / total).clamp(0.0, 1.0);
            }
        } else {
            out.row_mut(i).fill(1.0 / m as f64);
        }
    }
    out
}

/// Count hidden-state evidence shared by every channel of one hidden marker:
/// transition counts within subjects and initial-state counts over first
/// visits.
fn hidden_counts(dataset: &Dataset, hidden_marker: &str, n: usize) -> (Array2<f64>, Array1<f64>) {
    let mut transitions = Array2::<f64>::zeros((n, n));
    let mut initials = Array1::<f64>::zeros(n);
    for record in dataset.subjects.values() {
        let states = &record.trails[hidden_marker].states;
        if let Some(&first) = states.first() {
            initials[first] += 1.0;
        }
        for w in states.windows(2) {
            transitions[(w[0], w[1])] += 1.0;
        }
    }
    (transitions, initials)
}

/// Extract a channel HMM for `observed_marker` with the states of
/// `hidden_marker` as hidden states. `smoothing` is the additive count added
/// to every cell (0 reproduces exact empirical frequencies).
pub fn extract_parameters(
    dataset: &Dataset,
    hidden_marker: &str,
    observed_marker: &str,
    smoothing: f64,
) -> Result<CategoricalHmm> {
    if smoothing < 0.0 || !smoothing.is_finite() {
        return Err(Error::InvalidInput(format!(
            "smoothing must be finite and >= 0, got {smoothing}"
        )));
    }
    let hidden_alphabet = dataset.alphabet(hidden_marker)?.to_vec();
    let symbol_alphabet = dataset.alphabet(observed_marker)?.to_vec();
    let n = hidden_alphabet.len();
    let m = symbol_alphabet.len();
    if dataset.subjects.is_empty() {
        return Err(Error::Estimation(format!(
            "no subjects carry both `{hidden_marker}` and `{observed_marker}`"
        )));
    }
    if n < 2 {
        return Err(Error::DegenerateModel(format!(
            "hidden marker `{hidden_marker}` has {n} observed state(s); need at least 2"
        )));
    }

    let (transition_counts, initial_counts) = hidden_counts(dataset, hidden_marker, n);

    let mut emission_counts = Array2::<f64>::zeros((n, m));
    for record in dataset.subjects.values() {
        let hidden = &record.trails[hidden_marker].states;
        let observed = &record.trails[observed_marker].states;
        for (&h, &o) in hidden.iter().zip(observed) {
            emission_counts[(h, o)] += 1.0;
        }
    }

    let transition = rows_to_stochastic(&transition_counts, smoothing);
    let emission = rows_to_stochastic(&emission_counts, smoothing);
    let num_subjects = dataset.subjects.len() as f64;
    let initial = Array1::from_iter(
        initial_counts
            .iter()
            .map(|&c| ((c + smoothing) / (num_subjects + smoothing * n as f64)).clamp(0.0, 1.0)),
    );

    CategoricalHmm::new(transition, emission, initial, hidden_alphabet, symbol_alphabet)
}

/// One channel HMM per configured non-hidden marker. All channels share the
/// hidden alphabet, transition matrix, and initial distribution; only the
/// emission matrix differs.
pub fn build_all(
    dataset: &Dataset,
    config: &PipelineConfig,
    hidden_marker: &str,
    smoothing: f64,
) -> Result<BTreeMap<String, CategoricalHmm>> {
    config.marker(hidden_marker)?;
    let mut channels = BTreeMap::new();
    for marker in config.markers.keys() {
        if marker == hidden_marker {
            continue;
        }
        channels.insert(
            marker.clone(),
            extract_parameters(dataset, hidden_marker, marker, smoothing)?,
        );
    }
    if channels.is_empty() {
        return Err(Error::Estimation(format!(
            "config declares no observed markers besides `{hidden_marker}`"
        )));
    }
    Ok(channels)
}
