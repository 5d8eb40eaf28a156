//! Categorical hidden Markov models and the three classical inference
//! problems: sequence likelihood (scaled forward pass), optimal state
//! decoding (Viterbi), and parameter re-estimation (Baum-Welch), plus
//! stationary-distribution extrapolation and an exhaustive-enumeration
//! oracle for testing.
//!
//! All lattices are kept in the scaled representation: forward rows are
//! normalized per step, the per-step normalizers are retained, and
//! likelihoods are only ever exposed in log space. Raw probability products
//! underflow within a few hundred steps; the scaled scheme does not.

mod brute;
mod dp;
mod train;

pub use brute::brute_force;
pub use dp::{backward, extrapolate, forward, posteriors, viterbi};
pub use train::{baum_welch, baum_welch_trace};

pub(crate) use dp::{forward_scaled, posteriors_with_floor, viterbi_kernel};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for stochasticity checks on rows of `A`, `B`, and `pi`.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Floor applied to emission probabilities inside query-time DP kernels so a
/// single unseen symbol degrades a prediction instead of annihilating it.
/// The stored matrices are never modified.
pub const EMISSION_FLOOR: f64 = 1e-12;

/// A fully parameterized HMM over discrete hidden states and emission
/// symbols. Immutable after construction; every row of `transition` and
/// `emission` and the `initial` vector are validated as probability
/// distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalHmm {
    transition: Array2<f64>,
    emission: Array2<f64>,
    initial: Array1<f64>,
    hidden_labels: Vec<String>,
    symbol_labels: Vec<String>,
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in row {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::InvalidModel(format!(
                "{what} has entry {x} outside [0, 1]"
            )));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidModel(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn check_unique(labels: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for l in labels {
        if !seen.insert(l) {
            return Err(Error::InvalidModel(format!("duplicate {what} label `{l}`")));
        }
    }
    Ok(())
}

impl CategoricalHmm {
    pub fn new(
        transition: Array2<f64>,
        emission: Array2<f64>,
        initial: Array1<f64>,
        hidden_labels: Vec<String>,
        symbol_labels: Vec<String>,
    ) -> Result<Self> {
        let n = transition.nrows();
        let m = emission.ncols();
        if n == 0 || m == 0 {
            return Err(Error::InvalidModel(
                "model needs at least one hidden state and one symbol".into(),
            ));
        }
        if transition.ncols() != n {
            return Err(Error::InvalidModel(format!(
                "transition matrix is {}x{}, expected square",
                n,
                transition.ncols()
            )));
        }
        if emission.nrows() != n {
            return Err(Error::InvalidModel(format!(
                "emission matrix has {} rows, expected {n}",
                emission.nrows()
            )));
        }
        if initial.len() != n {
            return Err(Error::InvalidModel(format!(
                "initial vector has length {}, expected {n}",
                initial.len()
            )));
        }
        if hidden_labels.len() != n || symbol_labels.len() != m {
            return Err(Error::InvalidModel(format!(
                "label lists have lengths {}/{}, expected {n}/{m}",
                hidden_labels.len(),
                symbol_labels.len()
            )));
        }
        for (i, row) in transition.rows().into_iter().enumerate() {
            check_distribution(row.as_slice().unwrap(), &format!("transition row {i}"))?;
        }
        for (i, row) in emission.rows().into_iter().enumerate() {
            check_distribution(row.as_slice().unwrap(), &format!("emission row {i}"))?;
        }
        check_distribution(initial.as_slice().unwrap(), "initial distribution")?;
        check_unique(&hidden_labels, "hidden state")?;
        check_unique(&symbol_labels, "symbol")?;
        Ok(Self {
            transition,
            emission,
            initial,
            hidden_labels,
            symbol_labels,
        })
    }

    /// Convenience constructor with generated labels `S0..` / `V0..`.
    pub fn with_default_labels(
        transition: Array2<f64>,
        emission: Array2<f64>,
        initial: Array1<f64>,
    ) -> Result<Self> {
        let n = transition.nrows();
        let m = emission.ncols();
        Self::new(
            transition,
            emission,
            initial,
            (0..n).map(|i| format!("S{i}")).collect(),
            (0..m).map(|k| format!("V{k}")).collect(),
        )
    }

    pub fn num_hidden(&self) -> usize {
        self.transition.nrows()
    }

    pub fn num_symbols(&self) -> usize {
        self.emission.ncols()
    }

    pub fn transition(&self) -> &Array2<f64> {
        &self.transition
    }

    pub fn emission(&self) -> &Array2<f64> {
        &self.emission
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    pub fn hidden_labels(&self) -> &[String] {
        &self.hidden_labels
    }

    pub fn symbol_labels(&self) -> &[String] {
        &self.symbol_labels
    }

    /// Check every symbol index against the alphabet, naming the first
    /// offending position.
    pub(crate) fn check_obs(&self, obs: &[usize]) -> Result<()> {
        if obs.is_empty() {
            return Err(Error::InvalidInput("empty observation sequence".into()));
        }
        let m = self.num_symbols();
        for (position, &symbol) in obs.iter().enumerate() {
            if symbol >= m {
                return Err(Error::Encoding {
                    position,
                    symbol,
                    alphabet_size: m,
                });
            }
        }
        Ok(())
    }
}

/// Scaled forward lattice. `alphas` rows are per-step normalized, `scalers`
/// holds the per-step normalizers `c_t`, and the sequence log-likelihood is
/// the sum of their logs.
#[derive(Debug, Clone)]
pub struct ForwardLattice {
    pub(crate) alphas: Array2<f64>,
    pub(crate) scalers: Vec<f64>,
    pub(crate) log_likelihood: f64,
}

impl ForwardLattice {
    /// T x N matrix of per-step normalized forward values (each row is the
    /// filtered state distribution at that step).
    pub fn alphas(&self) -> &Array2<f64> {
        &self.alphas
    }

    /// Per-step normalizers `c_t > 0`.
    pub fn scalers(&self) -> &[f64] {
        &self.scalers
    }

    /// log P[observation | model] = sum of log c_t.
    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }
}

/// Backward lattice scaled by the same `c_t` as the paired forward lattice:
/// row `t` holds `beta_t(i) / prod_{s>=t} c_s`, so the final row is the
/// constant `1/c_T`.
#[derive(Debug, Clone)]
pub struct BackwardLattice {
    pub(crate) betas: Array2<f64>,
}

impl BackwardLattice {
    pub fn betas(&self) -> &Array2<f64> {
        &self.betas
    }
}

/// Smoothed state posteriors: row `t` is the distribution over hidden states
/// at step `t` given the whole observation sequence.
#[derive(Debug, Clone)]
pub struct PosteriorMatrix {
    pub(crate) gammas: Array2<f64>,
}

impl PosteriorMatrix {
    pub fn gammas(&self) -> &Array2<f64> {
        &self.gammas
    }
}

/// Best state sequence with its log joint probability and the backpointer
/// table used to recover it.
#[derive(Debug, Clone)]
pub struct ViterbiResult {
    pub path: Vec<usize>,
    pub log_prob: f64,
    pub backpointers: Array2<usize>,
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use ndarray::{arr1, arr2};

    /// Two hidden states {H0, H1}, two symbols {V0, V1}. Used throughout the
    /// test suite; all numeric expectations below were confirmed against the
    /// exhaustive-enumeration oracle first.
    pub fn fix1() -> CategoricalHmm {
        CategoricalHmm::new(
            arr2(&[[0.7, 0.3], [0.4, 0.6]]),
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            arr1(&[0.6, 0.4]),
            vec!["H0".into(), "H1".into()],
            vec!["V0".into(), "V1".into()],
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::fix1;
    use super::*;
    use ndarray::{arr1, arr2};

    #[test]
    fn rejects_non_stochastic_transition_row() {
        let err = CategoricalHmm::with_default_labels(
            arr2(&[[0.7, 0.2], [0.4, 0.6]]),
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            arr1(&[0.6, 0.4]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)), "{err}");
    }

    #[test]
    fn rejects_negative_entry() {
        let err = CategoricalHmm::with_default_labels(
            arr2(&[[1.1, -0.1], [0.4, 0.6]]),
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            arr1(&[0.6, 0.4]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn rejects_duplicate_labels() {
        let err = CategoricalHmm::new(
            arr2(&[[0.7, 0.3], [0.4, 0.6]]),
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            arr1(&[0.6, 0.4]),
            vec!["H0".into(), "H0".into()],
            vec!["V0".into(), "V1".into()],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn rejects_shape_mismatch() {
        let err = CategoricalHmm::with_default_labels(
            arr2(&[[0.7, 0.3], [0.4, 0.6]]),
            arr2(&[[0.9, 0.1]]),
            arr1(&[0.6, 0.4]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }

    #[test]
    fn accepts_tolerance_level_rounding() {
        // Row sums a hair off 1.0 from float arithmetic must pass.
        let third = 1.0 / 3.0;
        let hmm = CategoricalHmm::with_default_labels(
            arr2(&[[third, third, third], [0.5, 0.25, 0.25], [0.2, 0.3, 0.5]]),
            arr2(&[[1.0], [1.0], [1.0]]),
            arr1(&[third, third, third]),
        );
        assert!(hmm.is_ok());
    }

    #[test]
    fn obs_validation_names_offending_position() {
        let hmm = fix1();
        match hmm.check_obs(&[0, 1, 2]) {
            Err(Error::Encoding {
                position, symbol, ..
            }) => {
                assert_eq!(position, 2);
                assert_eq!(symbol, 2);
            }
            other => panic!("expected encoding error, got {other:?}"),
        }
        assert!(matches!(
            hmm.check_obs(&[]),
            Err(Error::InvalidInput(_))
        ));
    }
}
