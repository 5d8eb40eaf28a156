//! Baum-Welch re-estimation with the multiple-sequence extension: expected
//! counts are summed across all sequences before each update.

use ndarray::{Array1, Array2};

use super::dp::{backward_scaled, forward_scaled};
use super::CategoricalHmm;
use crate::error::{Error, Result};

/// Iteratively re-estimate `(A, B, pi)` to raise the total log-likelihood of
/// the observation corpus. Stops when the per-iteration improvement drops
/// below `tol` or after `max_iter` updates.
pub fn baum_welch(
    init: &CategoricalHmm,
    obs_set: &[Vec<usize>],
    max_iter: usize,
    tol: f64,
) -> Result<CategoricalHmm> {
    baum_welch_trace(init, obs_set, max_iter, tol).map(|(model, _)| model)
}

/// Like [`baum_welch`] but also returns the corpus log-likelihood evaluated
/// before each update, in iteration order. The trace is what monotonicity
/// checks inspect.
pub fn baum_welch_trace(
    init: &CategoricalHmm,
    obs_set: &[Vec<usize>],
    max_iter: usize,
    tol: f64,
) -> Result<(CategoricalHmm, Vec<f64>)> {
    if obs_set.is_empty() {
        return Err(Error::InvalidInput("empty observation corpus".into()));
    }
    for obs in obs_set {
        init.check_obs(obs)?;
    }
    check_observable(init, obs_set)?;

    let n = init.num_hidden();
    let m = init.num_symbols();
    let mut model = init.clone();
    let mut trace = Vec::new();

    for _ in 0..max_iter {
        let a = model.transition().clone();
        let b = model.emission().clone();

        let mut pi_acc = Array1::<f64>::zeros(n);
        let mut a_num = Array2::<f64>::zeros((n, n));
        let mut a_den = Array1::<f64>::zeros(n);
        let mut b_num = Array2::<f64>::zeros((n, m));
        let mut b_den = Array1::<f64>::zeros(n);
        let mut total_ll = 0.0;

        for obs in obs_set {
            let fwd = forward_scaled(&model, obs, 0.0)?;
            let bwd = backward_scaled(&model, obs, fwd.scalers(), 0.0)?;
            total_ll += fwd.log_likelihood();
            let t_len = obs.len();

            for t in 0..t_len {
                // Per-step smoothed posterior.
                let mut norm = 0.0;
                let mut gamma = vec![0.0; n];
                for i in 0..n {
                    gamma[i] = fwd.alphas[(t, i)] * bwd.betas[(t, i)];
                    norm += gamma[i];
                }
                for g in &mut gamma {
                    *g /= norm;
                }
                for i in 0..n {
                    if t == 0 {
                        pi_acc[i] += gamma[i];
                    }
                    if t + 1 < t_len {
                        a_den[i] += gamma[i];
                    }
                    b_num[(i, obs[t])] += gamma[i];
                    b_den[i] += gamma[i];
                }
                // Expected transition counts; with this scaling the xi terms
                // are already normalized per step.
                if t + 1 < t_len {
                    for i in 0..n {
                        for j in 0..n {
                            a_num[(i, j)] += fwd.alphas[(t, i)]
                                * a[(i, j)]
                                * b[(j, obs[t + 1])]
                                * bwd.betas[(t + 1, j)];
                        }
                    }
                }
            }
        }

        if let Some(&prev) = trace.last() {
            if total_ll - prev < tol {
                trace.push(total_ll);
                break;
            }
        }
        trace.push(total_ll);

        let new_pi = normalize_or_uniform(pi_acc.as_slice().unwrap());
        let mut new_a = Array2::<f64>::zeros((n, n));
        let mut new_b = Array2::<f64>::zeros((n, m));
        for i in 0..n {
            let a_row: Vec<f64> = if a_den[i] > 0.0 {
                (0..n).map(|j| a_num[(i, j)] / a_den[i]).collect()
            } else {
                vec![0.0; n]
            };
            new_a.row_mut(i).assign(&Array1::from(normalize_or_uniform(&a_row)));
            let b_row: Vec<f64> = if b_den[i] > 0.0 {
                (0..m).map(|k| b_num[(i, k)] / b_den[i]).collect()
            } else {
                vec![0.0; m]
            };
            new_b.row_mut(i).assign(&Array1::from(normalize_or_uniform(&b_row)));
        }

        model = CategoricalHmm::new(
            new_a,
            new_b,
            Array1::from(new_pi),
            model.hidden_labels().to_vec(),
            model.symbol_labels().to_vec(),
        )?;
    }

    Ok((model, trace))
}

/// Every symbol that occurs in the corpus must be emittable by at least one
/// state of the initial model, otherwise its likelihood is identically zero
/// and EM has no gradient to follow.
fn check_observable(init: &CategoricalHmm, obs_set: &[Vec<usize>]) -> Result<()> {
    let b = init.emission();
    let mut seen = vec![false; init.num_symbols()];
    for obs in obs_set {
        for &o in obs {
            seen[o] = true;
        }
    }
    for (k, &used) in seen.iter().enumerate() {
        if used && (0..init.num_hidden()).all(|i| b[(i, k)] == 0.0) {
            return Err(Error::TrainingDegeneracy(format!(
                "symbol `{}` occurs in the corpus but no state can emit it",
                init.symbol_labels()[k]
            )));
        }
    }
    Ok(())
}

/// Divide by the sum, falling back to uniform when there is no mass, and
/// clamp away any rounding excursions outside [0, 1].
fn normalize_or_uniform(row: &[f64]) -> Vec<f64> {
    let sum: f64 = row.iter().sum();
    if sum > 0.0 {
        row.iter().map(|&x| (x / sum).clamp(0.0, 1.0)).collect()
    } else {
        vec![1.0 / row.len() as f64; row.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::fix1;
    use super::*;
    use ndarray::{arr1, arr2};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_sequence(hmm: &CategoricalHmm, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let pick = |dist: &[f64], rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, &p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            dist.len() - 1
        };
        let mut state = pick(hmm.initial().as_slice().unwrap(), rng);
        let mut obs = Vec::with_capacity(len);
        for t in 0..len {
            if t > 0 {
                state = pick(hmm.transition().row(state).as_slice().unwrap(), rng);
            }
            obs.push(pick(hmm.emission().row(state).as_slice().unwrap(), rng));
        }
        obs
    }

    fn corpus_ll(hmm: &CategoricalHmm, obs_set: &[Vec<usize>]) -> f64 {
        obs_set
            .iter()
            .map(|o| super::super::forward(hmm, o).unwrap().log_likelihood())
            .sum()
    }

    #[test]
    fn log_likelihood_is_monotone_from_true_model() {
        let hmm = fix1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let corpus: Vec<Vec<usize>> = (0..20).map(|_| sample_sequence(&hmm, 12, &mut rng)).collect();
        let (_, trace) = baum_welch_trace(&hmm, &corpus, 25, 0.0).unwrap();
        assert!(trace.len() > 1);
        for w in trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-9, "likelihood dropped: {w:?}");
        }
    }

    #[test]
    fn single_state_converges_to_symbol_frequencies() {
        let init = CategoricalHmm::with_default_labels(
            arr2(&[[1.0]]),
            arr2(&[[0.5, 0.5]]),
            arr1(&[1.0]),
        )
        .unwrap();
        let trained = baum_welch(&init, &[vec![0, 0, 0, 0]], 10, 1e-12).unwrap();
        assert!((trained.emission()[(0, 0)] - 1.0).abs() < 1e-9);
        assert!(trained.emission()[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn training_improves_a_perturbed_model() {
        let truth = fix1();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let corpus: Vec<Vec<usize>> = (0..40).map(|_| sample_sequence(&truth, 15, &mut rng)).collect();
        let init = CategoricalHmm::new(
            arr2(&[[0.5, 0.5], [0.5, 0.5]]),
            arr2(&[[0.8, 0.2], [0.3, 0.7]]),
            arr1(&[0.5, 0.5]),
            truth.hidden_labels().to_vec(),
            truth.symbol_labels().to_vec(),
        )
        .unwrap();
        let before = corpus_ll(&init, &corpus);
        let trained = baum_welch(&init, &corpus, 50, 1e-9).unwrap();
        let after = corpus_ll(&trained, &corpus);
        assert!(after > before, "{after} <= {before}");
        // Output still satisfies all model invariants.
        for row in trained.transition().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        for row in trained.emission().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert!((trained.initial().sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn recovers_generator_transitions_up_to_relabeling() {
        let truth = fix1();
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        // ~10^4 total steps.
        let corpus: Vec<Vec<usize>> = (0..100).map(|_| sample_sequence(&truth, 100, &mut rng)).collect();
        // Truth perturbed by +-0.05, rows still stochastic.
        let init = CategoricalHmm::new(
            arr2(&[[0.75, 0.25], [0.35, 0.65]]),
            arr2(&[[0.85, 0.15], [0.25, 0.75]]),
            arr1(&[0.55, 0.45]),
            truth.hidden_labels().to_vec(),
            truth.symbol_labels().to_vec(),
        )
        .unwrap();
        let trained = baum_welch(&init, &corpus, 100, 1e-7).unwrap();
        // Best alignment over the two possible state relabelings.
        let direct = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (trained.transition()[(i, j)] - truth.transition()[(i, j)]).abs())
            .fold(0.0f64, f64::max);
        let swapped = (0..2)
            .flat_map(|i| (0..2).map(move |j| (i, j)))
            .map(|(i, j)| (trained.transition()[(1 - i, 1 - j)] - truth.transition()[(i, j)]).abs())
            .fold(0.0f64, f64::max);
        assert!(
            direct.min(swapped) <= 0.05,
            "L-inf {} / {}",
            direct,
            swapped
        );
    }

    #[test]
    fn unobservable_symbol_is_a_degeneracy_error() {
        let init = CategoricalHmm::with_default_labels(
            arr2(&[[0.7, 0.3], [0.4, 0.6]]),
            arr2(&[[1.0, 0.0], [1.0, 0.0]]),
            arr1(&[0.5, 0.5]),
        )
        .unwrap();
        assert!(matches!(
            baum_welch(&init, &[vec![0, 1, 0]], 5, 1e-6),
            Err(Error::TrainingDegeneracy(_))
        ));
    }

    #[test]
    fn rejects_empty_corpus() {
        let hmm = fix1();
        assert!(matches!(
            baum_welch(&hmm, &[], 5, 1e-6),
            Err(Error::InvalidInput(_))
        ));
    }
}
