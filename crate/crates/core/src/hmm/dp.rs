//! Dynamic-programming kernels: scaled forward/backward passes, smoothed
//! posteriors, Viterbi decoding, and power-iteration extrapolation.

use ndarray::{Array1, Array2};

use super::{BackwardLattice, CategoricalHmm, ForwardLattice, PosteriorMatrix, ViterbiResult};
use crate::error::{Error, Result};

/// Scaled forward pass. `floor` is applied to emission probabilities inside
/// the recurrence only (0.0 for the exact pass, [`super::EMISSION_FLOOR`]
/// for query-time evaluation).
pub(crate) fn forward_scaled(
    hmm: &CategoricalHmm,
    obs: &[usize],
    floor: f64,
) -> Result<ForwardLattice> {
    hmm.check_obs(obs)?;
    let n = hmm.num_hidden();
    let t_len = obs.len();
    let a = hmm.transition();
    let b = hmm.emission();
    let pi = hmm.initial();
    let emit = |i: usize, o: usize| b[(i, o)].max(floor);

    let mut alphas = Array2::<f64>::zeros((t_len, n));
    let mut scalers = Vec::with_capacity(t_len);
    let mut log_likelihood = 0.0;

    for t in 0..t_len {
        let mut norm = 0.0;
        if t == 0 {
            for i in 0..n {
                let v = pi[i] * emit(i, obs[0]);
                alphas[(0, i)] = v;
                norm += v;
            }
        } else {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += alphas[(t - 1, i)] * a[(i, j)];
                }
                let v = acc * emit(j, obs[t]);
                alphas[(t, j)] = v;
                norm += v;
            }
        }
        if norm <= 0.0 {
            return Err(Error::DecodeFailure { step: t });
        }
        for i in 0..n {
            alphas[(t, i)] /= norm;
        }
        scalers.push(norm);
        log_likelihood += norm.ln();
    }

    Ok(ForwardLattice {
        alphas,
        scalers,
        log_likelihood,
    })
}

/// Forward pass over an observation sequence: per-step normalized alpha
/// lattice, the normalizers, and the sequence log-likelihood.
pub fn forward(hmm: &CategoricalHmm, obs: &[usize]) -> Result<ForwardLattice> {
    forward_scaled(hmm, obs, 0.0)
}

pub(crate) fn backward_scaled(
    hmm: &CategoricalHmm,
    obs: &[usize],
    scalers: &[f64],
    floor: f64,
) -> Result<BackwardLattice> {
    hmm.check_obs(obs)?;
    if scalers.len() != obs.len() {
        return Err(Error::InvalidInput(format!(
            "{} scalers for {} observation steps",
            scalers.len(),
            obs.len()
        )));
    }
    let n = hmm.num_hidden();
    let t_len = obs.len();
    let a = hmm.transition();
    let b = hmm.emission();
    let emit = |i: usize, o: usize| b[(i, o)].max(floor);

    let mut betas = Array2::<f64>::zeros((t_len, n));
    for i in 0..n {
        betas[(t_len - 1, i)] = 1.0 / scalers[t_len - 1];
    }
    for t in (0..t_len - 1).rev() {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[(i, j)] * emit(j, obs[t + 1]) * betas[(t + 1, j)];
            }
            betas[(t, i)] = acc / scalers[t];
        }
    }
    Ok(BackwardLattice { betas })
}

/// Backward pass scaled by the normalizers of the paired forward lattice.
pub fn backward(hmm: &CategoricalHmm, obs: &[usize], scalers: &[f64]) -> Result<BackwardLattice> {
    backward_scaled(hmm, obs, scalers, 0.0)
}

pub(crate) fn posteriors_with_floor(
    hmm: &CategoricalHmm,
    obs: &[usize],
    floor: f64,
) -> Result<PosteriorMatrix> {
    let fwd = forward_scaled(hmm, obs, floor)?;
    let bwd = backward_scaled(hmm, obs, &fwd.scalers, floor)?;
    let n = hmm.num_hidden();
    let t_len = obs.len();
    let mut gammas = Array2::<f64>::zeros((t_len, n));
    for t in 0..t_len {
        let mut norm = 0.0;
        for i in 0..n {
            let g = fwd.alphas[(t, i)] * bwd.betas[(t, i)];
            gammas[(t, i)] = g;
            norm += g;
        }
        if norm <= 0.0 {
            return Err(Error::DecodeFailure { step: t });
        }
        for i in 0..n {
            gammas[(t, i)] /= norm;
        }
    }
    Ok(PosteriorMatrix { gammas })
}

/// Smoothed state posteriors: row `t` is the renormalized product of forward
/// and backward values at step `t`.
pub fn posteriors(hmm: &CategoricalHmm, obs: &[usize]) -> Result<PosteriorMatrix> {
    posteriors_with_floor(hmm, obs, 0.0)
}

/// Log-space Viterbi over precomputed per-step emission scores. Shared by
/// single-model decoding and the mixture's pooled decoding. Ties at every
/// argmax break toward the lowest state index.
pub(crate) fn viterbi_kernel(
    log_initial: &Array1<f64>,
    log_transition: &Array2<f64>,
    log_scores: &Array2<f64>,
) -> Result<ViterbiResult> {
    let t_len = log_scores.nrows();
    let n = log_scores.ncols();
    let mut deltas = Array2::<f64>::from_elem((t_len, n), f64::NEG_INFINITY);
    let mut backpointers = Array2::<usize>::zeros((t_len, n));

    for i in 0..n {
        deltas[(0, i)] = log_initial[i] + log_scores[(0, i)];
    }
    if (0..n).all(|i| deltas[(0, i)] == f64::NEG_INFINITY) {
        return Err(Error::DecodeFailure { step: 0 });
    }
    for t in 1..t_len {
        let mut any_finite = false;
        for j in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_i = 0;
            for i in 0..n {
                let cand = deltas[(t - 1, i)] + log_transition[(i, j)];
                if cand > best {
                    best = cand;
                    best_i = i;
                }
            }
            deltas[(t, j)] = best + log_scores[(t, j)];
            backpointers[(t, j)] = best_i;
            any_finite |= deltas[(t, j)] > f64::NEG_INFINITY;
        }
        if !any_finite {
            return Err(Error::DecodeFailure { step: t });
        }
    }

    let mut best = f64::NEG_INFINITY;
    let mut last = 0;
    for i in 0..n {
        if deltas[(t_len - 1, i)] > best {
            best = deltas[(t_len - 1, i)];
            last = i;
        }
    }
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = last;
    for t in (0..t_len - 1).rev() {
        path[t] = backpointers[(t + 1, path[t + 1])];
    }
    Ok(ViterbiResult {
        path,
        log_prob: best,
        backpointers,
    })
}

/// Most likely hidden state sequence for an observation, with its log joint
/// probability.
pub fn viterbi(hmm: &CategoricalHmm, obs: &[usize]) -> Result<ViterbiResult> {
    hmm.check_obs(obs)?;
    let n = hmm.num_hidden();
    let log_initial = hmm.initial().mapv(f64::ln);
    let log_transition = hmm.transition().mapv(f64::ln);
    let b = hmm.emission();
    let log_scores =
        Array2::from_shape_fn((obs.len(), n), |(t, i)| b[(i, obs[t])].ln());
    viterbi_kernel(&log_initial, &log_transition, &log_scores)
}

/// Push a state distribution `k` steps through the transition matrix,
/// returning one row per step: row `j` is `dist * A^(j+1)`. Large `k`
/// approximates a stationary distribution by power iteration.
pub fn extrapolate(hmm: &CategoricalHmm, dist: &Array1<f64>, steps: usize) -> Result<Array2<f64>> {
    let n = hmm.num_hidden();
    if dist.len() != n {
        return Err(Error::InvalidInput(format!(
            "distribution has length {}, expected {n}",
            dist.len()
        )));
    }
    if dist.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidInput(
            "distribution has a negative entry".into(),
        ));
    }
    let sum: f64 = dist.sum();
    if (sum - 1.0).abs() > super::STOCHASTIC_TOL {
        return Err(Error::InvalidInput(format!(
            "distribution sums to {sum}, not 1"
        )));
    }
    let a = hmm.transition();
    let mut out = Array2::<f64>::zeros((steps, n));
    let mut current = dist.clone();
    for step in 0..steps {
        let next = current.dot(a);
        out.row_mut(step).assign(&next);
        current = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::fix1;
    use super::super::{brute_force, EMISSION_FLOOR};
    use super::*;
    use ndarray::{arr1, arr2};

    fn unscaled_beta(lattice: &BackwardLattice, scalers: &[f64], t: usize, i: usize) -> f64 {
        let tail: f64 = scalers[t..].iter().product();
        lattice.betas()[(t, i)] * tail
    }

    #[test]
    fn forward_matches_oracle_on_fixture() {
        let hmm = fix1();
        for obs in [vec![0], vec![0, 1], vec![1, 1, 0, 1]] {
            let (oracle, _) = brute_force(&hmm, &obs).unwrap();
            let lattice = forward(&hmm, &obs).unwrap();
            assert!(
                (lattice.log_likelihood().exp() - oracle).abs() / oracle < 1e-12,
                "obs {obs:?}"
            );
        }
        let lattice = forward(&hmm, &[0]).unwrap();
        assert!((lattice.log_likelihood().exp() - 0.62).abs() < 1e-12);
        let lattice = forward(&hmm, &[0, 1]).unwrap();
        assert!((lattice.log_likelihood().exp() - 0.2090).abs() < 1e-12);
    }

    #[test]
    fn forward_rows_are_normalized() {
        let hmm = fix1();
        let lattice = forward(&hmm, &[0, 1, 1, 0]).unwrap();
        for row in lattice.alphas().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        let log_from_scalers: f64 = lattice.scalers().iter().map(|c| c.ln()).sum();
        assert_eq!(lattice.log_likelihood(), log_from_scalers);
    }

    #[test]
    fn degenerate_single_state_likelihood_is_emission_product() {
        let hmm = CategoricalHmm::with_default_labels(
            arr2(&[[1.0]]),
            arr2(&[[0.3, 0.7]]),
            arr1(&[1.0]),
        )
        .unwrap();
        let lattice = forward(&hmm, &[1, 1, 0]).unwrap();
        assert!((lattice.log_likelihood().exp() - 0.7 * 0.7 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_empty_and_out_of_range() {
        let hmm = fix1();
        assert!(matches!(forward(&hmm, &[]), Err(Error::InvalidInput(_))));
        assert!(matches!(
            forward(&hmm, &[0, 3]),
            Err(Error::Encoding { position: 1, .. })
        ));
    }

    #[test]
    fn backward_hand_induction_on_fixture() {
        let hmm = fix1();
        let obs = [0usize, 1];
        let fwd = forward(&hmm, &obs).unwrap();
        let bwd = backward(&hmm, &obs, fwd.scalers()).unwrap();
        // beta_1(i) = sum_j a_ij b_j(V1): [0.31, 0.52] by hand.
        assert!((unscaled_beta(&bwd, fwd.scalers(), 0, 0) - 0.31).abs() < 1e-12);
        assert!((unscaled_beta(&bwd, fwd.scalers(), 0, 1) - 0.52).abs() < 1e-12);
        // Consistency with the forward oracle: sum_i pi_i b_i(V0) beta_1(i).
        let p = 0.54 * unscaled_beta(&bwd, fwd.scalers(), 0, 0)
            + 0.08 * unscaled_beta(&bwd, fwd.scalers(), 0, 1);
        assert!((p - 0.2090).abs() < 1e-12);
    }

    #[test]
    fn backward_reconstructs_likelihood_at_every_step() {
        let hmm = fix1();
        let obs = [0usize, 1, 1, 0, 1];
        let fwd = forward(&hmm, &obs).unwrap();
        let bwd = backward(&hmm, &obs, fwd.scalers()).unwrap();
        let p = fwd.log_likelihood().exp();
        for t in 0..obs.len() {
            let head: f64 = fwd.scalers()[..=t].iter().product();
            let recon: f64 = (0..2)
                .map(|i| fwd.alphas()[(t, i)] * head * unscaled_beta(&bwd, fwd.scalers(), t, i))
                .sum();
            assert!((recon - p).abs() / p < 1e-9, "t={t}");
        }
    }

    #[test]
    fn backward_initialization_row_is_one_over_last_scaler() {
        let hmm = fix1();
        let obs = [1usize];
        let fwd = forward(&hmm, &obs).unwrap();
        let bwd = backward(&hmm, &obs, fwd.scalers()).unwrap();
        for i in 0..2 {
            assert!((unscaled_beta(&bwd, fwd.scalers(), 0, i) - 1.0).abs() < 1e-12);
            assert_eq!(bwd.betas()[(0, i)], 1.0 / fwd.scalers()[0]);
        }
    }

    #[test]
    fn backward_rejects_scaler_length_mismatch() {
        let hmm = fix1();
        assert!(matches!(
            backward(&hmm, &[0, 1], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn posteriors_match_hand_values() {
        let hmm = fix1();
        let post = posteriors(&hmm, &[0, 1]).unwrap();
        // alpha_1 beta_1 / 0.2090 and alpha_2 / 0.2090 by hand.
        assert!((post.gammas()[(0, 0)] - 0.1674 / 0.2090).abs() < 1e-12);
        assert!((post.gammas()[(0, 1)] - 0.0416 / 0.2090).abs() < 1e-12);
        assert!((post.gammas()[(1, 0)] - 0.041 / 0.2090).abs() < 1e-12);
        assert!((post.gammas()[(1, 1)] - 0.168 / 0.2090).abs() < 1e-12);
        assert!((post.gammas()[(0, 0)] - 0.8010).abs() < 1e-4);
        assert!((post.gammas()[(0, 1)] - 0.1990).abs() < 1e-4);
        assert!((post.gammas()[(1, 0)] - 0.1962).abs() < 1e-4);
        assert!((post.gammas()[(1, 1)] - 0.8038).abs() < 1e-4);

        let single = posteriors(&hmm, &[0]).unwrap();
        assert!((single.gammas()[(0, 0)] - 0.54 / 0.62).abs() < 1e-12);
        assert!((single.gammas()[(0, 1)] - 0.08 / 0.62).abs() < 1e-12);
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let hmm = fix1();
        let post = posteriors(&hmm, &[1, 0, 0, 1, 1]).unwrap();
        for row in post.gammas().rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn viterbi_matches_oracle_on_fixture() {
        let hmm = fix1();
        let res = viterbi(&hmm, &[0, 1]).unwrap();
        assert_eq!(res.path, vec![0, 1]);
        assert!((res.log_prob.exp() - 0.1296).abs() < 1e-12);
        let res = viterbi(&hmm, &[0]).unwrap();
        assert_eq!(res.path, vec![0]);

        let (_, oracle_path) = brute_force(&hmm, &[1, 0, 1, 1, 0]).unwrap();
        let res = viterbi(&hmm, &[1, 0, 1, 1, 0]).unwrap();
        assert_eq!(res.path, oracle_path);
    }

    #[test]
    fn deterministic_emissions_reveal_states() {
        let hmm = CategoricalHmm::with_default_labels(
            arr2(&[[0.5, 0.5], [0.5, 0.5]]),
            arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            arr1(&[0.5, 0.5]),
        )
        .unwrap();
        let obs = [0usize, 1, 1, 0];
        let res = viterbi(&hmm, &obs).unwrap();
        assert_eq!(res.path, obs.to_vec());
    }

    #[test]
    fn viterbi_reports_impossible_step() {
        // Symbol V1 cannot be emitted from any reachable state.
        let hmm = CategoricalHmm::with_default_labels(
            arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            arr2(&[[1.0, 0.0], [1.0, 0.0]]),
            arr1(&[1.0, 0.0]),
        )
        .unwrap();
        match viterbi(&hmm, &[0, 1, 0]) {
            Err(Error::DecodeFailure { step }) => assert_eq!(step, 1),
            other => panic!("expected decode failure, got {other:?}"),
        }
    }

    #[test]
    fn viterbi_path_has_positive_transitions() {
        let hmm = CategoricalHmm::with_default_labels(
            arr2(&[[0.0, 1.0], [1.0, 0.0]]),
            arr2(&[[0.8, 0.2], [0.2, 0.8]]),
            arr1(&[0.5, 0.5]),
        )
        .unwrap();
        let res = viterbi(&hmm, &[0, 0, 0, 0]).unwrap();
        for w in res.path.windows(2) {
            assert!(hmm.transition()[(w[0], w[1])] > 0.0);
        }
    }

    #[test]
    fn floored_forward_survives_zero_emission() {
        let hmm = CategoricalHmm::with_default_labels(
            arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            arr2(&[[1.0, 0.0], [1.0, 0.0]]),
            arr1(&[1.0, 0.0]),
        )
        .unwrap();
        assert!(forward(&hmm, &[0, 1]).is_err());
        let lattice = forward_scaled(&hmm, &[0, 1], EMISSION_FLOOR).unwrap();
        assert!(lattice.log_likelihood().is_finite());
    }

    #[test]
    fn extrapolate_single_step_and_identity() {
        let hmm = fix1();
        let out = extrapolate(&hmm, &arr1(&[1.0, 0.0]), 1).unwrap();
        assert!((out[(0, 0)] - 0.7).abs() < 1e-15);
        assert!((out[(0, 1)] - 0.3).abs() < 1e-15);

        let id = CategoricalHmm::with_default_labels(
            arr2(&[[1.0, 0.0], [0.0, 1.0]]),
            arr2(&[[0.9, 0.1], [0.2, 0.8]]),
            arr1(&[0.5, 0.5]),
        )
        .unwrap();
        let d = arr1(&[0.25, 0.75]);
        let out = extrapolate(&id, &d, 5).unwrap();
        for row in out.rows() {
            assert_eq!(row[0], 0.25);
            assert_eq!(row[1], 0.75);
        }
    }

    #[test]
    fn extrapolate_converges_to_stationary_distribution() {
        let hmm = fix1();
        let out = extrapolate(&hmm, &arr1(&[1.0, 0.0]), 200).unwrap();
        let last = out.row(199);
        // Fixed point of A: (4/7, 3/7).
        assert!((last[0] - 4.0 / 7.0).abs() < 1e-6);
        assert!((last[1] - 3.0 / 7.0).abs() < 1e-6);
        for row in out.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn extrapolate_rejects_unnormalized_distribution() {
        let hmm = fix1();
        assert!(matches!(
            extrapolate(&hmm, &arr1(&[0.5, 0.4]), 1),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            extrapolate(&hmm, &arr1(&[1.2, -0.2]), 1),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn extrapolate_zero_steps_returns_empty() {
        let hmm = fix1();
        let out = extrapolate(&hmm, &arr1(&[0.6, 0.4]), 0).unwrap();
        assert_eq!(out.nrows(), 0);
    }
}
