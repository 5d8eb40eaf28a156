//! Exhaustive enumeration over all `N^T` state sequences. Exponential by
//! construction; it exists as the independent oracle the DP implementations
//! are checked against.

use super::CategoricalHmm;
use crate::error::{Error, Result};

const PATH_LIMIT: f64 = 1e7;

/// Total observation likelihood (sum over every state sequence of the joint
/// probability) and the argmax sequence under lexicographic tie-break.
///
/// Path scores for the argmax are accumulated in log space with the exact
/// same association as the Viterbi recurrence, `(score + ln a) + ln b`, so
/// the two algorithms compare bit-identical values.
pub fn brute_force(hmm: &CategoricalHmm, obs: &[usize]) -> Result<(f64, Vec<usize>)> {
    hmm.check_obs(obs)?;
    let n = hmm.num_hidden();
    let t_len = obs.len();
    let paths = (n as f64).powi(t_len as i32);
    if paths > PATH_LIMIT {
        return Err(Error::Capacity {
            paths,
            limit: PATH_LIMIT,
        });
    }

    let a = hmm.transition();
    let b = hmm.emission();
    let pi = hmm.initial();

    let mut likelihood = 0.0;
    let mut best_score = f64::NEG_INFINITY;
    let mut best_path = vec![0usize; t_len];

    // Odometer over state indices; most significant digit first gives
    // lexicographic order, so the first strict maximum is the tie-break
    // winner.
    let mut path = vec![0usize; t_len];
    loop {
        let mut prob = pi[path[0]] * b[(path[0], obs[0])];
        let mut score = pi[path[0]].ln() + b[(path[0], obs[0])].ln();
        for t in 1..t_len {
            let (i, j) = (path[t - 1], path[t]);
            prob = (prob * a[(i, j)]) * b[(j, obs[t])];
            score = (score + a[(i, j)].ln()) + b[(j, obs[t])].ln();
        }
        likelihood += prob;
        if score > best_score {
            best_score = score;
            best_path.copy_from_slice(&path);
        }

        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok((likelihood, best_path));
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < n {
                break;
            }
            path[pos] = 0;
        }
    }
}
