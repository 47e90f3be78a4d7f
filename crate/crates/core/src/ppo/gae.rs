use super::PpoError;

/// Generalized advantage estimates for one environment's trajectory.
///
/// `values` holds one more entry than `rewards`: the last is the bootstrap
/// value of the state after the final step. A `done` step does not bootstrap
/// and cuts the advantage recursion.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if dones.len() != n || values.len() != n + 1 {
        return Err(PpoError::LengthMismatch(format!(
            "{n} rewards, {} dones, {} values (expected {})",
            dones.len(),
            values.len(),
            n + 1
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct sum over the trajectory, independent of the backward recursion.
    fn brute_force_lambda_one(rewards: &[f64], values: &[f64], gamma: f64) -> Vec<f64> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                let discounted: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
                discounted + gamma.powi((n - t) as i32) * values[n] - values[t]
            })
            .collect()
    }

    /// Weighted mixture of k-step returns, truncated at episode ends.
    fn brute_force_general(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = rewards.len();
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                let mut weight = 1.0;
                for k in t..n {
                    let discount = gamma.powi((k - t) as i32);
                    let next = if dones[k] { 0.0 } else { values[k + 1] };
                    let delta = rewards[k] + gamma * next - values[k];
                    total += weight * discount * delta;
                    if dones[k] {
                        break;
                    }
                    weight *= lambda;
                }
                total
            })
            .collect()
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let r = [1.0, 2.0, 3.0];
        let v = [0.5, 0.25, 1.0, 2.0];
        let (a, ret) = compute_gae(&r, &v, &[false; 3], 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert_eq!(a[t], r[t] + 0.9 * v[t + 1] - v[t]);
            assert_eq!(ret[t], a[t] + v[t]);
        }
    }

    #[test]
    fn done_blocks_bootstrap() {
        let (a, _) = compute_gae(&[1.0, 5.0], &[0.3, 7.0, 9.0], &[true, false], 0.99, 0.0).unwrap();
        assert_eq!(a[0], 1.0 - 0.3);
        let (a, _) = compute_gae(&[1.0, 5.0], &[0.3, 7.0, 9.0], &[true, false], 0.99, 0.95).unwrap();
        assert_eq!(a[0], 1.0 - 0.3);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        assert!(matches!(compute_gae(&[1.0], &[0.0], &[false], 0.9, 0.9), Err(PpoError::LengthMismatch(_))));
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[], 0.9, 0.9).is_err());
    }

    proptest! {
        #[test]
        fn lambda_one_matches_discounted_sum(
            rewards in prop::collection::vec(-2.0f64..2.0, 10),
            values in prop::collection::vec(-5.0f64..5.0, 11),
            gamma in 0.5f64..1.0,
        ) {
            let (a, _) = compute_gae(&rewards, &values, &[false; 10], gamma, 1.0).unwrap();
            let oracle = brute_force_lambda_one(&rewards, &values, gamma);
            for (x, y) in a.iter().zip(&oracle) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }

        #[test]
        fn matches_truncated_mixture(
            rewards in prop::collection::vec(-2.0f64..2.0, 10),
            values in prop::collection::vec(-5.0f64..5.0, 11),
            dones in prop::collection::vec(prop::bool::weighted(0.2), 10),
            gamma in 0.5f64..1.0,
            lambda in 0.0f64..1.0,
        ) {
            let (a, ret) = compute_gae(&rewards, &values, &dones, gamma, lambda).unwrap();
            let oracle = brute_force_general(&rewards, &values, &dones, gamma, lambda);
            for t in 0..10 {
                prop_assert!((a[t] - oracle[t]).abs() < 1e-6);
                prop_assert!((ret[t] - a[t] - values[t]).abs() < 1e-12);
            }
        }
    }
}
