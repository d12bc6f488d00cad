//! Exact tabular oracles: value iteration and policy evaluation on
//! explicitly enumerated MDPs. These are test and audit tools, kept fully
//! independent of the function-approximation training path they are used to
//! check.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("discount must satisfy 0 <= gamma < 1, got {0}")]
    BadGamma(f64),
    #[error("malformed mdp: {0}")]
    Malformed(String),
}

/// An MDP given by explicit transition and reward tables.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transitions[s][a]` lists `(next_state, probability)`; each list sums
    /// to one.
    pub transitions: Vec<Vec<Vec<(usize, f64)>>>,
    /// Expected immediate reward `rewards[s][a]`.
    pub rewards: Vec<Vec<f64>>,
}

impl TabularMdp {
    fn check(&self) -> Result<(), TabularError> {
        if self.transitions.len() != self.num_states || self.rewards.len() != self.num_states {
            return Err(TabularError::Malformed("table size mismatch".into()));
        }
        for s in 0..self.num_states {
            if self.transitions[s].len() != self.num_actions
                || self.rewards[s].len() != self.num_actions
            {
                return Err(TabularError::Malformed(format!(
                    "state {s}: action count mismatch"
                )));
            }
            for a in 0..self.num_actions {
                let mass: f64 = self.transitions[s][a].iter().map(|&(_, p)| p).sum();
                if (mass - 1.0).abs() > 1e-9 {
                    return Err(TabularError::Malformed(format!(
                        "state {s} action {a}: probabilities sum to {mass}"
                    )));
                }
                if self.transitions[s][a]
                    .iter()
                    .any(|&(ns, p)| ns >= self.num_states || p < 0.0)
                {
                    return Err(TabularError::Malformed(format!(
                        "state {s} action {a}: bad transition entry"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    /// Optimal state-action values.
    pub q: Vec<Vec<f64>>,
    /// Greedy action per state, ties broken toward the lowest index.
    pub greedy: Vec<usize>,
    pub sweeps: usize,
}

fn greedy_of(q_row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in q_row.iter().enumerate().skip(1) {
        if v > q_row[best] {
            best = i;
        }
    }
    best
}

/// Iterate the Bellman optimality operator until the sup-norm change drops
/// below `tol`.
pub fn value_iteration(
    mdp: &TabularMdp,
    gamma: f64,
    tol: f64,
) -> Result<ValueIterationResult, TabularError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(TabularError::BadGamma(gamma));
    }
    mdp.check()?;
    let mut q = vec![vec![0.0; mdp.num_actions]; mdp.num_states];
    let mut sweeps = 0usize;
    loop {
        sweeps += 1;
        let v: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta = 0.0f64;
        for s in 0..mdp.num_states {
            for a in 0..mdp.num_actions {
                let mut next = mdp.rewards[s][a];
                for &(ns, p) in &mdp.transitions[s][a] {
                    next += gamma * p * v[ns];
                }
                delta = delta.max((next - q[s][a]).abs());
                q[s][a] = next;
            }
        }
        if delta < tol || sweeps > 1_000_000 {
            break;
        }
    }
    let greedy = q.iter().map(|row| greedy_of(row)).collect();
    Ok(ValueIterationResult { q, greedy, sweeps })
}

/// Evaluate a stochastic policy `policy[s][a]` by iterating the Bellman
/// expectation operator until the sup-norm change drops below `tol`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &[Vec<f64>],
    gamma: f64,
    tol: f64,
) -> Result<Vec<f64>, TabularError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(TabularError::BadGamma(gamma));
    }
    mdp.check()?;
    if policy.len() != mdp.num_states {
        return Err(TabularError::Malformed("policy size mismatch".into()));
    }
    for (s, row) in policy.iter().enumerate() {
        let mass: f64 = row.iter().sum();
        if row.len() != mdp.num_actions || (mass - 1.0).abs() > 1e-9 {
            return Err(TabularError::Malformed(format!(
                "policy row {s} is not a distribution"
            )));
        }
    }
    let mut v = vec![0.0; mdp.num_states];
    loop {
        let mut delta = 0.0f64;
        let prev = v.clone();
        for s in 0..mdp.num_states {
            let mut val = 0.0;
            for a in 0..mdp.num_actions {
                let pi = policy[s][a];
                if pi == 0.0 {
                    continue;
                }
                let mut qa = mdp.rewards[s][a];
                for &(ns, p) in &mdp.transitions[s][a] {
                    qa += gamma * p * prev[ns];
                }
                val += pi * qa;
            }
            delta = delta.max((val - v[s]).abs());
            v[s] = val;
        }
        if delta < tol {
            break;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_state_two_actions(r0: f64, r1: f64) -> TabularMdp {
        TabularMdp {
            num_states: 1,
            num_actions: 2,
            transitions: vec![vec![vec![(0, 1.0)], vec![(0, 1.0)]]],
            rewards: vec![vec![r0, r1]],
        }
    }

    #[test]
    fn geometric_series_closed_form() {
        // Rewards (0, 1) at gamma = 0.5: the best action earns 1 every step,
        // so V = 1 / (1 - 0.5) = 2 and Q = (0 + 0.5 V, 1 + 0.5 V) = (1, 2).
        let mdp = single_state_two_actions(0.0, 1.0);
        let r = value_iteration(&mdp, 0.5, 1e-12).unwrap();
        assert!((r.q[0][0] - 1.0).abs() < 1e-9);
        assert!((r.q[0][1] - 2.0).abs() < 1e-9);
        assert_eq!(r.greedy, vec![1]);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mdp = single_state_two_actions(0.0, 0.0);
        let r = value_iteration(&mdp, 0.9, 1e-12).unwrap();
        assert!(r.q.iter().flatten().all(|&q| q.abs() < 1e-9));
    }

    #[test]
    fn constant_reward_shift_preserves_greedy_and_shifts_values() {
        let gamma = 0.7;
        let c = 3.25;
        let base = single_state_two_actions(0.4, 1.1);
        let shifted = single_state_two_actions(0.4 + c, 1.1 + c);
        let rb = value_iteration(&base, gamma, 1e-13).unwrap();
        let rs = value_iteration(&shifted, gamma, 1e-13).unwrap();
        assert_eq!(rb.greedy, rs.greedy);
        for a in 0..2 {
            let shift = rs.q[0][a] - rb.q[0][a];
            assert!(
                (shift - c / (1.0 - gamma)).abs() < 1e-6,
                "shift {shift} vs {}",
                c / (1.0 - gamma)
            );
        }
    }

    #[test]
    fn gamma_one_rejected() {
        let mdp = single_state_two_actions(0.0, 1.0);
        assert!(matches!(
            value_iteration(&mdp, 1.0, 1e-9),
            Err(TabularError::BadGamma(_))
        ));
    }

    #[test]
    fn policy_evaluation_matches_hand_computation() {
        // Single state, always take action 1 earning 1: V = 1 / (1 - gamma).
        let mdp = single_state_two_actions(0.0, 1.0);
        let v = policy_evaluation(&mdp, &[vec![0.0, 1.0]], 0.5, 1e-13).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-9);
        // 50/50 mixture earns 0.5 per step.
        let v = policy_evaluation(&mdp, &[vec![0.5, 0.5]], 0.5, 1e-13).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn greedy_policy_value_dominates_any_stochastic_policy() {
        let mdp = TabularMdp {
            num_states: 2,
            num_actions: 2,
            transitions: vec![
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
                vec![vec![(0, 1.0)], vec![(1, 1.0)]],
            ],
            rewards: vec![vec![0.0, 1.0], vec![2.0, -1.0]],
        };
        let r = value_iteration(&mdp, 0.8, 1e-13).unwrap();
        let mut greedy = vec![vec![0.0; 2]; 2];
        for s in 0..2 {
            greedy[s][r.greedy[s]] = 1.0;
        }
        let v_star = policy_evaluation(&mdp, &greedy, 0.8, 1e-13).unwrap();
        let v_unif = policy_evaluation(&mdp, &[vec![0.5, 0.5], vec![0.5, 0.5]], 0.8, 1e-13).unwrap();
        for s in 0..2 {
            assert!(v_star[s] >= v_unif[s] - 1e-9);
        }
    }
}
