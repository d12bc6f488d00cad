//! The physical process of interest: a finite-state Markov chain stepped once
//! per slot. From any state it stays put with probability `alpha` and moves
//! to each specific other state with probability `(1 - alpha) / (n - 1)`.

use rand::Rng;

use crate::rng::Stream;

#[derive(Debug, Clone)]
pub struct ProcessChain {
    pub num_states: usize,
    pub alpha: f64,
    pub current: usize,
}

impl ProcessChain {
    pub fn new(num_states: usize, alpha: f64, start: usize) -> Self {
        assert!(num_states >= 2, "chain needs at least two states");
        assert!((0.0..=1.0).contains(&alpha), "alpha out of range");
        assert!(start < num_states);
        Self {
            num_states,
            alpha,
            current: start,
        }
    }

    /// Start from a uniformly drawn state.
    pub fn with_uniform_start(num_states: usize, alpha: f64, rng: &mut Stream) -> Self {
        let start = rng.random_range(0..num_states);
        Self::new(num_states, alpha, start)
    }

    /// One transition row of the chain.
    pub fn transition_row(&self, from: usize) -> Vec<f64> {
        assert!(from < self.num_states);
        let other = (1.0 - self.alpha) / (self.num_states - 1) as f64;
        (0..self.num_states)
            .map(|to| if to == from { self.alpha } else { other })
            .collect()
    }

    /// Sample the next state and advance the chain.
    pub fn step(&mut self, rng: &mut Stream) -> usize {
        let u: f64 = rng.random();
        if u >= self.alpha {
            // Map the remaining mass uniformly onto the other n-1 states.
            let v = (u - self.alpha) / (1.0 - self.alpha);
            let mut idx = (v * (self.num_states - 1) as f64) as usize;
            if idx >= self.num_states - 1 {
                idx = self.num_states - 2;
            }
            // Skip over the current state.
            self.current = if idx < self.current { idx } else { idx + 1 };
        }
        self.current
    }
}

/// Long-run occupancy of the chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Stationary {
    /// The unique stationary distribution.
    Unique(Vec<f64>),
    /// `alpha = 1`: every distribution is stationary.
    Any,
}

/// For `alpha < 1` the chain is doubly stochastic and irreducible, so the
/// stationary distribution is uniform; for `alpha = 1` it is not unique.
pub fn stationary_distribution(num_states: usize, alpha: f64) -> Stationary {
    assert!(num_states >= 2);
    assert!((0.0..=1.0).contains(&alpha));
    if alpha == 1.0 {
        Stationary::Any
    } else {
        Stationary::Unique(vec![1.0 / num_states as f64; num_states])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;

    #[test]
    fn rows_are_stochastic_and_positive_for_paper_setup() {
        let chain = ProcessChain::new(9, 0.3, 0);
        for from in 0..9 {
            let row = chain.transition_row(from);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-15, "row {from} sums to {sum}");
            assert!(row.iter().all(|&p| p > 0.0), "row {from} has a zero entry");
        }
    }

    #[test]
    fn absorbing_when_alpha_is_one() {
        let mut chain = ProcessChain::new(9, 1.0, 3);
        let mut rng = derive_stream(0, "process-test", 0);
        for _ in 0..1000 {
            assert_eq!(chain.step(&mut rng), 3);
        }
    }

    #[test]
    fn transition_frequencies_match_the_row_within_multinomial_bands() {
        // alpha = 0.5 over 9 states: stay 0.5, each other 0.0625. The test
        // computes the exact multinomial standard deviation per cell and
        // allows 4 sigma.
        let mut rng = derive_stream(1, "process-test", 0);
        let n_steps = 1_000_000usize;
        let alpha = 0.5;
        let num_states = 9;
        let mut counts = vec![0u64; num_states];
        let mut from_zero = 0u64;
        let mut chain = ProcessChain::new(num_states, alpha, 0);
        for _ in 0..n_steps {
            let before = chain.current;
            let after = chain.step(&mut rng);
            if before == 0 {
                from_zero += 1;
                counts[after] += 1;
            }
        }
        assert!(from_zero > 50_000, "not enough visits to state 0");
        let n = from_zero as f64;
        for (to, &c) in counts.iter().enumerate() {
            let p = if to == 0 { alpha } else { (1.0 - alpha) / 8.0 };
            let sigma = (n * p * (1.0 - p)).sqrt();
            let dev = (c as f64 - n * p).abs();
            assert!(
                dev <= 4.0 * sigma,
                "cell 0->{to}: count {c}, expected {:.1} +- {:.1}",
                n * p,
                4.0 * sigma
            );
        }
    }

    #[test]
    fn long_run_occupancy_is_uniform_within_one_percent() {
        let mut rng = derive_stream(2, "process-test", 0);
        let mut chain = ProcessChain::new(9, 0.3, 4);
        let n_steps = 1_000_000usize;
        let mut occupancy = vec![0u64; 9];
        for _ in 0..n_steps {
            occupancy[chain.step(&mut rng)] += 1;
        }
        let Stationary::Unique(pi) = stationary_distribution(9, 0.3) else {
            panic!("expected unique stationary distribution");
        };
        for (s, &c) in occupancy.iter().enumerate() {
            let freq = c as f64 / n_steps as f64;
            assert!(
                (freq - pi[s]).abs() / pi[s] < 0.01,
                "state {s}: occupancy {freq:.5} vs {:.5}",
                pi[s]
            );
        }
    }

    #[test]
    fn stationary_cases() {
        assert_eq!(
            stationary_distribution(2, 0.5),
            Stationary::Unique(vec![0.5, 0.5])
        );
        let Stationary::Unique(pi) = stationary_distribution(9, 0.3) else {
            panic!()
        };
        assert!(pi.iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
        assert_eq!(stationary_distribution(9, 1.0), Stationary::Any);
    }

    #[test]
    fn alpha_zero_always_switches() {
        let mut chain = ProcessChain::new(9, 0.0, 2);
        let mut rng = derive_stream(3, "process-test", 0);
        for _ in 0..1000 {
            let before = chain.current;
            let after = chain.step(&mut rng);
            assert_ne!(before, after);
        }
    }
}
