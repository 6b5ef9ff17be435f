//! Pseudo-random system selection that evens out exposure.
//!
//! Each candidate is drawn with probability proportional to
//! `1 / (1 + assignments so far)`, so systems that have seen fewer sessions
//! are favoured until the counts level out.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::SystemId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("no candidate systems to select from")]
    EmptyCandidates,
}

#[derive(Debug, Clone)]
pub struct SelectionPolicy {
    seed: u64,
    rng: ChaCha8Rng,
    assignment_counts: BTreeMap<SystemId, u64>,
}

impl SelectionPolicy {
    /// A replayable policy. `None` draws the seed from OS entropy; the chosen
    /// seed is still available through [`SelectionPolicy::seed`].
    pub fn new(seed: Option<u64>) -> Self {
        let seed = seed.unwrap_or_else(rand::random);
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed), assignment_counts: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_counts(mut self, counts: impl IntoIterator<Item = (SystemId, u64)>) -> Self {
        self.assignment_counts.extend(counts);
        self
    }

    pub fn count(&self, system: &SystemId) -> u64 {
        self.assignment_counts.get(system).copied().unwrap_or(0)
    }

    pub fn assignment_counts(&self) -> &BTreeMap<SystemId, u64> {
        &self.assignment_counts
    }

    /// Weight of a candidate under the current counts.
    pub fn weight(&self, system: &SystemId) -> f64 {
        1.0 / (1.0 + self.count(system) as f64)
    }

    /// Draws a candidate without recording the assignment.
    pub fn draw(&mut self, candidates: &[SystemId]) -> Result<SystemId, SelectionError> {
        match candidates {
            [] => Err(SelectionError::EmptyCandidates),
            [only] => Ok(only.clone()),
            _ => {
                let weights: Vec<f64> = candidates.iter().map(|c| self.weight(c)).collect();
                let total: f64 = weights.iter().sum();
                let mut target = self.rng.random::<f64>() * total;
                for (candidate, w) in candidates.iter().zip(&weights) {
                    if target < *w {
                        return Ok(candidate.clone());
                    }
                    target -= w;
                }
                Ok(candidates[candidates.len() - 1].clone())
            }
        }
    }

    /// Draws a candidate and increments its assignment count.
    pub fn select(&mut self, candidates: &[SystemId]) -> Result<SystemId, SelectionError> {
        let winner = self.draw(candidates)?;
        *self.assignment_counts.entry(winner.clone()).or_insert(0) += 1;
        Ok(winner)
    }

    /// All candidates in the order successive draws would try them, without
    /// recording assignments.
    pub fn ordering(&mut self, candidates: &[SystemId]) -> Vec<SystemId> {
        let mut remaining = candidates.to_vec();
        let mut out = Vec::with_capacity(remaining.len());
        while let Ok(next) = self.draw(&remaining) {
            remaining.retain(|c| c != &next);
            out.push(next);
        }
        out
    }
}

/// Free-function form of [`SelectionPolicy::select`].
pub fn select_system(candidates: &[SystemId], policy: &mut SelectionPolicy) -> Result<SystemId, SelectionError> {
    policy.select(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ids(names: &[&str]) -> Vec<SystemId> {
        names.iter().map(|n| SystemId::from(*n)).collect()
    }

    #[test]
    fn singleton_and_empty() {
        let mut p = SelectionPolicy::new(Some(1)).with_counts([("a".into(), 50)]);
        assert_eq!(p.select(&ids(&["a"])).unwrap(), "a".into());
        assert_eq!(p.count(&"a".into()), 51);
        assert_eq!(p.select(&[]), Err(SelectionError::EmptyCandidates));
    }

    #[test]
    fn two_fresh_systems_stay_balanced() {
        let mut p = SelectionPolicy::new(Some(7));
        let c = ids(&["a", "b"]);
        for _ in 0..10_000 {
            p.select(&c).unwrap();
        }
        let a = p.count(&"a".into()) as i64;
        let b = p.count(&"b".into()) as i64;
        assert_eq!(a + b, 10_000);
        assert!((a - b).abs() <= 600, "a={a} b={b}");
    }

    #[test]
    fn fixed_counts_favour_the_underexposed_system() {
        // With counts frozen at {A:100, B:0}, P(B) = 1 / (1/101 + 1) = 101/102 per draw,
        // so the expected number of B wins in 1000 draws is about 990.
        let mut p = SelectionPolicy::new(Some(99)).with_counts([("A".into(), 100)]);
        let c = ids(&["A", "B"]);
        let b_wins = (0..1000).filter(|_| p.draw(&c).unwrap() == "B".into()).count();
        assert!(b_wins >= 950, "{b_wins}");
        assert_eq!(p.count(&"B".into()), 0);
    }

    #[test]
    fn same_seed_replays() {
        let c = ids(&["a", "b", "c"]);
        let run = |seed| {
            let mut p = SelectionPolicy::new(Some(seed));
            (0..50).map(|_| p.select(&c).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn ordering_is_a_permutation() {
        let mut p = SelectionPolicy::new(Some(5));
        let c = ids(&["a", "b", "c", "d"]);
        let mut order = p.ordering(&c);
        assert!(p.assignment_counts().is_empty());
        order.sort();
        assert_eq!(order, c);
    }

    proptest! {
        #[test]
        fn counts_within_four_sqrt_n(seed in any::<u64>(), m in 2usize..6, n in 100usize..3000) {
            let names: Vec<String> = (0..m).map(|i| format!("s{i}")).collect();
            let c: Vec<SystemId> = names.iter().map(|s| SystemId::new(s.clone())).collect();
            let mut p = SelectionPolicy::new(Some(seed));
            for _ in 0..n {
                p.select(&c).unwrap();
            }
            let expected = n as f64 / m as f64;
            let bound = 4.0 * (n as f64).sqrt();
            for id in &c {
                let got = p.count(id) as f64;
                prop_assert!((got - expected).abs() <= bound, "{id}: {got} vs {expected}");
            }
        }
    }
}
