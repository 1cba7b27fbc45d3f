//! Tree-structured Parzen Estimator over discrete, independent dimensions.
//!
//! Observations are split by objective into a good set (the best
//! `ceil(gamma * n)`, at least one) and a bad set. Each dimension gets a
//! Laplace-smoothed categorical density per set, `l(c)` and `g(c)`.
//! Candidates are drawn from `l` and the one maximizing
//! `sum_d log l_d(c) - log g_d(c)` is suggested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::space::SearchSpace;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
    pub alpha: f64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 5,
            n_candidates: 24,
            alpha: 1.0,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::invalid(format!("gamma {} outside (0, 1)", self.gamma)));
        }
        if self.n_startup == 0 || self.n_candidates == 0 {
            return Err(Error::invalid("n_startup and n_candidates must be >= 1"));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return Err(Error::invalid(format!("smoothing alpha {} must be > 0", self.alpha)));
        }
        Ok(())
    }

    /// Size of the good set for `n` observations.
    pub fn n_good(&self, n: usize) -> usize {
        ((self.gamma * n as f64 - 1e-9).ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub assignment: Vec<usize>,
    pub objective: f64,
}

/// Per-dimension categorical probabilities for the good and bad sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Densities {
    pub good: Vec<Vec<f64>>,
    pub bad: Vec<Vec<f64>>,
}

impl Densities {
    /// `sum_d log l_d(c_d) - log g_d(c_d)`
    pub fn score(&self, assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(d, &c)| self.good[d][c].ln() - self.bad[d][c].ln())
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct TpeState {
    config: TpeConfig,
    history: Vec<Observation>,
    rng: ChaCha8Rng,
}

impl TpeState {
    pub fn new(config: TpeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &TpeConfig {
        &self.config
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    /// Appends an evaluated trial. Repeated assignments are kept as separate
    /// observations.
    pub fn observe(&mut self, assignment: Vec<usize>, objective: Option<f64>) -> Result<()> {
        let objective =
            objective.ok_or_else(|| Error::invalid("cannot observe a trial without an objective value"))?;
        if objective.is_nan() {
            return Err(Error::invalid("objective is NaN"));
        }
        self.history.push(Observation { assignment, objective });
        Ok(())
    }

    /// History indices ordered best first; ties keep observation order.
    fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.history.len()).collect();
        idx.sort_by(|&a, &b| self.history[a].objective.total_cmp(&self.history[b].objective));
        idx
    }

    pub fn densities(&self, space: &SearchSpace) -> Result<Densities> {
        let ranked = self.ranked();
        let n_good = self.config.n_good(ranked.len()).min(ranked.len());
        let (good, bad) = ranked.split_at(n_good);
        let alpha = self.config.alpha;
        let build = |members: &[usize]| -> Result<Vec<Vec<f64>>> {
            space
                .dims
                .iter()
                .enumerate()
                .map(|(d, dim)| {
                    let k = dim.choices.len();
                    let mut counts = vec![0f64; k];
                    for &m in members {
                        let a = &self.history[m].assignment;
                        if !space.is_valid_assignment(a) {
                            return Err(Error::invalid(format!(
                                "observed assignment {a:?} does not fit the search space"
                            )));
                        }
                        counts[a[d]] += 1.0;
                    }
                    let denom = members.len() as f64 + alpha * k as f64;
                    Ok(counts.into_iter().map(|c| (c + alpha) / denom).collect())
                })
                .collect()
        };
        Ok(Densities {
            good: build(good)?,
            bad: build(bad)?,
        })
    }

    fn sample_categorical(&mut self, probs: &[f64]) -> usize {
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    pub fn suggest(&mut self, space: &SearchSpace) -> Result<Vec<usize>> {
        if space.dims.is_empty() || space.dims.iter().any(|d| d.choices.is_empty()) {
            return Err(Error::invalid("cannot suggest from an empty search space"));
        }
        if self.history.len() < self.config.n_startup {
            return Ok(space
                .dims
                .iter()
                .map(|d| self.rng.random_range(0..d.choices.len()))
                .collect());
        }

        let dens = self.densities(space)?;
        let mut best: Option<(f64, Vec<usize>)> = None;
        for _ in 0..self.config.n_candidates {
            let cand: Vec<usize> = dens.good.iter().map(|l| self.sample_categorical(l)).collect();
            let score = dens.score(&cand);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, cand));
            }
        }
        Ok(best.expect("n_candidates >= 1").1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::space::{Dim, SpaceKind};

    fn space(dims: usize, k: usize) -> SearchSpace {
        SearchSpace::new(
            SpaceKind::Bandwidth,
            (0..dims)
                .map(|d| Dim {
                    name: format!("d{d}"),
                    choices: (0..k).map(|c| c as f64).collect(),
                    weight: 1.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn good_set_size() {
        let cfg = TpeConfig::default();
        for n in 1..=40usize {
            assert_eq!(cfg.n_good(n), n.div_ceil(4).max(1), "n = {n}");
        }
        let tenth = TpeConfig {
            gamma: 0.1,
            ..TpeConfig::default()
        };
        assert_eq!(tenth.n_good(30), 3);
    }

    #[test]
    fn observe_requires_objective() {
        let mut s = TpeState::new(TpeConfig::default(), 0).unwrap();
        assert!(s.observe(vec![0], None).is_err());
        s.observe(vec![0], Some(1.0)).unwrap();
        s.observe(vec![0], Some(1.0)).unwrap();
        assert_eq!(s.history().len(), 2);
    }

    #[test]
    fn config_validation() {
        let bad = TpeConfig {
            gamma: 1.0,
            ..TpeConfig::default()
        };
        assert!(TpeState::new(bad, 0).is_err());
        let bad = TpeConfig {
            n_candidates: 0,
            ..TpeConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn startup_draws_cover_every_choice() {
        let sp = space(2, 5);
        let mut s = TpeState::new(TpeConfig::default(), 7).unwrap();
        let mut seen = [[false; 5]; 2];
        for _ in 0..200 {
            let a = s.suggest(&sp).unwrap();
            seen[0][a[0]] = true;
            seen[1][a[1]] = true;
        }
        assert!(seen.iter().flatten().all(|&b| b));
    }

    #[test]
    fn model_branch_after_startup() {
        let sp = space(1, 4);
        let mut s = TpeState::new(TpeConfig::default(), 3).unwrap();
        for i in 0..5 {
            s.observe(vec![i % 4], Some(i as f64)).unwrap();
        }
        let d = s.densities(&sp).unwrap();
        // Two good observations (objectives 0, 1 -> choices 0, 1), three bad.
        assert_eq!(d.good[0], vec![2.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0]);
        assert_eq!(d.bad[0], vec![2.0 / 7.0, 1.0 / 7.0, 2.0 / 7.0, 2.0 / 7.0]);
        let a = s.suggest(&sp).unwrap();
        assert_eq!(a, vec![1]);
    }

    #[test]
    fn rejects_foreign_history() {
        let sp = space(2, 3);
        let mut s = TpeState::new(TpeConfig::default(), 0).unwrap();
        for _ in 0..5 {
            s.observe(vec![5, 0], Some(1.0)).unwrap();
        }
        assert!(s.suggest(&sp).is_err());
    }
}
