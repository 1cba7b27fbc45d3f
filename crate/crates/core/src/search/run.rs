use std::collections::HashMap;
use std::time::Instant;

use super::ledger::TrialRecord;
use super::space::{check_feasible, SearchSpace, SpaceKind};
use super::tpe::{TpeConfig, TpeState};
use crate::error::{Error, Result};
use crate::model::{perplexity, CalibrationStats, Checkpoint, KvCacheConfig};
use crate::prune::{apply_profile, Granularity, MetricKind, SparsityProfile};
use crate::quant::BandwidthProfile;

pub const DEFAULT_TRIALS: usize = 50;
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Debug)]
pub struct SearchOptions {
    pub trials: usize,
    pub seed: u64,
    pub tpe: TpeConfig,
    /// Extra suggestions drawn when one is infeasible before the trial slot
    /// is forfeited.
    pub max_redraws: usize,
    /// Write wall-clock seconds into the ledger. Off by default so that a
    /// seed reproduces the ledger byte for byte.
    pub record_timing: bool,
}

impl SearchOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            tpe: TpeConfig::default(),
            max_redraws: MAX_REDRAWS,
            record_timing: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: Vec<usize>,
    pub best_values: Vec<f64>,
    pub best_ppl: f64,
    pub ledger: Vec<TrialRecord>,
    /// Objective evaluations actually run (memoized repeats excluded).
    pub evaluations: usize,
}

impl SearchOutcome {
    pub fn sparsity_profile(&self, overall: f64) -> SparsityProfile {
        SparsityProfile::from_layer_ratios(overall, &self.best_values)
    }

    pub fn bandwidth_profile(&self) -> BandwidthProfile {
        BandwidthProfile {
            bits: self.best_values.iter().map(|&b| b as u8).collect(),
        }
    }
}

/// The trial loop over an arbitrary objective.
///
/// Each slot asks the TPE for an assignment, re-drawing infeasible ones up to
/// `max_redraws` times; a slot that never becomes feasible is logged and
/// skipped. Repeated assignments reuse their earlier value. Lower is better.
pub fn search_loop<F>(space: &SearchSpace, opts: &SearchOptions, mut objective: F) -> Result<SearchOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if opts.trials == 0 {
        return Err(Error::SearchFailed("trial budget must be at least 1".into()));
    }
    let mut tpe = TpeState::new(opts.tpe, opts.seed)?;
    let mut memo: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut ledger = Vec::with_capacity(opts.trials);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluations = 0;

    for trial in 0..opts.trials {
        let start = Instant::now();
        let mut assignment = tpe.suggest(space)?;
        let mut redraws = 0;
        while !check_feasible(space, &assignment) && redraws < opts.max_redraws {
            assignment = tpe.suggest(space)?;
            redraws += 1;
        }
        let values = space.values(&assignment);
        let named: Vec<(String, f64)> = space
            .dims
            .iter()
            .zip(&values)
            .map(|(d, &v)| (d.name.clone(), v))
            .collect();
        let feasible = check_feasible(space, &assignment);

        let ppl = if feasible {
            let ppl = match memo.get(&assignment) {
                Some(&p) => p,
                None => {
                    evaluations += 1;
                    let p = objective(&values)?;
                    // JSON cannot carry inf/NaN; a diverged model is simply worst.
                    let p = if p.is_finite() { p } else { f64::MAX };
                    memo.insert(assignment.clone(), p);
                    p
                }
            };
            tpe.observe(assignment.clone(), Some(ppl))?;
            if best.as_ref().is_none_or(|(b, _)| ppl < *b) {
                best = Some((ppl, assignment.clone()));
            }
            Some(ppl)
        } else {
            None
        };

        ledger.push(TrialRecord {
            trial,
            assignment: named,
            feasible,
            ppl,
            seconds: if opts.record_timing {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }

    let (best_ppl, best) = best.ok_or_else(|| {
        Error::SearchFailed(format!("no feasible assignment found in {} trials", opts.trials))
    })?;
    Ok(SearchOutcome {
        best_values: space.values(&best),
        best,
        best_ppl,
        ledger,
        evaluations,
    })
}

/// What a trial prunes or quantizes before measuring perplexity.
#[derive(Clone, Debug)]
pub enum Objective<'a> {
    /// Per-layer pruning ratios; evaluated under `kv`.
    Sparsity {
        calib: Option<&'a CalibrationStats>,
        metric: MetricKind,
        granularity: Granularity,
        kv: KvCacheConfig,
    },
    /// Per-layer KV bit-widths on an (optionally already pruned) model.
    Bandwidth,
}

/// Perplexity of `model` under one assignment of `space`'s values.
pub fn evaluate_assignment(
    model: &Checkpoint,
    corpus: &[u32],
    ctx: usize,
    space: &SearchSpace,
    objective: &Objective<'_>,
    values: &[f64],
) -> Result<f64> {
    match (objective, &space.kind) {
        (
            Objective::Sparsity {
                calib,
                metric,
                granularity,
                kv,
            },
            SpaceKind::Sparsity { overall },
        ) => {
            let profile = SparsityProfile::from_layer_ratios(*overall, values);
            let (pruned, _) = apply_profile(model, &profile, *calib, *metric, *granularity)?;
            perplexity(&pruned, corpus, kv, ctx)
        }
        (Objective::Bandwidth, SpaceKind::Bandwidth) => {
            let kv = KvCacheConfig::new(values.iter().map(|&b| b as u8).collect())?;
            perplexity(model, corpus, &kv, ctx)
        }
        _ => Err(Error::invalid("objective does not match the search space kind")),
    }
}

/// Searches `space` for the allocation with the lowest perplexity.
pub fn run_search(
    model: &Checkpoint,
    corpus: &[u32],
    ctx: usize,
    space: &SearchSpace,
    objective: &Objective<'_>,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    if space.dims.len() != model.config.n_layers {
        return Err(Error::invalid(format!(
            "search space has {} dimensions, model has {} layers",
            space.dims.len(),
            model.config.n_layers
        )));
    }
    search_loop(space, opts, |values| {
        evaluate_assignment(model, corpus, ctx, space, objective, values)
    })
}

/// Swaps 6-bit and 8-bit layers.
pub fn opposite_profile(p: &BandwidthProfile) -> Result<BandwidthProfile> {
    let bits = p
        .bits
        .iter()
        .map(|&b| match b {
            6 => Ok(8),
            8 => Ok(6),
            other => Err(Error::invalid(format!(
                "opposite profile is defined for 6/8-bit layers only, found {other}"
            ))),
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok(BandwidthProfile { bits })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::space::Dim;

    fn grid_space(dims: usize, k: usize) -> SearchSpace {
        SearchSpace::new(
            SpaceKind::Sparsity { overall: 0.0 },
            (0..dims)
                .map(|d| Dim {
                    name: format!("L{d}"),
                    choices: (0..k).map(|c| c as f64).collect(),
                    weight: 1.0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_trials_fail() {
        let err = search_loop(&grid_space(2, 2), &SearchOptions::new(0, 1), |_| Ok(1.0)).unwrap_err();
        assert!(matches!(err, Error::SearchFailed(_)));
    }

    #[test]
    fn singleton_space_evaluates_once() {
        let space = grid_space(3, 1);
        let mut calls = 0;
        let out = search_loop(&space, &SearchOptions::new(10, 4), |v| {
            calls += 1;
            Ok(v.iter().sum::<f64>() + 2.0)
        })
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(out.evaluations, 1);
        assert_eq!(out.best_values, vec![0.0; 3]);
        assert_eq!(out.best_ppl, 2.0);
        assert_eq!(out.ledger.len(), 10);
        assert!(out.ledger.iter().all(|r| r.ppl == Some(2.0)));
    }

    #[test]
    fn infeasible_everywhere_is_search_failure() {
        let space = SearchSpace::new(
            SpaceKind::Sparsity { overall: 0.9 },
            vec![Dim {
                name: "L0".into(),
                choices: vec![0.1, 0.2],
                weight: 1.0,
            }],
        )
        .unwrap();
        let err = search_loop(&space, &SearchOptions::new(3, 0), |_| Ok(1.0)).unwrap_err();
        assert!(matches!(err, Error::SearchFailed(_)));
    }

    #[test]
    fn forfeited_slots_are_logged_without_ppl() {
        // Only the all-ones assignment meets the budget; without redraws
        // most slots are forfeited.
        let space = SearchSpace::new(
            SpaceKind::Sparsity { overall: 0.9 },
            (0..3)
                .map(|d| Dim {
                    name: format!("L{d}"),
                    choices: vec![0.0, 1.0],
                    weight: 1.0,
                })
                .collect(),
        )
        .unwrap();
        let mut opts = SearchOptions::new(30, 9);
        opts.max_redraws = 0;
        let out = search_loop(&space, &opts, |v| Ok(10.0 - v[0])).unwrap();
        for r in &out.ledger {
            assert_eq!(r.ppl.is_some(), r.feasible);
        }
        assert!(out.ledger.iter().any(|r| !r.feasible));
        assert_eq!(out.ledger.len(), 30);

        // With the default redraw budget and a roomier feasible set every
        // slot finds a feasible draw.
        let space = SearchSpace::new(
            SpaceKind::Sparsity { overall: 0.5 },
            (0..2)
                .map(|d| Dim {
                    name: format!("L{d}"),
                    choices: vec![0.0, 1.0],
                    weight: 1.0,
                })
                .collect(),
        )
        .unwrap();
        let out = search_loop(&space, &SearchOptions::new(30, 9), |v| Ok(10.0 - v[0])).unwrap();
        assert!(out.ledger.iter().all(|r| r.feasible));
        assert_eq!(out.best_values[0], 1.0);
    }

    #[test]
    fn best_is_ledger_minimum() {
        let space = grid_space(4, 5);
        let out = search_loop(&space, &SearchOptions::new(40, 2), |v| {
            Ok(v.iter().map(|x| (x - 2.0).powi(2)).sum::<f64>())
        })
        .unwrap();
        let min = out.ledger.iter().filter_map(|r| r.ppl).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_ppl, min);
        assert!(out.ledger.iter().all(|r| r.feasible));
    }

    #[test]
    fn opposite() {
        let p = BandwidthProfile { bits: vec![8, 6] };
        assert_eq!(opposite_profile(&p).unwrap().bits, vec![6, 8]);
        let q = BandwidthProfile {
            bits: vec![8, 8, 6, 6, 6, 8],
        };
        let o = opposite_profile(&q).unwrap();
        assert_eq!(opposite_profile(&o).unwrap(), q);
        assert_eq!(o.count(8), q.count(6));
        assert!(opposite_profile(&BandwidthProfile { bits: vec![8, 16] }).is_err());
    }
}
