//! CSV summaries of a trial ledger: one table per trial and one per layer
//! (best-profile value and its mean over the five best trials), so ratio- or
//! bit-width-versus-depth patterns can be inspected.

use std::path::Path;

use crate::error::Result;
use crate::search::{load_ledger, TrialRecord};

pub const TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub feasible: bool,
    pub ppl: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerRow {
    pub layer: usize,
    pub best: f64,
    pub top_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Report {
    pub trials: Vec<TrialRow>,
    pub layers: Vec<LayerRow>,
}

pub fn build_report(records: &[TrialRecord]) -> Report {
    let trials = records
        .iter()
        .map(|r| TrialRow {
            trial: r.trial,
            feasible: r.feasible,
            ppl: r.ppl,
        })
        .collect();

    let mut evaluated: Vec<(&TrialRecord, f64)> =
        records.iter().filter_map(|r| r.ppl.map(|p| (r, p))).collect();
    evaluated.sort_by(|a, b| a.1.total_cmp(&b.1));
    let Some(&(best, _)) = evaluated.first() else {
        return Report {
            trials,
            layers: Vec::new(),
        };
    };
    let top = &evaluated[..evaluated.len().min(TOP_K)];

    let layers = best
        .assignment
        .iter()
        .enumerate()
        .map(|(pos, (name, value))| {
            let layer = name
                .strip_prefix('L')
                .and_then(|n| n.parse().ok())
                .unwrap_or(pos);
            let sum: f64 = top
                .iter()
                .map(|(r, _)| r.assignment.iter().find(|(n, _)| n == name).map_or(0.0, |(_, v)| *v))
                .sum();
            LayerRow {
                layer,
                best: *value,
                top_mean: sum / top.len() as f64,
            }
        })
        .collect();
    Report { trials, layers }
}

impl Report {
    pub fn trials_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["trial", "feasible", "ppl"])?;
        for t in &self.trials {
            w.write_record([
                t.trial.to_string(),
                t.feasible.to_string(),
                t.ppl.map(|p| p.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ASCII output"))
    }

    pub fn layers_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["layer", "best", "top5_mean"])?;
        for l in &self.layers {
            w.write_record([l.layer.to_string(), l.best.to_string(), l.top_mean.to_string()])?;
        }
        Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ASCII output"))
    }
}

pub fn emit_report(ledger: impl AsRef<Path>) -> Result<Report> {
    Ok(build_report(&load_ledger(ledger)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(trial: usize, values: &[f64], ppl: Option<f64>) -> TrialRecord {
        TrialRecord {
            trial,
            assignment: values.iter().enumerate().map(|(i, &v)| (format!("L{i}"), v)).collect(),
            feasible: ppl.is_some(),
            ppl,
            seconds: 0.0,
        }
    }

    #[test]
    fn empty_ledger_gives_headers_only() {
        let r = build_report(&[]);
        assert_eq!(r.trials_csv().unwrap(), "trial,feasible,ppl\n");
        assert_eq!(r.layers_csv().unwrap(), "layer,best,top5_mean\n");
    }

    #[test]
    fn single_trial() {
        let r = build_report(&[rec(0, &[0.45, 0.55], Some(9.5))]);
        assert_eq!(r.trials_csv().unwrap(), "trial,feasible,ppl\n0,true,9.5\n");
        assert_eq!(r.layers_csv().unwrap(), "layer,best,top5_mean\n0,0.45,0.45\n1,0.55,0.55\n");
    }

    #[test]
    fn infeasible_rows_have_empty_ppl() {
        let r = build_report(&[rec(0, &[0.4], None)]);
        assert_eq!(r.trials_csv().unwrap(), "trial,feasible,ppl\n0,false,\n");
        assert!(r.layers.is_empty());
    }

    #[test]
    fn top_five_mean() {
        let records: Vec<_> = (0..7)
            .map(|i| rec(i, &[i as f64], Some(10.0 + i as f64)))
            .collect();
        let r = build_report(&records);
        assert_eq!(r.layers, vec![LayerRow { layer: 0, best: 0.0, top_mean: 2.0 }]);
    }
}
