//! Set accounting and cost totals for a cascade run.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CrvError, Result};

/// What happened at one stage across the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub spec: String,
    /// Inputs that reached this stage.
    pub entered: Vec<usize>,
    /// Inputs whose certification happened at this stage.
    pub certified_here: Vec<usize>,
    /// Inputs this stage certifies when run alone, if computed.
    pub standalone: Option<Vec<usize>>,
    /// Sum of per-input stage times over `entered`.
    pub total_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub spec: String,
    pub entries: usize,
    /// `|eligible \ union_{i<j} S_tp_i|`.
    pub expected_entries: usize,
    pub certified_here: usize,
    pub ra_standalone: Option<f64>,
    pub total_time: f64,
    pub mean_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSets {
    pub s_tp: Vec<usize>,
    pub s_fn: Vec<usize>,
    pub s_tn: Vec<usize>,
    pub s_fp: Vec<usize>,
    pub true_robust_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_inputs: usize,
    pub n_eligible: usize,
    pub ra: f64,
    pub certified: Vec<usize>,
    pub stages: Vec<StageMetrics>,
    pub tvc: f64,
    pub tvc_closed_form: f64,
    pub entry_identity: bool,
    /// `RA >= max_i RA_i`, when every stage has a standalone set.
    pub union_bound_holds: Option<bool>,
    pub tightest_mean_time: f64,
    pub delta_t: Option<f64>,
    pub e1: Option<f64>,
    /// `[RA, 1 - E1]`.
    pub tra_interval: Option<(f64, f64)>,
    pub oracle: Option<OracleSets>,
}

pub struct MetricsInput<'a> {
    pub n_inputs: usize,
    /// Inputs that were sent to the first stage.
    pub eligible: &'a [usize],
    pub stages: &'a [StageRecord],
    pub certified: &'a [usize],
    /// Mean per-input time of the tightest verifier run alone; falls back to
    /// the last stage's mean.
    pub reference_mean: Option<f64>,
    /// Inputs on which the attack succeeded.
    pub attack_successes: Option<&'a [usize]>,
    /// Per-input ground truth robustness.
    pub oracle: Option<&'a [bool]>,
}

fn fraction(k: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        k as f64 / n as f64
    }
}

pub fn compute_metrics(input: &MetricsInput<'_>) -> Result<Metrics> {
    let n = input.n_inputs;
    let eligible: BTreeSet<usize> = input.eligible.iter().copied().collect();
    let certified: BTreeSet<usize> = input.certified.iter().copied().collect();
    if !certified.is_subset(&eligible) {
        return Err(CrvError::InvalidQuery(
            "certified inputs must have entered the cascade".into(),
        ));
    }

    let mut stages = Vec::with_capacity(input.stages.len());
    let mut before: BTreeSet<usize> = BTreeSet::new();
    let mut identity = true;
    let (mut tvc, mut tvc_closed) = (0.0, 0.0);
    let mut max_stage_ra: Option<f64> = Some(0.0);
    for rec in input.stages {
        let expected = eligible.difference(&before).count();
        let entries = rec.entered.len();
        identity &= entries == expected;
        let mean = if entries > 0 {
            rec.total_time / entries as f64
        } else {
            0.0
        };
        tvc += rec.total_time;
        tvc_closed += expected as f64 * mean;
        let ra_i = rec.standalone.as_ref().map(|s| fraction(s.len(), n));
        max_stage_ra = match (max_stage_ra, ra_i) {
            (Some(a), Some(b)) => Some(a.max(b)),
            _ => None,
        };
        // Without a standalone set, stage j alone certifies at least what it
        // certified inside the cascade, which is all the identity needs.
        before.extend(rec.standalone.as_deref().unwrap_or(&rec.certified_here));
        stages.push(StageMetrics {
            spec: rec.spec.clone(),
            entries,
            expected_entries: expected,
            certified_here: rec.certified_here.len(),
            ra_standalone: ra_i,
            total_time: rec.total_time,
            mean_time: mean,
        });
    }

    let ra = fraction(certified.len(), n);
    let tightest = input
        .reference_mean
        .unwrap_or_else(|| stages.last().map_or(0.0, |s| s.mean_time));
    let reference_total = eligible.len() as f64 * tightest;
    let delta_t = (reference_total > 0.0).then(|| (reference_total - tvc) / reference_total);
    let e1 = input.attack_successes.map(|s| fraction(s.len(), n));

    let oracle = match input.oracle {
        None => None,
        Some(robust) => {
            if robust.len() != n {
                return Err(CrvError::Dimension(format!(
                    "oracle has {} labels for {n} inputs",
                    robust.len()
                )));
            }
            let mut sets = OracleSets {
                s_tp: vec![],
                s_fn: vec![],
                s_tn: vec![],
                s_fp: vec![],
                true_robust_fraction: fraction(robust.iter().filter(|r| **r).count(), n),
            };
            for (i, &r) in robust.iter().enumerate() {
                match (certified.contains(&i), r) {
                    (true, true) => sets.s_tp.push(i),
                    (false, true) => sets.s_fn.push(i),
                    (false, false) => sets.s_tn.push(i),
                    (true, false) => sets.s_fp.push(i),
                }
            }
            if !sets.s_fp.is_empty() {
                return Err(CrvError::Soundness(format!(
                    "certified inputs {:?} are not robust according to the oracle",
                    sets.s_fp
                )));
            }
            Some(sets)
        }
    };

    Ok(Metrics {
        n_inputs: n,
        n_eligible: eligible.len(),
        ra,
        certified: certified.into_iter().collect(),
        stages,
        tvc,
        tvc_closed_form: tvc_closed,
        entry_identity: identity,
        union_bound_holds: max_stage_ra.map(|m| ra >= m),
        tightest_mean_time: tightest,
        delta_t,
        e1,
        tra_interval: e1.map(|e| (ra, 1.0 - e)),
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stage records for a cascade where stage `j` has mean time `times[j]`
    /// and certifies `certify[j]` of the inputs that reach it.
    fn synthetic(n: usize, times: &[f64], certify: &[usize]) -> (Vec<StageRecord>, Vec<usize>) {
        let mut remaining: Vec<usize> = (0..n).collect();
        let mut records = Vec::new();
        let mut certified = Vec::new();
        for (j, &t) in times.iter().enumerate() {
            let k = certify.get(j).copied().unwrap_or(0).min(remaining.len());
            let here: Vec<usize> = remaining[..k].to_vec();
            records.push(StageRecord {
                spec: format!("stage{j}"),
                entered: remaining.clone(),
                certified_here: here.clone(),
                standalone: None,
                total_time: t * remaining.len() as f64,
            });
            certified.extend(&here);
            remaining.drain(..k);
        }
        (records, certified)
    }

    fn run(n: usize, records: &[StageRecord], certified: &[usize], reference: Option<f64>) -> Metrics {
        let eligible: Vec<usize> = (0..n).collect();
        compute_metrics(&MetricsInput {
            n_inputs: n,
            eligible: &eligible,
            stages: records,
            certified,
            reference_mean: reference,
            attack_successes: None,
            oracle: None,
        })
        .unwrap()
    }

    #[test]
    fn two_stage_tvc() {
        let (records, certified) = synthetic(100, &[1.0, 10.0], &[40]);
        let m = run(100, &records, &certified, None);
        assert_eq!(m.tvc, 700.0);
        assert_eq!(m.tvc_closed_form, 700.0);
        assert!(m.entry_identity);
        assert_eq!(m.stages[1].expected_entries, 60);
    }

    #[test]
    fn three_stage_speedup() {
        let (records, certified) = synthetic(100, &[0.25, 0.5, 1.0], &[40, 40]);
        let m = run(100, &records, &certified, None);
        assert_eq!(m.delta_t, Some(0.25));
        assert_eq!(m.tvc, 75.0);
    }

    #[test]
    fn robust_accuracy_fraction() {
        let (records, certified) = synthetic(100, &[1.0], &[88]);
        let m = run(100, &records, &certified, Some(4.0));
        assert_eq!(m.ra, 0.88);
        assert_eq!(m.delta_t, Some(0.75));
    }

    #[test]
    fn identity_violation_is_reported() {
        let (mut records, certified) = synthetic(10, &[1.0, 2.0], &[4]);
        records[1].entered.push(0);
        assert!(!run(10, &records, &certified, None).entry_identity);
    }

    #[test]
    fn union_bound_and_oracle_sets() {
        let (mut records, certified) = synthetic(6, &[1.0, 2.0], &[2, 2]);
        records[0].standalone = Some(vec![0, 1]);
        records[1].standalone = Some(vec![0, 2, 3]);
        let eligible: Vec<usize> = (0..6).collect();
        let robust = [true, true, true, true, true, false];
        let attacked = [5];
        let input = MetricsInput {
            n_inputs: 6,
            eligible: &eligible,
            stages: &records,
            certified: &certified,
            reference_mean: None,
            attack_successes: Some(&attacked),
            oracle: Some(&robust),
        };
        let m = compute_metrics(&input).unwrap();
        assert_eq!(m.union_bound_holds, Some(true));
        assert!(m.entry_identity);
        let o = m.oracle.unwrap();
        assert_eq!(o.s_tp, vec![0, 1, 2, 3]);
        assert_eq!(o.s_fn, vec![4]);
        assert_eq!(o.s_tn, vec![5]);
        let (lo, hi) = m.tra_interval.unwrap();
        assert!(lo <= hi);

        let liar = [false, true, true, true, true, false];
        let bad = MetricsInput {
            oracle: Some(&liar),
            ..input
        };
        assert!(matches!(compute_metrics(&bad), Err(CrvError::Soundness(_))));
    }
}
