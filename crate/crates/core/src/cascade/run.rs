//! Running a cascade over a dataset.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{CascadeConfig, StageSpec, Submethod, Timing};
use super::fsr::{calibrate_fsr, calibration_size, SkipPlan};
use super::metrics::{compute_metrics, Metrics, MetricsInput, StageRecord};
use crate::bounds::preactivation_bounds;
use crate::error::{CrvError, Result};
use crate::linear::{lp_bound, BoundResult};
use crate::model::{forward, margin_query, predicted_label, Dataset, InputRegion, Network};
use crate::oracle::{exact_margin, pgd_attack, AttackConfig};
use crate::sdp::{sdp_bound, sdp_decide};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub stage: usize,
    pub y_adv: usize,
    pub verifier_id: String,
    #[serde(with = "crate::linear::extended_float")]
    pub bound: f64,
    pub certified: bool,
    pub wall_time: f64,
    pub cost_units: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictStatus {
    Certified,
    NotCertified,
}

/// Why an input never entered the cascade.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Misclassified,
    AttackSuccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputVerdict {
    pub index: usize,
    pub label: usize,
    pub status: VerdictStatus,
    pub skipped: Option<SkipReason>,
    pub certifying_stage: Option<usize>,
    pub certifying_submethod: Option<String>,
    pub stages_entered: Vec<usize>,
    /// Time spent in each entered stage, in the configured timing units.
    pub stage_times: Vec<f64>,
    pub early_exit_class: Option<usize>,
    pub trace: Vec<TraceEntry>,
}

impl InputVerdict {
    pub fn certified(&self) -> bool {
        self.status == VerdictStatus::Certified
    }
}

/// Result of one stage on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub certified: bool,
    pub certified_by: Option<Submethod>,
    pub early_exit_class: Option<usize>,
    pub trace: Vec<TraceEntry>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRun {
    pub verifier: String,
    pub certified: Vec<usize>,
    pub total_time: f64,
    pub mean_time: f64,
    pub verdicts: Vec<InputVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeRun {
    pub epsilon: f64,
    pub stages: Vec<String>,
    pub timing: Timing,
    pub eligible: Vec<usize>,
    pub verdicts: Vec<InputVerdict>,
    pub records: Vec<StageRecord>,
    /// One entry per stage; set for SR stages when level skipping is on.
    pub skip_plans: Vec<Option<SkipPlan>>,
    /// Calibration time, kept out of the verification cost.
    pub calibration_cost: f64,
    pub attack_successes: Option<Vec<usize>>,
    pub baseline: Option<BaselineRun>,
    pub metrics: Metrics,
}

impl CascadeRun {
    /// Recomputes the metrics with per-input ground truth.
    pub fn apply_oracle(&mut self, robust: &[bool]) -> Result<()> {
        self.metrics = self.compute(Some(robust))?;
        Ok(())
    }

    fn compute(&self, robust: Option<&[bool]>) -> Result<Metrics> {
        metrics_for(
            &self.verdicts,
            &self.eligible,
            &self.records,
            self.baseline.as_ref(),
            self.attack_successes.as_deref(),
            robust,
        )
    }
}

fn metrics_for(
    verdicts: &[InputVerdict],
    eligible: &[usize],
    records: &[StageRecord],
    baseline: Option<&BaselineRun>,
    attack_successes: Option<&[usize]>,
    robust: Option<&[bool]>,
) -> Result<Metrics> {
    let certified: Vec<usize> = verdicts.iter().filter(|v| v.certified()).map(|v| v.index).collect();
    compute_metrics(&MetricsInput {
        n_inputs: verdicts.len(),
        eligible,
        stages: records,
        certified: &certified,
        reference_mean: baseline.map(|b| b.mean_time),
        attack_successes,
        oracle: robust,
    })
}

fn measured(cfg: &CascadeConfig, r: &BoundResult) -> f64 {
    match cfg.timing {
        Timing::Wall => r.wall_time,
        Timing::CostUnits => r.cost_units,
    }
}

/// Runs one stage on one input: submethods loosest first, rival classes in
/// index order. A class certified by an earlier submethod is not revisited.
/// Outside the last submethod the first failing class moves on to the next
/// submethod; at the last one it ends the stage. A failure that comes with a
/// counterexample ends the stage at once, since no submethod can certify it.
#[allow(clippy::too_many_arguments)]
pub fn robustness_check(
    net: &Network,
    point: &[f64],
    label: usize,
    epsilon: f64,
    stage: usize,
    submethods: &[Submethod],
    cfg: &CascadeConfig,
) -> Result<StageOutcome> {
    if submethods.is_empty() {
        return Err(CrvError::Config("stage without submethods".into()));
    }
    let region = InputRegion::new(net, point, epsilon)?;
    let bounds = preactivation_bounds(net, &region)?;
    let mut pending: Vec<usize> = (0..net.num_classes()).filter(|&c| c != label).collect();
    let mut trace = Vec::new();
    let mut time = 0.0;
    for (k, sub) in submethods.iter().enumerate() {
        let last = k + 1 == submethods.len();
        let mut done = BTreeSet::new();
        let mut failed = None;
        let mut refuted = false;
        for &c in &pending {
            let obj = margin_query(net, label, c)?;
            let r = match sub {
                Submethod::Lin => lp_bound(net, &region, &obj, &bounds, cfg.lin_rule)?,
                Submethod::Sdp(level) if cfg.early_stop => {
                    sdp_decide(net, &region, &obj, &bounds, &cfg.ladder, *level, &cfg.solver)?
                }
                Submethod::Sdp(level) => sdp_bound(net, &region, &obj, &bounds, &cfg.ladder, *level, &cfg.solver)?,
            };
            time += measured(cfg, &r);
            trace.push(TraceEntry {
                stage,
                y_adv: c,
                verifier_id: r.verifier_id,
                bound: r.bound,
                certified: r.certified,
                wall_time: if cfg.timing == Timing::CostUnits {
                    0.0
                } else {
                    r.wall_time
                },
                cost_units: r.cost_units,
            });
            if r.certified {
                done.insert(c);
            } else {
                failed = Some(c);
                refuted = r.counterexample.is_some();
                break;
            }
        }
        pending.retain(|c| !done.contains(c));
        if pending.is_empty() {
            return Ok(StageOutcome {
                certified: true,
                certified_by: Some(*sub),
                early_exit_class: None,
                trace,
                time,
            });
        }
        if last || refuted {
            return Ok(StageOutcome {
                certified: false,
                certified_by: None,
                early_exit_class: failed,
                trace,
                time,
            });
        }
    }
    unreachable!("the last submethod always returns")
}

/// Runs `f` on a pool capped by `CRV_THREADS` when that is set.
pub fn with_thread_cap<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var("CRV_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| CrvError::Config(format!("CRV_THREADS must be a positive integer, got `{v}`")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CrvError::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        Err(_) => Ok(f()),
    }
}

fn attack_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// PGD on every input; returns the indices where it found an adversarial point.
pub fn attack_dataset(net: &Network, data: &Dataset, epsilon: f64, cfg: &AttackConfig) -> Result<Vec<usize>> {
    let hits: Vec<Option<usize>> = data
        .points
        .par_iter()
        .enumerate()
        .map(|(i, (x, y))| {
            let region = InputRegion::new(net, x, epsilon)?;
            let local = AttackConfig {
                seed: attack_seed(cfg.seed, i),
                ..cfg.clone()
            };
            Ok(pgd_attack(net, &region, *y, &local)?.success.then_some(i))
        })
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().flatten().collect())
}

/// `(rival class, worst-case margin)` pairs for one input.
pub type RivalMargins = Vec<(usize, f64)>;

/// Exact worst-case margins per rival class; `None` for misclassified inputs.
pub fn exact_margins(net: &Network, data: &Dataset, epsilon: f64) -> Result<Vec<Option<RivalMargins>>> {
    data.points
        .par_iter()
        .map(|(x, y)| {
            if predicted_label(&forward(net, x)?) != *y {
                return Ok(None);
            }
            let region = InputRegion::new(net, x, epsilon)?;
            let mut out = Vec::new();
            for c in (0..net.num_classes()).filter(|c| c != y) {
                out.push((c, exact_margin(net, &region, &margin_query(net, *y, c)?)?.l_star));
            }
            Ok(Some(out))
        })
        .collect()
}

/// Ground-truth robustness: correctly classified and every margin negative.
pub fn oracle_labels(net: &Network, data: &Dataset, epsilon: f64) -> Result<Vec<bool>> {
    Ok(exact_margins(net, data, epsilon)?
        .into_iter()
        .map(|m| m.is_some_and(|v| v.iter().all(|(_, l)| *l < 0.0)))
        .collect())
}

fn verdict_from(index: usize, label: usize, outcomes: Vec<(usize, StageOutcome)>) -> InputVerdict {
    let mut v = InputVerdict {
        index,
        label,
        status: VerdictStatus::NotCertified,
        skipped: None,
        certifying_stage: None,
        certifying_submethod: None,
        stages_entered: vec![],
        stage_times: vec![],
        early_exit_class: None,
        trace: vec![],
    };
    for (stage, out) in outcomes {
        v.stages_entered.push(stage);
        v.stage_times.push(out.time);
        v.trace.extend(out.trace);
        v.early_exit_class = out.early_exit_class;
        if out.certified {
            v.status = VerdictStatus::Certified;
            v.certifying_stage = Some(stage);
            v.certifying_submethod = out.certified_by.map(|s| s.to_string());
            v.early_exit_class = None;
        }
    }
    v
}

fn skipped_verdict(index: usize, label: usize, why: SkipReason) -> InputVerdict {
    InputVerdict {
        skipped: Some(why),
        ..verdict_from(index, label, vec![])
    }
}

/// Verifies every eligible input with the stages in order, stopping at the
/// first stage that certifies it.
pub fn crv_verify(net: &Network, data: &Dataset, epsilon: f64, cfg: &CascadeConfig) -> Result<CascadeRun> {
    cfg.validate()?;
    data.validate(net)?;
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(CrvError::InvalidQuery(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    with_thread_cap(|| verify_inner(net, data, epsilon, cfg))?
}

fn verify_inner(net: &Network, data: &Dataset, epsilon: f64, cfg: &CascadeConfig) -> Result<CascadeRun> {
    let n = data.len();
    let mut skip: BTreeMap<usize, SkipReason> = BTreeMap::new();
    for (i, (x, y)) in data.points.iter().enumerate() {
        if predicted_label(&forward(net, x)?) != *y {
            skip.insert(i, SkipReason::Misclassified);
        }
    }
    let attack_successes = if cfg.run_attack || cfg.attack_prefilter {
        Some(attack_dataset(net, data, epsilon, &cfg.attack)?)
    } else {
        None
    };
    if cfg.attack_prefilter {
        for &i in attack_successes.as_deref().unwrap_or(&[]) {
            skip.entry(i).or_insert(SkipReason::AttackSuccess);
        }
    }
    let eligible: Vec<usize> = (0..n).filter(|i| !skip.contains_key(i)).collect();

    // Level skipping, calibrated once per distinct SR group.
    let mut skip_plans: Vec<Option<SkipPlan>> = vec![None; cfg.stages.len()];
    let mut calibration_cost = 0.0;
    if cfg.fsr.enabled && !eligible.is_empty() {
        let k = calibration_size(eligible.len(), cfg.fsr.calibration_fraction, cfg.fsr.min_calibration);
        let sample: Vec<(Vec<f64>, usize)> = eligible[..k].iter().map(|&i| data.points[i].clone()).collect();
        let mut cache: BTreeMap<Vec<usize>, SkipPlan> = BTreeMap::new();
        for (j, stage) in cfg.stages.iter().enumerate() {
            if let StageSpec::Sr(levels) = stage {
                if !cache.contains_key(levels) {
                    let plan = calibrate_fsr(
                        net,
                        &sample,
                        epsilon,
                        levels,
                        &cfg.ladder,
                        &cfg.solver,
                        cfg.fsr.threshold,
                    )?;
                    calibration_cost += match cfg.timing {
                        Timing::Wall => plan.wall_time,
                        Timing::CostUnits => plan.cost_units,
                    };
                    cache.insert(levels.clone(), plan);
                }
                skip_plans[j] = cache.get(levels).cloned();
            }
        }
    }
    let plans: Vec<Vec<Submethod>> = cfg
        .stages
        .iter()
        .zip(&skip_plans)
        .map(|(stage, plan)| match plan {
            Some(p) => p.kept.iter().map(|&k| Submethod::Sdp(k)).collect(),
            None => stage.submethods(),
        })
        .collect();

    let verdicts: Vec<InputVerdict> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (x, y) = &data.points[i];
            if let Some(why) = skip.get(&i) {
                return Ok(skipped_verdict(i, *y, *why));
            }
            let mut outcomes = Vec::new();
            for (j, subs) in plans.iter().enumerate() {
                let out = robustness_check(net, x, *y, epsilon, j, subs, cfg)?;
                let done = out.certified;
                outcomes.push((j, out));
                if done {
                    break;
                }
            }
            Ok(verdict_from(i, *y, outcomes))
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<StageRecord> = plans
        .iter()
        .enumerate()
        .map(|(j, _)| StageRecord {
            spec: match &skip_plans[j] {
                Some(p) if !p.dropped().is_empty() => {
                    format!("{}", StageSpec::Sr(p.kept.clone()))
                }
                _ => cfg.stages[j].to_string(),
            },
            entered: vec![],
            certified_here: vec![],
            standalone: None,
            total_time: 0.0,
        })
        .collect();
    for v in &verdicts {
        for (&j, &t) in v.stages_entered.iter().zip(&v.stage_times) {
            records[j].entered.push(v.index);
            records[j].total_time += t;
        }
        if let Some(j) = v.certifying_stage {
            records[j].certified_here.push(v.index);
        }
    }

    if cfg.standalone {
        // Stage j alone on the inputs an earlier stage already took.
        let jobs: Vec<(usize, usize)> = verdicts
            .iter()
            .filter_map(|v| v.certifying_stage.map(|k| (v.index, k)))
            .flat_map(|(i, k)| (k + 1..plans.len()).map(move |j| (j, i)))
            .collect();
        let extra: Vec<(usize, usize, bool)> = jobs
            .par_iter()
            .map(|&(j, i)| {
                let (x, y) = &data.points[i];
                Ok((
                    j,
                    i,
                    robustness_check(net, x, *y, epsilon, j, &plans[j], cfg)?.certified,
                ))
            })
            .collect::<Result<_>>()?;
        for (j, rec) in records.iter_mut().enumerate() {
            let mut set: BTreeSet<usize> = rec.certified_here.iter().copied().collect();
            set.extend(extra.iter().filter(|e| e.0 == j && e.2).map(|e| e.1));
            rec.standalone = Some(set.into_iter().collect());
        }
    }

    let baseline = if cfg.baseline {
        Some(run_baseline(
            net, data, epsilon, cfg, &eligible, &plans, &records, &verdicts,
        )?)
    } else {
        None
    };

    let metrics = metrics_for(
        &verdicts,
        &eligible,
        &records,
        baseline.as_ref(),
        attack_successes.as_deref(),
        None,
    )?;
    Ok(CascadeRun {
        epsilon,
        stages: records.iter().map(|r| r.spec.clone()).collect(),
        timing: cfg.timing,
        eligible,
        verdicts,
        records,
        skip_plans,
        calibration_cost,
        attack_successes,
        baseline,
        metrics,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_baseline(
    net: &Network,
    data: &Dataset,
    epsilon: f64,
    cfg: &CascadeConfig,
    eligible: &[usize],
    plans: &[Vec<Submethod>],
    records: &[StageRecord],
    verdicts: &[InputVerdict],
) -> Result<BaselineRun> {
    let tightest = cfg.tightest();
    let reuse = plans.len() == 1 && plans[0] == [tightest];
    let chosen: Vec<InputVerdict> = if reuse {
        verdicts.to_vec()
    } else {
        (0..data.len())
            .into_par_iter()
            .map(|i| {
                let (x, y) = &data.points[i];
                if !eligible.contains(&i) {
                    return Ok(verdict_from(i, *y, vec![]));
                }
                let out = robustness_check(net, x, *y, epsilon, 0, &[tightest], cfg)?;
                Ok(verdict_from(i, *y, vec![(0, out)]))
            })
            .collect::<Result<_>>()?
    };
    let total: f64 = if reuse {
        records[0].total_time
    } else {
        chosen.iter().flat_map(|v| v.stage_times.iter()).sum()
    };
    Ok(BaselineRun {
        verifier: tightest.to_string(),
        certified: chosen.iter().filter(|v| v.certified()).map(|v| v.index).collect(),
        total_time: total,
        mean_time: if eligible.is_empty() {
            0.0
        } else {
            total / eligible.len() as f64
        },
        verdicts: chosen,
    })
}
