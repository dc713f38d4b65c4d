//! Level skipping for SR groups, calibrated on a sample of inputs.

use serde::{Deserialize, Serialize};

use crate::bounds::preactivation_bounds;
use crate::error::{CrvError, Result};
use crate::model::{margin_query, InputRegion, Network};
use crate::sdp::{sdp_bound, SolverConfig, SubmethodLadder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipPlan {
    pub levels: Vec<usize>,
    /// Mean relative improvement from `levels[k]` to `levels[k + 1]` of the
    /// full group; `None` when no sample pair had finite bounds.
    pub improvements: Vec<Option<f64>>,
    pub kept: Vec<usize>,
    pub sample_size: usize,
    pub cost_units: f64,
    pub wall_time: f64,
}

impl SkipPlan {
    pub fn dropped(&self) -> Vec<usize> {
        self.levels.iter().copied().filter(|k| !self.kept.contains(k)).collect()
    }
}

/// Keeps `levels[k + 1]` unless its improvement is below `threshold`; the
/// first and last levels always stay.
pub fn plan_from_improvements(levels: &[usize], improvements: &[Option<f64>], threshold: f64) -> Vec<usize> {
    let last = levels.len().saturating_sub(1);
    levels
        .iter()
        .enumerate()
        .filter(|&(k, _)| {
            k == 0
                || k == last
                || improvements
                    .get(k - 1)
                    .copied()
                    .flatten()
                    .is_none_or(|imp| imp >= threshold)
        })
        .map(|(_, &lv)| lv)
        .collect()
}

/// Number of calibration inputs for a dataset of `n`.
pub fn calibration_size(n: usize, fraction: f64, min: usize) -> usize {
    ((n as f64 * fraction).ceil() as usize).max(min).min(n)
}

/// Solves every level of `levels` on each sample input and every rival class.
pub fn calibrate_fsr(
    net: &Network,
    sample: &[(Vec<f64>, usize)],
    epsilon: f64,
    levels: &[usize],
    ladder: &SubmethodLadder,
    solver: &SolverConfig,
    threshold: f64,
) -> Result<SkipPlan> {
    if sample.is_empty() {
        return Err(CrvError::InvalidQuery("calibration sample is empty".into()));
    }
    let mut sums = vec![0.0; levels.len().saturating_sub(1)];
    let mut counts = vec![0usize; sums.len()];
    let (mut cost, mut wall) = (0.0, 0.0);
    for (x, y) in sample {
        let region = InputRegion::new(net, x, epsilon)?;
        let bounds = preactivation_bounds(net, &region)?;
        for ya in (0..net.num_classes()).filter(|c| c != y) {
            let obj = margin_query(net, *y, ya)?;
            let mut values = Vec::with_capacity(levels.len());
            for &k in levels {
                let r = sdp_bound(net, &region, &obj, &bounds, ladder, k, solver)?;
                cost += r.cost_units;
                wall += r.wall_time;
                values.push(r.bound);
            }
            for (k, w) in values.windows(2).enumerate() {
                if w[0].is_finite() && w[1].is_finite() {
                    sums[k] += (w[0] - w[1]) / (w[0].abs() + 1e-9);
                    counts[k] += 1;
                }
            }
        }
    }
    let improvements: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    Ok(SkipPlan {
        levels: levels.to_vec(),
        kept: plan_from_improvements(levels, &improvements, threshold),
        improvements,
        sample_size: sample.len(),
        cost_units: cost,
        wall_time: wall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_application() {
        let some = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
        assert_eq!(
            plan_from_improvements(&[1, 2, 3], &some(&[0.5, 0.02]), 0.05),
            vec![1, 2, 3]
        );
        assert_eq!(
            plan_from_improvements(&[1, 2, 3, 4], &some(&[0.5, 0.02, 0.3]), 0.05),
            vec![1, 2, 4]
        );
        assert_eq!(
            plan_from_improvements(&[1, 2, 3], &some(&[0.01, 0.5]), 0.05),
            vec![1, 3]
        );
        assert_eq!(
            plan_from_improvements(&[1, 2, 3], &some(&[0.3, 0.3]), 0.05),
            vec![1, 2, 3]
        );
        assert_eq!(plan_from_improvements(&[1, 2, 3], &[None, None], 0.05), vec![1, 2, 3]);
        assert_eq!(plan_from_improvements(&[2], &[], 0.05), vec![2]);
    }

    #[test]
    fn sample_size_is_clamped() {
        assert_eq!(calibration_size(100, 0.1, 5), 10);
        assert_eq!(calibration_size(20, 0.1, 5), 5);
        assert_eq!(calibration_size(3, 0.1, 5), 3);
    }

    #[test]
    fn calibration_on_e1() {
        let net = Network::from_rows(&[vec![1.0]], &[0.0], &[vec![1.0], vec![0.0]], &[0.0, 0.0], None).unwrap();
        let plan = calibrate_fsr(
            &net,
            &[(vec![0.0], 0)],
            1.0,
            &[1, 2, 3],
            &SubmethodLadder::default(),
            &SolverConfig::default(),
            0.05,
        )
        .unwrap();
        // Bounds 1, 0, 0: level 2 already closes the gap.
        let first = plan.improvements[0].unwrap();
        assert!((first - 1.0).abs() < 1e-3, "{first}");
        assert_eq!(plan.kept.first(), Some(&1));
        assert_eq!(plan.kept.last(), Some(&3));
        assert!(plan.cost_units > 0.0);
    }
}
