//! Seeded synthetic benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CrvError, Result};
use crate::model::{forward, margin_query, predicted_label, Dataset, InputRegion, Network};
use crate::oracle::{exact_margin, MAX_ENUMERATED_NEURONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub d: usize,
    pub m: usize,
    pub classes: usize,
    pub weight_scale: f64,
    pub size: usize,
    pub epsilons: Vec<f64>,
    /// Wanted fraction of oracle-robust points at `epsilons[0]`.
    pub target_mix: Option<f64>,
    /// Candidate draws per requested point before giving up on the mix.
    pub max_attempts_per_point: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            d: 3,
            m: 6,
            classes: 3,
            weight_scale: 1.0,
            size: 100,
            epsilons: vec![0.1],
            target_mix: None,
            max_attempts_per_point: 50,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 || self.classes < 2 {
            return Err(CrvError::Config("need d >= 1, m >= 1 and at least 2 classes".into()));
        }
        if self.size == 0 {
            return Err(CrvError::Config("dataset size must be at least 1".into()));
        }
        if !(self.weight_scale.is_finite() && self.weight_scale > 0.0) {
            return Err(CrvError::Config("weight scale must be positive".into()));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(CrvError::Config("epsilons must be finite and >= 0".into()));
        }
        if let Some(t) = self.target_mix {
            if !(0.0..=1.0).contains(&t) {
                return Err(CrvError::Config(format!("target mix must lie in [0, 1], got {t}")));
            }
            if self.m > MAX_ENUMERATED_NEURONS {
                return Err(CrvError::Config(format!(
                    "target mix needs the exact oracle, which allows m <= {MAX_ENUMERATED_NEURONS}"
                )));
            }
            if self.epsilons.is_empty() {
                return Err(CrvError::Config("target mix needs an epsilon".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    /// Oracle-robust fraction at `epsilons[0]`, when a mix was requested.
    pub robust_fraction: Option<f64>,
    pub mix_reached: bool,
    pub candidates_drawn: usize,
}

/// Whether every rival margin is negative over the ball.
pub fn is_robust(net: &Network, x: &[f64], y: usize, epsilon: f64) -> Result<bool> {
    let region = InputRegion::new(net, x, epsilon)?;
    for c in (0..net.num_classes()).filter(|&c| c != y) {
        if exact_margin(net, &region, &margin_query(net, y, c)?)?.l_star >= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Weights are Gaussian with standard deviation `scale / sqrt(fan_in)`;
/// hidden biases center each unit's hyperplane near the middle of the unit
/// cube so the benchmark has unstable neurons at small radii.
pub fn generate_benchmark(cfg: &GenConfig) -> Result<(Network, Dataset, GenSummary)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (d, m, l) = (cfg.d, cfg.m, cfg.classes);
    let normal = |sd: f64| Normal::new(0.0, sd).expect("positive deviation");
    let g1 = normal(cfg.weight_scale / (d as f64).sqrt());
    let g2 = normal(cfg.weight_scale / (m as f64).sqrt());
    let jitter = normal(0.1 * cfg.weight_scale);

    let w1: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| g1.sample(&mut rng)).collect()).collect();
    let b1: Vec<f64> = w1
        .iter()
        .map(|row| -0.5 * row.iter().sum::<f64>() + jitter.sample(&mut rng))
        .collect();
    let w2: Vec<Vec<f64>> = (0..l).map(|_| (0..m).map(|_| g2.sample(&mut rng)).collect()).collect();
    let b2: Vec<f64> = (0..l).map(|_| jitter.sample(&mut rng)).collect();
    let net = Network::from_rows(&w1, &b1, &w2, &b2, Some((0.0, 1.0)))?;

    let draw = |rng: &mut ChaCha8Rng| -> Result<(Vec<f64>, usize)> {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..=1.0)).collect();
        let y = predicted_label(&forward(&net, &x)?);
        Ok((x, y))
    };

    let Some(target) = cfg.target_mix else {
        let points = (0..cfg.size).map(|_| draw(&mut rng)).collect::<Result<Vec<_>>>()?;
        let summary = GenSummary {
            robust_fraction: None,
            mix_reached: true,
            candidates_drawn: cfg.size,
        };
        return Ok((net, Dataset::new(format!("gen-{}", cfg.seed), points), summary));
    };

    let eps = cfg.epsilons[0];
    let want_robust = (target * cfg.size as f64).round() as usize;
    let want_fragile = cfg.size - want_robust;
    let (mut robust, mut fragile) = (Vec::new(), Vec::new());
    let budget = cfg.size * cfg.max_attempts_per_point.max(1);
    let mut drawn = 0;
    while (robust.len() < want_robust || fragile.len() < want_fragile) && drawn < budget {
        drawn += 1;
        let (x, y) = draw(&mut rng)?;
        if is_robust(&net, &x, y, eps)? {
            if robust.len() < want_robust {
                robust.push((x, y));
            }
        } else if fragile.len() < want_fragile {
            fragile.push((x, y));
        }
    }
    let reached = robust.len() == want_robust && fragile.len() == want_fragile;
    let n_robust_kept;
    let mut points;
    if reached {
        n_robust_kept = robust.len();
        // Interleave so prefixes (calibration samples) see both kinds.
        points = Vec::with_capacity(cfg.size);
        let (mut r, mut f) = (robust.into_iter(), fragile.into_iter());
        let mut taken = 0;
        for i in 0..cfg.size {
            if (i + 1) * want_robust / cfg.size > taken {
                taken += 1;
                points.extend(r.next());
            } else {
                points.extend(f.next());
            }
        }
    } else {
        log::warn!(
            "target mix {target} unreachable after {drawn} draws ({} robust, {} not); filling best effort",
            robust.len(),
            fragile.len()
        );
        let mut extra = Vec::new();
        while robust.len() + fragile.len() + extra.len() < cfg.size {
            extra.push(draw(&mut rng)?);
        }
        let mut robust_count = robust.len();
        for (x, y) in &extra {
            if is_robust(&net, x, *y, eps)? {
                robust_count += 1;
            }
        }
        n_robust_kept = robust_count;
        points = robust;
        points.extend(fragile);
        points.extend(extra);
    }
    let summary = GenSummary {
        robust_fraction: Some(n_robust_kept as f64 / cfg.size as f64),
        mix_reached: reached,
        candidates_drawn: drawn,
    };
    Ok((net, Dataset::new(format!("gen-{}", cfg.seed), points), summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions_and_labels() {
        let cfg = GenConfig {
            d: 3,
            m: 6,
            classes: 3,
            size: 20,
            ..GenConfig::default()
        };
        let (net, data, _) = generate_benchmark(&cfg).unwrap();
        assert_eq!((net.input_dim(), net.hidden_dim(), net.num_classes()), (3, 6, 3));
        assert_eq!(data.len(), 20);
        for (x, y) in &data.points {
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(predicted_label(&forward(&net, x).unwrap()), *y);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = GenConfig {
            seed: 77,
            size: 10,
            ..GenConfig::default()
        };
        let (a, da, _) = generate_benchmark(&cfg).unwrap();
        let (b, db, _) = generate_benchmark(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(da.to_csv(), db.to_csv());
        let (c, _, _) = generate_benchmark(&GenConfig { seed: 78, ..cfg }).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn target_mix_is_met() {
        let cfg = GenConfig {
            seed: 5,
            d: 2,
            m: 6,
            classes: 3,
            size: 100,
            epsilons: vec![0.1],
            target_mix: Some(0.5),
            ..GenConfig::default()
        };
        let (net, data, summary) = generate_benchmark(&cfg).unwrap();
        let robust = data
            .points
            .iter()
            .filter(|(x, y)| is_robust(&net, x, *y, 0.1).unwrap())
            .count() as f64
            / 100.0;
        assert!((robust - 0.5).abs() <= 0.15, "robust fraction {robust}");
        assert_eq!(summary.robust_fraction, Some(robust));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_benchmark(&GenConfig {
            size: 0,
            ..GenConfig::default()
        })
        .is_err());
        assert!(generate_benchmark(&GenConfig {
            m: 21,
            target_mix: Some(0.5),
            ..GenConfig::default()
        })
        .is_err());
    }
}
