//! Projected sign-gradient attack on the `l_inf` box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrvError, Result};
use crate::model::{forward, predicted_label, InputRegion, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub steps: usize,
    /// Defaults to `epsilon / 50`.
    pub step_size: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            steps: 200,
            step_size: None,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    pub adversarial_point: Option<Vec<f64>>,
    /// Largest `max_{y' != y} f[y'] - f[y]` seen.
    pub achieved_margin: f64,
    pub restarts_used: usize,
    pub steps: usize,
}

/// Best competing class and its margin over `y`.
fn top_rival(logits: &[f64], y: usize) -> (usize, f64) {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (k, &v) in logits.iter().enumerate() {
        if k != y && v - logits[y] > best.1 {
            best = (k, v - logits[y]);
        }
    }
    best
}

fn margin_gradient(net: &Network, x: &[f64], y: usize, rival: usize) -> Result<Vec<f64>> {
    let pre = net.preactivations(x)?;
    let (w1, w2) = (net.w1(), net.w2());
    let mut g = vec![0.0; x.len()];
    for (i, a) in pre.iter().enumerate() {
        if *a < 0.0 {
            continue;
        }
        let qi = w2[(rival, i)] - w2[(y, i)];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj += qi * w1[(i, j)];
        }
    }
    Ok(g)
}

pub fn pgd_attack(net: &Network, region: &InputRegion, y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let classes = net.num_classes();
    if y >= classes {
        return Err(CrvError::InvalidQuery(format!(
            "class {y} out of range for L={classes}"
        )));
    }
    let step = cfg.step_size.unwrap_or(region.epsilon() / 50.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total_steps = 0;

    let mut center = region.center().to_vec();
    region.clip(&mut center);
    let logits = forward(net, &center)?;
    let mut best = top_rival(&logits, y).1;
    if predicted_label(&logits) != y {
        return Ok(AttackResult {
            success: true,
            adversarial_point: Some(center),
            achieved_margin: best,
            restarts_used: 0,
            steps: 0,
        });
    }

    for restart in 0..cfg.restarts {
        let mut x: Vec<f64> = region
            .lower()
            .iter()
            .zip(region.upper())
            .map(|(&l, &u)| rng.random_range(l..=u))
            .collect();
        for k in 0..=cfg.steps {
            let logits = forward(net, &x)?;
            let (rival, margin) = top_rival(&logits, y);
            best = best.max(margin);
            if predicted_label(&logits) != y {
                return Ok(AttackResult {
                    success: true,
                    adversarial_point: Some(x),
                    achieved_margin: best,
                    restarts_used: restart + 1,
                    steps: total_steps,
                });
            }
            if k == cfg.steps {
                break;
            }
            total_steps += 1;
            let g = margin_gradient(net, &x, y, rival)?;
            for (xj, gj) in x.iter_mut().zip(&g) {
                if *gj != 0.0 {
                    *xj += step * gj.signum();
                }
            }
            region.clip(&mut x);
        }
    }
    Ok(AttackResult {
        success: false,
        adversarial_point: None,
        achieved_margin: best,
        restarts_used: cfg.restarts,
        steps: total_steps,
    })
}
