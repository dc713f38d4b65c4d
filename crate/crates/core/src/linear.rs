//! Closed-form triangle-relaxation bound on the worst-case margin.
//!
//! Each hidden unit is replaced by a linear function of its pre-activation
//! that over-approximates `q_i * relu(a_i)` on `[l_i, u_i]`; the resulting
//! affine function of the input is then maximized over the input box in
//! closed form.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bounds::LayerBounds;
use crate::error::{CrvError, Result};
use crate::model::{InputRegion, MarginObjective, Network};

/// Lower-line slope used for unstable neurons with a negative objective weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelaxationChoice {
    /// Slope `u / (u - l)`, parallel to the upper chord.
    #[default]
    ParallelToChord,
    /// Slope 1 when `u >= -l`, else 0.
    AdaptiveZeroOne,
}

impl fmt::Display for RelaxationChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RelaxationChoice::ParallelToChord => f.write_str("parallel-to-chord"),
            RelaxationChoice::AdaptiveZeroOne => f.write_str("adaptive-zero-one"),
        }
    }
}

impl FromStr for RelaxationChoice {
    type Err = CrvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel-to-chord" | "parallel" => Ok(RelaxationChoice::ParallelToChord),
            "adaptive-zero-one" | "adaptive" => Ok(RelaxationChoice::AdaptiveZeroOne),
            other => Err(CrvError::Config(format!("unknown lower-line rule `{other}`"))),
        }
    }
}

/// A sound upper bound on `max_{x' in region} f(x')[y'] - f(x')[y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    /// `+inf` on solver failure, so a failure never certifies.
    #[serde(with = "extended_float")]
    pub bound: f64,
    pub verifier_id: String,
    pub certified: bool,
    pub wall_time: f64,
    /// Machine-independent cost: `d * m` for the linear bound, iterations
    /// times `n^3` for semidefinite solves.
    pub cost_units: f64,
    pub diagnostics: String,
    /// An input in the region whose margin is nonnegative, when one was met.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Vec<f64>>,
}

impl BoundResult {
    pub fn new(
        bound: f64,
        verifier_id: impl Into<String>,
        wall_time: f64,
        cost_units: f64,
        diagnostics: impl Into<String>,
    ) -> Self {
        let bound = if bound.is_nan() { f64::INFINITY } else { bound };
        BoundResult {
            bound,
            verifier_id: verifier_id.into(),
            certified: bound < 0.0,
            wall_time,
            cost_units,
            diagnostics: diagnostics.into(),
            counterexample: None,
        }
    }

    pub fn failed(verifier_id: impl Into<String>, wall_time: f64, cost_units: f64, why: impl Into<String>) -> Self {
        BoundResult::new(f64::INFINITY, verifier_id, wall_time, cost_units, why)
    }
}

pub const LIN_ID: &str = "lin";

/// JSON has no infinities; non-finite values travel as strings.
pub mod extended_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("expected a number, got `{other}`"))),
            },
        }
    }
}

/// Per-neuron linear bound `slope * a + intercept` chosen for objective weight `qi`.
fn relaxation(qi: f64, l: f64, u: f64, rule: RelaxationChoice) -> (f64, f64) {
    if u <= 0.0 {
        (0.0, 0.0)
    } else if l >= 0.0 {
        (1.0, 0.0)
    } else {
        let chord = u / (u - l);
        if qi >= 0.0 {
            (chord, -chord * l)
        } else {
            match rule {
                RelaxationChoice::ParallelToChord => (chord, 0.0),
                RelaxationChoice::AdaptiveZeroOne => (if u >= -l { 1.0 } else { 0.0 }, 0.0),
            }
        }
    }
}

pub fn lp_bound(
    net: &Network,
    region: &InputRegion,
    obj: &MarginObjective,
    bounds: &LayerBounds,
    relax: RelaxationChoice,
) -> Result<BoundResult> {
    let (d, m) = (net.input_dim(), net.hidden_dim());
    if region.dim() != d || bounds.len() != m || obj.q.len() != m {
        return Err(CrvError::Dimension(format!(
            "lp_bound: region d={}, bounds m={}, objective m={} vs network (d={d}, m={m})",
            region.dim(),
            bounds.len(),
            obj.q.len()
        )));
    }
    let start = Instant::now();
    let w1 = net.w1();

    // Backward pass: q_i z_i <= (q_i s_i) a_i + q_i t_i with a = W1 x + b1.
    // `mag` tracks the summed magnitudes for outward rounding.
    let mut coeff = vec![0.0; d];
    let mut coeff_mag = vec![0.0; d];
    let mut constant = obj.c0;
    let mut mag = obj.c0.abs();
    for i in 0..m {
        let (s, t) = relaxation(obj.q[i], bounds.lower[i], bounds.upper[i], relax);
        let g = obj.q[i] * s;
        if g != 0.0 {
            for j in 0..d {
                coeff[j] += w1[(i, j)] * g;
                coeff_mag[j] += (w1[(i, j)] * g).abs();
            }
        }
        constant += g * net.b1()[i] + obj.q[i] * t;
        mag += (g * net.b1()[i]).abs() + (obj.q[i] * t).abs();
    }

    let mid = region.midpoint();
    let half = region.half_widths();
    let mut bound = constant;
    for j in 0..d {
        bound += coeff[j] * mid[j] + coeff[j].abs() * half[j];
        mag += coeff_mag[j] * (mid[j].abs() + half[j]);
    }
    bound += 4.0 * (d + m + 2) as f64 * f64::EPSILON * mag;

    let elapsed = start.elapsed().as_secs_f64();
    let cost = (d * m) as f64;
    if !bound.is_finite() {
        return Ok(BoundResult::failed(LIN_ID, elapsed, cost, "non-finite intermediate"));
    }
    Ok(BoundResult::new(
        bound,
        LIN_ID,
        elapsed,
        cost,
        format!("closed form, {relax}"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{preactivation_bounds, stability_partition};
    use crate::model::margin_query;
    use crate::oracle::exact_margin;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e1() -> Network {
        Network::from_rows(&[vec![1.0]], &[0.0], &[vec![1.0], vec![0.0]], &[0.0, 0.0], None).unwrap()
    }

    fn lin(net: &Network, x: &[f64], eps: f64, y: usize, ya: usize, rule: RelaxationChoice) -> f64 {
        let region = InputRegion::new(net, x, eps).unwrap();
        let b = preactivation_bounds(net, &region).unwrap();
        let obj = margin_query(net, y, ya).unwrap();
        lp_bound(net, &region, &obj, &b, rule).unwrap().bound
    }

    fn random_net(rng: &mut ChaCha8Rng) -> Network {
        let d = rng.random_range(1..=4);
        let m = rng.random_range(1..=6);
        let mut g = || rng.random_range(-1.0..1.0);
        let w1: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| g()).collect()).collect();
        let b1: Vec<f64> = (0..m).map(|_| g()).collect();
        let w2: Vec<Vec<f64>> = (0..3).map(|_| (0..m).map(|_| g()).collect()).collect();
        let b2: Vec<f64> = (0..3).map(|_| g()).collect();
        Network::from_rows(&w1, &b1, &w2, &b2, None).unwrap()
    }

    #[test]
    fn e1_stable_and_unstable() {
        let stable = lin(&e1(), &[1.0], 0.5, 0, 1, RelaxationChoice::ParallelToChord);
        assert!((stable + 0.5).abs() < 1e-14);
        let unstable = lin(&e1(), &[0.0], 1.0, 0, 1, RelaxationChoice::ParallelToChord);
        assert!((unstable - 0.5).abs() < 1e-14);
        // The adaptive line picks slope 1 here and is exact.
        let adaptive = lin(&e1(), &[0.0], 1.0, 0, 1, RelaxationChoice::AdaptiveZeroOne);
        assert!((adaptive - 1.0).abs() < 1e-14 || adaptive.abs() < 1e-14);
    }

    #[test]
    fn failure_never_certifies() {
        let r = BoundResult::new(f64::NAN, LIN_ID, 0.0, 0.0, "");
        assert!(r.bound.is_infinite() && !r.certified);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"bound\":\"inf\""));
        assert_eq!(serde_json::from_str::<BoundResult>(&text).unwrap(), r);
    }

    #[test]
    fn sound_and_exact_when_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut stable_cases = 0;
        for _ in 0..200 {
            let net = random_net(&mut rng);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let eps = rng.random_range(0.0..0.4);
            let region = InputRegion::new(&net, &x, eps).unwrap();
            let b = preactivation_bounds(&net, &region).unwrap();
            let obj = margin_query(&net, 0, 1).unwrap();
            let exact = exact_margin(&net, &region, &obj).unwrap().l_star;
            for rule in [RelaxationChoice::ParallelToChord, RelaxationChoice::AdaptiveZeroOne] {
                let bound = lp_bound(&net, &region, &obj, &b, rule).unwrap().bound;
                assert!(bound >= exact - 1e-9, "unsound: {bound} < {exact}");
                if stability_partition(&b).all_stable() {
                    assert!((bound - exact).abs() <= 1e-9);
                }
            }
            if stability_partition(&b).all_stable() {
                stable_cases += 1;
            }
        }
        assert!(stable_cases > 10);
    }

    proptest! {
        #[test]
        fn monotone_in_epsilon_and_deterministic(seed in 0u64..2000, eps in 0.0f64..0.5, extra in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for rule in [RelaxationChoice::ParallelToChord, RelaxationChoice::AdaptiveZeroOne] {
                let a = lin(&net, &x, eps, 1, 2, rule);
                let b = lin(&net, &x, eps + extra, 1, 2, rule);
                prop_assert!(b >= a - 1e-12);
                prop_assert_eq!(a.to_bits(), lin(&net, &x, eps, 1, 2, rule).to_bits());
            }
        }
    }
}
