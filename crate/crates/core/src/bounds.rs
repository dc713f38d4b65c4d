//! Interval pre-activation bounds for the hidden layer and neuron stability.

use crate::error::{CrvError, Result};
use crate::model::{InputRegion, Network};

/// Elementwise bounds `l <= W1 x' + b1 <= u` valid over an input region.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LayerBounds {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

/// Partition of hidden units by the sign of their pre-activation interval.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StabilityPartition {
    pub active: Vec<usize>,
    pub inactive: Vec<usize>,
    pub unstable: Vec<usize>,
}

impl StabilityPartition {
    pub fn len(&self) -> usize {
        self.active.len() + self.inactive.len() + self.unstable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_stable(&self) -> bool {
        self.unstable.is_empty()
    }
}

/// Interval bounds over the (domain-clipped) input box.
///
/// For a single affine layer over a box, the interval is exact per neuron:
/// `W1[i] . mid + b1[i] -/+ sum_j |W1[i, j]| * r_j`.
pub fn preactivation_bounds(net: &Network, region: &InputRegion) -> Result<LayerBounds> {
    if region.dim() != net.input_dim() {
        return Err(CrvError::Dimension(format!(
            "region has dimension {}, network expects d={}",
            region.dim(),
            net.input_dim()
        )));
    }
    let mid = region.midpoint();
    let half = region.half_widths();
    let w1 = net.w1();
    let m = net.hidden_dim();
    let mut lower = Vec::with_capacity(m);
    let mut upper = Vec::with_capacity(m);
    for i in 0..m {
        let mut center = net.b1()[i];
        let mut radius = 0.0;
        for j in 0..net.input_dim() {
            center += w1[(i, j)] * mid[j];
            radius += w1[(i, j)].abs() * half[j];
        }
        lower.push(center - radius);
        upper.push(center + radius);
    }
    Ok(LayerBounds { lower, upper })
}

/// Classifies neurons; `u_i <= 0` is checked first so a degenerate `[0, 0]`
/// interval is inactive, and `l_i >= 0` is active.
pub fn stability_partition(bounds: &LayerBounds) -> StabilityPartition {
    let mut parts = StabilityPartition::default();
    for (i, (l, u)) in bounds.lower.iter().zip(&bounds.upper).enumerate() {
        if *u <= 0.0 {
            parts.inactive.push(i);
        } else if *l >= 0.0 {
            parts.active.push(i);
        } else {
            parts.unstable.push(i);
        }
    }
    parts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Network;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e1() -> Network {
        Network::from_rows(&[vec![1.0]], &[0.0], &[vec![1.0], vec![0.0]], &[0.0, 0.0], None).unwrap()
    }

    fn random_net(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Network {
        let w1: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let b1: Vec<f64> = (0..m).map(|_| rng.random_range(-0.5..0.5)).collect();
        let w2 = vec![vec![1.0; m], vec![-1.0; m]];
        Network::from_rows(&w1, &b1, &w2, &[0.0, 0.0], None).unwrap()
    }

    #[test]
    fn hand_examples() {
        let net = Network::from_rows(&[vec![1.0, -1.0]], &[0.0], &[vec![1.0], vec![0.0]], &[0.0, 0.0], None).unwrap();
        let r = InputRegion::new(&net, &[0.0, 0.0], 1.0).unwrap();
        let b = preactivation_bounds(&net, &r).unwrap();
        assert_eq!((b.lower[0], b.upper[0]), (-2.0, 2.0));

        let r = InputRegion::new(&e1(), &[1.0], 0.5).unwrap();
        let b = preactivation_bounds(&e1(), &r).unwrap();
        assert_eq!((b.lower[0], b.upper[0]), (0.5, 1.5));
        assert_eq!(stability_partition(&b).active, vec![0]);
    }

    #[test]
    fn partition_boundaries() {
        let b = LayerBounds {
            lower: vec![-2.0],
            upper: vec![2.0],
        };
        assert_eq!(stability_partition(&b).unstable, vec![0]);

        let b = LayerBounds {
            lower: vec![-1.0, 0.0, 1.0],
            upper: vec![0.0, 2.0, 3.0],
        };
        let p = stability_partition(&b);
        assert_eq!(p.inactive, vec![0]);
        assert_eq!(p.active, vec![1, 2]);
        assert!(p.unstable.is_empty());

        let zero = LayerBounds {
            lower: vec![0.0],
            upper: vec![0.0],
        };
        assert_eq!(stability_partition(&zero).inactive, vec![0]);
    }

    #[test]
    fn sampled_points_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, 3, 4);
        let x = [0.2, -0.4, 0.7];
        let region = InputRegion::new(&net, &x, 0.3).unwrap();
        let b = preactivation_bounds(&net, &region).unwrap();
        for _ in 0..1000 {
            let p: Vec<f64> = (0..3)
                .map(|j| rng.random_range(region.lower()[j]..=region.upper()[j]))
                .collect();
            for (i, a) in net.preactivations(&p).unwrap().iter().enumerate() {
                assert!(b.lower[i] - 1e-12 <= *a && *a <= b.upper[i] + 1e-12);
            }
        }
    }

    #[test]
    fn zero_radius_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_net(&mut rng, 4, 6);
        let x = [0.1, 0.2, -0.3, 0.9];
        let b = preactivation_bounds(&net, &InputRegion::new(&net, &x, 0.0).unwrap()).unwrap();
        assert_eq!(b.lower, b.upper);
        assert_eq!(b.lower, net.preactivations(&x).unwrap());
    }

    proptest! {
        #[test]
        fn monotone_in_epsilon(seed in 0u64..1000, e1 in 0.0f64..0.5, extra in 0.0f64..0.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, 3, 5);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let small = preactivation_bounds(&net, &InputRegion::new(&net, &x, e1).unwrap()).unwrap();
            let large = preactivation_bounds(&net, &InputRegion::new(&net, &x, e1 + extra).unwrap()).unwrap();
            for i in 0..5 {
                prop_assert!(large.lower[i] <= small.lower[i] + 1e-12);
                prop_assert!(small.upper[i] <= large.upper[i] + 1e-12);
            }
        }

        #[test]
        fn partition_covers_all(ls in proptest::collection::vec(-1.0f64..1.0, 1..12), w in 0.0f64..2.0) {
            let b = LayerBounds { upper: ls.iter().map(|l| l + w).collect(), lower: ls };
            let p = stability_partition(&b);
            let mut all: Vec<usize> = p.active.iter().chain(&p.inactive).chain(&p.unstable).copied().collect();
            all.sort();
            prop_assert_eq!(all, (0..b.len()).collect::<Vec<_>>());
        }
    }
}
