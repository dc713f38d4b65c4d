//! Network, input-region, margin-objective and dataset representations.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CrvError, Result};

/// A one-hidden-layer ReLU classifier `x -> W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    w1: DMatrix<f64>,
    b1: DVector<f64>,
    w2: DMatrix<f64>,
    b2: DVector<f64>,
    domain: Option<(f64, f64)>,
}

/// On-disk layout. Key order here is the canonical serialization order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    d: usize,
    m: usize,
    #[serde(rename = "L")]
    classes: usize,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<[f64; 2]>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(CrvError::Dimension(format!(
            "{name} has {} rows, expected {nrows}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(CrvError::Dimension(format!(
                "{name} row {i} has {} columns, expected {ncols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn check_finite<'a>(name: &str, values: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(CrvError::Schema(format!("{name} contains a non-finite entry")))
    }
}

impl Network {
    pub fn new(
        w1: DMatrix<f64>,
        b1: DVector<f64>,
        w2: DMatrix<f64>,
        b2: DVector<f64>,
        domain: Option<(f64, f64)>,
    ) -> Result<Self> {
        let (m, d) = w1.shape();
        let classes = w2.nrows();
        if d == 0 || m == 0 {
            return Err(CrvError::Dimension(format!("need d >= 1 and m >= 1, got d={d}, m={m}")));
        }
        if classes < 2 {
            return Err(CrvError::Dimension(format!("need L >= 2, got L={classes}")));
        }
        if b1.len() != m {
            return Err(CrvError::Dimension(format!(
                "b1 has length {}, expected m={m}",
                b1.len()
            )));
        }
        if w2.ncols() != m {
            return Err(CrvError::Dimension(format!(
                "W2 has {} columns, expected m={m}",
                w2.ncols()
            )));
        }
        if b2.len() != classes {
            return Err(CrvError::Dimension(format!(
                "b2 has length {}, expected L={classes}",
                b2.len()
            )));
        }
        check_finite("W1", w1.iter())?;
        check_finite("b1", b1.iter())?;
        check_finite("W2", w2.iter())?;
        check_finite("b2", b2.iter())?;
        if let Some((lo, hi)) = domain {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(CrvError::Schema(format!(
                    "domain [{lo}, {hi}] is not a finite interval"
                )));
            }
        }
        Ok(Network { w1, b1, w2, b2, domain })
    }

    /// Builds a network from row-major nested vectors.
    pub fn from_rows(
        w1: &[Vec<f64>],
        b1: &[f64],
        w2: &[Vec<f64>],
        b2: &[f64],
        domain: Option<(f64, f64)>,
    ) -> Result<Self> {
        let m = w1.len();
        let d = w1.first().map_or(0, Vec::len);
        let classes = w2.len();
        Network::new(
            rows_to_matrix("W1", w1, m, d)?,
            DVector::from_column_slice(b1),
            rows_to_matrix("W2", w2, classes, m)?,
            DVector::from_column_slice(b2),
            domain,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.nrows()
    }

    pub fn w1(&self) -> &DMatrix<f64> {
        &self.w1
    }

    pub fn b1(&self) -> &DVector<f64> {
        &self.b1
    }

    pub fn w2(&self) -> &DMatrix<f64> {
        &self.w2
    }

    pub fn b2(&self) -> &DVector<f64> {
        &self.b2
    }

    pub fn domain(&self) -> Option<(f64, f64)> {
        self.domain
    }

    /// Parses the JSON network schema.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| CrvError::Schema(e.to_string()))?;
        if file.w1.len() != file.m {
            return Err(CrvError::Dimension(format!(
                "W1 has {} rows but m={}",
                file.w1.len(),
                file.m
            )));
        }
        let w1 = rows_to_matrix("W1", &file.w1, file.m, file.d)?;
        let w2 = rows_to_matrix("W2", &file.w2, file.classes, file.m)?;
        if file.b1.len() != file.m {
            return Err(CrvError::Dimension(format!(
                "b1 has length {}, expected m={}",
                file.b1.len(),
                file.m
            )));
        }
        if file.b2.len() != file.classes {
            return Err(CrvError::Dimension(format!(
                "b2 has length {}, expected L={}",
                file.b2.len(),
                file.classes
            )));
        }
        Network::new(
            w1,
            DVector::from_vec(file.b1),
            w2,
            DVector::from_vec(file.b2),
            file.domain.map(|[lo, hi]| (lo, hi)),
        )
    }

    /// Canonical JSON serialization (compact, fixed key order, trailing newline).
    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            d: self.input_dim(),
            m: self.hidden_dim(),
            classes: self.num_classes(),
            w1: matrix_to_rows(&self.w1),
            b1: self.b1.iter().copied().collect(),
            w2: matrix_to_rows(&self.w2),
            b2: self.b2.iter().copied().collect(),
            domain: self.domain.map(|(lo, hi)| [lo, hi]),
        };
        let mut s = serde_json::to_string(&file).expect("network serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::harness::write_atomic(path.as_ref(), self.to_json().as_bytes())
    }

    /// Hidden pre-activations `W1 x + b1`.
    pub fn preactivations(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.check_point(point)?;
        Ok((0..self.hidden_dim())
            .map(|i| {
                let mut acc = self.b1[i];
                for (j, xj) in point.iter().enumerate() {
                    acc += self.w1[(i, j)] * xj;
                }
                acc
            })
            .collect())
    }

    pub(crate) fn check_point(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.input_dim() {
            return Err(CrvError::Dimension(format!(
                "point has length {}, network expects d={}",
                point.len(),
                self.input_dim()
            )));
        }
        if point.iter().any(|v| !v.is_finite()) {
            return Err(CrvError::Numeric("point contains a non-finite coordinate".into()));
        }
        Ok(())
    }
}

/// Reads a network JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| CrvError::io(path, e))?;
    Network::from_json(&text)
}

/// Logits `W2 relu(W1 x + b1) + b2`.
pub fn forward(net: &Network, point: &[f64]) -> Result<Vec<f64>> {
    let hidden: Vec<f64> = net.preactivations(point)?.into_iter().map(|a| a.max(0.0)).collect();
    Ok((0..net.num_classes())
        .map(|k| {
            let mut acc = net.b2[k];
            for (i, h) in hidden.iter().enumerate() {
                acc += net.w2[(k, i)] * h;
            }
            acc
        })
        .collect())
}

/// Argmax with ties broken towards the lowest index.
pub fn predicted_label(logits: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in logits.iter().enumerate().skip(1) {
        if *v > logits[best] {
            best = k;
        }
    }
    best
}

/// The `l_inf` ball around `center`, intersected with the network's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct InputRegion {
    center: Vec<f64>,
    epsilon: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl InputRegion {
    pub fn new(net: &Network, center: &[f64], epsilon: f64) -> Result<Self> {
        net.check_point(center)?;
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(CrvError::InvalidQuery(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        let mut lower: Vec<f64> = center.iter().map(|x| x - epsilon).collect();
        let mut upper: Vec<f64> = center.iter().map(|x| x + epsilon).collect();
        if let Some((lo, hi)) = net.domain() {
            for j in 0..lower.len() {
                lower[j] = lower[j].max(lo);
                upper[j] = upper[j].min(hi);
                if lower[j] > upper[j] {
                    return Err(CrvError::InvalidQuery(format!(
                        "coordinate {j} of the point lies outside the domain [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(InputRegion {
            center: center.to_vec(),
            epsilon,
            lower,
            upper,
        })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Box midpoint, which differs from the center after domain clipping.
    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (l + u) / 2.0).collect()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l) / 2.0).collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    /// Coordinate-wise projection onto the box.
    pub fn clip(&self, point: &mut [f64]) {
        for (x, (l, u)) in point.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*l, *u);
        }
    }
}

/// `f(x)[y_adv] - f(x)[y]` written as `q . relu(W1 x + b1) + c0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginObjective {
    pub q: Vec<f64>,
    pub c0: f64,
    pub y: usize,
    pub y_adv: usize,
}

impl MarginObjective {
    /// Evaluates the reduced margin at a point.
    pub fn evaluate(&self, net: &Network, point: &[f64]) -> Result<f64> {
        let pre = net.preactivations(point)?;
        Ok(self
            .q
            .iter()
            .zip(pre)
            .fold(self.c0, |acc, (qi, a)| acc + qi * a.max(0.0)))
    }
}

pub fn margin_query(net: &Network, y: usize, y_adv: usize) -> Result<MarginObjective> {
    let classes = net.num_classes();
    if y >= classes || y_adv >= classes {
        return Err(CrvError::InvalidQuery(format!(
            "classes ({y}, {y_adv}) out of range for L={classes}"
        )));
    }
    if y == y_adv {
        return Err(CrvError::InvalidQuery(format!("target class equals true class {y}")));
    }
    let q = (0..net.hidden_dim())
        .map(|i| net.w2()[(y_adv, i)] - net.w2()[(y, i)])
        .collect();
    Ok(MarginObjective {
        q,
        c0: net.b2()[y_adv] - net.b2()[y],
        y,
        y_adv,
    })
}

/// Labelled points.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub points: Vec<(Vec<f64>, usize)>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, points: Vec<(Vec<f64>, usize)>) -> Self {
        Dataset {
            name: name.into(),
            points,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks labels, dimensions and domain membership against a network.
    pub fn validate(&self, net: &Network) -> Result<()> {
        for (idx, (x, label)) in self.points.iter().enumerate() {
            if *label >= net.num_classes() {
                return Err(CrvError::Schema(format!(
                    "point {idx}: label {label} out of range for L={}",
                    net.num_classes()
                )));
            }
            net.check_point(x)
                .map_err(|e| CrvError::Dimension(format!("point {idx}: {e}")))?;
            if let Some((lo, hi)) = net.domain() {
                if x.iter().any(|v| *v < lo || *v > hi) {
                    return Err(CrvError::Schema(format!(
                        "point {idx} lies outside the domain [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses `label,x1,...,xd` CSV.
    pub fn from_csv_reader<R: std::io::Read>(name: &str, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| CrvError::Schema(e.to_string()))?.clone();
        if headers.get(0) != Some("label") {
            return Err(CrvError::Schema("dataset header must start with `label`".into()));
        }
        let d = headers.len() - 1;
        for (j, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x{}", j + 1) {
                return Err(CrvError::Schema(format!(
                    "dataset column {} must be named x{}, got `{h}`",
                    j + 1,
                    j + 1
                )));
            }
        }
        let mut points = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CrvError::Schema(e.to_string()))?;
            if rec.len() != d + 1 {
                return Err(CrvError::Dimension(format!(
                    "row {row} has {} fields, expected {}",
                    rec.len(),
                    d + 1
                )));
            }
            let label: usize = rec[0]
                .trim()
                .parse()
                .map_err(|_| CrvError::Schema(format!("row {row}: label `{}` is not a class index", &rec[0])))?;
            let x = rec
                .iter()
                .skip(1)
                .enumerate()
                .map(|(j, s)| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CrvError::Schema(format!("row {row}: x{} = `{s}` is not a number", j + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            points.push((x, label));
        }
        Ok(Dataset::new(name, points))
    }

    pub fn to_csv(&self) -> String {
        let d = self.points.first().map_or(0, |(x, _)| x.len());
        let mut out = String::from("label");
        for j in 1..=d {
            out.push_str(&format!(",x{j}"));
        }
        out.push('\n');
        for (x, label) in &self.points {
            out.push_str(&label.to_string());
            for v in x {
                out.push(',');
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::harness::write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| CrvError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::from_csv_reader(&name, file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const E1_JSON: &str = r#"{"d":1,"m":1,"L":2,"W1":[[1]],"b1":[0],"W2":[[1],[0]],"b2":[0,0]}"#;

    fn e1() -> Network {
        Network::from_json(E1_JSON).unwrap()
    }

    fn random_net(rng: &mut ChaCha8Rng, d: usize, m: usize, classes: usize) -> Network {
        let mut g = || rng.random_range(-1.0..1.0);
        let w1: Vec<Vec<f64>> = (0..m).map(|_| (0..d).map(|_| g()).collect()).collect();
        let b1: Vec<f64> = (0..m).map(|_| g()).collect();
        let w2: Vec<Vec<f64>> = (0..classes).map(|_| (0..m).map(|_| g()).collect()).collect();
        let b2: Vec<f64> = (0..classes).map(|_| g()).collect();
        Network::from_rows(&w1, &b1, &w2, &b2, None).unwrap()
    }

    // Independent scalar-loop evaluation used as the forward-pass oracle.
    fn naive_forward(w1: &[Vec<f64>], b1: &[f64], w2: &[Vec<f64>], b2: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; w1.len()];
        for i in 0..w1.len() {
            let mut s = 0.0;
            for j in 0..x.len() {
                s += w1[i][j] * x[j];
            }
            h[i] = if s + b1[i] > 0.0 { s + b1[i] } else { 0.0 };
        }
        let mut out = vec![0.0; w2.len()];
        for k in 0..w2.len() {
            let mut s = 0.0;
            for i in 0..h.len() {
                s += w2[k][i] * h[i];
            }
            out[k] = s + b2[k];
        }
        out
    }

    #[test]
    fn loads_minimal_network() {
        let net = e1();
        assert_eq!((net.input_dim(), net.hidden_dim(), net.num_classes()), (1, 1, 2));
        assert_eq!(net.domain(), None);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let bad = r#"{"d":2,"m":1,"L":2,"W1":[[1,2,3],[4,5,6]],"b1":[0],"W2":[[1],[0]],"b2":[0,0]}"#;
        assert!(matches!(Network::from_json(bad), Err(CrvError::Dimension(_))));
        let bad_cols = r#"{"d":2,"m":2,"L":2,"W1":[[1,2,3],[4,5,6]],"b1":[0,0],"W2":[[1,1],[0,0]],"b2":[0,0]}"#;
        assert!(matches!(Network::from_json(bad_cols), Err(CrvError::Dimension(_))));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let missing = r#"{"d":1,"m":1,"L":2,"b1":[0],"W2":[[1],[0]],"b2":[0,0]}"#;
        match Network::from_json(missing) {
            Err(CrvError::Schema(msg)) => assert!(msg.contains("W1"), "{msg}"),
            other => panic!("expected schema error, got {other:?}"),
        }
        let one_class = r#"{"d":1,"m":1,"L":1,"W1":[[1]],"b1":[0],"W2":[[1]],"b2":[0]}"#;
        assert!(Network::from_json(one_class).is_err());
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let text =
            r#"{"d":1,"m":1,"L":2,"W1":[[1.0]],"b1":[0.0],"W2":[[1.0],[0.0]],"b2":[0.0,0.0],"domain":[0.0,1.0]}"#;
        let net = Network::from_json(text).unwrap();
        let canon = net.to_json();
        let again = Network::from_json(&canon).unwrap();
        assert_eq!(again, net);
        assert_eq!(again.to_json(), canon);
    }

    #[test]
    fn forward_on_e1() {
        let net = e1();
        assert_eq!(forward(&net, &[1.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(forward(&net, &[-2.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(forward(&net, &[1.0, 2.0]), Err(CrvError::Dimension(_))));
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let net = random_net(&mut rng, 4, 6, 3);
            let w1 = matrix_to_rows(net.w1());
            let w2 = matrix_to_rows(net.w2());
            let b1: Vec<f64> = net.b1().iter().copied().collect();
            let b2: Vec<f64> = net.b2().iter().copied().collect();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = forward(&net, &x).unwrap();
            let want = naive_forward(&w1, &b1, &w2, &b2, &x);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(predicted_label(&[1.0, 0.0]), 0);
        assert_eq!(predicted_label(&[0.0, 0.0]), 0);
        assert_eq!(predicted_label(&[0.1, 0.3, 0.2]), 1);
    }

    #[test]
    fn margin_query_examples() {
        let q = margin_query(&e1(), 0, 1).unwrap();
        assert_eq!(q.q, vec![-1.0]);
        assert_eq!(q.c0, 0.0);
        assert!(matches!(margin_query(&e1(), 1, 1), Err(CrvError::InvalidQuery(_))));

        let biased = Network::from_rows(&[vec![1.0]], &[0.0], &[vec![1.0], vec![0.0]], &[0.5, 0.0], None).unwrap();
        assert_eq!(margin_query(&biased, 0, 1).unwrap().c0, -0.5);
    }

    #[test]
    fn margin_identity_against_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = random_net(&mut rng, 3, 5, 4);
        let obj = margin_query(&net, 2, 0).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = forward(&net, &x).unwrap();
            worst = worst.max((obj.evaluate(&net, &x).unwrap() - (f[0] - f[2])).abs());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn region_clips_to_domain() {
        let net = Network::from_rows(
            &[vec![1.0, 1.0]],
            &[0.0],
            &[vec![1.0], vec![0.0]],
            &[0.0, 0.0],
            Some((0.0, 1.0)),
        )
        .unwrap();
        let r = InputRegion::new(&net, &[0.05, 0.5], 0.1).unwrap();
        assert_eq!(r.lower()[0], 0.0);
        assert!((r.upper()[0] - 0.15).abs() < 1e-15);
        assert!((r.lower()[1] - 0.4).abs() < 1e-15);
        assert!(InputRegion::new(&net, &[0.5, 0.5], -1.0).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        let ds = Dataset::new("t", vec![(vec![0.25, 0.5], 1), (vec![0.1, 0.3333333333333333], 0)]);
        let text = ds.to_csv();
        assert!(text.starts_with("label,x1,x2\n"));
        let back = Dataset::from_csv_reader("t", text.as_bytes()).unwrap();
        assert_eq!(back, ds);
        assert!(Dataset::from_csv_reader("t", "lbl,x1\n0,1\n".as_bytes()).is_err());
    }

    proptest! {
        // Along a ray, the logits are affine on any stretch with a fixed activation pattern.
        #[test]
        fn forward_is_piecewise_linear(seed in 0u64..500, t0 in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, 3, 4, 3);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let at = |t: f64| -> Vec<f64> { x.iter().zip(&v).map(|(a, b)| a + t * b).collect() };
            let h = 1e-3;
            let pts = [at(t0 - h), at(t0), at(t0 + h)];
            let pattern = |p: &Vec<f64>| -> Vec<bool> { net.preactivations(p).unwrap().iter().map(|a| *a > 0.0).collect() };
            if pattern(&pts[0]) == pattern(&pts[1]) && pattern(&pts[1]) == pattern(&pts[2]) {
                let f: Vec<Vec<f64>> = pts.iter().map(|p| forward(&net, p).unwrap()).collect();
                for ((a, b), c) in f[0].iter().zip(&f[1]).zip(&f[2]) {
                    prop_assert!((a + c - 2.0 * b).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn json_round_trip_bit_exact(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = random_net(&mut rng, 2, 3, 2);
            let back = Network::from_json(&net.to_json()).unwrap();
            prop_assert_eq!(back, net);
        }
    }
}
