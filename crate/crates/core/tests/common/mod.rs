//! Independent reference implementations and fixtures shared by the
//! integration tests. Nothing here calls into the library's label-model code.

#![allow(dead_code)]

use std::io::Write;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wisdom::aggregator::AggregatorParams;
use wisdom::objective::JointBatch;

/// Writes a line straight to stderr so it shows up even when the test
/// harness captures output.
pub fn report(line: impl AsRef<str>) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{}", line.as_ref());
}

pub fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Relative error with an absolute floor for entries near zero.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Unweighted label model written in product form.
pub struct Cage<'a> {
    pub theta: &'a Array2<f64>,
}

impl Cage<'_> {
    fn m(&self) -> usize {
        self.theta.nrows()
    }

    fn k(&self) -> usize {
        self.theta.ncols()
    }

    /// `prod_j psi_j(l_j, y)`.
    pub fn joint_unnormalized(&self, l: &[f64], y: usize) -> f64 {
        (0..self.m())
            .map(|j| if l[j] > 0.0 { self.theta[[j, y]].exp() } else { 1.0 })
            .product()
    }

    pub fn partition(&self) -> f64 {
        (0..self.k())
            .map(|y| (0..self.m()).map(|j| 1.0 + self.theta[[j, y]].exp()).product::<f64>())
            .sum()
    }

    pub fn posterior(&self, l: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = (0..self.k()).map(|y| self.joint_unnormalized(l, y)).collect();
        let z: f64 = u.iter().sum();
        u.iter().map(|v| v / z).collect()
    }

    pub fn nll_supervised(&self, rows: &[Vec<f64>], labels: &[usize]) -> f64 {
        let z = self.partition();
        rows.iter()
            .zip(labels)
            .map(|(l, &y)| -(self.joint_unnormalized(l, y) / z).ln())
            .sum()
    }

    pub fn nll_unsupervised(&self, rows: &[Vec<f64>]) -> f64 {
        let z = self.partition();
        rows.iter()
            .map(|l| {
                let marginal: f64 = (0..self.k()).map(|y| self.joint_unnormalized(l, y)).sum();
                -(marginal / z).ln()
            })
            .sum()
    }

    pub fn quality_guide(&self, quality: &Array1<f64>, targets: &[usize]) -> f64 {
        (0..self.m())
            .map(|j| {
                let e: Vec<f64> = (0..self.k()).map(|y| self.theta[[j, y]].exp()).collect();
                let rho = (e[targets[j]] / e.iter().sum::<f64>()).clamp(1e-6, 1.0 - 1e-6);
                let q = quality[j];
                -(q * rho.ln() + (1.0 - q) * (1.0 - rho).ln())
            })
            .sum()
    }
}

/// Enumerates every trigger pattern `l` in `{0,1}^m` together with every
/// class and the weighted joint `prod_j exp(w_j theta_jy l_j) / Z`, where `Z`
/// is the brute-force sum over all `(l, y)`.
pub struct Enumerated {
    pub patterns: Vec<Vec<f64>>,
    /// `joint[p][y]`
    pub joint: Vec<Vec<f64>>,
    pub z: f64,
}

pub fn enumerate_weighted(theta: &Array2<f64>, w: &Array1<f64>) -> Enumerated {
    let (m, k) = theta.dim();
    let patterns: Vec<Vec<f64>> = (0..1usize << m)
        .map(|bits| (0..m).map(|j| ((bits >> j) & 1) as f64).collect())
        .collect();
    let unnorm: Vec<Vec<f64>> = patterns
        .iter()
        .map(|l| {
            (0..k)
                .map(|y| (0..m).map(|j| (w[j] * theta[[j, y]] * l[j]).exp()).product())
                .collect()
        })
        .collect();
    let z: f64 = unnorm.iter().flatten().sum();
    let joint = unnorm
        .iter()
        .map(|r| r.iter().map(|v| v / z).collect())
        .collect();
    Enumerated { patterns, joint, z }
}

pub fn random_params(rng: &mut ChaCha8Rng, m: usize, k: usize, unit_weights: bool) -> AggregatorParams {
    let theta = Array2::from_shape_fn((m, k), |_| rng.gen_range(-2.0..2.0));
    let weights = if unit_weights {
        Array1::ones(m)
    } else {
        Array1::from_shape_fn(m, |_| rng.gen_range(0.0..1.0))
    };
    let quality = Array1::from_shape_fn(m, |_| rng.gen_range(0.55..0.95));
    let targets = (0..m).map(|_| rng.gen_range(0..k)).collect();
    AggregatorParams::new(theta, weights, quality, targets)
}

pub fn random_fired(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 })
}

/// Random supervised+unlabeled batch; the last unlabeled row never fires.
pub fn random_batch(rng: &mut ChaCha8Rng, ns: usize, nu: usize, d: usize, m: usize, k: usize) -> JointBatch {
    let sx = Array2::from_shape_fn((ns, d), |_| rng.gen_range(0.0..2.0));
    let ux = Array2::from_shape_fn((nu, d), |_| rng.gen_range(0.0..2.0));
    let sf = random_fired(rng, ns, m);
    let mut uf = random_fired(rng, nu, m);
    if nu > 0 {
        uf.row_mut(nu - 1).fill(0.0);
    }
    let labels = (0..ns).map(|_| rng.gen_range(0..k)).collect();
    JointBatch::new(sx.view(), sf.view(), labels, ux.view(), uf.view())
}

pub fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Macro-F1 through an explicit confusion matrix.
pub fn macro_f1_oracle(preds: &[usize], truths: &[usize], k: usize) -> f64 {
    let mut cm = vec![vec![0usize; k]; k];
    for (&p, &t) in preds.iter().zip(truths) {
        cm[t][p] += 1;
    }
    let mut total = 0.0;
    for c in 0..k {
        let tp = cm[c][c];
        let fp: usize = (0..k).filter(|&t| t != c).map(|t| cm[t][c]).sum();
        let fn_: usize = (0..k).filter(|&p| p != c).map(|p| cm[c][p]).sum();
        if tp > 0 {
            total += (2 * tp) as f64 / (2 * tp + fp + fn_) as f64;
        }
    }
    total / k as f64
}
