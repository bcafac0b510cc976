//! Reweighted label aggregator.
//!
//! Each labeling function `j` carries one parameter per class, `theta[j][y]`,
//! and a reliability weight `w[j]` in `[0, 1]`. When LF `j` fires its
//! potential for class `y` is `exp(w[j] * theta[j][y])`, otherwise 1. The
//! joint over (firing pattern, class) is the product of potentials divided by
//!
//! ```text
//! Z = sum_y prod_j (1 + exp(w[j] * theta[j][y]))
//! ```
//!
//! which sums over every firing pattern, so `P(l, y)` is a proper joint
//! distribution. With `w = 1` this is the unweighted model; with `w[j] = 0`
//! LF `j` drops out of every quantity.
//!
//! All products are evaluated as sums of logs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lf::LabelingFunction;

/// Clip applied to the agreement probability inside the quality-guide loss.
pub const RHO_CLIP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    /// `m x K` class parameters.
    pub theta: Array2<f64>,
    /// Per-LF reliability weights in `[0, 1]`.
    pub weights: Array1<f64>,
    /// Per-LF quality guides in `(0, 1)`.
    pub quality: Array1<f64>,
    /// Zero-based target class of each LF.
    pub targets: Vec<usize>,
}

/// Gradient with respect to `theta` and `weights`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregatorGrad {
    pub theta: Array2<f64>,
    pub weights: Array1<f64>,
}

impl AggregatorGrad {
    pub fn zeros(m: usize, k: usize) -> Self {
        AggregatorGrad {
            theta: Array2::zeros((m, k)),
            weights: Array1::zeros(m),
        }
    }

    pub fn scaled_add(&mut self, scale: f64, other: &AggregatorGrad) {
        self.theta.scaled_add(scale, &other.theta);
        self.weights.scaled_add(scale, &other.weights);
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.weights.iter()).all(|v| v.is_finite())
    }
}

/// Quality guide used by default: the LF's induction-time precision, floored
/// at 0.7 and kept strictly inside (0, 1).
pub fn default_quality(train_precision: f64) -> f64 {
    train_precision.max(0.7).clamp(RHO_CLIP, 1.0 - RHO_CLIP)
}

impl AggregatorParams {
    pub fn new(theta: Array2<f64>, weights: Array1<f64>, quality: Array1<f64>, targets: Vec<usize>) -> Self {
        let m = theta.nrows();
        assert_eq!(weights.len(), m, "weights length");
        assert_eq!(quality.len(), m, "quality length");
        assert_eq!(targets.len(), m, "targets length");
        assert!(targets.iter().all(|&t| t < theta.ncols()), "target class out of range");
        AggregatorParams {
            theta,
            weights,
            quality,
            targets,
        }
    }

    /// Random `theta ~ U[0, 1)`, weights at 1, quality guides from the LFs'
    /// training precision.
    pub fn init<R: Rng>(lfs: &[LabelingFunction], num_classes: usize, rng: &mut R) -> Self {
        let m = lfs.len();
        let theta = Array2::from_shape_fn((m, num_classes), |_| rng.gen::<f64>());
        AggregatorParams::new(
            theta,
            Array1::ones(m),
            lfs.iter().map(|lf| default_quality(lf.train_precision)).collect(),
            lfs.iter().map(|lf| lf.target_class).collect(),
        )
    }

    pub fn num_lfs(&self) -> usize {
        self.theta.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.theta.ncols()
    }

    /// `w[j] * theta[j][y]`.
    fn effective(&self) -> Array2<f64> {
        &self.theta * &self.weights.view().insert_axis(Axis(1))
    }

    pub fn clamp_weights(&mut self) {
        self.weights.mapv_inplace(|w| w.clamp(0.0, 1.0));
    }
}

pub fn potential(params: &AggregatorParams, lf: usize, class: usize, fired: bool) -> f64 {
    if fired {
        (params.weights[lf] * params.theta[[lf, class]]).exp()
    } else {
        1.0
    }
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(v: ArrayView1<'_, f64>) -> f64 {
    let max = v.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(v);
    v.mapv(|x| (x - lse).exp())
}

/// `log Z` and the class responsibilities `pi_y` of the partition function.
fn log_partition_parts(params: &AggregatorParams) -> (f64, Array1<f64>, Array2<f64>) {
    let a = params.effective();
    let per_class: Array1<f64> = a.map(|&x| softplus(x)).sum_axis(Axis(0));
    let log_z = log_sum_exp(per_class.view());
    let pi = per_class.mapv(|b| (b - log_z).exp());
    (log_z, pi, a)
}

pub fn log_partition(params: &AggregatorParams) -> f64 {
    log_partition_parts(params).0
}

/// Unnormalized log-scores `s[i][y] = sum_j l[i][j] w[j] theta[j][y]`.
pub fn scores(params: &AggregatorParams, fired: ArrayView2<'_, f64>) -> Array2<f64> {
    fired.dot(&params.effective())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelPosterior {
    pub probs: Array1<f64>,
}

impl LabelPosterior {
    pub fn uniform(k: usize) -> Self {
        LabelPosterior {
            probs: Array1::from_elem(k, 1.0 / k as f64),
        }
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(self.probs.view())
    }
}

pub(crate) fn argmax(v: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn posterior(params: &AggregatorParams, fired: ArrayView1<'_, f64>) -> LabelPosterior {
    let s = fired.dot(&params.effective());
    LabelPosterior { probs: softmax(s.view()) }
}

/// Row-wise posteriors `P(y | l_i)`.
pub fn posteriors(params: &AggregatorParams, fired: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut s = scores(params, fired);
    for mut row in s.rows_mut() {
        let p = softmax(row.view());
        row.assign(&p);
    }
    s
}

/// `g(l_i)`: the hard label predicted by the aggregator.
pub fn predict_g(params: &AggregatorParams, fired: ArrayView1<'_, f64>) -> usize {
    posterior(params, fired).argmax()
}

/// Supervised negative log-likelihood `-sum_i log P(l_i, y_i)`.
pub fn ll_supervised(params: &AggregatorParams, fired: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    assert_eq!(fired.nrows(), labels.len());
    let s = scores(params, fired);
    let log_z = log_partition(params);
    labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_z - s[[i, y]])
        .sum()
}

/// Unsupervised negative log-likelihood `-sum_i log sum_y P(l_i, y)`.
pub fn ll_unsupervised(params: &AggregatorParams, fired: ArrayView2<'_, f64>) -> f64 {
    let s = scores(params, fired);
    let log_z = log_partition(params);
    s.rows()
        .into_iter()
        .map(|row| log_z - log_sum_exp(row))
        .sum()
}

/// Agreement probability of each LF with its own target class.
pub fn agreement(params: &AggregatorParams) -> Array1<f64> {
    let a = params.effective();
    Array1::from_shape_fn(params.num_lfs(), |j| {
        softmax(a.row(j))[params.targets[j]]
    })
}

/// Per-LF cross-entropy between quality guide `q[j]` and agreement `rho[j]`.
pub fn quality_guide_loss(params: &AggregatorParams) -> f64 {
    agreement(params)
        .iter()
        .zip(params.quality.iter())
        .map(|(&rho, &q)| {
            let r = rho.clamp(RHO_CLIP, 1.0 - RHO_CLIP);
            -(q * r.ln() + (1.0 - q) * (1.0 - r).ln())
        })
        .sum()
}

/// Chains a gradient with respect to `a = w * theta` onto `theta` and `w`.
fn chain_effective(params: &AggregatorParams, d_a: &Array2<f64>, grad: &mut AggregatorGrad) {
    for j in 0..params.num_lfs() {
        let wj = params.weights[j];
        let mut dw = 0.0;
        for y in 0..params.num_classes() {
            grad.theta[[j, y]] += wj * d_a[[j, y]];
            dw += params.theta[[j, y]] * d_a[[j, y]];
        }
        grad.weights[j] += dw;
    }
}

/// Chains a gradient with respect to the scores `s` (`n x K`) onto `theta`
/// and `w`.
pub fn chain_scores(
    params: &AggregatorParams,
    fired: ArrayView2<'_, f64>,
    d_scores: &Array2<f64>,
    grad: &mut AggregatorGrad,
) {
    // ds[i][y]/da[j][y] = l[i][j]
    let d_a = fired.t().dot(d_scores);
    chain_effective(params, &d_a, grad);
}

/// Gradient of `n * log Z` with respect to `a`.
fn log_partition_grad_effective(params: &AggregatorParams, n: f64) -> Array2<f64> {
    let (_, pi, a) = log_partition_parts(params);
    let mut d_a = a.mapv(sigmoid);
    for mut row in d_a.rows_mut() {
        row *= &pi;
        row *= n;
    }
    d_a
}

pub fn ll_supervised_grad(
    params: &AggregatorParams,
    fired: ArrayView2<'_, f64>,
    labels: &[usize],
) -> AggregatorGrad {
    let (m, k) = params.theta.dim();
    let mut grad = AggregatorGrad::zeros(m, k);
    let mut d_s = Array2::zeros((fired.nrows(), k));
    for (i, &y) in labels.iter().enumerate() {
        d_s[[i, y]] = -1.0;
    }
    chain_scores(params, fired, &d_s, &mut grad);
    chain_effective(params, &log_partition_grad_effective(params, labels.len() as f64), &mut grad);
    grad
}

pub fn ll_unsupervised_grad(params: &AggregatorParams, fired: ArrayView2<'_, f64>) -> AggregatorGrad {
    let (m, k) = params.theta.dim();
    let mut grad = AggregatorGrad::zeros(m, k);
    let d_s = -posteriors(params, fired);
    chain_scores(params, fired, &d_s, &mut grad);
    chain_effective(params, &log_partition_grad_effective(params, fired.nrows() as f64), &mut grad);
    grad
}

pub fn quality_guide_grad(params: &AggregatorParams) -> AggregatorGrad {
    let (m, k) = params.theta.dim();
    let a = params.effective();
    let mut d_a = Array2::zeros((m, k));
    for j in 0..m {
        let p = softmax(a.row(j));
        let t = params.targets[j];
        let rho = p[t];
        if !(RHO_CLIP..=1.0 - RHO_CLIP).contains(&rho) {
            continue;
        }
        let q = params.quality[j];
        let d_rho = -q / rho + (1.0 - q) / (1.0 - rho);
        for y in 0..k {
            let delta = if y == t { 1.0 } else { 0.0 };
            d_a[[j, y]] = d_rho * rho * (delta - p[y]);
        }
    }
    let mut grad = AggregatorGrad::zeros(m, k);
    chain_effective(params, &d_a, &mut grad);
    grad
}

/// `dP[i][y] / dw[j]` for every row: returns one `n x K` matrix per LF.
pub fn posterior_weight_jacobian(params: &AggregatorParams, fired: ArrayView2<'_, f64>) -> Vec<Array2<f64>> {
    let post = posteriors(params, fired);
    let n = fired.nrows();
    let k = params.num_classes();
    (0..params.num_lfs())
        .map(|j| {
            let theta_j = params.theta.row(j);
            let mut out = Array2::zeros((n, k));
            for i in 0..n {
                if fired[[i, j]] == 0.0 {
                    continue;
                }
                let p = post.row(i);
                let mean = p.dot(&theta_j);
                for y in 0..k {
                    out[[i, y]] = fired[[i, j]] * p[y] * (theta_j[y] - mean);
                }
            }
            out
        })
        .collect()
}
