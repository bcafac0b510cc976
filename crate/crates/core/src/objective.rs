//! The reweighted joint semi-supervised loss over aggregator parameters
//! (`theta`, `w`) and classifier parameters (`phi`):
//!
//! ```text
//! L = sum_{i in s} CE(f(x_i), y_i)                 ce_supervised
//!   + sum_{i in u} H(f(x_i))                       entropy_unsup
//!   + sum_{i in u, some LF fires} CE(f(x_i), g_i)  ce_vs_g
//!   + LL_s(theta, w | s) + LL_u(theta, w | u)      ll_s, ll_u
//!   + sum_{i in s + u} KL(P(. | l_i) || f(x_i))    kl_consistency
//!   + R(theta, w | q)                              quality_guide
//! ```
//!
//! `g_i` is the aggregator's hard prediction and is treated as a constant
//! target. All terms are sums over the minibatch.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::aggregator::{self, AggregatorGrad, AggregatorParams};
use crate::error::{Error, Result};
use crate::model::{DropoutMasks, FeatureModel, ForwardPass};

/// Multiplier per loss term; 0 switches a term off.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub ce_supervised: f64,
    pub entropy_unsup: f64,
    pub ce_vs_g: f64,
    pub ll_s: f64,
    pub ll_u: f64,
    pub kl_consistency: f64,
    pub quality_guide: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        TermWeights {
            ce_supervised: 1.0,
            entropy_unsup: 1.0,
            ce_vs_g: 1.0,
            ll_s: 1.0,
            ll_u: 1.0,
            kl_consistency: 1.0,
            quality_guide: 1.0,
        }
    }
}

impl TermWeights {
    pub fn zeros() -> Self {
        TermWeights {
            ce_supervised: 0.0,
            entropy_unsup: 0.0,
            ce_vs_g: 0.0,
            ll_s: 0.0,
            ll_u: 0.0,
            kl_consistency: 0.0,
            quality_guide: 0.0,
        }
    }

    /// Only the supervised cross-entropy.
    pub fn supervised_only() -> Self {
        TermWeights {
            ce_supervised: 1.0,
            entropy_unsup: 0.0,
            ce_vs_g: 0.0,
            ll_s: 0.0,
            ll_u: 0.0,
            kl_consistency: 0.0,
            quality_guide: 0.0,
        }
    }

    pub fn as_array(&self) -> [f64; 7] {
        [
            self.ce_supervised,
            self.entropy_unsup,
            self.ce_vs_g,
            self.ll_s,
            self.ll_u,
            self.kl_consistency,
            self.quality_guide,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub terms: TermWeights,
    /// Use the aggregator posterior instead of its argmax as the `ce_vs_g`
    /// target (gradients then flow into `theta` and `w` through it).
    pub soft_g: bool,
}

/// Unweighted value of every term plus the weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_supervised: f64,
    pub entropy_unsup: f64,
    pub ce_vs_g: f64,
    pub ll_s: f64,
    pub ll_u: f64,
    pub kl_consistency: f64,
    pub quality_guide: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const TERM_NAMES: [&'static str; 7] = [
        "ce_supervised",
        "entropy_unsup",
        "ce_vs_g",
        "ll_s",
        "ll_u",
        "kl_consistency",
        "quality_guide",
    ];

    pub fn terms(&self) -> [f64; 7] {
        [
            self.ce_supervised,
            self.entropy_unsup,
            self.ce_vs_g,
            self.ll_s,
            self.ll_u,
            self.kl_consistency,
            self.quality_guide,
        ]
    }
}

/// A labeled minibatch stacked on top of an unlabeled one.
#[derive(Clone, Debug, PartialEq)]
pub struct JointBatch {
    /// Features, supervised rows first.
    pub x: Array2<f64>,
    /// LF firings aligned with `x`.
    pub fired: Array2<f64>,
    /// Gold labels of the first `labels.len()` rows.
    pub labels: Vec<usize>,
}

impl JointBatch {
    pub fn new(
        sup_x: ArrayView2<'_, f64>,
        sup_fired: ArrayView2<'_, f64>,
        labels: Vec<usize>,
        unl_x: ArrayView2<'_, f64>,
        unl_fired: ArrayView2<'_, f64>,
    ) -> Self {
        assert_eq!(sup_x.nrows(), labels.len());
        assert_eq!(sup_x.nrows(), sup_fired.nrows());
        assert_eq!(unl_x.nrows(), unl_fired.nrows());
        JointBatch {
            x: concatenate![Axis(0), sup_x, unl_x],
            fired: concatenate![Axis(0), sup_fired, unl_fired],
            labels,
        }
    }

    pub fn num_supervised(&self) -> usize {
        self.labels.len()
    }

    pub fn num_rows(&self) -> usize {
        self.x.nrows()
    }

    fn abstains(&self, i: usize) -> bool {
        self.fired.row(i).iter().all(|&f| f == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointGrad {
    pub aggregator: AggregatorGrad,
    pub phi: Array1<f64>,
}

impl JointGrad {
    pub fn is_finite(&self) -> bool {
        self.aggregator.is_finite() && self.phi.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub grad: JointGrad,
}

fn check(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(name.to_string()))
    }
}

/// Weight on `-sum_y P_iy log f_iy` in row `i`, i.e. how strongly the
/// classifier is pulled towards the aggregator posterior there.
fn posterior_coupling(batch: &JointBatch, cfg: &ObjectiveConfig, i: usize) -> f64 {
    let mut c = cfg.terms.kl_consistency;
    if cfg.soft_g && i >= batch.num_supervised() && !batch.abstains(i) {
        c += cfg.terms.ce_vs_g;
    }
    c
}

/// Evaluates the loss and its exact gradients given a forward pass of `model`
/// over `batch.x` (with whatever dropout masks the caller chose).
pub fn evaluate_with_pass(
    agg: &AggregatorParams,
    model: &FeatureModel,
    batch: &JointBatch,
    pass: &ForwardPass,
    cfg: &ObjectiveConfig,
) -> Result<Evaluation> {
    let n = batch.num_rows();
    let ns = batch.num_supervised();
    let k = agg.num_classes();
    let m = agg.num_lfs();
    if batch.fired.ncols() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: batch.fired.ncols(),
            context: "trigger matrix vs aggregator",
        });
    }
    let tw = &cfg.terms;
    let lp = &pass.log_probs;
    let p = pass.probs();
    let scores = aggregator::scores(agg, batch.fired.view());
    let mut log_post = scores.clone();
    for mut row in log_post.rows_mut() {
        let lse = aggregator::log_sum_exp(row.view());
        row.mapv_inplace(|v| v - lse);
    }
    let post = log_post.mapv(f64::exp);

    let mut loss = LossBreakdown::default();
    let mut d_logits = Array2::<f64>::zeros((n, k));
    let mut d_scores = Array2::<f64>::zeros((n, k));
    let mut agg_grad = AggregatorGrad::zeros(m, k);

    for (i, &y) in batch.labels.iter().enumerate() {
        loss.ce_supervised -= lp[[i, y]];
        if tw.ce_supervised != 0.0 {
            let mut row = d_logits.row_mut(i);
            row.scaled_add(tw.ce_supervised, &p.row(i));
            row[y] -= tw.ce_supervised;
        }
    }

    for i in ns..n {
        let h: f64 = -p.row(i).iter().zip(lp.row(i)).map(|(a, b)| a * b).sum::<f64>();
        loss.entropy_unsup += h;
        if tw.entropy_unsup != 0.0 {
            for c in 0..k {
                d_logits[[i, c]] -= tw.entropy_unsup * p[[i, c]] * (lp[[i, c]] + h);
            }
        }

        if batch.abstains(i) {
            continue;
        }
        if cfg.soft_g {
            let ce: f64 = -post.row(i).dot(&lp.row(i));
            loss.ce_vs_g += ce;
            if tw.ce_vs_g != 0.0 {
                // d/ds_y of -sum P log f = -P_y (log f_y + ce)
                for c in 0..k {
                    d_scores[[i, c]] -= tw.ce_vs_g * post[[i, c]] * (lp[[i, c]] + ce);
                }
            }
        } else {
            let g = aggregator::argmax(post.row(i));
            loss.ce_vs_g -= lp[[i, g]];
            if tw.ce_vs_g != 0.0 {
                let mut row = d_logits.row_mut(i);
                row.scaled_add(tw.ce_vs_g, &p.row(i));
                row[g] -= tw.ce_vs_g;
            }
        }
    }

    for i in 0..n {
        let diff = &log_post.row(i) - &lp.row(i);
        let kl = post.row(i).dot(&diff);
        loss.kl_consistency += kl;
        if tw.kl_consistency != 0.0 {
            for c in 0..k {
                d_scores[[i, c]] += tw.kl_consistency * post[[i, c]] * (diff[c] - kl);
            }
        }
        let coupling = posterior_coupling(batch, cfg, i);
        if coupling != 0.0 {
            let mut row = d_logits.row_mut(i);
            row.scaled_add(coupling, &p.row(i));
            row.scaled_add(-coupling, &post.row(i));
        }
    }
    aggregator::chain_scores(agg, batch.fired.view(), &d_scores, &mut agg_grad);

    let sup_fired = batch.fired.slice(ndarray::s![..ns, ..]);
    let unl_fired = batch.fired.slice(ndarray::s![ns.., ..]);
    loss.ll_s = aggregator::ll_supervised(agg, sup_fired, &batch.labels);
    if tw.ll_s != 0.0 && ns > 0 {
        agg_grad.scaled_add(tw.ll_s, &aggregator::ll_supervised_grad(agg, sup_fired, &batch.labels));
    }
    loss.ll_u = aggregator::ll_unsupervised(agg, unl_fired);
    if tw.ll_u != 0.0 && n > ns {
        agg_grad.scaled_add(tw.ll_u, &aggregator::ll_unsupervised_grad(agg, unl_fired));
    }
    loss.quality_guide = aggregator::quality_guide_loss(agg);
    if tw.quality_guide != 0.0 {
        agg_grad.scaled_add(tw.quality_guide, &aggregator::quality_guide_grad(agg));
    }

    let terms = loss.terms();
    for (name, v) in LossBreakdown::TERM_NAMES.iter().zip(terms) {
        check(name, v)?;
    }
    loss.total = terms
        .iter()
        .zip(tw.as_array())
        .filter(|(_, w)| *w != 0.0)
        .map(|(v, w)| v * w)
        .sum();

    let phi = model.backward(pass, &d_logits);
    let grad = JointGrad {
        aggregator: agg_grad,
        phi,
    };
    if !grad.is_finite() {
        return Err(Error::Numerical("joint loss gradient".into()));
    }
    Ok(Evaluation { loss, grad })
}

/// Loss and gradients with respect to `theta`, `w` and `phi`.
pub fn joint_loss(
    agg: &AggregatorParams,
    model: &FeatureModel,
    batch: &JointBatch,
    masks: Option<&DropoutMasks>,
    cfg: &ObjectiveConfig,
) -> Result<Evaluation> {
    let pass = model.forward_batch(batch.x.view(), masks)?;
    evaluate_with_pass(agg, model, batch, &pass, cfg)
}

/// Mixed second derivative `d/dw [ v . grad_phi L ]` for a fixed parameter
/// direction `v`, using the forward pass (and its dropout masks) that
/// produced `grad_phi L`.
///
/// Only terms that couple the classifier to the aggregator posterior depend
/// on both `phi` and `w`, so this is
/// `-sum_i c_i sum_y (dP_iy / dw_j) (J_i v)_y` with `c_i` the coupling weight.
pub fn weight_phi_cross_derivative(
    agg: &AggregatorParams,
    model: &FeatureModel,
    batch: &JointBatch,
    pass: &ForwardPass,
    direction: &Array1<f64>,
    cfg: &ObjectiveConfig,
) -> Array1<f64> {
    let tangent = model.logits_tangent(pass, direction);
    let jac = aggregator::posterior_weight_jacobian(agg, batch.fired.view());
    let coupling: Vec<f64> = (0..batch.num_rows())
        .map(|i| posterior_coupling(batch, cfg, i))
        .collect();
    jac.iter()
        .map(|dp| {
            -dp.rows()
                .into_iter()
                .zip(tangent.rows())
                .zip(&coupling)
                .map(|((d, t), c)| c * d.dot(&t))
                .sum::<f64>()
        })
        .collect()
}
