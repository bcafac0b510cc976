mod common;

use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use wisdom::aggregator::AggregatorParams;
use wisdom::bilevel::{hypergradient, validation_loss, virtual_inner_step, HypergradMode, SplitData};
use wisdom::model::{Adam, FeatureModel, MlpShape};
use wisdom::objective::{joint_loss, JointBatch, ObjectiveConfig, TermWeights};

#[test]
fn virtual_step_is_one_plain_descent_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let (m, k, d) = (3, 2, 3);
    let agg = random_params(&mut rng, m, k, false);
    let model = FeatureModel::init(MlpShape::new(d, vec![4], k), 0.0, 5).unwrap();
    let model = model.with_params(model.params.mapv(|v| v + rng.gen_range(-0.1..0.1)));
    let batch = random_batch(&mut rng, 3, 3, d, m, k);
    let cfg = ObjectiveConfig::default();
    let (lr_theta, lr_phi) = (0.05, 0.2);
    let (theta_star, phi_star) = virtual_inner_step(&agg, &model, &batch, None, &cfg, lr_theta, lr_phi).unwrap();

    let total = |a: &AggregatorParams, f: &FeatureModel| joint_loss(a, f, &batch, None, &cfg).unwrap().loss.total;
    let h = 1e-6;
    for j in 0..m {
        for y in 0..k {
            let (mut p, mut q) = (agg.clone(), agg.clone());
            p.theta[[j, y]] += h;
            q.theta[[j, y]] -= h;
            let g = (total(&p, &model) - total(&q, &model)) / (2.0 * h);
            assert!((theta_star.theta[[j, y]] - (agg.theta[[j, y]] - lr_theta * g)).abs() < 1e-8);
        }
    }
    assert_eq!(theta_star.weights, agg.weights);
    for i in 0..model.params.len() {
        let mut p = model.params.clone();
        let mut q = model.params.clone();
        p[i] += h;
        q[i] -= h;
        let g = (total(&agg, &model.with_params(p)) - total(&agg, &model.with_params(q))) / (2.0 * h);
        assert!((phi_star.params[i] - (model.params[i] - lr_phi * g)).abs() < 1e-8);
    }
}

/// Two features: the label itself and an independent coin. The single LF
/// fires on the coin and votes class 1, so it carries no information.
fn noise_rows(copies: usize) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..copies {
        for y in 0..2 {
            for coin in 0..2 {
                x.extend([y as f64, coin as f64]);
                labels.push(y);
            }
        }
    }
    let x = Array2::from_shape_vec((labels.len(), 2), x).unwrap();
    let fired = x.column(1).to_owned().insert_axis(ndarray::Axis(1));
    (x, fired, labels)
}

#[test]
fn pure_noise_lf_gets_positive_hypergradient() {
    let (sx, sf, sl) = noise_rows(2);
    let (ux, uf, _) = noise_rows(4);
    let (vx, vf, vl) = noise_rows(4);
    let agg = AggregatorParams::new(array![[0.0, 1.0]], Array1::ones(1), Array1::from_elem(1, 0.5), vec![1]);

    // Fit f on the supervised rows so it already separates the classes.
    let sup = JointBatch::new(sx.view(), sf.view(), sl.clone(), ux.slice(ndarray::s![..0, ..]), uf.slice(ndarray::s![..0, ..]));
    let fit = ObjectiveConfig {
        terms: TermWeights::supervised_only(),
        soft_g: false,
    };
    let mut model = FeatureModel::init(MlpShape::new(2, vec![8], 2), 0.0, 3).unwrap();
    let mut adam = Adam::new(0.01, model.num_params());
    for _ in 0..300 {
        let g = joint_loss(&agg, &model, &sup, None, &fit).unwrap().grad.phi;
        let mut params = model.params.clone();
        adam.step(params.as_slice_mut().unwrap(), g.as_slice().unwrap()).unwrap();
        model = model.with_params(params);
    }

    let batch = JointBatch::new(sx.view(), sf.view(), sl, ux.view(), uf.view());
    let validation = SplitData { x: vx, fired: vf, labels: vl };
    let cfg = ObjectiveConfig::default();
    let alpha = 0.1;
    let outer = |w: f64| {
        let mut a = agg.clone();
        a.weights[0] = w;
        let g = joint_loss(&a, &model, &batch, None, &cfg).unwrap().grad.phi;
        let star = model.with_params(&model.params - &(alpha * &g));
        validation_loss(&star, validation.x.view(), &validation.labels).unwrap().0
    };
    let eps = 1e-5;
    let brute = (outer(1.0 + eps) - outer(1.0 - eps)) / (2.0 * eps);
    assert!(brute > 0.0, "finite-difference hypergradient {brute}");
    for mode in [HypergradMode::Exact, HypergradMode::FirstOrder] {
        let h = hypergradient(&agg, &model, &batch, None, &validation, &cfg, alpha, mode).unwrap();
        assert!(h[0] > 0.0, "{mode:?}: {h}");
        assert!(rel_err(h[0], brute, 1e-9) < 1e-2, "{mode:?}: {} vs {brute}", h[0]);
    }
}
