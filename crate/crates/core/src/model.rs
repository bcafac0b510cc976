//! Feature-based classifier: a ReLU MLP over count features with inverted
//! dropout, hand-derived reverse-mode gradients, a forward-mode directional
//! derivative, and an Adam optimizer.
//!
//! Parameters live in one flat vector. Layer `l` stores its `in x out` weight
//! matrix row-major, followed by its `out` biases.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{log_sum_exp, LabelPosterior};
use crate::error::{Error, Result};

/// Smallest probability fed to a logarithm in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl MlpShape {
    pub fn new(input: usize, hidden: Vec<usize>, classes: usize) -> Self {
        MlpShape {
            input,
            hidden,
            classes,
        }
    }

    /// `(fan_in, fan_out)` of every layer, output layer last.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input];
        dims.extend(&self.hidden);
        dims.push(self.classes);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers()
            .iter()
            .map(|(i, o)| {
                let start = off;
                off += i * o + o;
                start
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub shape: MlpShape,
    /// Probability of zeroing a hidden unit in training mode.
    pub dropout: f64,
    pub params: Array1<f64>,
}

/// Inverted-dropout masks, one `n x hidden` matrix per hidden layer holding
/// either 0 or `1 / keep`.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks(pub Vec<Array2<f64>>);

/// Activations kept from a forward pass for the backward and tangent passes.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Input to each layer (after ReLU and dropout for hidden layers).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<f64>>,
    masks: Option<DropoutMasks>,
    pub logits: Array2<f64>,
    pub log_probs: Array2<f64>,
}

impl ForwardPass {
    pub fn probs(&self) -> Array2<f64> {
        self.log_probs.mapv(f64::exp)
    }

    pub fn num_rows(&self) -> usize {
        self.logits.nrows()
    }
}

fn log_softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.view());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl FeatureModel {
    /// He-style uniform initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// with zero biases.
    pub fn init(shape: MlpShape, dropout: f64, seed: u64) -> Result<Self> {
        if shape.input == 0 || shape.classes == 0 || shape.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid network shape {shape:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {dropout}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Array1::zeros(shape.num_params());
        for ((fan_in, fan_out), off) in shape.layers().into_iter().zip(shape.offsets()) {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in params.slice_mut(s![off..off + fan_in * fan_out]).iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Ok(FeatureModel {
            shape,
            dropout,
            params,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn with_params(&self, params: Array1<f64>) -> Self {
        assert_eq!(params.len(), self.params.len());
        FeatureModel {
            shape: self.shape.clone(),
            dropout: self.dropout,
            params,
        }
    }

    fn layer_in<'a>(&self, flat: &'a Array1<f64>, l: usize) -> (ArrayView2<'a, f64>, ArrayView1<'a, f64>) {
        let (fan_in, fan_out) = self.shape.layers()[l];
        let off = self.shape.offsets()[l];
        let w = flat
            .slice(s![off..off + fan_in * fan_out])
            .into_shape_with_order((fan_in, fan_out))
            .expect("contiguous layer weights");
        let b = flat.slice(s![off + fan_in * fan_out..off + fan_in * fan_out + fan_out]);
        (w, b)
    }

    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        self.layer_in(&self.params, l)
    }

    pub fn sample_masks<R: Rng>(&self, rows: usize, rng: &mut R) -> DropoutMasks {
        let keep = 1.0 - self.dropout;
        DropoutMasks(
            self.shape
                .hidden
                .iter()
                .map(|&h| {
                    Array2::from_shape_fn((rows, h), |_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                })
                .collect(),
        )
    }

    /// Batched forward pass. `masks` of `None` is evaluation mode.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>, masks: Option<&DropoutMasks>) -> Result<ForwardPass> {
        if x.ncols() != self.shape.input {
            return Err(Error::Dimension {
                expected: self.shape.input,
                actual: x.ncols(),
                context: "feature vector vs network input",
            });
        }
        let n_layers = self.shape.layers().len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut current = x.to_owned();
        for l in 0..n_layers - 1 {
            let (w, b) = self.layer(l);
            let z = current.dot(&w) + &b;
            let mut act = z.mapv(|v| v.max(0.0));
            if let Some(m) = masks {
                act *= &m.0[l];
            }
            if act.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("hidden layer {}", l + 1)));
            }
            inputs.push(std::mem::replace(&mut current, act));
            pre.push(z);
        }
        let (w, b) = self.layer(n_layers - 1);
        let logits = current.dot(&w) + &b;
        inputs.push(current);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("output layer".into()));
        }
        let log_probs = log_softmax_rows(&logits);
        Ok(ForwardPass {
            inputs,
            pre,
            masks: masks.cloned(),
            logits,
            log_probs,
        })
    }

    /// Class distribution for one feature vector. In training mode a fresh
    /// dropout mask is drawn from `rng`; evaluation mode never touches it.
    pub fn forward<R: Rng>(&self, x: ArrayView1<'_, f64>, train_mode: bool, rng: &mut R) -> Result<LabelPosterior> {
        let x2 = x.insert_axis(Axis(0));
        let masks = train_mode.then(|| self.sample_masks(1, rng));
        let pass = self.forward_batch(x2, masks.as_ref())?;
        Ok(LabelPosterior {
            probs: pass.log_probs.row(0).mapv(f64::exp),
        })
    }

    /// Evaluation-mode class probabilities.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward_batch(x, None)?.probs())
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let p = self.forward_batch(x, None)?;
        Ok(p.logits
            .rows()
            .into_iter()
            .map(crate::aggregator::argmax)
            .collect())
    }

    /// Reverse pass: gradient of a loss with respect to the flat parameters,
    /// given the loss gradient with respect to the logits.
    pub fn backward(&self, pass: &ForwardPass, d_logits: &Array2<f64>) -> Array1<f64> {
        let mut grad = Array1::zeros(self.params.len());
        let layers = self.shape.layers();
        let offsets = self.shape.offsets();
        let mut delta = d_logits.clone();
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let off = offsets[l];
            let d_w = pass.inputs[l].t().dot(&delta);
            grad.slice_mut(s![off..off + fan_in * fan_out])
                .assign(&Array1::from_iter(d_w.iter().copied()));
            grad.slice_mut(s![off + fan_in * fan_out..off + fan_in * fan_out + fan_out])
                .assign(&delta.sum_axis(Axis(0)));
            if l == 0 {
                break;
            }
            let (w, _) = self.layer(l);
            let mut d_in = delta.dot(&w.t());
            if let Some(m) = &pass.masks {
                d_in *= &m.0[l - 1];
            }
            ndarray::Zip::from(&mut d_in)
                .and(&pass.pre[l - 1])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
            delta = d_in;
        }
        grad
    }

    /// Forward-mode tangent of the logits along a parameter direction, using
    /// the activations and dropout masks recorded in `pass`.
    pub fn logits_tangent(&self, pass: &ForwardPass, direction: &Array1<f64>) -> Array2<f64> {
        let layers = self.shape.layers();
        let n = pass.num_rows();
        let mut tangent: Option<Array2<f64>> = None;
        for l in 0..layers.len() {
            let (w, _) = self.layer(l);
            let (dw, db) = self.layer_in(direction, l);
            let mut t = pass.inputs[l].dot(&dw) + &db;
            if let Some(prev) = &tangent {
                t += &prev.dot(&w);
            }
            if l + 1 < layers.len() {
                ndarray::Zip::from(&mut t)
                    .and(&pass.pre[l])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0
                        }
                    });
                if let Some(m) = &pass.masks {
                    t *= &m.0[l];
                }
            }
            debug_assert_eq!(t.nrows(), n);
            tangent = Some(t);
        }
        tangent.expect("at least one layer")
    }

    /// Tangent of the log-probabilities: `dz - sum_y p_y dz_y` per row.
    pub fn log_probs_tangent(&self, pass: &ForwardPass, direction: &Array1<f64>) -> Array2<f64> {
        let mut dz = self.logits_tangent(pass, direction);
        let probs = pass.probs();
        for (mut row, p) in dz.rows_mut().into_iter().zip(probs.rows()) {
            let mean = row.dot(&p);
            row.mapv_inplace(|v| v - mean);
        }
        dz
    }
}

/// Categorical target: a class or a full distribution.
#[derive(Clone, Copy, Debug)]
pub enum Target<'a> {
    Class(usize),
    Soft(ArrayView1<'a, f64>),
}

pub fn cross_entropy(pred: &LabelPosterior, target: Target<'_>) -> f64 {
    let log = |p: f64| p.max(PROB_FLOOR).ln();
    match target {
        Target::Class(y) => -log(pred.probs[y]),
        Target::Soft(t) => -t
            .iter()
            .zip(pred.probs.iter())
            .map(|(&ty, &py)| if ty == 0.0 { 0.0 } else { ty * log(py) })
            .sum::<f64>(),
    }
}

pub fn entropy(pred: &LabelPosterior) -> f64 {
    -pred
        .probs
        .iter()
        .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected update. Leaves everything untouched if any gradient
    /// entry is non-finite.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                actual: grads.len(),
                context: "Adam state vs gradient",
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("optimizer gradient".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tiny() -> FeatureModel {
        // 2 -> 2 -> 2 -> 2
        let shape = MlpShape::new(2, vec![2, 2], 2);
        let params = array![
            // layer 0: W (2x2) row-major, b
            1.0, -1.0, 0.5, 2.0, 0.1, -0.2, //
            // layer 1
            1.0, 0.0, -1.0, 1.0, 0.0, 0.3, //
            // output
            2.0, -1.0, 0.5, 1.0, 0.0, 0.1
        ];
        FeatureModel {
            shape,
            dropout: 0.0,
            params,
        }
    }

    #[test]
    fn param_count() {
        let shape = MlpShape::new(37, vec![512, 512], 3);
        assert_eq!(shape.num_params(), 37 * 512 + 512 + 512 * 512 + 512 + 512 * 3 + 3);
        let m = FeatureModel::init(shape, 0.8, 1).unwrap();
        assert_eq!(m.num_params(), 37 * 512 + 512 + 512 * 512 + 512 + 512 * 3 + 3);
    }

    #[test]
    fn init_is_seeded_and_validated() {
        let shape = MlpShape::new(5, vec![4], 2);
        let a = FeatureModel::init(shape.clone(), 0.5, 9).unwrap();
        let b = FeatureModel::init(shape.clone(), 0.5, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, FeatureModel::init(shape, 0.5, 10).unwrap());
        let (_, bias) = a.layer(0);
        assert!(bias.iter().all(|&v| v == 0.0));
        assert!(FeatureModel::init(MlpShape::new(0, vec![4], 2), 0.5, 0).is_err());
    }

    #[test]
    fn zero_weights_give_uniform() {
        let mut m = FeatureModel::init(MlpShape::new(3, vec![4, 4], 3), 0.8, 0).unwrap();
        m.params.fill(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = m.forward(array![1.0, 2.0, 0.0].view(), true, &mut rng).unwrap();
        for v in p.probs.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn eval_mode_ignores_rng() {
        let m = FeatureModel::init(MlpShape::new(3, vec![8, 8], 2), 0.8, 4).unwrap();
        let x = array![1.0, 0.0, 3.0];
        let a = m.forward(x.view(), false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = m.forward(x.view(), false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert!((a.probs.sum() - 1.0).abs() < 1e-12);
        let t = m.forward(x.view(), true, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!((t.probs.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_forward() {
        let m = tiny();
        let x = array![[1.0, 2.0]];
        // h1 = relu([1*1 + 2*0.5 + 0.1, 1*-1 + 2*2 - 0.2]) = [2.1, 2.8]
        // h2 = relu([2.1*1 + 2.8*-1 + 0, 2.1*0 + 2.8*1 + 0.3]) = [0, 3.1]
        // z  = [0*2 + 3.1*0.5 + 0, 0*-1 + 3.1*1 + 0.1] = [1.55, 3.2]
        let pass = m.forward_batch(x.view(), None).unwrap();
        assert!((pass.logits[[0, 0]] - 1.55).abs() < 1e-12);
        assert!((pass.logits[[0, 1]] - 3.2).abs() < 1e-12);
        let p0 = 1.0 / (1.0 + (3.2f64 - 1.55).exp());
        assert!((pass.probs()[[0, 0]] - p0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let m = tiny();
        assert!(matches!(
            m.forward_batch(array![[1.0, 2.0, 3.0]].view(), None),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_output_is_reported() {
        let mut m = tiny();
        m.params[12] = f64::INFINITY;
        assert!(matches!(
            m.forward_batch(array![[1.0, 2.0]].view(), None),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn loss_values() {
        let uniform = LabelPosterior::uniform(2);
        assert!((cross_entropy(&uniform, Target::Class(1)) - 2f64.ln()).abs() < 1e-15);
        assert!((entropy(&uniform) - 2f64.ln()).abs() < 1e-15);

        let onehot = LabelPosterior { probs: array![0.0, 1.0] };
        assert_eq!(cross_entropy(&onehot, Target::Class(1)), 0.0);
        assert_eq!(entropy(&onehot), 0.0);
        assert!((cross_entropy(&onehot, Target::Class(0)) + PROB_FLOOR.ln()).abs() < 1e-9);

        let p = LabelPosterior { probs: array![0.75, 0.25] };
        assert!((cross_entropy(&p, Target::Class(1)) + 0.25f64.ln()).abs() < 1e-15);
        let h = -0.75 * 0.75f64.ln() - 0.25 * 0.25f64.ln();
        assert!((entropy(&p) - h).abs() < 1e-15);
        let soft = array![0.5, 0.5];
        let expected = -0.5 * 0.75f64.ln() - 0.5 * 0.25f64.ln();
        assert!((cross_entropy(&p, Target::Soft(soft.view())) - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_grad_and_first_step() {
        let mut adam = Adam::new(0.01, 3);
        let mut p = vec![1.0, 2.0, 3.0];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);

        let mut adam = Adam::new(0.01, 3);
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &[0.5, -2.0, 1e-3]).unwrap();
        // m_hat = g, v_hat = g^2, so each step is lr * g / (|g| + eps)
        for (v, g) in p.iter().zip([0.5f64, -2.0, 1e-3]) {
            assert!((v + 0.01 * g / (g.abs() + 1e-8)).abs() < 1e-12);
            assert!((v.abs() - 0.01).abs() < 1e-7);
        }

        let before = p.clone();
        let state = adam.clone();
        assert!(adam.step(&mut p, &[f64::NAN, 0.0, 0.0]).is_err());
        assert_eq!(p, before);
        assert_eq!(adam, state);
    }
}
