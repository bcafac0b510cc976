//! Bi-level training loop.
//!
//! Every step draws a supervised minibatch and an unlabeled minibatch and
//! then, when reweighting is on:
//!
//! 1. takes a virtual plain-gradient step on (`theta`, `phi`) at the current
//!    LF weights `w`,
//! 2. differentiates the mean validation cross-entropy of the virtually
//!    updated classifier with respect to `w` and moves `w` against it
//!    (clamped to `[0, 1]`),
//! 3. commits an Adam update of (`theta`, `phi`) using the joint-loss gradient
//!    at the old (`theta`, `phi`) and the new `w`.
//!
//! Without reweighting only step 3 runs with `w` fixed. An epoch is
//! `ceil(max(|S|, |U|) / B)` steps. Both splits are consumed in order from a
//! shuffled copy that is reshuffled whenever it runs out; a minibatch never
//! spans two shuffles, so the last one of a pass may be short. The
//! classifier with the best validation macro-F1 is kept.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::AggregatorParams;
use crate::corpus::{SplitCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::harness::evaluate_macro_f1;
use crate::lf::{apply_lfs, LabelingFunction};
use crate::model::{Adam, DropoutMasks, FeatureModel, MlpShape};
use crate::objective::{self, JointBatch, LossBreakdown, ObjectiveConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypergradMode {
    /// Analytic mixed second derivative through the virtual step.
    #[default]
    Exact,
    /// Symmetric finite difference of `grad_w L` along the validation
    /// gradient; needs first derivatives only.
    FirstOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    /// Inner learning rate for the aggregator parameters.
    pub lr_theta: f64,
    /// Inner learning rate for the classifier parameters.
    pub lr_phi: f64,
    /// Outer learning rate for the LF weights.
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub hypergradient: HypergradMode,
    /// Run the outer step on `w`. Off means `w` stays at its initial value.
    pub reweight: bool,
    /// Draw the initial `w` uniformly from `[0, 1)` instead of all ones.
    pub random_weight_init: bool,
    /// Keep `theta` fixed at its initial (or provided) value.
    pub freeze_aggregator: bool,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub objective: ObjectiveConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            lr_theta: 0.01,
            lr_phi: 0.0003,
            beta: 0.01,
            batch_size: 32,
            epochs: 100,
            patience: 10,
            seed: 0,
            hypergradient: HypergradMode::Exact,
            reweight: true,
            random_weight_init: false,
            freeze_aggregator: false,
            hidden: vec![512, 512],
            dropout: 0.8,
            objective: ObjectiveConfig::default(),
        }
    }
}

impl TrainerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lr_theta >= 0.0 && self.lr_phi > 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Features, labels and LF firings of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub x: Array2<f64>,
    pub fired: Array2<f64>,
    /// Gold labels; empty for the unlabeled split.
    pub labels: Vec<usize>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    fn rows(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        (self.x.select(Axis(0), idx), self.fired.select(Axis(0), idx))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingData {
    pub num_classes: usize,
    pub lfs: Vec<LabelingFunction>,
    pub supervised: SplitData,
    pub validation: SplitData,
    pub unlabeled: SplitData,
}

impl TrainingData {
    /// Featurizes a split corpus and applies the LFs to every split.
    pub fn build(corpus: &SplitCorpus, vocab: &Vocabulary, lfs: &[LabelingFunction]) -> Result<Self> {
        let split = |docs: &[crate::corpus::Document], labeled: bool| -> Result<SplitData> {
            let x = vocab.featurize_all(docs);
            let fired = apply_lfs(lfs, &x, vocab.len())?.fired;
            let labels = if labeled {
                docs.iter()
                    .map(|d| d.label.ok_or_else(|| Error::Schema(format!("document {} lacks a label", d.id))))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            Ok(SplitData { x, fired, labels })
        };
        Ok(TrainingData {
            num_classes: corpus.num_classes,
            lfs: lfs.to_vec(),
            supervised: split(&corpus.supervised, true)?,
            validation: split(&corpus.validation, true)?,
            unlabeled: split(&corpus.unlabeled, false)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.supervised.x.ncols()
    }
}

/// Plain gradient step on both parameter groups at the current `w`.
pub fn virtual_inner_step(
    agg: &AggregatorParams,
    model: &FeatureModel,
    batch: &JointBatch,
    masks: Option<&DropoutMasks>,
    objective: &ObjectiveConfig,
    lr_theta: f64,
    lr_phi: f64,
) -> Result<(AggregatorParams, FeatureModel)> {
    let ev = objective::joint_loss(agg, model, batch, masks, objective)?;
    let mut theta_star = agg.clone();
    theta_star.theta.scaled_add(-lr_theta, &ev.grad.aggregator.theta);
    let phi_star = model.with_params(&model.params - &(lr_phi * &ev.grad.phi));
    Ok((theta_star, phi_star))
}

/// Mean validation cross-entropy (evaluation mode) and its gradient in `phi`.
pub fn validation_loss(model: &FeatureModel, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array1<f64>)> {
    let pass = model.forward_batch(x, None)?;
    let n = labels.len() as f64;
    let mut d = pass.probs();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        loss -= pass.log_probs[[i, y]];
        d[[i, y]] -= 1.0;
    }
    d /= n;
    Ok((loss / n, model.backward(&pass, &d)))
}

/// Gradient of the validation loss after one virtual step with respect to the
/// LF weights.
#[allow(clippy::too_many_arguments)]
pub fn hypergradient(
    agg: &AggregatorParams,
    model: &FeatureModel,
    batch: &JointBatch,
    masks: Option<&DropoutMasks>,
    validation: &SplitData,
    objective: &ObjectiveConfig,
    lr_phi: f64,
    mode: HypergradMode,
) -> Result<Array1<f64>> {
    if validation.is_empty() {
        return Err(Error::MissingInput("validation split is empty".into()));
    }
    let pass = model.forward_batch(batch.x.view(), masks)?;
    let ev = objective::evaluate_with_pass(agg, model, batch, &pass, objective)?;
    let phi_star = model.with_params(&model.params - &(lr_phi * &ev.grad.phi));
    let (_, v) = validation_loss(&phi_star, validation.x.view(), &validation.labels)?;
    let mixed = match mode {
        HypergradMode::Exact => objective::weight_phi_cross_derivative(agg, model, batch, &pass, &v, objective),
        HypergradMode::FirstOrder => {
            let max_abs = model.params.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let eps = 1e-3 * (1.0 + max_abs);
            let grad_w_at = |sign: f64| -> Result<Array1<f64>> {
                let shifted = model.with_params(&model.params + &(sign * eps * &v));
                let p = shifted.forward_batch(batch.x.view(), masks)?;
                Ok(objective::evaluate_with_pass(agg, &shifted, batch, &p, objective)?
                    .grad
                    .aggregator
                    .weights)
            };
            (grad_w_at(1.0)? - grad_w_at(-1.0)?) / (2.0 * eps)
        }
    };
    Ok(-lr_phi * mixed)
}

/// Moves `w` against the hypergradient and clamps it to `[0, 1]`. Returns the
/// hypergradient, or `None` (leaving `w` untouched) if it was not finite.
#[allow(clippy::too_many_arguments)]
pub fn outer_weight_step(
    agg: &mut AggregatorParams,
    model: &FeatureModel,
    batch: &JointBatch,
    masks: Option<&DropoutMasks>,
    validation: &SplitData,
    objective: &ObjectiveConfig,
    lr_phi: f64,
    beta: f64,
    mode: HypergradMode,
) -> Result<Option<Array1<f64>>> {
    let h = hypergradient(agg, model, batch, masks, validation, objective, lr_phi, mode)?;
    if h.iter().any(|v| !v.is_finite()) {
        log::warn!("non-finite hypergradient, outer step skipped");
        return Ok(None);
    }
    agg.weights.scaled_add(-beta, &h);
    agg.clamp_weights();
    Ok(Some(h))
}

/// Parameters and score of the best epoch so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub aggregator: AggregatorParams,
    pub model: FeatureModel,
    /// Number of completed epochs when the snapshot was taken.
    pub epoch: usize,
    pub val_macro_f1: f64,
}

/// Endless reshuffled pass over `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cycle {
    order: Vec<usize>,
    cursor: usize,
}

impl Cycle {
    pub fn new<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycle { order, cursor: 0 }
    }

    /// Up to `count` indices from the current pass; starts a new pass first
    /// if the current one is exhausted.
    pub fn next_batch<R: Rng>(&mut self, count: usize, rng: &mut R) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.cursor == self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + count).min(self.order.len());
        let out = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub aggregator: AggregatorParams,
    pub model: FeatureModel,
    pub adam_theta: Adam,
    pub adam_phi: Adam,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
    pub step: u64,
    pub supervised_order: Cycle,
    pub unlabeled_order: Cycle,
    pub epochs_since_best: usize,
    pub best: Snapshot,
    pub stopped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainerConfig,
    pub state: TrainState,
}

impl Checkpoint {
    /// Writes to a temporary file next to `path` and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer(&mut f, self)?;
            f.flush()?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint version {} unsupported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// 1-based epoch this step belongs to.
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_macro_f1: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl Trace {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty() && self.epochs.is_empty()
    }

    /// CSV with one `step` row per optimizer step and one `epoch` row per
    /// epoch carrying validation macro-F1 and the `;`-joined LF weights.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind", "epoch", "step"];
        header.extend(LossBreakdown::TERM_NAMES);
        header.extend(["total", "val_macro_f1", "weights"]);
        w.write_record(&header)?;
        let mut steps = self.steps.iter().peekable();
        for ep in &self.epochs {
            while let Some(s) = steps.next_if(|s| s.epoch <= ep.epoch) {
                write_step(&mut w, s)?;
            }
            let mut row = vec!["epoch".to_string(), ep.epoch.to_string(), String::new()];
            row.extend(std::iter::repeat(String::new()).take(8));
            row.push(ep.val_macro_f1.to_string());
            row.push(
                ep.weights
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            w.write_record(&row)?;
        }
        for s in steps {
            write_step(&mut w, s)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(fs::File::create(path)?)
    }
}

fn write_step<W: std::io::Write>(w: &mut csv::Writer<W>, s: &StepRecord) -> Result<()> {
    let mut row = vec!["step".to_string(), s.epoch.to_string(), s.step.to_string()];
    row.extend(s.loss.terms().iter().map(|v| v.to_string()));
    row.push(s.loss.total.to_string());
    row.push(String::new());
    row.push(String::new());
    w.write_record(&row)?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best-on-validation parameters.
    pub best: Snapshot,
    /// Parameters after the last executed step.
    pub last: TrainState,
    pub trace: Trace,
}

pub struct Trainer<'a> {
    data: &'a TrainingData,
    config: TrainerConfig,
    state: TrainState,
    checkpoint_path: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a TrainingData, config: TrainerConfig) -> Result<Self> {
        Self::with_aggregator(data, config, None)
    }

    /// Like [`Trainer::new`] but starting from given aggregator parameters
    /// (used when `theta` was fit beforehand).
    pub fn with_aggregator(
        data: &'a TrainingData,
        config: TrainerConfig,
        aggregator: Option<AggregatorParams>,
    ) -> Result<Self> {
        config.validate()?;
        let t = &config.objective.terms;
        let needs_lfs = config.reweight || [t.ce_vs_g, t.ll_s, t.ll_u, t.kl_consistency, t.quality_guide]
            .iter()
            .any(|&v| v != 0.0);
        if needs_lfs && data.lfs.is_empty() {
            return Err(Error::Induction("no labeling functions to train with".into()));
        }
        if data.supervised.is_empty() {
            return Err(Error::MissingInput("supervised split is empty".into()));
        }
        if data.validation.is_empty() {
            return Err(Error::MissingInput("validation split is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut agg = match aggregator {
            Some(a) => a,
            None => AggregatorParams::init(&data.lfs, data.num_classes, &mut rng),
        };
        if config.random_weight_init {
            agg.weights.mapv_inplace(|_| rng.gen::<f64>());
        }
        let model = FeatureModel::init(
            MlpShape::new(data.feature_dim(), config.hidden.clone(), data.num_classes),
            config.dropout,
            rng.gen(),
        )?;
        let supervised_order = Cycle::new(data.supervised.len(), &mut rng);
        let unlabeled_order = Cycle::new(data.unlabeled.len(), &mut rng);
        let state = TrainState {
            adam_theta: Adam::new(config.lr_theta, agg.theta.len()),
            adam_phi: Adam::new(config.lr_phi, model.num_params()),
            best: Snapshot {
                aggregator: agg.clone(),
                model: model.clone(),
                epoch: 0,
                val_macro_f1: f64::NEG_INFINITY,
            },
            aggregator: agg,
            model,
            rng,
            epoch: 0,
            step: 0,
            supervised_order,
            unlabeled_order,
            epochs_since_best: 0,
            stopped: false,
        };
        Ok(Trainer {
            data,
            config,
            state,
            checkpoint_path: None,
        })
    }

    /// Continues a run from a checkpoint. `config.epochs` may be raised.
    pub fn resume(data: &'a TrainingData, checkpoint: Checkpoint, epochs: usize) -> Result<Self> {
        let mut config = checkpoint.config;
        config.epochs = epochs;
        Ok(Trainer {
            data,
            config,
            state: checkpoint.state,
            checkpoint_path: None,
        })
    }

    /// Writes a checkpoint to `path` after every epoch.
    pub fn checkpoint_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            state: self.state.clone(),
        }
    }

    fn step(&mut self, trace: &mut Trace) -> Result<()> {
        let b = self.config.batch_size;
        let st = &mut self.state;
        let sup_idx = st.supervised_order.next_batch(b, &mut st.rng);
        let unl_idx = st.unlabeled_order.next_batch(b, &mut st.rng);
        let data = self.data;
        let cfg = &self.config;
        let (sx, sf) = data.supervised.rows(&sup_idx);
        let (ux, uf) = data.unlabeled.rows(&unl_idx);
        let labels = sup_idx.iter().map(|&i| data.supervised.labels[i]).collect();
        let batch = JointBatch::new(sx.view(), sf.view(), labels, ux.view(), uf.view());

        let st = &mut self.state;
        let masks = st.model.sample_masks(batch.num_rows(), &mut st.rng);
        let masks = (cfg.dropout > 0.0).then_some(masks);
        let pass = st.model.forward_batch(batch.x.view(), masks.as_ref())?;

        if cfg.reweight {
            outer_weight_step(
                &mut st.aggregator,
                &st.model,
                &batch,
                masks.as_ref(),
                &data.validation,
                &cfg.objective,
                cfg.lr_phi,
                cfg.beta,
                cfg.hypergradient,
            )?;
        }
        let ev = objective::evaluate_with_pass(&st.aggregator, &st.model, &batch, &pass, &cfg.objective)?;
        if !cfg.freeze_aggregator {
            st.adam_theta.step(
                st.aggregator.theta.as_slice_mut().expect("contiguous theta"),
                ev.grad.aggregator.theta.as_slice().expect("contiguous gradient"),
            )?;
        }
        st.adam_phi.step(
            st.model.params.as_slice_mut().expect("contiguous phi"),
            ev.grad.phi.as_slice().expect("contiguous gradient"),
        )?;
        st.step += 1;
        trace.steps.push(StepRecord {
            epoch: st.epoch + 1,
            step: st.step,
            loss: ev.loss,
        });
        Ok(())
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        let mut trace = Trace::default();
        let longest = self.data.supervised.len().max(self.data.unlabeled.len());
        let steps = longest.div_ceil(self.config.batch_size);
        while self.state.epoch < self.config.epochs && !self.state.stopped {
            for _ in 0..steps {
                self.step(&mut trace)?;
            }
            let preds = self.state.model.predict(self.data.validation.x.view())?;
            let f1 = evaluate_macro_f1(&preds, &self.data.validation.labels, self.data.num_classes)?;
            let st = &mut self.state;
            st.epoch += 1;
            if f1 > st.best.val_macro_f1 {
                st.best = Snapshot {
                    aggregator: st.aggregator.clone(),
                    model: st.model.clone(),
                    epoch: st.epoch,
                    val_macro_f1: f1,
                };
                st.epochs_since_best = 0;
            } else {
                st.epochs_since_best += 1;
            }
            if st.epochs_since_best >= self.config.patience {
                st.stopped = true;
            }
            trace.epochs.push(EpochRecord {
                epoch: st.epoch,
                val_macro_f1: f1,
                weights: st.aggregator.weights.to_vec(),
            });
            if let Some(path) = &self.checkpoint_path {
                self.checkpoint().save(path)?;
            }
        }
        Ok(TrainOutcome {
            best: self.state.best.clone(),
            last: self.state,
            trace,
        })
    }
}

/// Convenience wrapper: build a trainer and run it to completion.
pub fn train(data: &TrainingData, config: TrainerConfig) -> Result<TrainOutcome> {
    Trainer::new(data, config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn tiny_data() -> TrainingData {
        let lfs = vec![
            LabelingFunction {
                id: 0,
                propositions: vec![0],
                target_class: 0,
                train_precision: 0.9,
                train_coverage: 0.5,
            },
            LabelingFunction {
                id: 1,
                propositions: vec![1],
                target_class: 1,
                train_precision: 0.8,
                train_coverage: 0.5,
            },
        ];
        let mk = |rows: &[[f64; 2]]| {
            let x = Array2::from_shape_vec((rows.len(), 2), rows.iter().flatten().copied().collect()).unwrap();
            let fired = apply_lfs(&lfs, &x, 2).unwrap().fired;
            (x, fired)
        };
        let (sx, sf) = mk(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.0, 2.0]]);
        let (vx, vf) = mk(&[[2.0, 0.0], [0.0, 1.0], [1.0, 0.0]]);
        let (ux, uf) = mk(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [3.0, 1.0], [1.0, 2.0]]);
        TrainingData {
            num_classes: 2,
            lfs,
            supervised: SplitData {
                x: sx,
                fired: sf,
                labels: vec![0, 1, 0, 1],
            },
            validation: SplitData {
                x: vx,
                fired: vf,
                labels: vec![0, 1, 0],
            },
            unlabeled: SplitData {
                x: ux,
                fired: uf,
                labels: vec![],
            },
        }
    }

    fn tiny_config() -> TrainerConfig {
        TrainerConfig {
            batch_size: 2,
            epochs: 3,
            hidden: vec![4],
            dropout: 0.5,
            lr_phi: 0.05,
            beta: 0.5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let data = tiny_data();
        let cfg = TrainerConfig {
            epochs: 0,
            ..tiny_config()
        };
        let trainer = Trainer::new(&data, cfg).unwrap();
        let initial = trainer.state().clone();
        let out = trainer.run().unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.best.model, initial.model);
        assert_eq!(out.best.aggregator, initial.aggregator);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let data = tiny_data();
        let a = train(&data, tiny_config()).unwrap();
        let b = train(&data, tiny_config()).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.last, b.last);
        // weights stay inside [0, 1]
        for ep in &a.trace.epochs {
            assert!(ep.weights.iter().all(|w| (0.0..=1.0).contains(w)));
        }
    }

    #[test]
    fn zero_inner_rate_leaves_params() {
        let data = tiny_data();
        let agg = AggregatorParams::new(array![[0.5, 0.1], [0.2, 0.7]], array![1.0, 0.6], array![0.9, 0.8], vec![0, 1]);
        let model = FeatureModel::init(MlpShape::new(2, vec![3], 2), 0.0, 1).unwrap();
        let batch = JointBatch::new(
            data.supervised.x.view(),
            data.supervised.fired.view(),
            data.supervised.labels.clone(),
            data.unlabeled.x.view(),
            data.unlabeled.fired.view(),
        );
        let cfg = ObjectiveConfig::default();
        let (t, p) = virtual_inner_step(&agg, &model, &batch, None, &cfg, 0.0, 0.0).unwrap();
        assert_eq!(t, agg);
        assert_eq!(p, model);

        // one manual step on theta
        let ev = objective::joint_loss(&agg, &model, &batch, None, &cfg).unwrap();
        let (t, _) = virtual_inner_step(&agg, &model, &batch, None, &cfg, 0.1, 0.0).unwrap();
        let expected = &agg.theta - &(0.1 * &ev.grad.aggregator.theta);
        assert_eq!(t.theta, expected);
        assert_eq!(t.weights, agg.weights);
    }

    #[test]
    fn zero_alpha_gives_zero_hypergradient() {
        let data = tiny_data();
        let mut agg = AggregatorParams::new(array![[0.5, 0.1], [0.2, 0.7]], array![1.0, 0.6], array![0.9, 0.8], vec![0, 1]);
        let model = FeatureModel::init(MlpShape::new(2, vec![3], 2), 0.0, 1).unwrap();
        let batch = JointBatch::new(
            data.supervised.x.view(),
            data.supervised.fired.view(),
            data.supervised.labels.clone(),
            data.unlabeled.x.view(),
            data.unlabeled.fired.view(),
        );
        let before = agg.weights.clone();
        let h = outer_weight_step(
            &mut agg,
            &model,
            &batch,
            None,
            &data.validation,
            &ObjectiveConfig::default(),
            0.0,
            1.0,
            HypergradMode::Exact,
        )
        .unwrap()
        .unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        assert_eq!(agg.weights, before);
    }

    #[test]
    fn resume_is_bitwise() {
        let data = tiny_data();
        let full = train(&data, TrainerConfig { epochs: 4, ..tiny_config() }).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let first = Trainer::new(&data, TrainerConfig { epochs: 2, ..tiny_config() })
            .unwrap()
            .checkpoint_to(&path)
            .run()
            .unwrap();
        let ck = Checkpoint::load(&path).unwrap();
        assert_eq!(ck.state, first.last);
        let rest = Trainer::resume(&data, ck, 4).unwrap().run().unwrap();
        assert_eq!(rest.last, full.last);
        assert_eq!(rest.best, full.best);
        assert_eq!(rest.trace.epochs, full.trace.epochs[2..]);
    }

    #[test]
    fn cycle_never_repeats_within_a_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = Cycle::new(5, &mut rng);
        let mut a = c.next_batch(2, &mut rng);
        a.extend(c.next_batch(2, &mut rng));
        a.extend(c.next_batch(2, &mut rng));
        assert_eq!(a.len(), 5);
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3, 4]);
        assert_eq!(c.next_batch(2, &mut rng).len(), 2);
        assert!(Cycle::new(0, &mut rng).next_batch(3, &mut rng).is_empty());
    }

    #[test]
    fn trace_csv_layout() {
        let data = tiny_data();
        let out = train(&data, TrainerConfig { epochs: 2, ..tiny_config() }).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("kind,epoch,step,ce_supervised"));
        // ceil(5 / 2) steps per epoch plus one epoch row, twice
        assert_eq!(lines.len(), 1 + 2 * 4);
        assert!(lines[4].starts_with("epoch,1,"));
        assert_eq!(lines[4].split(',').last().unwrap().split(';').count(), 2);
    }
}
