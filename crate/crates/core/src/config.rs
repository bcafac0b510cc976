//! Flat JSON run configuration.
//!
//! Every key is optional; missing keys take the defaults below. The
//! `WISDOM_SEED` environment variable, when set, replaces `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bilevel::{HypergradMode, TrainerConfig};
use crate::corpus::FeatureMode;
use crate::error::{Error, Result};
use crate::harness::Method;
use crate::lf::InductionConfig;
use crate::objective::{ObjectiveConfig, TermWeights};

pub const SEED_ENV: &str = "WISDOM_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub dataset: String,
    pub pool: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub lemma_table: Option<PathBuf>,
    pub feature_mode: FeatureMode,
    pub labeled_fraction: f64,
    pub min_df: usize,
    pub max_ngram: usize,

    pub max_iters: usize,
    pub min_precision: f64,
    pub max_overlap: f64,
    pub min_firings: usize,
    pub max_arity: usize,

    pub lr_theta: f64,
    pub lr_phi: f64,
    pub beta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub dropout: f64,
    pub hidden: Vec<usize>,
    pub hypergradient: HypergradMode,
    pub random_weight_init: bool,

    pub ce_supervised: f64,
    pub entropy_unsup: f64,
    pub ce_vs_g: f64,
    pub ll_s: f64,
    pub ll_u: f64,
    pub kl_consistency: f64,
    pub quality_guide: f64,
    pub soft_g: bool,

    /// Adam iterations and rate for the unsupervised label-model fit of the
    /// Snuba baseline.
    pub snuba_label_model_iters: usize,
    pub snuba_label_model_lr: f64,

    pub seed: u64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        let induction = InductionConfig::default();
        let trainer = TrainerConfig::default();
        let terms = TermWeights::default();
        Config {
            dataset: "dataset".into(),
            pool: None,
            test: None,
            labels: None,
            lemma_table: None,
            feature_mode: FeatureMode::Raw,
            labeled_fraction: 0.1,
            min_df: 2,
            max_ngram: 2,
            max_iters: induction.max_iters,
            min_precision: induction.min_precision,
            max_overlap: induction.max_overlap,
            min_firings: induction.min_firings,
            max_arity: induction.max_arity,
            lr_theta: trainer.lr_theta,
            lr_phi: trainer.lr_phi,
            beta: trainer.beta,
            batch_size: trainer.batch_size,
            epochs: trainer.epochs,
            patience: trainer.patience,
            dropout: trainer.dropout,
            hidden: trainer.hidden,
            hypergradient: trainer.hypergradient,
            random_weight_init: trainer.random_weight_init,
            ce_supervised: terms.ce_supervised,
            entropy_unsup: terms.entropy_unsup,
            ce_vs_g: terms.ce_vs_g,
            ll_s: terms.ll_s,
            ll_u: terms.ll_u,
            kl_consistency: terms.kl_consistency,
            quality_guide: terms.quality_guide,
            soft_g: false,
            snuba_label_model_iters: 200,
            snuba_label_model_lr: 0.01,
            seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            methods: vec![Method::Supervised, Method::Snuba, Method::AutoSpear, Method::Wisdom],
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl Config {
    /// Reads a config file and applies the seed override from the environment.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path)?;
        let mut cfg: Config =
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction < 1.0) {
            return Err(Error::Config("labeled_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.min_df == 0 {
            return Err(Error::Config("batch_size and min_df must be at least 1".into()));
        }
        Ok(())
    }

    pub fn induction(&self) -> InductionConfig {
        InductionConfig {
            max_iters: self.max_iters,
            min_precision: self.min_precision,
            max_overlap: self.max_overlap,
            min_firings: self.min_firings,
            max_arity: self.max_arity,
        }
    }

    /// Trainer settings for the full joint loss with reweighting on; see
    /// [`crate::harness::configure_method`] for the per-method variants.
    pub fn trainer(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            lr_theta: self.lr_theta,
            lr_phi: self.lr_phi,
            beta: self.beta,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            seed,
            hypergradient: self.hypergradient,
            reweight: true,
            random_weight_init: self.random_weight_init,
            freeze_aggregator: false,
            hidden: self.hidden.clone(),
            dropout: self.dropout,
            objective: ObjectiveConfig {
                terms: TermWeights {
                    ce_supervised: self.ce_supervised,
                    entropy_unsup: self.entropy_unsup,
                    ce_vs_g: self.ce_vs_g,
                    ll_s: self.ll_s,
                    ll_u: self.ll_u,
                    kl_consistency: self.kl_consistency,
                    quality_guide: self.quality_guide,
                },
                soft_g: self.soft_g,
            },
        }
    }
}
