//! Experiment runs, macro-F1, seed aggregation and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::{self, AggregatorParams};
use crate::bilevel::{SplitData, Trace, Trainer, TrainerConfig, TrainingData};
use crate::config::Config;
use crate::corpus::{
    build_vocabulary, split_pool, Document, FeatureMode, LemmaTable, SplitCorpus, Tokenizer, Vocabulary,
};
use crate::error::{Error, Result};
use crate::lf::{apply_lfs, snuba_induce, LabeledView, LabelingFunction};
use crate::model::Adam;
use crate::objective::TermWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Supervised,
    Snuba,
    AutoSpear,
    Wisdom,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Supervised, Method::Snuba, Method::AutoSpear, Method::Wisdom];

    pub fn uses_lfs(self) -> bool {
        self != Method::Supervised
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Supervised => "supervised",
            Method::Snuba => "snuba",
            Method::AutoSpear => "auto_spear",
            Method::Wisdom => "wisdom",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "supervised" => Ok(Method::Supervised),
            "snuba" => Ok(Method::Snuba),
            "auto_spear" => Ok(Method::AutoSpear),
            "wisdom" => Ok(Method::Wisdom),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

/// Unweighted mean of per-class F1 over all `num_classes` classes. A class
/// with no true positives (including a class absent from both vectors) scores
/// 0.
pub fn evaluate_macro_f1(preds: &[usize], truths: &[usize], num_classes: usize) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            actual: preds.len(),
            context: "predictions vs truths",
        });
    }
    if truths.is_empty() || num_classes == 0 {
        return Err(Error::MissingInput("macro-F1 needs at least one instance and one class".into()));
    }
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in preds.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Schema(format!("class index out of range for {num_classes} classes")));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let total: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / num_classes as f64)
}

/// Training data plus a held-out test split for one seed.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub dataset: String,
    pub feature_mode: FeatureMode,
    pub labeled_fraction: f64,
    pub data: TrainingData,
    pub test: SplitData,
}

/// Split and vocabulary of a text pool for one seed.
#[derive(Clone, Debug)]
pub struct TextSetup {
    pub split: SplitCorpus,
    pub vocab: Vocabulary,
}

pub fn tokenizer_for(cfg: &Config) -> Result<Tokenizer> {
    Ok(match (cfg.feature_mode, &cfg.lemma_table) {
        (FeatureMode::Lemma, Some(path)) => Tokenizer::lemma(LemmaTable::load(path)?),
        (mode, _) => Tokenizer::for_mode(mode),
    })
}

/// Vocabulary over the whole pool (labels are not consulted).
pub fn pool_vocabulary(pool: &[Document], cfg: &Config) -> Result<Vocabulary> {
    build_vocabulary(pool, cfg.min_df, &tokenizer_for(cfg)?, cfg.max_ngram)
}

pub fn text_setup(pool: &[Document], num_classes: usize, cfg: &Config, seed: u64) -> Result<TextSetup> {
    let vocab = pool_vocabulary(pool, cfg)?;
    let split = split_pool(pool, num_classes, cfg.labeled_fraction, seed)?;
    for w in &split.warnings {
        log::warn!("{w}");
    }
    Ok(TextSetup { split, vocab })
}

/// Induces LFs on the full labeled set of a split.
pub fn induce_for_split(setup: &TextSetup, cfg: &Config) -> Result<Vec<LabelingFunction>> {
    let labeled = setup.split.labeled();
    let x = setup.vocab.featurize_all(&labeled);
    let labels: Vec<usize> = labeled.iter().filter_map(|d| d.label).collect();
    let view = LabeledView::new(x.view(), &labels, setup.split.num_classes);
    snuba_induce(&view, &setup.vocab, &cfg.induction())
}

pub fn labeled_split(vocab: &Vocabulary, lfs: &[LabelingFunction], docs: &[Document]) -> Result<SplitData> {
    let x = vocab.featurize_all(docs);
    let fired = apply_lfs(lfs, &x, vocab.len())?.fired;
    let labels = docs
        .iter()
        .map(|d| d.label.ok_or_else(|| Error::Schema(format!("document {} lacks a label", d.id))))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitData { x, fired, labels })
}

pub fn text_experiment(
    setup: &TextSetup,
    lfs: &[LabelingFunction],
    test_docs: &[Document],
    cfg: &Config,
) -> Result<Experiment> {
    if test_docs.is_empty() {
        return Err(Error::MissingInput("test split is empty".into()));
    }
    Ok(Experiment {
        dataset: cfg.dataset.clone(),
        feature_mode: setup.vocab.mode(),
        labeled_fraction: setup.split.labeled_fraction,
        data: TrainingData::build(&setup.split, &setup.vocab, lfs)?,
        test: labeled_split(&setup.vocab, lfs, test_docs)?,
    })
}

/// Per-method trainer settings derived from the shared base.
pub fn configure_method(method: Method, base: &TrainerConfig) -> TrainerConfig {
    let mut cfg = base.clone();
    match method {
        Method::Supervised => {
            cfg.objective.terms = TermWeights::supervised_only();
            cfg.reweight = false;
        }
        Method::Snuba => {
            cfg.objective.terms = TermWeights {
                ce_vs_g: 1.0,
                ..TermWeights::zeros()
            };
            cfg.objective.soft_g = true;
            cfg.reweight = false;
            cfg.freeze_aggregator = true;
        }
        Method::AutoSpear => cfg.reweight = false,
        Method::Wisdom => cfg.reweight = true,
    }
    cfg
}

/// Fits unweighted label-model parameters on unlabeled firings by minimizing
/// the unsupervised negative log-likelihood plus the quality guide.
pub fn fit_unweighted_label_model(
    lfs: &[LabelingFunction],
    fired: ArrayView2<'_, f64>,
    num_classes: usize,
    iters: usize,
    lr: f64,
    seed: u64,
) -> Result<AggregatorParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = AggregatorParams::init(lfs, num_classes, &mut rng);
    let mut adam = Adam::new(lr, params.theta.len());
    for _ in 0..iters {
        let mut grad = aggregator::ll_unsupervised_grad(&params, fired);
        grad.scaled_add(1.0, &aggregator::quality_guide_grad(&params));
        adam.step(
            params.theta.as_slice_mut().expect("contiguous theta"),
            grad.theta.as_slice().expect("contiguous gradient"),
        )?;
    }
    Ok(params)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRun {
    pub dataset: String,
    pub feature_mode: FeatureMode,
    pub method: Method,
    pub seed: u64,
    pub labeled_fraction: f64,
    pub test_macro_f1: f64,
    pub val_macro_f1: f64,
    /// Epoch count at the selected checkpoint.
    pub best_epoch: usize,
    pub num_lfs: usize,
    /// LF weights of the selected checkpoint, for methods that use LFs.
    pub weights: Option<Vec<f64>>,
    pub wall_time_secs: f64,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub trace: Trace,
}

pub fn run_method(method: Method, exp: &Experiment, cfg: &Config, seed: u64) -> Result<ExperimentRun> {
    let start = Instant::now();
    let trainer_cfg = configure_method(method, &cfg.trainer(seed));
    if method.uses_lfs() && exp.data.lfs.is_empty() {
        return Err(Error::Induction(format!("{method} needs at least one labeling function")));
    }
    let outcome = match method {
        Method::Snuba => {
            let keep: Vec<usize> = exp
                .data
                .unlabeled
                .fired
                .rows()
                .into_iter()
                .enumerate()
                .filter(|(_, r)| r.iter().any(|&v| v > 0.0))
                .map(|(i, _)| i)
                .collect();
            if keep.is_empty() {
                return Err(Error::Induction("no unlabeled row receives an LF vote".into()));
            }
            let mut data = exp.data.clone();
            data.unlabeled = SplitData {
                x: data.unlabeled.x.select(Axis(0), &keep),
                fired: data.unlabeled.fired.select(Axis(0), &keep),
                labels: Vec::new(),
            };
            let agg = fit_unweighted_label_model(
                &data.lfs,
                data.unlabeled.fired.view(),
                data.num_classes,
                cfg.snuba_label_model_iters,
                cfg.snuba_label_model_lr,
                seed,
            )?;
            Trainer::with_aggregator(&data, trainer_cfg.clone(), Some(agg))?.run()?
        }
        _ => Trainer::new(&exp.data, trainer_cfg.clone())?.run()?,
    };
    let preds = outcome.best.model.predict(exp.test.x.view())?;
    let test_macro_f1 = evaluate_macro_f1(&preds, &exp.test.labels, exp.data.num_classes)?;
    Ok(ExperimentRun {
        dataset: exp.dataset.clone(),
        feature_mode: exp.feature_mode,
        method,
        seed,
        labeled_fraction: exp.labeled_fraction,
        test_macro_f1,
        val_macro_f1: outcome.best.val_macro_f1,
        best_epoch: outcome.best.epoch,
        num_lfs: exp.data.lfs.len(),
        weights: method
            .uses_lfs()
            .then(|| outcome.best.aggregator.weights.to_vec()),
        wall_time_secs: start.elapsed().as_secs_f64(),
        trainer: trainer_cfg,
        trace: outcome.trace,
    })
}

/// Runs every method on every seed. `prepare` builds the experiment for a
/// seed; seeds and methods run in parallel. Results are ordered by seed, then
/// by the order of `methods`.
pub fn run_benchmark<F>(cfg: &Config, methods: &[Method], seeds: &[u64], prepare: F) -> Result<Vec<ExperimentRun>>
where
    F: Fn(u64) -> Result<Experiment> + Sync,
{
    let per_seed: Vec<Vec<ExperimentRun>> = seeds
        .par_iter()
        .map(|&seed| {
            let exp = prepare(seed)?;
            methods
                .par_iter()
                .map(|&m| run_method(m, &exp, cfg, seed))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub mode: FeatureMode,
    pub method: Method,
    pub mean: f64,
    pub std: f64,
    pub delta: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Config(format!("unknown report format {s:?}"))),
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation of test macro-F1 per
/// (dataset, mode, method) cell. With `deltas`, each cell also gets its mean
/// minus the supervised mean of the same dataset and mode; the two cells must
/// cover the same seeds.
pub fn aggregate_runs(runs: &[ExperimentRun], deltas: bool) -> Result<ReportTable> {
    if runs.is_empty() {
        return Err(Error::MissingInput("no runs to aggregate".into()));
    }
    type Key = (String, FeatureMode, Method);
    let mut cells: BTreeMap<Key, Vec<(u64, f64)>> = BTreeMap::new();
    for r in runs {
        cells
            .entry((r.dataset.clone(), r.feature_mode, r.method))
            .or_default()
            .push((r.seed, r.test_macro_f1));
    }
    let seeds_of = |v: &[(u64, f64)]| {
        let mut s: Vec<u64> = v.iter().map(|p| p.0).collect();
        s.sort_unstable();
        s
    };
    let mut rows = Vec::with_capacity(cells.len());
    for ((dataset, mode, method), scores) in &cells {
        let values: Vec<f64> = scores.iter().map(|p| p.1).collect();
        let (mean, std) = mean_std(&values);
        let delta = if deltas {
            let sup = cells
                .get(&(dataset.clone(), *mode, Method::Supervised))
                .ok_or_else(|| Error::MissingInput(format!("no supervised runs for {dataset} ({mode})")))?;
            if seeds_of(sup) != seeds_of(scores) {
                return Err(Error::Schema(format!(
                    "{method} and supervised runs for {dataset} ({mode}) use different seeds"
                )));
            }
            let sup_values: Vec<f64> = sup.iter().map(|p| p.1).collect();
            Some(mean - mean_std(&sup_values).0)
        } else {
            None
        };
        rows.push(ReportRow {
            dataset: dataset.clone(),
            mode: *mode,
            method: *method,
            mean,
            std,
            delta,
        });
    }
    Ok(ReportTable { rows })
}

impl ReportTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(ReportTable { rows })
    }

    /// Scores as percentages with the standard deviation in parentheses.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Dataset | Features | Method | Macro-F1 | Gain over supervised |\n");
        out.push_str("|---|---|---|---|---|\n");
        for row in &self.rows {
            let delta = row
                .delta
                .map(|d| format!("{:+.1}", 100.0 * d))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "| {} | {} | {} | {:.1} ({:.1}) | {} |\n",
                row.dataset,
                row.mode,
                row.method,
                100.0 * row.mean,
                100.0 * row.std,
                delta
            ));
        }
        out
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => Ok(self.to_markdown()),
        }
    }
}

pub fn emit_report(table: &ReportTable, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::MissingInput("report table is empty".into()));
    }
    std::fs::write(path, table.render(format)?)?;
    Ok(())
}

pub fn save_run(run: &ExperimentRun, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(run)?)?;
    Ok(())
}

pub fn load_run(path: impl AsRef<Path>) -> Result<ExperimentRun> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Loads every `*.json` run record in a directory, sorted by file name.
pub fn load_runs(dir: impl AsRef<Path>) -> Result<Vec<ExperimentRun>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(load_run).collect()
}
