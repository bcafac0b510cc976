//! Labeling-function induction from a small labeled set and application of
//! the induced functions to count features.
//!
//! A labeling function here is a presence stump: it fires on a row when every
//! one of its propositions (vocabulary columns) has a nonzero count, and then
//! votes for its fixed target class. Phrases such as "how long" are bigram
//! columns of the vocabulary, so a phrase LF has a single proposition of
//! arity two.
//!
//! Induction repeats two steps: propose one candidate per column from the
//! still-uncovered labeled rows, then commit the candidate with the best
//! one-vs-rest F1 on the whole labeled set among those that are precise
//! enough and do not overlap too much (Jaccard of fired sets) with anything
//! already committed.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelMap, Vocabulary};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelingFunction {
    pub id: usize,
    /// Vocabulary column indices, all of which must be present for a firing.
    pub propositions: Vec<usize>,
    /// Zero-based class voted for when the function fires.
    pub target_class: usize,
    pub train_precision: f64,
    pub train_coverage: f64,
}

impl LabelingFunction {
    pub fn fires(&self, row: ndarray::ArrayView1<'_, f64>) -> bool {
        self.propositions.iter().all(|&p| row[p] != 0.0)
    }

    pub fn describe(&self, vocab: &Vocabulary, labels: &LabelMap) -> String {
        let props: Vec<&str> = self.propositions.iter().map(|&p| vocab.term(p)).collect();
        format!(
            "{} -> {}",
            props.join(" & "),
            labels.name(self.target_class).unwrap_or("?")
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InductionConfig {
    pub max_iters: usize,
    pub min_precision: f64,
    pub max_overlap: f64,
    pub min_firings: usize,
    pub max_arity: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            max_iters: 40,
            min_precision: 0.6,
            max_overlap: 0.6,
            min_firings: 3,
            max_arity: 2,
        }
    }
}

/// Count features and gold labels of the labeled set used for induction.
#[derive(Clone, Copy, Debug)]
pub struct LabeledView<'a> {
    pub features: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub num_classes: usize,
}

impl<'a> LabeledView<'a> {
    pub fn new(features: ArrayView2<'a, f64>, labels: &'a [usize], num_classes: usize) -> Self {
        assert_eq!(features.nrows(), labels.len());
        LabeledView {
            features,
            labels,
            num_classes,
        }
    }

    fn fired_rows(&self, propositions: &[usize]) -> Vec<usize> {
        (0..self.features.nrows())
            .filter(|&i| propositions.iter().all(|&p| self.features[[i, p]] != 0.0))
            .collect()
    }
}

/// Precision, coverage and one-vs-rest F1 of a fired set against the labels.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Scores {
    precision: f64,
    coverage: f64,
    f1: f64,
}

fn score(fired: &[usize], target: usize, data: &LabeledView<'_>) -> Scores {
    let n = data.labels.len();
    let correct = fired.iter().filter(|&&i| data.labels[i] == target).count();
    let positives = data.labels.iter().filter(|&&y| y == target).count();
    let precision = if fired.is_empty() {
        0.0
    } else {
        correct as f64 / fired.len() as f64
    };
    let recall = if positives == 0 {
        0.0
    } else {
        correct as f64 / positives as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Scores {
        precision,
        coverage: if n == 0 { 0.0 } else { fired.len() as f64 / n as f64 },
        f1,
    }
}

fn majority_class(rows: &[usize], labels: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &i in rows {
        counts[labels[i]] += 1;
    }
    // first maximum wins, so ties go to the lowest class index
    counts
        .iter()
        .enumerate()
        .fold((0, 0), |best, (c, &n)| if n > best.1 { (c, n) } else { best })
        .0
}

fn jaccard(a: &HashSet<usize>, b: &HashSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// One candidate per vocabulary column of arity at most `config.max_arity`
/// that fires on at least `config.min_firings` of the `active` labeled rows.
/// The target is the majority class among those active firings; precision and
/// coverage are measured on the whole labeled set.
pub fn generate_candidates(
    data: &LabeledView<'_>,
    active: &[bool],
    vocab: &Vocabulary,
    config: &InductionConfig,
) -> Vec<LabelingFunction> {
    let x = &data.features;
    (0..vocab.len())
        .into_par_iter()
        .filter(|&t| vocab.arity(t) <= config.max_arity)
        .filter_map(|t| {
            let fired_active: Vec<usize> = (0..x.nrows())
                .filter(|&i| active[i] && x[[i, t]] != 0.0)
                .collect();
            if fired_active.is_empty() || fired_active.len() < config.min_firings {
                return None;
            }
            let target = majority_class(&fired_active, data.labels, data.num_classes);
            let fired = data.fired_rows(&[t]);
            let s = score(&fired, target, data);
            Some(LabelingFunction {
                id: t,
                propositions: vec![t],
                target_class: target,
                train_precision: s.precision,
                train_coverage: s.coverage,
            })
        })
        .collect()
}

/// Picks the highest-F1 candidate that meets the precision floor and whose
/// fired set overlaps every committed LF's fired set by at most
/// `max_overlap`. Ties keep the earliest candidate.
pub fn score_and_filter(
    candidates: &[LabelingFunction],
    committed: &[LabelingFunction],
    data: &LabeledView<'_>,
    config: &InductionConfig,
) -> Option<LabelingFunction> {
    let committed_sets: Vec<HashSet<usize>> = committed
        .iter()
        .map(|lf| data.fired_rows(&lf.propositions).into_iter().collect())
        .collect();
    let scored: Vec<(usize, f64)> = candidates
        .par_iter()
        .enumerate()
        .filter_map(|(idx, cand)| {
            let fired = data.fired_rows(&cand.propositions);
            let s = score(&fired, cand.target_class, data);
            if s.precision < config.min_precision {
                return None;
            }
            let set: HashSet<usize> = fired.into_iter().collect();
            if committed_sets
                .iter()
                .any(|c| jaccard(&set, c) > config.max_overlap)
            {
                return None;
            }
            Some((idx, s.f1))
        })
        .collect();
    scored
        .into_iter()
        .fold(None::<(usize, f64)>, |best, (idx, f1)| match best {
            Some((_, bf)) if bf >= f1 => best,
            _ => Some((idx, f1)),
        })
        .map(|(idx, _)| candidates[idx].clone())
}

/// Commit loop over the labeled set. Returns committed LFs in commit order,
/// with ids `0..m`.
pub fn snuba_induce(
    data: &LabeledView<'_>,
    vocab: &Vocabulary,
    config: &InductionConfig,
) -> Result<Vec<LabelingFunction>> {
    if !(1..=2).contains(&config.max_arity) {
        return Err(Error::Config(format!(
            "max_arity must be 1 or 2, got {}",
            config.max_arity
        )));
    }
    if data.features.ncols() != vocab.len() {
        return Err(Error::Dimension {
            expected: vocab.len(),
            actual: data.features.ncols(),
            context: "labeled features vs vocabulary",
        });
    }
    let n = data.labels.len();
    let mut uncovered = vec![true; n];
    let mut committed: Vec<LabelingFunction> = Vec::new();
    for _ in 0..config.max_iters {
        if uncovered.iter().all(|u| !u) {
            break;
        }
        let candidates: Vec<LabelingFunction> = generate_candidates(data, &uncovered, vocab, config)
            .into_iter()
            .filter(|c| !committed.iter().any(|lf| lf.propositions == c.propositions))
            .collect();
        let Some(mut winner) = score_and_filter(&candidates, &committed, data, config) else {
            break;
        };
        for i in data.fired_rows(&winner.propositions) {
            if data.labels[i] == winner.target_class {
                uncovered[i] = false;
            }
        }
        winner.id = committed.len();
        committed.push(winner);
    }
    if committed.is_empty() {
        return Err(Error::Induction(format!(
            "no candidate met precision {} within {} iterations",
            config.min_precision, config.max_iters
        )));
    }
    Ok(committed)
}

/// Firing matrix `fired` (1.0 / 0.0) and label matrix `votes` where
/// `votes[i][j]` is `target_class + 1` when LF `j` fires on row `i` and 0
/// (abstain) otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct TriggerMatrices {
    pub fired: Array2<f64>,
    pub votes: Array2<u32>,
}

impl TriggerMatrices {
    pub fn num_rows(&self) -> usize {
        self.fired.nrows()
    }

    pub fn num_lfs(&self) -> usize {
        self.fired.ncols()
    }

    pub fn is_fired(&self, i: usize, j: usize) -> bool {
        self.fired[[i, j]] != 0.0
    }

    /// Zero-based class voted by LF `j` on row `i`, if it fired.
    pub fn vote(&self, i: usize, j: usize) -> Option<usize> {
        match self.votes[[i, j]] {
            0 => None,
            v => Some(v as usize - 1),
        }
    }

    pub fn all_abstain(&self, i: usize) -> bool {
        self.fired.row(i).iter().all(|&f| f == 0.0)
    }

    pub fn select(&self, rows: &[usize]) -> TriggerMatrices {
        TriggerMatrices {
            fired: self.fired.select(ndarray::Axis(0), rows),
            votes: self.votes.select(ndarray::Axis(0), rows),
        }
    }

    /// Fraction of rows on which each LF fires.
    pub fn coverage(&self) -> Vec<f64> {
        let n = self.num_rows().max(1) as f64;
        self.fired.columns().into_iter().map(|c| c.sum() / n).collect()
    }
}

pub fn apply_lfs(
    lfs: &[LabelingFunction],
    features: &Array2<f64>,
    feature_dim: usize,
) -> Result<TriggerMatrices> {
    if features.ncols() != feature_dim {
        return Err(Error::Dimension {
            expected: feature_dim,
            actual: features.ncols(),
            context: "features vs labeling-function vocabulary",
        });
    }
    if let Some(p) = lfs
        .iter()
        .flat_map(|lf| lf.propositions.iter())
        .find(|&&p| p >= feature_dim)
    {
        return Err(Error::Dimension {
            expected: feature_dim,
            actual: p + 1,
            context: "labeling-function proposition index",
        });
    }
    let n = features.nrows();
    let mut fired = Array2::zeros((n, lfs.len()));
    let mut votes = Array2::zeros((n, lfs.len()));
    for (i, row) in features.rows().into_iter().enumerate() {
        for (j, lf) in lfs.iter().enumerate() {
            if lf.fires(row) {
                fired[[i, j]] = 1.0;
                votes[[i, j]] = lf.target_class as u32 + 1;
            }
        }
    }
    Ok(TriggerMatrices { fired, votes })
}

/// Serialized form of one LF, with terms and class names spelled out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LfRecord {
    pub id: usize,
    pub propositions: Vec<String>,
    pub target_class: String,
    pub train_precision: f64,
    pub train_coverage: f64,
}

pub fn to_records(lfs: &[LabelingFunction], vocab: &Vocabulary, labels: &LabelMap) -> Vec<LfRecord> {
    lfs.iter()
        .map(|lf| LfRecord {
            id: lf.id,
            propositions: lf
                .propositions
                .iter()
                .map(|&p| vocab.term(p).to_string())
                .collect(),
            target_class: labels.name(lf.target_class).unwrap_or_default().to_string(),
            train_precision: lf.train_precision,
            train_coverage: lf.train_coverage,
        })
        .collect()
}

pub fn from_records(
    records: &[LfRecord],
    vocab: &Vocabulary,
    labels: &LabelMap,
) -> Result<Vec<LabelingFunction>> {
    records
        .iter()
        .map(|r| {
            let propositions = r
                .propositions
                .iter()
                .map(|t| {
                    vocab
                        .index_of(t)
                        .ok_or_else(|| Error::Schema(format!("LF {}: term {t:?} not in vocabulary", r.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            if propositions.is_empty() {
                return Err(Error::Schema(format!("LF {} has no propositions", r.id)));
            }
            let target_class = labels
                .index_of(&r.target_class)
                .ok_or_else(|| Error::Schema(format!("LF {}: unknown class {:?}", r.id, r.target_class)))?;
            Ok(LabelingFunction {
                id: r.id,
                propositions,
                target_class,
                train_precision: r.train_precision,
                train_coverage: r.train_coverage,
            })
        })
        .collect()
}

pub fn save_lfs(
    path: impl AsRef<std::path::Path>,
    lfs: &[LabelingFunction],
    vocab: &Vocabulary,
    labels: &LabelMap,
) -> Result<()> {
    let json = serde_json::to_string_pretty(&to_records(lfs, vocab, labels))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_lfs(
    path: impl AsRef<std::path::Path>,
    vocab: &Vocabulary,
    labels: &LabelMap,
) -> Result<Vec<LabelingFunction>> {
    let records: Vec<LfRecord> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    from_records(&records, vocab, labels)
}
