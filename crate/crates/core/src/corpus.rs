//! Dataset ingestion, tokenization, count features and the labeled/unlabeled
//! splits.
//!
//! Class indices are zero-based everywhere inside the crate. Label strings are
//! mapped to indices through a [`LabelMap`] whose order defines the index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUNDLED_LEMMAS: &str = include_str!("../data/lemmas.tsv");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: u64,
    pub text: String,
    /// Zero-based class index; `None` for unlabeled documents.
    pub label: Option<usize>,
}

impl Document {
    pub fn new(id: u64, text: impl Into<String>, label: Option<usize>) -> Self {
        Document {
            id,
            text: text.into(),
            label,
        }
    }

    pub fn unlabeled(&self) -> Document {
        Document {
            label: None,
            ..self.clone()
        }
    }
}

/// Ordered class names. Position in `labels` is the class index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub labels: Vec<String>,
}

impl LabelMap {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Schema("label map is empty".into()));
        }
        let unique: HashSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::Schema("label map contains duplicates".into()));
        }
        Ok(LabelMap { labels })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = fs::read_to_string(path.as_ref())?;
        let parsed: LabelMap = serde_json::from_str(&raw)?;
        LabelMap::new(parsed.labels)
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.labels.get(class).map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Jsonl,
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: u64,
    text: String,
    label: Option<String>,
}

/// Reads one document per record, in file order.
pub fn load_dataset(
    path: impl AsRef<Path>,
    format: DatasetFormat,
    labels: &LabelMap,
) -> Result<Vec<Document>> {
    let path = path.as_ref();
    match format {
        DatasetFormat::Jsonl => load_jsonl(path, labels),
    }
}

fn load_jsonl(path: &Path, labels: &LabelMap) -> Result<Vec<Document>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if record.text.trim().is_empty() {
            return Err(parse_err("document text is empty".into()));
        }
        let label = match record.label {
            None => None,
            Some(name) => Some(labels.index_of(&name).ok_or_else(|| {
                Error::Schema(format!("line {lineno}: unknown label {name:?}"))
            })?),
        };
        if !seen.insert(record.id) {
            return Err(Error::Schema(format!(
                "line {lineno}: duplicated document id {}",
                record.id
            )));
        }
        docs.push(Document::new(record.id, record.text, label));
    }
    Ok(docs)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Ord, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Raw,
    Lemma,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FeatureMode::Raw => f.write_str("raw"),
            FeatureMode::Lemma => f.write_str("lemma"),
        }
    }
}

/// Surface form to lemma lookup; unknown words map to themselves.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LemmaTable {
    map: HashMap<String, String>,
}

impl LemmaTable {
    pub fn parse_tsv(raw: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (lineno, line) in raw.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(surface), Some(lemma), None) if !surface.is_empty() && !lemma.is_empty() => {
                    map.insert(surface.to_lowercase(), lemma.to_lowercase());
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "lemma table line {}: expected `surface<TAB>lemma`",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(LemmaTable { map })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_tsv(&fs::read_to_string(path)?)
    }

    /// The English table shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse_tsv(BUNDLED_LEMMAS).expect("bundled lemma table is well formed")
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        LemmaTable {
            map: pairs
                .into_iter()
                .map(|(s, l)| (s.to_lowercase(), l.to_lowercase()))
                .collect(),
        }
    }

    pub fn lemmatize<'a>(&'a self, word: &'a str) -> &'a str {
        self.map.get(word).map(String::as_str).unwrap_or(word)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Tokenizer {
    mode: FeatureMode,
    lemmas: Arc<LemmaTable>,
}

impl Tokenizer {
    pub fn raw() -> Self {
        Tokenizer {
            mode: FeatureMode::Raw,
            lemmas: Arc::new(LemmaTable::default()),
        }
    }

    pub fn lemma(table: LemmaTable) -> Self {
        Tokenizer {
            mode: FeatureMode::Lemma,
            lemmas: Arc::new(table),
        }
    }

    pub fn for_mode(mode: FeatureMode) -> Self {
        match mode {
            FeatureMode::Raw => Self::raw(),
            FeatureMode::Lemma => Self::lemma(LemmaTable::bundled()),
        }
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    /// Lowercased whitespace tokens with leading/trailing punctuation removed,
    /// grouped by line. Bigrams never span a line break.
    pub fn tokenize_lines(&self, text: &str) -> Vec<Vec<String>> {
        text.lines()
            .map(|line| {
                line.split_whitespace()
                    .filter_map(|raw| {
                        let lower = raw.to_lowercase();
                        let trimmed = lower.trim_matches(|c: char| !c.is_alphanumeric());
                        if trimmed.is_empty() {
                            return None;
                        }
                        Some(match self.mode {
                            FeatureMode::Raw => trimmed.to_string(),
                            FeatureMode::Lemma => self.lemmas.lemmatize(trimmed).to_string(),
                        })
                    })
                    .collect::<Vec<_>>()
            })
            .filter(|line| !line.is_empty())
            .collect()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.tokenize_lines(text).into_iter().flatten().collect()
    }

    /// Unigrams and, if `max_ngram >= 2`, adjacent-token bigrams joined by a
    /// single space.
    pub fn terms(&self, text: &str, max_ngram: usize) -> Vec<String> {
        let mut out = Vec::new();
        for line in self.tokenize_lines(text) {
            if max_ngram >= 2 {
                for pair in line.windows(2) {
                    out.push(format!("{} {}", pair[0], pair[1]));
                }
            }
            out.extend(line);
        }
        out
    }
}

/// Sorted term list defining the count-feature basis.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    min_df: usize,
    max_ngram: usize,
    tokenizer: Tokenizer,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit term list (sorted and deduplicated).
    pub fn from_terms<S: Into<String>>(
        terms: impl IntoIterator<Item = S>,
        tokenizer: Tokenizer,
        max_ngram: usize,
    ) -> Self {
        let mut terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        terms.sort();
        terms.dedup();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            terms,
            index,
            min_df: 1,
            max_ngram,
            tokenizer,
        }
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn min_df(&self) -> usize {
        self.min_df
    }

    pub fn mode(&self) -> FeatureMode {
        self.tokenizer.mode()
    }

    pub fn max_ngram(&self) -> usize {
        self.max_ngram
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn term(&self, index: usize) -> &str {
        &self.terms[index]
    }

    /// Number of whitespace-separated tokens in a term (1 or 2).
    pub fn arity(&self, index: usize) -> usize {
        self.terms[index].split(' ').count()
    }

    pub fn featurize(&self, doc: &Document) -> Array1<f64> {
        self.featurize_text(&doc.text)
    }

    pub fn featurize_text(&self, text: &str) -> Array1<f64> {
        let mut counts = Array1::zeros(self.terms.len());
        for term in self.tokenizer.terms(text, self.max_ngram) {
            if let Some(&i) = self.index.get(&term) {
                counts[i] += 1.0;
            }
        }
        counts
    }

    /// Count matrix with one row per document.
    pub fn featurize_all(&self, docs: &[Document]) -> Array2<f64> {
        let rows: Vec<Array1<f64>> = docs.par_iter().map(|d| self.featurize(d)).collect();
        let mut out = Array2::zeros((docs.len(), self.terms.len()));
        for (mut dst, src) in out.rows_mut().into_iter().zip(rows) {
            dst.assign(&src);
        }
        out
    }
}

/// Builds a unigram+bigram vocabulary keeping terms seen in at least `min_df`
/// documents.
pub fn build_vocabulary(
    docs: &[Document],
    min_df: usize,
    tokenizer: &Tokenizer,
    max_ngram: usize,
) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from zero documents".into()));
    }
    if min_df == 0 {
        return Err(Error::Config("min_df must be at least 1".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in docs {
        let unique: HashSet<String> = tokenizer.terms(&doc.text, max_ngram).into_iter().collect();
        for term in unique {
            *df.entry(term).or_default() += 1;
        }
    }
    let kept: Vec<String> = df
        .into_iter()
        .filter(|(_, n)| *n >= min_df)
        .map(|(t, _)| t)
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "no term occurs in at least {min_df} of {} documents",
            docs.len()
        )));
    }
    let mut vocab = Vocabulary::from_terms(kept, tokenizer.clone(), max_ngram);
    vocab.min_df = min_df;
    Ok(vocab)
}

/// Supervised, validation and unlabeled partitions of a document pool.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitCorpus {
    pub supervised: Vec<Document>,
    pub validation: Vec<Document>,
    pub unlabeled: Vec<Document>,
    pub num_classes: usize,
    pub seed: u64,
    pub labeled_fraction: f64,
    /// Classes missing from the supervised or validation split.
    pub warnings: Vec<String>,
}

impl SplitCorpus {
    /// The full labeled set, supervised followed by validation.
    pub fn labeled(&self) -> Vec<Document> {
        self.supervised
            .iter()
            .chain(&self.validation)
            .cloned()
            .collect()
    }

    pub fn manifest(&self) -> SplitManifest {
        let ids = |docs: &[Document]| docs.iter().map(|d| d.id).collect();
        SplitManifest {
            seed: self.seed,
            labeled_fraction: self.labeled_fraction,
            supervised: ids(&self.supervised),
            validation: ids(&self.validation),
            unlabeled: ids(&self.unlabeled),
            warnings: self.warnings.clone(),
        }
    }

    /// Rebuilds a split from a manifest and the original pool.
    pub fn from_manifest(
        manifest: &SplitManifest,
        pool: &[Document],
        num_classes: usize,
    ) -> Result<Self> {
        let by_id: HashMap<u64, &Document> = pool.iter().map(|d| (d.id, d)).collect();
        let pick = |ids: &[u64], strip: bool| -> Result<Vec<Document>> {
            ids.iter()
                .map(|id| {
                    let doc = by_id
                        .get(id)
                        .ok_or_else(|| Error::Schema(format!("manifest id {id} not in pool")))?;
                    Ok(if strip { doc.unlabeled() } else { (*doc).clone() })
                })
                .collect()
        };
        Ok(SplitCorpus {
            supervised: pick(&manifest.supervised, false)?,
            validation: pick(&manifest.validation, false)?,
            unlabeled: pick(&manifest.unlabeled, true)?,
            num_classes,
            seed: manifest.seed,
            labeled_fraction: manifest.labeled_fraction,
            warnings: manifest.warnings.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub labeled_fraction: f64,
    pub supervised: Vec<u64>,
    pub validation: Vec<u64>,
    pub unlabeled: Vec<u64>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Number of labeled documents drawn from a pool of `pool_size`: the
/// smallest even count covering `fraction` of the pool, so the supervised and
/// validation halves have equal size.
pub fn labeled_count(pool_size: usize, fraction: f64) -> usize {
    let half = (fraction * pool_size as f64 / 2.0 - 1e-9).ceil().max(0.0) as usize;
    (2 * half).min(pool_size)
}

/// Draws a class-stratified labeled set and splits it evenly into supervised
/// and validation halves; every other document becomes unlabeled.
pub fn split_pool(
    docs: &[Document],
    num_classes: usize,
    labeled_fraction: f64,
    seed: u64,
) -> Result<SplitCorpus> {
    if !(labeled_fraction > 0.0 && labeled_fraction < 1.0) {
        return Err(Error::Config(format!(
            "labeled_fraction must lie in (0, 1), got {labeled_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, doc) in docs.iter().enumerate() {
        if let Some(y) = doc.label {
            if y >= num_classes {
                return Err(Error::Schema(format!(
                    "document {} has class {y} but only {num_classes} classes exist",
                    doc.id
                )));
            }
            by_class[y].push(i);
        }
    }
    let available: usize = by_class.iter().map(Vec::len).sum();
    let target = labeled_count(docs.len(), labeled_fraction);
    if target < 2 || target > available {
        return Err(Error::Config(format!(
            "need {target} labeled documents for the split, pool has {available}"
        )));
    }

    // Largest-remainder allocation of the labeled budget across classes.
    let shares: Vec<f64> = by_class
        .iter()
        .map(|c| target as f64 * c.len() as f64 / available as f64)
        .collect();
    let mut quota: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..num_classes).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut missing = target - quota.iter().sum::<usize>();
    for &c in order.iter().cycle().take(num_classes * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }

    let mut labeled_idx = Vec::with_capacity(target);
    for (members, &take) in by_class.iter_mut().zip(&quota) {
        members.shuffle(&mut rng);
        labeled_idx.extend_from_slice(&members[..take]);
    }
    labeled_idx.sort_unstable();
    labeled_idx.shuffle(&mut rng);
    let chosen: HashSet<usize> = labeled_idx.iter().copied().collect();

    let n_sup = labeled_idx.len().div_ceil(2);
    let supervised: Vec<Document> = labeled_idx[..n_sup].iter().map(|&i| docs[i].clone()).collect();
    let validation: Vec<Document> = labeled_idx[n_sup..].iter().map(|&i| docs[i].clone()).collect();
    let unlabeled: Vec<Document> = docs
        .iter()
        .enumerate()
        .filter(|(i, _)| !chosen.contains(i))
        .map(|(_, d)| d.unlabeled())
        .collect();

    let mut warnings = Vec::new();
    for (name, part) in [("supervised", &supervised), ("validation", &validation)] {
        for class in 0..num_classes {
            if !part.iter().any(|d| d.label == Some(class)) {
                let msg = format!("class {class} absent from the {name} split");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    Ok(SplitCorpus {
        supervised,
        validation,
        unlabeled,
        num_classes,
        seed,
        labeled_fraction,
        warnings,
    })
}
