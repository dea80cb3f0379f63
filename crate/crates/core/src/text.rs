//! Text pipeline: tokenization, vocabulary construction, TF-IDF
//! featurization, and the corpus manipulations the experiments need
//! (stratified subsampling, k-shot subsets, class-level splits).
//!
//! Everything here is deterministic: vocabularies are lexicographically
//! ordered, sampling is seeded, and subsets preserve original document
//! order. Loading a corpus from disk is the companion crate's job; this
//! module starts from in-memory documents.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::rng;
use crate::tensor::Tensor;

/// One labeled text. `id` is a stable unique identifier (relative file path
/// for on-disk corpora) used in fingerprints and disjointness checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: usize,
    pub class_name: String,
}

/// A set of documents with a dense label map: `class_names[label]` is the
/// class of each document, and class names are sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<Document>,
    class_names: Vec<String>,
}

impl Corpus {
    /// Validates the label map: class names sorted and unique, labels in
    /// range and consistent with their class name, every class non-empty.
    pub fn new(documents: Vec<Document>, class_names: Vec<String>) -> Result<Self> {
        if class_names.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Contract(
                "class names must be unique and sorted".into(),
            ));
        }
        let mut seen = alloc::vec![false; class_names.len()];
        for doc in &documents {
            let name = class_names.get(doc.label).ok_or_else(|| {
                CoreError::Index(alloc::format!(
                    "document {:?} has label {} but there are {} classes",
                    doc.id,
                    doc.label,
                    class_names.len()
                ))
            })?;
            if *name != doc.class_name {
                return Err(CoreError::Contract(alloc::format!(
                    "document {:?}: class name {:?} does not match label {} ({:?})",
                    doc.id, doc.class_name, doc.label, name
                )));
            }
            seen[doc.label] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(CoreError::Contract(alloc::format!(
                "class {:?} has no documents",
                class_names[empty]
            )));
        }
        Ok(Corpus { documents, class_names })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Document indices per class label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = alloc::vec![Vec::new(); self.class_names.len()];
        for (i, doc) in self.documents.iter().enumerate() {
            by_class[doc.label].push(i);
        }
        by_class
    }

    /// The sub-corpus of the given document indices (any order), with
    /// documents re-sorted to this corpus's order and labels re-densified
    /// over the classes that survive.
    pub fn select(&self, indices: &[usize]) -> Result<Corpus> {
        let ordered: BTreeSet<usize> = indices.iter().copied().collect();
        if let Some(&bad) = ordered.iter().find(|&&i| i >= self.documents.len()) {
            return Err(CoreError::Index(alloc::format!(
                "document index {bad} out of range ({} documents)",
                self.documents.len()
            )));
        }
        let kept_classes: BTreeSet<&String> =
            ordered.iter().map(|&i| &self.documents[i].class_name).collect();
        let class_names: Vec<String> = kept_classes.into_iter().cloned().collect();
        let documents = ordered
            .into_iter()
            .map(|i| {
                let doc = &self.documents[i];
                let label = class_names.binary_search(&doc.class_name).expect("kept class");
                Document { label, ..doc.clone() }
            })
            .collect();
        Corpus::new(documents, class_names)
    }
}

/// Lowercases, splits on any non-alphanumeric character, and keeps tokens
/// of 2..=30 characters that are not made purely of digits.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|tok| {
            let n = tok.chars().count();
            (2..=30).contains(&n) && !tok.chars().all(char::is_numeric)
        })
        .map(String::from)
        .collect()
}

/// Term list with document frequencies, lexicographically ordered so index
/// assignment is deterministic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    terms: Vec<String>,
    df: Vec<usize>,
    num_docs: usize,
}

impl Vocabulary {
    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Number of documents the vocabulary was counted over.
    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    pub fn df(&self, index: usize) -> usize {
        self.df[index]
    }
}

/// Counts document frequencies over the tokenized corpus, keeps terms with
/// `df >= min_df`, and if more than `max_size` remain keeps the highest-df
/// terms (ties broken lexicographically). The final list is sorted.
pub fn build_vocab(corpus: &Corpus, min_df: usize, max_size: usize) -> Result<Vocabulary> {
    if min_df < 1 {
        return Err(CoreError::Config("min_df must be at least 1".into()));
    }
    if max_size < 1 {
        return Err(CoreError::Config("max vocabulary size must be at least 1".into()));
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in corpus.documents() {
        let distinct: BTreeSet<String> = tokenize(&doc.text).into_iter().collect();
        for term in distinct {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(String, usize)> =
        df.into_iter().filter(|&(_, c)| c >= min_df).collect();
    if kept.len() > max_size {
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(max_size);
        kept.sort_by(|a, b| a.0.cmp(&b.0));
    }
    if kept.is_empty() {
        return Err(CoreError::Config(alloc::format!(
            "no term reaches document frequency {min_df} over {} documents",
            corpus.len()
        )));
    }
    let (terms, df) = kept.into_iter().unzip();
    Ok(Vocabulary { terms, df, num_docs: corpus.len() })
}

/// Dense per-document feature rows plus aligned integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub features: Tensor,
    pub labels: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(CoreError::Contract(alloc::format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(FeatureMatrix { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l + 1).max().unwrap_or(0)
    }

    /// Row indices per label value.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = alloc::vec![Vec::new(); self.num_classes()];
        for (i, &label) in self.labels.iter().enumerate() {
            by_class[label].push(i);
        }
        by_class
    }

    /// The sub-matrix of the given rows, in the given order, labels aligned.
    pub fn select_rows(&self, rows: &[usize]) -> Result<FeatureMatrix> {
        let cols = self.features.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.features.rows() {
                return Err(CoreError::Index(alloc::format!(
                    "row {r} out of range ({} rows)",
                    self.features.rows()
                )));
            }
            data.extend_from_slice(self.features.row(r));
            labels.push(self.labels[r]);
        }
        FeatureMatrix::new(Tensor::new(rows.len(), cols, data)?, labels)
    }
}

/// TF-IDF features: `weight(t, d) = count(t, d) · ln(N / df(t))` with `N`
/// the vocabulary's document count, rows L2-normalized. Rows with no known
/// terms (or only zero-idf terms) stay exactly zero.
pub fn tfidf_featurize(corpus: &Corpus, vocab: &Vocabulary) -> Result<FeatureMatrix> {
    let n = vocab.num_docs() as f64;
    let idf: Vec<f64> = (0..vocab.len()).map(|i| Float::ln(n / vocab.df(i) as f64)).collect();
    let mut data = alloc::vec![0.0; corpus.len() * vocab.len()];
    for (d, doc) in corpus.documents().iter().enumerate() {
        let row = &mut data[d * vocab.len()..(d + 1) * vocab.len()];
        for tok in tokenize(&doc.text) {
            if let Some(i) = vocab.index_of(&tok) {
                row[i] += 1.0; // raw term frequency, idf applied below
            }
        }
        let mut norm_sq = 0.0;
        for (w, &f) in row.iter_mut().zip(&idf) {
            *w *= f;
            norm_sq += *w * *w;
        }
        if norm_sq > 0.0 {
            let norm = Float::sqrt(norm_sq);
            for w in row.iter_mut() {
                *w /= norm;
            }
        }
    }
    let labels = corpus.documents().iter().map(|d| d.label).collect();
    FeatureMatrix::new(Tensor::new(corpus.len(), vocab.len(), data)?, labels)
}

/// Stratified subsampling without replacement: per class, keeps
/// `max(1, round(fraction · count))` documents chosen by seeded shuffle.
/// `fraction = 1` returns the corpus unchanged. Under a fixed seed the
/// kept sets are nested across fractions (a smaller fraction selects a
/// prefix of the same per-class shuffle).
pub fn subsample_fraction(corpus: &Corpus, fraction: f64, seed: u64) -> Result<Corpus> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CoreError::Config(alloc::format!(
            "subsample fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if fraction == 1.0 {
        return Ok(corpus.clone());
    }
    let mut kept = Vec::new();
    for (label, class_indices) in corpus.indices_by_class().into_iter().enumerate() {
        let take = (fraction * class_indices.len() as f64).round().max(1.0) as usize;
        let mut class_rng = rng::stream(seed, label as u64);
        let order = rng::shuffled_indices(&mut class_rng, class_indices.len());
        kept.extend(order.into_iter().take(take).map(|i| class_indices[i]));
    }
    corpus.select(&kept)
}

/// Exactly `k` seeded documents per class.
pub fn kshot_subset(corpus: &Corpus, k: usize, seed: u64) -> Result<Corpus> {
    if k < 1 {
        return Err(CoreError::Config("k must be at least 1".into()));
    }
    let mut kept = Vec::new();
    for (label, class_indices) in corpus.indices_by_class().into_iter().enumerate() {
        if class_indices.len() < k {
            return Err(CoreError::Sampling(alloc::format!(
                "class {:?} has {} documents, need {k}",
                corpus.class_names()[label],
                class_indices.len()
            )));
        }
        let mut class_rng = rng::stream(seed, label as u64);
        let order = rng::shuffled_indices(&mut class_rng, class_indices.len());
        kept.extend(order.into_iter().take(k).map(|i| class_indices[i]));
    }
    corpus.select(&kept)
}

/// Splits by class membership into two corpora with re-densified labels.
/// The two class lists must be disjoint and name existing classes.
pub fn split_meta_classes(
    corpus: &Corpus,
    first_classes: &[String],
    second_classes: &[String],
) -> Result<(Corpus, Corpus)> {
    let first: BTreeSet<&String> = first_classes.iter().collect();
    let second: BTreeSet<&String> = second_classes.iter().collect();
    if let Some(shared) = first.intersection(&second).next() {
        return Err(CoreError::Config(alloc::format!(
            "class {shared:?} appears in both splits"
        )));
    }
    for name in first.iter().chain(second.iter()) {
        if corpus.class_names().binary_search(name).is_err() {
            return Err(CoreError::Config(alloc::format!("unknown class {name:?}")));
        }
    }
    let pick = |classes: &BTreeSet<&String>| -> Result<Corpus> {
        let indices: Vec<usize> = corpus
            .documents()
            .iter()
            .enumerate()
            .filter(|(_, d)| classes.contains(&d.class_name))
            .map(|(i, _)| i)
            .collect();
        corpus.select(&indices)
    };
    Ok((pick(&first)?, pick(&second)?))
}

/// Stratified train/test split: per class, a seeded shuffle puts
/// `round(train_fraction · count)` documents (clamped to `1..=count-1`) in
/// the train side and the rest in test. Every class needs at least two
/// documents.
pub fn train_test_split(
    corpus: &Corpus,
    train_fraction: f64,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CoreError::Config(alloc::format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, class_indices) in corpus.indices_by_class().into_iter().enumerate() {
        let n = class_indices.len();
        if n < 2 {
            return Err(CoreError::Sampling(alloc::format!(
                "class {:?} has {n} document(s); need at least 2 to split",
                corpus.class_names()[label]
            )));
        }
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let mut class_rng = rng::stream(seed, label as u64);
        let order = rng::shuffled_indices(&mut class_rng, n);
        train.extend(order[..n_train].iter().map(|&i| class_indices[i]));
        test.extend(order[n_train..].iter().map(|&i| class_indices[i]));
    }
    Ok((corpus.select(&train)?, corpus.select(&test)?))
}
