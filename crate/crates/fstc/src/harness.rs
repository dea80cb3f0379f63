//! Experiment orchestration: data preparation shared by every command,
//! and the comparison / ablation grids behind `compare` and `ablate`.
//!
//! Preparation is done once per invocation: resolve the source/target
//! class split, draw the stratified train/test split, build the
//! vocabulary on source ∪ target-train (test documents never influence
//! featurization), and fingerprint the whole arrangement. Grid cells then
//! differ only in their regime subsample and seeds, so rows come out in a
//! deterministic (model, regime, seed) order and reruns are byte-identical.

use std::collections::BTreeSet;
use std::time::Instant;

use fstc_core::eval::{
    self, ablation_arms, baseline_logreg, baseline_svm, cell_ours, comparison_models, run_arm,
    standard_regimes, AblationArm, CellConfig, CellOutcome,
};
use fstc_core::model::Model;
use fstc_core::text::{
    build_vocab, subsample_fraction, tfidf_featurize, train_test_split, Corpus, Document,
    FeatureMatrix, Vocabulary,
};
use fstc_core::tsne::{project_corpus, Projection};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{CellTiming, Report, ReportRow};

/// SHA-256 over the ordered document ids and vocabulary terms, hex-encoded.
/// Embedded in checkpoints and report sidecars so artifacts produced
/// against different corpora or featurizations cannot be silently mixed.
pub fn corpus_fingerprint(corpus: &Corpus, vocab: &Vocabulary) -> String {
    let mut hasher = Sha256::new();
    for doc in corpus.documents() {
        hasher.update(doc.id.as_bytes());
        hasher.update(b"\n");
    }
    hasher.update(b"--vocab--\n");
    for term in vocab.terms() {
        hasher.update(term.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Merges two corpora with disjoint class sets into one (for vocabulary
/// construction), re-densifying labels against the union class list.
fn merge_corpora(a: &Corpus, b: &Corpus) -> Result<Corpus> {
    let mut class_names: Vec<String> =
        a.class_names().iter().chain(b.class_names()).cloned().collect();
    class_names.sort();
    class_names.dedup();
    let relabel = |c: &Corpus| -> Vec<Document> {
        c.documents()
            .iter()
            .map(|d| Document {
                id: d.id.clone(),
                text: d.text.clone(),
                label: class_names.binary_search(&d.class_name).expect("union class"),
                class_name: d.class_name.clone(),
            })
            .collect()
    };
    let mut documents = relabel(a);
    documents.extend(relabel(b));
    Ok(Corpus::new(documents, class_names)?)
}

/// The target split: explicit class list if configured, otherwise the
/// lexicographically last `target_class_count` classes.
fn resolve_target_classes(corpus: &Corpus, config: &RunConfig) -> Result<Vec<String>> {
    if !config.data.target_classes.is_empty() {
        let mut classes = config.data.target_classes.clone();
        classes.sort();
        classes.dedup();
        return Ok(classes);
    }
    let n = corpus.num_classes();
    let want = config.data.target_class_count;
    if want + 1 > n {
        return Err(CliError::Config(format!(
            "data.target_class_count: {want} target classes leave no source split \
             (corpus has {n} classes)"
        )));
    }
    Ok(corpus.class_names()[n - want..].to_vec())
}

/// Everything the grids need, prepared once: class split, train/test
/// split, shared vocabulary, fingerprint, and the fixed feature matrices.
#[derive(Debug)]
pub struct ExperimentData {
    pub source_corpus: Corpus,
    pub target_train: Corpus,
    pub target_test: Corpus,
    pub vocab: Vocabulary,
    pub fingerprint: String,
    pub source_features: FeatureMatrix,
    pub test_features: FeatureMatrix,
}

impl ExperimentData {
    pub fn prepare(corpus: &Corpus, config: &RunConfig) -> Result<ExperimentData> {
        let target_classes = resolve_target_classes(corpus, config)?;
        let source_classes: Vec<String> = corpus
            .class_names()
            .iter()
            .filter(|name| !target_classes.contains(name))
            .cloned()
            .collect();
        if source_classes.is_empty() {
            return Err(CliError::Config(
                "data.target_classes: every class is a target class; none left as source".into(),
            ));
        }
        let (source_corpus, target_corpus) =
            fstc_core::text::split_meta_classes(corpus, &source_classes, &target_classes)?;
        let (target_train, target_test) =
            train_test_split(&target_corpus, config.data.train_fraction, config.data.split_seed)?;

        let vocab_source = merge_corpora(&source_corpus, &target_train)?;
        let vocab = build_vocab(&vocab_source, config.vocab.min_df, config.vocab.max_size)?;
        let fingerprint = corpus_fingerprint(corpus, &vocab);

        let source_features = tfidf_featurize(&source_corpus, &vocab)?;
        let test_features = tfidf_featurize(&target_test, &vocab)?;
        Ok(ExperimentData {
            source_corpus,
            target_train,
            target_test,
            vocab,
            fingerprint,
            source_features,
            test_features,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.vocab.len()
    }

    pub fn num_target_classes(&self) -> usize {
        self.target_test.num_classes()
    }

    /// The full (non-subsampled) target training features.
    pub fn train_features(&self) -> Result<FeatureMatrix> {
        Ok(tfidf_featurize(&self.target_train, &self.vocab)?)
    }

    /// One regime's training set under one seed: a stratified subsample of
    /// the target training split, featurized with the shared vocabulary.
    /// Fractions nest under a fixed seed (few ⊂ medium ⊂ full), and the
    /// result is checked disjoint from the test split.
    pub fn regime_train(&self, fraction: f64, seed: u64) -> Result<(Corpus, FeatureMatrix)> {
        let sub = subsample_fraction(&self.target_train, fraction, seed)?;
        let train_ids: BTreeSet<&str> = sub.documents().iter().map(|d| d.id.as_str()).collect();
        for doc in self.target_test.documents() {
            if train_ids.contains(doc.id.as_str()) {
                return Err(CliError::Data(format!(
                    "test document {:?} leaked into a training set",
                    doc.id
                )));
            }
        }
        let features = tfidf_featurize(&sub, &self.vocab)?;
        Ok((sub, features))
    }

    /// Per-cell configuration with data-derived dimensions.
    pub fn cell_config(&self, config: &RunConfig) -> CellConfig {
        config.cell_config(self.input_dim(), self.num_target_classes())
    }
}

/// Validates a finished cell against its arm's flags: an arm without
/// transfer must never have pretrained, and an arm without meta must never
/// have run episodic stages.
fn check_stage_ledger(arm: &AblationArm, outcome: &CellOutcome) -> Result<()> {
    let ran = |stage: &str| outcome.stages.contains(&stage);
    let violation = |msg: String| CliError::Data(format!("stage ledger: {msg}"));
    if !arm.use_transfer && ran("pretrain") {
        return Err(violation(format!("arm {:?} loaded pretrained parameters", arm.name)));
    }
    if !arm.use_meta && (ran("meta_train") || ran("adapt")) {
        return Err(violation(format!("arm {:?} invoked meta operations", arm.name)));
    }
    if arm.use_transfer != ran("pretrain") || arm.use_meta != ran("meta_train") {
        return Err(violation(format!("arm {:?} stages {:?} disagree with flags", arm.name, outcome.stages)));
    }
    Ok(())
}

/// Runs the model-comparison grid (logreg, svm, and the full method) over
/// every regime and seed. Rows appear in (model, regime, seed) order.
pub fn run_comparison(data: &ExperimentData, config: &RunConfig) -> Result<Report> {
    let cell = data.cell_config(config);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for model in comparison_models() {
        for regime in standard_regimes() {
            for &seed in &config.eval.seeds {
                let started = Instant::now();
                let (_, train) = data.regime_train(regime.fraction, seed)?;
                let cfg = cell.reseeded(seed);
                let outcome = match model {
                    "logreg" => {
                        let trained = baseline_logreg(&train, &cfg.scratch)?;
                        let predictions = trained.predict(&data.test_features.features)?;
                        accuracy_outcome(&predictions, &data.test_features)?
                    }
                    "svm" => {
                        let trained = baseline_svm(&train, &cfg.scratch, config.eval.svm_lambda)?;
                        let predictions = trained.predict(&data.test_features.features)?;
                        accuracy_outcome(&predictions, &data.test_features)?
                    }
                    "ours" => {
                        let outcome =
                            cell_ours(&cfg, &data.source_features, &train, &data.test_features)?;
                        (outcome.accuracy, outcome.n_test)
                    }
                    other => return Err(CliError::Config(format!("unknown model {other:?}"))),
                };
                push_cell(&mut rows, &mut timings, model, regime.name, seed, outcome, started);
            }
        }
    }
    Ok(Report::new(rows, config.clone(), data.fingerprint.clone(), timings))
}

/// Runs the four-arm ablation grid over every regime and seed, checking
/// each cell's stage ledger against the arm's flags. Rows appear in
/// (arm, regime, seed) order.
pub fn run_ablation(data: &ExperimentData, config: &RunConfig) -> Result<Report> {
    let cell = data.cell_config(config);
    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for arm in ablation_arms() {
        for regime in standard_regimes() {
            for &seed in &config.eval.seeds {
                let started = Instant::now();
                let (_, train) = data.regime_train(regime.fraction, seed)?;
                let cfg = cell.reseeded(seed);
                let outcome =
                    run_arm(&arm, &cfg, &data.source_features, &train, &data.test_features)?;
                check_stage_ledger(&arm, &outcome)?;
                push_cell(
                    &mut rows,
                    &mut timings,
                    arm.name,
                    regime.name,
                    seed,
                    (outcome.accuracy, outcome.n_test),
                    started,
                );
            }
        }
    }
    Ok(Report::new(rows, config.clone(), data.fingerprint.clone(), timings))
}

fn accuracy_outcome(predictions: &[usize], test: &FeatureMatrix) -> Result<(f64, usize)> {
    Ok((eval::accuracy(predictions, &test.labels)?, test.len()))
}

fn push_cell(
    rows: &mut Vec<ReportRow>,
    timings: &mut Vec<CellTiming>,
    model: &str,
    regime: &str,
    seed: u64,
    (accuracy, n_test): (f64, usize),
    started: Instant,
) {
    rows.push(ReportRow {
        model: model.to_string(),
        regime: regime.to_string(),
        seed,
        accuracy,
        n_test,
    });
    timings.push(CellTiming {
        model: model.to_string(),
        regime: regime.to_string(),
        seed,
        seconds: started.elapsed().as_secs_f64(),
    });
}

/// Trains the full method (pretrain on source, then episodic meta-training
/// from that initialization) with every stage seeded by `seed`.
/// This is the model whose embeddings `project` visualizes.
pub fn train_ours_model(data: &ExperimentData, config: &RunConfig, seed: u64) -> Result<Model> {
    let cfg = data.cell_config(config).reseeded(seed);
    let source_cfg = fstc_core::model::ModelConfig {
        num_classes: data.source_features.num_classes(),
        ..cfg.model.clone()
    };
    let pre = fstc_core::train::pretrain(&source_cfg, &cfg.pretrain, &data.source_features)?;
    let run = match cfg.algorithm {
        eval::MetaAlgorithm::Maml => {
            fstc_core::meta::meta_train(&cfg.model, &cfg.meta, &data.source_features, Some(&pre.model))?
        }
        eval::MetaAlgorithm::Protonet => {
            fstc_core::meta::protonet_train(&cfg.model, &cfg.meta, &data.source_features, Some(&pre.model))?
        }
    };
    Ok(run.model)
}

/// Projects the test split's embeddings under `model` to 2-D.
pub fn project_test_split(
    data: &ExperimentData,
    config: &RunConfig,
    model: &Model,
) -> Result<Projection> {
    Ok(project_corpus(model, &data.test_features, &config.tsne.to_tsne_config())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A deterministic word-soup corpus: each class has its own small
    /// topic lexicon plus shared filler, so TF-IDF separates classes and
    /// every term clears min_df.
    fn tiny_corpus(classes: usize, per_class: usize) -> Corpus {
        let class_names: Vec<String> = (0..classes).map(|c| format!("class{c}")).collect();
        let mut documents = Vec::new();
        for (label, name) in class_names.iter().enumerate() {
            for d in 0..per_class {
                let mut words = Vec::new();
                for j in 0..6 {
                    words.push(format!("topic{label}word{}", (d + j) % 4));
                }
                words.push("shared".to_string());
                words.push("filler".to_string());
                documents.push(Document {
                    id: format!("{name}/{d:03}"),
                    text: words.join(" "),
                    label,
                    class_name: name.clone(),
                });
            }
        }
        Corpus::new(documents, class_names).unwrap()
    }

    /// A grid configuration small enough for unit tests.
    fn tiny_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.data.target_class_count = 2;
        config.data.split_seed = 3;
        config.vocab.min_df = 2;
        config.vocab.max_size = 200;
        config.model.hidden_dims = vec![8];
        config.pretrain = crate::config::StageConfig { lr: 0.2, epochs: 3, batch_size: 8, ..Default::default() };
        config.finetune = crate::config::StageConfig { lr: 0.2, epochs: 3, batch_size: 8, ..Default::default() };
        config.scratch = crate::config::StageConfig { lr: 0.2, epochs: 3, batch_size: 8, ..Default::default() };
        config.meta.way = 2;
        config.meta.shot = 1;
        config.meta.queries = 1;
        config.meta.inner_steps = 1;
        config.meta.meta_batch = 2;
        config.meta.episodes_total = 4;
        config.eval.seeds = vec![0, 1];
        config
    }

    fn tiny_data() -> (ExperimentData, RunConfig) {
        let config = tiny_config();
        let corpus = tiny_corpus(4, 10);
        (ExperimentData::prepare(&corpus, &config).unwrap(), config)
    }

    #[test]
    fn preparation_splits_classes_and_documents() {
        let (data, _) = tiny_data();
        assert_eq!(data.source_corpus.class_names(), ["class0", "class1"]);
        assert_eq!(data.target_train.class_names(), ["class2", "class3"]);
        assert_eq!(data.source_corpus.len(), 20);
        // 70/30 per class of 10: 7 train, 3 test.
        assert_eq!(data.target_train.len(), 14);
        assert_eq!(data.target_test.len(), 6);
        assert_eq!(data.num_target_classes(), 2);
        assert_eq!(data.source_features.len(), 20);
        assert_eq!(data.test_features.len(), 6);
        assert_eq!(data.source_features.features.cols(), data.input_dim());
    }

    #[test]
    fn explicit_target_classes_override_the_count() {
        let mut config = tiny_config();
        config.data.target_classes = vec!["class0".into(), "class2".into()];
        let data = ExperimentData::prepare(&tiny_corpus(4, 10), &config).unwrap();
        assert_eq!(data.target_train.class_names(), ["class0", "class2"]);
        assert_eq!(data.source_corpus.class_names(), ["class1", "class3"]);
    }

    #[test]
    fn too_many_target_classes_is_a_config_error() {
        let mut config = tiny_config();
        config.data.target_class_count = 4;
        let err = ExperimentData::prepare(&tiny_corpus(4, 10), &config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_explicit_class_is_a_config_error() {
        let mut config = tiny_config();
        config.data.target_classes = vec!["class0".into(), "nope".into()];
        let err = ExperimentData::prepare(&tiny_corpus(4, 10), &config).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("nope"), "{err}");
    }

    #[test]
    fn vocabulary_is_built_without_test_documents() {
        let (data, _) = tiny_data();
        assert_eq!(
            data.vocab.num_docs(),
            data.source_corpus.len() + data.target_train.len()
        );
    }

    #[test]
    fn regime_subsets_nest_under_a_shared_seed() {
        let (data, _) = tiny_data();
        let ids = |corpus: &Corpus| -> BTreeSet<String> {
            corpus.documents().iter().map(|d| d.id.clone()).collect()
        };
        for seed in [0u64, 1, 9] {
            let (few, _) = data.regime_train(0.05, seed).unwrap();
            let (medium, _) = data.regime_train(0.50, seed).unwrap();
            let (full, _) = data.regime_train(1.00, seed).unwrap();
            let (few, medium, full) = (ids(&few), ids(&medium), ids(&full));
            assert!(few.is_subset(&medium));
            assert!(medium.is_subset(&full));
            assert_eq!(full.len(), data.target_train.len());
        }
    }

    #[test]
    fn regime_training_sets_never_touch_test_ids() {
        let (data, _) = tiny_data();
        let test_ids: BTreeSet<&str> =
            data.target_test.documents().iter().map(|d| d.id.as_str()).collect();
        for seed in [0u64, 1] {
            let (sub, _) = data.regime_train(0.5, seed).unwrap();
            assert!(sub.documents().iter().all(|d| !test_ids.contains(d.id.as_str())));
        }
    }

    #[test]
    fn fingerprint_tracks_corpus_and_vocabulary() {
        let config = tiny_config();
        let a = ExperimentData::prepare(&tiny_corpus(4, 10), &config).unwrap();
        let b = ExperimentData::prepare(&tiny_corpus(4, 10), &config).unwrap();
        assert_eq!(a.fingerprint, b.fingerprint);
        assert_eq!(a.fingerprint.len(), 64);

        let c = ExperimentData::prepare(&tiny_corpus(4, 11), &config).unwrap();
        assert_ne!(a.fingerprint, c.fingerprint);

        let mut smaller_vocab = config.clone();
        smaller_vocab.vocab.max_size = 10;
        let d = ExperimentData::prepare(&tiny_corpus(4, 10), &smaller_vocab).unwrap();
        assert_ne!(a.fingerprint, d.fingerprint);
    }

    #[test]
    fn comparison_grid_has_ordered_rows_for_every_cell() {
        let (data, config) = tiny_data();
        let report = run_comparison(&data, &config).unwrap();
        assert_eq!(report.rows.len(), 3 * 3 * 2);
        let expected_order: Vec<(String, String, u64)> = comparison_models()
            .iter()
            .flat_map(|m| {
                standard_regimes()
                    .iter()
                    .flat_map(|r| [0u64, 1].map(|s| (m.to_string(), r.name.to_string(), s)))
                    .collect::<Vec<_>>()
            })
            .collect();
        let got: Vec<(String, String, u64)> = report
            .rows
            .iter()
            .map(|r| (r.model.clone(), r.regime.clone(), r.seed))
            .collect();
        assert_eq!(got, expected_order);
        assert!(report.rows.iter().all(|r| r.n_test == 6));
        assert_eq!(report.metadata.cell_seconds.len(), report.rows.len());
        assert_eq!(report.metadata.aggregates.len(), 9);
    }

    #[test]
    fn comparison_reruns_are_byte_identical() {
        let (data, config) = tiny_data();
        let first = run_comparison(&data, &config).unwrap();
        let second = run_comparison(&data, &config).unwrap();
        assert_eq!(first.csv_string(), second.csv_string());
        assert_eq!(first.metadata.aggregates, second.metadata.aggregates);
    }

    #[test]
    fn ablation_grid_runs_all_arms_and_checks_ledgers() {
        let (data, config) = tiny_data();
        let report = run_ablation(&data, &config).unwrap();
        assert_eq!(report.rows.len(), 4 * 3 * 2);
        let arm_names: BTreeSet<&str> = report.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(
            arm_names,
            BTreeSet::from(["base", "transfer", "meta", "ours"])
        );
    }

    #[test]
    fn ablation_base_cell_matches_isolated_run() {
        let (data, config) = tiny_data();
        let report = run_ablation(&data, &config).unwrap();
        let seed = 1u64;
        let (_, train) = data.regime_train(1.0, seed).unwrap();
        let cfg = data.cell_config(&config).reseeded(seed);
        let isolated = eval::cell_base(&cfg, &train, &data.test_features).unwrap();
        let row = report
            .rows
            .iter()
            .find(|r| r.model == "base" && r.regime == "full" && r.seed == seed)
            .unwrap();
        assert_eq!(row.accuracy, isolated.accuracy);
        assert_eq!(row.n_test, isolated.n_test);
    }

    #[test]
    fn stage_ledger_rejects_mismatched_outcomes() {
        let arm = ablation_arms()[1]; // transfer: no meta stages allowed
        let outcome = CellOutcome {
            accuracy: 1.0,
            n_test: 1,
            stages: vec!["pretrain", "meta_train", "adapt", "accuracy"],
        };
        assert!(check_stage_ledger(&arm, &outcome).is_err());
        let good = CellOutcome {
            accuracy: 1.0,
            n_test: 1,
            stages: vec!["pretrain", "finetune", "accuracy"],
        };
        assert!(check_stage_ledger(&arm, &good).is_ok());
    }

    #[test]
    fn ours_model_trains_and_projects_the_test_split() {
        let (data, mut config) = tiny_data();
        config.tsne.perplexity = 3.0;
        config.tsne.iters = 30;
        config.tsne.learning_rate = 50.0;
        let model = train_ours_model(&data, &config, 0).unwrap();
        assert_eq!(model.config.num_classes, 2);
        let proj = project_test_split(&data, &config, &model).unwrap();
        assert_eq!(proj.points.rows(), data.test_features.len());
        assert_eq!(proj.labels, data.test_features.labels);

        let again = project_test_split(&data, &config, &model).unwrap();
        assert!(proj.points.bit_eq(&again.points));
    }
}
