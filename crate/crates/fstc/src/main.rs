//! `fstc` — few-shot text classification experiments.
//!
//! Subcommands mirror the pipeline stages: `ingest` inspects the corpus,
//! `pretrain` / `finetune` / `meta-train` produce checkpoints, `compare`
//! and `ablate` run the experiment grids, and `project` renders a 2-D
//! embedding of the test split. Exit codes: 0 success, 2 configuration
//! error, 3 data error, 4 checkpoint error.

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use fstc::checkpoint;
use fstc::config::RunConfig;
use fstc::corpus::load_20news;
use fstc::error::{IoContext, Result};
use fstc::harness::{
    run_ablation, run_comparison, train_ours_model, project_test_split, ExperimentData,
};
use fstc::report::{write_projection, Report};
use fstc_core::model::ModelConfig;

#[derive(Parser)]
#[command(name = "fstc", version, about = "Few-shot text classification experiments")]
struct Cli {
    /// Configuration file (TOML). Default: ./fstc.toml when present,
    /// otherwise built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override every stage seed and collapse the experiment grids to
    /// this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the corpus, build the vocabulary, and print a summary.
    Ingest {
        /// Also write the summary to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an encoder on the source classes and write a checkpoint.
    Pretrain {
        #[arg(long, default_value = "pretrained.ckpt")]
        out: PathBuf,
    },
    /// Fine-tune a pretrained checkpoint on the target training split.
    Finetune {
        /// Pretrained checkpoint to start from.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "finetuned.ckpt")]
        out: PathBuf,
    },
    /// Episodic meta-training on the source classes, optionally starting
    /// from a pretrained checkpoint.
    MetaTrain {
        /// Pretrained checkpoint to initialize the encoder from.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "meta.ckpt")]
        out: PathBuf,
    },
    /// Model-comparison grid (logreg, svm, ours) x regimes x seeds.
    Compare {
        #[arg(long, default_value = "compare.csv")]
        out: PathBuf,
    },
    /// Ablation grid (base, transfer, meta, ours) x regimes x seeds.
    Ablate {
        #[arg(long, default_value = "ablate.csv")]
        out: PathBuf,
    },
    /// 2-D projection of the test split's embeddings.
    Project {
        /// Checkpoint whose encoder to project; when absent, the full
        /// method is trained first (pretrain + meta-train).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value = "projection.csv")]
        out: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = RunConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }

    match cli.command {
        Command::Ingest { out } => cmd_ingest(&config, out.as_deref()),
        Command::Pretrain { out } => cmd_pretrain(&config, &out),
        Command::Finetune { ckpt, out } => cmd_finetune(&config, &ckpt, &out),
        Command::MetaTrain { ckpt, out } => cmd_meta_train(&config, ckpt.as_deref(), &out),
        Command::Compare { out } => cmd_grid(&config, &out, run_comparison),
        Command::Ablate { out } => cmd_grid(&config, &out, run_ablation),
        Command::Project { ckpt, out } => cmd_project(&config, ckpt.as_deref(), &out),
    }
}

/// Loads the corpus from the configured root and prepares the experiment
/// splits, features, and fingerprint.
fn prepare(config: &RunConfig) -> Result<(ExperimentData, usize, usize, usize)> {
    let root = config.data_root()?;
    let loaded = load_20news(&root)?;
    if loaded.lossy_files > 0 {
        eprintln!(
            "warning: {} file(s) were not valid UTF-8 and were decoded lossily",
            loaded.lossy_files
        );
    }
    let classes = loaded.corpus.num_classes();
    let documents = loaded.corpus.len();
    let data = ExperimentData::prepare(&loaded.corpus, config)?;
    Ok((data, classes, documents, loaded.lossy_files))
}

fn cmd_ingest(config: &RunConfig, out: Option<&std::path::Path>) -> Result<()> {
    let (data, classes, documents, lossy) = prepare(config)?;
    let summary = format!(
        "classes: {classes}\n\
         documents: {documents}\n\
         source classes: {}\n\
         target classes: {}\n\
         target train/test: {}/{}\n\
         vocabulary: {} terms\n\
         lossy files: {lossy}\n\
         fingerprint: {}\n",
        data.source_corpus.num_classes(),
        data.num_target_classes(),
        data.target_train.len(),
        data.target_test.len(),
        data.vocab.len(),
        data.fingerprint
    );
    print!("{summary}");
    if let Some(path) = out {
        std::fs::write(path, &summary).data_context("writing summary", path)?;
    }
    Ok(())
}

fn cmd_pretrain(config: &RunConfig, out: &std::path::Path) -> Result<()> {
    let (data, ..) = prepare(config)?;
    let model_cfg = config.model_config(data.input_dim(), data.source_features.num_classes());
    let train_cfg = config.pretrain.to_train_config();
    let run = fstc_core::train::pretrain(&model_cfg, &train_cfg, &data.source_features)?;
    checkpoint::save(out, &run.model, &data.fingerprint, "pretrain", train_cfg.seed)?;
    println!(
        "pretrained on {} documents, final loss {:.6}; wrote {}",
        data.source_features.len(),
        run.loss_trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_finetune(config: &RunConfig, ckpt: &std::path::Path, out: &std::path::Path) -> Result<()> {
    let (data, ..) = prepare(config)?;
    let (pretrained, _) = checkpoint::load_matching(ckpt, &data.fingerprint)?;
    let train_cfg = config.finetune.to_train_config();
    let train = data.train_features()?;
    let run =
        fstc_core::train::finetune(&pretrained, &train_cfg, &train, data.num_target_classes())?;
    checkpoint::save(out, &run.model, &data.fingerprint, "finetune", train_cfg.seed)?;
    println!(
        "fine-tuned on {} documents, final loss {:.6}; wrote {}",
        train.len(),
        run.loss_trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_meta_train(
    config: &RunConfig,
    ckpt: Option<&std::path::Path>,
    out: &std::path::Path,
) -> Result<()> {
    let (data, ..) = prepare(config)?;
    let init = match ckpt {
        Some(path) => Some(checkpoint::load_matching(path, &data.fingerprint)?.0),
        None => None,
    };
    let meta_cfg = config.meta.to_meta_config();
    let model_cfg = config.model_config(data.input_dim(), data.num_target_classes());
    let run = match config.meta.to_algorithm() {
        fstc_core::eval::MetaAlgorithm::Maml => {
            fstc_core::meta::meta_train(&model_cfg, &meta_cfg, &data.source_features, init.as_ref())?
        }
        fstc_core::eval::MetaAlgorithm::Protonet => fstc_core::meta::protonet_train(
            &model_cfg,
            &meta_cfg,
            &data.source_features,
            init.as_ref(),
        )?,
    };
    checkpoint::save(out, &run.model, &data.fingerprint, "meta-train", meta_cfg.seed)?;
    println!(
        "meta-trained over {} episodes, final loss {:.6}; wrote {}",
        meta_cfg.episodes_total,
        run.loss_trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn cmd_grid(
    config: &RunConfig,
    out: &std::path::Path,
    grid: fn(&ExperimentData, &RunConfig) -> Result<Report>,
) -> Result<()> {
    let (data, ..) = prepare(config)?;
    let report = grid(&data, config)?;
    report.write(out)?;
    println!("wrote {} ({} rows)", out.display(), report.rows.len());
    for agg in &report.metadata.aggregates {
        println!(
            "  {:<10} {:<8} mean {:.4} (std {:.4})",
            agg.model, agg.regime, agg.mean_accuracy, agg.std_accuracy
        );
    }
    Ok(())
}

fn cmd_project(
    config: &RunConfig,
    ckpt: Option<&std::path::Path>,
    out: &std::path::Path,
) -> Result<()> {
    let (data, ..) = prepare(config)?;
    let model = match ckpt {
        Some(path) => {
            let (model, _) = checkpoint::load_matching(path, &data.fingerprint)?;
            // Projection only uses the encoder, so a checkpoint with any
            // head (source- or target-sized) is acceptable; the input
            // width must still match the vocabulary.
            check_input_dim(&model.config, data.input_dim())?;
            model
        }
        None => train_ours_model(&data, config, config.eval.seeds[0])?,
    };
    let projection = project_test_split(&data, config, &model)?;
    write_projection(&projection, data.target_test.class_names(), out)?;
    println!(
        "projected {} documents; final KL {:.6}; wrote {}",
        projection.points.rows(),
        projection.kl_trace.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn check_input_dim(config: &ModelConfig, input_dim: usize) -> Result<()> {
    if config.input_dim != input_dim {
        return Err(fstc::CliError::Checkpoint(format!(
            "checkpoint expects {}-dimensional input but the vocabulary has {} terms",
            config.input_dim, input_dim
        )));
    }
    Ok(())
}
