//! Command-line driver: dataset generation, pre-training, fine-tuning, evaluation and sweeps.
//!
//! Exit codes: 0 on success, 2 on invalid input, 3 on training failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use bothp::eval::{
    ablation_rows, ablation_run, checkpoint_std_analysis, cross_community_eval, evaluate, export_embeddings,
    label_efficiency_curve, label_efficiency_sweep, model_std_analysis, sensitivity_curve, sensitivity_sweep,
    write_rows, AblationVariant, Arm, ExperimentConfig, SensitivityAxis,
};
use bothp::finetune::{finetune, predict, write_predictions, TrainedModel};
use bothp::graph::{load_dataset, save_dataset, SocialGraph};
use bothp::pretext::{pretrain, PretrainCheckpoint};
use bothp::synth::{generate, preset, SynthConfig, PRESETS};
use bothp::{Error, Result};

#[derive(Parser)]
#[command(name = "bothp", version, about = "Dual-encoder graph pre-training for social bot detection")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Pre-train the dual encoder on a dataset.
    Pretrain(PretrainArgs),
    /// Fine-tune a classifier, from a checkpoint or from scratch.
    Finetune(FinetuneArgs),
    /// Score a trained model on one split.
    Evaluate(EvaluateArgs),
    /// Run an experimental protocol over seeds and write CSV reports.
    Sweep(SweepArgs),
    /// Post-hoc analyses of trained models and checkpoints.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
}

#[derive(Args)]
struct GenerateArgs {
    /// One of the built-in generator presets.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    /// Generator config as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the generator seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Experiment config as JSON; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Pre-training checkpoint to start from.
    #[arg(long, conflicts_with = "from_scratch", required_unless_present = "from_scratch")]
    ckpt: Option<PathBuf>,
    /// Start from random encoder weights.
    #[arg(long)]
    from_scratch: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// JSON metrics report.
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Accepted for uniformity; evaluation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Labels,
    CrossCommunity,
    Prototypes,
    Interval,
    Ablation,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(value_enum)]
    protocol: Protocol,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// First run seed; runs use `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    runs: u64,
    /// Arms to compare (labels and cross-community).
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<String>>,
    /// Label fractions (labels).
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0])]
    fractions: Vec<f64>,
    /// Prototype counts or refresh intervals (prototypes and interval).
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<usize>>,
    /// Ablation variants (ablation).
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<String>>,
    /// Largest number of communities kept as folds (cross-community).
    #[arg(long, default_value_t = 6)]
    max_folds: usize,
}

#[derive(Subcommand)]
enum Analysis {
    /// Per-dimension spread of the two encoders' embeddings, with a one-sided Wilcoxon test.
    EmbeddingStd {
        /// Trained model or pre-training checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Writes the comparison as JSON instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export fused and per-branch embeddings as CSV (trained models only).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_graph(dir: &Path) -> Result<SocialGraph> {
    Ok(load_dataset(dir)?.graph)
}

fn experiment(config: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut exp: ExperimentConfig = read_config(config)?;
    if let Some(seed) = seed {
        exp.pretrain.seed = seed;
        exp.finetune.seed = seed;
    }
    Ok(exp)
}

fn run_generate(args: GenerateArgs) -> Result<()> {
    let mut config = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name).map_err(|_| {
            Error::InvalidArgument(format!("unknown preset {name:?}; available: {}", PRESETS.join(", ")))
        })?,
        (None, path) => read_config::<SynthConfig>(path.as_deref())?,
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (bundle, _) = generate(&config)?;
    save_dataset(&bundle, &args.out)?;
    write_json(&args.out.join("generator.json"), &config)?;
    log::info!(
        "wrote {} nodes, {} edges, homophily {:.3} to {}",
        bundle.graph.num_nodes,
        bundle.graph.num_edges(),
        bundle.graph.edge_homophily().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

fn run_pretrain(args: PretrainArgs) -> Result<()> {
    let graph = load_graph(&args.data)?;
    let exp = experiment(args.config.as_deref(), args.seed)?;
    let ckpt = pretrain(&graph, &exp.pretrain, &exp.encoder_for(&graph))?;
    ckpt.save(&args.out)?;
    if let (Some(first), Some(last)) = (ckpt.trace.epochs.first(), ckpt.trace.epochs.last()) {
        log::info!("L_P {:.4e} -> {:.4e} over {} epochs", first.total, last.total, last.epoch);
    }
    Ok(())
}

fn run_finetune(args: FinetuneArgs) -> Result<()> {
    let graph = load_graph(&args.data)?;
    let exp = experiment(args.config.as_deref(), args.seed)?;
    let ckpt = args.ckpt.as_deref().map(PretrainCheckpoint::load).transpose()?;
    let model = finetune(&graph, ckpt.as_ref(), &exp.finetune, &exp.encoder_for(&graph))?;
    model.save(&args.out)?;
    let probs = predict(&model, &graph)?;
    write_predictions(&args.out.join("predictions.csv"), &probs)?;
    log::info!("selected epoch {} of {}", model.trace.selected_epoch, model.trace.epochs.len());
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let graph = load_graph(&args.data)?;
    let model = TrainedModel::load(&args.model)?;
    let nodes = match args.split {
        Split::Train => &graph.splits.train,
        Split::Val => &graph.splits.val,
        Split::Test => &graph.splits.test,
    };
    if nodes.is_empty() {
        return Err(Error::InvalidArgument("the requested split is empty".into()));
    }
    let report = evaluate(&model, &graph, nodes)?;
    write_json(&args.report, &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn parse_arms(names: Option<&[String]>, default: &[Arm]) -> Result<Vec<Arm>> {
    match names {
        Some(names) => names.iter().map(|n| Arm::parse(n)).collect(),
        None => Ok(default.to_vec()),
    }
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let graph = load_graph(&args.data)?;
    let exp: ExperimentConfig = read_config(args.config.as_deref())?;
    if args.runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()));
    }
    let seeds: Vec<u64> = (args.seed..args.seed + args.runs).collect();
    let out = &args.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write_json(&out.join("experiment.json"), &exp)?;

    match args.protocol {
        Protocol::Labels => {
            let arms = parse_arms(args.arms.as_deref(), &Arm::ALL)?;
            let rows = label_efficiency_sweep(&graph, &args.fractions, &arms, &seeds, &exp)?;
            write_rows(&out.join("label_efficiency.csv"), &rows)?;
            write_rows(&out.join("label_efficiency_curve.csv"), &label_efficiency_curve(&rows))?;
        }
        Protocol::CrossCommunity => {
            let arms = parse_arms(args.arms.as_deref(), &[Arm::Bothp, Arm::SupervisedGraphAware])?;
            let report = cross_community_eval(&graph, args.max_folds, &arms, &seeds, &exp, args.seed)?;
            for (community, reason) in &report.skipped {
                log::warn!("community {community} skipped: {reason}");
            }
            write_json(&out.join("cross_community.json"), &report)?;
            write_rows(&out.join("cross_community_cells.csv"), &report.cells())?;
            write_rows(&out.join("cross_community_summary.csv"), &report.summary())?;
        }
        Protocol::Prototypes | Protocol::Interval => {
            let (axis, default) = match args.protocol {
                Protocol::Prototypes => (SensitivityAxis::Prototypes, vec![2, 4, 8, 16, 32]),
                _ => (SensitivityAxis::Interval, vec![1, 5, 10, 20]),
            };
            let values = args.values.unwrap_or(default);
            let rows = sensitivity_sweep(&graph, axis, &values, &seeds, &exp)?;
            write_rows(&out.join(format!("sensitivity_{}.csv", axis.name())), &rows)?;
            write_rows(&out.join(format!("sensitivity_{}_curve.csv", axis.name())), &sensitivity_curve(&rows))?;
        }
        Protocol::Ablation => {
            let variants = match &args.variants {
                Some(names) => names.iter().map(|n| AblationVariant::parse(n)).collect::<Result<Vec<_>>>()?,
                None => AblationVariant::ALL.to_vec(),
            };
            let traces = out.join("traces");
            let mut rows = Vec::new();
            for variant in variants {
                let cells = ablation_run(&graph, variant, &seeds, &exp)?;
                for cell in &cells {
                    let path = traces.join(format!("{}_seed{}.csv", variant.name(), cell.seed));
                    fs::create_dir_all(&traces).map_err(|e| io_error(&traces, e))?;
                    cell.pretrain_trace.write_csv(&path)?;
                }
                rows.extend(ablation_rows(variant, &cells));
            }
            write_rows(&out.join("ablation.csv"), &rows)?;
        }
    }
    Ok(())
}

fn run_analysis(analysis: Analysis) -> Result<()> {
    let Analysis::EmbeddingStd {
        model,
        data,
        out,
        embeddings,
        seed: _,
    } = analysis;
    let graph = load_graph(&data)?;
    let comparison = match TrainedModel::load(&model) {
        Ok(trained) => {
            if let Some(path) = &embeddings {
                export_embeddings(&trained.embed(&graph)?, &graph.labels, path)?;
            }
            model_std_analysis(&trained, &graph)?
        }
        Err(model_err) => {
            let ckpt = PretrainCheckpoint::load(&model).map_err(|_| model_err)?;
            if embeddings.is_some() {
                return Err(Error::InvalidArgument(
                    "--embeddings needs a trained model, not a pre-training checkpoint".into(),
                ));
            }
            checkpoint_std_analysis(&ckpt, &graph)?
        }
    };
    match out {
        Some(path) => write_json(&path, &comparison),
        None => {
            println!("{}", serde_json::to_string_pretty(&comparison)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::Generate(a) => run_generate(a),
        Command::Pretrain(a) => run_pretrain(a),
        Command::Finetune(a) => run_finetune(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Analyze { analysis } => run_analysis(analysis),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
