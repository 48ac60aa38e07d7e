//! `capp`: every experiment stage as a subcommand, driven by one config file.
//!
//! Each subcommand prints a single `key=value` summary line on stdout. Exit
//! status is 0 on success, 1 on usage errors and 2 on runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use capp_core::corpus::{build_dataset, split_dataset, PartEncoding, ProcessChain, Split};
use capp_core::oracle::{GbdtOracle, OracleDataset};
use capp_core::pipeline::{
    read_results_csv, retrain, run_experiment, select_pseudolabels, select_random, summarize,
    write_summary_csv, Prediction,
};
use capp_core::seqmodel::{
    accuracy_of, init_model, load_model, read_traces_jsonl, save_model, write_traces_jsonl,
};
use capp_core::trace_features::{
    extract_features, read_features_csv, write_features_csv, FeatureRow,
};
use capp_core::{rng, Dataset, RunConfig, Vocabulary};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "capp",
    version,
    about = "Pseudo-labeling experiments for process-chain generation"
)]
struct Cli {
    /// Run configuration (TOML). Built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for single-stage commands; for `experiment` it replaces the seed list.
    #[arg(long, global = true, value_name = "INT")]
    seed: Option<u64>,
    /// Output directory; overrides `paths.out_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Only log errors.
    #[arg(long, global = true)]
    quiet: bool,
    /// Maximum number of experiment cells run in parallel.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build `dataset.jsonl` and `vocab.json` in the output directory.
    GenData,
    /// Write the split manifest for one fraction and seed.
    Split(SplitArgs),
    /// Train a fresh transformer on the train partition of a split.
    Train(TrainArgs),
    /// Decode one partition greedily and dump the logit traces.
    GenTraces(GenTracesArgs),
    /// Turn a trace dump into a features file, labelled when a dataset is given.
    Features(FeaturesArgs),
    /// Fit the boosted-tree oracle on a labelled features file.
    OracleTrain(OracleTrainArgs),
    /// Select pseudo-labels from a test trace dump.
    Augment(AugmentArgs),
    /// Retrain a checkpoint once on the labeled pairs plus an augmentation file.
    Retrain(RetrainArgs),
    /// Sequence accuracy of a checkpoint on one partition.
    Eval(EvalArgs),
    /// Run the full grid and write `results.csv` and `summary.csv`.
    Experiment,
    /// Recompute `summary.csv` from a results file.
    Summarize(SummarizeArgs),
}

#[derive(Args, Debug)]
struct DatasetArg {
    /// Dataset file; defaults to `paths.dataset` from the config.
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[command(flatten)]
    data: DatasetArg,
    /// Share of parts in the transformer training partition.
    #[arg(long)]
    fraction: f64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArg,
    /// Split manifest produced by `split`.
    #[arg(long, value_name = "PATH")]
    split: PathBuf,
    /// Override the configured number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Partition {
    Train,
    Val,
    /// Train and validation parts together.
    Labeled,
    Test,
}

impl Partition {
    fn parts(self, split: &Split) -> Vec<PartEncoding> {
        match self {
            Partition::Train => split.train_parts.clone(),
            Partition::Val => split.val_parts.clone(),
            Partition::Labeled => split.labeled_parts(),
            Partition::Test => split.test_parts.clone(),
        }
    }
}

#[derive(Args, Debug)]
struct GenTracesArgs {
    #[command(flatten)]
    data: DatasetArg,
    #[arg(long, value_name = "PATH")]
    split: PathBuf,
    /// Model checkpoint.
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    partition: Partition,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "traces.jsonl")]
    name: String,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    /// Trace dump produced by `gen-traces`.
    #[arg(long, value_name = "PATH")]
    traces: PathBuf,
    /// Label each row against this dataset; rows stay unlabelled otherwise.
    #[arg(long, value_name = "PATH")]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "features.csv")]
    name: String,
}

#[derive(Args, Debug)]
struct OracleTrainArgs {
    /// Labelled features file.
    #[arg(long, value_name = "PATH")]
    features: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AugmentStrategy {
    Detector,
    Random,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    /// Test-partition trace dump.
    #[arg(long, value_name = "PATH")]
    traces: PathBuf,
    /// Oracle checkpoint produced by `oracle-train`.
    #[arg(long, value_name = "PATH")]
    oracle: PathBuf,
    /// Share of well-formed predictions offered to the oracle.
    #[arg(long, default_value_t = 1.0)]
    proportion: f64,
    /// `random` samples as many pairs as the detector keeps.
    #[arg(long, value_enum, default_value = "detector")]
    strategy: AugmentStrategy,
}

#[derive(Args, Debug)]
struct RetrainArgs {
    #[command(flatten)]
    data: DatasetArg,
    #[arg(long, value_name = "PATH")]
    split: PathBuf,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    /// Augmentation file from `augment`; omit for the baseline arm.
    #[arg(long, value_name = "PATH")]
    augment: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DatasetArg,
    #[arg(long, value_name = "PATH")]
    split: PathBuf,
    #[arg(long, value_name = "PATH")]
    model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    partition: Partition,
}

#[derive(Args, Debug)]
struct SummarizeArgs {
    /// Results file produced by `experiment`.
    #[arg(long, value_name = "PATH")]
    results: PathBuf,
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    jobs: usize,
}

impl Ctx {
    fn dataset_path(&self, arg: &DatasetArg) -> PathBuf {
        arg.dataset
            .clone()
            .unwrap_or_else(|| self.cfg.paths.dataset.clone())
    }

    fn dataset(&self, arg: &DatasetArg) -> Result<Dataset> {
        load_dataset(&self.dataset_path(arg))
    }

    fn out_file(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        bail!("dataset not found: {}", path.display());
    }
    Ok(Dataset::load(path)?)
}

fn load_split(path: &Path) -> Result<Split> {
    Split::load(path).with_context(|| format!("loading split {}", path.display()))
}

fn pairs_file(pairs: &[(PartEncoding, ProcessChain)]) -> String {
    pairs
        .iter()
        .map(|(p, c)| {
            let names: Vec<&str> = c.ops().iter().map(|o| o.as_str()).collect();
            format!("{}\t{}\n", p.index(), names.join(","))
        })
        .collect()
}

fn read_pairs_file(path: &Path) -> Result<Vec<(PartEncoding, ProcessChain)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let bad = || anyhow::anyhow!("{}: malformed line {}", path.display(), i + 1);
            let (idx, ops) = line.split_once('\t').ok_or_else(bad)?;
            let part = idx
                .parse()
                .ok()
                .and_then(PartEncoding::from_index)
                .ok_or_else(bad)?;
            let ops = ops
                .split(',')
                .map(|s| capp_core::Operation::parse(s).ok_or_else(bad))
                .collect::<Result<Vec<_>>>()?;
            Ok((part, ProcessChain::new(ops).map_err(|_| bad())?))
        })
        .collect()
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let (Command::Experiment, Some(s)) = (&cli.command, cli.seed) {
        cfg.experiment.seeds = vec![s];
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(cfg.seed),
        out: cli.out.clone().unwrap_or_else(|| cfg.paths.out_dir.clone()),
        jobs: cli.jobs,
        cfg,
    };
    match cli.command {
        Command::GenData => {
            let path = ctx.out_file("dataset.jsonl")?;
            let ds = build_dataset(&path)?;
            let vocab = ctx.out_file("vocab.json")?;
            fs::write(&vocab, Vocabulary::standard().to_json())
                .with_context(|| format!("writing {}", vocab.display()))?;
            Ok(format!(
                "command=gen-data records={} pairs={} dataset={} vocab={}",
                ds.len(),
                ds.pair_count(),
                path.display(),
                vocab.display()
            ))
        }
        Command::Split(a) => {
            let ds = ctx.dataset(&a.data)?;
            let split = split_dataset(&ds, a.fraction, ctx.seed)?;
            let path = ctx.out_file(&Split::file_name(a.fraction, ctx.seed))?;
            split.save(&path)?;
            Ok(format!(
                "command=split fraction={} seed={} train={} val={} test={} path={}",
                a.fraction,
                ctx.seed,
                split.train_parts.len(),
                split.val_parts.len(),
                split.test_parts.len(),
                path.display()
            ))
        }
        Command::Train(a) => {
            let ds = ctx.dataset(&a.data)?;
            let split = load_split(&a.split)?;
            let mut h = ctx.cfg.train_hyper(rng::derive_seed(ctx.seed, "train"));
            if let Some(e) = a.epochs {
                h.epochs = e;
            }
            let pairs = split.train_pairs(&ds);
            let mut model = init_model(ctx.cfg.model, rng::derive_seed(ctx.seed, "model-init"))?;
            let report = model.train(&pairs, &h)?;
            let path = ctx.out_file("model.bin")?;
            save_model(&model, &path)?;
            Ok(format!(
                "command=train pairs={} epochs={} initial_loss={} final_loss={} model={}",
                pairs.len(),
                h.epochs,
                report.epoch_losses[0],
                report.final_loss(),
                path.display()
            ))
        }
        Command::GenTraces(a) => {
            let ds = ctx.dataset(&a.data)?;
            let split = load_split(&a.split)?;
            let model = load_model(&a.model)?;
            let gens = model.generate_many(&a.partition.parts(&split));
            let traces: Vec<_> = gens.iter().map(|g| g.trace.clone()).collect();
            let path = ctx.out_file(&a.name)?;
            write_traces_jsonl(&path, &traces)?;
            Ok(format!(
                "command=gen-traces n={} malformed={} accuracy={} traces={}",
                gens.len(),
                gens.iter().filter(|g| g.is_malformed()).count(),
                accuracy_of(&gens, &ds),
                path.display()
            ))
        }
        Command::Features(a) => {
            let traces = read_traces_jsonl(&a.traces)?;
            let ds = a.dataset.as_deref().map(load_dataset).transpose()?;
            let rows = traces
                .iter()
                .map(|t| {
                    let part = PartEncoding::from_index(t.part_id)
                        .with_context(|| format!("trace for unknown part {}", t.part_id))?;
                    let label = ds
                        .as_ref()
                        .map(|ds| t.decoded_chain().is_some_and(|c| ds.is_feasible(&part, &c)));
                    Ok(FeatureRow {
                        part_id: t.part_id,
                        label,
                        features: extract_features(t)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let path = ctx.out_file(&a.name)?;
            write_features_csv(&path, &rows)?;
            let positives = rows.iter().filter(|r| r.label == Some(true)).count();
            Ok(format!(
                "command=features rows={} labelled={} positives={} features={}",
                rows.len(),
                ds.is_some(),
                positives,
                path.display()
            ))
        }
        Command::OracleTrain(a) => {
            let ds = OracleDataset::from_feature_rows(read_features_csv(&a.features)?)?;
            let oracle =
                GbdtOracle::fit_with(&ds, &ctx.cfg.oracle, rng::derive_seed(ctx.seed, "oracle"))?;
            let path = ctx.out_file("oracle.json")?;
            oracle.save(&path)?;
            Ok(format!(
                "command=oracle-train rows={} positive_rate={} trees={} train_accuracy={} oracle={}",
                ds.len(),
                ds.positive_rate(),
                oracle.trees.len(),
                oracle.accuracy(&ds)?,
                path.display()
            ))
        }
        Command::Augment(a) => {
            let oracle = GbdtOracle::load(&a.oracle)?;
            let mut predictions = Vec::new();
            for t in read_traces_jsonl(&a.traces)? {
                let Some(chain) = t.decoded_chain() else {
                    continue;
                };
                let part = PartEncoding::from_index(t.part_id)
                    .with_context(|| format!("trace for unknown part {}", t.part_id))?;
                predictions.push(Prediction {
                    part,
                    chain,
                    features: extract_features(&t)?,
                });
            }
            let pseed = rng::derive_seed(ctx.seed, "augment");
            let sel = select_pseudolabels(
                &oracle,
                &predictions,
                a.proportion,
                rng::derive_seed(pseed, "detector"),
            )?;
            let (pairs, name) = match a.strategy {
                AugmentStrategy::Detector => (sel.kept.clone(), "augment_detector.tsv"),
                AugmentStrategy::Random => (
                    select_random(
                        &predictions,
                        sel.kept.len(),
                        rng::derive_seed(pseed, "random"),
                    )?,
                    "augment_random.tsv",
                ),
            };
            let path = ctx.out_file(name)?;
            fs::write(&path, pairs_file(&pairs))
                .with_context(|| format!("writing {}", path.display()))?;
            Ok(format!(
                "command=augment strategy={} predictions={} offered={} kept={} augment={}",
                format!("{:?}", a.strategy).to_lowercase(),
                predictions.len(),
                sel.offered,
                pairs.len(),
                path.display()
            ))
        }
        Command::Retrain(a) => {
            let ds = ctx.dataset(&a.data)?;
            let split = load_split(&a.split)?;
            let model = load_model(&a.model)?;
            let augmented = a
                .augment
                .as_deref()
                .map(read_pairs_file)
                .transpose()?
                .unwrap_or_default();
            let test: std::collections::HashSet<_> = split.test_parts.iter().collect();
            if let Some((p, _)) = augmented.iter().find(|(p, _)| !test.contains(p)) {
                bail!("augmentation contains non-test part {}", p.index());
            }
            let mut h = ctx.cfg.retrain_hyper(rng::derive_seed(ctx.seed, "retrain"));
            if let Some(e) = a.epochs {
                h.epochs = e;
            }
            let start = if ctx.cfg.retrain.warm_start {
                model
            } else {
                init_model(ctx.cfg.model, rng::derive_seed(ctx.seed, "retrain-init"))?
            };
            let (m, report) = retrain(&start, &split.train_pairs(&ds), &augmented, &h)?;
            let path = ctx.out_file("model_retrained.bin")?;
            save_model(&m, &path)?;
            Ok(format!(
                "command=retrain augmented={} epochs={} final_loss={} model={}",
                augmented.len(),
                h.epochs,
                report.final_loss(),
                path.display()
            ))
        }
        Command::Eval(a) => {
            let ds = ctx.dataset(&a.data)?;
            let split = load_split(&a.split)?;
            let model = load_model(&a.model)?;
            let parts = a.partition.parts(&split);
            let acc = model.sequence_accuracy(&parts, &ds)?;
            let partition = format!("{:?}", a.partition).to_lowercase();
            Ok(format!(
                "command=eval partition={partition} n={} accuracy={acc}",
                parts.len()
            ))
        }
        Command::Experiment => {
            let ds = load_dataset(&ctx.cfg.paths.dataset)?;
            fs::create_dir_all(&ctx.out)?;
            fs::write(ctx.out.join("config.toml"), ctx.cfg.to_toml())?;
            let outcome = run_experiment(&ctx.cfg, &ds, &ctx.out, ctx.jobs)?;
            Ok(format!(
                "command=experiment rows={} expected_rows={} failed_cells={} guarded_sets={} results={}",
                outcome.results.len(),
                ctx.cfg.experiment.expected_rows(),
                outcome.failed_cells,
                outcome.guarded_sets,
                ctx.out.join("results.csv").display()
            ))
        }
        Command::Summarize(a) => {
            let results = read_results_csv(&a.results)?;
            let rows = summarize(&results);
            let path = ctx.out_file("summary.csv")?;
            write_summary_csv(&path, &rows)?;
            Ok(format!(
                "command=summarize results={} rows={} summary={}",
                results.len(),
                rows.len(),
                path.display()
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet {
            log::LevelFilter::Error
        } else {
            log::LevelFilter::Info
        })
        .parse_env("CAPP_LOG")
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(line) => {
            println!("status=ok {line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            println!("status=error");
            ExitCode::from(2)
        }
    }
}
