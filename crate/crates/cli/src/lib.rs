//! Command-line driver for the gnome pipeline and its annotation service.

pub mod config;
pub mod llm;
pub mod serve;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use gnome_core::analysis::{self, EmbeddingProvider, HashingEmbedder};
use gnome_core::baseline::BaselineConfig;
use gnome_core::corpus::{self, FILE_EXTENSION};
use gnome_core::domainmap::{self, FailureKind, LlmClient, MockLlm};
use gnome_core::evalharness::{self, ConstantModel, GoldOracle, InDomainMode, MatrixConfig, StrategyModel};
use gnome_core::humaneval::{self, AgreementDefinition, AlphaMetric, AnnotationStore, RatingLog};
use gnome_core::pipeline::{self, EmbeddingBackend, PipelineConfig};
use gnome_core::seedselect::{self, SeedDataset};
use gnome_core::{labelmap, postproc, Corpus, DatasetId, LabelSet};
use serde::Serialize;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_STAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "gnome", version, about = "Open-domain negotiation dialogue synthesis")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set k=50` or `--set llm.model=name`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory for this invocation. Defaults to
    /// `<output_dir>/<timestamp>-<config hash>`.
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw corpora and drop incomplete dialogues.
    Ingest {
        /// Raw corpora; defaults to the configured inputs.
        inputs: Vec<PathBuf>,
    },
    /// Map source labels onto the five strategy labels.
    MapLabels {
        inputs: Vec<PathBuf>,
        /// Print the mapping tables and exit.
        #[arg(long)]
        print_tables: bool,
    },
    /// Select the top-k seed dialogues per source.
    BuildSeed {
        /// Label-mapped corpora.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Domain-map the seed dialogues with the configured LLM.
    Generate {
        /// Directory holding `seed/` and `seed_manifest.tsv`.
        #[arg(long)]
        seed_dir: PathBuf,
        /// Use the built-in offline paraphraser instead of the endpoint.
        #[arg(long)]
        mock: bool,
    },
    /// Drop short, duplicate and leaked generations.
    Postprocess {
        #[arg(long)]
        seed_dir: PathBuf,
        #[arg(long)]
        generated: PathBuf,
    },
    /// Label histograms and domain clustering.
    Analyze {
        #[arg(long)]
        gnome: PathBuf,
        /// Label-mapped source corpora to histogram alongside.
        #[arg(long, num_args = 1..)]
        mapped: Vec<PathBuf>,
    },
    /// Train the bag-of-words baseline on label-mapped corpora.
    TrainBaseline {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Also write predictions for this corpus.
        #[arg(long)]
        predict: Option<PathBuf>,
        #[arg(long, default_value_t = 300)]
        iterations: usize,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
    },
    /// Run the six-regime experiment matrix.
    Evaluate {
        /// Label-mapped source corpora.
        #[arg(long, required = true, num_args = 1..)]
        mapped: Vec<PathBuf>,
        /// Post-processed synthetic corpus.
        #[arg(long)]
        gnome: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelKind::Baseline)]
        model: ModelKind,
        /// Evaluate in-domain regimes per source instead of pooled.
        #[arg(long)]
        per_source: bool,
    },
    /// Score a prediction file against a gold corpus.
    ScorePredictions {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Sample original/generated pairs for human rating.
    SamplePairs {
        #[arg(long)]
        seed_dir: PathBuf,
        #[arg(long)]
        gnome: PathBuf,
        #[arg(long, default_value_t = 100)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Serve the annotation API and optional static UI.
    AnnotateServe {
        #[arg(long)]
        pairs: PathBuf,
        /// Append-only rating log.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MetricArg::Interval)]
        metric: MetricArg,
        #[arg(long, value_enum, default_value_t = AgreementArg::Exact)]
        agreement: AgreementArg,
    },
    /// Agreement statistics for a rating log.
    Stats {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Interval)]
        metric: MetricArg,
        #[arg(long, value_enum, default_value_t = AgreementArg::Exact)]
        agreement: AgreementArg,
        #[arg(long)]
        json: bool,
    },
    /// Every pipeline stage in order.
    RunAll {
        /// Run on the bundled 12-dialogue corpus.
        #[arg(long)]
        mini: bool,
        #[arg(long)]
        mock: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Baseline,
    /// Predicts the gold labels; checks the harness wiring.
    Oracle,
    /// Predicts Non-Strategic everywhere.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Interval,
    Ordinal,
}

impl From<MetricArg> for AlphaMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Interval => AlphaMetric::Interval,
            MetricArg::Ordinal => AlphaMetric::Ordinal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgreementArg {
    Exact,
    Pairwise,
    WithinOne,
}

impl From<AgreementArg> for AgreementDefinition {
    fn from(a: AgreementArg) -> Self {
        match a {
            AgreementArg::Exact => AgreementDefinition::Exact,
            AgreementArg::Pairwise => AgreementDefinition::Pairwise,
            AgreementArg::WithinOne => AgreementDefinition::WithinOne,
        }
    }
}

/// An error tagged with the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Stage(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Stage(_) => EXIT_STAGE,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Stage(e)
    }
}

trait UsageExt<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T> UsageExt<T> for anyhow::Result<T> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(Failure::Usage)
    }
}

/// Parses `args` and runs the command.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Stage(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

struct Ctx {
    config: PipelineConfig,
    run_dir: Option<PathBuf>,
}

impl Ctx {
    /// Creates the run directory on first use and returns it.
    fn out_dir(&mut self) -> anyhow::Result<PathBuf> {
        let dir = self.run_dir.get_or_insert_with(|| config::run_dir_name(&self.config)).clone();
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    let config = config::load_config(cli.config.as_deref(), &cli.overrides).usage()?;
    let mut ctx = Ctx { config, run_dir: cli.run_dir };
    match cli.command {
        Command::Ingest { inputs } => ingest(&mut ctx, inputs),
        Command::MapLabels { inputs, print_tables } => map_labels(&mut ctx, inputs, print_tables),
        Command::BuildSeed { inputs } => build_seed(&mut ctx, &inputs),
        Command::Generate { seed_dir, mock } => generate(&mut ctx, &seed_dir, mock),
        Command::Postprocess { seed_dir, generated } => postprocess(&mut ctx, &seed_dir, &generated),
        Command::Analyze { gnome, mapped } => analyze(&mut ctx, &gnome, &mapped),
        Command::TrainBaseline { inputs, predict, iterations, learning_rate } => {
            train_baseline(&mut ctx, &inputs, predict.as_deref(), iterations, learning_rate)
        }
        Command::Evaluate { mapped, gnome, model, per_source } => evaluate(&mut ctx, &mapped, &gnome, model, per_source),
        Command::ScorePredictions { gold, predictions } => score_predictions(&gold, &predictions),
        Command::SamplePairs { seed_dir, gnome, m, rng_seed } => sample_pairs(&mut ctx, &seed_dir, &gnome, m, rng_seed),
        Command::AnnotateServe { pairs, log, addr, ui_dir, metric, agreement } => {
            annotate_serve(&pairs, &log, addr, ui_dir, metric.into(), agreement.into())
        }
        Command::Stats { log, metric, agreement, json } => stats(&log, metric.into(), agreement.into(), json),
        Command::RunAll { mini, mock } => run_all(&mut ctx, mini, mock),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn corpus_path(dir: &Path, name: impl std::fmt::Display) -> PathBuf {
    dir.join(format!("{name}.{FILE_EXTENSION}"))
}

fn load_sources(paths: &[PathBuf]) -> anyhow::Result<BTreeMap<DatasetId, Corpus>> {
    pipeline::load_inputs(paths).map_err(|e| anyhow!(e))
}

fn read_corpus(path: &Path, dataset: DatasetId) -> anyhow::Result<Corpus> {
    corpus::read_corpus_file(path, dataset).with_context(|| format!("reading {}", path.display()))
}

fn write_corpus(c: &Corpus, path: &Path) -> anyhow::Result<()> {
    corpus::write_corpus_file(c, path).with_context(|| format!("writing {}", path.display()))
}

fn read_seed(dir: &Path, k: usize) -> anyhow::Result<SeedDataset> {
    let mut corpora = Vec::new();
    let seed_dir = dir.join("seed");
    for entry in fs::read_dir(&seed_dir).with_context(|| format!("reading {}", seed_dir.display()))? {
        let path = entry?.path();
        if path.to_string_lossy().ends_with(FILE_EXTENSION) {
            let dataset = corpus::peek_dataset(&path)?.ok_or_else(|| anyhow!("{}: missing header", path.display()))?;
            corpora.push(read_corpus(&path, dataset)?);
        }
    }
    let manifest = dir.join("seed_manifest.tsv");
    let f = fs::File::open(&manifest).with_context(|| format!("opening {}", manifest.display()))?;
    Ok(SeedDataset::from_manifest(k, BufReader::new(f), &corpora)?)
}

fn client_for(config: &PipelineConfig, mock: bool) -> anyhow::Result<Box<dyn LlmClient>> {
    if mock {
        Ok(Box::new(MockLlm::new().with_templates(config.templates()?)))
    } else {
        Ok(Box::new(llm::HttpLlmClient::new(&config.llm)?))
    }
}

fn embedder_for(config: &PipelineConfig) -> anyhow::Result<Box<dyn EmbeddingProvider>> {
    Ok(match config.embedding.backend {
        EmbeddingBackend::Hashing => Box::new(HashingEmbedder { dimension: config.embedding.dimension }),
        EmbeddingBackend::Http => Box::new(llm::HttpEmbedder::new(&config.embedding)?),
    })
}

fn default_inputs(ctx: &Ctx, inputs: Vec<PathBuf>) -> Result<Vec<PathBuf>, Failure> {
    if !inputs.is_empty() {
        return Ok(inputs);
    }
    if ctx.config.inputs.is_empty() {
        return Err(Failure::Usage(anyhow!("no inputs given and none configured")));
    }
    Ok(ctx.config.inputs.clone())
}

fn ingest(ctx: &mut Ctx, inputs: Vec<PathBuf>) -> Result<(), Failure> {
    let inputs = default_inputs(ctx, inputs)?;
    let raw = load_sources(&inputs)?;
    let dir = ctx.out_dir()?.join("filtered");
    fs::create_dir_all(&dir).context("creating filtered/")?;
    let mut report = BTreeMap::new();
    println!("dataset\tinput\tremoved\tkept");
    for (d, c) in raw {
        let input = c.len();
        let (kept, removed) = corpus::filter_incomplete(c);
        println!("{d}\t{input}\t{removed}\t{}", kept.len());
        write_corpus(&kept, &corpus_path(&dir, d))?;
        report.insert(d, pipeline::FilterCounts { input, removed, kept: kept.len() });
    }
    write_json(&dir.join("filter_report.json"), &report)?;
    Ok(())
}

fn map_labels(ctx: &mut Ctx, inputs: Vec<PathBuf>, print_tables: bool) -> Result<(), Failure> {
    if print_tables {
        labelmap::export_tables(io::stdout().lock()).context("writing tables")?;
        return Ok(());
    }
    let inputs = default_inputs(ctx, inputs)?;
    let raw = load_sources(&inputs)?;
    let dir = ctx.out_dir()?.join("mapped");
    fs::create_dir_all(&dir).context("creating mapped/")?;
    let mut reports = BTreeMap::new();
    println!("dataset\tinput\tkept\texcluded_utterances\tunmapped_tokens");
    for (d, c) in raw {
        let input = c.len();
        let (m, report) = labelmap::map_corpus(c).with_context(|| format!("mapping {d}"))?;
        println!("{d}\t{input}\t{}\t{}\t{}", m.len(), report.excluded_utterances.len(), report.unmapped.len());
        write_corpus(&m, &corpus_path(&dir, d))?;
        reports.insert(d, report);
    }
    write_json(&dir.join("labelmap_report.json"), &reports)?;
    Ok(())
}

fn build_seed(ctx: &mut Ctx, inputs: &[PathBuf]) -> Result<(), Failure> {
    let mapped = load_sources(inputs)?;
    let seed = seedselect::select_seed(&mapped, ctx.config.k, ctx.config.frequency_scope).context("selecting seed")?;
    let dir = ctx.out_dir()?;
    let seed_dir = dir.join("seed");
    fs::create_dir_all(&seed_dir).context("creating seed/")?;
    for c in seed.to_corpora() {
        write_corpus(&c, &corpus_path(&seed_dir, c.dataset))?;
    }
    let f = fs::File::create(dir.join("seed_manifest.tsv")).context("creating seed_manifest.tsv")?;
    seed.write_manifest(BufWriter::new(f)).context("writing seed_manifest.tsv")?;
    for (d, v) in &seed.per_source {
        println!("{d}\t{} seed dialogues", v.len());
    }
    for (d, available) in &seed.shortfalls {
        eprintln!("warning: {d} has only {available} dialogues for k={}", ctx.config.k);
    }
    println!("seed written to {}", dir.display());
    Ok(())
}

fn generate(ctx: &mut Ctx, seed_dir: &Path, mock: bool) -> Result<(), Failure> {
    let seed = read_seed(seed_dir, ctx.config.k)?;
    let client = client_for(&ctx.config, mock)?;
    let templates = ctx.config.templates().context("loading prompt templates")?;
    let (generated, report) = domainmap::run_domain_mapping(&client, &seed, &ctx.config.generation_params(), &templates);
    let dir = ctx.out_dir()?;
    write_json(&dir.join("generation_report.json"), &report)?;
    write_corpus(&generated, &corpus_path(&dir, "generated"))?;
    let t = &report.total;
    println!("attempts {}, succeeded {}, failed {}", t.attempts, t.successes, t.failed());
    if t.attempts > 0 && t.failures_of(FailureKind::ClientError) == t.attempts {
        return Err(Failure::Stage(anyhow!("domain-map: every generation attempt failed with a client error")));
    }
    Ok(())
}

fn postprocess(ctx: &mut Ctx, seed_dir: &Path, generated: &Path) -> Result<(), Failure> {
    let seed = read_seed(seed_dir, ctx.config.k)?;
    let generated = read_corpus(generated, DatasetId::Gnome)?;
    let (gnome, report) = postproc::postprocess(generated, &seed).context("post-processing")?;
    let dir = ctx.out_dir()?;
    write_corpus(&gnome, &corpus_path(&dir, "gnome"))?;
    let table = report.to_table();
    fs::write(dir.join("postproc_report.tsv"), &table).context("writing postproc_report.tsv")?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput {
    histograms: BTreeMap<DatasetId, analysis::LabelHistogram>,
    distinct_titles: usize,
    domain_clusters: usize,
    cluster_threshold: f64,
}

fn analyze(ctx: &mut Ctx, gnome_path: &Path, mapped: &[PathBuf]) -> Result<(), Failure> {
    let gnome = read_corpus(gnome_path, DatasetId::Gnome)?;
    let mut histograms = BTreeMap::new();
    if !mapped.is_empty() {
        for (d, c) in load_sources(mapped)? {
            histograms.insert(d, analysis::label_histogram(&c).with_context(|| format!("histogram of {d}"))?);
        }
    }
    histograms.insert(DatasetId::Gnome, analysis::label_histogram(&gnome).context("histogram of gnome")?);
    let embedder = embedder_for(&ctx.config)?;
    let titles = gnome.dialogues.iter().filter_map(|d| d.provenance.as_ref()).map(|p| p.domain_title.as_str());
    let clusters = analysis::cluster_domain_titles(titles, embedder.as_ref(), ctx.config.cluster_threshold)
        .context("clustering domain titles")?;
    let dir = ctx.out_dir()?;
    let mut tsv = String::from("title\tcluster\n");
    for (t, c) in clusters.titles.iter().zip(&clusters.assignment.cluster_of) {
        tsv.push_str(&format!("{t}\t{c}\n"));
    }
    fs::write(dir.join("domain_clusters.tsv"), tsv).context("writing domain_clusters.tsv")?;
    let out = AnalyzeOutput {
        histograms,
        distinct_titles: clusters.titles.len(),
        domain_clusters: clusters.distinct_domains(),
        cluster_threshold: ctx.config.cluster_threshold,
    };
    write_json(&dir.join("analysis.json"), &out)?;
    println!("{}", serde_json::to_string_pretty(&out).context("serializing analysis")?);
    Ok(())
}

fn all_dialogues(corpora: &BTreeMap<DatasetId, Corpus>) -> Vec<&gnome_core::Dialogue> {
    corpora.values().flat_map(|c| c.dialogues.iter()).collect()
}

fn train_baseline(
    ctx: &mut Ctx,
    inputs: &[PathBuf],
    predict: Option<&Path>,
    iterations: usize,
    learning_rate: f64,
) -> Result<(), Failure> {
    let corpora = load_sources(inputs)?;
    let mut cfg = BaselineConfig::default();
    cfg.train.iterations = iterations;
    cfg.train.learning_rate = learning_rate;
    let (model, trace) = cfg.fit_dialogues(&all_dialogues(&corpora)).context("training baseline")?;
    let dir = ctx.out_dir()?;
    let path = dir.join("baseline_model.json");
    let f = fs::File::create(&path).context("creating baseline_model.json")?;
    model.save(BufWriter::new(f)).context("saving model")?;
    write_json(&dir.join("loss_trace.json"), &trace)?;
    println!("vocabulary {}, final loss {:.6}", model.vocabulary.len(), trace.last().copied().unwrap_or(f64::NAN));
    if let Some(p) = predict {
        let dataset = corpus::peek_dataset(p).context("reading header")?.ok_or_else(|| anyhow!("{}: missing header", p.display()))?;
        let target = read_corpus(p, dataset)?;
        let f = fs::File::create(dir.join("predictions.tsv")).context("creating predictions.tsv")?;
        let mut w = BufWriter::new(f);
        evalharness::write_predictions(&target.dialogues, &model, &mut w).context("writing predictions")?;
        w.flush().context("writing predictions")?;
    }
    println!("model written to {}", path.display());
    Ok(())
}

fn evaluate(ctx: &mut Ctx, mapped: &[PathBuf], gnome: &Path, kind: ModelKind, per_source: bool) -> Result<(), Failure> {
    let corpora = load_sources(mapped)?;
    let gnome = read_corpus(gnome, DatasetId::Gnome)?;
    let cfg = MatrixConfig {
        split_ratio: ctx.config.split_ratio,
        split_seed: ctx.config.split_seed,
        exclude_seed_from_test: ctx.config.exclude_seed_from_test,
        in_domain: if per_source { InDomainMode::PerSource } else { InDomainMode::Pooled },
    };
    let baseline = BaselineConfig::default();
    let constant = ConstantModel(LabelSet::single(gnome_core::CanonicalLabel::NonStrategic));
    let (model, name): (&dyn StrategyModel, &str) = match kind {
        ModelKind::Baseline => (&baseline, "baseline"),
        ModelKind::Oracle => (&GoldOracle, "oracle"),
        ModelKind::Constant => (&constant, "constant"),
    };
    let result = evalharness::run_matrix(&corpora, &gnome, model, &cfg).context("running experiment matrix")?;
    let dir = ctx.out_dir()?;
    write_json(&dir.join("experiment.json"), &result)?;
    fs::write(dir.join("experiment_pairs.tsv"), result.to_pair_table()).context("writing experiment_pairs.tsv")?;
    print!("{}", result.to_table(name));
    Ok(())
}

fn score_predictions(gold: &Path, predictions: &Path) -> Result<(), Failure> {
    let dataset = corpus::peek_dataset(gold).context("reading header")?.ok_or_else(|| anyhow!("{}: missing header", gold.display()))?;
    let gold = read_corpus(gold, dataset)?;
    let f = fs::File::open(predictions).with_context(|| format!("opening {}", predictions.display()))?;
    let preds = evalharness::parse_predictions(BufReader::new(f)).context("parsing predictions")?;
    let scores = evalharness::score_predictions(&gold, &preds).context("scoring")?;
    print!("{}", scores.to_table());
    Ok(())
}

fn sample_pairs(ctx: &mut Ctx, seed_dir: &Path, gnome: &Path, m: usize, rng_seed: u64) -> Result<(), Failure> {
    let seed = read_seed(seed_dir, ctx.config.k)?;
    let gnome = read_corpus(gnome, DatasetId::Gnome)?;
    let pairs = humaneval::sample_pairs(&seed, &gnome, m, rng_seed).context("sampling pairs")?;
    let path = ctx.out_dir()?.join("pairs.jsonl");
    let f = fs::File::create(&path).context("creating pairs.jsonl")?;
    let mut w = BufWriter::new(f);
    humaneval::write_pairs(&pairs, &mut w).context("writing pairs")?;
    w.flush().context("writing pairs")?;
    println!("{} pairs written to {}", pairs.len(), path.display());
    Ok(())
}

fn annotate_serve(
    pairs: &Path,
    log: &Path,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
    metric: AlphaMetric,
    agreement: AgreementDefinition,
) -> Result<(), Failure> {
    let f = fs::File::open(pairs).with_context(|| format!("opening {}", pairs.display()))?;
    let pairs = humaneval::read_pairs(BufReader::new(f)).context("reading pairs")?;
    let log = RatingLog::open(log).context("opening rating log")?;
    let mut store = AnnotationStore::new(pairs, log);
    store.metric = metric;
    store.agreement = agreement;
    if let Some(dir) = &ui_dir {
        if !dir.is_dir() {
            return Err(Failure::Usage(anyhow!("ui directory {} does not exist", dir.display())));
        }
    }
    let runtime = tokio::runtime::Runtime::new().context("starting runtime")?;
    runtime.block_on(serve::serve(Arc::new(store), ui_dir, addr)).context("serving")?;
    Ok(())
}

fn stats(log: &Path, metric: AlphaMetric, agreement: AgreementDefinition, json: bool) -> Result<(), Failure> {
    let log = RatingLog::open(log).context("opening rating log")?;
    let report = humaneval::agreement_stats(&log.snapshot(), metric, agreement).context("computing agreement")?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn run_all(ctx: &mut Ctx, mini: bool, mock: bool) -> Result<(), Failure> {
    if mini {
        let dir = ctx.config.output_dir.join("mini-inputs");
        ctx.config.inputs = pipeline::write_mini_corpus(&dir).context("writing mini corpus")?;
    } else if ctx.config.inputs.is_empty() {
        return Err(Failure::Usage(anyhow!("no inputs configured; set `inputs` or pass --mini")));
    }
    let dir = ctx.out_dir()?;
    let client = client_for(&ctx.config, mock)?;
    let embedder = embedder_for(&ctx.config)?;
    fs::write(dir.join("config.toml"), toml::to_string_pretty(&ctx.config).context("serializing config")?)
        .context("writing config.toml")?;
    let manifest = pipeline::run_pipeline(&ctx.config, client.as_ref(), embedder.as_ref(), &dir).map_err(|e| {
        let stage = e.stage().map_or("config", |s| s.as_str());
        Failure::Stage(anyhow!("stage {stage} failed: {e}"))
    })?;
    let violations = manifest.conservation_violations();
    for v in &violations {
        eprintln!("warning: {v}");
    }
    println!("run complete: {}", dir.display());
    if let (Some(g), Some(p)) = (&manifest.generation, &manifest.postprocess) {
        println!("attempts {}, generated {}, kept {}", g.total.attempts, g.total.successes, p.total.kept);
    }
    Ok(())
}
