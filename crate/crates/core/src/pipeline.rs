//! End-to-end orchestration: ingest, filter, label mapping, seed
//! selection, domain mapping, post-processing and analysis, with a run
//! manifest recording each stage's counts.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{self, DomainClusters, EmbeddingProvider, LabelHistogram, DEFAULT_CLUSTER_THRESHOLD};
use crate::corpus::{self, Corpus, DatasetId, Stage};
use crate::domainmap::{self, DialogueRendering, FailureKind, GenerationParams, GenerationReport, LlmClient, PromptTemplates};
use crate::labelmap;
use crate::postproc::{self, PostprocReport};
use crate::seedselect::{self, FrequencyScope, SeedDataset};

/// Environment variable holding the LLM credential unless configured
/// otherwise.
pub const DEFAULT_API_KEY_ENV: &str = "GNOME_LLM_API_KEY";
pub const PARTIAL_MARKER: &str = ".partial";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    /// OpenAI-compatible chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable that holds the API key.
    pub api_key_env: String,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "meta-llama/Meta-Llama-3-70B-Instruct".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingBackend {
    #[default]
    Hashing,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub backend: EmbeddingBackend,
    /// Dimension of the hashing embedder.
    pub dimension: usize,
    /// OpenAI-compatible embeddings URL for the http backend.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            backend: EmbeddingBackend::Hashing,
            dimension: 256,
            endpoint: "http://127.0.0.1:8000/v1/embeddings".into(),
            model: "sentence-transformers/all-MiniLM-L6-v2".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed dialogues per source.
    pub k: usize,
    /// Generations per seed dialogue.
    pub n: u32,
    pub temperature: f64,
    pub max_retries: u32,
    pub request_timeout_secs: f64,
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    pub rng_seed: u64,
    pub rendering: DialogueRendering,
    pub frequency_scope: FrequencyScope,
    pub cluster_threshold: f64,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub exclude_seed_from_test: bool,
    /// Source corpora; the dataset of each comes from its header line.
    pub inputs: Vec<PathBuf>,
    /// Parent of the per-run output directories.
    pub output_dir: PathBuf,
    /// Directory with `system.txt` and `user.txt` replacing the built-in
    /// prompt.
    pub prompt_dir: Option<PathBuf>,
    pub llm: LlmSettings,
    pub embedding: EmbeddingSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 250,
            n: 10,
            temperature: 1.0,
            max_retries: 3,
            request_timeout_secs: 120.0,
            max_in_flight: 4,
            backoff_base_ms: 500,
            rng_seed: 0,
            rendering: DialogueRendering::default(),
            frequency_scope: FrequencyScope::default(),
            cluster_threshold: DEFAULT_CLUSTER_THRESHOLD,
            split_ratio: 0.6,
            split_seed: 0,
            exclude_seed_from_test: true,
            inputs: Vec::new(),
            output_dir: PathBuf::from("runs"),
            prompt_dir: None,
            llm: LlmSettings::default(),
            embedding: EmbeddingSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.temperature,
            n_passes: self.n,
            max_retries: self.max_retries,
            request_timeout_secs: self.request_timeout_secs,
            max_in_flight: self.max_in_flight,
            backoff_base_ms: self.backoff_base_ms,
            rng_seed: Some(self.rng_seed),
            rendering: self.rendering,
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn templates(&self) -> io::Result<PromptTemplates> {
        match &self.prompt_dir {
            Some(dir) => PromptTemplates::load(&dir.join("system.txt"), &dir.join("user.txt")),
            None => Ok(PromptTemplates::default()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(format!("split_ratio {} is outside (0, 1)", self.split_ratio));
        }
        if !(self.cluster_threshold > 0.0 && self.cluster_threshold < 1.0) {
            return Err(format!("cluster_threshold {} is outside (0, 1)", self.cluster_threshold));
        }
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature {} is negative", self.temperature));
        }
        if !(self.request_timeout_secs > 0.0) {
            return Err("request_timeout_secs must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineStage {
    Ingest,
    Filter,
    LabelMap,
    SeedSelect,
    DomainMap,
    PostProcess,
    Analyze,
}

impl PipelineStage {
    pub fn as_str(self) -> &'static str {
        match self {
            PipelineStage::Ingest => "ingest",
            PipelineStage::Filter => "filter",
            PipelineStage::LabelMap => "label-map",
            PipelineStage::SeedSelect => "seed-select",
            PipelineStage::DomainMap => "domain-map",
            PipelineStage::PostProcess => "post-process",
            PipelineStage::Analyze => "analyze",
        }
    }
}

impl fmt::Display for PipelineStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: PipelineStage, message: String },
}

impl PipelineError {
    pub fn stage(&self) -> Option<PipelineStage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::Config(_) => None,
        }
    }
}

fn fail<E: fmt::Display>(stage: PipelineStage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounts {
    pub dialogues: usize,
    pub utterances: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub input: usize,
    pub removed: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapCounts {
    pub input: usize,
    pub dropped_dialogues: usize,
    pub kept: usize,
    pub excluded_utterances: usize,
    pub unmapped_tokens: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCounts {
    pub k: usize,
    pub per_source: BTreeMap<DatasetId, usize>,
    pub total: usize,
    pub shortfalls: Vec<(DatasetId, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub original_histograms: BTreeMap<DatasetId, LabelHistogram>,
    pub seed_histogram: LabelHistogram,
    pub gnome_histogram: LabelHistogram,
    pub distinct_titles: usize,
    pub domain_clusters: usize,
    pub cluster_threshold: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub completed: Vec<PipelineStage>,
    pub ingest: BTreeMap<DatasetId, IngestCounts>,
    pub filter: BTreeMap<DatasetId, FilterCounts>,
    pub label_map: BTreeMap<DatasetId, LabelMapCounts>,
    pub seed: Option<SeedCounts>,
    pub generation: Option<GenerationReport>,
    pub postprocess: Option<PostprocReport>,
    pub analysis: Option<AnalysisSummary>,
}

impl RunManifest {
    /// Count identities between consecutive stages; empty when all hold.
    pub fn conservation_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (d, i) in &self.ingest {
            if let Some(f) = self.filter.get(d) {
                if f.input != i.dialogues || f.input != f.removed + f.kept {
                    out.push(format!("filter counts for {d} do not add up"));
                }
                if let Some(l) = self.label_map.get(d) {
                    if l.input != f.kept || l.input != l.dropped_dialogues + l.kept {
                        out.push(format!("label-map counts for {d} do not add up"));
                    }
                }
            }
        }
        if let Some(s) = &self.seed {
            if s.per_source.values().sum::<usize>() != s.total {
                out.push("seed total differs from the per-source sum".into());
            }
            for (d, n) in &s.per_source {
                if let Some(l) = self.label_map.get(d) {
                    if *n != s.k.min(l.kept) {
                        out.push(format!("seed size for {d} is not min(k, available)"));
                    }
                }
            }
            if let Some(g) = &self.generation {
                if g.seed_dialogues != s.total as u64 || g.total.attempts != s.total as u64 * u64::from(g.n_passes) {
                    out.push("generation attempts differ from seed size times n".into());
                }
            }
        }
        if let Some(g) = &self.generation {
            if !g.is_conserved() {
                out.push("generation tallies do not add up".into());
            }
            if let Some(p) = &self.postprocess {
                if p.total.input != g.total.successes {
                    out.push("post-process input differs from generation successes".into());
                }
                if !p.is_conserved() {
                    out.push("post-process counts do not add up".into());
                }
            }
        }
        out
    }

    pub fn is_conserved(&self) -> bool {
        self.conservation_violations().is_empty()
    }
}

/// Bundled 12-dialogue corpus, three per source, with raw labels.
pub const MINI_CORPUS: [(DatasetId, &str, &str); 4] = [
    (DatasetId::CaSiNo, "casino.dlg.jsonl", include_str!("../assets/mini/casino.dlg.jsonl")),
    (DatasetId::CraigslistBargain, "craigslist.dlg.jsonl", include_str!("../assets/mini/craigslist.dlg.jsonl")),
    (DatasetId::JobInterview, "jobinterview.dlg.jsonl", include_str!("../assets/mini/jobinterview.dlg.jsonl")),
    (DatasetId::PersuasionForGood, "persuasion.dlg.jsonl", include_str!("../assets/mini/persuasion.dlg.jsonl")),
];

pub fn mini_corpus() -> BTreeMap<DatasetId, Corpus> {
    MINI_CORPUS
        .iter()
        .map(|(d, _, text)| (*d, corpus::parse_corpus(text.as_bytes(), *d).expect("bundled corpus is valid")))
        .collect()
}

/// Writes the bundled corpus files into `dir` and returns their paths.
pub fn write_mini_corpus(dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    MINI_CORPUS
        .iter()
        .map(|(_, name, text)| {
            let path = dir.join(name);
            fs::write(&path, text)?;
            Ok(path)
        })
        .collect()
}

/// Reads each input, taking its dataset from the header line.
pub fn load_inputs(paths: &[PathBuf]) -> Result<BTreeMap<DatasetId, Corpus>, PipelineError> {
    let err = fail(PipelineStage::Ingest);
    if paths.is_empty() {
        return Err(err("no input corpora configured".to_string()));
    }
    let mut out = BTreeMap::new();
    for path in paths {
        let dataset = corpus::peek_dataset(path)
            .map_err(|e| err(format!("{}: {e}", path.display())))?
            .ok_or_else(|| err(format!("{}: missing header line naming the dataset", path.display())))?;
        if !dataset.is_source() {
            return Err(err(format!("{}: {dataset} is not a source dataset", path.display())));
        }
        let c = corpus::read_corpus_file(path, dataset).map_err(|e| err(format!("{}: {e}", path.display())))?;
        if out.insert(dataset, c).is_some() {
            return Err(err(format!("{dataset} given more than once")));
        }
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Per-stage outputs in memory, for callers that want more than the files.
#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub manifest: RunManifest,
    pub mapped: BTreeMap<DatasetId, Corpus>,
    pub seed: SeedDataset,
    pub generated: Corpus,
    pub gnome: Corpus,
    pub clusters: DomainClusters,
}

struct Run<'a> {
    out_dir: &'a Path,
    manifest: RunManifest,
}

impl Run<'_> {
    fn io(&self, stage: PipelineStage) -> impl Fn(io::Error) -> PipelineError {
        fail(stage)
    }

    fn finish_stage(&mut self, stage: PipelineStage) {
        log::info!("stage {stage} done");
        self.manifest.completed.push(stage);
    }
}

/// Loads the configured inputs and runs every stage into `out_dir`.
pub fn run_pipeline(
    config: &PipelineConfig,
    client: &dyn LlmClient,
    embedder: &dyn EmbeddingProvider,
    out_dir: &Path,
) -> Result<RunManifest, PipelineError> {
    let inputs = match load_inputs(&config.inputs) {
        Ok(c) => c,
        Err(e) => {
            let _ = fs::create_dir_all(out_dir);
            mark_partial(out_dir, &RunManifest { config_hash: config.hash(), ..Default::default() }, &e);
            return Err(e);
        }
    };
    run_pipeline_on(config, inputs, client, embedder, out_dir).map(|o| o.manifest)
}

fn mark_partial(out_dir: &Path, manifest: &RunManifest, e: &PipelineError) {
    let _ = fs::write(out_dir.join(PARTIAL_MARKER), format!("{e}\n"));
    let _ = write_json(&out_dir.join(MANIFEST_FILE), manifest);
}

/// Runs every stage on already-loaded raw corpora. On failure the outputs
/// written so far stay in `out_dir` next to a `.partial` marker.
pub fn run_pipeline_on(
    config: &PipelineConfig,
    raw: BTreeMap<DatasetId, Corpus>,
    client: &dyn LlmClient,
    embedder: &dyn EmbeddingProvider,
    out_dir: &Path,
) -> Result<PipelineOutputs, PipelineError> {
    config.validate().map_err(PipelineError::Config)?;
    fs::create_dir_all(out_dir).map_err(fail(PipelineStage::Ingest))?;
    let _ = fs::remove_file(out_dir.join(PARTIAL_MARKER));
    let mut run = Run { out_dir, manifest: RunManifest { config_hash: config.hash(), ..Default::default() } };
    match stages(config, raw, client, embedder, &mut run) {
        Ok(mut outputs) => {
            write_json(&out_dir.join(MANIFEST_FILE), &run.manifest).map_err(fail(PipelineStage::Analyze))?;
            outputs.manifest = run.manifest;
            Ok(outputs)
        }
        Err(e) => {
            log::error!("{e}");
            mark_partial(out_dir, &run.manifest, &e);
            Err(e)
        }
    }
}

fn stages(
    config: &PipelineConfig,
    raw: BTreeMap<DatasetId, Corpus>,
    client: &dyn LlmClient,
    embedder: &dyn EmbeddingProvider,
    run: &mut Run<'_>,
) -> Result<PipelineOutputs, PipelineError> {
    use PipelineStage::*;
    let dir = run.out_dir.to_path_buf();

    for (d, c) in &raw {
        if c.stage != Stage::Raw {
            return Err(fail(Ingest)(format!("{d} corpus is at stage {}, expected raw", c.stage)));
        }
        run.manifest.ingest.insert(*d, IngestCounts { dialogues: c.len(), utterances: c.utterance_count() });
    }
    run.finish_stage(Ingest);

    let mut filtered = BTreeMap::new();
    for (d, c) in raw {
        let input = c.len();
        let (kept, removed) = corpus::filter_incomplete(c);
        run.manifest.filter.insert(d, FilterCounts { input, removed, kept: kept.len() });
        filtered.insert(d, kept);
    }
    run.finish_stage(Filter);

    let mapped_dir = dir.join("mapped");
    fs::create_dir_all(&mapped_dir).map_err(run.io(LabelMap))?;
    let mut mapped = BTreeMap::new();
    let mut reports = BTreeMap::new();
    for (d, c) in filtered {
        let input = c.len();
        let (m, report) = labelmap::map_corpus(c).map_err(fail(LabelMap))?;
        run.manifest.label_map.insert(
            d,
            LabelMapCounts {
                input,
                dropped_dialogues: report.dropped_dialogues.len(),
                kept: m.len(),
                excluded_utterances: report.excluded_utterances.len(),
                unmapped_tokens: report.unmapped.clone(),
            },
        );
        corpus::write_corpus_file(&m, &mapped_dir.join(format!("{d}.{}", corpus::FILE_EXTENSION))).map_err(fail(LabelMap))?;
        reports.insert(d, report);
        mapped.insert(d, m);
    }
    write_json(&dir.join("labelmap_report.json"), &reports).map_err(run.io(LabelMap))?;
    run.finish_stage(LabelMap);

    let seed = seedselect::select_seed(&mapped, config.k, config.frequency_scope).map_err(fail(SeedSelect))?;
    let seed_dir = dir.join("seed");
    fs::create_dir_all(&seed_dir).map_err(run.io(SeedSelect))?;
    for c in seed.to_corpora() {
        corpus::write_corpus_file(&c, &seed_dir.join(format!("{}.{}", c.dataset, corpus::FILE_EXTENSION)))
            .map_err(fail(SeedSelect))?;
    }
    let f = fs::File::create(dir.join("seed_manifest.tsv")).map_err(run.io(SeedSelect))?;
    seed.write_manifest(BufWriter::new(f)).map_err(run.io(SeedSelect))?;
    run.manifest.seed = Some(SeedCounts {
        k: config.k,
        per_source: seed.per_source.iter().map(|(d, v)| (*d, v.len())).collect(),
        total: seed.len(),
        shortfalls: seed.shortfalls.clone(),
    });
    run.finish_stage(SeedSelect);

    let templates = config.templates().map_err(fail(DomainMap))?;
    let (generated, report) = domainmap::run_domain_mapping(client, &seed, &config.generation_params(), &templates);
    write_json(&dir.join("generation_report.json"), &report).map_err(run.io(DomainMap))?;
    corpus::write_corpus_file(&generated, &dir.join(format!("generated.{}", corpus::FILE_EXTENSION)))
        .map_err(fail(DomainMap))?;
    let client_failures = report.total.failures_of(FailureKind::ClientError);
    let all_client_failures = report.total.attempts > 0 && client_failures == report.total.attempts;
    run.manifest.generation = Some(report.clone());
    if all_client_failures {
        return Err(fail(DomainMap)(format!(
            "all {} generation attempts failed with client errors after {} retries",
            report.total.attempts, report.retries
        )));
    }
    run.finish_stage(DomainMap);

    let (gnome, pp) = postproc::postprocess(generated.clone(), &seed).map_err(fail(PostProcess))?;
    corpus::write_corpus_file(&gnome, &dir.join(format!("gnome.{}", corpus::FILE_EXTENSION))).map_err(fail(PostProcess))?;
    fs::write(dir.join("postproc_report.tsv"), pp.to_table()).map_err(run.io(PostProcess))?;
    run.manifest.postprocess = Some(pp);
    run.finish_stage(PostProcess);

    let mut original_histograms = BTreeMap::new();
    for (d, c) in &mapped {
        original_histograms.insert(*d, analysis::label_histogram(c).map_err(fail(Analyze))?);
    }
    let seed_histogram = seed
        .to_corpora()
        .iter()
        .map(analysis::label_histogram)
        .sum::<Result<LabelHistogram, _>>()
        .map_err(fail(Analyze))?;
    let gnome_histogram = analysis::label_histogram(&gnome).map_err(fail(Analyze))?;
    let titles = gnome.dialogues.iter().filter_map(|d| d.provenance.as_ref()).map(|p| p.domain_title.as_str());
    let clusters = analysis::cluster_domain_titles(titles, embedder, config.cluster_threshold).map_err(fail(Analyze))?;
    let mut tsv = String::from("title\tcluster\n");
    for (t, c) in clusters.titles.iter().zip(&clusters.assignment.cluster_of) {
        tsv.push_str(&format!("{t}\t{c}\n"));
    }
    fs::write(dir.join("domain_clusters.tsv"), tsv).map_err(run.io(Analyze))?;
    let summary = AnalysisSummary {
        original_histograms,
        seed_histogram,
        gnome_histogram,
        distinct_titles: clusters.titles.len(),
        domain_clusters: clusters.distinct_domains(),
        cluster_threshold: config.cluster_threshold,
    };
    write_json(&dir.join("analysis.json"), &summary).map_err(run.io(Analyze))?;
    run.manifest.analysis = Some(summary);
    run.finish_stage(Analyze);

    Ok(PipelineOutputs { manifest: RunManifest::default(), mapped, seed, generated, gnome, clusters })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::HashingEmbedder;
    use crate::domainmap::{Fault, FaultPlan, MockLlm};

    fn config(k: usize, n: u32) -> PipelineConfig {
        PipelineConfig { k, n, backoff_base_ms: 0, ..Default::default() }
    }

    #[test]
    fn mini_corpus_shape() {
        let c = mini_corpus();
        assert_eq!(c.len(), 4);
        assert!(c.values().all(|c| c.len() == 3));
        for c in c.values() {
            let (m, report) = labelmap::map_corpus(c.clone()).unwrap();
            assert!(report.unmapped.is_empty(), "{:?}", report.unmapped);
            assert_eq!(m.len(), 3);
        }
    }

    #[test]
    fn mock_run_counts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline_on(&config(3, 4), mini_corpus(), &MockLlm::new(), &HashingEmbedder::default(), dir.path()).unwrap();
        let m = &out.manifest;
        assert_eq!(m.generation.as_ref().unwrap().total.attempts, 48);
        assert!(m.is_conserved(), "{:?}", m.conservation_violations());
        assert_eq!(m.completed.len(), 7);
        assert!(!dir.path().join(PARTIAL_MARKER).exists());
        for name in ["manifest.json", "gnome.dlg.jsonl", "seed_manifest.tsv", "analysis.json", "mapped/CaSiNo.dlg.jsonl"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
    }

    #[test]
    fn k_zero_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline_on(&config(0, 4), mini_corpus(), &MockLlm::new(), &HashingEmbedder::default(), dir.path()).unwrap();
        let g = out.manifest.generation.as_ref().unwrap();
        assert_eq!(g.total.attempts, 0);
        assert!(out.gnome.is_empty());
        assert_eq!(out.manifest.analysis.as_ref().unwrap().domain_clusters, 0);
    }

    #[test]
    fn reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let cfg = config(2, 3);
        run_pipeline_on(&cfg, mini_corpus(), &MockLlm::new(), &HashingEmbedder::default(), a.path()).unwrap();
        run_pipeline_on(&cfg, mini_corpus(), &MockLlm::new(), &HashingEmbedder::default(), b.path()).unwrap();
        for name in ["manifest.json", "gnome.dlg.jsonl", "generated.dlg.jsonl", "domain_clusters.tsv"] {
            assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
        }
    }

    #[test]
    fn transport_failure_aborts_at_domain_map() {
        let dir = tempfile::tempdir().unwrap();
        let client = MockLlm::with_faults(FaultPlan::Always(Fault::Transport));
        let err = run_pipeline_on(&config(1, 2), mini_corpus(), &client, &HashingEmbedder::default(), dir.path()).unwrap_err();
        assert_eq!(err.stage(), Some(PipelineStage::DomainMap));
        assert!(dir.path().join(PARTIAL_MARKER).exists());
        let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(manifest.completed.last(), Some(&PipelineStage::SeedSelect));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { k: 3, ..Default::default() };
        assert_eq!(a.hash(), PipelineConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn missing_inputs_fail_at_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_pipeline(&PipelineConfig::default(), &MockLlm::new(), &HashingEmbedder::default(), dir.path()).unwrap_err();
        assert_eq!(err.stage(), Some(PipelineStage::Ingest));
        assert!(dir.path().join(PARTIAL_MARKER).exists());
    }

    #[test]
    fn written_inputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let paths = write_mini_corpus(&dir.path().join("in")).unwrap();
        let loaded = load_inputs(&paths).unwrap();
        assert_eq!(loaded, mini_corpus());
        let dup = vec![paths[0].clone(), paths[0].clone()];
        assert!(load_inputs(&dup).is_err());
    }
}
