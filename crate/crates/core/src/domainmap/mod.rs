//! LLM-driven domain mapping of seed dialogues.
//!
//! Each seed dialogue is sent whole to the generator `n_passes` times. A
//! response is accepted only if it parses into exactly as many utterances as
//! the seed; labels and speakers are then copied over position by position.

mod client;
mod mock;
mod parse;
mod prompt;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use client::{CompletionRequest, LlmClient, LlmError};
pub use mock::{Fault, FaultPlan, MockLlm};
pub use parse::{parse_generation, FailureKind, ParseFailure, ParsedGeneration, DOMAIN_HEADER, EOS};
pub use prompt::{build_prompt, render_dialogue, DialogueRendering, Prompt, PromptTemplates, DIALOGUE_PLACEHOLDER};

use crate::corpus::{Corpus, DatasetId, Dialogue, Provenance, Stage, Utterance};
use crate::seedselect::SeedDataset;

const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub n_passes: u32,
    pub max_retries: u32,
    pub request_timeout_secs: f64,
    pub max_in_flight: usize,
    /// First retry delay; doubles on each further retry.
    pub backoff_base_ms: u64,
    /// Master seed from which every per-request sampling seed is drawn.
    /// Drawn from the OS when absent.
    pub rng_seed: Option<u64>,
    pub rendering: DialogueRendering,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            n_passes: 10,
            max_retries: 3,
            request_timeout_secs: 120.0,
            max_in_flight: 4,
            backoff_base_ms: 500,
            rng_seed: None,
            rendering: DialogueRendering::Tagged,
        }
    }
}

impl GenerationParams {
    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs.max(0.0))
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << retry.min(20));
        Duration::from_millis(ms).min(MAX_BACKOFF)
    }
}

/// A generated dialogue before it joins a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappedDialogue {
    pub seed_id: String,
    pub seed_source: DatasetId,
    pub generation_index: u32,
    pub domain_title: String,
    pub utterances: Vec<Utterance>,
}

impl MappedDialogue {
    /// Corpus id of a generated dialogue.
    pub fn dialogue_id(&self) -> String {
        format!("{}:{}:g{}", self.seed_source, self.seed_id, self.generation_index)
    }

    pub fn into_dialogue(self) -> Dialogue {
        Dialogue {
            id: self.dialogue_id(),
            source: DatasetId::Gnome,
            complete: true,
            utterances: self.utterances,
            provenance: Some(Provenance {
                seed_id: self.seed_id,
                seed_source: self.seed_source,
                generation_index: self.generation_index,
                domain_title: self.domain_title,
            }),
        }
    }

    /// View of a generated corpus dialogue; `None` without provenance.
    pub fn from_dialogue(d: &Dialogue) -> Option<MappedDialogue> {
        let p = d.provenance.as_ref()?;
        Some(MappedDialogue {
            seed_id: p.seed_id.clone(),
            seed_source: p.seed_source,
            generation_index: p.generation_index,
            domain_title: p.domain_title.clone(),
            utterances: d.utterances.clone(),
        })
    }
}

/// Pairs parsed texts with the seed's speakers and labels, position by
/// position. `None` if the counts differ.
pub fn transfer_labels(
    seed: &Dialogue,
    parsed: ParsedGeneration,
    generation_index: u32,
) -> Option<MappedDialogue> {
    if parsed.utterances.len() != seed.utterances.len() {
        return None;
    }
    let utterances = seed
        .utterances
        .iter()
        .zip(parsed.utterances)
        .map(|(s, text)| Utterance { speaker: s.speaker, text, labels: s.labels.clone() })
        .collect();
    Some(MappedDialogue {
        seed_id: seed.id.clone(),
        seed_source: seed.source,
        generation_index,
        domain_title: parsed.domain_title,
        utterances,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub attempts: u64,
    pub successes: u64,
    pub failures: BTreeMap<FailureKind, u64>,
}

impl Tally {
    pub fn failed(&self) -> u64 {
        self.failures.values().sum()
    }

    pub fn failures_of(&self, kind: FailureKind) -> u64 {
        self.failures.get(&kind).copied().unwrap_or(0)
    }

    fn record(&mut self, outcome: Result<(), FailureKind>) {
        self.attempts += 1;
        match outcome {
            Ok(()) => self.successes += 1,
            Err(kind) => *self.failures.entry(kind).or_insert(0) += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed_dialogues: u64,
    pub n_passes: u32,
    pub master_seed: u64,
    /// Retries performed after transport/model errors.
    pub retries: u64,
    pub total: Tally,
    pub per_source: BTreeMap<DatasetId, Tally>,
}

impl GenerationReport {
    /// attempts = successes + failures, overall and for every source.
    pub fn is_conserved(&self) -> bool {
        let ok = |t: &Tally| t.attempts == t.successes + t.failed();
        ok(&self.total)
            && self.per_source.values().all(ok)
            && self.per_source.values().map(|t| t.attempts).sum::<u64>() == self.total.attempts
    }
}

struct Task<'a> {
    seed: &'a Dialogue,
    generation_index: u32,
    request_seed: u64,
}

type Outcome = Result<MappedDialogue, (FailureKind, String)>;

fn attempt<C: LlmClient + ?Sized>(
    client: &C,
    templates: &PromptTemplates,
    params: &GenerationParams,
    task: &Task<'_>,
    retries: &AtomicU64,
) -> Outcome {
    let prompt = templates.build(task.seed, params.rendering);
    let request = CompletionRequest {
        system: prompt.system,
        user: prompt.user,
        temperature: params.temperature,
        seed: task.request_seed,
        timeout: params.request_timeout(),
    };
    let mut retry = 0;
    let raw = loop {
        match client.complete(&request) {
            Ok(text) => break text,
            Err(e) if e.is_retryable() && retry < params.max_retries => {
                log::debug!("{}: retry {} after {e}", task.seed.id, retry + 1);
                std::thread::sleep(params.backoff(retry));
                retries.fetch_add(1, Ordering::Relaxed);
                retry += 1;
            }
            Err(e) => return Err((FailureKind::ClientError, e.to_string())),
        }
    };
    let parsed = parse_generation(&raw, task.seed.utterances.len()).map_err(|e| (e.kind(), e.to_string()))?;
    transfer_labels(task.seed, parsed, task.generation_index)
        .ok_or_else(|| (FailureKind::MisplacedEos, "utterance count changed".to_string()))
}

/// Runs `n_passes` generations for every seed dialogue.
///
/// Transport errors are retried with exponential backoff; malformed
/// responses are not. Every failure lands in the report rather than being
/// returned. The output corpus is ordered by (seed source, seed id,
/// generation index) regardless of completion order.
pub fn run_domain_mapping<C: LlmClient + ?Sized>(
    client: &C,
    seed: &SeedDataset,
    params: &GenerationParams,
    templates: &PromptTemplates,
) -> (Corpus, GenerationReport) {
    let master_seed = params.rng_seed.unwrap_or_else(rand::random);
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut tasks = Vec::new();
    for d in seed.dialogues() {
        for g in 1..=params.n_passes {
            tasks.push(Task { seed: d, generation_index: g, request_seed: rng.gen() });
        }
    }

    let next = AtomicUsize::new(0);
    let retries = AtomicU64::new(0);
    let outcomes: Mutex<Vec<(usize, Outcome)>> = Mutex::new(Vec::with_capacity(tasks.len()));
    let workers = params.max_in_flight.max(1).min(tasks.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(task) = tasks.get(i) else { break };
                let outcome = attempt(client, templates, params, task, &retries);
                outcomes.lock().expect("outcome list poisoned").push((i, outcome));
            });
        }
    });
    let mut outcomes = outcomes.into_inner().expect("outcome list poisoned");
    outcomes.sort_by_key(|(i, _)| *i);

    let mut report = GenerationReport {
        seed_dialogues: seed.len() as u64,
        n_passes: params.n_passes,
        master_seed,
        retries: retries.into_inner(),
        ..Default::default()
    };
    for source in seed.per_source.keys() {
        report.per_source.insert(*source, Tally::default());
    }
    let mut mapped = Vec::new();
    for (i, outcome) in outcomes {
        let source = tasks[i].seed.source;
        let flag = match outcome {
            Ok(m) => {
                mapped.push(m);
                Ok(())
            }
            Err((kind, detail)) => {
                log::debug!("{} pass {}: {detail}", tasks[i].seed.id, tasks[i].generation_index);
                Err(kind)
            }
        };
        report.total.record(flag);
        report.per_source.entry(source).or_default().record(flag);
    }
    mapped.sort_by(|a, b| {
        (a.seed_source, &a.seed_id, a.generation_index).cmp(&(b.seed_source, &b.seed_id, b.generation_index))
    });
    let corpus = Corpus {
        dataset: DatasetId::Gnome,
        stage: Stage::Generated,
        dialogues: mapped.into_iter().map(MappedDialogue::into_dialogue).collect(),
    };
    (corpus, report)
}
