//! Deterministic stand-in for the generator model.
//!
//! [`MockLlm`] reads the seed dialogue back out of the prompt and rewrites it
//! into one of a fixed list of domains chosen by the request seed. Faults can
//! be injected per request to exercise every failure path of the runner.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::client::{CompletionRequest, LlmClient, LlmError};
use super::parse::EOS;
use super::prompt::PromptTemplates;

/// (domain title, item that replaces the traded goods)
const DOMAINS: &[(&str, &str)] = &[
    ("Antique Auction", "vase"),
    ("Vintage Guitar Sale", "guitar"),
    ("Office Lease Renewal", "office"),
    ("Film Distribution Rights", "license"),
    ("Farmers Market Stall", "stall"),
    ("Freelance Design Contract", "retainer"),
    ("Used Sailboat Purchase", "sailboat"),
    ("Concert Ticket Resale", "ticket"),
    ("Catering Order", "menu"),
    ("Hotel Group Booking", "suite"),
    ("Art Gallery Commission", "painting"),
    ("Startup Equity Split", "shares"),
    ("Wedding Venue Rental", "venue"),
    ("Textbook Buyback", "textbook"),
    ("Food Truck Permit", "permit"),
    ("Vineyard Harvest Share", "crate"),
];

const GOODS: &[&str] = &[
    "firewood", "food", "water", "bike", "car", "house", "apartment", "table", "phone", "salary", "job",
    "donation", "price", "item", "chair", "sofa", "couch", "tv", "laptop", "package",
];

/// Fault to inject into one response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// Omit the `[EOS]` after the first utterance.
    DropEos,
    /// Omit the `NEW_DOMAIN{...}` header.
    MissingHeader,
    /// Return only whitespace.
    Empty,
    /// Return the seed dialogue unchanged under a new header.
    Echo,
    /// Always use the first domain, so repeated passes collide.
    Repeat,
    /// Fail with a transport error every time.
    Transport,
    /// Fail with a transport error this many times for a given request seed,
    /// then succeed.
    Transient(u32),
}

type FaultFn = dyn Fn(&CompletionRequest) -> Option<Fault> + Send + Sync;

/// Chooses which requests receive a fault.
#[derive(Clone, Default)]
pub enum FaultPlan {
    #[default]
    None,
    /// Every request.
    Always(Fault),
    /// Requests whose seed is divisible by `period`.
    EverySeed { period: u64, fault: Fault },
    Custom(Arc<FaultFn>),
}

impl fmt::Debug for FaultPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultPlan::None => f.write_str("None"),
            FaultPlan::Always(fault) => f.debug_tuple("Always").field(fault).finish(),
            FaultPlan::EverySeed { period, fault } => {
                f.debug_struct("EverySeed").field("period", period).field("fault", fault).finish()
            }
            FaultPlan::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl FaultPlan {
    /// Fault for the request whose user prompt contains `needle`.
    pub fn when_prompt_contains(needle: impl Into<String>, fault: Fault) -> FaultPlan {
        let needle = needle.into();
        FaultPlan::Custom(Arc::new(move |r: &CompletionRequest| r.user.contains(&needle).then(|| fault.clone())))
    }

    fn pick(&self, request: &CompletionRequest) -> Option<Fault> {
        match self {
            FaultPlan::None => None,
            FaultPlan::Always(f) => Some(f.clone()),
            FaultPlan::EverySeed { period, fault } => (request.seed % period.max(&1) == 0).then(|| fault.clone()),
            FaultPlan::Custom(f) => f(request),
        }
    }
}

#[derive(Debug, Default)]
pub struct MockLlm {
    templates: PromptTemplates,
    faults: FaultPlan,
    transient: Mutex<HashMap<u64, u32>>,
    calls: AtomicU64,
}

impl MockLlm {
    pub fn new() -> Self {
        MockLlm::default()
    }

    pub fn with_faults(faults: FaultPlan) -> Self {
        MockLlm { faults, ..MockLlm::default() }
    }

    /// Use when prompts are built from non-default templates.
    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    /// Number of `complete` calls so far, retries included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn seed_lines<'a>(&self, user: &'a str) -> Vec<&'a str> {
        let prefix = self.templates.user_prefix();
        let dialogue = user.strip_prefix(prefix).unwrap_or(user);
        dialogue.lines().map(str::trim).filter(|l| !l.is_empty()).collect()
    }
}

fn strip_tag(line: &str) -> &str {
    line.strip_prefix("A: ").or_else(|| line.strip_prefix("B: ")).unwrap_or(line)
}

fn paraphrase(text: &str, item: &str) -> String {
    text.split(' ')
        .map(|word| {
            let core = word.trim_matches(|c: char| !c.is_alphanumeric());
            let lower = core.to_lowercase();
            if !core.is_empty() && GOODS.contains(&lower.trim_end_matches('s')) {
                word.replacen(core, item, 1)
            } else {
                word.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

impl LlmClient for MockLlm {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let fault = self.faults.pick(request);
        match fault {
            Some(Fault::Transport) => return Err(LlmError::Transport("injected connection reset".into())),
            Some(Fault::Transient(times)) => {
                let mut seen = self.transient.lock().expect("mock state poisoned");
                let n = seen.entry(request.seed).or_insert(0);
                if *n < times {
                    *n += 1;
                    return Err(LlmError::Transport("injected transient failure".into()));
                }
            }
            Some(Fault::Empty) => return Ok("   \n".into()),
            _ => {}
        }

        let lines = self.seed_lines(&request.user);
        let domain_idx = if fault == Some(Fault::Repeat) { 0 } else { (request.seed % DOMAINS.len() as u64) as usize };
        let (title, item) = DOMAINS[domain_idx];

        let mut out = String::new();
        if fault != Some(Fault::MissingHeader) {
            out.push_str(&format!("NEW_DOMAIN{{{title}}}\n"));
        }
        for (i, line) in lines.iter().enumerate() {
            let text = strip_tag(line);
            let body = if fault == Some(Fault::Echo) {
                line.to_string()
            } else if i == 0 {
                format!("{} Let's talk about the {item}.", paraphrase(text, item))
            } else {
                paraphrase(text, item)
            };
            out.push_str(&body);
            if !(fault == Some(Fault::DropEos) && i == 0 && lines.len() > 1) {
                out.push(' ');
                out.push_str(EOS);
            }
            out.push('\n');
        }
        Ok(out)
    }
}
