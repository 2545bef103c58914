//! Synthesis of open-domain negotiation dialogues from closed-domain,
//! strategy-annotated corpora, plus the tooling to evaluate strategy
//! prediction on them.
//!
//! The pipeline runs in order: [`corpus`] ingestion and completeness
//! filtering, [`labelmap`] unification onto five strategy labels,
//! [`seedselect`] skew-corrected seed selection, [`domainmap`] LLM domain
//! mapping, [`postproc`] clean-up and [`analysis`]. [`pipeline`] wires them
//! together. [`baseline`], [`evalharness`] and [`humaneval`] cover model
//! evaluation and human rating studies.

pub mod analysis;
pub mod baseline;
pub mod corpus;
pub mod domainmap;
pub mod evalharness;
pub mod humaneval;
pub mod labelmap;
pub mod pipeline;
pub mod postproc;
pub mod seedselect;

pub use corpus::{Corpus, DatasetId, Dialogue, Provenance, Speaker, Stage, Utterance};
pub use labelmap::{CanonicalLabel, LabelSet};
