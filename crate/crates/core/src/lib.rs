//! Orchestration and evaluation toolkit for multi-domain financial sentiment
//! classification.
//!
//! The crate is organised around the pipeline it drives:
//!
//! * [`corpus`] ingests heterogeneous datasets into a single label vocabulary
//!   and produces stratified, nested splits.
//! * [`scheduler`] and [`sampler`] plan a three-phase training run
//!   (initialization, balanced, finalization) and materialize it as a
//!   step-level [`sampler::TrainingManifest`].
//! * [`trainer`] is a small hashed bag-of-words logistic regression that
//!   replays manifests, so the whole pipeline can be exercised offline.
//! * [`prompts`], [`inference`] and [`metrics`] cover zero/few-shot evaluation
//!   of chat-completion classifiers.
//! * [`harness`] ties everything into shot and proportion sweeps.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod inference;
pub mod metrics;
pub mod prompts;
pub mod sampler;
pub mod scheduler;
pub mod seed;
pub mod synthetic;
pub mod trainer;

pub use corpus::{CorpusSet, DomainCorpus, DomainId, Example, Language, SentimentLabel, Split};
pub use error::{Error, Result};
