//! Mobile-cloud intrusion detection and prevention pipeline.
//!
//! The crate is organised around the lifecycle of an app on a monitored
//! device:
//!
//! 1. [`corpus`]: synthetic labeled manifests standing in for a
//!    market-collected training set, plus JSONL persistence and stratified
//!    splitting.
//! 2. [`features`]: binary indicator encoding of manifest tokens against a
//!    stable vocabulary, with mutual-information feature selection.
//! 3. [`classifiers`]: from-scratch Naive Bayes, SDCA linear SVM, k-means
//!    and boosted-stump trainers, shared scoring interface, confusion-matrix
//!    metrics and best-model selection.
//! 4. [`evaluator`]: cloud-side risk evaluation with three-level risk
//!    mapping, model bundle persistence, and a newline-delimited JSON
//!    assessment service.
//! 5. [`watchlist`]: device-side store of suspicious apps; all monitoring
//!    is scoped to watchlisted apps.
//! 6. [`hids`] / [`nids`]: host and network detection over windowed
//!    telemetry with EWMA baselines and z-score anomaly rules.
//! 7. [`prevention`]: verdict-to-action policy with user overrides and an
//!    append-only audit log.
//! 8. [`sim`]: a deterministic discrete-tick device simulator that wires
//!    the above into reproducible end-to-end scenarios.
//!
//! Everything in the detection path is deterministic given explicit seeds;
//! wall-clock time never enters the core.

pub mod baseline;
pub mod classifiers;
pub mod corpus;
pub mod evaluator;
pub mod features;
pub mod hids;
pub mod nids;
pub mod pipeline;
pub mod prevention;
pub mod sim;
pub mod telemetry;
pub mod watchlist;
