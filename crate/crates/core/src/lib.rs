//! Deterministic simulator of Android-style inter-app IPC, built to study
//! one question: when a service provider receives a call, what evidence
//! actually identifies the calling app?
//!
//! The model pits a notification-listening attacker against an SDK
//! provider that partners publish content through. Providers that trust
//! the creator identity baked into a forwarded intent token accept
//! replayed tokens harvested off the status bar; providers that read the
//! kernel's caller stamp and check it against a signing-cert registry do
//! not. The crate simulates both, measures the attack against each, and
//! scores eight caller-authentication mechanisms on five properties.
//!
//! Module map:
//! - [`device`]: installed apps, UIDs, signing certs, platform policy
//! - [`kernel`]: bound services and transactions with kernel-stamped
//!   caller UIDs
//! - [`pending_intent`]: creator-sealed intent tokens and their dispatch
//! - [`notifications`]: the status bar and listener capability
//! - [`auth`]: the authentication mechanisms under study and the
//!   property matrix
//! - [`sdk`]: provider builds — the token-trusting one, the three-layer
//!   one, and two deliberately weakened variants
//! - [`registry`]: the provider's server-side partner registry and audit
//!   trail
//! - [`registry_http`]: the registry behind a real HTTP wire protocol
//! - [`scenario`]: end-to-end attack/defense scenarios over fresh
//!   simulated devices
//! - [`report`]: stable JSON/markdown reports
//! - [`cli`]: the `ipcsim` binary
//!
//! Everything is deterministic: one seeded random stream per run, ordered
//! maps throughout, and reports that are byte-identical across runs apart
//! from optional wall-clock timing.

pub mod auth;
pub mod cli;
pub mod device;
pub mod digest;
pub mod kernel;
pub mod notifications;
pub mod pending_intent;
pub mod registry;
pub mod registry_http;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sdk;

pub use report::ScenarioReport;
pub use scenario::{run_scenario, ScenarioRequest};
