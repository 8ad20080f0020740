//! Category-context candidate retrieval over lifelong behavior logs.
//!
//! The pipeline, module by module:
//!
//! - [`datagen`]: seeded synthetic catalog, users and interaction logs with
//!   planted category-conditional preferences.
//! - [`seqstore`]: in-memory log store and category hard search.
//! - [`encoder`]: dual-tower model. Items are an embedding lookup; users are a
//!   pre-LN transformer over `[CLS] + profile tokens + behavior tokens`.
//!   Forward and backward passes are written out by hand.
//! - [`training`]: in-batch softmax contrastive loss, single-category batch
//!   cache, Adam, and the training loop.
//! - [`interest`]: time-weighted engagement scores and Random-in-Top
//!   interest selection.
//! - [`retrieval`]: per-category exact and graph indexes, multi-context
//!   retrieval, and merge strategies.
//! - [`eval`]: recall@k, the category-shortcut leakage probe, uniqueness
//!   ratio, and the ablation drivers.
//! - [`config`]: the run configuration file.
//! - [`cli`]: the `ctxrec` command line.
//!
//! See `examples/` for one runnable program per capability.

pub mod cli;
pub mod config;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod interest;
pub mod retrieval;
pub mod seqstore;
pub mod training;

pub mod hash;

pub use error::{Error, Result};

/// Item identifier, dense in `[0, num_items)`.
pub type ItemId = u32;
/// Category identifier, dense in `[0, num_categories)`.
pub type CategoryId = u32;
/// User identifier.
pub type UserId = u32;
/// Integer days since epoch.
pub type Day = i64;
