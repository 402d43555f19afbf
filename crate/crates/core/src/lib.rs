//! A personalized "paper posts" feed generator for an AT-Protocol-style
//! network, plus the offline pieces around it:
//!
//! - [`ingest`]: firehose consumption with classification and idempotent
//!   persistence behind a bounded worker queue.
//! - [`classify`]: the paper-post filter, arXiv id extraction, and bot
//!   heuristics.
//! - [`store`]: embedded ordered-key persistence with an in-memory twin.
//! - [`rec`]: batched offline recommendation generation, counterfactual
//!   logging, the default feed, and served-list assembly.
//! - [`feed`]: the getFeedSkeleton endpoint with cursor pagination, plus
//!   the describeFeedGenerator and DID documents.
//! - [`analytics`]: engagement-by-rank, adoption effect, category
//!   distributions, and usage summaries with clustered bootstrap CIs.
//! - [`harness`]: deterministic synthetic worlds and an end-to-end replay
//!   driver over a virtual clock.

pub mod analytics;
pub mod classify;
pub mod config;
pub mod feed;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod rec;
pub mod store;
pub mod time;
