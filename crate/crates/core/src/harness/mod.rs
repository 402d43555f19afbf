//! Deterministic synthetic-world generation and the end-to-end replay
//! driver: seeded worlds in, invariant-checked runs out.

pub mod follows;
pub mod replay;
pub mod world;

pub use follows::{FailurePlan, LatencyMode, StubFollowsClient};
pub use replay::{replay_world, write_replay_outputs, ReplayOptions, ReplayResult, RunReport};
pub use world::{generate_world, GroundTruth, WorldPaths, WorldSpec};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid world spec: {0}")]
    InvalidSpec(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error(transparent)]
    Classify(#[from] crate::classify::ClassifyError),
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Rec(#[from] crate::rec::RecError),
    #[error(transparent)]
    Feed(#[from] crate::feed::FeedError),
    #[error(transparent)]
    Ingest(#[from] crate::ingest::IngestError),
}
