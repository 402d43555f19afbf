//! Domain types shared across ingestion, storage, recommendation, serving,
//! and analytics, plus the canonical JSON-lines wire format for events.

use serde::{Deserialize, Serialize};

use crate::time::Timestamp;

/// Reserved pseudo-user under which the non-personalized default feed is
/// cached. Rejected as a real account identifier everywhere.
pub const DEFAULT_FEED_USER: &str = "__default__";

/// Pseudo-user recorded on access logs for logged-out requests.
pub const ANONYMOUS_USER: &str = "__anonymous__";

pub fn is_reserved_user_id(user_id: &str) -> bool {
    user_id == DEFAULT_FEED_USER || user_id == ANONYMOUS_USER
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    PostCreate,
    PostDelete,
    Like,
    Repost,
    Follow,
}

impl EventKind {
    /// Kinds the ingest pipeline acts on; everything else is dropped and counted.
    pub fn is_relevant(self) -> bool {
        !matches!(self, EventKind::Follow)
    }
}

/// Post content carried by a `post_create` event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostPayload {
    pub uri: String,
    pub author_id: String,
    pub text: String,
    /// Every URL in the post text or metadata, deduplicated and order-preserving.
    #[serde(default)]
    pub links: Vec<String>,
    pub created_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repost_of: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote_of: Option<String>,
}

/// One event as it appears on the JSON-lines wire (one object per line).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub actor_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<PostPayload>,
    pub created_at: Timestamp,
}

#[derive(Debug, thiserror::Error)]
pub enum EventError {
    #[error("event seq {seq}: kind {kind:?} requires a record payload")]
    MissingRecord { seq: u64, kind: EventKind },
    #[error("event seq {seq}: kind {kind:?} requires subject_uri")]
    MissingSubject { seq: u64, kind: EventKind },
}

impl WireEvent {
    /// Validate the kind-specific field invariants and attach a receive time.
    pub fn into_envelope(self, received_at: Timestamp) -> Result<EventEnvelope, EventError> {
        match self.kind {
            EventKind::PostCreate if self.record.is_none() => {
                return Err(EventError::MissingRecord {
                    seq: self.seq,
                    kind: self.kind,
                });
            }
            EventKind::PostDelete | EventKind::Like | EventKind::Repost
                if self.subject_uri.is_none() =>
            {
                return Err(EventError::MissingSubject {
                    seq: self.seq,
                    kind: self.kind,
                });
            }
            _ => {}
        }
        let record = self.record.map(|mut r| {
            dedup_preserving_order(&mut r.links);
            r
        });
        Ok(EventEnvelope {
            seq: self.seq,
            kind: self.kind,
            actor_id: self.actor_id,
            subject_uri: self.subject_uri,
            record,
            created_at: self.created_at,
            received_at,
        })
    }
}

/// A validated firehose event inside the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventEnvelope {
    pub seq: u64,
    pub kind: EventKind,
    pub actor_id: String,
    pub subject_uri: Option<String>,
    pub record: Option<PostPayload>,
    pub created_at: Timestamp,
    pub received_at: Timestamp,
}

impl EventEnvelope {
    pub fn to_wire(&self) -> WireEvent {
        WireEvent {
            seq: self.seq,
            kind: self.kind,
            actor_id: self.actor_id.clone(),
            subject_uri: self.subject_uri.clone(),
            record: self.record.clone(),
            created_at: self.created_at,
        }
    }
}

fn dedup_preserving_order(items: &mut Vec<String>) {
    let mut seen = std::collections::HashSet::new();
    items.retain(|it| seen.insert(it.clone()));
}

/// A classified paper post as persisted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPost {
    pub uri: String,
    pub author_id: String,
    pub text: String,
    pub links: Vec<String>,
    pub arxiv_ids: Vec<String>,
    pub created_at: Timestamp,
    #[serde(default)]
    pub deleted: bool,
    pub ingested_at: Timestamp,
    /// Reference to the quoted post when this is a quote post; the
    /// recommendation algorithms filter on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quote_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    pub first_access_at: Timestamp,
    pub access_count: u64,
    /// How many times the consent thread has been shown, capped at 5.
    pub consent_views: u8,
    #[serde(default)]
    pub opted_out: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opted_out_at: Option<Timestamp>,
}

impl UserRecord {
    pub fn new(user_id: String, first_access_at: Timestamp) -> Self {
        UserRecord {
            user_id,
            first_access_at,
            access_count: 0,
            consent_views: 0,
            opted_out: false,
            opted_out_at: None,
        }
    }
}

pub const CONSENT_VIEWS_MAX: u8 = 5;

/// Cached ranking for one (user, algorithm) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecommendationList {
    pub user_id: String,
    pub algorithm_id: String,
    pub post_uris: Vec<String>,
    pub generated_at: Timestamp,
}

/// Top-of-ranking snapshot kept for every configured algorithm at every
/// generation, a time series keyed by (user, algorithm, generated_at).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterfactualRecord {
    pub user_id: String,
    pub algorithm_id: String,
    pub post_uris: Vec<String>,
    pub generated_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Like,
    Repost,
}

impl InteractionKind {
    pub fn as_u8(self) -> u8 {
        match self {
            InteractionKind::Like => 0,
            InteractionKind::Repost => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(InteractionKind::Like),
            1 => Some(InteractionKind::Repost),
            _ => None,
        }
    }
}

/// A like or repost of a paper post, unique on (actor, subject, kind).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub actor_id: String,
    pub subject_uri: String,
    pub kind: InteractionKind,
    pub created_at: Timestamp,
}

/// One feed request and exactly what it served.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessLog {
    pub user_id: String,
    pub requested_at: Timestamp,
    pub limit: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cursor: Option<String>,
    pub served_uris: Vec<String>,
}
