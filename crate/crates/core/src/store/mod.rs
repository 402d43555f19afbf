//! Persistence for posts, interactions, users, cached recommendations,
//! counterfactual snapshots, and access logs.
//!
//! Two backends implement the same [`Store`] contract: an embedded
//! file-backed ordered key-value database ([`disk::DiskStore`]) and an
//! in-memory implementation for tests and replay ([`memory::MemoryStore`]).

pub mod disk;
pub mod memory;

use std::sync::Arc;

use crate::model::{
    AccessLog, CounterfactualRecord, InteractionRecord, RecommendationList, StoredPost, UserRecord,
};
use crate::time::Timestamp;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("storage unavailable: {0}")]
    Unavailable(String),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("reserved user id {0:?} cannot be used as a real account")]
    ReservedUserId(String),
}

impl From<redb::DatabaseError> for StoreError {
    fn from(e: redb::DatabaseError) -> Self {
        StoreError::Unavailable(e.to_string())
    }
}

impl From<redb::TransactionError> for StoreError {
    fn from(e: redb::TransactionError) -> Self {
        StoreError::Unavailable(e.to_string())
    }
}

impl From<redb::TableError> for StoreError {
    fn from(e: redb::TableError) -> Self {
        StoreError::Unavailable(e.to_string())
    }
}

impl From<redb::StorageError> for StoreError {
    fn from(e: redb::StorageError) -> Self {
        StoreError::Unavailable(e.to_string())
    }
}

impl From<redb::CommitError> for StoreError {
    fn from(e: redb::CommitError) -> Self {
        StoreError::Unavailable(e.to_string())
    }
}

/// Maps an i64 timestamp to a u64 whose ascending order is descending time;
/// used as the middle component of author-index keys so that an ascending
/// scan yields (time desc, uri asc).
pub(crate) fn descending_time_key(t: Timestamp) -> u64 {
    !((t.micros() as u64) ^ (1 << 63))
}

pub type StoreResult<T> = Result<T, StoreError>;

/// The persistence contract. All operations are safe for concurrent
/// callers; upserts are atomic per key.
pub trait Store: Send + Sync {
    // -- posts ---------------------------------------------------------

    /// Insert a post. Idempotent on uri: returns false (and leaves the
    /// stored row untouched) when the uri is already present.
    fn put_post(&self, post: &StoredPost) -> StoreResult<bool>;

    /// Direct uri lookup; deleted posts remain readable.
    fn get_post(&self, uri: &str) -> StoreResult<Option<StoredPost>>;

    /// Membership: was this uri ever persisted as a paper post?
    /// Deleted posts still answer true.
    fn contains_post(&self, uri: &str) -> StoreResult<bool>;

    /// Flag a post deleted; unknown uri is a no-op.
    fn mark_deleted(&self, uri: &str) -> StoreResult<()>;

    /// Up to `n` non-deleted posts by this author, strictly descending by
    /// created_at, ties broken by uri ascending.
    fn recent_posts_by_author(&self, author_id: &str, n: usize) -> StoreResult<Vec<StoredPost>>;

    /// All posts (including deleted), sorted by uri.
    fn all_posts(&self) -> StoreResult<Vec<StoredPost>>;

    // -- interactions ---------------------------------------------------

    /// Insert a like/repost. Idempotent on (actor, subject, kind): returns
    /// false when already present.
    fn put_interaction(&self, rec: &InteractionRecord) -> StoreResult<bool>;

    /// All interactions by one actor, sorted by (created_at desc, subject asc, kind).
    fn interactions_by_actor(&self, actor_id: &str) -> StoreResult<Vec<InteractionRecord>>;

    /// All interactions, sorted by (actor, subject, kind).
    fn all_interactions(&self) -> StoreResult<Vec<InteractionRecord>>;

    // -- users ----------------------------------------------------------

    fn put_user(&self, user: &UserRecord) -> StoreResult<()>;

    fn get_user(&self, user_id: &str) -> StoreResult<Option<UserRecord>>;

    /// Atomic read-modify-write of an existing user record. Returns the
    /// updated record, or None when the user does not exist.
    fn update_user(
        &self,
        user_id: &str,
        apply: &mut dyn FnMut(&mut UserRecord),
    ) -> StoreResult<Option<UserRecord>>;

    /// All users, sorted by user_id.
    fn all_users(&self) -> StoreResult<Vec<UserRecord>>;

    // -- recommendations --------------------------------------------------

    /// Upsert keyed by (user_id, algorithm_id). Last-writer-wins by
    /// generated_at: an older list never replaces a newer one. Returns
    /// whether the given list was stored.
    fn put_recommendations(&self, rec: &RecommendationList) -> StoreResult<bool>;

    fn get_recommendations(
        &self,
        user_id: &str,
        algorithm_id: &str,
    ) -> StoreResult<Option<RecommendationList>>;

    /// All cached lists, sorted by (user_id, algorithm_id).
    fn all_recommendations(&self) -> StoreResult<Vec<RecommendationList>>;

    // -- counterfactual snapshots ----------------------------------------

    /// Insert-only time series keyed by (user, algorithm, generated_at);
    /// an existing key is never overwritten. Returns whether inserted.
    fn put_counterfactual(&self, rec: &CounterfactualRecord) -> StoreResult<bool>;

    /// Sorted by (user_id, algorithm_id, generated_at).
    fn all_counterfactuals(&self) -> StoreResult<Vec<CounterfactualRecord>>;

    fn counterfactuals_for_user(&self, user_id: &str) -> StoreResult<Vec<CounterfactualRecord>>;

    // -- access logs -------------------------------------------------------

    /// Append-only; past logs are never mutated.
    fn append_access_log(&self, log: &AccessLog) -> StoreResult<()>;

    /// In append order.
    fn all_access_logs(&self) -> StoreResult<Vec<AccessLog>>;
}

pub type SharedStore = Arc<dyn Store>;

/// The JSON-lines export tables, in their canonical dump order.
pub const EXPORT_TABLES: &[&str] = &[
    "posts",
    "users",
    "interactions",
    "recs",
    "counterfactual_recs",
    "access_logs",
];

fn to_jsonl<T: serde::Serialize>(items: &[T]) -> StoreResult<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Serialize one table as JSON-lines in its canonical order.
pub fn export_table(store: &dyn Store, table: &str) -> StoreResult<String> {
    match table {
        "posts" => to_jsonl(&store.all_posts()?),
        "users" => to_jsonl(&store.all_users()?),
        "interactions" => to_jsonl(&store.all_interactions()?),
        "recs" => to_jsonl(&store.all_recommendations()?),
        "counterfactual_recs" => to_jsonl(&store.all_counterfactuals()?),
        "access_logs" => to_jsonl(&store.all_access_logs()?),
        other => Err(StoreError::Unavailable(format!("unknown table {other:?}"))),
    }
}

/// Dump every table; the concatenation is byte-stable for identical
/// store contents, which the replay determinism checks rely on.
pub fn export_all(store: &dyn Store) -> StoreResult<Vec<(String, String)>> {
    EXPORT_TABLES
        .iter()
        .map(|t| Ok((t.to_string(), export_table(store, t)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::disk::DiskStore;
    use super::memory::MemoryStore;
    use super::*;
    use crate::model::InteractionKind;
    use crate::time::Timestamp;

    fn post(uri: &str, author: &str, at: i64) -> StoredPost {
        StoredPost {
            uri: uri.to_string(),
            author_id: author.to_string(),
            text: format!("post {uri}"),
            links: vec![],
            arxiv_ids: vec![],
            created_at: Timestamp::from_micros(at),
            deleted: false,
            ingested_at: Timestamp::from_micros(at),
            quote_of: None,
        }
    }

    fn interaction(
        actor: &str,
        subject: &str,
        kind: InteractionKind,
        at: i64,
    ) -> InteractionRecord {
        InteractionRecord {
            actor_id: actor.to_string(),
            subject_uri: subject.to_string(),
            kind,
            created_at: Timestamp::from_micros(at),
        }
    }

    fn run_contract_suite(store: &dyn Store) {
        // puts are idempotent on uri
        assert!(store.put_post(&post("at://p/1", "a", 10)).unwrap());
        assert!(!store.put_post(&post("at://p/1", "a", 99)).unwrap());
        assert_eq!(store.all_posts().unwrap().len(), 1);
        assert_eq!(
            store.get_post("at://p/1").unwrap().unwrap().created_at,
            Timestamp::from_micros(10)
        );

        // author index ordering: time desc, uri asc on ties
        store.put_post(&post("at://p/2", "a", 30)).unwrap();
        store.put_post(&post("at://p/4", "a", 20)).unwrap();
        store.put_post(&post("at://p/3", "a", 20)).unwrap();
        store.put_post(&post("at://p/9", "b", 99)).unwrap();
        let recent = store.recent_posts_by_author("a", 10).unwrap();
        let uris: Vec<_> = recent.iter().map(|p| p.uri.as_str()).collect();
        assert_eq!(uris, ["at://p/2", "at://p/3", "at://p/4", "at://p/1"]);

        let top2 = store.recent_posts_by_author("a", 2).unwrap();
        assert_eq!(top2.len(), 2);
        assert_eq!(top2[0].uri, "at://p/2");

        assert!(store
            .recent_posts_by_author("nobody", 5)
            .unwrap()
            .is_empty());

        // deletion: hidden from the author index, still a member, still readable
        store.mark_deleted("at://p/2").unwrap();
        store.mark_deleted("at://unknown").unwrap();
        let after = store.recent_posts_by_author("a", 10).unwrap();
        assert!(after.iter().all(|p| p.uri != "at://p/2"));
        assert!(store.contains_post("at://p/2").unwrap());
        assert!(store.get_post("at://p/2").unwrap().unwrap().deleted);
        assert!(!store.contains_post("at://never").unwrap());

        // interactions unique on (actor, subject, kind)
        assert!(store
            .put_interaction(&interaction("u1", "at://p/1", InteractionKind::Like, 50))
            .unwrap());
        assert!(!store
            .put_interaction(&interaction("u1", "at://p/1", InteractionKind::Like, 60))
            .unwrap());
        assert!(store
            .put_interaction(&interaction("u1", "at://p/1", InteractionKind::Repost, 55))
            .unwrap());
        assert_eq!(store.all_interactions().unwrap().len(), 2);
        assert_eq!(store.interactions_by_actor("u1").unwrap().len(), 2);
        assert!(store.interactions_by_actor("u2").unwrap().is_empty());

        // users
        let user = UserRecord::new("did:plc:u1".to_string(), Timestamp::from_micros(1));
        store.put_user(&user).unwrap();
        assert_eq!(store.get_user("did:plc:u1").unwrap().unwrap(), user);
        let updated = store
            .update_user("did:plc:u1", &mut |u| u.access_count += 1)
            .unwrap()
            .unwrap();
        assert_eq!(updated.access_count, 1);
        assert!(store.update_user("missing", &mut |_| {}).unwrap().is_none());

        // recommendations: write-read identity and LWW by generated_at
        let newer = RecommendationList {
            user_id: "did:plc:u1".to_string(),
            algorithm_id: "reverse_chronological".to_string(),
            post_uris: vec!["at://p/2".into(), "at://p/1".into()],
            generated_at: Timestamp::from_micros(200),
        };
        assert!(store.put_recommendations(&newer).unwrap());
        let stale = RecommendationList {
            post_uris: vec!["at://p/1".into()],
            generated_at: Timestamp::from_micros(100),
            ..newer.clone()
        };
        assert!(!store.put_recommendations(&stale).unwrap());
        assert_eq!(
            store
                .get_recommendations("did:plc:u1", "reverse_chronological")
                .unwrap()
                .unwrap(),
            newer
        );

        // counterfactuals are insert-only
        let cf = CounterfactualRecord {
            user_id: "did:plc:u1".to_string(),
            algorithm_id: "reverse_chronological".to_string(),
            post_uris: vec!["at://p/2".into()],
            generated_at: Timestamp::from_micros(200),
        };
        assert!(store.put_counterfactual(&cf).unwrap());
        let overwrite = CounterfactualRecord {
            post_uris: vec![],
            ..cf.clone()
        };
        assert!(!store.put_counterfactual(&overwrite).unwrap());
        assert_eq!(store.all_counterfactuals().unwrap(), vec![cf.clone()]);
        assert_eq!(
            store.counterfactuals_for_user("did:plc:u1").unwrap().len(),
            1
        );

        // access logs append in order
        for i in 0..3 {
            store
                .append_access_log(&AccessLog {
                    user_id: "did:plc:u1".to_string(),
                    requested_at: Timestamp::from_micros(i),
                    limit: 30,
                    cursor: None,
                    served_uris: vec![],
                })
                .unwrap();
        }
        let logs = store.all_access_logs().unwrap();
        assert_eq!(logs.len(), 3);
        assert!(logs
            .windows(2)
            .all(|w| w[0].requested_at <= w[1].requested_at));
    }

    #[test]
    fn memory_store_contract() {
        run_contract_suite(&MemoryStore::new());
    }

    #[test]
    fn disk_store_contract() {
        let dir = tempfile::tempdir().unwrap();
        let store = DiskStore::open(dir.path()).unwrap();
        run_contract_suite(&store);
    }

    #[test]
    fn disk_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = DiskStore::open(dir.path()).unwrap();
            store.put_post(&post("at://p/1", "a", 10)).unwrap();
            store
                .append_access_log(&AccessLog {
                    user_id: "u".into(),
                    requested_at: Timestamp::from_micros(5),
                    limit: 10,
                    cursor: None,
                    served_uris: vec!["at://p/1".into()],
                })
                .unwrap();
        }
        let store = DiskStore::open(dir.path()).unwrap();
        assert!(store.contains_post("at://p/1").unwrap());
        assert_eq!(store.all_access_logs().unwrap().len(), 1);
        // appended ids keep increasing after reopen
        store
            .append_access_log(&AccessLog {
                user_id: "u".into(),
                requested_at: Timestamp::from_micros(9),
                limit: 10,
                cursor: None,
                served_uris: vec![],
            })
            .unwrap();
        assert_eq!(store.all_access_logs().unwrap().len(), 2);
    }

    #[test]
    fn exports_match_across_backends() {
        let dir = tempfile::tempdir().unwrap();
        let disk = DiskStore::open(dir.path()).unwrap();
        let mem = MemoryStore::new();
        for s in [&disk as &dyn Store, &mem as &dyn Store] {
            s.put_post(&post("at://p/1", "a", 10)).unwrap();
            s.put_post(&post("at://p/2", "b", 20)).unwrap();
            s.put_interaction(&interaction("u", "at://p/1", InteractionKind::Like, 30))
                .unwrap();
        }
        assert_eq!(export_all(&disk).unwrap(), export_all(&mem).unwrap());
    }

    #[test]
    fn concurrent_counter_updates_do_not_lose_increments() {
        let store = Arc::new(MemoryStore::new());
        store
            .put_user(&UserRecord::new("u".to_string(), Timestamp::from_micros(0)))
            .unwrap();
        let mut handles = Vec::new();
        for _ in 0..4 {
            let s = Arc::clone(&store);
            handles.push(std::thread::spawn(move || {
                for _ in 0..250 {
                    s.update_user("u", &mut |u| u.access_count += 1).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(store.get_user("u").unwrap().unwrap().access_count, 1000);
    }

    #[test]
    fn concurrent_disk_counter_updates() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(DiskStore::open(dir.path()).unwrap());
        store
            .put_user(&UserRecord::new("u".to_string(), Timestamp::from_micros(0)))
            .unwrap();
        let mut handles = Vec::new();
        for _ in 0..2 {
            let s = Arc::clone(&store);
            handles.push(std::thread::spawn(move || {
                for _ in 0..50 {
                    s.update_user("u", &mut |u| u.access_count += 1).unwrap();
                }
            }));
        }
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(store.get_user("u").unwrap().unwrap().access_count, 100);
    }
}
