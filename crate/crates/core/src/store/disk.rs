//! File-backed [`Store`] on an embedded ordered key-value database.
//!
//! Rows are JSON-encoded values; composite ordered keys give the author
//! index its (author, time desc, uri asc) scan order.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use redb::{Database, ReadableTable, TableDefinition};

use crate::model::{
    AccessLog, CounterfactualRecord, InteractionRecord, RecommendationList, StoredPost, UserRecord,
};

use super::{descending_time_key, Store, StoreError, StoreResult};

const POSTS: TableDefinition<&str, &[u8]> = TableDefinition::new("posts");
// (author_id, descending-time key, uri) -> ()
const AUTHOR_INDEX: TableDefinition<(&str, u64, &str), ()> = TableDefinition::new("author_index");
const INTERACTIONS: TableDefinition<(&str, &str, u8), &[u8]> = TableDefinition::new("interactions");
const USERS: TableDefinition<&str, &[u8]> = TableDefinition::new("users");
const RECS: TableDefinition<(&str, &str), &[u8]> = TableDefinition::new("recs");
const COUNTERFACTUALS: TableDefinition<(&str, &str, i64), &[u8]> =
    TableDefinition::new("counterfactual_recs");
const ACCESS_LOGS: TableDefinition<u64, &[u8]> = TableDefinition::new("access_logs");

pub struct DiskStore {
    db: Database,
    next_access_log_id: AtomicU64,
}

impl DiskStore {
    /// Open (creating if needed) the database file `store.redb` inside `dir`.
    pub fn open(dir: &Path) -> StoreResult<Self> {
        std::fs::create_dir_all(dir)?;
        let db = Database::create(dir.join("store.redb"))?;
        let txn = db.begin_write()?;
        {
            txn.open_table(POSTS)?;
            txn.open_table(AUTHOR_INDEX)?;
            txn.open_table(INTERACTIONS)?;
            txn.open_table(USERS)?;
            txn.open_table(RECS)?;
            txn.open_table(COUNTERFACTUALS)?;
            txn.open_table(ACCESS_LOGS)?;
        }
        txn.commit()?;
        let read = db.begin_read()?;
        let next = {
            let table = read.open_table(ACCESS_LOGS)?;
            let next = table.last()?.map(|(k, _)| k.value() + 1).unwrap_or(0);
            next
        };
        Ok(DiskStore {
            db,
            next_access_log_id: AtomicU64::new(next),
        })
    }

    fn decode<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> StoreResult<T> {
        Ok(serde_json::from_slice(bytes)?)
    }
}

impl Store for DiskStore {
    fn put_post(&self, post: &StoredPost) -> StoreResult<bool> {
        let txn = self.db.begin_write()?;
        let inserted = {
            let mut posts = txn.open_table(POSTS)?;
            if posts.get(post.uri.as_str())?.is_some() {
                false
            } else {
                posts.insert(post.uri.as_str(), serde_json::to_vec(post)?.as_slice())?;
                let mut index = txn.open_table(AUTHOR_INDEX)?;
                index.insert(
                    (
                        post.author_id.as_str(),
                        descending_time_key(post.created_at),
                        post.uri.as_str(),
                    ),
                    (),
                )?;
                true
            }
        };
        txn.commit()?;
        Ok(inserted)
    }

    fn get_post(&self, uri: &str) -> StoreResult<Option<StoredPost>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(POSTS)?;
        match table.get(uri)? {
            Some(guard) => Ok(Some(Self::decode(guard.value())?)),
            None => Ok(None),
        }
    }

    fn contains_post(&self, uri: &str) -> StoreResult<bool> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(POSTS)?;
        Ok(table.get(uri)?.is_some())
    }

    fn mark_deleted(&self, uri: &str) -> StoreResult<()> {
        let txn = self.db.begin_write()?;
        {
            let mut posts = txn.open_table(POSTS)?;
            let existing = match posts.get(uri)? {
                Some(guard) => Some(Self::decode::<StoredPost>(guard.value())?),
                None => None,
            };
            if let Some(mut post) = existing {
                post.deleted = true;
                posts.insert(uri, serde_json::to_vec(&post)?.as_slice())?;
            }
        }
        txn.commit()?;
        Ok(())
    }

    fn recent_posts_by_author(&self, author_id: &str, n: usize) -> StoreResult<Vec<StoredPost>> {
        let txn = self.db.begin_read()?;
        let index = txn.open_table(AUTHOR_INDEX)?;
        let posts = txn.open_table(POSTS)?;
        let mut out = Vec::new();
        for entry in index.range((author_id, 0u64, "")..)? {
            let (key, _) = entry?;
            let (author, _, uri) = key.value();
            if author != author_id || out.len() >= n {
                break;
            }
            let guard = posts
                .get(uri)?
                .ok_or_else(|| StoreError::Unavailable(format!("dangling index entry {uri}")))?;
            let post: StoredPost = Self::decode(guard.value())?;
            if !post.deleted {
                out.push(post);
            }
        }
        Ok(out)
    }

    fn all_posts(&self) -> StoreResult<Vec<StoredPost>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(POSTS)?;
        let mut out = Vec::new();
        for entry in table.iter()? {
            let (_, v) = entry?;
            out.push(Self::decode(v.value())?);
        }
        Ok(out)
    }

    fn put_interaction(&self, rec: &InteractionRecord) -> StoreResult<bool> {
        let txn = self.db.begin_write()?;
        let key = (
            rec.actor_id.as_str(),
            rec.subject_uri.as_str(),
            rec.kind.as_u8(),
        );
        let inserted = {
            let mut table = txn.open_table(INTERACTIONS)?;
            if table.get(key)?.is_some() {
                false
            } else {
                table.insert(key, serde_json::to_vec(rec)?.as_slice())?;
                true
            }
        };
        txn.commit()?;
        Ok(inserted)
    }

    fn interactions_by_actor(&self, actor_id: &str) -> StoreResult<Vec<InteractionRecord>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(INTERACTIONS)?;
        let mut out = Vec::new();
        for entry in table.range((actor_id, "", 0u8)..)? {
            let (key, value) = entry?;
            if key.value().0 != actor_id {
                break;
            }
            out.push(Self::decode(value.value())?);
        }
        out.sort_by(|a: &InteractionRecord, b: &InteractionRecord| {
            b.created_at
                .cmp(&a.created_at)
                .then_with(|| a.subject_uri.cmp(&b.subject_uri))
                .then_with(|| a.kind.as_u8().cmp(&b.kind.as_u8()))
        });
        Ok(out)
    }

    fn all_interactions(&self) -> StoreResult<Vec<InteractionRecord>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(INTERACTIONS)?;
        let mut out = Vec::new();
        for entry in table.iter()? {
            let (_, v) = entry?;
            out.push(Self::decode(v.value())?);
        }
        Ok(out)
    }

    fn put_user(&self, user: &UserRecord) -> StoreResult<()> {
        if crate::model::is_reserved_user_id(&user.user_id) {
            return Err(StoreError::ReservedUserId(user.user_id.clone()));
        }
        let txn = self.db.begin_write()?;
        {
            let mut table = txn.open_table(USERS)?;
            table.insert(user.user_id.as_str(), serde_json::to_vec(user)?.as_slice())?;
        }
        txn.commit()?;
        Ok(())
    }

    fn get_user(&self, user_id: &str) -> StoreResult<Option<UserRecord>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(USERS)?;
        match table.get(user_id)? {
            Some(guard) => Ok(Some(Self::decode(guard.value())?)),
            None => Ok(None),
        }
    }

    fn update_user(
        &self,
        user_id: &str,
        apply: &mut dyn FnMut(&mut UserRecord),
    ) -> StoreResult<Option<UserRecord>> {
        // The exclusive write transaction makes the read-modify-write atomic.
        let txn = self.db.begin_write()?;
        let updated = {
            let mut table = txn.open_table(USERS)?;
            let existing = match table.get(user_id)? {
                Some(guard) => Some(Self::decode::<UserRecord>(guard.value())?),
                None => None,
            };
            match existing {
                Some(mut user) => {
                    apply(&mut user);
                    table.insert(user_id, serde_json::to_vec(&user)?.as_slice())?;
                    Some(user)
                }
                None => None,
            }
        };
        txn.commit()?;
        Ok(updated)
    }

    fn all_users(&self) -> StoreResult<Vec<UserRecord>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(USERS)?;
        let mut out = Vec::new();
        for entry in table.iter()? {
            let (_, v) = entry?;
            out.push(Self::decode(v.value())?);
        }
        Ok(out)
    }

    fn put_recommendations(&self, rec: &RecommendationList) -> StoreResult<bool> {
        let txn = self.db.begin_write()?;
        let key = (rec.user_id.as_str(), rec.algorithm_id.as_str());
        let stored = {
            let mut table = txn.open_table(RECS)?;
            let existing = match table.get(key)? {
                Some(guard) => Some(Self::decode::<RecommendationList>(guard.value())?),
                None => None,
            };
            match existing {
                Some(current) if current.generated_at > rec.generated_at => false,
                _ => {
                    table.insert(key, serde_json::to_vec(rec)?.as_slice())?;
                    true
                }
            }
        };
        txn.commit()?;
        Ok(stored)
    }

    fn get_recommendations(
        &self,
        user_id: &str,
        algorithm_id: &str,
    ) -> StoreResult<Option<RecommendationList>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(RECS)?;
        match table.get((user_id, algorithm_id))? {
            Some(guard) => Ok(Some(Self::decode(guard.value())?)),
            None => Ok(None),
        }
    }

    fn all_recommendations(&self) -> StoreResult<Vec<RecommendationList>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(RECS)?;
        let mut out = Vec::new();
        for entry in table.iter()? {
            let (_, v) = entry?;
            out.push(Self::decode(v.value())?);
        }
        Ok(out)
    }

    fn put_counterfactual(&self, rec: &CounterfactualRecord) -> StoreResult<bool> {
        let txn = self.db.begin_write()?;
        let key = (
            rec.user_id.as_str(),
            rec.algorithm_id.as_str(),
            rec.generated_at.micros(),
        );
        let inserted = {
            let mut table = txn.open_table(COUNTERFACTUALS)?;
            if table.get(key)?.is_some() {
                false
            } else {
                table.insert(key, serde_json::to_vec(rec)?.as_slice())?;
                true
            }
        };
        txn.commit()?;
        Ok(inserted)
    }

    fn all_counterfactuals(&self) -> StoreResult<Vec<CounterfactualRecord>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(COUNTERFACTUALS)?;
        let mut out = Vec::new();
        for entry in table.iter()? {
            let (_, v) = entry?;
            out.push(Self::decode(v.value())?);
        }
        Ok(out)
    }

    fn counterfactuals_for_user(&self, user_id: &str) -> StoreResult<Vec<CounterfactualRecord>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(COUNTERFACTUALS)?;
        let mut out = Vec::new();
        for entry in table.range((user_id, "", i64::MIN)..)? {
            let (key, value) = entry?;
            if key.value().0 != user_id {
                break;
            }
            out.push(Self::decode(value.value())?);
        }
        Ok(out)
    }

    fn append_access_log(&self, log: &AccessLog) -> StoreResult<()> {
        let id = self.next_access_log_id.fetch_add(1, Ordering::SeqCst);
        let txn = self.db.begin_write()?;
        {
            let mut table = txn.open_table(ACCESS_LOGS)?;
            table.insert(id, serde_json::to_vec(log)?.as_slice())?;
        }
        txn.commit()?;
        Ok(())
    }

    fn all_access_logs(&self) -> StoreResult<Vec<AccessLog>> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(ACCESS_LOGS)?;
        let mut out = Vec::new();
        for entry in table.iter()? {
            let (_, v) = entry?;
            out.push(Self::decode(v.value())?);
        }
        Ok(out)
    }
}
