//! In-memory [`Store`] backend used by tests and the replay harness.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::RwLock;

use crate::model::{
    AccessLog, CounterfactualRecord, InteractionRecord, RecommendationList, StoredPost, UserRecord,
};

use super::{descending_time_key, Store, StoreResult};

#[derive(Default)]
struct Inner {
    posts: BTreeMap<String, StoredPost>,
    // (author, descending-time key, uri)
    author_index: BTreeSet<(String, u64, String)>,
    interactions: BTreeMap<(String, String, u8), InteractionRecord>,
    users: BTreeMap<String, UserRecord>,
    recs: BTreeMap<(String, String), RecommendationList>,
    counterfactuals: BTreeMap<(String, String, i64), CounterfactualRecord>,
    access_logs: Vec<AccessLog>,
}

#[derive(Default)]
pub struct MemoryStore {
    inner: RwLock<Inner>,
}

impl MemoryStore {
    pub fn new() -> Self {
        MemoryStore::default()
    }
}

impl Store for MemoryStore {
    fn put_post(&self, post: &StoredPost) -> StoreResult<bool> {
        let mut inner = self.inner.write().unwrap();
        if inner.posts.contains_key(&post.uri) {
            return Ok(false);
        }
        inner.author_index.insert((
            post.author_id.clone(),
            descending_time_key(post.created_at),
            post.uri.clone(),
        ));
        inner.posts.insert(post.uri.clone(), post.clone());
        Ok(true)
    }

    fn get_post(&self, uri: &str) -> StoreResult<Option<StoredPost>> {
        Ok(self.inner.read().unwrap().posts.get(uri).cloned())
    }

    fn contains_post(&self, uri: &str) -> StoreResult<bool> {
        Ok(self.inner.read().unwrap().posts.contains_key(uri))
    }

    fn mark_deleted(&self, uri: &str) -> StoreResult<()> {
        let mut inner = self.inner.write().unwrap();
        if let Some(post) = inner.posts.get_mut(uri) {
            post.deleted = true;
        }
        Ok(())
    }

    fn recent_posts_by_author(&self, author_id: &str, n: usize) -> StoreResult<Vec<StoredPost>> {
        let inner = self.inner.read().unwrap();
        let start = (author_id.to_string(), 0u64, String::new());
        let mut out = Vec::new();
        for (author, _, uri) in inner.author_index.range(start..) {
            if author != author_id || out.len() >= n {
                break;
            }
            let post = inner.posts.get(uri).expect("index entry has a post row");
            if !post.deleted {
                out.push(post.clone());
            }
        }
        Ok(out)
    }

    fn all_posts(&self) -> StoreResult<Vec<StoredPost>> {
        Ok(self.inner.read().unwrap().posts.values().cloned().collect())
    }

    fn put_interaction(&self, rec: &InteractionRecord) -> StoreResult<bool> {
        let key = (
            rec.actor_id.clone(),
            rec.subject_uri.clone(),
            rec.kind.as_u8(),
        );
        let mut inner = self.inner.write().unwrap();
        if inner.interactions.contains_key(&key) {
            return Ok(false);
        }
        inner.interactions.insert(key, rec.clone());
        Ok(true)
    }

    fn interactions_by_actor(&self, actor_id: &str) -> StoreResult<Vec<InteractionRecord>> {
        let inner = self.inner.read().unwrap();
        let start = (actor_id.to_string(), String::new(), 0u8);
        let mut out: Vec<InteractionRecord> = inner
            .interactions
            .range(start..)
            .take_while(|((actor, _, _), _)| actor == actor_id)
            .map(|(_, v)| v.clone())
            .collect();
        out.sort_by(|a, b| {
            b.created_at
                .cmp(&a.created_at)
                .then_with(|| a.subject_uri.cmp(&b.subject_uri))
                .then_with(|| a.kind.as_u8().cmp(&b.kind.as_u8()))
        });
        Ok(out)
    }

    fn all_interactions(&self) -> StoreResult<Vec<InteractionRecord>> {
        Ok(self
            .inner
            .read()
            .unwrap()
            .interactions
            .values()
            .cloned()
            .collect())
    }

    fn put_user(&self, user: &UserRecord) -> StoreResult<()> {
        if crate::model::is_reserved_user_id(&user.user_id) {
            return Err(super::StoreError::ReservedUserId(user.user_id.clone()));
        }
        self.inner
            .write()
            .unwrap()
            .users
            .insert(user.user_id.clone(), user.clone());
        Ok(())
    }

    fn get_user(&self, user_id: &str) -> StoreResult<Option<UserRecord>> {
        Ok(self.inner.read().unwrap().users.get(user_id).cloned())
    }

    fn update_user(
        &self,
        user_id: &str,
        apply: &mut dyn FnMut(&mut UserRecord),
    ) -> StoreResult<Option<UserRecord>> {
        let mut inner = self.inner.write().unwrap();
        Ok(inner.users.get_mut(user_id).map(|u| {
            apply(u);
            u.clone()
        }))
    }

    fn all_users(&self) -> StoreResult<Vec<UserRecord>> {
        Ok(self.inner.read().unwrap().users.values().cloned().collect())
    }

    fn put_recommendations(&self, rec: &RecommendationList) -> StoreResult<bool> {
        let key = (rec.user_id.clone(), rec.algorithm_id.clone());
        let mut inner = self.inner.write().unwrap();
        match inner.recs.get(&key) {
            Some(existing) if existing.generated_at > rec.generated_at => Ok(false),
            _ => {
                inner.recs.insert(key, rec.clone());
                Ok(true)
            }
        }
    }

    fn get_recommendations(
        &self,
        user_id: &str,
        algorithm_id: &str,
    ) -> StoreResult<Option<RecommendationList>> {
        Ok(self
            .inner
            .read()
            .unwrap()
            .recs
            .get(&(user_id.to_string(), algorithm_id.to_string()))
            .cloned())
    }

    fn all_recommendations(&self) -> StoreResult<Vec<RecommendationList>> {
        Ok(self.inner.read().unwrap().recs.values().cloned().collect())
    }

    fn put_counterfactual(&self, rec: &CounterfactualRecord) -> StoreResult<bool> {
        let key = (
            rec.user_id.clone(),
            rec.algorithm_id.clone(),
            rec.generated_at.micros(),
        );
        let mut inner = self.inner.write().unwrap();
        if inner.counterfactuals.contains_key(&key) {
            return Ok(false);
        }
        inner.counterfactuals.insert(key, rec.clone());
        Ok(true)
    }

    fn all_counterfactuals(&self) -> StoreResult<Vec<CounterfactualRecord>> {
        Ok(self
            .inner
            .read()
            .unwrap()
            .counterfactuals
            .values()
            .cloned()
            .collect())
    }

    fn counterfactuals_for_user(&self, user_id: &str) -> StoreResult<Vec<CounterfactualRecord>> {
        let inner = self.inner.read().unwrap();
        let start = (user_id.to_string(), String::new(), i64::MIN);
        Ok(inner
            .counterfactuals
            .range(start..)
            .take_while(|((u, _, _), _)| u == user_id)
            .map(|(_, v)| v.clone())
            .collect())
    }

    fn append_access_log(&self, log: &AccessLog) -> StoreResult<()> {
        self.inner.write().unwrap().access_logs.push(log.clone());
        Ok(())
    }

    fn all_access_logs(&self) -> StoreResult<Vec<AccessLog>> {
        Ok(self.inner.read().unwrap().access_logs.clone())
    }
}
