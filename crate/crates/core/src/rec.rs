//! Offline recommendation pipeline: every cycle, users are shuffled into
//! batches, each batch is generated under every configured algorithm, the
//! top of each ranking is snapshotted for counterfactual analysis, and one
//! randomly chosen batch refreshes the non-personalized default feed.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{CounterExt, Metrics};
use crate::model::{
    is_reserved_user_id, CounterfactualRecord, InteractionKind, RecommendationList, UserRecord,
    CONSENT_VIEWS_MAX, DEFAULT_FEED_USER,
};
use crate::store::{SharedStore, StoreError};
use crate::time::{Clock, Timestamp};

/// Visits during which the onboarding post is prepended.
pub const ONBOARDING_VISITS: u64 = 10;

/// Below this many recommended posts the follow-more prompt and the default
/// feed are appended.
pub const LOW_CONTENT_MIN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Algorithm {
    pub algorithm_id: String,
    pub include_reposts: bool,
    pub include_quotes: bool,
}

impl Algorithm {
    /// The default experience: followed accounts' own posts, newest first.
    pub fn reverse_chronological() -> Self {
        Algorithm {
            algorithm_id: "reverse_chronological".to_string(),
            include_reposts: false,
            include_quotes: false,
        }
    }

    /// The alternative ranking that also surfaces reposts and quote posts.
    pub fn with_reposts() -> Self {
        Algorithm {
            algorithm_id: "with_reposts".to_string(),
            include_reposts: true,
            include_quotes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub batch_id: u64,
    pub user_ids: Vec<String>,
    pub is_default_feed_batch: bool,
}

/// URIs of the operator-published system posts woven into served lists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemPosts {
    /// Thread root(s) of the research-consent explanation.
    pub consent_thread: Vec<String>,
    pub onboarding: String,
    pub follow_more: String,
    pub refresh_prompt: String,
}

impl Default for SystemPosts {
    fn default() -> Self {
        SystemPosts {
            consent_thread: vec!["at://did:plc:operator/app.bsky.feed.post/consent".to_string()],
            onboarding: "at://did:plc:operator/app.bsky.feed.post/onboarding".to_string(),
            follow_more: "at://did:plc:operator/app.bsky.feed.post/follow-more".to_string(),
            refresh_prompt: "at://did:plc:operator/app.bsky.feed.post/refresh".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RecConfig {
    pub period_minutes: u64,
    pub batch_size: usize,
    pub per_author_cap: usize,
    pub list_cap: usize,
    pub counterfactual_cap: usize,
    pub algorithms: Vec<Algorithm>,
    /// Algorithm whose lists are served to users and feed the default feed.
    pub served_algorithm_id: String,
    pub system_posts: SystemPosts,
}

impl Default for RecConfig {
    fn default() -> Self {
        RecConfig {
            period_minutes: 20,
            batch_size: 20,
            per_author_cap: 10,
            list_cap: 150,
            counterfactual_cap: 30,
            algorithms: vec![
                Algorithm::reverse_chronological(),
                Algorithm::with_reposts(),
            ],
            served_algorithm_id: "reverse_chronological".to_string(),
            system_posts: SystemPosts::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FollowsError {
    #[error("follows lookup timed out after {0:?}")]
    Timeout(Duration),
    #[error("follows service unavailable: {0}")]
    Unavailable(String),
}

/// Directory lookup for the accounts a user follows. Pluggable: a live
/// network client or the harness stub.
pub trait FollowsClient: Send + Sync {
    fn get_follows(&self, user_id: &str) -> Result<Vec<String>, FollowsError>;
}

#[derive(Debug, thiserror::Error)]
pub enum RecError {
    #[error(transparent)]
    Follows(#[from] FollowsError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("reserved user id {0:?}")]
    ReservedUser(String),
}

/// Shuffle users with the seeded RNG and chunk them into batches; exactly
/// one batch (uniformly chosen) is flagged to regenerate the default feed.
pub fn dispatch(all_users: &[String], batch_size: usize, rng_seed: u64) -> Vec<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut users = all_users.to_vec();
    users.sort();
    users.shuffle(&mut rng);
    let size = batch_size.max(1);
    let mut batches: Vec<Batch> = users
        .chunks(size)
        .enumerate()
        .map(|(i, chunk)| Batch {
            batch_id: i as u64,
            user_ids: chunk.to_vec(),
            is_default_feed_batch: false,
        })
        .collect();
    if !batches.is_empty() {
        let flagged = rng.gen_range(0..batches.len());
        batches[flagged].is_default_feed_batch = true;
    }
    batches
}

/// In order: consent thread while consent_views < 5, onboarding post while
/// access_count < 10, then the recommendation body, and for low-content
/// bodies the follow-more prompt plus the default feed. The body is never
/// reordered, and the result never repeats a uri.
pub fn assemble_served_list(
    user: &UserRecord,
    rec_uris: &[String],
    default_feed: &[String],
    system: &SystemPosts,
) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(rec_uris.len() + 8);
    let push = |out: &mut Vec<String>, uri: &String| {
        if !out.contains(uri) {
            out.push(uri.clone());
        }
    };
    if user.consent_views < CONSENT_VIEWS_MAX {
        for uri in &system.consent_thread {
            push(&mut out, uri);
        }
    }
    if user.access_count < ONBOARDING_VISITS {
        push(&mut out, &system.onboarding);
    }
    for uri in rec_uris {
        push(&mut out, uri);
    }
    if rec_uris.len() < LOW_CONTENT_MIN {
        push(&mut out, &system.follow_more);
        for uri in default_feed {
            push(&mut out, uri);
        }
    }
    out
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct CycleReport {
    pub batches: usize,
    pub users: usize,
    pub generation_failures: u64,
    pub default_feed_updated: bool,
}

/// Per-cycle memo of author candidates, shared across the users of one
/// dispatch cycle (followed accounts overlap heavily between users).
type CandidateCache =
    std::sync::Mutex<std::collections::HashMap<(String, String), Arc<Vec<(String, Timestamp)>>>>;

pub struct RecEngine {
    store: SharedStore,
    follows: Arc<dyn FollowsClient>,
    clock: Arc<dyn Clock>,
    config: RecConfig,
    metrics: Arc<Metrics>,
}

impl RecEngine {
    pub fn new(
        store: SharedStore,
        follows: Arc<dyn FollowsClient>,
        clock: Arc<dyn Clock>,
        config: RecConfig,
        metrics: Arc<Metrics>,
    ) -> Self {
        RecEngine {
            store,
            follows,
            clock,
            config,
            metrics,
        }
    }

    pub fn config(&self) -> &RecConfig {
        &self.config
    }

    fn fetch_follows(&self, user_id: &str) -> Result<Vec<String>, RecError> {
        self.metrics.follows_calls.bump();
        match self.follows.get_follows(user_id) {
            Ok(follows) => Ok(follows),
            Err(e) => {
                // Stale-is-fine: the previous list stays in place.
                self.metrics.generation_failures.bump();
                Err(e.into())
            }
        }
    }

    /// Candidate (uri, effective time) pairs contributed by one followed
    /// account, at most `per_author_cap` of them, newest first. A repost
    /// enters with the repost time; a quote post is the quoting post itself.
    fn author_candidates(
        &self,
        account: &str,
        algorithm: &Algorithm,
    ) -> Result<Vec<(String, Timestamp)>, RecError> {
        let mut candidates: Vec<(String, Timestamp)> = Vec::new();
        for post in self.store.recent_posts_by_author(account, usize::MAX)? {
            if post.quote_of.is_some() && !algorithm.include_quotes {
                continue;
            }
            candidates.push((post.uri, post.created_at));
        }
        if algorithm.include_reposts {
            for interaction in self.store.interactions_by_actor(account)? {
                if interaction.kind != InteractionKind::Repost {
                    continue;
                }
                if let Some(post) = self.store.get_post(&interaction.subject_uri)? {
                    if !post.deleted {
                        candidates.push((interaction.subject_uri, interaction.created_at));
                    }
                }
            }
        }
        candidates.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        candidates.truncate(self.config.per_author_cap);
        Ok(candidates)
    }

    fn author_candidates_cached(
        &self,
        account: &str,
        algorithm: &Algorithm,
        cache: Option<&CandidateCache>,
    ) -> Result<Arc<Vec<(String, Timestamp)>>, RecError> {
        if let Some(cache) = cache {
            let key = (account.to_string(), algorithm.algorithm_id.clone());
            if let Some(hit) = cache.lock().unwrap().get(&key) {
                return Ok(Arc::clone(hit));
            }
            let computed = Arc::new(self.author_candidates(account, algorithm)?);
            cache.lock().unwrap().insert(key, Arc::clone(&computed));
            Ok(computed)
        } else {
            Ok(Arc::new(self.author_candidates(account, algorithm)?))
        }
    }

    /// Merge all followed accounts' candidates newest-first (ties by uri),
    /// deduplicate, and cap at `list_cap`.
    pub fn rank(&self, follows: &[String], algorithm: &Algorithm) -> Result<Vec<String>, RecError> {
        self.rank_with(follows, algorithm, None)
    }

    fn rank_with(
        &self,
        follows: &[String],
        algorithm: &Algorithm,
        cache: Option<&CandidateCache>,
    ) -> Result<Vec<String>, RecError> {
        let mut merged: Vec<(String, Timestamp)> = Vec::new();
        for account in follows {
            merged.extend(
                self.author_candidates_cached(account, algorithm, cache)?
                    .iter()
                    .cloned(),
            );
        }
        merged.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut seen = std::collections::HashSet::new();
        let mut ranking = Vec::new();
        for (uri, _) in merged {
            if ranking.len() >= self.config.list_cap {
                break;
            }
            if seen.insert(uri.clone()) {
                ranking.push(uri);
            }
        }
        Ok(ranking)
    }

    fn generate_with_follows(
        &self,
        user_id: &str,
        follows: &[String],
        algorithm: &Algorithm,
        cache: Option<&CandidateCache>,
    ) -> Result<RecommendationList, RecError> {
        let ranking = self.rank_with(follows, algorithm, cache)?;
        let generated_at = self.clock.now();
        let list = RecommendationList {
            user_id: user_id.to_string(),
            algorithm_id: algorithm.algorithm_id.clone(),
            post_uris: ranking,
            generated_at,
        };
        self.store.put_recommendations(&list)?;
        let opted_out = self
            .store
            .get_user(user_id)?
            .map(|u| u.opted_out)
            .unwrap_or(false);
        if !opted_out {
            let head = list
                .post_uris
                .iter()
                .take(self.config.counterfactual_cap)
                .cloned()
                .collect();
            self.store.put_counterfactual(&CounterfactualRecord {
                user_id: user_id.to_string(),
                algorithm_id: algorithm.algorithm_id.clone(),
                post_uris: head,
                generated_at,
            })?;
        }
        self.metrics.generations_completed.bump();
        Ok(list)
    }

    /// Generate and persist one user's list under one algorithm, plus its
    /// counterfactual head snapshot.
    pub fn generate_for_user(
        &self,
        user_id: &str,
        algorithm: &Algorithm,
    ) -> Result<RecommendationList, RecError> {
        if is_reserved_user_id(user_id) {
            return Err(RecError::ReservedUser(user_id.to_string()));
        }
        let follows = self.fetch_follows(user_id)?;
        self.generate_with_follows(user_id, &follows, algorithm, None)
    }

    /// One follows fetch, then every configured algorithm.
    pub fn generate_all_for_user(
        &self,
        user_id: &str,
    ) -> Result<Vec<RecommendationList>, RecError> {
        self.generate_all_cached(user_id, None)
    }

    fn generate_all_cached(
        &self,
        user_id: &str,
        cache: Option<&CandidateCache>,
    ) -> Result<Vec<RecommendationList>, RecError> {
        if is_reserved_user_id(user_id) {
            return Err(RecError::ReservedUser(user_id.to_string()));
        }
        let follows = self.fetch_follows(user_id)?;
        let mut lists = Vec::with_capacity(self.config.algorithms.len());
        for algorithm in &self.config.algorithms {
            lists.push(self.generate_with_follows(user_id, &follows, algorithm, cache)?);
        }
        Ok(lists)
    }

    /// Most recent `list_cap` posts across all lists of the flagged batch,
    /// deduplicated, newest first. Returns None when the union is empty
    /// (the previous default feed is then retained).
    pub fn build_default_feed(
        &self,
        batch_lists: &[RecommendationList],
    ) -> Result<Option<Vec<String>>, RecError> {
        let mut seen = std::collections::HashSet::new();
        let mut union: Vec<(String, Timestamp)> = Vec::new();
        for list in batch_lists {
            for uri in &list.post_uris {
                if seen.insert(uri.clone()) {
                    if let Some(post) = self.store.get_post(uri)? {
                        union.push((uri.clone(), post.created_at));
                    }
                }
            }
        }
        if union.is_empty() {
            return Ok(None);
        }
        union.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        union.truncate(self.config.list_cap);
        Ok(Some(union.into_iter().map(|(uri, _)| uri).collect()))
    }

    /// One dispatch-and-generate cycle. Batches run concurrently; a failing
    /// user or batch never blocks the others.
    pub fn run_cycle(&self, rng_seed: u64) -> Result<CycleReport, RecError> {
        let users: Vec<String> = self
            .store
            .all_users()?
            .into_iter()
            .map(|u| u.user_id)
            .filter(|id| !is_reserved_user_id(id))
            .collect();
        let batches = dispatch(&users, self.config.batch_size, rng_seed);
        let mut report = CycleReport {
            batches: batches.len(),
            users: users.len(),
            ..CycleReport::default()
        };
        let cache: CandidateCache = std::sync::Mutex::new(std::collections::HashMap::new());
        let results: Vec<(bool, u64, Vec<RecommendationList>)> = std::thread::scope(|scope| {
            let handles: Vec<_> = batches
                .iter()
                .map(|batch| {
                    let cache = &cache;
                    scope.spawn(move || self.generate_batch(batch, cache))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for (is_default, failures, lists) in results {
            report.generation_failures += failures;
            if is_default {
                if let Some(feed) = self.build_default_feed(&lists)? {
                    self.store.put_recommendations(&RecommendationList {
                        user_id: DEFAULT_FEED_USER.to_string(),
                        algorithm_id: self.config.served_algorithm_id.clone(),
                        post_uris: feed,
                        generated_at: self.clock.now(),
                    })?;
                    report.default_feed_updated = true;
                }
            }
        }
        Ok(report)
    }

    fn generate_batch(
        &self,
        batch: &Batch,
        cache: &CandidateCache,
    ) -> (bool, u64, Vec<RecommendationList>) {
        let mut failures = 0;
        let mut served_lists = Vec::new();
        for user_id in &batch.user_ids {
            match self.generate_all_cached(user_id, Some(cache)) {
                Ok(lists) => {
                    if batch.is_default_feed_batch {
                        served_lists.extend(
                            lists
                                .into_iter()
                                .filter(|l| l.algorithm_id == self.config.served_algorithm_id),
                        );
                    }
                }
                Err(e) => {
                    failures += 1;
                    tracing::warn!(user_id, error = %e, "generation failed; keeping stale recs");
                }
            }
        }
        (batch.is_default_feed_batch, failures, served_lists)
    }

    /// Production scheduler loop: a cycle every `period_minutes`, until the
    /// shutdown flag is raised. Cycle seeds derive from `base_seed` and the
    /// cycle index.
    pub fn run_scheduler(&self, base_seed: u64, shutdown: &AtomicBool) {
        let period = Duration::from_secs(self.config.period_minutes * 60);
        let mut cycle: u64 = 0;
        while !shutdown.load(Ordering::Relaxed) {
            let started = std::time::Instant::now();
            match self.run_cycle(base_seed.wrapping_add(cycle)) {
                Ok(report) => tracing::info!(?report, cycle, "recommendation cycle complete"),
                Err(e) => tracing::error!(error = %e, cycle, "recommendation cycle failed"),
            }
            cycle += 1;
            while started.elapsed() < period {
                if shutdown.load(Ordering::Relaxed) {
                    return;
                }
                std::thread::sleep(Duration::from_millis(200).min(period));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StoredPost;
    use crate::store::memory::MemoryStore;
    use crate::store::Store;
    use crate::time::ManualClock;
    use std::collections::HashMap;

    struct TableFollows(HashMap<String, Vec<String>>);

    impl FollowsClient for TableFollows {
        fn get_follows(&self, user_id: &str) -> Result<Vec<String>, FollowsError> {
            Ok(self.0.get(user_id).cloned().unwrap_or_default())
        }
    }

    struct FailingFollows;

    impl FollowsClient for FailingFollows {
        fn get_follows(&self, _: &str) -> Result<Vec<String>, FollowsError> {
            Err(FollowsError::Unavailable("down".into()))
        }
    }

    fn post(uri: &str, author: &str, at: i64) -> StoredPost {
        StoredPost {
            uri: uri.to_string(),
            author_id: author.to_string(),
            text: String::new(),
            links: vec![],
            arxiv_ids: vec![],
            created_at: Timestamp::from_micros(at),
            deleted: false,
            ingested_at: Timestamp::from_micros(at),
            quote_of: None,
        }
    }

    fn engine_with(
        store: Arc<MemoryStore>,
        follows: HashMap<String, Vec<String>>,
        clock: Arc<ManualClock>,
    ) -> RecEngine {
        RecEngine::new(
            store,
            Arc::new(TableFollows(follows)),
            clock,
            RecConfig::default(),
            Arc::new(Metrics::default()),
        )
    }

    #[test]
    fn dispatch_chunks_into_batches_of_20() {
        let users: Vec<String> = (0..45).map(|i| format!("u{i:02}")).collect();
        let batches = dispatch(&users, 20, 7);
        let sizes: Vec<usize> = batches.iter().map(|b| b.user_ids.len()).collect();
        assert_eq!(sizes, [20, 20, 5]);
        assert_eq!(
            batches.iter().filter(|b| b.is_default_feed_batch).count(),
            1
        );
        // a permutation: every user exactly once
        let mut all: Vec<&String> = batches.iter().flat_map(|b| &b.user_ids).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 45);
    }

    #[test]
    fn dispatch_is_deterministic_under_seed() {
        let users: Vec<String> = (0..100).map(|i| format!("u{i:03}")).collect();
        assert_eq!(dispatch(&users, 20, 42), dispatch(&users, 20, 42));
        assert_ne!(
            dispatch(&users, 20, 1)
                .into_iter()
                .flat_map(|b| b.user_ids)
                .collect::<Vec<_>>(),
            dispatch(&users, 20, 2)
                .into_iter()
                .flat_map(|b| b.user_ids)
                .collect::<Vec<_>>()
        );
    }

    #[test]
    fn dispatch_empty_users_yields_no_batches() {
        assert!(dispatch(&[], 20, 7).is_empty());
    }

    #[test]
    fn default_batch_choice_is_uniform_chi_squared() {
        let users: Vec<String> = (0..100).map(|i| format!("u{i:03}")).collect();
        let mut counts = [0f64; 5];
        for seed in 0..1000u64 {
            let batches = dispatch(&users, 20, seed);
            let flagged = batches
                .iter()
                .position(|b| b.is_default_feed_batch)
                .unwrap();
            counts[flagged] += 1.0;
        }
        let expected = 200.0;
        let chi2: f64 = counts
            .iter()
            .map(|o| (o - expected).powi(2) / expected)
            .sum();
        // chi-square critical value, df=4, alpha=0.01
        assert!(chi2 < 13.2767, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn generate_merges_follows_newest_first() {
        let store = Arc::new(MemoryStore::new());
        for (i, (author, at)) in [
            ("a", 10),
            ("a", 30),
            ("a", 50),
            ("b", 20),
            ("b", 40),
            ("b", 60),
        ]
        .iter()
        .enumerate()
        {
            store
                .put_post(&post(&format!("at://p/{i}"), author, *at))
                .unwrap();
        }
        let clock = ManualClock::new(Timestamp::from_micros(1000));
        let follows = HashMap::from([("u1".to_string(), vec!["a".to_string(), "b".to_string()])]);
        let engine = engine_with(store.clone(), follows, clock);
        let list = engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .unwrap();
        assert_eq!(list.post_uris.len(), 6);
        let times: Vec<i64> = list
            .post_uris
            .iter()
            .map(|u| store.get_post(u).unwrap().unwrap().created_at.micros())
            .collect();
        assert_eq!(times, [60, 50, 40, 30, 20, 10]);
    }

    #[test]
    fn list_cap_and_counterfactual_head() {
        let store = Arc::new(MemoryStore::new());
        let mut follows_list = Vec::new();
        for a in 0..40 {
            let author = format!("author{a:02}");
            for p in 0..12 {
                store
                    .put_post(&post(
                        &format!("at://{author}/p{p:02}"),
                        &author,
                        (a * 100 + p) as i64,
                    ))
                    .unwrap();
            }
            follows_list.push(author);
        }
        let clock = ManualClock::new(Timestamp::from_micros(10_000));
        let follows = HashMap::from([("u1".to_string(), follows_list)]);
        let engine = engine_with(store.clone(), follows, clock);
        let list = engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .unwrap();
        assert_eq!(list.post_uris.len(), 150);
        let cfs = store.counterfactuals_for_user("u1").unwrap();
        assert_eq!(cfs.len(), 1);
        assert_eq!(cfs[0].post_uris.len(), 30);
        assert_eq!(cfs[0].post_uris[..], list.post_uris[..30]);
        // per-author cap: no author contributes more than 10
        let mut per_author: HashMap<String, usize> = HashMap::new();
        for uri in &list.post_uris {
            let author = store.get_post(uri).unwrap().unwrap().author_id;
            *per_author.entry(author).or_default() += 1;
        }
        assert!(per_author.values().all(|&n| n <= 10));
    }

    #[test]
    fn follows_failure_leaves_previous_recs() {
        let store = Arc::new(MemoryStore::new());
        let previous = RecommendationList {
            user_id: "u1".to_string(),
            algorithm_id: "reverse_chronological".to_string(),
            post_uris: vec!["at://p/old".to_string()],
            generated_at: Timestamp::from_micros(5),
        };
        store.put_recommendations(&previous).unwrap();
        let metrics = Arc::new(Metrics::default());
        let engine = RecEngine::new(
            store.clone(),
            Arc::new(FailingFollows),
            ManualClock::new(Timestamp::from_micros(100)),
            RecConfig::default(),
            Arc::clone(&metrics),
        );
        assert!(engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .is_err());
        assert_eq!(
            store
                .get_recommendations("u1", "reverse_chronological")
                .unwrap()
                .unwrap(),
            previous
        );
        assert_eq!(metrics.generation_failures.get(), 1);
    }

    #[test]
    fn opted_out_users_get_no_counterfactuals() {
        let store = Arc::new(MemoryStore::new());
        store.put_post(&post("at://p/1", "a", 10)).unwrap();
        let mut user = UserRecord::new("u1".to_string(), Timestamp::from_micros(0));
        user.opted_out = true;
        store.put_user(&user).unwrap();
        let follows = HashMap::from([("u1".to_string(), vec!["a".to_string()])]);
        let engine = engine_with(
            store.clone(),
            follows,
            ManualClock::new(Timestamp::from_micros(50)),
        );
        let list = engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .unwrap();
        assert_eq!(list.post_uris.len(), 1);
        assert!(store.counterfactuals_for_user("u1").unwrap().is_empty());
    }

    #[test]
    fn quote_and_repost_inclusion_follow_the_algorithm() {
        let store = Arc::new(MemoryStore::new());
        store.put_post(&post("at://a/plain", "a", 10)).unwrap();
        let mut quote = post("at://a/quote", "a", 20);
        quote.quote_of = Some("at://x/other".to_string());
        store.put_post(&quote).unwrap();
        // b reposted someone else's paper post
        store.put_post(&post("at://c/paper", "c", 5)).unwrap();
        store
            .put_interaction(&crate::model::InteractionRecord {
                actor_id: "b".to_string(),
                subject_uri: "at://c/paper".to_string(),
                kind: InteractionKind::Repost,
                created_at: Timestamp::from_micros(30),
            })
            .unwrap();
        let follows = HashMap::from([("u1".to_string(), vec!["a".to_string(), "b".to_string()])]);
        let engine = engine_with(
            store.clone(),
            follows,
            ManualClock::new(Timestamp::from_micros(99)),
        );

        let plain = engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .unwrap();
        assert_eq!(plain.post_uris, vec!["at://a/plain".to_string()]);

        let rich = engine
            .generate_for_user("u1", &Algorithm::with_reposts())
            .unwrap();
        // repost of c's paper enters at repost time 30, quote at 20, plain at 10
        assert_eq!(
            rich.post_uris,
            vec![
                "at://c/paper".to_string(),
                "at://a/quote".to_string(),
                "at://a/plain".to_string(),
            ]
        );
    }

    #[test]
    fn stale_generation_never_overwrites_newer() {
        let store = Arc::new(MemoryStore::new());
        store.put_post(&post("at://p/1", "a", 10)).unwrap();
        store.put_post(&post("at://p/2", "a", 20)).unwrap();
        let clock = ManualClock::new(Timestamp::from_micros(0));
        let follows = HashMap::from([("u1".to_string(), vec!["a".to_string()])]);
        let engine = engine_with(store.clone(), follows, Arc::clone(&clock));

        clock.set(Timestamp::from_micros(2000));
        engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .unwrap();
        // a straggler from an earlier cycle finishes late
        clock.set(Timestamp::from_micros(1000));
        engine
            .generate_for_user("u1", &Algorithm::reverse_chronological())
            .unwrap();
        let stored = store
            .get_recommendations("u1", "reverse_chronological")
            .unwrap()
            .unwrap();
        assert_eq!(stored.generated_at, Timestamp::from_micros(2000));
    }

    #[test]
    fn default_feed_union_dedup_and_cap() {
        let store = Arc::new(MemoryStore::new());
        for i in 0..200 {
            store
                .put_post(&post(&format!("at://p/{i:03}"), "a", i as i64))
                .unwrap();
        }
        let engine = engine_with(
            store.clone(),
            HashMap::new(),
            ManualClock::new(Timestamp::from_micros(0)),
        );
        let list_a = RecommendationList {
            user_id: "u1".to_string(),
            algorithm_id: "reverse_chronological".to_string(),
            post_uris: (0..100).map(|i| format!("at://p/{i:03}")).collect(),
            generated_at: Timestamp::from_micros(0),
        };
        let list_b = RecommendationList {
            user_id: "u2".to_string(),
            post_uris: (100..200).map(|i| format!("at://p/{i:03}")).collect(),
            ..list_a.clone()
        };
        let feed = engine
            .build_default_feed(&[list_a.clone(), list_b])
            .unwrap()
            .unwrap();
        assert_eq!(feed.len(), 150);
        // newest 150 of the 200
        assert_eq!(feed[0], "at://p/199");
        assert_eq!(feed[149], "at://p/050");

        // identical lists collapse to the list itself
        let twice = engine
            .build_default_feed(&[list_a.clone(), list_a.clone()])
            .unwrap()
            .unwrap();
        let mut expected = list_a.post_uris.clone();
        expected.reverse(); // newest first
        assert_eq!(twice, expected);

        assert!(engine.build_default_feed(&[]).unwrap().is_none());
    }

    #[test]
    fn assemble_spec_examples() {
        let system = SystemPosts::default();
        let recs: Vec<String> = (0..150).map(|i| format!("at://p/{i:03}")).collect();
        let default_feed: Vec<String> = (0..150).map(|i| format!("at://d/{i:03}")).collect();

        // brand-new user with full recs
        let new_user = UserRecord::new("u".to_string(), Timestamp::from_micros(0));
        let served = assemble_served_list(&new_user, &recs, &default_feed, &system);
        assert_eq!(served[0], system.consent_thread[0]);
        assert_eq!(served[1], system.onboarding);
        assert_eq!(&served[2..], &recs[..]);

        // steady-state user with low content
        let mut steady = UserRecord::new("u".to_string(), Timestamp::from_micros(0));
        steady.access_count = 50;
        steady.consent_views = 5;
        let four: Vec<String> = recs[..4].to_vec();
        let served = assemble_served_list(&steady, &four, &default_feed, &system);
        assert_eq!(&served[..4], &four[..]);
        assert_eq!(served[4], system.follow_more);
        assert_eq!(&served[5..], &default_feed[..]);

        // steady state with full recs: untouched
        let served = assemble_served_list(&steady, &recs, &default_feed, &system);
        assert_eq!(served, recs);
    }

    #[test]
    fn assemble_dedups_default_feed_against_body() {
        let system = SystemPosts::default();
        let mut user = UserRecord::new("u".to_string(), Timestamp::from_micros(0));
        user.access_count = 50;
        user.consent_views = 5;
        let body = vec!["at://p/1".to_string(), "at://p/2".to_string()];
        let default_feed = vec![
            "at://p/2".to_string(),
            "at://d/1".to_string(),
            "at://p/1".to_string(),
        ];
        let served = assemble_served_list(&user, &body, &default_feed, &system);
        assert_eq!(
            served,
            vec![
                "at://p/1".to_string(),
                "at://p/2".to_string(),
                system.follow_more.clone(),
                "at://d/1".to_string(),
            ]
        );
    }

    #[test]
    fn run_cycle_is_idempotent_on_a_static_world() {
        let store = Arc::new(MemoryStore::new());
        for i in 0..5 {
            store
                .put_post(&post(&format!("at://p/{i}"), "a", i as i64))
                .unwrap();
        }
        for u in 0..3 {
            store
                .put_user(&UserRecord::new(format!("u{u}"), Timestamp::from_micros(0)))
                .unwrap();
        }
        let follows: HashMap<String, Vec<String>> = (0..3)
            .map(|u| (format!("u{u}"), vec!["a".to_string()]))
            .collect();
        let clock = ManualClock::new(Timestamp::from_micros(100));
        let engine = engine_with(store.clone(), follows, Arc::clone(&clock));
        engine.run_cycle(1).unwrap();
        let first = store.all_recommendations().unwrap();
        clock.advance_micros(1_000_000);
        engine.run_cycle(2).unwrap();
        clock.advance_micros(1_000_000);
        engine.run_cycle(3).unwrap();
        let third = store.all_recommendations().unwrap();
        let strip = |lists: Vec<RecommendationList>| {
            lists
                .into_iter()
                .map(|l| (l.user_id, l.algorithm_id, l.post_uris))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(first), strip(third));
        // a user added between cycles gets recs on the next cycle
        store
            .put_user(&UserRecord::new(
                "u3".to_string(),
                Timestamp::from_micros(0),
            ))
            .unwrap();
        clock.advance_micros(1_000_000);
        engine.run_cycle(4).unwrap();
        assert!(store
            .get_recommendations("u3", "reverse_chronological")
            .unwrap()
            .is_some());
    }

    #[test]
    fn reserved_ids_are_rejected() {
        let engine = engine_with(
            Arc::new(MemoryStore::new()),
            HashMap::new(),
            ManualClock::new(Timestamp::from_micros(0)),
        );
        assert!(matches!(
            engine.generate_for_user(DEFAULT_FEED_USER, &Algorithm::reverse_chronological()),
            Err(RecError::ReservedUser(_))
        ));
    }
}
