//! The network-facing feed generator: serves cached, paginated feed
//! skeletons with first-visit handling, fires async regeneration and
//! postprocess work over an internal queue, and exposes the two static
//! identity endpoints.
//!
//! The serving path reads only from the store; follows lookups never happen
//! here.

pub mod http;

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::metrics::{CounterExt, Metrics};
use crate::model::{
    is_reserved_user_id, AccessLog, UserRecord, ANONYMOUS_USER, CONSENT_VIEWS_MAX,
    DEFAULT_FEED_USER,
};
use crate::rec::{assemble_served_list, RecConfig, RecEngine};
use crate::store::{SharedStore, StoreError};
use crate::time::Clock;

pub const MAX_PAGE_LIMIT: u32 = 100;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedConfig {
    /// Domain the service is published under; its DID is `did:web:<domain>`.
    pub service_domain: String,
    /// Feed record URIs this generator serves.
    pub feed_uris: Vec<String>,
    pub port: u16,
    pub default_limit: u32,
    /// Self-ping period for the keep-warm health check.
    pub keep_warm_minutes: u64,
}

impl Default for FeedConfig {
    fn default() -> Self {
        FeedConfig {
            service_domain: "feed.example.com".to_string(),
            feed_uris: vec!["at://did:plc:operator/app.bsky.feed.generator/paper-posts".to_string()],
            port: 3020,
            default_limit: 50,
            keep_warm_minutes: 4,
        }
    }
}

impl FeedConfig {
    pub fn service_did(&self) -> String {
        format!("did:web:{}", self.service_domain)
    }
}

/// Resolved request identity. `user_id` absent means logged-out.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthContext {
    pub raw_token: String,
    pub user_id: Option<String>,
}

impl AuthContext {
    pub fn logged_out() -> Self {
        AuthContext {
            raw_token: String::new(),
            user_id: None,
        }
    }
}

/// Hook for cryptographic token verification. The default accepts every
/// token and trusts the parsed subject claim; deployments can attach a
/// real validator.
pub trait TokenVerifier: Send + Sync {
    fn verify(&self, raw_token: &str) -> bool;
}

/// Accepts all tokens (subject claim parsed, signature unchecked).
#[derive(Debug, Default)]
pub struct NoVerification;

impl TokenVerifier for NoVerification {
    fn verify(&self, _raw_token: &str) -> bool {
        true
    }
}

/// Parse a bearer token into an [`AuthContext`]; anything malformed (or
/// rejected by the verifier) is treated as logged-out.
pub fn parse_bearer_token(raw_token: &str, verifier: &dyn TokenVerifier) -> AuthContext {
    let user_id = decode_subject(raw_token)
        .filter(|_| verifier.verify(raw_token))
        .filter(|sub| !is_reserved_user_id(sub));
    AuthContext {
        raw_token: raw_token.to_string(),
        user_id,
    }
}

fn decode_subject(token: &str) -> Option<String> {
    let mut parts = token.split('.');
    let _header = parts.next()?;
    let payload = parts.next()?;
    let bytes = URL_SAFE_NO_PAD.decode(payload.as_bytes()).ok()?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).ok()?;
    Some(value.get("sub")?.as_str()?.to_string())
}

/// Mint an unsigned JWT-shaped token carrying `sub`; used by the harness
/// and tests in place of platform-issued tokens.
pub fn make_dev_token(user_id: &str) -> String {
    let header = URL_SAFE_NO_PAD.encode(br#"{"alg":"none","typ":"JWT"}"#);
    let payload = URL_SAFE_NO_PAD.encode(
        serde_json::to_vec(&serde_json::json!({ "sub": user_id })).expect("payload encodes"),
    );
    format!("{header}.{payload}.")
}

/// One page of a feed skeleton. `next_cursor` is absent exactly at the end
/// of the list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedPage {
    pub post_uris: Vec<String>,
    pub next_cursor: Option<String>,
}

/// Slice `[cursor, cursor + limit - 1]` of the assembled list; the new
/// cursor is `cursor + limit` while items remain. A malformed cursor reads
/// as 0; a cursor past the end yields an empty terminal page.
pub fn paginate(list: &[String], cursor: Option<&str>, limit: u32) -> FeedPage {
    let cursor: usize = cursor
        .and_then(|c| c.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let limit = limit.clamp(1, MAX_PAGE_LIMIT) as usize;
    if cursor >= list.len() {
        return FeedPage {
            post_uris: Vec::new(),
            next_cursor: None,
        };
    }
    let end = (cursor + limit).min(list.len());
    FeedPage {
        post_uris: list[cursor..end].to_vec(),
        next_cursor: if end < list.len() {
            Some(end.to_string())
        } else {
            None
        },
    }
}

/// Work the serving path hands off; request latency never includes it.
#[derive(Debug, Clone)]
pub enum FeedTask {
    RegenerateRecs {
        user_id: String,
    },
    Postprocess {
        log: AccessLog,
        consent_shown: bool,
        count_access: bool,
    },
}

pub trait TaskSink: Send + Sync {
    fn submit(&self, task: FeedTask);
}

/// Executes feed tasks against the store and the recommendation engine.
pub struct TaskExecutor {
    store: SharedStore,
    engine: Arc<RecEngine>,
    metrics: Arc<Metrics>,
}

impl TaskExecutor {
    pub fn new(store: SharedStore, engine: Arc<RecEngine>, metrics: Arc<Metrics>) -> Self {
        TaskExecutor {
            store,
            engine,
            metrics,
        }
    }

    pub fn execute(&self, task: FeedTask) {
        match task {
            FeedTask::Postprocess {
                log,
                consent_shown,
                count_access,
            } => {
                match self.store.append_access_log(&log) {
                    Ok(()) => self.metrics.access_logs_written.bump(),
                    Err(e) => tracing::warn!(error = %e, "access log write failed"),
                }
                if count_access {
                    let result = self.store.update_user(&log.user_id, &mut |u| {
                        u.access_count += 1;
                        if consent_shown {
                            u.consent_views = (u.consent_views + 1).min(CONSENT_VIEWS_MAX);
                        }
                    });
                    if let Err(e) = result {
                        tracing::warn!(error = %e, user = %log.user_id, "postprocess update failed");
                    }
                }
            }
            FeedTask::RegenerateRecs { user_id } => {
                if let Err(e) = self.engine.generate_all_for_user(&user_id) {
                    // Stale recommendations keep serving.
                    tracing::debug!(error = %e, user = %user_id, "async regeneration failed");
                }
            }
        }
    }
}

/// Background workers draining an unbounded task queue (production mode).
pub struct ThreadedTaskRunner {
    tx: Mutex<Option<crossbeam_channel::Sender<FeedTask>>>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

impl ThreadedTaskRunner {
    pub fn start(executor: Arc<TaskExecutor>, workers: usize) -> Arc<Self> {
        let (tx, rx) = crossbeam_channel::unbounded::<FeedTask>();
        let mut handles = Vec::new();
        for i in 0..workers.max(1) {
            let rx = rx.clone();
            let executor = Arc::clone(&executor);
            handles.push(
                std::thread::Builder::new()
                    .name(format!("feed-task-{i}"))
                    .spawn(move || {
                        while let Ok(task) = rx.recv() {
                            executor.execute(task);
                        }
                    })
                    .expect("spawn task worker"),
            );
        }
        Arc::new(ThreadedTaskRunner {
            tx: Mutex::new(Some(tx)),
            handles: Mutex::new(handles),
        })
    }

    pub fn shutdown(&self) {
        self.tx.lock().unwrap().take();
        for h in self.handles.lock().unwrap().drain(..) {
            let _ = h.join();
        }
    }
}

impl TaskSink for ThreadedTaskRunner {
    fn submit(&self, task: FeedTask) {
        if let Some(tx) = self.tx.lock().unwrap().as_ref() {
            let _ = tx.send(task);
        }
    }
}

/// Queueing sink the harness drains synchronously at deterministic points.
#[derive(Default)]
pub struct CollectingTaskSink {
    queue: Mutex<VecDeque<FeedTask>>,
}

impl CollectingTaskSink {
    pub fn new() -> Arc<Self> {
        Arc::new(CollectingTaskSink::default())
    }

    pub fn len(&self) -> usize {
        self.queue.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Execute queued tasks in submission order; returns how many ran.
    pub fn drain(&self, executor: &TaskExecutor) -> usize {
        let mut ran = 0;
        loop {
            let task = self.queue.lock().unwrap().pop_front();
            match task {
                Some(t) => {
                    executor.execute(t);
                    ran += 1;
                }
                None => return ran,
            }
        }
    }

    /// Drop queued work without executing it.
    pub fn clear(&self) -> usize {
        let mut q = self.queue.lock().unwrap();
        let n = q.len();
        q.clear();
        n
    }
}

impl TaskSink for CollectingTaskSink {
    fn submit(&self, task: FeedTask) {
        self.queue.lock().unwrap().push_back(task);
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FeedError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("unknown feed {0:?}")]
    UnknownFeed(String),
}

pub struct FeedService {
    store: SharedStore,
    config: FeedConfig,
    rec_config: RecConfig,
    tasks: Arc<dyn TaskSink>,
    clock: Arc<dyn Clock>,
    metrics: Arc<Metrics>,
    verifier: Arc<dyn TokenVerifier>,
    describe_body: String,
    did_body: String,
}

impl FeedService {
    pub fn new(
        store: SharedStore,
        config: FeedConfig,
        rec_config: RecConfig,
        tasks: Arc<dyn TaskSink>,
        clock: Arc<dyn Clock>,
        metrics: Arc<Metrics>,
        verifier: Arc<dyn TokenVerifier>,
    ) -> Self {
        // Both identity documents are static and config-derived; rendering
        // them once keeps responses byte-identical across calls.
        let describe_body = serde_json::to_string(&serde_json::json!({
            "did": config.service_did(),
            "feeds": config
                .feed_uris
                .iter()
                .map(|uri| serde_json::json!({ "uri": uri }))
                .collect::<Vec<_>>(),
        }))
        .expect("describe document encodes");
        let did_body = serde_json::to_string(&serde_json::json!({
            "@context": ["https://www.w3.org/ns/did/v1"],
            "id": config.service_did(),
            "service": [{
                "id": "#bsky_fg",
                "type": "BskyFeedGenerator",
                "serviceEndpoint": format!("https://{}", config.service_domain),
            }],
        }))
        .expect("did document encodes");
        FeedService {
            store,
            config,
            rec_config,
            tasks,
            clock,
            metrics,
            verifier,
            describe_body,
            did_body,
        }
    }

    pub fn config(&self) -> &FeedConfig {
        &self.config
    }

    pub fn auth_from_token(&self, raw_token: &str) -> AuthContext {
        parse_bearer_token(raw_token, self.verifier.as_ref())
    }

    fn default_feed(&self) -> Result<Vec<String>, FeedError> {
        Ok(self
            .store
            .get_recommendations(DEFAULT_FEED_USER, &self.rec_config.served_algorithm_id)?
            .map(|r| r.post_uris)
            .unwrap_or_default())
    }

    /// Serve one page. Cache-only: no follows lookups happen on this path;
    /// regeneration and postprocessing are queued as async tasks.
    pub fn get_feed_skeleton(
        &self,
        auth: &AuthContext,
        limit: u32,
        cursor: Option<&str>,
    ) -> Result<FeedPage, FeedError> {
        self.metrics.feed_requests.bump();
        let limit = limit.clamp(1, MAX_PAGE_LIMIT);
        let now = self.clock.now();

        let Some(user_id) = auth.user_id.clone() else {
            // Logged-out: the default feed with normal pagination.
            let feed = self.default_feed()?;
            let page = paginate(&feed, cursor, limit);
            self.tasks.submit(FeedTask::Postprocess {
                log: AccessLog {
                    user_id: ANONYMOUS_USER.to_string(),
                    requested_at: now,
                    limit,
                    cursor: cursor.map(str::to_string),
                    served_uris: page.post_uris.clone(),
                },
                consent_shown: false,
                count_access: false,
            });
            return Ok(page);
        };

        match self.store.get_user(&user_id)? {
            None => {
                // First visit: register the user, kick off offline
                // generation, and serve a single refresh prompt.
                self.store
                    .put_user(&UserRecord::new(user_id.clone(), now))?;
                let page = FeedPage {
                    post_uris: vec![self.rec_config.system_posts.refresh_prompt.clone()],
                    next_cursor: None,
                };
                self.tasks.submit(FeedTask::Postprocess {
                    log: AccessLog {
                        user_id: user_id.clone(),
                        requested_at: now,
                        limit,
                        cursor: cursor.map(str::to_string),
                        served_uris: page.post_uris.clone(),
                    },
                    consent_shown: false,
                    count_access: false,
                });
                self.tasks.submit(FeedTask::RegenerateRecs { user_id });
                Ok(page)
            }
            Some(user) => {
                let recs = self
                    .store
                    .get_recommendations(&user_id, &self.rec_config.served_algorithm_id)?
                    .map(|r| r.post_uris)
                    .unwrap_or_default();
                let default_feed = self.default_feed()?;
                let assembled = assemble_served_list(
                    &user,
                    &recs,
                    &default_feed,
                    &self.rec_config.system_posts,
                );
                let page = paginate(&assembled, cursor, limit);
                let consent_shown = user.consent_views < CONSENT_VIEWS_MAX
                    && page
                        .post_uris
                        .iter()
                        .any(|u| self.rec_config.system_posts.consent_thread.contains(u));
                self.tasks.submit(FeedTask::Postprocess {
                    log: AccessLog {
                        user_id: user_id.clone(),
                        requested_at: now,
                        limit,
                        cursor: cursor.map(str::to_string),
                        served_uris: page.post_uris.clone(),
                    },
                    consent_shown,
                    count_access: true,
                });
                self.tasks.submit(FeedTask::RegenerateRecs { user_id });
                Ok(page)
            }
        }
    }

    /// Static description document listing the published feeds.
    pub fn describe_feed_generator(&self) -> &str {
        &self.describe_body
    }

    /// Static identity document served at /.well-known/did.json.
    pub fn did_document(&self) -> &str {
        &self.did_body
    }

    pub fn knows_feed(&self, feed_uri: &str) -> bool {
        self.config.feed_uris.iter().any(|u| u == feed_uri)
    }

    pub fn default_page_limit(&self) -> u32 {
        self.config.default_limit
    }
}

/// Liveness self-ping, fired every `period` of driven time. In a long-lived
/// process this is a health check; the ping count is the liveness metric.
pub struct KeepWarm {
    period_micros: i64,
    next_due: Mutex<Option<i64>>,
    metrics: Arc<Metrics>,
}

impl KeepWarm {
    pub fn new(period_secs: u64, metrics: Arc<Metrics>) -> Self {
        KeepWarm {
            period_micros: (period_secs.max(1) as i64) * crate::time::MICROS_PER_SECOND,
            next_due: Mutex::new(None),
            metrics,
        }
    }

    pub fn ping(&self) {
        self.metrics.keep_warm_pings.bump();
    }

    /// Drive from any loop; fires every ping that has come due by `now`.
    pub fn tick(&self, now: crate::time::Timestamp) -> u64 {
        let mut due = self.next_due.lock().unwrap();
        let due = due.get_or_insert(now.micros() + self.period_micros);
        let mut fired = 0;
        while now.micros() >= *due {
            self.ping();
            *due += self.period_micros;
            fired += 1;
        }
        fired
    }
}
