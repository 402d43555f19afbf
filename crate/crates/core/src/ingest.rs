//! Firehose ingestion: one producer reads an ordered event stream and
//! routes relevant events through bounded queues to parallel workers that
//! classify and persist paper posts and interactions.
//!
//! Events are routed by their post uri so that a create, its deletions, and
//! its interactions are processed in stream order by the same worker;
//! combined with per-key idempotent writes this makes at-least-once
//! delivery effectively exactly-once.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::atomic::Ordering as AtomicOrdering;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, Sender};

use crate::classify::Classifier;
use crate::metrics::{CounterExt, Metrics};
use crate::model::{EventEnvelope, EventKind, StoredPost, WireEvent};
use crate::store::{SharedStore, StoreError};

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub queue_capacity: usize,
    pub worker_count: usize,
    pub resume_checkpoint_path: Option<PathBuf>,
    pub dead_letter_path: Option<PathBuf>,
    /// Store write retries before an event is dead-lettered.
    pub write_retry_limit: u32,
    pub retry_delay_ms: u64,
    /// Events between checkpoint writes.
    pub checkpoint_every: u64,
    pub reconnect_backoff_ms: u64,
    pub reconnect_backoff_max_ms: u64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            queue_capacity: 1024,
            worker_count: 4,
            resume_checkpoint_path: None,
            dead_letter_path: None,
            write_retry_limit: 3,
            retry_delay_ms: 10,
            checkpoint_every: 100,
            reconnect_backoff_ms: 100,
            reconnect_backoff_max_ms: 30_000,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("stream disconnected: {0}")]
    Disconnected(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("checkpoint: {0}")]
    Checkpoint(std::io::Error),
    #[error("shutdown requested")]
    Shutdown,
}

/// One unit yielded by an event source: either a validated event or a line
/// the source could not decode (dead-lettered downstream, never fatal).
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum StreamItem {
    Event(EventEnvelope),
    Malformed { raw: String, error: String },
}

/// An ordered event stream that can be (re)opened at a resume position.
/// Sources stamp `received_at`; file-backed sources stamp it with the
/// event's own `created_at` so replays are deterministic.
pub trait EventSource: Send {
    /// Position the stream so the next item has seq > `after_seq`.
    fn open(&mut self, after_seq: Option<u64>) -> Result<(), StreamError>;

    /// Ok(None) signals a clean end of stream; Err a disconnect.
    fn next_item(&mut self) -> Result<Option<StreamItem>, StreamError>;
}

/// JSON-lines event file: one [`WireEvent`] object per line.
pub struct JsonlEventSource {
    path: PathBuf,
    reader: Option<BufReader<File>>,
    skip_through: Option<u64>,
}

impl JsonlEventSource {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        JsonlEventSource {
            path: path.into(),
            reader: None,
            skip_through: None,
        }
    }
}

impl EventSource for JsonlEventSource {
    fn open(&mut self, after_seq: Option<u64>) -> Result<(), StreamError> {
        self.reader = Some(BufReader::new(File::open(&self.path)?));
        self.skip_through = after_seq;
        Ok(())
    }

    fn next_item(&mut self) -> Result<Option<StreamItem>, StreamError> {
        let reader = self
            .reader
            .as_mut()
            .ok_or_else(|| StreamError::Disconnected("source not opened".into()))?;
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Ok(None);
            }
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            match serde_json::from_str::<WireEvent>(trimmed) {
                Ok(wire) => {
                    if let Some(after) = self.skip_through {
                        if wire.seq <= after {
                            continue;
                        }
                    }
                    let received_at = wire.created_at;
                    match wire.into_envelope(received_at) {
                        Ok(env) => return Ok(Some(StreamItem::Event(env))),
                        Err(e) => {
                            return Ok(Some(StreamItem::Malformed {
                                raw: trimmed.to_string(),
                                error: e.to_string(),
                            }))
                        }
                    }
                }
                Err(e) => {
                    return Ok(Some(StreamItem::Malformed {
                        raw: trimmed.to_string(),
                        error: e.to_string(),
                    }))
                }
            }
        }
    }
}

/// Scripted source for tests and the replay harness: items interleaved
/// with forced disconnects.
#[allow(clippy::large_enum_variant)]
pub enum ScriptStep {
    Item(StreamItem),
    Disconnect,
}

#[derive(Default)]
pub struct ScriptedSource {
    steps: VecDeque<ScriptStep>,
    resume_floor: Option<u64>,
    honor_resume: bool,
}

impl ScriptedSource {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        ScriptedSource {
            steps: steps.into(),
            resume_floor: None,
            honor_resume: true,
        }
    }

    /// A sloppy source that redelivers already-seen seqs after a resume,
    /// leaving deduplication to the ingest runner.
    pub fn redelivering(steps: Vec<ScriptStep>) -> Self {
        ScriptedSource {
            honor_resume: false,
            ..ScriptedSource::new(steps)
        }
    }
}

impl EventSource for ScriptedSource {
    fn open(&mut self, after_seq: Option<u64>) -> Result<(), StreamError> {
        self.resume_floor = if self.honor_resume { after_seq } else { None };
        Ok(())
    }

    fn next_item(&mut self) -> Result<Option<StreamItem>, StreamError> {
        loop {
            match self.steps.pop_front() {
                None => return Ok(None),
                Some(ScriptStep::Disconnect) => {
                    return Err(StreamError::Disconnected("scripted".into()))
                }
                Some(ScriptStep::Item(StreamItem::Event(env))) => {
                    if let Some(floor) = self.resume_floor {
                        if env.seq <= floor {
                            continue;
                        }
                    }
                    return Ok(Some(StreamItem::Event(env)));
                }
                Some(ScriptStep::Item(item)) => return Ok(Some(item)),
            }
        }
    }
}

struct DeadLetter {
    file: Option<Mutex<File>>,
}

impl DeadLetter {
    fn open(path: Option<&Path>) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(parent) = p.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                Some(Mutex::new(
                    OpenOptions::new().create(true).append(true).open(p)?,
                ))
            }
            None => None,
        };
        Ok(DeadLetter { file })
    }

    /// Same JSON-lines shape as the input, with an appended `error` field.
    fn write(&self, event_json: serde_json::Value, error: &str) {
        let Some(file) = &self.file else { return };
        let mut line = match event_json {
            serde_json::Value::Object(mut map) => {
                map.insert(
                    "error".to_string(),
                    serde_json::Value::String(error.to_string()),
                );
                serde_json::Value::Object(map)
            }
            other => serde_json::json!({ "raw": other, "error": error }),
        };
        if line.get("error").is_none() {
            line["error"] = serde_json::Value::String(error.to_string());
        }
        let mut f = file.lock().unwrap();
        let _ = writeln!(f, "{line}");
    }

    fn write_raw(&self, raw: &str, error: &str) {
        let value = serde_json::from_str::<serde_json::Value>(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        self.write(value, error);
    }
}

/// Tracks events in flight between submit and worker completion so the
/// harness can barrier on a fully drained pipeline.
#[derive(Default)]
struct Pending {
    count: Mutex<u64>,
    zero: Condvar,
}

impl Pending {
    fn inc(&self) {
        *self.count.lock().unwrap() += 1;
    }

    fn dec(&self) {
        let mut n = self.count.lock().unwrap();
        *n -= 1;
        if *n == 0 {
            self.zero.notify_all();
        }
    }

    fn wait_zero(&self) {
        let mut n = self.count.lock().unwrap();
        while *n != 0 {
            n = self.zero.wait(n).unwrap();
        }
    }
}

/// The bounded-queue worker pool. Independent of any particular source;
/// [`run_ingest`] feeds it from an [`EventSource`], the replay harness
/// feeds it directly.
pub struct IngestPipeline {
    senders: Vec<Sender<EventEnvelope>>,
    workers: Vec<JoinHandle<()>>,
    pending: Arc<Pending>,
    dead_letter: Arc<DeadLetter>,
    metrics: Arc<Metrics>,
}

impl IngestPipeline {
    pub fn start(
        store: SharedStore,
        classifier: Arc<Classifier>,
        config: &IngestConfig,
        metrics: Arc<Metrics>,
    ) -> Result<Self, IngestError> {
        let dead_letter = Arc::new(
            DeadLetter::open(config.dead_letter_path.as_deref()).map_err(StreamError::Io)?,
        );
        let pending = Arc::new(Pending::default());
        let worker_count = config.worker_count.max(1);
        let mut senders = Vec::with_capacity(worker_count);
        let mut workers = Vec::with_capacity(worker_count);
        for i in 0..worker_count {
            let (tx, rx) = bounded::<EventEnvelope>(config.queue_capacity.max(1));
            senders.push(tx);
            let ctx = WorkerContext {
                store: Arc::clone(&store),
                classifier: Arc::clone(&classifier),
                dead_letter: Arc::clone(&dead_letter),
                pending: Arc::clone(&pending),
                metrics: Arc::clone(&metrics),
                retry_limit: config.write_retry_limit,
                retry_delay: Duration::from_millis(config.retry_delay_ms),
            };
            workers.push(
                std::thread::Builder::new()
                    .name(format!("ingest-worker-{i}"))
                    .spawn(move || worker_loop(rx, ctx))
                    .expect("spawn ingest worker"),
            );
        }
        Ok(IngestPipeline {
            senders,
            workers,
            pending,
            dead_letter,
            metrics,
        })
    }

    /// Route one event to its worker, blocking when that worker's queue is
    /// full (backpressure; events are never dropped here). Irrelevant kinds
    /// are dropped and counted.
    pub fn submit(&self, event: EventEnvelope) {
        if !event.kind.is_relevant() {
            self.metrics.events_dropped_irrelevant.bump();
            return;
        }
        let key = match event.kind {
            EventKind::PostCreate => event
                .record
                .as_ref()
                .map(|r| r.uri.as_str())
                .unwrap_or_default(),
            _ => event.subject_uri.as_deref().unwrap_or_default(),
        };
        let idx = (fnv1a(key.as_bytes()) % self.senders.len() as u64) as usize;
        self.pending.inc();
        self.metrics.events_enqueued.bump();
        if self.senders[idx].send(event).is_err() {
            // Worker gone during shutdown; account for the lost slot.
            self.pending.dec();
        }
    }

    pub fn dead_letter_raw(&self, raw: &str, error: &str) {
        self.metrics.events_dead_lettered.bump();
        self.dead_letter.write_raw(raw, error);
    }

    /// Block until every submitted event has been fully processed.
    pub fn wait_idle(&self) {
        self.pending.wait_zero();
    }

    /// Drain and stop the workers.
    pub fn shutdown(mut self) {
        self.senders.clear();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn queue_depth(&self) -> usize {
        self.senders.iter().map(Sender::len).sum()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct WorkerContext {
    store: SharedStore,
    classifier: Arc<Classifier>,
    dead_letter: Arc<DeadLetter>,
    pending: Arc<Pending>,
    metrics: Arc<Metrics>,
    retry_limit: u32,
    retry_delay: Duration,
}

fn worker_loop(rx: Receiver<EventEnvelope>, ctx: WorkerContext) {
    while let Ok(event) = rx.recv() {
        process_event(&event, &ctx);
        ctx.pending.dec();
    }
}

fn with_retries<T>(
    ctx: &WorkerContext,
    mut op: impl FnMut() -> Result<T, StoreError>,
) -> Result<T, StoreError> {
    let mut attempt = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if attempt < ctx.retry_limit => {
                attempt += 1;
                tracing::warn!(error = %e, attempt, "store write failed, retrying");
                if !ctx.retry_delay.is_zero() {
                    std::thread::sleep(ctx.retry_delay);
                }
            }
            Err(e) => return Err(e),
        }
    }
}

fn process_event(event: &EventEnvelope, ctx: &WorkerContext) {
    let outcome = match event.kind {
        EventKind::PostCreate => handle_post_create(event, ctx),
        EventKind::PostDelete => handle_post_delete(event, ctx),
        EventKind::Like | EventKind::Repost => handle_interaction(event, ctx),
        EventKind::Follow => Ok(()),
    };
    if let Err(e) = outcome {
        ctx.metrics.events_dead_lettered.bump();
        let json = serde_json::to_value(event.to_wire()).unwrap_or_default();
        ctx.dead_letter.write(json, &e.to_string());
    }
}

fn handle_post_create(event: &EventEnvelope, ctx: &WorkerContext) -> Result<(), StoreError> {
    let payload = event.record.as_ref().expect("validated post_create");
    let result = ctx.classifier.classify(&payload.text, &payload.links);
    if !result.is_paper {
        return Ok(());
    }
    let post = StoredPost {
        uri: payload.uri.clone(),
        author_id: payload.author_id.clone(),
        text: payload.text.clone(),
        links: payload.links.clone(),
        arxiv_ids: result.arxiv_ids,
        created_at: payload.created_at,
        deleted: false,
        ingested_at: event.received_at,
        quote_of: payload.quote_of.clone(),
    };
    if with_retries(ctx, || ctx.store.put_post(&post))? {
        ctx.metrics.posts_stored.bump();
    } else {
        ctx.metrics.posts_duplicate.bump();
    }
    Ok(())
}

fn handle_post_delete(event: &EventEnvelope, ctx: &WorkerContext) -> Result<(), StoreError> {
    let uri = event.subject_uri.as_deref().expect("validated post_delete");
    with_retries(ctx, || ctx.store.mark_deleted(uri))?;
    ctx.metrics.posts_deleted.bump();
    Ok(())
}

fn handle_interaction(event: &EventEnvelope, ctx: &WorkerContext) -> Result<(), StoreError> {
    let subject = event.subject_uri.as_deref().expect("validated interaction");
    if !with_retries(ctx, || ctx.store.contains_post(subject))? {
        ctx.metrics.interactions_dropped_unknown_subject.bump();
        return Ok(());
    }
    let kind = match event.kind {
        EventKind::Like => crate::model::InteractionKind::Like,
        EventKind::Repost => crate::model::InteractionKind::Repost,
        _ => unreachable!(),
    };
    let rec = crate::model::InteractionRecord {
        actor_id: event.actor_id.clone(),
        subject_uri: subject.to_string(),
        kind,
        created_at: event.created_at,
    };
    if with_retries(ctx, || ctx.store.put_interaction(&rec))? {
        ctx.metrics.interactions_stored.bump();
    } else {
        ctx.metrics.interactions_duplicate.bump();
    }
    Ok(())
}

fn read_checkpoint(path: &Path) -> Option<u64> {
    std::fs::read_to_string(path)
        .ok()
        .and_then(|s| s.trim().parse().ok())
}

fn write_checkpoint(path: &Path, seq: u64) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, seq.to_string())?;
    std::fs::rename(&tmp, path)
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct IngestRunStats {
    pub last_seq: Option<u64>,
    pub reconnects: u64,
    pub events_read: u64,
}

/// Consume the source until clean end of stream (or shutdown), feeding the
/// pipeline. Disconnects reconnect with exponential backoff, resuming after
/// the last seen seq; duplicate seqs delivered across a resume are skipped
/// so no event is processed twice with side effects.
pub fn run_ingest(
    source: &mut dyn EventSource,
    pipeline: &IngestPipeline,
    config: &IngestConfig,
    shutdown: &AtomicBool,
) -> Result<IngestRunStats, IngestError> {
    let mut stats = IngestRunStats::default();
    let mut last_seq: Option<u64> = config
        .resume_checkpoint_path
        .as_deref()
        .and_then(read_checkpoint);
    let mut since_checkpoint = 0u64;
    let mut backoff_ms = config.reconnect_backoff_ms.max(1);

    source.open(last_seq)?;
    loop {
        if shutdown.load(AtomicOrdering::Relaxed) {
            break;
        }
        match source.next_item() {
            Ok(Some(StreamItem::Event(event))) => {
                backoff_ms = config.reconnect_backoff_ms.max(1);
                stats.events_read += 1;
                if let Some(seen) = last_seq {
                    if event.seq <= seen {
                        pipeline.metrics.events_skipped_duplicate_seq.bump();
                        continue;
                    }
                }
                last_seq = Some(event.seq);
                pipeline.submit(event);
                since_checkpoint += 1;
                if since_checkpoint >= config.checkpoint_every {
                    since_checkpoint = 0;
                    if let (Some(path), Some(seq)) =
                        (config.resume_checkpoint_path.as_deref(), last_seq)
                    {
                        write_checkpoint(path, seq).map_err(IngestError::Checkpoint)?;
                    }
                }
            }
            Ok(Some(StreamItem::Malformed { raw, error })) => {
                pipeline.dead_letter_raw(&raw, &error);
            }
            Ok(None) => break,
            Err(e) => {
                tracing::warn!(error = %e, backoff_ms, "stream disconnected; reconnecting");
                stats.reconnects += 1;
                pipeline.metrics.stream_reconnects.bump();
                std::thread::sleep(Duration::from_millis(backoff_ms));
                backoff_ms = (backoff_ms * 2).min(config.reconnect_backoff_max_ms.max(1));
                source.open(last_seq)?;
            }
        }
    }
    if let (Some(path), Some(seq)) = (config.resume_checkpoint_path.as_deref(), last_seq) {
        write_checkpoint(path, seq).map_err(IngestError::Checkpoint)?;
    }
    stats.last_seq = last_seq;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InteractionKind, PostPayload};
    use crate::store::memory::MemoryStore;
    use crate::store::Store;
    use crate::time::Timestamp;

    fn paper_event(seq: u64, uri: &str, author: &str, at: i64) -> EventEnvelope {
        WireEvent {
            seq,
            kind: EventKind::PostCreate,
            actor_id: author.to_string(),
            subject_uri: None,
            record: Some(PostPayload {
                uri: uri.to_string(),
                author_id: author.to_string(),
                text: "new preprint".to_string(),
                links: vec!["https://arxiv.org/abs/2501.01234".to_string()],
                created_at: Timestamp::from_micros(at),
                reply_parent: None,
                repost_of: None,
                quote_of: None,
            }),
            created_at: Timestamp::from_micros(at),
        }
        .into_envelope(Timestamp::from_micros(at))
        .unwrap()
    }

    fn simple_event(
        seq: u64,
        kind: EventKind,
        actor: &str,
        subject: &str,
        at: i64,
    ) -> EventEnvelope {
        WireEvent {
            seq,
            kind,
            actor_id: actor.to_string(),
            subject_uri: Some(subject.to_string()),
            record: None,
            created_at: Timestamp::from_micros(at),
        }
        .into_envelope(Timestamp::from_micros(at))
        .unwrap()
    }

    fn follow_event(seq: u64) -> EventEnvelope {
        WireEvent {
            seq,
            kind: EventKind::Follow,
            actor_id: "did:plc:x".to_string(),
            subject_uri: None,
            record: None,
            created_at: Timestamp::from_micros(0),
        }
        .into_envelope(Timestamp::from_micros(0))
        .unwrap()
    }

    fn pipeline_with(store: SharedStore, config: &IngestConfig) -> (IngestPipeline, Arc<Metrics>) {
        let metrics = Arc::new(Metrics::default());
        let pipeline = IngestPipeline::start(
            store,
            Arc::new(Classifier::with_defaults()),
            config,
            Arc::clone(&metrics),
        )
        .unwrap();
        (pipeline, metrics)
    }

    #[test]
    fn kind_routing_drops_irrelevant() {
        let store = Arc::new(MemoryStore::new());
        let (pipeline, metrics) = pipeline_with(store.clone(), &IngestConfig::default());
        pipeline.submit(paper_event(1, "at://p/1", "did:plc:a", 10));
        pipeline.submit(follow_event(2));
        pipeline.submit(simple_event(
            3,
            EventKind::Like,
            "did:plc:b",
            "at://p/1",
            20,
        ));
        pipeline.wait_idle();
        pipeline.shutdown();
        assert_eq!(metrics.events_enqueued.get(), 2);
        assert_eq!(metrics.events_dropped_irrelevant.get(), 1);
        assert_eq!(store.all_posts().unwrap().len(), 1);
        assert_eq!(store.all_interactions().unwrap().len(), 1);
    }

    #[test]
    fn interactions_on_unknown_subjects_are_dropped() {
        let store = Arc::new(MemoryStore::new());
        let (pipeline, metrics) = pipeline_with(store.clone(), &IngestConfig::default());
        pipeline.submit(simple_event(
            1,
            EventKind::Like,
            "did:plc:b",
            "at://missing",
            5,
        ));
        pipeline.wait_idle();
        pipeline.shutdown();
        assert!(store.all_interactions().unwrap().is_empty());
        assert_eq!(metrics.interactions_dropped_unknown_subject.get(), 1);
    }

    #[test]
    fn duplicate_post_create_is_idempotent() {
        let store = Arc::new(MemoryStore::new());
        let (pipeline, metrics) = pipeline_with(store.clone(), &IngestConfig::default());
        pipeline.submit(paper_event(1, "at://p/1", "did:plc:a", 10));
        pipeline.submit(paper_event(2, "at://p/1", "did:plc:a", 10));
        pipeline.wait_idle();
        pipeline.shutdown();
        assert_eq!(store.all_posts().unwrap().len(), 1);
        assert_eq!(metrics.posts_duplicate.get(), 1);
    }

    #[test]
    fn non_paper_posts_are_filtered() {
        let store = Arc::new(MemoryStore::new());
        let (pipeline, _) = pipeline_with(store.clone(), &IngestConfig::default());
        let mut ev = paper_event(1, "at://p/1", "did:plc:a", 10);
        let rec = ev.record.as_mut().unwrap();
        rec.text = "nice weather today".to_string();
        rec.links.clear();
        pipeline.submit(ev);
        pipeline.wait_idle();
        pipeline.shutdown();
        assert!(store.all_posts().unwrap().is_empty());
    }

    #[test]
    fn create_delete_like_sequence_keeps_membership() {
        let store = Arc::new(MemoryStore::new());
        let (pipeline, _) = pipeline_with(store.clone(), &IngestConfig::default());
        pipeline.submit(paper_event(1, "at://p/1", "did:plc:a", 10));
        pipeline.submit(simple_event(
            2,
            EventKind::PostDelete,
            "did:plc:a",
            "at://p/1",
            20,
        ));
        pipeline.submit(simple_event(
            3,
            EventKind::Like,
            "did:plc:b",
            "at://p/1",
            30,
        ));
        pipeline.wait_idle();
        pipeline.shutdown();
        // deleted posts remain members, so the late like is still attributable
        assert!(store.contains_post("at://p/1").unwrap());
        assert!(store.get_post("at://p/1").unwrap().unwrap().deleted);
        let interactions = store.all_interactions().unwrap();
        assert_eq!(interactions.len(), 1);
        assert_eq!(interactions[0].kind, InteractionKind::Like);
    }

    /// Store wrapper whose writes fail a fixed number of times.
    struct FlakyStore {
        inner: MemoryStore,
        failures_left: Mutex<u32>,
    }

    impl FlakyStore {
        fn take_failure(&self) -> bool {
            let mut left = self.failures_left.lock().unwrap();
            if *left > 0 {
                *left -= 1;
                true
            } else {
                false
            }
        }
    }

    impl Store for FlakyStore {
        fn put_post(&self, post: &StoredPost) -> Result<bool, StoreError> {
            if self.take_failure() {
                return Err(StoreError::Unavailable("injected".into()));
            }
            self.inner.put_post(post)
        }
        fn get_post(&self, uri: &str) -> Result<Option<StoredPost>, StoreError> {
            self.inner.get_post(uri)
        }
        fn contains_post(&self, uri: &str) -> Result<bool, StoreError> {
            self.inner.contains_post(uri)
        }
        fn mark_deleted(&self, uri: &str) -> Result<(), StoreError> {
            self.inner.mark_deleted(uri)
        }
        fn recent_posts_by_author(
            &self,
            author_id: &str,
            n: usize,
        ) -> Result<Vec<StoredPost>, StoreError> {
            self.inner.recent_posts_by_author(author_id, n)
        }
        fn all_posts(&self) -> Result<Vec<StoredPost>, StoreError> {
            self.inner.all_posts()
        }
        fn put_interaction(
            &self,
            rec: &crate::model::InteractionRecord,
        ) -> Result<bool, StoreError> {
            self.inner.put_interaction(rec)
        }
        fn interactions_by_actor(
            &self,
            actor_id: &str,
        ) -> Result<Vec<crate::model::InteractionRecord>, StoreError> {
            self.inner.interactions_by_actor(actor_id)
        }
        fn all_interactions(&self) -> Result<Vec<crate::model::InteractionRecord>, StoreError> {
            self.inner.all_interactions()
        }
        fn put_user(&self, user: &crate::model::UserRecord) -> Result<(), StoreError> {
            self.inner.put_user(user)
        }
        fn get_user(&self, user_id: &str) -> Result<Option<crate::model::UserRecord>, StoreError> {
            self.inner.get_user(user_id)
        }
        fn update_user(
            &self,
            user_id: &str,
            apply: &mut dyn FnMut(&mut crate::model::UserRecord),
        ) -> Result<Option<crate::model::UserRecord>, StoreError> {
            self.inner.update_user(user_id, apply)
        }
        fn all_users(&self) -> Result<Vec<crate::model::UserRecord>, StoreError> {
            self.inner.all_users()
        }
        fn put_recommendations(
            &self,
            rec: &crate::model::RecommendationList,
        ) -> Result<bool, StoreError> {
            self.inner.put_recommendations(rec)
        }
        fn get_recommendations(
            &self,
            user_id: &str,
            algorithm_id: &str,
        ) -> Result<Option<crate::model::RecommendationList>, StoreError> {
            self.inner.get_recommendations(user_id, algorithm_id)
        }
        fn all_recommendations(&self) -> Result<Vec<crate::model::RecommendationList>, StoreError> {
            self.inner.all_recommendations()
        }
        fn put_counterfactual(
            &self,
            rec: &crate::model::CounterfactualRecord,
        ) -> Result<bool, StoreError> {
            self.inner.put_counterfactual(rec)
        }
        fn all_counterfactuals(
            &self,
        ) -> Result<Vec<crate::model::CounterfactualRecord>, StoreError> {
            self.inner.all_counterfactuals()
        }
        fn counterfactuals_for_user(
            &self,
            user_id: &str,
        ) -> Result<Vec<crate::model::CounterfactualRecord>, StoreError> {
            self.inner.counterfactuals_for_user(user_id)
        }
        fn append_access_log(&self, log: &crate::model::AccessLog) -> Result<(), StoreError> {
            self.inner.append_access_log(log)
        }
        fn all_access_logs(&self) -> Result<Vec<crate::model::AccessLog>, StoreError> {
            self.inner.all_access_logs()
        }
    }

    #[test]
    fn transient_store_failures_are_retried() {
        let store = Arc::new(FlakyStore {
            inner: MemoryStore::new(),
            failures_left: Mutex::new(2),
        });
        let config = IngestConfig {
            retry_delay_ms: 0,
            write_retry_limit: 3,
            ..IngestConfig::default()
        };
        let (pipeline, metrics) = pipeline_with(store.clone(), &config);
        pipeline.submit(paper_event(1, "at://p/1", "did:plc:a", 10));
        pipeline.wait_idle();
        pipeline.shutdown();
        assert_eq!(store.inner.all_posts().unwrap().len(), 1);
        assert_eq!(metrics.events_dead_lettered.get(), 0);
    }

    #[test]
    fn exhausted_retries_dead_letter_and_continue() {
        let dir = tempfile::tempdir().unwrap();
        let dl_path = dir.path().join("dead.jsonl");
        let store = Arc::new(FlakyStore {
            inner: MemoryStore::new(),
            failures_left: Mutex::new(100),
        });
        let config = IngestConfig {
            retry_delay_ms: 0,
            write_retry_limit: 2,
            dead_letter_path: Some(dl_path.clone()),
            worker_count: 1,
            ..IngestConfig::default()
        };
        let (pipeline, metrics) = pipeline_with(store.clone(), &config);
        pipeline.submit(paper_event(1, "at://p/1", "did:plc:a", 10));
        pipeline.wait_idle();
        pipeline.shutdown();
        assert_eq!(metrics.events_dead_lettered.get(), 1);
        let contents = std::fs::read_to_string(&dl_path).unwrap();
        let line: serde_json::Value =
            serde_json::from_str(contents.lines().next().unwrap()).unwrap();
        assert_eq!(line["seq"], 1);
        assert_eq!(line["kind"], "post_create");
        assert!(line["error"].as_str().unwrap().contains("unavailable"));
    }

    #[test]
    fn backpressure_blocks_producer_without_loss() {
        let store = Arc::new(MemoryStore::new());
        let config = IngestConfig {
            queue_capacity: 1,
            worker_count: 1,
            ..IngestConfig::default()
        };
        let (pipeline, metrics) = pipeline_with(store.clone(), &config);
        let n = 50u64;
        let depth_probe = Arc::new(AtomicBool::new(false));
        let overflow_seen = Arc::clone(&depth_probe);
        let pipeline = Arc::new(pipeline);
        let watcher = {
            let p = Arc::clone(&pipeline);
            std::thread::spawn(move || {
                // watch queue depth while the producer runs
                for _ in 0..2000 {
                    if p.queue_depth() > 1 {
                        overflow_seen.store(true, AtomicOrdering::Relaxed);
                    }
                    std::thread::sleep(Duration::from_micros(200));
                }
            })
        };
        for seq in 1..=n {
            let mut ev = paper_event(seq, &format!("at://p/{seq}"), "did:plc:a", seq as i64);
            // Slow the worker slightly via a bigger payload to keep the queue hot.
            ev.record.as_mut().unwrap().text = "new preprint ".repeat(50);
            pipeline.submit(ev);
        }
        pipeline.wait_idle();
        watcher.join().unwrap();
        assert_eq!(metrics.events_enqueued.get(), n);
        assert_eq!(store.all_posts().unwrap().len(), n as usize);
        assert!(
            !depth_probe.load(AtomicOrdering::Relaxed),
            "queue depth exceeded its capacity bound"
        );
        Arc::try_unwrap(pipeline).ok().unwrap().shutdown();
    }

    #[test]
    fn jsonl_source_round_trip_and_malformed_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let ev = paper_event(1, "at://p/1", "did:plc:a", 10).to_wire();
        let mut body = serde_json::to_string(&ev).unwrap();
        body.push('\n');
        body.push_str("{not json}\n");
        std::fs::write(&path, body).unwrap();

        let mut source = JsonlEventSource::new(&path);
        source.open(None).unwrap();
        assert!(matches!(
            source.next_item().unwrap().unwrap(),
            StreamItem::Event(e) if e.seq == 1
        ));
        assert!(matches!(
            source.next_item().unwrap().unwrap(),
            StreamItem::Malformed { .. }
        ));
        assert!(source.next_item().unwrap().is_none());

        // resume skips already-seen seqs
        source.open(Some(1)).unwrap();
        assert!(matches!(
            source.next_item().unwrap().unwrap(),
            StreamItem::Malformed { .. }
        ));
    }

    #[test]
    fn run_ingest_reconnects_and_resumes_after_seq() {
        let store = Arc::new(MemoryStore::new());
        let config = IngestConfig {
            reconnect_backoff_ms: 1,
            reconnect_backoff_max_ms: 2,
            ..IngestConfig::default()
        };
        let (pipeline, metrics) = pipeline_with(store.clone(), &config);
        // The scripted source redelivers seq 42 after the disconnect; the
        // runner must skip it and process only seq 43 next.
        let mut source = ScriptedSource::redelivering(vec![
            ScriptStep::Item(StreamItem::Event(paper_event(
                41,
                "at://p/41",
                "did:plc:a",
                41,
            ))),
            ScriptStep::Item(StreamItem::Event(paper_event(
                42,
                "at://p/42",
                "did:plc:a",
                42,
            ))),
            ScriptStep::Disconnect,
            ScriptStep::Item(StreamItem::Event(paper_event(
                42,
                "at://p/42",
                "did:plc:a",
                42,
            ))),
            ScriptStep::Item(StreamItem::Event(paper_event(
                43,
                "at://p/43",
                "did:plc:a",
                43,
            ))),
        ]);
        let stats = run_ingest(&mut source, &pipeline, &config, &AtomicBool::new(false)).unwrap();
        pipeline.wait_idle();
        pipeline.shutdown();
        assert_eq!(stats.reconnects, 1);
        assert_eq!(stats.last_seq, Some(43));
        assert_eq!(metrics.events_skipped_duplicate_seq.get(), 1);
        assert_eq!(store.all_posts().unwrap().len(), 3);
        assert_eq!(metrics.posts_duplicate.get(), 0);
    }

    #[test]
    fn checkpoint_written_and_reused() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("resume.seq");
        let store = Arc::new(MemoryStore::new());
        let config = IngestConfig {
            resume_checkpoint_path: Some(ckpt.clone()),
            checkpoint_every: 2,
            ..IngestConfig::default()
        };
        let (pipeline, _) = pipeline_with(store.clone(), &config);
        let mut source = ScriptedSource::new(
            (1..=5)
                .map(|s| {
                    ScriptStep::Item(StreamItem::Event(paper_event(
                        s,
                        &format!("at://p/{s}"),
                        "did:plc:a",
                        s as i64,
                    )))
                })
                .collect(),
        );
        run_ingest(&mut source, &pipeline, &config, &AtomicBool::new(false)).unwrap();
        pipeline.wait_idle();
        assert_eq!(read_checkpoint(&ckpt), Some(5));

        // A fresh run resumes after the checkpoint: nothing is re-read.
        let mut source = ScriptedSource::new(
            (1..=5)
                .map(|s| {
                    ScriptStep::Item(StreamItem::Event(paper_event(
                        s,
                        &format!("at://p/{s}"),
                        "did:plc:a",
                        s as i64,
                    )))
                })
                .collect(),
        );
        let stats = run_ingest(&mut source, &pipeline, &config, &AtomicBool::new(false)).unwrap();
        assert_eq!(stats.events_read, 0);
        pipeline.shutdown();
        assert_eq!(store.all_posts().unwrap().len(), 5);
    }
}
