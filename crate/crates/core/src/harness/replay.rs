//! End-to-end replay: pipes a generated world through ingest, fires
//! recommendation cycles on the 20-minute grid of a virtual clock, issues
//! feed requests per the access schedule, simulates position-biased likes,
//! and verifies the cross-module invariants.
//!
//! Everything flows through the public module interfaces; the harness never
//! touches storage directly.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytics::UserLike;
use crate::classify::Classifier;
use crate::feed::{
    make_dev_token, CollectingTaskSink, FeedConfig, FeedService, KeepWarm, NoVerification,
    TaskExecutor,
};
use crate::ingest::{IngestConfig, IngestPipeline};
use crate::metrics::{CounterExt, Metrics};
use crate::model::{EventKind, WireEvent, DEFAULT_FEED_USER};
use crate::rec::{assemble_served_list, RecConfig, RecEngine};
use crate::store::memory::MemoryStore;
use crate::store::SharedStore;
use crate::time::{ManualClock, Timestamp, MICROS_PER_MINUTE, MICROS_PER_SECOND};

use super::follows::StubFollowsClient;
use super::world::{
    load_follows, load_organic_likes, load_schedule, load_truth, GroundTruth, WorldPaths,
};
use super::HarnessError;

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    /// Base seed for per-cycle dispatch shuffles.
    pub rec_seed: u64,
    /// Seed for the simulated like/repost behavior.
    pub behavior_seed: u64,
    /// Users sampled for the end-of-run pagination completeness check.
    pub pagination_sample: usize,
    pub rec_config: RecConfig,
    pub ingest_config: IngestConfig,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        ReplayOptions {
            rec_seed: 101,
            behavior_seed: 202,
            pagination_sample: 5,
            rec_config: RecConfig::default(),
            ingest_config: IngestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub details: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    pub counters: BTreeMap<String, u64>,
    pub requests_served: u64,
    pub cycles_run: u64,
    pub feed_likes_injected: u64,
    pub feed_reposts_injected: u64,
}

impl RunReport {
    pub fn first_failure(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| !c.passed)
    }
}

pub struct ReplayResult {
    pub report: RunReport,
    pub store: SharedStore,
    /// Organic likes from the event log plus simulated feed-driven likes.
    pub all_likes: Vec<UserLike>,
    pub truth: GroundTruth,
}

struct CycleTruth {
    at: Timestamp,
    /// (user_id, opted_out) as of dispatch time.
    users: Vec<(String, bool)>,
}

/// Replay a generated world end to end over a virtual clock.
pub fn replay_world(
    events_path: &Path,
    options: &ReplayOptions,
) -> Result<ReplayResult, HarnessError> {
    let paths = WorldPaths::rooted_at(events_path);
    let truth = load_truth(&paths.truth)?;
    let follows_table = load_follows(&paths.follows)?;
    let schedule = load_schedule(&paths.schedule)?;
    let mut all_likes = load_organic_likes(&paths.organic_likes)?;
    let spec = &truth.spec;

    let clock = ManualClock::new(spec.start_time);
    let store: Arc<MemoryStore> = Arc::new(MemoryStore::new());
    let shared: SharedStore = store.clone();
    let metrics = Arc::new(Metrics::default());
    let classifier = Arc::new(Classifier::with_defaults());

    let pipeline = IngestPipeline::start(
        shared.clone(),
        Arc::clone(&classifier),
        &options.ingest_config,
        Arc::clone(&metrics),
    )?;

    let follows_client = Arc::new(StubFollowsClient::new(
        follows_table.clone().into_iter().collect(),
    ));
    let engine = Arc::new(RecEngine::new(
        shared.clone(),
        follows_client.clone(),
        clock.clone(),
        options.rec_config.clone(),
        Arc::clone(&metrics),
    ));
    let sink = CollectingTaskSink::new();
    let executor = TaskExecutor::new(shared.clone(), Arc::clone(&engine), Arc::clone(&metrics));
    let feed_config = FeedConfig::default();
    let keep_warm = KeepWarm::new(feed_config.keep_warm_minutes * 60, Arc::clone(&metrics));
    let service = FeedService::new(
        shared.clone(),
        feed_config,
        options.rec_config.clone(),
        sink.clone(),
        clock.clone(),
        Arc::clone(&metrics),
        Arc::new(NoVerification),
    );

    // --- timeline ------------------------------------------------------
    let reader = BufReader::new(std::fs::File::open(&paths.events)?);
    let mut events: Vec<WireEvent> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            events.push(serde_json::from_str(&line)?);
        }
    }
    let horizon = spec.start_time.plus_days(spec.simulated_days as i64);
    let period_micros = options.rec_config.period_minutes as i64 * MICROS_PER_MINUTE;

    let mut behavior_rng = ChaCha8Rng::seed_from_u64(options.behavior_seed);
    let mut next_seq: u64 = 0;
    let mut seen_pairs: HashSet<(String, String)> = HashSet::new();
    let mut cycle_truths: Vec<CycleTruth> = Vec::new();
    let mut requests_served: u64 = 0;
    let mut likes_injected: u64 = 0;
    let mut reposts_injected: u64 = 0;
    let mut serving_follows_violations: u64 = 0;

    let mut event_idx = 0usize;
    let mut sched_idx = 0usize;
    let mut optout_idx = 0usize;
    let mut next_cycle = spec.start_time;
    let opt_outs = &truth.opt_outs;

    // Merge the four time-sorted streams; at equal times events apply
    // first, then cycles, then opt-outs, then accesses.
    loop {
        let t_event = events.get(event_idx).map(|e| e.created_at);
        let t_sched = schedule.get(sched_idx).map(|s| s.at);
        let t_opt = opt_outs.get(optout_idx).map(|o| o.at);
        let t_cycle = if next_cycle <= horizon {
            Some(next_cycle)
        } else {
            None
        };
        let candidates = [(t_event, 0u8), (t_cycle, 1u8), (t_opt, 2u8), (t_sched, 3u8)];
        let Some((at, which)) = candidates
            .iter()
            .filter_map(|(t, p)| t.map(|t| (t, *p)))
            .min()
        else {
            break;
        };
        clock.set(at);
        keep_warm.tick(at);

        match which {
            0 => {
                let mut wire = events[event_idx].clone();
                event_idx += 1;
                next_seq += 1;
                wire.seq = next_seq;
                match wire.into_envelope(at) {
                    Ok(env) => pipeline.submit(env),
                    Err(e) => pipeline.dead_letter_raw("<generated>", &e.to_string()),
                }
            }
            1 => {
                next_cycle = next_cycle.plus_micros(period_micros);
                pipeline.wait_idle();
                let users: Vec<(String, bool)> = shared
                    .all_users()?
                    .into_iter()
                    .map(|u| (u.user_id, u.opted_out))
                    .collect();
                engine.run_cycle(options.rec_seed.wrapping_add(cycle_truths.len() as u64))?;
                cycle_truths.push(CycleTruth { at, users });
            }
            2 => {
                let action = &opt_outs[optout_idx];
                optout_idx += 1;
                shared.update_user(&action.user_id, &mut |u| {
                    u.opted_out = true;
                    u.opted_out_at = Some(action.at);
                })?;
            }
            3 => {
                let entry = &schedule[sched_idx];
                sched_idx += 1;
                pipeline.wait_idle();
                let auth = service.auth_from_token(&make_dev_token(&entry.user_id));
                let mut cursor: Option<String> = None;
                for _page in 0..entry.pages.max(1) {
                    let calls_before = metrics.follows_calls.get();
                    let page = service.get_feed_skeleton(&auth, entry.limit, cursor.as_deref())?;
                    if metrics.follows_calls.get() != calls_before {
                        serving_follows_violations += 1;
                    }
                    requests_served += 1;
                    // position-biased simulated engagement on first exposure
                    for (idx, uri) in page.post_uris.iter().enumerate() {
                        if !shared.contains_post(uri)? {
                            continue;
                        }
                        let pair = (entry.user_id.clone(), uri.clone());
                        if !seen_pairs.insert(pair) {
                            continue;
                        }
                        let p = spec.like_probability(idx + 1);
                        let delta = behavior_rng.gen_range(1..=10) * MICROS_PER_SECOND;
                        if behavior_rng.gen_range(0.0..1.0) < p {
                            next_seq += 1;
                            let like = WireEvent {
                                seq: next_seq,
                                kind: EventKind::Like,
                                actor_id: entry.user_id.clone(),
                                subject_uri: Some(uri.clone()),
                                record: None,
                                created_at: at.plus_micros(delta),
                            };
                            pipeline.submit(like.into_envelope(at).expect("valid like"));
                            all_likes.push(UserLike {
                                user_id: entry.user_id.clone(),
                                created_at: at.plus_micros(delta),
                                is_paper: true,
                            });
                            likes_injected += 1;
                        }
                        if behavior_rng.gen_range(0.0..1.0) < p * spec.repost_factor {
                            next_seq += 1;
                            let repost = WireEvent {
                                seq: next_seq,
                                kind: EventKind::Repost,
                                actor_id: entry.user_id.clone(),
                                subject_uri: Some(uri.clone()),
                                record: None,
                                created_at: at.plus_micros(delta + MICROS_PER_SECOND),
                            };
                            pipeline.submit(repost.into_envelope(at).expect("valid repost"));
                            reposts_injected += 1;
                        }
                    }
                    match page.next_cursor {
                        Some(next) => cursor = Some(next),
                        None => break,
                    }
                }
                // async postprocess + regeneration, drained deterministically
                pipeline.wait_idle();
                sink.drain(&executor);
            }
            _ => unreachable!(),
        }
    }

    pipeline.wait_idle();
    sink.drain(&executor);

    // --- invariant checks ------------------------------------------------
    let mut checks = Vec::new();
    let posts = shared.all_posts()?;
    let post_times: HashMap<&str, Timestamp> = posts
        .iter()
        .map(|p| (p.uri.as_str(), p.created_at))
        .collect();
    let post_authors: HashMap<&str, &str> = posts
        .iter()
        .map(|p| (p.uri.as_str(), p.author_id.as_str()))
        .collect();

    checks.push(CheckResult {
        name: "stored_posts_match_classifier".into(),
        passed: posts.len() as u64 == truth.expected_paper_posts,
        details: format!(
            "stored {} vs classifier-passing creates {}",
            posts.len(),
            truth.expected_paper_posts
        ),
    });

    let recs = shared.all_recommendations()?;
    let served_algo = &options.rec_config.served_algorithm_id;
    let mut inversions = 0u64;
    let mut author_cap_violations = 0u64;
    let mut dup_violations = 0u64;
    let mut cap_violations = 0u64;
    for list in recs.iter().filter(|l| l.algorithm_id == *served_algo) {
        if list.post_uris.len() > options.rec_config.list_cap {
            cap_violations += 1;
        }
        let mut uniq = HashSet::new();
        if !list.post_uris.iter().all(|u| uniq.insert(u)) {
            dup_violations += 1;
        }
        for pair in list.post_uris.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            let (ta, tb) = (post_times.get(a.as_str()), post_times.get(b.as_str()));
            if let (Some(ta), Some(tb)) = (ta, tb) {
                if ta < tb || (ta == tb && a >= b) {
                    inversions += 1;
                }
            }
        }
        if list.user_id != DEFAULT_FEED_USER {
            let mut per_author: HashMap<&str, usize> = HashMap::new();
            for uri in &list.post_uris {
                if let Some(author) = post_authors.get(uri.as_str()) {
                    *per_author.entry(author).or_default() += 1;
                }
            }
            if per_author
                .values()
                .any(|&n| n > options.rec_config.per_author_cap)
            {
                author_cap_violations += 1;
            }
        }
    }
    checks.push(CheckResult {
        name: "served_bodies_reverse_chronological".into(),
        passed: inversions == 0,
        details: format!("adjacent inversions = {inversions}"),
    });
    checks.push(CheckResult {
        name: "per_author_cap".into(),
        passed: author_cap_violations == 0,
        details: format!("lists exceeding the cap = {author_cap_violations}"),
    });
    checks.push(CheckResult {
        name: "rec_lists_capped_and_duplicate_free".into(),
        passed: dup_violations == 0 && cap_violations == 0,
        details: format!("dup lists = {dup_violations}, over-cap lists = {cap_violations}"),
    });

    let counterfactuals = shared.all_counterfactuals()?;
    let mut cf_index: HashMap<(&str, &str, i64), usize> = HashMap::new();
    for cf in &counterfactuals {
        *cf_index
            .entry((
                cf.user_id.as_str(),
                cf.algorithm_id.as_str(),
                cf.generated_at.micros(),
            ))
            .or_default() += 1;
    }
    let mut cf_missing = 0u64;
    let mut cf_extra = 0u64;
    for cycle in &cycle_truths {
        for (user, opted_out) in &cycle.users {
            for algo in &options.rec_config.algorithms {
                let n = cf_index
                    .get(&(user.as_str(), algo.algorithm_id.as_str(), cycle.at.micros()))
                    .copied()
                    .unwrap_or(0);
                match (opted_out, n) {
                    (false, 1) | (true, 0) => {}
                    (false, 0) => cf_missing += 1,
                    _ => cf_extra += 1,
                }
            }
        }
    }
    checks.push(CheckResult {
        name: "counterfactual_completeness_per_cycle".into(),
        passed: cf_missing == 0 && cf_extra == 0,
        details: format!("missing = {cf_missing}, unexpected = {cf_extra}"),
    });

    let mut optout_cf_violations = 0u64;
    for action in opt_outs {
        let after = counterfactuals
            .iter()
            .filter(|cf| cf.user_id == action.user_id && cf.generated_at > action.at)
            .count();
        optout_cf_violations += after as u64;
    }
    let users = shared.all_users()?;
    let logs = shared.all_access_logs()?;
    let visible = crate::analytics::visible_access_logs(&users, &logs);
    let mut optout_log_violations = 0u64;
    for action in opt_outs {
        optout_log_violations += visible
            .iter()
            .filter(|l| l.user_id == action.user_id && l.requested_at >= action.at)
            .count() as u64;
    }
    checks.push(CheckResult {
        name: "optout_stops_counterfactuals_and_visible_logs".into(),
        passed: optout_cf_violations == 0 && optout_log_violations == 0,
        details: format!(
            "counterfactuals after opt-out = {optout_cf_violations}, visible logs = {optout_log_violations}"
        ),
    });

    let mut deletion_violations = 0u64;
    for uri in &truth.deleted_uris {
        let row = shared.get_post(uri)?;
        let member = shared.contains_post(uri)?;
        let hidden = match &row {
            Some(post) => shared
                .recent_posts_by_author(&post.author_id, usize::MAX)?
                .iter()
                .all(|p| p.uri != *uri),
            None => false,
        };
        if !(member && row.map(|p| p.deleted).unwrap_or(false) && hidden) {
            deletion_violations += 1;
        }
    }
    checks.push(CheckResult {
        name: "deleted_posts_stay_members_but_leave_the_index".into(),
        passed: deletion_violations == 0,
        details: format!(
            "violations = {deletion_violations} over {} deletions",
            truth.deleted_uris.len()
        ),
    });

    let interactions = shared.all_interactions()?;
    let orphan_interactions = interactions
        .iter()
        .filter(|i| !post_times.contains_key(i.subject_uri.as_str()))
        .count();
    checks.push(CheckResult {
        name: "interactions_only_on_paper_posts".into(),
        passed: orphan_interactions == 0,
        details: format!("orphans = {orphan_interactions} of {}", interactions.len()),
    });

    let over_limit = logs
        .iter()
        .filter(|l| l.served_uris.len() > l.limit as usize)
        .count();
    checks.push(CheckResult {
        name: "one_access_log_per_request_within_limit".into(),
        passed: logs.len() as u64 == requests_served && over_limit == 0,
        details: format!(
            "logs = {}, requests = {requests_served}, over-limit = {over_limit}",
            logs.len()
        ),
    });

    checks.push(CheckResult {
        name: "serving_path_makes_no_follows_calls".into(),
        passed: serving_follows_violations == 0,
        details: format!("violations = {serving_follows_violations}"),
    });

    // pagination completeness on a sample of users, against a directly
    // assembled expectation (state frozen: probe tasks are discarded)
    let mut pagination_failures = 0u64;
    let mut sample_users: Vec<String> = users.iter().map(|u| u.user_id.clone()).collect();
    sample_users.sort();
    sample_users.truncate(options.pagination_sample);
    for user_id in &sample_users {
        let Some(user) = shared.get_user(user_id)? else {
            continue;
        };
        let recs = shared
            .get_recommendations(user_id, served_algo)?
            .map(|r| r.post_uris)
            .unwrap_or_default();
        let default_feed = shared
            .get_recommendations(DEFAULT_FEED_USER, served_algo)?
            .map(|r| r.post_uris)
            .unwrap_or_default();
        let expected = assemble_served_list(
            &user,
            &recs,
            &default_feed,
            &options.rec_config.system_posts,
        );
        let auth = service.auth_from_token(&make_dev_token(user_id));
        for limit in [1u32, 10, 30, 100] {
            let mut collected = Vec::new();
            let mut cursor: Option<String> = None;
            loop {
                let page = service.get_feed_skeleton(&auth, limit, cursor.as_deref())?;
                collected.extend(page.post_uris);
                match page.next_cursor {
                    Some(c) => cursor = Some(c),
                    None => break,
                }
            }
            if collected != expected {
                pagination_failures += 1;
            }
        }
    }
    sink.clear();
    checks.push(CheckResult {
        name: "pagination_reproduces_assembled_list".into(),
        passed: pagination_failures == 0,
        details: format!(
            "failures = {pagination_failures} over {} users x 4 limits",
            sample_users.len()
        ),
    });

    pipeline.shutdown();

    all_likes.sort_by(|a, b| {
        a.created_at
            .cmp(&b.created_at)
            .then_with(|| a.user_id.cmp(&b.user_id))
    });

    let report = RunReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        counters: metrics.snapshot(),
        requests_served,
        cycles_run: cycle_truths.len() as u64,
        feed_likes_injected: likes_injected,
        feed_reposts_injected: reposts_injected,
    };

    Ok(ReplayResult {
        report,
        store: shared,
        all_likes,
        truth,
    })
}

/// Write the store exports, realized likes, and the run report next to the
/// given directory for the analytics CLI.
pub fn write_replay_outputs(result: &ReplayResult, out_dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(out_dir)?;
    for (table, body) in crate::store::export_all(result.store.as_ref())? {
        std::fs::write(out_dir.join(format!("{table}.jsonl")), body)?;
    }
    let mut likes = String::new();
    for like in &result.all_likes {
        likes.push_str(&serde_json::to_string(like)?);
        likes.push('\n');
    }
    std::fs::write(out_dir.join("all_likes.jsonl"), likes)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&result.report)?,
    )?;
    Ok(())
}
