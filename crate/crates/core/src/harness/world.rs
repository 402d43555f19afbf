//! Deterministic synthetic-world generation: accounts, a follow graph,
//! posting schedules, organic interactions, and a feed-access schedule,
//! emitted as replayable files.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::UserLike;
use crate::classify::{ArxivCatalog, Classifier};
use crate::model::{EventKind, PostPayload, WireEvent};
use crate::time::{Timestamp, MICROS_PER_DAY, MICROS_PER_SECOND};

use super::HarnessError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub rng_seed: u64,
    /// Feed users (non-bot accounts); all of them also post.
    pub n_users: usize,
    /// Bot accounts added on top of `n_users`, as a fraction of it.
    pub bot_fraction: f64,
    pub follow_mean: f64,
    /// 0 means "no explicit cap" (defaults to all other accounts).
    pub follow_max: usize,
    pub paper_post_rate: f64,
    pub non_paper_post_rate: f64,
    pub bot_post_rate: f64,
    /// Fraction of paper posts that are quote posts.
    pub quote_fraction: f64,
    /// Fraction of paper posts that classify by keywords only (no links).
    pub keyword_only_fraction: f64,
    /// Fraction of paper posts linking somewhere other than arXiv.
    pub non_arxiv_link_fraction: f64,
    pub deletion_fraction: f64,
    pub simulated_days: u32,
    /// Day on which users start visiting the feed.
    pub access_start_day: u32,
    pub accesses_per_user_per_day: f64,
    pub page_limit: u32,
    /// Probability that an access also pulls the next page.
    pub continuation_prob: f64,
    /// Like probability by 1-based feed position; nonincreasing; positions
    /// beyond the end use the last value.
    pub position_bias_curve: Vec<f64>,
    /// Repost probability = like probability x this factor.
    pub repost_factor: f64,
    /// Scripted likes of paper posts, per user per day.
    pub organic_like_rate: f64,
    /// Scripted likes of non-paper posts, per user per day.
    pub organic_nonpaper_like_rate: f64,
    /// Fraction of organic paper-post likes that are reposts instead.
    pub organic_repost_fraction: f64,
    /// Fraction of users who opt out of research data collection mid-run.
    pub opt_out_fraction: f64,
    /// Irrelevant (follow) events per day, to exercise kind filtering.
    pub follow_event_rate: f64,
    pub start_time: Timestamp,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            rng_seed: 7,
            n_users: 50,
            bot_fraction: 0.06,
            follow_mean: 30.0,
            follow_max: 0,
            paper_post_rate: 1.5,
            non_paper_post_rate: 1.0,
            bot_post_rate: 40.0,
            quote_fraction: 0.10,
            keyword_only_fraction: 0.15,
            non_arxiv_link_fraction: 0.30,
            deletion_fraction: 0.02,
            simulated_days: 7,
            access_start_day: 0,
            accesses_per_user_per_day: 3.0,
            page_limit: 30,
            continuation_prob: 0.15,
            position_bias_curve: default_position_bias(),
            repost_factor: 0.25,
            organic_like_rate: 1.0,
            organic_nonpaper_like_rate: 2.0,
            organic_repost_fraction: 0.2,
            opt_out_fraction: 0.04,
            follow_event_rate: 5.0,
            start_time: Timestamp::from_micros(1_741_564_800_000_000), // 2025-03-10T00:00:00Z
        }
    }
}

/// Rank-1 like probability is exactly 4x rank 5.
pub fn default_position_bias() -> Vec<f64> {
    vec![
        0.30, 0.24, 0.19, 0.15, 0.075, 0.056, 0.042, 0.032, 0.024, 0.018, 0.015, 0.013, 0.011,
        0.010, 0.009, 0.008, 0.007, 0.006, 0.005, 0.005, 0.004, 0.004, 0.003, 0.003, 0.003, 0.002,
        0.002, 0.002, 0.002, 0.002,
    ]
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let total_accounts = self.n_users + self.n_bots();
        let frac_fields = [
            ("bot_fraction", self.bot_fraction),
            ("quote_fraction", self.quote_fraction),
            ("keyword_only_fraction", self.keyword_only_fraction),
            ("non_arxiv_link_fraction", self.non_arxiv_link_fraction),
            ("deletion_fraction", self.deletion_fraction),
            ("continuation_prob", self.continuation_prob),
            ("organic_repost_fraction", self.organic_repost_fraction),
            ("opt_out_fraction", self.opt_out_fraction),
        ];
        for (name, v) in frac_fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(HarnessError::InvalidSpec(format!(
                    "{name} must be in [0,1], got {v}"
                )));
            }
        }
        let rate_fields = [
            ("follow_mean", self.follow_mean),
            ("paper_post_rate", self.paper_post_rate),
            ("non_paper_post_rate", self.non_paper_post_rate),
            ("bot_post_rate", self.bot_post_rate),
            ("accesses_per_user_per_day", self.accesses_per_user_per_day),
            ("repost_factor", self.repost_factor),
            ("organic_like_rate", self.organic_like_rate),
            (
                "organic_nonpaper_like_rate",
                self.organic_nonpaper_like_rate,
            ),
            ("follow_event_rate", self.follow_event_rate),
        ];
        for (name, v) in rate_fields {
            if v < 0.0 || !v.is_finite() {
                return Err(HarnessError::InvalidSpec(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if total_accounts > 0 && self.follow_max > total_accounts - 1 {
            return Err(HarnessError::InvalidSpec(format!(
                "follow_max {} exceeds other-account count {}",
                self.follow_max,
                total_accounts - 1
            )));
        }
        if self.position_bias_curve.is_empty() {
            return Err(HarnessError::InvalidSpec(
                "position_bias_curve is empty".into(),
            ));
        }
        let mut prev = f64::INFINITY;
        for (i, &p) in self.position_bias_curve.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(HarnessError::InvalidSpec(format!(
                    "position_bias_curve[{i}] = {p} out of [0,1]"
                )));
            }
            if p > prev {
                return Err(HarnessError::InvalidSpec(
                    "position_bias_curve must be nonincreasing in rank".into(),
                ));
            }
            prev = p;
        }
        if self.page_limit == 0 || self.page_limit > 100 {
            return Err(HarnessError::InvalidSpec(format!(
                "page_limit {} out of [1,100]",
                self.page_limit
            )));
        }
        Ok(())
    }

    pub fn n_bots(&self) -> usize {
        (self.n_users as f64 * self.bot_fraction).round() as usize
    }

    pub fn like_probability(&self, rank_1_based: usize) -> f64 {
        let idx = rank_1_based.saturating_sub(1);
        *self
            .position_bias_curve
            .get(idx)
            .unwrap_or_else(|| self.position_bias_curve.last().unwrap())
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let raw = std::fs::read_to_string(path)?;
        let spec: WorldSpec = toml::from_str(&raw)
            .map_err(|e| HarnessError::InvalidSpec(format!("spec parse error: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountTruth {
    pub account_id: String,
    pub handle: String,
    pub is_bot: bool,
    pub posts_per_day: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptOutAction {
    pub user_id: String,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub at: Timestamp,
    pub user_id: String,
    pub limit: u32,
    /// Pages to pull in this visit (>= 1; continuations carry the cursor).
    pub pages: u32,
}

/// Everything planted, for later recovery checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: WorldSpec,
    pub accounts: Vec<AccountTruth>,
    /// post_create events passing the shipped classifier.
    pub expected_paper_posts: u64,
    pub total_post_creates: u64,
    pub deleted_uris: Vec<String>,
    pub opt_outs: Vec<OptOutAction>,
    pub category_weights: BTreeMap<String, f64>,
    pub bot_account_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct WorldPaths {
    pub events: PathBuf,
    pub follows: PathBuf,
    pub schedule: PathBuf,
    pub truth: PathBuf,
    pub catalog: PathBuf,
    pub organic_likes: PathBuf,
}

impl WorldPaths {
    /// Sibling files next to the events file.
    pub fn rooted_at(events: &Path) -> Self {
        let dir = events.parent().unwrap_or(Path::new(".")).to_path_buf();
        WorldPaths {
            events: events.to_path_buf(),
            follows: dir.join("follows.json"),
            schedule: dir.join("schedule.json"),
            truth: dir.join("ground_truth.json"),
            catalog: dir.join("arxiv_catalog.csv"),
            organic_likes: dir.join("organic_likes.jsonl"),
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    // Knuth's method; fine for the harness's modest rates.
    let l = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0;
    loop {
        p *= rng.gen_range(0.0..1.0f64);
        if p <= l {
            return k;
        }
        k += 1;
        if k > 10_000 {
            return k;
        }
    }
}

/// Heavy-tailed degree around `mean`: mean/3 x Pareto(alpha=2.5) whose
/// expected weight is 3.
fn sample_degree(rng: &mut ChaCha8Rng, mean: f64, max: usize) -> usize {
    let u: f64 = rng.gen_range(0.0..1.0);
    let w = (1.0 - u).powf(-1.0 / 1.5);
    (((mean / 3.0) * w).round() as usize).clamp(1, max.max(1))
}

const CATEGORY_POOL: &[(&str, f64)] = &[
    ("cs.LG", 0.25),
    ("cs.AI", 0.15),
    ("quant-ph", 0.12),
    ("cs.CY", 0.10),
    ("stat.ML", 0.10),
    ("econ.EM", 0.08),
    ("math.ST", 0.08),
    ("cs.CL", 0.07),
    ("physics.soc-ph", 0.05),
];

fn sample_category(rng: &mut ChaCha8Rng) -> String {
    let total: f64 = CATEGORY_POOL.iter().map(|(_, w)| w).sum();
    let mut draw = rng.gen_range(0.0..total);
    for (cat, w) in CATEGORY_POOL {
        if draw < *w {
            return cat.to_string();
        }
        draw -= w;
    }
    CATEGORY_POOL.last().unwrap().0.to_string()
}

const PAPER_TEXTS: &[&str] = &[
    "Excited to share our new paper!",
    "New preprint out today, thread below.",
    "Our paper was accepted at the workshop, camera-ready to appear soon.",
    "We show a surprising connection in this working paper.",
    "Thrilled to announce our paper is now published.",
];

const KEYWORD_ONLY_TEXTS: &[&str] = &[
    "Excited to share our new paper, accepted at the main conference!",
    "New preprint from our group: we show three results, abstract in thread.",
    "Thrilled to announce our joint work is now published, camera-ready out.",
];

const NON_PAPER_TEXTS: &[&str] = &[
    "enjoying the sunshine at the park",
    "what a match last night",
    "coffee first, everything else later",
    "commute was rough this morning",
    "weekend hike photos",
];

const NON_ARXIV_LINKS: &[&str] = &[
    "https://www.nature.com/articles/s41586-025-{n:05}",
    "https://doi.org/10.1000/paper.{n}",
    "https://osf.io/preprint{n}",
    "https://www.ssrn.com/abstract={n}",
];

struct PostDraft {
    payload: PostPayload,
    is_paper_intent: bool,
}

/// Generate the world files. Deterministic under `spec.rng_seed`; the event
/// log is valid ingest input sorted by time with seq 1..N.
pub fn generate_world(spec: &WorldSpec, events_path: &Path) -> Result<WorldPaths, HarnessError> {
    spec.validate()?;
    let paths = WorldPaths::rooted_at(events_path);
    if let Some(parent) = events_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);

    // accounts
    let mut accounts: Vec<AccountTruth> = Vec::new();
    for i in 0..spec.n_users {
        accounts.push(AccountTruth {
            account_id: format!("did:plc:user{i:04}"),
            handle: format!("user{i:04}.test"),
            is_bot: false,
            posts_per_day: spec.paper_post_rate + spec.non_paper_post_rate,
        });
    }
    for i in 0..spec.n_bots() {
        accounts.push(AccountTruth {
            account_id: format!("did:plc:bot{i:03}"),
            handle: format!("arxiv-bot-{i:03}.test"),
            is_bot: true,
            posts_per_day: spec.bot_post_rate,
        });
    }
    let user_ids: Vec<String> = accounts
        .iter()
        .filter(|a| !a.is_bot)
        .map(|a| a.account_id.clone())
        .collect();
    let all_ids: Vec<String> = accounts.iter().map(|a| a.account_id.clone()).collect();

    // arXiv id pool and catalog
    let n_ids = 50 + 3 * (spec.n_users + spec.n_bots()) * spec.simulated_days as usize;
    let mut catalog_entries = Vec::with_capacity(n_ids);
    for i in 0..n_ids {
        let mut cats = vec![sample_category(&mut rng)];
        if rng.gen_range(0.0..1.0) < 0.25 {
            let second = sample_category(&mut rng);
            if !cats.contains(&second) {
                cats.push(second);
            }
        }
        catalog_entries.push((format!("2501.{i:05}"), cats));
    }
    let catalog = ArxivCatalog::from_entries(catalog_entries.clone())?;
    catalog.write_csv(&paths.catalog)?;

    // follow graph over all accounts
    let max_degree = if spec.follow_max == 0 {
        all_ids.len().saturating_sub(1)
    } else {
        spec.follow_max
    };
    let mut follows: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for user in &user_ids {
        let degree = sample_degree(&mut rng, spec.follow_mean, max_degree);
        let mut chosen: Vec<String> = Vec::with_capacity(degree);
        let mut seen: HashSet<usize> = HashSet::new();
        let mut attempts = 0;
        while chosen.len() < degree && attempts < degree * 60 {
            attempts += 1;
            // mild popularity skew toward low indices
            let r: f64 = rng.gen_range(0.0..1.0);
            let idx = ((r * r) * all_ids.len() as f64) as usize % all_ids.len();
            if all_ids[idx] != *user && seen.insert(idx) {
                chosen.push(all_ids[idx].clone());
            }
        }
        chosen.sort();
        follows.insert(user.clone(), chosen);
    }

    // posting drafts
    let day = MICROS_PER_DAY;
    let horizon = spec.start_time.plus_days(spec.simulated_days as i64);
    let mut drafts: Vec<PostDraft> = Vec::new();
    let mut paper_uris_in_time: Vec<(Timestamp, String)> = Vec::new();
    let mut non_paper_uris_in_time: Vec<(Timestamp, String)> = Vec::new();
    let mut post_counter = 0usize;
    for account in &accounts {
        let (paper_rate, other_rate) = if account.is_bot {
            (spec.bot_post_rate, 0.0)
        } else {
            (spec.paper_post_rate, spec.non_paper_post_rate)
        };
        for d in 0..spec.simulated_days {
            let day_start = spec.start_time.plus_days(d as i64);
            for _ in 0..poisson(&mut rng, paper_rate) {
                let at = day_start.plus_micros(rng.gen_range(0..day));
                let uri = format!(
                    "at://{}/app.bsky.feed.post/{post_counter:06}",
                    account.account_id
                );
                post_counter += 1;
                let quote_of = if !account.is_bot && rng.gen_range(0.0..1.0) < spec.quote_fraction {
                    paper_uris_in_time.last().map(|(_, u)| u.clone())
                } else {
                    None
                };
                let style: f64 = rng.gen_range(0.0..1.0);
                let (text, links) = if style < spec.keyword_only_fraction && !account.is_bot {
                    let text = KEYWORD_ONLY_TEXTS[rng.gen_range(0..KEYWORD_ONLY_TEXTS.len())];
                    (text.to_string(), vec![])
                } else if style < spec.keyword_only_fraction + spec.non_arxiv_link_fraction
                    && !account.is_bot
                {
                    let template = NON_ARXIV_LINKS[rng.gen_range(0..NON_ARXIV_LINKS.len())];
                    let link = template
                        .replace("{n:05}", &format!("{post_counter:05}"))
                        .replace("{n}", &post_counter.to_string());
                    let text = PAPER_TEXTS[rng.gen_range(0..PAPER_TEXTS.len())];
                    (text.to_string(), vec![link])
                } else {
                    let id = &catalog_entries[rng.gen_range(0..catalog_entries.len())].0;
                    let text = PAPER_TEXTS[rng.gen_range(0..PAPER_TEXTS.len())];
                    (
                        text.to_string(),
                        vec![format!("https://arxiv.org/abs/{id}")],
                    )
                };
                paper_uris_in_time.push((at, uri.clone()));
                drafts.push(PostDraft {
                    payload: PostPayload {
                        uri,
                        author_id: account.account_id.clone(),
                        text,
                        links,
                        created_at: at,
                        reply_parent: None,
                        repost_of: None,
                        quote_of,
                    },
                    is_paper_intent: true,
                });
            }
            for _ in 0..poisson(&mut rng, other_rate) {
                let at = day_start.plus_micros(rng.gen_range(0..day));
                let uri = format!(
                    "at://{}/app.bsky.feed.post/{post_counter:06}",
                    account.account_id
                );
                post_counter += 1;
                let text = NON_PAPER_TEXTS[rng.gen_range(0..NON_PAPER_TEXTS.len())];
                non_paper_uris_in_time.push((at, uri.clone()));
                drafts.push(PostDraft {
                    payload: PostPayload {
                        uri,
                        author_id: account.account_id.clone(),
                        text: text.to_string(),
                        links: vec![],
                        created_at: at,
                        reply_parent: None,
                        repost_of: None,
                        quote_of: None,
                    },
                    is_paper_intent: false,
                });
            }
        }
    }
    paper_uris_in_time.sort();
    non_paper_uris_in_time.sort();

    // raw (time, wire-event sans seq) stream
    enum Draft {
        Post(PostPayload),
        Delete {
            uri: String,
            author: String,
            at: Timestamp,
        },
        Interaction {
            kind: EventKind,
            actor: String,
            subject: String,
            at: Timestamp,
        },
        Follow {
            actor: String,
            at: Timestamp,
        },
    }
    let mut stream: Vec<(Timestamp, usize, Draft)> = Vec::new();
    let mut order = 0usize;
    let push = |stream: &mut Vec<(Timestamp, usize, Draft)>,
                at: Timestamp,
                d: Draft,
                order: &mut usize| {
        stream.push((at, *order, d));
        *order += 1;
    };

    let mut deleted_uris = Vec::new();
    for draft in drafts {
        let at = draft.payload.created_at;
        let author = draft.payload.author_id.clone();
        let uri = draft.payload.uri.clone();
        let is_paper = draft.is_paper_intent;
        push(&mut stream, at, Draft::Post(draft.payload), &mut order);
        if is_paper && rng.gen_range(0.0..1.0) < spec.deletion_fraction {
            let delay = rng.gen_range(MICROS_PER_SECOND..2 * day);
            let delete_at = at.plus_micros(delay);
            if delete_at < horizon {
                deleted_uris.push(uri.clone());
                push(
                    &mut stream,
                    delete_at,
                    Draft::Delete {
                        uri,
                        author,
                        at: delete_at,
                    },
                    &mut order,
                );
            }
        }
    }

    // organic interactions and follow noise
    let mut organic_likes: Vec<UserLike> = Vec::new();
    let pick_before =
        |rng: &mut ChaCha8Rng, list: &[(Timestamp, String)], t: Timestamp| -> Option<String> {
            let ub = list.partition_point(|(at, _)| *at < t);
            if ub == 0 {
                None
            } else {
                Some(list[rng.gen_range(0..ub)].1.clone())
            }
        };
    for user in &user_ids {
        for d in 0..spec.simulated_days {
            let day_start = spec.start_time.plus_days(d as i64);
            for _ in 0..poisson(&mut rng, spec.organic_like_rate) {
                let at = day_start.plus_micros(rng.gen_range(0..day));
                if let Some(subject) = pick_before(&mut rng, &paper_uris_in_time, at) {
                    let kind = if rng.gen_range(0.0..1.0) < spec.organic_repost_fraction {
                        EventKind::Repost
                    } else {
                        EventKind::Like
                    };
                    if kind == EventKind::Like {
                        organic_likes.push(UserLike {
                            user_id: user.clone(),
                            created_at: at,
                            is_paper: true,
                        });
                    }
                    push(
                        &mut stream,
                        at,
                        Draft::Interaction {
                            kind,
                            actor: user.clone(),
                            subject,
                            at,
                        },
                        &mut order,
                    );
                }
            }
            for _ in 0..poisson(&mut rng, spec.organic_nonpaper_like_rate) {
                let at = day_start.plus_micros(rng.gen_range(0..day));
                if let Some(subject) = pick_before(&mut rng, &non_paper_uris_in_time, at) {
                    organic_likes.push(UserLike {
                        user_id: user.clone(),
                        created_at: at,
                        is_paper: false,
                    });
                    push(
                        &mut stream,
                        at,
                        Draft::Interaction {
                            kind: EventKind::Like,
                            actor: user.clone(),
                            subject,
                            at,
                        },
                        &mut order,
                    );
                }
            }
        }
    }
    for d in 0..spec.simulated_days {
        let day_start = spec.start_time.plus_days(d as i64);
        for _ in 0..poisson(&mut rng, spec.follow_event_rate) {
            let at = day_start.plus_micros(rng.gen_range(0..day));
            let actor = all_ids[rng.gen_range(0..all_ids.len())].clone();
            push(&mut stream, at, Draft::Follow { actor, at }, &mut order);
        }
    }

    stream.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    // classify drafts exactly as ingest will, for the ground truth
    let classifier = Classifier::with_defaults();
    let mut expected_paper_posts = 0u64;
    let mut total_post_creates = 0u64;

    let mut events_file = std::io::BufWriter::new(std::fs::File::create(&paths.events)?);
    for (idx, (at, _, draft)) in stream.into_iter().enumerate() {
        let seq = idx as u64 + 1;
        let wire = match draft {
            Draft::Post(payload) => {
                total_post_creates += 1;
                if classifier.classify(&payload.text, &payload.links).is_paper {
                    expected_paper_posts += 1;
                }
                WireEvent {
                    seq,
                    kind: EventKind::PostCreate,
                    actor_id: payload.author_id.clone(),
                    subject_uri: None,
                    record: Some(payload),
                    created_at: at,
                }
            }
            Draft::Delete { uri, author, at } => WireEvent {
                seq,
                kind: EventKind::PostDelete,
                actor_id: author,
                subject_uri: Some(uri),
                record: None,
                created_at: at,
            },
            Draft::Interaction {
                kind,
                actor,
                subject,
                at,
                ..
            } => WireEvent {
                seq,
                kind,
                actor_id: actor,
                subject_uri: Some(subject),
                record: None,
                created_at: at,
            },
            Draft::Follow { actor, at } => WireEvent {
                seq,
                kind: EventKind::Follow,
                actor_id: actor,
                subject_uri: None,
                record: None,
                created_at: at,
            },
        };
        writeln!(events_file, "{}", serde_json::to_string(&wire)?)?;
    }
    events_file.flush()?;

    // access schedule
    let mut schedule: Vec<(Timestamp, usize, ScheduleEntry)> = Vec::new();
    let mut entry_order = 0usize;
    for user in &user_ids {
        for d in spec.access_start_day..spec.simulated_days {
            let day_start = spec.start_time.plus_days(d as i64);
            for _ in 0..poisson(&mut rng, spec.accesses_per_user_per_day) {
                let at = day_start.plus_micros(rng.gen_range(0..day));
                let pages = if rng.gen_range(0.0..1.0) < spec.continuation_prob {
                    2
                } else {
                    1
                };
                schedule.push((
                    at,
                    entry_order,
                    ScheduleEntry {
                        at,
                        user_id: user.clone(),
                        limit: spec.page_limit,
                        pages,
                    },
                ));
                entry_order += 1;
            }
        }
    }
    schedule.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let schedule: Vec<ScheduleEntry> = schedule.into_iter().map(|(_, _, e)| e).collect();

    // opt-outs: sampled users flip after their first few scheduled visits
    let mut opt_outs = Vec::new();
    let n_opt_outs = (user_ids.len() as f64 * spec.opt_out_fraction).round() as usize;
    let mut shuffled = user_ids.clone();
    shuffled.shuffle(&mut rng);
    for user in shuffled.into_iter().take(n_opt_outs) {
        let visits: Vec<&ScheduleEntry> = schedule.iter().filter(|e| e.user_id == user).collect();
        if visits.len() >= 2 {
            let pivot = visits[visits.len() / 2];
            opt_outs.push(OptOutAction {
                user_id: user,
                at: pivot.at.plus_seconds(1),
            });
        }
    }
    opt_outs.sort_by(|a, b| a.at.cmp(&b.at).then_with(|| a.user_id.cmp(&b.user_id)));

    let category_weights: BTreeMap<String, f64> = CATEGORY_POOL
        .iter()
        .map(|(c, w)| (c.to_string(), *w))
        .collect();
    let truth = GroundTruth {
        spec: spec.clone(),
        bot_account_ids: accounts
            .iter()
            .filter(|a| a.is_bot)
            .map(|a| a.account_id.clone())
            .collect(),
        accounts,
        expected_paper_posts,
        total_post_creates,
        deleted_uris,
        opt_outs,
        category_weights,
    };

    std::fs::write(&paths.follows, serde_json::to_string_pretty(&follows)?)?;
    std::fs::write(&paths.schedule, serde_json::to_string_pretty(&schedule)?)?;
    std::fs::write(&paths.truth, serde_json::to_string_pretty(&truth)?)?;
    let mut likes_file = std::io::BufWriter::new(std::fs::File::create(&paths.organic_likes)?);
    for like in &organic_likes {
        writeln!(likes_file, "{}", serde_json::to_string(like)?)?;
    }
    likes_file.flush()?;

    Ok(paths)
}

pub fn load_follows(path: &Path) -> Result<BTreeMap<String, Vec<String>>, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_schedule(path: &Path) -> Result<Vec<ScheduleEntry>, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_truth(path: &Path) -> Result<GroundTruth, HarnessError> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

pub fn load_organic_likes(path: &Path) -> Result<Vec<UserLike>, HarnessError> {
    let mut out = Vec::new();
    for line in std::fs::read_to_string(path)?.lines() {
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_under_seed() {
        let dir = tempfile::tempdir().unwrap();
        let spec = WorldSpec {
            n_users: 8,
            simulated_days: 2,
            ..WorldSpec::default()
        };
        let a = generate_world(&spec, &dir.path().join("a/events.jsonl")).unwrap();
        let b = generate_world(&spec, &dir.path().join("b/events.jsonl")).unwrap();
        let read = |p: &Path| std::fs::read(p).unwrap();
        assert_eq!(read(&a.events), read(&b.events));
        assert_eq!(read(&a.follows), read(&b.follows));
        assert_eq!(read(&a.schedule), read(&b.schedule));
        assert_eq!(read(&a.truth), read(&b.truth));
        assert_eq!(read(&a.catalog), read(&b.catalog));
        assert!(!read(&a.events).is_empty());
    }

    #[test]
    fn empty_world_is_a_valid_file() {
        let dir = tempfile::tempdir().unwrap();
        let spec = WorldSpec {
            n_users: 0,
            bot_fraction: 0.0,
            follow_event_rate: 0.0,
            ..WorldSpec::default()
        };
        let paths = generate_world(&spec, &dir.path().join("events.jsonl")).unwrap();
        let contents = std::fs::read_to_string(&paths.events).unwrap();
        assert!(contents.is_empty());
        let truth = load_truth(&paths.truth).unwrap();
        assert_eq!(truth.expected_paper_posts, 0);
    }

    #[test]
    fn zero_paper_rate_yields_no_expected_paper_posts() {
        let dir = tempfile::tempdir().unwrap();
        let spec = WorldSpec {
            n_users: 6,
            bot_fraction: 0.0,
            paper_post_rate: 0.0,
            organic_like_rate: 0.0,
            quote_fraction: 0.0,
            simulated_days: 2,
            ..WorldSpec::default()
        };
        let paths = generate_world(&spec, &dir.path().join("events.jsonl")).unwrap();
        let truth = load_truth(&paths.truth).unwrap();
        assert_eq!(truth.expected_paper_posts, 0);
        assert!(truth.total_post_creates > 0);
    }

    #[test]
    fn infeasible_degree_is_rejected() {
        let spec = WorldSpec {
            n_users: 5,
            bot_fraction: 0.0,
            follow_max: 50,
            ..WorldSpec::default()
        };
        assert!(matches!(spec.validate(), Err(HarnessError::InvalidSpec(_))));
    }

    #[test]
    fn increasing_bias_curve_is_rejected() {
        let spec = WorldSpec {
            position_bias_curve: vec![0.1, 0.3],
            ..WorldSpec::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn events_are_seq_ordered_and_time_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let spec = WorldSpec {
            n_users: 10,
            simulated_days: 2,
            ..WorldSpec::default()
        };
        let paths = generate_world(&spec, &dir.path().join("events.jsonl")).unwrap();
        let mut last_seq = 0;
        let mut last_time = Timestamp::from_micros(i64::MIN);
        for line in std::fs::read_to_string(&paths.events).unwrap().lines() {
            let ev: WireEvent = serde_json::from_str(line).unwrap();
            assert!(ev.seq > last_seq);
            assert!(ev.created_at >= last_time);
            last_seq = ev.seq;
            last_time = ev.created_at;
        }
        assert!(last_seq > 0);
    }
}
