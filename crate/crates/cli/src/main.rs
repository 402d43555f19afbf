//! Command-line surface: serve the feed generator, run ingestion over an
//! event file, classify posts, export/import store tables, drive the
//! replay harness, and run the offline analyses.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use paperfeed_core::analytics::{
    self, adoption_effect, category_distribution, engagement_by_rank, usage_summary,
    visible_access_logs, UserLike, Window,
};
use paperfeed_core::classify::{
    is_bot_account, ArxivCatalog, Classifier, DEFAULT_BOT_POSTS_PER_DAY,
};
use paperfeed_core::config::AppConfig;
use paperfeed_core::feed::{
    self, FeedService, KeepWarm, NoVerification, TaskExecutor, ThreadedTaskRunner,
};
use paperfeed_core::harness::{
    generate_world, replay_world, write_replay_outputs, ReplayOptions, WorldSpec,
};
use paperfeed_core::ingest::{run_ingest, IngestPipeline, JsonlEventSource};
use paperfeed_core::metrics::Metrics;
use paperfeed_core::model::{
    AccessLog, CounterfactualRecord, InteractionKind, InteractionRecord, RecommendationList,
    StoredPost, UserRecord,
};
use paperfeed_core::rec::{FollowsClient, FollowsError, RecEngine};
use paperfeed_core::store::{disk::DiskStore, export_table, SharedStore, Store, EXPORT_TABLES};
use paperfeed_core::time::{Clock, SystemClock, MICROS_PER_DAY};

#[derive(Parser)]
#[command(
    name = "paperfeed",
    version,
    about = "Personalized paper-post feed generator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Serve the feed generator endpoints, scheduler, and keep-warm loop.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the store directory from the config.
        #[arg(long)]
        store_dir: Option<PathBuf>,
    },
    /// Consume a JSON-lines event file into the store, then exit.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Classify posts from a JSON-lines file ({"text", "links"} per line),
    /// one ClassificationResult JSON per line on stdout.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        domains: Option<PathBuf>,
        #[arg(long)]
        keywords: Option<PathBuf>,
    },
    /// Dump store tables as JSON-lines.
    Export {
        #[arg(long)]
        store_dir: PathBuf,
        /// Table name or "all".
        #[arg(long, default_value = "all")]
        table: String,
        /// Output directory (per-table files) or file (single table).
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a JSON-lines table dump into the store.
    Import {
        #[arg(long)]
        store_dir: PathBuf,
        #[arg(long)]
        table: String,
        #[arg(long)]
        input: PathBuf,
    },
    /// Synthetic-world generation and deterministic replay.
    #[command(subcommand)]
    Harness(HarnessCommand),
    /// Offline analyses over store exports.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Subcommand)]
enum HarnessCommand {
    /// Build a world from a TOML spec: events, follows, schedule, truth.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a generated world and write the invariant report.
    Replay {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Also write store exports and realized likes here.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Like/repost rates by feed position with clustered bootstrap CIs.
    RankEngagement {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        interactions: PathBuf,
        /// Users export; applies the opt-out visibility filter when given.
        #[arg(long)]
        users: Option<PathBuf>,
        /// Seconds, or "inf" for the no-time-filter variant.
        #[arg(long, default_value = "30")]
        window: String,
        #[arg(long, default_value_t = 30)]
        page_size: u32,
        #[arg(long, default_value_t = 1000)]
        samples: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Writes <prefix>.csv and <prefix>.json.
        #[arg(long, default_value = "rank_engagement")]
        out_prefix: PathBuf,
    },
    /// Paper-like count and proportion shifts around first access.
    Adoption {
        #[arg(long)]
        users: PathBuf,
        /// All likes with is_paper flags (harness all_likes.jsonl).
        #[arg(long)]
        likes: PathBuf,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, default_value = "adoption.json")]
        out: PathBuf,
    },
    /// arXiv category distributions across corpus, shown, and liked.
    Categories {
        #[arg(long)]
        posts: PathBuf,
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        interactions: PathBuf,
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        users: Option<PathBuf>,
        /// Extra bot account ids, one per line.
        #[arg(long)]
        bots: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BOT_POSTS_PER_DAY)]
        bot_threshold: f64,
        #[arg(long, default_value_t = 1000)]
        samples: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "categories")]
        out_prefix: PathBuf,
    },
    /// Daily/weekly usage and percentile trajectories.
    Usage {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        users: Option<PathBuf>,
        #[arg(long, default_value = "usage")]
        out_prefix: PathBuf,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    match Cli::parse().command {
        Command::Serve { config, store_dir } => serve(config, store_dir),
        Command::Ingest {
            events,
            store_dir,
            config,
        } => ingest(events, store_dir, config),
        Command::Classify {
            input,
            domains,
            keywords,
        } => classify(input, domains, keywords),
        Command::Export {
            store_dir,
            table,
            out,
        } => export(store_dir, &table, out),
        Command::Import {
            store_dir,
            table,
            input,
        } => import(store_dir, &table, input),
        Command::Harness(cmd) => harness(cmd),
        Command::Analyze(cmd) => analyze(cmd),
    }
}

fn load_config(path: Option<PathBuf>) -> Result<AppConfig> {
    Ok(match path {
        Some(p) => AppConfig::load(&p).with_context(|| format!("loading {}", p.display()))?,
        None => AppConfig::default(),
    })
}

/// Follows lookups need a live directory service; running without one means
/// recommendation bodies stay empty and users see the default-feed fallback.
struct NoDirectory;

impl FollowsClient for NoDirectory {
    fn get_follows(&self, _user_id: &str) -> Result<Vec<String>, FollowsError> {
        Err(FollowsError::Unavailable(
            "no follows directory configured".into(),
        ))
    }
}

fn serve(config: Option<PathBuf>, store_dir: Option<PathBuf>) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(dir) = store_dir {
        config.store_dir = dir;
    }
    if config.store_dir.as_os_str().is_empty() {
        config.store_dir = PathBuf::from("paperfeed-store");
    }
    let store: SharedStore = Arc::new(DiskStore::open(&config.store_dir)?);
    let clock = Arc::new(SystemClock);
    let metrics = Arc::new(Metrics::default());
    let engine = Arc::new(RecEngine::new(
        store.clone(),
        Arc::new(NoDirectory),
        clock.clone(),
        config.rec.clone(),
        Arc::clone(&metrics),
    ));
    let executor = Arc::new(TaskExecutor::new(
        store.clone(),
        Arc::clone(&engine),
        Arc::clone(&metrics),
    ));
    let runner = ThreadedTaskRunner::start(executor, 2);
    let service = Arc::new(FeedService::new(
        store,
        config.feed.clone(),
        config.rec.clone(),
        runner.clone(),
        clock.clone(),
        Arc::clone(&metrics),
        Arc::new(NoVerification),
    ));

    let shutdown = Arc::new(AtomicBool::new(false));
    {
        let engine = Arc::clone(&engine);
        let shutdown = Arc::clone(&shutdown);
        std::thread::Builder::new()
            .name("rec-scheduler".into())
            .spawn(move || engine.run_scheduler(0, &shutdown))?;
    }
    {
        let keep_warm = KeepWarm::new(config.feed.keep_warm_minutes * 60, Arc::clone(&metrics));
        let clock = Arc::clone(&clock);
        let shutdown = Arc::clone(&shutdown);
        std::thread::Builder::new()
            .name("keep-warm".into())
            .spawn(move || {
                while !shutdown.load(std::sync::atomic::Ordering::Relaxed) {
                    keep_warm.tick(clock.now());
                    std::thread::sleep(std::time::Duration::from_secs(1));
                }
            })?;
    }

    let addr = std::net::SocketAddr::from(([0, 0, 0, 0], config.feed.port));
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    runtime.block_on(feed::http::serve(service, addr))?;
    Ok(())
}

fn ingest(events: PathBuf, store_dir: PathBuf, config: Option<PathBuf>) -> Result<()> {
    let config = load_config(config)?;
    let ingest_config = config.ingest.to_ingest_config();
    let store: SharedStore = Arc::new(DiskStore::open(&store_dir)?);
    let classifier = Arc::new(config.classify.build_classifier()?);
    let metrics = Arc::new(Metrics::default());
    let pipeline = IngestPipeline::start(store, classifier, &ingest_config, Arc::clone(&metrics))?;
    let mut source = JsonlEventSource::new(&events);
    let stats = run_ingest(
        &mut source,
        &pipeline,
        &ingest_config,
        &AtomicBool::new(false),
    )?;
    pipeline.wait_idle();
    pipeline.shutdown();
    println!(
        "{}",
        serde_json::json!({
            "events_read": stats.events_read,
            "last_seq": stats.last_seq,
            "counters": metrics.snapshot(),
        })
    );
    Ok(())
}

fn classify(input: PathBuf, domains: Option<PathBuf>, keywords: Option<PathBuf>) -> Result<()> {
    let classifier = match (&domains, &keywords) {
        (Some(d), Some(k)) => Classifier::from_files(d, k)?,
        (None, None) => Classifier::with_defaults(),
        _ => bail!("--domains and --keywords must be given together"),
    };
    #[derive(serde::Deserialize)]
    struct InputPost {
        #[serde(default)]
        text: String,
        #[serde(default)]
        links: Vec<String>,
    }
    let body = std::fs::read_to_string(&input)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    use std::io::Write;
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let post: InputPost = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", input.display(), lineno + 1))?;
        let result = classifier.classify(&post.text, &post.links);
        writeln!(out, "{}", serde_json::to_string(&result)?)?;
    }
    Ok(())
}

fn export(store_dir: PathBuf, table: &str, out: PathBuf) -> Result<()> {
    let store = DiskStore::open(&store_dir)?;
    if table == "all" {
        std::fs::create_dir_all(&out)?;
        for name in EXPORT_TABLES {
            let body = export_table(&store, name)?;
            std::fs::write(out.join(format!("{name}.jsonl")), body)?;
        }
        println!(
            "exported {} tables to {}",
            EXPORT_TABLES.len(),
            out.display()
        );
    } else {
        let body = export_table(&store, table)?;
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&out, body)?;
        println!("exported {table} to {}", out.display());
    }
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let body =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line)
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?,
        );
    }
    Ok(out)
}

fn import(store_dir: PathBuf, table: &str, input: PathBuf) -> Result<()> {
    let store = DiskStore::open(&store_dir)?;
    let n = match table {
        "posts" => {
            let rows: Vec<StoredPost> = read_jsonl(&input)?;
            let n = rows.len();
            for row in rows {
                store.put_post(&row)?;
            }
            n
        }
        "users" => {
            let rows: Vec<UserRecord> = read_jsonl(&input)?;
            let n = rows.len();
            for row in rows {
                store.put_user(&row)?;
            }
            n
        }
        "interactions" => {
            let rows: Vec<InteractionRecord> = read_jsonl(&input)?;
            let n = rows.len();
            for row in rows {
                store.put_interaction(&row)?;
            }
            n
        }
        "recs" => {
            let rows: Vec<RecommendationList> = read_jsonl(&input)?;
            let n = rows.len();
            for row in rows {
                store.put_recommendations(&row)?;
            }
            n
        }
        "counterfactual_recs" => {
            let rows: Vec<CounterfactualRecord> = read_jsonl(&input)?;
            let n = rows.len();
            for row in rows {
                store.put_counterfactual(&row)?;
            }
            n
        }
        "access_logs" => {
            let rows: Vec<AccessLog> = read_jsonl(&input)?;
            let n = rows.len();
            for row in rows {
                store.append_access_log(&row)?;
            }
            n
        }
        other => bail!("unknown table {other:?} (expected one of {EXPORT_TABLES:?})"),
    };
    println!("imported {n} rows into {table}");
    Ok(())
}

fn harness(cmd: HarnessCommand) -> Result<()> {
    match cmd {
        HarnessCommand::Generate { spec, out } => {
            let spec = WorldSpec::load(&spec)?;
            let paths = generate_world(&spec, &out)?;
            println!(
                "{}",
                serde_json::json!({
                    "events": paths.events,
                    "follows": paths.follows,
                    "schedule": paths.schedule,
                    "ground_truth": paths.truth,
                    "catalog": paths.catalog,
                    "organic_likes": paths.organic_likes,
                })
            );
            Ok(())
        }
        HarnessCommand::Replay {
            events,
            report,
            out_dir,
        } => {
            let result = replay_world(&events, &ReplayOptions::default())?;
            if let Some(parent) = report.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&report, serde_json::to_string_pretty(&result.report)?)?;
            if let Some(dir) = &out_dir {
                write_replay_outputs(&result, dir)?;
            }
            for check in &result.report.checks {
                println!(
                    "{} {} — {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.details
                );
            }
            if !result.report.passed {
                bail!(
                    "replay invariants violated: {}",
                    result
                        .report
                        .first_failure()
                        .map(|c| c.name.clone())
                        .unwrap_or_default()
                );
            }
            println!(
                "replay ok: {} requests, {} cycles, report at {}",
                result.report.requests_served,
                result.report.cycles_run,
                report.display()
            );
            Ok(())
        }
    }
}

fn maybe_visible_logs(logs: Vec<AccessLog>, users: &Option<PathBuf>) -> Result<Vec<AccessLog>> {
    Ok(match users {
        Some(path) => {
            let users: Vec<UserRecord> = read_jsonl(path)?;
            visible_access_logs(&users, &logs)
        }
        None => logs,
    })
}

fn write_output(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, body)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn analyze(cmd: AnalyzeCommand) -> Result<()> {
    match cmd {
        AnalyzeCommand::RankEngagement {
            logs,
            interactions,
            users,
            window,
            page_size,
            samples,
            seed,
            out_prefix,
        } => {
            let window: Window = window.parse().map_err(|e: String| anyhow::anyhow!(e))?;
            let logs = maybe_visible_logs(read_jsonl(&logs)?, &users)?;
            let interactions: Vec<InteractionRecord> = read_jsonl(&interactions)?;
            let rows = engagement_by_rank(&logs, &interactions, window, page_size, samples, seed);
            write_output(
                &out_prefix.with_extension("csv"),
                &analytics::rank_engagement_csv(&rows),
            )?;
            write_output(
                &out_prefix.with_extension("json"),
                &serde_json::to_string_pretty(&rows)?,
            )?;
            Ok(())
        }
        AnalyzeCommand::Adoption {
            users,
            likes,
            logs,
            out,
        } => {
            let users: Vec<UserRecord> = read_jsonl(&users)?;
            let likes: Vec<UserLike> = read_jsonl(&likes)?;
            let logs: Vec<AccessLog> = read_jsonl(&logs)?;
            let logs = visible_access_logs(&users, &logs);
            let effect = adoption_effect(&users, &likes, &logs)?;
            write_output(&out, &serde_json::to_string_pretty(&effect)?)?;
            Ok(())
        }
        AnalyzeCommand::Categories {
            posts,
            logs,
            interactions,
            catalog,
            users,
            bots,
            bot_threshold,
            samples,
            seed,
            out_prefix,
        } => {
            let posts: Vec<StoredPost> = read_jsonl(&posts)?;
            let logs = maybe_visible_logs(read_jsonl(&logs)?, &users)?;
            let interactions: Vec<InteractionRecord> = read_jsonl(&interactions)?;
            let catalog = ArxivCatalog::from_csv_path(&catalog)?;

            let mut bot_authors: HashSet<String> = match bots {
                Some(path) => std::fs::read_to_string(&path)?
                    .lines()
                    .map(str::trim)
                    .filter(|l| !l.is_empty())
                    .map(str::to_string)
                    .collect(),
                None => HashSet::new(),
            };
            // flag high-activity or bot-named authors from the corpus itself
            let mut per_author: HashMap<&str, (i64, i64, u64)> = HashMap::new();
            for post in &posts {
                let entry =
                    per_author
                        .entry(post.author_id.as_str())
                        .or_insert((i64::MAX, i64::MIN, 0));
                entry.0 = entry.0.min(post.created_at.micros());
                entry.1 = entry.1.max(post.created_at.micros());
                entry.2 += 1;
            }
            for (author, (first, last, count)) in per_author {
                let days = (((last - first) / MICROS_PER_DAY) + 1).max(1) as f64;
                if is_bot_account(author, count as f64 / days, bot_threshold) {
                    bot_authors.insert(author.to_string());
                }
            }

            let shown: Vec<(String, String)> = logs
                .iter()
                .flat_map(|l| {
                    l.served_uris
                        .iter()
                        .map(move |uri| (l.user_id.clone(), uri.clone()))
                })
                .collect();
            let liked: Vec<(String, String)> = interactions
                .iter()
                .filter(|i| i.kind == InteractionKind::Like)
                .map(|i| (i.actor_id.clone(), i.subject_uri.clone()))
                .collect();
            let dists = category_distribution(
                &posts,
                &shown,
                &liked,
                &catalog,
                &bot_authors,
                samples,
                seed,
            )?;
            write_output(
                &out_prefix.with_extension("csv"),
                &analytics::categories_csv(&dists),
            )?;
            write_output(
                &out_prefix.with_extension("json"),
                &serde_json::to_string_pretty(&dists)?,
            )?;
            Ok(())
        }
        AnalyzeCommand::Usage {
            logs,
            users,
            out_prefix,
        } => {
            let logs = maybe_visible_logs(read_jsonl(&logs)?, &users)?;
            let summary = usage_summary(&logs);
            let (daily, trajectories) = analytics::usage_csv(&summary);
            write_output(&out_prefix.with_extension("daily.csv"), &daily)?;
            write_output(
                &out_prefix.with_extension("trajectories.csv"),
                &trajectories,
            )?;
            write_output(
                &out_prefix.with_extension("json"),
                &serde_json::to_string_pretty(&summary)?,
            )?;
            Ok(())
        }
    }
}
