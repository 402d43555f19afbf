//! Offline reproduction of the behavioral analyses from store exports:
//! engagement as a function of rank, the adoption effect, arXiv category
//! distributions, and usage summaries — all with clustered bootstrap
//! confidence intervals, deterministic under a fixed seed.

pub mod adoption;
pub mod bootstrap;
pub mod categories;
pub mod engagement;
pub mod usage;

pub use adoption::{adoption_effect, AdoptionEffect, UserLike};
pub use categories::{category_distribution, CategoryDistributions, CategoryShare};
pub use engagement::{engagement_by_rank, RankEngagement, Window};
pub use usage::{usage_summary, TrajectoryPoint, UsageSummary};

use crate::model::{AccessLog, UserRecord};

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("population {0:?} is empty")]
    EmptyPopulation(&'static str),
}

/// Drop access logs of opted-out users dated after their opt-out (all of
/// them when the opt-out time is unknown). Analyses run on the result.
pub fn visible_access_logs(users: &[UserRecord], logs: &[AccessLog]) -> Vec<AccessLog> {
    use std::collections::HashMap;
    let opted: HashMap<&str, Option<crate::time::Timestamp>> = users
        .iter()
        .filter(|u| u.opted_out)
        .map(|u| (u.user_id.as_str(), u.opted_out_at))
        .collect();
    logs.iter()
        .filter(|log| match opted.get(log.user_id.as_str()) {
            None => true,
            Some(Some(at)) => log.requested_at < *at,
            Some(None) => false,
        })
        .cloned()
        .collect()
}

fn push_csv_row(out: &mut String, fields: &[String]) {
    out.push_str(&fields.join(","));
    out.push('\n');
}

pub fn rank_engagement_csv(rows: &[RankEngagement]) -> String {
    let mut out = String::from("interaction_kind,rank,rate,ci_low,ci_high,n_pairs\n");
    for r in rows {
        push_csv_row(
            &mut out,
            &[
                format!("{:?}", r.interaction_kind).to_lowercase(),
                r.rank.to_string(),
                format!("{:.10}", r.rate),
                format!("{:.10}", r.ci_low),
                format!("{:.10}", r.ci_high),
                r.n_pairs.to_string(),
            ],
        );
    }
    out
}

pub fn categories_csv(dists: &CategoryDistributions) -> String {
    let mut out = String::from("population,category,share,ci_low,ci_high\n");
    for (name, rows) in [
        ("corpus", &dists.corpus),
        ("shown", &dists.shown),
        ("liked", &dists.liked),
    ] {
        for r in rows
            .iter()
            .filter(|r| dists.top_categories.contains(&r.category))
        {
            push_csv_row(
                &mut out,
                &[
                    name.to_string(),
                    r.category.clone(),
                    format!("{:.10}", r.share),
                    format!("{:.10}", r.ci_low),
                    format!("{:.10}", r.ci_high),
                ],
            );
        }
    }
    out
}

pub fn usage_csv(summary: &UsageSummary) -> (String, String) {
    let mut daily = String::from("date,unique_users,sessions\n");
    for d in &summary.daily {
        push_csv_row(
            &mut daily,
            &[
                d.date.clone(),
                d.unique_users.to_string(),
                d.sessions.to_string(),
            ],
        );
    }
    let mut traj = String::from("bucket,week_index,mean_accesses,ci_low,ci_high,n_users\n");
    for t in &summary.trajectories {
        push_csv_row(
            &mut traj,
            &[
                t.bucket.clone(),
                t.week_index.to_string(),
                format!("{:.10}", t.mean_accesses),
                format!("{:.10}", t.ci_low),
                format!("{:.10}", t.ci_high),
                t.n_users.to_string(),
            ],
        );
    }
    (daily, traj)
}
