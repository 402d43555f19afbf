//! Usage summaries: daily/weekly unique users and sessions, and per-user
//! weekly access trajectories bucketed by total-access percentile.
//!
//! A session is a request for the first page (no cursor). Raw counts may
//! overestimate true usage because platform pre-loads are indistinguishable
//! from views in the logs.

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::{DateTime, Datelike, Duration, TimeZone, Utc};
use serde::Serialize;

use crate::model::{AccessLog, ANONYMOUS_USER};
use crate::time::{Timestamp, MICROS_PER_DAY};

use super::bootstrap::{mean_se, normal_ci};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DailyUsage {
    pub date: String,
    pub unique_users: u64,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WeeklyUsage {
    /// Monday of the calendar week.
    pub week_start: String,
    pub unique_users: u64,
    pub sessions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    /// Percentile bucket of total accesses, e.g. "p75-p100".
    pub bucket: String,
    /// Weeks since the user's first observed access.
    pub week_index: u32,
    pub mean_accesses: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_users: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageSummary {
    pub daily: Vec<DailyUsage>,
    pub weekly: Vec<WeeklyUsage>,
    pub trajectories: Vec<TrajectoryPoint>,
}

const BUCKET_LABELS: [&str; 4] = ["p0-p25", "p25-p50", "p50-p75", "p75-p100"];

fn week_start(t: Timestamp) -> String {
    let dt: DateTime<Utc> = Utc.timestamp_micros(t.micros()).single().unwrap();
    let monday =
        dt.date_naive() - Duration::days(dt.date_naive().weekday().num_days_from_monday() as i64);
    monday.format("%Y-%m-%d").to_string()
}

pub fn usage_summary(access_logs: &[AccessLog]) -> UsageSummary {
    let logs: Vec<&AccessLog> = access_logs
        .iter()
        .filter(|l| l.user_id != ANONYMOUS_USER)
        .collect();

    let mut daily: BTreeMap<String, (HashSet<&str>, u64)> = BTreeMap::new();
    let mut weekly: BTreeMap<String, (HashSet<&str>, u64)> = BTreeMap::new();
    for log in &logs {
        let day = log.requested_at.date();
        let week = week_start(log.requested_at);
        let is_session = log.cursor.is_none();
        for (key, map) in [(day, &mut daily), (week, &mut weekly)] {
            let entry = map.entry(key).or_default();
            entry.0.insert(log.user_id.as_str());
            if is_session {
                entry.1 += 1;
            }
        }
    }
    let daily = daily
        .into_iter()
        .map(|(date, (users, sessions))| DailyUsage {
            date,
            unique_users: users.len() as u64,
            sessions,
        })
        .collect();
    let weekly = weekly
        .into_iter()
        .map(|(week_start, (users, sessions))| WeeklyUsage {
            week_start,
            unique_users: users.len() as u64,
            sessions,
        })
        .collect();

    UsageSummary {
        daily,
        weekly,
        trajectories: trajectories(&logs),
    }
}

/// Average accesses per week since first access, by percentile-of-total
/// bucket, over complete observed weeks only. Users who stop visiting
/// contribute zero-access weeks until the end of the data range.
fn trajectories(logs: &[&AccessLog]) -> Vec<TrajectoryPoint> {
    if logs.is_empty() {
        return Vec::new();
    }
    let data_end = logs.iter().map(|l| l.requested_at).max().unwrap();

    let mut per_user: HashMap<&str, Vec<i64>> = HashMap::new();
    for log in logs {
        per_user
            .entry(log.user_id.as_str())
            .or_default()
            .push(log.requested_at.micros());
    }

    // bucket users by percentile of total accesses (quartiles)
    let mut totals: Vec<(&str, usize)> = per_user.iter().map(|(u, v)| (*u, v.len())).collect();
    totals.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = totals.len();
    let bucket_of: HashMap<&str, usize> = totals
        .iter()
        .enumerate()
        .map(|(rank, (user, _))| (*user, (rank * 4 / n).min(3)))
        .collect();

    // (bucket, week) -> per-user weekly access counts
    let mut cells: BTreeMap<(usize, u32), Vec<f64>> = BTreeMap::new();
    for (user, times) in &per_user {
        let first = *times.iter().min().unwrap();
        let complete_weeks = ((data_end.micros() - first) / (7 * MICROS_PER_DAY)) as u32;
        if complete_weeks == 0 {
            continue;
        }
        let mut weekly_counts = vec![0f64; complete_weeks as usize];
        for &t in times {
            let week = ((t - first) / (7 * MICROS_PER_DAY)) as usize;
            if week < weekly_counts.len() {
                weekly_counts[week] += 1.0;
            }
        }
        let bucket = bucket_of[user];
        for (week, count) in weekly_counts.into_iter().enumerate() {
            cells.entry((bucket, week as u32)).or_default().push(count);
        }
    }

    cells
        .into_iter()
        .map(|((bucket, week_index), counts)| {
            let (mean, se) = mean_se(&counts);
            let (ci_low, ci_high) = normal_ci(mean, se);
            TrajectoryPoint {
                bucket: BUCKET_LABELS[bucket].to_string(),
                week_index,
                mean_accesses: mean,
                ci_low,
                ci_high,
                n_users: counts.len() as u64,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(user: &str, at_days_x10: i64, cursor: Option<&str>) -> AccessLog {
        AccessLog {
            user_id: user.to_string(),
            requested_at: Timestamp::from_micros(at_days_x10 * MICROS_PER_DAY / 10),
            limit: 30,
            cursor: cursor.map(str::to_string),
            served_uris: vec![],
        }
    }

    #[test]
    fn sessions_are_first_page_requests() {
        // one user, three first-page requests and one continuation in a day
        let logs = vec![
            log("u1", 1, None),
            log("u1", 2, None),
            log("u1", 3, None),
            log("u1", 4, Some("30")),
        ];
        let summary = usage_summary(&logs);
        assert_eq!(summary.daily.len(), 1);
        assert_eq!(summary.daily[0].unique_users, 1);
        assert_eq!(summary.daily[0].sessions, 3);
    }

    #[test]
    fn anonymous_accesses_are_excluded() {
        let logs = vec![log(ANONYMOUS_USER, 1, None), log("u1", 1, None)];
        let summary = usage_summary(&logs);
        assert_eq!(summary.daily[0].unique_users, 1);
        assert_eq!(summary.daily[0].sessions, 1);
    }

    #[test]
    fn constant_weekly_usage_gives_flat_trajectory() {
        // 8 users, 5 accesses per week for 8 weeks, plus an end-marker user
        let mut logs = Vec::new();
        for u in 0..8 {
            let user = format!("u{u}");
            for week in 0..8 {
                for visit in 0..5 {
                    logs.push(log(&user, week * 70 + visit * 10 + 1, None));
                }
            }
        }
        logs.push(log("marker", 8 * 70, None));
        let summary = usage_summary(&logs);
        for point in &summary.trajectories {
            if point.n_users > 1 {
                assert!(
                    (point.mean_accesses - 5.0).abs() < 1e-9,
                    "week {} bucket {} mean {}",
                    point.week_index,
                    point.bucket,
                    point.mean_accesses
                );
                assert!(point.ci_low <= 5.0 && 5.0 <= point.ci_high);
            }
        }
        assert!(!summary.trajectories.is_empty());
    }

    #[test]
    fn buckets_split_by_total_accesses() {
        let mut logs = Vec::new();
        // four users with very different totals over 2 weeks
        for (u, per_week) in [("a", 1), ("b", 3), ("c", 10), ("d", 30)] {
            for week in 0..2 {
                for v in 0..per_week {
                    logs.push(log(u, week * 70 + v, None));
                }
            }
        }
        logs.push(log("end", 150, None));
        let summary = usage_summary(&logs);
        let buckets: HashSet<&str> = summary
            .trajectories
            .iter()
            .map(|t| t.bucket.as_str())
            .collect();
        assert!(buckets.contains("p0-p25"));
        assert!(buckets.contains("p75-p100"));
    }
}
