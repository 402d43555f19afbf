//! How adopting the feed shifts a user's liking behavior: the difference
//! in paper-post likes, and in the paper share of all likes, between the
//! week before and the week after first access.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::model::{AccessLog, UserRecord};
use crate::time::{Timestamp, MICROS_PER_DAY};

use super::bootstrap::{mean_se, normal_ci};
use super::AnalyticsError;

/// One like by a user anywhere on the network, labeled paper / non-paper.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserLike {
    pub user_id: String,
    pub created_at: Timestamp,
    pub is_paper: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdoptionEffect {
    /// Users passing every eligibility filter (count statistic population).
    pub n_users: u64,
    pub mean_count_diff: f64,
    pub se_count_diff: f64,
    pub ci_count: (f64, f64),
    /// Subset with at least one like in both windows (proportion statistic).
    pub n_users_prop: u64,
    pub mean_prop_diff: f64,
    pub se_prop_diff: f64,
    pub ci_prop: (f64, f64),
}

const MAX_TOTAL_LIKES: usize = 10_000;
const MIN_TOTAL_ACCESSES: u64 = 5;
const MAX_TOTAL_ACCESSES: u64 = 20_000;

/// Per-user eligibility: at least one paper like and one non-paper like in
/// the week before the comparison window (two weeks to one week before first
/// access), under 10,000 total likes, and more than 5 / fewer than 20,000
/// total accesses. Windows: before = [-7d, 0), after = [0, +7d) relative to
/// first access. SEs are sample SD / sqrt(n); CIs mean +/- 1.96 SE.
pub fn adoption_effect(
    users: &[UserRecord],
    all_likes: &[UserLike],
    access_logs: &[AccessLog],
) -> Result<AdoptionEffect, AnalyticsError> {
    let mut likes_by_user: HashMap<&str, Vec<&UserLike>> = HashMap::new();
    for like in all_likes {
        likes_by_user
            .entry(like.user_id.as_str())
            .or_default()
            .push(like);
    }
    let mut accesses_by_user: HashMap<&str, u64> = HashMap::new();
    for log in access_logs {
        *accesses_by_user.entry(log.user_id.as_str()).or_default() += 1;
    }

    let week = 7 * MICROS_PER_DAY;
    let mut count_diffs: Vec<f64> = Vec::new();
    let mut prop_diffs: Vec<f64> = Vec::new();

    let mut sorted_users: Vec<&UserRecord> = users.iter().collect();
    sorted_users.sort_by(|a, b| a.user_id.cmp(&b.user_id));

    for user in sorted_users {
        let likes = likes_by_user
            .get(user.user_id.as_str())
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        if likes.len() >= MAX_TOTAL_LIKES {
            continue;
        }
        let accesses = accesses_by_user
            .get(user.user_id.as_str())
            .copied()
            .unwrap_or(0);
        if accesses <= MIN_TOTAL_ACCESSES || accesses >= MAX_TOTAL_ACCESSES {
            continue;
        }
        let first = user.first_access_at.micros();
        let in_range = |l: &&&UserLike, lo: i64, hi: i64| {
            let t = l.created_at.micros();
            t >= lo && t < hi
        };
        // active on academic content before the window: [-14d, -7d)
        let prior: Vec<&&UserLike> = likes
            .iter()
            .filter(|l| in_range(l, first - 2 * week, first - week))
            .collect();
        if !prior.iter().any(|l| l.is_paper) || !prior.iter().any(|l| !l.is_paper) {
            continue;
        }

        let window_counts = |lo: i64, hi: i64| {
            let mut paper = 0u64;
            let mut total = 0u64;
            for l in likes.iter().filter(|l| in_range(l, lo, hi)) {
                total += 1;
                if l.is_paper {
                    paper += 1;
                }
            }
            (paper, total)
        };
        let (paper_before, total_before) = window_counts(first - week, first);
        let (paper_after, total_after) = window_counts(first, first + week);

        count_diffs.push(paper_after as f64 - paper_before as f64);
        if total_before > 0 && total_after > 0 {
            prop_diffs.push(
                paper_after as f64 / total_after as f64 - paper_before as f64 / total_before as f64,
            );
        }
    }

    if count_diffs.is_empty() {
        return Err(AnalyticsError::EmptyPopulation("eligible users"));
    }

    let (mean_count, se_count) = mean_se(&count_diffs);
    let (mean_prop, se_prop) = if prop_diffs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_se(&prop_diffs)
    };

    Ok(AdoptionEffect {
        n_users: count_diffs.len() as u64,
        mean_count_diff: mean_count,
        se_count_diff: se_count,
        ci_count: normal_ci(mean_count, se_count),
        n_users_prop: prop_diffs.len() as u64,
        mean_prop_diff: mean_prop,
        se_prop_diff: se_prop,
        ci_prop: normal_ci(mean_prop, se_prop),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY: i64 = MICROS_PER_DAY;

    fn user(id: &str, first_days: i64) -> UserRecord {
        UserRecord::new(id.to_string(), Timestamp::from_micros(first_days * DAY))
    }

    fn like(id: &str, at_days_x10: i64, is_paper: bool) -> UserLike {
        UserLike {
            user_id: id.to_string(),
            created_at: Timestamp::from_micros(at_days_x10 * DAY / 10),
            is_paper,
        }
    }

    fn logs_for(id: &str, n: u64) -> Vec<AccessLog> {
        (0..n)
            .map(|i| AccessLog {
                user_id: id.to_string(),
                requested_at: Timestamp::from_micros(i as i64),
                limit: 30,
                cursor: None,
                served_uris: vec![],
            })
            .collect()
    }

    /// Three users with count diffs {+1, 0, +2}; every user first accesses
    /// at day 20, with eligibility likes in [-14d, -7d).
    fn fixture() -> (Vec<UserRecord>, Vec<UserLike>, Vec<AccessLog>) {
        let users = vec![user("u1", 20), user("u2", 20), user("u3", 20)];
        let mut likes = Vec::new();
        let mut logs = Vec::new();
        for id in ["u1", "u2", "u3"] {
            // eligibility window: one paper, one non-paper at day 8 (= 20 - 12)
            likes.push(like(id, 80, true));
            likes.push(like(id, 81, false));
            logs.extend(logs_for(id, 10));
        }
        // before window is [13, 20), after is [20, 27)
        // u1: 1 paper before, 2 after (+1); totals 2 and 3
        likes.push(like("u1", 140, true));
        likes.push(like("u1", 141, false));
        likes.push(like("u1", 210, true));
        likes.push(like("u1", 211, true));
        likes.push(like("u1", 212, false));
        // u2: 1 before, 1 after (0); totals 2 and 2
        likes.push(like("u2", 150, true));
        likes.push(like("u2", 151, false));
        likes.push(like("u2", 220, true));
        likes.push(like("u2", 221, false));
        // u3: 0 before, 2 after (+2); totals 1 and 2
        likes.push(like("u3", 160, false));
        likes.push(like("u3", 230, true));
        likes.push(like("u3", 231, true));
        (users, likes, logs)
    }

    #[test]
    fn hand_computed_count_statistic() {
        let (users, likes, logs) = fixture();
        let effect = adoption_effect(&users, &likes, &logs).unwrap();
        assert_eq!(effect.n_users, 3);
        assert!((effect.mean_count_diff - 1.0).abs() < 1e-12);
        assert!((effect.se_count_diff - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        let (lo, hi) = effect.ci_count;
        assert!((lo - (1.0 - 1.96 / 3f64.sqrt())).abs() < 1e-12);
        assert!((hi - (1.0 + 1.96 / 3f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn hand_computed_proportion_statistic() {
        let (users, likes, logs) = fixture();
        let effect = adoption_effect(&users, &likes, &logs).unwrap();
        // u1: 2/3 - 1/2 = 1/6; u2: 1/2 - 1/2 = 0; u3: 2/2 - 0/1 = 1
        let diffs = [1.0 / 6.0, 0.0, 1.0];
        let mean: f64 = diffs.iter().sum::<f64>() / 3.0;
        assert_eq!(effect.n_users_prop, 3);
        assert!((effect.mean_prop_diff - mean).abs() < 1e-12);
    }

    #[test]
    fn user_without_non_paper_prior_like_is_excluded() {
        let (users, mut likes, logs) = fixture();
        // strip u2's non-paper eligibility like
        likes.retain(|l| {
            !(l.user_id == "u2" && !l.is_paper && l.created_at.micros() == 81 * DAY / 10)
        });
        let effect = adoption_effect(&users, &likes, &logs).unwrap();
        assert_eq!(effect.n_users, 2);
    }

    #[test]
    fn access_count_filters_apply() {
        let (users, likes, mut logs) = fixture();
        // u3 drops to 3 total accesses: below the >5 floor
        logs.retain(|l| l.user_id != "u3");
        logs.extend(logs_for("u3", 3));
        let effect = adoption_effect(&users, &likes, &logs).unwrap();
        assert_eq!(effect.n_users, 2);
    }

    #[test]
    fn identical_windows_give_zero_mean_zero_se() {
        let users = vec![user("u1", 20), user("u2", 20)];
        let mut likes = Vec::new();
        let mut logs = Vec::new();
        for id in ["u1", "u2"] {
            likes.push(like(id, 80, true));
            likes.push(like(id, 81, false));
            likes.push(like(id, 140, true));
            likes.push(like(id, 210, true));
            logs.extend(logs_for(id, 10));
        }
        let effect = adoption_effect(&users, &likes, &logs).unwrap();
        assert_eq!(effect.mean_count_diff, 0.0);
        assert_eq!(effect.se_count_diff, 0.0);
    }

    #[test]
    fn no_eligible_users_is_an_error() {
        let users = vec![user("u1", 20)];
        assert!(matches!(
            adoption_effect(&users, &[], &logs_for("u1", 10)),
            Err(AnalyticsError::EmptyPopulation("eligible users"))
        ));
    }
}
