//! Like/repost rates as a function of the highest feed position at which a
//! post was shown to a user, with user-clustered bootstrap intervals.

use std::collections::HashMap;
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{AccessLog, InteractionKind, InteractionRecord};
use crate::time::MICROS_PER_SECOND;

use super::bootstrap::{percentile_interval, resample_indices};

/// Interaction-to-access matching window. `Seconds(w)` counts an
/// interaction landing within `w` seconds after a qualifying access of the
/// post; `Unbounded` is the no-time-filter variant that counts any
/// interaction on an exposed (user, post) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Seconds(u64),
    Unbounded,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "none" | "all" => Ok(Window::Unbounded),
            num => num
                .parse::<u64>()
                .map(Window::Seconds)
                .map_err(|_| format!("invalid window {s:?} (seconds or \"inf\")")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankEngagement {
    /// 1-based feed position.
    pub rank: u32,
    pub interaction_kind: InteractionKind,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_pairs: u64,
}

/// Per-user, per-rank exposure and engagement tallies:
/// `[pairs, engaged likes, engaged reposts]`.
type UserRankTallies = Vec<[u64; 3]>;

/// Compute engagement-by-rank over access logs whose `limit` equals
/// `page_size_filter`. For every (user, post) pair, the rank is the
/// minimum 1-based position across that user's qualifying accesses, and
/// the pair is engaged (per kind) when an interaction matches the window
/// against any qualifying access that showed the post. CIs come from
/// percentile bootstrap over users.
pub fn engagement_by_rank(
    access_logs: &[AccessLog],
    interactions: &[InteractionRecord],
    window: Window,
    page_size_filter: u32,
    bootstrap_samples: u32,
    rng_seed: u64,
) -> Vec<RankEngagement> {
    let qualifying: Vec<&AccessLog> = access_logs
        .iter()
        .filter(|l| l.limit == page_size_filter)
        .collect();
    if qualifying.is_empty() {
        return Vec::new();
    }

    let mut interaction_times: HashMap<(&str, &str, InteractionKind), i64> = HashMap::new();
    for rec in interactions {
        interaction_times.insert(
            (rec.actor_id.as_str(), rec.subject_uri.as_str(), rec.kind),
            rec.created_at.micros(),
        );
    }

    // (user, post) -> (min rank, access times at which the post was shown)
    let mut exposures: HashMap<(&str, &str), (u32, Vec<i64>)> = HashMap::new();
    for log in &qualifying {
        for (idx, uri) in log.served_uris.iter().enumerate() {
            let rank = idx as u32 + 1;
            let entry = exposures
                .entry((log.user_id.as_str(), uri.as_str()))
                .or_insert((rank, Vec::new()));
            entry.0 = entry.0.min(rank);
            entry.1.push(log.requested_at.micros());
        }
    }

    let n_ranks = page_size_filter as usize;
    let mut per_user: HashMap<&str, UserRankTallies> = HashMap::new();
    for ((user, post), (min_rank, access_times)) in &exposures {
        let tallies = per_user
            .entry(user)
            .or_insert_with(|| vec![[0u64; 3]; n_ranks]);
        let slot = &mut tallies[(*min_rank as usize) - 1];
        slot[0] += 1;
        for kind in [InteractionKind::Like, InteractionKind::Repost] {
            if let Some(&t) = interaction_times.get(&(*user, *post, kind)) {
                let engaged = match window {
                    Window::Unbounded => true,
                    Window::Seconds(w) => access_times
                        .iter()
                        .any(|&t_a| t >= t_a && t - t_a <= (w as i64) * MICROS_PER_SECOND),
                };
                if engaged {
                    slot[1 + kind.as_u8() as usize] += 1;
                }
            }
        }
    }

    // Deterministic cluster order for the bootstrap.
    let mut users: Vec<&str> = per_user.keys().copied().collect();
    users.sort();
    let tallies: Vec<&UserRankTallies> = users.iter().map(|u| &per_user[u]).collect();

    let sum_ranks = |idxs: &mut dyn Iterator<Item = usize>| -> Vec<[u64; 3]> {
        let mut total = vec![[0u64; 3]; n_ranks];
        for i in idxs {
            for (slot, add) in total.iter_mut().zip(tallies[i].iter()) {
                slot[0] += add[0];
                slot[1] += add[1];
                slot[2] += add[2];
            }
        }
        total
    };

    let point = sum_ranks(&mut (0..users.len()));

    // Percentile bootstrap over user clusters.
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples: Vec<Vec<[f64; 2]>> = vec![Vec::new(); n_ranks];
    for _ in 0..bootstrap_samples {
        let idxs = resample_indices(&mut rng, users.len());
        let resampled = sum_ranks(&mut idxs.into_iter());
        for (rank_idx, slot) in resampled.iter().enumerate() {
            if slot[0] > 0 {
                samples[rank_idx].push([
                    slot[1] as f64 / slot[0] as f64,
                    slot[2] as f64 / slot[0] as f64,
                ]);
            }
        }
    }

    let mut out = Vec::new();
    for kind in [InteractionKind::Like, InteractionKind::Repost] {
        let engaged_idx = 1 + kind.as_u8() as usize;
        for rank_idx in 0..n_ranks {
            let pairs = point[rank_idx][0];
            if pairs == 0 {
                continue;
            }
            let rate = point[rank_idx][engaged_idx] as f64 / pairs as f64;
            let mut rates: Vec<f64> = samples[rank_idx]
                .iter()
                .map(|s| s[kind.as_u8() as usize])
                .collect();
            let (ci_low, ci_high) = if rates.is_empty() {
                (rate, rate)
            } else {
                percentile_interval(&mut rates, 0.95)
            };
            out.push(RankEngagement {
                rank: rank_idx as u32 + 1,
                interaction_kind: kind,
                rate,
                ci_low,
                ci_high,
                n_pairs: pairs,
            });
        }
    }
    out
}
