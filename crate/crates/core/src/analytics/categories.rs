//! arXiv category distributions across the corpus, posts shown, and posts
//! liked, restricted to arXiv-linked posts from non-bot authors.
//!
//! A post with k categories contributes weight 1/k to each, so every
//! distribution sums to 1. Shown and liked units are distinct (user, post)
//! pairs, allowing duplicates across users.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classify::ArxivCatalog;
use crate::model::StoredPost;

use super::bootstrap::{percentile_interval, resample_indices};
use super::AnalyticsError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryShare {
    pub category: String,
    pub share: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryDistributions {
    pub corpus: Vec<CategoryShare>,
    pub shown: Vec<CategoryShare>,
    pub liked: Vec<CategoryShare>,
    /// Union of the top-10 categories of the three distributions.
    pub top_categories: Vec<String>,
}

struct EligiblePost {
    categories: Vec<String>,
}

/// Fractional category weights of one unit list; `units[i]` indexes into
/// `posts`. Returns (per-category weight sum, unit count).
fn weights_for(units: &[usize], posts: &[&EligiblePost]) -> (BTreeMap<String, f64>, usize) {
    let mut weights: BTreeMap<String, f64> = BTreeMap::new();
    for &idx in units {
        let k = posts[idx].categories.len() as f64;
        for cat in &posts[idx].categories {
            *weights.entry(cat.clone()).or_default() += 1.0 / k;
        }
    }
    (weights, units.len())
}

fn shares(weights: &BTreeMap<String, f64>, total_units: usize) -> BTreeMap<String, f64> {
    weights
        .iter()
        .map(|(c, w)| (c.clone(), w / total_units as f64))
        .collect()
}

/// Compute the three distributions with bootstrap CIs: over posts for the
/// corpus, over users (clusters of exposure/like pairs) for shown and liked.
pub fn category_distribution(
    posts: &[StoredPost],
    shown: &[(String, String)],
    liked: &[(String, String)],
    catalog: &ArxivCatalog,
    bot_authors: &HashSet<String>,
    bootstrap_samples: u32,
    rng_seed: u64,
) -> Result<CategoryDistributions, AnalyticsError> {
    // Posts eligible for every population: >= 1 arXiv id with known
    // categories, from a non-bot author.
    let mut eligible: Vec<EligiblePost> = Vec::new();
    let mut by_uri: HashMap<&str, usize> = HashMap::new();
    for post in posts {
        if post.arxiv_ids.is_empty() || bot_authors.contains(&post.author_id) {
            continue;
        }
        let categories = catalog.post_categories(&post.arxiv_ids);
        if categories.is_empty() {
            continue;
        }
        by_uri.insert(post.uri.as_str(), eligible.len());
        eligible.push(EligiblePost { categories });
    }
    if eligible.is_empty() {
        return Err(AnalyticsError::EmptyPopulation("corpus"));
    }
    let post_refs: Vec<&EligiblePost> = eligible.iter().collect();

    // Deduplicate (user, post) pairs; keep only eligible posts.
    let dedup_pairs = |pairs: &[(String, String)]| -> Vec<(String, usize)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (user, uri) in pairs {
            if let Some(&idx) = by_uri.get(uri.as_str()) {
                if seen.insert((user.clone(), idx)) {
                    out.push((user.clone(), idx));
                }
            }
        }
        out
    };
    let shown_pairs = dedup_pairs(shown);
    if shown_pairs.is_empty() {
        return Err(AnalyticsError::EmptyPopulation("shown"));
    }
    let liked_pairs = dedup_pairs(liked);
    if liked_pairs.is_empty() {
        return Err(AnalyticsError::EmptyPopulation("liked"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    // Corpus: units are posts, resampled directly.
    let corpus_units: Vec<usize> = (0..eligible.len()).collect();
    let corpus = distribution_with_ci(
        &corpus_units,
        &post_refs,
        bootstrap_samples,
        &mut rng,
        |units, rng| {
            resample_indices(rng, units.len())
                .into_iter()
                .map(|i| units[i])
                .collect()
        },
    );

    // Shown/liked: units are pairs, resampled by user cluster.
    let cluster = |pairs: &[(String, usize)]| -> Vec<Vec<usize>> {
        let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (user, idx) in pairs {
            by_user.entry(user.as_str()).or_default().push(*idx);
        }
        by_user.into_values().collect()
    };
    let shown_clusters = cluster(&shown_pairs);
    let shown_units: Vec<usize> = shown_pairs.iter().map(|(_, idx)| *idx).collect();
    let shown_dist = distribution_with_ci(
        &shown_units,
        &post_refs,
        bootstrap_samples,
        &mut rng,
        |_, rng| {
            resample_indices(rng, shown_clusters.len())
                .into_iter()
                .flat_map(|c| shown_clusters[c].iter().copied())
                .collect()
        },
    );
    let liked_clusters = cluster(&liked_pairs);
    let liked_units: Vec<usize> = liked_pairs.iter().map(|(_, idx)| *idx).collect();
    let liked_dist = distribution_with_ci(
        &liked_units,
        &post_refs,
        bootstrap_samples,
        &mut rng,
        |_, rng| {
            resample_indices(rng, liked_clusters.len())
                .into_iter()
                .flat_map(|c| liked_clusters[c].iter().copied())
                .collect()
        },
    );

    let top_categories = top_union(&[&corpus, &shown_dist, &liked_dist], 10);

    Ok(CategoryDistributions {
        corpus,
        shown: shown_dist,
        liked: liked_dist,
        top_categories,
    })
}

fn distribution_with_ci(
    units: &[usize],
    posts: &[&EligiblePost],
    bootstrap_samples: u32,
    rng: &mut ChaCha8Rng,
    resample: impl Fn(&[usize], &mut ChaCha8Rng) -> Vec<usize>,
) -> Vec<CategoryShare> {
    let (weights, total) = weights_for(units, posts);
    let point = shares(&weights, total);

    let mut samples: BTreeMap<String, Vec<f64>> =
        point.keys().map(|c| (c.clone(), Vec::new())).collect();
    for _ in 0..bootstrap_samples {
        let resampled = resample(units, rng);
        if resampled.is_empty() {
            continue;
        }
        let (w, t) = weights_for(&resampled, posts);
        let s = shares(&w, t);
        for (cat, vec) in samples.iter_mut() {
            vec.push(s.get(cat).copied().unwrap_or(0.0));
        }
    }

    let mut out: Vec<CategoryShare> = point
        .iter()
        .map(|(cat, &share)| {
            let (ci_low, ci_high) = match samples.get_mut(cat) {
                Some(vals) if !vals.is_empty() => percentile_interval(vals, 0.95),
                _ => (share, share),
            };
            CategoryShare {
                category: cat.clone(),
                share,
                ci_low,
                ci_high,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.share
            .total_cmp(&a.share)
            .then_with(|| a.category.cmp(&b.category))
    });
    out
}

fn top_union(dists: &[&Vec<CategoryShare>], k: usize) -> Vec<String> {
    let mut max_share: BTreeMap<String, f64> = BTreeMap::new();
    let mut union: HashSet<String> = HashSet::new();
    for dist in dists {
        for share in dist.iter().take(k) {
            union.insert(share.category.clone());
        }
        for share in dist.iter() {
            let entry = max_share.entry(share.category.clone()).or_insert(0.0);
            if share.share > *entry {
                *entry = share.share;
            }
        }
    }
    let mut out: Vec<String> = union.into_iter().collect();
    out.sort_by(|a, b| max_share[b].total_cmp(&max_share[a]).then_with(|| a.cmp(b)));
    out
}
