//! Paper-post classification: a post is about an academic paper when it
//! links to a preprint/journal domain, or when it contains at least
//! [`MIN_KEYWORD_MATCHES`] distinct announcement keywords.
//!
//! Classification is a pure function of (text, links, config); the domain
//! and keyword lists ship as editable config files.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use url::Url;

/// Distinct-keyword threshold of the link-OR-keywords rule.
pub const MIN_KEYWORD_MATCHES: usize = 3;

/// Default bot-activity threshold in posts per day.
pub const DEFAULT_BOT_POSTS_PER_DAY: f64 = 100.0;

pub const DEFAULT_DOMAINS: &str = include_str!("../data/domains.txt");
pub const DEFAULT_KEYWORDS: &str = include_str!("../data/keywords.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub is_paper: bool,
    pub matched_domains: Vec<String>,
    pub matched_keywords: Vec<String>,
    pub arxiv_ids: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifyError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid keyword pattern {keyword:?}: {source}")]
    Pattern {
        keyword: String,
        #[source]
        source: regex::Error,
    },
    #[error("catalog parse error: {0}")]
    Catalog(#[from] csv::Error),
    #[error("catalog entry for {id} has no categories")]
    EmptyCategories { id: String },
}

/// Compiled domain allowlist and keyword phrase list.
pub struct Classifier {
    domains: Vec<String>,
    keywords: Vec<(String, Regex)>,
}

impl Classifier {
    pub fn new<D, K>(domains: D, keywords: K) -> Result<Self, ClassifyError>
    where
        D: IntoIterator<Item = String>,
        K: IntoIterator<Item = String>,
    {
        let domains = domains
            .into_iter()
            .map(|d| d.trim().trim_start_matches('.').to_ascii_lowercase())
            .filter(|d| !d.is_empty())
            .collect();
        let mut compiled = Vec::new();
        for kw in keywords {
            let kw = kw.trim().to_lowercase();
            if kw.is_empty() {
                continue;
            }
            // A multi-word phrase matches across any run of whitespace.
            let escaped = kw
                .split_whitespace()
                .map(regex::escape)
                .collect::<Vec<_>>()
                .join(r"\s+");
            let pattern = format!(r"(?i)\b{escaped}\b");
            let re = Regex::new(&pattern).map_err(|source| ClassifyError::Pattern {
                keyword: kw.clone(),
                source,
            })?;
            compiled.push((kw, re));
        }
        Ok(Classifier {
            domains,
            keywords: compiled,
        })
    }

    /// Classifier backed by the lists shipped in `data/`.
    pub fn with_defaults() -> Self {
        Classifier::new(parse_list(DEFAULT_DOMAINS), parse_list(DEFAULT_KEYWORDS))
            .expect("default lists compile")
    }

    pub fn from_files(domains: &Path, keywords: &Path) -> Result<Self, ClassifyError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| ClassifyError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Classifier::new(parse_list(&read(domains)?), parse_list(&read(keywords)?))
    }

    pub fn classify(&self, text: &str, links: &[String]) -> ClassificationResult {
        let mut matched_domains = Vec::new();
        for link in links {
            if let Some(domain) = self.match_domain(link) {
                if !matched_domains.contains(&domain) {
                    matched_domains.push(domain);
                }
            }
        }
        let mut matched_keywords = Vec::new();
        for (kw, re) in &self.keywords {
            if re.is_match(text) {
                matched_keywords.push(kw.clone());
            }
        }
        let is_paper = !matched_domains.is_empty() || matched_keywords.len() >= MIN_KEYWORD_MATCHES;
        ClassificationResult {
            is_paper,
            matched_domains,
            matched_keywords,
            arxiv_ids: extract_arxiv_ids(links),
        }
    }

    /// The allowlist entry matched by this link's host, if any.
    /// Malformed URLs are skipped, never fatal.
    fn match_domain(&self, link: &str) -> Option<String> {
        let url = Url::parse(link).ok()?;
        let host = url.host_str()?.to_ascii_lowercase();
        self.domains
            .iter()
            .find(|d| host == **d || host.ends_with(&format!(".{d}")))
            .cloned()
    }

    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn keyword_phrases(&self) -> Vec<&str> {
        self.keywords.iter().map(|(k, _)| k.as_str()).collect()
    }
}

/// Strip comments and blank lines from a one-entry-per-line config file.
pub fn parse_list(raw: &str) -> Vec<String> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Pull new-style arXiv identifiers out of a link list: `/abs/` and `/pdf/`
/// URLs on arxiv.org plus bare `NNNN.NNNNN` ids, version-stripped,
/// deduplicated, order-preserving.
pub fn extract_arxiv_ids(links: &[String]) -> Vec<String> {
    static PATTERNS: std::sync::OnceLock<(Regex, Regex)> = std::sync::OnceLock::new();
    let (path_re, bare_re) = PATTERNS.get_or_init(|| {
        (
            Regex::new(r"^/(?:abs|pdf)/(\d{4}\.\d{4,5})(?:v\d+)?(?:\.pdf)?/?$").unwrap(),
            Regex::new(r"^(\d{4}\.\d{4,5})(?:v\d+)?$").unwrap(),
        )
    });
    let mut ids = Vec::new();
    for link in links {
        let id = if let Ok(url) = Url::parse(link) {
            let host_ok = url
                .host_str()
                .map(|h| {
                    let h = h.to_ascii_lowercase();
                    h == "arxiv.org" || h.ends_with(".arxiv.org")
                })
                .unwrap_or(false);
            if host_ok {
                path_re
                    .captures(url.path())
                    .map(|c| c.get(1).unwrap().as_str().to_string())
            } else {
                None
            }
        } else {
            bare_re
                .captures(link.trim())
                .map(|c| c.get(1).unwrap().as_str().to_string())
        };
        if let Some(id) = id {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
    }
    ids
}

/// Bot heuristic: handle mentions "arxiv" or "bot", or posting activity is
/// above the threshold.
pub fn is_bot_account(handle: &str, posts_per_day: f64, threshold: f64) -> bool {
    let h = handle.to_ascii_lowercase();
    h.contains("arxiv") || h.contains("bot") || posts_per_day > threshold
}

/// Mapping from arXiv identifier to its category codes, loaded from a local
/// CSV snapshot (`id,categories` with space-separated categories).
#[derive(Debug, Clone, Default)]
pub struct ArxivCatalog {
    map: HashMap<String, Vec<String>>,
}

impl ArxivCatalog {
    pub fn from_entries<I>(entries: I) -> Result<Self, ClassifyError>
    where
        I: IntoIterator<Item = (String, Vec<String>)>,
    {
        let mut map = HashMap::new();
        for (id, cats) in entries {
            if cats.is_empty() {
                return Err(ClassifyError::EmptyCategories { id });
            }
            map.insert(id, cats);
        }
        Ok(ArxivCatalog { map })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, ClassifyError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(ClassifyError::Catalog)?;
        let mut entries = Vec::new();
        for row in reader.records() {
            let row = row?;
            let id = row.get(0).unwrap_or("").trim().to_string();
            if id.is_empty() {
                continue;
            }
            let cats: Vec<String> = row
                .get(1)
                .unwrap_or("")
                .split_whitespace()
                .map(str::to_string)
                .collect();
            entries.push((id, cats));
        }
        ArxivCatalog::from_entries(entries)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), std::io::Error> {
        let mut rows: Vec<_> = self.map.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (id, cats) in rows {
            out.push_str(id);
            out.push(',');
            out.push_str(&cats.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)
    }

    pub fn categories(&self, arxiv_id: &str) -> Option<&[String]> {
        self.map.get(arxiv_id).map(Vec::as_slice)
    }

    /// Distinct categories of a post, in first-seen order across its ids.
    pub fn post_categories(&self, arxiv_ids: &[String]) -> Vec<String> {
        let mut cats = Vec::new();
        for id in arxiv_ids {
            if let Some(list) = self.categories(id) {
                for c in list {
                    if !cats.contains(c) {
                        cats.push(c.clone());
                    }
                }
            }
        }
        cats
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
