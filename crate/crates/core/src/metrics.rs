//! Process-wide counters, cheap enough to bump from any thread.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

macro_rules! metrics_struct {
    ($($field:ident),+ $(,)?) => {
        /// Shared counters; every field counts occurrences of one event.
        #[derive(Debug, Default)]
        pub struct Metrics {
            $(pub $field: AtomicU64,)+
        }

        impl Metrics {
            pub fn snapshot(&self) -> BTreeMap<String, u64> {
                let mut map = BTreeMap::new();
                $(map.insert(stringify!($field).to_string(), self.$field.load(Ordering::Relaxed));)+
                map
            }
        }
    };
}

metrics_struct! {
    events_enqueued,
    events_dropped_irrelevant,
    events_skipped_duplicate_seq,
    events_dead_lettered,
    posts_stored,
    posts_duplicate,
    posts_deleted,
    interactions_stored,
    interactions_duplicate,
    interactions_dropped_unknown_subject,
    stream_reconnects,
    generations_completed,
    generation_failures,
    follows_calls,
    feed_requests,
    access_logs_written,
    keep_warm_pings,
}

pub trait CounterExt {
    fn bump(&self);
    fn add(&self, n: u64);
    fn get(&self) -> u64;
}

impl CounterExt for AtomicU64 {
    fn bump(&self) {
        self.fetch_add(1, Ordering::Relaxed);
    }

    fn add(&self, n: u64) {
        self.fetch_add(n, Ordering::Relaxed);
    }

    fn get(&self) -> u64 {
        self.load(Ordering::Relaxed)
    }
}
