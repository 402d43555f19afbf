//! Harness-backed follows client: serves a fixed follow table with
//! configurable injected latency and failures.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::rec::{FollowsClient, FollowsError};
use crate::time::ManualClock;

/// How injected latency is observed: advancing a virtual clock (replay) or
/// actually sleeping (wall-clock tests).
#[derive(Clone)]
pub enum LatencyMode {
    None,
    /// Advance this clock by the configured latency on every call.
    Virtual(Arc<ManualClock>),
    /// Sleep for the configured latency.
    Real,
}

pub enum FailurePlan {
    Never,
    /// Fail each call independently with this probability (seeded).
    Rate {
        probability: f64,
        seed: u64,
    },
    /// Scripted outcomes, consumed in order (true = fail); exhausted
    /// entries succeed.
    Script(Vec<bool>),
}

#[allow(clippy::large_enum_variant)]
enum FailureState {
    Never,
    Rate { probability: f64, rng: ChaCha8Rng },
    Script { plan: Vec<bool>, next: usize },
}

pub struct StubFollowsClient {
    table: HashMap<String, Vec<String>>,
    latency_micros: i64,
    latency_mode: LatencyMode,
    failures: Mutex<FailureState>,
    calls: AtomicU64,
}

impl StubFollowsClient {
    pub fn new(table: HashMap<String, Vec<String>>) -> Self {
        StubFollowsClient {
            table,
            latency_micros: 0,
            latency_mode: LatencyMode::None,
            failures: Mutex::new(FailureState::Never),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_latency(mut self, micros: i64, mode: LatencyMode) -> Self {
        self.latency_micros = micros;
        self.latency_mode = mode;
        self
    }

    pub fn with_failures(mut self, plan: FailurePlan) -> Self {
        self.failures = Mutex::new(match plan {
            FailurePlan::Never => FailureState::Never,
            FailurePlan::Rate { probability, seed } => FailureState::Rate {
                probability,
                rng: ChaCha8Rng::seed_from_u64(seed),
            },
            FailurePlan::Script(plan) => FailureState::Script { plan, next: 0 },
        });
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn should_fail(&self) -> bool {
        let mut state = self.failures.lock().unwrap();
        match &mut *state {
            FailureState::Never => false,
            FailureState::Rate { probability, rng } => rng.gen_range(0.0..1.0) < *probability,
            FailureState::Script { plan, next } => {
                let fail = plan.get(*next).copied().unwrap_or(false);
                *next += 1;
                fail
            }
        }
    }
}

impl FollowsClient for StubFollowsClient {
    fn get_follows(&self, user_id: &str) -> Result<Vec<String>, FollowsError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if self.latency_micros > 0 {
            match &self.latency_mode {
                LatencyMode::None => {}
                LatencyMode::Virtual(clock) => clock.advance_micros(self.latency_micros),
                LatencyMode::Real => {
                    std::thread::sleep(std::time::Duration::from_micros(self.latency_micros as u64))
                }
            }
        }
        if self.should_fail() {
            return Err(FollowsError::Unavailable("injected failure".into()));
        }
        Ok(self.table.get(user_id).cloned().unwrap_or_default())
    }
}
