//! Per-request bookkeeping and process-wide counters.

use std::net::IpAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde_json::json;

use crate::cache::CacheStatus;

/// The fixed pipeline. A request may stop early but never visits stages out
/// of this order, so any observed sequence is a prefix of `STAGE_ORDER`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Route,
    Auth,
    Authz,
    Cache,
    Upstream,
}

pub const STAGE_ORDER: [Stage; 5] = [
    Stage::Route,
    Stage::Auth,
    Stage::Authz,
    Stage::Cache,
    Stage::Upstream,
];

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Route => "route",
            Stage::Auth => "auth",
            Stage::Authz => "authz",
            Stage::Cache => "cache",
            Stage::Upstream => "upstream",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageEntry {
    pub stage: Stage,
    pub entered_at: f64,
}

#[derive(Debug, Clone)]
pub struct RequestContext {
    pub request_id: String,
    pub arrived_at: f64,
    pub source: IpAddr,
    pub username: Option<String>,
    /// Pattern of the matched route, for logs.
    pub route: Option<String>,
    pub cache_status: Option<CacheStatus>,
    pub stages: Vec<StageEntry>,
}

impl RequestContext {
    pub fn new(arrived_at: f64, source: IpAddr) -> Self {
        Self {
            request_id: uuid::Uuid::new_v4().to_string(),
            arrived_at,
            source,
            username: None,
            route: None,
            cache_status: None,
            stages: Vec::with_capacity(5),
        }
    }

    pub fn enter(&mut self, stage: Stage, now: f64) {
        debug_assert_eq!(
            Some(stage),
            STAGE_ORDER.get(self.stages.len()).copied(),
            "stages must advance in pipeline order"
        );
        self.stages.push(StageEntry {
            stage,
            entered_at: now,
        });
    }

    /// True when the visited stages are a prefix of the pipeline and their
    /// timestamps never run backwards.
    pub fn stages_well_formed(&self) -> bool {
        let prefix = self
            .stages
            .iter()
            .zip(STAGE_ORDER.iter())
            .all(|(entry, expected)| entry.stage == *expected)
            && self.stages.len() <= STAGE_ORDER.len();
        let monotone = self
            .stages
            .windows(2)
            .all(|w| w[1].entered_at >= w[0].entered_at);
        prefix && monotone
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub requests: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_misses: AtomicU64,
    pub cache_stale_served: AtomicU64,
    pub upstream_invocations: AtomicU64,
    pub auth_failures: AtomicU64,
    pub authz_denials: AtomicU64,
    pub account_checks: AtomicU64,
    last_upstream_error: Mutex<Option<String>>,
}

impl Metrics {
    pub fn bump(counter: &AtomicU64) {
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache(&self, status: CacheStatus) {
        match status {
            CacheStatus::Hit => Self::bump(&self.cache_hits),
            CacheStatus::Miss => Self::bump(&self.cache_misses),
            CacheStatus::Stale => Self::bump(&self.cache_stale_served),
        }
    }

    pub fn record_upstream_ok(&self) {
        *self.last_upstream_error.lock().unwrap() = None;
    }

    pub fn record_upstream_error(&self, detail: String) {
        *self.last_upstream_error.lock().unwrap() = Some(detail);
    }

    pub fn last_upstream_error(&self) -> Option<String> {
        self.last_upstream_error.lock().unwrap().clone()
    }

    pub fn snapshot(&self) -> serde_json::Value {
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        json!({
            "account_checks": get(&self.account_checks),
            "auth_failures": get(&self.auth_failures),
            "authz_denials": get(&self.authz_denials),
            "cache_hits": get(&self.cache_hits),
            "cache_misses": get(&self.cache_misses),
            "cache_stale_served": get(&self.cache_stale_served),
            "requests": get(&self.requests),
            "upstream_invocations": get(&self.upstream_invocations),
        })
    }
}
