//! Response cache: policy-clamped freshness, long-horizon stale fallback,
//! and single-flight coalescing in front of an evicting backend.

mod backend;
mod coalesce;
mod control;

pub use backend::{BackendError, CacheBackend, MemoryBackend};
pub use coalesce::{Abortable, FlightGroup};
pub use control::{parse_cache_control, Directives};

use std::sync::Arc;

use bytes::Bytes;

use crate::clock::Clock;
use crate::config::CachePolicy;

/// Media-type class derived from the `Accept` header. Responses vary by
/// serialization format, so the class is part of the key; finer Accept
/// details are not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AcceptClass {
    Json,
    Yaml,
    Other,
}

impl AcceptClass {
    pub fn classify(accept: Option<&str>) -> Self {
        let Some(accept) = accept else {
            return AcceptClass::Json;
        };
        let lower = accept.to_ascii_lowercase();
        if lower.contains("json") || lower.contains("*/*") {
            AcceptClass::Json
        } else if lower.contains("yaml") {
            AcceptClass::Yaml
        } else {
            AcceptClass::Other
        }
    }
}

/// Identity is deliberately not part of the key: responses are shared
/// between users (the upstream serves the same data to everyone when its
/// private-data setting is open). `user` is populated only when the
/// stricter per-user mode is configured.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub user: Option<String>,
    pub method: String,
    pub path: String,
    pub query: String,
    pub accept: AcceptClass,
}

impl CacheKey {
    pub fn from_request(
        method: &str,
        path: &str,
        query: Option<&str>,
        accept: Option<&str>,
        user: Option<&str>,
    ) -> Self {
        Self {
            user: user.map(str::to_string),
            method: method.to_ascii_uppercase(),
            path: normalize_path(path),
            query: canonicalize_query(query),
            accept: AcceptClass::classify(accept),
        }
    }
}

fn normalize_path(path: &str) -> String {
    let segments: Vec<&str> = path.split('/').filter(|s| !s.is_empty()).collect();
    if segments.is_empty() {
        "/".to_string()
    } else {
        format!("/{}", segments.join("/"))
    }
}

/// Sort query parameters so argument order does not split the cache.
fn canonicalize_query(query: Option<&str>) -> String {
    let Some(query) = query else {
        return String::new();
    };
    let mut params: Vec<&str> = query.split('&').filter(|p| !p.is_empty()).collect();
    params.sort_unstable();
    params.join("&")
}

/// Immutable stored response.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub generated_at: f64,
    pub stale_at: f64,
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

impl CacheEntry {
    pub fn new(
        generated_at: f64,
        stale_at: f64,
        status: u16,
        headers: Vec<(String, String)>,
        body: Bytes,
    ) -> Self {
        assert!(stale_at > generated_at, "an entry must be born fresh");
        Self {
            generated_at,
            stale_at,
            status,
            headers,
            body,
        }
    }
}

/// lifetime = clamp(generation_duration + buffer, min, max).
pub fn compute_freshness(generation_duration: f64, policy: &CachePolicy) -> f64 {
    (generation_duration + policy.buffer_seconds).clamp(policy.min_seconds, policy.max_seconds)
}

#[derive(Debug, Clone)]
pub enum Lookup {
    Fresh(Arc<CacheEntry>),
    Stale(Arc<CacheEntry>),
    Miss,
}

/// Classify what the backend holds for `key`. The boundary `now = stale_at`
/// is Stale; a backend failure is a Miss (the cache never fails a request).
pub fn lookup(backend: &dyn CacheBackend, key: &CacheKey, now: f64) -> Lookup {
    match backend.get(key, now) {
        Ok(Some(entry)) if now < entry.stale_at => Lookup::Fresh(entry),
        Ok(Some(entry)) => Lookup::Stale(entry),
        Ok(None) => Lookup::Miss,
        Err(err) => {
            tracing::warn!(error = %err, "cache read failed; treating as miss");
            Lookup::Miss
        }
    }
}

/// Only successful plain reads are stored; errors must never poison the
/// cache (stale fallback depends on the last good body surviving).
pub fn cacheability(status: u16, method: &str) -> bool {
    method.eq_ignore_ascii_case("GET") && matches!(status, 200 | 203)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Stale,
}

impl CacheStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Hit => "HIT",
            CacheStatus::Miss => "MISS",
            CacheStatus::Stale => "STALE",
        }
    }
}

/// Response produced by a handler before it reaches the cache.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

/// What the cache hands back to the server layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ServedResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
    pub cache_status: CacheStatus,
    /// Seconds since generation, set on cache-served responses.
    pub age_seconds: Option<u64>,
    /// True exactly when a stale entry was served under stale-if-error.
    pub warn_stale: bool,
}

impl ServedResponse {
    fn from_entry(entry: &CacheEntry, cache_status: CacheStatus, now: f64, warn_stale: bool) -> Self {
        Self {
            status: entry.status,
            headers: entry.headers.clone(),
            body: entry.body.clone(),
            cache_status,
            age_seconds: Some((now - entry.generated_at).max(0.0).floor() as u64),
            warn_stale,
        }
    }
}

pub struct ServeOutcome<E> {
    pub result: Result<ServedResponse, E>,
    /// This call executed the handler (flight owner).
    pub owner: bool,
    /// Handler wall time, present when `owner`.
    pub generation_seconds: Option<f64>,
}

#[derive(Clone)]
struct FlightValue<E> {
    result: Result<GeneratedResponse, E>,
    duration: f64,
}

impl<E: Abortable> Abortable for FlightValue<E> {
    fn aborted() -> Self {
        Self {
            result: Err(E::aborted()),
            duration: 0.0,
        }
    }
}

/// The caching middleware for routes that declare a policy.
pub struct CacheLayer<E> {
    backend: Arc<dyn CacheBackend>,
    flights: FlightGroup<CacheKey, FlightValue<E>>,
    fallback_ttl: f64,
}

impl<E> CacheLayer<E>
where
    E: Abortable + Clone + Send + Sync + 'static,
{
    pub fn new(backend: Arc<dyn CacheBackend>, fallback_ttl: f64) -> Self {
        Self {
            backend,
            flights: FlightGroup::new(),
            fallback_ttl,
        }
    }

    pub fn backend(&self) -> &Arc<dyn CacheBackend> {
        &self.backend
    }

    /// Full serve flow: fresh hit, else coalesced generation with store,
    /// else stale fallback when the client opted in with `stale-if-error`.
    /// A client `no-cache` skips the freshness check but not the store.
    pub async fn serve<F, Fut>(
        &self,
        clock: Arc<dyn Clock>,
        key: CacheKey,
        method: &str,
        policy: &CachePolicy,
        directives: Directives,
        handler: F,
    ) -> ServeOutcome<E>
    where
        F: FnOnce() -> Fut,
        Fut: std::future::Future<Output = Result<GeneratedResponse, E>> + Send + 'static,
    {
        let now = clock.now();
        if !directives.no_cache {
            if let Lookup::Fresh(entry) = lookup(&*self.backend, &key, now) {
                return ServeOutcome {
                    result: Ok(ServedResponse::from_entry(&entry, CacheStatus::Hit, now, false)),
                    owner: false,
                    generation_seconds: None,
                };
            }
        }

        let generate = {
            let backend = self.backend.clone();
            let clock = clock.clone();
            let policy = policy.clone();
            let key = key.clone();
            let method = method.to_string();
            let fallback_ttl = self.fallback_ttl;
            let future = handler();
            move || async move {
                let started = clock.now();
                let result = future.await;
                let finished = clock.now();
                let duration = finished - started;
                if let Ok(generated) = &result {
                    if cacheability(generated.status, &method) {
                        let lifetime = compute_freshness(duration, &policy);
                        let entry = CacheEntry::new(
                            finished,
                            finished + lifetime,
                            generated.status,
                            generated.headers.clone(),
                            generated.body.clone(),
                        );
                        if let Err(err) = backend.put(&key, entry, fallback_ttl, finished) {
                            tracing::warn!(error = %err, "cache write failed; serving uncached");
                        }
                    }
                }
                FlightValue { result, duration }
            }
        };

        let (value, owner) = self.flights.run(key.clone(), generate).await;
        let generation_seconds = owner.then_some(value.duration);

        match value.result {
            Ok(generated) => ServeOutcome {
                result: Ok(ServedResponse {
                    status: generated.status,
                    headers: generated.headers,
                    body: generated.body,
                    cache_status: CacheStatus::Miss,
                    age_seconds: None,
                    warn_stale: false,
                }),
                owner,
                generation_seconds,
            },
            Err(err) => {
                if directives.stale_if_error.is_some() {
                    let now = clock.now();
                    if let Lookup::Fresh(entry) | Lookup::Stale(entry) =
                        lookup(&*self.backend, &key, now)
                    {
                        let staleness = (now - entry.stale_at).max(0.0);
                        if directives.allows_stale(staleness) {
                            return ServeOutcome {
                                result: Ok(ServedResponse::from_entry(
                                    &entry,
                                    CacheStatus::Stale,
                                    now,
                                    true,
                                )),
                                owner,
                                generation_seconds,
                            };
                        }
                    }
                }
                ServeOutcome {
                    result: Err(err),
                    owner,
                    generation_seconds,
                }
            }
        }
    }
}
