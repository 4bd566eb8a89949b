//! Randomized invariants over the pure parts: cache key canonicalization,
//! the eviction backend, registry loading, and route matching.

use std::collections::HashMap;
use std::path::Path;

use bytes::Bytes;
use proptest::prelude::*;

use sched_gate::cache::{AcceptClass, CacheBackend, CacheEntry, CacheKey, MemoryBackend};
use sched_gate::config::{match_route, parse_config, parse_token_registry};
use sched_gate::scopes;

// ---------------------------------------------------------------------------
// Cache keys
// ---------------------------------------------------------------------------

fn segment() -> impl Strategy<Value = String> {
    "[a-z0-9_.]{1,10}"
}

fn query_params() -> impl Strategy<Value = Vec<(String, String)>> {
    prop::collection::vec(("[a-z_]{1,8}", "[a-zA-Z0-9%._-]{0,12}"), 0..6)
}

fn render_query(params: &[(String, String)]) -> Option<String> {
    if params.is_empty() {
        return None;
    }
    Some(
        params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("&"),
    )
}

proptest! {
    /// Query parameter order never splits the cache.
    #[test]
    fn cache_key_ignores_query_order(
        segs in prop::collection::vec(segment(), 1..5),
        params in query_params(),
        shuffled in Just(()).prop_perturb(|_, mut rng| rng.random::<u64>()),
    ) {
        let path = format!("/{}", segs.join("/"));
        let mut reordered = params.clone();
        // Deterministic reshuffle derived from the perturbation seed.
        let n = reordered.len();
        if n > 1 {
            let mut state = shuffled;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                reordered.swap(i, (state % (i as u64 + 1)) as usize);
            }
        }
        let a = CacheKey::from_request("GET", &path, render_query(&params).as_deref(), None, None);
        let b = CacheKey::from_request("GET", &path, render_query(&reordered).as_deref(), None, None);
        prop_assert_eq!(a, b);
    }

    /// Slash noise and method case collapse to one key; a genuinely
    /// different path never does.
    #[test]
    fn cache_key_normalizes_path_and_method(
        segs in prop::collection::vec(segment(), 1..5),
        doubled_at in any::<prop::sample::Index>(),
        trailing in any::<bool>(),
    ) {
        let clean = format!("/{}", segs.join("/"));
        let mut noisy = String::new();
        let double = doubled_at.index(segs.len());
        for (i, seg) in segs.iter().enumerate() {
            noisy.push('/');
            if i == double {
                noisy.push('/');
            }
            noisy.push_str(seg);
        }
        if trailing {
            noisy.push('/');
        }
        let a = CacheKey::from_request("get", &clean, None, Some("application/json"), None);
        let b = CacheKey::from_request("GET", &noisy, None, Some("*/*"), None);
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.accept, AcceptClass::Json);

        let other = CacheKey::from_request("GET", &format!("{clean}/more"), None, None, None);
        prop_assert_ne!(&b, &other);
    }

    /// Per-user keys isolate users from each other and from the shared key.
    #[test]
    fn cache_key_isolates_users(user_a in "[a-z]{1,8}", user_b in "[a-z]{1,8}") {
        let shared = CacheKey::from_request("GET", "/x", None, None, None);
        let a = CacheKey::from_request("GET", "/x", None, None, Some(&user_a));
        let b = CacheKey::from_request("GET", "/x", None, None, Some(&user_b));
        prop_assert_ne!(&shared, &a);
        prop_assert_eq!(user_a == user_b, a == b);
    }
}

// ---------------------------------------------------------------------------
// Eviction backend vs a transparent model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Op {
    Put { key: usize, ttl_long: bool },
    Get { key: usize },
    Advance { seconds: u8 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..10usize, any::<bool>()).prop_map(|(key, ttl_long)| Op::Put { key, ttl_long }),
        (0..10usize).prop_map(|key| Op::Get { key }),
        (1..20u8).prop_map(|seconds| Op::Advance { seconds }),
    ]
}

struct ModelSlot {
    freq: u64,
    seq: u64,
    expires_at: f64,
    tag: u64,
}

/// Literal transcription of the documented policy: evict the least
/// frequently used key, FIFO among ties, after dropping expired keys.
#[derive(Default)]
struct Model {
    slots: HashMap<usize, ModelSlot>,
    next_seq: u64,
}

impl Model {
    fn get(&mut self, key: usize, now: f64) -> Option<u64> {
        if self.slots.get(&key).is_some_and(|s| now >= s.expires_at) {
            self.slots.remove(&key);
            return None;
        }
        let slot = self.slots.get_mut(&key)?;
        slot.freq += 1;
        Some(slot.tag)
    }

    fn put(&mut self, key: usize, ttl: f64, now: f64, tag: u64, capacity: usize) {
        if let Some(slot) = self.slots.get_mut(&key) {
            slot.expires_at = now + ttl;
            slot.tag = tag;
            return;
        }
        if self.slots.len() >= capacity {
            let expired: Vec<usize> = self
                .slots
                .iter()
                .filter(|(_, s)| now >= s.expires_at)
                .map(|(k, _)| *k)
                .collect();
            for k in expired {
                self.slots.remove(&k);
            }
        }
        while self.slots.len() >= capacity {
            let victim = self
                .slots
                .iter()
                .min_by_key(|(_, s)| (s.freq, s.seq))
                .map(|(k, _)| *k)
                .expect("non-empty when over capacity");
            self.slots.remove(&victim);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.slots.insert(
            key,
            ModelSlot {
                freq: 1,
                seq,
                expires_at: now + ttl,
                tag,
            },
        );
    }
}

fn backend_key(i: usize) -> CacheKey {
    CacheKey::from_request("GET", &format!("/k/{i}"), None, None, None)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn memory_backend_is_exactly_lfu_with_fifo_ties(ops in prop::collection::vec(op(), 1..120)) {
        const CAPACITY: usize = 4;
        let backend = MemoryBackend::new(CAPACITY);
        let mut model = Model::default();
        let mut now = 0.0f64;

        for (i, op) in ops.iter().enumerate() {
            let tag = i as u64;
            match op {
                Op::Put { key, ttl_long } => {
                    let ttl = if *ttl_long { 1_000.0 } else { 8.0 };
                    let entry = CacheEntry::new(
                        now,
                        now + 1.0,
                        200,
                        vec![],
                        Bytes::from(tag.to_string()),
                    );
                    backend.put(&backend_key(*key), entry, ttl, now).unwrap();
                    model.put(*key, ttl, now, tag, CAPACITY);
                }
                Op::Get { key } => {
                    let got = backend.get(&backend_key(*key), now).unwrap();
                    let want = model.get(*key, now);
                    match (&got, &want) {
                        (Some(entry), Some(tag)) => {
                            let expected = tag.to_string();
                            prop_assert_eq!(
                                entry.body.as_ref(),
                                expected.as_bytes(),
                                "op {}: wrong entry served", i
                            );
                        }
                        (None, None) => {}
                        _ => prop_assert!(false, "op {}: hit/miss divergence got={:?} want={:?}",
                                          i, got.is_some(), want.is_some()),
                    }
                }
                Op::Advance { seconds } => now += f64::from(*seconds),
            }
            prop_assert_eq!(backend.len(), model.slots.len(), "op {}: occupancy divergence", i);
        }

        // Final sweep: both sides agree on every key's presence.
        for key in 0..10 {
            let got = backend.get(&backend_key(key), now).unwrap().is_some();
            let want = model.get(key, now).is_some();
            prop_assert_eq!(got, want, "final sweep key {}", key);
        }
    }
}

// ---------------------------------------------------------------------------
// Registry loading is all-or-nothing
// ---------------------------------------------------------------------------

fn valid_entry(i: usize, with_pattern: bool) -> String {
    let pattern = if with_pattern {
        "accounts = \"acct_.*\"\n"
    } else {
        ""
    };
    format!(
        "[svc{i}]\ntoken = \"token-value-{i}\"\nusername = \"user{i}\"\nscopes = [\"slurm:read\"]\n{pattern}\n"
    )
}

fn corrupt_entry(kind: usize, i: usize) -> String {
    match kind % 5 {
        0 => format!("[bad{i}]\ntoken = \"\"\nusername = \"user\"\nscopes = [\"slurm:read\"]\n\n"),
        1 => format!("[bad{i}]\ntoken = \"has space\"\nusername = \"user\"\nscopes = [\"slurm:read\"]\n\n"),
        2 => format!("[bad{i}]\ntoken = \"bad-{i}\"\nusername = \"\"\nscopes = [\"slurm:read\"]\n\n"),
        3 => format!("[bad{i}]\ntoken = \"bad-{i}\"\nusername = \"user\"\nscopes = [\"slurm:frobnicate\"]\n\n"),
        _ => format!("[bad{i}]\ntoken = \"bad-{i}\"\nusername = \"user\"\nscopes = [\"slurm:read\"]\naccounts = \"acct_[\"\n\n"),
    }
}

proptest! {
    #[test]
    fn registry_accepts_all_valid_entries(
        n in 1..8usize,
        patterns in prop::collection::vec(any::<bool>(), 8),
    ) {
        let text: String = (0..n).map(|i| valid_entry(i, patterns[i])).collect();
        let snapshot = parse_token_registry(&text).expect("valid registry");
        prop_assert_eq!(snapshot.len(), n);
    }

    /// One bad entry anywhere rejects the whole file.
    #[test]
    fn registry_rejects_whole_file_on_one_bad_entry(
        n in 1..8usize,
        kind in 0..5usize,
        at in any::<prop::sample::Index>(),
    ) {
        let at = at.index(n + 1);
        let mut text = String::new();
        for i in 0..n {
            if i == at {
                text.push_str(&corrupt_entry(kind, 100 + i));
            }
            text.push_str(&valid_entry(i, false));
        }
        if at >= n {
            text.push_str(&corrupt_entry(kind, 100 + n));
        }
        prop_assert!(parse_token_registry(&text).is_err());
    }

    /// Two entries sharing a token value are rejected: a bearer value must
    /// map to exactly one identity.
    #[test]
    fn registry_rejects_duplicate_token_values(n in 2..6usize, dup in 0..5usize) {
        let dup = dup % (n - 1);
        let mut text: String = (0..n).map(|i| valid_entry(i, false)).collect();
        text.push_str(&format!(
            "[extra]\ntoken = \"token-value-{dup}\"\nusername = \"other\"\nscopes = [\"slurm:read\"]\n"
        ));
        prop_assert!(parse_token_registry(&text).is_err());
    }
}

// ---------------------------------------------------------------------------
// Route matching
// ---------------------------------------------------------------------------

fn base_config(routes: &str) -> String {
    format!(
        r#"
upstream_command = ["/bin/true"]
token_mint_command = ["/bin/true"]
{routes}
"#
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// For rules whose paths cannot overlap, declaration order is
    /// irrelevant: every request resolves to the same rule.
    #[test]
    fn route_resolution_is_order_independent_for_disjoint_rules(
        count in 2..15usize,
        order in prop::collection::vec(any::<prop::sample::Index>(), 15),
    ) {
        let catalog: Vec<&str> = scopes::all().collect();
        let mut indices: Vec<usize> = (0..count).collect();
        for (i, idx) in order.iter().take(count).enumerate() {
            indices.swap(i, idx.index(count));
        }

        let mut routes = String::new();
        for &i in &indices {
            routes.push_str(&format!(
                "[[routes]]\nmethod = \"GET\"\npath = \"/probe/{i}\"\nscopes = [\"{}\"]\n\n",
                catalog[i % catalog.len()]
            ));
        }
        let config = parse_config(&base_config(&routes), Path::new("/tmp")).expect("config");

        for i in 0..count {
            let rule = match_route(&config.route_table, "GET", &format!("/probe/{i}"))
                .expect("declared route resolves");
            prop_assert!(rule.required_scopes.contains(catalog[i % catalog.len()]));
            prop_assert_eq!(rule.required_scopes.len(), 1);
            // Method narrows the match: nothing was declared for POST.
            let posted = match_route(&config.route_table, "POST", &format!("/probe/{i}"));
            prop_assert!(posted.is_none());
        }
        prop_assert!(match_route(&config.route_table, "GET", "/probe/unlisted").is_none());
    }

    /// Overlapping rules resolve to the first one declared, whatever the
    /// rest of the table looks like.
    #[test]
    fn route_resolution_prefers_first_declared(extra in 0..4usize) {
        const SHADOWS: [&str; 3] = ["/api/**", "/api/*/*", "/api/*/thing"];
        let mut routes = String::new();
        routes.push_str(
            "[[routes]]\nmethod = \"GET\"\npath = \"/api/*/thing\"\nscopes = [\"slurm:read\"]\n\n",
        );
        for path in SHADOWS.iter().take(extra) {
            routes.push_str(&format!(
                "[[routes]]\nmethod = \"*\"\npath = \"{path}\"\nscopes = [\"slurmdb:read\"]\n\n"
            ));
        }
        let config = parse_config(&base_config(&routes), Path::new("/tmp")).expect("config");
        let rule = match_route(&config.route_table, "GET", "/api/v1/thing").expect("match");
        prop_assert!(rule.required_scopes.contains("slurm:read"));
    }
}
