//! Service configuration, the bearer-token registry, cache policies, and the
//! endpoint routing table.

mod cidr;
mod groups;
mod pattern;
mod registry;
mod routes;
mod watch;

pub use cidr::Cidr;
pub use groups::{load_group_map, parse_group_map, GroupMap, GroupMapError};
pub use pattern::RoutePattern;
pub use registry::{
    load_token_registry, parse_token_registry, AccountPattern, RegistryError, RegistrySnapshot,
    TokenRecord,
};
pub use routes::{default_route_table, match_route, ExtractorId, HandlerKind, MethodPattern, RouteRule};
pub use watch::{Reloader, ReloaderStats, SharedSnapshots};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::scopes;

pub const CONFIG_ENV_VAR: &str = "SCHED_GATE_CONFIG";

/// Seconds after which even a stale entry becomes unusable (3 days).
pub const DEFAULT_FALLBACK_TTL: f64 = 259_200.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration ({rule}): {detail}")]
    Invariant { rule: &'static str, detail: String },
}

fn invariant(rule: &'static str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Invariant {
        rule,
        detail: detail.into(),
    }
}

/// Named freshness bounds plus a generation-time buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct CachePolicy {
    pub name: String,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub buffer_seconds: f64,
}

impl CachePolicy {
    pub fn new(name: &str, min_seconds: f64, max_seconds: f64, buffer_seconds: f64) -> Self {
        Self {
            name: name.to_string(),
            min_seconds,
            max_seconds,
            buffer_seconds,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_seconds <= 0.0 || self.max_seconds <= 0.0 {
            return Err(invariant(
                "policy-bounds-positive",
                format!("policy {:?} must have positive min/max seconds", self.name),
            ));
        }
        if self.min_seconds > self.max_seconds {
            return Err(invariant(
                "policy-min-le-max",
                format!(
                    "policy {:?} has min_seconds {} > max_seconds {}",
                    self.name, self.min_seconds, self.max_seconds
                ),
            ));
        }
        if !(1.0..=5.0).contains(&self.buffer_seconds) {
            return Err(invariant(
                "policy-buffer-range",
                format!(
                    "policy {:?} buffer_seconds {} outside [1, 5]",
                    self.name, self.buffer_seconds
                ),
            ));
        }
        Ok(())
    }
}

/// The built-in policies: short (1-10 s, +1 s), normal (10-30 s, +3 s),
/// long (30-60 s, +5 s).
pub fn default_policies() -> BTreeMap<String, CachePolicy> {
    [
        CachePolicy::new("short", 1.0, 10.0, 1.0),
        CachePolicy::new("normal", 10.0, 30.0, 3.0),
        CachePolicy::new("long", 30.0, 60.0, 5.0),
    ]
    .into_iter()
    .map(|p| (p.name.clone(), p))
    .collect()
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen_address: String,
    /// argv for the inetd-mode upstream binary (no shell interpretation).
    pub upstream_command: Vec<String>,
    /// argv producing a privileged upstream JWT on stdout.
    pub token_mint_command: Vec<String>,
    pub token_registry_path: PathBuf,
    pub group_map_path: Option<PathBuf>,
    pub registry_reload_interval: u64,
    pub cache_capacity: usize,
    pub fallback_ttl: f64,
    pub policies: BTreeMap<String, CachePolicy>,
    pub route_table: Vec<RouteRule>,
    /// Secret for the development credential verifier; absent disables the
    /// MUNGE-style provider.
    pub dev_credential_key: Option<String>,
    /// Value of the Host header on wire requests.
    pub upstream_host: String,
    pub upstream_timeout: f64,
    pub upstream_concurrency: usize,
    /// Environment variable names forwarded from the gateway's own
    /// environment to the upstream subprocess.
    pub upstream_env_allowlist: Vec<String>,
    /// Prepend the username to cache keys (stricter privacy deployments).
    pub per_user_cache: bool,
    /// Scope set granted to cluster users authenticated via credential.
    pub munge_default_scopes: Vec<String>,
    /// Assumed token lifetime when the mint output has no readable expiry.
    pub token_fallback_lifetime: f64,
    pub shutdown_grace: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    min_seconds: f64,
    max_seconds: f64,
    buffer_seconds: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    listen_address: Option<String>,
    upstream_command: Vec<String>,
    token_mint_command: Vec<String>,
    token_registry_path: Option<PathBuf>,
    group_map_path: Option<PathBuf>,
    registry_reload_interval: Option<u64>,
    cache_capacity: Option<usize>,
    fallback_ttl: Option<f64>,
    dev_credential_key: Option<String>,
    upstream_host: Option<String>,
    upstream_timeout: Option<f64>,
    upstream_concurrency: Option<usize>,
    upstream_env_allowlist: Option<Vec<String>>,
    per_user_cache: Option<bool>,
    munge_default_scopes: Option<Vec<String>>,
    token_fallback_lifetime: Option<f64>,
    shutdown_grace: Option<f64>,
    policies: Option<BTreeMap<String, RawPolicy>>,
    routes: Option<Vec<routes::RawRoute>>,
}

pub fn load_config(path: &Path) -> Result<ServiceConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base).map_err(|err| match err {
        ConfigError::Parse { message, .. } => ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parse and validate a config document. Relative paths resolve against
/// `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ServiceConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
        path: PathBuf::from("<config>"),
        message: e.to_string(),
    })?;

    if raw.upstream_command.is_empty() {
        return Err(invariant("upstream-command", "upstream_command must not be empty"));
    }
    if raw.token_mint_command.is_empty() {
        return Err(invariant(
            "token-mint-command",
            "token_mint_command must not be empty",
        ));
    }

    let mut policies = default_policies();
    if let Some(raw_policies) = raw.policies {
        for (name, p) in raw_policies {
            policies.insert(
                name.clone(),
                CachePolicy {
                    name,
                    min_seconds: p.min_seconds,
                    max_seconds: p.max_seconds,
                    buffer_seconds: p.buffer_seconds,
                },
            );
        }
    }
    for policy in policies.values() {
        policy.validate()?;
    }

    let fallback_ttl = raw.fallback_ttl.unwrap_or(DEFAULT_FALLBACK_TTL);
    let max_policy = policies
        .values()
        .map(|p| p.max_seconds)
        .fold(0.0_f64, f64::max);
    if fallback_ttl < max_policy {
        return Err(invariant(
            "fallback-ttl-covers-policies",
            format!("fallback_ttl {fallback_ttl} is below the largest policy max_seconds {max_policy}"),
        ));
    }

    let registry_reload_interval = raw.registry_reload_interval.unwrap_or(5);
    if !(1..=60).contains(&registry_reload_interval) {
        return Err(invariant(
            "reload-interval-range",
            format!("registry_reload_interval {registry_reload_interval} outside [1, 60] seconds"),
        ));
    }

    let cache_capacity = raw.cache_capacity.unwrap_or(1024);
    if cache_capacity == 0 {
        return Err(invariant("cache-capacity", "cache_capacity must be at least 1"));
    }

    let route_table = match raw.routes {
        None => default_route_table(),
        Some(raw_routes) if raw_routes.is_empty() => {
            return Err(invariant("route-table-empty", "routes list must not be empty"))
        }
        Some(raw_routes) => raw_routes
            .into_iter()
            .map(RouteRule::from_raw)
            .collect::<Result<_, _>>()?,
    };
    validate_route_table(&route_table, &policies)?;

    let munge_default_scopes = raw.munge_default_scopes.unwrap_or_else(|| {
        ["slurm:read", "slurmdb:read", "slurm:jobs:manage", "pact:self", "health:check"]
            .map(str::to_string)
            .to_vec()
    });
    for scope in &munge_default_scopes {
        if !scopes::is_known(scope) {
            return Err(invariant(
                "munge-default-scopes-known",
                format!("unknown scope {scope:?} in munge_default_scopes"),
            ));
        }
    }

    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

    Ok(ServiceConfig {
        listen_address: raw.listen_address.unwrap_or_else(|| "127.0.0.1:6820".into()),
        upstream_command: raw.upstream_command,
        token_mint_command: raw.token_mint_command,
        token_registry_path: resolve(raw.token_registry_path.unwrap_or_else(|| "tokens.toml".into())),
        group_map_path: raw.group_map_path.map(resolve),
        registry_reload_interval,
        cache_capacity,
        fallback_ttl,
        policies,
        route_table,
        dev_credential_key: raw.dev_credential_key,
        upstream_host: raw.upstream_host.unwrap_or_else(|| "upstream".into()),
        upstream_timeout: raw.upstream_timeout.unwrap_or(30.0),
        upstream_concurrency: raw.upstream_concurrency.unwrap_or(64).max(1),
        upstream_env_allowlist: raw.upstream_env_allowlist.unwrap_or_default(),
        per_user_cache: raw.per_user_cache.unwrap_or(false),
        munge_default_scopes,
        token_fallback_lifetime: raw.token_fallback_lifetime.unwrap_or(300.0),
        shutdown_grace: raw.shutdown_grace.unwrap_or(10.0),
    })
}

fn validate_route_table(
    table: &[RouteRule],
    policies: &BTreeMap<String, CachePolicy>,
) -> Result<(), ConfigError> {
    let mut seen = std::collections::BTreeSet::new();
    for rule in table {
        let key = (rule.method.to_string(), rule.pattern.as_str().to_string());
        if !seen.insert(key) {
            return Err(invariant(
                "route-unique",
                format!("duplicate route ({} {})", rule.method, rule.pattern),
            ));
        }
        for scope in &rule.required_scopes {
            if !scopes::is_known(scope) {
                return Err(invariant(
                    "route-scope-known",
                    format!("unknown scope {scope:?} on route {} {}", rule.method, rule.pattern),
                ));
            }
        }
        if let Some(policy) = &rule.cache_policy {
            if !policies.contains_key(policy) {
                return Err(invariant(
                    "route-policy-known",
                    format!("route {} {} names undefined cache policy {policy:?}", rule.method, rule.pattern),
                ));
            }
            if !rule.method.is_exactly("GET") {
                return Err(invariant(
                    "route-cache-get-only",
                    format!("route {} {} declares a cache policy on a non-GET method", rule.method, rule.pattern),
                ));
            }
        }
        if rule.account_extractor.is_some() && !rule.mutating {
            return Err(invariant(
                "route-extractor-mutating",
                format!("route {} {} has an account extractor but is not mutating", rule.method, rule.pattern),
            ));
        }
        if rule.handler == HandlerKind::Upstream && rule.required_scopes.is_empty() {
            return Err(invariant(
                "route-upstream-authenticated",
                format!(
                    "upstream route {} {} must require at least one scope",
                    rule.method, rule.pattern
                ),
            ));
        }
    }
    Ok(())
}
