use std::collections::BTreeSet;
use std::fmt;

use serde::Deserialize;

use super::cidr::Cidr;
use super::pattern::RoutePattern;
use super::{invariant, ConfigError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MethodPattern {
    Any,
    Exact(String),
}

impl MethodPattern {
    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        if raw == "*" {
            return Ok(MethodPattern::Any);
        }
        let upper = raw.to_ascii_uppercase();
        match upper.as_str() {
            "GET" | "HEAD" | "POST" | "PUT" | "DELETE" | "PATCH" | "OPTIONS" => {
                Ok(MethodPattern::Exact(upper))
            }
            _ => Err(invariant("route-method", format!("unsupported method {raw:?}"))),
        }
    }

    pub fn matches(&self, method: &str) -> bool {
        match self {
            MethodPattern::Any => true,
            MethodPattern::Exact(m) => m.eq_ignore_ascii_case(method),
        }
    }

    pub fn is_exactly(&self, method: &str) -> bool {
        matches!(self, MethodPattern::Exact(m) if m == method)
    }
}

impl fmt::Display for MethodPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodPattern::Any => f.write_str("*"),
            MethodPattern::Exact(m) => f.write_str(m),
        }
    }
}

/// What serves a matched route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandlerKind {
    /// Proxy to the scheduler REST daemon.
    Upstream,
    /// Liveness probe answered locally.
    Health,
    /// Readiness probe reporting per-component state.
    HealthDeep,
}

/// Which request-body walk finds the accounts a mutating call touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorId {
    JobSubmit,
    AccountsBody,
    AssociationsBody,
    UsersAssociationBody,
    AccountPath,
}

impl ExtractorId {
    pub fn name(self) -> &'static str {
        match self {
            ExtractorId::JobSubmit => "job_submit",
            ExtractorId::AccountsBody => "accounts_body",
            ExtractorId::AssociationsBody => "associations_body",
            ExtractorId::UsersAssociationBody => "users_association_body",
            ExtractorId::AccountPath => "account_path",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct RawRoute {
    method: String,
    path: String,
    #[serde(default)]
    scopes: Vec<String>,
    cache: Option<String>,
    extractor: Option<ExtractorId>,
    groups: Option<Vec<String>>,
    cidrs: Option<Vec<Cidr>>,
    handler: Option<HandlerKind>,
}

#[derive(Debug, Clone)]
pub struct RouteRule {
    pub method: MethodPattern,
    pub pattern: RoutePattern,
    /// Any one grants access; empty means the route is public.
    pub required_scopes: BTreeSet<String>,
    pub cache_policy: Option<String>,
    pub account_extractor: Option<ExtractorId>,
    /// Derived from the method: POST and DELETE change scheduler state.
    pub mutating: bool,
    pub allowed_groups: Option<BTreeSet<String>>,
    pub allowed_cidrs: Option<Vec<Cidr>>,
    pub handler: HandlerKind,
}

impl RouteRule {
    pub(super) fn from_raw(raw: RawRoute) -> Result<Self, ConfigError> {
        let method = MethodPattern::parse(&raw.method)?;
        let pattern = RoutePattern::parse(&raw.path)
            .map_err(|e| invariant("route-pattern", format!("route path {:?}: {e}", raw.path)))?;
        let mutating = method.is_exactly("POST") || method.is_exactly("DELETE");
        Ok(RouteRule {
            method,
            pattern,
            required_scopes: raw.scopes.into_iter().collect(),
            cache_policy: raw.cache,
            account_extractor: raw.extractor,
            mutating,
            allowed_groups: raw.groups.map(|g| g.into_iter().collect()),
            allowed_cidrs: raw.cidrs,
            handler: raw.handler.unwrap_or(HandlerKind::Upstream),
        })
    }
}

/// First declared rule whose method and path both match wins.
pub fn match_route<'a>(table: &'a [RouteRule], method: &str, path: &str) -> Option<&'a RouteRule> {
    table
        .iter()
        .find(|rule| rule.method.matches(method) && rule.pattern.matches(path))
}

/// Endpoint map shipped when the config declares no routes. Covers the
/// scheduler and accounting daemons for any API version segment.
const DEFAULT_ROUTES_TOML: &str = r#"
[[routes]]
method = "GET"
path = "/health"
handler = "health"

[[routes]]
method = "GET"
path = "/health/deep"
scopes = ["health:check"]
handler = "health_deep"

[[routes]]
method = "GET"
path = "/slurm/*/ping"
scopes = ["slurm:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurm/*/diag"
scopes = ["slurm:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurm/*/jobs"
scopes = ["slurm:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurm/*/job/*"
scopes = ["slurm:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurm/*/nodes"
scopes = ["slurm:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurm/*/node/*"
scopes = ["slurm:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurm/*/partitions"
scopes = ["slurm:read"]
cache = "long"

[[routes]]
method = "GET"
path = "/slurm/*/partition/*"
scopes = ["slurm:read"]
cache = "long"

[[routes]]
method = "GET"
path = "/slurm/*/reservations"
scopes = ["slurm:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurm/*/reservation/*"
scopes = ["slurm:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurm/*/shares"
scopes = ["slurm:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurm/*/licenses"
scopes = ["slurm:read"]
cache = "long"

[[routes]]
method = "POST"
path = "/slurm/*/job/submit"
scopes = ["slurm:jobs:manage"]
extractor = "job_submit"

[[routes]]
method = "POST"
path = "/slurm/*/job/allocate"
scopes = ["slurm:jobs:manage"]
extractor = "job_submit"

[[routes]]
method = "POST"
path = "/slurm/*/job/*"
scopes = ["slurm:jobs:manage"]

[[routes]]
method = "DELETE"
path = "/slurm/*/job/*"
scopes = ["slurm:jobs:manage"]

[[routes]]
method = "POST"
path = "/slurm/*/node/*"
scopes = ["slurm:nodes:manage"]

[[routes]]
method = "DELETE"
path = "/slurm/*/node/*"
scopes = ["slurm:nodes:manage"]

[[routes]]
method = "POST"
path = "/slurm/*/reservation"
scopes = ["slurm:reservations:manage"]

[[routes]]
method = "DELETE"
path = "/slurm/*/reservation/*"
scopes = ["slurm:reservations:manage"]

[[routes]]
method = "POST"
path = "/slurm/*/reconfigure"
scopes = ["slurm:reconfigure"]
groups = ["hpc-admins"]

[[routes]]
method = "GET"
path = "/slurmdb/*/config"
scopes = ["slurmdb:config:read"]
cache = "long"

[[routes]]
method = "POST"
path = "/slurmdb/*/config"
scopes = ["slurmdb:config:manage"]
groups = ["hpc-admins"]

[[routes]]
method = "GET"
path = "/slurmdb/*/diag"
scopes = ["slurmdb:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurmdb/*/jobs"
scopes = ["slurmdb:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurmdb/*/job/*"
scopes = ["slurmdb:read"]
cache = "short"

[[routes]]
method = "GET"
path = "/slurmdb/*/users"
scopes = ["slurmdb:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurmdb/*/user/*"
scopes = ["slurmdb:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurmdb/*/accounts"
scopes = ["slurmdb:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurmdb/*/account/*"
scopes = ["slurmdb:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurmdb/*/associations"
scopes = ["slurmdb:read"]
cache = "normal"

[[routes]]
method = "GET"
path = "/slurmdb/*/qos"
scopes = ["slurmdb:read"]
cache = "long"

[[routes]]
method = "GET"
path = "/slurmdb/*/clusters"
scopes = ["slurmdb:read"]
cache = "long"

[[routes]]
method = "GET"
path = "/slurmdb/*/cluster/*"
scopes = ["slurmdb:read"]
cache = "long"

[[routes]]
method = "GET"
path = "/slurmdb/*/tres"
scopes = ["slurmdb:read"]
cache = "long"

[[routes]]
method = "GET"
path = "/slurmdb/*/wckeys"
scopes = ["slurmdb:read"]
cache = "long"

[[routes]]
method = "POST"
path = "/slurmdb/*/accounts"
scopes = ["slurmdb:accounts:manage"]
extractor = "accounts_body"

[[routes]]
method = "DELETE"
path = "/slurmdb/*/account/*"
scopes = ["slurmdb:accounts:manage"]
extractor = "account_path"

[[routes]]
method = "POST"
path = "/slurmdb/*/accounts_association"
scopes = ["slurmdb:accounts_association:manage"]
extractor = "accounts_body"

[[routes]]
method = "POST"
path = "/slurmdb/*/associations"
scopes = ["slurmdb:associations:manage"]
extractor = "associations_body"

[[routes]]
method = "DELETE"
path = "/slurmdb/*/associations"
scopes = ["slurmdb:associations:manage"]

[[routes]]
method = "POST"
path = "/slurmdb/*/clusters"
scopes = ["slurmdb:clusters:manage"]

[[routes]]
method = "DELETE"
path = "/slurmdb/*/cluster/*"
scopes = ["slurmdb:clusters:manage"]

[[routes]]
method = "POST"
path = "/slurmdb/*/qos"
scopes = ["slurmdb:qos:manage"]

[[routes]]
method = "DELETE"
path = "/slurmdb/*/qos/*"
scopes = ["slurmdb:qos:manage"]

[[routes]]
method = "POST"
path = "/slurmdb/*/users"
scopes = ["slurmdb:users:manage"]

[[routes]]
method = "DELETE"
path = "/slurmdb/*/user/*"
scopes = ["slurmdb:users:manage"]

[[routes]]
method = "POST"
path = "/slurmdb/*/users_association"
scopes = ["slurmdb:users_association:manage"]
extractor = "users_association_body"

[[routes]]
method = "POST"
path = "/slurmdb/*/tres"
scopes = ["slurmdb:tres:manage"]

[[routes]]
method = "POST"
path = "/slurmdb/*/wckeys"
scopes = ["slurmdb:wckeys:manage"]

[[routes]]
method = "DELETE"
path = "/slurmdb/*/wckey/*"
scopes = ["slurmdb:wckeys:manage"]
"#;

pub fn default_route_table() -> Vec<RouteRule> {
    #[derive(Deserialize)]
    struct Doc {
        routes: Vec<RawRoute>,
    }
    let doc: Doc = toml::from_str(DEFAULT_ROUTES_TOML).expect("built-in route table parses");
    doc.routes
        .into_iter()
        .map(|r| RouteRule::from_raw(r).expect("built-in route table is valid"))
        .collect()
}
