//! The request pipeline: route match, authenticate, authorize, cache,
//! upstream exchange. Short-circuiting is allowed at any stage; reordering
//! never is.

mod context;
mod http;

pub use context::{Metrics, RequestContext, Stage, StageEntry, STAGE_ORDER};
pub use http::serve_http;

use std::net::IpAddr;
use std::sync::Arc;
use std::time::Duration;

use bytes::Bytes;
use serde_json::json;
use thiserror::Error;

use crate::auth::munge::{CredentialDecoder, DevHmacDecoder};
use crate::auth::{advertised_schemes, authenticate, header_get, Identity};
use crate::authz::{
    check_account_restriction, check_address, check_group, check_scope, extract_accounts,
    is_mutating_method, Decision, DenyReason,
};
use crate::cache::{
    parse_cache_control, Abortable, CacheKey, CacheLayer, GeneratedResponse, MemoryBackend,
};
use crate::clock::Clock;
use crate::config::{match_route, HandlerKind, RouteRule, ServiceConfig, SharedSnapshots};
use crate::upstream::{
    invoke_inetd, parse_wire_response, prepare, serialize_wire, InvokeError, Minter, TokenManager,
    UpstreamResponse,
};

/// Failures between the gateway and the upstream. Cloneable because a single
/// failure may be shared by every request coalesced onto one flight.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GateError {
    #[error("upstream spawn failed: {0}")]
    Spawn(String),
    #[error("upstream timed out")]
    Timeout,
    #[error("upstream protocol violation: {0}")]
    Protocol(String),
    #[error("upstream returned status {0}")]
    UpstreamStatus(u16),
    #[error("privileged upstream token unavailable")]
    TokenUnavailable,
    #[error("request generation aborted")]
    Aborted,
}

impl GateError {
    pub fn status(&self) -> u16 {
        match self {
            GateError::Timeout => 504,
            GateError::TokenUnavailable => 503,
            _ => 502,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            GateError::Spawn(_) => "upstream_spawn_failed",
            GateError::Timeout => "upstream_timeout",
            GateError::Protocol(_) => "upstream_protocol_error",
            GateError::UpstreamStatus(_) => "upstream_error_status",
            GateError::TokenUnavailable => "upstream_token_unavailable",
            GateError::Aborted => "generation_aborted",
        }
    }
}

impl Abortable for GateError {
    fn aborted() -> Self {
        GateError::Aborted
    }
}

impl From<InvokeError> for GateError {
    fn from(e: InvokeError) -> Self {
        match e {
            InvokeError::Spawn(detail) => GateError::Spawn(detail),
            InvokeError::Timeout(_) => GateError::Timeout,
            InvokeError::Io(detail) => GateError::Protocol(detail),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientRequest {
    pub method: String,
    pub path: String,
    pub query: Option<String>,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
    pub source: IpAddr,
}

impl ClientRequest {
    pub fn new(method: &str, path: &str, source: IpAddr) -> Self {
        Self {
            method: method.to_string(),
            path: path.to_string(),
            query: None,
            headers: Vec::new(),
            body: Bytes::new(),
            source,
        }
    }
}

#[derive(Debug)]
pub struct GatewayResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
    pub context: RequestContext,
}

impl GatewayResponse {
    pub fn header(&self, name: &str) -> Option<&str> {
        header_get(&self.headers, name)
    }
}

struct Inner {
    config: ServiceConfig,
    clock: Arc<dyn Clock>,
    snapshots: Arc<SharedSnapshots>,
    decoder: Option<Box<dyn CredentialDecoder>>,
    cache: CacheLayer<GateError>,
    tokens: Arc<TokenManager>,
    metrics: Metrics,
    semaphore: tokio::sync::Semaphore,
}

#[derive(Clone)]
pub struct Gateway {
    inner: Arc<Inner>,
}

impl Gateway {
    /// Attempts the startup token mint; failure leaves the gateway serving
    /// in a degraded state where upstream routes answer 503 until the
    /// refresher succeeds.
    pub fn new(
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
        snapshots: Arc<SharedSnapshots>,
        minter: Box<dyn Minter>,
    ) -> Self {
        let decoder: Option<Box<dyn CredentialDecoder>> = config
            .dev_credential_key
            .as_ref()
            .map(|key| Box::new(DevHmacDecoder::new(key.as_bytes())) as Box<dyn CredentialDecoder>);
        let backend = Arc::new(MemoryBackend::new(config.cache_capacity));
        let cache = CacheLayer::new(backend, config.fallback_ttl);
        let tokens = Arc::new(TokenManager::new(minter, config.token_fallback_lifetime));
        tokens.tick(clock.now());
        if tokens.current(clock.now()).is_none() {
            tracing::warn!("startup token mint failed; serving degraded until a mint succeeds");
        }
        let semaphore = tokio::sync::Semaphore::new(config.upstream_concurrency);
        Gateway {
            inner: Arc::new(Inner {
                config,
                clock,
                snapshots,
                decoder,
                cache,
                tokens,
                metrics: Metrics::default(),
                semaphore,
            }),
        }
    }

    pub fn metrics(&self) -> &Metrics {
        &self.inner.metrics
    }

    pub fn tokens(&self) -> &Arc<TokenManager> {
        &self.inner.tokens
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    pub fn snapshots(&self) -> &Arc<SharedSnapshots> {
        &self.inner.snapshots
    }

    pub async fn handle(&self, req: ClientRequest) -> GatewayResponse {
        let inner = &self.inner;
        Metrics::bump(&inner.metrics.requests);
        let mut ctx = RequestContext::new(inner.clock.now(), req.source);

        ctx.enter(Stage::Route, inner.clock.now());
        let Some(rule) = match_route(&inner.config.route_table, &req.method, &req.path) else {
            let detail = format!("no route for {} {}", req.method, req.path);
            return self.reply_error(ctx, 404, "not_found", &detail, vec![]);
        };
        ctx.route = Some(format!("{} {}", rule.method, rule.pattern));

        ctx.enter(Stage::Auth, inner.clock.now());
        let registry = inner.snapshots.registry();
        let identity = match authenticate(
            &req.headers,
            req.source,
            &registry,
            inner.decoder.as_deref(),
            inner.clock.now(),
            &inner.config.munge_default_scopes,
        ) {
            Ok(identity) => identity,
            Err(reason) => {
                Metrics::bump(&inner.metrics.auth_failures);
                tracing::info!(
                    request_id = %ctx.request_id,
                    reason = reason.as_str(),
                    "credential rejected"
                );
                return self.reply_error(
                    ctx,
                    401,
                    "unauthenticated",
                    "credential rejected",
                    vec![self.www_authenticate()],
                );
            }
        };
        ctx.username = identity.as_ref().map(|i| i.username.clone());

        ctx.enter(Stage::Authz, inner.clock.now());
        if let Err(reason) = self.authorize(rule, identity.as_ref(), &req) {
            Metrics::bump(&inner.metrics.authz_denials);
            let extra = if reason.status() == 401 {
                vec![self.www_authenticate()]
            } else {
                vec![]
            };
            let detail = deny_detail(&reason);
            return self.reply_error(ctx, reason.status(), reason.as_str(), &detail, extra);
        }

        ctx.enter(Stage::Cache, inner.clock.now());
        match rule.handler {
            HandlerKind::Health => self.reply_json(ctx, 200, vec![], json!({"status": "ok"})),
            HandlerKind::HealthDeep => self.reply_deep_health(ctx),
            HandlerKind::Upstream => self.serve_upstream(ctx, rule, identity, req).await,
        }
    }

    /// Order is fixed: scope, account restriction, group, source address.
    fn authorize(
        &self,
        rule: &RouteRule,
        identity: Option<&Identity>,
        req: &ClientRequest,
    ) -> Result<(), DenyReason> {
        let inner = &self.inner;
        if let Decision::Deny(reason) = check_scope(identity, &rule.required_scopes) {
            return Err(reason);
        }

        if is_mutating_method(&req.method) {
            if let Some(identity) = identity {
                if !identity.account_patterns.is_empty() {
                    Metrics::bump(&inner.metrics.account_checks);
                    let Some(extractor) = rule.account_extractor else {
                        // No extractor means the accounts a mutation touches
                        // are unknown; restricted identities fail closed.
                        return Err(DenyReason::RestrictedWithoutExtractor);
                    };
                    let extraction = extract_accounts(extractor, &req.path, &req.body);
                    if let Decision::Deny(reason) = check_account_restriction(identity, &extraction)
                    {
                        return Err(reason);
                    }
                }
            }
        }

        if let Some(allowed_groups) = &rule.allowed_groups {
            let Some(identity) = identity else {
                return Err(DenyReason::Unauthenticated);
            };
            let groups = inner.snapshots.groups();
            if let Decision::Deny(reason) = check_group(identity, allowed_groups, &groups) {
                return Err(reason);
            }
        }

        if let Some(cidrs) = &rule.allowed_cidrs {
            if let Decision::Deny(reason) = check_address(req.source, cidrs) {
                return Err(reason);
            }
        }
        Ok(())
    }

    async fn serve_upstream(
        &self,
        mut ctx: RequestContext,
        rule: &RouteRule,
        identity: Option<Identity>,
        req: ClientRequest,
    ) -> GatewayResponse {
        let inner = &self.inner;
        let Some(identity) = identity else {
            // Config validation forbids public upstream routes; fail closed
            // if a table ever slips through.
            return self.reply_error(
                ctx,
                401,
                "unauthenticated",
                "upstream routes require an identity",
                vec![self.www_authenticate()],
            );
        };
        let target = match req.query.as_deref() {
            Some(q) if !q.is_empty() => format!("{}?{}", req.path, q),
            _ => req.path.clone(),
        };

        let Some(policy_name) = &rule.cache_policy else {
            ctx.enter(Stage::Upstream, inner.clock.now());
            return match invoke_upstream(
                &self.inner,
                &req.method,
                &target,
                &req.headers,
                &req.body,
                &identity.username,
            )
            .await
            {
                // No policy, no cache involvement: the response (errors
                // included) passes through verbatim.
                Ok(resp) => {
                    let headers = passthrough_headers(&resp.headers);
                    self.reply(ctx, resp.status, headers, resp.body)
                }
                Err(e) => self.reply_gate_error(ctx, e),
            };
        };

        let policy = inner.config.policies[policy_name].clone();
        let accept = header_get(&req.headers, "accept");
        let user = inner.config.per_user_cache.then_some(identity.username.as_str());
        let key = CacheKey::from_request(&req.method, &req.path, req.query.as_deref(), accept, user);
        let directives = parse_cache_control(header_get(&req.headers, "cache-control"));

        let handler = {
            let inner = Arc::clone(&self.inner);
            let method = req.method.clone();
            let headers = req.headers.clone();
            let body = req.body.clone();
            let username = identity.username.clone();
            move || async move {
                let resp =
                    invoke_upstream(&inner, &method, &target, &headers, &body, &username).await?;
                if resp.status >= 500 {
                    return Err(GateError::UpstreamStatus(resp.status));
                }
                Ok(GeneratedResponse {
                    status: resp.status,
                    headers: passthrough_headers(&resp.headers),
                    body: resp.body,
                })
            }
        };

        let outcome = inner
            .cache
            .serve(
                Arc::clone(&inner.clock),
                key,
                &req.method,
                &policy,
                directives,
                handler,
            )
            .await;
        if outcome.owner {
            ctx.enter(Stage::Upstream, inner.clock.now());
        }
        match outcome.result {
            Ok(served) => {
                inner.metrics.record_cache(served.cache_status);
                ctx.cache_status = Some(served.cache_status);
                let mut headers = served.headers;
                headers.push(("X-Cache".to_string(), served.cache_status.as_str().to_string()));
                if let Some(age) = served.age_seconds {
                    headers.push(("Age".to_string(), age.to_string()));
                }
                if served.warn_stale {
                    headers.push(("Warning".to_string(), "110 - \"Response is Stale\"".to_string()));
                }
                self.reply(ctx, served.status, headers, served.body)
            }
            Err(e) => self.reply_gate_error(ctx, e),
        }
    }

    fn reply_deep_health(&self, ctx: RequestContext) -> GatewayResponse {
        let inner = &self.inner;
        let now = inner.clock.now();

        let token = inner.tokens.status(now);
        let stats = inner.snapshots.stats();
        let registry_ok = stats.healthy();
        let probe = CacheKey::from_request("GET", "/__health/probe", None, None, None);
        let cache_ok = inner.cache.backend().get(&probe, now).is_ok();
        let upstream_error = inner.metrics.last_upstream_error();
        let upstream_ok = upstream_error.is_none();
        let all_ok = token.available && registry_ok && cache_ok && upstream_ok;

        let word = |ok: bool| if ok { "ok" } else { "failing" };
        let body = json!({
            "components": {
                "cache": {
                    "capacity": inner.config.cache_capacity,
                    "entries": inner.cache.backend().len(),
                    "status": word(cache_ok),
                },
                "registry": {
                    "consecutive_failures": stats.consecutive_failures.load(std::sync::atomic::Ordering::Relaxed),
                    "last_error": stats.last_error(),
                    "records": inner.snapshots.registry().records.len(),
                    "status": word(registry_ok),
                },
                "token": {
                    "expires_in": token.expires_in,
                    "last_error": token.last_error,
                    "mint_failures": token.mint_failures,
                    "mint_ok": token.mint_ok,
                    "status": word(token.available),
                },
                "upstream": {
                    "invocations": inner.metrics.snapshot()["upstream_invocations"],
                    "last_error": upstream_error,
                    "status": word(upstream_ok),
                },
            },
            "counters": inner.metrics.snapshot(),
            "status": if all_ok { "ok" } else { "degraded" },
        });
        let status = if all_ok { 200 } else { 503 };
        self.reply_json(ctx, status, vec![], body)
    }

    fn www_authenticate(&self) -> (String, String) {
        (
            "WWW-Authenticate".to_string(),
            advertised_schemes(self.inner.decoder.is_some()).to_string(),
        )
    }

    fn reply(
        &self,
        ctx: RequestContext,
        status: u16,
        mut headers: Vec<(String, String)>,
        body: Bytes,
    ) -> GatewayResponse {
        headers.push(("X-Request-Id".to_string(), ctx.request_id.clone()));
        debug_assert!(ctx.stages_well_formed());
        tracing::info!(
            request_id = %ctx.request_id,
            route = ctx.route.as_deref().unwrap_or("-"),
            user = ctx.username.as_deref().unwrap_or("-"),
            cache = ctx.cache_status.map(|s| s.as_str()).unwrap_or("-"),
            status,
            "request complete"
        );
        GatewayResponse {
            status,
            headers,
            body,
            context: ctx,
        }
    }

    fn reply_json(
        &self,
        ctx: RequestContext,
        status: u16,
        extra_headers: Vec<(String, String)>,
        body: serde_json::Value,
    ) -> GatewayResponse {
        let mut headers = vec![("Content-Type".to_string(), "application/json".to_string())];
        headers.extend(extra_headers);
        self.reply(ctx, status, headers, Bytes::from(body.to_string()))
    }

    fn reply_error(
        &self,
        ctx: RequestContext,
        status: u16,
        code: &str,
        detail: &str,
        extra_headers: Vec<(String, String)>,
    ) -> GatewayResponse {
        let body = json!({
            "errors": [{"description": detail, "error": code}],
            "request_id": ctx.request_id,
        });
        self.reply_json(ctx, status, extra_headers, body)
    }

    fn reply_gate_error(&self, ctx: RequestContext, e: GateError) -> GatewayResponse {
        tracing::warn!(request_id = %ctx.request_id, error = %e, "upstream exchange failed");
        self.reply_error(ctx, e.status(), e.code(), &e.to_string(), vec![])
    }
}

fn deny_detail(reason: &DenyReason) -> String {
    match reason {
        DenyReason::Unauthenticated => "this route requires authentication".to_string(),
        DenyReason::MissingScope => "no granted scope permits this route".to_string(),
        DenyReason::AccountNotPermitted(account) => {
            format!("account '{account}' is outside the token's account restriction")
        }
        DenyReason::IncompleteExtraction => {
            "request body did not yield the accounts it touches".to_string()
        }
        DenyReason::RestrictedWithoutExtractor => {
            "account-restricted tokens cannot use this mutating route".to_string()
        }
        DenyReason::GroupRequired => "membership in an allowed group is required".to_string(),
        DenyReason::AddressNotAllowed => "source address is not allowed".to_string(),
    }
}

/// Hop-by-hop and transport-managed headers never pass through; everything
/// else is forwarded untouched.
fn passthrough_headers(upstream: &[(String, String)]) -> Vec<(String, String)> {
    upstream
        .iter()
        .filter(|(name, _)| {
            !matches!(
                name.to_ascii_lowercase().as_str(),
                "connection" | "content-length" | "transfer-encoding" | "keep-alive"
            )
        })
        .cloned()
        .collect()
}

async fn invoke_upstream(
    inner: &Arc<Inner>,
    method: &str,
    target: &str,
    client_headers: &[(String, String)],
    body: &Bytes,
    username: &str,
) -> Result<UpstreamResponse, GateError> {
    let now = inner.clock.now();
    let Some(token) = inner.tokens.current(now) else {
        inner
            .metrics
            .record_upstream_error("privileged token unavailable".to_string());
        return Err(GateError::TokenUnavailable);
    };
    let wire = prepare(
        method,
        target,
        client_headers,
        body,
        username,
        &token.value,
        &inner.config.upstream_host,
    );
    let bytes = serialize_wire(&wire);

    let _permit = inner
        .semaphore
        .acquire()
        .await
        .expect("semaphore is never closed");
    Metrics::bump(&inner.metrics.upstream_invocations);
    let timeout = Duration::from_secs_f64(inner.config.upstream_timeout);
    let stdout = invoke_inetd(
        &inner.config.upstream_command,
        &inner.config.upstream_env_allowlist,
        &bytes,
        timeout,
    )
    .await
    .map_err(|e| {
        inner.metrics.record_upstream_error(e.to_string());
        GateError::from(e)
    })?;

    match parse_wire_response(&stdout) {
        Ok(resp) => {
            inner.metrics.record_upstream_ok();
            Ok(resp)
        }
        Err(e) => {
            inner.metrics.record_upstream_error(e.to_string());
            Err(GateError::Protocol(e.to_string()))
        }
    }
}
