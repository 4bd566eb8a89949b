//! Python bindings for the gateway's deterministic pieces: token minting
//! and inspection, freshness policy math, the development credential codec,
//! wire framing, route patterns, and account extraction. Useful for
//! operational tooling and cross-checking deployments from scripts.

use std::net::IpAddr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use sched_gate::auth::jwt;
use sched_gate::auth::munge::{self, DevHmacDecoder, MungeCredential};
use sched_gate::authz;
use sched_gate::cache;
use sched_gate::config::{CachePolicy, ExtractorId, RoutePattern};
use sched_gate::upstream;

fn parse_addr(text: &str) -> PyResult<IpAddr> {
    text.parse()
        .map_err(|_| PyValueError::new_err(format!("not an IP address: {text:?}")))
}

/// Mint a bearer token for `username`, valid `validity_seconds` from `now`
/// (seconds since the epoch).
#[pyfunction]
fn mint_bearer_token(username: &str, now: f64, validity_seconds: u64) -> String {
    jwt::mint_bearer_token(username, now, validity_seconds)
}

/// Claims of a gateway-minted token as a JSON string. Raises ValueError if
/// the token is not structurally a JWT.
#[pyfunction]
fn token_claims(token: &str) -> PyResult<String> {
    let decoded = jwt::decode_claims(token).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(decoded.claims.to_string())
}

/// Expiry timestamp read without verification, or None when absent.
#[pyfunction]
fn token_expiry(token: &str) -> Option<f64> {
    jwt::unverified_expiry(token)
}

/// A response-cache freshness policy: lifetime = clamp(duration + buffer,
/// min, max).
#[pyclass]
struct FreshnessPolicy {
    policy: CachePolicy,
}

#[pymethods]
impl FreshnessPolicy {
    #[new]
    fn new(name: &str, min_seconds: f64, max_seconds: f64, buffer_seconds: f64) -> PyResult<Self> {
        let policy = CachePolicy::new(name, min_seconds, max_seconds, buffer_seconds);
        policy
            .validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { policy })
    }

    /// Freshness lifetime for a response that took `generation_duration`
    /// seconds to produce.
    fn lifetime(&self, generation_duration: f64) -> f64 {
        cache::compute_freshness(generation_duration, &self.policy)
    }

    fn __repr__(&self) -> String {
        format!(
            "FreshnessPolicy({:?}, min={}, max={}, buffer={})",
            self.policy.name,
            self.policy.min_seconds,
            self.policy.max_seconds,
            self.policy.buffer_seconds
        )
    }
}

/// Encoder/verifier for the development cluster credential (HMAC form).
/// Verification enforces the full acceptance region: decode, origin match,
/// ttl under 5 s, not expired.
#[pyclass]
struct DevCredentialCodec {
    decoder: DevHmacDecoder,
}

#[pymethods]
impl DevCredentialCodec {
    #[new]
    fn new(key: &str) -> Self {
        Self {
            decoder: DevHmacDecoder::new(key),
        }
    }

    #[pyo3(signature = (username, origin_address, encode_time, ttl_seconds, uid=0, gid=0))]
    fn encode(
        &self,
        username: &str,
        origin_address: &str,
        encode_time: f64,
        ttl_seconds: f64,
        uid: u32,
        gid: u32,
    ) -> PyResult<String> {
        let cred = MungeCredential {
            payload_username: username.to_string(),
            origin_address: parse_addr(origin_address)?,
            encode_time,
            ttl_seconds,
            uid,
            gid,
        };
        Ok(self.decoder.encode(&cred))
    }

    /// Username carried by an acceptable credential. Raises ValueError
    /// naming the first failed check otherwise.
    fn verify(&self, credential: &str, source_address: &str, now: f64) -> PyResult<String> {
        let source = parse_addr(source_address)?;
        match munge::verify_munge(credential, source, &self.decoder, now) {
            Ok(cred) => Ok(cred.payload_username),
            Err(reject) => Err(PyValueError::new_err(format!("rejected: {reject:?}"))),
        }
    }
}

/// Exact bytes the gateway writes to the upstream subprocess for one
/// request. `headers` are the client's; only Accept and Content-Type
/// survive, identity and framing are injected.
#[pyfunction]
#[pyo3(signature = (method, target, headers, body, username, token, host="upstream"))]
fn prepare_upstream_request(
    method: &str,
    target: &str,
    headers: Vec<(String, String)>,
    body: &[u8],
    username: &str,
    token: &str,
    host: &str,
) -> Vec<u8> {
    let body = bytes::Bytes::copy_from_slice(body);
    let wire = upstream::prepare(method, target, &headers, &body, username, token, host);
    upstream::serialize_wire(&wire)
}

/// Strict parse of an upstream HTTP/1.1 response. Returns
/// (status, reason, headers, body). Raises ValueError on any framing
/// violation the gateway would refuse.
#[pyfunction]
fn parse_upstream_response(
    raw: &[u8],
) -> PyResult<(u16, String, Vec<(String, String)>, Vec<u8>)> {
    let resp =
        upstream::parse_wire_response(raw).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((resp.status, resp.reason, resp.headers, resp.body.to_vec()))
}

/// Strict parse of a serialized request, as the mock upstream performs it.
/// Returns (method, target, headers, body).
#[pyfunction]
fn parse_upstream_request(
    raw: &[u8],
) -> PyResult<(String, String, Vec<(String, String)>, Vec<u8>)> {
    let req =
        upstream::parse_wire_request(raw).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((req.method, req.target, req.headers, req.body.to_vec()))
}

/// Whether `path` matches a route pattern (`*` one segment, `**` any tail).
#[pyfunction]
fn route_matches(pattern: &str, path: &str) -> PyResult<bool> {
    let compiled =
        RoutePattern::parse(pattern).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(compiled.matches(path))
}

/// Accounts a mutation touches, per the named extractor. Returns
/// (sorted accounts, complete); incomplete means the request shape hid
/// account data and a restricted caller must be denied.
#[pyfunction]
fn extract_accounts(extractor: &str, path: &str, body: &[u8]) -> PyResult<(Vec<String>, bool)> {
    let id = match extractor {
        "job_submit" => ExtractorId::JobSubmit,
        "accounts_body" => ExtractorId::AccountsBody,
        "associations_body" => ExtractorId::AssociationsBody,
        "users_association_body" => ExtractorId::UsersAssociationBody,
        "account_path" => ExtractorId::AccountPath,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown extractor {other:?}"
            )))
        }
    };
    let extraction = authz::extract_accounts(id, path, body);
    Ok((
        extraction.accounts.into_iter().collect(),
        extraction.complete,
    ))
}

/// Canonical cache key parts for a request:
/// (method, path, query, accept_class, user). Two requests share a cached
/// response exactly when these are equal.
#[pyfunction]
#[pyo3(signature = (method, path, query=None, accept=None, user=None))]
fn cache_key_parts(
    method: &str,
    path: &str,
    query: Option<&str>,
    accept: Option<&str>,
    user: Option<&str>,
) -> (String, String, String, String, Option<String>) {
    let key = cache::CacheKey::from_request(method, path, query, accept, user);
    let accept_class = match key.accept {
        cache::AcceptClass::Json => "json",
        cache::AcceptClass::Yaml => "yaml",
        cache::AcceptClass::Other => "other",
    };
    (key.method, key.path, key.query, accept_class.to_string(), key.user)
}

#[pymodule]
fn sched_gate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mint_bearer_token, m)?)?;
    m.add_function(wrap_pyfunction!(token_claims, m)?)?;
    m.add_function(wrap_pyfunction!(token_expiry, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_upstream_request, m)?)?;
    m.add_function(wrap_pyfunction!(parse_upstream_response, m)?)?;
    m.add_function(wrap_pyfunction!(parse_upstream_request, m)?)?;
    m.add_function(wrap_pyfunction!(route_matches, m)?)?;
    m.add_function(wrap_pyfunction!(extract_accounts, m)?)?;
    m.add_function(wrap_pyfunction!(cache_key_parts, m)?)?;
    m.add_class::<FreshnessPolicy>()?;
    m.add_class::<DevCredentialCodec>()?;
    Ok(())
}
