//! Request identity: an ordered chain of authentication providers.

pub mod ct;
pub mod jwt;
pub mod munge;

use std::collections::BTreeSet;
use std::net::IpAddr;

use crate::config::{AccountPattern, RegistrySnapshot, TokenRecord};
use munge::{CredentialDecoder, MungeReject};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthMethod {
    Bearer,
    Munge,
}

impl AuthMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthMethod::Bearer => "bearer",
            AuthMethod::Munge => "munge",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Identity {
    pub username: String,
    pub scopes: BTreeSet<String>,
    pub account_patterns: Vec<AccountPattern>,
    pub auth_method: AuthMethod,
    pub source_address: IpAddr,
}

/// Internal rejection reasons. Clients get a uniform 401 either way; these
/// feed logs and counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BearerUnknown,
    BearerDisabled,
    MungeDecode,
    MungeAddressMismatch,
    MungeTtlTooLong,
    MungeExpired,
    MungeUnavailable,
    UnknownScheme,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::BearerUnknown => "bearer_unknown",
            RejectReason::BearerDisabled => "bearer_disabled",
            RejectReason::MungeDecode => "munge_decode",
            RejectReason::MungeAddressMismatch => "munge_address_mismatch",
            RejectReason::MungeTtlTooLong => "munge_ttl_too_long",
            RejectReason::MungeExpired => "munge_expired",
            RejectReason::MungeUnavailable => "munge_unavailable",
            RejectReason::UnknownScheme => "unknown_scheme",
        }
    }
}

impl From<MungeReject> for RejectReason {
    fn from(reject: MungeReject) -> Self {
        match reject {
            MungeReject::Decode => RejectReason::MungeDecode,
            MungeReject::AddressMismatch => RejectReason::MungeAddressMismatch,
            MungeReject::TtlTooLong => RejectReason::MungeTtlTooLong,
            MungeReject::Expired => RejectReason::MungeExpired,
        }
    }
}

/// Value for `WWW-Authenticate` on 401 responses.
pub fn advertised_schemes(munge_enabled: bool) -> &'static str {
    if munge_enabled {
        "Bearer, MUNGE"
    } else {
        "Bearer"
    }
}

/// First occurrence of `name` (ASCII case-insensitive) in the header list.
pub fn header_get<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

/// Exact opaque match against the registry. Every record is compared in
/// constant time with no early exit, so lookup duration does not leak which
/// entry (if any) matched. No signature or expiry introspection happens here.
pub fn verify_bearer<'a>(
    value: &str,
    registry: &'a RegistrySnapshot,
) -> Result<&'a TokenRecord, RejectReason> {
    let mut found: Option<&TokenRecord> = None;
    for record in &registry.records {
        let matched = ct::ct_eq(value.as_bytes(), record.token.as_bytes());
        if matched && found.is_none() {
            found = Some(record);
        }
    }
    match found {
        Some(record) if record.disabled => Err(RejectReason::BearerDisabled),
        Some(record) => Ok(record),
        None => Err(RejectReason::BearerUnknown),
    }
}

fn bearer_identity(record: &TokenRecord, source_address: IpAddr) -> Identity {
    Identity {
        username: record.username.clone(),
        scopes: record.scopes.clone(),
        account_patterns: record.accounts.iter().cloned().collect(),
        auth_method: AuthMethod::Bearer,
        source_address,
    }
}

/// Establish identity from request headers.
///
/// Providers are consulted in a fixed order and the first whose header form
/// is present decides; a failure never falls through to the next provider:
///   1. `Authorization: Bearer <value>`
///   2. `X-Slurm-User-Token: <value>`
///   3. `Authorization: MUNGE <credential>`
///
/// `Ok(None)` means no credential was presented at all (public routes may
/// still proceed).
pub fn authenticate(
    headers: &[(String, String)],
    source_address: IpAddr,
    registry: &RegistrySnapshot,
    decoder: Option<&dyn CredentialDecoder>,
    now: f64,
    munge_default_scopes: &[String],
) -> Result<Option<Identity>, RejectReason> {
    let authorization = header_get(headers, "authorization").map(str::trim);

    let scheme_value = |scheme: &str| -> Option<&str> {
        let header = authorization?;
        let (name, rest) = header.split_once(' ')?;
        name.eq_ignore_ascii_case(scheme).then(|| rest.trim())
    };

    if let Some(value) = scheme_value("bearer") {
        if value.is_empty() {
            return Err(RejectReason::BearerUnknown);
        }
        return verify_bearer(value, registry).map(|r| Some(bearer_identity(r, source_address)));
    }

    if let Some(value) = header_get(headers, "x-slurm-user-token").map(str::trim) {
        if value.is_empty() {
            return Err(RejectReason::BearerUnknown);
        }
        return verify_bearer(value, registry).map(|r| Some(bearer_identity(r, source_address)));
    }

    if let Some(credential) = scheme_value("munge") {
        let Some(decoder) = decoder else {
            return Err(RejectReason::MungeUnavailable);
        };
        let cred = munge::verify_munge(credential, source_address, decoder, now)
            .map_err(RejectReason::from)?;
        return Ok(Some(Identity {
            username: cred.payload_username,
            scopes: munge_default_scopes.iter().cloned().collect(),
            account_patterns: Vec::new(),
            auth_method: AuthMethod::Munge,
            source_address,
        }));
    }

    if authorization.is_some() {
        // Authorization header present but in no recognized form.
        return Err(RejectReason::UnknownScheme);
    }

    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_token_registry;
    use munge::{DevHmacDecoder, MungeCredential};

    fn registry() -> RegistrySnapshot {
        parse_token_registry(
            r#"
            [svc-live]
            token = "tk_live_value"
            username = "svclive"
            scopes = ["slurm:read"]

            [svc-dead]
            token = "tk_dead_value"
            username = "svcdead"
            scopes = ["slurm:read"]
            disabled = true
            "#,
        )
        .unwrap()
    }

    fn hdrs(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    const SRC: &str = "192.0.2.10";

    fn run(headers: Vec<(String, String)>, decoder: Option<&DevHmacDecoder>) -> Result<Option<Identity>, RejectReason> {
        let scopes = vec!["slurm:read".to_string(), "pact:self".to_string()];
        authenticate(
            &headers,
            SRC.parse().unwrap(),
            &registry(),
            decoder.map(|d| d as &dyn CredentialDecoder),
            1_700_000_000.0,
            &scopes,
        )
    }

    #[test]
    fn bearer_header_yields_record_identity() {
        let id = run(hdrs(&[("Authorization", "Bearer tk_live_value")]), None)
            .unwrap()
            .unwrap();
        assert_eq!(id.username, "svclive");
        assert_eq!(id.auth_method, AuthMethod::Bearer);
        assert!(id.scopes.contains("slurm:read"));
    }

    #[test]
    fn x_slurm_user_token_is_equivalent() {
        let id = run(hdrs(&[("X-Slurm-User-Token", "tk_live_value")]), None)
            .unwrap()
            .unwrap();
        assert_eq!(id.username, "svclive");
    }

    #[test]
    fn unknown_token_rejected() {
        assert_eq!(
            run(hdrs(&[("Authorization", "Bearer nope")]), None).unwrap_err(),
            RejectReason::BearerUnknown
        );
    }

    #[test]
    fn disabled_record_rejected() {
        assert_eq!(
            run(hdrs(&[("Authorization", "Bearer tk_dead_value")]), None).unwrap_err(),
            RejectReason::BearerDisabled
        );
    }

    #[test]
    fn no_headers_is_anonymous() {
        assert!(run(hdrs(&[]), None).unwrap().is_none());
    }

    #[test]
    fn unknown_scheme_is_rejected_not_anonymous() {
        assert_eq!(
            run(hdrs(&[("Authorization", "Basic dXNlcjpwdw==")]), None).unwrap_err(),
            RejectReason::UnknownScheme
        );
    }

    #[test]
    fn valid_munge_with_invalid_token_header_still_401() {
        // Provider order: the X-Slurm-User-Token form decides before the
        // MUNGE form, and a failure does not fall through.
        let decoder = DevHmacDecoder::new(*b"k");
        let cred = MungeCredential {
            payload_username: "alice".into(),
            origin_address: SRC.parse().unwrap(),
            encode_time: 1_700_000_000.0,
            ttl_seconds: 1.0,
            uid: 1,
            gid: 1,
        };
        let encoded = decoder.encode(&cred);
        let headers = hdrs(&[
            ("X-Slurm-User-Token", "not-registered"),
            ("Authorization", &format!("MUNGE {encoded}")),
        ]);
        assert_eq!(run(headers, Some(&decoder)).unwrap_err(), RejectReason::BearerUnknown);
    }

    #[test]
    fn munge_identity_gets_default_scopes() {
        let decoder = DevHmacDecoder::new(*b"k");
        let cred = MungeCredential {
            payload_username: "alice".into(),
            origin_address: SRC.parse().unwrap(),
            encode_time: 1_699_999_999.5,
            ttl_seconds: 2.0,
            uid: 1,
            gid: 1,
        };
        let encoded = decoder.encode(&cred);
        let id = run(hdrs(&[("Authorization", &format!("MUNGE {encoded}"))]), Some(&decoder))
            .unwrap()
            .unwrap();
        assert_eq!(id.username, "alice");
        assert_eq!(id.auth_method, AuthMethod::Munge);
        assert!(id.scopes.contains("pact:self"));
        assert!(id.account_patterns.is_empty());
    }

    #[test]
    fn munge_without_decoder_rejected() {
        assert_eq!(
            run(hdrs(&[("Authorization", "MUNGE abc")]), None).unwrap_err(),
            RejectReason::MungeUnavailable
        );
    }

    #[test]
    fn registry_identity_matches_every_record() {
        let registry = registry();
        for record in registry.records.iter().filter(|r| !r.disabled) {
            let rec = verify_bearer(&record.token, &registry).unwrap();
            assert_eq!(rec.username, record.username);
        }
    }

    #[test]
    fn same_claims_different_key_is_a_different_string() {
        // Two mints share claims but not signatures; neither is in the
        // registry, so both reject. Opaque matching, not JWT validation.
        let a = jwt::mint_bearer_token("svclive", 1000.0, 3600);
        let b = jwt::mint_bearer_token("svclive", 1000.0, 3600);
        assert_ne!(a, b);
        let registry = registry();
        assert!(verify_bearer(&a, &registry).is_err());
        assert!(verify_bearer(&b, &registry).is_err());
    }
}
