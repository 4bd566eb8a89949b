//! Minimal JWT handling: minting HS256 tokens and structural decoding.
//!
//! The gateway never verifies signatures. Bearer values are opaque strings
//! matched against the registry, so a minted token's key is generated,
//! used once, and dropped. Decoding exists for diagnostics (expiry of the
//! privileged upstream token, claim checks in tests).

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use rand::Rng;
use serde_json::json;
use sha2::Sha256;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum JwtError {
    #[error("token does not have three segments")]
    Structure,
    #[error("segment is not base64url")]
    Base64,
    #[error("segment is not a JSON object")]
    Json,
}

#[derive(Debug)]
pub struct DecodedJwt {
    pub header: serde_json::Value,
    pub claims: serde_json::Value,
}

/// Mint an HS256 JWT for `username`. The signing key is 32 fresh random
/// bytes discarded on return; the `rnd` claim carries another 32 random
/// bytes so two mints with identical arguments never collide.
pub fn mint_bearer_token(username: &str, now: f64, validity_seconds: u64) -> String {
    assert!(validity_seconds > 0, "token validity must be positive");
    let mut rng = rand::rng();
    let mut key = [0u8; 32];
    rng.fill_bytes(&mut key);
    let mut rnd = [0u8; 32];
    rng.fill_bytes(&mut rnd);

    let iat = now.floor() as i64;
    let header = json!({"alg": "HS256", "typ": "JWT"});
    let claims = json!({
        "sun": username,
        "iat": iat,
        "exp": iat + validity_seconds as i64,
        "rnd": URL_SAFE_NO_PAD.encode(rnd),
    });

    let signing_input = format!(
        "{}.{}",
        URL_SAFE_NO_PAD.encode(header.to_string()),
        URL_SAFE_NO_PAD.encode(claims.to_string()),
    );
    let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&key).expect("hmac accepts any key length");
    mac.update(signing_input.as_bytes());
    let signature = mac.finalize().into_bytes();
    format!("{signing_input}.{}", URL_SAFE_NO_PAD.encode(signature))
}

/// Structural decode: three base64url segments, JSON header and claims.
/// The signature segment must decode but is not verified.
pub fn decode_claims(token: &str) -> Result<DecodedJwt, JwtError> {
    let mut parts = token.split('.');
    let (header_b64, claims_b64, sig_b64) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(h), Some(c), Some(s), None) if !h.is_empty() && !c.is_empty() && !s.is_empty() => (h, c, s),
        _ => return Err(JwtError::Structure),
    };
    URL_SAFE_NO_PAD.decode(sig_b64).map_err(|_| JwtError::Base64)?;
    let decode_json = |segment: &str| -> Result<serde_json::Value, JwtError> {
        let bytes = URL_SAFE_NO_PAD.decode(segment).map_err(|_| JwtError::Base64)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|_| JwtError::Json)?;
        if !value.is_object() {
            return Err(JwtError::Json);
        }
        Ok(value)
    };
    Ok(DecodedJwt {
        header: decode_json(header_b64)?,
        claims: decode_json(claims_b64)?,
    })
}

/// Best-effort expiry of an unverified token, for scheduling token renewal.
pub fn unverified_expiry(token: &str) -> Option<f64> {
    decode_claims(token).ok()?.claims.get("exp")?.as_f64()
}
