//! Cluster credential verification with MUNGE semantics.
//!
//! A credential names its origin address, encode time, and time-to-live.
//! The gateway accepts it only when it decodes under the shared secret, the
//! origin matches the request's source address, the TTL is under five
//! seconds, and it has not expired. Decoding is pluggable so a real
//! credential daemon can replace the in-repo HMAC implementation.

use std::net::IpAddr;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;
use thiserror::Error;

/// Longest acceptable credential TTL, exclusive.
pub const MAX_TTL_SECONDS: f64 = 5.0;

const FORMAT_VERSION: u8 = 1;
const MAC_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct MungeCredential {
    pub payload_username: String,
    pub origin_address: IpAddr,
    pub encode_time: f64,
    pub ttl_seconds: f64,
    pub uid: u32,
    pub gid: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("credential is not base64url")]
    Base64,
    #[error("credential MAC does not verify")]
    Mac,
    #[error("credential payload malformed: {0}")]
    Malformed(&'static str),
}

pub trait CredentialDecoder: Send + Sync {
    fn decode(&self, credential: &str) -> Result<MungeCredential, DecodeError>;
}

/// Development decoder: HMAC-SHA256 over a canonical length-prefixed
/// serialization, credential = base64url(mac || payload). Stands in for the
/// credential daemon in tests and single-host deployments.
pub struct DevHmacDecoder {
    key: Vec<u8>,
}

impl DevHmacDecoder {
    pub fn new(key: impl Into<Vec<u8>>) -> Self {
        let key = key.into();
        assert!(!key.is_empty(), "credential key must not be empty");
        Self { key }
    }

    fn mac(&self, payload: &[u8]) -> [u8; MAC_LEN] {
        let mut mac = <Hmac<Sha256> as KeyInit>::new_from_slice(&self.key).expect("hmac accepts any key length");
        mac.update(payload);
        mac.finalize().into_bytes().into()
    }

    pub fn encode(&self, credential: &MungeCredential) -> String {
        let payload = serialize_payload(credential);
        let mut out = Vec::with_capacity(MAC_LEN + payload.len());
        out.extend_from_slice(&self.mac(&payload));
        out.extend_from_slice(&payload);
        URL_SAFE_NO_PAD.encode(out)
    }
}

impl CredentialDecoder for DevHmacDecoder {
    fn decode(&self, credential: &str) -> Result<MungeCredential, DecodeError> {
        let raw = URL_SAFE_NO_PAD.decode(credential).map_err(|_| DecodeError::Base64)?;
        if raw.len() < MAC_LEN {
            return Err(DecodeError::Malformed("shorter than a MAC"));
        }
        let (mac, payload) = raw.split_at(MAC_LEN);
        if !super::ct::ct_eq(mac, &self.mac(payload)) {
            return Err(DecodeError::Mac);
        }
        parse_payload(payload)
    }
}

fn serialize_payload(cred: &MungeCredential) -> Vec<u8> {
    let mut out = Vec::new();
    out.push(FORMAT_VERSION);
    let name = cred.payload_username.as_bytes();
    out.extend_from_slice(&(name.len() as u16).to_be_bytes());
    out.extend_from_slice(name);
    match cred.origin_address {
        IpAddr::V4(v4) => {
            out.push(4);
            out.extend_from_slice(&v4.octets());
        }
        IpAddr::V6(v6) => {
            out.push(6);
            out.extend_from_slice(&v6.octets());
        }
    }
    out.extend_from_slice(&cred.encode_time.to_be_bytes());
    out.extend_from_slice(&cred.ttl_seconds.to_be_bytes());
    out.extend_from_slice(&cred.uid.to_be_bytes());
    out.extend_from_slice(&cred.gid.to_be_bytes());
    out
}

struct Cursor<'a> {
    rest: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DecodeError> {
        if self.rest.len() < n {
            return Err(DecodeError::Malformed(what));
        }
        let (head, rest) = self.rest.split_at(n);
        self.rest = rest;
        Ok(head)
    }
}

fn parse_payload(payload: &[u8]) -> Result<MungeCredential, DecodeError> {
    let mut cur = Cursor { rest: payload };

    if cur.take(1, "missing version")?[0] != FORMAT_VERSION {
        return Err(DecodeError::Malformed("unknown version"));
    }
    let name_len = u16::from_be_bytes(cur.take(2, "missing name length")?.try_into().unwrap()) as usize;
    let name = std::str::from_utf8(cur.take(name_len, "truncated name")?)
        .map_err(|_| DecodeError::Malformed("name is not UTF-8"))?
        .to_string();
    if name.is_empty() {
        return Err(DecodeError::Malformed("empty username"));
    }
    let origin_address = match cur.take(1, "missing address tag")?[0] {
        4 => IpAddr::from(<[u8; 4]>::try_from(cur.take(4, "truncated v4 address")?).unwrap()),
        6 => IpAddr::from(<[u8; 16]>::try_from(cur.take(16, "truncated v6 address")?).unwrap()),
        _ => return Err(DecodeError::Malformed("bad address tag")),
    };
    let encode_time = f64::from_be_bytes(cur.take(8, "truncated encode time")?.try_into().unwrap());
    let ttl_seconds = f64::from_be_bytes(cur.take(8, "truncated ttl")?.try_into().unwrap());
    if !encode_time.is_finite() || !ttl_seconds.is_finite() {
        return Err(DecodeError::Malformed("non-finite time field"));
    }
    let uid = u32::from_be_bytes(cur.take(4, "truncated uid")?.try_into().unwrap());
    let gid = u32::from_be_bytes(cur.take(4, "truncated gid")?.try_into().unwrap());
    if !cur.rest.is_empty() {
        return Err(DecodeError::Malformed("trailing bytes"));
    }
    Ok(MungeCredential {
        payload_username: name,
        origin_address,
        encode_time,
        ttl_seconds,
        uid,
        gid,
    })
}

/// Why a presented credential was turned away. Clients always see a uniform
/// 401; these flow to logs and counters only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MungeReject {
    Decode,
    AddressMismatch,
    TtlTooLong,
    Expired,
}

/// The acceptance region is exactly: decode ok, origin = source,
/// ttl < 5 s, and encode_time + ttl >= now.
pub fn verify_munge(
    credential: &str,
    source_address: IpAddr,
    decoder: &dyn CredentialDecoder,
    now: f64,
) -> Result<MungeCredential, MungeReject> {
    let cred = decoder.decode(credential).map_err(|_| MungeReject::Decode)?;
    if cred.origin_address != source_address {
        return Err(MungeReject::AddressMismatch);
    }
    if cred.ttl_seconds >= MAX_TTL_SECONDS {
        return Err(MungeReject::TtlTooLong);
    }
    if cred.encode_time + cred.ttl_seconds < now {
        return Err(MungeReject::Expired);
    }
    Ok(cred)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MungeCredential {
        MungeCredential {
            payload_username: "alice".into(),
            origin_address: "10.0.0.7".parse().unwrap(),
            encode_time: 1_700_000_000.0,
            ttl_seconds: 4.0,
            uid: 1001,
            gid: 1001,
        }
    }

    #[test]
    fn round_trip() {
        let dec = DevHmacDecoder::new(*b"cluster secret");
        let cred = sample();
        assert_eq!(dec.decode(&dec.encode(&cred)).unwrap(), cred);
    }

    #[test]
    fn different_key_rejects() {
        let enc = DevHmacDecoder::new(*b"key one");
        let dec = DevHmacDecoder::new(*b"key two");
        assert_eq!(dec.decode(&enc.encode(&sample())).unwrap_err(), DecodeError::Mac);
    }

    #[test]
    fn ipv6_origin_round_trips() {
        let dec = DevHmacDecoder::new(*b"k");
        let mut cred = sample();
        cred.origin_address = "fd00::1:2".parse().unwrap();
        assert_eq!(dec.decode(&dec.encode(&cred)).unwrap(), cred);
    }

    #[test]
    fn ttl_five_rejected_ttl_four_accepted() {
        let dec = DevHmacDecoder::new(*b"k");
        let now = 1_700_000_002.0;
        let source = sample().origin_address;

        let mut cred = sample();
        cred.ttl_seconds = 5.0;
        let encoded = dec.encode(&cred);
        assert_eq!(verify_munge(&encoded, source, &dec, now).unwrap_err(), MungeReject::TtlTooLong);

        cred.ttl_seconds = 4.0;
        let encoded = dec.encode(&cred);
        assert!(verify_munge(&encoded, source, &dec, now).is_ok());
    }

    #[test]
    fn address_mismatch_rejected() {
        let dec = DevHmacDecoder::new(*b"k");
        let encoded = dec.encode(&sample());
        let err = verify_munge(&encoded, "10.0.0.8".parse().unwrap(), &dec, 1_700_000_001.0);
        assert_eq!(err.unwrap_err(), MungeReject::AddressMismatch);
    }

    #[test]
    fn expired_credential_rejected() {
        let dec = DevHmacDecoder::new(*b"k");
        let cred = sample(); // encode_time 1_700_000_000, ttl 4
        let encoded = dec.encode(&cred);
        let source = cred.origin_address;
        assert!(verify_munge(&encoded, source, &dec, 1_700_000_004.0).is_ok(), "boundary: now = encode+ttl still valid");
        assert_eq!(
            verify_munge(&encoded, source, &dec, 1_700_000_004.1).unwrap_err(),
            MungeReject::Expired
        );
    }

    #[test]
    fn single_byte_flips_reject() {
        let dec = DevHmacDecoder::new(*b"k");
        let encoded = dec.encode(&sample());
        let bytes = encoded.as_bytes();
        for i in 0..bytes.len() {
            let mut mutated = bytes.to_vec();
            mutated[i] ^= 0x01;
            let mutated = String::from_utf8(mutated).unwrap();
            if mutated == encoded {
                continue;
            }
            assert!(dec.decode(&mutated).is_err(), "flip at byte {i} was accepted");
        }
    }

    #[test]
    fn truncations_reject() {
        let dec = DevHmacDecoder::new(*b"k");
        let encoded = dec.encode(&sample());
        for len in 0..encoded.len() {
            assert!(dec.decode(&encoded[..len]).is_err(), "truncation to {len} accepted");
        }
    }
}
