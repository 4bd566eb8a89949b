//! The inetd wire protocol: one HTTP/1.1 exchange serialized over a
//! subprocess's stdin/stdout.

use bytes::Bytes;
use thiserror::Error;

/// Client request headers that survive to the upstream. Everything else is
/// stripped and replaced by the impersonation and transport headers.
pub const CLIENT_HEADER_ALLOWLIST: [&str; 3] = ["accept", "content-length", "content-type"];

#[derive(Debug, Clone, PartialEq)]
pub struct WireRequest {
    pub method: String,
    /// Path plus optional `?query`, exactly as forwarded.
    pub target: String,
    /// Ordered: Accept?, Content-Length?, Content-Type?,
    /// X-Slurm-User-Token, X-Slurm-User-Name, Host.
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

/// Build the upstream request: protocol pinned to HTTP/1.1, client headers
/// reduced to the allowlist, impersonation headers injected. Pure.
pub fn prepare(
    method: &str,
    target: &str,
    client_headers: &[(String, String)],
    body: &Bytes,
    username: &str,
    token: &str,
    host: &str,
) -> WireRequest {
    let find = |name: &str| {
        client_headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.clone())
    };

    let mut headers = Vec::with_capacity(6);
    if let Some(accept) = find("accept") {
        headers.push(("Accept".to_string(), accept));
    }
    if !body.is_empty() {
        // Never trust the client's length claim.
        headers.push(("Content-Length".to_string(), body.len().to_string()));
    }
    if let Some(content_type) = find("content-type") {
        headers.push(("Content-Type".to_string(), content_type));
    }
    headers.push(("X-Slurm-User-Token".to_string(), token.to_string()));
    headers.push(("X-Slurm-User-Name".to_string(), username.to_string()));
    headers.push(("Host".to_string(), host.to_string()));

    WireRequest {
        method: method.to_ascii_uppercase(),
        target: target.to_string(),
        headers,
        body: body.clone(),
    }
}

/// Canonical HTTP/1.1 bytes. The transport is single-exchange, so
/// `Connection: close` is always appended.
pub fn serialize_wire(request: &WireRequest) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + request.body.len());
    out.extend_from_slice(request.method.as_bytes());
    out.push(b' ');
    out.extend_from_slice(request.target.as_bytes());
    out.extend_from_slice(b" HTTP/1.1\r\n");
    for (name, value) in &request.headers {
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(b": ");
        out.extend_from_slice(value.as_bytes());
        out.extend_from_slice(b"\r\n");
    }
    out.extend_from_slice(b"Connection: close\r\n\r\n");
    out.extend_from_slice(&request.body);
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireParseError {
    #[error("missing header terminator")]
    NoHeaderEnd,
    #[error("malformed start line: {0}")]
    StartLine(String),
    #[error("malformed header line: {0}")]
    HeaderLine(String),
    #[error("unsupported transfer encoding")]
    TransferEncoding,
    #[error("invalid content length: {0}")]
    ContentLength(String),
    #[error("body shorter than content length")]
    TruncatedBody,
    #[error("bytes after the declared body")]
    TrailingBytes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRequest {
    pub method: String,
    pub target: String,
    pub version: String,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamResponse {
    pub status: u16,
    pub reason: String,
    pub headers: Vec<(String, String)>,
    pub body: Bytes,
}

fn split_head(bytes: &[u8]) -> Result<(&[u8], &[u8]), WireParseError> {
    let pos = bytes
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or(WireParseError::NoHeaderEnd)?;
    Ok((&bytes[..pos], &bytes[pos + 4..]))
}

fn parse_header_block(block: &[u8]) -> Result<Vec<(String, String)>, WireParseError> {
    let text = std::str::from_utf8(block)
        .map_err(|_| WireParseError::HeaderLine("not UTF-8".into()))?;
    let mut headers = Vec::new();
    for line in text.split("\r\n") {
        if line.is_empty() {
            continue;
        }
        if line.starts_with(' ') || line.starts_with('\t') {
            // Obsolete line folding is rejected outright.
            return Err(WireParseError::HeaderLine(line.to_string()));
        }
        let (name, value) = line
            .split_once(':')
            .ok_or_else(|| WireParseError::HeaderLine(line.to_string()))?;
        if name.is_empty() || name.contains(' ') {
            return Err(WireParseError::HeaderLine(line.to_string()));
        }
        headers.push((name.to_string(), value.trim().to_string()));
    }
    Ok(headers)
}

fn header_value<'a>(headers: &'a [(String, String)], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(name))
        .map(|(_, v)| v.as_str())
}

fn take_body(headers: &[(String, String)], rest: &[u8]) -> Result<Bytes, WireParseError> {
    if header_value(headers, "transfer-encoding").is_some() {
        return Err(WireParseError::TransferEncoding);
    }
    match header_value(headers, "content-length") {
        Some(raw) => {
            let length: usize = raw
                .trim()
                .parse()
                .map_err(|_| WireParseError::ContentLength(raw.to_string()))?;
            if rest.len() < length {
                return Err(WireParseError::TruncatedBody);
            }
            if rest.len() > length {
                return Err(WireParseError::TrailingBytes);
            }
            Ok(Bytes::copy_from_slice(rest))
        }
        None => Ok(Bytes::copy_from_slice(rest)),
    }
}

/// Strict parse of one HTTP/1.1 request (the mock side of the wire).
pub fn parse_wire_request(bytes: &[u8]) -> Result<ParsedRequest, WireParseError> {
    let (head, rest) = split_head(bytes)?;
    let mut lines = head.splitn(2, |b| *b == b'\r');
    let start = std::str::from_utf8(lines.next().unwrap_or_default())
        .map_err(|_| WireParseError::StartLine("not UTF-8".into()))?;
    let mut parts = start.split(' ');
    let (method, target, version) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(t), Some(v), None) if !m.is_empty() && t.starts_with('/') => (m, t, v),
        _ => return Err(WireParseError::StartLine(start.to_string())),
    };
    if version != "HTTP/1.1" {
        return Err(WireParseError::StartLine(start.to_string()));
    }
    let header_block = head
        .get(start.len() + 2..)
        .unwrap_or_default();
    let headers = parse_header_block(header_block)?;
    let body = take_body(&headers, rest)?;
    Ok(ParsedRequest {
        method: method.to_string(),
        target: target.to_string(),
        version: version.to_string(),
        headers,
        body,
    })
}

/// Strict parse of one HTTP/1.1 response from the upstream's stdout. Body
/// length comes from Content-Length when present, else read-to-end.
pub fn parse_wire_response(bytes: &[u8]) -> Result<UpstreamResponse, WireParseError> {
    let (head, rest) = split_head(bytes)?;
    let mut lines = head.splitn(2, |b| *b == b'\r');
    let start = std::str::from_utf8(lines.next().unwrap_or_default())
        .map_err(|_| WireParseError::StartLine("not UTF-8".into()))?;
    let mut parts = start.splitn(3, ' ');
    let (version, code, reason) = (
        parts.next().unwrap_or_default(),
        parts.next().unwrap_or_default(),
        parts.next().unwrap_or_default(),
    );
    if version != "HTTP/1.1" {
        return Err(WireParseError::StartLine(start.to_string()));
    }
    let status: u16 = code
        .parse()
        .map_err(|_| WireParseError::StartLine(start.to_string()))?;
    if !(100..=599).contains(&status) || code.len() != 3 {
        return Err(WireParseError::StartLine(start.to_string()));
    }
    let header_block = head.get(start.len() + 2..).unwrap_or_default();
    let headers = parse_header_block(header_block)?;
    let body = take_body(&headers, rest)?;
    Ok(UpstreamResponse {
        status,
        reason: reason.to_string(),
        headers,
        body,
    })
}

/// Response bytes for the mock side. Content-Length is always declared.
pub fn serialize_wire_response(
    status: u16,
    reason: &str,
    headers: &[(String, String)],
    body: &[u8],
) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + body.len());
    out.extend_from_slice(format!("HTTP/1.1 {status} {reason}\r\n").as_bytes());
    for (name, value) in headers {
        out.extend_from_slice(format!("{name}: {value}\r\n").as_bytes());
    }
    out.extend_from_slice(format!("Content-Length: {}\r\n\r\n", body.len()).as_bytes());
    out.extend_from_slice(body);
    out
}
