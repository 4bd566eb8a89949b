//! A stand-in for the scheduler REST daemon in inetd mode: reads one HTTP
//! request from stdin, writes one response to stdout, exits. Deterministic
//! output so tests can assert byte equality; behavior toggles come from the
//! environment (`MOCK_DELAY_MS`, `MOCK_FAIL`, `MOCK_FIXTURES`).

use serde::Deserialize;
use serde_json::json;

use crate::config::{MethodPattern, RoutePattern};
use crate::upstream::{parse_wire_request, serialize_wire_response, ParsedRequest};

/// Headers the real daemon would see from this gateway. Anything else on the
/// wire means the gateway leaked a client header, so the exchange fails loudly.
const EXPECTED_HEADERS: [&str; 7] = [
    "accept",
    "content-length",
    "content-type",
    "x-slurm-user-token",
    "x-slurm-user-name",
    "host",
    "connection",
];

#[derive(Debug, Clone)]
pub struct Fixture {
    pub method: MethodPattern,
    pub path: RoutePattern,
    pub status: u16,
    /// Serialized JSON with optional `{{account}}` / `{{path_tail}}` holes.
    pub body: String,
    /// A concrete path matching `path`, for harnesses that iterate fixtures.
    pub sample_path: String,
}

#[derive(Debug, Deserialize)]
struct RawFixture {
    method: String,
    path: String,
    #[serde(default = "default_status")]
    status: u16,
    body: String,
    #[serde(default)]
    sample_path: Option<String>,
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Deserialize)]
struct FixtureFile {
    fixtures: Vec<RawFixture>,
}

fn meta() -> serde_json::Value {
    json!({"plugin": {"name": "mock-slurmrestd", "type": "openapi/v0.0.43"}})
}

fn envelope(extra: serde_json::Value) -> String {
    let mut value = json!({"errors": [], "meta": meta(), "warnings": []});
    if let (Some(dst), Some(src)) = (value.as_object_mut(), extra.as_object()) {
        for (k, v) in src {
            dst.insert(k.clone(), v.clone());
        }
    }
    value.to_string()
}

fn error_body(code: &str, description: &str) -> String {
    json!({
        "errors": [{"description": description, "error": code}],
        "meta": meta(),
        "warnings": [],
    })
    .to_string()
}

pub fn default_fixtures() -> Vec<Fixture> {
    let fixture = |method: &str, path: &str, sample: &str, body: String| Fixture {
        method: MethodPattern::parse(method).expect("fixture method"),
        path: RoutePattern::parse(path).expect("fixture path"),
        status: 200,
        body,
        sample_path: sample.to_string(),
    };
    vec![
        fixture(
            "GET",
            "/slurm/*/ping",
            "/slurm/v0.0.43/ping",
            envelope(json!({"pings": [{"hostname": "mock-ctl", "latency": 7, "mode": "primary", "pinged": "UP"}]})),
        ),
        fixture(
            "GET",
            "/slurm/*/diag",
            "/slurm/v0.0.43/diag",
            envelope(json!({"statistics": {"jobs_pending": 7, "jobs_running": 42, "server_thread_count": 3}})),
        ),
        fixture(
            "GET",
            "/slurm/*/nodes",
            "/slurm/v0.0.43/nodes",
            envelope(json!({"nodes": [
                {"cpus": 128, "name": "node001", "state": ["IDLE"]},
                {"cpus": 128, "name": "node002", "state": ["ALLOCATED"]},
            ]})),
        ),
        fixture(
            "GET",
            "/slurm/*/node/*",
            "/slurm/v0.0.43/node/node001",
            envelope(json!({"nodes": [{"cpus": 128, "name": "{{path_tail}}", "state": ["IDLE"]}]})),
        ),
        fixture(
            "GET",
            "/slurm/*/jobs",
            "/slurm/v0.0.43/jobs",
            envelope(json!({"jobs": [
                {"account": "rcd_alpha", "job_id": 101, "job_state": ["RUNNING"]},
                {"account": "chem_lab", "job_id": 102, "job_state": ["PENDING"]},
            ]})),
        ),
        fixture(
            "GET",
            "/slurm/*/job/*",
            "/slurm/v0.0.43/job/101",
            envelope(json!({"jobs": [{"account": "rcd_alpha", "job_id": "{{path_tail}}", "job_state": ["RUNNING"]}]})),
        ),
        fixture(
            "POST",
            "/slurm/*/job/submit",
            "/slurm/v0.0.43/job/submit",
            envelope(json!({"job_id": 4242, "result": {"account": "{{account}}", "job_id": 4242}, "step_id": "batch"})),
        ),
        fixture(
            "POST",
            "/slurm/*/job/*",
            "/slurm/v0.0.43/job/101",
            envelope(json!({"results": [{"job_id": "{{path_tail}}", "status": "ok"}]})),
        ),
        fixture(
            "DELETE",
            "/slurm/*/job/*",
            "/slurm/v0.0.43/job/101",
            envelope(json!({"results": [{"job_id": "{{path_tail}}", "status": "cancelled"}]})),
        ),
        fixture(
            "GET",
            "/slurm/*/partitions",
            "/slurm/v0.0.43/partitions",
            envelope(json!({"partitions": [{"name": "work"}, {"name": "gpu"}]})),
        ),
        fixture(
            "GET",
            "/slurm/*/licenses",
            "/slurm/v0.0.43/licenses",
            envelope(json!({"licenses": [{"name": "matlab", "total": 16, "used": 3}]})),
        ),
        fixture(
            "DELETE",
            "/slurmdb/*/account/*",
            "/slurmdb/v0.0.43/account/rcd_alpha",
            envelope(json!({"deleted_accounts": ["{{path_tail}}"]})),
        ),
        fixture(
            "GET",
            "/slurm/**",
            "/slurm/v0.0.43/shares",
            envelope(json!({"shares": {}})),
        ),
        fixture(
            "GET",
            "/slurmdb/**",
            "/slurmdb/v0.0.43/accounts",
            envelope(json!({"accounts": [{"name": "rcd_alpha"}, {"name": "chem_lab"}]})),
        ),
        fixture(
            "POST",
            "/slurmdb/**",
            "/slurmdb/v0.0.43/accounts",
            envelope(json!({"status": "ok"})),
        ),
        fixture(
            "DELETE",
            "/slurmdb/**",
            "/slurmdb/v0.0.43/associations",
            envelope(json!({"removed": ["{{path_tail}}"], "status": "ok"})),
        ),
    ]
}

fn load_fixture_file(path: &str) -> Result<Vec<Fixture>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?;
    let file: FixtureFile = serde_json::from_str(&text).map_err(|e| format!("{path}: {e}"))?;
    let mut fixtures = Vec::with_capacity(file.fixtures.len());
    for raw in file.fixtures {
        let method = MethodPattern::parse(&raw.method).map_err(|e| format!("{path}: {e}"))?;
        let pattern = RoutePattern::parse(&raw.path).map_err(|e| format!("{path}: {e}"))?;
        let sample_path = raw
            .sample_path
            .unwrap_or_else(|| raw.path.replace("**", "x").replace('*', "v0.0.43"));
        fixtures.push(Fixture {
            method,
            path: pattern,
            status: raw.status,
            body: raw.body,
            sample_path,
        });
    }
    Ok(fixtures)
}

/// JSON-safe substitution: the rendered value is inserted inside a JSON
/// string literal, so escape it as one.
fn fill(template: &str, hole: &str, value: &str) -> String {
    if !template.contains(hole) {
        return template.to_string();
    }
    let quoted = serde_json::Value::String(value.to_string()).to_string();
    template.replace(hole, &quoted[1..quoted.len() - 1])
}

fn body_account(body: &[u8]) -> String {
    let parsed: serde_json::Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(_) => return String::new(),
    };
    parsed
        .get("job")
        .and_then(|j| j.get("account"))
        .or_else(|| parsed.get("account"))
        .and_then(|a| a.as_str())
        .unwrap_or("")
        .to_string()
}

fn respond(status: u16, reason: &str, body: &str) -> Vec<u8> {
    serialize_wire_response(
        status,
        reason,
        &[("Content-Type".to_string(), "application/json".to_string())],
        body.as_bytes(),
    )
}

fn path_only(target: &str) -> &str {
    target.split('?').next().unwrap_or(target)
}

fn handle(request: &ParsedRequest, env: &dyn Fn(&str) -> Option<String>) -> Vec<u8> {
    for (name, _) in &request.headers {
        let lower = name.to_ascii_lowercase();
        if !EXPECTED_HEADERS.contains(&lower.as_str()) {
            return respond(
                400,
                "Bad Request",
                &error_body("unexpected-header", &format!("unexpected header: {lower}")),
            );
        }
    }

    let has = |name: &str| {
        request
            .headers
            .iter()
            .any(|(k, v)| k.eq_ignore_ascii_case(name) && !v.is_empty())
    };
    if !has("x-slurm-user-token") || !has("x-slurm-user-name") {
        return respond(
            401,
            "Unauthorized",
            &error_body("unauthenticated", "X-Slurm-User-Token and X-Slurm-User-Name are required"),
        );
    }

    if let Some(ms) = env("MOCK_DELAY_MS").and_then(|v| v.parse::<u64>().ok()) {
        std::thread::sleep(std::time::Duration::from_millis(ms));
    }

    if env("MOCK_FAIL").as_deref() == Some("1") {
        return respond(500, "Internal Server Error", &error_body("injected", "injected failure"));
    }

    let fixtures = match env("MOCK_FIXTURES") {
        Some(path) => match load_fixture_file(&path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("mock-slurmrestd: {e}");
                return respond(500, "Internal Server Error", &error_body("fixtures", &e));
            }
        },
        None => default_fixtures(),
    };

    let path = path_only(&request.target);
    for fixture in &fixtures {
        if fixture.method.matches(&request.method) && fixture.path.matches(path) {
            let tail = RoutePattern::last_segment(path).unwrap_or_default();
            let mut body = fill(&fixture.body, "{{path_tail}}", tail);
            body = fill(&body, "{{account}}", &body_account(&request.body));
            let reason = if fixture.status == 200 { "OK" } else { "Mock" };
            return respond(fixture.status, reason, &body);
        }
    }

    respond(
        404,
        "Not Found",
        &error_body("not-found", &format!("no fixture for {} {path}", request.method)),
    )
}

/// One full inetd exchange. Always exits 0 once a response is produced; a
/// malformed request gets a 400 body rather than a crash, matching how the
/// real daemon keeps the conversation on the wire.
pub fn serve_once(stdin: &[u8], env: &dyn Fn(&str) -> Option<String>) -> (Vec<u8>, i32) {
    match parse_wire_request(stdin) {
        Ok(request) => (handle(&request, env), 0),
        Err(e) => (
            respond(400, "Bad Request", &error_body("malformed-request", &e.to_string())),
            0,
        ),
    }
}
