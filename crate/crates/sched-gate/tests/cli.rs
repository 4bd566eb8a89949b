//! Black-box runs of the `sched-gate` binary.

use std::path::PathBuf;
use std::process::Command;

use sched_gate::auth::jwt::decode_claims;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sched-gate"))
}

fn example_config() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../etc/sched-gate.toml")
}

#[test]
fn mint_token_prints_a_decodable_jwt() {
    let out = binary()
        .args(["mint-token", "--user", "alice", "--validity", "7200"])
        .output()
        .expect("run mint-token");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let token = String::from_utf8(out.stdout).unwrap();
    let token = token.trim();
    let decoded = decode_claims(token).expect("minted token decodes");
    assert_eq!(decoded.claims["sun"], "alice");
    let iat = decoded.claims["iat"].as_u64().unwrap();
    let exp = decoded.claims["exp"].as_u64().unwrap();
    assert_eq!(exp - iat, 7200);

    let again = binary()
        .args(["mint-token", "--user", "alice", "--validity", "7200"])
        .output()
        .expect("run mint-token again");
    assert_ne!(
        token,
        String::from_utf8(again.stdout).unwrap().trim(),
        "repeated mints must not collide"
    );
}

#[test]
fn mint_token_rejects_empty_user() {
    let out = binary()
        .args(["mint-token", "--user", ""])
        .output()
        .expect("run mint-token");
    assert!(!out.status.success());
}

#[test]
fn check_config_accepts_the_shipped_example() {
    let out = binary()
        .args(["check-config", "--config"])
        .arg(example_config())
        .output()
        .expect("run check-config");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("config ok"), "stdout: {stdout}");
    assert!(stdout.contains("routes:"), "stdout: {stdout}");
    assert!(stdout.contains("token registry: 4 records"), "stdout: {stdout}");
}

#[test]
fn check_config_reads_the_environment_variable() {
    let out = binary()
        .arg("check-config")
        .env("SCHED_GATE_CONFIG", example_config())
        .output()
        .expect("run check-config via env");
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn check_config_fails_without_a_config() {
    let out = binary()
        .arg("check-config")
        .env_remove("SCHED_GATE_CONFIG")
        .output()
        .expect("run check-config bare");
    assert!(!out.status.success());
}

#[test]
fn check_config_fails_on_missing_file() {
    let out = binary()
        .args(["check-config", "--config", "/nonexistent/sched-gate.toml"])
        .output()
        .expect("run check-config on missing file");
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn check_config_rejects_a_broken_registry() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("gate.toml");
    let registry = dir.path().join("tokens.toml");
    std::fs::write(
        &registry,
        "[a]\ntoken = \"x\"\nusername = \"u\"\nscopes = [\"not:a:scope\"]\n",
    )
    .unwrap();
    std::fs::write(
        &config,
        "upstream_command = [\"/bin/true\"]\ntoken_mint_command = [\"/bin/true\"]\ntoken_registry_path = \"tokens.toml\"\n",
    )
    .unwrap();
    let out = binary()
        .args(["check-config", "--config"])
        .arg(&config)
        .output()
        .expect("run check-config");
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not:a:scope"));
}
