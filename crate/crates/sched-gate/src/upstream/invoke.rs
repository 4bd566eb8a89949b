//! Spawns the inetd-style upstream: one subprocess per request, request
//! bytes on stdin, response bytes on stdout.

use std::process::Stdio;
use std::time::Duration;

use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::process::Command;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InvokeError {
    #[error("spawn failed: {0}")]
    Spawn(String),
    #[error("upstream exceeded {0:?}")]
    Timeout(Duration),
    #[error("upstream i/o failed: {0}")]
    Io(String),
}

/// One inetd exchange. The child sees an empty environment except for the
/// allowlisted variables, resolved from this process at spawn time so test
/// harnesses can flip them between requests. stdin is closed after the write;
/// a child that outlives `timeout` is killed.
pub async fn invoke_inetd(
    command: &[String],
    env_allowlist: &[String],
    input: &[u8],
    timeout: Duration,
) -> Result<Vec<u8>, InvokeError> {
    let (argv0, rest) = command
        .split_first()
        .ok_or_else(|| InvokeError::Spawn("empty upstream command".into()))?;

    let mut cmd = Command::new(argv0);
    cmd.args(rest)
        .env_clear()
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .kill_on_drop(true);
    for name in env_allowlist {
        if let Ok(value) = std::env::var(name) {
            cmd.env(name, value);
        }
    }

    let mut child = cmd.spawn().map_err(|e| InvokeError::Spawn(e.to_string()))?;

    let mut stdin = child.stdin.take().expect("stdin piped");
    match stdin.write_all(input).await {
        // A child may answer (or die) without draining stdin; the response
        // read decides the outcome, not the pipe.
        Ok(()) | Err(_) => drop(stdin),
    }

    let exchange = child.wait_with_output();
    match tokio::time::timeout(timeout, exchange).await {
        Ok(Ok(output)) => {
            if !output.stderr.is_empty() {
                tracing::debug!(
                    stderr = %String::from_utf8_lossy(&output.stderr),
                    "upstream stderr"
                );
            }
            if !output.status.success() {
                tracing::warn!(status = ?output.status.code(), "upstream exited nonzero");
            }
            Ok(output.stdout)
        }
        Ok(Err(e)) => Err(InvokeError::Io(e.to_string())),
        // wait_with_output consumed the child, but kill_on_drop already
        // reaped it when the timeout dropped the future.
        Err(_) => Err(InvokeError::Timeout(timeout)),
    }
}
