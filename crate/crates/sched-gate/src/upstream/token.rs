//! The gateway's own credential for the upstream: one privileged token,
//! minted out-of-band and refreshed before it can expire.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::auth::jwt::unverified_expiry;
use crate::clock::Clock;

const BACKOFF_FLOOR_SECONDS: f64 = 1.0;
const BACKOFF_CEIL_SECONDS: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("mint failed: {0}")]
pub struct MintError(pub String);

pub trait Minter: Send + Sync {
    fn mint(&self) -> Result<String, MintError>;
}

impl<F> Minter for F
where
    F: Fn() -> Result<String, MintError> + Send + Sync,
{
    fn mint(&self) -> Result<String, MintError> {
        self()
    }
}

/// Runs the configured mint command and takes the token from its stdout.
pub struct CommandMinter {
    command: Vec<String>,
}

impl CommandMinter {
    pub fn new(command: Vec<String>) -> Self {
        Self { command }
    }
}

impl Minter for CommandMinter {
    fn mint(&self) -> Result<String, MintError> {
        let (argv0, rest) = self
            .command
            .split_first()
            .ok_or_else(|| MintError("empty mint command".into()))?;
        let output = std::process::Command::new(argv0)
            .args(rest)
            .output()
            .map_err(|e| MintError(format!("spawn {argv0}: {e}")))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(MintError(format!(
                "exit {:?}: {}",
                output.status.code(),
                stderr.trim()
            )));
        }
        parse_mint_output(&String::from_utf8_lossy(&output.stdout))
    }
}

/// Accepts the two formats mint tools emit: a bare token line, or the
/// `SLURM_JWT=<token>` assignment meant for eval.
pub fn parse_mint_output(stdout: &str) -> Result<String, MintError> {
    for line in stdout.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let token = line.strip_prefix("SLURM_JWT=").unwrap_or(line);
        if token.is_empty() {
            break;
        }
        return Ok(token.to_string());
    }
    Err(MintError("no token in mint output".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamToken {
    pub value: String,
    pub minted_at: f64,
    pub expires_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenStatus {
    pub available: bool,
    pub expires_in: Option<f64>,
    pub mint_ok: u64,
    pub mint_failures: u64,
    pub consecutive_failures: u64,
    pub last_error: Option<String>,
}

struct TokenState {
    current: Option<UpstreamToken>,
    next_attempt: f64,
    backoff: f64,
    mint_ok: u64,
    mint_failures: u64,
    consecutive_failures: u64,
    last_error: Option<String>,
}

/// Tick-driven so simulated clocks can drive days of refreshes in tests.
/// Refresh fires at half the remaining lifetime; failures retry on an
/// exponential backoff capped well under the shortest sane lifetime.
pub struct TokenManager {
    minter: Box<dyn Minter>,
    default_lifetime: f64,
    state: Mutex<TokenState>,
}

impl TokenManager {
    pub fn new(minter: Box<dyn Minter>, default_lifetime: f64) -> Self {
        assert!(default_lifetime > 0.0);
        Self {
            minter,
            default_lifetime,
            state: Mutex::new(TokenState {
                current: None,
                next_attempt: f64::NEG_INFINITY,
                backoff: 0.0,
                mint_ok: 0,
                mint_failures: 0,
                consecutive_failures: 0,
                last_error: None,
            }),
        }
    }

    /// Attempt a mint if one is due. Holding the lock across the mint call
    /// keeps concurrent tickers from double-minting.
    pub fn tick(&self, now: f64) {
        let mut state = self.state.lock().unwrap();
        if now < state.next_attempt {
            return;
        }
        match self.minter.mint() {
            Ok(value) => {
                let expires_at = match unverified_expiry(&value) {
                    Some(exp) => exp,
                    None => now + self.default_lifetime,
                };
                if expires_at <= now {
                    state.mint_failures += 1;
                    state.consecutive_failures += 1;
                    state.last_error = Some("minted token already expired".into());
                    state.backoff = next_backoff(state.backoff);
                    state.next_attempt = now + state.backoff;
                    return;
                }
                state.next_attempt = now + (expires_at - now) / 2.0;
                state.current = Some(UpstreamToken {
                    value,
                    minted_at: now,
                    expires_at,
                });
                state.backoff = 0.0;
                state.mint_ok += 1;
                state.consecutive_failures = 0;
                state.last_error = None;
            }
            Err(e) => {
                state.mint_failures += 1;
                state.consecutive_failures += 1;
                state.last_error = Some(e.0);
                state.backoff = next_backoff(state.backoff);
                state.next_attempt = now + state.backoff;
            }
        }
    }

    /// Never returns a token that is expired at `now`; callers must treat
    /// `None` as the upstream being unavailable rather than send a dead
    /// credential.
    pub fn current(&self, now: f64) -> Option<UpstreamToken> {
        let state = self.state.lock().unwrap();
        state.current.as_ref().filter(|t| t.expires_at > now).cloned()
    }

    pub fn status(&self, now: f64) -> TokenStatus {
        let state = self.state.lock().unwrap();
        let live = state.current.as_ref().filter(|t| t.expires_at > now);
        TokenStatus {
            available: live.is_some(),
            expires_in: live.map(|t| t.expires_at - now),
            mint_ok: state.mint_ok,
            mint_failures: state.mint_failures,
            consecutive_failures: state.consecutive_failures,
            last_error: state.last_error.clone(),
        }
    }

    /// Background refresher for real deployments. Mint commands block, so
    /// ticks run on the blocking pool.
    pub async fn run(self: Arc<Self>, clock: Arc<dyn Clock>) {
        loop {
            let mgr = Arc::clone(&self);
            let now = clock.now();
            let _ = tokio::task::spawn_blocking(move || mgr.tick(now)).await;
            tokio::time::sleep(Duration::from_millis(500)).await;
        }
    }
}

fn next_backoff(previous: f64) -> f64 {
    if previous <= 0.0 {
        BACKOFF_FLOOR_SECONDS
    } else {
        (previous * 2.0).min(BACKOFF_CEIL_SECONDS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::jwt::mint_bearer_token;
    use std::sync::atomic::{AtomicU64, Ordering};

    fn jwt_minter(lifetime: u64, clock: Arc<crate::clock::SimClock>) -> Box<dyn Minter> {
        Box::new(move || Ok(mint_bearer_token("slurm", clock.now(), lifetime)))
    }

    #[test]
    fn parses_both_mint_output_formats() {
        assert_eq!(parse_mint_output("a.b.c\n").unwrap(), "a.b.c");
        assert_eq!(parse_mint_output("\nSLURM_JWT=x.y.z\n").unwrap(), "x.y.z");
        assert!(parse_mint_output("").is_err());
        assert!(parse_mint_output("SLURM_JWT=").is_err());
    }

    #[test]
    fn command_minter_runs_argv() {
        let minter = CommandMinter::new(vec![
            "/bin/sh".into(),
            "-c".into(),
            "echo SLURM_JWT=tok.en.value".into(),
        ]);
        assert_eq!(minter.mint().unwrap(), "tok.en.value");

        let failing = CommandMinter::new(vec!["/bin/sh".into(), "-c".into(), "exit 9".into()]);
        assert!(failing.mint().is_err());
    }

    #[test]
    fn mints_on_first_tick_and_refreshes_at_half_life() {
        let clock = Arc::new(crate::clock::SimClock::new(1_000.0));
        let calls = Arc::new(AtomicU64::new(0));
        let (c2, k2) = (Arc::clone(&clock), Arc::clone(&calls));
        let mgr = TokenManager::new(
            Box::new(move || {
                k2.fetch_add(1, Ordering::SeqCst);
                Ok(mint_bearer_token("slurm", c2.now(), 60))
            }),
            300.0,
        );

        mgr.tick(clock.now());
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let first = mgr.current(clock.now()).unwrap();
        assert_eq!(first.expires_at, 1_060.0);

        // Before the half-life nothing happens.
        clock.advance(29.0);
        mgr.tick(clock.now());
        assert_eq!(calls.load(Ordering::SeqCst), 1);

        clock.advance(2.0);
        mgr.tick(clock.now());
        assert_eq!(calls.load(Ordering::SeqCst), 2);
        let second = mgr.current(clock.now()).unwrap();
        assert!(second.expires_at > first.expires_at);
    }

    #[test]
    fn current_never_hands_out_an_expired_token() {
        let clock = Arc::new(crate::clock::SimClock::new(0.0));
        let mgr = TokenManager::new(jwt_minter(60, Arc::clone(&clock)), 300.0);
        mgr.tick(clock.now());
        assert!(mgr.current(59.9).is_some());
        assert!(mgr.current(60.0).is_none(), "boundary counts as expired");
        assert!(mgr.current(1_000.0).is_none());
    }

    #[test]
    fn failures_back_off_exponentially_and_cap() {
        let mgr = TokenManager::new(Box::new(|| Err(MintError("down".into()))), 300.0);
        let mut now = 0.0;
        let mut attempts = vec![];
        // Tick densely; record when attempts actually fire.
        let mut last_failures = 0;
        while now < 120.0 {
            mgr.tick(now);
            let st = mgr.status(now);
            if st.mint_failures != last_failures {
                attempts.push(now);
                last_failures = st.mint_failures;
            }
            now += 0.25;
        }
        let gaps: Vec<f64> = attempts.windows(2).map(|w| w[1] - w[0]).collect();
        assert_eq!(&gaps[..6], &[1.0, 2.0, 4.0, 8.0, 16.0, 30.0]);
        assert!(gaps[6..].iter().all(|g| *g == 30.0), "cap holds: {gaps:?}");
        let st = mgr.status(now);
        assert!(!st.available);
        assert_eq!(st.consecutive_failures, st.mint_failures);
        assert_eq!(st.last_error.as_deref(), Some("down"));
    }

    #[test]
    fn recovery_resets_backoff_and_error() {
        let fail = Arc::new(AtomicU64::new(1));
        let f2 = Arc::clone(&fail);
        let mgr = TokenManager::new(
            Box::new(move || {
                if f2.load(Ordering::SeqCst) == 1 {
                    Err(MintError("down".into()))
                } else {
                    Ok(mint_bearer_token("slurm", 100.0, 600))
                }
            }),
            300.0,
        );
        mgr.tick(0.0);
        assert!(!mgr.status(0.0).available);
        fail.store(0, Ordering::SeqCst);
        mgr.tick(1.0);
        let st = mgr.status(1.0);
        assert!(st.available);
        assert_eq!(st.consecutive_failures, 0);
        assert_eq!(st.last_error, None);
    }

    #[test]
    fn opaque_token_uses_the_fallback_lifetime() {
        let mgr = TokenManager::new(Box::new(|| Ok("not-a-jwt".to_string())), 300.0);
        mgr.tick(50.0);
        let tok = mgr.current(50.0).unwrap();
        assert_eq!(tok.expires_at, 350.0);
    }

    #[test]
    fn already_expired_mint_counts_as_failure() {
        let mgr = TokenManager::new(
            Box::new(|| Ok(mint_bearer_token("slurm", 0.0, 10))),
            300.0,
        );
        mgr.tick(500.0);
        assert!(mgr.current(500.0).is_none());
        assert_eq!(mgr.status(500.0).mint_failures, 1);
    }
}
