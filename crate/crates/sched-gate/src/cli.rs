//! Command-line entry points: serve, mint-token, check-config.

use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::auth::jwt::mint_bearer_token;
use crate::clock::{Clock, SystemClock};
use crate::config::{load_config, load_group_map, load_token_registry, Reloader, ServiceConfig};
use crate::server::{serve_http, Gateway};
use crate::upstream::CommandMinter;

pub const CONFIG_ENV_VAR: &str = "SCHED_GATE_CONFIG";

#[derive(Parser)]
#[command(name = "sched-gate", about = "Authenticating, caching gateway for a scheduler REST daemon")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the gateway.
    Serve {
        /// Config file; falls back to $SCHED_GATE_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Mint a bearer token and print it on stdout.
    MintToken {
        #[arg(long)]
        user: String,
        /// Lifetime in seconds.
        #[arg(long, default_value_t = 2_592_000)]
        validity: u64,
    },
    /// Validate config, token registry, and group map, then print the
    /// effective route table.
    CheckConfig {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

pub fn resolve_config_path(flag: Option<PathBuf>) -> Result<PathBuf, String> {
    flag.or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from))
        .ok_or_else(|| format!("no --config given and {CONFIG_ENV_VAR} is unset"))
}

pub fn run_mint_token(user: &str, validity: u64) -> Result<String, String> {
    if user.is_empty() {
        return Err("--user must not be empty".to_string());
    }
    if validity == 0 {
        return Err("--validity must be positive".to_string());
    }
    Ok(mint_bearer_token(user, SystemClock.now(), validity))
}

/// Human-readable audit of everything the gateway would load at startup.
pub fn run_check_config(path: &PathBuf) -> Result<String, String> {
    let config = load_config(path).map_err(|e| e.to_string())?;
    let registry = load_token_registry(&config.token_registry_path).map_err(|e| e.to_string())?;
    let groups = match &config.group_map_path {
        Some(p) => Some(load_group_map(p).map_err(|e| e.to_string())?),
        None => None,
    };

    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("config ok: {}", path.display()));
    line(format!("listen address: {}", config.listen_address));
    line(format!("upstream command: {}", config.upstream_command.join(" ")));
    for (name, policy) in &config.policies {
        line(format!(
            "policy {name}: clamp to [{}, {}] s, buffer {} s",
            policy.min_seconds, policy.max_seconds, policy.buffer_seconds
        ));
    }
    let disabled = registry.records.iter().filter(|r| r.disabled).count();
    line(format!(
        "token registry: {} records ({} disabled)",
        registry.records.len(),
        disabled
    ));
    match &groups {
        Some(map) => line(format!("group map: {} users", map.len())),
        None => line("group map: none".to_string()),
    }
    line(format!("routes: {}", config.route_table.len()));
    for rule in &config.route_table {
        let scopes = if rule.required_scopes.is_empty() {
            "public".to_string()
        } else {
            rule.required_scopes
                .iter()
                .cloned()
                .collect::<Vec<_>>()
                .join("|")
        };
        let mut extras = Vec::new();
        if let Some(policy) = &rule.cache_policy {
            extras.push(format!("cache={policy}"));
        }
        if let Some(extractor) = rule.account_extractor {
            extras.push(format!("extractor={}", extractor.name()));
        }
        if rule.allowed_groups.is_some() {
            extras.push("groups".to_string());
        }
        if rule.allowed_cidrs.is_some() {
            extras.push("cidrs".to_string());
        }
        let suffix = if extras.is_empty() {
            String::new()
        } else {
            format!(" [{}]", extras.join(", "))
        };
        line(format!("  {} {} -> {}{}", rule.method, rule.pattern, scopes, suffix));
    }
    Ok(out)
}

async fn shutdown_requested() {
    let ctrl_c = tokio::signal::ctrl_c();
    #[cfg(unix)]
    {
        let mut term = tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate())
            .expect("installing SIGTERM handler");
        tokio::select! {
            _ = ctrl_c => {},
            _ = term.recv() => {},
        }
    }
    #[cfg(not(unix))]
    {
        let _ = ctrl_c.await;
    }
}

pub async fn run_serve(path: &PathBuf) -> Result<(), String> {
    let config: ServiceConfig = load_config(path).map_err(|e| e.to_string())?;
    let listen_address = config.listen_address.clone();
    let shutdown_grace = config.shutdown_grace;

    let (snapshots, reloader) = Reloader::start(
        config.token_registry_path.clone(),
        config.group_map_path.clone(),
        config.registry_reload_interval,
    )?;
    tokio::spawn(reloader.run());

    let minter = Box::new(CommandMinter::new(config.token_mint_command.clone()));
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let gateway = Gateway::new(config, Arc::clone(&clock), snapshots, minter);
    tokio::spawn(Arc::clone(gateway.tokens()).run(clock));

    let listener = tokio::net::TcpListener::bind(&listen_address)
        .await
        .map_err(|e| format!("bind {listen_address}: {e}"))?;
    tracing::info!(address = %listen_address, "listening");

    let (tx, rx) = tokio::sync::watch::channel(false);
    tokio::spawn(async move {
        shutdown_requested().await;
        tracing::info!("shutdown requested; draining");
        let _ = tx.send(true);
    });
    let mut drain_rx = rx.clone();
    let graceful = {
        let mut rx = rx;
        async move {
            while !*rx.borrow() {
                if rx.changed().await.is_err() {
                    return;
                }
            }
        }
    };

    let serve = serve_http(gateway, listener, graceful);
    tokio::pin!(serve);
    let hard_stop = async move {
        while !*drain_rx.borrow() {
            if drain_rx.changed().await.is_err() {
                std::future::pending::<()>().await;
            }
        }
        tokio::time::sleep(std::time::Duration::from_secs_f64(shutdown_grace)).await;
    };

    tokio::select! {
        result = &mut serve => result.map_err(|e| e.to_string()),
        _ = hard_stop => {
            tracing::warn!("drain grace expired; stopping");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::jwt::decode_claims;

    #[test]
    fn minted_tokens_parse_and_differ() {
        let a = run_mint_token("alice", 60).unwrap();
        let b = run_mint_token("alice", 60).unwrap();
        assert_ne!(a, b, "identical arguments must still differ");
        let decoded = decode_claims(&a).unwrap();
        assert_eq!(decoded.claims["sun"], "alice");
        assert!(run_mint_token("", 60).is_err());
        assert!(run_mint_token("alice", 0).is_err());
    }
}
