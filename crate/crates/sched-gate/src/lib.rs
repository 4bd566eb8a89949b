//! Authenticating, authorizing, caching gateway for a scheduler REST daemon
//! that runs in inetd mode (one subprocess per request).

pub mod auth;
pub mod authz;
pub mod cache;
pub mod clock;
pub mod cli;
pub mod config;
pub mod mock;
pub mod scopes;
pub mod server;
pub mod upstream;
