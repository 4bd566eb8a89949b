//! Talking to the scheduler REST daemon in inetd mode: prepare the wire
//! request, spawn one subprocess per exchange, parse what comes back, and
//! keep the gateway's privileged token warm.

pub mod invoke;
pub mod token;
pub mod wire;

pub use invoke::{invoke_inetd, InvokeError};
pub use token::{
    parse_mint_output, CommandMinter, MintError, Minter, TokenManager, TokenStatus, UpstreamToken,
};
pub use wire::{
    parse_wire_request, parse_wire_response, prepare, serialize_wire, serialize_wire_response,
    ParsedRequest, UpstreamResponse, WireParseError, WireRequest,
};
