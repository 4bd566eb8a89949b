//! Per-route authorization requirements, evaluated after authentication.
//!
//! A request is handled only when every requirement its route declares
//! allows it: scope possession, account restriction on mutating methods,
//! group membership, and source-address allowlists. Checks are pure
//! functions over immutable snapshots.

mod accounts;

pub use accounts::{extract_accounts, AccountExtraction};

use std::collections::BTreeSet;
use std::net::IpAddr;

use crate::auth::Identity;
use crate::config::{Cidr, GroupMap};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

/// Why a request was refused. The detail goes to logs; clients only ever see
/// the mapped status with a generic body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyReason {
    Unauthenticated,
    MissingScope,
    AccountNotPermitted(String),
    IncompleteExtraction,
    RestrictedWithoutExtractor,
    GroupRequired,
    AddressNotAllowed,
}

impl DenyReason {
    pub fn status(&self) -> u16 {
        match self {
            DenyReason::Unauthenticated => 401,
            _ => 403,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            DenyReason::Unauthenticated => "unauthenticated",
            DenyReason::MissingScope => "missing_scope",
            DenyReason::AccountNotPermitted(_) => "account_not_permitted",
            DenyReason::IncompleteExtraction => "incomplete_extraction",
            DenyReason::RestrictedWithoutExtractor => "restricted_without_extractor",
            DenyReason::GroupRequired => "group_required",
            DenyReason::AddressNotAllowed => "address_not_allowed",
        }
    }
}

/// Account restriction applies to anything that can change scheduler state;
/// only plain reads bypass it.
pub fn is_mutating_method(method: &str) -> bool {
    !(method.eq_ignore_ascii_case("GET") || method.eq_ignore_ascii_case("HEAD"))
}

/// Any-of semantics: the identity needs one of the required scopes. An empty
/// requirement set marks a public endpoint.
pub fn check_scope(identity: Option<&Identity>, required_scopes: &BTreeSet<String>) -> Decision {
    if required_scopes.is_empty() {
        return Decision::Allow;
    }
    let Some(identity) = identity else {
        return Decision::Deny(DenyReason::Unauthenticated);
    };
    if required_scopes.iter().any(|s| identity.scopes.contains(s)) {
        Decision::Allow
    } else {
        Decision::Deny(DenyReason::MissingScope)
    }
}

/// Every extracted account must fully match one of the identity's patterns.
/// Identities without patterns are unrestricted. Callers only invoke this on
/// mutating requests.
pub fn check_account_restriction(identity: &Identity, extraction: &AccountExtraction) -> Decision {
    if identity.account_patterns.is_empty() {
        return Decision::Allow;
    }
    if !extraction.complete {
        return Decision::Deny(DenyReason::IncompleteExtraction);
    }
    for account in &extraction.accounts {
        if !identity.account_patterns.iter().any(|p| p.is_match(account)) {
            return Decision::Deny(DenyReason::AccountNotPermitted(account.clone()));
        }
    }
    Decision::Allow
}

pub fn check_group(
    identity: &Identity,
    allowed_groups: &BTreeSet<String>,
    groups: &GroupMap,
) -> Decision {
    let member = groups
        .groups_of(&identity.username)
        .is_some_and(|mine| allowed_groups.iter().any(|g| mine.contains(g)));
    if member {
        Decision::Allow
    } else {
        Decision::Deny(DenyReason::GroupRequired)
    }
}

pub fn check_address(source_address: IpAddr, cidr_allowlist: &[Cidr]) -> Decision {
    if cidr_allowlist.iter().any(|c| c.contains(source_address)) {
        Decision::Allow
    } else {
        Decision::Deny(DenyReason::AddressNotAllowed)
    }
}
