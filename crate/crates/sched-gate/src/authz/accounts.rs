//! Per-endpoint account extraction from mutating request bodies.
//!
//! Each mutating endpoint format gets its own parser. The contract is
//! fail-safe: fields that are absent contribute nothing, fields that are
//! present with the wrong shape mark the extraction incomplete, and an
//! incomplete extraction denies restricted identities.

use std::collections::BTreeSet;

use crate::config::{ExtractorId, RoutePattern};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccountExtraction {
    pub accounts: BTreeSet<String>,
    pub extractor_id: ExtractorId,
    /// False when the body held unrecognized structure where account data
    /// was expected (or did not parse at all).
    pub complete: bool,
}

impl AccountExtraction {
    fn incomplete(extractor_id: ExtractorId) -> Self {
        Self {
            accounts: BTreeSet::new(),
            extractor_id,
            complete: false,
        }
    }
}

struct Collector {
    accounts: BTreeSet<String>,
    complete: bool,
}

impl Collector {
    fn new() -> Self {
        Self {
            accounts: BTreeSet::new(),
            complete: true,
        }
    }

    /// Record an account field value: absent is fine, a string is collected,
    /// anything else poisons the extraction.
    fn field(&mut self, value: Option<&serde_json::Value>) {
        match value {
            None => {}
            Some(serde_json::Value::String(s)) => {
                self.accounts.insert(s.clone());
            }
            Some(_) => self.complete = false,
        }
    }

    /// Walk `items[].account`-style lists: `list` must be an array of
    /// objects if present.
    fn list_field(&mut self, list: Option<&serde_json::Value>, key: &str) {
        match list {
            None => {}
            Some(serde_json::Value::Array(items)) => {
                for item in items {
                    match item.as_object() {
                        Some(obj) => self.field(obj.get(key)),
                        None => self.complete = false,
                    }
                }
            }
            Some(_) => self.complete = false,
        }
    }

    fn finish(self, extractor_id: ExtractorId) -> AccountExtraction {
        AccountExtraction {
            accounts: self.accounts,
            extractor_id,
            complete: self.complete,
        }
    }
}

pub fn extract_accounts(extractor_id: ExtractorId, path: &str, body: &[u8]) -> AccountExtraction {
    if extractor_id == ExtractorId::AccountPath {
        return match RoutePattern::last_segment(path) {
            Some(segment) if !segment.is_empty() => AccountExtraction {
                accounts: BTreeSet::from([segment.to_string()]),
                extractor_id,
                complete: true,
            },
            _ => AccountExtraction::incomplete(extractor_id),
        };
    }

    let Ok(value) = serde_json::from_slice::<serde_json::Value>(body) else {
        return AccountExtraction::incomplete(extractor_id);
    };
    let Some(root) = value.as_object() else {
        return AccountExtraction::incomplete(extractor_id);
    };

    let mut out = Collector::new();
    match extractor_id {
        ExtractorId::JobSubmit => {
            // Single submission carries `job`, batched submission `jobs`.
            match root.get("job") {
                None => {}
                Some(serde_json::Value::Object(job)) => out.field(job.get("account")),
                Some(_) => out.complete = false,
            }
            out.list_field(root.get("jobs"), "account");
        }
        ExtractorId::AccountsBody => out.list_field(root.get("accounts"), "name"),
        ExtractorId::AssociationsBody => out.list_field(root.get("associations"), "account"),
        ExtractorId::UsersAssociationBody => match root.get("users") {
            None => {}
            Some(serde_json::Value::Array(users)) => {
                for user in users {
                    match user.as_object() {
                        Some(obj) => out.list_field(obj.get("associations"), "account"),
                        None => out.complete = false,
                    }
                }
            }
            Some(_) => out.complete = false,
        },
        ExtractorId::AccountPath => unreachable!("handled above"),
    }
    out.finish(extractor_id)
}
