use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::scopes;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("registry entry {name:?}: {detail}")]
    Entry { name: String, detail: String },
}

/// Account restriction regex, always compiled as a full match over the
/// account name.
#[derive(Clone)]
pub struct AccountPattern {
    raw: String,
    compiled: regex::Regex,
}

impl AccountPattern {
    pub fn compile(raw: &str) -> Result<Self, regex::Error> {
        let compiled = regex::Regex::new(&format!("^(?:{raw})$"))?;
        Ok(Self {
            raw: raw.to_string(),
            compiled,
        })
    }

    pub fn is_match(&self, account: &str) -> bool {
        self.compiled.is_match(account)
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }
}

impl fmt::Debug for AccountPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountPattern({:?})", self.raw)
    }
}

#[derive(Clone)]
pub struct TokenRecord {
    pub name: String,
    pub token: String,
    pub username: String,
    pub scopes: BTreeSet<String>,
    pub accounts: Option<AccountPattern>,
    pub disabled: bool,
    pub description: Option<String>,
}

impl fmt::Debug for TokenRecord {
    // The token value stays out of logs.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenRecord")
            .field("name", &self.name)
            .field("token", &"<redacted>")
            .field("username", &self.username)
            .field("scopes", &self.scopes)
            .field("accounts", &self.accounts)
            .field("disabled", &self.disabled)
            .finish()
    }
}

#[derive(Debug, Default, Clone)]
pub struct RegistrySnapshot {
    pub records: Vec<TokenRecord>,
}

impl RegistrySnapshot {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTokenRecord {
    token: String,
    username: String,
    #[serde(default)]
    scopes: Vec<String>,
    accounts: Option<String>,
    #[serde(default)]
    disabled: bool,
    description: Option<String>,
}

/// Load the bearer-token registry. One bad entry rejects the whole file so a
/// partially applied edit can never serve.
pub fn load_token_registry(path: &Path) -> Result<RegistrySnapshot, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_token_registry(&text).map_err(|err| match err {
        RegistryError::Parse { message, .. } => RegistryError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

pub fn parse_token_registry(text: &str) -> Result<RegistrySnapshot, RegistryError> {
    let raw: BTreeMap<String, RawTokenRecord> =
        toml::from_str(text).map_err(|e| RegistryError::Parse {
            path: PathBuf::from("<registry>"),
            message: e.to_string(),
        })?;

    let entry_err = |name: &str, detail: String| RegistryError::Entry {
        name: name.to_string(),
        detail,
    };

    let mut records = Vec::with_capacity(raw.len());
    let mut seen_tokens = BTreeSet::new();
    for (name, rec) in raw {
        if rec.token.is_empty() {
            return Err(entry_err(&name, "token value is empty".into()));
        }
        if rec.token.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(entry_err(&name, "token value contains whitespace or control characters".into()));
        }
        if rec.username.is_empty() {
            return Err(entry_err(&name, "username is empty".into()));
        }
        for scope in &rec.scopes {
            if !scopes::is_known(scope) {
                return Err(entry_err(&name, format!("unknown scope {scope:?}")));
            }
        }
        let accounts = match rec.accounts.as_deref() {
            None => None,
            Some(raw_pattern) => Some(
                AccountPattern::compile(raw_pattern)
                    .map_err(|e| entry_err(&name, format!("account pattern does not compile: {e}")))?,
            ),
        };
        if !seen_tokens.insert(rec.token.clone()) {
            return Err(entry_err(&name, "token value duplicates another entry".into()));
        }
        records.push(TokenRecord {
            name,
            token: rec.token,
            username: rec.username,
            scopes: rec.scopes.into_iter().collect(),
            accounts,
            disabled: rec.disabled,
            description: rec.description,
        });
    }
    Ok(RegistrySnapshot { records })
}
