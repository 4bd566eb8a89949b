use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GroupMapError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("group map line {line}: {detail}")]
    Line { line: usize, detail: String },
}

/// Username to group-set mapping, from a flat file of
/// `username: group1,group2` lines.
#[derive(Debug, Default, Clone)]
pub struct GroupMap {
    members: BTreeMap<String, BTreeSet<String>>,
}

impl GroupMap {
    pub fn groups_of(&self, username: &str) -> Option<&BTreeSet<String>> {
        self.members.get(username)
    }

    pub fn is_member(&self, username: &str, group: &str) -> bool {
        self.members
            .get(username)
            .is_some_and(|groups| groups.contains(group))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn load_group_map(path: &Path) -> Result<GroupMap, GroupMapError> {
    let text = std::fs::read_to_string(path).map_err(|source| GroupMapError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_group_map(&text)
}

pub fn parse_group_map(text: &str) -> Result<GroupMap, GroupMapError> {
    let mut members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw_line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (user, groups) = trimmed.split_once(':').ok_or_else(|| GroupMapError::Line {
            line,
            detail: "expected `username: group,group`".into(),
        })?;
        let user = user.trim();
        if user.is_empty() {
            return Err(GroupMapError::Line {
                line,
                detail: "empty username".into(),
            });
        }
        if members.contains_key(user) {
            return Err(GroupMapError::Line {
                line,
                detail: format!("duplicate entry for {user:?}"),
            });
        }
        let set: BTreeSet<String> = groups
            .split(',')
            .map(str::trim)
            .filter(|g| !g.is_empty())
            .map(str::to_string)
            .collect();
        members.insert(user.to_string(), set);
    }
    Ok(GroupMap { members })
}
