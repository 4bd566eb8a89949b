//! Route path patterns.
//!
//! Patterns are literal segments with two wildcard forms: `*` matches exactly
//! one segment (any value, including version segments like `v0.0.43`), and a
//! final `**` matches zero or more trailing segments. Matching ignores a
//! trailing slash on the request path.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Any,
    Rest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutePattern {
    raw: String,
    segments: Vec<Segment>,
}

impl RoutePattern {
    pub fn parse(raw: &str) -> Result<Self, String> {
        if !raw.starts_with('/') {
            return Err(format!("pattern {raw:?} must start with '/'"));
        }
        if raw == "/" {
            return Ok(RoutePattern {
                raw: raw.to_string(),
                segments: Vec::new(),
            });
        }
        // Strict split here: an empty segment in a pattern is a typo, even
        // though request matching tolerates duplicate slashes.
        let parts: Vec<&str> = raw[1..].split('/').collect();
        let mut segments = Vec::with_capacity(parts.len());
        for (i, part) in parts.iter().enumerate() {
            let seg = match *part {
                "*" => Segment::Any,
                "**" => {
                    if i + 1 != parts.len() {
                        return Err(format!("pattern {raw:?}: '**' is only valid at the end"));
                    }
                    Segment::Rest
                }
                "" => return Err(format!("pattern {raw:?} has an empty segment")),
                lit => Segment::Literal(lit.to_string()),
            };
            segments.push(seg);
        }
        Ok(RoutePattern {
            raw: raw.to_string(),
            segments,
        })
    }

    pub fn matches(&self, path: &str) -> bool {
        let path: Vec<&str> = path_segments(path).collect();
        let mut i = 0;
        for seg in &self.segments {
            match seg {
                Segment::Rest => return true,
                Segment::Any => {
                    if i >= path.len() {
                        return false;
                    }
                    i += 1;
                }
                Segment::Literal(lit) => {
                    if path.get(i) != Some(&lit.as_str()) {
                        return false;
                    }
                    i += 1;
                }
            }
        }
        i == path.len()
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// Final path segment of a concrete request path, used by the
    /// path-based account extractor.
    pub fn last_segment(path: &str) -> Option<&str> {
        path_segments(path).last()
    }
}

fn path_segments(path: &str) -> impl Iterator<Item = &str> {
    path.trim_start_matches('/')
        .trim_end_matches('/')
        .split('/')
        .filter(|s| !s.is_empty())
}

impl fmt::Display for RoutePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl<'de> Deserialize<'de> for RoutePattern {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        RoutePattern::parse(&s).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pat(s: &str) -> RoutePattern {
        RoutePattern::parse(s).unwrap()
    }

    #[test]
    fn version_wildcard_matches_any_version_segment() {
        let p = pat("/slurm/*/nodes");
        assert!(p.matches("/slurm/v0.0.43/nodes"));
        assert!(p.matches("/slurm/v0.0.41/nodes"));
        assert!(!p.matches("/slurm/v0.0.43/jobs"));
        assert!(!p.matches("/slurm/v0.0.43/nodes/extra"));
        assert!(!p.matches("/slurm/nodes"));
    }

    #[test]
    fn trailing_segment_wildcard() {
        let p = pat("/slurmdb/*/account/*");
        assert!(p.matches("/slurmdb/v0.0.43/account/phys"));
        assert!(!p.matches("/slurmdb/v0.0.43/account"));

        let rest = pat("/slurm/**");
        assert!(rest.matches("/slurm"));
        assert!(rest.matches("/slurm/v0.0.43/ping"));
        assert!(!rest.matches("/slurmdb/v0.0.43/jobs"));
    }

    #[test]
    fn trailing_slash_on_request_is_ignored() {
        assert!(pat("/slurm/*/ping").matches("/slurm/v0.0.43/ping/"));
        assert!(pat("/health").matches("/health/"));
    }

    #[test]
    fn invalid_patterns_rejected() {
        assert!(RoutePattern::parse("slurm/ping").is_err());
        assert!(RoutePattern::parse("/slurm/**/ping").is_err());
        assert!(RoutePattern::parse("/slurm//ping").is_err());
    }

    #[test]
    fn last_segment_helper() {
        assert_eq!(
            RoutePattern::last_segment("/slurmdb/v0.0.43/account/physics"),
            Some("physics")
        );
        assert_eq!(RoutePattern::last_segment("/"), None);
    }
}
