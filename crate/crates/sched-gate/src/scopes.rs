//! The authorization scope catalog.
//!
//! Every scope referenced by a token record or a route rule must come from
//! this list; registry and config loading fail closed on anything else.

/// Known scopes and a one-line description of what each grants.
pub const CATALOG: &[(&str, &str)] = &[
    ("slurm:read", "read data from the scheduler controller"),
    ("slurm:jobs:manage", "submit, update, or cancel jobs"),
    ("slurm:nodes:manage", "add, update, or remove nodes"),
    (
        "slurm:reservations:manage",
        "create, update, or delete resource reservations",
    ),
    ("slurm:reconfigure", "ask the controller to reconfigure"),
    ("slurmdb:read", "read data from the scheduler database"),
    ("slurmdb:accounts:manage", "create, update, or delete accounts"),
    (
        "slurmdb:accounts_association:manage",
        "create, update, or delete account associations",
    ),
    (
        "slurmdb:associations:manage",
        "create, update, or delete associations",
    ),
    ("slurmdb:clusters:manage", "create, update, or delete clusters"),
    ("slurmdb:config:read", "read the database configuration"),
    ("slurmdb:config:manage", "update the database configuration"),
    (
        "slurmdb:qos:manage",
        "create, update, or delete quality of service instances",
    ),
    ("slurmdb:users:manage", "create, update, or delete users"),
    (
        "slurmdb:users_association:manage",
        "create, update, or delete user associations",
    ),
    (
        "slurmdb:tres:manage",
        "create, update, or delete trackable resources",
    ),
    (
        "slurmdb:wckeys:manage",
        "create, update, or delete work characterization keys",
    ),
    ("pact:self", "run account diagnostics against your own account"),
    ("pact:admin", "run account diagnostics against any account"),
    ("health:check", "check the health of gateway components"),
    ("pprof:read", "read data from the performance profiling system"),
];

pub fn is_known(scope: &str) -> bool {
    CATALOG.iter().any(|(name, _)| *name == scope)
}

pub fn all() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|(name, _)| *name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_no_duplicates() {
        let mut names: Vec<_> = all().collect();
        names.sort_unstable();
        let len = names.len();
        names.dedup();
        assert_eq!(len, names.len());
        assert_eq!(len, 21);
    }

    #[test]
    fn known_and_unknown() {
        assert!(is_known("slurm:jobs:manage"));
        assert!(is_known("health:check"));
        assert!(!is_known("slurm:everything"));
        assert!(!is_known(""));
    }
}
