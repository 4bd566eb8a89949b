//! Request `Cache-Control` parsing. Only two directives are honored:
//! `no-cache` (force regeneration) and `stale-if-error` with an optional
//! seconds argument bounding how stale a fallback may be.

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Directives {
    pub no_cache: bool,
    /// `Some(None)` = bare directive, `Some(Some(s))` = seconds cap.
    pub stale_if_error: Option<Option<f64>>,
}

impl Directives {
    pub fn allows_stale(&self, staleness: f64) -> bool {
        match self.stale_if_error {
            None => false,
            Some(None) => true,
            Some(Some(limit)) => staleness <= limit,
        }
    }
}

pub fn parse_cache_control(value: Option<&str>) -> Directives {
    let mut out = Directives::default();
    let Some(value) = value else { return out };
    for part in value.split(',') {
        let part = part.trim();
        let (name, arg) = match part.split_once('=') {
            Some((n, a)) => (n.trim(), Some(a.trim().trim_matches('"'))),
            None => (part, None),
        };
        if name.eq_ignore_ascii_case("no-cache") {
            out.no_cache = true;
        } else if name.eq_ignore_ascii_case("stale-if-error") {
            // A malformed seconds argument degrades to the bare form.
            let seconds = arg.and_then(|a| a.parse::<f64>().ok()).filter(|s| *s >= 0.0);
            out.stale_if_error = Some(seconds);
        }
        // All other directives (max-age, no-store, ...) are ignored.
    }
    out
}
