use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::SystemTime;

use super::groups::{load_group_map, GroupMap};
use super::registry::{load_token_registry, RegistrySnapshot};

/// Latest good registry and group map. Readers clone an `Arc`, so a reload
/// never blocks or tears an in-flight request.
pub struct SharedSnapshots {
    registry: RwLock<Arc<RegistrySnapshot>>,
    groups: RwLock<Arc<GroupMap>>,
    stats: ReloaderStats,
}

#[derive(Debug, Default)]
pub struct ReloaderStats {
    pub reloads_ok: AtomicU64,
    pub reloads_failed: AtomicU64,
    pub consecutive_failures: AtomicU64,
    last_error: Mutex<Option<String>>,
}

impl ReloaderStats {
    fn record_ok(&self) {
        self.reloads_ok.fetch_add(1, Ordering::Relaxed);
        self.consecutive_failures.store(0, Ordering::Relaxed);
        *self.last_error.lock().unwrap() = None;
    }

    fn record_failure(&self, message: String) {
        self.reloads_failed.fetch_add(1, Ordering::Relaxed);
        self.consecutive_failures.fetch_add(1, Ordering::Relaxed);
        *self.last_error.lock().unwrap() = Some(message);
    }

    pub fn last_error(&self) -> Option<String> {
        self.last_error.lock().unwrap().clone()
    }

    pub fn healthy(&self) -> bool {
        self.consecutive_failures.load(Ordering::Relaxed) == 0
    }
}

impl SharedSnapshots {
    pub fn new(registry: RegistrySnapshot, groups: GroupMap) -> Self {
        Self {
            registry: RwLock::new(Arc::new(registry)),
            groups: RwLock::new(Arc::new(groups)),
            stats: ReloaderStats::default(),
        }
    }

    pub fn registry(&self) -> Arc<RegistrySnapshot> {
        self.registry.read().unwrap().clone()
    }

    pub fn groups(&self) -> Arc<GroupMap> {
        self.groups.read().unwrap().clone()
    }

    pub fn stats(&self) -> &ReloaderStats {
        &self.stats
    }

    pub fn replace_registry(&self, snapshot: RegistrySnapshot) {
        *self.registry.write().unwrap() = Arc::new(snapshot);
    }

    pub fn replace_groups(&self, groups: GroupMap) {
        *self.groups.write().unwrap() = Arc::new(groups);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FileStamp {
    mtime: Option<SystemTime>,
    size: u64,
}

fn stamp(path: &Path) -> Option<FileStamp> {
    let meta = std::fs::metadata(path).ok()?;
    Some(FileStamp {
        mtime: meta.modified().ok(),
        size: meta.len(),
    })
}

/// Polls the registry (and optional group map) for modification-time changes
/// and swaps in freshly parsed snapshots. A file that fails to parse leaves
/// the previous snapshot serving and bumps the failure counters.
pub struct Reloader {
    shared: Arc<SharedSnapshots>,
    registry_path: PathBuf,
    group_map_path: Option<PathBuf>,
    interval_seconds: u64,
    registry_stamp: Option<FileStamp>,
    groups_stamp: Option<FileStamp>,
}

impl Reloader {
    /// Performs the initial load; startup is fail-closed, so a broken file
    /// here is an error rather than an empty registry.
    pub fn start(
        registry_path: PathBuf,
        group_map_path: Option<PathBuf>,
        interval_seconds: u64,
    ) -> Result<(Arc<SharedSnapshots>, Reloader), String> {
        let registry = load_token_registry(&registry_path).map_err(|e| e.to_string())?;
        let groups = match &group_map_path {
            Some(path) => load_group_map(path).map_err(|e| e.to_string())?,
            None => GroupMap::default(),
        };
        let shared = Arc::new(SharedSnapshots::new(registry, groups));
        let reloader = Reloader {
            shared: shared.clone(),
            registry_stamp: stamp(&registry_path),
            groups_stamp: group_map_path.as_deref().and_then(stamp),
            registry_path,
            group_map_path,
            interval_seconds,
        };
        Ok((shared, reloader))
    }

    /// One polling pass. Returns whether anything was swapped in.
    pub fn poll_once(&mut self) -> bool {
        let mut swapped = false;

        let current = stamp(&self.registry_path);
        if current != self.registry_stamp {
            self.registry_stamp = current;
            match load_token_registry(&self.registry_path) {
                Ok(snapshot) => {
                    self.shared.replace_registry(snapshot);
                    self.shared.stats.record_ok();
                    swapped = true;
                }
                Err(err) => {
                    tracing::warn!(error = %err, "token registry reload failed; keeping previous snapshot");
                    self.shared.stats.record_failure(err.to_string());
                }
            }
        }

        if let Some(path) = self.group_map_path.clone() {
            let current = stamp(&path);
            if current != self.groups_stamp {
                self.groups_stamp = current;
                match load_group_map(&path) {
                    Ok(groups) => {
                        self.shared.replace_groups(groups);
                        self.shared.stats.record_ok();
                        swapped = true;
                    }
                    Err(err) => {
                        tracing::warn!(error = %err, "group map reload failed; keeping previous snapshot");
                        self.shared.stats.record_failure(err.to_string());
                    }
                }
            }
        }

        swapped
    }

    /// Polling loop for the server runtime; aborted on shutdown.
    pub async fn run(mut self) {
        let period = std::time::Duration::from_secs(self.interval_seconds.max(1));
        let mut ticker = tokio::time::interval(period);
        ticker.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        ticker.tick().await; // first tick fires immediately; initial load already happened
        loop {
            ticker.tick().await;
            self.poll_once();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(path: &Path, text: &str) {
        let mut f = std::fs::File::create(path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f.sync_all().unwrap();
    }

    const V1: &str = "[a]\ntoken = \"tk_one\"\nusername = \"alice\"\nscopes = [\"slurm:read\"]\n";
    const V2: &str = "[a]\ntoken = \"tk_two\"\nusername = \"alice\"\nscopes = [\"slurm:read\"]\n";
    const BAD: &str = "[a]\ntoken = \"tk_three\"\nusername = \"alice\"\nscopes = [\"bogus\"]\n";

    #[test]
    fn reload_swaps_registry_on_change() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.toml");
        write_file(&path, V1);
        let (shared, mut reloader) = Reloader::start(path.clone(), None, 1).unwrap();
        assert_eq!(shared.registry().records[0].token, "tk_one");

        assert!(!reloader.poll_once(), "no change yet");

        write_file(&path, V2);
        assert!(reloader.poll_once());
        assert_eq!(shared.registry().records[0].token, "tk_two");
        assert!(shared.stats().healthy());
    }

    #[test]
    fn broken_reload_keeps_previous_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.toml");
        write_file(&path, V1);
        let (shared, mut reloader) = Reloader::start(path.clone(), None, 1).unwrap();

        write_file(&path, BAD);
        assert!(!reloader.poll_once());
        assert_eq!(shared.registry().records[0].token, "tk_one", "old snapshot still serves");
        assert!(!shared.stats().healthy());
        assert!(shared.stats().last_error().unwrap().contains("bogus"));

        write_file(&path, V2);
        assert!(reloader.poll_once());
        assert_eq!(shared.registry().records[0].token, "tk_two");
        assert!(shared.stats().healthy());
    }

    #[test]
    fn startup_with_broken_registry_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tokens.toml");
        write_file(&path, BAD);
        assert!(Reloader::start(path, None, 1).is_err());
    }

    #[test]
    fn group_map_reloads_too() {
        let dir = tempfile::tempdir().unwrap();
        let reg = dir.path().join("tokens.toml");
        let map = dir.path().join("groups.map");
        write_file(&reg, V1);
        write_file(&map, "alice: research\n");
        let (shared, mut reloader) =
            Reloader::start(reg, Some(map.clone()), 1).unwrap();
        assert!(shared.groups().is_member("alice", "research"));

        write_file(&map, "alice: research, hpc-admins\n");
        assert!(reloader.poll_once());
        assert!(shared.groups().is_member("alice", "hpc-admins"));
    }
}
