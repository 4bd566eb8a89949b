//! Single-flight request coalescing: overlapping calls for one key share a
//! single generator execution and all observe its value.

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::{Arc, Mutex, OnceLock};

use tokio::sync::Notify;

/// Value a flight publishes when its generator task dies without producing
/// one (panic or runtime shutdown); waiters must never hang.
pub trait Abortable {
    fn aborted() -> Self;
}

impl<T, E: Abortable> Abortable for Result<T, E> {
    fn aborted() -> Self {
        Err(E::aborted())
    }
}

struct Flight<V> {
    done: Notify,
    result: OnceLock<V>,
}

pub struct FlightGroup<K, V> {
    flights: Arc<Mutex<HashMap<K, Arc<Flight<V>>>>>,
}

impl<K, V> Default for FlightGroup<K, V> {
    fn default() -> Self {
        Self {
            flights: Arc::new(Mutex::new(HashMap::new())),
        }
    }
}

impl<K, V> FlightGroup<K, V>
where
    K: Eq + Hash + Clone + Send + 'static,
    V: Abortable + Clone + Send + Sync + 'static,
{
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of flights currently in progress.
    pub fn in_flight(&self) -> usize {
        self.flights.lock().unwrap().len()
    }

    /// Join (or start) the flight for `key`. Returns the flight's value and
    /// whether this call was the one that ran `make`.
    ///
    /// The generator runs in a detached task: cancelling any caller,
    /// including the one that started the flight, cannot strand the other
    /// waiters. A panicking generator publishes `V::aborted()` instead.
    pub async fn run<F, Fut>(&self, key: K, make: F) -> (V, bool)
    where
        F: FnOnce() -> Fut,
        Fut: std::future::Future<Output = V> + Send + 'static,
    {
        let (flight, owner) = {
            let mut map = self.flights.lock().unwrap();
            match map.entry(key.clone()) {
                std::collections::hash_map::Entry::Occupied(e) => (e.get().clone(), false),
                std::collections::hash_map::Entry::Vacant(e) => {
                    let flight = Arc::new(Flight {
                        done: Notify::new(),
                        result: OnceLock::new(),
                    });
                    e.insert(flight.clone());
                    (flight, true)
                }
            }
        };

        if owner {
            let future = make();
            let publish = flight.clone();
            let flights = self.flights.clone();
            tokio::spawn(async move {
                // The inner spawn converts a generator panic into a JoinError
                // instead of killing the publisher before it publishes.
                let value = match tokio::spawn(future).await {
                    Ok(value) => value,
                    Err(_) => V::aborted(),
                };
                let _ = publish.result.set(value);
                // Result is visible before the key is released; a new caller
                // either joins this flight or starts a fresh one, never both.
                flights.lock().unwrap().remove(&key);
                publish.done.notify_waiters();
            });
        }

        loop {
            let notified = flight.done.notified();
            tokio::pin!(notified);
            // Register before checking, so a notify between the check and
            // the await cannot be missed.
            notified.as_mut().enable();
            if let Some(value) = flight.result.get() {
                return (value.clone(), owner);
            }
            notified.await;
        }
    }
}
