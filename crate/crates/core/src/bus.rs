//! In-process publish/subscribe broker connecting the pipeline stages.
//!
//! Topics follow the convention `INPUT.<ENTITY>.<FORMAT>` for ingest feeds
//! and `STAGE.<NAME>` for internal hops. Delivery is asynchronous: every
//! subscription owns a bounded queue and a worker thread, so a slow handler
//! back-pressures publishers instead of dropping messages.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

use crate::clock::{SharedClock, Timestamp};

/// Per-topic queue bound; publishers block when a subscriber falls this far behind.
pub const DEFAULT_QUEUE_CAPACITY: usize = 10_000;
/// How many messages a topic retains for late subscribers when retention is on.
pub const RETAINED_LIMIT: usize = 1_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BusError {
    #[error("invalid topic name `{0}`")]
    InvalidTopicName(String),
    #[error("role {role:?} may not {action} on topic `{topic}`")]
    RoleViolation {
        role: ComponentRole,
        action: &'static str,
        topic: String,
    },
}

/// Named channel on the bus.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    /// Validates the naming convention: 2 or 3 non-empty uppercase segments
    /// joined by `.`; ingest topics (`INPUT.*`) always have 3.
    pub fn new(name: &str) -> Result<Self, BusError> {
        let segments: Vec<&str> = name.split('.').collect();
        let seg_ok = |s: &&str| {
            !s.is_empty()
                && s.chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
        };
        if !(2..=3).contains(&segments.len()) || !segments.iter().all(seg_ok) {
            return Err(BusError::InvalidTopicName(name.to_string()));
        }
        if segments[0] == "INPUT" && segments.len() != 3 {
            return Err(BusError::InvalidTopicName(name.to_string()));
        }
        Ok(Topic(name.to_string()))
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn is_ingest(&self) -> bool {
        self.0.starts_with("INPUT.")
    }
}

impl std::fmt::Display for Topic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Payload encodings that travel over the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentType {
    Pipe,
    FhirJson,
    Hl7v2,
    Domain,
    RdfGraph,
}

#[derive(Debug, Clone)]
pub struct BusMessage {
    pub topic: Topic,
    pub payload: Vec<u8>,
    pub content_type: ContentType,
    pub message_id: String,
    pub enqueued_at: Timestamp,
}

/// Pipeline component kinds; each carries fixed publish/subscribe rights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentRole {
    Input,
    Encoder,
    Store,
    Query,
    Output,
    Application,
}

impl ComponentRole {
    /// Inputs only send; outputs only receive. Stores and applications may
    /// publish to internal `STAGE` topics but never to ingest topics.
    pub fn may_publish(self, topic: &Topic) -> bool {
        match self {
            ComponentRole::Input | ComponentRole::Encoder | ComponentRole::Query => true,
            ComponentRole::Store | ComponentRole::Application => !topic.is_ingest(),
            ComponentRole::Output => false,
        }
    }

    pub fn may_subscribe(self) -> bool {
        !matches!(self, ComponentRole::Input)
    }
}

type Handler = Box<dyn FnMut(&BusMessage) + Send>;

struct SubscriberSlot {
    id: u64,
    sender: SyncSender<BusMessage>,
    enqueued: Arc<AtomicU64>,
    processed: Arc<AtomicU64>,
    active: Arc<AtomicBool>,
}

#[derive(Default)]
struct TopicState {
    subscribers: Vec<SubscriberSlot>,
    retained: Vec<BusMessage>,
}

#[derive(Default)]
struct BusInner {
    topics: HashMap<String, TopicState>,
    published: HashMap<String, u64>,
}

pub struct Bus {
    inner: Mutex<BusInner>,
    clock: SharedClock,
    next_message_id: AtomicU64,
    next_subscription_id: AtomicU64,
    queue_capacity: usize,
    retain_unsubscribed: bool,
    workers: Mutex<Vec<JoinHandle<()>>>,
}

/// Handle returned by `subscribe`; dropping it does not cancel delivery,
/// `unsubscribe` does.
pub struct SubscriptionHandle {
    id: u64,
    topic: Topic,
    active: Arc<AtomicBool>,
}

impl Bus {
    pub fn new(clock: SharedClock) -> Arc<Self> {
        Self::with_options(clock, DEFAULT_QUEUE_CAPACITY, false)
    }

    pub fn with_options(
        clock: SharedClock,
        queue_capacity: usize,
        retain_unsubscribed: bool,
    ) -> Arc<Self> {
        Arc::new(Bus {
            inner: Mutex::new(BusInner::default()),
            clock,
            next_message_id: AtomicU64::new(1),
            next_subscription_id: AtomicU64::new(1),
            queue_capacity,
            retain_unsubscribed,
            workers: Mutex::new(Vec::new()),
        })
    }

    pub fn publish(
        &self,
        role: ComponentRole,
        topic: &Topic,
        payload: Vec<u8>,
        content_type: ContentType,
    ) -> Result<String, BusError> {
        if !role.may_publish(topic) {
            return Err(BusError::RoleViolation {
                role,
                action: "publish",
                topic: topic.name().to_string(),
            });
        }
        assert!(!payload.is_empty(), "bus payloads must be non-empty");
        let id = format!(
            "m{:08}",
            self.next_message_id.fetch_add(1, Ordering::SeqCst)
        );
        let message = BusMessage {
            topic: topic.clone(),
            payload,
            content_type,
            message_id: id.clone(),
            enqueued_at: self.clock.now(),
        };

        // Collect live senders under the lock, send outside it so a full
        // queue blocks only the publisher, not the whole bus.
        let targets: Vec<(SyncSender<BusMessage>, Arc<AtomicU64>)> = {
            let mut inner = self.inner.lock().unwrap();
            *inner.published.entry(topic.name().to_string()).or_insert(0) += 1;
            let state = inner.topics.entry(topic.name().to_string()).or_default();
            state.subscribers.retain(|s| s.active.load(Ordering::SeqCst));
            if state.subscribers.is_empty() {
                if self.retain_unsubscribed {
                    state.retained.push(message);
                    let excess = state.retained.len().saturating_sub(RETAINED_LIMIT);
                    if excess > 0 {
                        state.retained.drain(..excess);
                    }
                }
                return Ok(id);
            }
            state
                .subscribers
                .iter()
                .map(|s| (s.sender.clone(), s.enqueued.clone()))
                .collect()
        };
        for (sender, enqueued) in targets {
            enqueued.fetch_add(1, Ordering::SeqCst);
            // A receiver gone mid-send just drops the message for that
            // subscription; everyone else still gets it.
            let _ = sender.send(message.clone());
        }
        Ok(id)
    }

    pub fn subscribe<F>(
        &self,
        role: ComponentRole,
        topic: &Topic,
        handler: F,
    ) -> Result<SubscriptionHandle, BusError>
    where
        F: FnMut(&BusMessage) + Send + 'static,
    {
        if !role.may_subscribe() {
            return Err(BusError::RoleViolation {
                role,
                action: "subscribe",
                topic: topic.name().to_string(),
            });
        }
        let id = self.next_subscription_id.fetch_add(1, Ordering::SeqCst);
        let (sender, receiver) = mpsc::sync_channel::<BusMessage>(self.queue_capacity);
        let enqueued = Arc::new(AtomicU64::new(0));
        let processed = Arc::new(AtomicU64::new(0));
        let active = Arc::new(AtomicBool::new(true));

        let backlog = {
            let mut inner = self.inner.lock().unwrap();
            let state = inner.topics.entry(topic.name().to_string()).or_default();
            state.subscribers.push(SubscriberSlot {
                id,
                sender,
                enqueued: enqueued.clone(),
                processed: processed.clone(),
                active: active.clone(),
            });
            std::mem::take(&mut state.retained)
        };
        let slot = {
            let inner = self.inner.lock().unwrap();
            let state = &inner.topics[topic.name()];
            let slot = state.subscribers.iter().find(|s| s.id == id).unwrap();
            slot.sender.clone()
        };
        for m in backlog {
            enqueued.fetch_add(1, Ordering::SeqCst);
            let _ = slot.send(m);
        }
        drop(slot);

        let worker_active = active.clone();
        let worker_processed = processed;
        let mut handler: Handler = Box::new(handler);
        let join = std::thread::spawn(move || {
            while let Ok(message) = receiver.recv() {
                if worker_active.load(Ordering::SeqCst) {
                    // A panicking handler must not wedge flush(): count the
                    // message as processed either way.
                    let _ = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
                        handler(&message)
                    }));
                }
                worker_processed.fetch_add(1, Ordering::SeqCst);
            }
        });
        self.workers.lock().unwrap().push(join);

        Ok(SubscriptionHandle {
            id,
            topic: topic.clone(),
            active,
        })
    }

    pub fn unsubscribe(&self, handle: &SubscriptionHandle) {
        handle.active.store(false, Ordering::SeqCst);
        let mut inner = self.inner.lock().unwrap();
        if let Some(state) = inner.topics.get_mut(handle.topic.name()) {
            // Dropping the sender lets the worker thread exit.
            state.subscribers.retain(|s| s.id != handle.id);
        }
    }

    /// Blocks until every active subscription has processed everything
    /// enqueued for it so far. Gives tests and the virtual-clock
    /// orchestrator a deterministic quiescence point.
    pub fn flush(&self) {
        loop {
            let pending: u64 = {
                let inner = self.inner.lock().unwrap();
                inner
                    .topics
                    .values()
                    .flat_map(|t| t.subscribers.iter())
                    .filter(|s| s.active.load(Ordering::SeqCst))
                    .map(|s| {
                        s.enqueued.load(Ordering::SeqCst) - s.processed.load(Ordering::SeqCst)
                    })
                    .sum()
            };
            if pending == 0 {
                return;
            }
            std::thread::yield_now();
            std::thread::sleep(std::time::Duration::from_micros(200));
        }
    }

    /// Messages published so far, per topic name.
    pub fn published_counts(&self) -> HashMap<String, u64> {
        self.inner.lock().unwrap().published.clone()
    }

    /// Drops all subscriptions and joins the worker threads.
    pub fn shutdown(&self) {
        self.flush();
        {
            let mut inner = self.inner.lock().unwrap();
            for state in inner.topics.values_mut() {
                for s in &state.subscribers {
                    s.active.store(false, Ordering::SeqCst);
                }
                state.subscribers.clear();
            }
        }
        let workers = std::mem::take(&mut *self.workers.lock().unwrap());
        for w in workers {
            let _ = w.join();
        }
    }
}

pub mod topics {
    //! Well-known topic names used by the pipeline.
    pub const PATIENT_PIPE: &str = "INPUT.PATIENT.PIPE";
    pub const ENCOUNTER_FHIRJSON: &str = "INPUT.ENCOUNTER.FHIRJSON";
    pub const OBSERVATION_HL7V2: &str = "INPUT.OBSERVATION.HL7V2";
    pub const STAGE_RDF: &str = "STAGE.RDF";
    pub const STAGE_DLQ: &str = "STAGE.DLQ";
    pub const STAGE_EVENTS: &str = "STAGE.EVENTS";

    pub fn results_topic(query_name: &str) -> String {
        format!("STAGE.RESULTS.{}", query_name.to_ascii_uppercase())
    }
}
