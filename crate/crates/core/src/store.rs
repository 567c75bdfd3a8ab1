//! Timestamp-indexed in-memory triplestore.
//!
//! Graphs arrive from the bus and are indexed by root IRI (replace-by-root
//! upsert) and by ingest timestamp. Readers work on snapshots; the single
//! bus subscription is the only writer, so no reader ever sees a partially
//! inserted graph.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use thiserror::Error;

use crate::bus::{topics, Bus, BusError, ComponentRole, SubscriptionHandle, Topic};
use crate::clock::Timestamp;
use crate::rdf::pattern::{Bindings, TriplePattern};
use crate::rdf::{turtle, ResourceGraph, Triple};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StoreError {
    #[error("invalid window: low {0:?} must be before high {1:?}")]
    InvalidWindow(Timestamp, Timestamp),
    #[error("bus unavailable: {0}")]
    BusUnavailable(#[from] BusError),
    #[error("journal error: {0}")]
    Journal(String),
}

/// Half-open ingest-time interval `(low, high]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub low: Timestamp,
    pub high: Timestamp,
}

impl Window {
    pub fn new(low: Timestamp, high: Timestamp) -> Result<Self, StoreError> {
        if low >= high {
            return Err(StoreError::InvalidWindow(low, high));
        }
        Ok(Window { low, high })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.low < t && t <= self.high
    }
}

/// Immutable view of the store contents at one point in time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreSnapshot {
    pub root_index: BTreeMap<String, ResourceGraph>,
    pub time_index: BTreeMap<Timestamp, BTreeSet<String>>,
}

impl StoreSnapshot {
    pub fn triples(&self) -> BTreeSet<Triple> {
        self.root_index
            .values()
            .flat_map(|g| g.triples.iter().cloned())
            .collect()
    }

    /// Triples of graphs whose ingest time falls inside the window (all
    /// graphs when no window is given).
    pub fn window_triples(&self, window: Option<Window>) -> BTreeSet<Triple> {
        self.root_index
            .values()
            .filter(|g| window.map_or(true, |w| w.contains(g.ingested_at)))
            .flat_map(|g| g.triples.iter().cloned())
            .collect()
    }

    /// All bindings of one pattern over the (optionally windowed) triples,
    /// in deterministic subject/predicate/object order.
    pub fn match_pattern(&self, pattern: &TriplePattern, window: Option<Window>) -> Vec<Bindings> {
        let mut out = Vec::new();
        for triple in self.window_triples(window) {
            if let Some(b) = pattern.match_triple(&triple, &Bindings::new()) {
                out.push(b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertReport {
    pub replaced: bool,
}

pub struct Store {
    state: RwLock<StoreSnapshot>,
    journal: Mutex<Option<std::fs::File>>,
    pub graphs_in: AtomicU64,
}

impl Store {
    pub fn new() -> Arc<Self> {
        Arc::new(Store {
            state: RwLock::new(StoreSnapshot::default()),
            journal: Mutex::new(None),
            graphs_in: AtomicU64::new(0),
        })
    }

    /// Opens (or creates) an append-only Turtle journal; every inserted
    /// graph is appended as one block for restart recovery.
    pub fn with_journal(path: PathBuf) -> Result<Arc<Self>, StoreError> {
        let store = Store::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| StoreError::Journal(e.to_string()))?;
            for graph in parse_journal(&text)? {
                store.insert_graph(graph);
            }
        }
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::Journal(e.to_string()))?;
        *store.journal.lock().unwrap() = Some(file);
        Ok(store)
    }

    /// Replace-by-root upsert: an existing graph under the same root is
    /// removed first, along with its time index entry.
    pub fn insert_graph(&self, graph: ResourceGraph) -> InsertReport {
        debug_assert!(graph.validate().is_ok());
        self.graphs_in.fetch_add(1, Ordering::SeqCst);
        if let Some(file) = self.journal.lock().unwrap().as_mut() {
            let _ = writeln!(file, "{}", graph.to_turtle());
        }
        let mut state = self.state.write().unwrap();
        let replaced = match state.root_index.remove(&graph.root) {
            Some(old) => {
                if let Some(roots) = state.time_index.get_mut(&old.ingested_at) {
                    roots.remove(&old.root);
                    if roots.is_empty() {
                        state.time_index.remove(&old.ingested_at);
                    }
                }
                true
            }
            None => false,
        };
        state
            .time_index
            .entry(graph.ingested_at)
            .or_default()
            .insert(graph.root.clone());
        state.root_index.insert(graph.root.clone(), graph);
        InsertReport { replaced }
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        self.state.read().unwrap().clone()
    }

    pub fn match_pattern(
        &self,
        pattern: &TriplePattern,
        window: Option<Window>,
    ) -> Vec<Bindings> {
        self.snapshot().match_pattern(pattern, window)
    }

    /// The whole store as canonical Turtle.
    pub fn dump_turtle(&self) -> String {
        turtle::serialize_turtle(&self.snapshot().triples())
    }
}

/// A journal is a sequence of graph blocks separated by blank lines, each
/// block a self-contained Turtle document.
pub fn parse_journal(text: &str) -> Result<Vec<ResourceGraph>, StoreError> {
    let mut graphs = Vec::new();
    let mut block = String::new();
    let flush_block = |block: &mut String,
                           graphs: &mut Vec<ResourceGraph>|
     -> Result<(), StoreError> {
        if block.trim().is_empty() {
            block.clear();
            return Ok(());
        }
        let graph = ResourceGraph::from_turtle(block).map_err(StoreError::Journal)?;
        graphs.push(graph);
        block.clear();
        Ok(())
    };
    // Every appended document starts with the same first prefix line; that
    // line is the block delimiter (documents contain internal blank lines,
    // so those cannot be used).
    for line in text.lines() {
        if line.starts_with("@prefix fhir:") {
            flush_block(&mut block, &mut graphs)?;
        }
        block.push_str(line);
        block.push('\n');
    }
    flush_block(&mut block, &mut graphs)?;
    Ok(graphs)
}

pub struct StoreStage {
    pub store: Arc<Store>,
    subscription: SubscriptionHandle,
    bus: Arc<Bus>,
}

impl StoreStage {
    pub fn stop(self) {
        self.bus.unsubscribe(&self.subscription);
    }
}

/// Subscribes the store to `STAGE.RDF`. The store publishes nothing;
/// queries poll it instead.
pub fn run_store(bus: Arc<Bus>, store: Arc<Store>) -> Result<StoreStage, StoreError> {
    let topic = Topic::new(topics::STAGE_RDF)?;
    let sink = store.clone();
    let subscription = bus.subscribe(ComponentRole::Store, &topic, move |msg| {
        if let Ok(text) = std::str::from_utf8(&msg.payload) {
            if let Ok(graph) = ResourceGraph::from_turtle(text) {
                sink.insert_graph(graph);
            }
        }
    })?;
    Ok(StoreStage {
        store,
        subscription,
        bus,
    })
}
