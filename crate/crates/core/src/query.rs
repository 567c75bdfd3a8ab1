//! Streaming query engine: basic graph patterns plus numeric filters,
//! evaluated against windowed store snapshots.
//!
//! Each query polls with a watermark cursor over the half-open ingest-time
//! window `(watermark, now]`, so every graph contributes to exactly one
//! poll and result sizes stay proportional to new arrivals instead of the
//! whole store.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{topics, Bus, BusError, ComponentRole, ContentType, Topic};
use crate::clock::{SharedClock, Timestamp};
use crate::rdf::pattern::{parse_pattern, Bindings, PatternParseError, TriplePattern};
use crate::store::{Store, StoreError, StoreSnapshot, Window};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("query `{0}` has no patterns")]
    NoPatterns(String),
    #[error("query `{query}`: variable `{variable}` is not bound by any pattern")]
    UnboundVariable { query: String, variable: String },
    #[error("query `{query}`: poll interval must be positive")]
    NonPositiveInterval { query: String },
    #[error("duplicate query name `{0}`")]
    DuplicateQueryName(String),
    #[error("cursor for `{cursor}` used with query `{query}`")]
    CursorMismatch { cursor: String, query: String },
    #[error("clock regression: now {now:?} before watermark {watermark:?}")]
    ClockRegression { now: Timestamp, watermark: Timestamp },
    #[error(transparent)]
    Pattern(#[from] PatternParseError),
    #[error("bad filter expression `{0}`")]
    BadFilter(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("bus unavailable: {0}")]
    BusUnavailable(#[from] BusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
}

impl Comparator {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "<" => Some(Comparator::Lt),
            "<=" => Some(Comparator::Le),
            "=" => Some(Comparator::Eq),
            ">=" => Some(Comparator::Ge),
            ">" => Some(Comparator::Gt),
            _ => None,
        }
    }

    pub fn holds(self, left: f64, right: f64) -> bool {
        match self {
            Comparator::Lt => left < right,
            Comparator::Le => left <= right,
            Comparator::Eq => left == right,
            Comparator::Ge => left >= right,
            Comparator::Gt => left > right,
        }
    }
}

/// Numeric restriction on one bound variable, e.g. `?v > 120`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub variable: String,
    pub comparator: Comparator,
    pub constant: f64,
}

impl Filter {
    /// Parses `?var OP constant`.
    pub fn parse(text: &str) -> Result<Filter, QueryError> {
        let bad = || QueryError::BadFilter(text.to_string());
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let [var, op, constant] = tokens.as_slice() else {
            return Err(bad());
        };
        let variable = var.strip_prefix('?').ok_or_else(bad)?;
        if variable.is_empty() {
            return Err(bad());
        }
        Ok(Filter {
            variable: variable.to_string(),
            comparator: Comparator::parse(op).ok_or_else(bad)?,
            constant: constant.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamingQuery {
    pub name: String,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
    pub select: Vec<String>,
    pub poll_interval_s: f64,
}

impl StreamingQuery {
    /// Builds and validates a query from pattern/filter text lines.
    pub fn parse(
        name: &str,
        patterns: &[&str],
        filters: &[&str],
        select: &[&str],
        poll_interval_s: f64,
    ) -> Result<StreamingQuery, QueryError> {
        let query = StreamingQuery {
            name: name.to_string(),
            patterns: patterns
                .iter()
                .map(|p| parse_pattern(p))
                .collect::<Result<_, _>>()?,
            filters: filters
                .iter()
                .map(|f| Filter::parse(f))
                .collect::<Result<_, _>>()?,
            select: select.iter().map(|s| s.to_string()).collect(),
            poll_interval_s,
        };
        query.validate()?;
        Ok(query)
    }

    /// Every filter and select variable must occur in some pattern, and
    /// there must be at least one pattern.
    pub fn validate(&self) -> Result<(), QueryError> {
        if self.patterns.is_empty() {
            return Err(QueryError::NoPatterns(self.name.clone()));
        }
        if self.poll_interval_s <= 0.0 {
            return Err(QueryError::NonPositiveInterval {
                query: self.name.clone(),
            });
        }
        let bound: BTreeSet<&str> = self.patterns.iter().flat_map(|p| p.variables()).collect();
        for v in self
            .filters
            .iter()
            .map(|f| f.variable.as_str())
            .chain(self.select.iter().map(String::as_str))
        {
            if !bound.contains(v) {
                return Err(QueryError::UnboundVariable {
                    query: self.name.clone(),
                    variable: v.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Watermark of the last successful poll for one query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PollCursor {
    pub query: String,
    pub last_high_watermark: Timestamp,
}

impl PollCursor {
    pub fn new(query: &str, start: Timestamp) -> Self {
        PollCursor {
            query: query.to_string(),
            last_high_watermark: start,
        }
    }
}

pub type Row = Bindings;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub query: String,
    /// `(low, high]` ingest window the rows came from; `None` for an
    /// unwindowed evaluate.
    pub window: Option<(Timestamp, Timestamp)>,
    pub rows: BTreeSet<Row>,
    /// Rows dropped because a filter variable bound a non-numeric literal.
    pub type_mismatches: u64,
}

impl ResultSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("result sets always serialize")
    }

    pub fn from_json(text: &str) -> Result<ResultSet, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Left-to-right join of the patterns over window-restricted triples,
/// then filters, then projection onto the select variables.
pub fn evaluate(query: &StreamingQuery, snapshot: &StoreSnapshot, window: Option<Window>) -> ResultSet {
    let triples: Vec<_> = snapshot.window_triples(window).into_iter().collect();
    let mut partial = vec![Bindings::new()];
    for pattern in &query.patterns {
        let mut next = Vec::new();
        for bindings in &partial {
            for triple in &triples {
                if let Some(extended) = pattern.match_triple(triple, bindings) {
                    next.push(extended);
                }
            }
        }
        partial = next;
        if partial.is_empty() {
            break;
        }
    }

    let mut rows = BTreeSet::new();
    let mut type_mismatches = 0;
    'rows: for bindings in partial {
        for filter in &query.filters {
            let term = &bindings[filter.variable.as_str()];
            let Some(value) = term.as_number() else {
                type_mismatches += 1;
                continue 'rows;
            };
            if !filter.comparator.holds(value, filter.constant) {
                continue 'rows;
            }
        }
        let row: Row = query
            .select
            .iter()
            .map(|v| (v.clone(), bindings[v.as_str()].clone()))
            .collect();
        rows.insert(row);
    }
    ResultSet {
        query: query.name.clone(),
        window: window.map(|w| (w.low, w.high)),
        rows,
        type_mismatches,
    }
}

/// One streaming poll: evaluates over `(watermark, now]` and advances the
/// watermark to `now`. `now` at or before the watermark is a clock
/// regression (or an idle instant); the cursor is left unchanged.
pub fn poll(
    query: &StreamingQuery,
    cursor: &PollCursor,
    store: &Store,
    now: Timestamp,
) -> Result<(ResultSet, PollCursor), QueryError> {
    if cursor.query != query.name {
        return Err(QueryError::CursorMismatch {
            cursor: cursor.query.clone(),
            query: query.name.clone(),
        });
    }
    if now < cursor.last_high_watermark {
        return Err(QueryError::ClockRegression {
            now,
            watermark: cursor.last_high_watermark,
        });
    }
    if now == cursor.last_high_watermark {
        // Empty window; nothing can have arrived.
        return Ok((
            ResultSet {
                query: query.name.clone(),
                window: Some((now, now)),
                rows: BTreeSet::new(),
                type_mismatches: 0,
            },
            cursor.clone(),
        ));
    }
    let window = Window::new(cursor.last_high_watermark, now)?;
    let results = evaluate(query, &store.snapshot(), Some(window));
    Ok((results, PollCursor::new(&query.name, now)))
}

struct QueryRunner {
    query: StreamingQuery,
    cursor: PollCursor,
    next_poll_at: Timestamp,
    topic: Topic,
}

/// Holds the per-query cursors and publishes non-empty result sets.
/// Driven by [`QueryStage::tick`], which the orchestrator calls as the
/// clock advances (virtual or wall).
pub struct QueryStage {
    runners: Mutex<Vec<QueryRunner>>,
    store: Arc<Store>,
    bus: Arc<Bus>,
    pub result_sets_published: std::sync::atomic::AtomicU64,
}

impl QueryStage {
    /// Polls every query whose interval has elapsed at `now`.
    pub fn tick(&self, now: Timestamp) {
        let mut runners = self.runners.lock().unwrap();
        for runner in runners.iter_mut() {
            if now < runner.next_poll_at {
                continue;
            }
            let Ok((results, cursor)) = poll(&runner.query, &runner.cursor, &self.store, now)
            else {
                continue; // regression: skip, keep the cursor
            };
            runner.cursor = cursor;
            let interval_ms = (runner.query.poll_interval_s * 1000.0).round() as i64;
            runner.next_poll_at = Timestamp(now.millis() + interval_ms);
            if results.rows.is_empty() {
                continue;
            }
            if self
                .bus
                .publish(
                    ComponentRole::Query,
                    &runner.topic,
                    results.to_json().into_bytes(),
                    ContentType::Domain,
                )
                .is_ok()
            {
                self.result_sets_published
                    .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            }
        }
    }
}

/// Registers the queries with watermarks starting at the current clock
/// reading. Non-empty result sets go to `STAGE.RESULTS.<NAME>`.
pub fn run_query_stage(
    queries: &[StreamingQuery],
    bus: Arc<Bus>,
    store: Arc<Store>,
    clock: SharedClock,
) -> Result<Arc<QueryStage>, QueryError> {
    let mut seen = BTreeSet::new();
    let mut runners = Vec::new();
    let start = clock.now();
    for query in queries {
        query.validate()?;
        if !seen.insert(query.name.clone()) {
            return Err(QueryError::DuplicateQueryName(query.name.clone()));
        }
        runners.push(QueryRunner {
            cursor: PollCursor::new(&query.name, start),
            next_poll_at: start,
            topic: Topic::new(&topics::results_topic(&query.name))?,
            query: query.clone(),
        });
    }
    Ok(Arc::new(QueryStage {
        runners: Mutex::new(runners),
        store,
        bus,
        result_sets_published: std::sync::atomic::AtomicU64::new(0),
    }))
}
