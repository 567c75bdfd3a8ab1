//! Configuration loading and pipeline orchestration for the `semstream`
//! binary: wires bus, feed simulators, encoder, store, query stage,
//! detectors, and sinks into one runnable process.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use semstream::apps::{
    run_detectors, sink_to_text, Detector, HypothermiaThresholds, SinkDestination,
    DEFAULT_HYPERTENSION_THRESHOLD,
};
use semstream::bus::{topics, Bus, Topic};
use semstream::clock::{SharedClock, Timestamp, VirtualClock, WallClock};
use semstream::encoder::run_encoder;
use semstream::query::{run_query_stage, Filter, StreamingQuery};
use semstream::simgen::{run_feed, Condition, FeedPacing, ScenarioConfig};
use semstream::store::{run_store, Store};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config ({field}): {message}")]
    ConfigInvalid { field: String, message: String },
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(field: &str, message: impl std::fmt::Display) -> CliError {
        CliError::ConfigInvalid {
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    /// Exit code contract: 1 for configuration errors, 2 at runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<semstream::simgen::FeedError> for CliError {
    fn from(e: semstream::simgen::FeedError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub seed: u64,
    pub patients: u32,
    /// Observation messages per second per patient.
    pub rate: f64,
    pub condition: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub name: String,
    pub patterns: Vec<String>,
    #[serde(default)]
    pub filters: Vec<String>,
    pub select: Vec<String>,
    #[serde(default = "default_poll_interval")]
    pub poll_interval_s: f64,
}

fn default_poll_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    /// Name of the query whose results this detector consumes.
    pub query: String,
    pub kind: String,
    pub threshold: Option<f64>,
    pub temp_below: Option<f64>,
    pub systolic_below: Option<f64>,
    pub pulse_above: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkSection {
    pub topics: Vec<String>,
    /// `"console"` or a file path.
    pub destination: String,
}

/// The declarative pipeline config, one TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub query: Vec<QuerySection>,
    #[serde(default)]
    pub detector: Vec<DetectorSection>,
    #[serde(default)]
    pub sink: Vec<SinkSection>,
    #[serde(default)]
    pub clock: ClockMode,
    pub journal: Option<PathBuf>,
}

/// Flag overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub duration: Option<f64>,
    pub clock: Option<ClockMode>,
    pub journal: Option<PathBuf>,
}

/// Everything validated and converted to core types; building this is the
/// only path into `run`, so no stage ever starts on a bad config.
#[derive(Debug)]
pub struct ValidatedPipeline {
    pub scenario: ScenarioConfig,
    pub queries: Vec<StreamingQuery>,
    pub detectors: Vec<(String, Detector)>,
    pub sinks: Vec<(Vec<Topic>, SinkDestination)>,
    pub clock: ClockMode,
    pub journal: Option<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::config("config", e))
}

pub fn validate(config: &PipelineConfig, overrides: &Overrides) -> Result<ValidatedPipeline, CliError> {
    let condition_name = overrides
        .scenario
        .clone()
        .unwrap_or_else(|| config.scenario.condition.clone());
    let condition = Condition::parse(&condition_name)
        .ok_or_else(|| CliError::config("scenario.condition", format!("unknown `{condition_name}`")))?;
    let scenario = ScenarioConfig {
        seed: overrides.seed.unwrap_or(config.scenario.seed),
        patient_count: config.scenario.patients,
        rate_per_entity: config.scenario.rate,
        condition,
        duration_s: overrides.duration.unwrap_or(config.scenario.duration_s),
    };
    scenario
        .validate()
        .map_err(|e| CliError::config("scenario", e))?;

    let mut names = std::collections::BTreeSet::new();
    let mut queries = Vec::new();
    for q in &config.query {
        if !names.insert(q.name.clone()) {
            return Err(CliError::config(
                "query.name",
                format!("duplicate query name `{}`", q.name),
            ));
        }
        let field = format!("query.{}", q.name);
        let query = StreamingQuery {
            name: q.name.clone(),
            patterns: q
                .patterns
                .iter()
                .map(|p| semstream::rdf::pattern::parse_pattern(p))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::config(&format!("{field}.patterns"), e))?,
            filters: q
                .filters
                .iter()
                .map(|f| Filter::parse(f))
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::config(&format!("{field}.filters"), e))?,
            select: q.select.clone(),
            poll_interval_s: q.poll_interval_s,
        };
        query
            .validate()
            .map_err(|e| CliError::config(&field, e))?;
        // Result topics must follow the naming convention.
        Topic::new(&topics::results_topic(&query.name))
            .map_err(|e| CliError::config(&format!("{field}.name"), e))?;
        queries.push(query);
    }

    let mut detectors = Vec::new();
    for d in &config.detector {
        let field = format!("detector.{}", d.query);
        if !names.contains(&d.query) {
            return Err(CliError::config(
                &field,
                format!("references unknown query `{}`", d.query),
            ));
        }
        let detector = match d.kind.as_str() {
            "hypertension" => Detector::Hypertension {
                threshold: d.threshold.unwrap_or(DEFAULT_HYPERTENSION_THRESHOLD),
            },
            "hypothermia" => {
                let defaults = HypothermiaThresholds::default();
                Detector::Hypothermia {
                    thresholds: HypothermiaThresholds {
                        temp_below: d.temp_below.unwrap_or(defaults.temp_below),
                        systolic_below: d.systolic_below.unwrap_or(defaults.systolic_below),
                        pulse_above: d.pulse_above.unwrap_or(defaults.pulse_above),
                    },
                }
            }
            other => {
                return Err(CliError::config(
                    &format!("{field}.kind"),
                    format!("unknown detector kind `{other}`"),
                ))
            }
        };
        detectors.push((d.query.clone(), detector));
    }

    let mut sinks = Vec::new();
    for (i, s) in config.sink.iter().enumerate() {
        let field = format!("sink[{i}]");
        let sink_topics = s
            .topics
            .iter()
            .map(|t| Topic::new(t))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::config(&format!("{field}.topics"), e))?;
        let destination = match s.destination.as_str() {
            "console" => SinkDestination::Console,
            path => SinkDestination::File(PathBuf::from(path)),
        };
        sinks.push((sink_topics, destination));
    }

    Ok(ValidatedPipeline {
        scenario,
        queries,
        detectors,
        sinks,
        clock: overrides.clock.unwrap_or(config.clock),
        journal: overrides.journal.clone().or_else(|| config.journal.clone()),
    })
}

/// Per-run accounting, printed as JSON at the end of `run`.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunReport {
    pub input_messages: BTreeMap<String, u64>,
    pub encoder_messages_in: u64,
    pub encoder_graphs_out: u64,
    pub encoder_dead_letters: u64,
    pub store_graphs_in: u64,
    pub store_roots: u64,
    pub result_sets_published: u64,
    pub events_emitted: u64,
    /// Every `ConditionEvent` seen on `STAGE.EVENTS`, in arrival order.
    pub events: Vec<semstream::apps::ConditionEvent>,
}

impl RunReport {
    /// Conservation: every ingest message was either encoded or
    /// dead-lettered, and every emitted graph reached the store.
    pub fn conserved(&self) -> bool {
        let inputs: u64 = self.input_messages.values().sum();
        inputs == self.encoder_messages_in && self.encoder_graphs_out == self.store_graphs_in
    }
}

/// Runs the configured pipeline to completion and returns the report.
/// Virtual clock: simulated time, as fast as possible; wall clock: paced.
pub fn run(pipeline: &ValidatedPipeline) -> Result<RunReport, CliError> {
    let virtual_clock = Arc::new(VirtualClock::new(Timestamp(0)));
    let clock: SharedClock = match pipeline.clock {
        ClockMode::Virtual => virtual_clock.clone(),
        ClockMode::Wall => Arc::new(WallClock),
    };
    let bus = Bus::new(clock.clone());

    let store = match &pipeline.journal {
        Some(path) => Store::with_journal(path.clone())
            .map_err(|e| CliError::Runtime(e.to_string()))?,
        None => Store::new(),
    };

    // Stage startup order: store first, then encoder, query, detectors,
    // sinks; teardown is the reverse.
    let store_stage =
        run_store(bus.clone(), store.clone()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let encoder_stage =
        run_encoder(bus.clone(), clock.clone()).map_err(|e| CliError::Runtime(e.to_string()))?;
    let query_stage = run_query_stage(&pipeline.queries, bus.clone(), store.clone(), clock.clone())
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let detector_stage = run_detectors(bus.clone(), &pipeline.detectors)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let captured_events = Arc::new(std::sync::Mutex::new(Vec::new()));
    let events_sink = captured_events.clone();
    let events_topic =
        Topic::new(topics::STAGE_EVENTS).map_err(|e| CliError::Runtime(e.to_string()))?;
    let events_sub = bus
        .subscribe(
            semstream::bus::ComponentRole::Output,
            &events_topic,
            move |m| {
                if let Ok(event) = std::str::from_utf8(&m.payload)
                    .map_err(|e| e.to_string())
                    .and_then(|t| {
                        semstream::apps::ConditionEvent::from_json_line(t).map_err(|e| e.to_string())
                    })
                {
                    events_sink.lock().unwrap().push(event);
                }
            },
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut sink_stages = Vec::new();
    for (sink_topics, destination) in &pipeline.sinks {
        sink_stages.push(
            sink_to_text(bus.clone(), sink_topics, destination.clone())
                .map_err(|e| CliError::Runtime(e.to_string()))?,
        );
    }

    // Keep the feed strictly after the query watermark so the very first
    // messages fall inside the first poll window.
    if pipeline.clock == ClockMode::Virtual {
        virtual_clock.advance_millis(1);
    }

    let pacing = match pipeline.clock {
        ClockMode::Virtual => FeedPacing::Virtual(&virtual_clock),
        ClockMode::Wall => FeedPacing::Wall,
    };
    let summary = run_feed(&pipeline.scenario, &bus, pacing, |t| {
        query_stage.tick(t);
        bus.flush();
    })?;

    // Final drain: one closing poll past the last feed instant.
    bus.flush();
    if pipeline.clock == ClockMode::Virtual {
        virtual_clock.advance_millis(1);
    }
    query_stage.tick(clock.now());
    bus.flush();

    let report = RunReport {
        input_messages: summary.messages_sent.clone(),
        encoder_messages_in: encoder_stage.stats.messages_in.load(Ordering::SeqCst),
        encoder_graphs_out: encoder_stage.stats.graphs_out.load(Ordering::SeqCst),
        encoder_dead_letters: encoder_stage.stats.dead_letters.load(Ordering::SeqCst),
        store_graphs_in: store.graphs_in.load(Ordering::SeqCst),
        store_roots: store.snapshot().root_index.len() as u64,
        result_sets_published: query_stage.result_sets_published.load(Ordering::SeqCst),
        events_emitted: detector_stage.events_out.load(Ordering::SeqCst),
        events: captured_events.lock().unwrap().clone(),
    };

    for sink in sink_stages {
        sink.stop();
    }
    bus.unsubscribe(&events_sub);
    detector_stage.stop();
    encoder_stage.stop();
    store_stage.stop();
    bus.shutdown();
    Ok(report)
}

/// Loads a Turtle journal into a fresh in-memory store.
pub fn store_from_journal(path: &Path) -> Result<Arc<Store>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let store = Store::new();
    for graph in semstream::store::parse_journal(&text).map_err(|e| CliError::Runtime(e.to_string()))? {
        store.insert_graph(graph);
    }
    Ok(store)
}
