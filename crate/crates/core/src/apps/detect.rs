//! Condition detectors: pure predicates over one poll's result set, with
//! a bus stage that turns matching windows into `ConditionEvent`s on
//! `STAGE.EVENTS`.
//!
//! Detectors are windowed and stateless: each poll's rows are judged on
//! their own, matching the per-window query design upstream.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bus::{topics, Bus, BusError, ComponentRole, ContentType, SubscriptionHandle, Topic};
use crate::clock::Timestamp;
use crate::query::ResultSet;
use crate::rdf::Term;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    Hypertension,
    Hypothermia,
}

/// One reading supporting an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub code: String,
    pub value: f64,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionEvent {
    pub condition: Condition,
    pub patient_id: String,
    pub evidence: Vec<Evidence>,
    pub detected_at: Timestamp,
}

impl ConditionEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("events always serialize")
    }

    pub fn from_json_line(text: &str) -> Result<ConditionEvent, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub const DEFAULT_HYPERTENSION_THRESHOLD: f64 = 140.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothermiaThresholds {
    pub temp_below: f64,
    pub systolic_below: f64,
    pub pulse_above: f64,
}

impl Default for HypothermiaThresholds {
    fn default() -> Self {
        HypothermiaThresholds {
            temp_below: 35.0,
            systolic_below: 90.0,
            pulse_above: 100.0,
        }
    }
}

fn patient_label(term: &Term) -> String {
    match term {
        // Strip the subject IRI down to the resource id.
        Term::Iri(iri) => iri.rsplit('/').next().unwrap_or(iri).to_string(),
        Term::Blank(b) => b.clone(),
        Term::Literal { lexical, .. } => lexical.clone(),
    }
}

/// One event per distinct patient with at least one systolic reading
/// strictly over the threshold. Rows must bind `?patient` and `?value`.
pub fn detect_hypertension(
    results: &ResultSet,
    threshold: f64,
    detected_at: Timestamp,
) -> Vec<ConditionEvent> {
    let mut by_patient: std::collections::BTreeMap<String, Vec<Evidence>> = Default::default();
    for row in &results.rows {
        let (Some(patient), Some(value)) = (row.get("patient"), row.get("value")) else {
            continue;
        };
        let Some(value) = value.as_number() else {
            continue;
        };
        if value > threshold {
            by_patient
                .entry(patient_label(patient))
                .or_default()
                .push(Evidence {
                    code: crate::simgen::loinc::SYSTOLIC.0.to_string(),
                    value,
                    units: "mm[Hg]".to_string(),
                });
        }
    }
    by_patient
        .into_iter()
        .map(|(patient_id, evidence)| ConditionEvent {
            condition: Condition::Hypertension,
            patient_id,
            evidence,
            detected_at,
        })
        .collect()
}

/// Event when one patient shows, in the same window, temperature below,
/// systolic below, and pulse above their thresholds. Rows must bind
/// `?patient`, `?temp`, `?systolic`, `?pulse`.
pub fn detect_hypothermia(
    results: &ResultSet,
    thresholds: HypothermiaThresholds,
    detected_at: Timestamp,
) -> Vec<ConditionEvent> {
    let mut events: std::collections::BTreeMap<String, ConditionEvent> = Default::default();
    for row in &results.rows {
        let (Some(patient), Some(temp), Some(systolic), Some(pulse)) = (
            row.get("patient"),
            row.get("temp"),
            row.get("systolic"),
            row.get("pulse"),
        ) else {
            continue;
        };
        let (Some(temp), Some(systolic), Some(pulse)) =
            (temp.as_number(), systolic.as_number(), pulse.as_number())
        else {
            continue;
        };
        if temp < thresholds.temp_below
            && systolic < thresholds.systolic_below
            && pulse > thresholds.pulse_above
        {
            // First qualifying row per patient carries the evidence.
            events
                .entry(patient_label(patient))
                .or_insert_with(|| ConditionEvent {
                    condition: Condition::Hypothermia,
                    patient_id: patient_label(patient),
                    evidence: vec![
                        Evidence {
                            code: crate::simgen::loinc::BODY_TEMP.0.to_string(),
                            value: temp,
                            units: "Cel".to_string(),
                        },
                        Evidence {
                            code: crate::simgen::loinc::SYSTOLIC.0.to_string(),
                            value: systolic,
                            units: "mm[Hg]".to_string(),
                        },
                        Evidence {
                            code: crate::simgen::loinc::HEART_RATE.0.to_string(),
                            value: pulse,
                            units: "/min".to_string(),
                        },
                    ],
                    detected_at,
                });
        }
    }
    events.into_values().collect()
}

/// A detector bound to the result stream of one named query.
#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Hypertension { threshold: f64 },
    Hypothermia { thresholds: HypothermiaThresholds },
}

impl Detector {
    pub fn detect(&self, results: &ResultSet, detected_at: Timestamp) -> Vec<ConditionEvent> {
        match self {
            Detector::Hypertension { threshold } => {
                detect_hypertension(results, *threshold, detected_at)
            }
            Detector::Hypothermia { thresholds } => {
                detect_hypothermia(results, *thresholds, detected_at)
            }
        }
    }
}

pub struct DetectorStage {
    pub events_out: Arc<AtomicU64>,
    subscriptions: Vec<SubscriptionHandle>,
    bus: Arc<Bus>,
}

impl DetectorStage {
    pub fn stop(self) {
        for sub in &self.subscriptions {
            self.bus.unsubscribe(sub);
        }
    }
}

/// Subscribes each detector to its query's results topic; every event is
/// published as one JSON line on `STAGE.EVENTS`.
pub fn run_detectors(
    bus: Arc<Bus>,
    bindings: &[(String, Detector)],
) -> Result<DetectorStage, BusError> {
    let events_topic = Topic::new(topics::STAGE_EVENTS)?;
    let events_out = Arc::new(AtomicU64::new(0));
    let mut subscriptions = Vec::new();
    for (query_name, detector) in bindings {
        let topic = Topic::new(&topics::results_topic(query_name))?;
        let detector = detector.clone();
        let bus_ref = bus.clone();
        let events_topic = events_topic.clone();
        let events_out = events_out.clone();
        subscriptions.push(bus.subscribe(ComponentRole::Application, &topic, move |msg| {
            let Ok(text) = std::str::from_utf8(&msg.payload) else {
                return;
            };
            let Ok(results) = ResultSet::from_json(text) else {
                return;
            };
            let detected_at = results.window.map(|w| w.1).unwrap_or(msg.enqueued_at);
            for event in detector.detect(&results, detected_at) {
                if bus_ref
                    .publish(
                        ComponentRole::Application,
                        &events_topic,
                        event.to_json_line().into_bytes(),
                        ContentType::Domain,
                    )
                    .is_ok()
                {
                    events_out.fetch_add(1, Ordering::SeqCst);
                }
            }
        })?);
    }
    Ok(DetectorStage {
        events_out,
        subscriptions,
        bus,
    })
}
