//! Downstream applications: condition detectors, the OMOP-CDM CSV
//! exporter, and text output sinks.

pub mod detect;
pub mod omop;
pub mod sink;

pub use detect::{
    detect_hypertension, detect_hypothermia, run_detectors, Condition, ConditionEvent, Detector,
    DetectorStage, Evidence, HypothermiaThresholds, DEFAULT_HYPERTENSION_THRESHOLD,
};
pub use omop::{concept_map, export_omop, ExportReport, OmopError};
pub use sink::{sink_to_text, SinkDestination, SinkError, SinkStage};
