//! Streaming semantic enrichment engine for healthcare data.
//!
//! Wire-format messages (pipe-delimited, FHIR JSON bundles, HL7v2) flow
//! over an in-process pub/sub bus into a two-stage encoder that emits RDF
//! resource graphs, which a timestamp-indexed store persists. Streaming
//! queries poll the store over ingest-time windows, and applications react
//! to result sets with condition detection, OMOP export, and text sinks.

pub mod apps;
pub mod bus;
pub mod clock;
pub mod encoder;
pub mod fhir;
pub mod hl7v2;
pub mod pipe;
pub mod query;
pub mod rdf;
pub mod simgen;
pub mod store;

pub use clock::{Clock, SharedClock, Timestamp, VirtualClock, WallClock};
