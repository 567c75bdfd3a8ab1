//! The two-stage encoder: stage 1 ([`decode`]) parses wire formats into
//! domain records, stage 2 ([`encode`]) maps records into RDF graphs.
//!
//! For N source formats and M resource types the registry holds N + M
//! routines, not N x M: decoders only produce `DomainRecord`s and encoders
//! only consume them.

pub mod decode;
pub mod encode;

use std::sync::atomic::{AtomicI64, AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::bus::{topics, Bus, BusError, BusMessage, ComponentRole, ContentType, Topic};
use crate::clock::{SharedClock, Timestamp};

pub use decode::{decode_payload, DecodeError, InputFormat, REGISTERED_DECODERS};
pub use encode::{encode_record, record_from_graph, resource_shapes, REGISTERED_ENCODERS};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("bus unavailable: {0}")]
    BusUnavailable(#[from] BusError),
}

/// The N + M registry, inspected at startup and by the architecture check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderRegistry {
    pub decoders: Vec<&'static str>,
    pub encoders: Vec<&'static str>,
}

impl EncoderRegistry {
    pub fn current() -> Self {
        EncoderRegistry {
            decoders: REGISTERED_DECODERS.iter().map(|f| f.name()).collect(),
            encoders: REGISTERED_ENCODERS.to_vec(),
        }
    }

    pub fn routine_count(&self) -> usize {
        self.decoders.len() + self.encoders.len()
    }
}

/// Serialized source of ingest timestamps; values never decrease even when
/// handlers race.
struct IngestClock {
    clock: SharedClock,
    last_ms: AtomicI64,
}

impl IngestClock {
    fn next(&self) -> Timestamp {
        let now = self.clock.now().millis();
        let last = self.last_ms.fetch_max(now, Ordering::SeqCst).max(now);
        Timestamp(last)
    }
}

/// Counters for the run report.
#[derive(Debug, Default)]
pub struct EncoderStats {
    pub messages_in: AtomicU64,
    pub graphs_out: AtomicU64,
    pub dead_letters: AtomicU64,
}

pub struct EncoderStage {
    pub stats: Arc<EncoderStats>,
    subscriptions: Vec<crate::bus::SubscriptionHandle>,
    bus: Arc<Bus>,
}

impl EncoderStage {
    pub fn stop(self) {
        for sub in &self.subscriptions {
            self.bus.unsubscribe(sub);
        }
    }
}

fn handle_message(
    bus: &Bus,
    msg: &BusMessage,
    ingest: &IngestClock,
    stats: &EncoderStats,
    rdf_topic: &Topic,
    dlq_topic: &Topic,
) {
    stats.messages_in.fetch_add(1, Ordering::SeqCst);
    let format = msg
        .topic
        .name()
        .split('.')
        .nth(2)
        .ok_or_else(|| DecodeError::UnknownFormat(msg.topic.name().to_string()))
        .and_then(InputFormat::from_topic_segment);
    let records = format.and_then(|f| decode_payload(f, &msg.payload));
    match records {
        Ok(records) => {
            for rec in records {
                let graph = encode_record(&rec, ingest.next());
                let payload = graph.to_turtle().into_bytes();
                if bus
                    .publish(ComponentRole::Encoder, rdf_topic, payload, ContentType::RdfGraph)
                    .is_ok()
                {
                    stats.graphs_out.fetch_add(1, Ordering::SeqCst);
                }
            }
        }
        Err(_) => {
            // Fault isolation: the bad message goes to the dead-letter
            // topic with its original payload; the stage keeps running.
            stats.dead_letters.fetch_add(1, Ordering::SeqCst);
            let _ = bus.publish(
                ComponentRole::Encoder,
                dlq_topic,
                msg.payload.clone(),
                msg.content_type,
            );
        }
    }
}

/// Subscribes to all ingest topics; every decoded record is encoded and
/// published to `STAGE.RDF`, failures go to `STAGE.DLQ`.
pub fn run_encoder(bus: Arc<Bus>, clock: SharedClock) -> Result<EncoderStage, EncoderError> {
    let rdf_topic = Topic::new(topics::STAGE_RDF)?;
    let dlq_topic = Topic::new(topics::STAGE_DLQ)?;
    let stats = Arc::new(EncoderStats::default());
    let ingest = Arc::new(IngestClock {
        clock,
        last_ms: AtomicI64::new(i64::MIN),
    });

    let mut subscriptions = Vec::new();
    for name in [
        topics::PATIENT_PIPE,
        topics::ENCOUNTER_FHIRJSON,
        topics::OBSERVATION_HL7V2,
    ] {
        let topic = Topic::new(name)?;
        let bus_ref = bus.clone();
        let ingest = ingest.clone();
        let stats = stats.clone();
        let rdf_topic = rdf_topic.clone();
        let dlq_topic = dlq_topic.clone();
        subscriptions.push(bus.subscribe(ComponentRole::Encoder, &topic, move |msg| {
            handle_message(&bus_ref, msg, &ingest, &stats, &rdf_topic, &dlq_topic);
        })?);
    }
    Ok(EncoderStage {
        stats,
        subscriptions,
        bus,
    })
}
