//! Encoder stage 1: parse each ingest wire format into common domain
//! records. This is the only place format knowledge lives; stage 2 sees
//! nothing but `DomainRecord` values.

use thiserror::Error;

use crate::fhir::{parse_bundle_json, DomainRecord, FhirError};
use crate::hl7v2::{extract_observations, parse_message, Hl7Error};
use crate::pipe::{parse_patient_line, PipeError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("unknown input format `{0}`")]
    UnknownFormat(String),
    #[error(transparent)]
    Pipe(#[from] PipeError),
    #[error(transparent)]
    Fhir(#[from] FhirError),
    #[error(transparent)]
    Hl7(#[from] Hl7Error),
    #[error("payload is not valid UTF-8")]
    NotUtf8,
}

/// The `FORMAT` segment of an ingest topic name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Pipe,
    FhirJson,
    Hl7v2,
}

impl InputFormat {
    pub fn from_topic_segment(segment: &str) -> Result<Self, DecodeError> {
        match segment {
            "PIPE" => Ok(InputFormat::Pipe),
            "FHIRJSON" => Ok(InputFormat::FhirJson),
            "HL7V2" => Ok(InputFormat::Hl7v2),
            other => Err(DecodeError::UnknownFormat(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputFormat::Pipe => "PIPE",
            InputFormat::FhirJson => "FHIRJSON",
            InputFormat::Hl7v2 => "HL7V2",
        }
    }
}

pub const REGISTERED_DECODERS: &[InputFormat] =
    &[InputFormat::Pipe, InputFormat::FhirJson, InputFormat::Hl7v2];

/// One wire message in, zero or more domain records out. A single HL7
/// observation message yields the embedded patient plus one record per OBX.
pub fn decode_payload(format: InputFormat, payload: &[u8]) -> Result<Vec<DomainRecord>, DecodeError> {
    let text = std::str::from_utf8(payload).map_err(|_| DecodeError::NotUtf8)?;
    match format {
        InputFormat::Pipe => Ok(vec![DomainRecord::Patient(parse_patient_line(text)?)]),
        InputFormat::FhirJson => Ok(parse_bundle_json(text)?.records),
        InputFormat::Hl7v2 => {
            let msg = parse_message(text)?;
            let (patient, observations) = extract_observations(&msg)?;
            let mut records = vec![DomainRecord::Patient(patient)];
            records.extend(observations.into_iter().map(DomainRecord::Observation));
            Ok(records)
        }
    }
}
