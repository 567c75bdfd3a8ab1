//! Minimal FHIR-style domain model: Patient, Encounter, Observation,
//! message envelope, and JSON bundle parsing/serialization.
//!
//! These records are also the common internal representation between the
//! encoder's two stages, so every ingest format funnels into them.

use chrono::{DateTime, FixedOffset, NaiveDate};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::clock::Timestamp;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FhirError {
    #[error("document is not a FHIR Bundle of type `message`")]
    NotABundle,
    #[error("bundle has no MessageHeader first entry")]
    MissingMessageHeader,
    #[error("malformed {resource_type} resource: {reason}")]
    MalformedResource {
        resource_type: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sex {
    Female,
    Male,
    Other,
    Unknown,
}

impl Sex {
    pub fn parse(s: &str) -> Sex {
        match s {
            "F" | "female" => Sex::Female,
            "M" | "male" => Sex::Male,
            "O" | "other" => Sex::Other,
            _ => Sex::Unknown,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Sex::Female => "F",
            Sex::Male => "M",
            Sex::Other => "O",
            Sex::Unknown => "U",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub family: String,
    pub given: String,
    pub middle: Option<String>,
    pub dob: NaiveDate,
    pub sex: Sex,
    pub street: Option<String>,
    pub city: Option<String>,
    pub state: Option<String>,
    pub zip: Option<String>,
    pub phone: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EncounterClass {
    Ambulatory,
    Emergency,
    Inpatient,
}

impl EncounterClass {
    pub fn code(self) -> &'static str {
        match self {
            EncounterClass::Ambulatory => "AMB",
            EncounterClass::Emergency => "EMER",
            EncounterClass::Inpatient => "IMP",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "AMB" => Some(EncounterClass::Ambulatory),
            "EMER" => Some(EncounterClass::Emergency),
            "IMP" => Some(EncounterClass::Inpatient),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EncounterStatus {
    Planned,
    InProgress,
    Finished,
}

impl EncounterStatus {
    pub fn code(self) -> &'static str {
        match self {
            EncounterStatus::Planned => "planned",
            EncounterStatus::InProgress => "in-progress",
            EncounterStatus::Finished => "finished",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "planned" => Some(EncounterStatus::Planned),
            "in-progress" => Some(EncounterStatus::InProgress),
            "finished" => Some(EncounterStatus::Finished),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncounterRecord {
    pub id: String,
    pub patient_id: String,
    pub class: EncounterClass,
    pub start: Timestamp,
    pub end: Option<Timestamp>,
    pub status: EncounterStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationCode {
    pub system: String,
    pub code: String,
    pub display: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbnormalFlag {
    High,
    Low,
    Normal,
}

impl AbnormalFlag {
    pub fn code(self) -> &'static str {
        match self {
            AbnormalFlag::High => "H",
            AbnormalFlag::Low => "L",
            AbnormalFlag::Normal => "N",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "H" => Some(AbnormalFlag::High),
            "L" => Some(AbnormalFlag::Low),
            "N" => Some(AbnormalFlag::Normal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub id: String,
    pub patient_id: String,
    pub encounter_id: Option<String>,
    pub code: ObservationCode,
    pub value: f64,
    pub units: String,
    pub reference_range: Option<String>,
    pub abnormal_flag: Option<AbnormalFlag>,
    pub effective_at: Timestamp,
    pub performer: Option<String>,
}

/// One resource of any of the three supported types; the boundary value
/// between the encoder's parse stage and its RDF stage.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainRecord {
    Patient(PatientRecord),
    Encounter(EncounterRecord),
    Observation(ObservationRecord),
}

impl DomainRecord {
    pub fn resource_type(&self) -> &'static str {
        match self {
            DomainRecord::Patient(_) => "Patient",
            DomainRecord::Encounter(_) => "Encounter",
            DomainRecord::Observation(_) => "Observation",
        }
    }

    pub fn id(&self) -> &str {
        match self {
            DomainRecord::Patient(p) => &p.id,
            DomainRecord::Encounter(e) => &e.id,
            DomainRecord::Observation(o) => &o.id,
        }
    }
}

/// MessageHeader content of a message bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub control_id: String,
    pub event_code: String,
    pub source_name: String,
    pub source_endpoint: String,
    pub destination_name: String,
    pub sent_at: DateTime<FixedOffset>,
    pub data_reference: String,
}

fn str_at<'a>(v: &'a Value, path: &[&str]) -> Option<&'a str> {
    let mut cur = v;
    for p in path {
        cur = cur.get(p)?;
    }
    cur.as_str()
}

fn reference_id(v: &Value, path: &[&str]) -> Option<String> {
    str_at(v, &[path, &["reference"]].concat())
        .map(|r| r.rsplit('/').next().unwrap_or(r).to_string())
}

fn malformed(resource_type: &str, reason: &str) -> FhirError {
    FhirError::MalformedResource {
        resource_type: resource_type.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_patient(resource: &Value) -> Result<PatientRecord, FhirError> {
    let id = str_at(resource, &["id"]).ok_or_else(|| malformed("Patient", "missing id"))?;
    let name = resource
        .get("name")
        .and_then(|n| n.get(0))
        .ok_or_else(|| malformed("Patient", "missing name"))?;
    let given = name.get("given").and_then(Value::as_array);
    let addr = resource.get("address").and_then(|a| a.get(0));
    let dob = str_at(resource, &["birthDate"])
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
        .ok_or_else(|| malformed("Patient", "missing or invalid birthDate"))?;
    Ok(PatientRecord {
        id: id.to_string(),
        family: str_at(name, &["family"]).unwrap_or("").to_string(),
        given: given
            .and_then(|g| g.first())
            .and_then(Value::as_str)
            .unwrap_or("")
            .to_string(),
        middle: given
            .and_then(|g| g.get(1))
            .and_then(Value::as_str)
            .map(String::from),
        dob,
        sex: Sex::parse(str_at(resource, &["gender"]).unwrap_or("")),
        street: addr
            .and_then(|a| a.get("line"))
            .and_then(|l| l.get(0))
            .and_then(Value::as_str)
            .map(String::from),
        city: addr.and_then(|a| str_at(a, &["city"])).map(String::from),
        state: addr.and_then(|a| str_at(a, &["state"])).map(String::from),
        zip: addr
            .and_then(|a| str_at(a, &["postalCode"]))
            .map(String::from),
        phone: resource
            .get("telecom")
            .and_then(|t| t.get(0))
            .and_then(|t| str_at(t, &["value"]))
            .map(String::from),
    })
}

fn parse_encounter(resource: &Value) -> Result<EncounterRecord, FhirError> {
    let id = str_at(resource, &["id"]).ok_or_else(|| malformed("Encounter", "missing id"))?;
    let patient_id = reference_id(resource, &["subject"])
        .ok_or_else(|| malformed("Encounter", "missing subject reference"))?;
    let class = str_at(resource, &["class", "code"])
        .and_then(EncounterClass::parse)
        .ok_or_else(|| malformed("Encounter", "missing or unknown class"))?;
    let status = str_at(resource, &["status"])
        .and_then(EncounterStatus::parse)
        .ok_or_else(|| malformed("Encounter", "missing or unknown status"))?;
    let start = str_at(resource, &["period", "start"])
        .and_then(Timestamp::parse_rfc3339)
        .ok_or_else(|| malformed("Encounter", "missing period.start"))?;
    let end = str_at(resource, &["period", "end"]).and_then(Timestamp::parse_rfc3339);
    if let Some(e) = end {
        if e < start {
            return Err(malformed("Encounter", "period.end before period.start"));
        }
    }
    Ok(EncounterRecord {
        id: id.to_string(),
        patient_id,
        class,
        start,
        end,
        status,
    })
}

fn parse_observation(resource: &Value) -> Result<ObservationRecord, FhirError> {
    let id = str_at(resource, &["id"]).ok_or_else(|| malformed("Observation", "missing id"))?;
    let patient_id = reference_id(resource, &["subject"])
        .ok_or_else(|| malformed("Observation", "missing subject reference"))?;
    let coding = resource
        .get("code")
        .and_then(|c| c.get("coding"))
        .and_then(|c| c.get(0))
        .ok_or_else(|| malformed("Observation", "missing code.coding"))?;
    let value = resource
        .get("valueQuantity")
        .and_then(|v| v.get("value"))
        .and_then(Value::as_f64)
        .ok_or_else(|| malformed("Observation", "missing valueQuantity.value"))?;
    Ok(ObservationRecord {
        id: id.to_string(),
        patient_id,
        encounter_id: reference_id(resource, &["encounter"]),
        code: ObservationCode {
            system: str_at(coding, &["system"]).unwrap_or("").to_string(),
            code: str_at(coding, &["code"])
                .filter(|c| !c.is_empty())
                .ok_or_else(|| malformed("Observation", "missing code.coding.code"))?
                .to_string(),
            display: str_at(coding, &["display"]).unwrap_or("").to_string(),
        },
        value,
        units: str_at(resource, &["valueQuantity", "unit"])
            .unwrap_or("")
            .to_string(),
        reference_range: resource
            .get("referenceRange")
            .and_then(|r| r.get(0))
            .and_then(|r| str_at(r, &["text"]))
            .map(String::from),
        abnormal_flag: str_at(resource, &["interpretation", "code"]).and_then(AbnormalFlag::parse),
        effective_at: str_at(resource, &["effectiveDateTime"])
            .and_then(Timestamp::parse_rfc3339)
            .ok_or_else(|| malformed("Observation", "missing effectiveDateTime"))?,
        performer: resource
            .get("performer")
            .and_then(|p| p.get(0))
            .and_then(|p| str_at(p, &["display"]))
            .map(String::from),
    })
}

fn parse_envelope(header: &Value) -> Result<MessageEnvelope, FhirError> {
    let m = |reason: &str| malformed("MessageHeader", reason);
    Ok(MessageEnvelope {
        control_id: str_at(header, &["id"]).ok_or_else(|| m("missing id"))?.to_string(),
        event_code: str_at(header, &["event", "code"])
            .ok_or_else(|| m("missing event.code"))?
            .to_string(),
        source_name: str_at(header, &["source", "name"]).unwrap_or("").to_string(),
        source_endpoint: str_at(header, &["source", "endpoint"]).unwrap_or("").to_string(),
        destination_name: str_at(header, &["destination", "name"])
            .unwrap_or("")
            .to_string(),
        sent_at: str_at(header, &["timestamp"])
            .and_then(|t| DateTime::parse_from_rfc3339(t).ok())
            .ok_or_else(|| m("missing or invalid timestamp"))?,
        data_reference: str_at(header, &["data", "reference"]).unwrap_or("").to_string(),
    })
}

/// Outcome of bundle parsing: the envelope, the recognized resources, and
/// how many entries carried a resource type this engine does not handle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBundle {
    pub envelope: MessageEnvelope,
    pub records: Vec<DomainRecord>,
    pub skipped_unknown: usize,
}

pub fn parse_bundle_json(text: &str) -> Result<ParsedBundle, FhirError> {
    let doc: Value = serde_json::from_str(text).map_err(|_| FhirError::NotABundle)?;
    if str_at(&doc, &["resourceType"]) != Some("Bundle")
        || str_at(&doc, &["type"]) != Some("message")
    {
        return Err(FhirError::NotABundle);
    }
    let entries = doc
        .get("entry")
        .and_then(Value::as_array)
        .ok_or(FhirError::MissingMessageHeader)?;
    let header = entries
        .first()
        .and_then(|e| e.get("resource"))
        .filter(|r| str_at(r, &["resourceType"]) == Some("MessageHeader"))
        .ok_or(FhirError::MissingMessageHeader)?;
    let envelope = parse_envelope(header)?;

    let mut records = Vec::new();
    let mut skipped_unknown = 0;
    for entry in &entries[1..] {
        let resource = match entry.get("resource") {
            Some(r) => r,
            None => {
                skipped_unknown += 1;
                continue;
            }
        };
        match str_at(resource, &["resourceType"]) {
            Some("Patient") => records.push(DomainRecord::Patient(parse_patient(resource)?)),
            Some("Encounter") => records.push(DomainRecord::Encounter(parse_encounter(resource)?)),
            Some("Observation") => {
                records.push(DomainRecord::Observation(parse_observation(resource)?))
            }
            _ => skipped_unknown += 1,
        }
    }
    Ok(ParsedBundle {
        envelope,
        records,
        skipped_unknown,
    })
}

fn envelope_json(envelope: &MessageEnvelope) -> Value {
    json!({
        "resourceType": "MessageHeader",
        "id": envelope.control_id,
        "timestamp": envelope.sent_at.to_rfc3339(),
        "event": {
            "system": "http://hl7.org/fhir/message-type",
            "code": envelope.event_code,
        },
        "source": { "name": envelope.source_name, "endpoint": envelope.source_endpoint },
        "destination": { "name": envelope.destination_name },
        "data": { "reference": envelope.data_reference },
    })
}

fn encounter_json(rec: &EncounterRecord) -> Value {
    let mut period = Map::new();
    period.insert("start".into(), json!(rec.start.to_rfc3339()));
    if let Some(end) = rec.end {
        period.insert("end".into(), json!(end.to_rfc3339()));
    }
    json!({
        "resourceType": "Encounter",
        "id": rec.id,
        "status": rec.status.code(),
        "class": { "code": rec.class.code() },
        "subject": { "reference": format!("Patient/{}", rec.patient_id) },
        "period": period,
    })
}

/// Renders a message bundle (MessageHeader + Encounter) that
/// `parse_bundle_json` inverts exactly.
pub fn serialize_encounter_json(rec: &EncounterRecord, envelope: &MessageEnvelope) -> String {
    let bundle = json!({
        "resourceType": "Bundle",
        "type": "message",
        "entry": [
            { "resource": envelope_json(envelope) },
            { "resource": encounter_json(rec) },
        ],
    });
    serde_json::to_string_pretty(&bundle).unwrap()
}
