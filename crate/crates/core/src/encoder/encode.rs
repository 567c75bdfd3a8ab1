//! Encoder stage 2: map domain records to FHIR-style RDF graphs.
//!
//! This module's only input type is `DomainRecord`; it has no knowledge of
//! any wire format. Predicate IRIs use FHIR's dotted-path convention under
//! `http://hl7.org/fhir/`, subjects use `urn:fhir:<ResourceType>/<id>`.
//! Every graph carries exactly one `rdf:type` and one `sem:ingestedAt`
//! triple; absent optional fields produce no triple.

use std::collections::BTreeSet;

use chrono::NaiveDate;

use crate::clock::Timestamp;
use crate::fhir::{
    AbnormalFlag, DomainRecord, EncounterClass, EncounterRecord, EncounterStatus, ObservationCode,
    ObservationRecord, PatientRecord, Sex,
};
use crate::rdf::{Datatype, ResourceGraph, Term, Triple, FHIR_NS, RDF_TYPE, SEM_INGESTED_AT};

pub const REGISTERED_ENCODERS: &[&str] = &["Patient", "Encounter", "Observation"];

pub fn subject_iri(resource_type: &str, id: &str) -> String {
    format!("urn:fhir:{resource_type}/{id}")
}

fn predicate(path: &str) -> String {
    format!("{FHIR_NS}{path}")
}

struct GraphBuilder {
    root: Term,
    triples: BTreeSet<Triple>,
}

impl GraphBuilder {
    fn new(resource_type: &str, id: &str, ingested_at: Timestamp) -> Self {
        let root = Term::iri(&subject_iri(resource_type, id));
        let mut triples = BTreeSet::new();
        triples.insert(Triple::new(
            root.clone(),
            RDF_TYPE,
            Term::iri(&format!("{FHIR_NS}{resource_type}")),
        ));
        triples.insert(Triple::new(
            root.clone(),
            SEM_INGESTED_AT,
            Term::date_time(ingested_at),
        ));
        GraphBuilder { root, triples }
    }

    fn string(&mut self, path: &str, value: &str) {
        if !value.is_empty() {
            self.triples.insert(Triple::new(
                self.root.clone(),
                &predicate(path),
                Term::string(value),
            ));
        }
    }

    fn opt_string(&mut self, path: &str, value: &Option<String>) {
        if let Some(v) = value {
            self.string(path, v);
        }
    }

    fn term(&mut self, path: &str, value: Term) {
        self.triples
            .insert(Triple::new(self.root.clone(), &predicate(path), value));
    }

    fn finish(self, ingested_at: Timestamp) -> ResourceGraph {
        let root = match self.root {
            Term::Iri(iri) => iri,
            _ => unreachable!(),
        };
        ResourceGraph {
            root,
            triples: self.triples,
            ingested_at,
        }
    }
}

fn encode_patient(rec: &PatientRecord, ingested_at: Timestamp) -> ResourceGraph {
    let mut g = GraphBuilder::new("Patient", &rec.id, ingested_at);
    g.string("Patient.identifier", &rec.id);
    g.string("Patient.name.family", &rec.family);
    g.string("Patient.name.given", &rec.given);
    g.opt_string("Patient.name.middle", &rec.middle);
    g.term("Patient.birthDate", Term::date(rec.dob));
    g.string("Patient.gender", rec.sex.code());
    g.opt_string("Patient.address.line", &rec.street);
    g.opt_string("Patient.address.city", &rec.city);
    g.opt_string("Patient.address.state", &rec.state);
    g.opt_string("Patient.address.postalCode", &rec.zip);
    g.opt_string("Patient.telecom.value", &rec.phone);
    g.finish(ingested_at)
}

fn encode_encounter(rec: &EncounterRecord, ingested_at: Timestamp) -> ResourceGraph {
    let mut g = GraphBuilder::new("Encounter", &rec.id, ingested_at);
    g.string("Encounter.identifier", &rec.id);
    g.term(
        "Encounter.subject",
        Term::iri(&subject_iri("Patient", &rec.patient_id)),
    );
    g.string("Encounter.class", rec.class.code());
    g.string("Encounter.status", rec.status.code());
    g.term("Encounter.period.start", Term::date_time(rec.start));
    if let Some(end) = rec.end {
        g.term("Encounter.period.end", Term::date_time(end));
    }
    g.finish(ingested_at)
}

fn encode_observation(rec: &ObservationRecord, ingested_at: Timestamp) -> ResourceGraph {
    let mut g = GraphBuilder::new("Observation", &rec.id, ingested_at);
    g.string("Observation.identifier", &rec.id);
    g.term(
        "Observation.subject",
        Term::iri(&subject_iri("Patient", &rec.patient_id)),
    );
    if let Some(enc) = &rec.encounter_id {
        g.term("Observation.encounter", Term::iri(&subject_iri("Encounter", enc)));
    }
    g.string("Observation.code.coding.system", &rec.code.system);
    g.string("Observation.code.coding.code", &rec.code.code);
    g.string("Observation.code.coding.display", &rec.code.display);
    g.term("Observation.valueQuantity.value", Term::decimal(rec.value));
    g.string("Observation.valueQuantity.unit", &rec.units);
    g.opt_string("Observation.referenceRange", &rec.reference_range);
    if let Some(flag) = rec.abnormal_flag {
        g.string("Observation.interpretation", flag.code());
    }
    g.term("Observation.effectiveDateTime", Term::date_time(rec.effective_at));
    g.opt_string("Observation.performer", &rec.performer);
    g.finish(ingested_at)
}

/// Applies the mapping table for the record's type. Deterministic and
/// blank-node free: the same record and clock value always give the same
/// graph.
pub fn encode_record(rec: &DomainRecord, ingested_at: Timestamp) -> ResourceGraph {
    match rec {
        DomainRecord::Patient(p) => encode_patient(p, ingested_at),
        DomainRecord::Encounter(e) => encode_encounter(e, ingested_at),
        DomainRecord::Observation(o) => encode_observation(o, ingested_at),
    }
}

fn root_string<'a>(graph: &'a ResourceGraph, path: &str) -> Option<&'a str> {
    let root = Term::iri(&graph.root);
    let pred = predicate(path);
    graph.triples.iter().find_map(|t| {
        if t.subject == root && t.predicate == pred {
            match &t.object {
                Term::Literal { lexical, .. } => Some(lexical.as_str()),
                Term::Iri(iri) => Some(iri.as_str()),
                Term::Blank(_) => None,
            }
        } else {
            None
        }
    })
}

fn reference_id(graph: &ResourceGraph, path: &str) -> Option<String> {
    root_string(graph, path).map(|iri| iri.rsplit('/').next().unwrap_or(iri).to_string())
}

/// Inverse of the mapping table, used by exporters and one-shot CLI tools
/// to recover domain records from stored graphs.
pub fn record_from_graph(graph: &ResourceGraph) -> Option<DomainRecord> {
    let opt = |v: Option<&str>| v.map(String::from);
    match graph.resource_type()?.strip_prefix(FHIR_NS)? {
        "Patient" => Some(DomainRecord::Patient(PatientRecord {
            id: root_string(graph, "Patient.identifier")?.to_string(),
            family: root_string(graph, "Patient.name.family").unwrap_or("").to_string(),
            given: root_string(graph, "Patient.name.given").unwrap_or("").to_string(),
            middle: opt(root_string(graph, "Patient.name.middle")),
            dob: NaiveDate::parse_from_str(root_string(graph, "Patient.birthDate")?, "%Y-%m-%d")
                .ok()?,
            sex: Sex::parse(root_string(graph, "Patient.gender").unwrap_or("")),
            street: opt(root_string(graph, "Patient.address.line")),
            city: opt(root_string(graph, "Patient.address.city")),
            state: opt(root_string(graph, "Patient.address.state")),
            zip: opt(root_string(graph, "Patient.address.postalCode")),
            phone: opt(root_string(graph, "Patient.telecom.value")),
        })),
        "Encounter" => Some(DomainRecord::Encounter(EncounterRecord {
            id: root_string(graph, "Encounter.identifier")?.to_string(),
            patient_id: reference_id(graph, "Encounter.subject")?,
            class: EncounterClass::parse(root_string(graph, "Encounter.class")?)?,
            start: Timestamp::parse_rfc3339(root_string(graph, "Encounter.period.start")?)?,
            end: root_string(graph, "Encounter.period.end").and_then(Timestamp::parse_rfc3339),
            status: EncounterStatus::parse(root_string(graph, "Encounter.status")?)?,
        })),
        "Observation" => Some(DomainRecord::Observation(ObservationRecord {
            id: root_string(graph, "Observation.identifier")?.to_string(),
            patient_id: reference_id(graph, "Observation.subject")?,
            encounter_id: reference_id(graph, "Observation.encounter"),
            code: ObservationCode {
                system: root_string(graph, "Observation.code.coding.system")
                    .unwrap_or("")
                    .to_string(),
                code: root_string(graph, "Observation.code.coding.code")?.to_string(),
                display: root_string(graph, "Observation.code.coding.display")
                    .unwrap_or("")
                    .to_string(),
            },
            value: root_string(graph, "Observation.valueQuantity.value")?.parse().ok()?,
            units: root_string(graph, "Observation.valueQuantity.unit")
                .unwrap_or("")
                .to_string(),
            reference_range: opt(root_string(graph, "Observation.referenceRange")),
            abnormal_flag: root_string(graph, "Observation.interpretation")
                .and_then(AbnormalFlag::parse),
            effective_at: Timestamp::parse_rfc3339(root_string(
                graph,
                "Observation.effectiveDateTime",
            )?)?,
            performer: opt(root_string(graph, "Observation.performer")),
        })),
        _ => None,
    }
}

/// Shapes every encoded graph must satisfy, one per resource type.
pub fn resource_shapes() -> Vec<crate::rdf::shape::Shape> {
    use crate::rdf::shape::{Shape, ShapeConstraint};
    let exactly_one = |path: &str, datatype: Option<Datatype>| ShapeConstraint {
        predicate: predicate(path),
        min_count: 1,
        max_count: Some(1),
        datatype,
    };
    vec![
        Shape::new(
            &format!("{FHIR_NS}Patient"),
            vec![
                exactly_one("Patient.identifier", Some(Datatype::String)),
                exactly_one("Patient.birthDate", Some(Datatype::Date)),
                exactly_one("Patient.gender", Some(Datatype::String)),
                ShapeConstraint {
                    predicate: SEM_INGESTED_AT.to_string(),
                    min_count: 1,
                    max_count: Some(1),
                    datatype: Some(Datatype::DateTime),
                },
            ],
        )
        .unwrap(),
        Shape::new(
            &format!("{FHIR_NS}Encounter"),
            vec![
                exactly_one("Encounter.identifier", Some(Datatype::String)),
                exactly_one("Encounter.subject", None),
                exactly_one("Encounter.class", Some(Datatype::String)),
                exactly_one("Encounter.status", Some(Datatype::String)),
                exactly_one("Encounter.period.start", Some(Datatype::DateTime)),
                ShapeConstraint {
                    predicate: SEM_INGESTED_AT.to_string(),
                    min_count: 1,
                    max_count: Some(1),
                    datatype: Some(Datatype::DateTime),
                },
            ],
        )
        .unwrap(),
        Shape::new(
            &format!("{FHIR_NS}Observation"),
            vec![
                exactly_one("Observation.identifier", Some(Datatype::String)),
                exactly_one("Observation.subject", None),
                exactly_one("Observation.code.coding.code", Some(Datatype::String)),
                exactly_one("Observation.valueQuantity.value", Some(Datatype::Decimal)),
                exactly_one("Observation.effectiveDateTime", Some(Datatype::DateTime)),
                ShapeConstraint {
                    predicate: SEM_INGESTED_AT.to_string(),
                    min_count: 1,
                    max_count: Some(1),
                    datatype: Some(Datatype::DateTime),
                },
            ],
        )
        .unwrap(),
    ]
}
