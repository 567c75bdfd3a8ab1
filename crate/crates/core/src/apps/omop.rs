//! OMOP-CDM CSV export: one transformation from the conformed RDF graphs
//! back to domain records and out to PERSON / VISIT_OCCURRENCE /
//! MEASUREMENT tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::Datelike;
use thiserror::Error;

use crate::encoder::record_from_graph;
use crate::fhir::{DomainRecord, EncounterClass, Sex};
use crate::store::StoreSnapshot;

/// Static LOINC → OMOP concept map, shipped with the crate.
const CONCEPT_MAP_CSV: &str = include_str!("../../data/loinc_omop.csv");

pub const PERSON_COLUMNS: &[&str] = &[
    "person_id",
    "gender_concept_id",
    "year_of_birth",
    "month_of_birth",
    "day_of_birth",
    "person_source_value",
];
pub const VISIT_COLUMNS: &[&str] = &[
    "visit_occurrence_id",
    "person_id",
    "visit_concept_id",
    "visit_start_datetime",
    "visit_end_datetime",
];
pub const MEASUREMENT_COLUMNS: &[&str] = &[
    "measurement_id",
    "person_id",
    "measurement_concept_id",
    "measurement_datetime",
    "value_as_number",
    "unit_source_value",
    "measurement_source_value",
];

#[derive(Debug, Error)]
pub enum OmopError {
    #[error("cannot write `{path}`: {message}")]
    DestinationUnwritable { path: PathBuf, message: String },
    #[error("concept map is malformed: {0}")]
    BadConceptMap(String),
}

/// `loinc code -> concept_id`; unmapped codes export as concept 0.
pub fn concept_map() -> Result<BTreeMap<String, i64>, OmopError> {
    let mut reader = csv::Reader::from_reader(CONCEPT_MAP_CSV.as_bytes());
    let mut map = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| OmopError::BadConceptMap(e.to_string()))?;
        let code = record
            .get(0)
            .ok_or_else(|| OmopError::BadConceptMap("missing loinc_code".into()))?;
        let concept: i64 = record
            .get(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| OmopError::BadConceptMap(format!("bad concept id for {code}")))?;
        map.insert(code.to_string(), concept);
    }
    Ok(map)
}

fn gender_concept(sex: Sex) -> i64 {
    match sex {
        Sex::Female => 8532,
        Sex::Male => 8507,
        Sex::Other | Sex::Unknown => 0,
    }
}

fn visit_concept(class: EncounterClass) -> i64 {
    match class {
        EncounterClass::Inpatient => 9201,
        EncounterClass::Ambulatory => 9202,
        EncounterClass::Emergency => 9203,
    }
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ExportReport {
    pub person_rows: u64,
    pub visit_rows: u64,
    pub measurement_rows: u64,
    /// Observations whose code was missing from the concept map (exported
    /// with concept_id 0).
    pub unmapped_codes: u64,
    /// Visits/measurements skipped because their patient has no PERSON row.
    pub orphaned_rows: u64,
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::fs::File>, OmopError> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).map_err(|e| OmopError::DestinationUnwritable {
        path,
        message: e.to_string(),
    })
}

/// Writes `PERSON.csv`, `VISIT_OCCURRENCE.csv`, and `MEASUREMENT.csv`
/// (UTF-8, header row, RFC 4180 quoting) into `out_dir`. Rows are ordered
/// by source id, so identical stores export identical bytes.
pub fn export_omop(snapshot: &StoreSnapshot, out_dir: &Path) -> Result<ExportReport, OmopError> {
    let concepts = concept_map()?;
    let mut patients = Vec::new();
    let mut encounters = Vec::new();
    let mut observations = Vec::new();
    for graph in snapshot.root_index.values() {
        match record_from_graph(graph) {
            Some(DomainRecord::Patient(p)) => patients.push(p),
            Some(DomainRecord::Encounter(e)) => encounters.push(e),
            Some(DomainRecord::Observation(o)) => observations.push(o),
            None => {} // non-conforming graphs are not exportable
        }
    }
    patients.sort_by(|a, b| a.id.cmp(&b.id));
    encounters.sort_by(|a, b| a.id.cmp(&b.id));
    observations.sort_by(|a, b| a.id.cmp(&b.id));

    let mut report = ExportReport::default();
    let person_ids: BTreeMap<String, u64> = patients
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.clone(), i as u64 + 1))
        .collect();

    let mut person = writer(out_dir, "PERSON.csv")?;
    let fail = |e: csv::Error| OmopError::DestinationUnwritable {
        path: out_dir.to_path_buf(),
        message: e.to_string(),
    };
    person.write_record(PERSON_COLUMNS).map_err(fail)?;
    for p in &patients {
        person
            .write_record([
                person_ids[&p.id].to_string(),
                gender_concept(p.sex).to_string(),
                p.dob.year().to_string(),
                p.dob.month().to_string(),
                p.dob.day().to_string(),
                p.id.clone(),
            ])
            .map_err(fail)?;
        report.person_rows += 1;
    }
    person.flush().map_err(|e| OmopError::DestinationUnwritable {
        path: out_dir.join("PERSON.csv"),
        message: e.to_string(),
    })?;

    let mut visit = writer(out_dir, "VISIT_OCCURRENCE.csv")?;
    visit.write_record(VISIT_COLUMNS).map_err(fail)?;
    for (i, e) in encounters.iter().enumerate() {
        let Some(person_id) = person_ids.get(&e.patient_id) else {
            report.orphaned_rows += 1;
            continue;
        };
        visit
            .write_record([
                (i as u64 + 1).to_string(),
                person_id.to_string(),
                visit_concept(e.class).to_string(),
                e.start.to_rfc3339(),
                e.end.map(|t| t.to_rfc3339()).unwrap_or_default(),
            ])
            .map_err(fail)?;
        report.visit_rows += 1;
    }
    visit.flush().map_err(|e| OmopError::DestinationUnwritable {
        path: out_dir.join("VISIT_OCCURRENCE.csv"),
        message: e.to_string(),
    })?;

    let mut measurement = writer(out_dir, "MEASUREMENT.csv")?;
    measurement.write_record(MEASUREMENT_COLUMNS).map_err(fail)?;
    for (i, o) in observations.iter().enumerate() {
        let Some(person_id) = person_ids.get(&o.patient_id) else {
            report.orphaned_rows += 1;
            continue;
        };
        let concept = match concepts.get(&o.code.code) {
            Some(c) => *c,
            None => {
                report.unmapped_codes += 1;
                0
            }
        };
        measurement
            .write_record([
                (i as u64 + 1).to_string(),
                person_id.to_string(),
                concept.to_string(),
                o.effective_at.to_rfc3339(),
                crate::rdf::format_decimal(o.value),
                o.units.clone(),
                o.code.code.clone(),
            ])
            .map_err(fail)?;
        report.measurement_rows += 1;
    }
    measurement
        .flush()
        .map_err(|e| OmopError::DestinationUnwritable {
            path: out_dir.join("MEASUREMENT.csv"),
            message: e.to_string(),
        })?;
    Ok(report)
}
