//! The pipe-delimited patient line format:
//! `id|family|given|middle|dob|sex|street|city|state|zip|phone`
//! with `YYYYMMDD` dates, one patient per `\n`-terminated line.

use chrono::NaiveDate;
use thiserror::Error;

use crate::fhir::{PatientRecord, Sex};

pub const FIELD_COUNT: usize = 11;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PipeError {
    #[error("expected {FIELD_COUNT} fields, found {0}")]
    FieldCount(usize),
    #[error("invalid date `{0}`")]
    InvalidDate(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
}

pub fn render_patient_line(rec: &PatientRecord) -> String {
    let opt = |v: &Option<String>| v.clone().unwrap_or_default();
    [
        rec.id.clone(),
        rec.family.clone(),
        rec.given.clone(),
        opt(&rec.middle),
        rec.dob.format("%Y%m%d").to_string(),
        rec.sex.code().to_string(),
        opt(&rec.street),
        opt(&rec.city),
        opt(&rec.state),
        opt(&rec.zip),
        opt(&rec.phone),
    ]
    .join("|")
}

pub fn parse_patient_line(line: &str) -> Result<PatientRecord, PipeError> {
    let fields: Vec<&str> = line.trim_end_matches('\n').split('|').collect();
    if fields.len() != FIELD_COUNT {
        return Err(PipeError::FieldCount(fields.len()));
    }
    let opt = |s: &str| {
        if s.is_empty() {
            None
        } else {
            Some(s.to_string())
        }
    };
    if fields[0].is_empty() {
        return Err(PipeError::MissingField("id"));
    }
    let dob = NaiveDate::parse_from_str(fields[4], "%Y%m%d")
        .map_err(|_| PipeError::InvalidDate(fields[4].to_string()))?;
    Ok(PatientRecord {
        id: fields[0].to_string(),
        family: fields[1].to_string(),
        given: fields[2].to_string(),
        middle: opt(fields[3]),
        dob,
        sex: Sex::parse(fields[5]),
        street: opt(fields[6]),
        city: opt(fields[7]),
        state: opt(fields[8]),
        zip: opt(fields[9]),
        phone: opt(fields[10]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_example_demographics() {
        let rec = PatientRecord {
            id: "555-44-4444".into(),
            family: "EVERYWOMAN".into(),
            given: "EVE".into(),
            middle: Some("E".into()),
            dob: NaiveDate::from_ymd_opt(1962, 3, 20).unwrap(),
            sex: Sex::Female,
            street: Some("153 FERNWOOD DR.".into()),
            city: Some("STATESVILLE".into()),
            state: Some("OH".into()),
            zip: Some("35292".into()),
            phone: Some("(206)3345232".into()),
        };
        assert_eq!(
            render_patient_line(&rec),
            "555-44-4444|EVERYWOMAN|EVE|E|19620320|F|153 FERNWOOD DR.|STATESVILLE|OH|35292|(206)3345232"
        );
        assert_eq!(parse_patient_line(&render_patient_line(&rec)).unwrap(), rec);
    }

    #[test]
    fn empty_middle_name_keeps_field_count() {
        let line = "1|DOE|JANE||19800101|F|||||";
        let rec = parse_patient_line(line).unwrap();
        assert_eq!(rec.middle, None);
        assert_eq!(render_patient_line(&rec), line);
        assert_eq!(line.split('|').count(), FIELD_COUNT);
    }

    #[test]
    fn rejects_wrong_field_count_and_bad_date() {
        assert_eq!(parse_patient_line("1|DOE|JANE"), Err(PipeError::FieldCount(3)));
        assert_eq!(
            parse_patient_line("1|DOE|JANE||1980xx01|F|||||"),
            Err(PipeError::InvalidDate("1980xx01".into()))
        );
    }
}
