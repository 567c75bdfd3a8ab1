//! HL7v2 wire-format parser and serializer, plus typed extraction of
//! ORU^R01 content (MSH/PID/OBR/OBX) into domain records.
//!
//! The parse tree is lossless: segments split into fields, fields into
//! repetitions, repetitions into components, components into subcomponents.
//! Indexing follows the 1-based HL7 convention, where MSH-1 is the field
//! delimiter itself and MSH-2 the remaining encoding characters.

use chrono::NaiveDate;
use thiserror::Error;

use crate::clock::Timestamp;
use crate::fhir::{AbnormalFlag, ObservationCode, ObservationRecord, PatientRecord, Sex};

pub const LOINC_SYSTEM: &str = "http://loinc.org";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Hl7Error {
    #[error("empty input")]
    EmptyInput,
    #[error("input does not start with an MSH segment")]
    NotHl7,
    #[error("MSH segment has fewer than 9 fields")]
    MalformedMsh,
    #[error("required segment {0} missing")]
    MissingSegment(String),
    #[error("OBX-{set_id}: value `{value}` is not numeric")]
    NonNumericValue { set_id: String, value: String },
}

/// The five delimiter characters, read from MSH-1/MSH-2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelimiterSet {
    pub field: char,
    pub component: char,
    pub repetition: char,
    pub escape: char,
    pub subcomponent: char,
}

impl Default for DelimiterSet {
    fn default() -> Self {
        DelimiterSet {
            field: '|',
            component: '^',
            repetition: '~',
            escape: '\\',
            subcomponent: '&',
        }
    }
}

pub type Component = Vec<String>;
pub type Repetition = Vec<Component>;
pub type Field = Vec<Repetition>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub id: String,
    pub fields: Vec<Field>,
}

impl Segment {
    pub fn new(id: &str) -> Self {
        Segment {
            id: id.to_string(),
            fields: Vec::new(),
        }
    }

    /// 1-based field access, flattened to the first repetition's first
    /// component's first subcomponent. Empty string when absent.
    pub fn field(&self, index: usize) -> &str {
        self.component(index, 1)
    }

    /// 1-based (field, component) access.
    pub fn component(&self, field: usize, component: usize) -> &str {
        self.fields
            .get(field - 1)
            .and_then(|f| f.first())
            .and_then(|r| r.get(component - 1))
            .and_then(|c| c.first())
            .map(String::as_str)
            .unwrap_or("")
    }

    /// All components of field `index` (first repetition), flattened to
    /// their first subcomponent.
    pub fn components(&self, index: usize) -> Vec<&str> {
        self.fields
            .get(index - 1)
            .and_then(|f| f.first())
            .map(|r| {
                r.iter()
                    .map(|c| c.first().map(String::as_str).unwrap_or(""))
                    .collect()
            })
            .unwrap_or_default()
    }

    fn set_field(&mut self, index: usize, value: Field) {
        if self.fields.len() < index {
            self.fields.resize(index, vec![vec![vec![String::new()]]]);
        }
        self.fields[index - 1] = value;
    }

    /// Sets field `index` to a single repetition of simple components.
    pub fn set_components(&mut self, index: usize, components: &[&str]) {
        self.set_field(
            index,
            vec![components.iter().map(|c| vec![c.to_string()]).collect()],
        );
    }

    pub fn set_value(&mut self, index: usize, value: &str) {
        self.set_components(index, &[value]);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hl7Message {
    pub delimiters: DelimiterSet,
    pub segments: Vec<Segment>,
}

impl Hl7Message {
    pub fn segment(&self, id: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    pub fn segments_named<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a Segment> {
        self.segments.iter().filter(move |s| s.id == id)
    }
}

fn unescape(value: &str, d: &DelimiterSet) -> String {
    let mut out = String::with_capacity(value.len());
    let mut chars = value.chars().peekable();
    while let Some(c) = chars.next() {
        if c != d.escape {
            out.push(c);
            continue;
        }
        let code = chars.next();
        let close = chars.peek().copied();
        match (code, close) {
            (Some('F'), Some(e)) if e == d.escape => {
                out.push(d.field);
                chars.next();
            }
            (Some('S'), Some(e)) if e == d.escape => {
                out.push(d.component);
                chars.next();
            }
            (Some('T'), Some(e)) if e == d.escape => {
                out.push(d.subcomponent);
                chars.next();
            }
            (Some('R'), Some(e)) if e == d.escape => {
                out.push(d.repetition);
                chars.next();
            }
            (Some('E'), Some(e)) if e == d.escape => {
                out.push(d.escape);
                chars.next();
            }
            // Unknown escape: keep verbatim.
            (Some(other), _) => {
                out.push(d.escape);
                out.push(other);
            }
            (None, _) => out.push(d.escape),
        }
    }
    out
}

fn escape(value: &str, d: &DelimiterSet) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        if c == d.escape {
            out.push_str(&format!("{0}E{0}", d.escape));
        } else if c == d.field {
            out.push_str(&format!("{0}F{0}", d.escape));
        } else if c == d.component {
            out.push_str(&format!("{0}S{0}", d.escape));
        } else if c == d.repetition {
            out.push_str(&format!("{0}R{0}", d.escape));
        } else if c == d.subcomponent {
            out.push_str(&format!("{0}T{0}", d.escape));
        } else {
            out.push(c);
        }
    }
    out
}

fn parse_field(raw: &str, d: &DelimiterSet) -> Field {
    raw.split(d.repetition)
        .map(|rep| {
            rep.split(d.component)
                .map(|comp| {
                    comp.split(d.subcomponent)
                        .map(|sub| unescape(sub, d))
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn raw_field(value: &str) -> Field {
    vec![vec![vec![value.to_string()]]]
}

/// Parses HL7v2 wire text. Segment terminators `\r`, `\n`, and `\r\n` are
/// all accepted; canonical output uses `\r`.
pub fn parse_message(text: &str) -> Result<Hl7Message, Hl7Error> {
    if text.trim().is_empty() {
        return Err(Hl7Error::EmptyInput);
    }
    if !text.starts_with("MSH") {
        return Err(Hl7Error::NotHl7);
    }
    let mut chars = text.chars().skip(3);
    let field = chars.next().ok_or(Hl7Error::MalformedMsh)?;
    let mut delims = DelimiterSet::default();
    delims.field = field;
    let encoding: String = chars.take_while(|&c| c != field).collect();
    let mut enc = encoding.chars();
    if let Some(c) = enc.next() {
        delims.component = c;
    }
    if let Some(c) = enc.next() {
        delims.repetition = c;
    }
    if let Some(c) = enc.next() {
        delims.escape = c;
    }
    if let Some(c) = enc.next() {
        delims.subcomponent = c;
    }

    let mut segments = Vec::new();
    for line in text.split(['\r', '\n']).filter(|l| !l.is_empty()) {
        let mut parts = line.split(delims.field);
        let id = parts.next().unwrap_or("").to_string();
        let mut segment = Segment::new(&id);
        if id == "MSH" {
            // MSH-1 is the field delimiter, MSH-2 the encoding characters;
            // both are stored verbatim so the tree stays lossless.
            segment.fields.push(raw_field(&delims.field.to_string()));
            let enc_field = parts.next().unwrap_or("");
            segment.fields.push(raw_field(enc_field));
        }
        for raw in parts {
            segment.fields.push(parse_field(raw, &delims));
        }
        segments.push(segment);
    }
    if segments.is_empty() || segments[0].id != "MSH" {
        return Err(Hl7Error::NotHl7);
    }
    if segments[0].fields.len() < 9 {
        return Err(Hl7Error::MalformedMsh);
    }
    Ok(Hl7Message {
        delimiters: delims,
        segments,
    })
}

/// Canonical serialization: `\r` terminators, values re-escaped,
/// trailing structure preserved up to the last populated index.
pub fn serialize_message(msg: &Hl7Message) -> String {
    let d = &msg.delimiters;
    let mut out = String::new();
    for segment in &msg.segments {
        out.push_str(&segment.id);
        let fields: &[Field] = if segment.id == "MSH" {
            // MSH-1/MSH-2 are written as raw delimiter text.
            out.push(d.field);
            if let Some(enc) = segment.fields.get(1) {
                out.push_str(&enc[0][0][0]);
            }
            &segment.fields[2.min(segment.fields.len())..]
        } else {
            &segment.fields
        };
        for field in fields {
            out.push(d.field);
            let rendered: Vec<String> = field
                .iter()
                .map(|rep| {
                    rep.iter()
                        .map(|comp| {
                            comp.iter()
                                .map(|s| escape(s, d))
                                .collect::<Vec<_>>()
                                .join(&d.subcomponent.to_string())
                        })
                        .collect::<Vec<_>>()
                        .join(&d.component.to_string())
                })
                .collect();
            out.push_str(&rendered.join(&d.repetition.to_string()));
        }
        out.push('\r');
    }
    out
}

fn parse_hl7_timestamp(value: &str) -> Option<Timestamp> {
    let digits: &str = value.split(['+', '-']).next()?;
    let (date, time) = digits.split_at(digits.len().min(8));
    if date.len() < 8 {
        return None;
    }
    let year: i32 = date[0..4].parse().ok()?;
    let month: u32 = date[4..6].parse().ok()?;
    let day: u32 = date[6..8].parse().ok()?;
    let hour: u32 = time.get(0..2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let minute: u32 = time.get(2..4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let second: u32 = time.get(4..6).and_then(|s| s.parse().ok()).unwrap_or(0);
    let dt = NaiveDate::from_ymd_opt(year, month, day)?.and_hms_opt(hour, minute, second)?;
    Some(Timestamp::from_naive(dt))
}

/// `19620320` → `1962-03-20`. Normalization happens at extraction so the
/// parse tree stays lossless.
fn parse_hl7_date(value: &str) -> Option<NaiveDate> {
    if value.len() < 8 {
        return None;
    }
    NaiveDate::from_ymd_opt(
        value[0..4].parse().ok()?,
        value[4..6].parse().ok()?,
        value[6..8].parse().ok()?,
    )
}

fn patient_from_pid(pid: &Segment) -> PatientRecord {
    let name = pid.components(5);
    let addr = pid.components(11);
    let opt = |s: &str| {
        if s.is_empty() {
            None
        } else {
            Some(s.to_string())
        }
    };
    PatientRecord {
        id: pid.field(3).to_string(),
        family: name.first().unwrap_or(&"").to_string(),
        given: name.get(1).unwrap_or(&"").to_string(),
        middle: opt(name.get(2).unwrap_or(&"")),
        dob: parse_hl7_date(pid.field(7)).unwrap_or(NaiveDate::from_ymd_opt(1900, 1, 1).unwrap()),
        sex: Sex::parse(pid.field(8)),
        street: opt(addr.first().unwrap_or(&"")),
        city: opt(addr.get(2).unwrap_or(&"")),
        state: opt(addr.get(3).unwrap_or(&"")),
        zip: opt(addr.get(4).unwrap_or(&"")),
        phone: opt(pid.field(13)),
    }
}

/// The performing provider from OBR: the last populated field past OBR-16
/// that looks like a provider (id + family name components), falling back
/// to OBR-16 (the ordering provider).
fn performer_from_obr(obr: &Segment) -> Option<String> {
    let provider = |idx: usize| -> Option<String> {
        let comps = obr.components(idx);
        if comps.len() >= 2 && !comps[1].is_empty() {
            Some(comps[1..].iter().filter(|c| !c.is_empty()).cloned().collect::<Vec<_>>().join(" "))
        } else {
            None
        }
    };
    for idx in (17..=obr.fields.len()).rev() {
        if let Some(p) = provider(idx) {
            return Some(p);
        }
    }
    provider(16)
}

/// Typed extraction from an ORU^R01: one `ObservationRecord` per OBX plus
/// the patient from PID.
pub fn extract_observations(
    msg: &Hl7Message,
) -> Result<(PatientRecord, Vec<ObservationRecord>), Hl7Error> {
    let pid = msg
        .segment("PID")
        .ok_or_else(|| Hl7Error::MissingSegment("PID".into()))?;
    if msg.segment("OBX").is_none() {
        return Err(Hl7Error::MissingSegment("OBX".into()));
    }
    let patient = patient_from_pid(pid);
    let msh = &msg.segments[0];
    let control_id = msh.field(10).to_string();
    let obr = msg.segment("OBR");
    let effective = obr
        .and_then(|s| parse_hl7_timestamp(s.field(7)))
        .or_else(|| parse_hl7_timestamp(msh.field(7)))
        .unwrap_or(Timestamp::EPOCH);
    let performer = obr.and_then(performer_from_obr);

    let mut observations = Vec::new();
    for obx in msg.segments_named("OBX") {
        let set_id = obx.field(1).to_string();
        let value_type = obx.field(2);
        // Figure-style `^182`: when component 1 is empty and component 2 is
        // numeric, component 2 carries the value.
        let c1 = obx.component(5, 1);
        let c2 = obx.component(5, 2);
        let raw_value = if c1.is_empty() && !c2.is_empty() { c2 } else { c1 };
        let value: f64 = raw_value.parse().map_err(|_| {
            if value_type == "SN" || value_type == "NM" {
                Hl7Error::NonNumericValue {
                    set_id: set_id.clone(),
                    value: raw_value.to_string(),
                }
            } else {
                Hl7Error::NonNumericValue {
                    set_id: set_id.clone(),
                    value: raw_value.to_string(),
                }
            }
        })?;
        let code_comps = obx.components(3);
        let opt = |s: &str| {
            if s.is_empty() {
                None
            } else {
                Some(s.to_string())
            }
        };
        observations.push(ObservationRecord {
            id: format!("{control_id}-{set_id}"),
            patient_id: patient.id.clone(),
            encounter_id: None,
            code: ObservationCode {
                system: LOINC_SYSTEM.to_string(),
                code: code_comps.first().unwrap_or(&"").to_string(),
                display: code_comps.get(1).unwrap_or(&"").to_string(),
            },
            value,
            units: obx.field(6).to_string(),
            reference_range: opt(obx.field(7)),
            abnormal_flag: AbnormalFlag::parse(obx.field(8)),
            effective_at: effective,
            performer: performer.clone(),
        });
    }
    Ok((patient, observations))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const FIGURE_ORU: &str = concat!(
        "MSH|^~\\&|GHH LAB|ELAB-3|GHH OE|BLDG4|200202150930||ORU^R01|CNTRL-3456|P|2.4\r",
        "PID|||555-44-4444||EVERYWOMAN^EVE^E^^^^L|JONES|19620320|F|||153 FERNWOOD DR.^",
        "^STATESVILLE^OH^35292||(206)3345232|(206)752-121||||AC555444444||67-A4335^OH^20030520\r",
        "OBR|1|845439^GHH OE|1045813^GHH LAB|1554-5^GLUCOSE|||200202150730|||||||||",
        "555-55-5555^PRIMARY^PATRICIA P^^^^MD^^|||||||||F||||||444-44-4444^HIPPOCRATES^HOWARD H^^^^MD\r",
        "OBX|1|SN|1554-5^GLUCOSE^POST 12H CFST:MCNC:PT:SER/PLAS:QN||^182|mg/dl|70_105|H|||F\r",
    );

    #[test]
    fn parses_example_oru_structure() {
        let msg = parse_message(FIGURE_ORU).unwrap();
        let ids: Vec<&str> = msg.segments.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["MSH", "PID", "OBR", "OBX"]);
        let pid = msg.segment("PID").unwrap();
        assert_eq!(pid.field(3), "555-44-4444");
        assert_eq!(
            pid.components(5),
            ["EVERYWOMAN", "EVE", "E", "", "", "", "L"]
        );
        assert_eq!(pid.field(7), "19620320");
        let obx = msg.segment("OBX").unwrap();
        assert_eq!(obx.component(3, 1), "1554-5");
        assert_eq!(obx.component(5, 2), "182");
        assert_eq!(obx.field(6), "mg/dl");
        assert_eq!(obx.field(7), "70_105");
        assert_eq!(obx.field(8), "H");
    }

    #[test]
    fn minimal_message() {
        let msg = parse_message("MSH|^~\\&|A|B|C|D|20230101||ADT^A01|X|P|2.4").unwrap();
        assert_eq!(msg.segments.len(), 1);
        assert_eq!(msg.segments[0].components(9), ["ADT", "A01"]);
    }

    #[test]
    fn error_cases() {
        assert_eq!(parse_message(""), Err(Hl7Error::EmptyInput));
        assert_eq!(parse_message("PID|1"), Err(Hl7Error::NotHl7));
        assert_eq!(parse_message("MSH|^~\\&|A|B"), Err(Hl7Error::MalformedMsh));
    }

    #[test]
    fn round_trip_is_structural_fixpoint() {
        let msg = parse_message(FIGURE_ORU).unwrap();
        let text = serialize_message(&msg);
        let reparsed = parse_message(&text).unwrap();
        assert_eq!(msg, reparsed);
        // Serialization is already canonical after one pass.
        assert_eq!(serialize_message(&reparsed), text);
    }

    #[test]
    fn delimiters_in_values_are_escaped() {
        let mut msg = parse_message("MSH|^~\\&|A|B|C|D|20230101||ORU^R01|X|P|2.4").unwrap();
        let mut seg = Segment::new("NTE");
        seg.set_value(1, "a|b^c&d~e\\f");
        msg.segments.push(seg);
        let wire = serialize_message(&msg);
        assert!(wire.contains("a\\F\\b\\S\\c\\T\\d\\R\\e\\E\\f"));
        let back = parse_message(&wire).unwrap();
        assert_eq!(back.segment("NTE").unwrap().field(1), "a|b^c&d~e\\f");
    }

    #[test]
    fn extracts_example_observation_and_patient() {
        let msg = parse_message(FIGURE_ORU).unwrap();
        let (patient, obs) = extract_observations(&msg).unwrap();
        assert_eq!(patient.id, "555-44-4444");
        assert_eq!(patient.family, "EVERYWOMAN");
        assert_eq!(patient.given, "EVE");
        assert_eq!(patient.dob.to_string(), "1962-03-20");
        assert_eq!(patient.city.as_deref(), Some("STATESVILLE"));
        assert_eq!(patient.state.as_deref(), Some("OH"));
        assert_eq!(obs.len(), 1);
        let o = &obs[0];
        assert_eq!(o.code.code, "1554-5");
        assert_eq!(o.code.display, "GLUCOSE");
        assert_eq!(o.value, 182.0);
        assert_eq!(o.units, "mg/dl");
        assert_eq!(o.reference_range.as_deref(), Some("70_105"));
        assert_eq!(o.abnormal_flag, Some(AbnormalFlag::High));
        // Performing provider, not the ordering one.
        assert_eq!(o.performer.as_deref(), Some("HIPPOCRATES HOWARD H MD"));
    }

    #[test]
    fn oru_without_obx_is_rejected() {
        let text = concat!(
            "MSH|^~\\&|A|B|C|D|20230101||ORU^R01|X|P|2.4\r",
            "PID|||1||DOE^JANE||19800101|F\r",
        );
        let msg = parse_message(text).unwrap();
        assert_eq!(
            extract_observations(&msg),
            Err(Hl7Error::MissingSegment("OBX".into()))
        );
    }
}
