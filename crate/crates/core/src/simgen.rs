//! Deterministic, seeded generators for the three simulated input feeds:
//! pipe-delimited patients, FHIR JSON encounters, and HL7v2 observation
//! messages. The whole feed is a pure function of the scenario config.

use std::collections::BTreeMap;

use chrono::{NaiveDate, TimeZone, Utc};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bus::{topics, Bus, BusError, ComponentRole, ContentType, Topic};
use crate::clock::{Clock, Timestamp, VirtualClock};
use crate::fhir::{
    EncounterClass, EncounterRecord, EncounterStatus, MessageEnvelope, PatientRecord, Sex,
};
use crate::hl7v2::{serialize_message, Hl7Message, Segment};
use crate::pipe::render_patient_line;

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("bus unavailable: {0}")]
    BusUnavailable(#[from] BusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Normal,
    Hypertension,
    Hypothermia,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "normal" => Some(Condition::Normal),
            "hypertension" => Some(Condition::Hypertension),
            "hypothermia" => Some(Condition::Hypothermia),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub patient_count: u32,
    /// Observation messages per second per patient.
    pub rate_per_entity: f64,
    pub condition: Condition,
    pub duration_s: f64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.patient_count == 0 {
            return Err("patient_count must be positive".into());
        }
        if self.rate_per_entity <= 0.0 {
            return Err("rate_per_entity must be positive".into());
        }
        if self.duration_s < 0.0 {
            return Err("duration must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VitalsSample {
    pub systolic_bp: f64,
    pub diastolic_bp: f64,
    pub heart_rate: f64,
    pub body_temp: f64,
    pub sampled_at: Timestamp,
}

// Generator clamps; every emitted sample stays inside these.
const SYSTOLIC_CLAMP: (f64, f64) = (60.0, 260.0);
const DIASTOLIC_CLAMP: (f64, f64) = (30.0, 160.0);
const HEART_RATE_CLAMP: (f64, f64) = (20.0, 220.0);
const TEMP_CLAMP: (f64, f64) = (25.0, 43.0);

pub mod loinc {
    pub const SYSTOLIC: (&str, &str) = ("8480-6", "SYSTOLIC BLOOD PRESSURE");
    pub const DIASTOLIC: (&str, &str) = ("8462-4", "DIASTOLIC BLOOD PRESSURE");
    pub const HEART_RATE: (&str, &str) = ("8867-4", "HEART RATE");
    pub const BODY_TEMP: (&str, &str) = ("8310-5", "BODY TEMPERATURE");
}

const FAMILY_NAMES: &[&str] = &[
    "EVERYWOMAN", "EVERYMAN", "JONES", "SMITH", "RIVERA", "CHEN", "OKAFOR", "PATEL", "KOWALSKI",
    "NAKAMURA", "DUBOIS", "LARSEN",
];
const GIVEN_NAMES: &[&str] = &[
    "EVE", "ADAM", "GRACE", "HENRY", "IRIS", "JUNE", "KAI", "LENA", "MILO", "NORA", "OTTO", "PIA",
];
const STREETS: &[&str] = &[
    "FERNWOOD DR.", "OAK ST.", "MAPLE AVE.", "RIVER RD.", "HILLCREST LN.", "SUNSET BLVD.",
];
const CITIES: &[(&str, &str)] = &[
    ("STATESVILLE", "OH"),
    ("LEXINGTON", "KY"),
    ("SPRINGFIELD", "IL"),
    ("RIVERTON", "WY"),
    ("MADISON", "WI"),
];

fn patient_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index + 1))
}

/// Deterministic in (seed, index).
pub fn generate_patient(seed: u64, index: u32) -> PatientRecord {
    let mut rng = patient_rng(seed, index as u64);
    let family = FAMILY_NAMES[rng.gen_range(0..FAMILY_NAMES.len())];
    let given = GIVEN_NAMES[rng.gen_range(0..GIVEN_NAMES.len())];
    let middle = if rng.gen_bool(0.6) {
        Some(((b'A' + rng.gen_range(0..26u8)) as char).to_string())
    } else {
        None
    };
    let dob = NaiveDate::from_ymd_opt(
        rng.gen_range(1930..2006),
        rng.gen_range(1..13),
        rng.gen_range(1..29),
    )
    .unwrap();
    let (city, state) = CITIES[rng.gen_range(0..CITIES.len())];
    PatientRecord {
        id: format!(
            "{:03}-{:02}-{:04}",
            rng.gen_range(100..1000),
            rng.gen_range(10..100),
            rng.gen_range(1000..10000)
        ),
        family: family.to_string(),
        given: given.to_string(),
        middle,
        dob,
        sex: if rng.gen_bool(0.5) { Sex::Female } else { Sex::Male },
        street: Some(format!(
            "{} {}",
            rng.gen_range(1..999),
            STREETS[rng.gen_range(0..STREETS.len())]
        )),
        city: Some(city.to_string()),
        state: Some(state.to_string()),
        zip: Some(format!("{:05}", rng.gen_range(10000..99999))),
        phone: Some(format!(
            "({:03}){:07}",
            rng.gen_range(200..999),
            rng.gen_range(1000000..9999999)
        )),
    }
}

pub fn generate_patient_line(seed: u64, index: u32) -> String {
    render_patient_line(&generate_patient(seed, index))
}

fn uniform(rng: &mut ChaCha8Rng, low: f64, high: f64) -> f64 {
    rng.gen_range(low..=high)
}

fn clamp(v: f64, (low, high): (f64, f64)) -> f64 {
    v.clamp(low, high)
}

/// One vitals draw. NORMAL stays inside ranges no detector fires on;
/// HYPERTENSION shifts blood pressure up; HYPOTHERMIA drops temperature
/// and pressure while raising pulse.
pub fn generate_vitals(rng: &mut ChaCha8Rng, condition: Condition, sampled_at: Timestamp) -> VitalsSample {
    let (sys, dia, hr, temp) = match condition {
        Condition::Normal => (
            uniform(rng, 100.0, 130.0),
            uniform(rng, 60.0, 85.0),
            uniform(rng, 60.0, 100.0),
            uniform(rng, 36.1, 37.2),
        ),
        Condition::Hypertension => (
            uniform(rng, 150.0, 200.0),
            uniform(rng, 95.0, 120.0),
            uniform(rng, 60.0, 100.0),
            uniform(rng, 36.1, 37.2),
        ),
        Condition::Hypothermia => (
            uniform(rng, 70.0, 89.0),
            uniform(rng, 45.0, 60.0),
            uniform(rng, 101.0, 140.0),
            uniform(rng, 30.0, 34.9),
        ),
    };
    VitalsSample {
        systolic_bp: clamp(sys.round(), SYSTOLIC_CLAMP),
        diastolic_bp: clamp(dia.round(), DIASTOLIC_CLAMP),
        heart_rate: clamp(hr.round(), HEART_RATE_CLAMP),
        body_temp: clamp((temp * 10.0).round() / 10.0, TEMP_CLAMP),
        sampled_at,
    }
}

fn hl7_timestamp(t: Timestamp) -> String {
    Utc.timestamp_millis_opt(t.millis())
        .unwrap()
        .format("%Y%m%d%H%M")
        .to_string()
}

/// One OBX worth of content.
#[derive(Debug, Clone)]
pub struct ObxSpec {
    pub code: String,
    pub display: String,
    pub value: f64,
    pub units: String,
    pub reference_range: String,
    pub flag: String,
}

fn base_oru(patient: &PatientRecord, control_id: &str, message_time: Timestamp) -> Hl7Message {
    let mut msh = Segment::new("MSH");
    msh.set_value(1, "|");
    msh.set_value(2, "^~\\&");
    msh.set_value(3, "SIM LAB");
    msh.set_value(4, "SIMFEED");
    msh.set_value(5, "GHH OE");
    msh.set_value(6, "BLDG4");
    msh.set_value(7, &hl7_timestamp(message_time));
    msh.set_components(9, &["ORU", "R01"]);
    msh.set_value(10, control_id);
    msh.set_value(11, "P");
    msh.set_value(12, "2.4");

    let mut pid = Segment::new("PID");
    pid.set_value(3, &patient.id);
    pid.set_components(
        5,
        &[
            &patient.family,
            &patient.given,
            patient.middle.as_deref().unwrap_or(""),
        ],
    );
    pid.set_value(7, &patient.dob.format("%Y%m%d").to_string());
    pid.set_value(8, patient.sex.code());
    pid.set_components(
        11,
        &[
            patient.street.as_deref().unwrap_or(""),
            "",
            patient.city.as_deref().unwrap_or(""),
            patient.state.as_deref().unwrap_or(""),
            patient.zip.as_deref().unwrap_or(""),
        ],
    );
    if let Some(phone) = &patient.phone {
        pid.set_value(13, phone);
    }

    let mut obr = Segment::new("OBR");
    obr.set_value(1, "1");
    obr.set_components(2, &[control_id, "SIM LAB"]);
    obr.set_components(3, &[control_id, "SIM LAB"]);
    obr.set_components(4, &["85353-1", "VITAL SIGNS"]);
    obr.set_value(7, &hl7_timestamp(message_time));

    Hl7Message {
        delimiters: Default::default(),
        segments: vec![msh, pid, obr],
    }
}

/// Renders an ORU^R01 carrying the given observations, Figure-style:
/// OBX value type SN with the numeric value in the second component.
pub fn render_oru(
    patient: &PatientRecord,
    observations: &[ObxSpec],
    control_id: &str,
    message_time: Timestamp,
) -> String {
    let mut msg = base_oru(patient, control_id, message_time);
    for (i, spec) in observations.iter().enumerate() {
        let mut obx = Segment::new("OBX");
        obx.set_value(1, &(i + 1).to_string());
        obx.set_value(2, "SN");
        obx.set_components(3, &[&spec.code, &spec.display]);
        obx.set_components(5, &["", &crate::rdf::format_decimal(spec.value)]);
        obx.set_value(6, &spec.units);
        obx.set_value(7, &spec.reference_range);
        obx.set_value(8, &spec.flag);
        obx.set_value(11, "F");
        msg.segments.push(obx);
    }
    serialize_message(&msg)
}

fn flag(value: f64, low: f64, high: f64) -> String {
    if value > high {
        "H".into()
    } else if value < low {
        "L".into()
    } else {
        "N".into()
    }
}

/// Renders one vitals sample as an ORU^R01 with four OBX segments.
pub fn render_observation_hl7(
    sample: &VitalsSample,
    patient: &PatientRecord,
    control_id: &str,
) -> String {
    let obs = vec![
        ObxSpec {
            code: loinc::SYSTOLIC.0.into(),
            display: loinc::SYSTOLIC.1.into(),
            value: sample.systolic_bp,
            units: "mm[Hg]".into(),
            reference_range: "90_140".into(),
            flag: flag(sample.systolic_bp, 90.0, 140.0),
        },
        ObxSpec {
            code: loinc::DIASTOLIC.0.into(),
            display: loinc::DIASTOLIC.1.into(),
            value: sample.diastolic_bp,
            units: "mm[Hg]".into(),
            reference_range: "60_90".into(),
            flag: flag(sample.diastolic_bp, 60.0, 90.0),
        },
        ObxSpec {
            code: loinc::HEART_RATE.0.into(),
            display: loinc::HEART_RATE.1.into(),
            value: sample.heart_rate,
            units: "/min".into(),
            reference_range: "60_100".into(),
            flag: flag(sample.heart_rate, 60.0, 100.0),
        },
        ObxSpec {
            code: loinc::BODY_TEMP.0.into(),
            display: loinc::BODY_TEMP.1.into(),
            value: sample.body_temp,
            units: "Cel".into(),
            reference_range: "35.0_37.5".into(),
            flag: flag(sample.body_temp, 35.0, 37.5),
        },
    ];
    render_oru(patient, &obs, control_id, sample.sampled_at)
}

fn encounter_for(patient: &PatientRecord, rng: &mut ChaCha8Rng, start: Timestamp) -> EncounterRecord {
    let class = match rng.gen_range(0..3) {
        0 => EncounterClass::Ambulatory,
        1 => EncounterClass::Emergency,
        _ => EncounterClass::Inpatient,
    };
    EncounterRecord {
        id: format!("enc-{}", patient.id),
        patient_id: patient.id.clone(),
        class,
        start,
        end: None,
        status: EncounterStatus::InProgress,
    }
}

/// How the feed advances time: virtual mode drives the shared clock and
/// flushes the bus at every step so downstream timestamps are
/// reproducible; wall mode sleeps.
pub enum FeedPacing<'a> {
    Virtual(&'a VirtualClock),
    Wall,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeedSummary {
    pub messages_sent: BTreeMap<String, u64>,
}

/// Publishes the whole scenario: each patient once, one encounter per
/// patient at start, observations per patient at `rate_per_entity` for
/// `duration_s`. `on_step` runs after each time step has fully drained.
pub fn run_feed(
    config: &ScenarioConfig,
    bus: &Bus,
    pacing: FeedPacing<'_>,
    mut on_step: impl FnMut(Timestamp),
) -> Result<FeedSummary, FeedError> {
    let patient_topic = Topic::new(topics::PATIENT_PIPE)?;
    let encounter_topic = Topic::new(topics::ENCOUNTER_FHIRJSON)?;
    let observation_topic = Topic::new(topics::OBSERVATION_HL7V2)?;

    let start = match &pacing {
        FeedPacing::Virtual(clock) => clock.now(),
        FeedPacing::Wall => crate::clock::WallClock.now(),
    };
    let mut summary = FeedSummary::default();
    let mut send = |topic: &Topic, payload: String, content_type: ContentType| -> Result<(), FeedError> {
        bus.publish(ComponentRole::Input, topic, payload.into_bytes(), content_type)?;
        *summary
            .messages_sent
            .entry(topic.name().to_string())
            .or_insert(0) += 1;
        Ok(())
    };

    let patients: Vec<PatientRecord> = (0..config.patient_count)
        .map(|i| generate_patient(config.seed, i))
        .collect();

    // t0: demographics and encounters.
    for (i, patient) in patients.iter().enumerate() {
        send(&patient_topic, render_patient_line(patient) + "\n", ContentType::Pipe)?;
        let mut rng = patient_rng(config.seed, i as u64 ^ 0xE0C0_FFEE);
        let encounter = encounter_for(patient, &mut rng, start);
        let envelope = MessageEnvelope {
            control_id: format!("ENC-{}", i + 1),
            event_code: "encounter-provide".into(),
            source_name: "SIM REG".into(),
            source_endpoint: "urn:SIM-REG".into(),
            destination_name: "GHH OE".into(),
            sent_at: start.to_datetime().fixed_offset(),
            data_reference: format!("Encounter/{}", encounter.id),
        };
        send(
            &encounter_topic,
            crate::fhir::serialize_encounter_json(&encounter, &envelope),
            ContentType::FhirJson,
        )?;
    }
    if let FeedPacing::Virtual(_) = pacing {
        bus.flush();
    }
    on_step(start);

    // Observation ticks at start + k/rate, k = 1..=floor(rate*duration).
    let step_ms = (1000.0 / config.rate_per_entity).round() as i64;
    let ticks = (config.rate_per_entity * config.duration_s).floor() as i64;
    let mut vitals_rngs: Vec<ChaCha8Rng> = (0..config.patient_count)
        .map(|i| patient_rng(config.seed, (i as u64) ^ 0x5EED_0B5E)
        )
        .collect();
    let mut control_seq = 0u64;
    for k in 1..=ticks {
        let t = Timestamp(start.millis() + k * step_ms);
        match &pacing {
            FeedPacing::Virtual(clock) => clock.set(t),
            FeedPacing::Wall => {
                let now = crate::clock::WallClock.now();
                if t > now {
                    std::thread::sleep(std::time::Duration::from_millis(
                        (t.millis() - now.millis()) as u64,
                    ));
                }
            }
        }
        for (i, patient) in patients.iter().enumerate() {
            let sample = generate_vitals(&mut vitals_rngs[i], config.condition, t);
            control_seq += 1;
            let control_id = format!("OBS-{control_seq:06}");
            send(
                &observation_topic,
                render_observation_hl7(&sample, patient, &control_id),
                ContentType::Hl7v2,
            )?;
        }
        if let FeedPacing::Virtual(_) = pacing {
            bus.flush();
        }
        on_step(t);
    }
    Ok(summary)
}
