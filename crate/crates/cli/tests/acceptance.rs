//! Acceptance suite: one test per criterion, each printing a single
//! `criterion N (...): PASS` or `... FAIL` line.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::catch_unwind;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semstream::apps::{export_omop, Condition};
use semstream::clock::Timestamp;
use semstream::encoder::{
    encode::subject_iri, encode_record, resource_shapes, EncoderRegistry, InputFormat,
};
use semstream::fhir::{
    parse_bundle_json, AbnormalFlag, DomainRecord, EncounterClass, EncounterRecord,
    EncounterStatus, ObservationCode, ObservationRecord, Sex,
};
use semstream::hl7v2::{extract_observations, parse_message, serialize_message};
use semstream::query::{evaluate, poll, Filter, PollCursor, Row, StreamingQuery};
use semstream::rdf::infer::{apply_rules, InferenceRule};
use semstream::rdf::pattern::{Bindings, PatternTerm, TriplePattern};
use semstream::rdf::shape::{validate_shape, ViolationKind};
use semstream::rdf::turtle::{parse_turtle, serialize_turtle};
use semstream::rdf::{ResourceGraph, Term, Triple, FHIR_NS, RDF_TYPE};
use semstream::simgen::generate_patient;
use semstream::store::{Store, StoreSnapshot, Window};
use semstream_cli::{load_config, run, validate, Overrides, RunReport};

fn check(label: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    match catch_unwind(body) {
        Ok(()) => println!("criterion {label}: PASS"),
        Err(cause) => {
            println!("criterion {label}: FAIL");
            std::panic::resume_unwind(cause);
        }
    }
}

/// The ORU^R01 example message, as printed in the source literature.
const EXAMPLE_ORU: &str = concat!(
    "MSH|^~\\&|GHH LAB|ELAB-3|GHH OE|BLDG4|200202150930||ORU^R01|CNTRL-3456|P|2.4\r",
    "PID|||555-44-4444||EVERYWOMAN^EVE^E^^^^L|JONES|19620320|F|||153 FERNWOOD DR.^",
    "^STATESVILLE^OH^35292||(206)3345232|(206)752-121||||AC555444444||67-A4335^OH^20030520\r",
    "OBR|1|845439^GHH OE|1045813^GHH LAB|1554-5^GLUCOSE|||200202150730|||||||||",
    "555-55-5555^PRIMARY^PATRICIA P^^^^MD^^|||||||||F||||||444-44-4444^HIPPOCRATES^HOWARD H^^^^MD\r",
    "OBX|1|SN|1554-5^GLUCOSE^POST 12H CFST:MCNC:PT:SER/PLAS:QN||^182|mg/dl|70_105|H|||F\r",
);

#[test]
fn criterion_1_hl7_example_fidelity() {
    check("1 (HL7 example message fidelity)", || {
        let msg = parse_message(EXAMPLE_ORU).unwrap();
        let ids: Vec<&str> = msg.segments.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["MSH", "PID", "OBR", "OBX"]);

        let (patient, observations) = extract_observations(&msg).unwrap();
        assert_eq!(patient.id, "555-44-4444");
        assert_eq!(patient.family, "EVERYWOMAN");
        assert_eq!(patient.given, "EVE");
        assert_eq!(
            patient.dob,
            chrono::NaiveDate::from_ymd_opt(1962, 3, 20).unwrap()
        );
        assert_eq!(patient.sex, Sex::Female);

        assert_eq!(observations.len(), 1);
        let obs = &observations[0];
        assert_eq!(obs.code.code, "1554-5");
        assert!(obs.code.display.starts_with("GLUCOSE"));
        assert_eq!(obs.value, 182.0);
        assert_eq!(obs.units, "mg/dl");
        assert_eq!(obs.reference_range.as_deref(), Some("70_105"));
        assert_eq!(obs.abnormal_flag, Some(AbnormalFlag::High));

        // serialize ∘ parse is a structural fixpoint.
        let wire = serialize_message(&msg);
        let reparsed = parse_message(&wire).unwrap();
        assert_eq!(reparsed, msg);
        assert_eq!(serialize_message(&reparsed), wire);
    });
}

#[test]
fn criterion_2_bundle_envelope_fidelity() {
    check("2 (FHIR bundle envelope fidelity)", || {
        let bundle = r#"{
            "resourceType": "Bundle",
            "type": "message",
            "entry": [
                { "resource": {
                    "resourceType": "MessageHeader",
                    "id": "CNTRL-3456",
                    "timestamp": "2002-02-15T09:30:00-04:00",
                    "event": {
                        "system": "http://hl7.org/fhir/message-type",
                        "code": "observation-provide"
                    },
                    "source": { "name": "GHH LAB", "endpoint": "urn:GHH-LAB" },
                    "destination": { "name": "GHH OE" },
                    "data": { "reference": "DiagnosticReport/1045813" }
                } }
            ]
        }"#;
        let parsed = parse_bundle_json(bundle).unwrap();
        let env = &parsed.envelope;
        assert_eq!(env.control_id, "CNTRL-3456");
        assert_eq!(env.event_code, "observation-provide");
        assert_eq!(env.source_name, "GHH LAB");
        assert_eq!(env.source_endpoint, "urn:GHH-LAB");
        assert_eq!(env.destination_name, "GHH OE");
        assert_eq!(env.sent_at.to_rfc3339(), "2002-02-15T09:30:00-04:00");
        assert_eq!(env.data_reference, "DiagnosticReport/1045813");
        assert!(parsed.records.is_empty());
    });
}

#[test]
fn criterion_3_syllogism_inference() {
    check("3 (syllogism inference)", || {
        let socrates = Term::iri("urn:ex:socrates");
        let man = Term::iri("urn:ex:man");
        let mortal = Term::iri("urn:ex:mortal");
        let base: BTreeSet<Triple> = [
            Triple::new(socrates.clone(), "urn:ex:isA", man.clone()),
            Triple::new(man.clone(), "urn:ex:is", mortal.clone()),
        ]
        .into_iter()
        .collect();
        let rule =
            InferenceRule::parse("?x <urn:ex:isA> ?c & ?c <urn:ex:is> ?p => ?x <urn:ex:is> ?p")
                .unwrap();

        let closure = apply_rules(&base, &[rule.clone()]);
        assert_eq!(closure.len(), 3);
        assert!(closure.contains(&Triple::new(socrates, "urn:ex:is", mortal)));
        assert!(closure.is_superset(&base));
        // Idempotent: the closure is a fixpoint.
        assert_eq!(apply_rules(&closure, &[rule]), closure);
    });
}

/// Wraps loose triples in a snapshot so `evaluate` can see them.
fn snapshot_of(triples: BTreeSet<Triple>, ingested_at: Timestamp) -> StoreSnapshot {
    let root = triples
        .iter()
        .find(|t| t.predicate == RDF_TYPE)
        .and_then(|t| t.subject.as_iri())
        .unwrap_or("urn:test:root")
        .to_string();
    let graph = ResourceGraph {
        root,
        triples,
        ingested_at,
    };
    let mut snapshot = StoreSnapshot::default();
    snapshot
        .time_index
        .entry(ingested_at)
        .or_default()
        .insert(graph.root.clone());
    snapshot.root_index.insert(graph.root.clone(), graph);
    snapshot
}

/// Independent oracle: enumerates every assignment of one triple per
/// pattern (nested loops via an index odometer), unifies by hand, then
/// applies filters and projection. Shares no code with `evaluate`'s join.
fn brute_force_rows(query: &StreamingQuery, triples: &[Triple]) -> BTreeSet<Row> {
    fn unify(slot: &PatternTerm, actual: Term, bound: &mut Bindings) -> bool {
        match slot {
            PatternTerm::Concrete(expected) => *expected == actual,
            PatternTerm::Var(name) => match bound.get(name) {
                Some(existing) => *existing == actual,
                None => {
                    bound.insert(name.clone(), actual);
                    true
                }
            },
        }
    }

    let mut full: BTreeSet<Bindings> = BTreeSet::new();
    let k = query.patterns.len();
    let mut odometer = vec![0usize; k];
    if triples.is_empty() {
        return BTreeSet::new();
    }
    'outer: loop {
        let mut bound = Bindings::new();
        let mut ok = true;
        for (pattern, &i) in query.patterns.iter().zip(&odometer) {
            let t = &triples[i];
            if !unify(&pattern.subject, t.subject.clone(), &mut bound)
                || !unify(&pattern.predicate, Term::iri(&t.predicate), &mut bound)
                || !unify(&pattern.object, t.object.clone(), &mut bound)
            {
                ok = false;
                break;
            }
        }
        if ok {
            full.insert(bound);
        }
        for d in (0..k).rev() {
            odometer[d] += 1;
            if odometer[d] < triples.len() {
                continue 'outer;
            }
            odometer[d] = 0;
        }
        break;
    }

    let mut rows = BTreeSet::new();
    for bound in full {
        let passes = query.filters.iter().all(|f| {
            bound
                .get(&f.variable)
                .and_then(Term::as_number)
                .is_some_and(|n| f.comparator.holds(n, f.constant))
        });
        if passes {
            let row: Row = query
                .select
                .iter()
                .map(|v| (v.clone(), bound[v].clone()))
                .collect();
            rows.insert(row);
        }
    }
    rows
}

fn random_instance(rng: &mut ChaCha8Rng) -> (BTreeSet<Triple>, StreamingQuery) {
    let subjects: Vec<String> = (0..6).map(|i| format!("urn:t:s{i}")).collect();
    let predicates: Vec<String> = (0..4).map(|i| format!("urn:t:p{i}")).collect();
    let object = |rng: &mut ChaCha8Rng| match rng.gen_range(0..3) {
        0 => Term::decimal(rng.gen_range(0..40) as f64),
        1 => Term::iri(&format!("urn:t:o{}", rng.gen_range(0..5))),
        _ => Term::string(&format!("tag-{}", rng.gen_range(0..5))),
    };

    let n = rng.gen_range(20..=200);
    let mut triples = BTreeSet::new();
    for _ in 0..n {
        let s = &subjects[rng.gen_range(0..subjects.len())];
        let p = &predicates[rng.gen_range(0..predicates.len())];
        triples.insert(Triple::new(Term::iri(s), p, object(rng)));
    }

    let k = rng.gen_range(1..=3);
    let mut patterns = Vec::new();
    let mut object_vars = Vec::new();
    for i in 0..k {
        // Patterns share subject variables to exercise real joins.
        let subject = PatternTerm::var(if rng.gen_bool(0.7) { "a" } else { "b" });
        let predicate =
            PatternTerm::Concrete(Term::iri(&predicates[rng.gen_range(0..predicates.len())]));
        let object_term = if rng.gen_bool(0.7) {
            let v = format!("v{i}");
            object_vars.push(v.clone());
            PatternTerm::var(&v)
        } else {
            PatternTerm::Concrete(object(rng))
        };
        patterns.push(TriplePattern::new(subject, predicate, object_term));
    }

    let mut filters = Vec::new();
    if !object_vars.is_empty() && rng.gen_bool(0.6) {
        let v = &object_vars[rng.gen_range(0..object_vars.len())];
        let op = ["<", "<=", "=", ">=", ">"][rng.gen_range(0..5)];
        let c = rng.gen_range(0..40);
        filters.push(Filter::parse(&format!("?{v} {op} {c}")).unwrap());
    }

    let mut bound: BTreeSet<String> = patterns
        .iter()
        .flat_map(|p| p.variables())
        .map(str::to_string)
        .collect();
    for f in &filters {
        bound.insert(f.variable.clone());
    }
    let all: Vec<String> = bound.into_iter().collect();
    let select: Vec<String> = if rng.gen_bool(0.5) {
        all.clone()
    } else {
        let keep = rng.gen_range(1..=all.len());
        all.into_iter().take(keep).collect()
    };

    let query = StreamingQuery {
        name: "random".into(),
        patterns,
        filters,
        select,
        poll_interval_s: 1.0,
    };
    query.validate().unwrap();
    (triples, query)
}

#[test]
fn criterion_4_query_oracle_equivalence() {
    check("4 (query oracle equivalence)", || {
        // Deterministic spot check: the literature's over-120 threshold.
        let mut triples = BTreeSet::new();
        for (i, value) in [118.0, 125.0, 190.0].into_iter().enumerate() {
            let s = Term::iri(&subject_iri("Observation", &format!("obs-{i}")));
            triples.insert(Triple::new(
                s.clone(),
                RDF_TYPE,
                Term::iri(&format!("{FHIR_NS}Observation")),
            ));
            triples.insert(Triple::new(
                s.clone(),
                &format!("{FHIR_NS}Observation.code.coding.code"),
                Term::string("8480-6"),
            ));
            triples.insert(Triple::new(
                s,
                &format!("{FHIR_NS}Observation.valueQuantity.value"),
                Term::decimal(value),
            ));
        }
        let query = StreamingQuery::parse(
            "bp_over_120",
            &[
                "?o fhir:Observation.code.coding.code \"8480-6\"",
                "?o fhir:Observation.valueQuantity.value ?value",
            ],
            &["?value > 120"],
            &["o", "value"],
            1.0,
        )
        .unwrap();
        let flat: Vec<Triple> = triples.iter().cloned().collect();
        let snapshot = snapshot_of(triples, Timestamp(1));
        let result = evaluate(&query, &snapshot, None);
        assert_eq!(result.rows.len(), 2);
        assert_eq!(result.rows, brute_force_rows(&query, &flat));

        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        for _ in 0..30 {
            let (triples, query) = random_instance(&mut rng);
            let flat: Vec<Triple> = triples.iter().cloned().collect();
            let snapshot = snapshot_of(triples, Timestamp(1));
            let evaluated = evaluate(&query, &snapshot, None);
            assert_eq!(evaluated.rows, brute_force_rows(&query, &flat));
        }
    });
}

fn observation_graph(index: u32, patient: &str, value: f64, at: Timestamp) -> ResourceGraph {
    let rec = ObservationRecord {
        id: format!("stream-obs-{index}"),
        patient_id: patient.to_string(),
        encounter_id: None,
        code: ObservationCode {
            system: "http://loinc.org".into(),
            code: "8480-6".into(),
            display: "SYSTOLIC BLOOD PRESSURE".into(),
        },
        value,
        units: "mmHg".into(),
        reference_range: None,
        abnormal_flag: None,
        effective_at: at,
        performer: None,
    };
    encode_record(&DomainRecord::Observation(rec), at)
}

#[test]
fn criterion_5_streaming_windowed_polls() {
    check("5 (windowed streaming polls)", || {
        let store = Store::new();
        let query = StreamingQuery::parse(
            "systolic",
            &[
                "?o fhir:Observation.code.coding.code \"8480-6\"",
                "?o fhir:Observation.valueQuantity.value ?value",
            ],
            &["?value > 120"],
            &["o", "value"],
            1.0,
        )
        .unwrap();

        // 10 virtual seconds at 5 graphs/second, one graph every 200 ms.
        let mut cursor = PollCursor::new("systolic", Timestamp(0));
        let mut union: BTreeSet<Row> = BTreeSet::new();
        let mut naive_sizes = Vec::new();
        let mut index = 0u32;
        for second in 1..=10i64 {
            for step in 0..5i64 {
                let at = Timestamp((second - 1) * 1000 + step * 200 + 200);
                store.insert_graph(observation_graph(index, "p1", 100.0 + index as f64, at));
                index += 1;
                // The negative control the watermark design fixes: naive
                // re-evaluation of the whole store at every arrival.
                naive_sizes.push(evaluate(&query, &store.snapshot(), None).rows.len());
            }
            let now = Timestamp(second * 1000);
            let (results, next) = poll(&query, &cursor, &store, now).unwrap();
            assert_eq!(
                results.window,
                Some((cursor.last_high_watermark, now)),
                "poll windows partition the timeline"
            );
            // Row count is bounded by this window's arrivals (5 graphs).
            assert!(results.rows.len() <= 5);
            // Each arrival window's rows match a direct windowed evaluate.
            let window = Window::new(cursor.last_high_watermark, now).unwrap();
            let direct = evaluate(&query, &store.snapshot(), Some(window));
            assert_eq!(results.rows, direct.rows);
            // No row is ever delivered twice.
            assert!(union.is_disjoint(&results.rows));
            union.extend(results.rows);
            cursor = next;
        }

        let final_rows = evaluate(&query, &store.snapshot(), None).rows;
        assert_eq!(union, final_rows);
        assert_eq!(final_rows.len(), 29); // values 121..=149 out of 100..=149

        // The naive strategy's result sizes grow monotonically and keep
        // re-reporting old rows; the last re-evaluation repeats everything.
        assert!(naive_sizes.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*naive_sizes.last().unwrap(), final_rows.len());
        assert!(naive_sizes.iter().sum::<usize>() > final_rows.len());
    });
}

#[test]
fn criterion_6_n_plus_m_architecture() {
    check("6 (N+M encoder architecture)", || {
        let registry = EncoderRegistry::current();
        assert_eq!(registry.decoders.len(), 3);
        assert_eq!(registry.encoders.len(), 3);
        assert_eq!(registry.routine_count(), 6);
        let distinct: BTreeSet<&str> = registry
            .decoders
            .iter()
            .chain(registry.encoders.iter())
            .copied()
            .collect();
        assert_eq!(distinct.len(), 6);
        assert_eq!(registry.encoders, ["Patient", "Encounter", "Observation"]);
        for format in [InputFormat::Pipe, InputFormat::FhirJson, InputFormat::Hl7v2] {
            assert!(registry.decoders.contains(&format.name()));
        }

        // Stage 2 (RDF generation) must not import any stage-1 wire-format
        // module: its only input is the shared domain record type.
        let stage2 = include_str!("../../core/src/encoder/encode.rs");
        for forbidden in [
            "crate::hl7v2",
            "crate::pipe",
            "crate::fhir::parse",
            "parse_message",
            "parse_bundle_json",
            "serde_json",
            "super::decode",
            "crate::encoder::decode",
        ] {
            assert!(
                !stage2.contains(forbidden),
                "stage-2 encoder references stage-1 module via `{forbidden}`"
            );
        }
    });
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn run_example(name: &str) -> RunReport {
    let config = load_config(&config_path(name)).unwrap();
    let pipeline = validate(&config, &Overrides::default()).unwrap();
    let report = run(&pipeline).unwrap();
    assert!(report.conserved(), "{name}: conservation violated");
    report
}

#[test]
fn criterion_7_scenario_separation() {
    check("7 (end-to-end scenario separation)", || {
        let hypertension = run_example("hypertension.example.toml");
        assert!(!hypertension.events.is_empty());
        for event in &hypertension.events {
            assert_eq!(event.condition, Condition::Hypertension);
            assert!(!event.evidence.is_empty());
            for e in &event.evidence {
                assert_eq!(e.code, "8480-6");
                assert!(e.value > 140.0, "evidence {} not above threshold", e.value);
            }
        }

        let hypothermia = run_example("hypothermia.example.toml");
        assert!(!hypothermia.events.is_empty());
        for event in &hypothermia.events {
            assert_eq!(event.condition, Condition::Hypothermia);
            let by_code: BTreeMap<&str, f64> = event
                .evidence
                .iter()
                .map(|e| (e.code.as_str(), e.value))
                .collect();
            assert!(by_code["8310-5"] < 35.0);
            assert!(by_code["8480-6"] < 90.0);
            assert!(by_code["8867-4"] > 100.0);
        }

        let normal = run_example("normal.example.toml");
        assert!(normal.events.is_empty());
        assert_eq!(normal.events_emitted, 0);

        let figure = run_example("figure3.example.toml");
        assert!(!figure.events.is_empty());
        for event in &figure.events {
            assert!(event.evidence.iter().all(|e| e.value > 120.0));
        }

        // Same seed, same report, bit for bit.
        assert_eq!(run_example("hypertension.example.toml"), hypertension);
        assert_eq!(run_example("hypothermia.example.toml"), hypothermia);
        assert_eq!(run_example("normal.example.toml"), normal);
    });
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn criterion_8_omop_export() {
    check("8 (OMOP export)", || {
        let msg = parse_message(EXAMPLE_ORU).unwrap();
        let (eve, mut observations) = extract_observations(&msg).unwrap();
        let second = generate_patient(7, 0);

        let encounters = [
            EncounterRecord {
                id: "enc-1".into(),
                patient_id: eve.id.clone(),
                class: EncounterClass::Inpatient,
                start: Timestamp::parse_rfc3339("2002-02-15T07:00:00Z").unwrap(),
                end: Timestamp::parse_rfc3339("2002-02-15T12:00:00Z"),
                status: EncounterStatus::Finished,
            },
            EncounterRecord {
                id: "enc-2".into(),
                patient_id: second.id.clone(),
                class: EncounterClass::Emergency,
                start: Timestamp::parse_rfc3339("2002-02-16T09:00:00Z").unwrap(),
                end: None,
                status: EncounterStatus::InProgress,
            },
        ];

        let vitals = [
            ("8480-6", 132.0, "mmHg"),
            ("8462-4", 85.0, "mmHg"),
            ("8867-4", 72.0, "bpm"),
            ("8310-5", 36.8, "Cel"),
            ("8480-6", 141.0, "mmHg"),
        ];
        for (i, (code, value, units)) in vitals.into_iter().enumerate() {
            observations.push(ObservationRecord {
                id: format!("vital-{i}"),
                patient_id: if i % 2 == 0 {
                    second.id.clone()
                } else {
                    eve.id.clone()
                },
                encounter_id: None,
                code: ObservationCode {
                    system: "http://loinc.org".into(),
                    code: code.into(),
                    display: code.into(),
                },
                value,
                units: units.into(),
                reference_range: None,
                abnormal_flag: None,
                effective_at: Timestamp::parse_rfc3339("2002-02-16T10:00:00Z").unwrap(),
                performer: None,
            });
        }
        assert_eq!(observations.len(), 6);

        let store = Store::new();
        let mut at = 0i64;
        let mut insert = |rec: DomainRecord| {
            at += 1;
            store.insert_graph(encode_record(&rec, Timestamp(at)));
        };
        insert(DomainRecord::Patient(eve.clone()));
        insert(DomainRecord::Patient(second.clone()));
        for e in &encounters {
            insert(DomainRecord::Encounter(e.clone()));
        }
        for o in &observations {
            insert(DomainRecord::Observation(o.clone()));
        }

        let out = tempfile::tempdir().unwrap();
        let report = export_omop(&store.snapshot(), out.path()).unwrap();
        assert_eq!(report.orphaned_rows, 0);
        assert_eq!(report.unmapped_codes, 0);

        let person = read_csv(&out.path().join("PERSON.csv"));
        let visit = read_csv(&out.path().join("VISIT_OCCURRENCE.csv"));
        let measurement = read_csv(&out.path().join("MEASUREMENT.csv"));
        assert_eq!(person.len(), 1 + 2);
        assert_eq!(visit.len(), 1 + 2);
        assert_eq!(measurement.len(), 1 + 6);

        // Referential integrity: every person_id a row cites exists.
        let person_ids: BTreeSet<&str> = person[1..].iter().map(|r| r[0].as_str()).collect();
        assert_eq!(person_ids.len(), 2);
        for row in &visit[1..] {
            assert!(person_ids.contains(row[1].as_str()));
        }
        for row in &measurement[1..] {
            assert!(person_ids.contains(row[1].as_str()));
        }

        // The example glucose reading: value 182, unit mg/dl, LOINC 1554-5.
        let glucose: Vec<_> = measurement[1..]
            .iter()
            .filter(|r| r[6] == "1554-5")
            .collect();
        assert_eq!(glucose.len(), 1);
        assert_eq!(glucose[0][2], "3049187");
        assert_eq!(glucose[0][4], "182");
        assert_eq!(glucose[0][5], "mg/dl");

        // Export is byte-deterministic.
        let out2 = tempfile::tempdir().unwrap();
        export_omop(&store.snapshot(), out2.path()).unwrap();
        for file in ["PERSON.csv", "VISIT_OCCURRENCE.csv", "MEASUREMENT.csv"] {
            assert_eq!(
                std::fs::read(out.path().join(file)).unwrap(),
                std::fs::read(out2.path().join(file)).unwrap()
            );
        }
    });
}

fn random_term(rng: &mut ChaCha8Rng) -> Term {
    match rng.gen_range(0..5) {
        0 => Term::iri(&format!("urn:r:{}", rng.gen_range(0..50))),
        1 => Term::decimal(rng.gen_range(-5000..5000) as f64 / 10.0),
        2 => Term::date(
            chrono::NaiveDate::from_num_days_from_ce_opt(rng.gen_range(700_000..740_000)).unwrap(),
        ),
        3 => Term::date_time(Timestamp(rng.gen_range(0..4_000_000_000i64))),
        _ => {
            // Strings exercising every escape the serializer must handle.
            let tricky = ["plain", "qu\"ote", "back\\slash", "new\nline", "tab\there", "é↑"];
            Term::string(tricky[rng.gen_range(0..tricky.len())])
        }
    }
}

#[test]
fn criterion_9_turtle_round_trip() {
    check("9 (Turtle round-trip)", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x7071);
        for _ in 0..300 {
            let n = rng.gen_range(1..=30);
            let mut triples = BTreeSet::new();
            for _ in 0..n {
                triples.insert(Triple::new(
                    Term::iri(&format!("urn:r:s{}", rng.gen_range(0..8))),
                    &format!("urn:r:p{}", rng.gen_range(0..6)),
                    random_term(&mut rng),
                ));
            }
            let text = serialize_turtle(&triples);
            let parsed = parse_turtle(&text).unwrap();
            assert_eq!(parsed, triples, "parse ∘ serialize is identity");

            // Byte determinism: the same set built in reverse insertion
            // order serializes to the same bytes.
            let mut reversed = BTreeSet::new();
            for t in triples.iter().rev() {
                reversed.insert(t.clone());
            }
            assert_eq!(serialize_turtle(&reversed), text);
            assert_eq!(serialize_turtle(&parsed), text);
        }
    });
}

#[test]
fn criterion_10_shape_validation() {
    check("10 (shape validation)", || {
        let msg = parse_message(EXAMPLE_ORU).unwrap();
        let (patient, observations) = extract_observations(&msg).unwrap();
        let encounter = EncounterRecord {
            id: "enc-1".into(),
            patient_id: patient.id.clone(),
            class: EncounterClass::Inpatient,
            start: Timestamp::parse_rfc3339("2002-02-15T07:00:00Z").unwrap(),
            end: None,
            status: EncounterStatus::InProgress,
        };
        let records = [
            DomainRecord::Patient(patient),
            DomainRecord::Encounter(encounter),
            DomainRecord::Observation(observations[0].clone()),
        ];
        let shapes = resource_shapes();

        for rec in &records {
            let graph = encode_record(rec, Timestamp(1));
            let target = format!("{FHIR_NS}{}", rec.resource_type());
            let shape = shapes.iter().find(|s| s.target_type == target).unwrap();
            let report = validate_shape(&graph, shape).unwrap();
            assert!(report.conforms, "{target}: {:?}", report.violations);
            assert!(report.violations.is_empty());

            // Deleting any required predicate yields exactly one MIN_COUNT
            // violation naming that predicate.
            for constraint in shape.constraints.iter().filter(|c| c.min_count >= 1) {
                let mut broken = graph.clone();
                broken
                    .triples
                    .retain(|t| t.predicate != constraint.predicate);
                let report = validate_shape(&broken, shape).unwrap();
                assert!(!report.conforms);
                assert_eq!(report.violations.len(), 1);
                assert_eq!(report.violations[0].kind, ViolationKind::MinCount);
                assert_eq!(report.violations[0].predicate, constraint.predicate);
            }
        }
    });
}
