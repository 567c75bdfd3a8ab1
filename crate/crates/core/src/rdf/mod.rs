//! RDF data model: terms, triples, resource graphs, Turtle text,
//! forward-chaining inference, and shape validation.

pub mod infer;
pub mod pattern;
pub mod shape;
pub mod turtle;

use std::collections::BTreeSet;

use crate::clock::Timestamp;

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const XSD_NS: &str = "http://www.w3.org/2001/XMLSchema#";
pub const FHIR_NS: &str = "http://hl7.org/fhir/";
pub const SEM_NS: &str = "urn:sem:";
pub const SEM_INGESTED_AT: &str = "urn:sem:ingestedAt";

/// Prefixes known to every serializer and pattern parser in the engine.
pub const PREFIXES: &[(&str, &str)] = &[
    ("fhir", FHIR_NS),
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("sem", SEM_NS),
    ("xsd", XSD_NS),
];

pub fn expand_prefixed(name: &str) -> Option<String> {
    let (prefix, local) = name.split_once(':')?;
    PREFIXES
        .iter()
        .find(|(p, _)| *p == prefix)
        .map(|(_, ns)| format!("{ns}{local}"))
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "camelCase")]
pub enum Datatype {
    String,
    Decimal,
    Integer,
    Date,
    DateTime,
}

impl Datatype {
    pub fn xsd_local(self) -> &'static str {
        match self {
            Datatype::String => "string",
            Datatype::Decimal => "decimal",
            Datatype::Integer => "integer",
            Datatype::Date => "date",
            Datatype::DateTime => "dateTime",
        }
    }

    pub fn from_xsd_local(s: &str) -> Option<Self> {
        match s {
            "string" => Some(Datatype::String),
            "decimal" => Some(Datatype::Decimal),
            "integer" => Some(Datatype::Integer),
            "date" => Some(Datatype::Date),
            "dateTime" => Some(Datatype::DateTime),
            _ => None,
        }
    }

    /// Checks a lexical form against this datatype.
    pub fn accepts(self, lexical: &str) -> bool {
        match self {
            Datatype::String => true,
            Datatype::Decimal => lexical.parse::<f64>().map(f64::is_finite).unwrap_or(false),
            Datatype::Integer => lexical.parse::<i64>().is_ok(),
            Datatype::Date => chrono::NaiveDate::parse_from_str(lexical, "%Y-%m-%d").is_ok(),
            Datatype::DateTime => Timestamp::parse_rfc3339(lexical).is_some(),
        }
    }
}

#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "camelCase")]
pub enum Term {
    Iri(String),
    Blank(String),
    Literal { lexical: String, datatype: Datatype },
}

impl Term {
    pub fn iri(value: &str) -> Term {
        Term::Iri(value.to_string())
    }

    pub fn string(value: &str) -> Term {
        Term::Literal {
            lexical: value.to_string(),
            datatype: Datatype::String,
        }
    }

    pub fn decimal(value: f64) -> Term {
        Term::Literal {
            lexical: format_decimal(value),
            datatype: Datatype::Decimal,
        }
    }

    pub fn date(value: chrono::NaiveDate) -> Term {
        Term::Literal {
            lexical: value.format("%Y-%m-%d").to_string(),
            datatype: Datatype::Date,
        }
    }

    pub fn date_time(value: Timestamp) -> Term {
        Term::Literal {
            lexical: value.to_rfc3339(),
            datatype: Datatype::DateTime,
        }
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Term::Literal { .. })
    }

    /// Numeric value of a decimal or integer literal.
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Term::Literal {
                lexical,
                datatype: Datatype::Decimal | Datatype::Integer,
            } => lexical.parse().ok(),
            _ => None,
        }
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri(v) => Some(v),
            _ => None,
        }
    }
}

/// Shortest round-tripping decimal rendering: `182` not `182.0`.
pub fn format_decimal(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub subject: Term,
    pub predicate: String,
    pub object: Term,
}

impl Triple {
    /// Subjects are IRIs or blanks, predicates always IRIs.
    pub fn new(subject: Term, predicate: &str, object: Term) -> Triple {
        assert!(!subject.is_literal(), "triple subject may not be a literal");
        Triple {
            subject,
            predicate: predicate.to_string(),
            object,
        }
    }
}

/// A set of triples rooted at one resource IRI, stamped with ingest time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourceGraph {
    pub root: String,
    pub triples: BTreeSet<Triple>,
    pub ingested_at: Timestamp,
}

impl ResourceGraph {
    /// Root must be the subject of at least one triple, exactly one of
    /// which is `rdf:type`.
    pub fn validate(&self) -> Result<(), String> {
        let root = Term::iri(&self.root);
        let mut type_count = 0;
        let mut rooted = false;
        for t in &self.triples {
            if t.subject == root {
                rooted = true;
                if t.predicate == RDF_TYPE {
                    type_count += 1;
                }
            }
        }
        if !rooted {
            return Err(format!("root {} has no triples", self.root));
        }
        if type_count != 1 {
            return Err(format!(
                "root {} has {type_count} rdf:type triples, expected exactly 1",
                self.root
            ));
        }
        Ok(())
    }

    /// The object IRI of the root's `rdf:type` triple.
    pub fn resource_type(&self) -> Option<&str> {
        let root = Term::iri(&self.root);
        self.triples
            .iter()
            .find(|t| t.subject == root && t.predicate == RDF_TYPE)
            .and_then(|t| t.object.as_iri())
    }

    /// Turtle rendering; the ingest timestamp travels as the
    /// `sem:ingestedAt` triple, so the text is self-contained.
    pub fn to_turtle(&self) -> String {
        turtle::serialize_turtle(&self.triples)
    }

    /// Inverse of [`to_turtle`](Self::to_turtle): root recovered from the
    /// `rdf:type` triple, ingest time from `sem:ingestedAt`.
    pub fn from_turtle(text: &str) -> Result<ResourceGraph, String> {
        let triples = turtle::parse_turtle(text).map_err(|e| e.to_string())?;
        let root = triples
            .iter()
            .find(|t| t.predicate == RDF_TYPE)
            .and_then(|t| t.subject.as_iri())
            .ok_or("graph has no rdf:type triple")?
            .to_string();
        let ingested_at = triples
            .iter()
            .find(|t| t.predicate == SEM_INGESTED_AT)
            .and_then(|t| match &t.object {
                Term::Literal { lexical, .. } => Timestamp::parse_rfc3339(lexical),
                _ => None,
            })
            .ok_or("graph has no sem:ingestedAt triple")?;
        let graph = ResourceGraph {
            root,
            triples,
            ingested_at,
        };
        graph.validate()?;
        Ok(graph)
    }
}
