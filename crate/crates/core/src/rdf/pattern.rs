//! Triple patterns: terms with variables, binding maps, and the small
//! text grammar used by query, rule, and shape config files.
//!
//! Grammar for one pattern: three whitespace-separated terms, where a term
//! is `?var`, `<iri>`, `prefix:local`, a quoted string (optionally
//! `^^xsd:type`d), or a bare number.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{expand_prefixed, Datatype, Term, Triple};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("bad pattern term `{0}`")]
pub struct PatternParseError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatternTerm {
    Var(String),
    Concrete(Term),
}

impl PatternTerm {
    pub fn var(name: &str) -> PatternTerm {
        PatternTerm::Var(name.to_string())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            PatternTerm::Var(v) => Some(v),
            PatternTerm::Concrete(_) => None,
        }
    }
}

impl fmt::Display for PatternTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PatternTerm::Var(v) => write!(f, "?{v}"),
            PatternTerm::Concrete(t) => write!(f, "{t:?}"),
        }
    }
}

/// Variable-to-term assignment accumulated while joining patterns.
pub type Bindings = BTreeMap<String, Term>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TriplePattern {
    pub subject: PatternTerm,
    pub predicate: PatternTerm,
    pub object: PatternTerm,
}

impl TriplePattern {
    pub fn new(subject: PatternTerm, predicate: PatternTerm, object: PatternTerm) -> Self {
        TriplePattern {
            subject,
            predicate,
            object,
        }
    }

    pub fn variables(&self) -> Vec<&str> {
        [&self.subject, &self.predicate, &self.object]
            .into_iter()
            .filter_map(|t| t.as_var())
            .collect()
    }

    /// Extends `bindings` if the triple matches under them; `None` on
    /// mismatch. Existing bindings are never changed.
    pub fn match_triple(&self, triple: &Triple, bindings: &Bindings) -> Option<Bindings> {
        let mut out = bindings.clone();
        let positions = [
            (&self.subject, triple.subject.clone()),
            (&self.predicate, Term::Iri(triple.predicate.clone())),
            (&self.object, triple.object.clone()),
        ];
        for (pattern, actual) in positions {
            match pattern {
                PatternTerm::Concrete(expected) => {
                    if *expected != actual {
                        return None;
                    }
                }
                PatternTerm::Var(name) => match out.get(name) {
                    Some(bound) if *bound != actual => return None,
                    Some(_) => {}
                    None => {
                        out.insert(name.clone(), actual);
                    }
                },
            }
        }
        Some(out)
    }

    /// Instantiates the pattern under complete bindings.
    pub fn instantiate(&self, bindings: &Bindings) -> Option<Triple> {
        let resolve = |p: &PatternTerm| -> Option<Term> {
            match p {
                PatternTerm::Concrete(t) => Some(t.clone()),
                PatternTerm::Var(name) => bindings.get(name).cloned(),
            }
        };
        let subject = resolve(&self.subject)?;
        let predicate = match resolve(&self.predicate)? {
            Term::Iri(iri) => iri,
            _ => return None,
        };
        let object = resolve(&self.object)?;
        if subject.is_literal() {
            return None;
        }
        Some(Triple {
            subject,
            predicate,
            object,
        })
    }
}

pub fn parse_term(token: &str) -> Result<PatternTerm, PatternParseError> {
    let bad = || PatternParseError(token.to_string());
    if let Some(var) = token.strip_prefix('?') {
        if var.is_empty() || !var.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(bad());
        }
        return Ok(PatternTerm::var(var));
    }
    if let Some(inner) = token.strip_prefix('<') {
        let iri = inner.strip_suffix('>').ok_or_else(bad)?;
        return Ok(PatternTerm::Concrete(Term::iri(iri)));
    }
    if token.starts_with('"') {
        let (lexical, rest) = token[1..].split_once('"').ok_or_else(bad)?;
        let datatype = match rest {
            "" => Datatype::String,
            _ => {
                let local = rest
                    .strip_prefix("^^xsd:")
                    .ok_or_else(bad)?;
                Datatype::from_xsd_local(local).ok_or_else(bad)?
            }
        };
        if !datatype.accepts(lexical) {
            return Err(bad());
        }
        return Ok(PatternTerm::Concrete(Term::Literal {
            lexical: lexical.to_string(),
            datatype,
        }));
    }
    if token.parse::<f64>().is_ok() {
        let datatype = if token.parse::<i64>().is_ok() {
            Datatype::Integer
        } else {
            Datatype::Decimal
        };
        return Ok(PatternTerm::Concrete(Term::Literal {
            lexical: token.to_string(),
            datatype,
        }));
    }
    expand_prefixed(token)
        .map(|iri| PatternTerm::Concrete(Term::Iri(iri)))
        .ok_or_else(bad)
}

/// Parses `subject predicate object` into a pattern.
pub fn parse_pattern(text: &str) -> Result<TriplePattern, PatternParseError> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(PatternParseError(text.to_string()));
    }
    Ok(TriplePattern::new(
        parse_term(tokens[0])?,
        parse_term(tokens[1])?,
        parse_term(tokens[2])?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdf::FHIR_NS;

    #[test]
    fn parses_pattern_text() {
        let p = parse_pattern("?o rdf:type fhir:Observation").unwrap();
        assert_eq!(p.subject, PatternTerm::var("o"));
        assert_eq!(
            p.object,
            PatternTerm::Concrete(Term::iri(&format!("{FHIR_NS}Observation")))
        );
        assert!(parse_pattern("?o rdf:type").is_err());
        assert!(parse_pattern("?o unknown:p ?v").is_err());
    }

    #[test]
    fn parses_literal_terms() {
        assert_eq!(
            parse_term("120").unwrap(),
            PatternTerm::Concrete(Term::Literal {
                lexical: "120".into(),
                datatype: Datatype::Integer
            })
        );
        assert_eq!(
            parse_term("\"8480-6\"").unwrap(),
            PatternTerm::Concrete(Term::string("8480-6"))
        );
        assert_eq!(
            parse_term("\"120\"^^xsd:decimal").unwrap(),
            PatternTerm::Concrete(Term::Literal {
                lexical: "120".into(),
                datatype: Datatype::Decimal
            })
        );
    }

    #[test]
    fn matching_respects_existing_bindings() {
        let p = parse_pattern("?s <urn:x:p> ?v").unwrap();
        let t1 = Triple::new(Term::iri("urn:x:a"), "urn:x:p", Term::decimal(1.0));
        let t2 = Triple::new(Term::iri("urn:x:b"), "urn:x:p", Term::decimal(2.0));
        let b = p.match_triple(&t1, &Bindings::new()).unwrap();
        assert_eq!(b["s"], Term::iri("urn:x:a"));
        // ?s already bound to a different subject: no match.
        assert!(p.match_triple(&t2, &b).is_none());
        assert!(p.match_triple(&t1, &b).is_some());
    }

    #[test]
    fn instantiation_requires_all_variables_bound() {
        let p = parse_pattern("?s <urn:x:p> ?v").unwrap();
        let mut b = Bindings::new();
        b.insert("s".into(), Term::iri("urn:x:a"));
        assert!(p.instantiate(&b).is_none());
        b.insert("v".into(), Term::decimal(3.0));
        let t = p.instantiate(&b).unwrap();
        assert_eq!(t.object, Term::decimal(3.0));
    }
}
