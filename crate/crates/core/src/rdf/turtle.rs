//! Deterministic Turtle-style serialization and the companion parser.
//!
//! Output is canonical: prefixes first, subjects sorted lexicographically,
//! predicate/object pairs grouped per subject and sorted. Equal triple sets
//! always produce byte-identical documents.

use std::collections::BTreeSet;

use thiserror::Error;

use super::{Datatype, Term, Triple, PREFIXES};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("turtle syntax error at line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn compress(iri: &str) -> String {
    for (prefix, ns) in PREFIXES {
        if let Some(local) = iri.strip_prefix(ns) {
            // Locals with characters outside the prefixed-name set fall
            // back to the angle-bracket form.
            if !local.is_empty()
                && local
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_')
                && !local.ends_with('.')
            {
                return format!("{prefix}:{local}");
            }
        }
    }
    format!("<{iri}>")
}

fn escape_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            _ => out.push(c),
        }
    }
    out
}

fn render_term(term: &Term) -> String {
    match term {
        Term::Iri(v) => compress(v),
        Term::Blank(label) => format!("_:{label}"),
        Term::Literal { lexical, datatype } => format!(
            "\"{}\"^^xsd:{}",
            escape_literal(lexical),
            datatype.xsd_local()
        ),
    }
}

/// Serializes a triple set to canonical Turtle text.
pub fn serialize_turtle(triples: &BTreeSet<Triple>) -> String {
    let mut out = String::new();
    for (prefix, ns) in PREFIXES {
        out.push_str(&format!("@prefix {prefix}: <{ns}> .\n"));
    }
    if triples.is_empty() {
        return out;
    }
    out.push('\n');

    // BTreeSet ordering already sorts by (subject, predicate, object).
    let mut by_subject: Vec<(&Term, Vec<&Triple>)> = Vec::new();
    for t in triples {
        match by_subject.last_mut() {
            Some((s, group)) if **s == t.subject => group.push(t),
            _ => by_subject.push((&t.subject, vec![t])),
        }
    }
    for (subject, group) in by_subject {
        out.push_str(&render_term(subject));
        for (i, t) in group.iter().enumerate() {
            if i > 0 {
                out.push_str(" ;\n   ");
            }
            out.push(' ');
            out.push_str(&compress(&t.predicate));
            out.push(' ');
            out.push_str(&render_term(&t.object));
        }
        out.push_str(" .\n");
    }
    out
}

struct Scanner<'a> {
    input: &'a [u8],
    pos: usize,
    line: usize,
    column: usize,
}

impl<'a> Scanner<'a> {
    fn new(input: &'a str) -> Self {
        Scanner {
            input: input.as_bytes(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn err(&self, message: &str) -> SyntaxError {
        SyntaxError {
            line: self.line,
            column: self.column,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.peek()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.bump();
        }
    }

    fn eat(&mut self, expected: u8) -> Result<(), SyntaxError> {
        if self.peek() == Some(expected) {
            self.bump();
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", expected as char)))
        }
    }

    fn read_iri(&mut self) -> Result<String, SyntaxError> {
        self.eat(b'<')?;
        let mut out = Vec::new();
        loop {
            match self.bump() {
                Some(b'>') => {
                    return String::from_utf8(out).map_err(|_| self.err("invalid UTF-8 in IRI"))
                }
                Some(c) => out.push(c),
                None => return Err(self.err("unterminated IRI")),
            }
        }
    }

    fn read_name(&mut self) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || matches!(c, b'.' | b'-' | b'_' | b':') {
                out.push(c as char);
                self.bump();
            } else {
                break;
            }
        }
        // A trailing `.` is the statement terminator, not part of the name.
        while out.ends_with('.') {
            out.pop();
            self.pos -= 1;
            self.column -= 1;
        }
        out
    }

    fn read_string(&mut self) -> Result<String, SyntaxError> {
        self.eat(b'"')?;
        let mut out = Vec::new();
        loop {
            match self.bump() {
                Some(b'"') => {
                    return String::from_utf8(out)
                        .map_err(|_| self.err("invalid UTF-8 in string literal"))
                }
                Some(b'\\') => match self.bump() {
                    Some(b'\\') => out.push(b'\\'),
                    Some(b'"') => out.push(b'"'),
                    Some(b'n') => out.push(b'\n'),
                    Some(b'r') => out.push(b'\r'),
                    Some(b't') => out.push(b'\t'),
                    _ => return Err(self.err("bad escape in string literal")),
                },
                Some(c) => out.push(c),
                None => return Err(self.err("unterminated string literal")),
            }
        }
    }

    fn read_term(&mut self) -> Result<Term, SyntaxError> {
        match self.peek() {
            Some(b'<') => Ok(Term::Iri(self.read_iri()?)),
            Some(b'_') => {
                self.bump();
                self.eat(b':')?;
                Ok(Term::Blank(self.read_name()))
            }
            Some(b'"') => {
                let lexical = self.read_string()?;
                let mut datatype = Datatype::String;
                if self.peek() == Some(b'^') {
                    self.bump();
                    self.eat(b'^')?;
                    let name = self.read_name();
                    let local = name
                        .strip_prefix("xsd:")
                        .ok_or_else(|| self.err("expected xsd: datatype"))?;
                    datatype = Datatype::from_xsd_local(local)
                        .ok_or_else(|| self.err(&format!("unknown datatype `{name}`")))?;
                }
                if !datatype.accepts(&lexical) {
                    return Err(self.err(&format!(
                        "lexical form `{lexical}` invalid for xsd:{}",
                        datatype.xsd_local()
                    )));
                }
                Ok(Term::Literal { lexical, datatype })
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.read_name();
                super::expand_prefixed(&name)
                    .map(Term::Iri)
                    .ok_or_else(|| self.err(&format!("unknown prefix in `{name}`")))
            }
            _ => Err(self.err("expected a term")),
        }
    }
}

/// Parses documents produced by [`serialize_turtle`]: `@prefix` headers,
/// subject blocks with `;`-grouped predicate/object pairs.
pub fn parse_turtle(text: &str) -> Result<BTreeSet<Triple>, SyntaxError> {
    let mut scanner = Scanner::new(text);
    let mut triples = BTreeSet::new();
    loop {
        scanner.skip_ws();
        if scanner.peek().is_none() {
            return Ok(triples);
        }
        if scanner.input[scanner.pos..].starts_with(b"@prefix") {
            // Prefixes are fixed engine-wide; header lines are skipped
            // whole (namespace IRIs may themselves contain `.`).
            while let Some(c) = scanner.bump() {
                if c == b'\n' {
                    break;
                }
            }
            continue;
        }
        let subject = scanner.read_term()?;
        if subject.is_literal() {
            return Err(scanner.err("literal in subject position"));
        }
        loop {
            scanner.skip_ws();
            let predicate = match scanner.read_term()? {
                Term::Iri(iri) => iri,
                _ => return Err(scanner.err("predicate must be an IRI")),
            };
            scanner.skip_ws();
            let object = scanner.read_term()?;
            triples.insert(Triple {
                subject: subject.clone(),
                predicate,
                object,
            });
            scanner.skip_ws();
            match scanner.bump() {
                Some(b';') => continue,
                Some(b'.') => break,
                _ => return Err(scanner.err("expected `;` or `.`")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rdf::FHIR_NS;

    fn triple(s: &str, p: &str, o: Term) -> Triple {
        Triple::new(Term::iri(s), p, o)
    }

    #[test]
    fn single_decimal_statement() {
        let mut set = BTreeSet::new();
        set.insert(triple(
            "urn:vitals:bloodPressure",
            "urn:sem:value",
            Term::decimal(120.0),
        ));
        let text = serialize_turtle(&set);
        assert!(text.contains("<urn:vitals:bloodPressure> sem:value \"120\"^^xsd:decimal ."));
        assert_eq!(parse_turtle(&text).unwrap(), set);
    }

    #[test]
    fn empty_set_serializes_to_prefix_header_only() {
        let text = serialize_turtle(&BTreeSet::new());
        assert!(text.starts_with("@prefix fhir:"));
        assert_eq!(text.lines().count(), PREFIXES.len());
        assert!(parse_turtle(&text).unwrap().is_empty());
    }

    #[test]
    fn groups_predicates_per_subject_deterministically() {
        let mut set = BTreeSet::new();
        set.insert(triple(
            "urn:fhir:Patient/1",
            &format!("{FHIR_NS}Patient.name.family"),
            Term::string("EVERYWOMAN"),
        ));
        set.insert(triple(
            "urn:fhir:Patient/1",
            super::super::RDF_TYPE,
            Term::iri(&format!("{FHIR_NS}Patient")),
        ));
        let a = serialize_turtle(&set);
        let b = serialize_turtle(&set.clone());
        assert_eq!(a, b);
        assert!(a.contains(" ;\n"));
        assert_eq!(parse_turtle(&a).unwrap(), set);
    }

    #[test]
    fn string_escapes_round_trip() {
        let mut set = BTreeSet::new();
        set.insert(triple(
            "urn:x:s",
            "urn:x:p",
            Term::string("line1\nquote\" back\\slash\ttab"),
        ));
        let text = serialize_turtle(&set);
        assert_eq!(parse_turtle(&text).unwrap(), set);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_turtle("<urn:x:s> <urn:x:p> $bad .").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.column > 1);
        let err = parse_turtle("<urn:x:s> \n nope:x <urn:x:o> .").unwrap_err();
        assert_eq!(err.line, 2);
    }
}
