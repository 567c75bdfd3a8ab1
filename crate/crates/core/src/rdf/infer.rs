//! Forward-chaining rule inference to the least fixpoint.
//!
//! Rules never invent terms (every consequent variable is bound by an
//! antecedent, and there are no function symbols), so the closure over a
//! finite triple set always terminates.

use std::collections::BTreeSet;

use thiserror::Error;

use super::pattern::{parse_pattern, Bindings, PatternParseError, TriplePattern};
use super::Triple;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("consequent variable ?{0} is not bound by any antecedent")]
    UnboundConsequentVariable(String),
    #[error("rule has no antecedents")]
    NoAntecedents,
    #[error("rule `{text}`: {source}")]
    Parse {
        text: String,
        source: PatternParseError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InferenceRule {
    pub antecedents: Vec<TriplePattern>,
    pub consequent: TriplePattern,
}

impl InferenceRule {
    pub fn new(
        antecedents: Vec<TriplePattern>,
        consequent: TriplePattern,
    ) -> Result<Self, RuleError> {
        if antecedents.is_empty() {
            return Err(RuleError::NoAntecedents);
        }
        let bound: BTreeSet<&str> = antecedents.iter().flat_map(|p| p.variables()).collect();
        for var in consequent.variables() {
            if !bound.contains(var) {
                return Err(RuleError::UnboundConsequentVariable(var.to_string()));
            }
        }
        Ok(InferenceRule {
            antecedents,
            consequent,
        })
    }

    /// Text form: `pattern & pattern => pattern`.
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        let parse = |s: &str| {
            parse_pattern(s.trim()).map_err(|source| RuleError::Parse {
                text: text.to_string(),
                source,
            })
        };
        let (body, head) = text.split_once("=>").ok_or_else(|| RuleError::Parse {
            text: text.to_string(),
            source: PatternParseError("missing `=>`".into()),
        })?;
        let antecedents = body
            .split('&')
            .map(parse)
            .collect::<Result<Vec<_>, _>>()?;
        InferenceRule::new(antecedents, parse(head)?)
    }
}

fn matches_for(
    patterns: &[TriplePattern],
    triples: &BTreeSet<Triple>,
    bindings: Bindings,
    out: &mut Vec<Bindings>,
) {
    match patterns.split_first() {
        None => out.push(bindings),
        Some((first, rest)) => {
            for triple in triples {
                if let Some(extended) = first.match_triple(triple, &bindings) {
                    matches_for(rest, triples, extended, out);
                }
            }
        }
    }
}

/// Least fixpoint of rule application: repeatedly instantiate consequents
/// of fully matched rules until nothing new appears. The input is always a
/// subset of the output.
pub fn apply_rules(triples: &BTreeSet<Triple>, rules: &[InferenceRule]) -> BTreeSet<Triple> {
    let mut closure = triples.clone();
    loop {
        let mut fresh: Vec<Triple> = Vec::new();
        for rule in rules {
            let mut all_bindings = Vec::new();
            matches_for(&rule.antecedents, &closure, Bindings::new(), &mut all_bindings);
            for bindings in all_bindings {
                if let Some(t) = rule.consequent.instantiate(&bindings) {
                    if !closure.contains(&t) {
                        fresh.push(t);
                    }
                }
            }
        }
        if fresh.is_empty() {
            return closure;
        }
        closure.extend(fresh);
    }
}
