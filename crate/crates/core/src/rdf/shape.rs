//! Shape validation: a tiny count-and-datatype constraint language for
//! resource graphs.

use thiserror::Error;

use super::{Datatype, ResourceGraph, Term};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("graph root has rdf:type {actual}, shape targets {expected}")]
    ShapeTypeMismatch { expected: String, actual: String },
    #[error("constraint has min_count {min} > max_count {max}")]
    InvalidCounts { min: u32, max: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeConstraint {
    pub predicate: String,
    pub min_count: u32,
    /// `None` means unbounded.
    pub max_count: Option<u32>,
    pub datatype: Option<Datatype>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shape {
    pub target_type: String,
    pub constraints: Vec<ShapeConstraint>,
}

impl Shape {
    pub fn new(target_type: &str, constraints: Vec<ShapeConstraint>) -> Result<Self, ShapeError> {
        for c in &constraints {
            if let Some(max) = c.max_count {
                if c.min_count > max {
                    return Err(ShapeError::InvalidCounts {
                        min: c.min_count,
                        max,
                    });
                }
            }
        }
        Ok(Shape {
            target_type: target_type.to_string(),
            constraints,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    MinCount,
    MaxCount,
    Datatype,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub predicate: String,
    pub kind: ViolationKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConformanceReport {
    pub conforms: bool,
    pub violations: Vec<Violation>,
}

/// Checks every constraint against the triples whose subject is the graph
/// root. A root typed differently from the shape's target is an error, not
/// a non-conformance.
pub fn validate_shape(graph: &ResourceGraph, shape: &Shape) -> Result<ConformanceReport, ShapeError> {
    let actual_type = graph.resource_type().unwrap_or("");
    if actual_type != shape.target_type {
        return Err(ShapeError::ShapeTypeMismatch {
            expected: shape.target_type.clone(),
            actual: actual_type.to_string(),
        });
    }
    let root = Term::iri(&graph.root);
    let mut violations = Vec::new();
    for constraint in &shape.constraints {
        let objects: Vec<&Term> = graph
            .triples
            .iter()
            .filter(|t| t.subject == root && t.predicate == constraint.predicate)
            .map(|t| &t.object)
            .collect();
        let count = objects.len() as u32;
        if count < constraint.min_count {
            violations.push(Violation {
                predicate: constraint.predicate.clone(),
                kind: ViolationKind::MinCount,
                detail: format!("found {count}, need at least {}", constraint.min_count),
            });
        }
        if let Some(max) = constraint.max_count {
            if count > max {
                violations.push(Violation {
                    predicate: constraint.predicate.clone(),
                    kind: ViolationKind::MaxCount,
                    detail: format!("found {count}, allow at most {max}"),
                });
            }
        }
        if let Some(expected) = constraint.datatype {
            for object in &objects {
                let ok = matches!(object, Term::Literal { datatype, .. } if *datatype == expected);
                if !ok {
                    violations.push(Violation {
                        predicate: constraint.predicate.clone(),
                        kind: ViolationKind::Datatype,
                        detail: format!("expected xsd:{}", expected.xsd_local()),
                    });
                }
            }
        }
    }
    Ok(ConformanceReport {
        conforms: violations.is_empty(),
        violations,
    })
}
