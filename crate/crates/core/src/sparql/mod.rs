//! SPARQL subset: parsing, canonical serialization and the structural
//! accessors the evaluation criteria are defined over.

pub mod ast;
pub mod lexer;
mod parser;
pub mod prefixes;
mod serialize;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use ast::*;
pub use parser::{parse_query, ParseError};
pub use prefixes::{PrefixEnv, PrefixError, DEFAULT_PREFIXES};
pub use serialize::serialize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StructureError {
    #[error("ASK queries have no target variables")]
    AskHasNoTargets,
}

pub fn query_form(ast: &QueryAst) -> FormKind {
    ast.form_kind()
}

/// Variables a SELECT query asks to be solved.
///
/// Aliases of projected expressions are replaced by the variables of their
/// defining expression; `SELECT *` yields every in-scope pattern variable.
pub fn target_variables(ast: &QueryAst) -> Result<BTreeSet<Var>, StructureError> {
    let projection = ast.projection().ok_or(StructureError::AskHasNoTargets)?;
    let mut targets = BTreeSet::new();
    match &projection.kind {
        ProjectionKind::Star => targets.extend(ast.pattern_variables().into_iter().cloned()),
        ProjectionKind::Items(items) => {
            for item in items {
                match item {
                    ProjectionItem::PlainVar(v) => {
                        targets.insert(v.clone());
                    }
                    ProjectionItem::Bound(expr, _) => {
                        targets.extend(expr.variables().into_iter().cloned());
                    }
                }
            }
        }
    }
    Ok(targets)
}

/// All triple patterns in document order, with OPTIONAL, UNION and nested
/// groups flattened. Patterns inside FILTER EXISTS are not included.
pub fn triple_patterns(ast: &QueryAst) -> Vec<&TriplePattern> {
    fn walk<'a>(elements: &'a [PatternElement], out: &mut Vec<&'a TriplePattern>) {
        for element in elements {
            match element {
                PatternElement::Bgp(triples) => out.extend(triples),
                PatternElement::Optional(inner) | PatternElement::Group(inner) => walk(inner, out),
                PatternElement::Union(left, right) => {
                    walk(left, out);
                    walk(right, out);
                }
                PatternElement::Filter(_) | PatternElement::Bind(..) | PatternElement::Values { .. } => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(&ast.where_patterns, &mut out);
    out
}

/// BIND aliases in the WHERE clause mapped to the variables of their
/// expressions (one level, no transitive resolution).
pub fn bind_aliases(ast: &QueryAst) -> BTreeMap<Var, BTreeSet<Var>> {
    fn walk(elements: &[PatternElement], out: &mut BTreeMap<Var, BTreeSet<Var>>) {
        for element in elements {
            match element {
                PatternElement::Bind(expr, alias) => {
                    out.entry(alias.clone())
                        .or_default()
                        .extend(expr.variables().into_iter().cloned());
                }
                PatternElement::Optional(inner) | PatternElement::Group(inner) => walk(inner, out),
                PatternElement::Union(left, right) => {
                    walk(left, out);
                    walk(right, out);
                }
                _ => {}
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(&ast.where_patterns, &mut out);
    out
}

/// Answer range expressed by LIMIT/OFFSET: `start = offset + 1`.
pub fn range_of(ast: &QueryAst) -> Option<AnswerRange> {
    let m = &ast.modifiers;
    if m.limit.is_none() && m.offset.is_none() {
        return None;
    }
    Some(AnswerRange {
        length: m.limit,
        start: m.offset.unwrap_or(0).saturating_add(1),
    })
}
