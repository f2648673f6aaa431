//! Canonical text rendering of a [`QueryAst`].
//!
//! IRIs are always written in full, so the output reparses without any prefix
//! environment.

use std::fmt::Write;

use super::ast::*;
use super::lexer::{tokenize, TokenKind};

pub fn serialize(ast: &QueryAst) -> String {
    let mut out = String::new();
    match &ast.form {
        QueryForm::Ask => out.push_str("ASK"),
        QueryForm::Select(projection) => {
            out.push_str("SELECT");
            if projection.distinct {
                out.push_str(" DISTINCT");
            } else if projection.reduced {
                out.push_str(" REDUCED");
            }
            match &projection.kind {
                ProjectionKind::Star => out.push_str(" *"),
                ProjectionKind::Items(items) => {
                    for item in items {
                        out.push(' ');
                        match item {
                            ProjectionItem::PlainVar(v) => write_var(&mut out, v),
                            ProjectionItem::Bound(expr, alias) => {
                                out.push('(');
                                write_expression_top(&mut out, expr);
                                out.push_str(" AS ");
                                write_var(&mut out, alias);
                                out.push(')');
                            }
                        }
                    }
                }
            }
        }
    }
    out.push_str(" WHERE ");
    write_group(&mut out, &ast.where_patterns);
    write_modifiers(&mut out, &ast.modifiers);
    out
}

fn write_var(out: &mut String, v: &Var) {
    out.push('?');
    out.push_str(v.name());
}

fn write_iri(out: &mut String, iri: &str) {
    out.push('<');
    out.push_str(iri);
    out.push('>');
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

/// True when `lexical` re-lexes as exactly one numeric token of the kind
/// matching `datatype`, so it can be written without quotes.
fn is_bare_numeric(lexical: &str, datatype: &str) -> bool {
    let unsigned = lexical.strip_prefix(['+', '-']).unwrap_or(lexical);
    if unsigned.is_empty() || !unsigned.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return false;
    }
    let Ok(tokens) = tokenize(unsigned) else {
        return false;
    };
    if tokens.len() != 2 || tokens[0].end != unsigned.len() {
        return false;
    }
    matches!(
        (&tokens[0].kind, datatype),
        (TokenKind::Integer(_), XSD_INTEGER) | (TokenKind::Decimal(_), XSD_DECIMAL) | (TokenKind::Double(_), XSD_DOUBLE)
    )
}

fn write_literal(out: &mut String, lit: &Literal) {
    if let (Some(dt), None) = (&lit.datatype, &lit.language) {
        if is_bare_numeric(&lit.lexical, dt)
            || (dt == XSD_BOOLEAN && (lit.lexical == "true" || lit.lexical == "false"))
        {
            out.push_str(&lit.lexical);
            return;
        }
    }
    write_string(out, &lit.lexical);
    if let Some(lang) = &lit.language {
        out.push('@');
        out.push_str(lang);
    } else if let Some(dt) = &lit.datatype {
        out.push_str("^^");
        write_iri(out, dt);
    }
}

fn write_term(out: &mut String, term: &Term) {
    match term {
        Term::Var(v) => write_var(out, v),
        Term::Iri(iri) => write_iri(out, iri),
        Term::Literal(lit) => write_literal(out, lit),
        Term::BlankNode(label) => {
            out.push_str("_:");
            out.push_str(label);
        }
    }
}

fn write_group(out: &mut String, elements: &[PatternElement]) {
    out.push('{');
    for element in elements {
        out.push(' ');
        write_element(out, element);
    }
    out.push_str(" }");
}

fn write_element(out: &mut String, element: &PatternElement) {
    match element {
        PatternElement::Bgp(triples) => {
            for (i, t) in triples.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write_term(out, &t.subject);
                out.push(' ');
                match &t.predicate {
                    Term::Iri(iri) if iri == RDF_TYPE => out.push('a'),
                    other => write_term(out, other),
                }
                out.push(' ');
                write_term(out, &t.object);
                out.push_str(" .");
            }
        }
        PatternElement::Optional(inner) => {
            out.push_str("OPTIONAL ");
            write_group(out, inner);
        }
        PatternElement::Union(left, right) => {
            write_group(out, left);
            out.push_str(" UNION ");
            write_group(out, right);
        }
        PatternElement::Group(inner) => write_group(out, inner),
        PatternElement::Filter(expr) => {
            out.push_str("FILTER(");
            write_expression_top(out, expr);
            out.push(')');
        }
        PatternElement::Bind(expr, var) => {
            out.push_str("BIND(");
            write_expression_top(out, expr);
            out.push_str(" AS ");
            write_var(out, var);
            out.push(')');
        }
        PatternElement::Values { vars, rows } => {
            out.push_str("VALUES (");
            for (i, v) in vars.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                write_var(out, v);
            }
            out.push_str(") {");
            for row in rows {
                out.push_str(" (");
                for (i, cell) in row.iter().enumerate() {
                    if i > 0 {
                        out.push(' ');
                    }
                    match cell {
                        Some(term) => write_term(out, term),
                        None => out.push_str("UNDEF"),
                    }
                }
                out.push(')');
            }
            out.push_str(" }");
        }
    }
}

fn write_modifiers(out: &mut String, m: &Modifiers) {
    if !m.group_by.is_empty() {
        out.push_str(" GROUP BY");
        for expr in &m.group_by {
            out.push(' ');
            match expr {
                Expression::Term(Term::Var(v)) => write_var(out, v),
                other => {
                    out.push('(');
                    write_expression_top(out, other);
                    out.push(')');
                }
            }
        }
    }
    if !m.having.is_empty() {
        out.push_str(" HAVING");
        for expr in &m.having {
            out.push_str(" (");
            write_expression_top(out, expr);
            out.push(')');
        }
    }
    if !m.order_by.is_empty() {
        out.push_str(" ORDER BY");
        for (expr, direction) in &m.order_by {
            out.push(' ');
            match (expr, direction) {
                (Expression::Term(Term::Var(v)), SortDirection::Asc) => write_var(out, v),
                (expr, direction) => {
                    out.push_str(match direction {
                        SortDirection::Asc => "ASC(",
                        SortDirection::Desc => "DESC(",
                    });
                    write_expression_top(out, expr);
                    out.push(')');
                }
            }
        }
    }
    if let Some(limit) = m.limit {
        let _ = write!(out, " LIMIT {limit}");
    }
    if let Some(offset) = m.offset {
        let _ = write!(out, " OFFSET {offset}");
    }
}

/// Top-level expressions sit inside brackets already, so a binary operator
/// does not need its own pair.
fn write_expression_top(out: &mut String, expr: &Expression) {
    match expr {
        Expression::Binary(op, l, r) => {
            write_expression(out, l);
            let _ = write!(out, " {} ", op.symbol());
            write_expression(out, r);
        }
        other => write_expression(out, other),
    }
}

fn write_args(out: &mut String, args: &[Expression]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expression_top(out, a);
    }
    out.push(')');
}

fn write_expression(out: &mut String, expr: &Expression) {
    match expr {
        Expression::Term(term) => write_term(out, term),
        Expression::Binary(..) => {
            out.push('(');
            write_expression_top(out, expr);
            out.push(')');
        }
        Expression::Unary(op, inner) => {
            out.push(match op {
                UnaryOp::Not => '!',
                UnaryOp::Plus => '+',
                UnaryOp::Minus => '-',
            });
            let needs_parens = matches!(**inner, Expression::Unary(..) | Expression::In { .. })
                || matches!(&**inner, Expression::Term(Term::Literal(l)) if l.lexical.starts_with(['+', '-']));
            if needs_parens {
                out.push('(');
                write_expression_top(out, inner);
                out.push(')');
            } else {
                write_expression(out, inner);
            }
        }
        Expression::In { negated, operand, list } => {
            out.push('(');
            write_expression(out, operand);
            out.push_str(if *negated { " NOT IN " } else { " IN " });
            write_args(out, list);
            out.push(')');
        }
        Expression::Builtin { name, args } => {
            out.push_str(name);
            write_args(out, args);
        }
        Expression::FunctionCall { iri, distinct, args } => {
            write_iri(out, iri);
            if *distinct {
                out.push_str("(DISTINCT ");
                let mut inner = String::new();
                write_args(&mut inner, args);
                out.push_str(&inner[1..]);
            } else {
                write_args(out, args);
            }
        }
        Expression::Aggregate {
            function,
            distinct,
            arg,
            separator,
        } => {
            out.push_str(function.keyword());
            out.push('(');
            if *distinct {
                out.push_str("DISTINCT ");
            }
            match arg {
                Some(arg) => write_expression_top(out, arg),
                None => out.push('*'),
            }
            if let Some(sep) = separator {
                out.push_str(" ; SEPARATOR=");
                write_string(out, sep);
            }
            out.push(')');
        }
        Expression::Exists { negated, patterns } => {
            if *negated {
                out.push_str("NOT ");
            }
            out.push_str("EXISTS ");
            write_group(out, patterns);
        }
    }
}
