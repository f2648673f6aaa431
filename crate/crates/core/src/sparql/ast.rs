//! Abstract syntax for the supported SPARQL subset.
//!
//! Prefixed names are expanded during parsing, so every [`Term::Iri`] holds an
//! absolute IRI and the tree carries no prologue.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
pub const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";
pub const XSD_DECIMAL: &str = "http://www.w3.org/2001/XMLSchema#decimal";
pub const XSD_DOUBLE: &str = "http://www.w3.org/2001/XMLSchema#double";
pub const XSD_BOOLEAN: &str = "http://www.w3.org/2001/XMLSchema#boolean";

/// A query variable, stored without its `?`/`$` sigil.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Var(String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        debug_assert!(!name.is_empty() && !name.starts_with(['?', '$']));
        Var(name)
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "?{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub lexical: String,
    pub datatype: Option<String>,
    pub language: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Var(Var),
    Iri(String),
    Literal(Literal),
    BlankNode(String),
}

impl Term {
    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    /// Variables and blank nodes both join graph patterns; blank nodes get a
    /// `_:` prefixed key so they never collide with variable names.
    pub fn join_key(&self) -> Option<String> {
        match self {
            Term::Var(v) => Some(v.name().to_owned()),
            Term::BlankNode(label) => Some(format!("_:{label}")),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: Term,
    pub predicate: Term,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Self {
        debug_assert!(!matches!(subject, Term::Literal(_)));
        debug_assert!(!matches!(predicate, Term::Literal(_)));
        TriplePattern {
            subject,
            predicate,
            object,
        }
    }

    pub fn terms(&self) -> [&Term; 3] {
        [&self.subject, &self.predicate, &self.object]
    }

    pub fn variables(&self) -> impl Iterator<Item = &Var> {
        self.terms().into_iter().filter_map(Term::as_var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AggregateFunction {
    Count,
    Sum,
    Avg,
    Min,
    Max,
    Sample,
    GroupConcat,
}

impl AggregateFunction {
    pub fn from_keyword(word: &str) -> Option<Self> {
        Some(match word.to_ascii_uppercase().as_str() {
            "COUNT" => Self::Count,
            "SUM" => Self::Sum,
            "AVG" => Self::Avg,
            "MIN" => Self::Min,
            "MAX" => Self::Max,
            "SAMPLE" => Self::Sample,
            "GROUP_CONCAT" => Self::GroupConcat,
            _ => return None,
        })
    }

    pub fn keyword(self) -> &'static str {
        match self {
            Self::Count => "COUNT",
            Self::Sum => "SUM",
            Self::Avg => "AVG",
            Self::Min => "MIN",
            Self::Max => "MAX",
            Self::Sample => "SAMPLE",
            Self::GroupConcat => "GROUP_CONCAT",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Or,
    And,
    Equal,
    NotEqual,
    Less,
    Greater,
    LessOrEqual,
    GreaterOrEqual,
    Add,
    Subtract,
    Multiply,
    Divide,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Or => "||",
            Self::And => "&&",
            Self::Equal => "=",
            Self::NotEqual => "!=",
            Self::Less => "<",
            Self::Greater => ">",
            Self::LessOrEqual => "<=",
            Self::GreaterOrEqual => ">=",
            Self::Add => "+",
            Self::Subtract => "-",
            Self::Multiply => "*",
            Self::Divide => "/",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Not,
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expression {
    Term(Term),
    Binary(BinaryOp, Box<Expression>, Box<Expression>),
    Unary(UnaryOp, Box<Expression>),
    In {
        negated: bool,
        operand: Box<Expression>,
        list: Vec<Expression>,
    },
    /// Built-in call such as `REGEX`, `LANG` or `BOUND`; `name` is the
    /// canonical spelling.
    Builtin {
        name: String,
        args: Vec<Expression>,
    },
    FunctionCall {
        iri: String,
        distinct: bool,
        args: Vec<Expression>,
    },
    /// `arg == None` is the `*` argument (only valid for COUNT).
    Aggregate {
        function: AggregateFunction,
        distinct: bool,
        arg: Option<Box<Expression>>,
        separator: Option<String>,
    },
    Exists {
        negated: bool,
        patterns: Vec<PatternElement>,
    },
}

impl Expression {
    pub fn var(name: &str) -> Self {
        Expression::Term(Term::Var(Var::new(name)))
    }

    /// Every variable mentioned in the expression, in first-occurrence order.
    pub fn variables(&self) -> Vec<&Var> {
        let mut out = Vec::new();
        self.collect_variables(&mut out);
        let mut seen = BTreeSet::new();
        out.retain(|v| seen.insert(*v));
        out
    }

    fn collect_variables<'a>(&'a self, out: &mut Vec<&'a Var>) {
        match self {
            Expression::Term(Term::Var(v)) => out.push(v),
            Expression::Term(_) => {}
            Expression::Binary(_, l, r) => {
                l.collect_variables(out);
                r.collect_variables(out);
            }
            Expression::Unary(_, e) => e.collect_variables(out),
            Expression::In { operand, list, .. } => {
                operand.collect_variables(out);
                list.iter().for_each(|e| e.collect_variables(out));
            }
            Expression::Builtin { args, .. } | Expression::FunctionCall { args, .. } => {
                args.iter().for_each(|e| e.collect_variables(out))
            }
            Expression::Aggregate { arg, .. } => {
                if let Some(arg) = arg {
                    arg.collect_variables(out);
                }
            }
            Expression::Exists { patterns, .. } => {
                for element in patterns {
                    element.collect_in_scope(out);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProjectionItem {
    PlainVar(Var),
    Bound(Expression, Var),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProjectionKind {
    Star,
    Items(Vec<ProjectionItem>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Projection {
    pub kind: ProjectionKind,
    pub distinct: bool,
    pub reduced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternElement {
    Bgp(Vec<TriplePattern>),
    Optional(Vec<PatternElement>),
    Union(Vec<PatternElement>, Vec<PatternElement>),
    /// A nested `{ ... }` group that is not part of a UNION.
    Group(Vec<PatternElement>),
    Filter(Expression),
    Bind(Expression, Var),
    Values {
        vars: Vec<Var>,
        /// `None` cells are `UNDEF`.
        rows: Vec<Vec<Option<Term>>>,
    },
}

impl PatternElement {
    fn collect_in_scope<'a>(&'a self, out: &mut Vec<&'a Var>) {
        match self {
            PatternElement::Bgp(triples) => {
                for t in triples {
                    out.extend(t.variables());
                }
            }
            PatternElement::Optional(inner) | PatternElement::Group(inner) => {
                inner.iter().for_each(|e| e.collect_in_scope(out))
            }
            PatternElement::Union(l, r) => {
                l.iter().chain(r).for_each(|e| e.collect_in_scope(out))
            }
            PatternElement::Filter(_) => {}
            PatternElement::Bind(_, v) => out.push(v),
            PatternElement::Values { vars, .. } => out.extend(vars),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SortDirection {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Modifiers {
    pub order_by: Vec<(Expression, SortDirection)>,
    pub group_by: Vec<Expression>,
    pub having: Vec<Expression>,
    pub limit: Option<u64>,
    pub offset: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QueryForm {
    Ask,
    Select(Projection),
}

/// Form tag without the projection payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormKind {
    Ask,
    Select,
}

impl fmt::Display for FormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormKind::Ask => "ASK",
            FormKind::Select => "SELECT",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryAst {
    pub form: QueryForm,
    pub where_patterns: Vec<PatternElement>,
    pub modifiers: Modifiers,
}

/// Answer range as `(length, start)`; `length == None` means unbounded
/// (an OFFSET without a LIMIT).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnswerRange {
    pub length: Option<u64>,
    pub start: u64,
}

impl fmt::Display for AnswerRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.length {
            Some(l) => write!(f, "(l={l}, s={})", self.start),
            None => write!(f, "(l=unbounded, s={})", self.start),
        }
    }
}

impl QueryAst {
    pub fn form_kind(&self) -> FormKind {
        match self.form {
            QueryForm::Ask => FormKind::Ask,
            QueryForm::Select(_) => FormKind::Select,
        }
    }

    pub fn projection(&self) -> Option<&Projection> {
        match &self.form {
            QueryForm::Select(p) => Some(p),
            QueryForm::Ask => None,
        }
    }

    /// Variables in scope of the WHERE clause (triple patterns, BIND aliases
    /// and VALUES), in first-occurrence order. FILTER-only variables are not
    /// in scope.
    pub fn pattern_variables(&self) -> Vec<&Var> {
        let mut out = Vec::new();
        for element in &self.where_patterns {
            element.collect_in_scope(&mut out);
        }
        let mut seen = BTreeSet::new();
        out.retain(|v| seen.insert(*v));
        out
    }

    /// Every variable anywhere in the query; used to pick fresh names.
    pub fn all_variable_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self
            .pattern_variables()
            .into_iter()
            .map(|v| v.name().to_owned())
            .collect();
        let mut exprs: Vec<&Expression> = Vec::new();
        fn walk<'a>(elements: &'a [PatternElement], exprs: &mut Vec<&'a Expression>) {
            for e in elements {
                match e {
                    PatternElement::Filter(x) | PatternElement::Bind(x, _) => exprs.push(x),
                    PatternElement::Optional(i) | PatternElement::Group(i) => walk(i, exprs),
                    PatternElement::Union(l, r) => {
                        walk(l, exprs);
                        walk(r, exprs);
                    }
                    _ => {}
                }
            }
        }
        walk(&self.where_patterns, &mut exprs);
        if let Some(Projection {
            kind: ProjectionKind::Items(items),
            ..
        }) = self.projection()
        {
            for item in items {
                match item {
                    ProjectionItem::PlainVar(v) => {
                        names.insert(v.name().to_owned());
                    }
                    ProjectionItem::Bound(e, v) => {
                        names.insert(v.name().to_owned());
                        exprs.push(e);
                    }
                }
            }
        }
        let m = &self.modifiers;
        exprs.extend(m.order_by.iter().map(|(e, _)| e));
        exprs.extend(&m.group_by);
        exprs.extend(&m.having);
        for e in exprs {
            names.extend(e.variables().into_iter().map(|v| v.name().to_owned()));
        }
        names
    }
}
