//! Recursive-descent parser for the supported SPARQL subset.
//!
//! Anything outside the subset (property paths, subqueries, SERVICE, GRAPH,
//! MINUS, CONSTRUCT/DESCRIBE, dataset clauses) is rejected with a positioned
//! [`ParseError`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::prefixes::PrefixEnv;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    /// 1-based line.
    pub line: usize,
    /// 1-based column, counted in characters.
    pub column: usize,
    pub message: String,
    pub snippet: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "syntax error at {}:{}: {} (near {:?})",
            self.line, self.column, self.message, self.snippet
        )
    }
}

impl std::error::Error for ParseError {}

impl ParseError {
    fn at(text: &str, offset: usize, len: usize, message: impl Into<String>) -> Self {
        // Clamp to the last non-whitespace character so the position is
        // always inside the input.
        let trimmed_end = text.trim_end().len();
        let mut offset = offset.min(trimmed_end.saturating_sub(1));
        while offset > 0 && !text.is_char_boundary(offset) {
            offset -= 1;
        }
        let before = &text[..offset];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        let column = text[line_start..offset].chars().count() + 1;
        let snippet: String = if len > 0 {
            text[offset..].chars().take(len.clamp(1, 40)).collect()
        } else {
            text[offset..].chars().take(20).collect()
        };
        ParseError {
            line,
            column,
            message: message.into(),
            snippet,
        }
    }
}

/// Parse `text` into a [`QueryAst`]. Inline `PREFIX` declarations take
/// precedence over `env`.
pub fn parse_query(text: &str, env: &PrefixEnv) -> Result<QueryAst, ParseError> {
    if text.trim().is_empty() {
        return Err(ParseError {
            line: 1,
            column: 1,
            message: "empty query".into(),
            snippet: String::new(),
        });
    }
    let tokens = tokenize(text).map_err(|e| ParseError::at(text, e.offset, 1, e.message))?;
    let used_labels = tokens
        .iter()
        .filter_map(|t| match &t.kind {
            TokenKind::BlankNodeLabel(l) => Some(l.clone()),
            _ => None,
        })
        .collect();
    let mut parser = Parser {
        text,
        tokens,
        pos: 0,
        env,
        inline: BTreeMap::new(),
        base: None,
        used_labels,
        next_blank: 0,
    };
    parser.query()
}

type PResult<T> = Result<T, ParseError>;

const BUILTINS: &[&str] = &[
    "STR", "LANG", "LANGMATCHES", "DATATYPE", "BOUND", "IRI", "URI", "BNODE", "RAND", "ABS",
    "CEIL", "FLOOR", "ROUND", "CONCAT", "STRLEN", "UCASE", "LCASE", "ENCODE_FOR_URI",
    "CONTAINS", "STRSTARTS", "STRENDS", "STRBEFORE", "STRAFTER", "YEAR", "MONTH", "DAY",
    "HOURS", "MINUTES", "SECONDS", "TIMEZONE", "TZ", "NOW", "UUID", "STRUUID", "MD5", "SHA1",
    "SHA256", "SHA384", "SHA512", "COALESCE", "IF", "STRLANG", "STRDT", "sameTerm", "isIRI",
    "isURI", "isBLANK", "isLITERAL", "isNUMERIC", "REGEX", "SUBSTR", "REPLACE",
];

fn canonical_builtin(word: &str) -> Option<&'static str> {
    BUILTINS.iter().copied().find(|b| b.eq_ignore_ascii_case(word))
}

fn has_scheme(iri: &str) -> bool {
    let mut chars = iri.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    for c in chars {
        match c {
            ':' => return true,
            c if c.is_ascii_alphanumeric() || matches!(c, '+' | '-' | '.') => {}
            _ => return false,
        }
    }
    false
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    env: &'a PrefixEnv,
    inline: BTreeMap<String, String>,
    base: Option<url::Url>,
    used_labels: BTreeSet<String>,
    next_blank: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos].kind
    }

    fn peek_at(&self, n: usize) -> &TokenKind {
        let i = (self.pos + n).min(self.tokens.len() - 1);
        &self.tokens[i].kind
    }

    fn advance(&mut self) -> Token {
        let token = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        token
    }

    fn at_word(&self, keyword: &str) -> bool {
        self.peek().is_word(keyword)
    }

    fn eat_word(&mut self, keyword: &str) -> bool {
        if self.at_word(keyword) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek() == kind {
            self.advance();
            true
        } else {
            false
        }
    }

    fn error_here(&self, message: impl Into<String>) -> ParseError {
        let token = &self.tokens[self.pos];
        ParseError::at(self.text, token.start, token.end - token.start, message)
    }

    fn unexpected(&self, expected: &str) -> ParseError {
        self.error_here(format!("expected {expected}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, kind: TokenKind, expected: &str) -> PResult<()> {
        if self.eat(&kind) {
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn expect_word(&mut self, keyword: &str) -> PResult<()> {
        if self.eat_word(keyword) {
            Ok(())
        } else {
            Err(self.unexpected(keyword))
        }
    }

    fn query(&mut self) -> PResult<QueryAst> {
        self.prologue()?;
        let form = if self.eat_word("SELECT") {
            QueryForm::Select(self.projection()?)
        } else if self.eat_word("ASK") {
            QueryForm::Ask
        } else if self.at_word("CONSTRUCT") || self.at_word("DESCRIBE") {
            return Err(self.error_here("CONSTRUCT and DESCRIBE queries are not supported"));
        } else {
            return Err(self.unexpected("SELECT or ASK"));
        };
        if self.at_word("FROM") {
            return Err(self.error_here("dataset clauses (FROM) are not supported"));
        }
        self.eat_word("WHERE");
        let where_patterns = self.group()?;
        let modifiers = self.modifiers()?;
        if self.at_word("VALUES") {
            return Err(self.error_here("trailing VALUES blocks are not supported"));
        }
        if *self.peek() != TokenKind::Eof {
            return Err(self.unexpected("end of query"));
        }
        Ok(QueryAst {
            form,
            where_patterns,
            modifiers,
        })
    }

    fn prologue(&mut self) -> PResult<()> {
        loop {
            if self.eat_word("BASE") {
                let TokenKind::IriRef(iri) = self.peek().clone() else {
                    return Err(self.unexpected("IRI after BASE"));
                };
                let token = self.advance();
                let resolved = self.resolve_iri_ref(&iri, &token)?;
                self.base = Some(url::Url::parse(&resolved).map_err(|e| {
                    ParseError::at(self.text, token.start, token.end - token.start, format!("invalid BASE IRI: {e}"))
                })?);
            } else if self.eat_word("PREFIX") {
                let prefix = match self.peek().clone() {
                    TokenKind::PrefixedName { prefix, local } if local.is_empty() => {
                        self.advance();
                        prefix
                    }
                    _ => return Err(self.unexpected("prefix label such as 'foaf:'")),
                };
                let TokenKind::IriRef(iri) = self.peek().clone() else {
                    return Err(self.unexpected("namespace IRI"));
                };
                let token = self.advance();
                let resolved = self.resolve_iri_ref(&iri, &token)?;
                self.inline.insert(prefix, resolved);
            } else {
                return Ok(());
            }
        }
    }

    fn resolve_iri_ref(&self, iri: &str, token: &Token) -> PResult<String> {
        if has_scheme(iri) {
            return Ok(iri.to_owned());
        }
        match &self.base {
            Some(base) => base.join(iri).map(|u| u.to_string()).map_err(|e| {
                ParseError::at(self.text, token.start, token.end - token.start, format!("cannot resolve <{iri}>: {e}"))
            }),
            None => Err(ParseError::at(
                self.text,
                token.start,
                token.end - token.start,
                format!("relative IRI <{iri}> without BASE"),
            )),
        }
    }

    fn expand_pname(&self, prefix: &str, local: &str, token: &Token) -> PResult<String> {
        let ns = self
            .inline
            .get(prefix)
            .map(String::as_str)
            .or_else(|| self.env.get(prefix))
            .ok_or_else(|| {
                ParseError::at(
                    self.text,
                    token.start,
                    token.end - token.start,
                    format!("undeclared prefix '{prefix}:'"),
                )
            })?;
        Ok(format!("{ns}{local}"))
    }

    /// Consume an IRI token (IRIREF or prefixed name) if present.
    fn try_iri(&mut self) -> PResult<Option<String>> {
        let token = self.tokens[self.pos].clone();
        let iri = match &token.kind {
            TokenKind::IriRef(iri) => self.resolve_iri_ref(iri, &token)?,
            TokenKind::PrefixedName { prefix, local } => self.expand_pname(prefix, local, &token)?,
            _ => return Ok(None),
        };
        self.advance();
        Ok(Some(iri))
    }

    fn var(&mut self) -> PResult<Var> {
        match self.peek().clone() {
            TokenKind::Var(name) => {
                self.advance();
                Ok(Var::new(name))
            }
            _ => Err(self.unexpected("variable")),
        }
    }

    fn projection(&mut self) -> PResult<Projection> {
        let distinct = self.eat_word("DISTINCT");
        let reduced = !distinct && self.eat_word("REDUCED");
        if self.eat(&TokenKind::Star) {
            return Ok(Projection {
                kind: ProjectionKind::Star,
                distinct,
                reduced,
            });
        }
        let mut items = Vec::new();
        loop {
            match self.peek().clone() {
                TokenKind::Var(name) => {
                    self.advance();
                    items.push(ProjectionItem::PlainVar(Var::new(name)));
                }
                TokenKind::LParen => {
                    self.advance();
                    let expr = self.expression()?;
                    self.expect_word("AS")?;
                    let alias = self.var()?;
                    self.expect(TokenKind::RParen, "')'")?;
                    items.push(ProjectionItem::Bound(expr, alias));
                }
                TokenKind::Word(w) if AggregateFunction::from_keyword(&w).is_some() => {
                    return Err(self.error_here(format!(
                        "bare aggregate {w}(...) in projection; write ({w}(...) AS ?var)"
                    )));
                }
                _ => break,
            }
        }
        if items.is_empty() {
            return Err(self.unexpected("projection variable, '(' or '*'"));
        }
        let mut plain = BTreeSet::new();
        let mut aliases = BTreeSet::new();
        for item in &items {
            if let ProjectionItem::PlainVar(v) = item {
                plain.insert(v.clone());
            }
        }
        for item in &items {
            if let ProjectionItem::Bound(_, alias) = item {
                if plain.contains(alias) || !aliases.insert(alias.clone()) {
                    return Err(self.error_here(format!("projection alias {alias} is already in use")));
                }
            }
        }
        Ok(Projection {
            kind: ProjectionKind::Items(items),
            distinct,
            reduced,
        })
    }

    /// `{ ... }` group body.
    fn group(&mut self) -> PResult<Vec<PatternElement>> {
        self.expect(TokenKind::LBrace, "'{'")?;
        if self.at_word("SELECT") {
            return Err(self.error_here("subqueries are not supported"));
        }
        let mut elements: Vec<PatternElement> = Vec::new();
        loop {
            match self.peek().clone() {
                TokenKind::RBrace => {
                    self.advance();
                    return Ok(elements);
                }
                TokenKind::Eof => return Err(self.unexpected("'}'")),
                TokenKind::LBrace => {
                    let element = self.group_or_union()?;
                    elements.push(element);
                    self.eat(&TokenKind::Dot);
                }
                TokenKind::Word(w) => {
                    let upper = w.to_ascii_uppercase();
                    match upper.as_str() {
                        "OPTIONAL" => {
                            self.advance();
                            elements.push(PatternElement::Optional(self.group()?));
                        }
                        "FILTER" => {
                            self.advance();
                            elements.push(PatternElement::Filter(self.constraint()?));
                        }
                        "BIND" => {
                            self.advance();
                            self.expect(TokenKind::LParen, "'('")?;
                            let expr = self.expression()?;
                            self.expect_word("AS")?;
                            let var = self.var()?;
                            self.expect(TokenKind::RParen, "')'")?;
                            elements.push(PatternElement::Bind(expr, var));
                        }
                        "VALUES" => {
                            self.advance();
                            elements.push(self.values()?);
                        }
                        "MINUS" | "GRAPH" | "SERVICE" => {
                            return Err(self.error_here(format!("{upper} patterns are not supported")));
                        }
                        _ => {
                            self.triples_block(&mut elements)?;
                            continue;
                        }
                    }
                    self.eat(&TokenKind::Dot);
                }
                _ => self.triples_block(&mut elements)?,
            }
        }
    }

    fn group_or_union(&mut self) -> PResult<PatternElement> {
        let first = self.group()?;
        if !self.at_word("UNION") {
            return Ok(PatternElement::Group(first));
        }
        let mut acc = first;
        while self.eat_word("UNION") {
            let right = self.group()?;
            acc = vec![PatternElement::Union(acc, right)];
        }
        Ok(acc.pop().expect("union accumulator holds one element"))
    }

    /// One subject with its property list, followed by an optional '.'.
    fn triples_block(&mut self, elements: &mut Vec<PatternElement>) -> PResult<()> {
        let mut triples = Vec::new();
        let (subject, needs_props) = self.subject(&mut triples)?;
        if needs_props || self.starts_verb() {
            self.property_list(&subject, &mut triples)?;
        }
        match elements.last_mut() {
            Some(PatternElement::Bgp(existing)) => existing.extend(triples),
            _ => elements.push(PatternElement::Bgp(triples)),
        }
        if self.eat(&TokenKind::Dot) {
            return Ok(());
        }
        match self.peek() {
            TokenKind::RBrace | TokenKind::LBrace => Ok(()),
            TokenKind::Word(w)
                if ["OPTIONAL", "FILTER", "BIND", "VALUES", "MINUS", "GRAPH", "SERVICE"]
                    .iter()
                    .any(|k| w.eq_ignore_ascii_case(k)) =>
            {
                Ok(())
            }
            _ => Err(self.unexpected("'.', ';', ',' or '}'")),
        }
    }

    fn fresh_blank(&mut self) -> Term {
        loop {
            let label = format!("b{}", self.next_blank);
            self.next_blank += 1;
            if self.used_labels.insert(label.clone()) {
                return Term::BlankNode(label);
            }
        }
    }

    /// Returns the subject term and whether a property list is mandatory.
    fn subject(&mut self, triples: &mut Vec<TriplePattern>) -> PResult<(Term, bool)> {
        match self.peek().clone() {
            TokenKind::LBracket => {
                let term = self.blank_node_property_list(triples)?;
                let had_inner = !triples.is_empty();
                Ok((term, !had_inner))
            }
            TokenKind::LParen => Err(self.error_here("RDF collections are not supported")),
            TokenKind::String(_)
            | TokenKind::Integer(_)
            | TokenKind::Decimal(_)
            | TokenKind::Double(_)
            | TokenKind::Plus
            | TokenKind::Minus => Err(self.error_here("literal in subject position")),
            TokenKind::Word(w) if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") => {
                Err(self.error_here("literal in subject position"))
            }
            _ => match self.node()? {
                Some(term) => Ok((term, true)),
                None => Err(self.unexpected("triple pattern subject")),
            },
        }
    }

    /// Variable, IRI, blank node label or `[]`.
    fn node(&mut self) -> PResult<Option<Term>> {
        if let Some(iri) = self.try_iri()? {
            return Ok(Some(Term::Iri(iri)));
        }
        match self.peek().clone() {
            TokenKind::Var(name) => {
                self.advance();
                Ok(Some(Term::Var(Var::new(name))))
            }
            TokenKind::BlankNodeLabel(label) => {
                self.advance();
                Ok(Some(Term::BlankNode(label)))
            }
            _ => Ok(None),
        }
    }

    fn blank_node_property_list(&mut self, triples: &mut Vec<TriplePattern>) -> PResult<Term> {
        self.expect(TokenKind::LBracket, "'['")?;
        let term = self.fresh_blank();
        if self.eat(&TokenKind::RBracket) {
            return Ok(term);
        }
        self.property_list(&term, triples)?;
        self.expect(TokenKind::RBracket, "']'")?;
        Ok(term)
    }

    fn starts_verb(&self) -> bool {
        matches!(
            self.peek(),
            TokenKind::Var(_) | TokenKind::IriRef(_) | TokenKind::PrefixedName { .. }
        ) || matches!(self.peek(), TokenKind::Word(w) if w == "a")
            || self.starts_path()
    }

    fn starts_path(&self) -> bool {
        matches!(self.peek(), TokenKind::Caret | TokenKind::Bang | TokenKind::LParen)
    }

    fn property_list(&mut self, subject: &Term, triples: &mut Vec<TriplePattern>) -> PResult<()> {
        loop {
            let predicate = self.verb()?;
            loop {
                let object = self.object(triples)?;
                triples.push(TriplePattern::new(subject.clone(), predicate.clone(), object));
                if !self.eat(&TokenKind::Comma) {
                    break;
                }
            }
            if !self.eat(&TokenKind::Semicolon) {
                return Ok(());
            }
            while self.eat(&TokenKind::Semicolon) {}
            if !self.starts_verb() {
                return Ok(());
            }
        }
    }

    fn verb(&mut self) -> PResult<Term> {
        if self.starts_path() {
            return Err(self.error_here("property paths are not supported"));
        }
        let term = if matches!(self.peek(), TokenKind::Word(w) if w == "a") {
            self.advance();
            Term::Iri(RDF_TYPE.to_owned())
        } else {
            match self.peek() {
                TokenKind::Var(_) | TokenKind::IriRef(_) | TokenKind::PrefixedName { .. } => {
                    self.node()?.expect("verb token checked above")
                }
                _ => return Err(self.unexpected("predicate")),
            }
        };
        let is_path_op = match self.peek() {
            TokenKind::Slash | TokenKind::Pipe | TokenKind::Caret | TokenKind::Star | TokenKind::Question => true,
            TokenKind::Plus => !matches!(
                self.peek_at(1),
                TokenKind::Integer(_) | TokenKind::Decimal(_) | TokenKind::Double(_)
            ),
            _ => false,
        };
        if is_path_op {
            return Err(self.error_here("property paths are not supported"));
        }
        Ok(term)
    }

    fn object(&mut self, triples: &mut Vec<TriplePattern>) -> PResult<Term> {
        match self.peek() {
            TokenKind::LBracket => return self.blank_node_property_list(triples),
            TokenKind::LParen => return Err(self.error_here("RDF collections are not supported")),
            _ => {}
        }
        if let Some(term) = self.node()? {
            return Ok(term);
        }
        match self.rdf_literal()? {
            Some(lit) => Ok(Term::Literal(lit)),
            None => Err(self.unexpected("object")),
        }
    }

    /// String, numeric (optionally signed) or boolean literal.
    fn rdf_literal(&mut self) -> PResult<Option<Literal>> {
        let sign = match self.peek() {
            TokenKind::Plus | TokenKind::Minus
                if matches!(
                    self.peek_at(1),
                    TokenKind::Integer(_) | TokenKind::Decimal(_) | TokenKind::Double(_)
                ) && self.tokens[self.pos].end == self.tokens[self.pos + 1].start =>
            {
                let s = if *self.peek() == TokenKind::Minus { "-" } else { "+" };
                self.advance();
                s
            }
            _ => "",
        };
        let numeric = |lexical: &str, dt: &str| Literal {
            lexical: format!("{sign}{lexical}"),
            datatype: Some(dt.to_owned()),
            language: None,
        };
        let lit = match self.peek().clone() {
            TokenKind::Integer(n) => numeric(&n, XSD_INTEGER),
            TokenKind::Decimal(n) => numeric(&n, XSD_DECIMAL),
            TokenKind::Double(n) => numeric(&n, XSD_DOUBLE),
            TokenKind::Word(w) if w.eq_ignore_ascii_case("true") || w.eq_ignore_ascii_case("false") => Literal {
                lexical: w.to_ascii_lowercase(),
                datatype: Some(XSD_BOOLEAN.to_owned()),
                language: None,
            },
            TokenKind::String(s) => {
                self.advance();
                let mut lit = Literal {
                    lexical: s,
                    datatype: None,
                    language: None,
                };
                if let TokenKind::LangTag(tag) = self.peek().clone() {
                    self.advance();
                    lit.language = Some(tag);
                } else if self.eat(&TokenKind::DoubleCaret) {
                    match self.try_iri()? {
                        Some(dt) => lit.datatype = Some(dt),
                        None => return Err(self.unexpected("datatype IRI")),
                    }
                }
                return Ok(Some(lit));
            }
            _ => return Ok(None),
        };
        self.advance();
        Ok(Some(lit))
    }

    fn values(&mut self) -> PResult<PatternElement> {
        let mut vars = Vec::new();
        let single = if let TokenKind::Var(_) = self.peek() {
            vars.push(self.var()?);
            true
        } else {
            self.expect(TokenKind::LParen, "variable or '('")?;
            while let TokenKind::Var(_) = self.peek() {
                vars.push(self.var()?);
            }
            self.expect(TokenKind::RParen, "')'")?;
            false
        };
        self.expect(TokenKind::LBrace, "'{'")?;
        let mut rows = Vec::new();
        loop {
            if self.eat(&TokenKind::RBrace) {
                break;
            }
            if single {
                rows.push(vec![self.data_value()?]);
                continue;
            }
            self.expect(TokenKind::LParen, "'(' or '}'")?;
            let mut row = Vec::new();
            while !self.eat(&TokenKind::RParen) {
                row.push(self.data_value()?);
            }
            if row.len() != vars.len() {
                return Err(self.error_here(format!(
                    "VALUES row has {} values for {} variables",
                    row.len(),
                    vars.len()
                )));
            }
            rows.push(row);
        }
        Ok(PatternElement::Values { vars, rows })
    }

    fn data_value(&mut self) -> PResult<Option<Term>> {
        if self.eat_word("UNDEF") {
            return Ok(None);
        }
        if let Some(iri) = self.try_iri()? {
            return Ok(Some(Term::Iri(iri)));
        }
        match self.rdf_literal()? {
            Some(lit) => Ok(Some(Term::Literal(lit))),
            None => Err(self.unexpected("data value")),
        }
    }

    fn modifiers(&mut self) -> PResult<Modifiers> {
        let mut m = Modifiers::default();
        if self.at_word("GROUP") {
            self.advance();
            self.expect_word("BY")?;
            loop {
                m.group_by.push(self.group_condition()?);
                if !self.starts_condition() {
                    break;
                }
            }
        }
        if self.eat_word("HAVING") {
            loop {
                m.having.push(self.constraint()?);
                if !self.starts_condition() || matches!(self.peek(), TokenKind::Var(_)) {
                    break;
                }
            }
        }
        if self.at_word("ORDER") {
            self.advance();
            self.expect_word("BY")?;
            loop {
                m.order_by.push(self.order_condition()?);
                if !(self.starts_condition() || self.at_word("ASC") || self.at_word("DESC")) {
                    break;
                }
            }
        }
        for _ in 0..2 {
            if self.at_word("LIMIT") && m.limit.is_none() {
                self.advance();
                m.limit = Some(self.integer()?);
            } else if self.at_word("OFFSET") && m.offset.is_none() {
                self.advance();
                m.offset = Some(self.integer()?);
            }
        }
        Ok(m)
    }

    fn integer(&mut self) -> PResult<u64> {
        match self.peek().clone() {
            TokenKind::Integer(n) => {
                let value = n
                    .parse()
                    .map_err(|_| self.error_here(format!("integer {n} out of range")))?;
                self.advance();
                Ok(value)
            }
            _ => Err(self.unexpected("non-negative integer")),
        }
    }

    fn starts_condition(&self) -> bool {
        match self.peek() {
            TokenKind::Var(_) | TokenKind::LParen | TokenKind::IriRef(_) | TokenKind::PrefixedName { .. } => true,
            TokenKind::Word(w) => {
                canonical_builtin(w).is_some()
                    || AggregateFunction::from_keyword(w).is_some()
                    || w.eq_ignore_ascii_case("EXISTS")
                    || w.eq_ignore_ascii_case("NOT")
            }
            _ => false,
        }
    }

    fn group_condition(&mut self) -> PResult<Expression> {
        if let TokenKind::Var(_) = self.peek() {
            return Ok(Expression::Term(Term::Var(self.var()?)));
        }
        if self.eat(&TokenKind::LParen) {
            let expr = self.expression()?;
            if self.at_word("AS") {
                return Err(self.error_here("GROUP BY (expression AS ?var) is not supported"));
            }
            self.expect(TokenKind::RParen, "')'")?;
            return Ok(expr);
        }
        self.constraint()
    }

    fn order_condition(&mut self) -> PResult<(Expression, SortDirection)> {
        let direction = if self.eat_word("ASC") {
            Some(SortDirection::Asc)
        } else if self.eat_word("DESC") {
            Some(SortDirection::Desc)
        } else {
            None
        };
        if let Some(direction) = direction {
            self.expect(TokenKind::LParen, "'('")?;
            let expr = self.expression()?;
            self.expect(TokenKind::RParen, "')'")?;
            return Ok((expr, direction));
        }
        if let TokenKind::Var(_) = self.peek() {
            return Ok((Expression::Term(Term::Var(self.var()?)), SortDirection::Asc));
        }
        Ok((self.constraint()?, SortDirection::Asc))
    }

    /// Bracketted expression, built-in call or function call.
    fn constraint(&mut self) -> PResult<Expression> {
        if self.eat(&TokenKind::LParen) {
            let expr = self.expression()?;
            self.expect(TokenKind::RParen, "')'")?;
            return Ok(expr);
        }
        let expr = self.primary()?;
        match expr {
            Expression::Builtin { .. }
            | Expression::FunctionCall { .. }
            | Expression::Aggregate { .. }
            | Expression::Exists { .. } => Ok(expr),
            _ => Err(self.error_here("expected a bracketed expression or function call")),
        }
    }

    fn expression(&mut self) -> PResult<Expression> {
        let mut left = self.and_expression()?;
        while self.eat(&TokenKind::OrOr) {
            let right = self.and_expression()?;
            left = Expression::Binary(BinaryOp::Or, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and_expression(&mut self) -> PResult<Expression> {
        let mut left = self.relational()?;
        while self.eat(&TokenKind::AndAnd) {
            let right = self.relational()?;
            left = Expression::Binary(BinaryOp::And, Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn relational(&mut self) -> PResult<Expression> {
        let left = self.additive()?;
        let op = match self.peek() {
            TokenKind::Eq => BinaryOp::Equal,
            TokenKind::NotEq => BinaryOp::NotEqual,
            TokenKind::Lt => BinaryOp::Less,
            TokenKind::Gt => BinaryOp::Greater,
            TokenKind::Le => BinaryOp::LessOrEqual,
            TokenKind::Ge => BinaryOp::GreaterOrEqual,
            TokenKind::Word(w) if w.eq_ignore_ascii_case("IN") || w.eq_ignore_ascii_case("NOT") => {
                let negated = self.eat_word("NOT");
                self.expect_word("IN")?;
                let list = self.arg_list()?;
                return Ok(Expression::In {
                    negated,
                    operand: Box::new(left),
                    list,
                });
            }
            _ => return Ok(left),
        };
        self.advance();
        let right = self.additive()?;
        Ok(Expression::Binary(op, Box::new(left), Box::new(right)))
    }

    fn additive(&mut self) -> PResult<Expression> {
        let mut left = self.multiplicative()?;
        loop {
            let op = match self.peek() {
                TokenKind::Plus => BinaryOp::Add,
                TokenKind::Minus => BinaryOp::Subtract,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.multiplicative()?;
            left = Expression::Binary(op, Box::new(left), Box::new(right));
        }
    }

    fn multiplicative(&mut self) -> PResult<Expression> {
        let mut left = self.unary()?;
        loop {
            let op = match self.peek() {
                TokenKind::Star => BinaryOp::Multiply,
                TokenKind::Slash => BinaryOp::Divide,
                _ => return Ok(left),
            };
            self.advance();
            let right = self.unary()?;
            left = Expression::Binary(op, Box::new(left), Box::new(right));
        }
    }

    fn unary(&mut self) -> PResult<Expression> {
        let op = match self.peek() {
            TokenKind::Bang => UnaryOp::Not,
            TokenKind::Plus => UnaryOp::Plus,
            TokenKind::Minus => UnaryOp::Minus,
            _ => return self.primary(),
        };
        self.advance();
        Ok(Expression::Unary(op, Box::new(self.primary()?)))
    }

    fn arg_list(&mut self) -> PResult<Vec<Expression>> {
        self.expect(TokenKind::LParen, "'('")?;
        let mut args = Vec::new();
        if self.eat(&TokenKind::RParen) {
            return Ok(args);
        }
        loop {
            args.push(self.expression()?);
            if self.eat(&TokenKind::RParen) {
                return Ok(args);
            }
            self.expect(TokenKind::Comma, "',' or ')'")?;
        }
    }

    fn primary(&mut self) -> PResult<Expression> {
        if self.eat(&TokenKind::LParen) {
            let expr = self.expression()?;
            self.expect(TokenKind::RParen, "')'")?;
            return Ok(expr);
        }
        if let Some(iri) = self.try_iri()? {
            if *self.peek() != TokenKind::LParen {
                return Ok(Expression::Term(Term::Iri(iri)));
            }
            self.advance();
            let distinct = self.eat_word("DISTINCT");
            let mut args = Vec::new();
            if !self.eat(&TokenKind::RParen) {
                loop {
                    args.push(self.expression()?);
                    if self.eat(&TokenKind::RParen) {
                        break;
                    }
                    self.expect(TokenKind::Comma, "',' or ')'")?;
                }
            }
            return Ok(Expression::FunctionCall { iri, distinct, args });
        }
        if let TokenKind::Var(_) = self.peek() {
            return Ok(Expression::Term(Term::Var(self.var()?)));
        }
        if let Some(lit) = self.rdf_literal()? {
            return Ok(Expression::Term(Term::Literal(lit)));
        }
        let TokenKind::Word(word) = self.peek().clone() else {
            return Err(self.unexpected("expression"));
        };
        if let Some(function) = AggregateFunction::from_keyword(&word) {
            self.advance();
            return self.aggregate(function);
        }
        if word.eq_ignore_ascii_case("EXISTS") {
            self.advance();
            return Ok(Expression::Exists {
                negated: false,
                patterns: self.group()?,
            });
        }
        if word.eq_ignore_ascii_case("NOT") && self.peek_at(1).is_word("EXISTS") {
            self.advance();
            self.advance();
            return Ok(Expression::Exists {
                negated: true,
                patterns: self.group()?,
            });
        }
        if let Some(name) = canonical_builtin(&word) {
            self.advance();
            let args = self.arg_list()?;
            return Ok(Expression::Builtin {
                name: name.to_owned(),
                args,
            });
        }
        Err(self.unexpected("expression"))
    }

    fn aggregate(&mut self, function: AggregateFunction) -> PResult<Expression> {
        self.expect(TokenKind::LParen, "'('")?;
        let distinct = self.eat_word("DISTINCT");
        let arg = if function == AggregateFunction::Count && self.eat(&TokenKind::Star) {
            None
        } else {
            Some(Box::new(self.expression()?))
        };
        let mut separator = None;
        if function == AggregateFunction::GroupConcat && self.eat(&TokenKind::Semicolon) {
            self.expect_word("SEPARATOR")?;
            self.expect(TokenKind::Eq, "'='")?;
            match self.peek().clone() {
                TokenKind::String(s) => {
                    self.advance();
                    separator = Some(s);
                }
                _ => return Err(self.unexpected("separator string")),
            }
        }
        self.expect(TokenKind::RParen, "')'")?;
        Ok(Expression::Aggregate {
            function,
            distinct,
            arg,
            separator,
        })
    }
}
