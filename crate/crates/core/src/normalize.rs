//! Rewrites for vendor-extended gold queries (bare aggregates in the
//! projection or the sort key) into standard SPARQL.
//!
//! Rules are token patterns rather than byte regexes, so text inside string
//! literals and IRIs is never touched.
//!
//! Pattern syntax: whitespace-separated items, each either a literal token
//! (`SELECT`, `(`, `BY`) or a capture `$name:KIND` with KIND one of
//!
//! | kind        | matches                                                  |
//! |-------------|----------------------------------------------------------|
//! | `ANY`       | any single token                                         |
//! | `VAR`       | one variable                                             |
//! | `AGG`       | an aggregate keyword                                     |
//! | `ORDER_DIR` | `ASC` or `DESC`                                          |
//! | `GROUP`     | a balanced parenthesised token group                     |
//! | `MODIFIER?` | optional `DISTINCT` / `REDUCED`                          |
//! | `PROJ`      | zero or more variables or parenthesised groups           |
//!
//! A replacement is a whitespace-separated list of items where `$name`
//! expands to the captured source text and `$fresh` to the name of a fresh
//! variable. Items that render empty are dropped and the rest are joined by
//! a single space. An optional `hoist` item, rendered the same way, is
//! appended to the end of the enclosing projection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparql::lexer::{tokenize, Token, TokenKind};
use crate::sparql::AggregateFunction;

pub const FRESH_PREFIX: &str = "tgm_eval_";

/// Upper bound on how often a single rule may refire on its own output.
const MAX_REWRITES_PER_RULE: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewriteRule {
    pub id: String,
    pub pattern: String,
    pub replacement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hoist: Option<String>,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationResult {
    pub text: String,
    pub applied: Vec<String>,
    pub changed: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule '{rule}': empty pattern")]
    EmptyPattern { rule: String },
    #[error("rule '{rule}': unknown capture kind '{kind}'")]
    UnknownKind { rule: String, kind: String },
    #[error("rule '{rule}': pattern item '{item}' is not a single token")]
    NotAToken { rule: String, item: String },
    #[error("rule '{rule}': capture '${name}' used twice")]
    DuplicateCapture { rule: String, name: String },
    #[error("rule '{rule}': replacement references unknown capture '${name}'")]
    UnknownReference { rule: String, name: String },
}

pub fn default_rules() -> Vec<RewriteRule> {
    vec![
        RewriteRule {
            id: "R1".into(),
            pattern: "SELECT $mod:MODIFIER? $proj:PROJ $agg:AGG $args:GROUP".into(),
            replacement: "SELECT $mod $proj ($agg$args AS ?$fresh)".into(),
            hoist: None,
            description: "bind a bare aggregate in the projection to a fresh alias".into(),
        },
        RewriteRule {
            id: "R2".into(),
            pattern: "$dir:ORDER_DIR ( $agg:AGG $args:GROUP )".into(),
            replacement: "$dir(?$fresh)".into(),
            hoist: Some("($agg$args AS ?$fresh)".into()),
            description: "move an aggregate sort key into the projection".into(),
        },
        RewriteRule {
            id: "R3".into(),
            pattern: "ORDER BY $agg:AGG $args:GROUP".into(),
            replacement: "ORDER BY ?$fresh".into(),
            hoist: Some("($agg$args AS ?$fresh)".into()),
            description: "move an undirected aggregate sort key into the projection".into(),
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Any,
    Var,
    Agg,
    OrderDir,
    Group,
    Modifier,
    Proj,
}

impl Kind {
    fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "ANY" => Kind::Any,
            "VAR" => Kind::Var,
            "AGG" => Kind::Agg,
            "ORDER_DIR" => Kind::OrderDir,
            "GROUP" => Kind::Group,
            "MODIFIER?" => Kind::Modifier,
            "PROJ" => Kind::Proj,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone)]
enum Item {
    Literal(TokenKind),
    Capture(String, Kind),
}

#[derive(Debug, Clone)]
struct CompiledRule {
    id: String,
    items: Vec<Item>,
    replacement: String,
    hoist: Option<String>,
}

impl RewriteRule {
    /// Check the pattern and the capture references without applying it.
    pub fn validate(&self) -> Result<(), RuleError> {
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<CompiledRule, RuleError> {
        let mut items = Vec::new();
        let mut names = BTreeSet::new();
        for raw in self.pattern.split_whitespace() {
            if let Some(capture) = raw.strip_prefix('$') {
                let (name, kind) = capture.split_once(':').unwrap_or((capture, "ANY"));
                let kind = Kind::parse(kind).ok_or_else(|| RuleError::UnknownKind {
                    rule: self.id.clone(),
                    kind: kind.to_owned(),
                })?;
                if !names.insert(name.to_owned()) {
                    return Err(RuleError::DuplicateCapture {
                        rule: self.id.clone(),
                        name: name.to_owned(),
                    });
                }
                items.push(Item::Capture(name.to_owned(), kind));
            } else {
                let tokens = tokenize(raw).map_err(|_| self.not_a_token(raw))?;
                if tokens.len() != 2 {
                    return Err(self.not_a_token(raw));
                }
                items.push(Item::Literal(tokens[0].kind.clone()));
            }
        }
        if items.is_empty() {
            return Err(RuleError::EmptyPattern { rule: self.id.clone() });
        }
        for template in std::iter::once(&self.replacement).chain(self.hoist.as_ref()) {
            for name in references(template) {
                if name != "fresh" && !names.contains(name) {
                    return Err(RuleError::UnknownReference {
                        rule: self.id.clone(),
                        name: name.to_owned(),
                    });
                }
            }
        }
        Ok(CompiledRule {
            id: self.id.clone(),
            items,
            replacement: self.replacement.clone(),
            hoist: self.hoist.clone(),
        })
    }

    fn not_a_token(&self, item: &str) -> RuleError {
        RuleError::NotAToken {
            rule: self.id.clone(),
            item: item.to_owned(),
        }
    }
}

fn references(template: &str) -> impl Iterator<Item = &str> {
    template.match_indices('$').map(move |(i, _)| {
        let rest = &template[i + 1..];
        let end = rest
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(rest.len());
        &rest[..end]
    })
}

fn literal_matches(expected: &TokenKind, found: &TokenKind) -> bool {
    match (expected, found) {
        (TokenKind::Word(a), TokenKind::Word(b)) => a.eq_ignore_ascii_case(b),
        (a, b) => a == b,
    }
}

/// End index (exclusive) of the balanced group starting at `i`.
fn group_end(tokens: &[Token], i: usize) -> Option<usize> {
    if tokens.get(i)?.kind != TokenKind::LParen {
        return None;
    }
    let mut depth = 0usize;
    for (j, t) in tokens.iter().enumerate().skip(i) {
        match t.kind {
            TokenKind::LParen => depth += 1,
            TokenKind::RParen => {
                depth -= 1;
                if depth == 0 {
                    return Some(j + 1);
                }
            }
            TokenKind::Eof => return None,
            _ => {}
        }
    }
    None
}

/// Token-index range of each capture.
type Captures = BTreeMap<String, (usize, usize)>;

fn match_at(items: &[Item], tokens: &[Token], start: usize) -> Option<(usize, Captures)> {
    let mut pos = start;
    let mut captures = Captures::new();
    for item in items {
        let kind = &tokens.get(pos)?.kind;
        let next = match item {
            Item::Literal(expected) => {
                if !literal_matches(expected, kind) {
                    return None;
                }
                pos + 1
            }
            Item::Capture(name, capture) => {
                let end = match capture {
                    Kind::Any => (*kind != TokenKind::Eof).then_some(pos + 1)?,
                    Kind::Var => matches!(kind, TokenKind::Var(_)).then_some(pos + 1)?,
                    Kind::Agg => matches!(kind, TokenKind::Word(w) if AggregateFunction::from_keyword(w).is_some())
                        .then_some(pos + 1)?,
                    Kind::OrderDir => (kind.is_word("ASC") || kind.is_word("DESC")).then_some(pos + 1)?,
                    Kind::Group => group_end(tokens, pos)?,
                    Kind::Modifier => {
                        if kind.is_word("DISTINCT") || kind.is_word("REDUCED") {
                            pos + 1
                        } else {
                            pos
                        }
                    }
                    Kind::Proj => {
                        let mut p = pos;
                        loop {
                            match tokens[p].kind {
                                TokenKind::Var(_) => p += 1,
                                TokenKind::LParen => match group_end(tokens, p) {
                                    Some(e) => p = e,
                                    None => break,
                                },
                                _ => break,
                            }
                        }
                        p
                    }
                };
                captures.insert(name.clone(), (pos, end));
                end
            }
        };
        pos = next;
    }
    Some((pos, captures))
}

fn source_slice<'t>(text: &'t str, tokens: &[Token], (from, to): (usize, usize)) -> &'t str {
    if from == to {
        ""
    } else {
        &text[tokens[from].start..tokens[to - 1].end]
    }
}

fn render(template: &str, values: &BTreeMap<&str, &str>) -> String {
    let mut parts = Vec::new();
    for item in template.split_whitespace() {
        let mut out = String::new();
        let mut rest = item;
        while let Some(i) = rest.find('$') {
            out.push_str(&rest[..i]);
            let tail = &rest[i + 1..];
            let end = tail
                .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .unwrap_or(tail.len());
            out.push_str(values.get(&tail[..end]).copied().unwrap_or(""));
            rest = &tail[end..];
        }
        out.push_str(rest);
        // An item made only of references that all expanded empty vanishes.
        if !out.is_empty() {
            parts.push(out);
        }
    }
    parts.join(" ")
}

/// Byte offset just after the projection of the SELECT clause that precedes
/// token `before`, i.e. the start of its `WHERE`, `FROM` or `{`.
fn projection_end(tokens: &[Token], before: usize) -> Option<usize> {
    let select = tokens[..before].iter().rposition(|t| t.kind.is_word("SELECT"))?;
    let mut i = select + 1;
    while i < tokens.len() {
        let kind = &tokens[i].kind;
        if kind.is_word("WHERE") || kind.is_word("FROM") || *kind == TokenKind::LBrace {
            return Some(tokens[i].start);
        }
        if *kind == TokenKind::LParen {
            i = group_end(tokens, i)?;
            continue;
        }
        if *kind == TokenKind::Eof {
            return None;
        }
        i += 1;
    }
    None
}

struct FreshNames {
    taken: BTreeSet<String>,
    counter: u64,
}

impl FreshNames {
    fn new(text: &str) -> Self {
        let taken = tokenize(text)
            .map(|tokens| {
                tokens
                    .into_iter()
                    .filter_map(|t| match t.kind {
                        TokenKind::Var(v) => Some(v),
                        _ => None,
                    })
                    .collect()
            })
            .unwrap_or_default();
        FreshNames { taken, counter: 0 }
    }

    fn next(&mut self) -> String {
        loop {
            self.counter += 1;
            let name = format!("{FRESH_PREFIX}{}", self.counter);
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }
}

/// Rewrite one occurrence; `None` when the rule does not match.
fn rewrite_once(rule: &CompiledRule, text: &str, fresh: &mut FreshNames) -> Option<String> {
    let tokens = tokenize(text).ok()?;
    let (start, (end, captures)) = (0..tokens.len())
        .find_map(|i| match_at(&rule.items, &tokens, i).map(|m| (i, m)))?;
    if start == end {
        return None;
    }
    let hoist_at = match &rule.hoist {
        Some(_) => Some(projection_end(&tokens, start)?),
        None => None,
    };
    let mut values: BTreeMap<&str, &str> = captures
        .iter()
        .map(|(name, range)| (name.as_str(), source_slice(text, &tokens, *range)))
        .collect();
    let uses_fresh = references(&rule.replacement)
        .chain(rule.hoist.iter().flat_map(|h| references(h)))
        .any(|r| r == "fresh");
    let fresh_name = if uses_fresh { fresh.next() } else { String::new() };
    values.insert("fresh", &fresh_name);

    let replacement = render(&rule.replacement, &values);
    let (from, to) = (tokens[start].start, tokens[end - 1].end);
    let mut out = String::with_capacity(text.len() + 32);
    match (hoist_at, &rule.hoist) {
        (Some(at), Some(hoist)) if at <= from => {
            let hoisted = render(hoist, &values);
            out.push_str(text[..at].trim_end());
            out.push(' ');
            out.push_str(&hoisted);
            out.push(' ');
            out.push_str(&text[at..from]);
            out.push_str(&replacement);
            out.push_str(&text[to..]);
        }
        (Some(_), Some(_)) => return None,
        _ => {
            out.push_str(&text[..from]);
            out.push_str(&replacement);
            out.push_str(&text[to..]);
        }
    }
    Some(out)
}

/// Apply `rules` in order. Each rule is re-applied to its own output until it
/// no longer matches, so every occurrence is rewritten. Invalid rules are
/// skipped; use [`RewriteRule::validate`] to reject them up front.
pub fn normalize_query(text: &str, rules: &[RewriteRule]) -> NormalizationResult {
    let mut current = text.to_owned();
    let mut applied = Vec::new();
    let mut fresh = FreshNames::new(text);
    for rule in rules {
        let compiled = match rule.compile() {
            Ok(c) => c,
            Err(e) => {
                tracing::warn!("skipping rewrite rule: {e}");
                continue;
            }
        };
        let mut fired = false;
        for _ in 0..MAX_REWRITES_PER_RULE {
            match rewrite_once(&compiled, &current, &mut fresh) {
                Some(next) if next != current => {
                    current = next;
                    fired = true;
                }
                _ => break,
            }
        }
        if fired {
            applied.push(compiled.id);
        }
    }
    let changed = current != text;
    if !changed {
        applied.clear();
    }
    NormalizationResult {
        text: current,
        applied,
        changed,
    }
}
