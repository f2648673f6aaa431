//! The six ordered evaluation criteria and per-question verdicts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::sparql::{
    bind_aliases, parse_query, range_of, target_variables, triple_patterns, AnswerRange, FormKind, PrefixEnv,
    QueryAst, TriplePattern, Var,
};
use crate::tgm_client::{HttpFailure, TgmOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    TgmFailure = 1,
    Syntax = 2,
    QuestionType = 3,
    DisconnectedTarget = 4,
    WrongRange = 5,
    DisconnectedTriple = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Critical,
    Notice,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Critical => "critical",
            Severity::Notice => "notice",
        })
    }
}

impl Criterion {
    pub const ALL: [Criterion; 6] = [
        Criterion::TgmFailure,
        Criterion::Syntax,
        Criterion::QuestionType,
        Criterion::DisconnectedTarget,
        Criterion::WrongRange,
        Criterion::DisconnectedTriple,
    ];

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn severity(self) -> Severity {
        match self {
            Criterion::TgmFailure | Criterion::Syntax | Criterion::QuestionType | Criterion::DisconnectedTarget => {
                Severity::Critical
            }
            Criterion::WrongRange | Criterion::DisconnectedTriple => Severity::Notice,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Criterion::TgmFailure => "tgm-failure",
            Criterion::Syntax => "syntax",
            Criterion::QuestionType => "question-type",
            Criterion::DisconnectedTarget => "disconnected-target",
            Criterion::WrongRange => "wrong-range",
            Criterion::DisconnectedTriple => "disconnected-triple",
        }
    }

    /// Column heading used in text reports.
    pub fn title(self) -> &'static str {
        match self {
            Criterion::TgmFailure => "TGM failure",
            Criterion::Syntax => "Syntax",
            Criterion::QuestionType => "Question type",
            Criterion::DisconnectedTarget => "DC target",
            Criterion::WrongRange => "Wrong range",
            Criterion::DisconnectedTriple => "DC triple",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Criterion {
    type Err = String;

    /// Accepts the slug or the ordinal.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Criterion::ALL
            .into_iter()
            .find(|c| c.slug().eq_ignore_ascii_case(s) || c.ordinal().to_string() == s)
            .ok_or_else(|| format!("unknown criterion '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FindingDetail {
    HttpFailure { failure: HttpFailure },
    EmptyTemplateList,
    SyntaxError {
        line: usize,
        column: usize,
        message: String,
        snippet: String,
    },
    FormMismatch { gold: FormKind, template: FormKind },
    MissingTargets { variables: Vec<String> },
    RangeMismatch {
        expected: AnswerRange,
        found: Option<AnswerRange>,
    },
    /// Zero-based indices into the template's flattened triple list.
    DisconnectedTriples { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub criterion: Criterion,
    pub severity: Severity,
    pub detail: FindingDetail,
}

impl Finding {
    pub fn new(criterion: Criterion, detail: FindingDetail) -> Self {
        Finding {
            criterion,
            severity: criterion.severity(),
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeSummary {
    Good,
    FirstError(Finding),
}

/// Result for one question. The summary is derived from the findings, so the
/// first-error rule cannot be violated by construction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "VerdictRecord", try_from = "VerdictRecord")]
pub struct Verdict {
    pub question_uid: String,
    pub all_findings: Vec<Finding>,
    pub template_text: Option<String>,
}

impl Verdict {
    pub fn first_error(&self) -> Option<&Finding> {
        self.all_findings.iter().min_by_key(|f| f.criterion)
    }

    pub fn outcome_summary(&self) -> OutcomeSummary {
        match self.first_error() {
            Some(f) => OutcomeSummary::FirstError(f.clone()),
            None => OutcomeSummary::Good,
        }
    }

    pub fn is_good(&self) -> bool {
        self.all_findings.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct VerdictRecord {
    uid: String,
    verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    criterion: Option<Criterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    severity: Option<Severity>,
    findings: Vec<Finding>,
    template: Option<String>,
}

impl From<Verdict> for VerdictRecord {
    fn from(v: Verdict) -> Self {
        let first = v.first_error().cloned();
        VerdictRecord {
            uid: v.question_uid,
            verdict: if first.is_some() { "error" } else { "good" }.into(),
            criterion: first.as_ref().map(|f| f.criterion),
            severity: first.as_ref().map(|f| f.severity),
            findings: v.all_findings,
            template: v.template_text,
        }
    }
}

impl TryFrom<VerdictRecord> for Verdict {
    type Error = String;

    fn try_from(r: VerdictRecord) -> Result<Self, Self::Error> {
        let v = Verdict {
            question_uid: r.uid,
            all_findings: r.findings,
            template_text: r.template,
        };
        if v.first_error().map(|f| f.criterion) != r.criterion {
            return Err(format!("verdict {}: criterion does not match its findings", v.question_uid));
        }
        if v.all_findings.iter().any(|f| f.severity != f.criterion.severity()) {
            return Err(format!("verdict {}: finding severity mismatch", v.question_uid));
        }
        Ok(v)
    }
}

pub fn check_failure(outcome: &TgmOutcome) -> Option<Finding> {
    match outcome {
        TgmOutcome::HttpFailure { failure } => Some(Finding::new(
            Criterion::TgmFailure,
            FindingDetail::HttpFailure {
                failure: failure.clone(),
            },
        )),
        TgmOutcome::Templates { templates } if templates.is_empty() => {
            Some(Finding::new(Criterion::TgmFailure, FindingDetail::EmptyTemplateList))
        }
        TgmOutcome::Templates { .. } => None,
    }
}

pub fn check_syntax(template_text: &str, env: &PrefixEnv) -> Result<QueryAst, Finding> {
    parse_query(template_text, env).map_err(|e| {
        Finding::new(
            Criterion::Syntax,
            FindingDetail::SyntaxError {
                line: e.line,
                column: e.column,
                message: e.message,
                snippet: e.snippet,
            },
        )
    })
}

pub fn check_question_type(gold: &QueryAst, template: &QueryAst) -> Option<Finding> {
    let (g, t) = (gold.form_kind(), template.form_kind());
    ((g == FormKind::Ask) != (t == FormKind::Ask)).then(|| {
        Finding::new(
            Criterion::QuestionType,
            FindingDetail::FormMismatch { gold: g, template: t },
        )
    })
}

/// Join keys a variable stands for: itself plus, for a BIND alias, the
/// variables of its defining expression.
fn resolve(var: &Var, aliases: &BTreeMap<Var, BTreeSet<Var>>) -> BTreeSet<String> {
    let mut keys = BTreeSet::from([var.name().to_owned()]);
    if let Some(sources) = aliases.get(var) {
        keys.extend(sources.iter().map(|s| s.name().to_owned()));
    }
    keys
}

fn triple_keys(t: &TriplePattern, aliases: &BTreeMap<Var, BTreeSet<Var>>) -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    for term in t.terms() {
        match term.as_var() {
            Some(v) => keys.extend(resolve(v, aliases)),
            None => keys.extend(term.join_key()),
        }
    }
    keys
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index becomes the root so roots are component minima.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Partition triple indices under "shares a variable or blank node", after
/// alias resolution. Components are sorted internally and ordered by their
/// smallest member.
pub fn connected_components(
    patterns: &[&TriplePattern],
    alias_sources: &BTreeMap<Var, BTreeSet<Var>>,
) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(patterns.len());
    let mut owner: BTreeMap<String, usize> = BTreeMap::new();
    for (i, t) in patterns.iter().enumerate() {
        for key in triple_keys(t, alias_sources) {
            match owner.get(&key) {
                Some(&j) => uf.union(i, j),
                None => {
                    owner.insert(key, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..patterns.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Resolved join keys of the template's targets.
fn target_keys(template: &QueryAst, aliases: &BTreeMap<Var, BTreeSet<Var>>) -> Vec<(Var, BTreeSet<String>)> {
    target_variables(template)
        .unwrap_or_default()
        .into_iter()
        .map(|t| {
            let keys = resolve(&t, aliases);
            (t, keys)
        })
        .collect()
}

pub fn check_disconnected_target(template: &QueryAst) -> Option<Finding> {
    if template.form_kind() != FormKind::Select {
        return None;
    }
    let aliases = bind_aliases(template);
    let present: BTreeSet<String> = triple_patterns(template)
        .into_iter()
        .flat_map(|t| triple_keys(t, &aliases))
        .collect();
    let missing: Vec<String> = target_keys(template, &aliases)
        .into_iter()
        .filter(|(_, keys)| keys.is_disjoint(&present))
        .map(|(t, _)| t.to_string())
        .collect();
    (!missing.is_empty()).then(|| {
        Finding::new(
            Criterion::DisconnectedTarget,
            FindingDetail::MissingTargets { variables: missing },
        )
    })
}

pub fn check_wrong_range(gold: &QueryAst, template: &QueryAst) -> Option<Finding> {
    if gold.form_kind() != FormKind::Select || template.form_kind() != FormKind::Select {
        return None;
    }
    let expected = range_of(gold)?;
    let found = range_of(template);
    (found != Some(expected)).then(|| {
        Finding::new(
            Criterion::WrongRange,
            FindingDetail::RangeMismatch { expected, found },
        )
    })
}

pub fn check_disconnected_triple(template: &QueryAst) -> Option<Finding> {
    if template.form_kind() != FormKind::Select {
        return None;
    }
    let aliases = bind_aliases(template);
    let patterns = triple_patterns(template);
    let targets: BTreeSet<String> = target_keys(template, &aliases)
        .into_iter()
        .flat_map(|(_, keys)| keys)
        .collect();
    let mut indices = Vec::new();
    for component in connected_components(&patterns, &aliases) {
        let reaches_target = component
            .iter()
            .any(|&i| !triple_keys(patterns[i], &aliases).is_disjoint(&targets));
        if !reaches_target {
            indices.extend(component);
        }
    }
    indices.sort_unstable();
    (!indices.is_empty()).then(|| {
        Finding::new(
            Criterion::DisconnectedTriple,
            FindingDetail::DisconnectedTriples { indices },
        )
    })
}

/// Run criteria 1 to 6 in order. Steps 1 to 3 stop the evaluation; a
/// disconnected target suppresses the disconnected-triple check.
pub fn evaluate_one(uid: &str, gold: &QueryAst, outcome: &TgmOutcome, env: &PrefixEnv) -> Verdict {
    let mut verdict = Verdict {
        question_uid: uid.to_owned(),
        all_findings: Vec::new(),
        template_text: outcome.first_template().map(|t| t.query_text.clone()),
    };
    if let Some(f) = check_failure(outcome) {
        verdict.all_findings.push(f);
        return verdict;
    }
    let text = verdict.template_text.as_deref().unwrap_or_default();
    let template = match check_syntax(text, env) {
        Ok(ast) => ast,
        Err(f) => {
            verdict.all_findings.push(f);
            return verdict;
        }
    };
    if let Some(f) = check_question_type(gold, &template) {
        verdict.all_findings.push(f);
        return verdict;
    }
    let target = check_disconnected_target(&template);
    let blocked = target.is_some();
    verdict.all_findings.extend(target);
    verdict.all_findings.extend(check_wrong_range(gold, &template));
    if !blocked {
        verdict.all_findings.extend(check_disconnected_triple(&template));
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tgm_client::TemplateCandidate;

    fn parse(text: &str) -> QueryAst {
        parse_query(text, &PrefixEnv::with_defaults()).unwrap()
    }

    fn template(text: &str) -> TgmOutcome {
        TgmOutcome::templates(vec![TemplateCandidate {
            query_text: text.into(),
            slots: serde_json::Value::Array(vec![]),
            score: Some(1.0),
        }])
    }

    fn criteria_of(v: &Verdict) -> Vec<Criterion> {
        v.all_findings.iter().map(|f| f.criterion).collect()
    }

    #[test]
    fn severities() {
        let critical: Vec<_> = Criterion::ALL
            .into_iter()
            .filter(|c| c.severity() == Severity::Critical)
            .collect();
        assert_eq!(critical.len(), 4);
        assert_eq!(Criterion::WrongRange.severity(), Severity::Notice);
        assert_eq!("4".parse::<Criterion>().unwrap(), Criterion::DisconnectedTarget);
        assert_eq!("wrong-range".parse::<Criterion>().unwrap(), Criterion::WrongRange);
        assert!("nope".parse::<Criterion>().is_err());
    }

    #[test]
    fn failures() {
        let f = check_failure(&TgmOutcome::failure(HttpFailure::Status { code: 500 })).unwrap();
        assert_eq!(f.criterion, Criterion::TgmFailure);
        let f = check_failure(&TgmOutcome::templates(vec![])).unwrap();
        assert_eq!(f.detail, FindingDetail::EmptyTemplateList);
        assert!(check_failure(&template("ASK {}")).is_none());
    }

    #[test]
    fn syntax() {
        let env = PrefixEnv::with_defaults();
        assert!(check_syntax("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 }", &env).is_ok());
        let f = check_syntax("SELECT ?v1 WHERE { ?v1 ?v2 }", &env).unwrap_err();
        assert_eq!(f.criterion, Criterion::Syntax);
    }

    #[test]
    fn question_type() {
        let ask = parse("ASK WHERE { ?a ?b ?c }");
        let sel = parse("SELECT ?a WHERE { ?a ?b ?c }");
        assert!(check_question_type(&ask, &sel).is_some());
        assert!(check_question_type(&sel, &ask).is_some());
        assert!(check_question_type(&sel, &sel).is_none());
        assert!(check_question_type(&ask, &ask).is_none());
    }

    #[test]
    fn figure_a_disconnected_target() {
        let t = parse("SELECT ?v4 WHERE { ?v1 ?v2 ?v3 . }");
        let f = check_disconnected_target(&t).unwrap();
        assert_eq!(
            f.detail,
            FindingDetail::MissingTargets {
                variables: vec!["?v4".into()]
            }
        );
    }

    #[test]
    fn figure_b_count_alias_is_clean() {
        let t = parse("SELECT (COUNT(?v1) AS ?v1_count) WHERE { ?v1 ?v2 ?v3 . }");
        assert!(check_disconnected_target(&t).is_none());
        assert!(check_disconnected_triple(&t).is_none());
    }

    #[test]
    fn figure_c_disconnected_triple() {
        let t = parse("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 . ?v3 ?v4 ?v5 . ?v6 ?v7 ?v8 . }");
        let f = check_disconnected_triple(&t).unwrap();
        assert_eq!(f.detail, FindingDetail::DisconnectedTriples { indices: vec![2] });
    }

    #[test]
    fn shared_iris_do_not_connect_blank_nodes_do() {
        let t = parse("SELECT ?a WHERE { ?a onto:p res:X . ?b onto:p res:X . }");
        assert!(check_disconnected_triple(&t).is_some());
        let t = parse("SELECT ?a WHERE { ?a ?p _:n . _:n ?q ?c . }");
        assert!(check_disconnected_triple(&t).is_none());
    }

    #[test]
    fn bind_alias_joins_patterns() {
        let t = parse("SELECT ?a WHERE { ?a ?p ?x . BIND(?x AS ?y) ?y ?q ?z . }");
        assert!(check_disconnected_triple(&t).is_none());
        let t = parse("SELECT ?y WHERE { ?a ?p ?x . BIND(?x AS ?y) }");
        assert!(check_disconnected_target(&t).is_none());
    }

    #[test]
    fn filters_do_not_connect() {
        let t = parse("SELECT ?a WHERE { ?a ?p ?x . ?b ?q ?y . FILTER(?x = ?y) }");
        assert!(check_disconnected_triple(&t).is_some());
    }

    #[test]
    fn ask_templates_skip_graph_checks() {
        let t = parse("ASK WHERE { ?a ?b ?c . ?d ?e ?f }");
        assert!(check_disconnected_target(&t).is_none());
        assert!(check_disconnected_triple(&t).is_none());
    }

    #[test]
    fn ranges() {
        let gold = parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 1 OFFSET 1");
        let f = check_wrong_range(&gold, &parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 1")).unwrap();
        assert_eq!(
            f.detail,
            FindingDetail::RangeMismatch {
                expected: AnswerRange {
                    length: Some(1),
                    start: 2
                },
                found: Some(AnswerRange {
                    length: Some(1),
                    start: 1
                })
            }
        );
        let gold = parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 4");
        assert!(check_wrong_range(&gold, &parse("SELECT ?a WHERE { ?a ?b ?c }")).is_some());
        assert!(check_wrong_range(&gold, &parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 4 OFFSET 0")).is_none());
        let plain = parse("SELECT ?a WHERE { ?a ?b ?c }");
        assert!(check_wrong_range(&plain, &parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 9")).is_none());
    }

    #[test]
    fn components() {
        assert!(connected_components(&[], &BTreeMap::new()).is_empty());
        let t = parse("SELECT * WHERE { ?a ?b ?c . ?c ?d ?e . ?x ?y ?z }");
        let comps = connected_components(&triple_patterns(&t), &BTreeMap::new());
        assert_eq!(comps, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn evaluate_composition() {
        let env = PrefixEnv::with_defaults();
        let gold = parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 1");
        let v = evaluate_one(
            "q",
            &gold,
            &template("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 . ?v3 ?v4 ?v5 . ?v6 ?v7 ?v8 . }"),
            &env,
        );
        assert_eq!(criteria_of(&v), [Criterion::WrongRange, Criterion::DisconnectedTriple]);
        assert_eq!(v.first_error().unwrap().criterion, Criterion::WrongRange);

        let v = evaluate_one("q", &gold, &TgmOutcome::failure(HttpFailure::Status { code: 503 }), &env);
        assert_eq!(criteria_of(&v), [Criterion::TgmFailure]);
        assert_eq!(v.template_text, None);

        let ask = parse("ASK WHERE { ?a ?b ?c }");
        let v = evaluate_one("q", &ask, &template("ASK WHERE { ?v1 ?v2 ?v3 . }"), &env);
        assert!(v.is_good());
        assert_eq!(v.outcome_summary(), OutcomeSummary::Good);

        let v = evaluate_one("q", &gold, &template("SELECT ?v9 WHERE { ?v1 ?v2 ?v3 . ?v4 ?v5 ?v6 }"), &env);
        assert_eq!(criteria_of(&v), [Criterion::DisconnectedTarget, Criterion::WrongRange]);
    }

    #[test]
    fn verdict_json_round_trip() {
        let env = PrefixEnv::with_defaults();
        let gold = parse("SELECT ?a WHERE { ?a ?b ?c } LIMIT 1");
        let v = evaluate_one("qald/1/1", &gold, &template("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 }"), &env);
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["verdict"], "error");
        assert_eq!(json["criterion"], "wrong-range");
        assert_eq!(json["severity"], "notice");
        let back: Verdict = serde_json::from_value(json).unwrap();
        assert_eq!(back, v);

        let mut tampered = serde_json::to_value(&v).unwrap();
        tampered["criterion"] = "syntax".into();
        assert!(serde_json::from_value::<Verdict>(tampered).is_err());
    }
}
