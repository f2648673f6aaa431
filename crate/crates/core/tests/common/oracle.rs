//! Structured random templates plus reference answers computed without the
//! crate's own structural code.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::IndexedRandom;
use rand::Rng;
use tgm_eval::criteria::Criterion;
use tgm_eval::tgm_client::{HttpFailure, TemplateCandidate, TgmOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrap {
    Plain,
    Optional,
    /// Left branch of a UNION with the next triple as the right branch.
    UnionLeft,
    UnionRight,
}

#[derive(Debug, Clone)]
pub struct TemplateSpec {
    /// `None` renders an ASK query.
    pub projection: Option<Vec<String>>,
    pub triples: Vec<[String; 3]>,
    pub wraps: Vec<Wrap>,
    /// Alias name to source variable names, one level deep.
    pub binds: Vec<(String, Vec<String>)>,
    pub limit: Option<u64>,
    pub offset: Option<u64>,
}

const VARS: &[&str] = &["?v0", "?v1", "?v2", "?v3", "?v4", "?v5", "?v6", "?v7"];
const ALIASES: &[&str] = &["?z0", "?z1", "?z2"];
const BLANKS: &[&str] = &["_:b0", "_:b1", "_:b2"];

fn node(rng: &mut impl Rng, aliases: &[String]) -> String {
    match rng.random_range(0..10) {
        0..=5 => (*VARS.choose(rng).unwrap()).to_owned(),
        6 if !aliases.is_empty() => aliases.choose(rng).unwrap().clone(),
        7 => (*BLANKS.choose(rng).unwrap()).to_owned(),
        _ => format!("<http://example.org/e{}>", rng.random_range(0..5)),
    }
}

fn predicate(rng: &mut impl Rng) -> String {
    if rng.random_bool(0.3) {
        (*VARS.choose(rng).unwrap()).to_owned()
    } else {
        format!("<http://example.org/p{}>", rng.random_range(0..4))
    }
}

fn object(rng: &mut impl Rng, aliases: &[String]) -> String {
    if rng.random_bool(0.15) {
        "\"lit\"@en".to_owned()
    } else {
        node(rng, aliases)
    }
}

impl TemplateSpec {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n_binds = rng.random_range(0..=2);
        let binds: Vec<(String, Vec<String>)> = ALIASES[..n_binds]
            .iter()
            .map(|a| {
                let k = rng.random_range(1..=2);
                let sources = VARS.choose_multiple(rng, k).map(|s| (*s).to_owned()).collect();
                ((*a).to_owned(), sources)
            })
            .collect();
        let alias_names: Vec<String> = binds.iter().map(|(a, _)| a.clone()).collect();
        let n = rng.random_range(1..=8);
        let triples: Vec<[String; 3]> = (0..n)
            .map(|_| [node(rng, &alias_names), predicate(rng), object(rng, &alias_names)])
            .collect();
        let mut wraps = Vec::with_capacity(n);
        while wraps.len() < n {
            let left = n - wraps.len();
            match rng.random_range(0..6) {
                0 => wraps.push(Wrap::Optional),
                1 if left >= 2 => wraps.extend([Wrap::UnionLeft, Wrap::UnionRight]),
                _ => wraps.push(Wrap::Plain),
            }
        }
        let projection = (!rng.random_bool(0.1)).then(|| {
            let mut pool: Vec<String> = VARS.iter().map(|s| (*s).to_owned()).collect();
            pool.extend(alias_names.iter().cloned());
            let k = rng.random_range(1..=2);
            pool.choose_multiple(rng, k).cloned().collect()
        });
        TemplateSpec {
            projection,
            triples,
            wraps,
            binds,
            limit: None,
            offset: None,
        }
    }

    pub fn render(&self) -> String {
        let mut body = Vec::new();
        let mut i = 0;
        while i < self.triples.len() {
            let t = |j: usize| {
                let [s, p, o] = &self.triples[j];
                format!("{s} {p} {o} .")
            };
            match self.wraps[i] {
                Wrap::Plain => body.push(t(i)),
                Wrap::Optional => body.push(format!("OPTIONAL {{ {} }}", t(i))),
                Wrap::UnionLeft => {
                    body.push(format!("{{ {} }} UNION {{ {} }}", t(i), t(i + 1)));
                    i += 1;
                }
                Wrap::UnionRight => unreachable!("consumed with its left branch"),
            }
            i += 1;
        }
        for (alias, sources) in &self.binds {
            body.push(format!("BIND ( ({}) AS {alias} )", sources.join(" + ")));
        }
        let head = match &self.projection {
            Some(vars) => format!("SELECT {}", vars.join(" ")),
            None => "ASK".to_owned(),
        };
        let mut text = format!("{head} WHERE {{ {} }}", body.join(" "));
        if let Some(l) = self.limit {
            text.push_str(&format!(" LIMIT {l}"));
        }
        if let Some(o) = self.offset {
            text.push_str(&format!(" OFFSET {o}"));
        }
        text
    }

    fn resolved(&self, term: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        if term.starts_with('?') || term.starts_with("_:") {
            out.insert(term.to_owned());
        }
        if let Some((_, sources)) = self.binds.iter().find(|(a, _)| a == term) {
            out.extend(sources.iter().cloned());
        }
        out
    }

    fn triple_keys(&self, i: usize) -> BTreeSet<String> {
        self.triples[i].iter().flat_map(|t| self.resolved(t)).collect()
    }

    /// Components by breadth-first search over the "shares a key" relation.
    pub fn bfs_components(&self) -> Vec<Vec<usize>> {
        let n = self.triples.len();
        let keys: Vec<_> = (0..n).map(|i| self.triple_keys(i)).collect();
        let mut seen = vec![false; n];
        let mut out = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let mut comp = Vec::new();
            while let Some(i) = queue.pop_front() {
                comp.push(i);
                for j in 0..n {
                    if !seen[j] && !keys[i].is_disjoint(&keys[j]) {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Projected variables that no triple mentions, even through an alias.
    pub fn missing_targets(&self) -> Vec<String> {
        let Some(vars) = &self.projection else {
            return Vec::new();
        };
        let present: BTreeSet<String> = (0..self.triples.len()).flat_map(|i| self.triple_keys(i)).collect();
        let mut out: Vec<String> = vars
            .iter()
            .filter(|v| self.resolved(v).is_disjoint(&present))
            .cloned()
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Triples whose component reaches no target.
    pub fn disconnected_triples(&self) -> Vec<usize> {
        let Some(vars) = &self.projection else {
            return Vec::new();
        };
        let targets: BTreeSet<String> = vars.iter().flat_map(|v| self.resolved(v)).collect();
        let mut out: Vec<usize> = self
            .bfs_components()
            .into_iter()
            .filter(|c| c.iter().all(|&i| self.triple_keys(i).is_disjoint(&targets)))
            .flatten()
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn template_outcome(text: &str) -> TgmOutcome {
    TgmOutcome::templates(vec![TemplateCandidate {
        query_text: text.to_owned(),
        slots: serde_json::json!([]),
        score: Some(1.0),
    }])
}

/// A gold query, a TGM outcome and the findings expected from the injected
/// faults, derived from the injection itself.
#[derive(Debug, Clone)]
pub struct FaultCase {
    pub gold: String,
    pub outcome: TgmOutcome,
    pub injected: BTreeSet<Criterion>,
    pub expected: BTreeSet<Criterion>,
}

pub fn random_fault_case(rng: &mut impl Rng) -> FaultCase {
    let gold_ask = rng.random_bool(0.25);
    let gold_range = (!gold_ask && rng.random_bool(0.5)).then(|| (rng.random_range(1..5u64), rng.random_range(0..4u64)));
    let gold = match (gold_ask, gold_range) {
        (true, _) => "ASK WHERE { res:A onto:p ?x . }".to_owned(),
        (false, Some((l, o))) => format!("SELECT ?x WHERE {{ ?x onto:p res:A . }} LIMIT {l} OFFSET {o}"),
        (false, None) => "SELECT ?x WHERE { ?x onto:p res:A . }".to_owned(),
    };

    let mut injected = BTreeSet::new();
    for c in Criterion::ALL {
        let applicable = match c {
            Criterion::DisconnectedTarget | Criterion::DisconnectedTriple => true,
            Criterion::WrongRange => gold_range.is_some(),
            _ => true,
        };
        if applicable && rng.random_bool(0.3) {
            injected.insert(c);
        }
    }

    let failure = injected.contains(&Criterion::TgmFailure);
    let outcome = if failure {
        match rng.random_range(0..3) {
            0 => TgmOutcome::failure(HttpFailure::Status { code: 503 }),
            1 => TgmOutcome::failure(HttpFailure::Transport { tag: "connect".into() }),
            _ => TgmOutcome::templates(Vec::new()),
        }
    } else {
        let template_select = gold_ask == injected.contains(&Criterion::QuestionType);
        let mut text = if template_select {
            let mut head = "SELECT ?x".to_owned();
            if injected.contains(&Criterion::DisconnectedTarget) {
                head.push_str(" ?t9");
            }
            let mut body = "?x onto:q ?y . ?y onto:r res:B .".to_owned();
            if injected.contains(&Criterion::DisconnectedTriple) {
                body.push_str(" ?d9 onto:s ?e9 .");
            }
            let mut t = format!("{head} WHERE {{ {body} }}");
            if let Some((l, o)) = gold_range {
                if injected.contains(&Criterion::WrongRange) {
                    if rng.random_bool(0.5) {
                        t.push_str(&format!(" LIMIT {} OFFSET {o}", l + 1));
                    }
                } else {
                    t.push_str(&format!(" LIMIT {l} OFFSET {o}"));
                }
            }
            t
        } else {
            "ASK WHERE { ?x onto:q res:B . }".to_owned()
        };
        if injected.contains(&Criterion::Syntax) {
            text = text.replacen(" }", " ", 1);
        }
        template_outcome(&text)
    };

    let expected = expected_findings(&injected, gold_ask);
    FaultCase {
        gold,
        outcome,
        injected,
        expected,
    }
}

/// Gating applied to the injected faults: failure, syntax and type stop the
/// evaluation, criteria 4 to 6 only apply to SELECT templates, and a
/// disconnected target hides disconnected triples.
fn expected_findings(injected: &BTreeSet<Criterion>, gold_ask: bool) -> BTreeSet<Criterion> {
    use Criterion::*;
    for stop in [TgmFailure, Syntax, QuestionType] {
        if injected.contains(&stop) {
            return BTreeSet::from([stop]);
        }
    }
    if gold_ask {
        return BTreeSet::new();
    }
    let mut out = BTreeSet::new();
    if injected.contains(&DisconnectedTarget) {
        out.insert(DisconnectedTarget);
    }
    if injected.contains(&WrongRange) {
        out.insert(WrongRange);
    }
    if injected.contains(&DisconnectedTriple) && !injected.contains(&DisconnectedTarget) {
        out.insert(DisconnectedTriple);
    }
    out
}

/// Reference severity table.
pub fn expected_severity(c: Criterion) -> &'static str {
    match c.ordinal() {
        1..=4 => "critical",
        _ => "notice",
    }
}

pub fn counts_by<T: Ord + Clone>(items: impl IntoIterator<Item = T>) -> BTreeMap<T, usize> {
    let mut m = BTreeMap::new();
    for i in items {
        *m.entry(i).or_default() += 1;
    }
    m
}
