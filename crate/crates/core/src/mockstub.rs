//! A scriptable stand-in for a template-generation service, with fault
//! injection for every evaluation criterion.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::sparql::{
    parse_query, serialize, PatternElement, PrefixEnv, Projection, ProjectionItem, ProjectionKind, QueryAst, QueryForm,
    Term, TriplePattern, Var,
};
use crate::tgm_client::{RequestShape, ResponseShape};

pub const ECHO_TEMPLATE: &str = "SELECT ?v1 WHERE { ?v1 ?v2 ?v3 . }";

/// First index tried for variables introduced by mutations.
const FIRST_FRESH_INDEX: u32 = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutation {
    FlipForm,
    DropRange,
    AddDisconnectedTarget,
    AddDisconnectedTriple,
    BreakSyntax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BehaviorSpec {
    Status { code: u16 },
    EmptyList,
    Template { text: String },
    EchoSelect,
    Mutate { base: Box<BehaviorSpec>, mutation: Mutation },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    /// Regular expression matched against the question text.
    pub pattern: String,
    pub spec: BehaviorSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorScript {
    pub default: BehaviorSpec,
    /// Checked in order; the first match wins.
    #[serde(default)]
    pub overrides: Vec<Override>,
    /// Artificial latency per request.
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub request_shape: RequestShape,
    #[serde(default)]
    pub response_shape: ResponseShape,
}

impl BehaviorScript {
    pub fn new(default: BehaviorSpec) -> Self {
        BehaviorScript {
            default,
            overrides: Vec::new(),
            delay_ms: 0,
            request_shape: RequestShape::default(),
            response_shape: ResponseShape::default(),
        }
    }

    pub fn with_override(mut self, pattern: &str, spec: BehaviorSpec) -> Self {
        self.overrides.push(Override {
            pattern: pattern.to_owned(),
            spec,
        });
        self
    }
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("invalid override pattern '{pattern}': {source}")]
    Pattern { pattern: String, source: regex::Error },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MutationError {
    #[error("{mutation:?} does not apply to an ASK query")]
    NotApplicable { mutation: Mutation },
    #[error("base behavior does not produce a template")]
    NoTemplate,
    #[error("base template does not parse: {0}")]
    BaseUnparseable(String),
}

fn fresh_vars(ast: &QueryAst, n: usize) -> Vec<Var> {
    let taken = ast.all_variable_names();
    (FIRST_FRESH_INDEX..)
        .map(|i| format!("v{i}"))
        .filter(|name| !taken.contains(name))
        .take(n)
        .map(Var::new)
        .collect()
}

/// Introduce exactly one defect into `base` and render it as text.
///
/// Turning an ASK into a SELECT projects a fresh variable, which is also a
/// disconnected target by construction.
pub fn apply_mutation(base: &QueryAst, mutation: Mutation) -> Result<String, MutationError> {
    let mut ast = base.clone();
    let not_applicable = Err(MutationError::NotApplicable { mutation });
    match mutation {
        Mutation::FlipForm => match &ast.form {
            QueryForm::Select(_) => {
                ast.form = QueryForm::Ask;
                ast.modifiers = Default::default();
            }
            QueryForm::Ask => {
                let v = fresh_vars(&ast, 1).remove(0);
                ast.form = QueryForm::Select(Projection {
                    kind: ProjectionKind::Items(vec![ProjectionItem::PlainVar(v)]),
                    distinct: false,
                    reduced: false,
                });
            }
        },
        Mutation::DropRange => {
            if matches!(ast.form, QueryForm::Ask) {
                return not_applicable;
            }
            ast.modifiers.limit = None;
            ast.modifiers.offset = None;
        }
        Mutation::AddDisconnectedTarget => {
            let v = fresh_vars(&ast, 1).remove(0);
            match &mut ast.form {
                QueryForm::Ask => return not_applicable,
                QueryForm::Select(p) => match &mut p.kind {
                    ProjectionKind::Items(items) => items.push(ProjectionItem::PlainVar(v)),
                    // `*` cannot name an absent variable; spell the projection out.
                    ProjectionKind::Star => {
                        let mut items: Vec<ProjectionItem> = base
                            .pattern_variables()
                            .into_iter()
                            .cloned()
                            .map(ProjectionItem::PlainVar)
                            .collect();
                        items.push(ProjectionItem::PlainVar(v));
                        p.kind = ProjectionKind::Items(items);
                    }
                },
            }
        }
        Mutation::AddDisconnectedTriple => {
            let vars = fresh_vars(&ast, 3);
            let triple = TriplePattern::new(
                Term::Var(vars[0].clone()),
                Term::Var(vars[1].clone()),
                Term::Var(vars[2].clone()),
            );
            match ast.where_patterns.last_mut() {
                Some(PatternElement::Bgp(triples)) => triples.push(triple),
                _ => ast.where_patterns.push(PatternElement::Bgp(vec![triple])),
            }
        }
        Mutation::BreakSyntax => {
            let mut text = serialize(&ast);
            if let Some(i) = text.rfind('}') {
                text.remove(i);
            }
            return Ok(text);
        }
    }
    Ok(serialize(&ast))
}

/// What the service answers for one question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockReply {
    Status(u16),
    Templates(Vec<String>),
}

pub fn resolve_spec(spec: &BehaviorSpec) -> Result<MockReply, MutationError> {
    match spec {
        BehaviorSpec::Status { code } => Ok(MockReply::Status(*code)),
        BehaviorSpec::EmptyList => Ok(MockReply::Templates(vec![])),
        BehaviorSpec::Template { text } => Ok(MockReply::Templates(vec![text.clone()])),
        BehaviorSpec::EchoSelect => Ok(MockReply::Templates(vec![ECHO_TEMPLATE.to_owned()])),
        BehaviorSpec::Mutate { base, mutation } => {
            let MockReply::Templates(texts) = resolve_spec(base)? else {
                return Err(MutationError::NoTemplate);
            };
            let first = texts.first().ok_or(MutationError::NoTemplate)?;
            let ast = parse_query(first, &PrefixEnv::with_defaults())
                .map_err(|e| MutationError::BaseUnparseable(e.to_string()))?;
            Ok(MockReply::Templates(vec![apply_mutation(&ast, *mutation)?]))
        }
    }
}

fn render_body(shape: &ResponseShape, texts: &[String]) -> Value {
    let list: Vec<Value> = texts
        .iter()
        .map(|t| {
            let mut item = Map::new();
            item.insert(shape.query_field.clone(), Value::String(t.clone()));
            item.insert(shape.slots_field.clone(), Value::Array(vec![]));
            item.insert(shape.score_field.clone(), json!(1.0));
            Value::Object(item)
        })
        .collect();
    let mut body = Value::Array(list);
    if !shape.templates_path.is_empty() {
        for segment in shape.templates_path.rsplit('.') {
            let mut wrapper = Map::new();
            wrapper.insert(segment.to_owned(), body);
            body = Value::Object(wrapper);
        }
    }
    body
}

#[derive(Debug, Default)]
pub struct Gauges {
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    requests: AtomicU64,
}

impl Gauges {
    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }
}

struct InFlight<'a>(&'a Gauges);

impl<'a> InFlight<'a> {
    fn enter(g: &'a Gauges) -> Self {
        g.requests.fetch_add(1, Ordering::SeqCst);
        let now = g.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        g.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(g)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

struct AppState {
    script: BehaviorScript,
    overrides: Vec<(Regex, BehaviorSpec)>,
    gauges: Arc<Gauges>,
}

impl AppState {
    fn spec_for(&self, question: &str) -> &BehaviorSpec {
        self.overrides
            .iter()
            .find(|(re, _)| re.is_match(question))
            .map(|(_, spec)| spec)
            .unwrap_or(&self.script.default)
    }
}

async fn handle_tgm(State(state): State<Arc<AppState>>, body: Option<Json<Value>>) -> Response {
    let _guard = InFlight::enter(&state.gauges);
    if state.script.delay_ms > 0 {
        tokio::time::sleep(Duration::from_millis(state.script.delay_ms)).await;
    }
    let Some(Json(body)) = body else {
        return (StatusCode::BAD_REQUEST, Json(json!({"error": "expected a JSON body"}))).into_response();
    };
    let Some(question) = body.get(&state.script.request_shape.text_field).and_then(Value::as_str) else {
        return (
            StatusCode::BAD_REQUEST,
            Json(json!({"error": format!("missing string field '{}'", state.script.request_shape.text_field)})),
        )
            .into_response();
    };
    match resolve_spec(state.spec_for(question)) {
        Ok(MockReply::Status(code)) => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            (status, Json(json!({"error": "scripted status"}))).into_response()
        }
        Ok(MockReply::Templates(texts)) => Json(render_body(&state.script.response_shape, &texts)).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": e.to_string()}))).into_response(),
    }
}

async fn handle_stats(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "in_flight": state.gauges.in_flight(),
        "max_in_flight": state.gauges.max_in_flight(),
        "requests": state.gauges.requests(),
    }))
}

pub struct MockHandle {
    addr: SocketAddr,
    gauges: Arc<Gauges>,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl MockHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// URL accepting template requests.
    pub fn url(&self) -> String {
        format!("http://{}/tgm", self.addr)
    }

    pub fn gauges(&self) -> &Gauges {
        &self.gauges
    }

    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match (&mut self.task).await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }

    /// Run until the server task ends (for the CLI).
    pub async fn wait(mut self) -> std::io::Result<()> {
        match (&mut self.task).await {
            Ok(r) => r,
            Err(e) => Err(std::io::Error::other(e)),
        }
    }
}

impl Drop for MockHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Start serving `script` on `addr` (port 0 picks a free port). Requests are
/// accepted on `POST /tgm` and `POST /`; `GET /stats` reports the gauges.
pub async fn serve(script: BehaviorScript, addr: SocketAddr) -> Result<MockHandle, MockError> {
    let overrides = script
        .overrides
        .iter()
        .map(|o| {
            Regex::new(&o.pattern)
                .map(|re| (re, o.spec.clone()))
                .map_err(|source| MockError::Pattern {
                    pattern: o.pattern.clone(),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let gauges = Arc::new(Gauges::default());
    let state = Arc::new(AppState {
        script,
        overrides,
        gauges: gauges.clone(),
    });
    let app = Router::new()
        .route("/", post(handle_tgm))
        .route("/tgm", post(handle_tgm))
        .route("/stats", get(handle_stats))
        .with_state(state);
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| MockError::Bind { addr, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| MockError::Bind { addr, source })?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    Ok(MockHandle {
        addr,
        gauges,
        shutdown: Some(tx),
        task,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparql::{range_of, FormKind};

    fn parse(text: &str) -> QueryAst {
        parse_query(text, &PrefixEnv::with_defaults()).unwrap()
    }

    #[test]
    fn disconnected_target_uses_v9() {
        let out = apply_mutation(&parse("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 }"), Mutation::AddDisconnectedTarget).unwrap();
        assert_eq!(out, "SELECT ?v1 ?v9 WHERE { ?v1 ?v2 ?v3 . }");
    }

    #[test]
    fn fresh_names_skip_taken_ones() {
        let out = apply_mutation(&parse("SELECT ?v9 WHERE { ?v9 ?v10 ?v3 }"), Mutation::AddDisconnectedTriple).unwrap();
        assert_eq!(out, "SELECT ?v9 WHERE { ?v9 ?v10 ?v3 . ?v11 ?v12 ?v13 . }");
    }

    #[test]
    fn drop_range_and_break_syntax() {
        let base = parse("SELECT ?v1 WHERE { ?v1 ?v2 ?v3 } LIMIT 1 OFFSET 1");
        let dropped = parse(&apply_mutation(&base, Mutation::DropRange).unwrap());
        assert_eq!(range_of(&dropped), None);
        let broken = apply_mutation(&base, Mutation::BreakSyntax).unwrap();
        assert!(parse_query(&broken, &PrefixEnv::with_defaults()).is_err());
        let ask = parse("ASK { ?a ?b ?c }");
        assert_eq!(
            apply_mutation(&ask, Mutation::DropRange),
            Err(MutationError::NotApplicable {
                mutation: Mutation::DropRange
            })
        );
    }

    #[test]
    fn flip_form_both_ways() {
        let flipped = parse(&apply_mutation(&parse(ECHO_TEMPLATE), Mutation::FlipForm).unwrap());
        assert_eq!(flipped.form_kind(), FormKind::Ask);
        let flipped = parse(&apply_mutation(&parse("ASK { ?a ?b ?c }"), Mutation::FlipForm).unwrap());
        assert_eq!(flipped.form_kind(), FormKind::Select);
    }

    #[test]
    fn nested_body_shape() {
        let shape = ResponseShape {
            templates_path: "a.b".into(),
            ..ResponseShape::default()
        };
        let body = render_body(&shape, &["ASK {}".to_owned()]);
        assert_eq!(body["a"]["b"][0]["query"], "ASK {}");
        let parsed = crate::tgm_client::parse_templates(&shape, &body).unwrap();
        assert_eq!(parsed[0].query_text, "ASK {}");
    }

    #[test]
    fn mutate_on_status_base_is_an_error() {
        let spec = BehaviorSpec::Mutate {
            base: Box::new(BehaviorSpec::Status { code: 500 }),
            mutation: Mutation::FlipForm,
        };
        assert_eq!(resolve_spec(&spec), Err(MutationError::NoTemplate));
    }

    #[test]
    fn script_json_shape() {
        let script: BehaviorScript = serde_json::from_value(json!({
            "default": {"kind": "echo_select"},
            "overrides": [
                {"pattern": "(?i)capital", "spec": {"kind": "mutate", "base": {"kind": "echo_select"}, "mutation": "add_disconnected_triple"}}
            ]
        }))
        .unwrap();
        assert_eq!(script.overrides.len(), 1);
        assert_eq!(script.delay_ms, 0);
    }
}
