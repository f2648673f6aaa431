use proptest::prelude::*;
use tgm_eval::sparql::{parse_query, range_of, serialize, triple_patterns, PrefixEnv, Term};

fn var() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["?a", "?b", "?c", "?d", "?uri", "$e"]).prop_map(str::to_owned)
}

fn node() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => var(),
        1 => (0u8..20).prop_map(|n| format!("<http://example.org/r{n}>")),
        1 => prop::sample::select(vec!["res:Berlin", "onto:City", "rdf:type", "foaf:name"]).prop_map(str::to_owned),
        1 => (0u8..3).prop_map(|n| format!("_:b{n}")),
    ]
}

fn object() -> impl Strategy<Value = String> {
    prop_oneof![
        4 => node(),
        1 => prop::sample::select(vec!["\"Berlin\"@en", "\"x y\"", "42", "\"7\"^^xsd:integer", "true"]).prop_map(str::to_owned),
    ]
}

fn predicate() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => var(),
        1 => Just("a".to_owned()),
        1 => prop::sample::select(vec!["onto:country", "rdf:type", "<http://example.org/p>"]).prop_map(str::to_owned),
    ]
}

fn triple() -> impl Strategy<Value = String> {
    (node(), predicate(), object()).prop_map(|(s, p, o)| format!("{s} {p} {o} ."))
}

fn element() -> impl Strategy<Value = String> {
    prop_oneof![
        6 => triple(),
        1 => triple().prop_map(|t| format!("OPTIONAL {{ {t} }}")),
        1 => (triple(), triple()).prop_map(|(l, r)| format!("{{ {l} }} UNION {{ {r} }}")),
        1 => (var(), 0i32..100).prop_map(|(v, n)| format!("FILTER ( {v} > {n} )")),
        1 => var().prop_map(|v| format!("FILTER ( regex(str({v}), \"^a\", \"i\") && !BOUND({v}) )")),
        1 => var().prop_map(|v| format!("BIND ( {v} AS ?z )")),
        1 => var().prop_map(|v| format!("VALUES {v} {{ <http://example.org/v> UNDEF }}")),
    ]
}

fn query() -> impl Strategy<Value = String> {
    let form = prop_oneof![
        1 => Just("ASK".to_owned()),
        3 => (any::<bool>(), prop::collection::vec(var(), 1..3)).prop_map(|(d, vs)| {
            format!("SELECT {}{}", if d { "DISTINCT " } else { "" }, vs.join(" "))
        }),
        1 => Just("SELECT *".to_owned()),
        1 => var().prop_map(|v| format!("SELECT (COUNT(DISTINCT {v}) AS ?n)")),
    ];
    let modifiers = (
        prop::option::of(var()),
        prop::option::of(0u64..50),
        prop::option::of(0u64..50),
    )
        .prop_map(|(order, limit, offset)| {
            let mut m = String::new();
            if let Some(v) = order {
                m.push_str(&format!(" ORDER BY DESC({v}) ?b"));
            }
            if let Some(l) = limit {
                m.push_str(&format!(" LIMIT {l}"));
            }
            if let Some(o) = offset {
                m.push_str(&format!(" OFFSET {o}"));
            }
            m
        });
    (form, prop::collection::vec(element(), 1..7), modifiers).prop_map(|(f, body, m)| {
        let m = if f == "ASK" { String::new() } else { m };
        format!("{f} WHERE {{ {} }}{m}", body.join(" "))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn serialization_round_trips(text in query()) {
        let env = PrefixEnv::with_defaults();
        let ast = parse_query(&text, &env).map_err(|e| TestCaseError::fail(format!("{text}: {e}")))?;
        let canonical = serialize(&ast);
        let again = parse_query(&canonical, &env).map_err(|e| TestCaseError::fail(format!("{canonical}: {e}")))?;
        prop_assert_eq!(&again, &ast);
        prop_assert_eq!(serialize(&again), canonical);
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,80}") {
        let _ = parse_query(&text, &PrefixEnv::with_defaults());
    }

    #[test]
    fn parser_never_panics_on_near_queries(text in query(), cut in 0usize..200, junk in "[{}().;?<>\"a-z ]{0,4}") {
        let mut t: String = text.chars().take(cut).collect();
        t.push_str(&junk);
        let _ = parse_query(&t, &PrefixEnv::with_defaults());
    }

    #[test]
    fn range_follows_limit_and_offset(l in prop::option::of(1u64..1000), o in prop::option::of(0u64..1000)) {
        let mut text = "SELECT ?x WHERE { ?x ?p ?o . }".to_owned();
        if let Some(l) = l { text.push_str(&format!(" LIMIT {l}")); }
        if let Some(o) = o { text.push_str(&format!(" OFFSET {o}")); }
        let ast = parse_query(&text, &PrefixEnv::with_defaults()).unwrap();
        match range_of(&ast) {
            None => prop_assert!(l.is_none() && o.is_none()),
            Some(r) => {
                prop_assert_eq!(r.length, l);
                prop_assert_eq!(r.start, o.unwrap_or(0) + 1);
            }
        }
    }
}

#[test]
fn declared_prefix_overrides_default() {
    let env = PrefixEnv::with_defaults();
    let ast = parse_query("PREFIX res: <http://example.org/> SELECT ?x WHERE { ?x ?p res:Berlin . }", &env).unwrap();
    assert_eq!(triple_patterns(&ast)[0].object, Term::Iri("http://example.org/Berlin".into()));
    let ast = parse_query("SELECT ?x WHERE { ?x ?p res:Berlin . }", &env).unwrap();
    assert_eq!(triple_patterns(&ast)[0].object, Term::Iri("http://dbpedia.org/resource/Berlin".into()));
}

#[test]
fn unsupported_constructs_are_rejected() {
    let env = PrefixEnv::with_defaults();
    for text in [
        "SELECT ?x WHERE { ?x onto:a/onto:b ?y . }",
        "SELECT ?x WHERE { { SELECT ?x WHERE { ?x ?p ?o . } } }",
        "SELECT ?x WHERE { SERVICE <http://x> { ?x ?p ?o . } }",
        "SELECT ?x WHERE { GRAPH ?g { ?x ?p ?o . } }",
        "SELECT ?x WHERE { ?x ?p ?o . MINUS { ?x ?q ?o . } }",
        "CONSTRUCT { ?x ?p ?o } WHERE { ?x ?p ?o . }",
        "DESCRIBE ?x",
    ] {
        assert!(parse_query(text, &env).is_err(), "{text}");
    }
}
