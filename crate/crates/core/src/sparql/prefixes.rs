use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Namespace mappings the dataset queries rely on without declaring them.
/// `reds` is kept next to `rdfs` because some gold queries spell it that way.
pub const DEFAULT_PREFIXES: &[(&str, &str)] = &[
    ("dc", "http://purl.org/dc/elements/1.1/"),
    ("foaf", "http://xmlns.com/foaf/0.1/"),
    ("obo", "http://purl.obolibrary.org/obo/"),
    ("onto", "http://dbpedia.org/ontology/"),
    ("owl", "http://www.w3.org/2002/07/owl#"),
    ("prop", "http://dbpedia.org/property/"),
    ("rdf", "http://www.w3.org/1999/02/22-rdf-syntax-ns#"),
    ("rdfs", "http://www.w3.org/2000/01/rdf-schema#"),
    ("reds", "http://www.w3.org/2000/01/rdf-schema#"),
    ("res", "http://dbpedia.org/resource/"),
    ("xsd", "http://www.w3.org/2001/XMLSchema#"),
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PrefixError {
    #[error("namespace IRI for prefix '{0}' is empty")]
    EmptyIri(String),
    #[error("namespace IRI for prefix '{prefix}' contains whitespace: {iri:?}")]
    Whitespace { prefix: String, iri: String },
}

/// Ordered prefix label → namespace IRI table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PrefixEnv {
    mappings: BTreeMap<String, String>,
}

impl PrefixEnv {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_defaults() -> Self {
        let mut env = Self::empty();
        for (prefix, iri) in DEFAULT_PREFIXES {
            env.mappings.insert((*prefix).to_owned(), (*iri).to_owned());
        }
        env
    }

    pub fn insert(&mut self, prefix: impl Into<String>, iri: impl Into<String>) -> Result<(), PrefixError> {
        let prefix = prefix.into();
        let iri = iri.into();
        if iri.is_empty() {
            return Err(PrefixError::EmptyIri(prefix));
        }
        if iri.chars().any(char::is_whitespace) {
            return Err(PrefixError::Whitespace { prefix, iri });
        }
        self.mappings.insert(prefix, iri);
        Ok(())
    }

    /// Overlay `other` on top of `self`; entries in `other` win.
    pub fn merged(&self, other: &PrefixEnv) -> PrefixEnv {
        let mut out = self.clone();
        out.mappings
            .extend(other.mappings.iter().map(|(k, v)| (k.clone(), v.clone())));
        out
    }

    pub fn get(&self, prefix: &str) -> Option<&str> {
        self.mappings.get(prefix).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.mappings.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.mappings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mappings.is_empty()
    }
}
