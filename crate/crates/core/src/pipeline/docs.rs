//! Keyword reference lookup over a directory of `<KEYWORD>.txt` files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocSnippet {
    pub keyword: String,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocStore {
    docs: BTreeMap<String, String>,
}

impl DocStore {
    pub fn load(dir: &Path) -> io::Result<DocStore> {
        let mut docs = BTreeMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            docs.insert(stem.to_ascii_uppercase(), fs::read_to_string(&path)?);
        }
        Ok(DocStore { docs })
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self {
            docs: pairs
                .into_iter()
                .map(|(k, v)| (k.into().to_ascii_uppercase(), v.into()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Exact match first, then other keywords starting with the query in
    /// name order.
    pub fn lookup(&self, query: &str) -> Vec<DocSnippet> {
        let q = query.trim().to_ascii_uppercase();
        if q.is_empty() {
            return Vec::new();
        }
        let snippet = |(k, v): (&String, &String)| DocSnippet {
            keyword: k.clone(),
            text: v.clone(),
        };
        let exact = self.docs.get_key_value(&q).map(snippet);
        let prefixed = self
            .docs
            .range(q.clone()..)
            .take_while(|(k, _)| k.starts_with(&q))
            .filter(|(k, _)| **k != q)
            .map(snippet);
        exact.into_iter().chain(prefixed).collect()
    }
}
