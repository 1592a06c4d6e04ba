//! Loading decks and observations, with diagnostics fit for a 400 reply.

use std::collections::BTreeMap;
use std::path::Path;

use petromatch_core::deck::{Deck, DeckError};
use petromatch_core::misfit::{read_csv, ObservationSet};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    /// `deck` or `observations`.
    pub input: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Deck messages already carry their file and line.
        match &self.file {
            Some(_) => write!(f, "{}", self.message),
            None => write!(f, "{}: {}", self.input, self.message),
        }
    }
}

fn deck_diagnostic(e: &DeckError) -> Diagnostic {
    let (file, line) = match e {
        DeckError::UnterminatedRecord { file, line, .. }
        | DeckError::InvalidToken { file, line, .. }
        | DeckError::UnknownInclude { file, line, .. }
        | DeckError::RepeatedInclude { file, line, .. }
        | DeckError::IncludeTooDeep { file, line }
        | DeckError::MalformedInclude { file, line }
        | DeckError::KeywordOutsideSection { file, line, .. }
        | DeckError::DataOutsideKeyword { file, line } => (Some(file.clone()), Some(*line)),
        DeckError::Io { path, .. } => (Some(path.clone()), None),
        _ => (None, None),
    };
    Diagnostic {
        input: "deck",
        file,
        line,
        message: e.to_string(),
    }
}

/// Parse a deck whose INCLUDE files are supplied by name.
pub fn parse_deck(name: &str, text: &str, includes: &BTreeMap<String, String>) -> Result<Deck, Diagnostic> {
    Deck::parse_named(name, text, &|n| includes.get(n).cloned()).map_err(|e| deck_diagnostic(&e))
}

pub fn load_deck(path: &Path) -> Result<Deck, Diagnostic> {
    Deck::from_path(path).map_err(|e| deck_diagnostic(&e))
}

pub fn parse_observations(text: &str) -> Result<ObservationSet, Diagnostic> {
    let bad = |message: String| Diagnostic {
        input: "observations",
        file: None,
        line: None,
        message,
    };
    let series = read_csv(text).map_err(|e| bad(e.to_string()))?;
    if series.is_empty() {
        return Err(bad("no series found".into()));
    }
    ObservationSet::new(series).map_err(|e| bad(e.to_string()))
}

pub fn load_observations(path: &Path) -> Result<ObservationSet, Diagnostic> {
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
        input: "observations",
        file: Some(path.display().to_string()),
        line: None,
        message: e.to_string(),
    })?;
    parse_observations(&text)
}
