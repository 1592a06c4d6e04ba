//! ECLIPSE-style input decks: lossless parsing, section/keyword queries and
//! canonical rewrites.
//!
//! A [`Deck`] keeps the exact source text of every keyword it has not been
//! asked to change, so rendering an untouched deck reproduces the input
//! byte-for-byte (after CRLF normalization). Rewritten keywords are emitted
//! canonically: the name on its own line, then one line per record with
//! single spaces between tokens and a trailing ` /`.
//!
//! The accepted grammar is documented in `docs/deck-grammar.md`.

mod parse;
mod token;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use token::{format_number, Number, Token};

pub(crate) use token::is_identifier;

/// Section names recognised as section headers, in conventional order.
pub const SECTION_NAMES: [&str; 8] = [
    "RUNSPEC", "GRID", "EDIT", "PROPS", "REGIONS", "SOLUTION", "SUMMARY", "SCHEDULE",
];

pub fn is_section_name(name: &str) -> bool {
    SECTION_NAMES.contains(&name)
}

pub(crate) fn is_keyword_name(name: &str) -> bool {
    (1..=8).contains(&name.len())
        && name.starts_with(|c: char| c.is_ascii_uppercase())
        && name
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeckError {
    #[error("deck is empty")]
    EmptyInput,
    #[error("{file}:{line}: record of keyword {keyword} is not terminated by '/'")]
    UnterminatedRecord { file: String, line: usize, keyword: String },
    #[error("{file}:{line}: {reason}")]
    InvalidToken { file: String, line: usize, reason: String },
    #[error("{file}:{line}: cannot resolve included file '{name}'")]
    UnknownInclude { name: String, file: String, line: usize },
    #[error("{file}:{line}: file '{name}' is included more than once")]
    RepeatedInclude { name: String, file: String, line: usize },
    #[error("{file}:{line}: includes nested deeper than {}", parse::MAX_INCLUDE_DEPTH)]
    IncludeTooDeep { file: String, line: usize },
    #[error("{file}:{line}: INCLUDE needs a file name record")]
    MalformedInclude { file: String, line: usize },
    #[error("{file}:{line}: keyword {keyword} appears before any section header")]
    KeywordOutsideSection { keyword: String, file: String, line: usize },
    #[error("{file}:{line}: data found before any keyword")]
    DataOutsideKeyword { file: String, line: usize },
    #[error("unknown section {0}")]
    UnknownSection(String),
    #[error("keyword {keyword} not found in section {section}")]
    UnknownKeyword { section: String, keyword: String },
    #[error("keyword {keyword} in {section} has {count} occurrence(s); index {occurrence} is out of range")]
    OccurrenceOutOfRange {
        section: String,
        keyword: String,
        occurrence: usize,
        count: usize,
    },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("record contains placeholder {0}")]
    PlaceholderPresent(String),
    #[error("cannot read deck file {path}: {message}")]
    Io { path: String, message: String },
}

/// Where a keyword came from. Lines are 1-based and inclusive; keywords
/// created by a rewrite carry line 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub file: String,
    pub line_start: usize,
    pub line_end: usize,
}

/// One slash-terminated group of tokens.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub items: Vec<Token>,
}

impl Record {
    pub fn new(items: Vec<Token>) -> Self {
        Self { items }
    }

    /// Length after star expansion.
    pub fn expanded_len(&self) -> usize {
        self.items.iter().map(Token::multiplicity).sum()
    }

    /// Star-expand repeats and default markers into scalar tokens.
    pub fn expand(&self) -> Result<Vec<Token>, DeckError> {
        let mut out = Vec::with_capacity(self.expanded_len());
        for item in &self.items {
            if let Some(name) = item.placeholder_name() {
                return Err(DeckError::PlaceholderPresent(name.to_string()));
            }
            match item {
                Token::Repeat { count, value } => {
                    out.extend(std::iter::repeat_n(value.as_ref().clone(), *count as usize))
                }
                Token::Default { count } => {
                    out.extend(std::iter::repeat_n(Token::Default { count: 1 }, *count as usize))
                }
                other => out.push(other.clone()),
            }
        }
        Ok(out)
    }

    /// Expanded numeric values; `None` if any item is not a number.
    pub fn numbers(&self) -> Option<Vec<f64>> {
        self.expand()
            .ok()?
            .iter()
            .map(Token::as_f64)
            .collect::<Option<Vec<_>>>()
    }

    /// The `index`-th expanded item (0-based), if present.
    pub fn item(&self, index: usize) -> Option<&Token> {
        let mut pos = 0;
        for item in &self.items {
            let m = item.multiplicity();
            if index < pos + m {
                return Some(match item {
                    Token::Repeat { value, .. } => value,
                    other => other,
                });
            }
            pos += m;
        }
        None
    }

    /// Float value of the `index`-th expanded item, treating defaults as absent.
    pub fn float(&self, index: usize) -> Option<f64> {
        self.item(index).and_then(Token::as_f64)
    }

    /// String value of the `index`-th expanded item (quoted or bare).
    pub fn text(&self, index: usize) -> Option<&str> {
        self.item(index).and_then(Token::as_str)
    }

    fn render(&self) -> String {
        if self.items.is_empty() {
            return "/\n".to_string();
        }
        let body: Vec<String> = self.items.iter().map(Token::to_string).collect();
        format!(" {} /\n", body.join(" "))
    }
}

/// Star-expand a record; fails if any placeholder is present.
pub fn expand_record(record: &Record) -> Result<Vec<Token>, DeckError> {
    record.expand()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    name: String,
    records: Vec<Record>,
    section: String,
    origin: Origin,
}

impl Keyword {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn section(&self) -> &str {
        &self.section
    }

    pub fn origin(&self) -> &Origin {
        &self.origin
    }

    /// All numeric values of all records, star-expanded.
    pub fn numbers(&self) -> Option<Vec<f64>> {
        let mut out = Vec::new();
        for r in &self.records {
            out.extend(r.numbers()?);
        }
        Some(out)
    }

    fn render(&self) -> String {
        let mut s = format!("{}\n", self.name);
        if self.name == "TITLE" {
            if let Some(text) = self.records.first().and_then(|r| r.items.first()) {
                s.push_str(text.as_str().unwrap_or_default());
                s.push('\n');
            }
            return s;
        }
        for r in &self.records {
            s.push_str(&r.render());
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct Entry {
    keyword: Keyword,
    header: bool,
    section_ordinal: usize,
    leading: String,
    raw: Option<String>,
}

/// Which occurrence of a keyword a rewrite targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Occurrence(usize),
    /// Add a new keyword at the end of the section.
    Append,
}

/// Position of one token inside a keyword: record index and raw item index
/// (before star expansion).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenPath {
    pub section: String,
    pub keyword: String,
    pub occurrence: usize,
    pub record: usize,
    pub item: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Deck {
    main_file: String,
    entries: Vec<Entry>,
    tails: BTreeMap<String, String>,
}

impl Deck {
    /// Parse a main deck named `main.DATA`; INCLUDE names go to `resolver`.
    pub fn parse(text: &str, resolver: &dyn Fn(&str) -> Option<String>) -> Result<Deck, DeckError> {
        parse::parse("main.DATA", text, resolver)
    }

    pub fn parse_named(name: &str, text: &str, resolver: &dyn Fn(&str) -> Option<String>) -> Result<Deck, DeckError> {
        parse::parse(name, text, resolver)
    }

    /// Parse a deck file from disk, resolving includes relative to its folder.
    pub fn from_path(path: &Path) -> Result<Deck, DeckError> {
        let text = std::fs::read_to_string(path).map_err(|e| DeckError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "main.DATA".to_string());
        parse::parse(&name, &text, &dir_resolver(dir))
    }

    pub fn main_file(&self) -> &str {
        &self.main_file
    }

    /// Files contributing to the deck, main file first.
    pub fn files(&self) -> Vec<&str> {
        let mut out = vec![self.main_file.as_str()];
        for e in &self.entries {
            let f = e.keyword.origin.file.as_str();
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }

    /// Render the main file.
    pub fn render(&self) -> String {
        self.render_file(&self.main_file)
    }

    /// Render one file of the deck; untouched keywords reproduce their
    /// source text exactly.
    pub fn render_file(&self, file: &str) -> String {
        let mut out = String::new();
        for e in self.entries.iter().filter(|e| e.keyword.origin.file == file) {
            out.push_str(&e.leading);
            match &e.raw {
                Some(raw) => out.push_str(raw),
                None => {
                    if !out.is_empty() && !out.ends_with('\n') {
                        out.push('\n');
                    }
                    out.push_str(&e.keyword.render());
                }
            }
        }
        if let Some(tail) = self.tails.get(file) {
            out.push_str(tail);
        }
        out
    }

    /// Render every file, keyed by file name.
    pub fn render_files(&self) -> BTreeMap<String, String> {
        self.files()
            .into_iter()
            .map(|f| (f.to_string(), self.render_file(f)))
            .collect()
    }

    /// Section names in source order, duplicates preserved.
    pub fn list_sections(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.header)
            .map(|e| e.keyword.name.as_str())
            .collect()
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.entries.iter().any(|e| e.header && e.keyword.name == section)
    }

    /// Keyword names of a section (all sections of that name), in source order.
    pub fn list_keywords(&self, section: &str) -> Result<Vec<&str>, DeckError> {
        if !self.has_section(section) {
            return Err(DeckError::UnknownSection(section.to_string()));
        }
        Ok(self
            .in_section(section)
            .into_iter()
            .map(|(_, e)| e.keyword.name.as_str())
            .collect())
    }

    pub fn get_keyword(&self, section: &str, keyword: &str, occurrence: usize) -> Result<&Keyword, DeckError> {
        let idx = self.locate(section, keyword, occurrence)?;
        Ok(&self.entries[idx].keyword)
    }

    /// Replace the records of one keyword occurrence, or append a new keyword
    /// to the end of the section. The rewritten keyword renders canonically;
    /// everything else keeps its source text.
    pub fn set_keyword(
        &self,
        section: &str,
        keyword: &str,
        slot: Slot,
        records: Vec<Record>,
    ) -> Result<Deck, DeckError> {
        validate_records(keyword, &records)?;
        let mut deck = self.clone();
        match slot {
            Slot::Occurrence(occurrence) => {
                let idx = self.locate(section, keyword, occurrence)?;
                let entry = &mut deck.entries[idx];
                entry.keyword.records = records;
                entry.raw = None;
            }
            Slot::Append => {
                if !is_keyword_name(keyword) {
                    return Err(DeckError::MalformedRecord(format!("invalid keyword name `{keyword}`")));
                }
                let last = self
                    .entries
                    .iter()
                    .rposition(|e| e.keyword.section == section)
                    .ok_or_else(|| DeckError::UnknownSection(section.to_string()))?;
                let ordinal = self.entries[last].section_ordinal;
                let entry = Entry {
                    keyword: Keyword {
                        name: keyword.to_string(),
                        records,
                        section: section.to_string(),
                        origin: Origin {
                            file: self.main_file.clone(),
                            line_start: 0,
                            line_end: 0,
                        },
                    },
                    header: false,
                    section_ordinal: ordinal,
                    leading: String::new(),
                    raw: None,
                };
                deck.entries.insert(last + 1, entry);
            }
        }
        Ok(deck)
    }

    /// Replace a single raw item of a keyword record. A repeat keeps its
    /// count and swaps only its value.
    pub fn set_token(&self, path: &TokenPath, token: Token) -> Result<Deck, DeckError> {
        let kw = self.get_keyword(&path.section, &path.keyword, path.occurrence)?;
        let mut records = kw.records.clone();
        let slot = records
            .get_mut(path.record)
            .and_then(|r| r.items.get_mut(path.item))
            .ok_or_else(|| {
                DeckError::MalformedRecord(format!(
                    "{} has no item {} in record {}",
                    path.keyword, path.item, path.record
                ))
            })?;
        *slot = match (slot.clone(), token) {
            (Token::Repeat { count, .. }, t) if t.is_scalar() => Token::repeat(count, t),
            (_, t) => t,
        };
        self.set_keyword(&path.section, &path.keyword, Slot::Occurrence(path.occurrence), records)
    }

    /// Replace every placeholder with a number from `values`. Keywords that
    /// held placeholders render canonically; a placeholder without a value
    /// is an error.
    pub fn fill_placeholders(&self, values: &BTreeMap<String, f64>) -> Result<Deck, DeckError> {
        let mut deck = self.clone();
        for entry in deck.entries.iter_mut().filter(|e| !e.header) {
            let mut touched = false;
            for record in &mut entry.keyword.records {
                for item in &mut record.items {
                    let Some(name) = item.placeholder_name() else { continue };
                    let value = *values
                        .get(name)
                        .ok_or_else(|| DeckError::PlaceholderPresent(name.to_string()))?;
                    *item = match item {
                        Token::Repeat { count, .. } => Token::repeat(*count, Token::number(value)),
                        _ => Token::number(value),
                    };
                    touched = true;
                }
            }
            if touched {
                entry.raw = None;
            }
        }
        Ok(deck)
    }

    /// The raw item at `path`.
    pub fn token(&self, path: &TokenPath) -> Option<&Token> {
        self.get_keyword(&path.section, &path.keyword, path.occurrence)
            .ok()?
            .records
            .get(path.record)?
            .items
            .get(path.item)
    }

    /// Every non-header keyword in source order.
    pub fn keywords(&self) -> impl Iterator<Item = &Keyword> {
        self.entries.iter().filter(|e| !e.header).map(|e| &e.keyword)
    }

    /// All occurrences of a keyword name, whatever the section.
    pub fn keywords_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Keyword> + 'a {
        self.keywords().filter(move |k| k.name == name)
    }

    pub fn find_keyword(&self, name: &str) -> Option<&Keyword> {
        self.keywords().find(|k| k.name == name)
    }

    /// Every placeholder token with its location.
    pub fn placeholders(&self) -> Vec<(String, TokenPath)> {
        let mut out = Vec::new();
        let mut seen: BTreeMap<(&str, &str), usize> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| !e.header) {
            let k = &e.keyword;
            let occ = seen.entry((k.section.as_str(), k.name.as_str())).or_insert(0);
            for (ri, r) in k.records.iter().enumerate() {
                for (ii, t) in r.items.iter().enumerate() {
                    if let Some(name) = t.placeholder_name() {
                        out.push((
                            name.to_string(),
                            TokenPath {
                                section: k.section.clone(),
                                keyword: k.name.clone(),
                                occurrence: *occ,
                                record: ri,
                                item: ii,
                            },
                        ));
                    }
                }
            }
            *occ += 1;
        }
        out
    }

    /// Section, name and records of every keyword; ignores formatting.
    pub fn structure(&self) -> Vec<(&str, &str, &[Record])> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.keyword.section.as_str(),
                    e.keyword.name.as_str(),
                    e.keyword.records.as_slice(),
                )
            })
            .collect()
    }

    /// Byte span of a keyword occurrence in the rendered main file, covering
    /// its own text but not the trivia in front of it.
    pub fn span_of(&self, section: &str, keyword: &str, occurrence: usize) -> Option<(usize, usize)> {
        let target = self.locate(section, keyword, occurrence).ok()?;
        let mut pos = 0;
        for (i, e) in self.entries.iter().enumerate() {
            if e.keyword.origin.file != self.main_file {
                continue;
            }
            pos += e.leading.len();
            let len = e
                .raw
                .as_ref()
                .map(String::len)
                .unwrap_or_else(|| e.keyword.render().len());
            if i == target {
                return Some((pos, pos + len));
            }
            pos += len;
        }
        None
    }

    fn in_section(&self, section: &str) -> Vec<(usize, &Entry)> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.header && e.keyword.section == section)
            .collect()
    }

    fn locate(&self, section: &str, keyword: &str, occurrence: usize) -> Result<usize, DeckError> {
        if !self.has_section(section) {
            return Err(DeckError::UnknownSection(section.to_string()));
        }
        let hits: Vec<usize> = self
            .in_section(section)
            .into_iter()
            .filter(|(_, e)| e.keyword.name == keyword)
            .map(|(i, _)| i)
            .collect();
        if hits.is_empty() {
            return Err(DeckError::UnknownKeyword {
                section: section.to_string(),
                keyword: keyword.to_string(),
            });
        }
        hits.get(occurrence).copied().ok_or(DeckError::OccurrenceOutOfRange {
            section: section.to_string(),
            keyword: keyword.to_string(),
            occurrence,
            count: hits.len(),
        })
    }
}

/// Resolver that never finds anything.
pub fn no_includes(_: &str) -> Option<String> {
    None
}

/// Resolver reading included files relative to `dir`.
pub fn dir_resolver(dir: impl AsRef<Path>) -> impl Fn(&str) -> Option<String> {
    let dir = dir.as_ref().to_path_buf();
    move |name: &str| std::fs::read_to_string(dir.join(name)).ok()
}

/// Resolver over an in-memory bundle of files.
pub fn map_resolver(files: &BTreeMap<String, String>) -> impl Fn(&str) -> Option<String> + '_ {
    move |name: &str| files.get(name).cloned()
}

fn validate_records(keyword: &str, records: &[Record]) -> Result<(), DeckError> {
    if keyword == "TITLE" {
        return match records {
            [r] if matches!(r.items.as_slice(), [Token::Bare { text }] if !text.contains('\n')) => Ok(()),
            _ => Err(DeckError::MalformedRecord(
                "TITLE takes a single line of text".to_string(),
            )),
        };
    }
    for record in records {
        for token in &record.items {
            check_token(token)?;
        }
    }
    Ok(())
}

fn check_token(token: &Token) -> Result<(), DeckError> {
    let bad = |why: &str| Err(DeckError::MalformedRecord(format!("`{token}`: {why}")));
    match token {
        Token::Repeat { count, value } => {
            if *count == 0 {
                return bad("repeat count must be at least 1");
            }
            if !value.is_scalar() {
                return bad("repeat value must be a scalar");
            }
            check_token(value)
        }
        Token::Default { count } if *count == 0 => bad("default count must be at least 1"),
        Token::Number(n) if !n.value().is_finite() => bad("numbers must be finite"),
        Token::Placeholder { name } if !is_identifier(name) => bad("invalid placeholder name"),
        Token::Quoted { text } if text.contains(['\'', '\n']) => bad("quoted text cannot hold quotes or newlines"),
        _ => match parse::reparse_token(&token.to_string()) {
            Some(back) if &back == token => Ok(()),
            _ => bad("token would not read back as itself"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Deck {
        Deck::parse(text, &no_includes).unwrap()
    }

    #[test]
    fn dimens_record() {
        let deck = parse("RUNSPEC\nDIMENS\n 10 10 3 /\n");
        assert_eq!(deck.list_sections(), ["RUNSPEC"]);
        let kw = deck.get_keyword("RUNSPEC", "DIMENS", 0).unwrap();
        assert_eq!(kw.records()[0].numbers().unwrap(), vec![10.0, 10.0, 3.0]);
        assert_eq!(kw.origin().line_start, 2);
        assert_eq!(kw.origin().line_end, 3);
    }

    #[test]
    fn comment_only_prefix_is_trivia() {
        let text = "-- only a comment\nRUNSPEC\n";
        let deck = parse(text);
        assert_eq!(deck.list_sections(), ["RUNSPEC"]);
        assert_eq!(deck.list_keywords("RUNSPEC").unwrap(), Vec::<&str>::new());
        assert_eq!(deck.entries[0].leading, "-- only a comment\n");
        assert_eq!(deck.render(), text);
    }

    #[test]
    fn repeat_record() {
        let deck = parse("GRID\nPORO\n 300*0.3 /\n");
        let kw = deck.get_keyword("GRID", "PORO", 0).unwrap();
        assert_eq!(kw.records()[0].items, vec![Token::repeat(300, Token::number(0.3))]);
        assert_eq!(kw.records()[0].expanded_len(), 300);
    }

    #[test]
    fn parse_errors_are_located() {
        let err = Deck::parse("RUNSPEC\nDIMENS\n 10 10 3\n", &no_includes).unwrap_err();
        assert_eq!(
            err,
            DeckError::UnterminatedRecord {
                file: "main.DATA".into(),
                line: 3,
                keyword: "DIMENS".into()
            }
        );
        assert!(err.to_string().contains(":3:"));
        assert_eq!(Deck::parse("  \n", &no_includes).unwrap_err(), DeckError::EmptyInput);
        assert!(matches!(
            Deck::parse("DIMENS\n 1 1 1 /\n", &no_includes).unwrap_err(),
            DeckError::KeywordOutsideSection { line: 1, .. }
        ));
        assert!(matches!(
            Deck::parse("GRID\nINCLUDE\n 'x.inc' /\n", &no_includes).unwrap_err(),
            DeckError::UnknownInclude { line: 2, .. }
        ));
        assert!(matches!(
            Deck::parse("GRID\nWELSPECS\n 'A B /\n", &no_includes).unwrap_err(),
            DeckError::InvalidToken { line: 3, .. }
        ));
    }

    #[test]
    fn empty_deck_has_no_sections() {
        assert!(Deck::default().list_sections().is_empty());
    }

    #[test]
    fn unknown_section_and_keyword() {
        let deck = parse("GRID\nPERMX\n 1 /\nPERMX\n 2 /\n");
        assert_eq!(deck.list_keywords("GRID").unwrap(), ["PERMX", "PERMX"]);
        assert_eq!(
            deck.list_keywords("EDIT").unwrap_err(),
            DeckError::UnknownSection("EDIT".into())
        );
        assert!(matches!(
            deck.get_keyword("GRID", "PORO", 0),
            Err(DeckError::UnknownKeyword { .. })
        ));
        assert!(matches!(
            deck.get_keyword("GRID", "PERMX", 5),
            Err(DeckError::OccurrenceOutOfRange { count: 2, .. })
        ));
        assert_eq!(
            deck.get_keyword("GRID", "PERMX", 1).unwrap().records()[0].float(0),
            Some(2.0)
        );
    }

    #[test]
    fn rewrite_is_canonical_and_local() {
        let text = "GRID\n-- perms\nPERMX\n  100*500   100*50 100*200/\nPORO\n 300*0.3 /\n";
        let deck = parse(text);
        let rec = Record::new(vec![
            Token::repeat(100, Token::number(400.0)),
            Token::repeat(100, Token::number(60.0)),
            Token::repeat(100, Token::number(300.0)),
        ]);
        let out = deck
            .set_keyword("GRID", "PERMX", Slot::Occurrence(0), vec![rec])
            .unwrap()
            .render();
        assert_eq!(
            out,
            "GRID\n-- perms\nPERMX\n 100*400 100*60 100*300 /\nPORO\n 300*0.3 /\n"
        );
    }

    #[test]
    fn idempotent_rewrite_canonicalizes_only_target() {
        let text = "GRID\nPERMX\n  100*500   100*50 100*200/\nPORO\n 300*0.3    /\n";
        let deck = parse(text);
        let records = deck.get_keyword("GRID", "PERMX", 0).unwrap().records().to_vec();
        let out = deck.set_keyword("GRID", "PERMX", Slot::Occurrence(0), records).unwrap();
        assert_eq!(
            out.render(),
            "GRID\nPERMX\n 100*500 100*50 100*200 /\nPORO\n 300*0.3    /\n"
        );
        assert_eq!(out.structure(), deck.structure());
    }

    #[test]
    fn append_needs_existing_section() {
        let deck = parse("GRID\nPORO\n 1*0.3 /\n");
        let rec = Record::new(vec![Token::quoted("F1"), Token::number(0.5)]);
        assert_eq!(
            deck.set_keyword("EDIT", "MULTFLT", Slot::Append, vec![rec.clone(), Record::default()])
                .unwrap_err(),
            DeckError::UnknownSection("EDIT".into())
        );
        let out = deck
            .set_keyword("GRID", "MULTFLT", Slot::Append, vec![rec, Record::default()])
            .unwrap();
        assert_eq!(out.render(), "GRID\nPORO\n 1*0.3 /\nMULTFLT\n 'F1' 0.5 /\n/\n");
    }

    #[test]
    fn malformed_records_rejected() {
        let deck = parse("GRID\nPORO\n 1 /\n");
        for bad in [
            Token::bare("has space"),
            Token::bare("10"),
            Token::bare("a/b"),
            Token::Default { count: 0 },
            Token::repeat(2, Token::Default { count: 1 }),
            Token::quoted("it's"),
        ] {
            let err = deck
                .set_keyword("GRID", "PORO", Slot::Occurrence(0), vec![Record::new(vec![bad])])
                .unwrap_err();
            assert!(matches!(err, DeckError::MalformedRecord(_)), "{err}");
        }
    }

    #[test]
    fn expand_examples() {
        let r = Record::new(vec![Token::repeat(3, Token::number(0.3))]);
        assert_eq!(expand_record(&r).unwrap(), vec![Token::number(0.3); 3]);
        let r = Record::new(vec![Token::number(10.0), Token::number(10.0), Token::number(3.0)]);
        assert_eq!(expand_record(&r).unwrap(), r.items);
        let r = Record::new(vec![Token::repeat(2, Token::placeholder("P"))]);
        assert_eq!(
            expand_record(&r).unwrap_err(),
            DeckError::PlaceholderPresent("P".into())
        );
    }

    #[test]
    fn crlf_is_normalized() {
        let deck = parse("RUNSPEC\r\nDIMENS\r\n 1 2 3 /\r\n");
        assert_eq!(deck.render(), "RUNSPEC\nDIMENS\n 1 2 3 /\n");
    }

    #[test]
    fn title_is_free_text() {
        let text = "RUNSPEC\nTITLE\n A / title -- kept\nDIMENS\n 1 1 1 /\n";
        let deck = parse(text);
        let kw = deck.get_keyword("RUNSPEC", "TITLE", 0).unwrap();
        assert_eq!(kw.records()[0].items, vec![Token::bare("A / title -- kept")]);
        assert_eq!(deck.render(), text);
    }

    #[test]
    fn includes_are_inlined_but_render_separately() {
        let mut files = BTreeMap::new();
        files.insert("g.inc".to_string(), "PORO\n 4*0.2 /\n".to_string());
        let text = "GRID\nINCLUDE\n 'g.inc' /\nPERMX\n 4*10 /\n";
        let deck = Deck::parse(text, &map_resolver(&files)).unwrap();
        assert_eq!(deck.list_keywords("GRID").unwrap(), ["INCLUDE", "PORO", "PERMX"]);
        assert_eq!(deck.get_keyword("GRID", "PORO", 0).unwrap().origin().file, "g.inc");
        assert_eq!(deck.render(), text);
        assert_eq!(deck.render_file("g.inc"), "PORO\n 4*0.2 /\n");
        let edited = deck
            .set_keyword(
                "GRID",
                "PORO",
                Slot::Occurrence(0),
                vec![Record::new(vec![Token::repeat(4, Token::number(0.25))])],
            )
            .unwrap();
        assert_eq!(edited.render(), text);
        assert_eq!(edited.render_file("g.inc"), "PORO\n 4*0.25 /\n");
    }

    #[test]
    fn recursive_include_rejected() {
        let mut files = BTreeMap::new();
        files.insert("a.inc".to_string(), "INCLUDE\n 'a.inc' /\n".to_string());
        let err = Deck::parse("GRID\nINCLUDE\n 'a.inc' /\n", &map_resolver(&files)).unwrap_err();
        assert!(matches!(err, DeckError::RepeatedInclude { .. }));
    }

    #[test]
    fn set_token_keeps_repeat_count() {
        let deck = parse("GRID\nPERMX\n 100*500 100*50 /\n");
        let path = TokenPath {
            section: "GRID".into(),
            keyword: "PERMX".into(),
            occurrence: 0,
            record: 0,
            item: 1,
        };
        let out = deck.set_token(&path, Token::placeholder("PERM_L2")).unwrap();
        assert_eq!(out.render(), "GRID\nPERMX\n 100*500 100*{{PERM_L2}} /\n");
        assert_eq!(out.placeholders(), vec![("PERM_L2".to_string(), path)]);
    }
}
