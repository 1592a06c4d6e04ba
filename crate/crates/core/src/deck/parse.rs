//! Line-oriented scanner for the accepted deck subset.
//!
//! Every source line lands in exactly one place: the raw text of a keyword
//! (its name line, its record lines and any comments between records), the
//! leading trivia of the next keyword, or the tail trivia of the file. That
//! partition is what makes unmodified decks render byte-for-byte.

use std::collections::BTreeMap;

use super::token::classify;
use super::{is_section_name, Deck, DeckError, Entry, Keyword, Origin, Record, Token};

pub(crate) const MAX_INCLUDE_DEPTH: usize = 16;

enum Lexeme {
    Item(String),
    Slash,
}

struct Context<'r> {
    resolver: &'r dyn Fn(&str) -> Option<String>,
    entries: Vec<Entry>,
    tails: BTreeMap<String, String>,
    section: Option<(String, usize)>,
    section_count: usize,
    stack: Vec<String>,
}

struct Pending {
    name: String,
    leading: String,
    raw: String,
    records: Vec<Record>,
    items: Vec<Token>,
    record_line: usize,
    start_line: usize,
    end_line: usize,
    await_title: bool,
}

impl Pending {
    fn in_record(&self) -> bool {
        !self.items.is_empty()
    }
}

pub(crate) fn parse(main: &str, text: &str, resolver: &dyn Fn(&str) -> Option<String>) -> Result<Deck, DeckError> {
    if text.trim().is_empty() {
        return Err(DeckError::EmptyInput);
    }
    let mut ctx = Context {
        resolver,
        entries: Vec::new(),
        tails: BTreeMap::new(),
        section: None,
        section_count: 0,
        stack: vec![main.to_string()],
    };
    parse_file(&mut ctx, main, text)?;
    Ok(Deck {
        main_file: main.to_string(),
        entries: ctx.entries,
        tails: ctx.tails,
    })
}

fn parse_file(ctx: &mut Context<'_>, file: &str, text: &str) -> Result<(), DeckError> {
    let normalized;
    let text = if text.contains('\r') {
        normalized = text.replace("\r\n", "\n");
        normalized.as_str()
    } else {
        text
    };

    let mut buffer = String::new();
    let mut pending: Option<Pending> = None;

    for (idx, line) in text.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let content = line.strip_suffix('\n').unwrap_or(line);

        if let Some(p) = pending.as_mut() {
            if p.await_title {
                p.raw.push_str(line);
                p.records.push(Record::new(vec![Token::bare(content.trim())]));
                p.await_title = false;
                p.end_line = line_no;
                continue;
            }
            if p.in_record() {
                p.raw.push_str(line);
                p.end_line = line_no;
                feed(p, file, line_no, content)?;
                continue;
            }
        }

        if is_trivia(content) {
            buffer.push_str(line);
            continue;
        }

        if let Some(name) = keyword_line(content) {
            if let Some(done) = pending.take() {
                finish(ctx, file, done)?;
            }
            pending = Some(Pending {
                await_title: name == "TITLE",
                name: name.to_string(),
                leading: std::mem::take(&mut buffer),
                raw: line.to_string(),
                records: Vec::new(),
                items: Vec::new(),
                record_line: line_no,
                start_line: line_no,
                end_line: line_no,
            });
            continue;
        }

        match pending.as_mut() {
            None => {
                return Err(DeckError::DataOutsideKeyword {
                    file: file.to_string(),
                    line: line_no,
                })
            }
            Some(p) => {
                p.raw.push_str(&std::mem::take(&mut buffer));
                p.raw.push_str(line);
                p.end_line = line_no;
                feed(p, file, line_no, content)?;
            }
        }
    }

    if let Some(p) = pending.take() {
        if p.in_record() {
            return Err(DeckError::UnterminatedRecord {
                file: file.to_string(),
                line: p.record_line,
                keyword: p.name,
            });
        }
        finish(ctx, file, p)?;
    }
    ctx.tails.insert(file.to_string(), buffer);
    Ok(())
}

fn feed(p: &mut Pending, file: &str, line_no: usize, content: &str) -> Result<(), DeckError> {
    for lexeme in scan_line(content).map_err(|reason| DeckError::InvalidToken {
        file: file.to_string(),
        line: line_no,
        reason,
    })? {
        match lexeme {
            Lexeme::Item(text) => {
                let token = classify(&text).map_err(|reason| DeckError::InvalidToken {
                    file: file.to_string(),
                    line: line_no,
                    reason,
                })?;
                if p.items.is_empty() {
                    p.record_line = line_no;
                }
                p.items.push(token);
            }
            Lexeme::Slash => {
                let items = std::mem::take(&mut p.items);
                p.records.push(Record::new(items));
            }
        }
    }
    Ok(())
}

fn finish(ctx: &mut Context<'_>, file: &str, p: Pending) -> Result<(), DeckError> {
    let origin = Origin {
        file: file.to_string(),
        line_start: p.start_line,
        line_end: p.end_line,
    };
    let header = is_section_name(&p.name);
    if header {
        ctx.section = Some((p.name.clone(), ctx.section_count));
        ctx.section_count += 1;
    }
    let Some((section, ordinal)) = ctx.section.clone() else {
        return Err(DeckError::KeywordOutsideSection {
            keyword: p.name,
            file: file.to_string(),
            line: p.start_line,
        });
    };
    let include_target = if p.name == "INCLUDE" {
        let target = p
            .records
            .first()
            .and_then(|r| r.items.first())
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| DeckError::MalformedInclude {
                file: file.to_string(),
                line: p.start_line,
            })?;
        Some(target)
    } else {
        None
    };

    ctx.entries.push(Entry {
        keyword: Keyword {
            name: p.name,
            records: p.records,
            section,
            origin,
        },
        header,
        section_ordinal: ordinal,
        leading: p.leading,
        raw: Some(p.raw),
    });

    if let Some(target) = include_target {
        let line = p.start_line;
        if ctx.stack.iter().any(|f| f == &target) || ctx.tails.contains_key(&target) {
            return Err(DeckError::RepeatedInclude {
                name: target,
                file: file.to_string(),
                line,
            });
        }
        if ctx.stack.len() >= MAX_INCLUDE_DEPTH {
            return Err(DeckError::IncludeTooDeep {
                file: file.to_string(),
                line,
            });
        }
        let text = (ctx.resolver)(&target).ok_or_else(|| DeckError::UnknownInclude {
            name: target.clone(),
            file: file.to_string(),
            line,
        })?;
        ctx.stack.push(target.clone());
        parse_file(ctx, &target, &text)?;
        ctx.stack.pop();
    }
    Ok(())
}

fn is_trivia(content: &str) -> bool {
    let t = content.trim_start();
    t.is_empty() || t.starts_with("--")
}

/// A keyword line holds a single uppercase name starting in column one,
/// optionally followed by a comment.
fn keyword_line(content: &str) -> Option<&str> {
    let first = content.chars().next()?;
    if !first.is_ascii_uppercase() {
        return None;
    }
    let end = content.find(|c: char| c.is_whitespace()).unwrap_or(content.len());
    let (name, rest) = content.split_at(end);
    let rest = rest.trim_start();
    if !(rest.is_empty() || rest.starts_with("--")) {
        return None;
    }
    super::is_keyword_name(name).then_some(name)
}

/// Split one line into lexemes. A `--` outside quotes starts a comment; text
/// after a terminating slash is ignored.
fn scan_line(content: &str) -> Result<Vec<Lexeme>, String> {
    let mut out = Vec::new();
    let chars: Vec<char> = content.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            break;
        }
        if c == '/' {
            out.push(Lexeme::Slash);
            break;
        }
        let mut text = String::new();
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() || c == '/' {
                break;
            }
            if c == '-' && chars.get(i + 1) == Some(&'-') {
                break;
            }
            if c == '\'' || c == '"' {
                let close = chars[i + 1..]
                    .iter()
                    .position(|&d| d == c)
                    .ok_or_else(|| format!("unterminated string starting at column {}", i + 1))?;
                text.extend(&chars[i..=i + 1 + close]);
                i += close + 2;
                continue;
            }
            text.push(c);
            i += 1;
        }
        out.push(Lexeme::Item(text));
    }
    Ok(out)
}

/// Tokens of a single canonical record line, used to validate rewrites.
pub(crate) fn reparse_token(text: &str) -> Option<Token> {
    match scan_line(text).ok()?.as_slice() {
        [Lexeme::Item(t)] => classify(t).ok(),
        _ => None,
    }
}
