use std::fmt;

use serde::{Deserialize, Serialize};

/// A numeric literal that remembers how it was spelled in the source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Number {
    value: f64,
    text: String,
}

impl Number {
    /// A freshly created number, spelled as the shortest decimal that
    /// round-trips to `value`.
    pub fn new(value: f64) -> Self {
        Self {
            value,
            text: format_number(value),
        }
    }

    /// Parse a source spelling. Accepts `E`/`e`/`D`/`d` exponents.
    pub fn parse(text: &str) -> Option<Self> {
        let value = parse_number(text)?;
        Some(Self {
            value,
            text: text.to_string(),
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// One item of a slash-terminated record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Token {
    Number(Number),
    Quoted {
        text: String,
    },
    Bare {
        text: String,
    },
    /// `N*value`; the value is always a scalar token.
    Repeat {
        count: u32,
        value: Box<Token>,
    },
    /// `N*` (or a lone `*`): N defaulted items.
    Default {
        count: u32,
    },
    /// `{{NAME}}`
    Placeholder {
        name: String,
    },
}

impl Token {
    pub fn number(value: f64) -> Self {
        Token::Number(Number::new(value))
    }

    pub fn quoted(text: impl Into<String>) -> Self {
        Token::Quoted { text: text.into() }
    }

    pub fn bare(text: impl Into<String>) -> Self {
        Token::Bare { text: text.into() }
    }

    pub fn placeholder(name: impl Into<String>) -> Self {
        Token::Placeholder { name: name.into() }
    }

    pub fn repeat(count: u32, value: Token) -> Self {
        Token::Repeat {
            count,
            value: Box::new(value),
        }
    }

    /// Number of scalar items this token stands for after star expansion.
    pub fn multiplicity(&self) -> usize {
        match self {
            Token::Repeat { count, .. } | Token::Default { count } => *count as usize,
            _ => 1,
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Token::Repeat { .. } | Token::Default { .. })
    }

    /// Numeric value of a scalar number, or of the value inside a repeat.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Token::Number(n) => Some(n.value()),
            Token::Repeat { value, .. } => value.as_f64(),
            _ => None,
        }
    }

    /// String payload of a quoted string or bare word.
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Token::Quoted { text } | Token::Bare { text } => Some(text),
            _ => None,
        }
    }

    pub fn contains_placeholder(&self) -> bool {
        match self {
            Token::Placeholder { .. } => true,
            Token::Repeat { value, .. } => value.contains_placeholder(),
            _ => false,
        }
    }

    pub fn placeholder_name(&self) -> Option<&str> {
        match self {
            Token::Placeholder { name } => Some(name),
            Token::Repeat { value, .. } => value.placeholder_name(),
            _ => None,
        }
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Number(n) => f.write_str(n.text()),
            Token::Quoted { text } => write!(f, "'{text}'"),
            Token::Bare { text } => f.write_str(text),
            Token::Repeat { count, value } => write!(f, "{count}*{value}"),
            Token::Default { count } => write!(f, "{count}*"),
            Token::Placeholder { name } => write!(f, "{{{{{name}}}}}"),
        }
    }
}

/// Shortest round-trip decimal spelling, switching to exponent notation for
/// very small or very large magnitudes.
pub fn format_number(value: f64) -> String {
    let mag = value.abs();
    if value == 0.0 || (1e-4..1e15).contains(&mag) {
        format!("{value}")
    } else {
        format!("{value:E}")
    }
}

pub(crate) fn parse_number(text: &str) -> Option<f64> {
    let bytes = text.as_bytes();
    let mut i = 0;
    if matches!(bytes.first(), Some(b'+' | b'-')) {
        i += 1;
    }
    let mut digits = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
        digits += 1;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        i += 1;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
            digits += 1;
        }
    }
    if digits == 0 {
        return None;
    }
    if i < bytes.len() && matches!(bytes[i], b'e' | b'E' | b'd' | b'D') {
        i += 1;
        if matches!(bytes.get(i), Some(b'+' | b'-')) {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return None;
        }
    }
    if i != bytes.len() {
        return None;
    }
    text.replace(['d', 'D'], "e").parse().ok()
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Classify one whitespace-delimited lexeme. Errors carry a short reason.
pub(crate) fn classify(text: &str) -> Result<Token, String> {
    if let Some(token) = classify_scalar(text) {
        return Ok(token);
    }
    let (count, rest) = text.split_once('*').expect("classify_scalar handles star-free text");
    if count.is_empty() {
        if rest.is_empty() {
            return Ok(Token::Default { count: 1 });
        }
        return Ok(Token::bare(text));
    }
    if !count.bytes().all(|b| b.is_ascii_digit()) {
        return Ok(Token::bare(text));
    }
    let count: u32 = count
        .parse()
        .map_err(|_| format!("repeat count in `{text}` is out of range"))?;
    if count == 0 {
        return Err(format!("repeat count in `{text}` must be at least 1"));
    }
    if rest.is_empty() {
        return Ok(Token::Default { count });
    }
    match classify_scalar(rest) {
        Some(value) => Ok(Token::repeat(count, value)),
        None => Err(format!("nested repeat `{text}` is not supported")),
    }
}

/// Scalar tokens; `None` when the text holds a star outside quotes.
fn classify_scalar(text: &str) -> Option<Token> {
    if let Some(q @ ('\'' | '"')) = text.chars().next() {
        if text.len() >= 2 && text.ends_with(q) {
            return Some(Token::quoted(&text[1..text.len() - 1]));
        }
    }
    if let Some(inner) = text.strip_prefix("{{").and_then(|t| t.strip_suffix("}}")) {
        if is_identifier(inner) {
            return Some(Token::placeholder(inner));
        }
    }
    if let Some(n) = Number::parse(text) {
        return Some(Token::Number(n));
    }
    if text.contains('*') {
        return None;
    }
    Some(Token::bare(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_keep_spelling() {
        let n = Number::parse("3D1").unwrap();
        assert_eq!(n.value(), 30.0);
        assert_eq!(n.text(), "3D1");
        assert!(Number::parse("1.e").is_none());
        assert!(Number::parse(".").is_none());
        assert_eq!(Number::parse(".5").unwrap().value(), 0.5);
        assert_eq!(Number::parse("-2.5E-3").unwrap().value(), -2.5e-3);
    }

    #[test]
    fn shortest_round_trip_formatting() {
        assert_eq!(format_number(400.0), "400");
        assert_eq!(format_number(0.1 + 0.2), "0.30000000000000004");
        assert_eq!(format_number(1e-7), "1E-7");
        assert_eq!(format_number(0.0), "0");
        for v in [123.456, 1e20, 2.5e-9, 0.3] {
            assert_eq!(parse_number(&format_number(v)).unwrap(), v);
        }
    }

    #[test]
    fn classification() {
        assert_eq!(classify("300*0.3").unwrap(), Token::repeat(300, Token::number(0.3)));
        assert_eq!(classify("1*").unwrap(), Token::Default { count: 1 });
        assert_eq!(classify("*").unwrap(), Token::Default { count: 1 });
        assert_eq!(classify("'OPEN'").unwrap(), Token::quoted("OPEN"));
        assert_eq!(classify("3*'A B'").unwrap(), Token::repeat(3, Token::quoted("A B")));
        assert_eq!(classify("{{PERM_L1}}").unwrap(), Token::placeholder("PERM_L1"));
        assert_eq!(
            classify("100*{{P}}").unwrap(),
            Token::repeat(100, Token::placeholder("P"))
        );
        assert_eq!(classify("(0.2*1.1)").unwrap(), Token::bare("(0.2*1.1)"));
        assert!(classify("0*5").is_err());
        assert!(classify("2*3*4").is_err());
    }

    #[test]
    fn display_round_trips_through_classify() {
        for t in [
            Token::repeat(4, Token::number(2.5)),
            Token::Default { count: 3 },
            Token::placeholder("X_1"),
            Token::quoted("P 1"),
            Token::bare("OPEN"),
        ] {
            assert_eq!(classify(&t.to_string()).unwrap(), t);
        }
    }
}
