//! Dry-run validation of parameterized decks.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Assignment, ParamError, ParameterSpace};
use crate::deck::{Deck, Keyword, Token, TokenPath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    Lower,
    Upper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    RelpermMonotonicity,
    RelpermRange,
    MalformedTable,
    ArithmeticNotSupported,
    SubstitutionFailed,
}

/// One located validation failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub section: String,
    pub keyword: String,
    pub occurrence: usize,
    /// Table (record) index and 0-based row within it, when meaningful.
    pub table: Option<usize>,
    pub row: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidatorResult {
    pub validator: String,
    pub corner: Corner,
    pub passed: bool,
    pub findings: Vec<Finding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub results: Vec<ValidatorResult>,
}

impl ValidationReport {
    pub fn findings(&self) -> impl Iterator<Item = (Corner, &Finding)> {
        self.results
            .iter()
            .flat_map(|r| r.findings.iter().map(move |f| (r.corner, f)))
    }
}

pub trait DeckValidator: Send + Sync {
    fn name(&self) -> &str;
    fn validate(&self, deck: &Deck) -> Vec<Finding>;
}

/// Substitute the all-lower and all-upper corners and run every validator on
/// both decks.
pub fn dry_run_validate(space: &ParameterSpace, validators: &[&dyn DeckValidator]) -> ValidationReport {
    let mut results = Vec::new();
    for (corner, assignment) in [
        (Corner::Lower, space.lower_corner()),
        (Corner::Upper, space.upper_corner()),
    ] {
        match space.substitute(&assignment) {
            Ok(deck) => {
                for v in validators {
                    let findings = v.validate(&deck);
                    results.push(ValidatorResult {
                        validator: v.name().to_string(),
                        corner,
                        passed: findings.is_empty(),
                        findings,
                    });
                }
            }
            Err(e) => results.push(ValidatorResult {
                validator: "substitute".to_string(),
                corner,
                passed: false,
                findings: vec![Finding {
                    kind: FindingKind::SubstitutionFailed,
                    section: String::new(),
                    keyword: String::new(),
                    occurrence: 0,
                    table: None,
                    row: None,
                    column: None,
                    message: e.to_string(),
                }],
            }),
        }
    }
    ValidationReport {
        ok: results.iter().all(|r| r.passed),
        results,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableKind {
    /// SWOF: Sw, krw (non-decreasing), krow (non-increasing), Pcow.
    Water,
    /// SGOF: Sg, krg (non-decreasing), krog (non-increasing), Pcog.
    Gas,
}

impl TableKind {
    pub fn of(keyword: &str) -> Option<TableKind> {
        match keyword {
            "SWOF" => Some(TableKind::Water),
            "SGOF" => Some(TableKind::Gas),
            _ => None,
        }
    }
}

/// A relperm table violation: 0-based row and column within the table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub table: usize,
    pub row: usize,
    pub column: usize,
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub violations: Vec<Violation>,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check rows of (saturation, increasing kr, decreasing kr, ...). Extra
/// columns (capillary pressure) are not checked.
pub fn validate_relperm_rows(rows: &[Vec<f64>], table: usize) -> Result<ValidationOutcome, String> {
    let width = rows.first().map_or(0, Vec::len);
    if width < 3 {
        return Err(format!("table {} needs at least 3 columns", table + 1));
    }
    if let Some(r) = rows.iter().position(|r| r.len() != width) {
        return Err(format!("row {} has {} values, expected {width}", r + 1, rows[r].len()));
    }
    let mut out = ValidationOutcome::default();
    let mut push = |row, column, kind, message| {
        out.violations.push(Violation {
            table,
            row,
            column,
            kind,
            message,
        })
    };
    for (i, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate().take(3) {
            if !(0.0..=1.0).contains(&v) {
                push(
                    i,
                    c,
                    FindingKind::RelpermRange,
                    format!("row {} column {}: {v} is outside [0, 1]", i + 1, c + 1),
                );
            }
        }
        let Some(prev) = i.checked_sub(1).map(|p| &rows[p]) else {
            continue;
        };
        if row[0] <= prev[0] {
            push(
                i,
                0,
                FindingKind::RelpermMonotonicity,
                format!(
                    "row {}: saturation {} does not increase from {}",
                    i + 1,
                    row[0],
                    prev[0]
                ),
            );
        }
        if row[1] < prev[1] {
            push(
                i,
                1,
                FindingKind::RelpermMonotonicity,
                format!(
                    "non-monotonic relative permeability curve at row {}: kr decreases from {} to {}",
                    i + 1,
                    prev[1],
                    row[1]
                ),
            );
        }
        if row[2] > prev[2] {
            push(
                i,
                2,
                FindingKind::RelpermMonotonicity,
                format!(
                    "non-monotonic relative permeability curve at row {}: kro increases from {} to {}",
                    i + 1,
                    prev[2],
                    row[2]
                ),
            );
        }
    }
    Ok(out)
}

/// Validate a SWOF/SGOF keyword: one table per record, four columns.
pub fn validate_relperm_table(keyword: &Keyword) -> Result<ValidationOutcome, ParamError> {
    let malformed = |reason: String| ParamError::MalformedTable {
        keyword: keyword.name().to_string(),
        reason,
    };
    let mut out = ValidationOutcome::default();
    for (t, record) in keyword.records().iter().enumerate() {
        let values = record
            .numbers()
            .ok_or_else(|| malformed(format!("table {} holds non-numeric items", t + 1)))?;
        if values.is_empty() || values.len() % 4 != 0 {
            return Err(malformed(format!(
                "table {} has {} values, not a multiple of 4",
                t + 1,
                values.len()
            )));
        }
        let rows: Vec<Vec<f64>> = values.chunks(4).map(<[f64]>::to_vec).collect();
        out.violations
            .extend(validate_relperm_rows(&rows, t).map_err(malformed)?.violations);
    }
    Ok(out)
}

/// Checks every SWOF and SGOF table in the deck.
#[derive(Clone, Copy, Debug, Default)]
pub struct RelpermValidator;

impl DeckValidator for RelpermValidator {
    fn name(&self) -> &str {
        "relperm"
    }

    fn validate(&self, deck: &Deck) -> Vec<Finding> {
        let mut findings = Vec::new();
        let mut seen = std::collections::BTreeMap::new();
        for kw in deck.keywords() {
            if TableKind::of(kw.name()).is_none() {
                continue;
            }
            let occ = seen.entry((kw.section(), kw.name())).or_insert(0usize);
            let base = Finding {
                kind: FindingKind::MalformedTable,
                section: kw.section().to_string(),
                keyword: kw.name().to_string(),
                occurrence: *occ,
                table: None,
                row: None,
                column: None,
                message: String::new(),
            };
            *occ += 1;
            match validate_relperm_table(kw) {
                Ok(outcome) => findings.extend(outcome.violations.into_iter().map(|v| Finding {
                    kind: v.kind,
                    table: Some(v.table),
                    row: Some(v.row),
                    column: Some(v.column),
                    message: format!("{} table {} {}", kw.name(), v.table + 1, v.message),
                    ..base.clone()
                })),
                Err(e) => findings.push(Finding {
                    message: e.to_string(),
                    ..base
                }),
            }
        }
        findings
    }
}

/// Flags arithmetic expressions such as `(0.2*1.1)` in keywords whose
/// records must be literal numbers.
#[derive(Clone, Debug)]
pub struct LiteralOnlyValidator {
    keywords: Vec<String>,
}

impl Default for LiteralOnlyValidator {
    fn default() -> Self {
        let names = [
            "DX", "DY", "DZ", "TOPS", "PERMX", "PERMY", "PERMZ", "PORO", "NTG", "MULTX", "MULTY", "MULTZ", "MULTPV",
            "SWOF", "SGOF", "PVTW", "PVCDO", "ROCK", "DENSITY", "EQUIL", "DIMENS", "TSTEP",
        ];
        Self {
            keywords: names.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn looks_like_arithmetic(text: &str) -> bool {
    text.chars().any(|c| c.is_ascii_digit()) && text.chars().any(|c| "()+*/".contains(c))
}

impl DeckValidator for LiteralOnlyValidator {
    fn name(&self) -> &str {
        "literal_only"
    }

    fn validate(&self, deck: &Deck) -> Vec<Finding> {
        let mut findings = Vec::new();
        let mut seen = std::collections::BTreeMap::new();
        for kw in deck.keywords() {
            let occ = seen.entry((kw.section(), kw.name())).or_insert(0usize);
            let occurrence = *occ;
            *occ += 1;
            if !self.keywords.iter().any(|k| k == kw.name()) {
                continue;
            }
            for (r, record) in kw.records().iter().enumerate() {
                for (i, item) in record.items.iter().enumerate() {
                    let Token::Bare { text } = item else { continue };
                    if looks_like_arithmetic(text) {
                        findings.push(Finding {
                            kind: FindingKind::ArithmeticNotSupported,
                            section: kw.section().to_string(),
                            keyword: kw.name().to_string(),
                            occurrence,
                            table: Some(r),
                            row: None,
                            column: Some(i),
                            message: format!(
                                "{} (line {}) holds arithmetic expression `{text}`; only literal values are accepted",
                                kw.name(),
                                kw.origin().line_start
                            ),
                        });
                    }
                }
            }
        }
        findings
    }
}

/// Records the numeric value found at each watched token, for tests that
/// need to see what a dry run substituted.
#[derive(Debug, Default)]
pub struct RecordingValidator {
    targets: Vec<TokenPath>,
    seen: Mutex<Vec<Vec<Option<f64>>>>,
}

impl RecordingValidator {
    pub fn new(space: &ParameterSpace) -> Self {
        Self {
            targets: space.specs().iter().map(|s| s.target.clone()).collect(),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn observed(&self) -> Vec<Vec<Option<f64>>> {
        self.seen.lock().expect("recorder lock").clone()
    }
}

impl DeckValidator for RecordingValidator {
    fn name(&self) -> &str {
        "recording"
    }

    fn validate(&self, deck: &Deck) -> Vec<Finding> {
        let values = self
            .targets
            .iter()
            .map(|t| deck.token(t).and_then(Token::as_f64))
            .collect();
        self.seen.lock().expect("recorder lock").push(values);
        Vec::new()
    }
}

/// Convenience for callers holding an assignment rather than corners.
pub fn validate_assignment(
    space: &ParameterSpace,
    assignment: &Assignment,
    validators: &[&dyn DeckValidator],
) -> Result<Vec<Finding>, ParamError> {
    let deck = space.substitute(assignment)?;
    Ok(validators.iter().flat_map(|v| v.validate(&deck)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deck::no_includes;
    use crate::paramspace::{ParameterSpec, Scale};

    fn rows(r: &[(f64, f64, f64)]) -> Vec<Vec<f64>> {
        r.iter().map(|&(a, b, c)| vec![a, b, c]).collect()
    }

    #[test]
    fn monotone_table_passes() {
        let t = rows(&[(0.12, 0.0, 1.0), (0.5, 0.2, 0.4), (0.9, 0.7, 0.0)]);
        assert!(validate_relperm_rows(&t, 0).unwrap().passed());
    }

    #[test]
    fn decreasing_krw_fails() {
        let t = rows(&[(0.12, 0.0, 1.0), (0.5, 0.6, 0.4), (0.9, 0.5, 0.0)]);
        let out = validate_relperm_rows(&t, 0).unwrap();
        assert_eq!(out.violations.len(), 1);
        assert_eq!(out.violations[0].row, 2);
        assert_eq!(out.violations[0].kind, FindingKind::RelpermMonotonicity);
    }

    #[test]
    fn out_of_range_fails() {
        let t = rows(&[(0.12, 0.0, 1.0), (0.5, 1.2, 0.4)]);
        let out = validate_relperm_rows(&t, 0).unwrap();
        assert!(out.violations.iter().any(|v| v.kind == FindingKind::RelpermRange));
    }

    #[test]
    fn ragged_rows_are_malformed() {
        let t = vec![vec![0.1, 0.0, 1.0], vec![0.5, 0.2]];
        assert!(validate_relperm_rows(&t, 0).is_err());
        let deck = Deck::parse("PROPS\nSWOF\n 0.1 0 1 0 0.5 /\n", &no_includes).unwrap();
        let kw = deck.get_keyword("PROPS", "SWOF", 0).unwrap();
        assert!(matches!(
            validate_relperm_table(kw),
            Err(ParamError::MalformedTable { .. })
        ));
    }

    #[test]
    fn vacuous_pass_and_recorded_corners() {
        let deck = Deck::parse("GRID\nPORO\n 4*0.3 /\n", &no_includes).unwrap();
        let space = ParameterSpace::new(deck)
            .add_parameter(ParameterSpec {
                name: "PORO_M".into(),
                lower: 0.2,
                upper: 0.4,
                initial: 0.3,
                scale: Scale::Linear,
                unit: String::new(),
                target: TokenPath {
                    section: "GRID".into(),
                    keyword: "PORO".into(),
                    occurrence: 0,
                    record: 0,
                    item: 0,
                },
            })
            .unwrap();
        assert!(dry_run_validate(&space, &[]).ok);
        let rec = RecordingValidator::new(&space);
        assert!(dry_run_validate(&space, &[&rec]).ok);
        assert_eq!(rec.observed(), vec![vec![Some(0.2)], vec![Some(0.4)]]);
    }

    #[test]
    fn arithmetic_is_flagged() {
        let deck = Deck::parse("GRID\nPORO\n 0.2 (0.2*1.1) /\n", &no_includes).unwrap();
        let findings = LiteralOnlyValidator::default().validate(&deck);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].kind, FindingKind::ArithmeticNotSupported);
        assert!(findings[0].message.contains("line 2"));
    }
}
