//! Bounded, scaled history-matching parameters bound to deck placeholders.
//!
//! A [`ParameterSpace`] owns a template deck in which each parameter's
//! target token has been replaced by `{{NAME}}`. Substituting an
//! [`Assignment`] yields a concrete deck; [`dry_run_validate`] substitutes the
//! all-lower and all-upper corners and runs deck validators on both.

mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deck::{Deck, DeckError, Token, TokenPath};

pub use validate::{
    dry_run_validate, validate_assignment, validate_relperm_rows, validate_relperm_table, Corner, DeckValidator,
    Finding, FindingKind, LiteralOnlyValidator, RecordingValidator, RelpermValidator, TableKind, ValidationOutcome,
    ValidationReport, ValidatorResult, Violation,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("parameter {0} already exists")]
    DuplicateName(String),
    #[error("`{0}` is not a valid parameter name")]
    InvalidName(String),
    #[error("target {0} not found in deck")]
    TargetNotFound(String),
    #[error("target {0} is not a number")]
    TargetNotNumeric(String),
    #[error("target {0} is already bound to parameter {1}")]
    TargetInUse(String, String),
    #[error("invalid bounds for {name}: {reason}")]
    InvalidBounds { name: String, reason: String },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
    #[error("assignment is missing {0}")]
    IncompleteAssignment(String),
    #[error("{name} = {value} is outside [{lower}, {upper}]")]
    OutOfBounds {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("malformed table in {keyword}: {reason}")]
    MalformedTable { keyword: String, reason: String },
    #[error(transparent)]
    Deck(#[from] DeckError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub unit: String,
    pub target: TokenPath,
}

impl ParameterSpec {
    pub fn check(&self) -> Result<(), ParamError> {
        let bad = |reason: &str| {
            Err(ParamError::InvalidBounds {
                name: self.name.clone(),
                reason: reason.to_string(),
            })
        };
        if !crate::deck::is_identifier(&self.name) {
            return Err(ParamError::InvalidName(self.name.clone()));
        }
        if ![self.lower, self.upper, self.initial].iter().all(|v| v.is_finite()) {
            return bad("bounds and initial value must be finite");
        }
        if self.lower >= self.upper {
            return bad("lower must be below upper");
        }
        if !(self.lower..=self.upper).contains(&self.initial) {
            return bad("initial value lies outside the bounds");
        }
        if self.scale == Scale::Log10 && self.lower <= 0.0 {
            return bad("log10 scale needs a positive lower bound");
        }
        Ok(())
    }

    /// Map a value in the bounds to [0, 1].
    pub fn to_unit(&self, value: f64) -> Result<f64, ParamError> {
        if !(self.lower..=self.upper).contains(&value) {
            return Err(self.out_of_bounds(value));
        }
        if value == self.lower {
            return Ok(0.0);
        }
        if value == self.upper {
            return Ok(1.0);
        }
        let u = match self.scale {
            Scale::Linear => (value - self.lower) / (self.upper - self.lower),
            Scale::Log10 => (value.log10() - self.lower.log10()) / (self.upper.log10() - self.lower.log10()),
        };
        Ok(u.clamp(0.0, 1.0))
    }

    /// Inverse of [`to_unit`](Self::to_unit); 0 and 1 map exactly to the bounds.
    pub fn from_unit(&self, u: f64) -> Result<f64, ParamError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(ParamError::OutOfBounds {
                name: self.name.clone(),
                value: u,
                lower: 0.0,
                upper: 1.0,
            });
        }
        if u == 0.0 {
            return Ok(self.lower);
        }
        if u == 1.0 {
            return Ok(self.upper);
        }
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log10 => {
                let (a, b) = (self.lower.log10(), self.upper.log10());
                10f64.powf(a + u * (b - a))
            }
        };
        Ok(v.clamp(self.lower, self.upper))
    }

    fn out_of_bounds(&self, value: f64) -> ParamError {
        ParamError::OutOfBounds {
            name: self.name.clone(),
            value,
            lower: self.lower,
            upper: self.upper,
        }
    }
}

/// Parameter values by name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Assignment {
    pub values: BTreeMap<String, f64>,
}

impl Assignment {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for Assignment {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace {
    specs: Vec<ParameterSpec>,
    template: Deck,
}

/// JSON manifest: the specs only; the template is rebuilt from the deck.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub parameters: Vec<ParameterSpec>,
}

impl ParameterSpace {
    pub fn new(deck: Deck) -> Self {
        Self {
            specs: Vec::new(),
            template: deck,
        }
    }

    pub fn specs(&self) -> &[ParameterSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ParameterSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn template(&self) -> &Deck {
        &self.template
    }

    pub fn dimension(&self) -> usize {
        self.specs.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.name.as_str()).collect()
    }

    /// Bind a new parameter: its target token becomes `{{NAME}}`.
    pub fn add_parameter(&self, spec: ParameterSpec) -> Result<ParameterSpace, ParamError> {
        spec.check()?;
        if self.spec(&spec.name).is_some() {
            return Err(ParamError::DuplicateName(spec.name));
        }
        let where_ = describe(&spec.target);
        let token = self
            .template
            .token(&spec.target)
            .ok_or_else(|| ParamError::TargetNotFound(where_.clone()))?;
        if let Some(owner) = token.placeholder_name() {
            return Err(ParamError::TargetInUse(where_, owner.to_string()));
        }
        if token.as_f64().is_none() {
            return Err(ParamError::TargetNotNumeric(where_));
        }
        let template = self.template.set_token(&spec.target, Token::placeholder(&spec.name))?;
        let mut specs = self.specs.clone();
        specs.push(spec);
        Ok(ParameterSpace { specs, template })
    }

    /// Unbind a parameter; its placeholder becomes the initial value.
    pub fn remove_parameter(&self, name: &str) -> Result<ParameterSpace, ParamError> {
        let idx = self
            .specs
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| ParamError::UnknownParameter(name.to_string()))?;
        let mut specs = self.specs.clone();
        let spec = specs.remove(idx);
        let template = self.template.set_token(&spec.target, Token::number(spec.initial))?;
        Ok(ParameterSpace { specs, template })
    }

    /// Change bounds (and optionally the initial value) of an existing spec.
    pub fn set_bounds(
        &self,
        name: &str,
        lower: f64,
        upper: f64,
        initial: Option<f64>,
    ) -> Result<ParameterSpace, ParamError> {
        let mut out = self.clone();
        let spec = out
            .specs
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| ParamError::UnknownParameter(name.to_string()))?;
        spec.lower = lower;
        spec.upper = upper;
        if let Some(v) = initial {
            spec.initial = v;
        }
        spec.check()?;
        Ok(out)
    }

    /// The concrete deck for a complete, in-bounds assignment.
    pub fn substitute(&self, assignment: &Assignment) -> Result<Deck, ParamError> {
        self.check_assignment(assignment)?;
        let values = self
            .specs
            .iter()
            .map(|s| (s.name.clone(), assignment.values[&s.name]))
            .collect();
        Ok(self.template.fill_placeholders(&values)?)
    }

    pub fn check_assignment(&self, assignment: &Assignment) -> Result<(), ParamError> {
        for s in &self.specs {
            let v = assignment
                .get(&s.name)
                .ok_or_else(|| ParamError::IncompleteAssignment(s.name.clone()))?;
            if !(s.lower..=s.upper).contains(&v) {
                return Err(s.out_of_bounds(v));
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> Assignment {
        self.specs.iter().map(|s| (s.name.clone(), s.initial)).collect()
    }

    pub fn lower_corner(&self) -> Assignment {
        self.specs.iter().map(|s| (s.name.clone(), s.lower)).collect()
    }

    pub fn upper_corner(&self) -> Assignment {
        self.specs.iter().map(|s| (s.name.clone(), s.upper)).collect()
    }

    pub fn to_unit_cube(&self, assignment: &Assignment) -> Result<Vec<f64>, ParamError> {
        self.specs
            .iter()
            .map(|s| {
                let v = assignment
                    .get(&s.name)
                    .ok_or_else(|| ParamError::IncompleteAssignment(s.name.clone()))?;
                s.to_unit(v)
            })
            .collect()
    }

    pub fn from_unit_cube(&self, point: &[f64]) -> Result<Assignment, ParamError> {
        if point.len() != self.specs.len() {
            return Err(ParamError::IncompleteAssignment(format!(
                "point has {} coordinates for {} parameters",
                point.len(),
                self.specs.len()
            )));
        }
        self.specs
            .iter()
            .zip(point)
            .map(|(s, &u)| Ok((s.name.clone(), s.from_unit(u)?)))
            .collect::<Result<BTreeMap<_, _>, _>>()
            .map(|values| Assignment { values })
    }

    /// The original deck with every placeholder back at its initial value.
    pub fn base_deck(&self) -> Result<Deck, ParamError> {
        self.substitute(&self.initial())
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            parameters: self.specs.clone(),
        }
    }

    /// Rebuild a space from a manifest against an unparameterized deck.
    pub fn from_manifest(deck: Deck, manifest: &Manifest) -> Result<ParameterSpace, ParamError> {
        manifest
            .parameters
            .iter()
            .try_fold(ParameterSpace::new(deck), |space, spec| {
                space.add_parameter(spec.clone())
            })
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes")
    }

    pub fn parse_manifest(text: &str) -> Result<Manifest, ParamError> {
        serde_json::from_str(text).map_err(|e| ParamError::Manifest(e.to_string()))
    }
}

fn describe(t: &TokenPath) -> String {
    format!(
        "{}/{}[{}] record {} item {}",
        t.section, t.keyword, t.occurrence, t.record, t.item
    )
}

/// Default ranges the rule-based parameterizer applies per family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefaultBounds {
    /// Multipliers on the initial permeability, log10 scaled.
    pub perm_multiplier: (f64, f64),
    /// Multipliers on the initial porosity, linear.
    pub poro_multiplier: (f64, f64),
    /// Absolute range for fault transmissibility multipliers, log10 scaled.
    pub fault_multiplier: (f64, f64),
}

impl Default for DefaultBounds {
    fn default() -> Self {
        Self {
            perm_multiplier: (0.1, 10.0),
            poro_multiplier: (0.8, 1.2),
            fault_multiplier: (0.001, 10.0),
        }
    }
}
