use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::deck::{Deck, Keyword, Record};

/// Peaceman equivalent-radius factor for square-ish cells.
pub const PEACEMAN_FACTOR: f64 = 0.14;
pub const DEFAULT_WELL_RADIUS: f64 = 0.1;
pub const DEFAULT_MIN_BHP: f64 = 1.01325;
pub const DEFAULT_MAX_INJECTION_BHP: f64 = 6895.0;
pub const DEFAULT_MAX_STEP_DAYS: f64 = 5.0;
const DEFAULT_FLUID_COMPRESSIBILITY: f64 = 4.5e-5;
const DEFAULT_VISCOSITY: f64 = 1.0;

/// Cartesian grid; per-cell sizes in metres, natural order (i fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
    pub dz: Vec<f64>,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Natural index of zero-based `(i, j, k)`.
    pub fn index(&self, [i, j, k]: [usize; 3]) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    pub fn contains(&self, [i, j, k]: [usize; 3]) -> bool {
        i < self.nx && j < self.ny && k < self.nz
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellKind {
    Producer,
    Injector,
}

/// Rates in sm3/day (always non-negative; the well kind gives the sign),
/// pressures in bar.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Control {
    /// Target rate with a BHP limit: minimum for producers, maximum for
    /// injectors.
    Rate {
        target: f64,
        limit_bhp: f64,
    },
    Bhp {
        target: f64,
    },
    Shut,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlChange {
    pub day: f64,
    pub control: Control,
}

/// One perforated cell. `factor` overrides the Peaceman connection factor
/// (cP·m3/day/bar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Connection {
    /// Zero-based `(i, j, k)`.
    pub cell: [usize; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WellSpec {
    pub name: String,
    pub kind: WellKind,
    pub connections: Vec<Connection>,
    /// Control from day 0.
    pub control: Control,
    /// Later control changes, by increasing day.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<ControlChange>,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    DEFAULT_WELL_RADIUS
}

fn default_max_step() -> f64 {
    DEFAULT_MAX_STEP_DAYS
}

impl WellSpec {
    /// Control in force during the interval starting at `day`.
    pub fn control_at(&self, day: f64) -> Control {
        self.changes
            .iter()
            .take_while(|c| c.day <= day)
            .last()
            .map_or(self.control, |c| c.control)
    }
}

/// Input of the proxy simulator. Metric units: m, mD, bar, cP, days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimCase {
    pub grid: Grid,
    /// mD, isotropic.
    pub perm: Vec<f64>,
    pub poro: Vec<f64>,
    /// Inactive cells take no part in flow; absent means all active.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<Vec<bool>>,
    /// Total (rock + fluid) compressibility, 1/bar.
    pub compressibility: f64,
    pub viscosity: f64,
    /// Initial pressure, uniform.
    pub reference_pressure: f64,
    pub wells: Vec<WellSpec>,
    /// Report times in days, strictly increasing and positive.
    pub schedule: Vec<f64>,
    #[serde(default = "default_max_step")]
    pub max_step_days: f64,
}

impl SimCase {
    pub fn is_active(&self, cell: usize) -> bool {
        self.active.as_ref().is_none_or(|a| a[cell])
    }

    pub fn active_cells(&self) -> usize {
        (0..self.grid.cells()).filter(|&c| self.is_active(c)).count()
    }

    pub fn check(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidCase(m));
        let g = &self.grid;
        let n = g.cells();
        if n == 0 {
            return bad("grid has no cells".into());
        }
        for (name, v) in [
            ("dx", &g.dx),
            ("dy", &g.dy),
            ("dz", &g.dz),
            ("perm", &self.perm),
            ("poro", &self.poro),
        ] {
            if v.len() != n {
                return bad(format!("{name} has {} values for {n} cells", v.len()));
            }
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return bad(format!("{name} must be positive, found {x}"));
            }
        }
        if self.active.as_ref().is_some_and(|a| a.len() != n) {
            return bad("active flags do not match the cell count".into());
        }
        for (name, v) in [
            ("compressibility", self.compressibility),
            ("viscosity", self.viscosity),
            ("reference pressure", self.reference_pressure),
            ("max step", self.max_step_days),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, found {v}"));
            }
        }
        if self.schedule.is_empty() {
            return bad("no report times".into());
        }
        if self.schedule[0] <= 0.0 || self.schedule.windows(2).any(|w| w[1] <= w[0]) {
            return bad("report times must be positive and strictly increasing".into());
        }
        for w in &self.wells {
            if w.connections.is_empty() {
                return bad(format!("well {} has no connections", w.name));
            }
            if !(w.radius > 0.0) {
                return bad(format!("well {} radius must be positive", w.name));
            }
            for c in &w.connections {
                if !g.contains(c.cell) {
                    return bad(format!("well {} connects outside the grid at {:?}", w.name, c.cell));
                }
                if !self.is_active(g.index(c.cell)) {
                    return bad(format!("well {} connects to an inactive cell", w.name));
                }
            }
            let controls = std::iter::once(&w.control).chain(w.changes.iter().map(|c| &c.control));
            for control in controls {
                match *control {
                    Control::Rate { target, limit_bhp } => {
                        if !(target >= 0.0) {
                            return bad(format!("well {} rate target must be non-negative", w.name));
                        }
                        if w.kind == WellKind::Producer && limit_bhp >= self.reference_pressure {
                            return bad(format!(
                                "producer {} minimum BHP {limit_bhp} is not below the initial pressure",
                                w.name
                            ));
                        }
                    }
                    Control::Bhp { target } if !(target > 0.0) => {
                        return bad(format!("well {} BHP target must be positive", w.name));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Build a case from the deck keywords the proxy understands.
    pub fn from_deck(deck: &Deck) -> Result<SimCase, SimError> {
        DeckReader { deck }.read()
    }
}

struct DeckReader<'a> {
    deck: &'a Deck,
}

fn missing(what: &str) -> SimError {
    SimError::InvalidCase(format!("deck has no {what}"))
}

fn malformed(keyword: &str, why: impl std::fmt::Display) -> SimError {
    SimError::InvalidCase(format!("{keyword}: {why}"))
}

fn name_of(record: &Record, keyword: &str) -> Result<String, SimError> {
    record
        .text(0)
        .map(str::to_string)
        .ok_or_else(|| malformed(keyword, "record has no well name"))
}

fn index_item(record: &Record, idx: usize) -> Option<usize> {
    record.float(idx).filter(|v| *v >= 1.0).map(|v| v as usize - 1)
}

fn is_shut(record: &Record, idx: usize) -> bool {
    record
        .text(idx)
        .is_some_and(|s| matches!(s.to_ascii_uppercase().as_str(), "SHUT" | "STOP"))
}

impl DeckReader<'_> {
    fn keyword(&self, name: &str) -> Option<&Keyword> {
        self.deck.find_keyword(name)
    }

    fn array(&self, name: &str, n: usize) -> Result<Vec<f64>, SimError> {
        let kw = self.keyword(name).ok_or_else(|| missing(name))?;
        let values = kw
            .numbers()
            .ok_or_else(|| malformed(name, "values must be numeric literals"))?;
        if values.len() != n {
            return Err(malformed(name, format!("{} values for {n} cells", values.len())));
        }
        Ok(values)
    }

    fn read(&self) -> Result<SimCase, SimError> {
        let dims = self
            .keyword("DIMENS")
            .and_then(|k| k.records().first())
            .ok_or_else(|| missing("DIMENS"))?;
        let dim = |i| {
            dims.float(i)
                .filter(|v| *v >= 1.0 && v.fract() == 0.0)
                .map(|v| v as usize)
                .ok_or_else(|| malformed("DIMENS", "expects three positive integers"))
        };
        let (nx, ny, nz) = (dim(0)?, dim(1)?, dim(2)?);
        let n = nx * ny * nz;
        let grid = Grid {
            nx,
            ny,
            nz,
            dx: self.array("DX", n)?,
            dy: self.array("DY", n)?,
            dz: self.array("DZ", n)?,
        };
        let mut arrays = BTreeMap::new();
        arrays.insert("PERMX", self.array("PERMX", n)?);
        arrays.insert("PORO", self.array("PORO", n)?);
        for kw in self.deck.keywords_named("MULTIPLY") {
            for r in kw.records().iter().filter(|r| !r.items.is_empty()) {
                let target = r.text(0).unwrap_or_default().to_ascii_uppercase();
                let Some(values) = arrays.get_mut(target.as_str()) else {
                    continue;
                };
                let factor = r.float(1).ok_or_else(|| malformed("MULTIPLY", "missing factor"))?;
                let lo = |i| index_item(r, i).unwrap_or(0);
                let hi = |i, max: usize| index_item(r, i).map_or(max, |v| v + 1).min(max);
                for k in lo(6)..hi(7, nz) {
                    for j in lo(4)..hi(5, ny) {
                        for i in lo(2)..hi(3, nx) {
                            values[grid.index([i, j, k])] *= factor;
                        }
                    }
                }
            }
        }
        let active = match self.keyword("ACTNUM") {
            Some(kw) => {
                let v = kw
                    .numbers()
                    .ok_or_else(|| malformed("ACTNUM", "values must be numeric"))?;
                if v.len() != n {
                    return Err(malformed("ACTNUM", format!("{} values for {n} cells", v.len())));
                }
                Some(v.iter().map(|x| *x != 0.0).collect())
            }
            None => None,
        };

        let first = |name: &str| self.keyword(name).and_then(|k| k.records().first());
        let rock_c = first("ROCK").and_then(|r| r.float(1)).unwrap_or(0.0);
        let (fluid_c, viscosity) = match first("PVCDO").or_else(|| first("PVTW")) {
            Some(r) => (
                r.float(2).unwrap_or(DEFAULT_FLUID_COMPRESSIBILITY),
                r.float(3).unwrap_or(DEFAULT_VISCOSITY),
            ),
            None => (DEFAULT_FLUID_COMPRESSIBILITY, DEFAULT_VISCOSITY),
        };
        let reference_pressure = first("EQUIL")
            .and_then(|r| r.float(1))
            .or_else(|| first("ROCK").and_then(|r| r.float(0)))
            .ok_or_else(|| missing("EQUIL or ROCK reference pressure"))?;

        let (wells, schedule) = self.schedule(&grid)?;
        let case = SimCase {
            grid,
            perm: arrays.remove("PERMX").expect("inserted"),
            poro: arrays.remove("PORO").expect("inserted"),
            active,
            compressibility: rock_c + fluid_c,
            viscosity,
            reference_pressure,
            wells,
            schedule,
            max_step_days: DEFAULT_MAX_STEP_DAYS,
        };
        case.check()?;
        Ok(case)
    }

    fn start_date(&self) -> Option<NaiveDate> {
        let r = self.keyword("START")?.records().first()?;
        date_of(r)
    }

    fn schedule(&self, grid: &Grid) -> Result<(Vec<WellSpec>, Vec<f64>), SimError> {
        struct Draft {
            head: [usize; 2],
            kind: Option<WellKind>,
            connections: Vec<Connection>,
            radius: f64,
            changes: Vec<ControlChange>,
        }
        let mut order: Vec<String> = Vec::new();
        let mut drafts: BTreeMap<String, Draft> = BTreeMap::new();
        let mut day = 0.0f64;
        let mut reports = Vec::new();
        let start = self.start_date();

        for kw in self.deck.keywords().filter(|k| k.section() == "SCHEDULE") {
            let name = kw.name();
            match name {
                "WELSPECS" => {
                    for r in kw.records().iter().filter(|r| !r.items.is_empty()) {
                        let well = name_of(r, name)?;
                        let head = [
                            index_item(r, 2).ok_or_else(|| malformed(name, "missing I"))?,
                            index_item(r, 3).ok_or_else(|| malformed(name, "missing J"))?,
                        ];
                        if !drafts.contains_key(&well) {
                            order.push(well.clone());
                        }
                        drafts.entry(well).and_modify(|d| d.head = head).or_insert(Draft {
                            head,
                            kind: None,
                            connections: Vec::new(),
                            radius: DEFAULT_WELL_RADIUS,
                            changes: Vec::new(),
                        });
                    }
                }
                "COMPDAT" => {
                    for r in kw.records().iter().filter(|r| !r.items.is_empty()) {
                        let well = name_of(r, name)?;
                        let d = drafts
                            .get_mut(&well)
                            .ok_or_else(|| malformed(name, format!("well {well} has no WELSPECS")))?;
                        if is_shut(r, 5) {
                            continue;
                        }
                        let i = index_item(r, 1).unwrap_or(d.head[0]);
                        let j = index_item(r, 2).unwrap_or(d.head[1]);
                        let k1 = index_item(r, 3).ok_or_else(|| malformed(name, "missing K1"))?;
                        let k2 = index_item(r, 4).unwrap_or(k1);
                        if let Some(diameter) = r.float(8) {
                            d.radius = diameter / 2.0;
                        }
                        for k in k1..=k2 {
                            if !grid.contains([i, j, k]) {
                                return Err(malformed(name, format!("well {well} connects outside the grid")));
                            }
                            d.connections.push(Connection {
                                cell: [i, j, k],
                                factor: r.float(7),
                            });
                        }
                    }
                }
                "WCONPROD" | "WCONINJE" => {
                    let kind = if name == "WCONPROD" {
                        WellKind::Producer
                    } else {
                        WellKind::Injector
                    };
                    for r in kw.records().iter().filter(|r| !r.items.is_empty()) {
                        let well = name_of(r, name)?;
                        let d = drafts
                            .get_mut(&well)
                            .ok_or_else(|| malformed(name, format!("well {well} has no WELSPECS")))?;
                        if d.kind.is_some_and(|k| k != kind) {
                            return Err(malformed(
                                name,
                                format!("well {well} changes between producer and injector"),
                            ));
                        }
                        d.kind = Some(kind);
                        let control = match kind {
                            WellKind::Producer => production_control(r)?,
                            WellKind::Injector => injection_control(r)?,
                        };
                        d.changes.retain(|c| c.day != day);
                        d.changes.push(ControlChange { day, control });
                    }
                }
                "TSTEP" => {
                    let steps = kw.numbers().ok_or_else(|| malformed(name, "values must be numeric"))?;
                    for s in steps {
                        if !(s > 0.0) {
                            return Err(malformed(name, "steps must be positive"));
                        }
                        day += s;
                        reports.push(day);
                    }
                }
                "DATES" => {
                    let start = start.ok_or_else(|| malformed(name, "needs a START date"))?;
                    for r in kw.records().iter().filter(|r| !r.items.is_empty()) {
                        let date = date_of(r).ok_or_else(|| malformed(name, "unreadable date"))?;
                        let t = (date - start).num_days() as f64;
                        if t <= day {
                            return Err(malformed(name, format!("{date} does not advance the schedule")));
                        }
                        day = t;
                        reports.push(day);
                    }
                }
                _ => {}
            }
        }

        let wells = order
            .into_iter()
            .filter_map(|name| {
                let d = drafts.remove(&name)?;
                if d.connections.is_empty() {
                    return None;
                }
                let mut changes = d.changes;
                let control = match changes.first() {
                    Some(c) if c.day == 0.0 => changes.remove(0).control,
                    _ => Control::Shut,
                };
                Some(WellSpec {
                    name,
                    kind: d.kind.unwrap_or(WellKind::Producer),
                    connections: d.connections,
                    control,
                    changes,
                    radius: d.radius,
                })
            })
            .collect();
        Ok((wells, reports))
    }
}

fn production_control(r: &Record) -> Result<Control, SimError> {
    if is_shut(r, 1) {
        return Ok(Control::Shut);
    }
    let mode = r.text(2).unwrap_or("ORAT").to_ascii_uppercase();
    let limit_bhp = r.float(8).unwrap_or(DEFAULT_MIN_BHP);
    let item = match mode.as_str() {
        "BHP" => return Ok(Control::Bhp { target: limit_bhp }),
        "ORAT" => 3,
        "WRAT" => 4,
        "GRAT" => 5,
        "LRAT" => 6,
        "RESV" => 7,
        other => return Err(malformed("WCONPROD", format!("unsupported control mode {other}"))),
    };
    let target = r
        .float(item)
        .ok_or_else(|| malformed("WCONPROD", format!("{mode} control without a {mode} target")))?;
    Ok(Control::Rate { target, limit_bhp })
}

fn injection_control(r: &Record) -> Result<Control, SimError> {
    if is_shut(r, 2) {
        return Ok(Control::Shut);
    }
    let mode = r.text(3).unwrap_or("RATE").to_ascii_uppercase();
    let limit_bhp = r.float(6).unwrap_or(DEFAULT_MAX_INJECTION_BHP);
    let item = match mode.as_str() {
        "BHP" => return Ok(Control::Bhp { target: limit_bhp }),
        "RATE" => 4,
        "RESV" => 5,
        other => return Err(malformed("WCONINJE", format!("unsupported control mode {other}"))),
    };
    let target = r
        .float(item)
        .ok_or_else(|| malformed("WCONINJE", format!("{mode} control without a target")))?;
    Ok(Control::Rate { target, limit_bhp })
}

fn date_of(r: &Record) -> Option<NaiveDate> {
    let day = r.float(0)? as u32;
    let month = match r.text(1)?.to_ascii_uppercase().as_str() {
        "JAN" => 1,
        "FEB" => 2,
        "MAR" => 3,
        "APR" => 4,
        "MAY" => 5,
        "JUN" => 6,
        "JUL" | "JLY" => 7,
        "AUG" => 8,
        "SEP" => 9,
        "OCT" => 10,
        "NOV" => 11,
        "DEC" => 12,
        _ => return None,
    };
    NaiveDate::from_ymd_opt(r.float(2)? as i32, month, day)
}
