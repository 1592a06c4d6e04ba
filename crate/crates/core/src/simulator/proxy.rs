use super::case::{Control, SimCase, WellKind, PEACEMAN_FACTOR};
use super::SimError;
use crate::misfit::{QuantityKind, Series};

/// mD·m²/(cP·m)·bar → m3/day: 9.869233e-16 m²/mD · 1e5 Pa/bar · 86400 s/day / 1e-3 Pa·s/cP.
pub const DARCY: f64 = 9.869233e-16 * 1e5 * 86400.0 / 1e-3;
pub const CG_TOLERANCE: f64 = 1e-10;
const SWITCH_ROUNDS: usize = 8;

/// A run with enough detail to check conservation and drawdown.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyRun {
    pub series: Vec<Series>,
    /// Cell pressures at each report time.
    pub pressures: Vec<Vec<f64>>,
    pub steps: Vec<StepRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub end_day: f64,
    pub dt: f64,
    /// ct · Σ V_pore · dp/dt over active cells.
    pub storage_rate: f64,
    /// Signed reservoir withdrawal per well (production positive).
    pub well_rates: Vec<f64>,
    pub well_bhp: Vec<f64>,
}

pub fn simulate_proxy(case: &SimCase) -> Result<Vec<Series>, SimError> {
    Ok(simulate_detailed(case)?.series)
}

struct Model {
    n: usize,
    active: Vec<bool>,
    /// V_pore · ct per cell.
    storage: Vec<f64>,
    /// (i, j, T/mu) for each active face.
    faces: Vec<(usize, usize, f64)>,
    /// Per well: (cell, J) with J in m3/day/bar.
    wells: Vec<Vec<(usize, f64)>>,
}

fn half_trans(k: f64, area: f64, half_len: f64) -> f64 {
    k * area / half_len
}

impl Model {
    fn build(case: &SimCase) -> Result<Model, SimError> {
        let g = &case.grid;
        let n = g.cells();
        let active: Vec<bool> = (0..n).map(|c| case.is_active(c)).collect();
        let storage = (0..n)
            .map(|c| g.dx[c] * g.dy[c] * g.dz[c] * case.poro[c] * case.compressibility)
            .collect();
        let mut faces = Vec::new();
        let mu = case.viscosity;
        for k in 0..g.nz {
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let a = g.index([i, j, k]);
                    let neighbours = [
                        (i + 1 < g.nx).then(|| (g.index([i + 1, j, k]), 0)),
                        (j + 1 < g.ny).then(|| (g.index([i, j + 1, k]), 1)),
                        (k + 1 < g.nz).then(|| (g.index([i, j, k + 1]), 2)),
                    ];
                    for (b, axis) in neighbours.into_iter().flatten() {
                        if !(active[a] && active[b]) {
                            continue;
                        }
                        let geom = |c: usize| match axis {
                            0 => (g.dy[c] * g.dz[c], g.dx[c] / 2.0),
                            1 => (g.dx[c] * g.dz[c], g.dy[c] / 2.0),
                            _ => (g.dx[c] * g.dy[c], g.dz[c] / 2.0),
                        };
                        let (aa, la) = geom(a);
                        let (ab, lb) = geom(b);
                        let ta = half_trans(case.perm[a], aa, la);
                        let tb = half_trans(case.perm[b], ab, lb);
                        faces.push((a, b, DARCY * ta * tb / (ta + tb) / mu));
                    }
                }
            }
        }
        let mut wells = Vec::with_capacity(case.wells.len());
        for w in &case.wells {
            let mut conns = Vec::with_capacity(w.connections.len());
            for c in &w.connections {
                let cell = g.index(c.cell);
                let j = match c.factor {
                    Some(f) => f / mu,
                    None => {
                        let r_eq = PEACEMAN_FACTOR * (g.dx[cell].powi(2) + g.dy[cell].powi(2)).sqrt();
                        if r_eq <= w.radius {
                            return Err(SimError::InvalidCase(format!(
                                "well {}: radius {} exceeds the equivalent radius {r_eq:.4}",
                                w.name, w.radius
                            )));
                        }
                        DARCY * 2.0 * std::f64::consts::PI * case.perm[cell] * g.dz[cell] / (r_eq / w.radius).ln() / mu
                    }
                };
                conns.push((cell, j));
            }
            wells.push(conns);
        }
        Ok(Model {
            n,
            active,
            storage,
            faces,
            wells,
        })
    }
}

/// Symmetric sparse matrix as a diagonal plus an upper off-diagonal list.
struct System {
    diag: Vec<f64>,
    off: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl System {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, d), xi) in y.iter_mut().zip(&self.diag).zip(x) {
            *yi = d * xi;
        }
        for &(i, j, v) in &self.off {
            y[i] += v * x[j];
            y[j] += v * x[i];
        }
    }

    /// Jacobi-preconditioned conjugate gradients from `x`.
    fn solve(&self, x: &mut [f64]) -> Result<(), SimError> {
        let m = x.len();
        let max_iter = 10 * m + 1000;
        let b_norm = self.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if b_norm == 0.0 {
            x.fill(0.0);
            return Ok(());
        }
        let mut r = vec![0.0; m];
        self.apply(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(&self.rhs) {
            *ri = bi - *ri;
        }
        let mut z: Vec<f64> = r.iter().zip(&self.diag).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut ap = vec![0.0; m];
        let mut residual = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        for _ in 0..max_iter {
            if residual <= CG_TOLERANCE * b_norm {
                return Ok(());
            }
            self.apply(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if !(pap > 0.0) {
                break;
            }
            let alpha = rz / pap;
            for i in 0..m {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            residual = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            for i in 0..m {
                z[i] = r[i] / self.diag[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..m {
                p[i] = z[i] + beta * p[i];
            }
        }
        if residual <= CG_TOLERANCE * b_norm {
            return Ok(());
        }
        Err(SimError::NonConvergedLinearSolve {
            iterations: max_iter,
            residual: residual / b_norm,
        })
    }
}

/// A well's control for one implicit step: rate wells add their BHP as an
/// extra unknown, keeping the system symmetric positive definite.
#[derive(Clone, Copy, Debug)]
enum Active {
    /// Signed withdrawal (production positive).
    Rate(f64),
    Bhp(f64),
    Shut,
}

fn step_controls(case: &SimCase, day: f64) -> Vec<Active> {
    case.wells
        .iter()
        .map(|w| match w.control_at(day) {
            Control::Rate { target, .. } => Active::Rate(match w.kind {
                WellKind::Producer => target,
                WellKind::Injector => -target,
            }),
            Control::Bhp { target } => Active::Bhp(target),
            Control::Shut => Active::Shut,
        })
        .collect()
}

struct StepResult {
    pressure: Vec<f64>,
    bhp: Vec<f64>,
    rates: Vec<f64>,
}

fn implicit_step(
    model: &Model,
    p_old: &[f64],
    initial: f64,
    dt: f64,
    controls: &[Active],
) -> Result<StepResult, SimError> {
    let n = model.n;
    let rate_wells: Vec<usize> = (0..controls.len())
        .filter(|&w| matches!(controls[w], Active::Rate(_)))
        .collect();
    let m = n + rate_wells.len();
    let mut sys = System {
        diag: vec![0.0; m],
        off: Vec::with_capacity(model.faces.len() + 8),
        rhs: vec![0.0; m],
    };
    for c in 0..n {
        if model.active[c] {
            let a = model.storage[c] / dt;
            sys.diag[c] = a;
            sys.rhs[c] = a * p_old[c];
        } else {
            sys.diag[c] = 1.0;
            sys.rhs[c] = initial;
        }
    }
    for &(a, b, t) in &model.faces {
        sys.diag[a] += t;
        sys.diag[b] += t;
        sys.off.push((a, b, -t));
    }
    for (w, control) in controls.iter().enumerate() {
        match *control {
            Active::Bhp(pw) => {
                for &(c, j) in &model.wells[w] {
                    sys.diag[c] += j;
                    sys.rhs[c] += j * pw;
                }
            }
            Active::Rate(q) => {
                let row = n + rate_wells.iter().position(|&r| r == w).expect("rate well");
                for &(c, j) in &model.wells[w] {
                    sys.diag[c] += j;
                    sys.diag[row] += j;
                    sys.off.push((c, row, -j));
                }
                sys.rhs[row] = -q;
            }
            Active::Shut => {}
        }
    }
    let mut x = vec![0.0; m];
    x[..n].copy_from_slice(p_old);
    for (r, &w) in rate_wells.iter().enumerate() {
        x[n + r] = connection_average(model, w, p_old);
    }
    sys.solve(&mut x)?;
    let pressure = x[..n].to_vec();
    let mut bhp = Vec::with_capacity(controls.len());
    let mut rates = Vec::with_capacity(controls.len());
    for (w, control) in controls.iter().enumerate() {
        let pw = match *control {
            Active::Bhp(pw) => pw,
            Active::Rate(_) => x[n + rate_wells.iter().position(|&r| r == w).expect("rate well")],
            Active::Shut => connection_average(model, w, &pressure),
        };
        let q = match control {
            Active::Shut => 0.0,
            _ => model.wells[w].iter().map(|&(c, j)| j * (pressure[c] - pw)).sum(),
        };
        bhp.push(pw);
        rates.push(q);
    }
    Ok(StepResult { pressure, bhp, rates })
}

fn connection_average(model: &Model, w: usize, p: &[f64]) -> f64 {
    let conns = &model.wells[w];
    let total: f64 = conns.iter().map(|&(_, j)| j).sum();
    conns.iter().map(|&(c, j)| j * p[c]).sum::<f64>() / total
}

/// Rate wells whose BHP crosses their limit switch to BHP control for the
/// step; the step is re-solved until no well switches.
fn step_with_limits(case: &SimCase, model: &Model, p_old: &[f64], day: f64, dt: f64) -> Result<StepResult, SimError> {
    let mut controls = step_controls(case, day);
    for _ in 0..SWITCH_ROUNDS {
        let res = implicit_step(model, p_old, case.reference_pressure, dt, &controls)?;
        let mut switched = false;
        for (w, well) in case.wells.iter().enumerate() {
            let (Active::Rate(_), Control::Rate { limit_bhp, .. }) = (controls[w], well.control_at(day)) else {
                continue;
            };
            let violated = match well.kind {
                WellKind::Producer => res.bhp[w] < limit_bhp,
                WellKind::Injector => res.bhp[w] > limit_bhp,
            };
            if violated {
                controls[w] = Active::Bhp(limit_bhp);
                switched = true;
            }
        }
        if !switched {
            return Ok(res);
        }
    }
    implicit_step(model, p_old, case.reference_pressure, dt, &controls)
}

/// Interval end points: report times plus control-change days.
fn breakpoints(case: &SimCase) -> Vec<f64> {
    let end = *case.schedule.last().expect("checked non-empty");
    let mut t: Vec<f64> = case
        .schedule
        .iter()
        .copied()
        .chain(
            case.wells
                .iter()
                .flat_map(|w| w.changes.iter().map(|c| c.day))
                .filter(|d| *d > 0.0 && *d < end),
        )
        .collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

pub fn simulate_detailed(case: &SimCase) -> Result<ProxyRun, SimError> {
    case.check()?;
    let model = Model::build(case)?;
    let mut p = vec![case.reference_pressure; model.n];
    let n_wells = case.wells.len();
    let mut bhp_series: Vec<Vec<f64>> = vec![Vec::new(); n_wells];
    let mut rate_series: Vec<Vec<f64>> = vec![Vec::new(); n_wells];
    let mut pressures = Vec::with_capacity(case.schedule.len());
    let mut steps = Vec::new();
    let mut report = 0;
    let mut t = 0.0;
    for end in breakpoints(case) {
        let substeps = ((end - t) / case.max_step_days).ceil().max(1.0) as usize;
        let dt = (end - t) / substeps as f64;
        let mut last = None;
        for s in 0..substeps {
            let start = t + dt * s as f64;
            let res = step_with_limits(case, &model, &p, start, dt)?;
            let storage_rate: f64 = (0..model.n)
                .filter(|&c| model.active[c])
                .map(|c| model.storage[c] * (res.pressure[c] - p[c]) / dt)
                .sum();
            steps.push(StepRecord {
                end_day: if s + 1 == substeps {
                    end
                } else {
                    t + dt * (s + 1) as f64
                },
                dt,
                storage_rate,
                well_rates: res.rates.clone(),
                well_bhp: res.bhp.clone(),
            });
            p.clone_from(&res.pressure);
            last = Some(res);
        }
        t = end;
        if report < case.schedule.len() && case.schedule[report] == end {
            let res = last.expect("at least one substep");
            for w in 0..n_wells {
                bhp_series[w].push(res.bhp[w]);
                let sign = match case.wells[w].kind {
                    WellKind::Producer => 1.0,
                    WellKind::Injector => -1.0,
                };
                rate_series[w].push(sign * res.rates[w]);
            }
            pressures.push(p.clone());
            report += 1;
        }
    }
    let mut series = Vec::with_capacity(2 * n_wells);
    for (w, well) in case.wells.iter().enumerate() {
        let times = case.schedule.clone();
        series.push(Series::new(
            &well.name,
            QuantityKind::Wbhp,
            times.clone(),
            std::mem::take(&mut bhp_series[w]),
        )?);
        let rate_kind = match well.kind {
            WellKind::Producer => QuantityKind::Wopr,
            WellKind::Injector => QuantityKind::Wwir,
        };
        series.push(Series::new(
            &well.name,
            rate_kind,
            times,
            std::mem::take(&mut rate_series[w]),
        )?);
    }
    Ok(ProxyRun {
        series,
        pressures,
        steps,
    })
}
