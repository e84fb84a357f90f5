//! Time stepping of the regularized n- and c-equations and the coupled driver.
//!
//! One step is Stokes -> n -> c. Both scalar updates are flux form with
//! explicit upwinded transport and implicit diffusion, which keeps mass exact
//! and, under the CFL bound, preserves the sign of n and c.

use std::f64::consts::PI;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{
    advective_fluxes, chemotactic_fluxes, divergence, FaceBoundary, Grid, ScalarField, VectorField,
};
use crate::linalg::{apply_neumann_laplacian, conjugate_gradient, Tolerance};
use crate::monitor::{self, MonitorRecord, StepInfo};
use crate::params::{check_pq, AdmissibilityReport, ModelParams};
use crate::stokes::{stokes_step, PotentialSpec, StokesWork};

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub n: ScalarField,
    pub c: ScalarField,
    pub u: VectorField,
    pub p: ScalarField,
    pub t: f64,
}

impl FieldState {
    pub fn grid(&self) -> Grid {
        self.n.grid
    }

    /// n >= 0, c > 0, zero normal velocity on the boundary.
    pub fn validate(&self) -> Result<()> {
        let g = self.grid();
        let (nmin, at) = self.n.min_with_index();
        if !(nmin >= 0.0) {
            return Err(Error::Positivity {
                field: "n",
                cell: g.cell_of(at),
                value: nmin,
            });
        }
        let (cmin, at) = self.c.min_with_index();
        if !(cmin > 0.0) {
            return Err(Error::Positivity {
                field: "c",
                cell: g.cell_of(at),
                value: cmin,
            });
        }
        if self.u.boundary_normal_max() != 0.0 {
            return Err(Error::domain(
                "velocity has nonzero normal component on the boundary",
            ));
        }
        Ok(())
    }
}

/// Initial cell density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum DensityPreset {
    /// Gaussian exp(-|x - center|^2 / (2 width^2)) rescaled to the given mass.
    GaussianBump {
        center: Vec<f64>,
        width: f64,
        mass: f64,
    },
    /// Two equal Gaussians sharing the mass.
    TwoBumps {
        centers: Vec<Vec<f64>>,
        width: f64,
        mass: f64,
    },
    /// mean * (1 + amplitude * prod cos(modes_a pi x_a / L_a)).
    UniformPlusPerturbation {
        mean: f64,
        amplitude: f64,
        modes: Vec<u32>,
    },
    Sampled {
        values: Vec<f64>,
    },
    /// n == 0: only the c- and u-equations are exercised.
    Zero,
}

/// Initial signal concentration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum SignalPreset {
    Uniform {
        value: f64,
    },
    UniformPlusPerturbation {
        mean: f64,
        amplitude: f64,
        modes: Vec<u32>,
    },
    Sampled {
        values: Vec<f64>,
    },
}

/// Initial velocity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum VelocityPreset {
    #[default]
    Zero,
    /// Discrete curl of amplitude * sin^2(k pi x) sin^2(m pi y) sampled at
    /// cell corners; exactly divergence free.
    Stream { amplitude: f64, modes: [u32; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub n0: DensityPreset,
    pub c0: SignalPreset,
    #[serde(default)]
    pub u0: VelocityPreset,
    /// Lower bound enforced on c0 (values below are raised to it).
    pub c0_floor: f64,
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData {
            n0: DensityPreset::GaussianBump {
                center: vec![0.4, 0.6],
                width: 0.15,
                mass: 1.0,
            },
            c0: SignalPreset::Uniform { value: 1.0 },
            u0: VelocityPreset::Zero,
            c0_floor: 1.0,
        }
    }
}

fn cosine_product(g: &Grid, modes: &[u32], x: [f64; 3]) -> f64 {
    (0..g.ndim)
        .map(|a| (modes.get(a).copied().unwrap_or(0) as f64 * PI * x[a] / g.len[a]).cos())
        .product()
}

fn gaussian(g: &Grid, center: &[f64], width: f64) -> Result<ScalarField> {
    if center.len() != g.ndim {
        return Err(Error::domain(format!(
            "bump center needs {} coordinates",
            g.ndim
        )));
    }
    if !(width > 0.0) {
        return Err(Error::domain("bump width must be positive"));
    }
    Ok(ScalarField::from_fn(*g, |x| {
        let r2: f64 = (0..g.ndim).map(|a| (x[a] - center[a]).powi(2)).sum();
        (-r2 / (2.0 * width * width)).exp()
    }))
}

fn with_mass(mut f: ScalarField, mass: f64) -> Result<ScalarField> {
    if !(mass > 0.0) {
        return Err(Error::domain("initial mass must be positive"));
    }
    let s = mass / f.sum();
    f.values.iter_mut().for_each(|v| *v *= s);
    Ok(f)
}

impl InitialData {
    pub fn build(&self, g: &Grid) -> Result<FieldState> {
        let n = match &self.n0 {
            DensityPreset::GaussianBump {
                center,
                width,
                mass,
            } => with_mass(gaussian(g, center, *width)?, *mass)?,
            DensityPreset::TwoBumps {
                centers,
                width,
                mass,
            } => {
                if centers.len() != 2 {
                    return Err(Error::domain("two_bumps needs exactly two centers"));
                }
                let a = gaussian(g, &centers[0], *width)?;
                let b = gaussian(g, &centers[1], *width)?;
                let sum = ScalarField {
                    grid: *g,
                    values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
                };
                with_mass(sum, *mass)?
            }
            DensityPreset::UniformPlusPerturbation {
                mean,
                amplitude,
                modes,
            } => {
                if !(*mean > 0.0) || amplitude.abs() > 1.0 {
                    return Err(Error::domain("need mean > 0 and |amplitude| <= 1"));
                }
                ScalarField::from_fn(*g, |x| {
                    mean * (1.0 + amplitude * cosine_product(g, modes, x))
                })
            }
            DensityPreset::Sampled { values } => {
                if values.len() != g.num_cells() {
                    return Err(Error::domain("sampled n0 needs one value per cell"));
                }
                if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::domain("sampled n0 must be finite and nonnegative"));
                }
                if values.iter().all(|v| *v == 0.0) {
                    return Err(Error::domain("sampled n0 vanishes identically"));
                }
                ScalarField {
                    grid: *g,
                    values: values.clone(),
                }
            }
            DensityPreset::Zero => ScalarField::zeros(*g),
        };
        if !(self.c0_floor > 0.0) {
            return Err(Error::domain("c0_floor must be positive"));
        }
        let mut c = match &self.c0 {
            SignalPreset::Uniform { value } => ScalarField::constant(*g, *value),
            SignalPreset::UniformPlusPerturbation {
                mean,
                amplitude,
                modes,
            } => ScalarField::from_fn(*g, |x| {
                mean * (1.0 + amplitude * cosine_product(g, modes, x))
            }),
            SignalPreset::Sampled { values } => {
                if values.len() != g.num_cells() {
                    return Err(Error::domain("sampled c0 needs one value per cell"));
                }
                ScalarField {
                    grid: *g,
                    values: values.clone(),
                }
            }
        };
        if !c.is_finite() {
            return Err(Error::domain("c0 must be finite"));
        }
        for v in &mut c.values {
            *v = v.max(self.c0_floor);
        }
        let u = match self.u0 {
            VelocityPreset::Zero => VectorField::zeros(*g),
            VelocityPreset::Stream { amplitude, modes } => stream_velocity(g, amplitude, modes)?,
        };
        Ok(FieldState {
            n,
            c,
            u,
            p: ScalarField::zeros(*g),
            t: 0.0,
        })
    }
}

fn stream_velocity(g: &Grid, amplitude: f64, modes: [u32; 2]) -> Result<VectorField> {
    if g.ndim != 2 {
        return Err(Error::domain("stream velocity preset is two-dimensional"));
    }
    let (kx, ky) = (
        modes[0] as f64 * PI / g.len[0],
        modes[1] as f64 * PI / g.len[1],
    );
    let (hx, hy) = (g.h(0), g.h(1));
    let s = |i: usize, j: usize| {
        amplitude * (kx * i as f64 * hx).sin().powi(2) * (ky * j as f64 * hy).sin().powi(2)
    };
    let mut u = VectorField::zeros(*g);
    let [nx, ny, _] = g.n;
    for j in 0..ny {
        for i in 1..nx {
            u.comps[0][i + (nx + 1) * j] = (s(i, j + 1) - s(i, j)) / hy;
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            u.comps[1][i + nx * j] = -(s(i + 1, j) - s(i, j)) / hx;
        }
    }
    Ok(u)
}

/// Time step selection: a fixed value or "auto".
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TimeStep {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for TimeStep {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TimeStep::Auto => s.serialize_str("auto"),
            TimeStep::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for TimeStep {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(TimeStep::Fixed(v)),
            Raw::Text(s) if s == "auto" => Ok(TimeStep::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "dt must be a number or \"auto\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    #[serde(default)]
    pub dt: TimeStep,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(default = "defaults::cfl_factor")]
    pub cfl_factor: f64,
    #[serde(default = "defaults::stride")]
    pub snapshot_stride: usize,
    #[serde(default = "defaults::tol_div")]
    pub tol_div: f64,
    #[serde(default = "defaults::poisson_tol")]
    pub poisson_tol: f64,
    #[serde(default = "defaults::max_iters")]
    pub max_iters: usize,
    /// Upper cap on automatic steps; defaults to a quarter of the smallest
    /// cell width.
    #[serde(default)]
    pub dt_max: Option<f64>,
}

mod defaults {
    pub fn cfl_factor() -> f64 {
        0.4
    }
    pub fn stride() -> usize {
        1
    }
    pub fn tol_div() -> f64 {
        1e-8
    }
    pub fn poisson_tol() -> f64 {
        1e-10
    }
    pub fn max_iters() -> usize {
        20_000
    }
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig {
            dt: TimeStep::Auto,
            t_end: 0.5,
            cfl_factor: defaults::cfl_factor(),
            snapshot_stride: defaults::stride(),
            tol_div: defaults::tol_div(),
            poisson_tol: defaults::poisson_tol(),
            max_iters: defaults::max_iters(),
            dt_max: None,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<()> {
        if let TimeStep::Fixed(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::domain(format!("dt must be positive, got {dt}")));
            }
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::domain("T must be finite and nonnegative"));
        }
        if !(self.cfl_factor > 0.0 && self.cfl_factor <= 1.0) {
            return Err(Error::domain("cfl_factor must lie in (0, 1]"));
        }
        if self.snapshot_stride == 0 {
            return Err(Error::domain("snapshot_stride must be >= 1"));
        }
        if !(self.tol_div > 0.0) || !(self.poisson_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::domain(
                "solver tolerances and max_iters must be positive",
            ));
        }
        if let Some(m) = self.dt_max {
            if !(m > 0.0) {
                return Err(Error::domain("dt_max must be positive"));
            }
        }
        Ok(())
    }
}

/// Largest admissible step for the explicit transport part and the cell that
/// limits it.
///
/// For every cell the outflow rate sums, over its faces, the outward advective
/// speed and the outward chemotactic drift chi |grad c| / ((1 + eps n) c_face)
/// divided by the cell width. An explicit step with dt * rate <= 1 keeps the
/// transported field nonnegative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CflBound {
    pub dt: f64,
    pub cell: usize,
}

pub fn cfl_bound(
    n: &ScalarField,
    c: &ScalarField,
    u: &VectorField,
    params: &ModelParams,
) -> CflBound {
    cfl_bound_with(n, c, u, params.chi, params.eps)
}

fn cfl_bound_with(
    n: &ScalarField,
    c: &ScalarField,
    u: &VectorField,
    chi: f64,
    eps: f64,
) -> CflBound {
    let g = n.grid;
    let mut rate = vec![0.0; g.num_cells()];
    for a in 0..g.ndim {
        let inv_h = 1.0 / g.h(a);
        let ua = &u.comps[a];
        g.for_each_interior_face(a, |face, m, p| {
            let w = ua[face];
            if w > 0.0 {
                rate[m] += w * inv_h;
            } else {
                rate[p] -= w * inv_h;
            }
            if chi > 0.0 {
                let (cm, cp) = (c.values[m], c.values[p]);
                let drift = chi * (cp - cm) * inv_h / (0.5 * (cm + cp));
                if drift > 0.0 {
                    rate[m] += drift / (1.0 + eps * n.values[m]) * inv_h;
                } else {
                    rate[p] -= drift / (1.0 + eps * n.values[p]) * inv_h;
                }
            }
        });
    }
    let (cell, worst) =
        rate.iter().enumerate().fold(
            (0, 0.0f64),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        );
    CflBound {
        dt: if worst > 0.0 {
            1.0 / worst
        } else {
            f64::INFINITY
        },
        cell,
    }
}

fn helmholtz_solve(
    g: &Grid,
    rhs: &[f64],
    shift: f64,
    dt: f64,
    max_iters: usize,
    name: &'static str,
) -> Result<Vec<f64>> {
    let mut x = rhs.to_vec();
    conjugate_gradient(
        name,
        |v, o| {
            apply_neumann_laplacian(g, v, o);
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi = shift * vi - dt * *oi;
            }
        },
        rhs,
        &mut x,
        Tolerance {
            rel: 1e-13,
            abs: 1e-300,
            max_iters,
        },
        false,
    )?;
    Ok(x)
}

fn sentinel(field: &'static str, f: &mut ScalarField, scale: f64) -> Result<()> {
    let g = f.grid;
    let (m, at) = f.min_with_index();
    if m < -1e-13 * scale || !m.is_finite() {
        return Err(Error::Positivity {
            field,
            cell: g.cell_of(at),
            value: m,
        });
    }
    // round-off negatives of the linear solve
    f.values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(())
}

/// One step of the n-equation with the velocity already advanced in `state.u`.
pub fn n_step(state: &FieldState, params: &ModelParams, dt: f64) -> Result<ScalarField> {
    n_step_with(state, params.chi, params.eps, dt, 20_000)
}

pub(crate) fn n_step_with(
    state: &FieldState,
    chi: f64,
    eps: f64,
    dt: f64,
    max_iters: usize,
) -> Result<ScalarField> {
    let g = state.grid();
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let bound = cfl_bound_with(&state.n, &state.c, &state.u, chi, eps);
    if dt > bound.dt {
        return Err(Error::Cfl {
            dt,
            bound: bound.dt,
            cell: g.cell_of(bound.cell),
        });
    }
    let mut flux = advective_fluxes(&state.n, &state.u, FaceBoundary::Closed);
    let chemo = chemotactic_fluxes(&state.n, &state.c, chi, eps)?;
    for a in 0..g.ndim {
        for (f, c) in flux.comps[a].iter_mut().zip(&chemo.comps[a]) {
            *f += c;
        }
    }
    let div = divergence(&flux);
    let rhs: Vec<f64> = state
        .n
        .values
        .iter()
        .zip(&div.values)
        .map(|(n, d)| n - dt * d)
        .collect();
    let mut values = helmholtz_solve(&g, &rhs, 1.0, dt, max_iters, "n helmholtz")?;
    // The operator preserves sums, so the solve residual is the only mass
    // defect; spread it uniformly.
    let defect = (rhs.iter().sum::<f64>() - values.iter().sum::<f64>()) / values.len() as f64;
    values.iter_mut().for_each(|v| *v += defect);
    let mut out = ScalarField { grid: g, values };
    sentinel("n", &mut out, state.n.max_abs())?;
    Ok(out)
}

/// One step of the c-equation with `state.n` and `state.u` already advanced.
pub fn c_step(state: &FieldState, dt: f64) -> Result<ScalarField> {
    c_step_with(state, dt, 20_000)
}

pub(crate) fn c_step_with(state: &FieldState, dt: f64, max_iters: usize) -> Result<ScalarField> {
    let g = state.grid();
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let bound = cfl_bound_with(&state.n, &state.c, &state.u, 0.0, 0.0);
    if dt > bound.dt {
        return Err(Error::Cfl {
            dt,
            bound: bound.dt,
            cell: g.cell_of(bound.cell),
        });
    }
    let div = divergence(&advective_fluxes(&state.c, &state.u, FaceBoundary::Closed));
    let rhs: Vec<f64> = (0..g.num_cells())
        .map(|i| state.c.values[i] - dt * div.values[i] + dt * state.n.values[i])
        .collect();
    let values = helmholtz_solve(&g, &rhs, 1.0 + dt, dt, max_iters, "c helmholtz")?;
    let out = ScalarField { grid: g, values };
    let (m, at) = out.min_with_index();
    if !(m > 0.0) {
        return Err(Error::Positivity {
            field: "c",
            cell: g.cell_of(at),
            value: m,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunOutcome {
    Completed,
    Aborted { step: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub params: ModelParams,
    pub grid: Grid,
    pub scheme: SchemeConfig,
    pub potential: PotentialSpec,
    pub c0_floor: f64,
    pub admissibility: AdmissibilityReport,
    pub steps: usize,
    pub wall_clock_secs: f64,
    /// Smallest and largest accepted step.
    pub dt_range: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Stored states; the first and last accepted states are always kept.
    pub snapshots: Vec<FieldState>,
    /// Step index of each snapshot.
    pub snapshot_steps: Vec<usize>,
    /// One record for the initial state and one per accepted step.
    pub records: Vec<MonitorRecord>,
    pub meta: RunMeta,
    pub outcome: RunOutcome,
    /// The error that aborted the run, if any.
    pub error: Option<std::sync::Arc<Error>>,
}

impl Trajectory {
    pub fn completed(&self) -> bool {
        self.outcome == RunOutcome::Completed
    }

    /// Whether every accepted step has a stored state.
    pub fn has_every_step(&self) -> bool {
        self.snapshot_steps.iter().enumerate().all(|(i, &s)| i == s)
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn final_state(&self) -> &FieldState {
        self.snapshots
            .last()
            .expect("trajectory holds the initial state")
    }
}

/// Runs the coupled scheme from the initial data to `scheme.t_end`.
///
/// Invalid inputs return `Err`. Failures during time stepping end the run
/// early and are reported through `Trajectory::outcome`.
pub fn simulate(
    params: &ModelParams,
    grid: &Grid,
    init: &InitialData,
    potential: &PotentialSpec,
    scheme: &SchemeConfig,
) -> Result<Trajectory> {
    let state = init.build(grid)?;
    simulate_from(params, state, init.c0_floor, potential, scheme)
}

/// Same as [`simulate`] for an explicit initial state; `c0_floor` is the
/// declared lower bound of c0 used by the envelope monitor.
pub fn simulate_from(
    params: &ModelParams,
    state: FieldState,
    c0_floor: f64,
    potential: &PotentialSpec,
    scheme: &SchemeConfig,
) -> Result<Trajectory> {
    params.validate()?;
    scheme.validate()?;
    let grid = state.grid();
    potential.validate(&grid)?;
    if state.t != 0.0 {
        return Err(Error::domain("initial state must start at t = 0"));
    }
    if !state.n.is_finite() || !(state.n.min() >= 0.0) {
        return Err(Error::domain("n0 must be finite and nonnegative"));
    }
    if !state.c.is_finite() || !(state.c.min() > 0.0) {
        return Err(Error::domain("c0 must be finite and positive"));
    }
    if state.u.boundary_normal_max() != 0.0 {
        return Err(Error::domain(
            "u0 must have zero normal component on the boundary",
        ));
    }
    let started = Instant::now();
    let admissibility = check_pq(params);
    let mut meta = RunMeta {
        params: *params,
        grid,
        scheme: scheme.clone(),
        potential: potential.clone(),
        c0_floor,
        admissibility,
        steps: 0,
        wall_clock_secs: 0.0,
        dt_range: [f64::INFINITY, 0.0],
    };
    let first = monitor::record_step(&state, params, None, &StepInfo::initial(), c0_floor)?;
    let mut traj = Trajectory {
        snapshots: vec![state.clone()],
        snapshot_steps: vec![0],
        records: vec![first],
        meta: meta.clone(),
        outcome: RunOutcome::Completed,
        error: None,
    };
    let mut work = StokesWork::new(grid, scheme.tol_div, scheme.poisson_tol, scheme.max_iters);
    let dt_max = scheme.dt_max.unwrap_or_else(|| 0.25 * grid.h_min());
    let mut state = state;
    let mut step = 0usize;
    let t_end = scheme.t_end;
    while state.t < t_end * (1.0 - 1e-12) {
        step += 1;
        match advance(params, &state, potential, scheme, dt_max, &mut work) {
            Ok((next, info)) => {
                let prev = traj.records.last().expect("initial record");
                let rec = match monitor::record_step(&next, params, Some(prev), &info, c0_floor) {
                    Ok(r) => r,
                    Err(e) => {
                        abort(&mut traj, step, e);
                        break;
                    }
                };
                meta.dt_range = [meta.dt_range[0].min(info.dt), meta.dt_range[1].max(info.dt)];
                traj.records.push(rec);
                state = next;
                let last = state.t >= t_end * (1.0 - 1e-12);
                if step % scheme.snapshot_stride == 0 || last {
                    traj.snapshots.push(state.clone());
                    traj.snapshot_steps.push(step);
                }
            }
            Err(e) => {
                abort(&mut traj, step, e);
                break;
            }
        }
    }
    if !traj.completed() && *traj.snapshot_steps.last().unwrap() != traj.records.len() - 1 {
        traj.snapshots.push(state.clone());
        traj.snapshot_steps.push(traj.records.len() - 1);
    }
    meta.steps = traj.records.len() - 1;
    meta.wall_clock_secs = started.elapsed().as_secs_f64();
    traj.meta = meta;
    Ok(traj)
}

fn abort(traj: &mut Trajectory, step: usize, e: Error) {
    let e = Error::AtStep {
        step,
        source: Box::new(e),
    };
    traj.outcome = RunOutcome::Aborted {
        step,
        reason: e.to_string(),
    };
    traj.error = Some(std::sync::Arc::new(e));
}

fn advance(
    params: &ModelParams,
    state: &FieldState,
    potential: &PotentialSpec,
    scheme: &SchemeConfig,
    dt_max: f64,
    work: &mut StokesWork,
) -> Result<(FieldState, StepInfo)> {
    let g = state.grid();
    let remaining = scheme.t_end - state.t;
    let bound = cfl_bound(&state.n, &state.c, &state.u, params);
    let mut dt = match scheme.dt {
        TimeStep::Auto => (scheme.cfl_factor * bound.dt).min(dt_max),
        TimeStep::Fixed(dt) => {
            if dt > bound.dt {
                return Err(Error::Cfl {
                    dt,
                    bound: bound.dt,
                    cell: g.cell_of(bound.cell),
                });
            }
            dt
        }
    };
    dt = dt.min(remaining);
    // The bound is re-evaluated with the advanced velocity; automatic steps
    // shrink until it holds.
    for _ in 0..30 {
        let (u, p) = stokes_step(&state.u, &state.n, potential, dt, work)?;
        let mid = FieldState {
            n: state.n.clone(),
            c: state.c.clone(),
            u,
            p,
            t: state.t,
        };
        let after = cfl_bound(&mid.n, &mid.c, &mid.u, params);
        if dt > after.dt {
            if scheme.dt == TimeStep::Auto {
                dt = scheme.cfl_factor * after.dt;
                continue;
            }
            return Err(Error::Cfl {
                dt,
                bound: after.dt,
                cell: g.cell_of(after.cell),
            });
        }
        let n = n_step_with(&mid, params.chi, params.eps, dt, scheme.max_iters)?;
        let with_n = FieldState { n, ..mid };
        let c = c_step_with(&with_n, dt, scheme.max_iters)?;
        let t = if dt == remaining {
            scheme.t_end
        } else {
            state.t + dt
        };
        let next = FieldState { c, t, ..with_n };
        let info = StepInfo {
            dt,
            cfl_used: dt / after.dt,
            max_div_u: divergence(&next.u).max_abs(),
            poisson: work.last_poisson,
        };
        return Ok((next, info));
    }
    Err(Error::Cfl {
        dt,
        bound: bound.dt,
        cell: g.cell_of(bound.cell),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;

    fn uniform_state(g: Grid, n: f64, c: f64) -> FieldState {
        FieldState {
            n: ScalarField::constant(g, n),
            c: ScalarField::constant(g, c),
            u: VectorField::zeros(g),
            p: ScalarField::zeros(g),
            t: 0.0,
        }
    }

    fn bumpy_state(g: Grid) -> FieldState {
        let init = InitialData {
            n0: DensityPreset::GaussianBump {
                center: vec![0.4, 0.55],
                width: 0.12,
                mass: 1.0,
            },
            c0: SignalPreset::UniformPlusPerturbation {
                mean: 1.0,
                amplitude: 0.3,
                modes: vec![1, 2],
            },
            u0: VelocityPreset::Stream {
                amplitude: 0.5,
                modes: [1, 1],
            },
            c0_floor: 0.5,
        };
        init.build(&g).unwrap()
    }

    #[test]
    fn uniform_state_is_steady_for_n() {
        let g = Grid::unit_square(16);
        let s = uniform_state(g, 2.0, 1.0);
        let n = n_step(&s, &ModelParams::default(), 0.01).unwrap();
        for v in &n.values {
            assert!((v - 2.0).abs() < 1e-13);
        }
    }

    #[test]
    fn n_step_conserves_mass() {
        let g = Grid::unit_square(32);
        let s = bumpy_state(g);
        let params = ModelParams::default();
        let bound = cfl_bound(&s.n, &s.c, &s.u, &params);
        let n = n_step(&s, &params, 0.4 * bound.dt).unwrap();
        let (m0, m1) = (integrate(&s.n, 1.0).unwrap(), integrate(&n, 1.0).unwrap());
        assert!(((m1 - m0) / m0).abs() < 1e-12, "{m0} {m1}");
        assert!(n.min() >= 0.0);
    }

    #[test]
    fn n_step_rejects_cfl_violation() {
        let g = Grid::unit_square(32);
        let s = bumpy_state(g);
        let params = ModelParams::default();
        let bound = cfl_bound(&s.n, &s.c, &s.u, &params);
        assert!(matches!(
            n_step(&s, &params, 1.5 * bound.dt),
            Err(Error::Cfl { .. })
        ));
    }

    #[test]
    fn saturation_shrinks_chemotactic_displacement() {
        let g = Grid::unit_square(16);
        let mut s = uniform_state(g, 50.0, 1.0);
        s.c = ScalarField::from_fn(g, |x| 1.0 + 0.2 * (PI * x[0]).cos());
        let dt = 1e-4;
        let base = s.n.clone();
        let free = n_step_with(&s, 1.0, 0.0, dt, 1000).unwrap();
        let sat = n_step_with(&s, 1.0, 1.0, dt, 1000).unwrap();
        let diff = |a: &ScalarField| {
            a.values
                .iter()
                .zip(&base.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        // pure diffusion of a uniform n is zero, so the change is chemotactic
        let ratio = diff(&sat) / diff(&free);
        assert!((ratio - 1.0 / 51.0).abs() < 1e-6, "{ratio}");
    }

    #[test]
    fn implicit_decay_of_uniform_c() {
        let g = Grid::unit_square(8);
        let s = uniform_state(g, 0.0, 3.0);
        let dt = 0.05;
        let c = c_step(&s, dt).unwrap();
        for v in &c.values {
            assert!((v - 3.0 / (1.0 + dt)).abs() < 1e-13);
            assert!((v - 3.0 * (-dt).exp()).abs() < 3.0 * dt * dt);
        }
    }

    #[test]
    fn c_envelope_without_cells() {
        let g = Grid::unit_square(8);
        let mut s = uniform_state(g, 0.0, 2.0);
        s.c = ScalarField::from_fn(g, |x| 2.0 + x[0]);
        let dt = 0.02;
        for _ in 0..50 {
            s.c = c_step(&s, dt).unwrap();
            s.t += dt;
            assert!(s.c.min() >= 2.0 * (-s.t).exp());
        }
    }

    #[test]
    fn uniform_relaxation_to_n() {
        let g = Grid::unit_square(4);
        let (nbar, cbar) = (1.5, 0.5);
        let err = |dt: f64| {
            let mut s = uniform_state(g, nbar, cbar);
            let steps = (1.0 / dt).round() as usize;
            for _ in 0..steps {
                s.c = c_step(&s, dt).unwrap();
            }
            let exact = (-1.0f64).exp() * cbar + (1.0 - (-1.0f64).exp()) * nbar;
            (s.c.values[0] - exact).abs()
        };
        let (e1, e2) = (err(0.02), err(0.01));
        assert!(e1 < 0.05 && e1 / e2 > 1.8, "{e1} {e2}");
    }

    #[test]
    fn gaussian_preset_has_exact_mass() {
        let g = Grid::unit_square(24);
        let s = InitialData::default().build(&g).unwrap();
        assert!((s.n.sum() - 1.0).abs() < 1e-14);
        assert_eq!(s.c.min(), 1.0);
    }

    #[test]
    fn c0_floor_is_enforced() {
        let g = Grid::unit_square(8);
        let init = InitialData {
            c0: SignalPreset::UniformPlusPerturbation {
                mean: 1.0,
                amplitude: 0.9,
                modes: vec![1, 0],
            },
            c0_floor: 0.5,
            ..InitialData::default()
        };
        assert!(init.build(&g).unwrap().c.min() >= 0.5);
    }

    #[test]
    fn stream_preset_is_divergence_free() {
        let g = Grid::new_2d(20, 12, 1.0, 0.7).unwrap();
        let u = stream_velocity(&g, 2.0, [2, 1]).unwrap();
        assert!(divergence(&u).max_abs() < 1e-12);
        assert!(u.max_abs() > 0.1);
        assert_eq!(u.boundary_normal_max(), 0.0);
    }

    #[test]
    fn dt_serialization() {
        let s: SchemeConfig = serde_json::from_str(r#"{"dt": "auto", "T": 0.5}"#).unwrap();
        assert_eq!(s.dt, TimeStep::Auto);
        let s: SchemeConfig = serde_json::from_str(r#"{"dt": 0.001, "T": 0.5}"#).unwrap();
        assert_eq!(s.dt, TimeStep::Fixed(0.001));
        assert!(serde_json::from_str::<SchemeConfig>(r#"{"dt": "fast", "T": 0.5}"#).is_err());
    }

    #[test]
    fn short_run_keeps_invariants() {
        let g = Grid::unit_square(24);
        let scheme = SchemeConfig {
            t_end: 0.05,
            ..SchemeConfig::default()
        };
        let traj = simulate(
            &ModelParams::default(),
            &g,
            &InitialData::default(),
            &PotentialSpec::default(),
            &scheme,
        )
        .unwrap();
        assert!(traj.completed(), "{:?}", traj.outcome);
        assert!(traj.has_every_step());
        assert_eq!(traj.records.len(), traj.snapshots.len());
        let m0 = traj.records[0].mass_n;
        for (r, s) in traj.records.iter().zip(&traj.snapshots) {
            assert!((r.mass_n - m0).abs() <= 1e-12 * m0);
            assert!(r.min_n >= 0.0);
            assert!(r.min_c >= r.c_envelope);
            assert!((r.t - s.t).abs() == 0.0);
        }
        assert_eq!(traj.final_state().t, 0.05);
        let times = traj.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn mirror_symmetry_is_preserved() {
        let g = Grid::unit_square(16);
        let init = InitialData {
            n0: DensityPreset::GaussianBump {
                center: vec![0.5, 0.4],
                width: 0.1,
                mass: 1.0,
            },
            ..InitialData::default()
        };
        let scheme = SchemeConfig {
            t_end: 0.02,
            ..SchemeConfig::default()
        };
        let traj = simulate(
            &ModelParams::default(),
            &g,
            &init,
            &PotentialSpec::default(),
            &scheme,
        )
        .unwrap();
        let s = traj.final_state();
        let nx = g.n[0];
        // u_x antisymmetric about x = 1/2, u_y symmetric
        let scale = s.u.max_abs().max(1e-300);
        for j in 0..g.n[1] {
            for i in 0..=nx {
                let a = s.u.comps[0][i + (nx + 1) * j];
                let b = s.u.comps[0][(nx - i) + (nx + 1) * j];
                assert!((a + b).abs() <= 1e-8 * scale, "{a} {b}");
            }
        }
        for j in 0..=g.n[1] {
            for i in 0..nx {
                let a = s.u.comps[1][i + nx * j];
                let b = s.u.comps[1][(nx - 1 - i) + nx * j];
                assert!((a - b).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn fixed_step_over_the_bound_aborts_with_cfl() {
        let g = Grid::unit_square(16);
        let scheme = SchemeConfig {
            dt: TimeStep::Fixed(0.5),
            t_end: 1.0,
            ..SchemeConfig::default()
        };
        let init = InitialData {
            c0: SignalPreset::UniformPlusPerturbation {
                mean: 1.0,
                amplitude: 0.5,
                modes: vec![2, 2],
            },
            c0_floor: 0.1,
            ..InitialData::default()
        };
        let traj = simulate(
            &ModelParams::default(),
            &g,
            &init,
            &PotentialSpec::default(),
            &scheme,
        )
        .unwrap();
        assert!(matches!(traj.outcome, RunOutcome::Aborted { step: 1, .. }));
        assert!(matches!(
            traj.error.as_deref().map(Error::root),
            Some(Error::Cfl { .. })
        ));
        assert_eq!(traj.snapshots.len(), 1);
    }
}
