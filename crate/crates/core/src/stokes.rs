//! Time-dependent Stokes stepper with buoyancy forcing, incompressibility
//! enforced by pressure projection on the staggered grid.
//!
//! One step:
//!
//! 1. `u* = (I - dt Lap)^{-1} u` per component (no-slip walls, CG solve),
//! 2. `u** = u* + dt n grad(Phi)`,
//! 3. `Lap P = -div(u**)/dt` with Neumann data and mean-zero `P`,
//! 4. `u' = u** + dt grad(P)`.
//!
//! On the staggered grid `div(grad(.))` is exactly the Neumann Laplacian, so
//! the projected field is divergence free up to the Poisson residual.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{divergence, grad_faces, Grid, ScalarField, VectorField};
use crate::linalg::{
    apply_neumann_laplacian, apply_velocity_helmholtz, conjugate_gradient, SolveStats, Tolerance,
};

/// Gravitational-type potential Phi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PotentialSpec {
    /// Phi(x) = g . x
    Linear { coefficients: Vec<f64> },
    /// Phi(x) = sum_a (coefficients[a] / 2) x_a^2
    Quadratic { coefficients: Vec<f64> },
    /// Cell-centred samples of Phi.
    Sampled { values: Vec<f64> },
}

impl Default for PotentialSpec {
    fn default() -> Self {
        PotentialSpec::Linear {
            coefficients: vec![0.0, -1.0],
        }
    }
}

impl PotentialSpec {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            PotentialSpec::Linear { coefficients } | PotentialSpec::Quadratic { coefficients } => {
                if coefficients.len() != grid.ndim {
                    return Err(Error::domain(format!(
                        "potential needs {} coefficients, got {}",
                        grid.ndim,
                        coefficients.len()
                    )));
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(Error::domain("potential coefficients must be finite"));
                }
            }
            PotentialSpec::Sampled { values } => {
                if values.len() != grid.num_cells() {
                    return Err(Error::domain(
                        "sampled potential must have one value per cell",
                    ));
                }
                if values.iter().any(|c| !c.is_finite()) {
                    return Err(Error::domain("sampled potential must be finite"));
                }
            }
        }
        Ok(())
    }

    /// d Phi / d x_axis at a point.
    fn partial(&self, axis: usize, x: [f64; 3]) -> f64 {
        match self {
            PotentialSpec::Linear { coefficients } => coefficients[axis],
            PotentialSpec::Quadratic { coefficients } => coefficients[axis] * x[axis],
            PotentialSpec::Sampled { .. } => {
                unreachable!("sampled potential has no pointwise derivative")
            }
        }
    }

    /// grad(Phi) on every face (boundary faces included).
    pub fn face_gradient(&self, grid: &Grid) -> VectorField {
        match self {
            PotentialSpec::Sampled { values } => grad_faces(&ScalarField {
                grid: *grid,
                values: values.clone(),
            }),
            _ => VectorField::from_fn(*grid, false, |x| {
                let mut g = [0.0; 3];
                for (a, v) in g.iter_mut().enumerate().take(grid.ndim) {
                    *v = self.partial(a, x);
                }
                g
            }),
        }
    }

    /// Largest discrete second difference of Phi over the grid.
    pub fn max_second_difference(&self, grid: &Grid) -> f64 {
        let vals = match self {
            PotentialSpec::Sampled { values } => values.clone(),
            PotentialSpec::Linear { coefficients } => {
                ScalarField::from_fn(*grid, |x| {
                    (0..grid.ndim).map(|a| coefficients[a] * x[a]).sum()
                })
                .values
            }
            PotentialSpec::Quadratic { coefficients } => {
                ScalarField::from_fn(*grid, |x| {
                    (0..grid.ndim)
                        .map(|a| 0.5 * coefficients[a] * x[a] * x[a])
                        .sum()
                })
                .values
            }
        };
        let f = ScalarField {
            grid: *grid,
            values: vals,
        };
        let g = grad_faces(&f);
        let mut m = 0.0f64;
        for a in 0..grid.ndim {
            let d = grid.face_dims(a);
            let s = [1, d[0], d[0] * d[1]][a];
            grid.for_each_interior_face(a, |face, _, _| {
                let idx_a = (face / s) % d[a];
                if idx_a >= 2 {
                    m = m.max(((g.comps[a][face] - g.comps[a][face - s]) / grid.h(a)).abs());
                }
            });
        }
        m
    }
}

/// Scratch state and tolerances carried between Stokes steps.
#[derive(Debug, Clone)]
pub struct StokesWork {
    pub pressure: ScalarField,
    /// Potential part of the forcing, kept for warm starts.
    force_potential: ScalarField,
    /// Accumulated pressure of the incremental projection.
    correction: ScalarField,
    /// Projection target: ||div u||_inf <= tol_div (1 + ||u||_inf).
    pub tol_div: f64,
    /// Relative tolerance of the pressure Poisson solve.
    pub poisson_tol: f64,
    pub max_iters: usize,
    pub last_poisson: SolveStats,
    pub last_helmholtz: SolveStats,
    grad_phi: Option<VectorField>,
}

impl StokesWork {
    pub fn new(grid: Grid, tol_div: f64, poisson_tol: f64, max_iters: usize) -> Self {
        StokesWork {
            pressure: ScalarField::zeros(grid),
            force_potential: ScalarField::zeros(grid),
            correction: ScalarField::zeros(grid),
            tol_div,
            poisson_tol,
            max_iters,
            last_poisson: SolveStats::default(),
            last_helmholtz: SolveStats::default(),
            grad_phi: None,
        }
    }
}

/// Result of a mean-corrected Poisson solve.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub x: ScalarField,
    /// Mean subtracted from the right-hand side to make it compatible.
    pub mean_correction: f64,
    pub stats: SolveStats,
}

/// Solves `Lap_h x = rhs` with homogeneous Neumann data, returning the
/// mean-zero solution. The residual satisfies ||r||_inf <= tol ||rhs||_inf.
pub fn poisson_neumann_solve(rhs: &ScalarField, tol: f64) -> Result<PoissonSolution> {
    let mut x = ScalarField::zeros(rhs.grid);
    poisson_neumann_solve_into(rhs, tol, 0.0, 20 * rhs.grid.num_cells().max(100), &mut x)
}

fn poisson_neumann_solve_into(
    rhs: &ScalarField,
    rel: f64,
    abs: f64,
    max_iters: usize,
    x: &mut ScalarField,
) -> Result<PoissonSolution> {
    let g = rhs.grid;
    let mean = rhs.values.iter().sum::<f64>() / rhs.values.len() as f64;
    // CG needs the positive semidefinite operator -Lap_h
    let b: Vec<f64> = rhs.values.iter().map(|v| mean - v).collect();
    let stats = conjugate_gradient(
        "pressure poisson",
        |v, o| {
            apply_neumann_laplacian(&g, v, o);
            o.iter_mut().for_each(|w| *w = -*w);
        },
        &b,
        &mut x.values,
        Tolerance {
            rel,
            abs,
            max_iters,
        },
        true,
    )?;
    Ok(PoissonSolution {
        x: x.clone(),
        mean_correction: mean,
        stats,
    })
}

/// Implicit viscous solve `(I - dt Lap) u* = u` per component.
pub fn viscous_solve(
    u: &VectorField,
    dt: f64,
    max_iters: usize,
    work_stats: &mut SolveStats,
) -> Result<VectorField> {
    let g = u.grid;
    let mut out = u.clone();
    let mut worst = SolveStats::default();
    for a in 0..g.ndim {
        let b = &u.comps[a];
        let stats = conjugate_gradient(
            "viscous helmholtz",
            |v, o| apply_velocity_helmholtz(&g, a, dt, v, o),
            b,
            &mut out.comps[a],
            Tolerance {
                rel: 1e-13,
                abs: 1e-300,
                max_iters,
            },
            false,
        )?;
        worst.iterations = worst.iterations.max(stats.iterations);
        worst.residual = worst.residual.max(stats.residual);
    }
    *work_stats = worst;
    Ok(out)
}

/// Projects `v` onto discretely divergence-free fields, storing the pressure
/// (with the sign convention `u' = v + dt grad P`) in `work.pressure`.
pub fn project(v: &VectorField, dt: f64, work: &mut StokesWork) -> Result<VectorField> {
    let mut p = work.pressure.clone();
    let out = project_with(v, dt, work, &mut p)?;
    work.pressure = p;
    Ok(out)
}

fn project_with(
    v: &VectorField,
    dt: f64,
    work: &mut StokesWork,
    p: &mut ScalarField,
) -> Result<VectorField> {
    let g = v.grid;
    let div = divergence(v);
    let rhs = div.map(|d| -d / dt);
    let rhs_max = rhs.max_abs();
    // Residual r of the Poisson solve leaves div(u') = -dt r behind.
    let abs = 0.25 * work.tol_div * (1.0 + v.max_abs()) / dt;
    let rel = work.poisson_tol.min(abs / rhs_max.max(f64::MIN_POSITIVE));
    let sol = poisson_neumann_solve_into(&rhs, rel, 0.0, work.max_iters, p)?;
    work.last_poisson = sol.stats;
    let gp = grad_faces(p);
    let mut out = v.clone();
    for a in 0..g.ndim {
        for (o, gpa) in out.comps[a].iter_mut().zip(&gp.comps[a]) {
            *o += dt * gpa;
        }
    }
    Ok(out)
}

/// Buoyancy forcing n grad(Phi) on interior faces, n averaged to faces.
pub fn buoyancy(n: &ScalarField, grad_phi: &VectorField) -> VectorField {
    let g = n.grid;
    let mut f = VectorField::zeros(g);
    for a in 0..g.ndim {
        let out = &mut f.comps[a];
        let gp = &grad_phi.comps[a];
        g.for_each_interior_face(a, |face, m, p| {
            out[face] = 0.5 * (n.values[m] + n.values[p]) * gp[face];
        });
    }
    f
}

/// One projection step with an arbitrary face forcing.
///
/// The gradient part of the forcing is removed before the viscous solve, so a
/// pure potential force leaves the velocity untouched. The remaining pressure
/// is advanced in incremental form (previous pressure gradient in the viscous
/// solve, projection supplies the increment). The pressure stored in
/// `work.pressure` is the sum of that potential and the accumulated pressure.
pub fn stokes_step_forced(
    u: &VectorField,
    force: &VectorField,
    dt: f64,
    work: &mut StokesWork,
) -> Result<VectorField> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let g = u.grid;
    let mut f = force.clone();
    for a in 0..g.ndim {
        let d = g.face_dims(a);
        let s = [1, d[0], d[0] * d[1]][a];
        for (i, o) in f.comps[a].iter_mut().enumerate() {
            let ia = (i / s) % d[a];
            if ia == 0 || ia == g.n[a] {
                *o = 0.0;
            }
        }
    }
    // Leray part of the forcing; dt = 1 makes project_with solve Lap q = -div f
    let mut q = work.force_potential.clone();
    let fp = project_with(&f, 1.0, work, &mut q)?;
    work.force_potential = q;
    let mut rhs = u.clone();
    let gq = grad_faces(&work.correction);
    for a in 0..g.ndim {
        for (f, (o, fa)) in rhs.comps[a].iter_mut().zip(&fp.comps[a]).enumerate() {
            *o += dt * (fa + gq.comps[a][f]);
        }
    }
    let mut helm = SolveStats::default();
    let v = viscous_solve(&rhs, dt, work.max_iters, &mut helm)?;
    work.last_helmholtz = helm;
    // Incremental form: the previous pressure enters the viscous solve and
    // the projection only supplies its increment.
    let mut p = ScalarField::zeros(g);
    let out = project_with(&v, dt, work, &mut p)?;
    for (c, pv) in work.correction.values.iter_mut().zip(&p.values) {
        *c += pv;
    }
    let mut total = work.correction.clone();
    for (t, q) in total.values.iter_mut().zip(&work.force_potential.values) {
        *t += q;
    }
    work.pressure = total;
    let div = divergence(&out).max_abs();
    let bound = work.tol_div * (1.0 + out.max_abs());
    if div > bound {
        return Err(Error::Solver {
            solver: "projection",
            iterations: work.last_poisson.iterations,
            residual: div,
        });
    }
    Ok(out)
}

/// Advances the velocity by one step of the forced Stokes system and returns
/// the new velocity and pressure.
pub fn stokes_step(
    u: &VectorField,
    n: &ScalarField,
    phi: &PotentialSpec,
    dt: f64,
    work: &mut StokesWork,
) -> Result<(VectorField, ScalarField)> {
    let g = u.grid;
    if work.grad_phi.as_ref().map_or(true, |gp| gp.grid != g) {
        phi.validate(&g)?;
        work.grad_phi = Some(phi.face_gradient(&g));
    }
    let force = buoyancy(n, work.grad_phi.as_ref().expect("set above"));
    let u_new = stokes_step_forced(u, &force, dt, work)?;
    Ok((u_new, work.pressure.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::laplacian_neumann;
    use std::f64::consts::PI;

    fn work(g: Grid) -> StokesWork {
        StokesWork::new(g, 1e-8, 1e-10, 20_000)
    }

    #[test]
    fn zero_dynamics() {
        let g = Grid::unit_square(16);
        let mut w = work(g);
        let (u, p) = stokes_step(
            &VectorField::zeros(g),
            &ScalarField::zeros(g),
            &PotentialSpec::default(),
            0.01,
            &mut w,
        )
        .unwrap();
        assert_eq!(u.max_abs(), 0.0);
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn gradient_forcing_is_projected_out() {
        let g = Grid::unit_square(32);
        let mut w = work(g);
        let phi = PotentialSpec::Linear {
            coefficients: vec![0.3, -1.0],
        };
        let n = ScalarField::constant(g, 2.5);
        let mut u = VectorField::zeros(g);
        for _ in 0..5 {
            u = stokes_step(&u, &n, &phi, 0.01, &mut w).unwrap().0;
        }
        assert!(u.max_abs() <= 1e-8, "{}", u.max_abs());
    }

    // Stream function sin^2(pi x) sin^2(pi y) e^-t with matching forcing.
    fn manufactured_error(m: usize, t_end: f64) -> f64 {
        let s = |x: f64| (PI * x).sin().powi(2);
        let s1 = |x: f64| PI * (2.0 * PI * x).sin();
        let s2 = |x: f64| 2.0 * PI * PI * (2.0 * PI * x).cos();
        let s3 = |x: f64| -4.0 * PI.powi(3) * (2.0 * PI * x).sin();
        let exact = |x: [f64; 3], t: f64| {
            let e = (-t).exp();
            [s(x[0]) * s1(x[1]) * e, -s1(x[0]) * s(x[1]) * e, 0.0]
        };
        let forcing = |x: [f64; 3], t: f64| {
            let e = (-t).exp();
            let u = exact(x, t);
            let lap = [
                (s2(x[0]) * s1(x[1]) + s(x[0]) * s3(x[1])) * e,
                -(s3(x[0]) * s(x[1]) + s1(x[0]) * s2(x[1])) * e,
            ];
            [-u[0] - lap[0], -u[1] - lap[1], 0.0]
        };
        let g = Grid::unit_square(m);
        let dt = 0.25 / m as f64;
        let steps = (t_end / dt).round() as usize;
        let mut w = work(g);
        let mut u = VectorField::from_fn(g, true, |x| exact(x, 0.0));
        for k in 1..=steps {
            let t = k as f64 * dt;
            let f = VectorField::from_fn(g, true, |x| forcing(x, t));
            u = stokes_step_forced(&u, &f, dt, &mut w).unwrap();
        }
        let e = VectorField::from_fn(g, true, |x| exact(x, steps as f64 * dt));
        let mut sq = 0.0;
        for a in 0..2 {
            for (x, y) in u.comps[a].iter().zip(&e.comps[a]) {
                sq += (x - y).powi(2);
            }
        }
        (sq * g.cell_volume()).sqrt()
    }

    #[test]
    fn manufactured_solution_converges() {
        let errs: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&m| manufactured_error(m, 0.25))
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 0.9, "errors {errs:?}");
        }
        assert!(errs[2] < 1e-2, "{errs:?}");
    }

    #[test]
    fn poisson_examples() {
        let g = Grid::new_2d(64, 8, 2.0, 1.0).unwrap();
        let zero = poisson_neumann_solve(&ScalarField::zeros(g), 1e-10).unwrap();
        assert_eq!(zero.x.max_abs(), 0.0);

        let k = PI / 2.0;
        let rhs = ScalarField::from_fn(g, |x| -k * k * (k * x[0]).cos());
        let sol = poisson_neumann_solve(&rhs, 1e-12).unwrap();
        let exact = ScalarField::from_fn(g, |x| (k * x[0]).cos());
        let shift = exact.mean() - sol.x.mean();
        let err = sol
            .x
            .values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a + shift - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 2e-3, "{err}");
    }

    #[test]
    fn poisson_round_trip() {
        let g = Grid::unit_square(24);
        let mut rhs = ScalarField::from_fn(g, |x| (7.0 * x[0] * x[1]).sin() + x[0]);
        let m = rhs.mean();
        rhs.values.iter_mut().for_each(|v| *v -= m);
        let sol = poisson_neumann_solve(&rhs, 1e-11).unwrap();
        assert!(sol.mean_correction.abs() < 1e-14);
        let back = laplacian_neumann(&sol.x);
        let err = back
            .values
            .iter()
            .zip(&rhs.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2e-11 * rhs.max_abs(), "{err}");
    }

    #[test]
    fn energy_nonincreasing_without_forcing() {
        let g = Grid::unit_square(24);
        let mut w = work(g);
        let mut u =
            VectorField::from_fn(g, true, |x| [(PI * x[1]).sin(), x[0] * (1.0 - x[0]), 0.0]);
        let zero = VectorField::zeros(g);
        let mut e = u.dot(&u);
        for _ in 0..10 {
            u = stokes_step_forced(&u, &zero, 0.005, &mut w).unwrap();
            let e_new = u.dot(&u);
            assert!(e_new <= e * (1.0 + 1e-12));
            e = e_new;
        }
    }

    #[test]
    fn projection_leaves_no_divergence() {
        let g = Grid::unit_square(32);
        let mut w = work(g);
        let v = VectorField::from_fn(g, true, |x| [x[0] * x[1], (3.0 * x[0]).sin(), 0.0]);
        let out = project(&v, 0.01, &mut w).unwrap();
        assert!(divergence(&out).max_abs() <= 1e-8 * (1.0 + out.max_abs()));
        assert_eq!(out.boundary_normal_max(), 0.0);
    }

    #[test]
    fn projection_3d() {
        let g = Grid::new_3d([8, 8, 8], [1.0, 1.0, 1.0]).unwrap();
        let mut w = work(g);
        let v = VectorField::from_fn(g, true, |x| [x[1] * x[2], x[0].sin(), x[0] * x[1]]);
        let out = project(&v, 0.05, &mut w).unwrap();
        assert!(divergence(&out).max_abs() <= 1e-8 * (1.0 + out.max_abs()));
    }

    #[test]
    fn potential_validation() {
        let g = Grid::unit_square(4);
        assert!(PotentialSpec::Linear {
            coefficients: vec![1.0]
        }
        .validate(&g)
        .is_err());
        assert!(PotentialSpec::Sampled {
            values: vec![0.0; 3]
        }
        .validate(&g)
        .is_err());
        let q = PotentialSpec::Quadratic {
            coefficients: vec![2.0, 0.0],
        };
        assert!((q.max_second_difference(&g) - 2.0).abs() < 1e-12);
        assert!(PotentialSpec::default().max_second_difference(&g) < 1e-12);
    }
}
