//! Matrix-free conjugate gradients and the stencil kernels it is used with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final residual in the max norm.
    pub residual: f64,
}

/// Stopping rule: ||r||_inf <= max(rel * ||b||_inf, abs).
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_iters: usize,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `A x = b` for a symmetric positive (semi)definite operator given by
/// `apply`. When `singular_constant` is set the operator is assumed to have
/// the constant vector as its kernel and all iterates are kept mean-free.
pub fn conjugate_gradient(
    name: &'static str,
    apply: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: Tolerance,
    singular_constant: bool,
) -> Result<SolveStats> {
    let n = b.len();
    let target = (tol.rel * max_abs(b)).max(tol.abs);
    if singular_constant {
        remove_mean(x);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if singular_constant {
        remove_mean(&mut r);
    }
    let mut res = max_abs(&r);
    if res <= target {
        return Ok(SolveStats {
            iterations: 0,
            residual: res,
        });
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=tol.max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                solver: name,
                iterations: it,
                residual: res,
            });
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if singular_constant {
            remove_mean(&mut r);
        }
        res = max_abs(&r);
        if res <= target {
            if singular_constant {
                remove_mean(x);
            }
            // guard against drift of the recursive residual
            let mut check = vec![0.0; n];
            apply(x, &mut check);
            let mut true_res = 0.0f64;
            let mean_b = if singular_constant {
                b.iter().sum::<f64>() / n as f64
            } else {
                0.0
            };
            for i in 0..n {
                true_res = true_res.max((b[i] - mean_b - check[i]).abs());
            }
            if true_res <= 2.0 * target {
                return Ok(SolveStats {
                    iterations: it,
                    residual: true_res,
                });
            }
            for i in 0..n {
                r[i] = b[i] - mean_b - check[i];
            }
            if singular_constant {
                remove_mean(&mut r);
            }
            p.copy_from_slice(&r);
            rr = dot(&r, &r);
            continue;
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        solver: name,
        iterations: tol.max_iters,
        residual: res,
    })
}

/// Neumann Laplacian stencil on cell centres, written directly for speed.
pub fn apply_neumann_laplacian(g: &Grid, x: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for a in 0..g.ndim {
        let inv_h2 = 1.0 / (g.h(a) * g.h(a));
        let s = g.stride(a);
        let na = g.n[a];
        let outer = g.num_cells() / (na * s);
        for o in 0..outer {
            for inner in 0..s {
                let base = o * na * s + inner;
                for l in 0..na - 1 {
                    let m = base + l * s;
                    let flux = (x[m + s] - x[m]) * inv_h2;
                    out[m] += flux;
                    out[m + s] -= flux;
                }
            }
        }
    }
}

/// Applies (I - dt * Laplacian) to one staggered velocity component with
/// no-slip walls: the normal-boundary faces are held at zero and tangential
/// walls use the mirrored ghost value -u.
///
/// Unknowns are all faces of the component; boundary faces map to identity.
pub fn apply_velocity_helmholtz(g: &Grid, axis: usize, dt: f64, x: &[f64], out: &mut [f64]) {
    let d = g.face_dims(axis);
    let strides = [1, d[0], d[0] * d[1]];
    out.copy_from_slice(x);
    let mut f = 0;
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let idx = [i, j, k];
                if idx[axis] == 0 || idx[axis] == g.n[axis] {
                    f += 1;
                    continue;
                }
                let mut lap = 0.0;
                for b in 0..g.ndim {
                    let inv_h2 = 1.0 / (g.h(b) * g.h(b));
                    let s = strides[b];
                    let xc = x[f];
                    if b == axis {
                        // boundary faces hold zero and are decoupled
                        let lo = if idx[b] == 1 { 0.0 } else { x[f - s] };
                        let hi = if idx[b] + 1 == g.n[b] { 0.0 } else { x[f + s] };
                        lap += (hi - 2.0 * xc + lo) * inv_h2;
                    } else {
                        let lo = if idx[b] == 0 { -xc } else { x[f - s] };
                        let hi = if idx[b] + 1 == d[b] { -xc } else { x[f + s] };
                        lap += (hi - 2.0 * xc + lo) * inv_h2;
                    }
                }
                out[f] = x[f] - dt * lap;
                f += 1;
            }
        }
    }
}

/// Vector Laplacian of one velocity component with the same wall treatment
/// as [`apply_velocity_helmholtz`]; boundary faces return 0.
pub fn velocity_laplacian(g: &Grid, axis: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    apply_velocity_helmholtz(g, axis, 1.0, x, &mut out);
    let d = g.face_dims(axis);
    let mut f = 0;
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let ia = [i, j, k][axis];
                out[f] = if ia == 0 || ia == g.n[axis] {
                    0.0
                } else {
                    x[f] - out[f]
                };
                f += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{laplacian_neumann, ScalarField};

    #[test]
    fn direct_stencil_matches_flux_form() {
        let g = Grid::new_2d(9, 7, 1.0, 0.6).unwrap();
        let f = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin() + x[1] * x[1]);
        let mut out = vec![0.0; g.num_cells()];
        apply_neumann_laplacian(&g, &f.values, &mut out);
        let reference = laplacian_neumann(&f);
        for (a, b) in out.iter().zip(&reference.values) {
            assert!((a - b).abs() < 1e-10);
        }
        let g3 = Grid::new_3d([4, 5, 3], [1.0, 1.0, 1.0]).unwrap();
        let f3 = ScalarField::from_fn(g3, |x| x[0] * x[2] + (x[1]).cos());
        let mut out3 = vec![0.0; g3.num_cells()];
        apply_neumann_laplacian(&g3, &f3.values, &mut out3);
        for (a, b) in out3.iter().zip(&laplacian_neumann(&f3).values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_solves_spd_system() {
        let g = Grid::unit_square(16);
        let n = g.num_faces(0);
        let b: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let mut x = vec![0.0; n];
        let tol = Tolerance {
            rel: 1e-12,
            abs: 0.0,
            max_iters: 500,
        };
        let stats = conjugate_gradient(
            "helmholtz",
            |v, o| apply_velocity_helmholtz(&g, 0, 0.01, v, o),
            &b,
            &mut x,
            tol,
            false,
        )
        .unwrap();
        let mut ax = vec![0.0; n];
        apply_velocity_helmholtz(&g, 0, 0.01, &x, &mut ax);
        let err = ax
            .iter()
            .zip(&b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 2e-12 * 6.0, "{err} after {}", stats.iterations);
    }

    #[test]
    fn cg_reports_non_convergence() {
        let g = Grid::unit_square(32);
        let b: Vec<f64> = (0..g.num_cells())
            .map(|i| (i as f64 * 0.37).sin())
            .collect();
        let mut x = vec![0.0; g.num_cells()];
        let tol = Tolerance {
            rel: 1e-14,
            abs: 0.0,
            max_iters: 3,
        };
        let r = conjugate_gradient(
            "poisson",
            |v, o| {
                apply_neumann_laplacian(&g, v, o);
                o.iter_mut().for_each(|w| *w = -*w);
            },
            &b,
            &mut x,
            tol,
            true,
        );
        assert!(matches!(
            r,
            Err(Error::Solver {
                solver: "poisson",
                iterations: 3,
                ..
            })
        ));
    }

    #[test]
    fn velocity_helmholtz_symmetric() {
        let g = Grid::new_2d(6, 5, 1.0, 1.0).unwrap();
        for axis in 0..2 {
            let n = g.num_faces(axis);
            let e = |i: usize| {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v
            };
            let mut col_i = vec![0.0; n];
            let mut col_j = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    apply_velocity_helmholtz(&g, axis, 0.3, &e(i), &mut col_i);
                    apply_velocity_helmholtz(&g, axis, 0.3, &e(j), &mut col_j);
                    assert!((col_i[j] - col_j[i]).abs() < 1e-12);
                }
            }
        }
    }
}
