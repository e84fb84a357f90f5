//! Structured rectangular grid, flux-form difference operators and midpoint
//! quadrature.
//!
//! Scalars live at cell centres. Vector fields are staggered (MAC): the
//! component along axis `a` lives on the faces normal to `a`, so boundary
//! faces carry exactly the normal velocity. All flux-form operators only
//! assemble interior-face fluxes, which makes the sum of their outputs over
//! cells vanish up to round-off.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CellIndex, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    /// Cell counts per axis; `n[2] == 1` for planar grids.
    pub n: [usize; 3],
    /// Domain lengths per axis.
    pub len: [f64; 3],
    /// Number of active axes (2 or 3).
    pub ndim: usize,
}

impl Grid {
    pub fn new_2d(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        Self::new([nx, ny, 1], [lx, ly, 1.0], 2)
    }

    pub fn new_3d(n: [usize; 3], len: [f64; 3]) -> Result<Self> {
        Self::new(n, len, 3)
    }

    fn new(n: [usize; 3], len: [f64; 3], ndim: usize) -> Result<Self> {
        for a in 0..ndim {
            if n[a] == 0 {
                return Err(Error::domain("grid cell counts must be positive"));
            }
            if !(len[a] > 0.0 && len[a].is_finite()) {
                return Err(Error::domain("grid lengths must be positive"));
            }
        }
        Ok(Grid { n, len, ndim })
    }

    /// Unit square with `m` x `m` cells.
    pub fn unit_square(m: usize) -> Self {
        Grid {
            n: [m, m, 1],
            len: [1.0, 1.0, 1.0],
            ndim: 2,
        }
    }

    #[inline]
    pub fn h(&self, axis: usize) -> f64 {
        self.len[axis] / self.n[axis] as f64
    }

    pub fn h_min(&self) -> f64 {
        (0..self.ndim)
            .map(|a| self.h(a))
            .fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        (0..self.ndim).map(|a| self.h(a)).product()
    }

    pub fn volume(&self) -> f64 {
        (0..self.ndim).map(|a| self.len[a]).product()
    }

    #[inline]
    pub fn num_cells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn cell_of(&self, idx: usize) -> CellIndex {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        let k = idx / (self.n[0] * self.n[1]);
        CellIndex { i, j, k }
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.n[0],
            _ => self.n[0] * self.n[1],
        }
    }

    /// Cell-centre coordinate along `axis`.
    #[inline]
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h(axis)
    }

    /// Cell-centre position of cell (i, j, k); inactive axes report 0.
    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let z = if self.ndim == 3 {
            self.center(2, k)
        } else {
            0.0
        };
        [self.center(0, i), self.center(1, j), z]
    }

    /// Dimensions of the face array for the component normal to `axis`.
    #[inline]
    pub fn face_dims(&self, axis: usize) -> [usize; 3] {
        let mut d = self.n;
        d[axis] += 1;
        d
    }

    pub fn num_faces(&self, axis: usize) -> usize {
        let d = self.face_dims(axis);
        d[0] * d[1] * d[2]
    }

    /// Position of face (i, j, k) of the `axis` face array.
    pub fn face_center(&self, axis: usize, i: usize, j: usize, k: usize) -> [f64; 3] {
        let mut x = self.cell_center(i, j, k);
        let idx = [i, j, k];
        x[axis] = idx[axis] as f64 * self.h(axis);
        x
    }

    /// Calls `f(cell_index, [i, j, k])` for every cell in storage order.
    pub fn for_each_cell(&self, mut f: impl FnMut(usize, [usize; 3])) {
        let mut c = 0;
        for k in 0..self.n[2] {
            for j in 0..self.n[1] {
                for i in 0..self.n[0] {
                    f(c, [i, j, k]);
                    c += 1;
                }
            }
        }
    }

    /// Calls `f(face_index, minus_cell, plus_cell)` for each interior face
    /// normal to `axis`.
    pub fn for_each_interior_face(&self, axis: usize, mut f: impl FnMut(usize, usize, usize)) {
        let d = self.face_dims(axis);
        let s = self.stride(axis);
        for k in 0..self.n[2] {
            for j in 0..self.n[1] {
                for i in 0..self.n[0] {
                    let idx = [i, j, k];
                    if idx[axis] + 1 >= self.n[axis] {
                        continue;
                    }
                    let c = self.idx(i, j, k);
                    let mut fi = idx;
                    fi[axis] += 1;
                    let face = fi[0] + d[0] * (fi[1] + d[1] * fi[2]);
                    f(face, c, c + s);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, v: f64) -> Self {
        ScalarField {
            grid,
            values: vec![v; grid.num_cells()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.num_cells());
        grid.for_each_cell(|_, [i, j, k]| values.push(f(grid.cell_center(i, j, k))));
        ScalarField { grid, values }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Minimum value and the cell attaining it.
    pub fn min_with_index(&self) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (i, &v) in self.values.iter().enumerate() {
            if v < best.0 || v.is_nan() {
                best = (v, i);
            }
        }
        best
    }

    pub fn min(&self) -> f64 {
        self.min_with_index().0
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Plain sum of values times cell volume.
    pub fn sum(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Discrete L2 inner product weighted by cell volume.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            * self.grid.cell_volume()
    }
}

/// Staggered vector field: `comps[a]` holds the component along axis `a` on
/// the faces normal to `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub comps: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            comps: (0..grid.ndim)
                .map(|a| vec![0.0; grid.num_faces(a)])
                .collect(),
        }
    }

    /// Samples `f` at face centres, component by component. Boundary faces
    /// are set to zero when `zero_normal` is true.
    pub fn from_fn(grid: Grid, zero_normal: bool, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let mut v = Self::zeros(grid);
        for a in 0..grid.ndim {
            let d = grid.face_dims(a);
            let mut fidx = 0;
            for k in 0..d[2] {
                for j in 0..d[1] {
                    for i in 0..d[0] {
                        let idx = [i, j, k];
                        let on_boundary = idx[a] == 0 || idx[a] == grid.n[a];
                        v.comps[a][fidx] = if zero_normal && on_boundary {
                            0.0
                        } else {
                            f(grid.face_center(a, i, j, k))[a]
                        };
                        fidx += 1;
                    }
                }
            }
        }
        v
    }

    pub fn max_abs(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest |normal component| on boundary faces.
    pub fn boundary_normal_max(&self) -> f64 {
        let g = self.grid;
        let mut m = 0.0f64;
        for a in 0..g.ndim {
            let d = g.face_dims(a);
            let mut fidx = 0;
            for k in 0..d[2] {
                for j in 0..d[1] {
                    for i in 0..d[0] {
                        let ia = [i, j, k][a];
                        if ia == 0 || ia == g.n[a] {
                            m = m.max(self.comps[a][fidx].abs());
                        }
                        fidx += 1;
                    }
                }
            }
        }
        m
    }

    /// L^r norm using the face-centred quadrature of each component
    /// interpolated to cell centres.
    pub fn lr_norm(&self, r: f64) -> f64 {
        let speed = cell_speed(self);
        let s: f64 = speed.values.iter().map(|v| v.powf(r)).sum::<f64>();
        (s * self.grid.cell_volume()).powf(1.0 / r)
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        let vol = self.grid.cell_volume();
        self.comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
            .sum::<f64>()
            * vol
    }
}

/// Cell-centred speed |u| from averaged face components.
pub fn cell_speed(u: &VectorField) -> ScalarField {
    let g = u.grid;
    let mut out = ScalarField::zeros(g);
    for a in 0..g.ndim {
        let d = g.face_dims(a);
        g.for_each_cell(|c, idx| {
            let mut hi = idx;
            hi[a] += 1;
            let f = |x: [usize; 3]| x[0] + d[0] * (x[1] + d[1] * x[2]);
            let v = 0.5 * (u.comps[a][f(idx)] + u.comps[a][f(hi)]);
            out.values[c] += v * v;
        });
    }
    for v in &mut out.values {
        *v = v.sqrt();
    }
    out
}

/// How boundary faces of the advective flux are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceBoundary {
    /// Zero flux through the physical boundary.
    Closed,
    /// Opposite boundary faces identified; used only by transport tests.
    Periodic,
}

/// Divergence of the face fluxes, per cell.
pub fn divergence(v: &VectorField) -> ScalarField {
    let g = v.grid;
    let mut out = ScalarField::zeros(g);
    for a in 0..g.ndim {
        let d = g.face_dims(a);
        let inv_h = 1.0 / g.h(a);
        let comp = &v.comps[a];
        g.for_each_cell(|c, idx| {
            let lo = idx[0] + d[0] * (idx[1] + d[1] * idx[2]);
            let mut hi_idx = idx;
            hi_idx[a] += 1;
            let hi = hi_idx[0] + d[0] * (hi_idx[1] + d[1] * hi_idx[2]);
            out.values[c] += (comp[hi] - comp[lo]) * inv_h;
        });
    }
    out
}

/// Face-normal differences (f_plus - f_minus)/h on interior faces; boundary
/// faces carry the homogeneous Neumann value 0.
pub fn grad_faces(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let mut out = VectorField::zeros(g);
    for a in 0..g.ndim {
        let inv_h = 1.0 / g.h(a);
        let comp = &mut out.comps[a];
        g.for_each_interior_face(a, |face, m, p| {
            comp[face] = (f.values[p] - f.values[m]) * inv_h;
        });
    }
    out
}

/// Arithmetic mean of the two adjacent cell values on interior faces.
pub fn average_to_faces(f: &ScalarField) -> VectorField {
    let g = f.grid;
    let mut out = VectorField::zeros(g);
    for a in 0..g.ndim {
        let comp = &mut out.comps[a];
        g.for_each_interior_face(a, |face, m, p| {
            comp[face] = 0.5 * (f.values[m] + f.values[p]);
        });
    }
    out
}

/// Five-point (seven-point in 3D) Laplacian with homogeneous Neumann data,
/// assembled from interior face fluxes.
pub fn laplacian_neumann(f: &ScalarField) -> ScalarField {
    divergence(&grad_faces(f))
}

/// Upwind flux-form divergence of (u f). The caller's u must have zero normal
/// component on the boundary for `Closed`.
pub fn advect_conservative(f: &ScalarField, u: &VectorField) -> ScalarField {
    advect_with(f, u, FaceBoundary::Closed)
}

pub fn advect_with(f: &ScalarField, u: &VectorField, bc: FaceBoundary) -> ScalarField {
    divergence(&advective_fluxes(f, u, bc))
}

/// Upwinded face fluxes u_face * f_upwind.
pub fn advective_fluxes(f: &ScalarField, u: &VectorField, bc: FaceBoundary) -> VectorField {
    let g = f.grid;
    let mut flux = VectorField::zeros(g);
    for a in 0..g.ndim {
        let comp = &u.comps[a];
        let out = &mut flux.comps[a];
        g.for_each_interior_face(a, |face, m, p| {
            let w = comp[face];
            out[face] = if w >= 0.0 {
                w * f.values[m]
            } else {
                w * f.values[p]
            };
        });
        if bc == FaceBoundary::Periodic {
            let d = g.face_dims(a);
            let s = g.stride(a);
            let last = g.n[a] - 1;
            g.for_each_cell(|c, idx| {
                if idx[a] != 0 {
                    return;
                }
                let lo_face = idx[0] + d[0] * (idx[1] + d[1] * idx[2]);
                let mut hi = idx;
                hi[a] = g.n[a];
                let hi_face = hi[0] + d[0] * (hi[1] + d[1] * hi[2]);
                let w = comp[lo_face];
                let upstream = c + last * s;
                let v = if w >= 0.0 {
                    w * f.values[upstream]
                } else {
                    w * f.values[c]
                };
                out[lo_face] = v;
                out[hi_face] = v;
            });
        }
    }
    flux
}

/// Chemotactic face fluxes chi * g(n_up) * (grad c)_face / c_face with
/// g(n) = n / (1 + eps n), c_face the arithmetic mean, and n upwinded along
/// the drift direction (the sign of grad c). Boundary fluxes are zero.
pub fn chemotactic_fluxes(
    n: &ScalarField,
    c: &ScalarField,
    chi: f64,
    eps: f64,
) -> Result<VectorField> {
    let (cmin, at) = c.min_with_index();
    if !(cmin > 0.0) {
        return Err(Error::Positivity {
            field: "c",
            cell: c.grid.cell_of(at),
            value: cmin,
        });
    }
    let g = n.grid;
    let mut flux = VectorField::zeros(g);
    for a in 0..g.ndim {
        let inv_h = 1.0 / g.h(a);
        let out = &mut flux.comps[a];
        g.for_each_interior_face(a, |face, m, p| {
            let (cm, cp) = (c.values[m], c.values[p]);
            let grad = (cp - cm) * inv_h;
            let c_face = 0.5 * (cm + cp);
            let n_up = if grad >= 0.0 {
                n.values[m]
            } else {
                n.values[p]
            };
            out[face] = chi * n_up / (1.0 + eps * n_up) * grad / c_face;
        });
    }
    Ok(flux)
}

/// Divergence of the chemotactic flux, i.e. the term subtracted in the
/// n-equation.
pub fn chemotactic_flux_div(
    n: &ScalarField,
    c: &ScalarField,
    chi: f64,
    eps: f64,
) -> Result<ScalarField> {
    Ok(divergence(&chemotactic_fluxes(n, c, chi, eps)?))
}

/// Midpoint quadrature of f^power.
pub fn integrate(f: &ScalarField, power: f64) -> Result<f64> {
    let integer_power = power >= 0.0 && power.fract() == 0.0;
    let mut sum = 0.0;
    for (i, &v) in f.values.iter().enumerate() {
        if !integer_power {
            if v < 0.0 || (power < 0.0 && v == 0.0) {
                return Err(Error::domain(format!(
                    "cannot raise {v} to power {power} (cell {})",
                    f.grid.cell_of(i)
                )));
            }
        }
        sum += if power == 1.0 { v } else { v.powf(power) };
    }
    Ok(sum * f.grid.cell_volume())
}

/// |grad f|^2 at cell centres: per axis, the mean of the squared differences
/// on the two adjacent faces (zero on boundary faces).
pub fn grad_norm_sq(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let grads = grad_faces(f);
    let mut out = ScalarField::zeros(g);
    for a in 0..g.ndim {
        let d = g.face_dims(a);
        let comp = &grads.comps[a];
        g.for_each_cell(|c, idx| {
            let lo = idx[0] + d[0] * (idx[1] + d[1] * idx[2]);
            let mut hi_idx = idx;
            hi_idx[a] += 1;
            let hi = hi_idx[0] + d[0] * (hi_idx[1] + d[1] * hi_idx[2]);
            out.values[c] += 0.5 * (comp[lo] * comp[lo] + comp[hi] * comp[hi]);
        });
    }
    out
}

/// Sidecar metadata written next to a raw snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub nx: usize,
    pub ny: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nz: Option<usize>,
    pub hx: f64,
    pub hy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hz: Option<f64>,
    pub time: f64,
    pub field_name: String,
}

/// Writes `values` as raw little-endian f64 (x fastest) to `<stem>.bin` and
/// the metadata as JSON to `<stem>.json`.
pub fn write_snapshot(
    stem: &Path,
    dims: [usize; 3],
    grid: &Grid,
    time: f64,
    name: &str,
    values: &[f64],
) -> Result<()> {
    let meta = SnapshotMeta {
        nx: dims[0],
        ny: dims[1],
        nz: (grid.ndim == 3).then_some(dims[2]),
        hx: grid.h(0),
        hy: grid.h(1),
        hz: (grid.ndim == 3).then(|| grid.h(2)),
        time,
        field_name: name.to_owned(),
    };
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(stem.with_extension("bin"))?.write_all(&bytes)?;
    std::fs::write(
        stem.with_extension("json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

pub fn write_scalar_snapshot(stem: &Path, f: &ScalarField, time: f64, name: &str) -> Result<()> {
    write_snapshot(stem, f.grid.n, &f.grid, time, name, &f.values)
}

pub fn read_snapshot(stem: &Path) -> Result<(SnapshotMeta, Vec<f64>)> {
    let meta: SnapshotMeta =
        serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
    let mut bytes = Vec::new();
    std::fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
    let expected = meta.nx * meta.ny * meta.nz.unwrap_or(1);
    if bytes.len() != expected * 8 {
        return Err(Error::domain(format!(
            "snapshot {} holds {} bytes, expected {}",
            stem.display(),
            bytes.len(),
            expected * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
        .collect();
    Ok((meta, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pseudo_random(grid: Grid, seed: u64, lo: f64, hi: f64) -> ScalarField {
        let mut s = seed
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        let mut f = ScalarField::zeros(grid);
        for v in &mut f.values {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let u = (s >> 11) as f64 / (1u64 << 53) as f64;
            *v = lo + (hi - lo) * u;
        }
        f
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let g = Grid::new_2d(7, 5, 1.3, 0.7).unwrap();
        let l = laplacian_neumann(&ScalarField::constant(g, 3.5));
        assert!(l.max_abs() == 0.0);
    }

    #[test]
    fn laplacian_cosine_second_order() {
        let err = |m: usize| {
            let g = Grid::new_2d(m, 4, 2.0, 1.0).unwrap();
            let k = PI / 2.0;
            let f = ScalarField::from_fn(g, |x| (k * x[0]).cos());
            let l = laplacian_neumann(&f);
            let exact = ScalarField::from_fn(g, |x| -k * k * (k * x[0]).cos());
            l.values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(32) / err(64);
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn laplacian_sums_to_zero() {
        let g = Grid::new_2d(13, 9, 1.0, 2.0).unwrap();
        let f = pseudo_random(g, 7, -1.0, 2.0);
        let l = laplacian_neumann(&f);
        let norm = f.max_abs();
        assert!(l.sum().abs() <= 1e-12 * norm);
    }

    #[test]
    fn laplacian_symmetric_negative_semidefinite() {
        let g = Grid::new_2d(11, 8, 1.0, 1.0).unwrap();
        let f = pseudo_random(g, 1, -1.0, 1.0);
        let h = pseudo_random(g, 2, -1.0, 1.0);
        let a = f.dot(&laplacian_neumann(&h));
        let b = h.dot(&laplacian_neumann(&f));
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        assert!(f.dot(&laplacian_neumann(&f)) <= 0.0);
    }

    #[test]
    fn laplacian_3d_constant_and_conservation() {
        let g = Grid::new_3d([5, 4, 6], [1.0, 1.0, 1.5]).unwrap();
        assert_eq!(
            laplacian_neumann(&ScalarField::constant(g, 2.0)).max_abs(),
            0.0
        );
        let f = pseudo_random(g, 3, 0.0, 1.0);
        assert!(laplacian_neumann(&f).sum().abs() < 1e-12);
    }

    #[test]
    fn advection_zero_velocity() {
        let g = Grid::unit_square(8);
        let f = pseudo_random(g, 4, 0.0, 1.0);
        assert_eq!(
            advect_conservative(&f, &VectorField::zeros(g)).max_abs(),
            0.0
        );
    }

    #[test]
    fn advection_conserves() {
        let g = Grid::unit_square(16);
        let f = pseudo_random(g, 5, 0.0, 3.0);
        let u = VectorField::from_fn(g, true, |x| [(PI * x[1]).sin() + 0.3, x[0] - 0.2, 0.0]);
        let d = advect_conservative(&f, &u);
        assert!(d.sum().abs() <= 1e-13 * u.max_abs() * f.max_abs());
    }

    #[test]
    fn periodic_bump_moves_at_transport_speed() {
        let m = 200;
        let g = Grid::new_2d(m, 4, 1.0, 1.0).unwrap();
        let speed = 0.7;
        let u = VectorField::from_fn(g, false, |_| [speed, 0.0, 0.0]);
        let mut f = ScalarField::from_fn(g, |x| (-((x[0] - 0.3) / 0.05).powi(2)).exp());
        let dt = 0.4 * g.h(0) / speed;
        let steps = 250;
        let com = |f: &ScalarField| {
            let mut s = 0.0;
            let mut w = 0.0;
            g.for_each_cell(|c, [i, _, _]| {
                s += f.values[c] * g.center(0, i);
                w += f.values[c];
            });
            s / w
        };
        let x0 = com(&f);
        for _ in 0..steps {
            let d = advect_with(&f, &u, FaceBoundary::Periodic);
            for (v, dv) in f.values.iter_mut().zip(&d.values) {
                *v -= dt * dv;
            }
        }
        let moved = com(&f) - x0;
        let expected = speed * dt * steps as f64;
        assert!(
            (moved - expected).abs() < 2.0 * g.h(0),
            "moved {moved}, expected {expected}"
        );
    }

    #[test]
    fn upwind_advection_first_order() {
        // one explicit step of a smooth profile against the exact derivative
        let err = |m: usize| {
            let g = Grid::new_2d(m, 2, 1.0, 1.0).unwrap();
            let u = VectorField::from_fn(g, false, |_| [1.0, 0.0, 0.0]);
            let f = ScalarField::from_fn(g, |x| (2.0 * PI * x[0]).sin());
            let d = advect_with(&f, &u, FaceBoundary::Periodic);
            let exact = ScalarField::from_fn(g, |x| 2.0 * PI * (2.0 * PI * x[0]).cos());
            d.values
                .iter()
                .zip(&exact.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        let order = (err(64) / err(128)).log2();
        assert!(order > 0.8, "order {order}");
    }

    #[test]
    fn chemotaxis_uniform_c_is_zero_and_conservative() {
        let g = Grid::unit_square(10);
        let n = pseudo_random(g, 9, 0.0, 5.0);
        let c = ScalarField::constant(g, 2.0);
        assert_eq!(
            chemotactic_flux_div(&n, &c, 2.0, 0.1).unwrap().max_abs(),
            0.0
        );
        let c = pseudo_random(g, 10, 0.5, 2.0);
        let d = chemotactic_flux_div(&n, &c, 2.0, 0.1).unwrap();
        let scale = d.max_abs() * g.volume();
        assert!(d.sum().abs() <= 1e-13 * scale.max(1.0));
    }

    #[test]
    fn chemotaxis_saturation_bound() {
        let g = Grid::unit_square(12);
        let n = pseudo_random(g, 11, 100.0, 1e4);
        let c = pseudo_random(g, 12, 0.2, 3.0);
        let eps = 0.999;
        let chi = 1.7;
        let flux = chemotactic_fluxes(&n, &c, chi, eps).unwrap();
        let grad = grad_faces(&c);
        let cf = average_to_faces(&c);
        for a in 0..2 {
            g.for_each_interior_face(a, |f, _, _| {
                let bound = chi / eps * grad.comps[a][f].abs() / cf.comps[a][f];
                assert!(flux.comps[a][f].abs() <= bound);
            });
        }
    }

    #[test]
    fn chemotaxis_rejects_nonpositive_c() {
        let g = Grid::unit_square(4);
        let n = ScalarField::constant(g, 1.0);
        let mut c = ScalarField::constant(g, 1.0);
        c.values[5] = 0.0;
        assert!(matches!(
            chemotactic_flux_div(&n, &c, 1.0, 0.1),
            Err(Error::Positivity { field: "c", .. })
        ));
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::unit_square(6);
        assert!((integrate(&ScalarField::constant(g, 3.0), 1.0).unwrap() - 3.0).abs() < 1e-14);
        let g2 = Grid::new_2d(5, 5, 2.0, 1.5).unwrap();
        let v = integrate(&ScalarField::constant(g2, 4.0), 0.5).unwrap();
        assert!((v - 2.0 * 3.0).abs() < 1e-13);
        let mut neg = ScalarField::constant(g, 1.0);
        neg.values[0] = -1.0;
        assert!(integrate(&neg, 0.5).is_err());
        assert!(integrate(&neg, 2.0).is_ok());
        let mut zero = ScalarField::constant(g, 1.0);
        zero.values[3] = 0.0;
        assert!(integrate(&zero, -0.5).is_err());
    }

    #[test]
    fn grad_norm_sq_examples() {
        let g = Grid::unit_square(10);
        assert_eq!(grad_norm_sq(&ScalarField::constant(g, 1.0)).max_abs(), 0.0);
        let lin = ScalarField::from_fn(g, |x| x[0]);
        let gn = grad_norm_sq(&lin);
        g.for_each_cell(|c, [i, _, _]| {
            if i > 0 && i < 9 {
                assert!((gn.values[c] - 1.0).abs() < 1e-12);
            }
        });
    }

    #[test]
    fn chain_rule_consistency_under_refinement() {
        let q = 0.4;
        let err = |m: usize| {
            let g = Grid::unit_square(m);
            let c = ScalarField::from_fn(g, |x| 1.5 + (PI * x[0]).cos() * (PI * x[1]).cos());
            let lhs = integrate(&grad_norm_sq(&c.map(|v| v.powf(0.5 * q))), 1.0).unwrap();
            let w = grad_norm_sq(&c);
            let rhs: f64 = c
                .values
                .iter()
                .zip(&w.values)
                .map(|(cv, gv)| cv.powf(q - 2.0) * gv)
                .sum::<f64>()
                * g.cell_volume()
                * q
                * q
                / 4.0;
            (lhs - rhs).abs()
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e1 / e2 > 3.0, "{e1} {e2}");
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new_2d(3, 2, 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] + 10.0 * x[1]);
        let stem = dir.path().join("n_000001");
        write_scalar_snapshot(&stem, &f, 0.25, "n").unwrap();
        let (meta, values) = read_snapshot(&stem).unwrap();
        assert_eq!(meta.nx, 3);
        assert_eq!(meta.ny, 2);
        assert_eq!(meta.field_name, "n");
        assert_eq!(values, f.values);
        let raw = std::fs::read(stem.with_extension("bin")).unwrap();
        assert_eq!(&raw[..8], &f.values[0].to_le_bytes());
    }
}
