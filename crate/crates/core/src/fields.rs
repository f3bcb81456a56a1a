//! Staggered grid on a masked 2D voxel set and the fields living on it.
//!
//! Scalars sit at voxel centres, velocities at faces (MAC layout). Cell
//! `(i, j)` covers `[i h, (i+1) h] x [j h, (j+1) h]`. The x-face `(i, j)` is the
//! left face of cell `(i, j)`, the y-face `(i, j)` its bottom face. A walled
//! grid has `n + 1` face positions along the normal axis; a periodic grid has
//! `n` and wraps around.
//!
//! Only pore cells carry scalar unknowns and only faces with a pore cell on
//! both sides carry velocity unknowns; every other face value is zero.

use crate::error::{Error, Result};
use crate::geometry::{FaceLabel, PerforatedDomain, UnitCell};
use std::sync::Arc;

pub(crate) const NONE: usize = usize::MAX;

/// Face orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

#[derive(Debug)]
pub struct Grid {
    n: usize,
    h: f64,
    periodic: bool,
    period: usize,
    pore: Vec<bool>,
    cell_dof: Vec<usize>,
    cells: Vec<usize>,
    face_dof: Vec<usize>,
    faces: Vec<usize>,
    labels: Vec<FaceLabel>,
    nfx: usize,
}

impl Grid {
    fn build(n: usize, periodic: bool, period: usize, pore: Vec<bool>) -> Result<Self> {
        if n < 2 || pore.len() != n * n {
            return Err(Error::InvalidParameter(format!("grid needs n >= 2 and n^2 mask entries, got n = {n}")));
        }
        let mut cell_dof = vec![NONE; n * n];
        let mut cells = Vec::new();
        for (c, &p) in pore.iter().enumerate() {
            if p {
                cell_dof[c] = cells.len();
                cells.push(c);
            }
        }
        if cells.is_empty() {
            return Err(Error::InvalidParameter("grid has no pore cells".into()));
        }
        let nf_axis = if periodic { n } else { n + 1 };
        let nfx = nf_axis * n;
        let mut g = Self {
            n,
            h: 1.0 / n as f64,
            periodic,
            period,
            pore,
            cell_dof,
            cells,
            face_dof: vec![NONE; 2 * nfx],
            faces: Vec::new(),
            labels: Vec::with_capacity(2 * nfx),
            nfx,
        };
        for f in 0..2 * nfx {
            let (lo, hi) = g.face_cells(f);
            let lo = lo.map(|c| g.pore[c]);
            let hi = hi.map(|c| g.pore[c]);
            let label = match (lo, hi) {
                (Some(true), Some(true)) => FaceLabel::InteriorPore,
                (Some(true), Some(false)) | (Some(false), Some(true)) => FaceLabel::ObstacleInterface,
                (None, Some(true)) | (Some(true), None) => FaceLabel::OuterWall,
                _ => FaceLabel::Solid,
            };
            g.labels.push(label);
            if label == FaceLabel::InteriorPore {
                g.face_dof[f] = g.faces.len();
                g.faces.push(f);
            }
        }
        Ok(g)
    }

    /// Walled grid of a tiled perforated domain (no-slip outer boundary).
    pub fn walled(domain: &PerforatedDomain) -> Result<Arc<Self>> {
        if domain.dim() != 2 {
            return Err(Error::Unsupported("the staggered solvers are two-dimensional".into()));
        }
        Ok(Arc::new(Self::build(domain.n(), false, domain.cell().n_y(), domain.global_mask().to_vec())?))
    }

    /// Periodic grid of the reference cell.
    pub fn periodic_cell(cell: &UnitCell) -> Result<Arc<Self>> {
        if cell.dim() != 2 {
            return Err(Error::Unsupported("the staggered solvers are two-dimensional".into()));
        }
        Ok(Arc::new(Self::build(cell.n_y(), true, cell.n_y(), cell.pore_mask().to_vec())?))
    }

    /// Unperforated walled unit box with `n x n` cells.
    pub fn unit_box(n: usize) -> Result<Arc<Self>> {
        Ok(Arc::new(Self::build(n, false, n, vec![true; n * n])?))
    }

    /// Walled grid with an arbitrary mask (`period` sets the micro coordinate scale).
    pub fn walled_from_mask(n: usize, period: usize, pore: Vec<bool>) -> Result<Arc<Self>> {
        Ok(Arc::new(Self::build(n, false, period, pore)?))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Voxels per periodicity cell.
    pub fn period(&self) -> usize {
        self.period
    }

    pub fn n_cells(&self) -> usize {
        self.n * self.n
    }

    /// Number of pore cells (scalar unknowns).
    pub fn n_pore(&self) -> usize {
        self.cells.len()
    }

    /// Number of interior-pore faces (velocity unknowns).
    pub fn n_active(&self) -> usize {
        self.faces.len()
    }

    pub fn n_faces(&self) -> usize {
        2 * self.nfx
    }

    /// Pore volume `h^2 * #pore`.
    pub fn pore_volume(&self) -> f64 {
        self.cells.len() as f64 * self.h * self.h
    }

    pub fn pore_mask(&self) -> &[bool] {
        &self.pore
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.n, c / self.n)
    }

    pub fn is_pore(&self, c: usize) -> bool {
        self.pore[c]
    }

    /// Scalar unknown of cell `c`, if pore.
    pub fn cell_dof(&self, c: usize) -> Option<usize> {
        let d = self.cell_dof[c];
        (d != NONE).then_some(d)
    }

    /// Cell of scalar unknown `d`.
    pub fn dof_cell(&self, d: usize) -> usize {
        self.cells[d]
    }

    pub fn face_label(&self, f: usize) -> FaceLabel {
        self.labels[f]
    }

    pub fn face_dof(&self, f: usize) -> Option<usize> {
        let d = self.face_dof[f];
        (d != NONE).then_some(d)
    }

    pub fn dof_face(&self, d: usize) -> usize {
        self.faces[d]
    }

    fn wrap(&self, k: isize, extent: usize) -> Option<usize> {
        if self.periodic {
            Some(k.rem_euclid(self.n as isize) as usize)
        } else if k >= 0 && (k as usize) < extent {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Cell `(i, j)` with wraparound on periodic grids, `None` outside a walled grid.
    pub fn cell_at(&self, i: isize, j: isize) -> Option<usize> {
        let i = self.wrap(i, self.n)?;
        let j = self.wrap(j, self.n)?;
        Some(j * self.n + i)
    }

    /// x-face `(i, j)` (left face of cell `(i, j)`).
    pub fn xface(&self, i: isize, j: isize) -> Option<usize> {
        let i = self.wrap(i, self.n + 1)?;
        let j = self.wrap(j, self.n)?;
        let nf = if self.periodic { self.n } else { self.n + 1 };
        Some(j * nf + i)
    }

    /// y-face `(i, j)` (bottom face of cell `(i, j)`).
    pub fn yface(&self, i: isize, j: isize) -> Option<usize> {
        let i = self.wrap(i, self.n)?;
        let j = self.wrap(j, self.n + 1)?;
        Some(self.nfx + j * self.n + i)
    }

    /// Orientation and `(i, j)` position of face `f`.
    pub fn face_ij(&self, f: usize) -> (Axis, usize, usize) {
        if f < self.nfx {
            let nf = if self.periodic { self.n } else { self.n + 1 };
            (Axis::X, f % nf, f / nf)
        } else {
            let g = f - self.nfx;
            (Axis::Y, g % self.n, g / self.n)
        }
    }

    /// Cells below and above face `f` along its normal.
    pub fn face_cells(&self, f: usize) -> (Option<usize>, Option<usize>) {
        let (axis, i, j) = self.face_ij(f);
        let (i, j) = (i as isize, j as isize);
        match axis {
            Axis::X => (self.cell_at(i - 1, j), self.cell_at(i, j)),
            Axis::Y => (self.cell_at(i, j - 1), self.cell_at(i, j)),
        }
    }

    /// Active face dof of x-face `(i, j)`.
    pub(crate) fn xdof(&self, i: isize, j: isize) -> Option<usize> {
        self.xface(i, j).and_then(|f| self.face_dof(f))
    }

    pub(crate) fn ydof(&self, i: isize, j: isize) -> Option<usize> {
        self.yface(i, j).and_then(|f| self.face_dof(f))
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let (i, j) = self.cell_ij(c);
        [(i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h]
    }

    pub fn face_center(&self, f: usize) -> [f64; 2] {
        let (axis, i, j) = self.face_ij(f);
        match axis {
            Axis::X => [i as f64 * self.h, (j as f64 + 0.5) * self.h],
            Axis::Y => [(i as f64 + 0.5) * self.h, j as f64 * self.h],
        }
    }

    /// Micro coordinate `{x / eps}` in `[0, 1)^2` of a physical point.
    pub fn micro_coord(&self, x: [f64; 2]) -> [f64; 2] {
        let scale = self.n as f64 / self.period as f64;
        x.map(|v| {
            let y = (v * scale).fract();
            if y < 0.0 { y + 1.0 } else { y }
        })
    }

    pub fn same(&self, other: &Grid) -> bool {
        std::ptr::eq(self, other)
    }
}

/// Role of a scalar field, kept for snapshot headers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Phase,
    ChemicalPotential,
    Pressure,
    Velocity,
    Generic,
}

/// One value per pore cell.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub t: f64,
    pub role: Role,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Arc<Grid>, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.n_pore()], t: 0.0, role: Role::Generic }
    }

    /// Samples `f` at the pore cell centres.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid
            .cells
            .iter()
            .map(|&c| {
                let [x, y] = grid.cell_center(c);
                f(x, y)
            })
            .collect();
        Self { grid: grid.clone(), values, t: 0.0, role: Role::Generic }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_pore() {
            return Err(Error::Mismatch(format!(
                "{} values for {} pore cells",
                values.len(),
                grid.n_pore()
            )));
        }
        Ok(Self { grid: grid.clone(), values, t: 0.0, role: Role::Generic })
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Value at cell `c`, `None` for solid cells.
    pub fn at_cell(&self, c: usize) -> Option<f64> {
        self.grid.cell_dof(c).map(|d| self.values[d])
    }

    /// Average over pore cells.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn integral(&self) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.values.iter().sum::<f64>() * h2
    }

    pub fn dot(&self, other: &ScalarField) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * h2
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn subtract_mean(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = f(*v));
        out
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(v, w)| *v += a * w);
        out
    }

    /// Full `n x n` array with `fill` on solid cells.
    pub fn to_full(&self, fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.grid.n_cells()];
        for (d, &c) in self.grid.cells.iter().enumerate() {
            out[c] = self.values[d];
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Normal velocity on every interior-pore face; all other faces are zero.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub t: f64,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.n_active()], t: 0.0 }
    }

    /// Samples the normal component of `f` at active face centres.
    pub fn from_fn(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let values = grid
            .faces
            .iter()
            .map(|&face| {
                let [x, y] = grid.face_center(face);
                let v = f(x, y);
                match grid.face_ij(face).0 {
                    Axis::X => v[0],
                    Axis::Y => v[1],
                }
            })
            .collect();
        Self { grid: grid.clone(), values, t: 0.0 }
    }

    pub fn from_values(grid: &Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_active() {
            return Err(Error::Mismatch(format!(
                "{} values for {} active faces",
                values.len(),
                grid.n_active()
            )));
        }
        Ok(Self { grid: grid.clone(), values, t: 0.0 })
    }

    /// Value on face `f` (zero on non-active faces).
    pub fn at_face(&self, f: usize) -> f64 {
        self.grid.face_dof(f).map_or(0.0, |d| self.values[d])
    }

    pub(crate) fn ux(&self, i: isize, j: isize) -> f64 {
        self.grid.xdof(i, j).map_or(0.0, |d| self.values[d])
    }

    pub(crate) fn uy(&self, i: isize, j: isize) -> f64 {
        self.grid.ydof(i, j).map_or(0.0, |d| self.values[d])
    }

    pub fn dot(&self, other: &VectorField) -> f64 {
        let h2 = self.grid.h * self.grid.h;
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * h2
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    pub fn axpy(&self, a: f64, other: &VectorField) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().zip(&other.values).for_each(|(v, w)| *v += a * w);
        out
    }

    /// Cell-centred velocity from the two adjacent face values per axis.
    pub fn cell_centered(&self) -> Vec<[f64; 2]> {
        let g = &self.grid;
        (0..g.n_cells())
            .map(|c| {
                let (i, j) = g.cell_ij(c);
                let (i, j) = (i as isize, j as isize);
                [
                    0.5 * (self.ux(i, j) + self.ux(i + 1, j)),
                    0.5 * (self.uy(i, j) + self.uy(i, j + 1)),
                ]
            })
            .collect()
    }

    /// Full face arrays `(x-faces, y-faces)` with zeros on non-active faces.
    pub fn to_full(&self) -> (Vec<f64>, Vec<f64>) {
        let g = &self.grid;
        let mut all = vec![0.0; g.n_faces()];
        for (d, &f) in g.faces.iter().enumerate() {
            all[f] = self.values[d];
        }
        let ys = all.split_off(g.nfx);
        (all, ys)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_unit_cell, tile_domain, Inclusion};

    #[test]
    fn box_counts() {
        let g = Grid::unit_box(4).unwrap();
        assert_eq!(g.n_pore(), 16);
        // interior faces: 3 per row per axis
        assert_eq!(g.n_active(), 2 * 3 * 4);
        assert_eq!(g.n_faces(), 2 * 5 * 4);
        assert_eq!(g.face_label(g.xface(0, 2).unwrap()), FaceLabel::OuterWall);
        assert_eq!(g.face_label(g.xface(4, 2).unwrap()), FaceLabel::OuterWall);
        assert!(g.xface(5, 0).is_none());
        assert!(g.cell_at(-1, 0).is_none());
    }

    #[test]
    fn periodic_wraps() {
        let c = build_unit_cell(2, Inclusion::Ball { radius: 0.0 }, 8).unwrap();
        let g = Grid::periodic_cell(&c).unwrap();
        assert_eq!(g.n_active(), 2 * 64);
        assert_eq!(g.cell_at(-1, 0), Some(7));
        assert_eq!(g.xface(8, 1), g.xface(0, 1));
        let (lo, hi) = g.face_cells(g.xface(0, 3).unwrap());
        assert_eq!((lo, hi), (Some(g.cell_index(7, 3)), Some(g.cell_index(0, 3))));
    }

    #[test]
    fn labels_agree_with_domain() {
        let c = build_unit_cell(2, Inclusion::Ball { radius: 0.25 }, 16).unwrap();
        let d = tile_domain(&c, 2).unwrap();
        let g = Grid::walled(&d).unwrap();
        let mut counts = std::collections::HashMap::new();
        for f in 0..g.n_faces() {
            *counts.entry(g.face_label(f)).or_insert(0usize) += 1;
        }
        for l in [FaceLabel::InteriorPore, FaceLabel::OuterWall, FaceLabel::ObstacleInterface, FaceLabel::Solid] {
            assert_eq!(counts.get(&l).copied().unwrap_or(0), d.count_faces(l), "{l:?}");
        }
        assert_eq!(g.n_active(), d.count_faces(FaceLabel::InteriorPore));
    }

    #[test]
    fn micro_coordinates_wrap_per_cell() {
        let c = build_unit_cell(2, Inclusion::Ball { radius: 0.25 }, 16).unwrap();
        let d = tile_domain(&c, 4).unwrap();
        let g = Grid::walled(&d).unwrap();
        let y = g.micro_coord([0.25 + 0.0625, 0.5 + 0.125]);
        assert!((y[0] - 0.25).abs() < 1e-12 && (y[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn fields_sample_and_reduce() {
        let g = Grid::unit_box(8).unwrap();
        let s = ScalarField::from_fn(&g, |x, _| x);
        assert!((s.mean() - 0.5).abs() < 1e-14);
        assert!((s.integral() - 0.5).abs() < 1e-14);
        let u = VectorField::from_fn(&g, |_, _| [1.0, 2.0]);
        let (xs, ys) = u.to_full();
        assert_eq!(xs[0], 0.0);
        assert_eq!(xs[1], 1.0);
        assert_eq!(ys[8], 2.0);
        let cc = u.cell_centered();
        assert_eq!(cc[0], [0.5, 1.0]);
        assert_eq!(cc[g.cell_index(3, 3)], [1.0, 2.0]);
    }
}
