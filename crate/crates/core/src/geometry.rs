//! Voxelized reference cell and its periodic tiling of the unit box.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;

/// Default upper bound on the number of voxels of a tiled domain.
pub const DEFAULT_MAX_CELLS: usize = 1 << 24;

/// Solid inclusion centred in the reference cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inclusion {
    /// Disk in 2D, ball in 3D, centred at (0.5, ..., 0.5).
    Ball { radius: f64 },
}

impl Inclusion {
    pub fn radius(&self) -> f64 {
        match *self {
            Inclusion::Ball { radius } => radius,
        }
    }

    fn contains(&self, p: &[f64]) -> bool {
        match *self {
            Inclusion::Ball { radius } => {
                p.iter().map(|x| (x - 0.5) * (x - 0.5)).sum::<f64>() < radius * radius
            }
        }
    }
}

/// Classification of a grid face of a perforated domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceLabel {
    /// Both neighbours are pore voxels.
    InteriorPore,
    /// On the boundary of the unit box next to a pore voxel.
    OuterWall,
    /// Separates a pore voxel from a solid voxel.
    ObstacleInterface,
    /// No pore voxel on either side.
    Solid,
}

/// Reference cell `Y` sampled on `n_y^dim` voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCell {
    dim: usize,
    inclusion: Option<Inclusion>,
    n_y: usize,
    pore_mask: Vec<bool>,
    porosity: f64,
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 2 || dim == 3 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dim must be 2 or 3, got {dim}")))
    }
}

fn unravel(mut lin: usize, n: usize, dim: usize) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for slot in idx.iter_mut().take(dim) {
        *slot = lin % n;
        lin /= n;
    }
    idx
}

fn ravel(idx: &[usize; 3], n: usize, dim: usize) -> usize {
    let mut lin = 0;
    for a in (0..dim).rev() {
        lin = lin * n + idx[a];
    }
    lin
}

/// Number of connected components of the pore set, with or without wraparound.
fn pore_components(mask: &[bool], n: usize, dim: usize, periodic: bool) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            let idx = unravel(v, n, dim);
            for a in 0..dim {
                for step in [-1isize, 1] {
                    let c = idx[a] as isize + step;
                    let c = if c < 0 || c >= n as isize {
                        if !periodic {
                            continue;
                        }
                        c.rem_euclid(n as isize)
                    } else {
                        c
                    };
                    let mut nb = idx;
                    nb[a] = c as usize;
                    let w = ravel(&nb, n, dim);
                    if mask[w] && !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
    }
    components
}

/// Builds the voxelized cell: a voxel is solid iff its centre lies inside the inclusion.
pub fn build_unit_cell(dim: usize, inclusion: Inclusion, n_y: usize) -> Result<UnitCell> {
    check_dim(dim)?;
    if n_y < 8 || !n_y.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("n_y must be even and >= 8, got {n_y}")));
    }
    let r = inclusion.radius();
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {r}")));
    }
    let reach = r + 1.0 / n_y as f64;
    if reach >= 0.5 {
        return Err(Error::Containment(reach));
    }
    let total = n_y.pow(dim as u32);
    let h = 1.0 / n_y as f64;
    let pore_mask: Vec<bool> = (0..total)
        .map(|lin| {
            let idx = unravel(lin, n_y, dim);
            let p: Vec<f64> = idx[..dim].iter().map(|&i| (i as f64 + 0.5) * h).collect();
            !inclusion.contains(&p)
        })
        .collect();
    UnitCell::assemble(dim, Some(inclusion), n_y, pore_mask)
}

impl UnitCell {
    /// Cell from an explicit voxel mask (`true` = pore), indexed with the first axis fastest.
    pub fn from_mask(dim: usize, n_y: usize, pore_mask: Vec<bool>) -> Result<Self> {
        check_dim(dim)?;
        if n_y == 0 || pore_mask.len() != n_y.pow(dim as u32) {
            return Err(Error::InvalidParameter(format!(
                "mask has {} entries, expected {}",
                pore_mask.len(),
                n_y.pow(dim as u32)
            )));
        }
        Self::assemble(dim, None, n_y, pore_mask)
    }

    fn assemble(
        dim: usize,
        inclusion: Option<Inclusion>,
        n_y: usize,
        pore_mask: Vec<bool>,
    ) -> Result<Self> {
        let pores = pore_mask.iter().filter(|&&p| p).count();
        if pores == 0 {
            return Err(Error::Disconnected { components: 0 });
        }
        let components = pore_components(&pore_mask, n_y, dim, true);
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        let porosity = pores as f64 / pore_mask.len() as f64;
        Ok(Self { dim, inclusion, n_y, pore_mask, porosity })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn inclusion(&self) -> Option<Inclusion> {
        self.inclusion
    }

    pub fn porosity(&self) -> f64 {
        self.porosity
    }

    pub fn pore_mask(&self) -> &[bool] {
        &self.pore_mask
    }

    pub fn pore_count(&self) -> usize {
        self.pore_mask.iter().filter(|&&p| p).count()
    }

    /// Pore flag of voxel `idx` (first `dim` entries used).
    pub fn is_pore(&self, idx: &[usize]) -> bool {
        let mut a = [0usize; 3];
        a[..self.dim].copy_from_slice(&idx[..self.dim]);
        self.pore_mask[ravel(&a, self.n_y, self.dim)]
    }

    /// Number of pore/solid faces inside the cell, counted with wraparound.
    pub fn interface_face_count(&self) -> usize {
        let n = self.n_y;
        let mut count = 0;
        for lin in 0..self.pore_mask.len() {
            let idx = unravel(lin, n, self.dim);
            for a in 0..self.dim {
                let mut nb = idx;
                nb[a] = (idx[a] + 1) % n;
                if self.pore_mask[lin] != self.pore_mask[ravel(&nb, n, self.dim)] {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Unit box tiled by `m^dim` copies of a cell scaled by `eps = 1/m`.
#[derive(Debug, Clone)]
pub struct PerforatedDomain {
    cell: UnitCell,
    m: usize,
    n: usize,
    global_mask: Vec<bool>,
    face_labels: Vec<FaceLabel>,
}

/// Tiles the unit box with `m` cells per side, using [`DEFAULT_MAX_CELLS`].
pub fn tile_domain(cell: &UnitCell, m: usize) -> Result<PerforatedDomain> {
    tile_domain_with_limit(cell, m, DEFAULT_MAX_CELLS)
}

pub fn tile_domain_with_limit(cell: &UnitCell, m: usize, max_cells: usize) -> Result<PerforatedDomain> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be >= 1".into()));
    }
    let dim = cell.dim;
    let n = m
        .checked_mul(cell.n_y)
        .ok_or(Error::GridTooLarge { cells: usize::MAX, limit: max_cells })?;
    let total = n
        .checked_pow(dim as u32)
        .ok_or(Error::GridTooLarge { cells: usize::MAX, limit: max_cells })?;
    if total > max_cells {
        return Err(Error::GridTooLarge { cells: total, limit: max_cells });
    }
    let global_mask: Vec<bool> = (0..total)
        .map(|lin| {
            let mut idx = unravel(lin, n, dim);
            for v in idx.iter_mut().take(dim) {
                *v %= cell.n_y;
            }
            cell.pore_mask[ravel(&idx, cell.n_y, dim)]
        })
        .collect();
    let mut face_labels = Vec::with_capacity(dim * (n + 1) * n.pow(dim as u32 - 1));
    for a in 0..dim {
        let mut ext = [n; 3];
        ext[a] = n + 1;
        let count: usize = ext[..dim].iter().product();
        for lin in 0..count {
            let mut idx = [0usize; 3];
            let mut rest = lin;
            for b in 0..dim {
                idx[b] = rest % ext[b];
                rest /= ext[b];
            }
            let lo = if idx[a] == 0 {
                None
            } else {
                let mut c = idx;
                c[a] -= 1;
                Some(global_mask[ravel(&c, n, dim)])
            };
            let hi = if idx[a] == n { None } else { Some(global_mask[ravel(&idx, n, dim)]) };
            face_labels.push(match (lo, hi) {
                (Some(true), Some(true)) => FaceLabel::InteriorPore,
                (Some(true), Some(false)) | (Some(false), Some(true)) => FaceLabel::ObstacleInterface,
                (None, Some(true)) | (Some(true), None) => FaceLabel::OuterWall,
                _ => FaceLabel::Solid,
            });
        }
    }
    Ok(PerforatedDomain { cell: cell.clone(), m, n, global_mask, face_labels })
}

/// Pore-voxel fraction of the domain.
pub fn porosity(domain: &PerforatedDomain) -> f64 {
    domain.global_mask.iter().filter(|&&p| p).count() as f64 / domain.global_mask.len() as f64
}

impl PerforatedDomain {
    pub fn cell(&self) -> &UnitCell {
        &self.cell
    }

    pub fn dim(&self) -> usize {
        self.cell.dim
    }

    /// Number of cells per side.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn eps(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Voxels per side of the global grid.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn global_mask(&self) -> &[bool] {
        &self.global_mask
    }

    /// Face labels, axis by axis; within an axis the first index is fastest and
    /// runs over `n + 1` positions along that axis.
    pub fn face_labels(&self) -> &[FaceLabel] {
        &self.face_labels
    }

    pub fn count_faces(&self, label: FaceLabel) -> usize {
        self.face_labels.iter().filter(|&&l| l == label).count()
    }

    /// Pore volume `|Omega_p|` (the box has unit volume).
    pub fn pore_volume(&self) -> f64 {
        porosity(self)
    }

    /// Writes the 2D mask as a binary greymap (pore = 255), top row = largest y.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        if self.dim() != 2 {
            return Err(Error::Unsupported("PGM dump is 2D only".into()));
        }
        let n = self.n;
        write!(w, "P5\n{n} {n}\n255\n")?;
        let mut row = vec![0u8; n];
        for j in (0..n).rev() {
            for i in 0..n {
                row[i] = if self.global_mask[j * n + i] { 255 } else { 0 };
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    /// Writes one line per voxel: indices then 1 (pore) or 0 (solid).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.dim();
        let header = ["i", "j", "k"][..dim].join(",");
        writeln!(w, "{header},pore")?;
        for (lin, &p) in self.global_mask.iter().enumerate() {
            let idx = unravel(lin, self.n, dim);
            let coords: Vec<String> = idx[..dim].iter().map(|v| v.to_string()).collect();
            writeln!(w, "{},{}", coords.join(","), p as u8)?;
        }
        Ok(())
    }
}
