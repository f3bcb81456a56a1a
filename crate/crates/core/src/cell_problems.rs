//! Periodic cell problems on the pore part of the reference cell and the
//! effective tensors assembled from their solutions.
//!
//! Symmetric 2x2 matrices use the orthonormal basis
//! `M^11 = e1 (x) e1`, `M^22 = e2 (x) e2`, `M^12 = (e1 (x) e2 + e2 (x) e1) / sqrt 2`,
//! so the effective viscosity in this basis is its Mandel matrix.

use crate::error::{Error, Result};
use crate::fields::{Axis, Grid, ScalarField, VectorField};
use crate::geometry::UnitCell;
use crate::linalg::{CsrMatrix, ProfileFactor};
use crate::ops::{self, cell_strain_stencils, node_shear, Stencil};
use crate::viscosity::{sym_dot, Stiffness, Sym2, ViscosityModel};
use nalgebra::{Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

/// Orthonormal basis of symmetric matrices, `[xx, yy, xy]` storage.
pub const SYM_BASIS: [Sym2; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, FRAC_1_SQRT_2]];

/// Labels of [`SYM_BASIS`].
pub const SYM_BASIS_LABELS: [&str; 3] = ["11", "22", "12"];

/// Porosity below which the Stokes cell problem is refused.
pub const MIN_STOKES_POROSITY: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellOptions {
    /// Relative residual of the scalar solves and divergence tolerance of the Stokes solves.
    pub tol: f64,
    pub max_iter: usize,
    /// Augmented-Lagrangian penalty relative to the viscosity bound.
    pub penalty: f64,
    /// Maximum number of multiplier updates.
    pub max_outer: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 20_000, penalty: 1e4, max_outer: 200 }
    }
}

/// Solution of one scalar cell problem.
#[derive(Debug, Clone)]
pub struct ScalarCorrector {
    pub chi: ScalarField,
    pub direction: usize,
    pub iterations: usize,
    pub residual: f64,
}

/// Solution of one Stokes-type cell problem.
#[derive(Debug, Clone)]
pub struct StokesCorrector {
    pub chi: VectorField,
    pub pi: ScalarField,
    pub basis: usize,
    pub outer_iterations: usize,
    pub div_residual: f64,
    pub momentum_residual: f64,
}

/// Unit vector field `e_i` restricted to the interior-pore faces.
pub fn masked_unit(grid: &Arc<Grid>, i: usize) -> VectorField {
    let axis = if i == 0 { Axis::X } else { Axis::Y };
    let values = (0..grid.n_active())
        .map(|d| if grid.face_ij(grid.dof_face(d)).0 == axis { 1.0 } else { 0.0 })
        .collect();
    VectorField::from_values(grid, values).expect("sized from grid")
}

fn scalar_corrector_on(grid: &Arc<Grid>, i: usize, opts: &CellOptions) -> Result<ScalarCorrector> {
    if i > 1 {
        return Err(Error::InvalidParameter(format!("direction {i} out of range")));
    }
    let rhs = ops::div(&masked_unit(grid, i));
    let (chi, info) = ops::laplace_neumann_solve_with(&rhs, opts.tol, opts.max_iter)?;
    Ok(ScalarCorrector { chi, direction: i, iterations: info.iterations, residual: info.relative_residual })
}

/// Periodic zero-mean `chi^i` with `int (e_i + grad chi^i) . grad q = 0` for all periodic `q`.
pub fn solve_scalar_corrector(cell: &UnitCell, i: usize, opts: &CellOptions) -> Result<ScalarCorrector> {
    scalar_corrector_on(&Grid::periodic_cell(cell)?, i, opts)
}

/// Reusable factorization for the Stokes-type cell problems of one cell and time.
pub struct StokesCellSolver {
    grid: Arc<Grid>,
    model: ViscosityModel,
    t: f64,
    form: CsrMatrix,
    factor: ProfileFactor,
    div_rows: Vec<Stencil>,
    pins: Vec<usize>,
    penalty: f64,
    opts: CellOptions,
}

impl StokesCellSolver {
    pub fn new(cell: &UnitCell, model: &ViscosityModel, t: f64, opts: &CellOptions) -> Result<Self> {
        if cell.porosity() < MIN_STOKES_POROSITY {
            return Err(Error::InvalidParameter(format!(
                "pore fraction {} too small for the Stokes cell problem",
                cell.porosity()
            )));
        }
        let grid = Grid::periodic_cell(cell)?;
        let h = grid.h();
        let h2 = h * h;
        let form = ops::ViscousOperator::new(&grid, model, t).form_matrix().clone();
        let div_rows: Vec<Stencil> = (0..grid.n_pore())
            .map(|d| {
                let (i, j) = grid.cell_ij(grid.dof_cell(d));
                let (i, j) = (i as isize, j as isize);
                let mut s = Stencil::new();
                s.extend(grid.xdof(i + 1, j).map(|f| (f, 1.0 / h)));
                s.extend(grid.xdof(i, j).map(|f| (f, -1.0 / h)));
                s.extend(grid.ydof(i, j + 1).map(|f| (f, 1.0 / h)));
                s.extend(grid.ydof(i, j).map(|f| (f, -1.0 / h)));
                s
            })
            .collect();
        let penalty = opts.penalty * model.kappa2().max(model.kappa1());
        let mut trip = Vec::new();
        for s in &div_rows {
            for &(a, ca) in s {
                for &(b, cb) in s {
                    trip.push((a, b, penalty * h2 * ca * cb));
                }
            }
        }
        let pen = CsrMatrix::from_triplets(grid.n_active(), &trip);
        let mut system = form.add(1.0, &pen, 1.0);
        // without solid voxels rigid translations are in the kernel
        let pins = if grid.n_pore() == grid.n_cells() {
            let px = (0..grid.n_active()).find(|&d| grid.face_ij(grid.dof_face(d)).0 == Axis::X);
            let py = (0..grid.n_active()).find(|&d| grid.face_ij(grid.dof_face(d)).0 == Axis::Y);
            px.into_iter().chain(py).collect()
        } else {
            Vec::new()
        };
        if !pins.is_empty() {
            system = system.pin(&pins);
        }
        let factor = ProfileFactor::new(&system, true)?;
        Ok(Self { grid, model: model.clone(), t, form, factor, div_rows, pins, penalty, opts: *opts })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Load vector `l` with `l . q = a(M, q)` for the constant strain `M`.
    fn load(&self, m: &Sym2) -> Vec<f64> {
        let g = &self.grid;
        let h = g.h();
        let h2 = h * h;
        let mut l = vec![0.0; g.n_active()];
        let mut add = |s: &Stencil, w: f64| {
            for &(d, c) in s {
                l[d] += w * c;
            }
        };
        for d in 0..g.n_pore() {
            let c = g.dof_cell(d);
            let a = self.model.eval(self.t, g.micro_coord(g.cell_center(c)));
            let cross = a.a1112 != 0.0 || a.a2212 != 0.0;
            let (s11, s22, s12) = cell_strain_stencils(g, c, cross);
            add(&s11, h2 * (a.a1111 * m[0] + a.a1122 * m[1] + 2.0 * a.a1112 * m[2]));
            add(&s22, h2 * (a.a1122 * m[0] + a.a2222 * m[1] + 2.0 * a.a2212 * m[2]));
            if cross {
                add(&s12, h2 * 2.0 * (a.a1112 * m[0] + a.a2212 * m[1]));
            }
        }
        for j in 0..g.n() {
            for i in 0..g.n() {
                if let Some((w, st)) = node_shear(g, i as isize, j as isize) {
                    let a = self.model.eval(self.t, g.micro_coord([i as f64 * h, j as f64 * h]));
                    add(&st, 4.0 * w * h2 * a.a1212 * m[2]);
                }
            }
        }
        l
    }

    /// Quadrature value of `a(M, M')` for constant strains.
    pub fn constant_form(&self, m: &Sym2, mp: &Sym2) -> f64 {
        let g = &self.grid;
        let h = g.h();
        let h2 = h * h;
        let mut s = 0.0;
        for d in 0..g.n_pore() {
            let a = self.model.eval(self.t, g.micro_coord(g.cell_center(g.dof_cell(d))));
            let shear_free = Stiffness { a1212: 0.0, ..a };
            s += h2 * shear_free.contract(m, mp);
        }
        for j in 0..g.n() {
            for i in 0..g.n() {
                if let Some((w, _)) = node_shear(g, i as isize, j as isize) {
                    let a = self.model.eval(self.t, g.micro_coord([i as f64 * h, j as f64 * h]));
                    s += 4.0 * w * h2 * a.a1212 * m[2] * mp[2];
                }
            }
        }
        s
    }

    fn div_values(&self, chi: &[f64]) -> Vec<f64> {
        self.div_rows.iter().map(|s| s.iter().map(|&(d, c)| c * chi[d]).sum()).collect()
    }

    /// Solves the problem driven by basis matrix `k` of [`SYM_BASIS`].
    pub fn solve(&self, k: usize) -> Result<StokesCorrector> {
        self.solve_strain(&SYM_BASIS[k], k)
    }

    fn solve_strain(&self, m: &Sym2, basis: usize) -> Result<StokesCorrector> {
        let g = &self.grid;
        let h2 = g.h() * g.h();
        let l = self.load(m);
        let lnorm = l.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut pi = vec![0.0; g.n_pore()];
        let mut chi = vec![0.0; g.n_active()];
        let mut div_res = 0.0;
        let mut outer = 0;
        if lnorm > 0.0 {
            loop {
                // rhs = -l + B^T pi with B^T pi = sum_c pi_c h^2 s_c
                let mut rhs: Vec<f64> = l.iter().map(|v| -v).collect();
                for (s, &p) in self.div_rows.iter().zip(&pi) {
                    for &(d, c) in s {
                        rhs[d] += p * h2 * c;
                    }
                }
                for &p in &self.pins {
                    rhs[p] = 0.0;
                }
                chi = self.factor.solve(&rhs);
                let dv = self.div_values(&chi);
                for (p, v) in pi.iter_mut().zip(&dv) {
                    *p -= self.penalty * v;
                }
                outer += 1;
                div_res = (dv.iter().map(|v| v * v).sum::<f64>() * h2).sqrt();
                if div_res <= self.opts.tol {
                    break;
                }
                if outer >= self.opts.max_outer {
                    return Err(Error::NotConverged { iterations: outer, residual: div_res });
                }
            }
        }
        let mean = pi.iter().sum::<f64>() / pi.len() as f64;
        pi.iter_mut().for_each(|p| *p -= mean);
        // K chi + l - B^T pi
        let mut r = self.form.mul_vec(&chi);
        for (ri, li) in r.iter_mut().zip(&l) {
            *ri += li;
        }
        for (s, &p) in self.div_rows.iter().zip(&pi) {
            for &(d, c) in s {
                r[d] -= p * h2 * c;
            }
        }
        let mom = r.iter().map(|v| v * v).sum::<f64>().sqrt() / lnorm.max(f64::MIN_POSITIVE);
        let mut chi = VectorField::from_values(g, chi)?;
        chi.t = self.t;
        Ok(StokesCorrector {
            chi,
            pi: ScalarField::from_values(g, pi)?.with_time(self.t),
            basis,
            outer_iterations: outer,
            div_residual: div_res,
            momentum_residual: if lnorm > 0.0 { mom } else { 0.0 },
        })
    }

    /// `a(M^k + chi^k, M^l + chi^l)` using the load vectors.
    pub fn energy_pair(&self, mk: &Sym2, ck: &VectorField, ml: &Sym2, cl: &VectorField) -> f64 {
        let lk = self.load(mk);
        let ll = self.load(ml);
        let kc = self.form.mul_vec(&ck.values);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        self.constant_form(mk, ml) + dot(&lk, &cl.values) + dot(&ll, &ck.values) + dot(&kc, &cl.values)
    }
}

/// Periodic divergence-free corrector for basis matrix `k`, with its pressure.
pub fn solve_stokes_corrector(
    cell: &UnitCell,
    k: usize,
    model: &ViscosityModel,
    t: f64,
    opts: &CellOptions,
) -> Result<StokesCorrector> {
    if k > 2 {
        return Err(Error::InvalidParameter(format!("basis index {k} out of range")));
    }
    StokesCellSolver::new(cell, model, t, opts)?.solve(k)
}

/// All correctors of a cell at one time sample.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub grid: Arc<Grid>,
    pub porosity: f64,
    pub chi1: Vec<VectorField>,
    pub pi1: Vec<ScalarField>,
    pub chi2: Vec<ScalarField>,
    pub chi3: Vec<ScalarField>,
    pub t: f64,
    /// `a(M^k + chi^k, M^l + chi^l)` for the basis pairs.
    pub energy: [[f64; 3]; 3],
    pub stokes_div_residual: f64,
    pub stokes_momentum_residual: f64,
    pub scalar_residual: f64,
}

/// Solves every cell problem. The three Stokes problems share one factorization;
/// the scalar problems for the two scalar tensors are solved independently.
pub fn solve_correctors(
    cell: &UnitCell,
    model: &ViscosityModel,
    t: f64,
    opts: &CellOptions,
) -> Result<CorrectorSet> {
    let grid = Grid::periodic_cell(cell)?;
    let (stokes, scalars) = rayon::join(
        || -> Result<(StokesCellSolver, Vec<StokesCorrector>)> {
            let solver = StokesCellSolver::new(cell, model, t, opts)?;
            let sols = (0..3).into_par_iter().map(|k| solver.solve(k)).collect::<Result<Vec<_>>>()?;
            Ok((solver, sols))
        },
        || (0..4).into_par_iter().map(|k| scalar_corrector_on(&grid, k % 2, opts)).collect::<Result<Vec<_>>>(),
    );
    let (solver, sols) = stokes?;
    let scalars = scalars?;
    let mut energy = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            energy[a][b] = solver.energy_pair(&SYM_BASIS[a], &sols[a].chi, &SYM_BASIS[b], &sols[b].chi);
        }
    }
    let stokes_div_residual = sols.iter().fold(0.0f64, |m, s| m.max(s.div_residual));
    let stokes_momentum_residual = sols.iter().fold(0.0f64, |m, s| m.max(s.momentum_residual));
    let scalar_residual = scalars.iter().fold(0.0f64, |m, s| m.max(s.residual));
    let mut it = scalars.into_iter().map(|s| s.chi);
    let chi2 = vec![it.next().unwrap(), it.next().unwrap()];
    let chi3 = vec![it.next().unwrap(), it.next().unwrap()];
    Ok(CorrectorSet {
        grid: solver.grid().clone(),
        porosity: cell.porosity(),
        chi1: sols.iter().map(|s| s.chi.clone()).collect(),
        pi1: sols.into_iter().map(|s| s.pi).collect(),
        chi2,
        chi3,
        t,
        energy,
        stokes_div_residual,
        stokes_momentum_residual,
        scalar_residual,
    })
}

/// Effective tensors with bookkeeping of how they were obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveTensors {
    pub a_hom: Stiffness,
    pub b_hom: [[f64; 2]; 2],
    pub c_hom: [[f64; 2]; 2],
    /// Energy form of `B_hom`, kept for the flux/energy cross-check.
    pub b_energy: [[f64; 2]; 2],
    pub porosity: f64,
    pub t: f64,
    /// Largest `|A_IJ - A_JI|` before symmetrization.
    pub a_asymmetry: f64,
}

/// Effective viscosity `(1/|Y_p|) a(M^kl + chi^kl, M^ij + chi^ij)`, symmetrized.
pub fn effective_a(correctors: &CorrectorSet) -> (Stiffness, f64) {
    let e = &correctors.energy;
    let mut m = [[0.0; 3]; 3];
    let mut asym: f64 = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            m[a][b] = 0.5 * (e[a][b] + e[b][a]) / correctors.porosity;
            asym = asym.max((e[a][b] - e[b][a]).abs() / correctors.porosity);
        }
    }
    (Stiffness::from_mandel(&m), asym)
}

fn flux_form(grid: &Arc<Grid>, chi: &[ScalarField], porosity: f64) -> [[f64; 2]; 2] {
    let h2 = grid.h() * grid.h();
    let mut b = [[0.0; 2]; 2];
    for (i, c) in chi.iter().enumerate() {
        let g = ops::grad(c);
        for d in 0..grid.n_active() {
            let j = match grid.face_ij(grid.dof_face(d)).0 {
                Axis::X => 0,
                Axis::Y => 1,
            };
            let delta = if i == j { 1.0 } else { 0.0 };
            b[i][j] += (delta + g.values[d]) * h2;
        }
    }
    b.iter_mut().flatten().for_each(|v| *v /= porosity);
    b
}

fn energy_form(grid: &Arc<Grid>, chi: &[ScalarField], porosity: f64) -> [[f64; 2]; 2] {
    let fields: Vec<VectorField> =
        chi.iter().enumerate().map(|(i, c)| masked_unit(grid, i).axpy(1.0, &ops::grad(c))).collect();
    let mut b = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            b[i][j] = fields[i].dot(&fields[j]) / porosity;
        }
    }
    b
}

/// Flux-average forms of `B_hom` (from `chi2`) and `C_hom` (from `chi3`), plus
/// the energy form of `B_hom`.
pub fn effective_bc(correctors: &CorrectorSet) -> ([[f64; 2]; 2], [[f64; 2]; 2], [[f64; 2]; 2]) {
    let g = &correctors.grid;
    let p = correctors.porosity;
    (flux_form(g, &correctors.chi2, p), flux_form(g, &correctors.chi3, p), energy_form(g, &correctors.chi2, p))
}

/// Solves all cell problems and assembles the effective tensors.
pub fn effective_tensors(
    cell: &UnitCell,
    model: &ViscosityModel,
    t: f64,
    opts: &CellOptions,
) -> Result<(EffectiveTensors, CorrectorSet)> {
    let set = solve_correctors(cell, model, t, opts)?;
    let (a_hom, a_asymmetry) = effective_a(&set);
    let (b_hom, c_hom, b_energy) = effective_bc(&set);
    Ok((EffectiveTensors { a_hom, b_hom, c_hom, b_energy, porosity: set.porosity, t, a_asymmetry }, set))
}

/// Identity tensors for an unperforated medium with viscosity `a`.
pub fn identity_tensors(a: Stiffness) -> EffectiveTensors {
    let id = [[1.0, 0.0], [0.0, 1.0]];
    EffectiveTensors { a_hom: a, b_hom: id, c_hom: id, b_energy: id, porosity: 1.0, t: 0.0, a_asymmetry: 0.0 }
}

/// Outcome of the tensor invariant suite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorChecks {
    pub b_minus_c: f64,
    pub b_eigenvalues: [f64; 2],
    pub b_symmetry: f64,
    pub flux_minus_energy: f64,
    pub a_major_asymmetry: f64,
    pub a_coercivity_sampled: f64,
    pub samples: usize,
}

impl TensorChecks {
    /// True when every identity holds at the given tolerances.
    pub fn pass(&self, bc_tol: f64, flux_tol: f64, sym_tol: f64) -> bool {
        self.b_minus_c <= bc_tol
            && self.b_eigenvalues[0] > 0.0
            && self.b_eigenvalues[1] <= 1.0 + bc_tol
            && self.b_symmetry <= bc_tol
            && self.flux_minus_energy <= flux_tol
            && self.a_major_asymmetry <= sym_tol
            && self.a_coercivity_sampled > 0.0
    }
}

fn max_abs_diff(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            m = m.max((a[i][j] - b[i][j]).abs());
        }
    }
    m
}

/// Runs the invariant suite; coercivity is sampled on `samples` random unit
/// symmetric matrices drawn from `seed`.
pub fn check_tensors(t: &EffectiveTensors, samples: usize, seed: u64) -> TensorChecks {
    let sym = |b: &[[f64; 2]; 2]| Matrix2::new(b[0][0], 0.5 * (b[0][1] + b[1][0]), 0.5 * (b[0][1] + b[1][0]), b[1][1]);
    let e = SymmetricEigen::new(sym(&t.b_hom)).eigenvalues;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kmin = f64::INFINITY;
    let mut asym: f64 = t.a_asymmetry;
    for _ in 0..samples {
        let mut x: Sym2 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let n = sym_dot(&x, &x).sqrt();
        x.iter_mut().for_each(|v| *v /= n);
        let y: Sym2 = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        kmin = kmin.min(t.a_hom.contract(&x, &x));
        asym = asym.max((t.a_hom.contract(&x, &y) - t.a_hom.contract(&y, &x)).abs());
    }
    TensorChecks {
        b_minus_c: max_abs_diff(&t.b_hom, &t.c_hom),
        b_eigenvalues: [e.min(), e.max()],
        b_symmetry: (t.b_hom[0][1] - t.b_hom[1][0]).abs(),
        flux_minus_energy: max_abs_diff(&t.b_hom, &t.b_energy),
        a_major_asymmetry: asym,
        a_coercivity_sampled: kmin,
        samples,
    }
}

/// Oscillating velocity `sum_k (Xi : M^k) chi^k` for a macroscopic strain `Xi`.
pub fn reconstruct_velocity_corrector(set: &CorrectorSet, xi: &Sym2) -> VectorField {
    let mut out = VectorField::zeros(&set.grid);
    for (k, chi) in set.chi1.iter().enumerate() {
        out = out.axpy(sym_dot(xi, &SYM_BASIS[k]), chi);
    }
    out
}

/// Oscillating scalar `sum_i g_i chi2^i` for a macroscopic gradient `g`.
pub fn reconstruct_scalar_corrector(set: &CorrectorSet, g: [f64; 2]) -> ScalarField {
    set.chi2[0].map(|v| g[0] * v).axpy(g[1], &set.chi2[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_unit_cell, Inclusion};

    fn cell(r: f64, n: usize) -> UnitCell {
        build_unit_cell(2, Inclusion::Ball { radius: r }, n).unwrap()
    }

    #[test]
    fn scalar_corrector_vanishes_without_inclusion() {
        let s = solve_scalar_corrector(&cell(0.0, 16), 0, &CellOptions::default()).unwrap();
        assert!(s.chi.max_abs() == 0.0);
    }

    #[test]
    fn scalar_corrector_symmetry_and_orthogonality() {
        let c = cell(0.25, 32);
        let opts = CellOptions { tol: 1e-12, ..Default::default() };
        let s = solve_scalar_corrector(&c, 0, &opts).unwrap();
        let g = s.chi.grid.clone();
        let n = g.n();
        for d in 0..g.n_pore() {
            let (i, j) = g.cell_ij(g.dof_cell(d));
            let mirror = g.cell_dof(g.cell_index(n - 1 - i, j)).unwrap();
            assert!((s.chi.values[d] + s.chi.values[mirror]).abs() < 1e-9);
        }
        let e = masked_unit(&g, 0).axpy(1.0, &ops::grad(&s.chi));
        assert!(e.dot(&ops::grad(&s.chi)).abs() < 1e-10);
        assert!(s.chi.mean().abs() < 1e-14);
    }

    #[test]
    fn stokes_corrector_vanishes_without_inclusion() {
        let c = cell(0.0, 16);
        for k in 0..3 {
            let s = solve_stokes_corrector(&c, k, &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
            assert!(s.chi.max_abs() < 1e-14);
            assert!(s.pi.max_abs() < 1e-14);
        }
    }

    #[test]
    fn stokes_corrector_orthogonality_and_divergence() {
        let c = cell(0.25, 32);
        let opts = CellOptions::default();
        let solver = StokesCellSolver::new(&c, &ViscosityModel::default(), 0.0, &opts).unwrap();
        for k in 0..3 {
            let s = solver.solve(k).unwrap();
            assert!(s.div_residual <= opts.tol);
            assert!(ops::div(&s.chi).l2_norm() <= opts.tol);
            // a(M + chi, chi) = 0
            let zero = VectorField::zeros(solver.grid());
            let full = solver.energy_pair(&SYM_BASIS[k], &s.chi, &[0.0; 3], &s.chi);
            let base = solver.energy_pair(&SYM_BASIS[k], &zero, &SYM_BASIS[k], &zero);
            assert!(full.abs() < 1e-8 * base, "{full}");
            assert!(s.pi.mean().abs() < 1e-12);
            assert!(s.momentum_residual < 1e-8);
        }
    }

    #[test]
    fn stokes_rejects_tiny_pore_fraction() {
        let n = 8;
        let mut mask = vec![false; n * n];
        for i in 0..n {
            mask[i] = true;
        }
        let c = UnitCell::from_mask(2, n, mask).unwrap();
        assert!(solve_stokes_corrector(&c, 0, &ViscosityModel::default(), 0.0, &CellOptions::default()).is_err());
    }

    #[test]
    fn empty_inclusion_tensors() {
        let (t, _) = effective_tensors(&cell(0.0, 16), &ViscosityModel::Isotropic { nu: 1.3 }, 0.0, &CellOptions::default()).unwrap();
        let want = Stiffness::isotropic(1.3).mandel();
        let got = t.a_hom.mandel();
        for a in 0..3 {
            for b in 0..3 {
                assert!((got[a][b] - want[a][b]).abs() < 1e-10);
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((t.b_hom[i][j] - id).abs() < 1e-10);
                assert!((t.c_hom[i][j] - id).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn disk_tensors_pass_invariants() {
        let (t, set) = effective_tensors(&cell(0.25, 32), &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        let ch = check_tensors(&t, 100, 7);
        assert!(ch.pass(1e-8, 1e-7, 1e-8), "{ch:?}");
        // square symmetry
        assert!((t.b_hom[0][0] - t.b_hom[1][1]).abs() < 1e-8);
        assert!(t.b_hom[0][1].abs() < 1e-8);
        assert!((t.a_hom.a1111 - t.a_hom.a2222).abs() < 1e-8);
        // corrector lowers the energy: A_hom Xi:Xi <= (1/|Yp|) a(Xi, Xi)
        let solver = StokesCellSolver::new(&cell(0.25, 32), &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        for xi in [[1.0, 0.0, 0.0], [0.3, -0.5, 0.7], [0.0, 0.0, 1.0]] {
            let upper = solver.constant_form(&xi, &xi) / set.porosity;
            assert!(t.a_hom.contract(&xi, &xi) <= upper + 1e-10);
        }
        // coercivity well above a tenth of the pointwise constant
        assert!(ch.a_coercivity_sampled >= 0.1 * 2.0);
    }

    #[test]
    fn averaged_stress_contracts_to_a_hom() {
        let (t, set) = effective_tensors(&cell(0.25, 32), &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        let solver = StokesCellSolver::new(&cell(0.25, 32), &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        let zero = VectorField::zeros(solver.grid());
        for k in 0..3 {
            for l in 0..3 {
                // (1/|Yp|) a(M^k + chi^k, M^l) equals the effective tensor entry
                let avg = solver.energy_pair(&SYM_BASIS[k], &set.chi1[k], &SYM_BASIS[l], &zero) / set.porosity;
                let want = t.a_hom.contract(&SYM_BASIS[k], &SYM_BASIS[l]);
                assert!((avg - want).abs() < 1e-7, "{k}{l}: {avg} vs {want}");
            }
        }
    }

    #[test]
    fn modulated_viscosity_on_empty_cell_has_nonzero_corrector() {
        let c = cell(0.0, 16);
        let model = ViscosityModel::Modulated { nu: 1.0, amplitude: 0.5 };
        let (t, set) = effective_tensors(&c, &model, 0.0, &CellOptions::default()).unwrap();
        assert!(set.chi1[0].max_abs() > 1e-4);
        // harmonic-type lowering below the arithmetic mean
        let mean = model.cell_average(0.0, 16);
        assert!(t.a_hom.a1111 < mean.a1111);
        assert!(check_tensors(&t, 50, 1).pass(1e-8, 1e-7, 1e-8));
    }

    #[test]
    fn reconstruction_is_linear_in_the_strain() {
        let (_, set) = effective_tensors(&cell(0.25, 16), &ViscosityModel::default(), 0.0, &CellOptions::default()).unwrap();
        let v = reconstruct_velocity_corrector(&set, &[2.0, 0.0, 0.0]);
        let w = set.chi1[0].scale(2.0);
        assert!(v.axpy(-1.0, &w).max_abs() < 1e-14);
        let s = reconstruct_scalar_corrector(&set, [0.0, 3.0]);
        assert!(s.axpy(-3.0, &set.chi2[1]).max_abs() < 1e-14);
    }
}
