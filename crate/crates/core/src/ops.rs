//! Spatial operators on the staggered grid.
//!
//! Discrete inner products carry the cell measure `h^2` for scalars and the
//! face measure `h^2` for velocities, so that `<div u, q> = -<u, grad q>`
//! holds exactly. Matrix-valued operators are assembled from per-quadrature
//! stencils of a bilinear form and are therefore symmetric by construction.

use crate::error::{Error, Result};
use crate::fields::{Axis, Grid, ScalarField, VectorField};
use crate::linalg::{conjugate_gradient, CsrMatrix, SolveInfo};
use crate::viscosity::{Stiffness, Sym2, ViscosityModel};
use std::sync::Arc;

/// Default relative residual for iterative sub-solves.
pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;

/// Face differences on interior-pore faces; zero normal derivative elsewhere.
pub fn grad(s: &ScalarField) -> VectorField {
    let g = &s.grid;
    let inv_h = 1.0 / g.h();
    let values = (0..g.n_active())
        .map(|d| {
            let (lo, hi) = g.face_cells(g.dof_face(d));
            let lo = s.values[g.cell_dof(lo.unwrap()).unwrap()];
            let hi = s.values[g.cell_dof(hi.unwrap()).unwrap()];
            (hi - lo) * inv_h
        })
        .collect();
    VectorField { grid: g.clone(), values, t: s.t }
}

/// Net outward face flux per pore cell divided by `h`.
pub fn div(u: &VectorField) -> ScalarField {
    let g = &u.grid;
    let inv_h = 1.0 / g.h();
    let values = (0..g.n_pore())
        .map(|d| {
            let (i, j) = g.cell_ij(g.dof_cell(d));
            let (i, j) = (i as isize, j as isize);
            (u.ux(i + 1, j) - u.ux(i, j) + u.uy(i, j + 1) - u.uy(i, j)) * inv_h
        })
        .collect();
    ScalarField { grid: g.clone(), values, t: u.t, role: crate::fields::Role::Generic }
}

/// Matrix of `-Delta` with homogeneous Neumann conditions on every pore boundary
/// (positive semidefinite, constants in the kernel).
pub fn laplacian_matrix(g: &Grid) -> CsrMatrix {
    let w = 1.0 / (g.h() * g.h());
    let mut t = Vec::with_capacity(5 * g.n_pore());
    for d in 0..g.n_active() {
        let (lo, hi) = g.face_cells(g.dof_face(d));
        let a = g.cell_dof(lo.unwrap()).unwrap();
        let b = g.cell_dof(hi.unwrap()).unwrap();
        t.push((a, a, w));
        t.push((b, b, w));
        t.push((a, b, -w));
        t.push((b, a, -w));
    }
    for d in 0..g.n_pore() {
        t.push((d, d, 0.0));
    }
    CsrMatrix::from_triplets(g.n_pore(), &t)
}

/// `Delta s` with Neumann closure, i.e. `div(grad s)`.
pub fn laplace_apply(s: &ScalarField) -> ScalarField {
    div(&grad(s))
}

/// Zero-mean solution of `-Delta s = rhs` with homogeneous Neumann conditions.
pub fn laplace_neumann_solve(rhs: &ScalarField, tol: f64) -> Result<ScalarField> {
    laplace_neumann_solve_with(rhs, tol, DEFAULT_MAX_ITER).map(|(s, _)| s)
}

pub fn laplace_neumann_solve_with(
    rhs: &ScalarField,
    tol: f64,
    max_iter: usize,
) -> Result<(ScalarField, SolveInfo)> {
    let g = &rhs.grid;
    let n = rhs.values.len() as f64;
    let rms = (rhs.values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    let mut out = ScalarField::zeros(g).with_time(rhs.t);
    if rms == 0.0 {
        return Ok((out, SolveInfo { iterations: 0, relative_residual: 0.0 }));
    }
    let mean = rhs.mean();
    if mean.abs() > tol * rms {
        return Err(Error::Incompatible { mean });
    }
    let b: Vec<f64> = rhs.values.iter().map(|v| v - mean).collect();
    let a = laplacian_matrix(g);
    let info = conjugate_gradient(&a, &b, &mut out.values, tol, max_iter)?;
    out.subtract_mean();
    Ok((out, info))
}

/// Sparse linear functional `sum coef * u[dof]`.
pub(crate) type Stencil = Vec<(usize, f64)>;

fn add_outer(t: &mut Vec<(usize, usize, f64)>, a: &Stencil, b: &Stencil, w: f64) {
    if w == 0.0 {
        return;
    }
    for &(i, ca) in a {
        for &(j, cb) in b {
            t.push((i, j, w * ca * cb));
        }
    }
}

fn eval(s: &Stencil, v: &[f64]) -> f64 {
    s.iter().map(|&(d, c)| c * v[d]).sum()
}

/// Shear rate `D12` at grid node `(i, j)` with its quadrature weight.
///
/// Interior nodes with four pore neighbours get weight 1, convex obstacle
/// corners (three pore cells) 3/4. Nodes on a flat obstacle wall carry the
/// free-slip condition and are dropped. On the outer wall the tangential
/// velocity is closed by an odd ghost value (no slip) and the node gets
/// weight 1/2.
pub(crate) fn node_shear(g: &Grid, i: isize, j: isize) -> Option<(f64, Stencil)> {
    let h = g.h();
    let n = g.n() as isize;
    let around = [g.cell_at(i - 1, j - 1), g.cell_at(i, j - 1), g.cell_at(i - 1, j), g.cell_at(i, j)];
    let existing = around.iter().filter(|c| c.is_some()).count();
    let pores = around.iter().filter(|c| c.is_some_and(|c| g.is_pore(c))).count();
    let mut st = Stencil::new();
    let weight;
    if existing == 4 {
        weight = match pores {
            4 => 1.0,
            3 => 0.75,
            _ => return None,
        };
        let c = 0.5 / h;
        for (dof, coef) in [
            (g.xdof(i, j), c),
            (g.xdof(i, j - 1), -c),
            (g.ydof(i, j), c),
            (g.ydof(i - 1, j), -c),
        ] {
            if let Some(d) = dof {
                st.push((d, coef));
            }
        }
    } else if existing == 2 {
        if pores != 2 {
            return None;
        }
        weight = 0.5;
        let c = 1.0 / h;
        let term = if i == 0 {
            g.ydof(0, j).map(|d| (d, c))
        } else if i == n {
            g.ydof(n - 1, j).map(|d| (d, -c))
        } else if j == 0 {
            g.xdof(i, 0).map(|d| (d, c))
        } else {
            g.xdof(i, n - 1).map(|d| (d, -c))
        };
        st.extend(term);
    } else {
        return None;
    }
    if st.is_empty() {
        None
    } else {
        Some((weight, st))
    }
}

fn node_range(g: &Grid) -> usize {
    if g.is_periodic() {
        g.n()
    } else {
        g.n() + 1
    }
}

/// Per-cell stencils of `D11`, `D22` and the corner-averaged `D12`.
pub(crate) fn cell_strain_stencils(g: &Grid, c: usize, with_shear: bool) -> (Stencil, Stencil, Stencil) {
    let h = g.h();
    let (i, j) = g.cell_ij(c);
    let (i, j) = (i as isize, j as isize);
    let mut s11 = Stencil::new();
    let mut s22 = Stencil::new();
    s11.extend(g.xdof(i + 1, j).map(|d| (d, 1.0 / h)));
    s11.extend(g.xdof(i, j).map(|d| (d, -1.0 / h)));
    s22.extend(g.ydof(i, j + 1).map(|d| (d, 1.0 / h)));
    s22.extend(g.ydof(i, j).map(|d| (d, -1.0 / h)));
    let mut s12 = Stencil::new();
    if with_shear {
        for (a, b) in [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)] {
            if let Some((_, st)) = node_shear(g, a, b) {
                s12.extend(st.into_iter().map(|(d, v)| (d, 0.25 * v)));
            }
        }
    }
    (s11, s22, s12)
}

/// Cell-centred symmetric strain `[D11, D22, D12]` on each pore cell.
pub fn strain(u: &VectorField) -> Vec<Sym2> {
    let g = &u.grid;
    (0..g.n_pore())
        .map(|d| {
            let (s11, s22, s12) = cell_strain_stencils(g, g.dof_cell(d), true);
            [eval(&s11, &u.values), eval(&s22, &u.values), eval(&s12, &u.values)]
        })
        .collect()
}

/// Assembled viscous bilinear form `a(u, v) = int A D(u) : D(v)` on a grid.
#[derive(Debug, Clone)]
pub struct ViscousOperator {
    grid: Arc<Grid>,
    form: CsrMatrix,
}

impl ViscousOperator {
    pub fn new(grid: &Arc<Grid>, model: &ViscosityModel, t: f64) -> Self {
        let g = grid.as_ref();
        let h2 = g.h() * g.h();
        let mut trip = Vec::new();
        for d in 0..g.n_pore() {
            let c = g.dof_cell(d);
            let a = model.eval(t, g.micro_coord(g.cell_center(c)));
            let cross = a.a1112 != 0.0 || a.a2212 != 0.0;
            let (s11, s22, s12) = cell_strain_stencils(g, c, cross);
            add_outer(&mut trip, &s11, &s11, h2 * a.a1111);
            add_outer(&mut trip, &s11, &s22, h2 * a.a1122);
            add_outer(&mut trip, &s22, &s11, h2 * a.a1122);
            add_outer(&mut trip, &s22, &s22, h2 * a.a2222);
            if cross {
                add_outer(&mut trip, &s11, &s12, 2.0 * h2 * a.a1112);
                add_outer(&mut trip, &s12, &s11, 2.0 * h2 * a.a1112);
                add_outer(&mut trip, &s22, &s12, 2.0 * h2 * a.a2212);
                add_outer(&mut trip, &s12, &s22, 2.0 * h2 * a.a2212);
            }
        }
        let nn = node_range(g);
        let h = g.h();
        for j in 0..nn {
            for i in 0..nn {
                if let Some((w, st)) = node_shear(g, i as isize, j as isize) {
                    let a = model.eval(t, g.micro_coord([i as f64 * h, j as f64 * h]));
                    add_outer(&mut trip, &st, &st, 4.0 * w * h2 * a.a1212);
                }
            }
        }
        for d in 0..g.n_active() {
            trip.push((d, d, 0.0));
        }
        Self { grid: grid.clone(), form: CsrMatrix::from_triplets(g.n_active(), &trip) }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Matrix `K` with `a(u, v) = v^T K u`.
    pub fn form_matrix(&self) -> &CsrMatrix {
        &self.form
    }

    /// `div(A D(u))` on active faces: `-K u / h^2`.
    pub fn apply(&self, u: &VectorField) -> VectorField {
        let s = -1.0 / (self.grid.h() * self.grid.h());
        let values = self.form.mul_vec(&u.values).into_iter().map(|v| v * s).collect();
        VectorField { grid: self.grid.clone(), values, t: u.t }
    }

    /// `a(u, v)`.
    pub fn form(&self, u: &VectorField, v: &VectorField) -> f64 {
        let ku = self.form.mul_vec(&u.values);
        ku.iter().zip(&v.values).map(|(a, b)| a * b).sum()
    }
}

/// `div(A D(u))` at time `t`.
pub fn viscous_apply(model: &ViscosityModel, u: &VectorField, t: f64) -> VectorField {
    ViscousOperator::new(&u.grid, model, t).apply(u)
}

/// Squared strain norm `sum |D(u)|^2 h^2` with the viscous quadrature.
pub fn strain_norm_sq(u: &VectorField) -> f64 {
    let op = ViscousOperator::new(&u.grid, &ViscosityModel::Constant(Stiffness::isotropic(0.5)), 0.0);
    op.form(u, u)
}

/// Skew-symmetric convection `1/2 [(u . grad) v + div(u (x) v)]`.
///
/// On the dual cell of every active face the neighbouring values are
/// transported by face-averaged mass fluxes; the self-term cancels against the
/// dual divergence, leaving `1/(2h) sum_e F_e v_nb`, which is exactly
/// skew-symmetric in `v`.
pub fn convect_skew(u: &VectorField, v: &VectorField) -> VectorField {
    let g = &u.grid;
    let c = 0.5 / g.h();
    let values = (0..g.n_active())
        .map(|d| {
            let (axis, i, j) = g.face_ij(g.dof_face(d));
            let (i, j) = (i as isize, j as isize);
            let s = match axis {
                Axis::X => {
                    let fe = 0.5 * (u.ux(i, j) + u.ux(i + 1, j));
                    let fw = -0.5 * (u.ux(i - 1, j) + u.ux(i, j));
                    let fn_ = 0.5 * (u.uy(i - 1, j + 1) + u.uy(i, j + 1));
                    let fs = -0.5 * (u.uy(i - 1, j) + u.uy(i, j));
                    fe * v.ux(i + 1, j) + fw * v.ux(i - 1, j) + fn_ * v.ux(i, j + 1) + fs * v.ux(i, j - 1)
                }
                Axis::Y => {
                    let fn_ = 0.5 * (u.uy(i, j) + u.uy(i, j + 1));
                    let fs = -0.5 * (u.uy(i, j - 1) + u.uy(i, j));
                    let fe = 0.5 * (u.ux(i + 1, j - 1) + u.ux(i + 1, j));
                    let fw = -0.5 * (u.ux(i, j - 1) + u.ux(i, j));
                    fn_ * v.uy(i, j + 1) + fs * v.uy(i, j - 1) + fe * v.uy(i + 1, j) + fw * v.uy(i - 1, j)
                }
            };
            c * s
        })
        .collect();
    VectorField { grid: g.clone(), values, t: u.t }
}

/// Face values of `phi grad mu` with `phi` averaged to the face.
pub fn korteweg_force(phi: &ScalarField, mu: &ScalarField) -> VectorField {
    let g = &phi.grid;
    let inv_h = 1.0 / g.h();
    let values = (0..g.n_active())
        .map(|d| {
            let (lo, hi) = g.face_cells(g.dof_face(d));
            let a = g.cell_dof(lo.unwrap()).unwrap();
            let b = g.cell_dof(hi.unwrap()).unwrap();
            0.5 * (phi.values[a] + phi.values[b]) * (mu.values[b] - mu.values[a]) * inv_h
        })
        .collect();
    VectorField { grid: g.clone(), values, t: phi.t }
}

/// `div(u phi)` with face-upwinded `phi`; boundary faces carry no flux.
pub fn advect_upwind(u: &VectorField, phi: &ScalarField) -> ScalarField {
    let g = &u.grid;
    let inv_h = 1.0 / g.h();
    let mut out = vec![0.0; g.n_pore()];
    for d in 0..g.n_active() {
        let (lo, hi) = g.face_cells(g.dof_face(d));
        let a = g.cell_dof(lo.unwrap()).unwrap();
        let b = g.cell_dof(hi.unwrap()).unwrap();
        let un = u.values[d];
        let flux = un * if un >= 0.0 { phi.values[a] } else { phi.values[b] };
        out[a] += flux * inv_h;
        out[b] -= flux * inv_h;
    }
    ScalarField { grid: g.clone(), values: out, t: phi.t, role: crate::fields::Role::Generic }
}

/// Constant symmetric diffusion tensor `K` and the form `int K grad s . grad q`.
///
/// Diagonal parts use face gradients; the off-diagonal coupling uses the
/// cell averages of the two face gradients per axis, which keeps the form
/// positive semidefinite whenever `K` is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TensorDiffusion {
    pub k: [[f64; 2]; 2],
}

impl TensorDiffusion {
    pub fn new(k: [[f64; 2]; 2]) -> Self {
        Self { k }
    }

    pub fn identity() -> Self {
        Self { k: [[1.0, 0.0], [0.0, 1.0]] }
    }

    fn k12(&self) -> f64 {
        0.5 * (self.k[0][1] + self.k[1][0])
    }

    /// Matrix `P` with `<P s, q> = b(s, q)`; equals `-div(K grad .)`.
    pub fn matrix(&self, g: &Grid) -> CsrMatrix {
        let h = g.h();
        let h2 = h * h;
        let mut trip = Vec::new();
        let grad_stencil = |f: usize| -> Stencil {
            let (lo, hi) = g.face_cells(f);
            vec![(g.cell_dof(hi.unwrap()).unwrap(), 1.0 / h), (g.cell_dof(lo.unwrap()).unwrap(), -1.0 / h)]
        };
        for d in 0..g.n_active() {
            let f = g.dof_face(d);
            let kk = match g.face_ij(f).0 {
                Axis::X => self.k[0][0],
                Axis::Y => self.k[1][1],
            };
            let st = grad_stencil(f);
            add_outer(&mut trip, &st, &st, h2 * kk);
        }
        let k12 = self.k12();
        if k12 != 0.0 {
            for d in 0..g.n_pore() {
                let (i, j) = g.cell_ij(g.dof_cell(d));
                let (i, j) = (i as isize, j as isize);
                let mut gx = Stencil::new();
                let mut gy = Stencil::new();
                for f in [g.xface(i, j), g.xface(i + 1, j)].into_iter().flatten() {
                    if g.face_dof(f).is_some() {
                        gx.extend(grad_stencil(f).into_iter().map(|(a, v)| (a, 0.5 * v)));
                    }
                }
                for f in [g.yface(i, j), g.yface(i, j + 1)].into_iter().flatten() {
                    if g.face_dof(f).is_some() {
                        gy.extend(grad_stencil(f).into_iter().map(|(a, v)| (a, 0.5 * v)));
                    }
                }
                add_outer(&mut trip, &gx, &gy, h2 * k12);
                add_outer(&mut trip, &gy, &gx, h2 * k12);
            }
        }
        for d in 0..g.n_pore() {
            trip.push((d, d, 0.0));
        }
        CsrMatrix::from_triplets(g.n_pore(), &trip).scale(1.0 / h2)
    }

    /// Normal component of `K grad s` on active faces, consistent with [`Self::matrix`].
    pub fn flux(&self, s: &ScalarField) -> VectorField {
        let g = &s.grid;
        let gr = grad(s);
        let k12 = self.k12();
        let mut values = gr.values.clone();
        // cell averages of the face gradients
        let mut gxbar = vec![0.0; g.n_cells()];
        let mut gybar = vec![0.0; g.n_cells()];
        if k12 != 0.0 {
            for d in 0..g.n_pore() {
                let c = g.dof_cell(d);
                let (i, j) = g.cell_ij(c);
                let (i, j) = (i as isize, j as isize);
                gxbar[c] = 0.5 * (gr.ux(i, j) + gr.ux(i + 1, j));
                gybar[c] = 0.5 * (gr.uy(i, j) + gr.uy(i, j + 1));
            }
        }
        for (d, v) in values.iter_mut().enumerate() {
            let f = g.dof_face(d);
            let (lo, hi) = g.face_cells(f);
            let (lo, hi) = (lo.unwrap(), hi.unwrap());
            *v = match g.face_ij(f).0 {
                Axis::X => self.k[0][0] * *v + k12 * 0.5 * (gybar[lo] + gybar[hi]),
                Axis::Y => self.k[1][1] * *v + k12 * 0.5 * (gxbar[lo] + gxbar[hi]),
            };
        }
        VectorField { grid: g.clone(), values, t: s.t }
    }

    /// `b(s, q) = int K grad s . grad q`.
    pub fn form(&self, s: &ScalarField, q: &ScalarField) -> f64 {
        self.flux(s).dot(&grad(q))
    }
}
