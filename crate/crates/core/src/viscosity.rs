//! Fourth-order viscosity tensors acting on symmetric 2x2 matrices.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

/// Symmetric 2x2 matrix stored as `[xx, yy, xy]`.
pub type Sym2 = [f64; 3];

/// Frobenius inner product of two symmetric matrices.
pub fn sym_dot(a: &Sym2, b: &Sym2) -> f64 {
    a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]
}

/// Tensor with major and minor symmetries in two dimensions: six independent
/// components `A_1111, A_1122, A_2222, A_1112, A_2212, A_1212`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stiffness {
    pub a1111: f64,
    pub a1122: f64,
    pub a2222: f64,
    pub a1112: f64,
    pub a2212: f64,
    pub a1212: f64,
}

impl Stiffness {
    /// `A Xi = 2 nu Xi`.
    pub fn isotropic(nu: f64) -> Self {
        Self { a1111: 2.0 * nu, a1122: 0.0, a2222: 2.0 * nu, a1112: 0.0, a2212: 0.0, a1212: nu }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            a1111: s * self.a1111,
            a1122: s * self.a1122,
            a2222: s * self.a2222,
            a1112: s * self.a1112,
            a2212: s * self.a2212,
            a1212: s * self.a1212,
        }
    }

    pub fn apply(&self, x: &Sym2) -> Sym2 {
        [
            self.a1111 * x[0] + self.a1122 * x[1] + 2.0 * self.a1112 * x[2],
            self.a1122 * x[0] + self.a2222 * x[1] + 2.0 * self.a2212 * x[2],
            self.a1112 * x[0] + self.a2212 * x[1] + 2.0 * self.a1212 * x[2],
        ]
    }

    /// `A Xi : Theta`.
    pub fn contract(&self, xi: &Sym2, theta: &Sym2) -> f64 {
        sym_dot(&self.apply(xi), theta)
    }

    /// Representation in the orthonormal basis `E11, E22, (E12 + E21)/sqrt 2`.
    pub fn mandel(&self) -> [[f64; 3]; 3] {
        [
            [self.a1111, self.a1122, SQRT_2 * self.a1112],
            [self.a1122, self.a2222, SQRT_2 * self.a2212],
            [SQRT_2 * self.a1112, SQRT_2 * self.a2212, 2.0 * self.a1212],
        ]
    }

    pub fn from_mandel(m: &[[f64; 3]; 3]) -> Self {
        Self {
            a1111: m[0][0],
            a1122: 0.5 * (m[0][1] + m[1][0]),
            a2222: m[1][1],
            a1112: 0.5 * (m[0][2] + m[2][0]) / SQRT_2,
            a2212: 0.5 * (m[1][2] + m[2][1]) / SQRT_2,
            a1212: 0.5 * m[2][2],
        }
    }

    /// Voigt layout `C_IJ = A_ijkl`, `I, J` over `(11, 22, 12)`.
    pub fn voigt(&self) -> [[f64; 3]; 3] {
        [
            [self.a1111, self.a1122, self.a1112],
            [self.a1122, self.a2222, self.a2212],
            [self.a1112, self.a2212, self.a1212],
        ]
    }

    /// Full component array `A[i][j][k][l]`.
    pub fn components(&self) -> [[[[f64; 2]; 2]; 2]; 2] {
        let mut t = [[[[0.0; 2]; 2]; 2]; 2];
        let v = self.voigt();
        let idx = |i: usize, j: usize| if i == j { i } else { 2 };
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        t[i][j][k][l] = v[idx(i, j)][idx(k, l)];
                    }
                }
            }
        }
        t
    }

    /// Extreme values of `A Xi : Xi` over unit `|Xi|`.
    pub fn eigen_bounds(&self) -> (f64, f64) {
        let m = self.mandel();
        let mat = Matrix3::from_fn(|i, j| m[i][j]);
        let e = SymmetricEigen::new(mat).eigenvalues;
        (e.min(), e.max())
    }
}

impl Default for Stiffness {
    fn default() -> Self {
        Self::isotropic(1.0)
    }
}

type Evaluator = dyn Fn(f64, [f64; 2]) -> Stiffness + Send + Sync;

/// Viscosity tensor field `A(t, y)` over the reference cell.
#[derive(Clone)]
pub enum ViscosityModel {
    /// `A Xi = 2 nu Xi`.
    Isotropic { nu: f64 },
    /// Spatially and temporally constant tensor.
    Constant(Stiffness),
    /// Isotropic viscosity modulated across the cell,
    /// `2 nu (1 + amplitude cos(2 pi y1) cos(2 pi y2))`.
    Modulated { nu: f64, amplitude: f64 },
    /// User-supplied evaluator with declared bounds `kappa1 <= A Xi : Xi / |Xi|^2 <= kappa2`.
    Custom { eval: Arc<Evaluator>, kappa1: f64, kappa2: f64, time_dependent: bool },
}

impl fmt::Debug for ViscosityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Isotropic { nu } => write!(f, "Isotropic {{ nu: {nu} }}"),
            Self::Constant(s) => write!(f, "Constant({s:?})"),
            Self::Modulated { nu, amplitude } => {
                write!(f, "Modulated {{ nu: {nu}, amplitude: {amplitude} }}")
            }
            Self::Custom { kappa1, kappa2, .. } => {
                write!(f, "Custom {{ kappa1: {kappa1}, kappa2: {kappa2} }}")
            }
        }
    }
}

impl Default for ViscosityModel {
    fn default() -> Self {
        Self::Isotropic { nu: 1.0 }
    }
}

impl ViscosityModel {
    pub fn eval(&self, t: f64, y: [f64; 2]) -> Stiffness {
        match self {
            Self::Isotropic { nu } => Stiffness::isotropic(*nu),
            Self::Constant(s) => *s,
            Self::Modulated { nu, amplitude } => {
                let m = 1.0 + amplitude * (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).cos();
                Stiffness::isotropic(nu * m)
            }
            Self::Custom { eval, .. } => eval(t, y),
        }
    }

    /// Coercivity constant `kappa1`.
    pub fn kappa1(&self) -> f64 {
        match self {
            Self::Isotropic { nu } => 2.0 * nu,
            Self::Constant(s) => s.eigen_bounds().0,
            Self::Modulated { nu, amplitude } => 2.0 * nu * (1.0 - amplitude.abs()),
            Self::Custom { kappa1, .. } => *kappa1,
        }
    }

    /// Upper bound `kappa2`.
    pub fn kappa2(&self) -> f64 {
        match self {
            Self::Isotropic { nu } => 2.0 * nu,
            Self::Constant(s) => s.eigen_bounds().1,
            Self::Modulated { nu, amplitude } => 2.0 * nu * (1.0 + amplitude.abs()),
            Self::Custom { kappa2, .. } => *kappa2,
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, Self::Custom { time_dependent: true, .. })
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, Self::Isotropic { .. } | Self::Constant(_))
    }

    /// Cell average `int_Y A(t, y) dy` sampled on an `n x n` midpoint grid.
    pub fn cell_average(&self, t: f64, n: usize) -> Stiffness {
        let mut m = [[0.0; 3]; 3];
        for j in 0..n {
            for i in 0..n {
                let y = [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64];
                let s = self.eval(t, y).mandel();
                for a in 0..3 {
                    for b in 0..3 {
                        m[a][b] += s[a][b];
                    }
                }
            }
        }
        let w = 1.0 / (n * n) as f64;
        m.iter_mut().flatten().for_each(|v| *v *= w);
        Stiffness::from_mandel(&m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn general() -> Stiffness {
        Stiffness { a1111: 3.0, a1122: 0.4, a2222: 2.5, a1112: 0.2, a2212: -0.3, a1212: 0.9 }
    }

    #[test]
    fn isotropic_action() {
        let s = Stiffness::isotropic(1.5);
        let x = [1.0, -2.0, 0.5];
        assert_eq!(s.apply(&x), [3.0, -6.0, 1.5]);
        let (lo, hi) = s.eigen_bounds();
        assert!((lo - 3.0).abs() < 1e-12 && (hi - 3.0).abs() < 1e-12);
    }

    #[test]
    fn voigt_and_mandel_roundtrip() {
        let s = general();
        assert_eq!(Stiffness::from_mandel(&s.mandel()), s);
        let t = s.components();
        assert_eq!(t[0][1][1][0], s.a1212);
        assert_eq!(t[1][0][0][0], s.a1112);
        assert_eq!(t[0][0][1][1], s.a1122);
        // A Xi : Theta through components equals the compact contraction
        let xi = [0.3, -0.7, 0.2];
        let th = [1.1, 0.4, -0.6];
        let full = |x: &Sym2| [[x[0], x[2]], [x[2], x[1]]];
        let (fx, ft) = (full(&xi), full(&th));
        let mut c = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        c += t[i][j][k][l] * fx[k][l] * ft[i][j];
                    }
                }
            }
        }
        assert!((c - s.contract(&xi, &th)).abs() < 1e-14);
    }

    #[test]
    fn modulated_bounds_hold_on_samples() {
        let m = ViscosityModel::Modulated { nu: 1.0, amplitude: 0.5 };
        for k in 0..50 {
            let y = [(k as f64 * 0.137).fract(), (k as f64 * 0.291).fract()];
            let (lo, hi) = m.eval(0.0, y).eigen_bounds();
            assert!(lo >= m.kappa1() - 1e-12 && hi <= m.kappa2() + 1e-12);
        }
        let avg = m.cell_average(0.0, 16);
        assert!((avg.a1111 - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn major_symmetry(x in prop::array::uniform3(-2.0f64..2.0), t in prop::array::uniform3(-2.0f64..2.0)) {
            let s = general();
            prop_assert!((s.contract(&x, &t) - s.contract(&t, &x)).abs() < 1e-12);
        }

        #[test]
        fn coercive_on_samples(x in prop::array::uniform3(-2.0f64..2.0)) {
            let s = general();
            let (lo, _) = s.eigen_bounds();
            prop_assert!(lo > 0.0);
            prop_assert!(s.contract(&x, &x) >= lo * sym_dot(&x, &x) - 1e-12);
        }
    }
}
