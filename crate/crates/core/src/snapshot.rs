//! Field snapshots: a little-endian `f64` array plus a JSON header, and a
//! legacy-VTK export of a whole flow state.

use crate::dynamics::FlowState;
use crate::error::{Error, Result};
use crate::fields::{Role, ScalarField, VectorField};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Sidecar header of a raw array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub role: Role,
    /// Array shape, slowest index first: `[n, n]` for scalars, `[n, n, 2]` for
    /// cell-centred velocity. The cell `(i, j)` sits at flat index `j * n + i`.
    pub shape: Vec<usize>,
    pub h: f64,
    pub t: f64,
    /// Cell size of the perforated domain; `None` on macro and cell grids.
    pub eps: Option<f64>,
    pub dtype: String,
    /// Value stored on solid cells.
    pub fill: String,
}

/// Header and full-grid values of a scalar field; solid cells hold `NaN`.
pub fn scalar_snapshot(f: &ScalarField, eps: Option<f64>) -> (SnapshotHeader, Vec<f64>) {
    let n = f.grid.n();
    let header = SnapshotHeader {
        role: f.role,
        shape: vec![n, n],
        h: f.grid.h(),
        t: f.t,
        eps,
        dtype: "<f8".into(),
        fill: "nan".into(),
    };
    (header, f.to_full(f64::NAN))
}

/// Header and interleaved cell-centred components of a velocity field.
pub fn vector_snapshot(u: &VectorField, eps: Option<f64>) -> (SnapshotHeader, Vec<f64>) {
    let g = &u.grid;
    let n = g.n();
    let cc = u.cell_centered();
    let values = (0..g.n_cells())
        .flat_map(|c| if g.is_pore(c) { cc[c] } else { [f64::NAN; 2] })
        .collect();
    let header = SnapshotHeader {
        role: Role::Velocity,
        shape: vec![n, n, 2],
        h: g.h(),
        t: u.t,
        eps,
        dtype: "<f8".into(),
        fill: "nan".into(),
    };
    (header, values)
}

pub fn encode_raw(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_raw(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Mismatch(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Legacy ASCII VTK structured-points file with `phi`, `mu`, `p`, the
/// velocity and a pore indicator as cell data. Solid cells carry zeros.
pub fn write_vtk<W: Write>(mut w: W, state: &FlowState, title: &str) -> Result<()> {
    let g = state.grid();
    let n = g.n();
    let h = g.h();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", n + 1, n + 1)?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {h:e} {h:e} 1")?;
    writeln!(w, "CELL_DATA {}", n * n)?;
    for (name, f) in [("phi", &state.phi), ("mu", &state.mu), ("p", &state.p)] {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in f.to_full(0.0) {
            writeln!(w, "{v:e}")?;
        }
    }
    writeln!(w, "SCALARS pore int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for &p in g.pore_mask() {
        writeln!(w, "{}", p as u8)?;
    }
    writeln!(w, "VECTORS u double")?;
    let cc = state.u.cell_centered();
    for (c, v) in cc.iter().enumerate() {
        let v = if g.is_pore(c) { *v } else { [0.0; 2] };
        writeln!(w, "{:e} {:e} 0", v[0], v[1])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Grid;
    use crate::geometry::{build_unit_cell, tile_domain, Inclusion};

    #[test]
    fn raw_round_trip_and_layout() {
        let d = tile_domain(&build_unit_cell(2, Inclusion::Ball { radius: 0.25 }, 8).unwrap(), 2).unwrap();
        let g = Grid::walled(&d).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| x + 10.0 * y);
        let (head, vals) = scalar_snapshot(&f, Some(d.eps()));
        assert_eq!(head.shape, vec![16, 16]);
        let back = decode_raw(&encode_raw(&vals)).unwrap();
        assert_eq!(back.len(), 256);
        for (c, v) in back.iter().enumerate() {
            if g.is_pore(c) {
                let [x, y] = g.cell_center(c);
                assert_eq!(*v, x + 10.0 * y);
            } else {
                assert!(v.is_nan());
            }
        }
        assert!(decode_raw(&[0u8; 7]).is_err());
        let json = serde_json::to_string(&head).unwrap();
        assert!(json.contains("\"role\":\"generic\"") && json.contains("\"eps\":0.5"));
    }

    #[test]
    fn vector_snapshot_interleaves_components() {
        let g = Grid::unit_box(4).unwrap();
        let u = VectorField::from_fn(&g, |_, _| [1.0, -2.0]);
        let (head, vals) = vector_snapshot(&u, None);
        assert_eq!(head.shape, vec![4, 4, 2]);
        assert_eq!(vals.len(), 32);
        // interior cell: both adjacent faces carry the constant
        let c = g.cell_index(1, 1);
        assert_eq!(&vals[2 * c..2 * c + 2], &[1.0, -2.0]);
    }
}
