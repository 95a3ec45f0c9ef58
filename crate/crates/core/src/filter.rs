//! Linear cone density filter.

use std::collections::BTreeSet;

use crate::error::{invalid, Result};
use crate::mesh::Mesh;
use crate::sparse::CsrMatrix;

/// Row-normalized filter matrix `W` with
/// `W_ij ∝ max(0, r_min - |c_i - c_j|)`.
#[derive(Debug, Clone)]
pub struct DensityFilter {
    pub radius: f64,
    w: CsrMatrix,
    wt: CsrMatrix,
}

pub fn build_filter(mesh: &Mesh, r_min: f64) -> Result<DensityFilter> {
    if !(r_min > 0.0) || !r_min.is_finite() {
        return invalid(format!("filter radius must be positive, got {r_min}"));
    }
    let n = mesh.n_elements();
    let dx = mesh.width / mesh.nx as f64;
    let dy = mesh.height / mesh.ny as f64;
    let kx = (r_min / dx).ceil() as isize;
    let ky = (r_min / dy).ceil() as isize;
    let mut rows = vec![BTreeSet::new(); n];
    let mut weights = vec![Vec::new(); n];
    for row in 0..mesh.ny as isize {
        for col in 0..mesh.nx as isize {
            let i = (row * mesh.nx as isize + col) as usize;
            for r2 in (row - ky).max(0)..=(row + ky).min(mesh.ny as isize - 1) {
                for c2 in (col - kx).max(0)..=(col + kx).min(mesh.nx as isize - 1) {
                    let d = (((c2 - col) as f64 * dx).powi(2) + ((r2 - row) as f64 * dy).powi(2)).sqrt();
                    let w = r_min - d;
                    if w > 0.0 {
                        let j = (r2 * mesh.nx as isize + c2) as usize;
                        rows[i].insert(j);
                        weights[i].push((j, w));
                    }
                }
            }
        }
    }
    let mut w = CsrMatrix::from_pattern(n, &rows);
    for (i, ws) in weights.iter().enumerate() {
        let total: f64 = ws.iter().map(|(_, v)| v).sum();
        for &(j, v) in ws {
            w.add(i, j, v / total);
        }
    }
    let wt = w.transpose();
    Ok(DensityFilter { radius: r_min, w, wt })
}

impl DensityFilter {
    pub fn matrix(&self) -> &CsrMatrix {
        &self.w
    }

    /// Filtered (physical) densities `W x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w.mul_vec(x)
    }

    /// Maps sensitivities with respect to physical densities back to the
    /// design variables: `W^T g`.
    pub fn chain_rule(&self, grad_physical: &[f64]) -> Vec<f64> {
        self.wt.mul_vec(grad_physical)
    }
}
