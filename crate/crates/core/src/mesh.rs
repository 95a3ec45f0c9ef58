//! Structured Q4 grid over a rectangular design domain.
//!
//! Nodes are numbered row-major from the top-left corner
//! (`id = row * (nx + 1) + col`), elements likewise (`id = row * nx + col`).
//! Element connectivity is counter-clockwise in physical coordinates
//! (y pointing up): bottom-left, bottom-right, top-right, top-left.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub node_coords: Vec<[f64; 2]>,
    pub elem_conn: Vec<[usize; 4]>,
}

/// Clamped left edge plus one point load on the right edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub fixed_dofs: Vec<usize>,
    pub load_node: usize,
    pub load_dof_pair: (usize, usize),
    pub load_vector: (f64, f64),
}

/// Builds the `nx` x `ny` grid spanning `width` x `height` meters.
pub fn build_grid(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return invalid(format!("element counts must be positive, got {nx}x{ny}"));
    }
    if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
        return invalid(format!("domain size must be positive, got {width}x{height}"));
    }
    let dx = width / nx as f64;
    let dy = height / ny as f64;
    let mut node_coords = Vec::with_capacity((nx + 1) * (ny + 1));
    for row in 0..=ny {
        for col in 0..=nx {
            node_coords.push([col as f64 * dx, height - row as f64 * dy]);
        }
    }
    let stride = nx + 1;
    let mut elem_conn = Vec::with_capacity(nx * ny);
    for row in 0..ny {
        for col in 0..nx {
            let top_left = row * stride + col;
            let bottom_left = top_left + stride;
            elem_conn.push([bottom_left, bottom_left + 1, top_left + 1, top_left]);
        }
    }
    Ok(Mesh {
        nx,
        ny,
        width,
        height,
        node_coords,
        elem_conn,
    })
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.n_nodes()
    }

    pub fn node_id(&self, row: usize, col: usize) -> usize {
        row * (self.nx + 1) + col
    }

    /// Side length of the (square) elements. Uses the x spacing.
    pub fn element_side(&self) -> f64 {
        self.width / self.nx as f64
    }

    pub fn element_area(&self) -> f64 {
        (self.width / self.nx as f64) * (self.height / self.ny as f64)
    }

    pub fn is_square_grid(&self) -> bool {
        let dx = self.width / self.nx as f64;
        let dy = self.height / self.ny as f64;
        ((dx - dy) / dx).abs() < 1e-12
    }

    pub fn left_edge_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.ny).map(move |row| self.node_id(row, 0))
    }

    pub fn right_edge_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.ny).map(move |row| self.node_id(row, self.nx))
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let [bl, _, tr, _] = self.elem_conn[e];
        let a = self.node_coords[bl];
        let b = self.node_coords[tr];
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }

    /// The 8 global dof indices of element `e`, `(x, y)` per node in
    /// counter-clockwise node order.
    pub fn element_dofs(&self, e: usize) -> Result<[usize; 8]> {
        if e >= self.n_elements() {
            return invalid(format!("element {e} out of range (n = {})", self.n_elements()));
        }
        Ok(self.element_dofs_unchecked(e))
    }

    #[inline]
    pub(crate) fn element_dofs_unchecked(&self, e: usize) -> [usize; 8] {
        let c = self.elem_conn[e];
        [
            2 * c[0],
            2 * c[0] + 1,
            2 * c[1],
            2 * c[1] + 1,
            2 * c[2],
            2 * c[2] + 1,
            2 * c[3],
            2 * c[3] + 1,
        ]
    }
}

/// Clamps the left edge and applies `magnitude` at angle `angle` (radians,
/// measured counter-clockwise from +x) to the right-edge node in `load_row`.
pub fn make_boundary(
    mesh: &Mesh,
    load_row: usize,
    angle: f64,
    magnitude: f64,
) -> Result<BoundaryConditions> {
    if load_row > mesh.ny {
        return invalid(format!("load row {load_row} outside 0..={}", mesh.ny));
    }
    if !angle.is_finite() || !magnitude.is_finite() {
        return invalid("load angle and magnitude must be finite");
    }
    let fixed_dofs = mesh
        .left_edge_nodes()
        .flat_map(|n| [2 * n, 2 * n + 1])
        .collect();
    let load_node = mesh.node_id(load_row, mesh.nx);
    Ok(BoundaryConditions {
        fixed_dofs,
        load_node,
        load_dof_pair: (2 * load_node, 2 * load_node + 1),
        load_vector: (magnitude * angle.cos(), magnitude * angle.sin()),
    })
}

impl BoundaryConditions {
    /// Global load vector of length `n_dofs`.
    pub fn load(&self, n_dofs: usize) -> Vec<f64> {
        let mut p = vec![0.0; n_dofs];
        p[self.load_dof_pair.0] += self.load_vector.0;
        p[self.load_dof_pair.1] += self.load_vector.1;
        p
    }

    pub fn load_norm(&self) -> f64 {
        self.load_vector.0.hypot(self.load_vector.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_single_element() {
        let m = build_grid(1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 1);
        let corners: HashSet<_> = m
            .node_coords
            .iter()
            .map(|c| (c[0] as i64, c[1] as i64))
            .collect();
        assert_eq!(corners, HashSet::from([(0, 0), (1, 0), (0, 1), (1, 1)]));
        let dofs = m.element_dofs(0).unwrap();
        let set: HashSet<_> = dofs.iter().copied().collect();
        assert_eq!(set, (0..8).collect());
    }

    #[test]
    fn grid_sizes() {
        let m = build_grid(50, 50, 1.0, 1.0).unwrap();
        assert_eq!((m.n_nodes(), m.n_elements()), (2601, 2500));
        let max = (0..m.n_elements())
            .flat_map(|e| m.element_dofs(e).unwrap())
            .max()
            .unwrap();
        assert_eq!(max, 2 * 2601 - 1);
        let m = build_grid(32, 32, 1.0, 1.0).unwrap();
        assert_eq!((m.n_nodes(), m.n_elements()), (1089, 1024));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(build_grid(0, 3, 1.0, 1.0).is_err());
        assert!(build_grid(3, 3, 0.0, 1.0).is_err());
        assert!(build_grid(3, 3, 1.0, -1.0).is_err());
    }

    #[test]
    fn connectivity_is_ccw_square() {
        let m = build_grid(4, 3, 2.0, 1.5).unwrap();
        let side = 0.5;
        for conn in &m.elem_conn {
            let p: Vec<_> = conn.iter().map(|&n| m.node_coords[n]).collect();
            assert!((p[1][0] - p[0][0] - side).abs() < 1e-15);
            assert_eq!(p[1][1], p[0][1]);
            assert!((p[2][1] - p[1][1] - side).abs() < 1e-15);
            assert_eq!(p[2][0], p[1][0]);
            assert_eq!(p[3][1], p[2][1]);
            assert_eq!(p[3][0], p[0][0]);
            // shoelace area positive => counter-clockwise
            let area: f64 = (0..4)
                .map(|i| {
                    let (a, b) = (p[i], p[(i + 1) % 4]);
                    a[0] * b[1] - b[0] * a[1]
                })
                .sum::<f64>()
                / 2.0;
            assert!(area > 0.0);
        }
        let total: f64 = (0..m.n_elements()).map(|_| m.element_area()).sum();
        assert_eq!(total, 3.0);
    }

    #[test]
    fn adjacent_elements_share_an_edge() {
        let m = build_grid(2, 2, 1.0, 1.0).unwrap();
        let a: HashSet<_> = m.element_dofs(0).unwrap().into_iter().collect();
        let b: HashSet<_> = m.element_dofs(1).unwrap().into_iter().collect();
        let c: HashSet<_> = m.element_dofs(2).unwrap().into_iter().collect();
        assert_eq!(a.intersection(&b).count(), 4);
        assert_eq!(a.intersection(&c).count(), 4);
        assert!(m.element_dofs(4).is_err());
    }

    #[test]
    fn edge_sets_partition() {
        let m = build_grid(5, 7, 1.0, 1.4).unwrap();
        let left: HashSet<_> = m.left_edge_nodes().collect();
        let right: HashSet<_> = m.right_edge_nodes().collect();
        assert_eq!(left.len(), 8);
        assert_eq!(right.len(), 8);
        assert!(left.is_disjoint(&right));
        assert!(left.iter().all(|n| n % 6 == 0));
    }

    #[test]
    fn boundary_loads() {
        let m = build_grid(4, 4, 1.0, 1.0).unwrap();
        let bc = make_boundary(&m, 2, 0.0, 1.0).unwrap();
        assert_eq!(bc.load_vector, (1.0, 0.0));
        assert_eq!(bc.load_node, m.node_id(2, 4));

        let bc = make_boundary(&m, 0, PI / 2.0, 150_000.0).unwrap();
        assert!(bc.load_vector.0.abs() < 1e-10);
        assert_eq!(bc.load_vector.1, 150_000.0);

        let bc = make_boundary(&m, 4, PI, 2.0).unwrap();
        assert_eq!(bc.load_vector.0, -2.0);
        assert!(bc.load_vector.1.abs() < 1e-15);
        assert_eq!(bc.fixed_dofs.len(), 2 * (m.ny + 1));
        assert!(!bc.fixed_dofs.contains(&bc.load_dof_pair.0));
        assert!(!bc.fixed_dofs.contains(&bc.load_dof_pair.1));

        assert!(make_boundary(&m, 5, 0.0, 1.0).is_err());
    }

    #[test]
    fn deterministic() {
        let a = build_grid(7, 5, 1.0, 0.7).unwrap();
        let b = build_grid(7, 5, 1.0, 0.7).unwrap();
        assert_eq!(a, b);
    }
}
