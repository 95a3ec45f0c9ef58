//! Bilinear quadrilateral (Q4) element integrals on a square element with
//! 2x2 Gauss quadrature.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector};

use crate::material::{
    build_m_matrix, neo_hookean_energy_stress, neo_hookean_tangent, NeoHookeanMaterial,
};

pub type Mat8 = SMatrix<f64, 8, 8>;
pub type Vec8 = SVector<f64, 8>;
pub type BMatrix = SMatrix<f64, 3, 8>;

const NODE_XI: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

/// Shape-function gradients and quadrature weights of a square element.
#[derive(Debug, Clone)]
pub struct Q4Geometry {
    pub side: f64,
    /// Quadrature weight times Jacobian determinant, per Gauss point.
    pub wdet: [f64; 4],
    /// `dn[g][a] = dN_a/dX` at Gauss point `g`.
    pub dn: [[[f64; 2]; 4]; 4],
}

impl Q4Geometry {
    pub fn square(side: f64) -> Self {
        let g = 1.0 / 3f64.sqrt();
        let points = [[-g, -g], [g, -g], [g, g], [-g, g]];
        let det = side * side / 4.0;
        let mut dn = [[[0.0; 2]; 4]; 4];
        for (gp, p) in points.iter().enumerate() {
            for (a, xi) in NODE_XI.iter().enumerate() {
                let dxi = 0.25 * xi[0] * (1.0 + xi[1] * p[1]);
                let deta = 0.25 * xi[1] * (1.0 + xi[0] * p[0]);
                dn[gp][a] = [dxi * 2.0 / side, deta * 2.0 / side];
            }
        }
        Self {
            side,
            wdet: [det; 4],
            dn,
        }
    }

    pub fn area(&self) -> f64 {
        self.side * self.side
    }

    /// Small-strain B matrix (`[exx, eyy, gxy] = B u_e`) at Gauss point `gp`.
    pub fn b_matrix(&self, gp: usize) -> BMatrix {
        let mut b = BMatrix::zeros();
        for a in 0..4 {
            let [dx, dy] = self.dn[gp][a];
            b[(0, 2 * a)] = dx;
            b[(1, 2 * a + 1)] = dy;
            b[(2, 2 * a)] = dy;
            b[(2, 2 * a + 1)] = dx;
        }
        b
    }

    /// Displacement gradient `H_iJ = du_i/dX_J` at Gauss point `gp`.
    #[inline]
    pub fn displacement_gradient(&self, gp: usize, ue: &[f64; 8]) -> Matrix2<f64> {
        let mut h = Matrix2::zeros();
        for a in 0..4 {
            let [dx, dy] = self.dn[gp][a];
            let (ux, uy) = (ue[2 * a], ue[2 * a + 1]);
            h[(0, 0)] += ux * dx;
            h[(0, 1)] += ux * dy;
            h[(1, 0)] += uy * dx;
            h[(1, 1)] += uy * dy;
        }
        h
    }
}

/// Element stiffness `t * sum_g detJ B^T D B`.
pub fn q4_stiffness(emat: &Matrix3<f64>, side: f64, thickness: f64) -> Mat8 {
    let geom = Q4Geometry::square(side);
    let mut ke = Mat8::zeros();
    for gp in 0..4 {
        let b = geom.b_matrix(gp);
        ke += b.transpose() * emat * b * (geom.wdet[gp] * thickness);
    }
    ke
}

/// Element-average von Mises matrix `(1/A) sum_g detJ B^T E M E B`, so that
/// `u_e^T kvmo u_e` is the squared element-average von Mises stress at full
/// density.
pub fn q4_vm_matrix(emat: &Matrix3<f64>, side: f64) -> Mat8 {
    let geom = Q4Geometry::square(side);
    let m = build_m_matrix();
    let core = emat.transpose() * m * emat;
    let mut k = Mat8::zeros();
    for gp in 0..4 {
        let b = geom.b_matrix(gp);
        k += b.transpose() * core * b * geom.wdet[gp];
    }
    k / geom.area()
}

/// Per-element matrices shared by every element of a uniform mesh.
#[derive(Debug, Clone)]
pub struct ElementMatrices {
    pub ke0: Mat8,
    pub kvmo: Mat8,
    pub emat: Matrix3<f64>,
}

impl ElementMatrices {
    pub fn new(emat: Matrix3<f64>, side: f64, thickness: f64) -> Self {
        Self {
            ke0: q4_stiffness(&emat, side, thickness),
            kvmo: q4_vm_matrix(&emat, side),
            emat,
        }
    }
}

/// Energy and internal force of one neo-Hookean element at unit density.
/// Returns `Err(det)` with the offending deformation-gradient determinant
/// when any Gauss point is inverted.
#[inline]
pub fn nh_energy_force(
    geom: &Q4Geometry,
    mat: &NeoHookeanMaterial,
    thickness: f64,
    ue: &[f64; 8],
) -> Result<(f64, [f64; 8]), f64> {
    let mut energy = 0.0;
    let mut f = [0.0; 8];
    for gp in 0..4 {
        let fgrad = Matrix2::identity() + geom.displacement_gradient(gp, ue);
        let Some((psi, p)) = neo_hookean_energy_stress(&fgrad, mat) else {
            return Err(fgrad.determinant());
        };
        let w = geom.wdet[gp] * thickness;
        energy += w * psi;
        for a in 0..4 {
            let [dx, dy] = geom.dn[gp][a];
            f[2 * a] += w * (p[(0, 0)] * dx + p[(0, 1)] * dy);
            f[2 * a + 1] += w * (p[(1, 0)] * dx + p[(1, 1)] * dy);
        }
    }
    Ok((energy, f))
}

/// Energy, internal force and tangent stiffness of one neo-Hookean element
/// at unit density.
pub fn nh_energy_force_tangent(
    geom: &Q4Geometry,
    mat: &NeoHookeanMaterial,
    thickness: f64,
    ue: &[f64; 8],
) -> Result<(f64, [f64; 8], Mat8), f64> {
    let (energy, f) = nh_energy_force(geom, mat, thickness, ue)?;
    let mut k = Mat8::zeros();
    for gp in 0..4 {
        let fgrad = Matrix2::identity() + geom.displacement_gradient(gp, ue);
        let t = neo_hookean_tangent(&fgrad, mat);
        let w = geom.wdet[gp] * thickness;
        // G[a][i][k][b] = sum_{J,L} dN_a/dX_J A_{iJ,kL} dN_b/dX_L
        for a in 0..4 {
            let da = geom.dn[gp][a];
            for i in 0..2 {
                // row vector over (k, L): sum_J da_J A_{iJ, kL}
                let mut row = [0.0; 4];
                for (q, r) in row.iter_mut().enumerate() {
                    *r = da[0] * t[(2 * i, q)] + da[1] * t[(2 * i + 1, q)];
                }
                for b in 0..4 {
                    let db = geom.dn[gp][b];
                    for kk in 0..2 {
                        let v = row[2 * kk] * db[0] + row[2 * kk + 1] * db[1];
                        k[(2 * a + i, 2 * b + kk)] += w * v;
                    }
                }
            }
        }
    }
    Ok((energy, f, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::plane_stress_from_young;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;

    fn rigid_modes() -> [Vec8; 3] {
        let coords = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut tx = Vec8::zeros();
        let mut ty = Vec8::zeros();
        let mut rot = Vec8::zeros();
        for a in 0..4 {
            tx[2 * a] = 1.0;
            ty[2 * a + 1] = 1.0;
            rot[2 * a] = -(coords[a][1] - 0.5);
            rot[2 * a + 1] = coords[a][0] - 0.5;
        }
        [tx, ty, rot]
    }

    /// Nodal displacements reproducing a constant strain field on the unit square.
    fn constant_strain(exx: f64, eyy: f64, gxy: f64) -> Vec8 {
        let coords = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let mut u = Vec8::zeros();
        for a in 0..4 {
            let [x, y] = coords[a];
            u[2 * a] = exx * x + 0.5 * gxy * y;
            u[2 * a + 1] = eyy * y + 0.5 * gxy * x;
        }
        u
    }

    #[test]
    fn stiffness_closed_form_entry() {
        let d = plane_stress_from_young(1.0, 0.3);
        let ke = q4_stiffness(&d, 1.0, 1.0);
        let expected = (1.0 / (1.0 - 0.09)) * (0.5 - 0.3 / 6.0);
        assert_relative_eq!(ke[(0, 0)], expected, max_relative = 1e-13);
        assert_relative_eq!(ke[(0, 0)], 0.4945, max_relative = 1e-4);
        // full 88-line reference row
        let nu = 0.3;
        let k = [
            0.5 - nu / 6.0,
            0.125 + nu / 8.0,
            -0.25 - nu / 12.0,
            -0.125 + 3.0 * nu / 8.0,
            -0.25 + nu / 12.0,
            -0.125 - nu / 8.0,
            nu / 6.0,
            0.125 - 3.0 * nu / 8.0,
        ];
        let c = 1.0 / (1.0 - nu * nu);
        for j in 0..8 {
            assert_relative_eq!(ke[(0, j)], c * k[j], epsilon = 1e-14);
        }
    }

    #[test]
    fn stiffness_zero_and_linearity() {
        assert_eq!(q4_stiffness(&Matrix3::zeros(), 0.3, 1.0), Mat8::zeros());
        let d = plane_stress_from_young(3.0, 0.25);
        let a = q4_stiffness(&d, 0.1, 1.0);
        let b = q4_stiffness(&(d * 7.5), 0.1, 1.0);
        assert!((b - a * 7.5).abs().max() < 1e-12 * b.abs().max());
        // size independent in 2D, linear in thickness
        let c = q4_stiffness(&d, 1.0, 2.0);
        assert!((c - a * 2.0).abs().max() < 1e-12 * c.abs().max());
    }

    #[test]
    fn stiffness_null_space_is_rigid_motion() {
        let d = plane_stress_from_young(1.0, 0.3);
        let ke = q4_stiffness(&d, 1.0, 1.0);
        assert!((ke - ke.transpose()).abs().max() < 1e-15);
        let norm = ke.norm();
        for m in rigid_modes() {
            let q = (m.transpose() * ke * m)[0];
            assert!(q.abs() < 1e-12 * norm, "rigid quadratic form {q}");
        }
        let eig = SymmetricEigen::new(ke).eigenvalues;
        let zeros = eig.iter().filter(|v| v.abs() < 1e-12).count();
        assert_eq!(zeros, 3);
        assert!(eig.iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn vm_matrix_properties() {
        let (e, nu) = (1.0, 0.3);
        let d = plane_stress_from_young(e, nu);
        let k = q4_vm_matrix(&d, 1.0);
        assert!((k - k.transpose()).abs().max() < 1e-14);
        for m in rigid_modes() {
            assert!((m.transpose() * k * m)[0].abs() < 1e-12);
        }
        assert!(SymmetricEigen::new(k).eigenvalues.iter().all(|&v| v > -1e-12));

        let delta = 1e-3;
        let u = constant_strain(delta, 0.0, 0.0);
        let q = (u.transpose() * k * u)[0];
        let expected = (e * delta / (1.0 - nu * nu)).powi(2) * (1.0 - nu + nu * nu);
        assert_relative_eq!(q, expected, max_relative = 1e-12);

        let k2 = q4_vm_matrix(&(d * 3.0), 1.0);
        assert!((k2 - k * 9.0).abs().max() < 1e-12 * k2.abs().max());
    }

    #[test]
    fn nh_internal_force_is_energy_gradient() {
        let mat = NeoHookeanMaterial::new(1e6, 1e-7).unwrap();
        let geom = Q4Geometry::square(0.5);
        let ue = [0.0, 0.0, 0.03, -0.01, 0.05, 0.02, -0.01, 0.04];
        let (_, f, k) = nh_energy_force_tangent(&geom, &mat, 1.0, &ue).unwrap();
        let h = 1e-7;
        for d in 0..8 {
            let mut up = ue;
            up[d] += h;
            let mut um = ue;
            um[d] -= h;
            let (ep, fp) = nh_energy_force(&geom, &mat, 1.0, &up).unwrap();
            let (em, fm) = nh_energy_force(&geom, &mat, 1.0, &um).unwrap();
            let fd = (ep - em) / (2.0 * h);
            assert!((fd - f[d]).abs() < 1e-5 * f.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            for r in 0..8 {
                let fdk = (fp[r] - fm[r]) / (2.0 * h);
                assert!(
                    (fdk - k[(r, d)]).abs() < 1e-5 * k.abs().max(),
                    "K[{r},{d}] {} vs {fdk}",
                    k[(r, d)]
                );
            }
        }
    }

    #[test]
    fn nh_tangent_at_rest_matches_plane_strain_stiffness() {
        let mat = NeoHookeanMaterial::new(1e6, 1e-8).unwrap();
        let lin = mat.linearized(crate::Kinematics::PlaneStrain).unwrap();
        let ke = q4_stiffness(&crate::material::plane_strain_matrix(&lin), 0.2, 1.0);
        let geom = Q4Geometry::square(0.2);
        let (e, f, k) = nh_energy_force_tangent(&geom, &mat, 1.0, &[0.0; 8]).unwrap();
        assert!(e.abs() < 1e-6);
        assert!(f.iter().all(|v| v.abs() < 1e-6));
        assert!((k - ke).abs().max() < 1e-9 * ke.abs().max());
    }

    #[test]
    fn nh_detects_inversion() {
        let mat = NeoHookeanMaterial::new(1e6, 1e-8).unwrap();
        let geom = Q4Geometry::square(1.0);
        // flip the element through its left edge
        let ue = [0.0, 0.0, -2.0, 0.0, -2.0, 0.0, 0.0, 0.0];
        assert!(nh_energy_force(&geom, &mat, 1.0, &ue).is_err());
    }
}
