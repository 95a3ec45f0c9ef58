//! Constitutive models: isotropic linear elasticity parameterized by bulk and
//! shear moduli, and compressible neo-Hookean hyperelasticity in plane strain.

use nalgebra::{Matrix2, Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// 2D idealization used to reduce the 3D constitutive law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kinematics {
    PlaneStress,
    PlaneStrain,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearElasticMaterial {
    /// Bulk modulus, Pa.
    pub kappa: f64,
    /// Shear modulus, Pa.
    pub mu: f64,
    pub mode: Kinematics,
}

impl LinearElasticMaterial {
    pub fn new(kappa: f64, mu: f64, mode: Kinematics) -> Result<Self> {
        if !(kappa > 0.0 && mu > 0.0) || !kappa.is_finite() || !mu.is_finite() {
            return invalid(format!("moduli must be positive: kappa={kappa}, mu={mu}"));
        }
        let mat = Self { kappa, mu, mode };
        let nu = mat.poisson();
        if !(0.0..0.5).contains(&nu) {
            return invalid(format!("Poisson ratio {nu} outside [0, 0.5)"));
        }
        Ok(mat)
    }

    pub fn from_young(e: f64, nu: f64, mode: Kinematics) -> Result<Self> {
        if !(e > 0.0) || !(0.0..0.5).contains(&nu) {
            return invalid(format!("need E > 0 and 0 <= nu < 0.5, got E={e}, nu={nu}"));
        }
        Self::new(e / (3.0 * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)), mode)
    }

    pub fn young(&self) -> f64 {
        9.0 * self.kappa * self.mu / (3.0 * self.kappa + self.mu)
    }

    pub fn poisson(&self) -> f64 {
        (3.0 * self.kappa - 2.0 * self.mu) / (2.0 * (3.0 * self.kappa + self.mu))
    }

    /// Material matrix for the configured kinematics (Voigt order xx, yy, xy
    /// with engineering shear strain).
    pub fn matrix(&self) -> Result<Matrix3<f64>> {
        match self.mode {
            Kinematics::PlaneStress => plane_stress_matrix(self),
            Kinematics::PlaneStrain => Ok(plane_strain_matrix(self)),
        }
    }
}

/// `E/(1-nu^2) [[1, nu, 0], [nu, 1, 0], [0, 0, (1-nu)/2]]` with E, nu derived
/// from the bulk and shear moduli.
pub fn plane_stress_matrix(mat: &LinearElasticMaterial) -> Result<Matrix3<f64>> {
    let nu = mat.poisson();
    if nu > 0.4999 {
        return Err(Error::IllConditionedMaterial { nu });
    }
    Ok(plane_stress_from_young(mat.young(), nu))
}

pub fn plane_stress_from_young(e: f64, nu: f64) -> Matrix3<f64> {
    let c = e / (1.0 - nu * nu);
    Matrix3::new(c, c * nu, 0.0, c * nu, c, 0.0, 0.0, 0.0, c * (1.0 - nu) / 2.0)
}

/// In-plane block of the 3D isotropic tensor (plane strain).
pub fn plane_strain_matrix(mat: &LinearElasticMaterial) -> Matrix3<f64> {
    let lambda = mat.kappa - 2.0 * mat.mu / 3.0;
    let d = lambda + 2.0 * mat.mu;
    Matrix3::new(d, lambda, 0.0, lambda, d, 0.0, 0.0, 0.0, mat.mu)
}

/// Von Mises coefficient matrix: `s^T M s = sx^2 + sy^2 - sx*sy + 3*sxy^2`.
pub fn build_m_matrix() -> Matrix3<f64> {
    Matrix3::new(1.0, -0.5, 0.0, -0.5, 1.0, 0.0, 0.0, 0.0, 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeoHookeanMaterial {
    /// Pa.
    pub c10: f64,
    /// 1/Pa.
    pub d1: f64,
}

impl NeoHookeanMaterial {
    pub fn new(c10: f64, d1: f64) -> Result<Self> {
        if !(c10 > 0.0 && d1 > 0.0) || !c10.is_finite() || !d1.is_finite() {
            return invalid(format!("need C10 > 0 and D1 > 0, got {c10}, {d1}"));
        }
        Ok(Self { c10, d1 })
    }

    /// Small-strain shear modulus `2 C10`.
    pub fn mu(&self) -> f64 {
        2.0 * self.c10
    }

    /// Small-strain bulk modulus `2 / D1`.
    pub fn kappa(&self) -> f64 {
        2.0 / self.d1
    }

    /// Linear material with the matching small-strain moduli.
    pub fn linearized(&self, mode: Kinematics) -> Result<LinearElasticMaterial> {
        LinearElasticMaterial::new(self.kappa(), self.mu(), mode)
    }
}

/// Response of the neo-Hookean model at one material point.
#[derive(Debug, Clone, Copy)]
pub struct PointResponse {
    /// Strain energy density, Pa.
    pub energy: f64,
    /// First Piola-Kirchhoff stress (in-plane block), Pa.
    pub stress: Matrix2<f64>,
    /// `dP_iJ / dF_kL`, indexed `(2i+J, 2k+L)`, Pa.
    pub tangent: Matrix4<f64>,
}

#[inline]
fn cofactor(f: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)])
}

/// Full 3D energy and first Piola stress, for states that are not plane
/// strain (free out-of-plane stretch). `None` when det F <= 0.
pub fn neo_hookean_energy_stress_3d(
    f: &Matrix3<f64>,
    mat: &NeoHookeanMaterial,
) -> Option<(f64, Matrix3<f64>)> {
    let j = f.determinant();
    if !(j > 0.0) {
        return None;
    }
    let i1 = f.norm_squared();
    let a = j.powf(-2.0 / 3.0);
    let cof = f.try_inverse()?.transpose() * j;
    let energy = mat.c10 * (a * i1 - 3.0) + (j - 1.0).powi(2) / mat.d1;
    let stress = f * (2.0 * mat.c10 * a)
        + cof * (-2.0 / 3.0 * mat.c10 * a / j * i1 + 2.0 / mat.d1 * (j - 1.0));
    Some((energy, stress))
}

/// Cauchy stress of a homogeneous uniaxial stretch `lambda` with
/// traction-free lateral faces (equal lateral stretches found by bisection).
pub fn uniaxial_cauchy(mat: &NeoHookeanMaterial, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return invalid(format!("stretch must be positive, got {lambda}"));
    }
    let state = |t: f64| {
        let f = Matrix3::from_diagonal(&Vector3::new(lambda, t, t));
        neo_hookean_energy_stress_3d(&f, mat).map(|(_, p)| (f, p))
    };
    // lateral stress grows with t; bracket the root
    let (mut lo, mut hi) = (1e-6, 1.0);
    while state(hi).is_some_and(|(_, p)| p[(1, 1)] < 0.0) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        match state(mid) {
            Some((_, p)) if p[(1, 1)] > 0.0 => hi = mid,
            _ => lo = mid,
        }
    }
    let (f, p) = state(0.5 * (lo + hi)).expect("bracketed stretch is admissible");
    Ok(p[(0, 0)] * lambda / f.determinant())
}

/// Energy and first Piola stress only (no tangent). `None` when det F <= 0.
#[inline]
pub fn neo_hookean_energy_stress(
    f: &Matrix2<f64>,
    mat: &NeoHookeanMaterial,
) -> Option<(f64, Matrix2<f64>)> {
    let j = f.determinant();
    if !(j > 0.0) {
        return None;
    }
    let i1 = f.norm_squared() + 1.0;
    let a = j.powf(-2.0 / 3.0);
    let cof = cofactor(f);
    let energy = mat.c10 * (a * i1 - 3.0) + (j - 1.0).powi(2) / mat.d1;
    let stress = f * (2.0 * mat.c10 * a)
        + cof * (-2.0 / 3.0 * mat.c10 * a / j * i1 + 2.0 / mat.d1 * (j - 1.0));
    Some((energy, stress))
}

/// Plane-strain compressible neo-Hookean point response:
/// `psi = C10 (J^(-2/3) tr(F^T F) - 3) + (J - 1)^2 / D1` with `F33 = 1`.
pub fn neo_hookean_point(f: &Matrix2<f64>, mat: &NeoHookeanMaterial) -> Result<PointResponse> {
    let j = f.determinant();
    let Some((energy, stress)) = neo_hookean_energy_stress(f, mat) else {
        return Err(Error::ElementInversion {
            element: usize::MAX,
            det: j,
        });
    };
    Ok(PointResponse {
        energy,
        stress,
        tangent: neo_hookean_tangent(f, mat),
    })
}

#[inline]
pub(crate) fn neo_hookean_tangent(f: &Matrix2<f64>, mat: &NeoHookeanMaterial) -> Matrix4<f64> {
    let j = f.determinant();
    let i1 = f.norm_squared() + 1.0;
    let a = j.powf(-2.0 / 3.0);
    let c10 = mat.c10;
    let cof = cofactor(f);
    let fv = [f[(0, 0)], f[(0, 1)], f[(1, 0)], f[(1, 1)]];
    let cv = [cof[(0, 0)], cof[(0, 1)], cof[(1, 0)], cof[(1, 1)]];
    // d cof_p / d F_q
    let dcof = |p: usize, q: usize| -> f64 {
        match (p, q) {
            (0, 3) | (3, 0) => 1.0,
            (1, 2) | (2, 1) => -1.0,
            _ => 0.0,
        }
    };
    let k_ff = -4.0 / 3.0 * c10 * a / j;
    let k_cc = 10.0 / 9.0 * c10 * a / (j * j) * i1 + 2.0 / mat.d1;
    let k_dc = -2.0 / 3.0 * c10 * a / j * i1 + 2.0 / mat.d1 * (j - 1.0);
    let mut t = Matrix4::zeros();
    for p in 0..4 {
        for q in 0..4 {
            let mut v = k_ff * (fv[p] * cv[q] + cv[p] * fv[q]) + k_cc * cv[p] * cv[q];
            v += k_dc * dcof(p, q);
            if p == q {
                v += 2.0 * c10 * a;
            }
            t[(p, q)] = v;
        }
    }
    t
}
