//! Aggregated von Mises stress constraint and its adjoint sensitivity.
//!
//! Relaxed element ratio `r_e = rho_e^(eta + n) * sqrt(Delta_e) / sigma_lim`
//! with `Delta_e = u_e^T kvmo u_e`; the constraint is
//! `g2 = (sum_e r_e^q)^(1/q) - (1 + xi) <= 0`.

use serde::{Deserialize, Serialize};

use crate::element::{Mat8, Vec8};
use crate::error::{invalid, Error, Result};
use crate::filter::DensityFilter;
use crate::solve::{EquilibriumState, FeModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StressConstraintParams {
    pub sigma_lim: f64,
    pub q: f64,
    pub eta: f64,
    pub xi: f64,
    pub penal: f64,
}

impl StressConstraintParams {
    pub fn new(sigma_lim: f64) -> Result<Self> {
        let p = Self {
            sigma_lim,
            q: 10.0,
            eta: 3.0,
            xi: 1e-7,
            penal: 3.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 1.0) || !(self.sigma_lim > 0.0) || !(self.xi >= 0.0) {
            return invalid("stress parameters need q >= 1, sigma_lim > 0, xi >= 0");
        }
        if !(self.eta >= 0.0) || !(self.penal >= 1.0) {
            return invalid("stress parameters need eta >= 0 and penal >= 1");
        }
        Ok(())
    }
}

/// Element average von Mises stress `rho^n sqrt(Delta)` and `Delta`.
pub fn element_vm(ue: &[f64; 8], kvmo: &Mat8, rho: f64, penal: f64) -> (f64, f64) {
    let u = Vec8::from(*ue);
    let mut delta = (u.transpose() * kvmo * u)[0];
    if delta < 0.0 {
        let tol = 1e-14 * kvmo.norm() * u.norm_squared();
        debug_assert!(delta >= -tol.max(f64::MIN_POSITIVE), "Delta = {delta}");
        delta = 0.0;
    }
    (rho.powf(penal) * delta.sqrt(), delta)
}

#[derive(Debug, Clone)]
pub struct StressAggregate {
    pub g2: f64,
    /// `sum_e r_e^q`
    pub z: f64,
    /// `Z^(1/q)`, computed without forming `Z` directly.
    pub qnorm: f64,
    pub delta: Vec<f64>,
    pub ratio: Vec<f64>,
    /// `r_e^q / Z`
    weight: Vec<f64>,
}

impl StressAggregate {
    pub fn max_ratio(&self) -> f64 {
        self.ratio.iter().fold(0.0, |m, &r| m.max(r))
    }
}

/// Evaluates `g2` on the physical densities of a solved state.
pub fn aggregate_g2(
    model: &FeModel,
    state: &EquilibriumState,
    densities: &[f64],
    params: &StressConstraintParams,
    kvmo: &Mat8,
) -> StressAggregate {
    let deltas: Vec<f64> = (0..model.mesh.n_elements())
        .map(|e| element_vm(&state.element_displacement(&model.mesh, e), kvmo, 1.0, 1.0).1)
        .collect();
    aggregate_from_deltas(deltas, densities, params)
}

pub fn aggregate_from_deltas(
    delta: Vec<f64>,
    densities: &[f64],
    params: &StressConstraintParams,
) -> StressAggregate {
    let ratio: Vec<f64> = delta
        .iter()
        .zip(densities)
        .map(|(d, r)| r.powf(params.eta + params.penal) * d.sqrt() / params.sigma_lim)
        .collect();
    let rmax = ratio.iter().fold(0.0f64, |m, &r| m.max(r));
    let (qnorm, z, weight) = if rmax > 0.0 {
        let scaled: Vec<f64> = ratio.iter().map(|r| (r / rmax).powf(params.q)).collect();
        let s: f64 = scaled.iter().sum();
        let weight = scaled.iter().map(|v| v / s).collect();
        (rmax * s.powf(1.0 / params.q), rmax.powf(params.q) * s, weight)
    } else {
        (0.0, 0.0, vec![0.0; ratio.len()])
    };
    StressAggregate {
        g2: qnorm - (1.0 + params.xi),
        z,
        qnorm,
        delta,
        ratio,
        weight,
    }
}

/// Adjoint vectors of the stress constraint. The prescribed part is zero
/// because the prescribed displacements are.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub omega_f: Vec<f64>,
    pub omega_p: Vec<f64>,
}

/// Total derivative of `g2` with respect to the physical densities.
pub fn g2_sensitivity_physical(
    model: &FeModel,
    state: &EquilibriumState,
    densities: &[f64],
    params: &StressConstraintParams,
    agg: &StressAggregate,
    ke0: &Mat8,
    kvmo: &Mat8,
) -> Result<(Vec<f64>, AdjointState)> {
    let mesh = &model.mesh;
    let n = mesh.n_elements();
    let layout = &model.layout;
    let relax = params.eta + params.penal;
    if agg.qnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            AdjointState {
                omega_f: vec![0.0; layout.n_free()],
                omega_p: vec![0.0; layout.fixed.len()],
            },
        ));
    }
    // dg2/du, assembled globally
    let mut dgdu = vec![0.0; mesh.n_dofs()];
    let mut ues = Vec::with_capacity(n);
    for e in 0..n {
        let ue = Vec8::from(state.element_displacement(mesh, e));
        if agg.weight[e] > 0.0 && agg.delta[e] > 0.0 {
            let c = agg.qnorm * agg.weight[e] / agg.delta[e];
            let kv = kvmo * ue;
            for (k, &d) in mesh.element_dofs(e)?.iter().enumerate() {
                dgdu[d] += c * kv[k];
            }
        }
        ues.push(ue);
    }
    let factor = state.factor.as_ref().ok_or(Error::MissingFactorization)?;
    let mut omega_f: Vec<f64> = layout.restrict_free(&dgdu).iter().map(|v| -v).collect();
    factor.solve_in_place(&mut omega_f);
    let omega = layout.expand_free(&omega_f);

    let mut grad = Vec::with_capacity(n);
    for (e, ue) in ues.iter().enumerate() {
        let rho = densities[e];
        let explicit = relax * agg.qnorm * agg.weight[e] / rho;
        let we = Vec8::from(mesh.element_dofs(e)?.map(|d| omega[d]));
        let implicit = params.penal * rho.powf(params.penal - 1.0) * (we.transpose() * ke0 * ue)[0];
        grad.push(explicit + implicit);
    }
    Ok((
        grad,
        AdjointState {
            omega_f,
            omega_p: vec![0.0; layout.fixed.len()],
        },
    ))
}

/// Total derivative of `g2` with respect to the design variables.
#[allow(clippy::too_many_arguments)]
pub fn g2_sensitivity(
    model: &FeModel,
    state: &EquilibriumState,
    densities: &[f64],
    params: &StressConstraintParams,
    agg: &StressAggregate,
    ke0: &Mat8,
    kvmo: &Mat8,
    filter: &DensityFilter,
) -> Result<Vec<f64>> {
    let (g, _) = g2_sensitivity_physical(model, state, densities, params, agg, ke0, kvmo)?;
    Ok(filter.chain_rule(&g))
}
