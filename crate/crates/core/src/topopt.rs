//! SIMP compliance minimization with a volume constraint and, for the
//! stress scenario, the aggregated stress constraint; driven by MMA.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::element::{ElementMatrices, Mat8, Vec8};
use crate::error::{invalid, Error, Result};
use crate::filter::{build_filter, DensityFilter};
use crate::material::{plane_strain_matrix, Kinematics, NeoHookeanMaterial};
use crate::mesh::{build_grid, make_boundary};
use crate::mma::{mma_update, MmaParams, MmaState};
use crate::problem::{ProblemSpec, Scenario};
use crate::solve::{EquilibriumState, FeModel, NewtonOptions, RHO_MIN};
use crate::stress::{aggregate_g2, g2_sensitivity_physical, StressAggregate, StressConstraintParams};

/// Design variables and their filtered (physical) counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub design: Vec<f64>,
    pub physical: Vec<f64>,
}

impl DensityField {
    pub fn new(design: Vec<f64>, filter: &DensityFilter) -> Self {
        let physical = filter.apply(&design);
        Self { design, physical }
    }

    pub fn uniform(n: usize, value: f64, filter: &DensityFilter) -> Self {
        Self::new(vec![value; n], filter)
    }
}

/// `G = P^T u` (prescribed displacements are zero).
pub fn compliance(state: &EquilibriumState, load: &[f64]) -> f64 {
    load.iter().zip(&state.u).map(|(p, u)| p * u).sum()
}

/// `dG/d rho_e = -n rho_e^(n-1) u_e^T ke0 u_e`.
pub fn compliance_sens_linear(
    model: &FeModel,
    state: &EquilibriumState,
    densities: &[f64],
    penal: f64,
    ke0: &Mat8,
) -> Vec<f64> {
    densities
        .iter()
        .enumerate()
        .map(|(e, &rho)| {
            let ue = Vec8::from(state.element_displacement(&model.mesh, e));
            -penal * rho.powf(penal - 1.0) * (ue.transpose() * ke0 * ue)[0]
        })
        .collect()
}

/// Adjoint sensitivity of the compliance at a converged Newton state:
/// `K_T lambda = P`, `dG/d rho_e = -n rho_e^(n-1) lambda_e^T f0_e`.
pub fn compliance_sens_nonlinear(
    model: &FeModel,
    state: &EquilibriumState,
    densities: &[f64],
    penal: f64,
    load: &[f64],
) -> Result<Vec<f64>> {
    let factor = state.factor.as_ref().ok_or(Error::MissingFactorization)?;
    let f0 = state
        .elem_internal_force0
        .as_ref()
        .ok_or(Error::MissingFactorization)?;
    let lam_f = factor.solve(&model.layout.restrict_free(load));
    let lam = model.layout.expand_free(&lam_f);
    Ok(densities
        .iter()
        .enumerate()
        .map(|(e, &rho)| {
            let dofs = model.mesh.element_dofs_unchecked(e);
            let dot: f64 = dofs.iter().zip(&f0[e]).map(|(&d, f)| lam[d] * f).sum();
            -penal * rho.powf(penal - 1.0) * dot
        })
        .collect())
}

/// `g1 = mean(rho) - V_f` and its (uniform) gradient.
pub fn volume_constraint(densities: &[f64], v_f: f64) -> (f64, Vec<f64>) {
    let n = densities.len() as f64;
    let mean = densities.iter().sum::<f64>() / n;
    (mean - v_f, vec![1.0 / n; densities.len()])
}

/// Objective and constraint values with sensitivities with respect to the
/// physical densities.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub compliance: f64,
    pub d_compliance: Vec<f64>,
    pub g1: f64,
    pub d_g1: Vec<f64>,
    pub g2: Option<f64>,
    pub d_g2: Option<Vec<f64>>,
    pub stress: Option<StressAggregate>,
    pub state: EquilibriumState,
}

impl Evaluation {
    /// Sensitivities mapped to the design variables.
    pub fn design_gradients(&self, filter: &DensityFilter) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        (
            filter.chain_rule(&self.d_compliance),
            filter.chain_rule(&self.d_g1),
            self.d_g2.as_ref().map(|g| filter.chain_rule(g)),
        )
    }
}

enum Physics {
    Linear(ElementMatrices),
    NeoHookean(NeoHookeanMaterial),
}

/// Everything needed to evaluate one problem repeatedly.
pub struct ProblemContext {
    pub spec: ProblemSpec,
    pub model: FeModel,
    pub filter: DensityFilter,
    pub load: Vec<f64>,
    pub newton: NewtonOptions,
    physics: Physics,
    stress: Option<StressConstraintParams>,
}

impl ProblemContext {
    pub fn new(spec: &ProblemSpec) -> Result<Self> {
        spec.validate()?;
        let mesh = build_grid(spec.nx, spec.ny, spec.width, spec.height)?;
        let bc = make_boundary(&mesh, spec.load_row, spec.theta, spec.magnitude)?;
        let filter = build_filter(&mesh, spec.r_min)?;
        let model = FeModel::new(mesh, bc)?;
        let side = model.mesh.element_side();
        let physics = match spec.scenario {
            Scenario::NeoHookean => Physics::NeoHookean(spec.material.neo_hookean()?),
            Scenario::Linear | Scenario::Stress => {
                let mat = spec.material.linear()?;
                let emat = match mat.mode {
                    Kinematics::PlaneStress => mat.matrix()?,
                    Kinematics::PlaneStrain => plane_strain_matrix(&mat),
                };
                Physics::Linear(ElementMatrices::new(emat, side, model.thickness))
            }
        };
        let stress = match spec.scenario {
            Scenario::Stress => {
                let mut p = StressConstraintParams::new(spec.sigma_lim.unwrap_or(f64::NAN))?;
                p.penal = spec.penal;
                Some(p)
            }
            _ => None,
        };
        let load = model.load();
        Ok(Self {
            spec: spec.clone(),
            model,
            filter,
            load,
            newton: NewtonOptions::default(),
            physics,
            stress,
        })
    }

    pub fn n_elements(&self) -> usize {
        self.model.mesh.n_elements()
    }

    pub fn element_matrices(&self) -> Option<&ElementMatrices> {
        match &self.physics {
            Physics::Linear(m) => Some(m),
            Physics::NeoHookean(_) => None,
        }
    }

    /// Solves the state equation for the given physical densities.
    pub fn solve(&self, physical: &[f64]) -> Result<EquilibriumState> {
        match &self.physics {
            Physics::Linear(m) => {
                let sys = self.model.assemble(physical, self.spec.penal, &m.ke0)?;
                self.model.solve_linear(sys, &m.ke0, &self.load)
            }
            Physics::NeoHookean(mat) => {
                self.model
                    .solve_newton(physical, self.spec.penal, mat, &self.load, &self.newton)
            }
        }
    }

    pub fn evaluate(&self, physical: &[f64]) -> Result<Evaluation> {
        let clamped: Vec<f64> = physical.iter().map(|r| r.clamp(RHO_MIN, 1.0)).collect();
        let physical = &clamped[..];
        let penal = self.spec.penal;
        let state = self.solve(physical)?;
        let compliance = compliance(&state, &self.load);
        let (d_compliance, g2, d_g2, stress) = match &self.physics {
            Physics::Linear(m) => {
                let dc = compliance_sens_linear(&self.model, &state, physical, penal, &m.ke0);
                match &self.stress {
                    Some(params) => {
                        let agg = aggregate_g2(&self.model, &state, physical, params, &m.kvmo);
                        let (dg2, _) = g2_sensitivity_physical(
                            &self.model,
                            &state,
                            physical,
                            params,
                            &agg,
                            &m.ke0,
                            &m.kvmo,
                        )?;
                        (dc, Some(agg.g2), Some(dg2), Some(agg))
                    }
                    None => (dc, None, None, None),
                }
            }
            Physics::NeoHookean(_) => {
                let dc = compliance_sens_nonlinear(&self.model, &state, physical, penal, &self.load)?;
                (dc, None, None, None)
            }
        };
        let (g1, d_g1) = volume_constraint(physical, self.spec.v_f);
        Ok(Evaluation {
            compliance,
            d_compliance,
            g1,
            d_g1,
            g2,
            d_g2,
            stress,
            state,
        })
    }

    /// Filters the design and evaluates it.
    pub fn evaluate_design(&self, design: &[f64]) -> Result<(DensityField, Evaluation)> {
        if design.len() != self.n_elements() {
            return invalid("design length does not match the mesh");
        }
        let field = DensityField::new(design.to_vec(), &self.filter);
        let eval = self.evaluate(&field.physical)?;
        Ok((field, eval))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub compliance: f64,
    pub g1: f64,
    pub g2: Option<f64>,
    pub max_drho: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub design: Vec<f64>,
    pub physical: Vec<f64>,
    pub history: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// s
    pub wall_time: f64,
    /// Values re-evaluated at the final design.
    pub compliance: f64,
    pub g1: f64,
    pub g2: Option<f64>,
    /// Compliance of the uniform starting design.
    pub initial_compliance: f64,
}

impl OptimizationResult {
    /// Share of elements with `|rho - 0.5| > 0.4`.
    pub fn binary_fraction(&self) -> f64 {
        binary_fraction(&self.physical)
    }
}

pub fn binary_fraction(physical: &[f64]) -> f64 {
    physical.iter().filter(|r| (*r - 0.5).abs() > 0.4).count() as f64 / physical.len() as f64
}

/// Runs the optimization loop from the uniform design `rho = V_f` until the
/// largest design change drops below the tolerance or the iteration budget
/// is spent.
pub fn optimize(spec: &ProblemSpec) -> Result<OptimizationResult> {
    let ctx = ProblemContext::new(spec)?;
    optimize_with(&ctx, &MmaParams::default())
}

pub fn optimize_with(ctx: &ProblemContext, params: &MmaParams) -> Result<OptimizationResult> {
    let start = Instant::now();
    let spec = &ctx.spec;
    let n = ctx.n_elements();
    let xmin = vec![RHO_MIN; n];
    let xmax = vec![1.0; n];
    let mut x = vec![spec.v_f.clamp(RHO_MIN, 1.0); n];
    let mut mma = MmaState::new(n);
    let mut history = Vec::new();
    let mut converged = false;
    let mut initial_compliance = f64::NAN;

    for iter in 1..=spec.max_iterations {
        let wrap = |e: Error| Error::Optimization {
            iteration: iter,
            source: Box::new(e),
        };
        let (_, eval) = ctx.evaluate_design(&x).map_err(wrap)?;
        if iter == 1 {
            initial_compliance = eval.compliance;
        }
        let (dc, dg1, dg2) = eval.design_gradients(&ctx.filter);
        let mut g = vec![eval.g1];
        let mut dg = vec![dg1];
        if let (Some(v), Some(d)) = (eval.g2, dg2) {
            g.push(v);
            dg.push(d);
        }
        let (step, next) = mma_update(&mma, params, &x, &dc, &g, &dg, &xmin, &xmax).map_err(|e| {
            log::error!("mma failure at iteration {iter}; design = {x:?}");
            wrap(e)
        })?;
        mma = next;
        let max_drho = step
            .x
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = step.x;
        log::debug!(
            "iter {iter}: G = {:.6e}, g1 = {:.3e}, g2 = {:?}, max_drho = {max_drho:.3e}",
            eval.compliance,
            eval.g1,
            eval.g2
        );
        history.push(IterationRecord {
            iter,
            compliance: eval.compliance,
            g1: eval.g1,
            g2: eval.g2,
            max_drho,
        });
        if max_drho < spec.tolerance {
            converged = true;
            break;
        }
    }

    let iterations = history.len();
    let (field, eval) = ctx.evaluate_design(&x).map_err(|e| Error::Optimization {
        iteration: iterations + 1,
        source: Box::new(e),
    })?;
    Ok(OptimizationResult {
        design: field.design,
        physical: field.physical,
        history,
        iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
        compliance: eval.compliance,
        g1: eval.g1,
        g2: eval.g2,
        initial_compliance,
    })
}

/// Writes the iteration history as `iter,G,g1,g2,max_drho` (empty `g2`
/// when the problem has no stress constraint).
pub fn write_history_csv<W: Write>(mut out: W, history: &[IterationRecord]) -> std::io::Result<()> {
    writeln!(out, "iter,G,g1,g2,max_drho")?;
    for r in history {
        let g2 = r.g2.map(|v| format!("{v:e}")).unwrap_or_default();
        writeln!(
            out,
            "{},{:e},{:e},{},{:e}",
            r.iter, r.compliance, r.g1, g2, r.max_drho
        )?;
    }
    Ok(())
}
