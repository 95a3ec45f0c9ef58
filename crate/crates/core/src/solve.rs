//! Equilibrium solves: partitioned assembly, the linear SPD solve, and the
//! incremental total-Lagrangian Newton solve for neo-Hookean structures.

use std::collections::BTreeSet;

use crate::element::{nh_energy_force, nh_energy_force_tangent, Mat8, Q4Geometry};
use crate::error::{invalid, Error, Result};
use crate::material::NeoHookeanMaterial;
use crate::mesh::{BoundaryConditions, Mesh};
use crate::sparse::{CsrMatrix, LdlFactor, SkylineMatrix};

/// Lower bound on physical densities.
/// Relative pivot floor of the Newton search-direction factorization.
const SHIFT_START: f64 = 1e-4;
const DAMPED_STEP: f64 = 0.25;

pub const RHO_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofSlot {
    Free(usize),
    Fixed(usize),
}

/// Free/prescribed partition of the global dofs, with the sparsity
/// patterns of the four stiffness blocks.
#[derive(Debug, Clone)]
pub struct SystemLayout {
    pub slots: Vec<DofSlot>,
    pub free: Vec<usize>,
    pub fixed: Vec<usize>,
    kff_first: Vec<usize>,
    kpf_rows: Vec<BTreeSet<usize>>,
    kpp_rows: Vec<BTreeSet<usize>>,
}

impl SystemLayout {
    pub fn new(mesh: &Mesh, bc: &BoundaryConditions) -> Result<Self> {
        let n = mesh.n_dofs();
        let fixed_set: BTreeSet<usize> = bc.fixed_dofs.iter().copied().collect();
        if fixed_set.iter().any(|&d| d >= n) {
            return invalid("fixed dof outside the mesh");
        }
        let mut slots = Vec::with_capacity(n);
        let mut free = Vec::new();
        let mut fixed = Vec::new();
        for d in 0..n {
            if fixed_set.contains(&d) {
                slots.push(DofSlot::Fixed(fixed.len()));
                fixed.push(d);
            } else {
                slots.push(DofSlot::Free(free.len()));
                free.push(d);
            }
        }
        let mut kff_first: Vec<usize> = (0..free.len()).collect();
        let mut kpf_rows = vec![BTreeSet::new(); fixed.len()];
        let mut kpp_rows = vec![BTreeSet::new(); fixed.len()];
        for e in 0..mesh.n_elements() {
            let dofs = mesh.element_dofs_unchecked(e);
            for &a in &dofs {
                for &b in &dofs {
                    match (slots[a], slots[b]) {
                        (DofSlot::Free(i), DofSlot::Free(j)) if j <= i => {
                            kff_first[i] = kff_first[i].min(j);
                        }
                        (DofSlot::Fixed(p), DofSlot::Free(j)) => {
                            kpf_rows[p].insert(j);
                        }
                        (DofSlot::Fixed(p), DofSlot::Fixed(q)) => {
                            kpp_rows[p].insert(q);
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(Self {
            slots,
            free,
            fixed,
            kff_first,
            kpf_rows,
            kpp_rows,
        })
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    pub fn empty_system(&self) -> PartitionedSystem {
        PartitionedSystem {
            kff: SkylineMatrix::with_profile(self.kff_first.clone()),
            kpf: CsrMatrix::from_pattern(self.free.len(), &self.kpf_rows),
            kpp: CsrMatrix::from_pattern(self.fixed.len(), &self.kpp_rows),
        }
    }

    pub fn restrict_free(&self, global: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&d| global[d]).collect()
    }

    pub fn restrict_fixed(&self, global: &[f64]) -> Vec<f64> {
        self.fixed.iter().map(|&d| global[d]).collect()
    }

    /// Global vector with `free_values` on the free dofs and zero elsewhere.
    pub fn expand_free(&self, free_values: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.slots.len()];
        for (&d, &v) in self.free.iter().zip(free_values) {
            g[d] = v;
        }
        g
    }
}

/// Stiffness blocks partitioned by free (f) and prescribed (p) dofs.
/// `K_ff` is stored symmetric; `K_fp = K_pf^T`.
#[derive(Debug, Clone)]
pub struct PartitionedSystem {
    pub kff: SkylineMatrix,
    pub kpf: CsrMatrix,
    pub kpp: CsrMatrix,
}

impl PartitionedSystem {
    pub fn kfp(&self) -> CsrMatrix {
        self.kpf.transpose()
    }

    #[inline]
    fn add_element(&mut self, layout: &SystemLayout, dofs: &[usize; 8], ke: &Mat8, scale: f64) {
        for (a, &ga) in dofs.iter().enumerate() {
            match layout.slots[ga] {
                DofSlot::Free(i) => {
                    for (b, &gb) in dofs.iter().enumerate() {
                        if let DofSlot::Free(j) = layout.slots[gb] {
                            if j <= i {
                                self.kff.add(i, j, scale * ke[(a, b)]);
                            }
                        }
                    }
                }
                DofSlot::Fixed(p) => {
                    for (b, &gb) in dofs.iter().enumerate() {
                        match layout.slots[gb] {
                            DofSlot::Free(j) => self.kpf.add(p, j, scale * ke[(a, b)]),
                            DofSlot::Fixed(q) => self.kpp.add(p, q, scale * ke[(a, b)]),
                        }
                    }
                }
            }
        }
    }
}

/// Converged equilibrium of one FE solve.
#[derive(Debug, Clone)]
pub struct EquilibriumState {
    /// Full global displacement vector (prescribed entries are zero), m.
    pub u: Vec<f64>,
    pub u_free: Vec<f64>,
    /// Reaction forces at the prescribed dofs (layout order), N.
    pub reactions: Vec<f64>,
    /// Unpenalized strain energy per element, J.
    pub elem_energy: Vec<f64>,
    /// Unpenalized internal nodal forces per element (nonlinear solves only), N.
    pub elem_internal_force0: Option<Vec<[f64; 8]>>,
    /// Factorized free-dof (tangent) stiffness at the converged state.
    pub factor: Option<LdlFactor>,
    /// Residual norms of every Newton iteration, grouped by increment.
    pub newton_history: Vec<Vec<f64>>,
}

impl EquilibriumState {
    pub fn element_displacement(&self, mesh: &Mesh, e: usize) -> [f64; 8] {
        let dofs = mesh.element_dofs_unchecked(e);
        dofs.map(|d| self.u[d])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub n_increments: usize,
    pub rtol: f64,
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Absolute residual tolerance floor, N.
    pub residual_floor: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            n_increments: 10,
            rtol: 1e-6,
            max_iterations: 50,
            max_halvings: 4,
            residual_floor: 1e-9,
        }
    }
}

/// Mesh, supports and dof layout of one FE problem.
#[derive(Debug, Clone)]
pub struct FeModel {
    pub mesh: Mesh,
    pub bc: BoundaryConditions,
    pub layout: SystemLayout,
    pub geometry: Q4Geometry,
    pub thickness: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_densities(mesh: &Mesh, densities: &[f64]) -> Result<()> {
    if densities.len() != mesh.n_elements() {
        return invalid(format!(
            "{} densities for {} elements",
            densities.len(),
            mesh.n_elements()
        ));
    }
    if let Some((e, r)) = densities
        .iter()
        .enumerate()
        .find(|(_, r)| !(**r >= RHO_MIN * (1.0 - 1e-12) && **r <= 1.0 + 1e-12))
    {
        return invalid(format!("density {r} of element {e} outside [{RHO_MIN}, 1]"));
    }
    Ok(())
}

struct NonlinearEval {
    energy: f64,
    fint: Vec<f64>,
}

impl FeModel {
    pub fn new(mesh: Mesh, bc: BoundaryConditions) -> Result<Self> {
        if !mesh.is_square_grid() {
            return invalid("elements must be square");
        }
        let layout = SystemLayout::new(&mesh, &bc)?;
        let geometry = Q4Geometry::square(mesh.element_side());
        Ok(Self {
            mesh,
            bc,
            layout,
            geometry,
            thickness: 1.0,
        })
    }

    pub fn load(&self) -> Vec<f64> {
        self.bc.load(self.mesh.n_dofs())
    }

    /// Assembles `sum_e rho_e^penal * ke0` into partitioned blocks.
    pub fn assemble(&self, densities: &[f64], penal: f64, ke0: &Mat8) -> Result<PartitionedSystem> {
        check_densities(&self.mesh, densities)?;
        let mut sys = self.layout.empty_system();
        for (e, &rho) in densities.iter().enumerate() {
            let dofs = self.mesh.element_dofs_unchecked(e);
            sys.add_element(&self.layout, &dofs, ke0, rho.powf(penal));
        }
        Ok(sys)
    }

    fn singular(&self, row: usize, pivot: f64) -> Error {
        Error::SingularSystem {
            dof: self.layout.free[row],
            pivot,
        }
    }

    /// Solves `K_ff u_f = P_f` with zero prescribed displacements.
    pub fn solve_linear(
        &self,
        sys: PartitionedSystem,
        ke0: &Mat8,
        load: &[f64],
    ) -> Result<EquilibriumState> {
        if load.len() != self.mesh.n_dofs() {
            return invalid("load vector length mismatch");
        }
        let PartitionedSystem { kff, kpf, .. } = sys;
        let factor = kff
            .factorize(true)
            .map_err(|(row, pivot)| self.singular(row, pivot))?;
        let u_free = factor.solve(&self.layout.restrict_free(load));
        let reactions = kpf.mul_vec(&u_free);
        let u = self.layout.expand_free(&u_free);
        let elem_energy = (0..self.mesh.n_elements())
            .map(|e| {
                let ue = nalgebra::SVector::<f64, 8>::from(
                    self.mesh.element_dofs_unchecked(e).map(|d| u[d]),
                );
                0.5 * (ue.transpose() * ke0 * ue)[0]
            })
            .collect();
        Ok(EquilibriumState {
            u,
            u_free,
            reactions,
            elem_energy,
            elem_internal_force0: None,
            factor: Some(factor),
            newton_history: Vec::new(),
        })
    }

    /// Total penalized energy and global internal force.
    fn eval_nonlinear(
        &self,
        densities: &[f64],
        penal: f64,
        mat: &NeoHookeanMaterial,
        u: &[f64],
    ) -> Result<NonlinearEval> {
        let mut fint = vec![0.0; u.len()];
        let mut energy = 0.0;
        for (e, &rho) in densities.iter().enumerate() {
            let dofs = self.mesh.element_dofs_unchecked(e);
            let ue = dofs.map(|d| u[d]);
            let (w, f) = nh_energy_force(&self.geometry, mat, self.thickness, &ue)
                .map_err(|det| Error::ElementInversion { element: e, det })?;
            let s = rho.powf(penal);
            energy += s * w;
            for (k, &d) in dofs.iter().enumerate() {
                fint[d] += s * f[k];
            }
        }
        Ok(NonlinearEval { energy, fint })
    }

    /// Penalized tangent blocks plus, per element, unpenalized energy and
    /// internal force.
    fn assemble_tangent(
        &self,
        densities: &[f64],
        penal: f64,
        mat: &NeoHookeanMaterial,
        u: &[f64],
    ) -> Result<(PartitionedSystem, Vec<f64>, Vec<[f64; 8]>)> {
        let mut sys = self.layout.empty_system();
        let n = self.mesh.n_elements();
        let mut energies = Vec::with_capacity(n);
        let mut forces = Vec::with_capacity(n);
        for (e, &rho) in densities.iter().enumerate() {
            let dofs = self.mesh.element_dofs_unchecked(e);
            let ue = dofs.map(|d| u[d]);
            let (w, f, k) = nh_energy_force_tangent(&self.geometry, mat, self.thickness, &ue)
                .map_err(|det| Error::ElementInversion { element: e, det })?;
            sys.add_element(&self.layout, &dofs, &k, rho.powf(penal));
            energies.push(w);
            forces.push(f);
        }
        Ok((sys, energies, forces))
    }

    /// Incremental Newton solve of the neo-Hookean structure under a dead
    /// load. Each increment runs full Newton with a backtracking line search
    /// that rejects inverted elements; failed increments are halved.
    pub fn solve_newton(
        &self,
        densities: &[f64],
        penal: f64,
        mat: &NeoHookeanMaterial,
        load: &[f64],
        opts: &NewtonOptions,
    ) -> Result<EquilibriumState> {
        check_densities(&self.mesh, densities)?;
        if load.len() != self.mesh.n_dofs() || load.iter().any(|v| !v.is_finite()) {
            return invalid("load vector must be finite with one entry per dof");
        }
        if opts.n_increments == 0 {
            return invalid("at least one load increment is required");
        }
        let load_free = self.layout.restrict_free(load);
        let load_norm = norm(&load_free);
        let base_step = if load_norm == 0.0 {
            1.0
        } else {
            1.0 / opts.n_increments as f64
        };

        let mut u = vec![0.0; self.mesh.n_dofs()];
        let mut history = Vec::new();
        let mut factor_level = 0.0;
        let mut step = base_step;
        let mut halvings = 0;
        while factor_level < 1.0 - 1e-12 {
            let target = (factor_level + step).min(1.0);
            match self.newton_increment(densities, penal, mat, load, &load_free, target, &u, opts)
            {
                Ok((u_new, residuals)) => {
                    u = u_new;
                    history.push(residuals);
                    factor_level = target;
                    halvings = 0;
                    step = (2.0 * step).min(base_step);
                }
                Err((residual, cause)) => {
                    history.push(vec![residual]);
                    if halvings >= opts.max_halvings {
                        log::debug!("newton failed at load factor {target}: {cause}");
                        return Err(Error::NonConvergence {
                            load_factor: target,
                            residual,
                        });
                    }
                    halvings += 1;
                    step *= 0.5;
                }
            }
        }

        let (sys, elem_energy, forces) = self.assemble_tangent(densities, penal, mat, &u)?;
        let mut reactions = vec![0.0; self.layout.fixed.len()];
        for (e, &rho) in densities.iter().enumerate() {
            let s = rho.powf(penal);
            for (k, &d) in self.mesh.element_dofs_unchecked(e).iter().enumerate() {
                if let DofSlot::Fixed(p) = self.layout.slots[d] {
                    reactions[p] += s * forces[e][k];
                }
            }
        }
        let factor = sys
            .kff
            .factorize(false)
            .map_err(|(row, pivot)| self.singular(row, pivot))?;
        Ok(EquilibriumState {
            u_free: self.layout.restrict_free(&u),
            u,
            reactions,
            elem_energy,
            elem_internal_force0: Some(forces),
            factor: Some(factor),
            newton_history: history,
        })
    }

    /// One load increment. On failure returns the last residual norm and the cause.
    #[allow(clippy::too_many_arguments)]
    fn newton_increment(
        &self,
        densities: &[f64],
        penal: f64,
        mat: &NeoHookeanMaterial,
        load: &[f64],
        load_free: &[f64],
        level: f64,
        u0: &[f64],
        opts: &NewtonOptions,
    ) -> std::result::Result<(Vec<f64>, Vec<f64>), (f64, Error)> {
        let tol = opts.rtol * norm(load_free).max(opts.residual_floor);
        let potential = |ev: &NonlinearEval, u: &[f64]| -> f64 {
            ev.energy - level * load.iter().zip(u).map(|(p, x)| p * x).sum::<f64>()
        };
        let residual = |ev: &NonlinearEval| -> Vec<f64> {
            self.layout
                .free
                .iter()
                .zip(load_free)
                .map(|(&d, &p)| ev.fint[d] - level * p)
                .collect()
        };

        let mut u = u0.to_vec();
        let mut ev = self
            .eval_nonlinear(densities, penal, mat, &u)
            .map_err(|e| (f64::INFINITY, e))?;
        let mut r = residual(&ev);
        let mut rnorm = norm(&r);
        let mut log = vec![rnorm];
        for _ in 0..opts.max_iterations {
            if rnorm <= tol {
                return Ok((u, log));
            }
            let (sys, _, _) = self
                .assemble_tangent(densities, penal, mat, &u)
                .map_err(|e| (rnorm, e))?;
            let pi0 = potential(&ev, &u);
            let search = |d: &[f64]| {
                let slope: f64 = r.iter().zip(d).map(|(a, b)| a * b).sum();
                let mut alpha = 1.0;
                for _ in 0..30 {
                    let mut trial = u.clone();
                    for (&gd, &dv) in self.layout.free.iter().zip(d) {
                        trial[gd] += alpha * dv;
                    }
                    if let Ok(ev_t) = self.eval_nonlinear(densities, penal, mat, &trial) {
                        let r_t = residual(&ev_t);
                        let rn_t = norm(&r_t);
                        let ok = if slope < 0.0 {
                            potential(&ev_t, &trial) <= pi0 + 1e-4 * alpha * slope || rn_t < rnorm
                        } else {
                            rn_t < (1.0 - 1e-4 * alpha) * rnorm
                        };
                        if ok && rn_t.is_finite() {
                            return Some((trial, ev_t, r_t, rn_t, alpha));
                        }
                    }
                    alpha *= 0.5;
                }
                None
            };
            let direction = |factor: &LdlFactor| {
                let mut d = r.clone();
                factor.solve_in_place(&mut d);
                d.iter_mut().for_each(|v| *v = -*v);
                d
            };

            let mut accepted = match sys.kff.clone().factorize(false) {
                Ok(f) => search(&direction(&f)),
                Err(_) => None,
            };
            if accepted.as_ref().is_none_or(|a| a.4 < DAMPED_STEP) {
                // indefinite or heavily damped: also try a shifted positive definite tangent
                if let Some((f, tau)) = sys.kff.factorize_shifted(SHIFT_START) {
                    log::debug!("shifted tangent tau={tau:e} at load level {level}");
                    if let Some(b) = search(&direction(&f)) {
                        if accepted.as_ref().is_none_or(|a| b.3 < a.3) {
                            accepted = Some(b);
                        }
                    }
                }
            }
            let Some((trial, ev_t, r_t, rn_t, _)) = accepted else {

                return Err((
                    rnorm,
                    Error::NonConvergence {
                        load_factor: level,
                        residual: rnorm,
                    },
                ));
            };
            u = trial;
            ev = ev_t;
            r = r_t;
            rnorm = rn_t;
            log.push(rnorm);
        }
        if rnorm <= tol {
            return Ok((u, log));
        }

        Err((
            rnorm,
            Error::NonConvergence {
                load_factor: level,
                residual: rnorm,
            },
        ))
    }
}
