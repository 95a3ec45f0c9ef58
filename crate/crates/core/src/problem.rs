//! Problem definitions and random sampling of design tasks.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::material::{Kinematics, LinearElasticMaterial, NeoHookeanMaterial};

/// Largest sampled neo-Hookean load, N.
pub const NEOHOOKEAN_P_MAX: f64 = 150_000.0;
/// Largest sampled load of the stress scenario, N.
pub const STRESS_P_MAX: f64 = 1_000_000.0;
/// Largest sampled filter radius of the stress scenario, m.
pub const STRESS_R_MAX: f64 = 0.10;
pub const STRESS_R_MIN: f64 = 0.03;

/// Rubber-like constants: `C10 = 1 MPa`, `D1 = 1e-8 1/Pa`.
pub const RUBBER_C10: f64 = 1.0e6;
pub const RUBBER_D1: f64 = 1.0e-8;
/// Epoxy: `E = 4.07 GPa`, `nu = 0.34`, allowable stress 16.44 MPa.
pub const EPOXY_E: f64 = 4.07e9;
pub const EPOXY_NU: f64 = 0.34;
pub const EPOXY_SIGMA_LIM: f64 = 16.44e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Linear,
    NeoHookean,
    Stress,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Linear => "linear",
            Scenario::NeoHookean => "neohookean",
            Scenario::Stress => "stress",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scenario::Linear),
            "neohookean" => Ok(Scenario::NeoHookean),
            "stress" => Ok(Scenario::Stress),
            _ => invalid(format!("unknown scenario '{s}' (linear, neohookean, stress)")),
        }
    }

    /// Default mesh `(nx, ny)` of the scenario.
    pub fn default_mesh(self) -> (usize, usize) {
        match self {
            Scenario::Linear => (32, 32),
            Scenario::NeoHookean | Scenario::Stress => (50, 50),
        }
    }

    pub fn p_max(self) -> f64 {
        match self {
            Scenario::Linear => 1.0,
            Scenario::NeoHookean => NEOHOOKEAN_P_MAX,
            Scenario::Stress => STRESS_P_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum MaterialSpec {
    Linear {
        kappa: f64,
        mu: f64,
        kinematics: Kinematics,
    },
    NeoHookean {
        c10: f64,
        d1: f64,
    },
}

impl MaterialSpec {
    /// Small-strain moduli matching the rubber constants, plane stress.
    pub fn rubber_linear() -> Self {
        MaterialSpec::Linear {
            kappa: 2.0 / RUBBER_D1,
            mu: 2.0 * RUBBER_C10,
            kinematics: Kinematics::PlaneStress,
        }
    }

    pub fn rubber() -> Self {
        MaterialSpec::NeoHookean {
            c10: RUBBER_C10,
            d1: RUBBER_D1,
        }
    }

    pub fn epoxy() -> Self {
        let m = LinearElasticMaterial::from_young(EPOXY_E, EPOXY_NU, Kinematics::PlaneStress)
            .expect("epoxy constants are valid");
        MaterialSpec::Linear {
            kappa: m.kappa,
            mu: m.mu,
            kinematics: Kinematics::PlaneStress,
        }
    }

    pub fn linear(&self) -> Result<LinearElasticMaterial> {
        match *self {
            MaterialSpec::Linear {
                kappa,
                mu,
                kinematics,
            } => LinearElasticMaterial::new(kappa, mu, kinematics),
            MaterialSpec::NeoHookean { .. } => invalid("expected a linear elastic material"),
        }
    }

    pub fn neo_hookean(&self) -> Result<NeoHookeanMaterial> {
        match *self {
            MaterialSpec::NeoHookean { c10, d1 } => NeoHookeanMaterial::new(c10, d1),
            MaterialSpec::Linear { .. } => invalid("expected a neo-Hookean material"),
        }
    }

    pub fn kinematics(&self) -> Kinematics {
        match *self {
            MaterialSpec::Linear { kinematics, .. } => kinematics,
            MaterialSpec::NeoHookean { .. } => Kinematics::PlaneStrain,
        }
    }
}

/// One topology optimization task on a clamped-left, point-loaded-right
/// rectangular domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub scenario: Scenario,
    pub nx: usize,
    pub ny: usize,
    /// m
    pub width: f64,
    /// m
    pub height: f64,
    /// Right-edge node row carrying the load (0 at the top).
    pub load_row: usize,
    /// Load direction, radians counter-clockwise from +x.
    pub theta: f64,
    /// N
    pub magnitude: f64,
    pub v_f: f64,
    /// m
    pub r_min: f64,
    pub material: MaterialSpec,
    /// Allowable von Mises stress, Pa (stress scenario).
    pub sigma_lim: Option<f64>,
    pub penal: f64,
    pub max_iterations: usize,
    /// Stop when the largest design change drops below this.
    pub tolerance: f64,
    pub seed: u64,
    pub index: u64,
}

impl ProblemSpec {
    fn base(scenario: Scenario, load_row: usize, theta: f64, magnitude: f64, v_f: f64, r_min: f64) -> Self {
        let (nx, ny) = scenario.default_mesh();
        let material = match scenario {
            Scenario::Linear => MaterialSpec::rubber_linear(),
            Scenario::NeoHookean => MaterialSpec::rubber(),
            Scenario::Stress => MaterialSpec::epoxy(),
        };
        Self {
            scenario,
            nx,
            ny,
            width: 1.0,
            height: 1.0,
            load_row,
            theta,
            magnitude,
            v_f,
            r_min,
            material,
            sigma_lim: (scenario == Scenario::Stress).then_some(EPOXY_SIGMA_LIM),
            penal: 3.0,
            max_iterations: 100,
            tolerance: 0.01,
            seed: 0,
            index: 0,
        }
    }

    /// 32x32 linear elastic compliance problem with unit load.
    pub fn linear(load_row: usize, theta: f64, v_f: f64) -> Self {
        Self::base(Scenario::Linear, load_row, theta, 1.0, v_f, 0.125)
    }

    /// 50x50 neo-Hookean compliance problem.
    pub fn neo_hookean(load_row: usize, theta: f64, magnitude: f64, v_f: f64) -> Self {
        Self::base(Scenario::NeoHookean, load_row, theta, magnitude, v_f, 0.08)
    }

    /// 50x50 stress-constrained linear elastic problem (epoxy).
    pub fn stress(load_row: usize, theta: f64, magnitude: f64, v_f: f64, r_min: f64) -> Self {
        Self::base(Scenario::Stress, load_row, theta, magnitude, v_f, r_min)
    }

    pub fn with_mesh(mut self, nx: usize, ny: usize) -> Self {
        self.nx = nx;
        self.ny = ny;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return invalid("mesh must have at least one element per side");
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return invalid("domain size must be positive");
        }
        if ((self.width / self.nx as f64) / (self.height / self.ny as f64) - 1.0).abs() > 1e-12 {
            return invalid("elements must be square");
        }
        if self.load_row > self.ny {
            return invalid(format!("load row {} outside 0..={}", self.load_row, self.ny));
        }
        if !self.theta.is_finite() || !self.magnitude.is_finite() || self.magnitude < 0.0 {
            return invalid("load angle and magnitude must be finite, magnitude >= 0");
        }
        if !(self.v_f > 0.0 && self.v_f <= 1.0) {
            return invalid(format!("volume fraction {} outside (0, 1]", self.v_f));
        }
        if !(self.r_min > 0.0) || !self.r_min.is_finite() {
            return invalid("filter radius must be positive");
        }
        if !(self.penal >= 1.0) || !(self.tolerance > 0.0) {
            return invalid("penal must be >= 1 and tolerance positive");
        }
        match (self.scenario, &self.material) {
            (Scenario::NeoHookean, MaterialSpec::NeoHookean { .. }) => {
                self.material.neo_hookean()?;
            }
            (Scenario::Linear | Scenario::Stress, MaterialSpec::Linear { .. }) => {
                self.material.linear()?.matrix()?;
            }
            _ => return invalid("material model does not match the scenario"),
        }
        if self.scenario == Scenario::Stress && !self.sigma_lim.is_some_and(|s| s > 0.0) {
            return invalid("stress scenario needs a positive sigma_lim");
        }
        Ok(())
    }
}

/// Draws problem `index` of a generation run seeded with `seed`. Each index
/// has its own ChaCha8 stream, so the result does not depend on which
/// worker draws it or in which order.
pub fn sample_problem(seed: u64, index: u64, scenario: Scenario) -> ProblemSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let (_, ny) = scenario.default_mesh();
    let load_row = rng.random_range(0..=ny);
    let theta = rng.random_range(0.0..TAU);
    let v_f = rng.random_range(0.2..0.8);
    let mut spec = match scenario {
        Scenario::Linear => ProblemSpec::linear(load_row, theta, v_f),
        Scenario::NeoHookean => {
            let p = rng.random_range(0.0..NEOHOOKEAN_P_MAX);
            ProblemSpec::neo_hookean(load_row, theta, p, v_f)
        }
        Scenario::Stress => {
            let p = rng.random_range(0.0..STRESS_P_MAX);
            let r = rng.random_range(STRESS_R_MIN..STRESS_R_MAX);
            ProblemSpec::stress(load_row, theta, p, v_f, r)
        }
    };
    spec.seed = seed;
    spec.index = index;
    spec
}
