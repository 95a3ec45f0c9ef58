use crate::error::{invalid, Error, Result};
use crate::problem::{ProblemSpec, Scenario, STRESS_R_MAX};

/// Side of the square canvas every channel is padded to.
pub const CANVAS: usize = 64;
/// The r_min channel stores `r_min / R_MIN_SCALE`.
pub const R_MIN_SCALE: f64 = STRESS_R_MAX;

const PLANE: usize = CANVAS * CANVAS;

/// Network input channels and target image, each anchored at the top-left
/// of a 64x64 zero canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTensor {
    pub names: Vec<String>,
    pub nx: usize,
    pub ny: usize,
    /// `names.len()` planes of 64x64, row-major.
    pub inputs: Vec<f32>,
    /// 64x64 densities, row-major.
    pub target: Vec<f32>,
}

pub fn channel_names(scenario: Scenario) -> Vec<String> {
    let mut names = vec!["u_x", "u_y", "P_x", "P_y", "V_f"];
    if scenario == Scenario::Stress {
        names.push("r_min");
    }
    names.into_iter().map(String::from).collect()
}

pub fn encode_channels(spec: &ProblemSpec, design: &[f64]) -> Result<ChannelTensor> {
    let (nx, ny) = (spec.nx, spec.ny);
    if nx + 1 > CANVAS || ny + 1 > CANVAS {
        return Err(Error::UnsupportedSize { nx, ny });
    }
    if design.len() != nx * ny {
        return invalid(format!(
            "design has {} values, mesh has {} elements",
            design.len(),
            nx * ny
        ));
    }
    let names = channel_names(spec.scenario);
    let mut inputs = vec![0.0f32; names.len() * PLANE];
    let (ux, rest) = inputs.split_at_mut(PLANE);
    let (uy, rest) = rest.split_at_mut(PLANE);
    let (px, rest) = rest.split_at_mut(PLANE);
    let (py, rest) = rest.split_at_mut(PLANE);
    let (vf, rest) = rest.split_at_mut(PLANE);

    for row in 0..=ny {
        ux[row * CANVAS] = 1.0;
        uy[row * CANVAS] = 1.0;
    }
    let scale = match spec.scenario {
        Scenario::Linear => 1.0,
        sc => spec.magnitude / sc.p_max(),
    };
    let at = spec.load_row * CANVAS + nx;
    px[at] = (scale * spec.theta.cos()) as f32;
    py[at] = (scale * spec.theta.sin()) as f32;

    let mut target = vec![0.0f32; PLANE];
    for row in 0..ny {
        for col in 0..nx {
            vf[row * CANVAS + col] = spec.v_f as f32;
            target[row * CANVAS + col] = design[row * nx + col] as f32;
        }
    }
    if spec.scenario == Scenario::Stress {
        let r = (spec.r_min / R_MIN_SCALE) as f32;
        for row in 0..ny {
            rest[row * CANVAS..row * CANVAS + nx].fill(r);
        }
    }
    Ok(ChannelTensor {
        names,
        nx,
        ny,
        inputs,
        target,
    })
}

impl ChannelTensor {
    pub fn n_channels(&self) -> usize {
        self.names.len()
    }

    pub fn channel(&self, name: &str) -> Option<&[f32]> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(&self.inputs[k * PLANE..(k + 1) * PLANE])
    }

    /// Pixel `(row, col)` carrying the load, if any load component is nonzero.
    pub fn loaded_pixel(&self) -> Option<(usize, usize)> {
        let px = self.channel("P_x")?;
        let py = self.channel("P_y")?;
        (0..PLANE)
            .find(|&i| px[i] != 0.0 || py[i] != 0.0)
            .map(|i| (i / CANVAS, i % CANVAS))
    }

    /// Node rows marked as clamped in column 0.
    pub fn fixed_rows(&self) -> Vec<usize> {
        let ux = self.channel("u_x").unwrap_or(&[]);
        (0..CANVAS.min(ux.len() / CANVAS.max(1)))
            .filter(|&r| ux[r * CANVAS] == 1.0)
            .collect()
    }

    /// Target densities cropped to the mesh.
    pub fn cropped_target(&self) -> Vec<f64> {
        (0..self.ny)
            .flat_map(|r| (0..self.nx).map(move |c| (r, c)))
            .map(|(r, c)| self.target[r * CANVAS + c] as f64)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{sample_problem, NEOHOOKEAN_P_MAX};

    fn design(nx: usize, ny: usize) -> Vec<f64> {
        (0..nx * ny).map(|i| ((i * 37) % 101) as f64 / 100.0).collect()
    }

    #[test]
    fn loaded_pixel_and_fixed_edge() {
        let spec = ProblemSpec::neo_hookean(7, 0.0, NEOHOOKEAN_P_MAX, 0.4);
        let t = encode_channels(&spec, &design(50, 50)).unwrap();
        assert_eq!(t.names, ["u_x", "u_y", "P_x", "P_y", "V_f"]);
        assert_eq!(t.loaded_pixel(), Some((7, 50)));
        let px = t.channel("P_x").unwrap();
        let py = t.channel("P_y").unwrap();
        assert_eq!((px[7 * 64 + 50], py[7 * 64 + 50]), (1.0, 0.0));
        assert_eq!(px.iter().sum::<f32>(), 1.0);
        for name in ["u_x", "u_y"] {
            let c = t.channel(name).unwrap();
            assert_eq!(c.iter().filter(|&&v| v == 1.0).count(), 51);
            assert_eq!(c.iter().sum::<f32>(), 51.0);
        }
        assert_eq!(t.fixed_rows(), (0..=50).collect::<Vec<_>>());
    }

    #[test]
    fn linear_load_is_unit_and_stress_adds_radius() {
        let spec = ProblemSpec::linear(16, 1.0, 0.3);
        let t = encode_channels(&spec, &design(32, 32)).unwrap();
        let at = 16 * 64 + 32;
        assert_eq!(t.channel("P_x").unwrap()[at], 1.0f64.cos() as f32);
        assert_eq!(t.channel("P_y").unwrap()[at], 1.0f64.sin() as f32);
        assert!(t.channel("r_min").is_none());

        let spec = ProblemSpec::stress(3, 2.0, 5.0e5, 0.5, 0.05);
        let t = encode_channels(&spec, &design(50, 50)).unwrap();
        assert_eq!(t.n_channels(), 6);
        let r = t.channel("r_min").unwrap();
        assert_eq!(r[0], 0.5);
        assert_eq!(r.iter().filter(|&&v| v != 0.0).count(), 2500);
        assert_eq!(t.channel("P_x").unwrap()[3 * 64 + 50], (0.5 * 2.0f64.cos()) as f32);
    }

    #[test]
    fn padding_is_zero_and_target_crops_back() {
        for sc in [Scenario::Linear, Scenario::NeoHookean, Scenario::Stress] {
            for i in 0..10 {
                let spec = sample_problem(3, i, sc);
                let d = design(spec.nx, spec.ny);
                let t = encode_channels(&spec, &d).unwrap();
                for k in 0..t.n_channels() {
                    let plane = &t.inputs[k * PLANE..(k + 1) * PLANE];
                    for r in 0..CANVAS {
                        for c in 0..CANVAS {
                            if r > spec.ny || c > spec.nx {
                                assert_eq!(plane[r * CANVAS + c], 0.0);
                            }
                        }
                    }
                }
                assert!(t.target.iter().enumerate().all(|(i, &v)| v == 0.0
                    || (i / CANVAS < spec.ny && i % CANVAS < spec.nx)));
                let back = t.cropped_target();
                assert!(back.iter().zip(&d).all(|(a, b)| *a == *b as f32 as f64));
                if spec.magnitude > 0.0 {
                    assert_eq!(t.loaded_pixel(), Some((spec.load_row, spec.nx)));
                }
                assert_eq!(t.fixed_rows().len(), spec.ny + 1);
            }
        }
    }

    #[test]
    fn rejects_large_meshes() {
        let spec = ProblemSpec::linear(0, 0.0, 0.5).with_mesh(64, 10);
        assert!(matches!(
            encode_channels(&spec, &vec![0.5; 640]),
            Err(Error::UnsupportedSize { nx: 64, ny: 10 })
        ));
        let spec = ProblemSpec::linear(0, 0.0, 0.5).with_mesh(63, 63);
        assert!(encode_channels(&spec, &vec![0.5; 63 * 63]).is_ok());
        let spec = ProblemSpec::linear(0, 0.0, 0.5);
        assert!(encode_channels(&spec, &[0.5; 3]).is_err());
    }
}
