//! Central finite-difference check of the adjoint sensitivities.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::topopt::ProblemContext;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Compliance,
    Volume,
    Stress,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::Compliance => "G",
            Quantity::Volume => "g1",
            Quantity::Stress => "g2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdEntry {
    pub element: usize,
    pub adjoint: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantityReport {
    pub quantity: Quantity,
    pub entries: Vec<FdEntry>,
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub h: f64,
    pub quantities: Vec<QuantityReport>,
}

impl FdReport {
    pub fn max_rel_err(&self) -> f64 {
        self.quantities.iter().fold(0.0f64, |m, q| m.max(q.max_rel_err))
    }

    pub fn get(&self, quantity: Quantity) -> Option<&QuantityReport> {
        self.quantities.iter().find(|q| q.quantity == quantity)
    }

    /// `quantity,element,adjoint,fd,rel_err`
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "quantity,element,adjoint,fd,rel_err")?;
        for q in &self.quantities {
            for e in &q.entries {
                writeln!(
                    out,
                    "{},{},{:e},{:e},{:e}",
                    q.quantity.name(),
                    e.element,
                    e.adjoint,
                    e.fd,
                    e.rel_err
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FdOptions {
    pub h: f64,
    /// Design variables to perturb; all when `None`.
    pub elements: Option<Vec<usize>>,
    /// Test hook: multiplies every adjoint component by this factor.
    pub corrupt_gradient: Option<f64>,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: 1e-4,
            elements: None,
            corrupt_gradient: None,
        }
    }
}

/// Relative error `|a - f| / max(|a|, |f|)`, 0 when both vanish.
pub fn relative_error(adjoint: f64, fd: f64) -> f64 {
    let den = adjoint.abs().max(fd.abs());
    if den == 0.0 {
        0.0
    } else {
        (adjoint - fd).abs() / den
    }
}

/// Builds a report from matching adjoint and finite-difference columns.
pub fn compare(quantity: Quantity, elements: &[usize], adjoint: &[f64], fd: &[f64]) -> QuantityReport {
    let entries: Vec<FdEntry> = elements
        .iter()
        .zip(adjoint.iter().zip(fd))
        .map(|(&element, (&a, &f))| FdEntry {
            element,
            adjoint: a,
            fd: f,
            rel_err: relative_error(a, f),
        })
        .collect();
    let max_rel_err = entries.iter().fold(0.0f64, |m, e| m.max(e.rel_err));
    let mean_rel_err = if entries.is_empty() {
        0.0
    } else {
        entries.iter().map(|e| e.rel_err).sum::<f64>() / entries.len() as f64
    };
    QuantityReport {
        quantity,
        entries,
        max_rel_err,
        mean_rel_err,
    }
}

/// Compares design-variable sensitivities of `G`, `g1` and (stress scenario)
/// `g2` against central differences with step `h`.
pub fn fd_verify(ctx: &ProblemContext, design: &[f64], opts: &FdOptions) -> Result<FdReport> {
    let n = ctx.n_elements();
    if design.len() != n {
        return invalid("design length does not match the mesh");
    }
    if !(opts.h > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {}", opts.h));
    }
    let elements: Vec<usize> = match &opts.elements {
        Some(list) => {
            if list.iter().any(|&e| e >= n) {
                return invalid("element index out of range");
            }
            list.clone()
        }
        None => (0..n).collect(),
    };

    let (_, eval) = ctx.evaluate_design(design)?;
    let (dc, dg1, dg2) = eval.design_gradients(&ctx.filter);
    let has_stress = dg2.is_some();
    let scale = opts.corrupt_gradient.unwrap_or(1.0);
    let pick = |g: &[f64]| elements.iter().map(|&e| g[e] * scale).collect::<Vec<_>>();

    let h = opts.h;
    let fd: Vec<[f64; 3]> = elements
        .par_iter()
        .map(|&e| -> Result<[f64; 3]> {
            let mut xp = design.to_vec();
            xp[e] += h;
            let mut xm = design.to_vec();
            xm[e] -= h;
            let (_, p) = ctx.evaluate_design(&xp)?;
            let (_, m) = ctx.evaluate_design(&xm)?;
            let d = |a: f64, b: f64| (a - b) / (2.0 * h);
            Ok([
                d(p.compliance, m.compliance),
                d(p.g1, m.g1),
                d(p.g2.unwrap_or(0.0), m.g2.unwrap_or(0.0)),
            ])
        })
        .collect::<Result<_>>()?;
    let column = |k: usize| fd.iter().map(|v| v[k]).collect::<Vec<_>>();

    let mut quantities = vec![
        compare(Quantity::Compliance, &elements, &pick(&dc), &column(0)),
        compare(Quantity::Volume, &elements, &pick(&dg1), &column(1)),
    ];
    if let Some(dg2) = dg2.filter(|_| has_stress) {
        quantities.push(compare(Quantity::Stress, &elements, &pick(&dg2), &column(2)));
    }
    Ok(FdReport { h, quantities })
}

/// Runs [`fd_verify`] for each step size.
pub fn fd_sweep(ctx: &ProblemContext, design: &[f64], steps: &[f64], opts: &FdOptions) -> Result<Vec<FdReport>> {
    steps
        .iter()
        .map(|&h| fd_verify(ctx, design, &FdOptions { h, ..opts.clone() }))
        .collect()
}
