//! Method of Moving Asymptotes (Svanberg) with elastic constraint variables.
//!
//! Each update builds the convex separable approximation
//! `sum_j p_ij / (U_j - x_j) + q_ij / (x_j - L_j)` of the objective and the
//! constraints, then solves the resulting subproblem through its concave
//! dual in the constraint multipliers.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmaParams {
    pub asyinit: f64,
    pub asyincr: f64,
    pub asydecr: f64,
    pub move_limit: f64,
    pub albefa: f64,
    pub raa0: f64,
    /// Linear penalty on the elastic variables.
    pub c: f64,
    /// Quadratic penalty on the elastic variables.
    pub d: f64,
    pub kkt_tol: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        Self {
            asyinit: 0.5,
            asyincr: 1.2,
            asydecr: 0.7,
            move_limit: 0.2,
            albefa: 0.1,
            raa0: 1e-5,
            c: 1000.0,
            d: 1.0,
            kkt_tol: 1e-9,
        }
    }
}

/// Iterate history carried between updates.
#[derive(Debug, Clone, PartialEq)]
pub struct MmaState {
    pub iteration: usize,
    pub x_prev1: Vec<f64>,
    pub x_prev2: Vec<f64>,
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    /// Objective normalization, fixed by the first nonzero gradient.
    pub f0_scale: Option<f64>,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        Self {
            iteration: 0,
            x_prev1: vec![0.0; n],
            x_prev2: vec![0.0; n],
            low: vec![0.0; n],
            upp: vec![0.0; n],
            f0_scale: None,
        }
    }
}

/// Convex separable subproblem in `x` and the elastic variables `y`:
/// minimize `sum_j (p0_j/(U_j-x_j) + q0_j/(x_j-L_j)) + sum_i (c y_i + d y_i^2 / 2)`
/// subject to `sum_j (p_ij/(U_j-x_j) + q_ij/(x_j-L_j)) - b_i - y_i <= 0`,
/// `alpha <= x <= beta`, `y >= 0`.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub low: Vec<f64>,
    pub upp: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub p0: Vec<f64>,
    pub q0: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Projected dual gradient norm (max abs).
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct MmaStep {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kkt_residual: f64,
}

impl Subproblem {
    pub fn n(&self) -> usize {
        self.low.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        let m = self.m();
        let lens = [
            self.upp.len(),
            self.alpha.len(),
            self.beta.len(),
            self.p0.len(),
            self.q0.len(),
        ];
        if lens.iter().any(|&l| l != n)
            || self.p.len() != m
            || self.q.len() != m
            || self.c.len() != m
            || self.d.len() != m
            || self.p.iter().chain(&self.q).any(|r| r.len() != n)
        {
            return invalid("subproblem dimensions disagree");
        }
        for j in 0..n {
            if !(self.low[j] < self.alpha[j] && self.alpha[j] <= self.beta[j] && self.beta[j] < self.upp[j]) {
                return invalid(format!("bad asymptotes or bounds at variable {j}"));
            }
            if !(self.p0[j] >= 0.0 && self.q0[j] >= 0.0) {
                return invalid("negative objective approximation coefficient");
            }
        }
        if self.p.iter().chain(&self.q).flatten().any(|v| !(*v >= 0.0))
            || self.d.iter().any(|v| !(*v > 0.0))
        {
            return invalid("constraint coefficients must be nonnegative and d positive");
        }
        Ok(())
    }

    /// Lagrangian minimizers `x(lambda)`, `y(lambda)`.
    fn primal(&self, lambda: &[f64], x: &mut [f64], y: &mut [f64]) {
        for j in 0..self.n() {
            let mut pj = self.p0[j];
            let mut qj = self.q0[j];
            for i in 0..self.m() {
                pj += lambda[i] * self.p[i][j];
                qj += lambda[i] * self.q[i][j];
            }
            let (sp, sq) = (pj.sqrt(), qj.sqrt());
            let xj = if sp + sq > 0.0 {
                (sp * self.low[j] + sq * self.upp[j]) / (sp + sq)
            } else {
                0.5 * (self.alpha[j] + self.beta[j])
            };
            x[j] = xj.clamp(self.alpha[j], self.beta[j]);
        }
        for i in 0..self.m() {
            y[i] = ((lambda[i] - self.c[i]) / self.d[i]).max(0.0);
        }
    }

    /// Constraint approximation values `h_i(x)` (before subtracting `b`).
    fn constraint_terms(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m())
            .map(|i| {
                (0..self.n())
                    .map(|j| self.p[i][j] / (self.upp[j] - x[j]) + self.q[i][j] / (x[j] - self.low[j]))
                    .sum()
            })
            .collect()
    }

    fn objective_terms(&self, x: &[f64]) -> f64 {
        (0..self.n())
            .map(|j| self.p0[j] / (self.upp[j] - x[j]) + self.q0[j] / (x[j] - self.low[j]))
            .sum()
    }

    /// Dual value and gradient at `lambda`.
    fn dual(&self, lambda: &[f64], x: &mut [f64], y: &mut [f64]) -> (f64, Vec<f64>) {
        self.primal(lambda, x, y);
        let h = self.constraint_terms(x);
        let mut w = self.objective_terms(x);
        let mut grad = vec![0.0; self.m()];
        for i in 0..self.m() {
            grad[i] = h[i] - self.b[i] - y[i];
            w += lambda[i] * grad[i] + self.c[i] * y[i] + 0.5 * self.d[i] * y[i] * y[i];
        }
        (w, grad)
    }

    /// Dual Hessian (negative semidefinite) at the current primal point.
    fn dual_hessian(&self, lambda: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let m = self.m();
        let mut hess = vec![vec![0.0; m]; m];
        for j in 0..self.n() {
            if x[j] <= self.alpha[j] || x[j] >= self.beta[j] {
                continue;
            }
            let (ux, xl) = (self.upp[j] - x[j], x[j] - self.low[j]);
            let mut pj = self.p0[j];
            let mut qj = self.q0[j];
            for i in 0..m {
                pj += lambda[i] * self.p[i][j];
                qj += lambda[i] * self.q[i][j];
            }
            let curv = 2.0 * pj / ux.powi(3) + 2.0 * qj / xl.powi(3);
            if !(curv > 0.0) {
                continue;
            }
            let dg: Vec<f64> = (0..m)
                .map(|i| self.p[i][j] / (ux * ux) - self.q[i][j] / (xl * xl))
                .collect();
            for a in 0..m {
                for b in 0..m {
                    hess[a][b] -= dg[a] * dg[b] / curv;
                }
            }
        }
        for i in 0..m {
            if lambda[i] > self.c[i] {
                hess[i][i] -= 1.0 / self.d[i];
            }
        }
        hess
    }

    pub fn kkt_residual(&self, lambda: &[f64]) -> f64 {
        let mut x = vec![0.0; self.n()];
        let mut y = vec![0.0; self.m()];
        let (_, g) = self.dual(lambda, &mut x, &mut y);
        projected_residual(lambda, &g)
    }
}

fn projected_residual(lambda: &[f64], grad: &[f64]) -> f64 {
    lambda
        .iter()
        .zip(grad)
        .map(|(&l, &g)| if l > 0.0 { g.abs() } else { g.max(0.0) })
        .fold(0.0, f64::max)
}

/// Solves `A d = r` for a small dense symmetric negative definite `A`.
fn solve_small(a: &[Vec<f64>], r: &[f64]) -> Option<Vec<f64>> {
    let k = r.len();
    let mut m: Vec<Vec<f64>> = a.iter().map(|row| row.clone()).collect();
    let mut v = r.to_vec();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        v.swap(col, piv);
        for row in col + 1..k {
            let f = m[row][col] / m[col][col];
            for c in col..k {
                m[row][c] -= f * m[col][c];
            }
            v[row] -= f * v[col];
        }
    }
    let mut out = vec![0.0; k];
    for row in (0..k).rev() {
        let s: f64 = (row + 1..k).map(|c| m[row][c] * out[c]).sum();
        out[row] = (v[row] - s) / m[row][row];
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Maximizes the dual by projected Newton, falling back to nested
/// bisection over the multipliers when Newton stalls.
pub fn solve_subproblem(sp: &Subproblem, tol: f64) -> Result<SubproblemSolution> {
    sp.check()?;
    let (n, m) = (sp.n(), sp.m());
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    let mut lambda = vec![0.0; m];
    let (mut w, mut grad) = sp.dual(&lambda, &mut x, &mut y);
    let mut res = projected_residual(&lambda, &grad);

    let mut rounds = 0;
    while res > tol && rounds < 100 {
        rounds += 1;
        if !newton_step(sp, &mut lambda, &mut x, &mut y, &mut w, &mut grad) {
            break;
        }
        res = projected_residual(&lambda, &grad);
    }
    if res > tol {
        let mut fallback = vec![0.0; m];
        maximize_from(sp, &mut fallback, 0);
        let r = sp.kkt_residual(&fallback);
        if r < res {
            lambda = fallback;
            res = r;
        }
    }
    sp.primal(&lambda, &mut x, &mut y);
    if !(res <= tol.max(1e-6)) {
        return Err(Error::Subproblem(format!(
            "dual residual {res:.3e} after {rounds} Newton rounds, lambda = {lambda:?}"
        )));
    }
    if res > tol {
        log::debug!("subproblem residual {res:.3e} above target {tol:.1e}");
    }
    Ok(SubproblemSolution {
        x,
        y,
        lambda,
        kkt_residual: res,
    })
}

/// One projected Newton ascent step with backtracking. Returns whether the
/// dual value increased.
fn newton_step(
    sp: &Subproblem,
    lambda: &mut Vec<f64>,
    x: &mut [f64],
    y: &mut [f64],
    w: &mut f64,
    grad: &mut Vec<f64>,
) -> bool {
    let m = sp.m();
    let free: Vec<usize> = (0..m).filter(|&i| lambda[i] > 0.0 || grad[i] > 0.0).collect();
    if free.is_empty() {
        return false;
    }
    let hess = sp.dual_hessian(lambda, x);
    let hf: Vec<Vec<f64>> = free
        .iter()
        .map(|&a| free.iter().map(|&b| hess[a][b]).collect())
        .collect();
    let rf: Vec<f64> = free.iter().map(|&i| -grad[i]).collect();
    let dir = match solve_small(&hf, &rf) {
        Some(d) if d.iter().zip(&free).map(|(d, &i)| d * grad[i]).sum::<f64>() > 0.0 => d,
        _ => return false,
    };
    let mut t = 1.0;
    let mut xt = vec![0.0; sp.n()];
    let mut yt = vec![0.0; m];
    let res0 = projected_residual(lambda, grad);
    for _ in 0..40 {
        let mut trial = lambda.clone();
        for (k, &i) in free.iter().enumerate() {
            trial[i] = (lambda[i] + t * dir[k]).max(0.0);
        }
        let (wt, gt) = sp.dual(&trial, &mut xt, &mut yt);
        if wt > *w || (wt >= *w && projected_residual(&trial, &gt) < res0) {
            *lambda = trial;
            *w = wt;
            *grad = gt;
            x.copy_from_slice(&xt);
            y.copy_from_slice(&yt);
            return true;
        }
        t *= 0.5;
    }
    false
}

/// Maximizes the dual over `lambda[i..]` with `lambda[..i]` fixed, by
/// bisection on coordinate `i` of the inner maximum. The dual is concave and
/// continuously differentiable, so each partial derivative of the inner
/// maximum is continuous and non-increasing.
fn maximize_from(sp: &Subproblem, lambda: &mut [f64], i: usize) {
    let m = sp.m();
    if i == m {
        return;
    }
    let mut x = vec![0.0; sp.n()];
    let mut y = vec![0.0; m];
    let mut partial = |l: f64, lambda: &mut [f64]| {
        lambda[i] = l;
        maximize_from(sp, lambda, i + 1);
        sp.dual(lambda, &mut x, &mut y).1[i]
    };
    if partial(0.0, lambda) <= 0.0 {
        return;
    }
    let (mut lo, mut hi) = (0.0, sp.c[i].max(1.0));
    while partial(hi, lambda) > 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return;
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if partial(mid, lambda) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g_lo = partial(lo, lambda);
    let g_hi = partial(hi, lambda);
    if g_lo.abs() <= g_hi.abs() {
        partial(lo, lambda);
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// One MMA iteration. Returns the next iterate and the updated state.
///
/// The objective gradient is divided by the largest gradient magnitude seen
/// at the first iteration and every constraint row by its current largest
/// magnitude, so the iterates do not depend on the scale of the objective.
#[allow(clippy::too_many_arguments)]
pub fn mma_update(
    state: &MmaState,
    params: &MmaParams,
    x: &[f64],
    df0: &[f64],
    g: &[f64],
    dg: &[Vec<f64>],
    xmin: &[f64],
    xmax: &[f64],
) -> Result<(MmaStep, MmaState)> {
    let n = x.len();
    let m = g.len();
    if df0.len() != n
        || xmin.len() != n
        || xmax.len() != n
        || dg.len() != m
        || dg.iter().any(|r| r.len() != n)
        || state.low.len() != n
    {
        return invalid("mma_update dimensions disagree");
    }
    if x.iter().chain(df0).chain(g).chain(dg.iter().flatten()).any(|v| !v.is_finite()) {
        return invalid("non-finite mma input");
    }
    for j in 0..n {
        if !(xmin[j] < xmax[j]) || x[j] < xmin[j] || x[j] > xmax[j] {
            return invalid(format!("variable {j} outside its bounds"));
        }
    }

    let iteration = state.iteration + 1;
    let mut low = vec![0.0; n];
    let mut upp = vec![0.0; n];
    for j in 0..n {
        let range = xmax[j] - xmin[j];
        if iteration <= 2 {
            low[j] = x[j] - params.asyinit * range;
            upp[j] = x[j] + params.asyinit * range;
        } else {
            let osc = (x[j] - state.x_prev1[j]) * (state.x_prev1[j] - state.x_prev2[j]);
            let factor = if osc > 0.0 {
                params.asyincr
            } else if osc < 0.0 {
                params.asydecr
            } else {
                1.0
            };
            low[j] = (x[j] - factor * (state.x_prev1[j] - state.low[j]))
                .clamp(x[j] - 10.0 * range, x[j] - 0.01 * range);
            upp[j] = (x[j] + factor * (state.upp[j] - state.x_prev1[j]))
                .clamp(x[j] + 0.01 * range, x[j] + 10.0 * range);
        }
    }

    let f0_scale = state
        .f0_scale
        .or_else(|| Some(max_abs(df0)).filter(|&s| s > 0.0));
    let s0 = f0_scale.unwrap_or(1.0);
    let mut sp = Subproblem {
        alpha: vec![0.0; n],
        beta: vec![0.0; n],
        p0: vec![0.0; n],
        q0: vec![0.0; n],
        p: vec![vec![0.0; n]; m],
        q: vec![vec![0.0; n]; m],
        b: vec![0.0; m],
        c: vec![params.c; m],
        d: vec![params.d; m],
        low,
        upp,
    };
    for j in 0..n {
        let range = xmax[j] - xmin[j];
        let (l, u) = (sp.low[j], sp.upp[j]);
        sp.alpha[j] = xmin[j]
            .max(l + params.albefa * (x[j] - l))
            .max(x[j] - params.move_limit * range);
        sp.beta[j] = xmax[j]
            .min(u - params.albefa * (u - x[j]))
            .min(x[j] + params.move_limit * range);
        let (ux1, xl1) = (u - x[j], x[j] - l);
        let reg = params.raa0 / range.max(1e-5);
        let d0 = df0[j] / s0;
        let pq = 0.001 * d0.abs() + reg;
        sp.p0[j] = (d0.max(0.0) + pq) * ux1 * ux1;
        sp.q0[j] = ((-d0).max(0.0) + pq) * xl1 * xl1;
    }
    for i in 0..m {
        let si = max_abs(&dg[i]);
        let si = if si > 0.0 { si } else { 1.0 };
        let mut b = -g[i] / si;
        for j in 0..n {
            let range = xmax[j] - xmin[j];
            let (ux1, xl1) = (sp.upp[j] - x[j], x[j] - sp.low[j]);
            let dij = dg[i][j] / si;
            let pq = 0.001 * dij.abs() + params.raa0 / range.max(1e-5);
            sp.p[i][j] = (dij.max(0.0) + pq) * ux1 * ux1;
            sp.q[i][j] = ((-dij).max(0.0) + pq) * xl1 * xl1;
            b += sp.p[i][j] / ux1 + sp.q[i][j] / xl1;
        }
        sp.b[i] = b;
    }

    let sol = solve_subproblem(&sp, params.kkt_tol)?;
    let next = MmaState {
        iteration,
        x_prev2: state.x_prev1.clone(),
        x_prev1: x.to_vec(),
        low: sp.low,
        upp: sp.upp,
        f0_scale,
    };
    Ok((
        MmaStep {
            x: sol.x,
            y: sol.y,
            lambda: sol.lambda,
            kkt_residual: sol.kkt_residual,
        },
        next,
    ))
}
