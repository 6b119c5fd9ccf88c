//! Damped Newton–Krylov solves of the regularized problem, continuation in
//! `μ` from the explicit constant solution, the `ε → 0` sweep and a
//! proximal-point fallback.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{MfgError, Result};
use crate::hamiltonian::{HamiltonianSpec, ModelHamiltonianParams};
use crate::mfg_operator::{beta, Linearization, MfgState, Operator, RegularizationParams, ResidualPair, SpecState};
use crate::torus_grid::{gradient, integrate, Field, TorusGrid};
use crate::verify::{compute_apriori, AprioriQuantities};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Decreasing `μ` values from 1 to 0 plus the Newton controls used at
/// every stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuationSchedule {
    pub mu_values: Vec<f64>,
    pub max_newton_iters: usize,
    pub newton_tol: f64,
    pub step_halving_limit: u32,
    /// Linear solves stop at `forcing · ‖F‖₂`.
    pub forcing: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            mu_values: vec![1.0, 0.75, 0.5, 0.25, 0.1, 0.0],
            max_newton_iters: 50,
            newton_tol: 1e-10,
            step_halving_limit: 20,
            forcing: 1e-3,
        }
    }
}

impl ContinuationSchedule {
    pub fn new(mu_values: Vec<f64>, max_newton_iters: usize, newton_tol: f64, step_halving_limit: u32) -> Result<Self> {
        let s = ContinuationSchedule {
            mu_values,
            max_newton_iters,
            newton_tol,
            step_halving_limit,
            ..Default::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let mu = &self.mu_values;
        if mu.len() < 2 || mu[0] != 1.0 || *mu.last().expect("nonempty") != 0.0 {
            return Err(MfgError::config("mu", "must start at 1.0 and end at 0.0"));
        }
        if mu.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(MfgError::config("mu", "must be strictly decreasing"));
        }
        if self.max_newton_iters == 0 {
            return Err(MfgError::config("max_newton_iters", "must be >= 1"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(MfgError::config("newton_tol", "must be > 0"));
        }
        if self.step_halving_limit == 0 || self.step_halving_limit > 60 {
            return Err(MfgError::config("step_halving_limit", "must lie in 1..=60"));
        }
        if !(self.forcing > 0.0 && self.forcing < 1.0) {
            return Err(MfgError::config("forcing", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn newton_options(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.newton_tol,
            max_iters: self.max_newton_iters,
            step_halving_limit: self.step_halving_limit,
            forcing: self.forcing,
            ..NewtonOptions::default()
        }
    }
}

/// Strictly decreasing `(ε₁, ε₂)` levels in `(0,1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonSchedule {
    pub levels: Vec<(f64, f64)>,
}

impl EpsilonSchedule {
    pub fn new(levels: Vec<(f64, f64)>) -> Result<Self> {
        if levels.is_empty() {
            return Err(MfgError::config("eps_levels", "need at least one level"));
        }
        for &(a, b) in &levels {
            if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
                return Err(MfgError::config("eps", format!("({a}, {b}) outside (0, 1)")));
            }
        }
        if levels.windows(2).any(|w| !(w[1].0 < w[0].0 && w[1].1 < w[0].1)) {
            return Err(MfgError::config("eps", "levels must decrease in both components"));
        }
        Ok(EpsilonSchedule { levels })
    }

    /// `count` levels `start · ratio^k` in both components.
    pub fn geometric(start: (f64, f64), ratio: f64, count: usize) -> Result<Self> {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(MfgError::config("eps_ratio", "must lie in (0, 1)"));
        }
        Self::new(
            (0..count)
                .map(|k| {
                    let f = ratio.powi(k as i32);
                    (start.0 * f, start.1 * f)
                })
                .collect(),
        )
    }

    /// Default: ratio 1/2 from `(0.1, 0.1)`, 8 levels.
    pub fn default_levels() -> Self {
        Self::geometric((0.1, 0.1), 0.5, 8).expect("valid default")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub step_halving_limit: u32,
    pub forcing: f64,
    pub gmres_restart: usize,
    pub gmres_max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iters: 50,
            step_halving_limit: 20,
            forcing: 1e-3,
            gmres_restart: 60,
            gmres_max_iters: 1200,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NewtonReport {
    pub iterations: usize,
    pub linear_iterations: usize,
    pub residual: f64,
    /// Sup-norm residual at the start and after every accepted step.
    pub residual_history: Vec<f64>,
    /// `min m` at the start and after every accepted step.
    pub min_m_history: Vec<f64>,
}

// ---------------------------------------------------------------------------
// nonlinear systems in Fourier coordinates

/// Frequency-diagonal 2×2 block approximation of the derivative, used as a
/// right preconditioner: `shift·I + scale·[[L+b, −D], [D, L+c|k|²]]` with
/// `D = 1 + a|k|²`.
struct BlockPrecond {
    lin: Vec<f64>,
    k2: Vec<f64>,
    b1: f64,
    a: f64,
    c: f64,
    shift: f64,
    scale: f64,
}

impl BlockPrecond {
    fn new(op: &Operator<'_>, lin: &Linearization<'_, '_>, shift: f64, scale: f64) -> Self {
        let (b1, a, c) = lin.block_means();
        BlockPrecond {
            lin: op.lin_symbol().to_vec(),
            k2: op.wave_norm_sq().to_vec(),
            b1: b1.max(0.0),
            a: a.max(0.0),
            c: c.max(0.0),
            shift,
            scale,
        }
    }

    /// Map a nodal residual-space vector to a Fourier-space direction.
    fn apply(&self, grid: &TorusGrid, y: &[f64]) -> SpecState {
        let n = grid.len();
        let r1 = grid.forward(&y[..n]);
        let r2 = grid.forward(&y[n..]);
        let mut out = SpecState::zeros(n);
        for k in 0..n {
            let l = self.lin[k];
            let k2 = self.k2[k];
            let a11 = self.shift + self.scale * (l + self.b1);
            let a22 = self.shift + self.scale * (l + self.c * k2);
            let d = self.scale * (1.0 + self.a * k2);
            let det = a11 * a22 + d * d;
            out.m[k] = (r1[k] * a22 + r2[k] * d) / det;
            out.u[k] = (r2[k] * a11 - r1[k] * d) / det;
        }
        out
    }
}

trait System {
    fn grid(&self) -> &TorusGrid;
    fn residual(&self, s: &SpecState) -> Result<ResidualPair>;
    /// Jacobian-vector product and preconditioner at `s`.
    fn with_jacobian<T>(
        &self,
        s: &SpecState,
        f: &mut dyn FnMut(&dyn Fn(&SpecState) -> Result<ResidualPair>, &BlockPrecond) -> Result<T>,
    ) -> Result<T>;
}

impl System for Operator<'_> {
    fn grid(&self) -> &TorusGrid {
        Operator::grid(self)
    }

    fn residual(&self, s: &SpecState) -> Result<ResidualPair> {
        Operator::residual(self, s)
    }

    fn with_jacobian<T>(
        &self,
        s: &SpecState,
        f: &mut dyn FnMut(&dyn Fn(&SpecState) -> Result<ResidualPair>, &BlockPrecond) -> Result<T>,
    ) -> Result<T> {
        let lin = self.linearize(s)?;
        let pc = BlockPrecond::new(self, &lin, 0.0, 1.0);
        f(&|d| lin.apply(d), &pc)
    }
}

/// `G(w) = (w − anchor) + τ A(w)`, one implicit step of the monotone flow.
struct Proximal<'o, 'a> {
    op: &'o Operator<'a>,
    anchor: SpecState,
    tau: f64,
}

fn add_identity(grid: &TorusGrid, r: ResidualPair, s: &SpecState, scale: f64) -> ResidualPair {
    let w = s.to_nodal(grid);
    ResidualPair {
        r_hj: r.r_hj.zip_map(&w.m, |a, b| scale * a + b),
        r_fp: r.r_fp.zip_map(&w.u, |a, b| scale * a + b),
    }
}

impl System for Proximal<'_, '_> {
    fn grid(&self) -> &TorusGrid {
        self.op.grid()
    }

    fn residual(&self, s: &SpecState) -> Result<ResidualPair> {
        let r = self.op.residual(s)?;
        Ok(add_identity(self.grid(), r, &s.axpy(-1.0, &self.anchor), self.tau))
    }

    fn with_jacobian<T>(
        &self,
        s: &SpecState,
        f: &mut dyn FnMut(&dyn Fn(&SpecState) -> Result<ResidualPair>, &BlockPrecond) -> Result<T>,
    ) -> Result<T> {
        let lin = self.op.linearize(s)?;
        let pc = BlockPrecond::new(self.op, &lin, 1.0, self.tau);
        let grid = self.grid();
        f(&|d| Ok(add_identity(grid, lin.apply(d)?, d, self.tau)), &pc)
    }
}

fn stack(r: &ResidualPair) -> Vec<f64> {
    let mut v = r.r_hj.values().to_vec();
    v.extend_from_slice(r.r_fp.values());
    v
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations, zero
/// initial guess. Returns the solution, the number of operator applications
/// and the final residual norm.
fn gmres(
    op: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    b: &[f64],
    tol: f64,
    restart: usize,
    max_iters: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut total = 0;
    let mut r = b.to_vec();
    loop {
        let beta = norm2(&r);
        if beta <= tol || total >= max_iters {
            return Ok((x, total, beta));
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut cols = 0;
        for j in 0..restart {
            let mut w = op(&basis[j])?;
            total += 1;
            for (i, v) in basis.iter().enumerate() {
                h[i][j] = dot(&w, v);
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= h[i][j] * vk;
                }
            }
            h[j + 1][j] = norm2(&w);
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let den = h[j][j].hypot(h[j + 1][j]);
            if den == 0.0 {
                cols = j;
                break;
            }
            cs[j] = h[j][j] / den;
            sn[j] = h[j + 1][j] / den;
            let sub = h[j + 1][j];
            h[j][j] = den;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            cols = j + 1;
            if g[j + 1].abs() <= tol || total >= max_iters || sub == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / sub).collect());
        }
        // back substitution on the leading `cols` columns
        let mut z = vec![0.0; cols];
        for i in (0..cols).rev() {
            let s: f64 = (i + 1..cols).map(|k| h[i][k] * z[k]).sum();
            z[i] = (g[i] - s) / h[i][i];
        }
        for (zi, v) in z.iter().zip(&basis) {
            for (xk, vk) in x.iter_mut().zip(v) {
                *xk += zi * vk;
            }
        }
        let ax = op(&x)?;
        total += 1;
        r = b.iter().zip(&ax).map(|(a, c)| a - c).collect();
        if cols == 0 {
            return Ok((x, total, norm2(&r)));
        }
    }
}

fn min_nodal_m(grid: &TorusGrid, s: &SpecState) -> f64 {
    grid.inverse(&s.m).into_iter().fold(f64::INFINITY, f64::min)
}

fn newton_system<S: System>(sys: &S, start: SpecState, opts: &NewtonOptions) -> Result<(SpecState, NewtonReport)> {
    let grid = sys.grid().clone();
    let mut s = start;
    let mut r = sys.residual(&s)?;
    let mut res = r.sup_norm();
    let mut report = NewtonReport {
        residual: res,
        residual_history: vec![res],
        min_m_history: vec![min_nodal_m(&grid, &s)],
        ..Default::default()
    };
    let fail = |s: &SpecState, report: &NewtonReport, reason: &str| MfgError::NonConvergence {
        residual: report.residual,
        iterations: report.iterations,
        reason: reason.to_string(),
        best: Box::new(s.to_nodal(&grid)),
    };
    while res > opts.tol {
        if report.iterations >= opts.max_iters {
            return Err(fail(&s, &report, "iteration limit"));
        }
        let b: Vec<f64> = stack(&r).into_iter().map(|v| -v).collect();
        let tol = opts.forcing * norm2(&b);
        let (dir, lin_iters) = sys.with_jacobian(&s, &mut |jac, pc| {
            let mut op = |y: &[f64]| -> Result<Vec<f64>> { Ok(stack(&jac(&pc.apply(&grid, y))?)) };
            let (y, its, _) = gmres(&mut op, &b, tol, opts.gmres_restart, opts.gmres_max_iters)?;
            Ok((pc.apply(&grid, &y), its))
        })?;
        report.linear_iterations += lin_iters;

        let mut lambda = 1.0;
        let min_step = 0.5_f64.powi(opts.step_halving_limit as i32);
        loop {
            let trial = s.axpy(lambda, &dir);
            if let Ok(rt) = sys.residual(&trial) {
                let rt_sup = rt.sup_norm();
                if rt.is_finite() && rt_sup <= (1.0 - 0.25 * lambda) * res {
                    s = trial;
                    r = rt;
                    res = rt_sup;
                    break;
                }
            }
            lambda *= 0.5;
            if lambda < min_step {
                return Err(fail(&s, &report, "line search stagnation"));
            }
        }
        report.iterations += 1;
        report.residual = res;
        report.residual_history.push(res);
        report.min_m_history.push(min_nodal_m(&grid, &s));
    }
    Ok((s, report))
}

// ---------------------------------------------------------------------------
// public entry points

fn check_grid(state: &MfgState, spec: &HamiltonianSpec) -> Result<()> {
    state.m.check_grid(&state.u)?;
    if state.grid() != spec.potential.v0.grid() {
        return Err(MfgError::GridMismatch("state and Hamiltonian grids differ".into()));
    }
    Ok(())
}

/// The constant solution at `μ = 1`: `(1 − c̄(ε₁+ε₂), c̄)` where `c̄` is the
/// root of the constant first-row residual, located by bisection.
pub fn initial_constant_solution(
    spec: &HamiltonianSpec,
    reg: &RegularizationParams,
    model: &ModelHamiltonianParams,
) -> Result<MfgState> {
    let grid = spec.potential.v0.grid();
    reg.validate(grid.dim())?;
    let c = initial_constant_root(grid, spec, reg, model)?;
    Ok(MfgState::constant(grid, 1.0 - c * reg.eps_sum(), c))
}

fn constant_spec(grid: &TorusGrid, m: f64, u: f64) -> SpecState {
    let mut s = SpecState::zeros(grid.len());
    s.m[0] = Complex64::new(m, 0.0);
    s.u[0] = Complex64::new(u, 0.0);
    s
}

/// `c̄` itself; exposed for diagnostics.
pub fn initial_constant_root(
    grid: &TorusGrid,
    spec: &HamiltonianSpec,
    reg: &RegularizationParams,
    model: &ModelHamiltonianParams,
) -> Result<f64> {
    let op = Operator::new(spec, *model, 1.0, reg.into())?;
    let sum = reg.eps_sum();
    let f = |c: f64| -> Option<f64> {
        let r = op.residual(&constant_spec(grid, 1.0 - c * sum, c)).ok()?;
        Some(r.r_hj.values()[0])
    };
    let lo0 = -10.0 / (model.gamma * sum.min(1.0));
    let hi0 = (1.0 - 1e-8) / sum;
    let (f_lo0, f_hi0) = (f(lo0).unwrap_or(f64::NAN), f(hi0).unwrap_or(f64::NAN));
    let init_err = || MfgError::Initialization {
        lo: lo0,
        hi: hi0,
        f_lo: f_lo0,
        f_hi: f_hi0,
    };
    // sign-change scan on a uniform subdivision of the bracket
    let samples = 512;
    let mut bracket = None;
    let mut prev = (lo0, f_lo0);
    for i in 1..=samples {
        let c = lo0 + (hi0 - lo0) * i as f64 / samples as f64;
        let fc = f(c).unwrap_or(f64::NAN);
        if prev.1.is_finite() && fc.is_finite() && prev.1 * fc <= 0.0 {
            bracket = Some((prev.0, prev.1, c));
            break;
        }
        prev = (c, fc);
    }
    let (mut lo, f_lo, mut hi) = bracket.ok_or_else(init_err)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid).ok_or_else(init_err)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo).unwrap_or(f64::INFINITY), f(hi).unwrap_or(f64::INFINITY));
    Ok(if flo.abs() <= fhi.abs() { lo } else { hi })
}

/// Damped Newton on `A^ε_μ` from `start`.
pub fn newton_solve(
    start: &MfgState,
    mu: f64,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
    opts: &NewtonOptions,
) -> Result<(MfgState, NewtonReport)> {
    check_grid(start, spec)?;
    reg.validate(start.grid().dim())?;
    if start.m.min() <= 0.0 {
        return Err(MfgError::Positivity {
            what: "m",
            node: start.m.values().iter().position(|&v| v <= 0.0).unwrap_or(0),
            value: start.m.min(),
        });
    }
    let op = Operator::new(spec, *model, mu, reg.into())?;
    let (s, rep) = newton_system(&op, SpecState::from_nodal(start, true), opts)?;
    Ok((s.to_nodal(op.grid()), rep))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowReport {
    pub steps: usize,
    pub step_size: f64,
    /// Discrete L² norm of `A^ε_μ` at the start and after each step.
    pub residual_l2: Vec<f64>,
    pub residual_sup: f64,
}

fn residual_l2(r: &ResidualPair) -> f64 {
    (integrate(&(&r.r_hj * &r.r_hj)) + integrate(&(&r.r_fp * &r.r_fp))).sqrt()
}

fn flow_spec(
    op: &Operator<'_>,
    start: SpecState,
    step: f64,
    iters: usize,
    tol: f64,
    min_step: f64,
) -> Result<(SpecState, FlowReport)> {
    let mut s = start;
    let mut r = op.residual(&s)?;
    let mut report = FlowReport {
        steps: 0,
        step_size: step,
        residual_l2: vec![residual_l2(&r)],
        residual_sup: r.sup_norm(),
    };
    let mut tau = step;
    let opts = NewtonOptions {
        tol: 1e-12,
        forcing: 1e-6,
        ..NewtonOptions::default()
    };
    while report.residual_sup > tol && report.steps < iters {
        let prox = Proximal {
            op,
            anchor: s.clone(),
            tau,
        };
        // the inner tolerance is relative to the size of the step it solves for
        let inner = NewtonOptions {
            tol: (1e-10 * tau * report.residual_sup).max(1e-13),
            ..opts.clone()
        };
        match newton_system(&prox, s.clone(), &inner) {
            Ok((next, _)) => {
                s = next;
                r = op.residual(&s)?;
                report.steps += 1;
                report.residual_l2.push(residual_l2(&r));
                report.residual_sup = r.sup_norm();
            }
            Err(MfgError::NonConvergence { .. }) => {
                tau *= 0.5;
                if tau < min_step {
                    return Err(MfgError::StepCollapse { min_step });
                }
            }
            Err(e) => return Err(e),
        }
    }
    report.step_size = tau;
    Ok((s, report))
}

/// Implicit (proximal-point) monotone flow `w_{n+1} = (I + τA^ε_μ)^{-1} w_n`.
/// Stops when the sup-norm residual is at most `tol` or after `iters` steps.
#[allow(clippy::too_many_arguments)]
pub fn monotone_flow_solve(
    start: &MfgState,
    mu: f64,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
    step: f64,
    iters: usize,
    tol: f64,
) -> Result<(MfgState, FlowReport)> {
    check_grid(start, spec)?;
    reg.validate(start.grid().dim())?;
    if !(step > 0.0) {
        return Err(MfgError::config("step", "must be > 0"));
    }
    let op = Operator::new(spec, *model, mu, reg.into())?;
    let (s, rep) = flow_spec(&op, SpecState::from_nodal(start, true), step, iters, tol, step * 1e-6)?;
    Ok((s.to_nodal(op.grid()), rep))
}

// ---------------------------------------------------------------------------
// continuation and sweep

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub eps1: f64,
    pub eps2: f64,
    pub mu: f64,
    pub iterations: usize,
    pub linear_iterations: usize,
    pub residual: f64,
    pub min_m: f64,
    /// `min m` after every accepted Newton step of this stage.
    pub min_m_history: Vec<f64>,
    /// Set when the stage needed the monotone-flow fallback.
    pub flow_steps: Option<usize>,
    pub warm_start: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRecord {
    pub eps1: f64,
    pub eps2: f64,
    pub newton_iterations: usize,
    pub residual: f64,
    pub min_m: f64,
    pub mass: f64,
    /// `∫m − 1 + (ε₁+ε₂)∫u`
    pub mass_defect: f64,
    pub apriori: AprioriQuantities,
    /// `‖m_k − m_{k+1}‖_{L¹}` to the next level.
    pub cauchy_m_l1: Option<f64>,
    /// `‖D(u_k − u_{k+1})‖_{L^γ}` to the next level.
    pub cauchy_u_w1g: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitRecord {
    /// `"extrapolated"` or `"final_level"`.
    pub method: String,
    pub levels_used: usize,
    pub min_m: f64,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveTrace {
    pub schema_version: u32,
    pub stages: Vec<StageRecord>,
    pub levels: Vec<LevelRecord>,
    pub oscillation: bool,
    pub limit: Option<LimitRecord>,
}

impl Default for SolveTrace {
    fn default() -> Self {
        SolveTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            stages: Vec::new(),
            levels: Vec::new(),
            oscillation: false,
            limit: None,
        }
    }
}

impl SolveTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn stage_record(reg: &RegularizationParams, mu: f64, rep: &NewtonReport, min_m: f64, warm: bool) -> StageRecord {
    StageRecord {
        eps1: reg.eps1,
        eps2: reg.eps2,
        mu,
        iterations: rep.iterations,
        linear_iterations: rep.linear_iterations,
        residual: rep.residual,
        min_m,
        min_m_history: rep.min_m_history.clone(),
        flow_steps: None,
        warm_start: warm,
    }
}

fn continuation_spec(
    schedule: &ContinuationSchedule,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
    trace: &mut SolveTrace,
) -> Result<SpecState> {
    schedule.validate()?;
    let grid = spec.potential.v0.grid();
    reg.validate(grid.dim())?;
    let opts = schedule.newton_options();
    let init = initial_constant_solution(spec, reg, model)?;
    let mut state = SpecState::from_nodal(&init, true);
    let mut mu_cur = 1.0;
    {
        let op = Operator::new(spec, *model, 1.0, reg.into())?;
        let (s, rep) = newton_system(&op, state, &opts).map_err(|e| MfgError::Continuation {
            mu: 1.0,
            last_mu: 1.0,
            reason: e.to_string(),
        })?;
        state = s;
        trace
            .stages
            .push(stage_record(reg, 1.0, &rep, min_nodal_m(grid, &state), false));
    }
    for &target in &schedule.mu_values[1..] {
        let mut step = mu_cur - target;
        let mut halvings = 0;
        while mu_cur > target {
            let mu_try = (mu_cur - step).max(target);
            let op = Operator::new(spec, *model, mu_try, reg.into())?;
            match newton_system(&op, state.clone(), &opts) {
                Ok((s, rep)) => {
                    state = s;
                    mu_cur = mu_try;
                    trace
                        .stages
                        .push(stage_record(reg, mu_try, &rep, min_nodal_m(grid, &state), false));
                }
                Err(err) => {
                    halvings += 1;
                    if halvings <= schedule.step_halving_limit {
                        step *= 0.5;
                        continue;
                    }
                    // last resort: implicit monotone flow toward the solution, then Newton
                    let flowed = flow_spec(&op, state.clone(), 1.0, 200, 1e-3, 1e-8);
                    let recovered =
                        flowed.and_then(|(s, frep)| newton_system(&op, s, &opts).map(|(s, rep)| (s, rep, frep.steps)));
                    match recovered {
                        Ok((s, rep, steps)) => {
                            state = s;
                            mu_cur = mu_try;
                            let mut rec = stage_record(reg, mu_try, &rep, min_nodal_m(grid, &state), false);
                            rec.flow_steps = Some(steps);
                            trace.stages.push(rec);
                        }
                        Err(_) => {
                            return Err(MfgError::Continuation {
                                mu: mu_try,
                                last_mu: mu_cur,
                                reason: err.to_string(),
                            })
                        }
                    }
                }
            }
        }
    }
    Ok(state)
}

/// Continuation in `μ` from the constant solution at `μ = 1` to `μ = 0`.
pub fn continuation_solve(
    schedule: &ContinuationSchedule,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
) -> Result<(MfgState, SolveTrace)> {
    let mut trace = SolveTrace::default();
    let s = continuation_spec(schedule, reg, spec, model, &mut trace)?;
    Ok((s.to_nodal(spec.potential.v0.grid()), trace))
}

/// Polynomial extrapolation to `t = 0` through `(t_i, y_i)` (Neville).
pub fn neville_at_zero(t: &[f64], y: &[f64]) -> f64 {
    let mut p = y.to_vec();
    let n = t.len();
    for k in 1..n {
        for i in 0..n - k {
            p[i] = (t[i + k] * p[i] - t[i] * p[i + 1]) / (t[i + k] - t[i]);
        }
    }
    p[0]
}

fn extrapolate(states: &[MfgState], ts: &[f64]) -> MfgState {
    let grid = states[0].grid();
    let field = |pick: &dyn Fn(&MfgState) -> &Field| {
        let vals = (0..grid.len())
            .map(|i| {
                let y: Vec<f64> = states.iter().map(|s| pick(s).values()[i]).collect();
                neville_at_zero(ts, &y)
            })
            .collect();
        Field::raw(grid, vals)
    };
    MfgState {
        m: field(&|s| &s.m),
        u: field(&|s| &s.u),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepOptions {
    /// Degree of the extrapolation in `ε₁+ε₂` over the last levels; 0 keeps
    /// the final level as the limit candidate.
    pub extrapolation_order: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { extrapolation_order: 2 }
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    /// Terminal state at each `ε` level.
    pub states: Vec<MfgState>,
    pub regs: Vec<RegularizationParams>,
    pub limit: MfgState,
    pub trace: SolveTrace,
}

/// Solve along the `ε` schedule: continuation at the first level, warm-started
/// Newton at `μ = 0` afterwards (continuation again if that fails).
pub fn epsilon_sweep(
    eps: &EpsilonSchedule,
    schedule: &ContinuationSchedule,
    reg_template: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
    sweep: &SweepOptions,
) -> Result<SweepResult> {
    epsilon_sweep_observed(eps, schedule, reg_template, spec, model, sweep, &mut |_| Ok(()))
}

/// Passed to the observer of [`epsilon_sweep_observed`] after each level.
pub struct SweepProgress<'a> {
    pub level: usize,
    pub state: &'a MfgState,
    pub trace: &'a SolveTrace,
}

/// [`epsilon_sweep`] with a callback after every accepted level, so callers
/// can stream outputs and keep them if a later level fails.
pub fn epsilon_sweep_observed(
    eps: &EpsilonSchedule,
    schedule: &ContinuationSchedule,
    reg_template: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
    sweep: &SweepOptions,
    observer: &mut dyn FnMut(SweepProgress<'_>) -> Result<()>,
) -> Result<SweepResult> {
    let grid = spec.potential.v0.grid().clone();
    let mut trace = SolveTrace::default();
    let mut states = Vec::new();
    let mut regs = Vec::new();
    let mut prev: Option<SpecState> = None;
    let opts = schedule.newton_options();
    for &(e1, e2) in &eps.levels {
        let reg = reg_template.at_eps(e1, e2);
        reg.validate(grid.dim())?;
        let first_stage = trace.stages.len();
        let s = match &prev {
            None => continuation_spec(schedule, &reg, spec, model, &mut trace)?,
            Some(p) => {
                let op = Operator::new(spec, *model, 0.0, (&reg).into())?;
                match newton_system(&op, p.clone(), &opts) {
                    Ok((s, rep)) => {
                        trace
                            .stages
                            .push(stage_record(&reg, 0.0, &rep, min_nodal_m(&grid, &s), true));
                        s
                    }
                    Err(_) => continuation_spec(schedule, &reg, spec, model, &mut trace)?,
                }
            }
        };
        let nodal = s.to_nodal(&grid);
        let r = Operator::new(spec, *model, 0.0, (&reg).into())?.residual(&s)?;
        let mass = integrate(&nodal.m);
        trace.levels.push(LevelRecord {
            eps1: e1,
            eps2: e2,
            newton_iterations: trace.stages[first_stage..].iter().map(|st| st.iterations).sum(),
            residual: r.sup_norm(),
            min_m: nodal.m.min(),
            mass,
            mass_defect: mass - 1.0 + reg.eps_sum() * integrate(&nodal.u),
            apriori: compute_apriori(&nodal, &reg, spec)?,
            cauchy_m_l1: None,
            cauchy_u_w1g: None,
        });
        observer(SweepProgress {
            level: states.len(),
            state: &nodal,
            trace: &trace,
        })?;
        states.push(nodal);
        regs.push(reg);
        prev = Some(s);
    }

    let gamma = spec.gamma();
    for k in 0..states.len().saturating_sub(1) {
        let dm = &states[k].m - &states[k + 1].m;
        let du = gradient(&(&states[k].u - &states[k + 1].u)).norm();
        trace.levels[k].cauchy_m_l1 = Some(integrate(&dm.map(f64::abs)));
        trace.levels[k].cauchy_u_w1g = Some(integrate(&du.map(|v| v.powf(gamma))).powf(1.0 / gamma));
    }
    let diffs: Vec<(f64, f64)> = trace
        .levels
        .iter()
        .filter_map(|l| Some((l.cauchy_m_l1?, l.cauchy_u_w1g?)))
        .collect();
    trace.oscillation = diffs.windows(2).any(|w| w[1].0 > w[0].0 || w[1].1 > w[0].1);

    let used = (sweep.extrapolation_order + 1).min(states.len());
    let final_state = states.last().expect("at least one level").clone();
    let (limit, method, levels_used) = if used >= 2 {
        let tail = &states[states.len() - used..];
        let ts: Vec<f64> = regs[regs.len() - used..].iter().map(|r| r.eps_sum()).collect();
        let cand = extrapolate(tail, &ts);
        if cand.m.min() > 0.0 && cand.is_finite() {
            (cand, "extrapolated", used)
        } else {
            (final_state, "final_level", 1)
        }
    } else {
        (final_state, "final_level", 1)
    };
    trace.limit = Some(LimitRecord {
        method: method.to_string(),
        levels_used,
        min_m: limit.m.min(),
        mass: integrate(&limit.m),
    });
    Ok(SweepResult {
        states,
        regs,
        limit,
        trace,
    })
}

/// `∫|β_ε₁(m)|`, used by the a-priori monitors.
pub(crate) fn int_abs_beta(m: &Field, reg: &RegularizationParams) -> Result<f64> {
    let vals = m
        .values()
        .iter()
        .map(|&v| beta(v, reg.eps1, reg.penalty_q).map(f64::abs))
        .collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}
