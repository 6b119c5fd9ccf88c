//! The MFG operator `A(m,u)`, its regularization `A^ε_μ`, the positivity
//! penalty `β` and the Newton linearization.
//!
//! Internally the regularized operator acts on Fourier coefficients: the
//! `ε₁Δ^{2p}` symbol is far too large for nodal round trips, so nodal data
//! is converted once (with the rounding-floor filter) and the linear
//! regularization is applied mode by mode.

use num_complex::Complex64;

use crate::coupling::{eval_h, h_frechet_apply};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{blend_mu, Blend, Hamiltonian, HamiltonianSpec, ModelHamiltonianParams};
use crate::torus_grid::{integrate, Field, TorusGrid};

/// A pair `(m, u)` of nodal fields on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MfgState {
    pub m: Field,
    pub u: Field,
}

impl MfgState {
    pub fn new(m: Field, u: Field) -> Result<Self> {
        m.check_grid(&u)?;
        Ok(MfgState { m, u })
    }

    pub fn constant(grid: &TorusGrid, m: f64, u: f64) -> Self {
        MfgState {
            m: Field::constant(grid, m),
            u: Field::constant(grid, u),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        self.m.grid()
    }

    /// `self + t·dir`.
    pub fn axpy(&self, t: f64, dir: &MfgState) -> Result<MfgState> {
        self.m.check_grid(&dir.m)?;
        Ok(MfgState {
            m: self.m.zip_map(&dir.m, |a, b| a + t * b),
            u: self.u.zip_map(&dir.u, |a, b| a + t * b),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.m.is_finite() && self.u.is_finite()
    }
}

/// `ε₁`, `ε₂`, the Laplacian order `p` of `Δ^{2p}` and the penalty exponent `q`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct RegularizationParams {
    pub eps1: f64,
    pub eps2: f64,
    pub laplacian_order_p: u32,
    pub penalty_q: f64,
}

impl RegularizationParams {
    pub fn new(d: usize, eps1: f64, eps2: f64, p: u32, q: f64) -> Result<Self> {
        let r = RegularizationParams {
            eps1,
            eps2,
            laplacian_order_p: p,
            penalty_q: q,
        };
        r.validate(d)?;
        Ok(r)
    }

    pub fn with_defaults(d: usize, eps1: f64, eps2: f64) -> Result<Self> {
        Self::new(d, eps1, eps2, Self::default_order(d), Self::default_q(d))
    }

    /// Smallest `p` with `2p − 4 > d/2 + 1`.
    pub fn default_order(d: usize) -> u32 {
        let mut p = 1;
        while !order_ok(d, p) {
            p += 1;
        }
        p
    }

    pub fn default_q(d: usize) -> f64 {
        d as f64 + 1.0
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for (key, v) in [("eps1", self.eps1), ("eps2", self.eps2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(MfgError::config(key, format!("must lie in (0, 1), got {v}")));
            }
        }
        if !order_ok(d, self.laplacian_order_p) {
            return Err(MfgError::config(
                "p",
                format!("2p - 4 > d/2 + 1 fails for p = {}, d = {d}", self.laplacian_order_p),
            ));
        }
        if !(self.penalty_q > d as f64) || !self.penalty_q.is_finite() {
            return Err(MfgError::config(
                "q",
                format!("q > d fails for q = {}, d = {d}", self.penalty_q),
            ));
        }
        Ok(())
    }

    pub fn eps_sum(&self) -> f64 {
        self.eps1 + self.eps2
    }

    /// Same `p`, `q` at a new `(ε₁, ε₂)`.
    pub fn at_eps(&self, eps1: f64, eps2: f64) -> RegularizationParams {
        RegularizationParams { eps1, eps2, ..*self }
    }
}

fn order_ok(d: usize, p: u32) -> bool {
    2.0 * p as f64 - 4.0 > d as f64 / 2.0 + 1.0
}

/// The two rows of the operator.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPair {
    pub r_hj: Field,
    pub r_fp: Field,
}

impl ResidualPair {
    pub fn sup_norm(&self) -> f64 {
        self.r_hj.sup_norm().max(self.r_fp.sup_norm())
    }

    pub fn is_finite(&self) -> bool {
        self.r_hj.is_finite() && self.r_fp.is_finite()
    }

    /// `⟨self, w⟩ = ∫ r_hj m + r_fp u`.
    pub fn pair(&self, w: &MfgState) -> f64 {
        integrate(&(&self.r_hj * &w.m)) + integrate(&(&self.r_fp * &w.u))
    }
}

fn psi(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff in `t ∈ [0, 1]`: 1 at `t ≤ 0`, 0 at `t ≥ 1`; returns `(χ, dχ/dt)`.
fn cutoff(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (1.0, 0.0);
    }
    if t >= 1.0 {
        return (0.0, 0.0);
    }
    let a = psi(1.0 - t);
    let b = psi(t);
    let da = a / ((1.0 - t) * (1.0 - t));
    let db = b / (t * t);
    let den = a + b;
    (a / den, -(da * b + a * db) / (den * den))
}

fn check_beta_arg(s: f64) -> Result<()> {
    if !(s > 0.0) {
        return Err(MfgError::Positivity {
            what: "beta argument",
            node: 0,
            value: s,
        });
    }
    Ok(())
}

/// Penalty `β_ε₁(s)`: `−1/s^q` on `(0, ε₁/2]`, `0` on `[ε₁, ∞)`, smooth and
/// non-decreasing in between.
pub fn beta(s: f64, eps1: f64, q: f64) -> Result<f64> {
    check_beta_arg(s)?;
    if s >= eps1 {
        return Ok(0.0);
    }
    let half = 0.5 * eps1;
    let (chi, _) = cutoff((s - half) / half);
    Ok(-chi / s.powf(q))
}

pub fn beta_prime(s: f64, eps1: f64, q: f64) -> Result<f64> {
    check_beta_arg(s)?;
    if s >= eps1 {
        return Ok(0.0);
    }
    let half = 0.5 * eps1;
    let (chi, dchi_dt) = cutoff((s - half) / half);
    let dchi = dchi_dt / half;
    Ok(-dchi / s.powf(q) + q * chi / s.powf(q + 1.0))
}

/// Regularization terms; `eps1 = eps2 = 0` gives the plain operator.
#[derive(Clone, Copy, Debug)]
pub(crate) struct RegTerms {
    pub eps1: f64,
    pub eps2: f64,
    pub p: u32,
    pub q: f64,
}

impl RegTerms {
    pub(crate) const NONE: RegTerms = RegTerms {
        eps1: 0.0,
        eps2: 0.0,
        p: 1,
        q: 2.0,
    };
}

impl From<&RegularizationParams> for RegTerms {
    fn from(r: &RegularizationParams) -> Self {
        RegTerms {
            eps1: r.eps1,
            eps2: r.eps2,
            p: r.laplacian_order_p,
            q: r.penalty_q,
        }
    }
}

/// Fourier coefficients of `(m, u)`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct SpecState {
    pub m: Vec<Complex64>,
    pub u: Vec<Complex64>,
}

impl SpecState {
    pub(crate) fn from_nodal(state: &MfgState, filtered: bool) -> SpecState {
        let g = state.grid();
        if filtered {
            SpecState {
                m: g.forward_filtered(state.m.values()),
                u: g.forward_filtered(state.u.values()),
            }
        } else {
            SpecState {
                m: g.forward(state.m.values()),
                u: g.forward(state.u.values()),
            }
        }
    }

    pub(crate) fn to_nodal(&self, grid: &TorusGrid) -> MfgState {
        MfgState {
            m: Field::raw(grid, grid.inverse(&self.m)),
            u: Field::raw(grid, grid.inverse(&self.u)),
        }
    }

    pub(crate) fn zeros(len: usize) -> SpecState {
        SpecState {
            m: vec![Complex64::new(0.0, 0.0); len],
            u: vec![Complex64::new(0.0, 0.0); len],
        }
    }

    pub(crate) fn axpy(&self, t: f64, dir: &SpecState) -> SpecState {
        SpecState {
            m: self.m.iter().zip(&dir.m).map(|(a, b)| a + b * t).collect(),
            u: self.u.iter().zip(&dir.u).map(|(a, b)| a + b * t).collect(),
        }
    }
}

/// Precomputed operator data for one `(μ, ε, spec)`.
pub(crate) struct Operator<'a> {
    grid: TorusGrid,
    ham: Blend<'a>,
    reg: RegTerms,
    /// `|2πk|²`
    k2: Vec<f64>,
    /// `ε₁(1 + |2πk|^{4p}) + ε₂(1 + |2πk|²)`
    lin: Vec<f64>,
}

fn real_spec(g: &TorusGrid, values: &[f64]) -> Vec<Complex64> {
    g.forward(values)
}

impl<'a> Operator<'a> {
    pub(crate) fn new(
        spec: &'a HamiltonianSpec,
        model: ModelHamiltonianParams,
        mu: f64,
        reg: RegTerms,
    ) -> Result<Self> {
        let ham = blend_mu(mu, spec, model)?;
        let grid = spec.grid().clone();
        let k2: Vec<f64> = (0..grid.len()).map(|i| grid.wave_norm_sq(i)).collect();
        let lin = k2
            .iter()
            .map(|&k| reg.eps1 * (1.0 + k.powi(2 * reg.p as i32)) + reg.eps2 * (1.0 + k))
            .collect();
        Ok(Operator {
            grid,
            ham,
            reg,
            k2,
            lin,
        })
    }

    pub(crate) fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Diagonal of the linear regularization in Fourier space.
    pub(crate) fn lin_symbol(&self) -> &[f64] {
        &self.lin
    }

    pub(crate) fn wave_norm_sq(&self) -> &[f64] {
        &self.k2
    }

    fn regularized(&self) -> bool {
        self.reg.eps1 > 0.0 || self.reg.eps2 > 0.0
    }

    fn derivative_fields(&self, u_hat: &[Complex64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let g = &self.grid;
        let du = (0..g.dim()).map(|a| g.inverse(&g.spec_derivative(u_hat, a))).collect();
        let lap = g.inverse(&g.spec_radial(u_hat, |k| -k));
        (du, lap)
    }

    fn theta(&self, m: &Field) -> Result<Field> {
        match self.ham.nonlocal() {
            Some(nl) => eval_h(nl, m),
            None => Ok(Field::zeros(&self.grid)),
        }
    }

    fn check_domain(&self, m: &[f64]) -> Result<()> {
        for (node, &v) in m.iter().enumerate() {
            if !v.is_finite() {
                return Err(MfgError::NonFinite { what: "m", node });
            }
            if self.regularized() && !(v > 0.0) {
                return Err(MfgError::Positivity {
                    what: "m",
                    node,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// `−div(F) − Δ(a·g)` in Fourier space, for fluxes `F` and a scalar `g`.
    fn transport_spec(&self, flux: &[Vec<f64>], diffused: &[f64]) -> Vec<Complex64> {
        let g = &self.grid;
        let mut acc: Vec<Complex64> = real_spec(g, diffused)
            .iter()
            .zip(&self.k2)
            .map(|(c, k)| c * *k)
            .collect();
        for (a, f) in flux.iter().enumerate() {
            let d = g.spec_derivative(&real_spec(g, f), a);
            for (s, x) in acc.iter_mut().zip(d) {
                *s -= x;
            }
        }
        acc
    }

    pub(crate) fn residual(&self, s: &SpecState) -> Result<ResidualPair> {
        let g = &self.grid;
        let n = g.len();
        let m = g.inverse(&s.m);
        self.check_domain(&m)?;
        let u = g.inverse(&s.u);
        let (du, lap_u) = self.derivative_fields(&s.u);
        let mf = Field::raw(g, m.clone());
        let theta = self.theta(&mf)?;
        let dim = g.dim();

        let mut hj = vec![0.0; n];
        let mut flux = vec![vec![0.0; n]; dim];
        let mut diffused = vec![0.0; n];
        for i in 0..n {
            let p = if dim == 1 {
                [du[0][i], 0.0]
            } else {
                [du[0][i], du[1][i]]
            };
            let l = self.ham.local(i, p, m[i], theta.values()[i])?;
            let a = self.ham.diffusion(i);
            let mut r = -u[i] - (l.h0 - a * lap_u[i]);
            if self.reg.eps1 > 0.0 {
                r += beta(m[i], self.reg.eps1, self.reg.q).map_err(|_| MfgError::Positivity {
                    what: "m",
                    node: i,
                    value: m[i],
                })?;
            }
            hj[i] = r;
            for (ax, f) in flux.iter_mut().enumerate() {
                f[i] = m[i] * l.h_p[ax];
            }
            diffused[i] = a * m[i];
        }

        let mut fp_spec = self.transport_spec(&flux, &diffused);
        let mut hj_lin = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            fp_spec[k] += s.m[k] + s.u[k] * self.lin[k];
            hj_lin[k] = s.m[k] * self.lin[k];
        }
        fp_spec[0] -= 1.0;
        let fp = g.inverse(&fp_spec);
        if self.regularized() {
            for (h, x) in hj.iter_mut().zip(g.inverse(&hj_lin)) {
                *h += x;
            }
        }
        let out = ResidualPair {
            r_hj: Field::raw(g, hj),
            r_fp: Field::raw(g, fp),
        };
        if let Some(node) = out.r_hj.values().iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NonFinite {
                what: "HJ residual",
                node,
            });
        }
        if let Some(node) = out.r_fp.values().iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NonFinite {
                what: "FP residual",
                node,
            });
        }
        Ok(out)
    }

    /// Freeze the coefficients of the Gâteaux derivative at `s0`.
    pub(crate) fn linearize(&self, s0: &SpecState) -> Result<Linearization<'_, 'a>> {
        let g = &self.grid;
        let n = g.len();
        let dim = g.dim();
        let m = g.inverse(&s0.m);
        self.check_domain(&m)?;
        let (du, _) = self.derivative_fields(&s0.u);
        let mf = Field::raw(g, m.clone());
        let theta = self.theta(&mf)?;
        let mut coef = LinCoefficients {
            h_p: vec![vec![0.0; n]; dim],
            h_m: vec![0.0; n],
            h_theta: vec![0.0; n],
            h_pp: vec![[[0.0; 2]; 2]; n],
            h_pm: vec![vec![0.0; n]; dim],
            a: vec![0.0; n],
            beta_p: vec![0.0; n],
        };
        for i in 0..n {
            let p = if dim == 1 {
                [du[0][i], 0.0]
            } else {
                [du[0][i], du[1][i]]
            };
            let l = self.ham.local(i, p, m[i], theta.values()[i])?;
            for ax in 0..dim {
                coef.h_p[ax][i] = l.h_p[ax];
                coef.h_pm[ax][i] = l.h_pm[ax];
            }
            coef.h_m[i] = l.h_m;
            coef.h_theta[i] = l.h_theta;
            coef.h_pp[i] = l.h_pp;
            coef.a[i] = self.ham.diffusion(i);
            if self.reg.eps1 > 0.0 {
                coef.beta_p[i] = beta_prime(m[i], self.reg.eps1, self.reg.q)?;
            }
        }
        Ok(Linearization { op: self, m0: mf, coef })
    }
}

struct LinCoefficients {
    h_p: Vec<Vec<f64>>,
    h_m: Vec<f64>,
    h_theta: Vec<f64>,
    h_pp: Vec<[[f64; 2]; 2]>,
    h_pm: Vec<Vec<f64>>,
    a: Vec<f64>,
    beta_p: Vec<f64>,
}

pub(crate) struct Linearization<'o, 'a> {
    op: &'o Operator<'a>,
    m0: Field,
    coef: LinCoefficients,
}

impl Linearization<'_, '_> {
    /// Spatial means of the coefficients entering the frequency-diagonal
    /// approximation of the derivative: `(β' − H_m, a, m₀ tr H_pp / d)`.
    pub(crate) fn block_means(&self) -> (f64, f64, f64) {
        let c = &self.coef;
        let n = c.a.len() as f64;
        let dim = self.op.grid.dim();
        let m0 = self.m0.values();
        let b1 = c.beta_p.iter().zip(&c.h_m).map(|(b, h)| b - h).sum::<f64>() / n;
        let a = c.a.iter().sum::<f64>() / n;
        let cc = c
            .h_pp
            .iter()
            .zip(m0)
            .map(|(h, m)| m * (0..dim).map(|i| h[i][i]).sum::<f64>() / dim as f64)
            .sum::<f64>()
            / n;
        (b1, a, cc)
    }

    /// Derivative applied to a direction `(η, v)` given in Fourier space.
    pub(crate) fn apply(&self, dir: &SpecState) -> Result<ResidualPair> {
        let op = self.op;
        let g = &op.grid;
        let n = g.len();
        let dim = g.dim();
        let c = &self.coef;
        let eta = g.inverse(&dir.m);
        let v = g.inverse(&dir.u);
        let (dv, lap_v) = op.derivative_fields(&dir.u);
        let nonlocal = match op.ham.nonlocal() {
            Some(nl) => Some(h_frechet_apply(nl, &self.m0, &Field::raw(g, eta.clone()))?),
            None => None,
        };
        let m0 = self.m0.values();

        let mut hj = vec![0.0; n];
        let mut flux = vec![vec![0.0; n]; dim];
        let mut diffused = vec![0.0; n];
        for i in 0..n {
            let mut l1 = c.h_m[i] * eta[i] - c.a[i] * lap_v[i];
            for ax in 0..dim {
                l1 += c.h_p[ax][i] * dv[ax][i];
            }
            if let Some(th) = &nonlocal {
                l1 += c.h_theta[i] * th.values()[i];
            }
            hj[i] = -v[i] - l1 + c.beta_p[i] * eta[i];
            for (ax, f) in flux.iter_mut().enumerate() {
                let mut hpp_dv = 0.0;
                for bx in 0..dim {
                    hpp_dv += c.h_pp[i][ax][bx] * dv[bx][i];
                }
                *f.get_mut(i).expect("node in range") =
                    eta[i] * c.h_p[ax][i] + m0[i] * (hpp_dv + c.h_pm[ax][i] * eta[i]);
            }
            diffused[i] = c.a[i] * eta[i];
        }

        let mut fp_spec = op.transport_spec(&flux, &diffused);
        let mut hj_lin = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..n {
            fp_spec[k] += dir.m[k] + dir.u[k] * op.lin[k];
            hj_lin[k] = dir.m[k] * op.lin[k];
        }
        let fp = g.inverse(&fp_spec);
        if op.regularized() {
            for (h, x) in hj.iter_mut().zip(g.inverse(&hj_lin)) {
                *h += x;
            }
        }
        Ok(ResidualPair {
            r_hj: Field::raw(g, hj),
            r_fp: Field::raw(g, fp),
        })
    }
}

fn check_state(state: &MfgState, spec: &HamiltonianSpec) -> Result<()> {
    state.m.check_grid(&state.u)?;
    if state.grid() != spec.grid() {
        return Err(MfgError::GridMismatch("state and Hamiltonian grids differ".into()));
    }
    Ok(())
}

/// `A(m,u) = (−u − H, m − div(m D_pH) − Δ(a m) − 1)`.
pub fn apply_a(state: &MfgState, spec: &HamiltonianSpec) -> Result<ResidualPair> {
    check_state(state, spec)?;
    let model = ModelHamiltonianParams::new(spec.gamma(), spec.tau())?;
    let op = Operator::new(spec, model, 0.0, RegTerms::NONE)?;
    op.residual(&SpecState::from_nodal(state, false))
}

/// `A^ε_μ(m,u)` with `H_μ = (1−μ)H + μH̃`; requires `min m > 0`.
pub fn apply_a_reg(
    state: &MfgState,
    mu: f64,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
) -> Result<ResidualPair> {
    check_state(state, spec)?;
    reg.validate(state.grid().dim())?;
    let op = Operator::new(spec, *model, mu, reg.into())?;
    op.residual(&SpecState::from_nodal(state, true))
}

/// Derivative of [`apply_a_reg`] at `state` in the direction `direction`.
pub fn linearize_apply(
    state: &MfgState,
    mu: f64,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
    direction: &MfgState,
) -> Result<ResidualPair> {
    check_state(state, spec)?;
    check_state(direction, spec)?;
    reg.validate(state.grid().dim())?;
    let op = Operator::new(spec, *model, mu, reg.into())?;
    let lin = op.linearize(&SpecState::from_nodal(state, true))?;
    lin.apply(&SpecState::from_nodal(direction, true))
}

fn difference(w1: &MfgState, w2: &MfgState) -> Result<MfgState> {
    w1.axpy(-1.0, w2)
}

/// `⟨A(w₁) − A(w₂), w₁ − w₂⟩`.
pub fn monotonicity_pairing(w1: &MfgState, w2: &MfgState, spec: &HamiltonianSpec) -> Result<f64> {
    let a1 = apply_a(w1, spec)?;
    let a2 = apply_a(w2, spec)?;
    let dw = difference(w1, w2)?;
    Ok(a1.pair(&dw) - a2.pair(&dw))
}

/// `⟨A^ε_μ(w₁) − A^ε_μ(w₂), w₁ − w₂⟩`.
pub fn monotonicity_pairing_reg(
    w1: &MfgState,
    w2: &MfgState,
    mu: f64,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
    model: &ModelHamiltonianParams,
) -> Result<f64> {
    let a1 = apply_a_reg(w1, mu, reg, spec, model)?;
    let a2 = apply_a_reg(w2, mu, reg, spec, model)?;
    let dw = difference(w1, w2)?;
    Ok(a1.pair(&dw) - a2.pair(&dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{CouplingSpec, NonlocalSpec, PotentialSpec};
    use crate::hamiltonian::Family;
    use crate::torus_grid::make_grid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn quadratic_vm(g: &TorusGrid) -> HamiltonianSpec {
        HamiltonianSpec::new(
            Family::QuadraticSeparable { sigma0: 0.0 },
            PotentialSpec::new(Field::zeros(g), CouplingSpec::power(1.0).unwrap()).unwrap(),
            NonlocalSpec::none(g),
        )
        .unwrap()
    }

    fn model_for(spec: &HamiltonianSpec) -> ModelHamiltonianParams {
        ModelHamiltonianParams::new(spec.gamma(), spec.tau()).unwrap()
    }

    fn families(g: &TorusGrid) -> Vec<HamiltonianSpec> {
        let v0 = Field::from_fn(g, |x| 0.3 * (2.0 * PI * x[0]).sin());
        let a = Field::from_fn(g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos());
        let sigma = Field::from_fn(g, |x| 0.05 * (1.0 - (2.0 * PI * x[0]).cos()) / 2.0);
        let nl = NonlocalSpec::new(g, 0.5, 0.5, 1.5, 0.1).unwrap();
        let pot = |c| PotentialSpec::new(v0.clone(), c).unwrap();
        vec![
            HamiltonianSpec::new(
                Family::QuadraticSeparable { sigma0: 0.2 },
                pot(CouplingSpec::power(1.0).unwrap()),
                NonlocalSpec::none(g),
            )
            .unwrap(),
            HamiltonianSpec::new(
                Family::PowerGrowth {
                    a: a.clone(),
                    gamma: 1.5,
                    sigma: sigma.clone(),
                },
                pot(CouplingSpec::power(2.0).unwrap()),
                nl.clone(),
            )
            .unwrap(),
            HamiltonianSpec::new(
                Family::Congestion {
                    a: a.clone(),
                    tau: 0.5,
                    sigma: sigma.clone(),
                },
                pot(CouplingSpec::Log),
                nl,
            )
            .unwrap(),
        ]
    }

    /// Random smooth admissible state. With `weight = Some(ε₁)` each mode is
    /// damped by `1/(1 + ε₁|2πk|^{4p})`, so the regularization terms stay O(1).
    fn smooth_state(g: &TorusGrid, rng: &mut ChaCha8Rng, weight: Option<f64>) -> MfgState {
        let p = RegularizationParams::default_order(g.dim()) as i32;
        let mut coeffs = Vec::new();
        for _ in 0..3 {
            let kx = rng.gen_range(1..=3) as f64;
            let ky = if g.dim() == 2 { rng.gen_range(0..=2) as f64 } else { 0.0 };
            let k2 = 4.0 * PI * PI * (kx * kx + ky * ky);
            let w = weight.map_or(1.0, |e| 1.0 / (1.0 + e * k2.powi(2 * p)));
            coeffs.push((
                kx,
                ky,
                rng.gen_range(-0.15..0.15) * w,
                rng.gen_range(-1.0..1.0) * w,
                rng.gen_range(0.0..1.0),
            ));
        }
        let base_m = rng.gen_range(0.6..1.4);
        let base_u = rng.gen_range(-1.0..1.0);
        let cs = coeffs.clone();
        let m = Field::from_fn(g, move |x| {
            let y = if x.len() > 1 { x[1] } else { 0.0 };
            base_m
                + cs.iter()
                    .map(|c| c.2 * (2.0 * PI * (c.0 * x[0] + c.1 * y) + c.4).cos())
                    .sum::<f64>()
        });
        let u = Field::from_fn(g, move |x| {
            let y = if x.len() > 1 { x[1] } else { 0.0 };
            base_u
                + coeffs
                    .iter()
                    .map(|c| c.3 * (2.0 * PI * (c.0 * x[0] + c.1 * y) + c.4).sin())
                    .sum::<f64>()
        });
        MfgState { m, u }
    }

    #[test]
    fn beta_branches() {
        assert_eq!(beta(0.1, 0.1, 2.0).unwrap(), 0.0);
        assert!((beta(0.025, 0.1, 2.0).unwrap() + 1600.0).abs() < 1e-9);
        let s = 0.075;
        let b = beta(s, 0.1, 2.0).unwrap();
        assert!(b < 0.0 && b > -1.0 / (s * s));
        assert!(matches!(beta(0.0, 0.1, 2.0), Err(MfgError::Positivity { .. })));
        assert!(beta_prime(-1.0, 0.1, 2.0).is_err());
    }

    #[test]
    fn beta_monotone_on_dense_scan() {
        let eps = 0.1;
        let mut prev = f64::NEG_INFINITY;
        for i in 1..=1000 {
            let s = 2.0 * eps * i as f64 / 1000.0;
            let b = beta(s, eps, 2.0).unwrap();
            assert!(b >= prev, "s = {s}");
            assert!(beta_prime(s, eps, 2.0).unwrap() >= 0.0);
            prev = b;
        }
    }

    #[test]
    fn beta_prime_matches_difference_quotient() {
        let (eps, q) = (0.1, 3.0);
        for i in 1..40 {
            let s = eps * (0.3 + 0.02 * i as f64);
            let h = 1e-7;
            let fd = (beta(s + h, eps, q).unwrap() - beta(s - h, eps, q).unwrap()) / (2.0 * h);
            let an = beta_prime(s, eps, q).unwrap();
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "s={s} fd={fd} an={an}");
        }
    }

    #[test]
    fn regularization_validation() {
        assert_eq!(RegularizationParams::default_order(1), 3);
        assert_eq!(RegularizationParams::default_order(2), 4);
        assert!(RegularizationParams::new(2, 0.1, 0.1, 2, 3.0).is_err());
        assert!(RegularizationParams::new(2, 0.1, 0.1, 3, 3.0).is_err());
        assert!(RegularizationParams::new(2, 0.1, 0.1, 4, 1.0).is_err());
        assert!(RegularizationParams::new(1, 0.0, 0.1, 3, 2.0).is_err());
        assert!(RegularizationParams::new(1, 0.1, 1.0, 3, 2.0).is_err());
        assert!(RegularizationParams::with_defaults(1, 0.1, 0.1).is_ok());
    }

    #[test]
    fn apply_a_examples() {
        let g = make_grid(1, 32).unwrap();
        let spec = quadratic_vm(&g);
        let r = apply_a(&MfgState::constant(&g, 1.0, 1.0), &spec).unwrap();
        assert!(r.sup_norm() < 1e-15);
        let r = apply_a(&MfgState::constant(&g, 1.0, 0.0), &spec).unwrap();
        assert!(r.r_hj.values().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(r.r_fp.sup_norm() < 1e-15);
    }

    #[test]
    fn blend_at_one_matches_model_operator() {
        let g = make_grid(1, 32).unwrap();
        let spec = &families(&g)[1];
        let model = model_for(spec);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let st = smooth_state(&g, &mut rng, None);
        let op_blend = Operator::new(spec, model, 1.0, RegTerms::NONE).unwrap();
        let r1 = op_blend.residual(&SpecState::from_nodal(&st, false)).unwrap();
        // direct: −u − H̃, m − div(m H̃_p) − 1
        let du = crate::torus_grid::gradient(&st.u);
        let ht = crate::hamiltonian::eval_model_h(&model, &du, &st.m).unwrap();
        let hp = crate::hamiltonian::model_grad_p_h(&model, &du, &st.m).unwrap();
        let hj = (&st.u + &ht).scale(-1.0);
        let fp =
            st.m.zip_map(&crate::torus_grid::divergence(&hp.scale_by(&st.m)), |m, d| m - d - 1.0);
        assert!((&r1.r_hj - &hj).sup_norm() < 1e-12);
        assert!((&r1.r_fp - &fp).sup_norm() < 1e-12);
    }

    #[test]
    fn zero_eps_reduces_to_plain_operator() {
        let g = make_grid(1, 32).unwrap();
        for spec in families(&g) {
            let model = model_for(&spec);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let st = smooth_state(&g, &mut rng, None);
            let op = Operator::new(&spec, model, 0.0, RegTerms::NONE).unwrap();
            let a = op.residual(&SpecState::from_nodal(&st, false)).unwrap();
            let b = apply_a(&st, &spec).unwrap();
            assert!((&a.r_hj - &b.r_hj).sup_norm() < 1e-12);
            assert!((&a.r_fp - &b.r_fp).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn regularized_requires_positive_density() {
        let g = make_grid(1, 16).unwrap();
        let spec = quadratic_vm(&g);
        let reg = RegularizationParams::with_defaults(1, 0.1, 0.1).unwrap();
        let st = MfgState {
            m: Field::from_fn(&g, |x| (2.0 * PI * x[0]).cos()),
            u: Field::zeros(&g),
        };
        let r = apply_a_reg(&st, 0.0, &reg, &spec, &model_for(&spec));
        assert!(matches!(r, Err(MfgError::Positivity { .. })));
    }

    #[test]
    fn mass_identity_for_smooth_states() {
        for d in [1, 2] {
            let g = make_grid(d, if d == 1 { 64 } else { 16 }).unwrap();
            let reg = RegularizationParams::with_defaults(d, 0.1, 0.05).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for spec in families(&g) {
                for _ in 0..5 {
                    let st = smooth_state(&g, &mut rng, Some(reg.eps1));
                    let mu = rng.gen_range(0.0..=1.0);
                    let r = apply_a_reg(&st, mu, &reg, &spec, &model_for(&spec)).unwrap();
                    let lhs = integrate(&r.r_fp);
                    let rhs = integrate(&st.m) - 1.0 + reg.eps_sum() * integrate(&st.u);
                    assert!((lhs - rhs).abs() < 1e-12, "d={d} {lhs} vs {rhs}");
                }
            }
        }
    }

    #[test]
    fn linearization_matches_difference_quotient() {
        for d in [1, 2] {
            let g = make_grid(d, if d == 1 { 32 } else { 16 }).unwrap();
            let reg = RegularizationParams::with_defaults(d, 0.1, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            for spec in families(&g) {
                let model = model_for(&spec);
                for mu in [0.0, 0.4, 1.0] {
                    let st = smooth_state(&g, &mut rng, None);
                    let dir = smooth_state(&g, &mut rng, None);
                    let op = Operator::new(&spec, model, mu, (&reg).into()).unwrap();
                    let s0 = SpecState::from_nodal(&st, true);
                    let sd = SpecState::from_nodal(&dir, true);
                    let t = 1e-6;
                    let r0 = op.residual(&s0).unwrap();
                    let r1 = op.residual(&s0.axpy(t, &sd)).unwrap();
                    let lin = op.linearize(&s0).unwrap().apply(&sd).unwrap();
                    let fd_hj = (&r1.r_hj - &r0.r_hj).scale(1.0 / t);
                    let fd_fp = (&r1.r_fp - &r0.r_fp).scale(1.0 / t);
                    let err =
                        ((&fd_hj - &lin.r_hj).lp_norm(2.0).powi(2) + (&fd_fp - &lin.r_fp).lp_norm(2.0).powi(2)).sqrt();
                    let scale = (lin.r_hj.lp_norm(2.0).powi(2) + lin.r_fp.lp_norm(2.0).powi(2)).sqrt();
                    assert!(err <= 1e-4 * scale, "d={d} mu={mu} err={err} scale={scale}");
                }
            }
        }
    }

    #[test]
    fn linearization_is_linear() {
        let g = make_grid(1, 32).unwrap();
        let reg = RegularizationParams::with_defaults(1, 0.1, 0.1).unwrap();
        let spec = &families(&g)[2];
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let st = smooth_state(&g, &mut rng, None);
        let w1 = smooth_state(&g, &mut rng, None);
        let w2 = smooth_state(&g, &mut rng, None);
        let op = Operator::new(spec, model_for(spec), 0.3, (&reg).into()).unwrap();
        let lin = op.linearize(&SpecState::from_nodal(&st, true)).unwrap();
        let s1 = SpecState::from_nodal(&w1, true);
        let s2 = SpecState::from_nodal(&w2, true);
        let combo = SpecState::zeros(g.len()).axpy(2.0, &s1).axpy(-3.0, &s2);
        let l1 = lin.apply(&s1).unwrap();
        let l2 = lin.apply(&s2).unwrap();
        let lc = lin.apply(&combo).unwrap();
        let expect_hj = &l1.r_hj.scale(2.0) - &l2.r_hj.scale(3.0);
        let expect_fp = &l1.r_fp.scale(2.0) - &l2.r_fp.scale(3.0);
        let scale = lc.sup_norm().max(1.0);
        assert!((&lc.r_hj - &expect_hj).sup_norm() <= 1e-12 * scale);
        assert!((&lc.r_fp - &expect_fp).sup_norm() <= 1e-12 * scale);
        let zero = lin.apply(&SpecState::zeros(g.len())).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn pairing_examples() {
        let g = make_grid(1, 32).unwrap();
        let spec = quadratic_vm(&g);
        let reg = RegularizationParams::with_defaults(1, 0.1, 0.1).unwrap();
        let model = model_for(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let w = smooth_state(&g, &mut rng, None);
        assert_eq!(monotonicity_pairing(&w, &w, &spec).unwrap(), 0.0);
        for _ in 0..20 {
            let w1 = smooth_state(&g, &mut rng, None);
            let w2 = smooth_state(&g, &mut rng, None);
            let plain = monotonicity_pairing(&w1, &w2, &spec).unwrap();
            let swapped = monotonicity_pairing(&w2, &w1, &spec).unwrap();
            assert!(plain >= -1e-10);
            assert!((plain - swapped).abs() <= 1e-12 * plain.abs().max(1.0));
            // the regularization adds a nonnegative pairing
            let regd = monotonicity_pairing_reg(&w1, &w2, 0.0, &reg, &spec, &model).unwrap();
            assert!(regd - plain >= -1e-9 * regd.abs().max(1.0));
        }
    }

    fn arb_seed() -> impl Strategy<Value = u64> {
        any::<u64>()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pairing_nonnegative_1d(seed in arb_seed(), mu in 0.0f64..=1.0) {
            let g = make_grid(1, 32).unwrap();
            let reg = RegularizationParams::with_defaults(1, 0.1, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for spec in families(&g) {
                let w1 = smooth_state(&g, &mut rng, None);
                let w2 = smooth_state(&g, &mut rng, None);
                prop_assert!(monotonicity_pairing(&w1, &w2, &spec).unwrap() >= -1e-9);
                let model = model_for(&spec);
                prop_assert!(monotonicity_pairing_reg(&w1, &w2, mu, &reg, &spec, &model).unwrap() >= -1e-9);
            }
        }

        #[test]
        fn pairing_nonnegative_2d(seed in arb_seed()) {
            let g = make_grid(2, 16).unwrap();
            let reg = RegularizationParams::with_defaults(2, 0.1, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for spec in families(&g) {
                let w1 = smooth_state(&g, &mut rng, None);
                let w2 = smooth_state(&g, &mut rng, None);
                prop_assert!(monotonicity_pairing(&w1, &w2, &spec).unwrap() >= -1e-9);
                let model = model_for(&spec);
                prop_assert!(monotonicity_pairing_reg(&w1, &w2, 0.0, &reg, &spec, &model).unwrap() >= -1e-9);
            }
        }
    }
}
