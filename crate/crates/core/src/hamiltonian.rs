//! Hamiltonian families, the model Hamiltonian used at the start of the
//! continuation, their affine blend and the Legendre transform of the
//! first-order part.
//!
//! Every Hamiltonian here has the degenerate-elliptic split
//! `H(x,p,M,m,θ) = H₀(x,p,m,θ) − a(x) tr M` with scalar diffusion `a ≥ 0`,
//! so `D_M H = −a Id` and all mixed derivatives involving `M` vanish.

use serde::Serialize;

use crate::coupling::{NonlocalSpec, PotentialSpec};
use crate::error::{MfgError, Result};
use crate::torus_grid::{Field, MatrixField, TorusGrid, VectorField};

/// Pointwise value and derivatives of `H₀` at `(x, p, m, θ)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalH {
    pub h0: f64,
    pub h_p: [f64; 2],
    pub h_m: f64,
    pub h_theta: f64,
    pub h_pp: [[f64; 2]; 2],
    pub h_pm: [f64; 2],
}

impl LocalH {
    fn scaled(&self, s: f64) -> LocalH {
        LocalH {
            h0: s * self.h0,
            h_p: [s * self.h_p[0], s * self.h_p[1]],
            h_m: s * self.h_m,
            h_theta: s * self.h_theta,
            h_pp: [
                [s * self.h_pp[0][0], s * self.h_pp[0][1]],
                [s * self.h_pp[1][0], s * self.h_pp[1][1]],
            ],
            h_pm: [s * self.h_pm[0], s * self.h_pm[1]],
        }
    }

    fn plus(&self, o: &LocalH) -> LocalH {
        LocalH {
            h0: self.h0 + o.h0,
            h_p: [self.h_p[0] + o.h_p[0], self.h_p[1] + o.h_p[1]],
            h_m: self.h_m + o.h_m,
            h_theta: self.h_theta + o.h_theta,
            h_pp: [
                [self.h_pp[0][0] + o.h_pp[0][0], self.h_pp[0][1] + o.h_pp[0][1]],
                [self.h_pp[1][0] + o.h_pp[1][0], self.h_pp[1][1] + o.h_pp[1][1]],
            ],
            h_pm: [self.h_pm[0] + o.h_pm[0], self.h_pm[1] + o.h_pm[1]],
        }
    }
}

/// Pointwise access used by the operator and the diagnostics.
pub trait Hamiltonian {
    fn grid(&self) -> &TorusGrid;

    /// `H₀` and its derivatives at node `node`.
    fn local(&self, node: usize, p: [f64; 2], m: f64, theta: f64) -> Result<LocalH>;

    /// Scalar diffusion `a(x)` in `H = H₀ − a tr M`.
    fn diffusion(&self, node: usize) -> f64;

    /// Source of `θ = h(m)`; `None` means `θ ≡ 0`.
    fn nonlocal(&self) -> Option<&NonlocalSpec>;

    /// `H` at a node, including the second-order term.
    fn eval_point(&self, node: usize, p: [f64; 2], mat: [[f64; 2]; 2], m: f64, theta: f64) -> Result<f64> {
        let tr = (0..self.grid().dim()).map(|i| mat[i][i]).sum::<f64>();
        Ok(self.local(node, p, m, theta)?.h0 - self.diffusion(node) * tr)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `a(x)(1+|p|²)^{γ/2} − V − σ(x) tr M`.
    PowerGrowth { a: Field, gamma: f64, sigma: Field },
    /// `a(x)|p|²/(2m^τ) − V − σ(x) tr M`.
    Congestion { a: Field, tau: f64, sigma: Field },
    /// `|p|²/2 − V − σ₀² tr M`.
    QuadraticSeparable { sigma0: f64 },
}

/// A Hamiltonian family together with its potential `V = V0 + g` and the
/// nonlocal operator feeding `θ = h(m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub family: Family,
    pub potential: PotentialSpec,
    pub nonlocal: NonlocalSpec,
}

fn check_positive_field(f: &Field, key: &str) -> Result<()> {
    if f.values().iter().any(|&v| !(v > 0.0)) {
        return Err(MfgError::config(key, "must be > 0 at every node"));
    }
    Ok(())
}

fn check_nonneg_field(f: &Field, key: &str) -> Result<()> {
    if f.values().iter().any(|&v| !(v >= 0.0)) {
        return Err(MfgError::config(key, "must be >= 0 at every node"));
    }
    Ok(())
}

impl HamiltonianSpec {
    pub fn new(family: Family, potential: PotentialSpec, nonlocal: NonlocalSpec) -> Result<Self> {
        let grid = potential.v0.grid().clone();
        match &family {
            Family::PowerGrowth { a, gamma, sigma } => {
                if !(*gamma > 1.0) || !gamma.is_finite() {
                    return Err(MfgError::config("gamma", "must be > 1"));
                }
                a.check_grid(&potential.v0)?;
                sigma.check_grid(&potential.v0)?;
                check_positive_field(a, "a")?;
                check_nonneg_field(sigma, "sigma")?;
            }
            Family::Congestion { a, tau, sigma } => {
                if !(0.0..1.0).contains(tau) {
                    return Err(MfgError::config("tau", "must lie in [0, 1)"));
                }
                a.check_grid(&potential.v0)?;
                sigma.check_grid(&potential.v0)?;
                check_positive_field(a, "a")?;
                check_nonneg_field(sigma, "sigma")?;
            }
            Family::QuadraticSeparable { sigma0 } => {
                if !sigma0.is_finite() {
                    return Err(MfgError::config("sigma", "must be finite"));
                }
            }
        }
        if nonlocal.kernel().grid() != &grid {
            return Err(MfgError::GridMismatch("nonlocal kernel grid".into()));
        }
        Ok(HamiltonianSpec {
            family,
            potential,
            nonlocal,
        })
    }

    /// Growth exponent `γ` of the kinetic part.
    pub fn gamma(&self) -> f64 {
        match &self.family {
            Family::PowerGrowth { gamma, .. } => *gamma,
            _ => 2.0,
        }
    }

    /// Congestion exponent `τ` (zero for the other families).
    pub fn tau(&self) -> f64 {
        match &self.family {
            Family::Congestion { tau, .. } => *tau,
            _ => 0.0,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.family, Family::QuadraticSeparable { .. })
    }

    /// `V(x, m, θ)` at one node.
    pub fn potential_at(&self, node: usize, m: f64, theta: f64) -> Result<f64> {
        Ok(self.potential.v0.values()[node] + self.potential.coupling.g1(m, node)? + theta)
    }
}

impl Hamiltonian for HamiltonianSpec {
    fn grid(&self) -> &TorusGrid {
        self.potential.v0.grid()
    }

    fn local(&self, node: usize, p: [f64; 2], m: f64, theta: f64) -> Result<LocalH> {
        let p2 = p[0] * p[0] + p[1] * p[1];
        let v = self.potential_at(node, m, theta)?;
        let v_m = self.potential.coupling.g1_prime(m, node)?;
        let (k, k_p, k_m, k_pp, k_pm) = match &self.family {
            Family::PowerGrowth { a, gamma, .. } => {
                let a = a.values()[node];
                let base = 1.0 + p2;
                let c1 = a * gamma * base.powf(gamma / 2.0 - 1.0);
                let c2 = a * gamma * (gamma - 2.0) * base.powf(gamma / 2.0 - 2.0);
                (
                    a * base.powf(gamma / 2.0),
                    [c1 * p[0], c1 * p[1]],
                    0.0,
                    [
                        [c1 + c2 * p[0] * p[0], c2 * p[0] * p[1]],
                        [c2 * p[1] * p[0], c1 + c2 * p[1] * p[1]],
                    ],
                    [0.0, 0.0],
                )
            }
            Family::Congestion { a, tau, .. } => {
                let a = a.values()[node];
                if *tau > 0.0 && !(m > 0.0) {
                    return Err(MfgError::Domain {
                        what: "congestion Hamiltonian",
                        node,
                        value: m,
                    });
                }
                let mt = if *tau == 0.0 { 1.0 } else { m.powf(*tau) };
                let c = a / mt;
                let dm = if *tau == 0.0 { 0.0 } else { -tau * c / m };
                (
                    0.5 * c * p2,
                    [c * p[0], c * p[1]],
                    0.5 * dm * p2,
                    [[c, 0.0], [0.0, c]],
                    [dm * p[0], dm * p[1]],
                )
            }
            Family::QuadraticSeparable { .. } => (0.5 * p2, p, 0.0, [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0]),
        };
        let mut out = LocalH {
            h0: k - v,
            h_p: k_p,
            h_m: k_m - v_m,
            h_theta: -1.0,
            h_pp: k_pp,
            h_pm: k_pm,
        };
        if self.grid().dim() == 1 {
            out.h_p[1] = 0.0;
            out.h_pp[0][1] = 0.0;
            out.h_pp[1] = [0.0, 0.0];
            out.h_pm[1] = 0.0;
        }
        Ok(out)
    }

    fn diffusion(&self, node: usize) -> f64 {
        match &self.family {
            Family::PowerGrowth { sigma, .. } | Family::Congestion { sigma, .. } => sigma.values()[node],
            Family::QuadraticSeparable { sigma0 } => sigma0 * sigma0,
        }
    }

    fn nonlocal(&self) -> Option<&NonlocalSpec> {
        if self.nonlocal.is_zero() {
            None
        } else {
            Some(&self.nonlocal)
        }
    }
}

/// Parameters of `H̃(p,m) = (1+|p|²)^{γ/2}/(γ m^τ) − m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelHamiltonianParams {
    pub gamma: f64,
    pub tau: f64,
}

impl ModelHamiltonianParams {
    pub fn new(gamma: f64, tau: f64) -> Result<Self> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(MfgError::config("model.gamma", "must be > 1"));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(MfgError::config("model.tau", "must lie in [0, 1)"));
        }
        Ok(ModelHamiltonianParams { gamma, tau })
    }

    /// `H̃` and its derivatives at one point.
    pub fn local(&self, node: usize, p: [f64; 2], m: f64, dim: usize) -> Result<LocalH> {
        if !(m > 0.0) {
            return Err(MfgError::Domain {
                what: "model Hamiltonian",
                node,
                value: m,
            });
        }
        let g = self.gamma;
        let p2 = p[0] * p[0] + p[1] * p[1];
        let base = 1.0 + p2;
        let mt = if self.tau == 0.0 { 1.0 } else { m.powf(self.tau) };
        let k = base.powf(g / 2.0) / (g * mt);
        let c1 = base.powf(g / 2.0 - 1.0) / mt;
        let c2 = (g - 2.0) * base.powf(g / 2.0 - 2.0) / mt;
        let mut out = LocalH {
            h0: k - m,
            h_p: [c1 * p[0], c1 * p[1]],
            h_m: -self.tau * k / m - 1.0,
            h_theta: 0.0,
            h_pp: [
                [c1 + c2 * p[0] * p[0], c2 * p[0] * p[1]],
                [c2 * p[1] * p[0], c1 + c2 * p[1] * p[1]],
            ],
            h_pm: [-self.tau * c1 * p[0] / m, -self.tau * c1 * p[1] / m],
        };
        if dim == 1 {
            out.h_p[1] = 0.0;
            out.h_pp[0][1] = 0.0;
            out.h_pp[1] = [0.0, 0.0];
            out.h_pm[1] = 0.0;
        }
        Ok(out)
    }
}

/// `H̃` on a grid, as a [`Hamiltonian`] without diffusion or nonlocal term.
#[derive(Clone, Debug)]
pub struct ModelHamiltonian {
    pub params: ModelHamiltonianParams,
    grid: TorusGrid,
}

impl ModelHamiltonian {
    pub fn new(grid: &TorusGrid, params: ModelHamiltonianParams) -> Self {
        ModelHamiltonian {
            params,
            grid: grid.clone(),
        }
    }
}

impl Hamiltonian for ModelHamiltonian {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn local(&self, node: usize, p: [f64; 2], m: f64, _theta: f64) -> Result<LocalH> {
        self.params.local(node, p, m, self.grid.dim())
    }

    fn diffusion(&self, _node: usize) -> f64 {
        0.0
    }

    fn nonlocal(&self) -> Option<&NonlocalSpec> {
        None
    }
}

/// `H_μ = (1−μ) H + μ H̃`.
#[derive(Clone, Debug)]
pub struct Blend<'a> {
    pub mu: f64,
    pub spec: &'a HamiltonianSpec,
    pub model: ModelHamiltonianParams,
}

pub fn blend_mu(mu: f64, spec: &HamiltonianSpec, params: ModelHamiltonianParams) -> Result<Blend<'_>> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(MfgError::config("mu", format!("must lie in [0, 1], got {mu}")));
    }
    Ok(Blend {
        mu,
        spec,
        model: params,
    })
}

impl Hamiltonian for Blend<'_> {
    fn grid(&self) -> &TorusGrid {
        self.spec.grid()
    }

    fn local(&self, node: usize, p: [f64; 2], m: f64, theta: f64) -> Result<LocalH> {
        // only evaluate the parts with nonzero weight, so that domain
        // restrictions of the unused part do not apply
        let mut out = LocalH::default();
        if self.mu < 1.0 {
            out = self.spec.local(node, p, m, theta)?.scaled(1.0 - self.mu);
        }
        if self.mu > 0.0 {
            let model = self.model.local(node, p, m, self.grid().dim())?;
            out = out.plus(&model.scaled(self.mu));
        }
        Ok(out)
    }

    fn diffusion(&self, node: usize) -> f64 {
        (1.0 - self.mu) * self.spec.diffusion(node)
    }

    fn nonlocal(&self) -> Option<&NonlocalSpec> {
        if self.mu < 1.0 {
            self.spec.nonlocal()
        } else {
            None
        }
    }
}

fn map_nodes<H, F>(ham: &H, m: &Field, f: F) -> Result<Vec<f64>>
where
    H: Hamiltonian + ?Sized,
    F: Fn(usize) -> Result<f64>,
{
    let _ = ham;
    (0..m.len()).map(f).collect()
}

pub fn eval_h<H: Hamiltonian + ?Sized>(
    ham: &H,
    du: &VectorField,
    d2u: &MatrixField,
    m: &Field,
    theta: &Field,
) -> Result<Field> {
    let vals = map_nodes(ham, m, |i| {
        ham.eval_point(i, du.at(i), d2u.at(i), m.values()[i], theta.values()[i])
    })?;
    Ok(Field::raw(m.grid(), vals))
}

pub fn grad_p_h<H: Hamiltonian + ?Sized>(ham: &H, du: &VectorField, m: &Field, theta: &Field) -> Result<VectorField> {
    let g = m.grid();
    let mut comps = vec![vec![0.0; g.len()]; g.dim()];
    for i in 0..g.len() {
        let l = ham.local(i, du.at(i), m.values()[i], theta.values()[i])?;
        for (a, c) in comps.iter_mut().enumerate() {
            c[i] = l.h_p[a];
        }
    }
    VectorField::new(comps.into_iter().map(|c| Field::raw(g, c)).collect())
}

/// `D_M H = −a Id`.
pub fn grad_m_h<H: Hamiltonian + ?Sized>(ham: &H) -> MatrixField {
    let g = ham.grid();
    let mut out = MatrixField::zeros(g);
    let a = Field::raw(g, (0..g.len()).map(|i| -ham.diffusion(i)).collect());
    for i in 0..g.dim() {
        out.set(i, i, a.clone());
    }
    out
}

pub fn d_m_h<H: Hamiltonian + ?Sized>(ham: &H, du: &VectorField, m: &Field, theta: &Field) -> Result<Field> {
    let vals = map_nodes(ham, m, |i| {
        Ok(ham.local(i, du.at(i), m.values()[i], theta.values()[i])?.h_m)
    })?;
    Ok(Field::raw(m.grid(), vals))
}

pub fn d_theta_h<H: Hamiltonian + ?Sized>(ham: &H, du: &VectorField, m: &Field, theta: &Field) -> Result<Field> {
    let vals = map_nodes(ham, m, |i| {
        Ok(ham.local(i, du.at(i), m.values()[i], theta.values()[i])?.h_theta)
    })?;
    Ok(Field::raw(m.grid(), vals))
}

pub fn eval_model_h(params: &ModelHamiltonianParams, du: &VectorField, m: &Field) -> Result<Field> {
    let d = m.grid().dim();
    let vals = (0..m.len())
        .map(|i| Ok(params.local(i, du.at(i), m.values()[i], d)?.h0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Field::raw(m.grid(), vals))
}

pub fn model_grad_p_h(params: &ModelHamiltonianParams, du: &VectorField, m: &Field) -> Result<VectorField> {
    let model = ModelHamiltonian::new(m.grid(), *params);
    grad_p_h(&model, du, m, &Field::zeros(m.grid()))
}

pub fn model_d_m_h(params: &ModelHamiltonianParams, du: &VectorField, m: &Field) -> Result<Field> {
    let model = ModelHamiltonian::new(m.grid(), *params);
    d_m_h(&model, du, m, &Field::zeros(m.grid()))
}

/// `sup_{s ≥ 0} { s·speed − a(1+s²)^{γ/2} }` by bisection on the
/// first-order condition, which is strictly decreasing in `s`.
fn power_growth_dual(speed: f64, a: f64, gamma: f64) -> f64 {
    let obj = |s: f64| s * speed - a * (1.0 + s * s).powf(gamma / 2.0);
    if speed == 0.0 {
        return obj(0.0);
    }
    let slope = |s: f64| speed - a * gamma * s * (1.0 + s * s).powf(gamma / 2.0 - 1.0);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while slope(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    obj(0.5 * (lo + hi))
}

/// `L₀(x,v,m,θ) = sup_p { −p·v − H₀(x,p,m,θ) }`.
pub fn legendre_l0(spec: &HamiltonianSpec, v: &VectorField, m: &Field, theta: &Field) -> Result<Field> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.len() {
        let vi = v.at(i);
        let speed2 = vi[0] * vi[0] + vi[1] * vi[1];
        let mi = m.values()[i];
        let pot = spec.potential_at(i, mi, theta.values()[i])?;
        let kinetic_dual = match &spec.family {
            Family::QuadraticSeparable { .. } => 0.5 * speed2,
            Family::Congestion { a, tau, .. } => {
                if *tau > 0.0 && !(mi > 0.0) {
                    return Err(MfgError::Domain {
                        what: "congestion Lagrangian",
                        node: i,
                        value: mi,
                    });
                }
                let mt = if *tau == 0.0 { 1.0 } else { mi.powf(*tau) };
                mt * speed2 / (2.0 * a.values()[i])
            }
            Family::PowerGrowth { a, gamma, .. } => power_growth_dual(speed2.sqrt(), a.values()[i], *gamma),
        };
        out.push(kinetic_dual + pot);
    }
    Ok(Field::raw(m.grid(), out))
}

/// One sample point `(x, p, M, m, θ)` for pointwise structural checks.
#[derive(Clone, Copy, Debug)]
pub struct HSample {
    pub node: usize,
    pub p: [f64; 2],
    pub mat: [[f64; 2]; 2],
    pub m: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoercivityReport {
    pub c1: f64,
    pub c2: f64,
    pub samples: usize,
    /// Minimum margin; `None` for an empty sample set.
    pub min_margin: Option<f64>,
    pub pass: bool,
}

/// Which `g` enters the coercivity bound: the spec's `g₁ + θ`, or `g̃ = m`
/// for the model Hamiltonian.
pub enum CoercivityTarget<'a> {
    Spec(&'a HamiltonianSpec),
    Model(&'a ModelHamiltonian),
}

/// Margin of `−H + D_pH·p + D_MH:M ≥ m^{−τ}|p|^γ/C₁ + C₂ g − C₁` at each sample.
pub fn check_coercivity_identity(
    target: &CoercivityTarget<'_>,
    samples: &[HSample],
    c1: f64,
    c2: f64,
) -> Result<CoercivityReport> {
    let mut min_margin: Option<f64> = None;
    for s in samples {
        let (ham, gamma, tau, g): (&dyn Hamiltonian, f64, f64, f64) = match target {
            CoercivityTarget::Spec(spec) => {
                let g = spec.potential.coupling.g1(s.m, s.node)? + s.theta;
                (*spec, spec.gamma(), spec.tau(), g)
            }
            CoercivityTarget::Model(model) => (*model, model.params.gamma, model.params.tau, s.m),
        };
        let l = ham.local(s.node, s.p, s.m, s.theta)?;
        let a = ham.diffusion(s.node);
        let tr: f64 = (0..ham.grid().dim()).map(|i| s.mat[i][i]).sum();
        let h = l.h0 - a * tr;
        let dmh_m = -a * tr;
        let pp = l.h_p[0] * s.p[0] + l.h_p[1] * s.p[1];
        let pn = (s.p[0] * s.p[0] + s.p[1] * s.p[1]).sqrt();
        let mt = if tau == 0.0 { 1.0 } else { s.m.powf(-tau) };
        let margin = -h + pp + dmh_m - mt * pn.powf(gamma) / c1 - c2 * g + c1;
        min_margin = Some(min_margin.map_or(margin, |v: f64| v.min(margin)));
    }
    Ok(CoercivityReport {
        c1,
        c2,
        samples: samples.len(),
        min_margin,
        pass: min_margin.is_none_or(|v| v >= 0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::CouplingSpec;
    use crate::torus_grid::make_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic_vm(grid: &TorusGrid) -> HamiltonianSpec {
        HamiltonianSpec::new(
            Family::QuadraticSeparable { sigma0: 0.0 },
            PotentialSpec::new(Field::zeros(grid), CouplingSpec::power(1.0).unwrap()).unwrap(),
            NonlocalSpec::none(grid),
        )
        .unwrap()
    }

    fn plain(grid: &TorusGrid, family: Family) -> HamiltonianSpec {
        HamiltonianSpec::new(
            family,
            PotentialSpec::new(Field::zeros(grid), CouplingSpec::power(1.0).unwrap()).unwrap(),
            NonlocalSpec::none(grid),
        )
        .unwrap()
    }

    #[test]
    fn eval_h_examples() {
        let g = make_grid(1, 16).unwrap();
        let one = Field::constant(&g, 1.0);
        let zero = Field::zeros(&g);
        let du = VectorField::constant(&g, &[0.0]);
        let d2u = MatrixField::zeros(&g);
        let h = eval_h(&quadratic_vm(&g), &du, &d2u, &one, &zero).unwrap();
        assert!(h.values().iter().all(|&v| v == -1.0));

        // congestion evaluated with zero coupling: use log coupling at m where ln m cancels? use g1 = m^α with V0 = -m
        let cong = HamiltonianSpec::new(
            Family::Congestion {
                a: one.clone(),
                tau: 0.5,
                sigma: zero.clone(),
            },
            PotentialSpec::new(Field::constant(&g, -4.0), CouplingSpec::power(1.0).unwrap()).unwrap(),
            NonlocalSpec::none(&g),
        )
        .unwrap();
        let h = eval_h(
            &cong,
            &VectorField::constant(&g, &[1.0]),
            &d2u,
            &Field::constant(&g, 4.0),
            &zero,
        )
        .unwrap();
        assert!(h.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let pg = plain(
            &g,
            Family::PowerGrowth {
                a: one.clone(),
                gamma: 2.0,
                sigma: zero.clone(),
            },
        );
        let h = eval_h(&pg, &du, &d2u, &zero, &zero).unwrap();
        assert!(h.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn congestion_rejects_nonpositive_density() {
        let g = make_grid(1, 8).unwrap();
        let one = Field::constant(&g, 1.0);
        let zero = Field::zeros(&g);
        let cong = plain(
            &g,
            Family::Congestion {
                a: one,
                tau: 0.5,
                sigma: zero.clone(),
            },
        );
        let r = eval_h(
            &cong,
            &VectorField::constant(&g, &[1.0]),
            &MatrixField::zeros(&g),
            &zero,
            &zero,
        );
        assert!(matches!(r, Err(MfgError::Domain { .. })));
    }

    #[test]
    fn gradient_examples() {
        let g = make_grid(1, 8).unwrap();
        let zero = Field::zeros(&g);
        let one = Field::constant(&g, 1.0);
        let du = VectorField::new(vec![Field::from_fn(&g, |x| x[0] - 0.3)]).unwrap();
        let gp = grad_p_h(&quadratic_vm(&g), &du, &one, &zero).unwrap();
        assert_eq!(gp, du);

        let pg = plain(
            &g,
            Family::PowerGrowth {
                a: one.clone(),
                gamma: 2.0,
                sigma: zero.clone(),
            },
        );
        let gp = grad_p_h(&pg, &VectorField::constant(&g, &[3.0]), &one, &zero).unwrap();
        assert!(gp.component(0).values().iter().all(|&v| (v - 6.0).abs() < 1e-14));
        let q = quadratic_vm(&g);
        assert!(d_theta_h(&q, &du, &one, &zero)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == -1.0));
        assert!(d_m_h(&q, &du, &one, &zero).unwrap().values().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn model_examples() {
        let g = make_grid(1, 8).unwrap();
        let du0 = VectorField::constant(&g, &[0.0]);
        let p = ModelHamiltonianParams::new(2.0, 0.0).unwrap();
        let h = eval_model_h(&p, &du0, &Field::constant(&g, 1.0)).unwrap();
        assert!(h.values().iter().all(|&v| (v + 0.5).abs() < 1e-15));
        let dm = model_d_m_h(&p, &VectorField::constant(&g, &[0.7]), &Field::constant(&g, 2.0)).unwrap();
        assert!(dm.values().iter().all(|&v| v == -1.0));
        let p = ModelHamiltonianParams::new(2.0, 0.5).unwrap();
        let h = eval_model_h(&p, &du0, &Field::constant(&g, 4.0)).unwrap();
        assert!(h.values().iter().all(|&v| (v + 3.75).abs() < 1e-14));
        assert!(eval_model_h(&p, &du0, &Field::zeros(&g)).is_err());
        assert!(ModelHamiltonianParams::new(1.0, 0.0).is_err());
        assert!(ModelHamiltonianParams::new(2.0, 1.0).is_err());
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let g = make_grid(1, 16).unwrap();
        let spec = plain(
            &g,
            Family::PowerGrowth {
                a: Field::from_fn(&g, |x| 1.0 + 0.5 * (6.0 * x[0]).sin()),
                gamma: 1.5,
                sigma: Field::from_fn(&g, |x| x[0]),
            },
        );
        let params = ModelHamiltonianParams::new(1.5, 0.0).unwrap();
        let b0 = blend_mu(0.0, &spec, params).unwrap();
        let b1 = blend_mu(1.0, &spec, params).unwrap();
        let bh = blend_mu(0.5, &spec, params).unwrap();
        let model = ModelHamiltonian::new(&g, params);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let node = rng.gen_range(0..16);
            let p = [rng.gen_range(-3.0..3.0), 0.0];
            let mat = [[rng.gen_range(-2.0..2.0), 0.0], [0.0, 0.0]];
            let m = rng.gen_range(0.1..3.0);
            let th = rng.gen_range(-1.0..1.0);
            let e0 = b0.eval_point(node, p, mat, m, th).unwrap();
            let e1 = b1.eval_point(node, p, mat, m, th).unwrap();
            let eh = bh.eval_point(node, p, mat, m, th).unwrap();
            assert_eq!(e0, spec.eval_point(node, p, mat, m, th).unwrap());
            assert!((e1 - model.eval_point(node, p, mat, m, th).unwrap()).abs() < 1e-14);
            assert!((eh - 0.5 * (e0 + e1)).abs() < 1e-12);
        }
        assert!(blend_mu(1.5, &spec, params).is_err());
        assert!(blend_mu(-0.1, &spec, params).is_err());
    }

    #[test]
    fn legendre_examples() {
        let g = make_grid(1, 8).unwrap();
        let q = HamiltonianSpec::new(
            Family::QuadraticSeparable { sigma0: 0.0 },
            PotentialSpec::new(Field::from_fn(&g, |x| x[0]), CouplingSpec::power(1.0).unwrap()).unwrap(),
            NonlocalSpec::none(&g),
        )
        .unwrap();
        let m = Field::constant(&g, 0.5);
        let th = Field::constant(&g, 0.25);
        let l = legendre_l0(&q, &VectorField::constant(&g, &[0.0]), &m, &th).unwrap();
        let v = Field::from_fn(&g, |x| x[0] + 0.75);
        assert!((&l - &v).sup_norm() < 1e-15);

        let q0 = HamiltonianSpec::new(
            Family::QuadraticSeparable { sigma0: 0.0 },
            PotentialSpec::new(Field::zeros(&g), CouplingSpec::power(1.0).unwrap()).unwrap(),
            NonlocalSpec::none(&g),
        )
        .unwrap();
        let l = legendre_l0(
            &q0,
            &VectorField::constant(&g, &[1.0]),
            &Field::zeros(&g),
            &Field::zeros(&g),
        )
        .unwrap();
        assert!(l.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn power_growth_dual_matches_closed_form_at_gamma_two() {
        // γ = 2: sup_s { s v − a(1+s²) } = v²/(4a) − a
        for (v, a) in [(0.3, 1.0), (2.0, 0.5), (7.0, 2.0)] {
            let got = power_growth_dual(v, a, 2.0);
            assert!((got - (v * v / (4.0 * a) - a)).abs() < 1e-10, "{got}");
        }
    }

    #[test]
    fn coercivity_examples() {
        let g = make_grid(1, 8).unwrap();
        let q = quadratic_vm(&g);
        let samples: Vec<HSample> = [0.2, 1.0, 3.0]
            .iter()
            .map(|&m| HSample {
                node: 1,
                p: [0.0, 0.0],
                mat: [[0.0; 2]; 2],
                m,
                theta: 0.0,
            })
            .collect();
        let r = check_coercivity_identity(&CoercivityTarget::Spec(&q), &samples, 1.0, 1.0).unwrap();
        assert!(r.pass);
        assert!((r.min_margin.unwrap() - 1.0).abs() < 1e-15);

        let model = ModelHamiltonian::new(&g, ModelHamiltonianParams::new(2.0, 0.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<HSample> = (0..100)
            .map(|_| HSample {
                node: 0,
                p: [rng.gen_range(-5.0..5.0), 0.0],
                mat: [[rng.gen_range(-5.0..5.0), 0.0], [0.0, 0.0]],
                m: rng.gen_range(0.01..5.0),
                theta: 0.0,
            })
            .collect();
        // −H̃ + p·p = |p|²/2 + m − 1/2 ≥ |p|²/2 + m − 1
        let r = check_coercivity_identity(&CoercivityTarget::Model(&model), &samples, 2.0, 1.0).unwrap();
        assert!(r.pass);
        let r = check_coercivity_identity(&CoercivityTarget::Model(&model), &[], 2.0, 1.0).unwrap();
        assert!(r.pass && r.min_margin.is_none());
    }

    fn variants(g: &TorusGrid) -> Vec<HamiltonianSpec> {
        let v0 = Field::from_fn(g, |x| 0.2 * (6.0 * x[0]).sin());
        let a = Field::from_fn(g, |x| 1.2 + 0.5 * (6.3 * x[0]).cos());
        let sigma = Field::from_fn(g, |x| 0.1 * x[0]);
        let nl = NonlocalSpec::new(g, 0.5, 0.3, 1.5, 0.1).unwrap();
        let pot = |c| PotentialSpec::new(v0.clone(), c).unwrap();
        let mut out = vec![HamiltonianSpec::new(
            Family::QuadraticSeparable { sigma0: 0.3 },
            pot(CouplingSpec::power(1.0).unwrap()),
            nl.clone(),
        )
        .unwrap()];
        for gamma in [1.5, 2.0, 3.0] {
            out.push(
                HamiltonianSpec::new(
                    Family::PowerGrowth {
                        a: a.clone(),
                        gamma,
                        sigma: sigma.clone(),
                    },
                    pot(CouplingSpec::power(2.5).unwrap()),
                    nl.clone(),
                )
                .unwrap(),
            );
        }
        for tau in [0.0, 0.5, 0.9] {
            out.push(
                HamiltonianSpec::new(
                    Family::Congestion {
                        a: a.clone(),
                        tau,
                        sigma: sigma.clone(),
                    },
                    pot(CouplingSpec::Log),
                    NonlocalSpec::none(g),
                )
                .unwrap(),
            );
        }
        out
    }

    fn close(fd: f64, an: f64) -> bool {
        (fd - an).abs() <= 1e-5 * an.abs().max(1.0)
    }

    fn check_fd<H: Hamiltonian + ?Sized>(ham: &H, rng: &mut ChaCha8Rng) {
        let dim = ham.grid().dim();
        let h = 1e-6;
        for _ in 0..100 {
            let node = rng.gen_range(0..ham.grid().len());
            let mut p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            if dim == 1 {
                p[1] = 0.0;
            }
            let m = rng.gen_range(0.2..3.0);
            let th = rng.gen_range(0.0..1.0);
            let l = ham.local(node, p, m, th).unwrap();
            let at = |p: [f64; 2], m: f64, th: f64| ham.local(node, p, m, th).unwrap();
            for ax in 0..dim {
                let mut pp = p;
                let mut pm = p;
                pp[ax] += h;
                pm[ax] -= h;
                let (lp, lm) = (at(pp, m, th), at(pm, m, th));
                assert!(close((lp.h0 - lm.h0) / (2.0 * h), l.h_p[ax]), "h_p");
                for bx in 0..dim {
                    assert!(close((lp.h_p[bx] - lm.h_p[bx]) / (2.0 * h), l.h_pp[bx][ax]), "h_pp");
                }
            }
            let (lp, lm) = (at(p, m + h, th), at(p, m - h, th));
            assert!(
                close((lp.h0 - lm.h0) / (2.0 * h), l.h_m),
                "h_m {} {}",
                (lp.h0 - lm.h0) / (2.0 * h),
                l.h_m
            );
            for ax in 0..dim {
                assert!(close((lp.h_p[ax] - lm.h_p[ax]) / (2.0 * h), l.h_pm[ax]), "h_pm");
            }
            let (lp, lm) = (at(p, m, th + h), at(p, m, th - h));
            assert!(close((lp.h0 - lm.h0) / (2.0 * h), l.h_theta), "h_theta");
            // D_M H = −a Id
            for i in 0..dim {
                for j in 0..dim {
                    let mut mp = [[0.0; 2]; 2];
                    let mut mm = [[0.0; 2]; 2];
                    mp[i][j] = h;
                    mm[i][j] = -h;
                    let fd = (ham.eval_point(node, p, mp, m, th).unwrap()
                        - ham.eval_point(node, p, mm, m, th).unwrap())
                        / (2.0 * h);
                    let an = if i == j { -ham.diffusion(node) } else { 0.0 };
                    assert!(close(fd, an), "D_M");
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for d in [1, 2] {
            let g = make_grid(d, 8).unwrap();
            for spec in variants(&g) {
                check_fd(&spec, &mut rng);
                let model = ModelHamiltonianParams::new(spec.gamma(), spec.tau()).unwrap();
                check_fd(&ModelHamiltonian::new(&g, model), &mut rng);
                check_fd(&blend_mu(0.35, &spec, model).unwrap(), &mut rng);
            }
        }
    }

    #[test]
    fn grad_m_is_minus_diffusion() {
        let g = make_grid(2, 8).unwrap();
        let spec = &variants(&g)[1];
        let gm = grad_m_h(spec);
        if let Family::PowerGrowth { sigma, .. } = &spec.family {
            assert_eq!(gm.get(0, 0), &sigma.scale(-1.0));
            assert_eq!(gm.get(1, 1), &sigma.scale(-1.0));
            assert_eq!(gm.get(0, 1).sup_norm(), 0.0);
        }
    }

    #[test]
    fn convex_in_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let g = make_grid(2, 8).unwrap();
        for spec in variants(&g) {
            for _ in 0..200 {
                let node = rng.gen_range(0..g.len());
                let p1 = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                let p2 = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
                let lam = rng.gen_range(0.0..1.0);
                let m = rng.gen_range(0.1..3.0);
                let pl = [lam * p1[0] + (1.0 - lam) * p2[0], lam * p1[1] + (1.0 - lam) * p2[1]];
                let f = |p| spec.local(node, p, m, 0.2).unwrap().h0;
                assert!(f(pl) <= lam * f(p1) + (1.0 - lam) * f(p2) + 1e-12);
            }
        }
    }

    #[test]
    fn fenchel_young() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let g = make_grid(1, 8).unwrap();
        for spec in variants(&g) {
            for _ in 0..100 {
                let node = rng.gen_range(0..g.len());
                let m = rng.gen_range(0.1..3.0);
                let th = rng.gen_range(0.0..1.0);
                let p = rng.gen_range(-5.0..5.0);
                let v = rng.gen_range(-5.0..5.0);
                let mut vf = vec![0.0; g.len()];
                vf[node] = v;
                let vfield = VectorField::new(vec![Field::new(&g, vf).unwrap()]).unwrap();
                let l0 = legendre_l0(&spec, &vfield, &Field::constant(&g, m), &Field::constant(&g, th)).unwrap();
                let h0 = spec.local(node, [p, 0.0], m, th).unwrap().h0;
                assert!(l0.values()[node] + h0 + p * v >= -1e-10);
                // equality at the maximizer p* = −H-gradient inverse: v = −H_p(p*)
                let hp = spec.local(node, [p, 0.0], m, th).unwrap().h_p[0];
                let mut vstar = vec![0.0; g.len()];
                vstar[node] = -hp;
                let vs = VectorField::new(vec![Field::new(&g, vstar).unwrap()]).unwrap();
                let l0s = legendre_l0(&spec, &vs, &Field::constant(&g, m), &Field::constant(&g, th)).unwrap();
                assert!((l0s.values()[node] + h0 - p * hp).abs() < 1e-8 * (1.0 + h0.abs()));
            }
        }
    }
}
