//! Executable checks of what the theory asserts about solutions: a-priori
//! quantities, the weak variational inequality, the sub/super-solution and
//! distributional Fokker–Planck properties, the pointwise quadratic case and
//! sampled structural assumptions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coupling::{eval_h, CouplingSpec};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{
    check_coercivity_identity, grad_p_h, legendre_l0, CoercivityTarget, Family, HSample, Hamiltonian, HamiltonianSpec,
};
use crate::mfg_operator::{apply_a, MfgState, RegularizationParams};
use crate::solver::int_abs_beta;
use crate::torus_grid::{divergence, gradient, hessian, integrate, laplacian, Field, TorusGrid, VectorField};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Integrals bounded uniformly in `ε` by the a-priori estimates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AprioriQuantities {
    /// `∫|Du|^γ`
    pub int_du_gamma: f64,
    /// `|∫u|`
    pub mean_u_abs: f64,
    /// `∫|β_ε₁(m)|`
    pub int_abs_beta: f64,
    /// `∫ m g₁(m)`
    pub int_m_g1: f64,
    /// `∫ −g₁(m)`
    pub int_neg_g1: f64,
    /// `∫|Du|^γ m^{1−τ}`
    pub int_du_gamma_m: f64,
    /// `∫|Du|^γ m^{−τ}`
    pub int_du_gamma_m_tau: f64,
    /// `∫m`
    pub mass: f64,
}

pub fn compute_apriori(
    state: &MfgState,
    reg: &RegularizationParams,
    spec: &HamiltonianSpec,
) -> Result<AprioriQuantities> {
    let gamma = spec.gamma();
    let tau = spec.tau();
    let du_g = gradient(&state.u).norm().map(|v| v.powf(gamma));
    let g1 = state
        .m
        .values()
        .iter()
        .enumerate()
        .map(|(i, &m)| spec.potential.coupling.g1(m, i))
        .collect::<Result<Vec<_>>>()?;
    let g1 = Field::new(state.grid(), g1)?;
    let m_pow = |e: f64| state.m.map(|m| if e == 0.0 { 1.0 } else { m.powf(e) });
    Ok(AprioriQuantities {
        int_du_gamma: integrate(&du_g),
        mean_u_abs: integrate(&state.u).abs(),
        int_abs_beta: int_abs_beta(&state.m, reg)?,
        int_m_g1: integrate(&(&state.m * &g1)),
        int_neg_g1: -integrate(&g1),
        int_du_gamma_m: integrate(&(&du_g * &m_pow(1.0 - tau))),
        int_du_gamma_m_tau: integrate(&(&du_g * &m_pow(-tau))),
        mass: integrate(&state.m),
    })
}

// ---------------------------------------------------------------------------
// reports

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CheckContext {
    pub instance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckContext {
    pub fn instance(name: &str) -> Self {
        CheckContext {
            instance: name.to_string(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub check: String,
    pub pass: bool,
    /// The measured quantity; its meaning is check-specific (a minimum
    /// margin, a maximum violation, ...).
    pub value: f64,
    pub tol: f64,
    pub context: CheckContext,
}

impl CheckResult {
    fn new(check: &str, pass: bool, value: f64, tol: f64, context: &CheckContext) -> Self {
        CheckResult {
            check: check.to_string(),
            pass: pass && value.is_finite(),
            value,
            tol,
            context: context.clone(),
        }
    }

    /// Passes when `value ≤ tol`.
    fn at_most(check: &str, value: f64, tol: f64, context: &CheckContext) -> Self {
        Self::new(check, value <= tol, value, tol, context)
    }

    /// Passes when `value ≥ −tol`.
    fn at_least_minus(check: &str, value: f64, tol: f64, context: &CheckContext) -> Self {
        Self::new(check, value >= -tol, value, tol, context)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagnosticsReport {
    pub schema_version: u32,
    pub checks: Vec<CheckResult>,
}

impl Default for DiagnosticsReport {
    fn default() -> Self {
        DiagnosticsReport {
            schema_version: REPORT_SCHEMA_VERSION,
            checks: Vec::new(),
        }
    }
}

impl DiagnosticsReport {
    pub fn push(&mut self, c: CheckResult) {
        self.checks.push(c);
    }

    pub fn extend(&mut self, cs: impl IntoIterator<Item = CheckResult>) {
        self.checks.extend(cs);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, check: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.check == check)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

// ---------------------------------------------------------------------------
// test functions

/// Random trigonometric polynomial with modes `|k_i| ≤ 4`, coefficients
/// decaying like `1/(1+|k|²)`, scaled to unit sup norm.
pub fn random_fourier_sum(grid: &TorusGrid, rng: &mut impl Rng) -> Field {
    let ky_max = if grid.dim() == 2 { 4 } else { 0 };
    let mut terms = Vec::new();
    for kx in 0..=4i32 {
        for ky in -ky_max..=ky_max {
            if kx == 0 && ky < 0 {
                continue;
            }
            let w = 1.0 / (1.0 + (kx * kx + ky * ky) as f64);
            terms.push((
                kx as f64,
                ky as f64,
                w * rng.gen_range(-1.0..1.0),
                w * rng.gen_range(-1.0..1.0),
            ));
        }
    }
    let f = Field::from_fn(grid, |x| {
        let y = if x.len() > 1 { x[1] } else { 0.0 };
        terms
            .iter()
            .map(|&(kx, ky, a, b)| {
                let arg = 2.0 * std::f64::consts::PI * (kx * x[0] + ky * y);
                a * arg.cos() + b * arg.sin()
            })
            .sum()
    });
    let s = f.sup_norm();
    if s > 0.0 {
        f.scale(1.0 / s)
    } else {
        Field::constant(grid, 1.0)
    }
}

/// `δ + s²` with `s` from [`random_fourier_sum`].
pub fn random_positive(grid: &TorusGrid, rng: &mut impl Rng, delta: f64) -> Field {
    random_fourier_sum(grid, rng).map(|v| delta + v * v)
}

/// `count` test functions from `seed`; nonnegative ones include the constant 1.
pub fn test_functions(grid: &TorusGrid, seed: u64, count: usize, nonnegative: bool) -> Vec<Field> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    if count > 0 {
        out.push(Field::constant(grid, 1.0));
    }
    while out.len() < count {
        out.push(if nonnegative {
            random_positive(grid, &mut rng, 0.0)
        } else {
            random_fourier_sum(grid, &mut rng)
        });
    }
    out
}

// ---------------------------------------------------------------------------
// checks on a limit candidate

fn theta_of(spec: &HamiltonianSpec, m: &Field) -> Result<Field> {
    match spec.nonlocal() {
        Some(nl) => eval_h(nl, &m.map(|v| v.max(0.0))),
        None => Ok(Field::zeros(m.grid())),
    }
}

fn diffusion_field(spec: &HamiltonianSpec) -> Field {
    let g = spec.grid();
    Field::raw(g, (0..g.len()).map(|i| spec.diffusion(i)).collect())
}

/// `H₀(x, p(x), m(x), θ(x))` on the grid.
fn h0_field(spec: &HamiltonianSpec, p: &VectorField, m: &Field, theta: &Field) -> Result<Field> {
    let vals = (0..m.len())
        .map(|i| Ok(spec.local(i, p.at(i), m.values()[i], theta.values()[i])?.h0))
        .collect::<Result<Vec<_>>>()?;
    Ok(Field::raw(m.grid(), vals))
}

/// `J = m D_pH(x, Du, m, h(m))`.
pub fn compute_current(state: &MfgState, spec: &HamiltonianSpec) -> Result<VectorField> {
    let theta = theta_of(spec, &state.m)?;
    let hp = grad_p_h(spec, &gradient(&state.u), &state.m, &theta)?;
    Ok(hp.scale_by(&state.m))
}

/// `q = (α+1)γ/((α+1)γ − α)`; the log coupling uses `α = 0`.
pub fn current_exponent(spec: &HamiltonianSpec) -> f64 {
    let alpha = spec.potential.coupling.growth_exponent();
    let g = spec.gamma();
    (alpha + 1.0) * g / ((alpha + 1.0) * g - alpha)
}

/// Discrete `‖J‖_{L^q}`.
pub fn current_lq_norm(j: &VectorField, q: f64) -> f64 {
    integrate(&j.norm().map(|v| v.powf(q))).powf(1.0 / q)
}

fn vi_pairing(w: &MfgState, limit: &MfgState, spec: &HamiltonianSpec) -> Result<f64> {
    let a = apply_a(w, spec)?;
    Ok(a.pair(&w.axpy(-1.0, limit)?))
}

/// Pairings `⟨(η,v) − (m,u), A(η,v)⟩` over random smooth test pairs with
/// `η > 0`: half are global (`η = δ + s²`, `v` a random sum), half are local
/// perturbations `η = m e^{t s}`, `v = u + t r` with `t ∈ {0.1, 0.01}` (only
/// when `m > 0`). `sign = −1` flips the operator (negative control).
pub fn vi_pairings(limit: &MfgState, spec: &HamiltonianSpec, trials: usize, seed: u64, sign: f64) -> Result<Vec<f64>> {
    let g = limit.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let local = limit.m.min() > 0.0;
    let mut out = Vec::with_capacity(trials);
    for k in 0..trials {
        let w = if local && k % 2 == 1 {
            let t = if k % 4 == 1 { 0.1 } else { 0.01 };
            let s = random_fourier_sum(g, &mut rng);
            let r = random_fourier_sum(g, &mut rng);
            MfgState {
                m: limit.m.zip_map(&s, |m, s| m * (t * s).exp()),
                u: limit.u.zip_map(&r, |u, r| u + t * r),
            }
        } else {
            let shift = rng.gen_range(-1.0..1.0);
            MfgState {
                m: random_positive(g, &mut rng, 0.1),
                u: random_fourier_sum(g, &mut rng).map(|v| v + shift),
            }
        };
        out.push(sign * vi_pairing(&w, limit, spec)?);
    }
    Ok(out)
}

pub fn check_variational_inequality(
    limit: &MfgState,
    spec: &HamiltonianSpec,
    trials: usize,
    tol: f64,
    seed: u64,
    ctx: &CheckContext,
) -> Result<CheckResult> {
    let p = vi_pairings(limit, spec, trials, seed, 1.0)?;
    let min = p.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CheckResult::at_least_minus(
        "variational_inequality",
        if trials == 0 { 0.0 } else { min },
        tol,
        ctx,
    ))
}

fn require_degenerate_form(spec: &HamiltonianSpec) -> Result<()> {
    // every shipped family is of the form H₀ − a tr M with scalar a ≥ 0
    let g = spec.grid();
    if (0..g.len()).any(|i| !(spec.diffusion(i) >= 0.0)) {
        return Err(MfgError::Unsupported("diffusion must be nonnegative".into()));
    }
    Ok(())
}

/// Values of `∫ φ(u + H₀(x,Du,m,h(m))) − Δ(φa) u` for each test function.
pub fn subsolution_values(limit: &MfgState, spec: &HamiltonianSpec, phis: &[Field]) -> Result<Vec<f64>> {
    require_degenerate_form(spec)?;
    let theta = theta_of(spec, &limit.m)?;
    let h0 = h0_field(spec, &gradient(&limit.u), &limit.m, &theta)?;
    let a = diffusion_field(spec);
    let lhs = &limit.u + &h0;
    phis.iter()
        .map(|phi| Ok(integrate(&(phi * &lhs)) - integrate(&(&laplacian(&(phi * &a)) * &limit.u))))
        .collect()
}

pub fn check_subsolution(
    limit: &MfgState,
    spec: &HamiltonianSpec,
    phis: &[Field],
    tol: f64,
    ctx: &CheckContext,
) -> Result<CheckResult> {
    let v = subsolution_values(limit, spec, phis)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(CheckResult::at_most(
        "subsolution",
        if phis.is_empty() { 0.0 } else { max },
        tol,
        ctx,
    ))
}

/// Values of `∫ mφ + J·Dφ − m a Δφ − φ`.
pub fn fp_distributional_values(
    limit: &MfgState,
    j: &VectorField,
    spec: &HamiltonianSpec,
    phis: &[Field],
) -> Result<Vec<f64>> {
    require_degenerate_form(spec)?;
    let a = diffusion_field(spec);
    let ma = &limit.m * &a;
    phis.iter()
        .map(|phi| {
            Ok(integrate(&(&limit.m * phi)) + integrate(&j.dot(&gradient(phi)))
                - integrate(&(&ma * &laplacian(phi)))
                - integrate(phi))
        })
        .collect()
}

pub fn check_fp_distributional(
    limit: &MfgState,
    j: &VectorField,
    spec: &HamiltonianSpec,
    phis: &[Field],
    tol: f64,
    ctx: &CheckContext,
) -> Result<CheckResult> {
    let v = fp_distributional_values(limit, j, spec, phis)?;
    let max = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
    Ok(CheckResult::at_most("fp_distributional", max, tol, ctx))
}

/// Values of `∫ J·Dφ − H₀(x,Dφ,m,h(m)) m − u`.
pub fn supersolution_values(
    limit: &MfgState,
    j: &VectorField,
    spec: &HamiltonianSpec,
    phis: &[Field],
) -> Result<Vec<f64>> {
    require_degenerate_form(spec)?;
    let theta = theta_of(spec, &limit.m)?;
    let mpos = limit.m.map(|v| v.max(0.0));
    phis.iter()
        .map(|phi| {
            let dphi = gradient(phi);
            let h0 = h0_field(spec, &dphi, &mpos, &theta)?;
            Ok(integrate(&j.dot(&dphi)) - integrate(&(&h0 * &limit.m)) - integrate(&limit.u))
        })
        .collect()
}

/// `∫_{m>δ} m L₀(x, −J/m, m, h(m)) − ∫u`.
pub fn supersolution_legendre_value(
    limit: &MfgState,
    j: &VectorField,
    spec: &HamiltonianSpec,
    delta: f64,
) -> Result<f64> {
    let g = limit.grid();
    let theta = theta_of(spec, &limit.m)?;
    let m = &limit.m;
    let inv = m.map(|v| if v > delta { -1.0 / v } else { 0.0 });
    let v = j.scale_by(&inv);
    let msafe = m.map(|v| if v > delta { v } else { 1.0 });
    let l0 = legendre_l0(spec, &v, &msafe, &theta)?;
    let vals: Vec<f64> = (0..g.len())
        .map(|i| {
            if m.values()[i] > delta {
                m.values()[i] * l0.values()[i]
            } else {
                0.0
            }
        })
        .collect();
    Ok(vals.iter().sum::<f64>() / g.len() as f64 - integrate(&limit.u))
}

pub fn check_supersolution(
    limit: &MfgState,
    j: &VectorField,
    spec: &HamiltonianSpec,
    phis: &[Field],
    tol: f64,
    delta: f64,
    ctx: &CheckContext,
) -> Result<Vec<CheckResult>> {
    let v = supersolution_values(limit, j, spec, phis)?;
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let leg = supersolution_legendre_value(limit, j, spec, delta)?;
    Ok(vec![
        CheckResult::at_most("supersolution", if phis.is_empty() { 0.0 } else { max }, tol, ctx),
        CheckResult::at_most("supersolution_legendre", leg, tol, ctx),
    ])
}

/// Pointwise residuals of the quadratic system.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticResiduals {
    /// `sup |m − div(m Du) − σ₀²Δm − 1|`
    pub fp_sup: f64,
    /// `min (−u − |Du|²/2 + V + σ₀²Δu)`
    pub hj_min: f64,
    /// `sup |(−u − |Du|²/2 + V)·m|` over nodes with `m > δ`
    pub complementarity_sup: f64,
    /// The same product over all nodes.
    pub complementarity_all: f64,
}

pub fn quadratic_residuals(limit: &MfgState, spec: &HamiltonianSpec, delta: f64) -> Result<QuadraticResiduals> {
    let Family::QuadraticSeparable { sigma0 } = spec.family else {
        return Err(MfgError::Unsupported(
            "pointwise checks need the quadratic family".into(),
        ));
    };
    let s2 = sigma0 * sigma0;
    let m = &limit.m;
    let u = &limit.u;
    let du = gradient(u);
    let theta = theta_of(spec, m)?;
    let fp = &(m - &divergence(&du.scale_by(m))) - &laplacian(m).scale(s2);
    let fp_sup = fp.map(|v| v - 1.0).sup_norm();
    let kin = du.dot(&du).scale(0.5);
    let v = (0..m.len())
        .map(|i| spec.potential_at(i, m.values()[i], theta.values()[i]))
        .collect::<Result<Vec<_>>>()?;
    let v = Field::raw(m.grid(), v);
    let first = &(&v - u) - &kin;
    let hj = &first + &laplacian(u).scale(s2);
    let prod = &first * m;
    let complementarity_sup = prod
        .values()
        .iter()
        .zip(m.values())
        .filter(|(_, &mi)| mi > delta)
        .map(|(p, _)| p.abs())
        .fold(0.0, f64::max);
    Ok(QuadraticResiduals {
        fp_sup,
        hj_min: hj.min(),
        complementarity_sup,
        complementarity_all: prod.sup_norm(),
    })
}

/// FP sup-residual, HJ inequality and (for `σ₀ = 0`) complementarity.
pub fn check_quadratic_pointwise(
    limit: &MfgState,
    spec: &HamiltonianSpec,
    delta: f64,
    tol: f64,
    ctx: &CheckContext,
) -> Result<Vec<CheckResult>> {
    let r = quadratic_residuals(limit, spec, delta)?;
    let mut out = vec![
        CheckResult::at_most("quadratic_fp_pointwise", r.fp_sup, tol, ctx),
        CheckResult::at_least_minus("quadratic_hj_inequality", r.hj_min, tol, ctx),
    ];
    if let Family::QuadraticSeparable { sigma0 } = spec.family {
        if sigma0 == 0.0 {
            out.push(CheckResult::at_most(
                "quadratic_complementarity",
                r.complementarity_sup,
                tol,
                ctx,
            ));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// sampled structural assumptions

/// Constants at which the sampled assumption inequalities are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AssumptionConstants {
    /// `∫h(m) ≤ c(1 + ∫m)`
    pub c: f64,
    /// Coercivity constants `(C₁, C₂)`.
    pub coercivity_c1: f64,
    pub coercivity_c2: f64,
    /// `∫V_{x_i} η_{x_i} ≥ (1/κ₁)∫η^{α−1}|Dη|² − κ₁`
    pub kappa1: f64,
}

impl Default for AssumptionConstants {
    fn default() -> Self {
        AssumptionConstants {
            c: 1.0,
            coercivity_c1: 2.0,
            coercivity_c2: 1.0,
            kappa1: 10.0,
        }
    }
}

fn min_over(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(f64::INFINITY, f64::min)
}

/// Evaluates each sampled inequality as a margin (`≥ 0` passes).
pub fn check_assumption_suite(
    spec: &HamiltonianSpec,
    samples: &[Field],
    constants: &AssumptionConstants,
    ctx: &CheckContext,
) -> Result<Vec<CheckResult>> {
    for s in samples {
        if s.grid() != spec.grid() {
            return Err(MfgError::GridMismatch("sample grid".into()));
        }
        if s.min() <= 0.0 {
            return Err(MfgError::Positivity {
                what: "sample",
                node: 0,
                value: s.min(),
            });
        }
    }
    let coupling = spec.potential.coupling;
    let g1 = |f: &Field| -> Result<Field> {
        let v = f
            .values()
            .iter()
            .enumerate()
            .map(|(i, &m)| coupling.g1(m, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Field::raw(f.grid(), v))
    };
    let theta = |f: &Field| theta_of(spec, f);
    let pairs = samples.iter().zip(samples.iter().skip(1));
    let mut out = Vec::new();

    // g₁ non-decreasing, tested in integrated form
    let mut margins = Vec::new();
    for (a, b) in pairs.clone() {
        let d = a - b;
        margins.push(integrate(&(&(&g1(a)? - &g1(b)?) * &d)));
    }
    out.push(CheckResult::at_least_minus(
        "assumption_g1_monotone",
        min_over(margins.into_iter()),
        1e-12,
        ctx,
    ));

    // lower bound of g₁: ∫ m g₁ ≥ −C, reported as the smallest value
    let mut vals = Vec::new();
    for s in samples {
        vals.push(integrate(&(s * &g1(s)?)));
    }
    let min_mg1 = min_over(vals.into_iter());
    let bound = match coupling {
        CouplingSpec::Power { .. } => 0.0,
        // m ln m ≥ −1/e pointwise
        CouplingSpec::Log => -(-1.0f64).exp(),
    };
    out.push(CheckResult::at_least_minus(
        "assumption_g1_lower_bound",
        min_mg1 - bound,
        1e-12,
        ctx,
    ));

    // θ = h(m) ≥ 0 and ∫h(m) ≤ c(1 + ∫m)
    let mut min_theta = f64::INFINITY;
    let mut growth = Vec::new();
    for s in samples {
        let th = theta(s)?;
        min_theta = min_theta.min(th.min());
        growth.push(constants.c * (1.0 + integrate(s)) - integrate(&th));
    }
    out.push(CheckResult::at_least_minus(
        "assumption_g2_nonnegative",
        min_theta,
        1e-12,
        ctx,
    ));
    out.push(CheckResult::at_least_minus(
        "assumption_g2_growth",
        min_over(growth.into_iter()),
        1e-12,
        ctx,
    ));

    // h monotone
    let mut margins = Vec::new();
    for (a, b) in pairs {
        margins.push(integrate(&(&(&theta(a)? - &theta(b)?) * &(a - b))));
    }
    out.push(CheckResult::at_least_minus(
        "assumption_h_monotone",
        min_over(margins.into_iter()),
        1e-12,
        ctx,
    ));

    // coercivity at (x, Dη, D²η, η, h(η))
    let mut hs = Vec::new();
    for s in samples {
        let th = theta(s)?;
        let p = gradient(s);
        let hm = hessian(s);
        for i in 0..s.len() {
            hs.push(HSample {
                node: i,
                p: p.at(i),
                mat: hm.at(i),
                m: s.values()[i],
                theta: th.values()[i],
            });
        }
    }
    let rep = check_coercivity_identity(
        &CoercivityTarget::Spec(spec),
        &hs,
        constants.coercivity_c1,
        constants.coercivity_c2,
    )?;
    out.push(CheckResult::at_least_minus(
        "assumption_coercivity",
        rep.min_margin.unwrap_or(0.0),
        1e-12,
        ctx,
    ));

    // ∫(V)_{x_i} η_{x_i} ≥ (1/κ₁)∫η^{α−1}|Dη|² − κ₁
    let alpha = coupling.growth_exponent();
    let mut margins = Vec::new();
    for s in samples {
        let th = theta(s)?;
        let v = (0..s.len())
            .map(|i| spec.potential_at(i, s.values()[i], th.values()[i]))
            .collect::<Result<Vec<_>>>()?;
        let dv = gradient(&Field::raw(s.grid(), v));
        let ds = gradient(s);
        let lhs = integrate(&dv.dot(&ds));
        let rhs = integrate(&(&s.map(|x| x.powf(alpha - 1.0)) * &ds.dot(&ds))) / constants.kappa1 - constants.kappa1;
        margins.push(lhs - rhs);
    }
    out.push(CheckResult::at_least_minus(
        "assumption_potential_gradient",
        min_over(margins.into_iter()),
        1e-12,
        ctx,
    ));

    // p-convexity of H₀ along random chords at the sampled states
    let mut rng = ChaCha8Rng::seed_from_u64(samples.len() as u64);
    let mut worst = f64::INFINITY;
    for s in samples {
        let th = theta(s)?;
        for i in (0..s.len()).step_by(s.len().div_ceil(16).max(1)) {
            let dim = s.grid().dim();
            let mut p1 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let mut p2 = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            if dim == 1 {
                p1[1] = 0.0;
                p2[1] = 0.0;
            }
            let lam = rng.gen_range(0.0..1.0);
            let pl = [lam * p1[0] + (1.0 - lam) * p2[0], lam * p1[1] + (1.0 - lam) * p2[1]];
            let h = |p| spec.local(i, p, s.values()[i], th.values()[i]).map(|l| l.h0);
            worst = worst.min(lam * h(p1)? + (1.0 - lam) * h(p2)? - h(pl)?);
        }
    }
    out.push(CheckResult::at_least_minus(
        "assumption_p_convexity",
        if worst.is_finite() { worst } else { 0.0 },
        1e-12,
        ctx,
    ));
    Ok(out)
}

// ---------------------------------------------------------------------------
// sweep-level monitors

/// Uniform bounds along an `ε` sweep: each monitored integral stays below
/// `C* = 2(1 + max at the first level)` and varies by at most 10% over the
/// last three levels.
pub fn check_apriori_uniform(levels: &[AprioriQuantities], ctx: &CheckContext) -> Vec<CheckResult> {
    let picks: [(&str, fn(&AprioriQuantities) -> f64); 4] = [
        ("int_du_gamma", |q| q.int_du_gamma),
        ("mean_u_abs", |q| q.mean_u_abs),
        ("int_abs_beta", |q| q.int_abs_beta),
        ("int_m_g1", |q| q.int_m_g1),
    ];
    let mut out = Vec::new();
    if levels.is_empty() {
        return out;
    }
    let c_star = 2.0 * (1.0 + picks.iter().map(|(_, f)| f(&levels[0]).abs()).fold(0.0, f64::max));
    for (name, f) in picks {
        let vals: Vec<f64> = levels.iter().map(f).collect();
        let max = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut c = ctx.clone();
        c.detail = Some(format!("C* = {c_star:.6e}"));
        out.push(CheckResult::at_most(&format!("apriori_bound_{name}"), max, c_star, &c));
        let tail = &vals[vals.len().saturating_sub(3)..];
        let hi = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
        let scale = tail.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
        out.push(CheckResult::at_most(
            &format!("apriori_tail_variation_{name}"),
            (hi - lo) / scale,
            0.1,
            ctx,
        ));
    }
    out
}

/// Tolerances and sample counts of the limit-candidate suite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub vi_trials: usize,
    pub vi_tol: f64,
    pub test_functions: usize,
    pub subsolution_tol: f64,
    pub fp_tol: f64,
    pub supersolution_tol: f64,
    pub quadratic_tol: f64,
    /// Positivity threshold relative to `max m`.
    pub delta_rel: f64,
    pub mass_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            seed: 0,
            vi_trials: 100,
            vi_tol: 1e-6,
            test_functions: 50,
            subsolution_tol: 1e-6,
            fp_tol: 1e-5,
            supersolution_tol: 1e-6,
            quadratic_tol: 1e-4,
            delta_rel: 1e-6,
            mass_tol: 1e-6,
        }
    }
}

/// The checks appropriate to the Hamiltonian family, on one limit candidate.
pub fn verify_limit(
    limit: &MfgState,
    spec: &HamiltonianSpec,
    opts: &VerifyOptions,
    ctx: &CheckContext,
) -> Result<DiagnosticsReport> {
    let g = limit.grid();
    let mut rep = DiagnosticsReport::default();
    rep.push(CheckResult::at_least_minus(
        "density_nonnegative",
        limit.m.min(),
        1e-12,
        ctx,
    ));
    rep.push(CheckResult::at_most(
        "mass",
        (integrate(&limit.m) - 1.0).abs(),
        opts.mass_tol,
        ctx,
    ));
    if limit.m.min() < -1e-12 {
        // the remaining checks need an admissible density
        return Ok(rep);
    }
    rep.push(check_variational_inequality(
        limit,
        spec,
        opts.vi_trials,
        opts.vi_tol,
        opts.seed,
        ctx,
    )?);
    let pos = test_functions(g, opts.seed.wrapping_add(1), opts.test_functions, true);
    let any = test_functions(g, opts.seed.wrapping_add(2), opts.test_functions, false);
    let j = compute_current(limit, spec)?;
    rep.push(check_subsolution(limit, spec, &pos, opts.subsolution_tol, ctx)?);
    rep.push(check_fp_distributional(limit, &j, spec, &any, opts.fp_tol, ctx)?);
    let delta = opts.delta_rel * limit.m.max();
    let mut phis = any;
    phis.push(limit.u.clone());
    rep.extend(check_supersolution(
        limit,
        &j,
        spec,
        &phis,
        opts.supersolution_tol,
        delta,
        ctx,
    )?);
    let q = current_exponent(spec);
    let jq = current_lq_norm(&j, q);
    let mut c = ctx.clone();
    c.detail = Some(format!("q = {q}"));
    rep.push(CheckResult::new(
        "current_lq_norm",
        jq.is_finite(),
        jq,
        f64::INFINITY,
        &c,
    ));
    if spec.is_quadratic() {
        rep.extend(check_quadratic_pointwise(limit, spec, delta, opts.quadratic_tol, ctx)?);
    }
    Ok(rep)
}
