//! Run configuration: a sectioned `key = value` text format.
//!
//! ```text
//! # comment
//! [grid]
//! d = 1
//! n = 64
//!
//! [hamiltonian]
//! family = quadratic
//! ```
//!
//! Every section and key is optional; missing keys take their defaults and
//! unknown sections or keys are errors. Lists are comma separated; `ε` pairs
//! in `eps_list` are written `eps1:eps2`. See the README for the full key
//! table.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::coupling::{CouplingSpec, NonlocalSpec, PotentialSpec};
use crate::error::{MfgError, Result};
use crate::hamiltonian::{Family, HamiltonianSpec, ModelHamiltonianParams};
use crate::mfg_operator::RegularizationParams;
use crate::solver::{ContinuationSchedule, EpsilonSchedule, SweepOptions};
use crate::torus_grid::{parse_field_csv, Field, TorusGrid};
use crate::verify::{AssumptionConstants, VerifyOptions};

/// Largest accepted `n`, matching the field CSV reader.
pub const MAX_N: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyKind {
    Quadratic,
    PowerGrowth,
    Congestion,
}

impl FamilyKind {
    fn name(self) -> &'static str {
        match self {
            FamilyKind::Quadratic => "quadratic",
            FamilyKind::PowerGrowth => "power_growth",
            FamilyKind::Congestion => "congestion",
        }
    }
}

/// `σ(x) = σ` or `σ(x) = σ(1 − cos 2πx₁)/2`, which vanishes on `x₁ = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaProfile {
    Constant,
    Degenerate,
}

#[derive(Clone, Debug, PartialEq)]
pub enum V0Source {
    Zero,
    /// `A Σᵢ sin 2πxᵢ`
    Sine,
    /// `A Σᵢ (cos 2πxᵢ + cos 4πxᵢ / 2)`
    CosineSum,
    /// Field CSV, relative paths resolved against the config's directory.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianConfig {
    pub family: FamilyKind,
    pub gamma: f64,
    pub tau: f64,
    pub sigma0: f64,
    /// `a(x) = a (1 + a_variation cos 2πx₁)`
    pub a: f64,
    pub a_variation: f64,
    pub sigma: f64,
    pub sigma_profile: SigmaProfile,
    pub v0: V0Source,
    pub v0_amplitude: f64,
}

impl Default for HamiltonianConfig {
    fn default() -> Self {
        HamiltonianConfig {
            family: FamilyKind::Quadratic,
            gamma: 2.0,
            tau: 0.5,
            sigma0: 0.0,
            a: 1.0,
            a_variation: 0.0,
            sigma: 0.0,
            sigma_profile: SigmaProfile::Constant,
            v0: V0Source::Zero,
            v0_amplitude: 0.0,
        }
    }
}

impl HamiltonianConfig {
    /// `(γ, τ)` of the configured family.
    pub fn growth(&self) -> (f64, f64) {
        match self.family {
            FamilyKind::Quadratic => (2.0, 0.0),
            FamilyKind::PowerGrowth => (self.gamma, 0.0),
            FamilyKind::Congestion => (2.0, self.tau),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NonlocalConfig {
    pub c1: f64,
    pub c2: f64,
    pub alpha_bar: f64,
    pub kernel_width: f64,
}

impl Default for NonlocalConfig {
    fn default() -> Self {
        NonlocalConfig {
            c1: 0.0,
            c2: 0.0,
            alpha_bar: 1.0,
            kernel_width: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub n: usize,
    pub hamiltonian: HamiltonianConfig,
    pub coupling: CouplingSpec,
    pub nonlocal: NonlocalConfig,
    pub model: ModelHamiltonianParams,
    /// `(ε₁, ε₂)` here is the first level of the sweep.
    pub regularization: RegularizationParams,
    pub schedule: ContinuationSchedule,
    pub eps_ratio: f64,
    pub eps_levels: usize,
    /// Explicit levels; overrides `eps_ratio`/`eps_levels` and must start at
    /// the regularization's `(ε₁, ε₂)`.
    pub eps_list: Option<Vec<(f64, f64)>>,
    pub sweep: SweepOptions,
    pub verify: VerifyOptions,
    pub assumptions: AssumptionConstants,
    pub assumption_samples: usize,
    pub output_dir: PathBuf,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Defaults for a `d`-dimensional grid with `n` points per axis.
    pub fn defaults(d: usize, n: usize) -> Result<Self> {
        TorusGrid::new(d, n)?;
        Ok(RunConfig {
            d,
            n,
            hamiltonian: HamiltonianConfig::default(),
            coupling: CouplingSpec::Power { alpha: 1.0 },
            nonlocal: NonlocalConfig::default(),
            model: ModelHamiltonianParams::new(2.0, 0.0)?,
            regularization: RegularizationParams::with_defaults(d, 0.1, 0.1)?,
            schedule: ContinuationSchedule::default(),
            eps_ratio: 0.5,
            eps_levels: 8,
            eps_list: None,
            sweep: SweepOptions::default(),
            verify: VerifyOptions::default(),
            assumptions: AssumptionConstants::default(),
            assumption_samples: 8,
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        })
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.d, self.n)
    }

    pub fn epsilon_schedule(&self) -> Result<EpsilonSchedule> {
        let start = (self.regularization.eps1, self.regularization.eps2);
        match &self.eps_list {
            Some(list) => {
                if list.first() != Some(&start) {
                    return Err(MfgError::config("eps_list", "must start at (eps1, eps2)"));
                }
                EpsilonSchedule::new(list.clone())
            }
            None => {
                if self.eps_levels == 0 {
                    return Err(MfgError::config("eps_levels", "must be >= 1"));
                }
                EpsilonSchedule::geometric(start, self.eps_ratio, self.eps_levels)
            }
        }
    }

    fn v0_field(&self, grid: &TorusGrid, load_files: bool) -> Result<Field> {
        let amp = self.hamiltonian.v0_amplitude;
        let d = grid.dim();
        Ok(match &self.hamiltonian.v0 {
            V0Source::Zero => Field::zeros(grid),
            V0Source::Sine => Field::from_fn(grid, |x| amp * (0..d).map(|i| (2.0 * PI * x[i]).sin()).sum::<f64>()),
            V0Source::CosineSum => Field::from_fn(grid, |x| {
                amp * (0..d)
                    .map(|i| (2.0 * PI * x[i]).cos() + 0.5 * (4.0 * PI * x[i]).cos())
                    .sum::<f64>()
            }),
            V0Source::File(p) if load_files => {
                let path = self.base_dir.join(p);
                let f = parse_field_csv(&std::fs::read_to_string(&path)?)?;
                if f.grid() != grid {
                    return Err(MfgError::GridMismatch(format!(
                        "{} does not match [grid]",
                        path.display()
                    )));
                }
                f
            }
            V0Source::File(_) => Field::zeros(grid),
        })
    }

    fn build_spec(&self, load_files: bool) -> Result<HamiltonianSpec> {
        let g = self.grid()?;
        let h = &self.hamiltonian;
        let potential = PotentialSpec::new(self.v0_field(&g, load_files)?, self.coupling)?;
        let nl = &self.nonlocal;
        let nonlocal = NonlocalSpec::new(&g, nl.c1, nl.c2, nl.alpha_bar, nl.kernel_width)?;
        if !(h.a_variation.abs() < 1.0) {
            return Err(MfgError::config("a_variation", "must satisfy |a_variation| < 1"));
        }
        let a = Field::from_fn(&g, |x| h.a * (1.0 + h.a_variation * (2.0 * PI * x[0]).cos()));
        let sigma = match h.sigma_profile {
            SigmaProfile::Constant => Field::constant(&g, h.sigma),
            SigmaProfile::Degenerate => Field::from_fn(&g, |x| h.sigma * (1.0 - (2.0 * PI * x[0]).cos()) / 2.0),
        };
        let family = match h.family {
            FamilyKind::Quadratic => Family::QuadraticSeparable { sigma0: h.sigma0 },
            FamilyKind::PowerGrowth => Family::PowerGrowth {
                a,
                gamma: h.gamma,
                sigma,
            },
            FamilyKind::Congestion => Family::Congestion { a, tau: h.tau, sigma },
        };
        HamiltonianSpec::new(family, potential, nonlocal)
    }

    /// The Hamiltonian spec, loading `V0` from disk when configured so.
    pub fn spec(&self) -> Result<HamiltonianSpec> {
        self.build_spec(true)
    }

    /// Re-checks every constraint of the owning modules (no file access).
    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        self.build_spec(false)?;
        ModelHamiltonianParams::new(self.model.gamma, self.model.tau)?;
        self.regularization.validate(self.d)?;
        self.schedule.validate()?;
        self.epsilon_schedule()?;
        let v = &self.verify;
        for (key, x) in [
            ("vi_tol", v.vi_tol),
            ("subsolution_tol", v.subsolution_tol),
            ("fp_tol", v.fp_tol),
            ("supersolution_tol", v.supersolution_tol),
            ("quadratic_tol", v.quadratic_tol),
            ("delta_rel", v.delta_rel),
            ("mass_tol", v.mass_tol),
        ] {
            if !(x >= 0.0) || !x.is_finite() {
                return Err(MfgError::config(key, "must be a finite number >= 0"));
            }
        }
        let a = &self.assumptions;
        for (key, x) in [
            ("c", a.c),
            ("coercivity_c1", a.coercivity_c1),
            ("coercivity_c2", a.coercivity_c2),
            ("kappa1", a.kappa1),
        ] {
            if !(x > 0.0) || !x.is_finite() {
                return Err(MfgError::config(key, "must be a finite number > 0"));
            }
        }
        Ok(())
    }

    /// Parses a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut c = Self::parse(&text)?;
        c.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Table::read(text)?;
        let d = t.take("grid", "d", usize_val)?.unwrap_or(1);
        let n = t.take("grid", "n", usize_val)?.unwrap_or(64);
        if n > MAX_N {
            return Err(MfgError::config("n", format!("at most {MAX_N} points per axis")));
        }
        let mut c = RunConfig::defaults(d, n).map_err(|e| match e {
            MfgError::Config { .. } => e,
            other => MfgError::config("grid", other.to_string()),
        })?;

        let h = &mut c.hamiltonian;
        if let Some(f) = t.take("hamiltonian", "family", |s| match s {
            "quadratic" => Ok(FamilyKind::Quadratic),
            "power_growth" => Ok(FamilyKind::PowerGrowth),
            "congestion" => Ok(FamilyKind::Congestion),
            _ => Err("expected quadratic, power_growth or congestion".into()),
        })? {
            h.family = f;
        }
        set(&mut t, "hamiltonian", "gamma", &mut h.gamma)?;
        set(&mut t, "hamiltonian", "tau", &mut h.tau)?;
        set(&mut t, "hamiltonian", "sigma0", &mut h.sigma0)?;
        set(&mut t, "hamiltonian", "a", &mut h.a)?;
        set(&mut t, "hamiltonian", "a_variation", &mut h.a_variation)?;
        set(&mut t, "hamiltonian", "sigma", &mut h.sigma)?;
        if let Some(p) = t.take("hamiltonian", "sigma_profile", |s| match s {
            "constant" => Ok(SigmaProfile::Constant),
            "degenerate" => Ok(SigmaProfile::Degenerate),
            _ => Err("expected constant or degenerate".into()),
        })? {
            h.sigma_profile = p;
        }
        let v0 = t.take("hamiltonian", "v0", |s| Ok(s.to_string()))?;
        let v0_file = t.take("hamiltonian", "v0_file", |s| Ok(PathBuf::from(s)))?;
        h.v0 = match (v0.as_deref(), v0_file) {
            (None | Some("zero"), None) => V0Source::Zero,
            (Some("sine"), None) => V0Source::Sine,
            (Some("cosine_sum"), None) => V0Source::CosineSum,
            (Some("file"), Some(p)) => V0Source::File(p),
            (Some("file"), None) => return Err(MfgError::config("v0_file", "required when v0 = file")),
            (_, Some(_)) => return Err(MfgError::config("v0_file", "only allowed with v0 = file")),
            (Some(other), None) => {
                return Err(MfgError::config(
                    "v0",
                    format!("unknown selector '{other}' (zero, sine, cosine_sum, file)"),
                ))
            }
        };
        set(&mut t, "hamiltonian", "v0_amplitude", &mut h.v0_amplitude)?;

        let kind = t.take("coupling", "kind", |s| Ok(s.to_string()))?;
        let alpha = t.take("coupling", "alpha", f64_val)?;
        c.coupling = match (kind.as_deref().unwrap_or("power"), alpha) {
            ("power", a) => CouplingSpec::power(a.unwrap_or(1.0))?,
            ("log", None) => CouplingSpec::Log,
            ("log", Some(_)) => return Err(MfgError::config("alpha", "not used by the log coupling")),
            (other, _) => {
                return Err(MfgError::config(
                    "kind",
                    format!("unknown coupling '{other}' (power, log)"),
                ))
            }
        };

        let nl = &mut c.nonlocal;
        set(&mut t, "nonlocal", "c1", &mut nl.c1)?;
        set(&mut t, "nonlocal", "c2", &mut nl.c2)?;
        set(&mut t, "nonlocal", "alpha_bar", &mut nl.alpha_bar)?;
        set(&mut t, "nonlocal", "kernel_width", &mut nl.kernel_width)?;

        // the model defaults to the family's own growth
        let (g0, t0) = c.hamiltonian.growth();
        let mg = t.take("model", "gamma", f64_val)?.unwrap_or(g0);
        let mt = t.take("model", "tau", f64_val)?.unwrap_or(t0);
        c.model = ModelHamiltonianParams { gamma: mg, tau: mt };

        let r = &mut c.regularization;
        set(&mut t, "regularization", "eps1", &mut r.eps1)?;
        set(&mut t, "regularization", "eps2", &mut r.eps2)?;
        if let Some(p) = t.take("regularization", "p", u32_val)? {
            r.laplacian_order_p = p;
        }
        set(&mut t, "regularization", "q", &mut r.penalty_q)?;

        let s = &mut c.schedule;
        if let Some(mu) = t.take("schedule", "mu", list_f64)? {
            s.mu_values = mu;
        }
        set_usize(&mut t, "schedule", "max_newton_iters", &mut s.max_newton_iters)?;
        set(&mut t, "schedule", "newton_tol", &mut s.newton_tol)?;
        if let Some(v) = t.take("schedule", "step_halving_limit", u32_val)? {
            s.step_halving_limit = v;
        }
        set(&mut t, "schedule", "forcing", &mut s.forcing)?;
        set(&mut t, "schedule", "eps_ratio", &mut c.eps_ratio)?;
        set_usize(&mut t, "schedule", "eps_levels", &mut c.eps_levels)?;
        c.eps_list = t.take("schedule", "eps_list", list_pairs)?;
        set_usize(
            &mut t,
            "schedule",
            "extrapolation_order",
            &mut c.sweep.extrapolation_order,
        )?;

        let v = &mut c.verify;
        if let Some(seed) = t.take("verify", "seed", |s| s.parse::<u64>().map_err(|e| e.to_string()))? {
            v.seed = seed;
        }
        set_usize(&mut t, "verify", "vi_trials", &mut v.vi_trials)?;
        set(&mut t, "verify", "vi_tol", &mut v.vi_tol)?;
        set_usize(&mut t, "verify", "test_functions", &mut v.test_functions)?;
        set(&mut t, "verify", "subsolution_tol", &mut v.subsolution_tol)?;
        set(&mut t, "verify", "fp_tol", &mut v.fp_tol)?;
        set(&mut t, "verify", "supersolution_tol", &mut v.supersolution_tol)?;
        set(&mut t, "verify", "quadratic_tol", &mut v.quadratic_tol)?;
        set(&mut t, "verify", "delta_rel", &mut v.delta_rel)?;
        set(&mut t, "verify", "mass_tol", &mut v.mass_tol)?;
        let a = &mut c.assumptions;
        set(&mut t, "verify", "c", &mut a.c)?;
        set(&mut t, "verify", "coercivity_c1", &mut a.coercivity_c1)?;
        set(&mut t, "verify", "coercivity_c2", &mut a.coercivity_c2)?;
        set(&mut t, "verify", "kappa1", &mut a.kappa1)?;
        set_usize(&mut t, "verify", "assumption_samples", &mut c.assumption_samples)?;

        if let Some(dir) = t.take("output", "dir", |s| Ok(PathBuf::from(s)))? {
            c.output_dir = dir;
        }

        t.finish()?;
        c.validate()?;
        Ok(c)
    }

    /// Writes every key explicitly; `parse(emit())` reproduces the config.
    pub fn emit(&self) -> String {
        let mut o = String::new();
        let h = &self.hamiltonian;
        let _ = writeln!(o, "[grid]\nd = {}\nn = {}\n", self.d, self.n);
        let _ = writeln!(o, "[hamiltonian]\nfamily = {}", h.family.name());
        let _ = writeln!(o, "gamma = {:?}\ntau = {:?}\nsigma0 = {:?}", h.gamma, h.tau, h.sigma0);
        let _ = writeln!(
            o,
            "a = {:?}\na_variation = {:?}\nsigma = {:?}",
            h.a, h.a_variation, h.sigma
        );
        let profile = match h.sigma_profile {
            SigmaProfile::Constant => "constant",
            SigmaProfile::Degenerate => "degenerate",
        };
        let _ = writeln!(o, "sigma_profile = {profile}");
        match &h.v0 {
            V0Source::Zero => o.push_str("v0 = zero\n"),
            V0Source::Sine => o.push_str("v0 = sine\n"),
            V0Source::CosineSum => o.push_str("v0 = cosine_sum\n"),
            V0Source::File(p) => {
                let _ = writeln!(o, "v0 = file\nv0_file = {}", p.display());
            }
        }
        let _ = writeln!(o, "v0_amplitude = {:?}\n", h.v0_amplitude);
        match self.coupling {
            CouplingSpec::Power { alpha } => {
                let _ = writeln!(o, "[coupling]\nkind = power\nalpha = {alpha:?}\n");
            }
            CouplingSpec::Log => o.push_str("[coupling]\nkind = log\n\n"),
        }
        let nl = &self.nonlocal;
        let _ = writeln!(
            o,
            "[nonlocal]\nc1 = {:?}\nc2 = {:?}\nalpha_bar = {:?}\nkernel_width = {:?}\n",
            nl.c1, nl.c2, nl.alpha_bar, nl.kernel_width
        );
        let _ = writeln!(
            o,
            "[model]\ngamma = {:?}\ntau = {:?}\n",
            self.model.gamma, self.model.tau
        );
        let r = &self.regularization;
        let _ = writeln!(
            o,
            "[regularization]\neps1 = {:?}\neps2 = {:?}\np = {}\nq = {:?}\n",
            r.eps1, r.eps2, r.laplacian_order_p, r.penalty_q
        );
        let s = &self.schedule;
        let mu: Vec<String> = s.mu_values.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(o, "[schedule]\nmu = {}", mu.join(", "));
        let _ = writeln!(
            o,
            "max_newton_iters = {}\nnewton_tol = {:?}\nstep_halving_limit = {}\nforcing = {:?}",
            s.max_newton_iters, s.newton_tol, s.step_halving_limit, s.forcing
        );
        let _ = writeln!(o, "eps_ratio = {:?}\neps_levels = {}", self.eps_ratio, self.eps_levels);
        if let Some(list) = &self.eps_list {
            let l: Vec<String> = list.iter().map(|(a, b)| format!("{a:?}:{b:?}")).collect();
            let _ = writeln!(o, "eps_list = {}", l.join(", "));
        }
        let _ = writeln!(o, "extrapolation_order = {}\n", self.sweep.extrapolation_order);
        let v = &self.verify;
        let _ = writeln!(
            o,
            "[verify]\nseed = {}\nvi_trials = {}\nvi_tol = {:?}",
            v.seed, v.vi_trials, v.vi_tol
        );
        let _ = writeln!(
            o,
            "test_functions = {}\nsubsolution_tol = {:?}\nfp_tol = {:?}\nsupersolution_tol = {:?}",
            v.test_functions, v.subsolution_tol, v.fp_tol, v.supersolution_tol
        );
        let _ = writeln!(
            o,
            "quadratic_tol = {:?}\ndelta_rel = {:?}\nmass_tol = {:?}",
            v.quadratic_tol, v.delta_rel, v.mass_tol
        );
        let a = &self.assumptions;
        let _ = writeln!(
            o,
            "c = {:?}\ncoercivity_c1 = {:?}\ncoercivity_c2 = {:?}\nkappa1 = {:?}\nassumption_samples = {}\n",
            a.c, a.coercivity_c1, a.coercivity_c2, a.kappa1, self.assumption_samples
        );
        let _ = writeln!(o, "[output]\ndir = {}", self.output_dir.display());
        o
    }
}

/// Convenience wrapper matching the CLI's vocabulary.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

const SECTIONS: [&str; 9] = [
    "grid",
    "hamiltonian",
    "coupling",
    "nonlocal",
    "model",
    "regularization",
    "schedule",
    "verify",
    "output",
];

/// Raw `(section, key) → (value, line)` entries, consumed by `take`.
struct Table {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl Table {
    fn read(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line, "unterminated section header"))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(parse_err(line, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| parse_err(line, "expected 'key = value'"))?;
            let sec = section
                .clone()
                .ok_or_else(|| parse_err(line, "key outside of a section"))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(parse_err(line, "empty key or value"));
            }
            if entries
                .insert((sec.clone(), k.to_string()), (v.to_string(), line))
                .is_some()
            {
                return Err(parse_err(line, format!("duplicate key '{k}' in [{sec}]")));
            }
        }
        Ok(Table { entries })
    }

    fn take<T>(
        &mut self,
        section: &str,
        key: &str,
        conv: impl Fn(&str) -> std::result::Result<T, String>,
    ) -> Result<Option<T>> {
        match self.entries.remove(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some((v, line)) => conv(&v)
                .map(Some)
                .map_err(|msg| parse_err(line, format!("{key}: {msg}"))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, (_, line))| *line) {
            None => Ok(()),
            Some(((sec, key), (_, line))) => Err(parse_err(*line, format!("unknown key '{key}' in [{sec}]"))),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> MfgError {
    MfgError::Parse { line, msg: msg.into() }
}

fn f64_val(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("expected a number, got '{s}'"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err("must be finite".into())
    }
}

fn usize_val(s: &str) -> std::result::Result<usize, String> {
    s.parse()
        .map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn u32_val(s: &str) -> std::result::Result<u32, String> {
    s.parse()
        .map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn list_f64(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|x| f64_val(x.trim())).collect()
}

fn list_pairs(s: &str) -> std::result::Result<Vec<(f64, f64)>, String> {
    s.split(',')
        .map(|p| {
            let (a, b) = p
                .split_once(':')
                .ok_or_else(|| format!("expected eps1:eps2, got '{}'", p.trim()))?;
            Ok((f64_val(a.trim())?, f64_val(b.trim())?))
        })
        .collect()
}

fn set(t: &mut Table, section: &str, key: &str, slot: &mut f64) -> Result<()> {
    if let Some(v) = t.take(section, key, f64_val)? {
        *slot = v;
    }
    Ok(())
}

fn set_usize(t: &mut Table, section: &str, key: &str, slot: &mut usize) -> Result<()> {
    if let Some(v) = t.take(section, key, usize_val)? {
        *slot = v;
    }
    Ok(())
}
