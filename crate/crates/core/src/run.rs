//! Run orchestration behind the command-line tool: solve, verify, plot data
//! and the shipped demo instances.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{FamilyKind, RunConfig, SigmaProfile, V0Source};
use crate::coupling::CouplingSpec;
use crate::error::{MfgError, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::mfg_operator::{apply_a, MfgState};
use crate::solver::{epsilon_sweep_observed, SolveTrace, SweepResult};
use crate::torus_grid::{field_to_csv, integrate, parse_field_csv, Field, VectorField};
use crate::verify::{
    check_assumption_suite, compute_current, random_positive, verify_limit, CheckContext, DiagnosticsReport,
};

/// Names accepted by [`demo_config`].
pub const DEMOS: [&str; 5] = ["reference", "degenerate", "congestion", "log", "degenerate2d"];

fn write_field(dir: &Path, name: &str, f: &Field) -> Result<()> {
    if !f.is_finite() {
        return Err(MfgError::NonFinite {
            what: "output field",
            node: f.values().iter().position(|v| !v.is_finite()).unwrap_or(0),
        });
    }
    fs::write(dir.join(name), field_to_csv(f))?;
    Ok(())
}

fn stage_line(s: &crate::solver::StageRecord) -> String {
    format!(
        "eps=({:.3e}, {:.3e}) mu={:<5} newton={:>3} gmres={:>4} residual={:.3e} min_m={:.6}{}",
        s.eps1,
        s.eps2,
        s.mu,
        s.iterations,
        s.linear_iterations,
        s.residual,
        s.min_m,
        match s.flow_steps {
            Some(n) => format!(" flow_steps={n}"),
            None => String::new(),
        }
    )
}

/// Sweeps the configured instance, writing `m_eps<k>.csv`, `u_eps<k>.csv` and
/// `trace.json` as levels complete, then the limit fields `m.csv`, `u.csv`.
/// Stage summaries go to `log`. On failure the files of completed levels are
/// kept and the error is also written to `error.txt`.
pub fn run_solve(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> Result<SweepResult> {
    let spec = cfg.spec()?;
    let eps = cfg.epsilon_schedule()?;
    fs::create_dir_all(out)?;
    let _ = fs::remove_file(out.join("error.txt"));
    let mut printed = 0;
    let mut observer = |p: crate::solver::SweepProgress<'_>| -> Result<()> {
        for s in &p.trace.stages[printed..] {
            writeln!(log, "{}", stage_line(s))?;
        }
        printed = p.trace.stages.len();
        write_field(out, &format!("m_eps{}.csv", p.level), &p.state.m)?;
        write_field(out, &format!("u_eps{}.csv", p.level), &p.state.u)?;
        fs::write(out.join("trace.json"), p.trace.to_json()?)?;
        Ok(())
    };
    let res = epsilon_sweep_observed(
        &eps,
        &cfg.schedule,
        &cfg.regularization,
        &spec,
        &cfg.model,
        &cfg.sweep,
        &mut observer,
    );
    match res {
        Ok(r) => {
            write_field(out, "m.csv", &r.limit.m)?;
            write_field(out, "u.csv", &r.limit.u)?;
            fs::write(out.join("trace.json"), r.trace.to_json()?)?;
            if let Some(l) = &r.trace.limit {
                writeln!(
                    log,
                    "limit ({}, {} levels): min_m={:.6} |mass-1|={:.3e}{}",
                    l.method,
                    l.levels_used,
                    l.min_m,
                    (l.mass - 1.0).abs(),
                    if r.trace.oscillation {
                        " [cauchy differences oscillate]"
                    } else {
                        ""
                    }
                )?;
            }
            Ok(r)
        }
        Err(e) => {
            let _ = fs::write(out.join("error.txt"), format!("{e}\n"));
            Err(e)
        }
    }
}

fn load_state(dir: &Path, cfg: &RunConfig) -> Result<MfgState> {
    let read = |name: &str| -> Result<Field> {
        let path = dir.join(name);
        let text = fs::read_to_string(&path)
            .map_err(|e| MfgError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        parse_field_csv(&text)
    };
    let st = MfgState::new(read("m.csv")?, read("u.csv")?)?;
    if *st.grid() != cfg.grid()? {
        return Err(MfgError::GridMismatch(
            "state fields do not match the configured grid".into(),
        ));
    }
    Ok(st)
}

/// Runs the checks appropriate to the family on a limit candidate, plus the
/// sampled assumption suite.
pub fn verify_state(
    cfg: &RunConfig,
    spec: &HamiltonianSpec,
    state: &MfgState,
    instance: &str,
) -> Result<DiagnosticsReport> {
    let ctx = CheckContext::instance(instance);
    let mut rep = verify_limit(state, spec, &cfg.verify, &ctx)?;
    let g = state.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.verify.seed.wrapping_add(3));
    let samples: Vec<Field> = (0..cfg.assumption_samples)
        .map(|_| random_positive(g, &mut rng, 0.2))
        .collect();
    rep.extend(check_assumption_suite(spec, &samples, &cfg.assumptions, &ctx)?);
    Ok(rep)
}

/// Loads `m.csv`/`u.csv` from `state_dir`, verifies, and writes `report.json`
/// to `out`.
pub fn run_verify(cfg: &RunConfig, state_dir: &Path, out: &Path, instance: &str) -> Result<DiagnosticsReport> {
    let spec = cfg.spec()?;
    let st = load_state(state_dir, cfg)?;
    let rep = verify_state(cfg, &spec, &st, instance)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.json"), rep.to_json()?)?;
    Ok(rep)
}

/// Whitespace-separated columns `x [y] value...`; 2D data has a blank line
/// after each `x` block.
pub fn plot_columns(fields: &[&Field]) -> String {
    let mut o = String::new();
    let Some(first) = fields.first() else { return o };
    let g = first.grid();
    let n = g.points_per_axis();
    for node in 0..g.len() {
        let x = g.coords(node);
        let _ = write!(o, "{:.10e}", x[0]);
        if g.dim() == 2 {
            let _ = write!(o, " {:.10e}", x[1]);
        }
        for f in fields {
            let _ = write!(o, " {:.16e}", f.values()[node]);
        }
        o.push('\n');
        if g.dim() == 2 && node % n == n - 1 && node + 1 < g.len() {
            o.push('\n');
        }
    }
    o
}

/// Per-level table: `eps1 int_du_gamma mean_u_abs mass min_m`.
pub fn sweep_table(trace: &SolveTrace) -> String {
    let mut o = String::from("# eps1 int_du_gamma mean_u_abs mass min_m\n");
    for l in &trace.levels {
        let _ = writeln!(
            o,
            "{:.10e} {:.16e} {:.16e} {:.16e} {:.16e}",
            l.eps1, l.apriori.int_du_gamma, l.apriori.mean_u_abs, l.mass, l.min_m
        );
    }
    o
}

/// gnuplot-ready profiles of `m`, `u`, `J` and the limit residual, plus the
/// sweep table when a trace is given.
pub fn emit_plotdata(
    dir: &Path,
    state: &MfgState,
    spec: &HamiltonianSpec,
    trace: Option<&SolveTrace>,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text)?;
        written.push(p);
        Ok(())
    };
    put("m.dat", plot_columns(&[&state.m]))?;
    put("u.dat", plot_columns(&[&state.u]))?;
    let j: VectorField = compute_current(state, spec)?;
    put("J.dat", plot_columns(&j.components().iter().collect::<Vec<_>>()))?;
    if state.m.min() >= 0.0 {
        let r = apply_a(state, spec)?;
        put("residual.dat", plot_columns(&[&r.r_hj, &r.r_fp]))?;
    }
    if let Some(t) = trace {
        put("sweep.dat", sweep_table(t))?;
    }
    Ok(written)
}

/// Configuration of a shipped demo instance.
pub fn demo_config(name: &str) -> Result<RunConfig> {
    let deep = |c: &mut RunConfig| {
        // nonconstant solutions only emerge once ε₁|2πk|^{4p} is small
        c.eps_ratio = 0.1;
        c.eps_levels = 30;
    };
    let mut c = match name {
        "reference" => {
            let mut c = RunConfig::defaults(1, 64)?;
            c.eps_ratio = 10f64.powf(-3.0 / 7.0);
            c.eps_levels = 8;
            c
        }
        "degenerate" | "degenerate2d" => {
            let (d, n) = if name == "degenerate" { (1, 64) } else { (2, 32) };
            let mut c = RunConfig::defaults(d, n)?;
            let h = &mut c.hamiltonian;
            h.family = FamilyKind::PowerGrowth;
            h.gamma = 2.0;
            h.sigma = 0.1;
            h.sigma_profile = SigmaProfile::Degenerate;
            h.v0 = V0Source::Sine;
            h.v0_amplitude = 0.1;
            deep(&mut c);
            c
        }
        "congestion" => {
            let mut c = RunConfig::defaults(1, 64)?;
            let h = &mut c.hamiltonian;
            h.family = FamilyKind::Congestion;
            h.tau = 0.5;
            h.sigma = 0.05;
            h.v0 = V0Source::CosineSum;
            h.v0_amplitude = 0.1;
            c.nonlocal.c1 = 0.5;
            c.nonlocal.c2 = 0.5;
            c.model.tau = 0.5;
            deep(&mut c);
            c
        }
        "log" => {
            let mut c = RunConfig::defaults(1, 64)?;
            let h = &mut c.hamiltonian;
            h.sigma0 = 0.1;
            h.v0 = V0Source::Sine;
            h.v0_amplitude = 0.2;
            c.coupling = CouplingSpec::Log;
            deep(&mut c);
            c
        }
        other => {
            return Err(MfgError::config(
                "demo",
                format!("unknown demo '{other}' (known: {})", DEMOS.join(", ")),
            ));
        }
    };
    c.output_dir = PathBuf::from(format!("out/{name}"));
    c.validate()?;
    Ok(c)
}

/// Human-readable resolved schedule, for dry runs.
pub fn describe_schedule(cfg: &RunConfig) -> Result<String> {
    let eps = cfg.epsilon_schedule()?;
    let mut o = String::new();
    let _ = writeln!(o, "grid: d={} N={}", cfg.d, cfg.n);
    let mu: Vec<String> = cfg.schedule.mu_values.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(
        o,
        "mu: {} (newton_tol={:e}, max_newton_iters={}, step_halving_limit={})",
        mu.join(", "),
        cfg.schedule.newton_tol,
        cfg.schedule.max_newton_iters,
        cfg.schedule.step_halving_limit
    );
    let _ = writeln!(
        o,
        "regularization: p={} q={}",
        cfg.regularization.laplacian_order_p, cfg.regularization.penalty_q
    );
    for (k, (a, b)) in eps.levels.iter().enumerate() {
        let _ = writeln!(o, "eps[{k}] = ({a:.6e}, {b:.6e})");
    }
    Ok(o)
}

/// `|∫m − 1|` of a state.
pub fn mass_defect(state: &MfgState) -> f64 {
    (integrate(&state.m) - 1.0).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demos_validate() {
        for d in DEMOS {
            demo_config(d).unwrap();
        }
        assert!(demo_config("nope").is_err());
    }

    #[test]
    fn plot_columns_shapes() {
        let g = crate::torus_grid::make_grid(1, 8).unwrap();
        let f = Field::from_fn(&g, |x| x[0]);
        let t = plot_columns(&[&f]);
        assert_eq!(t.lines().count(), 8);
        assert!(t.lines().all(|l| l.split_whitespace().count() == 2));
        let g = crate::torus_grid::make_grid(2, 8).unwrap();
        let f = Field::zeros(&g);
        let t = plot_columns(&[&f]);
        let rows: Vec<&str> = t.lines().filter(|l| !l.is_empty()).collect();
        assert_eq!(rows.len(), 64);
        assert!(rows.iter().all(|l| l.split_whitespace().count() == 3));
    }

    #[test]
    fn reference_solve_and_verify_round_trip() {
        let cfg = demo_config("reference").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut log = Vec::new();
        let r = run_solve(&cfg, dir.path(), &mut log).unwrap();
        assert!(mass_defect(&r.limit) <= 1e-6);
        for k in 0..8 {
            assert!(dir.path().join(format!("m_eps{k}.csv")).exists());
        }
        let text = String::from_utf8(log).unwrap();
        assert_eq!(
            text.lines().filter(|l| l.starts_with("eps=")).count(),
            r.trace.stages.len()
        );
        let rep = run_verify(&cfg, dir.path(), dir.path(), "reference").unwrap();
        assert!(rep.all_pass(), "{:?}", rep.failures().collect::<Vec<_>>());
        let again = run_verify(&cfg, dir.path(), dir.path(), "reference").unwrap();
        assert_eq!(rep, again);
        let files = emit_plotdata(&dir.path().join("plot"), &r.limit, &cfg.spec().unwrap(), Some(&r.trace)).unwrap();
        assert_eq!(files.len(), 5);
        let table = fs::read_to_string(dir.path().join("plot/sweep.dat")).unwrap();
        assert_eq!(table.lines().count(), 9);
    }
}
