use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfg_core::config::RunConfig;
use mfg_core::run::{demo_config, describe_schedule, emit_plotdata, run_solve, verify_state, DEMOS};
use mfg_core::verify::DiagnosticsReport;
use mfg_core::{MfgError, Result};

/// Stationary monotone mean-field games on the torus.
#[derive(Parser, Debug)]
#[command(name = "mfg", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,

    /// Validate and print the resolved schedule without solving.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Seed for every randomized check.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Newton tolerance for solves; check tolerance for `verify`.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Continuation and ε-sweep; writes fields and trace.json.
    Solve { config: PathBuf },
    /// Check previously written m.csv/u.csv; writes report.json.
    Verify { config: PathBuf, dir: PathBuf },
    /// Like `solve`, plus plot data and the per-level table.
    Sweep { config: PathBuf },
    /// Solve, plot and verify a shipped instance.
    Demo { name: String },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn apply_flags(cfg: &mut RunConfig, cli: &Cli, verifying: bool) -> Result<()> {
    if let Some(s) = cli.seed {
        cfg.verify.seed = s;
    }
    if let Some(t) = cli.tol {
        if !t.is_finite() || t <= 0.0 {
            return Err(MfgError::Config {
                key: "--tol".into(),
                rule: "must be a finite number > 0".into(),
            });
        }
        if verifying {
            let v = &mut cfg.verify;
            v.vi_tol = t;
            v.subsolution_tol = t;
            v.fp_tol = t;
            v.supersolution_tol = t;
            v.quadratic_tol = t;
        } else {
            cfg.schedule.newton_tol = t;
        }
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()
}

fn out_dir(cfg: &RunConfig, cli: &Cli) -> PathBuf {
    match &cli.out {
        Some(o) => o.clone(),
        None if cfg.output_dir.is_relative() => cfg.base_dir.join(&cfg.output_dir),
        None => cfg.output_dir.clone(),
    }
}

fn print_report(rep: &DiagnosticsReport) {
    for c in &rep.checks {
        println!(
            "{} {:<32} value={:.3e} tol={:.1e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.check,
            c.value,
            c.tol
        );
    }
}

fn instance_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

/// Solves, optionally writes plot data, optionally verifies.
fn solve_pipeline(cfg: &RunConfig, out: &Path, plot: bool, verify: Option<&str>) -> Result<bool> {
    let mut stdout = io::stdout();
    let r = run_solve(cfg, out, &mut stdout)?;
    let spec = cfg.spec()?;
    if plot {
        emit_plotdata(&out.join("plot"), &r.limit, &spec, Some(&r.trace))?;
        for l in &r.trace.levels {
            println!(
                "level eps1={:.3e} mass={:.12} min_m={:.6} cauchy_m_l1={} cauchy_u_w1g={}",
                l.eps1,
                l.mass,
                l.min_m,
                l.cauchy_m_l1.map_or("-".into(), |v| format!("{v:.3e}")),
                l.cauchy_u_w1g.map_or("-".into(), |v| format!("{v:.3e}")),
            );
        }
    }
    let Some(instance) = verify else { return Ok(true) };
    let rep = verify_state(cfg, &spec, &r.limit, instance)?;
    std::fs::write(out.join("report.json"), rep.to_json()?)?;
    print_report(&rep);
    Ok(rep.all_pass())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.cmd {
        Command::Solve { config } | Command::Sweep { config } => {
            let mut cfg = RunConfig::load(config)?;
            apply_flags(&mut cfg, cli, false)?;
            if cli.dry_run {
                print!("{}", describe_schedule(&cfg)?);
                return Ok(true);
            }
            let plot = matches!(cli.cmd, Command::Sweep { .. });
            solve_pipeline(&cfg, &out_dir(&cfg, cli), plot, None)
        }
        Command::Verify { config, dir } => {
            let mut cfg = RunConfig::load(config)?;
            apply_flags(&mut cfg, cli, true)?;
            if cli.dry_run {
                print!("{}", describe_schedule(&cfg)?);
                return Ok(true);
            }
            let out = cli.out.clone().unwrap_or_else(|| dir.clone());
            let rep = mfg_core::run::run_verify(&cfg, dir, &out, &instance_name(config))?;
            print_report(&rep);
            Ok(rep.all_pass())
        }
        Command::Demo { name } => {
            let mut cfg = demo_config(name)?;
            apply_flags(&mut cfg, cli, false)?;
            if cli.dry_run {
                print!("{}", cfg.emit());
                println!();
                print!("{}", describe_schedule(&cfg)?);
                return Ok(true);
            }
            let out = out_dir(&cfg, cli);
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("config.txt"), cfg.emit())?;
            solve_pipeline(&cfg, &out, true, Some(name))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => {
            let _ = writeln!(io::stderr(), "error: {e}");
            match e {
                MfgError::Config { .. } | MfgError::Parse { .. } => {
                    if let Command::Demo { .. } = cli.cmd {
                        let _ = writeln!(io::stderr(), "known demos: {}", DEMOS.join(", "));
                    }
                    ExitCode::from(EXIT_USAGE)
                }
                _ => ExitCode::from(EXIT_FAILURE),
            }
        }
    }
}
