use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use softtraj::config::RunConfig;
use softtraj::harness::{self, compare_traces, rollout_position_control, rollout_wrench_control, Trace};
use softtraj::identification::{self, FrictionFitOptions, ProbeRecord, SlidingRecord};
use softtraj::io::{read_trace, write_trace};

#[derive(Parser)]
#[command(name = "softtraj", version, about = "Motion and contact-force planning on soft surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a scenario with ADMM and replay it under wrench and position control.
    Solve {
        config: PathBuf,
        /// Parent directory of the run_<timestamp> output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Write into exactly this directory instead.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Replay an existing plan under both controllers.
    Rollout {
        config: PathBuf,
        plan: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Fit the reduced elastic modulus to probing data (columns f_n, d_m).
    IdentifyYoung {
        probe: PathBuf,
        #[arg(long)]
        radius: f64,
    },
    /// Fit (mu, k_d) to sliding data (columns f_fric_n, v_mps, f_z_n).
    IdentifyFriction {
        sliding: PathBuf,
        #[arg(long)]
        nu: f64,
        #[arg(long)]
        radius: f64,
        /// Reduced elastic modulus (Pa).
        #[arg(long)]
        young: f64,
        /// Drop samples with normal load above this value (N).
        #[arg(long)]
        fz_cap: Option<f64>,
        /// Plain least squares instead of the robust fit.
        #[arg(long)]
        plain: bool,
    },
    /// Error metrics of two traces against a reference trace.
    Compare {
        a: PathBuf,
        b: PathBuf,
        reference: PathBuf,
        /// Run configuration providing the sliding constraint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Outcome that maps to the non-convergence exit code.
struct NotConverged;

fn main() -> ExitCode {
    // usage errors exit with 1; 2 is reserved for non-convergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(NotConverged)) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run_directory(out: &Path, run_dir: Option<PathBuf>) -> Result<PathBuf> {
    let dir = match run_dir {
        Some(d) => d,
        None => {
            let stamp = SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs();
            let mut dir = out.join(format!("run_{stamp}"));
            let mut n = 1;
            while dir.exists() {
                dir = out.join(format!("run_{stamp}_{n}"));
                n += 1;
            }
            dir
        }
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write_trace_file(dir: &Path, name: &str, trace: &Trace) -> Result<()> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_trace(trace, BufWriter::new(file))?;
    Ok(())
}

fn run(cli: Cli) -> Result<Option<NotConverged>> {
    match cli.command {
        Command::Solve { config, out, run_dir } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let mut problem = cfg.problem()?;
            let outcome = harness::run_solve(&mut problem, &cfg.admm_options(), &cfg.controller)?;
            let dir = run_directory(&out, run_dir)?;

            write_trace_file(&dir, "plan.csv", &Trace::from_plan(&outcome.plan, cfg.solver.dt)?)?;
            write_trace_file(&dir, "rollout_wrench.csv", &outcome.wrench_trace)?;
            write_trace_file(&dir, "rollout_position.csv", &outcome.position_trace)?;
            write_trace_file(&dir, "reference.csv", &outcome.reference_trace)?;
            outcome.report.write_csv(BufWriter::new(File::create(dir.join("residuals.csv"))?))?;
            outcome.comparison.write_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?))?;

            let last = outcome.report.history.last();
            let manifest = format!(
                "# run manifest\nseed = {}\nconverged = {}\nadmm_iterations = {}\nfinal_r_primal = {:.16e}\nfinal_s_dual = {:.16e}\nsolve_seconds = {:.3}\nrollout_seconds = {:.3}\n\n{}",
                cfg.seed,
                outcome.report.converged,
                outcome.report.iterations,
                last.map_or(f64::NAN, |r| r.r_primal),
                last.map_or(f64::NAN, |r| r.s_dual),
                outcome.solve_seconds,
                outcome.rollout_seconds,
                cfg.to_toml()?
            );
            fs::write(dir.join("manifest.toml"), manifest)?;

            println!("output: {}", dir.display());
            println!(
                "admm: converged={} iterations={} r_primal={:.3e} s_dual={:.3e}",
                outcome.report.converged,
                outcome.report.iterations,
                last.map_or(f64::NAN, |r| r.r_primal),
                last.map_or(f64::NAN, |r| r.s_dual)
            );
            for (name, v) in &outcome.report.violations {
                println!("violation {name}: {v:.3e}");
            }
            println!(
                "rms force error: wrench {:.4} N, position {:.4} N",
                outcome.comparison.a.rms_force_norm, outcome.comparison.b.rms_force_norm
            );
            Ok((!outcome.report.converged).then_some(NotConverged))
        }
        Command::Rollout {
            config,
            plan,
            out,
            run_dir,
        } => {
            let cfg = RunConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let problem = cfg.problem()?;
            let plan_trace = read_trace(File::open(&plan).with_context(|| format!("opening {}", plan.display()))?)?;
            if plan_trace.controls.len() != problem.horizon() {
                anyhow::bail!(
                    "plan has {} steps, configuration expects {}",
                    plan_trace.controls.len(),
                    problem.horizon()
                );
            }
            let wrench = rollout_wrench_control(&problem.system, &plan_trace, &cfg.controller)?;
            let position = rollout_position_control(
                &problem.system,
                &problem.reference,
                &problem.initial,
                &cfg.controller,
            )?;
            let reference = Trace::from_reference(&problem.reference);
            let comparison = compare_traces(&wrench, &position, &reference, Some(&problem.sets.friction))?;
            let dir = run_directory(&out, run_dir)?;
            write_trace_file(&dir, "rollout_wrench.csv", &wrench)?;
            write_trace_file(&dir, "rollout_position.csv", &position)?;
            write_trace_file(&dir, "reference.csv", &reference)?;
            comparison.write_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
            println!("output: {}", dir.display());
            Ok(None)
        }
        Command::IdentifyYoung { probe, radius } => {
            let rec = ProbeRecord::from_csv(&probe).with_context(|| format!("reading {}", probe.display()))?;
            let fit = identification::fit_young_modulus(&rec, radius)?;
            print!("{}", toml::to_string(&fit)?);
            println!();
            print!("{}", fit.summary_csv());
            Ok((!fit.converged).then_some(NotConverged))
        }
        Command::IdentifyFriction {
            sliding,
            nu,
            radius,
            young,
            fz_cap,
            plain,
        } => {
            let rec = SlidingRecord::from_csv(&sliding).with_context(|| format!("reading {}", sliding.display()))?;
            let opts = FrictionFitOptions {
                fz_cap,
                robust: !plain,
                ..Default::default()
            };
            let fit = identification::fit_friction(&rec, nu, radius, young, &opts)?;
            print!("{}", toml::to_string(&fit)?);
            println!();
            print!("{}", fit.summary_csv());
            Ok((!fit.converged).then_some(NotConverged))
        }
        Command::Compare {
            a,
            b,
            reference,
            config,
        } => {
            let load = |p: &PathBuf| -> Result<Trace> {
                Ok(read_trace(File::open(p).with_context(|| format!("opening {}", p.display()))?)?)
            };
            let friction = match config {
                Some(path) => Some(RunConfig::load(&path)?.problem()?.sets.friction),
                None => None,
            };
            let cmp = compare_traces(&load(&a)?, &load(&b)?, &load(&reference)?, friction.as_ref())?;
            cmp.write_csv(io::stdout().lock())?;
            Ok(None)
        }
    }
}
