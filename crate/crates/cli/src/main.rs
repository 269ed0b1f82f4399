use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonholonomic::integrate::{IntegratorConfig, Status};
use nonholonomic_cli::registry::BUILTINS;
use nonholonomic_cli::run::run;
use nonholonomic_cli::scenario::{self, Formulation, Scenario};

#[derive(Parser)]
#[command(name = "nhsim", version, about = "Constrained Lagrangian dynamics: d'Alembert against vakonomic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or a built-in by name.
    Run {
        target: String,
        /// dalembert, vakonomic, both or penalty_sweep.
        #[arg(long)]
        formulation: Option<String>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Output directory (default: scenario `output.dir`, then $NHSIM_OUT_DIR, then ./nhsim_out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
    /// Parse and validate a scenario without running it.
    Validate { target: String },
}

fn apply_overrides(
    s: &mut Scenario,
    formulation: Option<String>,
    dt: Option<f64>,
    t_end: Option<f64>,
) -> Result<(), String> {
    if let Some(f) = formulation {
        s.formulation = Formulation::parse(&f).ok_or_else(|| format!("unknown formulation `{f}`"))?;
        if s.formulation == Formulation::PenaltySweep && s.kappas.is_empty() {
            return Err("penalty_sweep needs `penalty.kappas` in the scenario".into());
        }
    }
    if dt.is_some() || t_end.is_some() {
        let cfg = IntegratorConfig::new(dt.unwrap_or(s.integrator.dt), t_end.unwrap_or(s.integrator.t_end))
            .map_err(|e| e.to_string())?;
        s.integrator = IntegratorConfig { dt: cfg.dt, t_end: cfg.t_end, ..s.integrator };
        s.integrator.validate().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn out_dir(cli: Option<PathBuf>, s: &Scenario) -> PathBuf {
    cli.or_else(|| s.output_dir.clone())
        .or_else(|| std::env::var_os("NHSIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("nhsim_out"))
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            let width = BUILTINS.iter().map(|b| b.name.len()).max().unwrap_or(0);
            for b in BUILTINS {
                println!("{:width$}  {}", b.name, b.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Validate { target } => match scenario::load(&target) {
            Ok(s) => {
                println!("{}: ok ({} formulation)", s.name, s.formulation.name());
                ExitCode::SUCCESS
            }
            Err(d) => {
                eprintln!("error: {d}");
                ExitCode::FAILURE
            }
        },
        Command::Run { target, formulation, dt, t_end, out } => {
            let mut s = match scenario::load(&target) {
                Ok(s) => s,
                Err(d) => {
                    eprintln!("error: {d}");
                    return ExitCode::FAILURE;
                }
            };
            if let Err(e) = apply_overrides(&mut s, formulation, dt, t_end) {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            let dir = out_dir(out, &s);
            let outcome = match run(&s, &dir) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            };
            for r in &outcome.summary.runs {
                println!(
                    "{:<16} {:<22} samples={} drift={:.3e} energy_drift={:.3e}",
                    r.label, r.status, r.samples, r.max_residual, r.energy_drift
                );
                if let Some(m) = &r.message {
                    println!("  {m}");
                }
            }
            if let Some(c) = &outcome.comparison {
                println!(
                    "gap ({}): sup={:.6e} terminal={:.6e} non_equivalent={}",
                    c.metric, c.sup_gap, c.terminal_gap, c.non_equivalent
                );
            }
            if let Some(p) = &outcome.penalty {
                for (k, g) in p.kappas.iter().zip(&p.sup_gaps) {
                    println!("kappa={k:e} sup_gap={g:.6e}");
                }
                println!("strictly_decreasing={}", p.strictly_decreasing);
            }
            println!("wrote {} files to {}", outcome.files.len(), dir.display());
            if outcome.status == Status::Completed {
                ExitCode::SUCCESS
            } else {
                eprintln!("status: {}", outcome.status.name());
                ExitCode::from(2)
            }
        }
    }
}
