use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::config::{load_config, PRESETS};
use super::runner::{closeness_table, evaluate_bounds, run_experiment};
use super::{check_gradients, BenchError};

const EXIT_OK: i32 = 0;
const EXIT_INVALID: i32 = 1;
const EXIT_RUN: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "finiteflow",
    version,
    about = "Finite-time optimization flows: experiments and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every optimizer and seed of a config (file path or preset name).
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads, overriding `workers`.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the shipped preset configs.
    Presets,
    /// Compare analytic gradients with central differences.
    CheckGradients {
        /// Objective name, or `all`.
        #[arg(default_value = "all")]
        objective: String,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tabulate trajectory closeness for halving step sizes.
    Closeness { config: PathBuf },
    /// Evaluate settling-time, envelope and weak-bound verdicts.
    Bounds {
        config: PathBuf,
        /// Also write bounds.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(err: &BenchError) -> i32 {
    eprintln!("error: {err}");
    if err.is_validation() {
        EXIT_INVALID
    } else {
        EXIT_RUN
    }
}

/// Entry point of the `finiteflow` binary; returns the process exit code:
/// 0 on success, 1 for usage or validation errors, 2 when a run fails.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            EXIT_OK
        }
        Command::Run {
            config,
            out,
            workers,
        } => {
            let mut cfg = match load_config(&config) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            if out.is_some() {
                cfg.output.dir = out;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            match run_experiment(&cfg) {
                Ok(summary) => {
                    println!(
                        "{:<24} {:>5} {:>8} {:>12} {:>14}",
                        "optimizer", "runs", "reached", "median_iters", "median_f"
                    );
                    for s in &summary.optimizers {
                        println!(
                            "{:<24} {:>5} {:>8} {:>12} {:>14.6e}",
                            s.optimizer, s.runs, s.reached, s.median_iters, s.median_final_f
                        );
                    }
                    println!("results written to {}", summary.output_dir.display());
                    EXIT_OK
                }
                Err(e) => fail(&e),
            }
        }
        Command::CheckGradients {
            objective,
            points,
            seed,
        } => {
            let only = (objective != "all").then_some(objective.as_str());
            match check_gradients(only, points, seed) {
                Ok(checks) => {
                    let mut ok = true;
                    for c in &checks {
                        ok &= c.passed();
                        let verdict = if c.passed() { "PASS" } else { "FAIL" };
                        match &c.failure {
                            Some(f) => println!("{verdict} {:<12} {f}", c.objective),
                            None => println!(
                                "{verdict} {:<12} worst {:.3e} (tolerance {:.0e}, {} points)",
                                c.objective, c.worst, c.tolerance, c.points
                            ),
                        }
                    }
                    if ok {
                        EXIT_OK
                    } else {
                        EXIT_RUN
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Command::Closeness { config } => {
            let result = load_config(&config).and_then(|cfg| closeness_table(&cfg));
            match result {
                Ok(rows) => {
                    println!("optimizer,eta,h_ref,horizon,epsilon");
                    for r in rows {
                        println!(
                            "{},{:e},{:e},{:.6},{:.6e}",
                            r.optimizer, r.eta, r.h_ref, r.horizon, r.epsilon
                        );
                    }
                    EXIT_OK
                }
                Err(e) => fail(&e),
            }
        }
        Command::Bounds { config, out } => {
            let result = load_config(&config).and_then(|cfg| evaluate_bounds(&cfg));
            let entries = match result {
                Ok(e) => e,
                Err(e) => return fail(&e),
            };
            if entries.is_empty() {
                println!("no flow-based optimizer with a finite-time dominance setting");
            }
            for b in &entries {
                let arrival = b
                    .reference_arrival
                    .map_or("none".to_string(), |t| format!("{t:.6}"));
                println!(
                    "{} seed {}: settling bound {:.4}, reference arrival {arrival}, settling {}",
                    b.optimizer,
                    b.seed,
                    b.t_star_bound,
                    if b.settling_passed { "PASS" } else { "FAIL" }
                );
                println!(
                    "  envelope {} ({} violations)",
                    b.envelope.verdict(),
                    b.envelope.violations.len()
                );
                match (&b.weak, b.epsilon) {
                    (Some(w), Some(eps)) => println!(
                        "  weak bound {} (k* = {:.1}, L_f = {:.4}, eps = {:.4e}, {} violations)",
                        w.verdict(),
                        b.k_star,
                        b.lipschitz,
                        eps,
                        w.violations.len()
                    ),
                    _ => println!("  weak bound not evaluated (k* = {:.1})", b.k_star),
                }
                if let Some(n) = &b.note {
                    println!("  note: {n}");
                }
            }
            if let Some(dir) = out {
                let written = std::fs::create_dir_all(&dir)
                    .map_err(super::output::io_err(&dir))
                    .and_then(|_| {
                        let text = serde_json::to_string_pretty(&entries)
                            .map_err(|e| BenchError::Run(format!("serializing bounds: {e}")))?;
                        super::output::write_text(&dir.join("bounds.json"), &text)
                    });
                if let Err(e) = written {
                    return fail(&e);
                }
            }
            EXIT_OK
        }
    }
}
