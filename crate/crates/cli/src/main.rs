use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use flowcast::dynamics::SystemName;
use flowcast::sampler::Scheme;
use flowcast_cli::config::{BankSource, GridObjective};
use flowcast_cli::{cmd_ablate, cmd_diagnose, cmd_forecast, cmd_generate, cmd_gridsearch, RunConfig, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "flowcast", version, about = "Training-free flow forecasting of dynamical systems")]
struct Cli {
    /// JSON config; every flag below overrides the matching key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (also read from FLOWCAST_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate benchmark trajectories.
    Generate(GenerateArgs),
    /// Forecast past the conditioning window and evaluate.
    Forecast(ForecastArgs),
    /// Tune (sigma_min, sigma) on held-out transitions.
    Gridsearch(GridArgs),
    /// Compare step counts, schemes and truncation.
    Ablate(AblateArgs),
    /// Run the structural verification suites.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Trajectory directory (default `<out>/data`).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    system: Option<SystemName>,
    /// Number of trajectories.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    lyapunov: Option<f64>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    top_r: Option<usize>,
    #[arg(long)]
    sigma_min: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Grid-search output whose best point sets the bandwidths.
    #[arg(long)]
    tuned: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    bank_source: Option<String>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct GridArgs {
    /// `error` or `crps`.
    #[arg(long)]
    objective: Option<String>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct AblateArgs {
    /// Step counts to compare.
    #[arg(long, value_delimiter = ',')]
    step_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Top-R values, `dense` for no truncation.
    #[arg(long, value_delimiter = ',')]
    truncations: Option<Vec<String>>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct DiagnoseArgs {
    /// Run only the named suite(s).
    #[arg(long)]
    only: Vec<String>,
    #[arg(long)]
    bank: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    #[command(flatten)]
    data: DataArgs,
}

fn apply_data(cfg: &mut RunConfig, a: &DataArgs) {
    if let Some(d) = &a.data {
        cfg.data.dir = Some(d.clone());
    }
}

fn apply_solver(cfg: &mut RunConfig, a: &SolverArgs) {
    if let Some(s) = a.scheme {
        cfg.solver.scheme = s;
    }
    if let Some(s) = a.steps {
        cfg.solver.steps = s;
    }
    if a.top_r.is_some() {
        cfg.solver.top_r = a.top_r;
    }
    if a.sigma_min.is_some() {
        cfg.forecast.sigma_min = a.sigma_min;
    }
    if a.sigma.is_some() {
        cfg.forecast.sigma = a.sigma;
    }
    if a.tuned.is_some() {
        cfg.forecast.tuned = a.tuned.clone();
    }
}

fn run(cli: Cli) -> anyhow::Result<usize> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let workers = match cli.workers {
        Some(w) => Some(w),
        None => std::env::var(WORKERS_ENV)
            .ok()
            .map(|v| v.parse::<usize>().with_context(|| format!("{WORKERS_ENV}={v}")))
            .transpose()?,
    };
    if let Some(w) = workers {
        rayon::ThreadPoolBuilder::new().num_threads(w).build_global()?;
    }

    let failed = match &cli.command {
        Command::Generate(a) => {
            if let Some(s) = a.system {
                cfg.data.system = s;
            }
            if let Some(n) = a.n {
                cfg.data.n_trajectories = n;
            }
            if let Some(l) = a.length {
                cfg.data.length = l;
            }
            if a.lyapunov.is_some() {
                cfg.data.lyapunov_exponent = a.lyapunov;
            }
            apply_data(&mut cfg, &a.data);
            let out = cmd_generate(&cfg)?;
            println!(
                "wrote {} trajectories to {} (lambda = {:.4})",
                out.manifest.trajectories.len(),
                out.dir.display(),
                out.manifest.lyapunov_exponent
            );
            0
        }
        Command::Forecast(a) => {
            if let Some(s) = a.samples {
                cfg.forecast.samples = s;
            }
            if let Some(h) = a.horizon {
                cfg.forecast.horizon = h;
            }
            if let Some(b) = &a.bank_source {
                cfg.forecast.bank_source = match b.as_str() {
                    "all" => BankSource::All,
                    "own" => BankSource::Own,
                    other => anyhow::bail!("unknown bank source '{other}', expected all or own"),
                };
            }
            apply_solver(&mut cfg, &a.solver);
            apply_data(&mut cfg, &a.data);
            let out = cmd_forecast(&cfg)?;
            let s = &out.run.summary;
            println!(
                "{} trajectories: mean VPT {:.3}, mean sMAPE (first Lyapunov time) {:.3}{}",
                s.trajectories,
                s.mean_vpt,
                s.mean_smape_first_lyapunov_time,
                s.mean_crps_step1
                    .map(|c| format!(", CRPS step 1 {c:.4}"))
                    .unwrap_or_default()
            );
            out.run.failed_units()
        }
        Command::Gridsearch(a) => {
            if let Some(o) = &a.objective {
                cfg.gridsearch.objective = match o.as_str() {
                    "error" => GridObjective::OneStepError,
                    "crps" => GridObjective::OneStepCrps,
                    other => anyhow::bail!("unknown objective '{other}', expected error or crps"),
                };
            }
            apply_data(&mut cfg, &a.data);
            let out = cmd_gridsearch(&cfg)?;
            println!(
                "best sigma_min = {}, sigma = {} ({} grid points) -> {}",
                out.result.best.sigma_min,
                out.result.best.sigma,
                out.result.rows.len(),
                out.file.display()
            );
            0
        }
        Command::Ablate(a) => {
            if let Some(s) = &a.step_counts {
                cfg.ablate.steps = s.clone();
            }
            if let Some(s) = &a.schemes {
                cfg.ablate.schemes = s.clone();
            }
            if let Some(ts) = &a.truncations {
                cfg.ablate.truncations = ts
                    .iter()
                    .map(|t| match t.as_str() {
                        "dense" => Ok(None),
                        v => v
                            .parse::<usize>()
                            .map(Some)
                            .with_context(|| format!("bad truncation '{v}', expected an integer or dense")),
                    })
                    .collect::<anyhow::Result<_>>()?;
            }
            apply_solver(&mut cfg, &a.solver);
            apply_data(&mut cfg, &a.data);
            let out = cmd_ablate(&cfg)?;
            for r in &out.table.rows {
                println!(
                    "steps={:<4} {:<24} {:<6} mean sMAPE {:.3}",
                    r.cell.steps,
                    r.cell.scheme.name(),
                    r.cell.top_r.map_or("dense".into(), |v| v.to_string()),
                    r.mean_smape
                );
            }
            out.table.rows.iter().map(|r| r.failed_units).sum()
        }
        Command::Diagnose(a) => {
            if !a.only.is_empty() {
                cfg.diagnose.only = Some(a.only.clone());
            }
            if a.bank.is_some() {
                cfg.diagnose.bank = a.bank.clone();
            }
            apply_solver(&mut cfg, &a.solver);
            apply_data(&mut cfg, &a.data);
            let out = cmd_diagnose(&cfg)?;
            for r in &out.reports {
                println!(
                    "{:<13} {} ({} probes, max violation {:.3e})",
                    r.name,
                    if r.pass { "pass" } else { "FAIL" },
                    r.probes,
                    r.max_violation
                );
            }
            out.failed_units()
        }
    };
    Ok(failed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} unit(s) failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
