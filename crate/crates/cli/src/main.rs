use std::path::PathBuf;
use std::process::ExitCode;

use auxmix::diagnostics::DeltaLaw;
use auxmix::oracle::RwmhConfig;
use auxmix::sampler::Algorithm;
use auxmix::toy::simulate_toy;
use auxmix_cli::config::resolve_workers;
use auxmix_cli::data::write_toy;
use auxmix_cli::run::{compare, diagnose, fit, prepare, Prepared};
use auxmix_cli::{CliError, CliResult, RunConfig};
use clap::{Args, Parser, Subcommand};

/// Auxiliary mixture samplers for Poisson latent Gaussian models.
#[derive(Parser)]
#[command(name = "auxmix", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the omitted-covariate toy data set as CSV (y, x1, x2).
    Simulate {
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Run the configured sampler and write draws, summary and manifest.
    Fit {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        algorithm: Option<Algorithm>,
    },
    /// Run several algorithms on one data set and compare them with an oracle.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated list.
        #[arg(long, value_delimiter = ',', default_values_t = [Algorithm::Iams, Algorithm::MhIams, Algorithm::Riams, Algorithm::Auto])]
        algorithms: Vec<Algorithm>,
        /// Skip the reference posterior.
        #[arg(long)]
        no_oracle: bool,
        /// Random-walk reference iterations (used when quadrature does not apply).
        #[arg(long, default_value_t = 60_000)]
        oracle_iterations: usize,
        #[arg(long, default_value_t = 10_000)]
        oracle_burn_in: usize,
    },
    /// Per-residual log-density gaps and effective sample sizes.
    Diagnose {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// mixture, in-force, adjusted or exact.
        #[arg(long, default_value = "mixture")]
        law: DeltaLaw,
        /// Record every k-th kept iteration.
        #[arg(long)]
        stride: Option<usize>,
        /// Rows listed on screen.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thinning: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Worker threads; defaults to the config, then AUXMIX_WORKERS, then all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self, algorithm: Option<Algorithm>) -> CliResult<(Prepared, usize)> {
        let mut cfg = RunConfig::load(&self.config)?;
        let s = &mut cfg.sampler;
        if let Some(a) = algorithm {
            s.algorithm = a.name().to_ascii_lowercase();
        }
        s.seed = self.seed.unwrap_or(s.seed);
        s.iterations = self.iterations.unwrap_or(s.iterations);
        s.burn_in = self.burn_in.unwrap_or(s.burn_in);
        s.thinning = self.thinning.unwrap_or(s.thinning);
        cfg.output.chains = self.chains.unwrap_or(cfg.output.chains);
        if let Some(out) = &self.out {
            cfg.output.dir = out.clone();
        }
        cfg.validate()?;
        let workers = resolve_workers(self.workers, &cfg)?;
        Ok((prepare(cfg)?, workers))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), |v| format!("{v:.4}"))
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { n, c, seed, out } => {
            let toy = simulate_toy(n, c, seed).map_err(CliError::setup)?;
            write_toy(&out, &toy)?;
            println!("wrote {} observations to {}", toy.len(), out.display());
        }
        Command::Fit { run, algorithm } => {
            let (p, workers) = run.load(algorithm)?;
            let out = fit(&p, workers)?;
            for c in &out.chains {
                println!("chain {}: {} (requested {}), beta acceptance {:.3}, {} flagged", c.chain, c.used, c.requested, c.beta_acceptance(), c.flagged.len());
            }
            println!("{:<14} {:>10} {:>10} {:>10} {:>10} {:>10}", "parameter", "mean", "sd", "2.5%", "97.5%", "ess");
            for s in &out.parameters {
                let f = |k: &str| s[k].as_f64().map_or("NA".into(), |v| format!("{v:.4}"));
                println!("{:<14} {:>10} {:>10} {:>10} {:>10} {:>10}", s["name"].as_str().unwrap_or(""), f("mean"), f("sd"), f("q2.5"), f("q97.5"), f("ess"));
            }
            println!("outputs in {}", out.dir.display());
        }
        Command::Compare { run, algorithms, no_oracle, oracle_iterations, oracle_burn_in } => {
            let (p, workers) = run.load(None)?;
            let rwmh = (!no_oracle).then_some(RwmhConfig {
                iterations: oracle_iterations,
                burn_in: oracle_burn_in,
                thinning: 1,
                seed: p.cfg.sampler.seed,
                chain: 0,
            });
            let out = compare(&p, &algorithms, rwmh, workers)?;
            if let Some(o) = &out.oracle {
                println!("oracle: {}", o.name());
            }
            println!("{:<8} {:>10} {:>10} {:>10}  KS by parameter", "alg", "beta acc", "s/iter", "rel IAMS");
            for r in &out.rows {
                let ks: Vec<String> = r.ks.iter().map(|k| fmt_opt(*k)).collect();
                println!(
                    "{:<8} {:>10.3} {:>10.2e} {:>10}  {}",
                    r.algorithm.name(),
                    r.beta_acceptance(),
                    r.seconds_per_iteration,
                    fmt_opt(out.relative_time(r.algorithm)),
                    ks.join(" ")
                );
            }
            println!("outputs in {}", out.dir.display());
        }
        Command::Diagnose { run, algorithm, law, stride, top } => {
            let (p, workers) = run.load(algorithm)?;
            let stride = stride.or(p.cfg.sampler.residual_stride).unwrap_or(1);
            if stride == 0 {
                return Err(CliError::Config("stride must be at least 1".into()));
            }
            let out = diagnose(&p, law, stride, workers)?;
            for (c, (ext, add)) in out.chains.iter().zip(out.extremes.iter().zip(&out.additivity)) {
                println!("chain {} ({}): additivity relative error {add:.2e}", c.chain, c.used);
                println!("  {:>6} {:>4} {:>8} {:>10} {:>9}", "obs", "slot", "nu", "delta", "nonfinite");
                for &(i, j, nu, d, nf) in ext.iter().take(top) {
                    println!("  {i:>6} {j:>4} {nu:>8} {d:>10.4} {nf:>9}");
                }
            }
            println!("outputs in {}", out.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
