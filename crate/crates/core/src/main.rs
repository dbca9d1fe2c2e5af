use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ctns::commands::{self, Options};
use ctns::config::RunConfig;
use ctns::io::to_json;
use ctns::ledger::Variant;

#[derive(Parser, Debug)]
#[command(name = "ctns", version, about = "Chemotaxis-Navier-Stokes simulations, decay fits and smallness certificates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Certificate variant: main | alternative.
    #[arg(long, global = true, default_value = "main")]
    variant: Variant,
    /// Overrides the initial-data seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid multiplier (time-grid multiplier for `constants`).
    #[arg(long, global = true, default_value_t = 1)]
    refine: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the coupled system and check the certificate along the trajectory.
    Simulate,
    /// Integral constants, sigma and the smallness certificate.
    Constants,
    /// First Neumann and Stokes eigenvalues with convergence tables.
    Eigen,
    /// Sup-norm gaps between runs with shrinking boundary cutoffs.
    EtaStudy,
    /// Empirical semigroup constants.
    HeatCheck,
    /// Re-check a saved trace against a saved certificate.
    Certify {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_ref() else {
        eprintln!("error: --config PATH is required");
        return ExitCode::from(2);
    };
    let cfg = match RunConfig::load(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let opts = Options {
        out: cli.out.clone(),
        variant: cli.variant,
        seed: cli.seed,
        refine: cli.refine,
        base_dir: path.parent().map(PathBuf::from).unwrap_or_default(),
    };
    match dispatch(&cli.command, &cfg, &opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig, opts: &Options) -> anyhow::Result<()> {
    match cmd {
        Command::Simulate => {
            let sim = commands::simulate(cfg, opts)?;
            let rep = &sim.report.certificate_report;
            println!("smallness: {}", if sim.report.smallness.passed { "pass" } else { "FAIL" });
            match &rep.first_violation {
                None => println!("certificate bounds hold to t = {}", rep.horizon),
                Some((name, t)) => println!("certificate bound {name} first violated at t = {t}"),
            }
            for r in &rep.rates {
                println!("rate {:<18} {:.6} (target {:.6}, R^2 {:.6})", r.column, r.fit.rate, r.target, r.fit.r2);
            }
            println!("oxygen envelope: {} (worst ratio {:.6})", if rep.c_envelope.holds { "holds" } else { "VIOLATED" }, rep.c_envelope.worst_ratio);
        }
        Command::Constants => {
            let cert = commands::constants(cfg, opts)?;
            print!("{}", cert.to_json()?);
            println!();
        }
        Command::Eigen => {
            let e = commands::eigen(cfg, opts)?;
            for w in &e.warnings {
                eprintln!("{w}");
            }
            print!("{}", to_json(&e)?);
        }
        Command::EtaStudy => {
            let gaps = commands::eta_study(cfg, opts)?;
            ctns::io::write_eta_gaps(std::io::stdout().lock(), &gaps)?;
        }
        Command::HeatCheck => {
            let est = commands::heat_check(cfg, opts)?;
            print!("{}", to_json(&est)?);
        }
        Command::Certify { trace, certificate } => {
            let rep = commands::certify_saved(cfg, opts, trace.as_deref(), certificate.as_deref())?;
            print!("{}", to_json(&rep)?);
        }
    }
    Ok(())
}
