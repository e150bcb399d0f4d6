use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kplab::commands;
use kplab::config::*;
use kplab::output::OutputDir;
use kplab::{CliError, Parallel};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "kplab", version, about = "Random Kronig-Penney laboratory")]
struct Cli {
    /// Directory for CSV/JSON artifacts and the run manifest.
    #[arg(long, global = true, default_value = "kplab-out")]
    out: PathBuf,
    /// JSON or TOML config (or a previous manifest); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Band edges of the periodic operator.
    Bands(BandsArgs),
    /// Lyapunov exponent scaling near a critical energy.
    Lyapunov(LyapunovArgs),
    /// Integrated density of states below a critical energy.
    Idos(IdosArgs),
    /// Green kernel G(x, y) on the line at a complex energy.
    Green(GreenArgs),
    /// Time-averaged transport moments.
    Transport(TransportArgs),
    /// Martingale deviations and transfer-matrix norm control.
    Deviations(DeviationsArgs),
    /// Runs an acceptance suite and prints a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct BandsArgs {
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    l_max: Option<u32>,
}

#[derive(Args)]
struct LyapunovArgs {
    /// e.g. uniform:0.5,1.5 or two_point:1,0.5,3
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    l: Option<u32>,
    #[arg(long, value_enum)]
    side: Option<SideArg>,
    /// lo:hi:count (geometric) or a comma list.
    #[arg(long)]
    eps_grid: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct IdosArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    l: Option<u32>,
    #[arg(long)]
    eps_grid: Option<String>,
    #[arg(long, value_enum)]
    method: Option<IdosMethod>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GreenArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stream: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    energy: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y: Option<f64>,
    /// lo:hi:count (linear) or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    x_grid: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct TransportArgs {
    /// A model spec, or `free`.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    l: Option<u32>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    t_grid: Option<String>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    c8: Option<f64>,
    #[arg(long)]
    eps0: Option<f64>,
    #[arg(long)]
    span: Option<f64>,
    #[arg(long)]
    energies: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    m_tol: Option<f64>,
    #[arg(long)]
    refinement_tol: Option<f64>,
}

#[derive(Args)]
struct DeviationsArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    l: Option<u32>,
    #[arg(long, value_enum)]
    kind: Option<DeviationKind>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated window sizes.
    #[arg(long, value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    suite: Option<Suite>,
    #[arg(long)]
    seed: Option<u64>,
}

macro_rules! set {
    ($cfg:ident, $args:ident, $($f:ident),+) => {
        $(if let Some(v) = $args.$f { $cfg.$f = v; })+
    };
}

fn base<C: DeserializeOwned + Default>(
    path: &Option<PathBuf>,
    command: &str,
) -> Result<C, CliError> {
    match path {
        Some(p) => load(p, command),
        None => Ok(C::default()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = OutputDir::create(&cli.out)?;
    let runner = Parallel::from_env();
    match cli.command {
        Command::Bands(a) => {
            let mut c: BandsConfig = base(&cli.config, "bands")?;
            set!(c, a, v, l_max);
            commands::bands(&c, &out)
        }
        Command::Lyapunov(a) => {
            let mut c: LyapunovConfig = base(&cli.config, "lyapunov")?;
            set!(c, a, model, l, side, eps_grid, samples, seed);
            if a.n.is_some() {
                c.n = a.n;
            }
            let fit = commands::lyapunov(&runner, &c, &out)?;
            println!(
                "exponent {:.6} ± {:.6}, coefficient {:.6e}",
                fit.exponent, fit.exponent_se, fit.coefficient
            );
            Ok(())
        }
        Command::Idos(a) => {
            let mut c: IdosConfig = base(&cli.config, "idos")?;
            set!(c, a, model, l, eps_grid, method, n, samples, seed);
            let fit = commands::idos(&runner, &c, &out)?;
            println!(
                "exponent {:.6} ± {:.6}, coefficient {:.6e}",
                fit.exponent, fit.exponent_se, fit.coefficient
            );
            Ok(())
        }
        Command::Green(a) => {
            let mut c: GreenConfig = base(&cli.config, "green")?;
            set!(c, a, model, seed, stream, energy, eta, y, x_grid, tol);
            commands::green(&c, &out)
        }
        Command::Transport(a) => {
            let mut c: TransportConfig = base(&cli.config, "transport")?;
            set!(
                c, a, model, l, q, a, t_grid, schedule, alpha, c8, eps0, span, energies, samples,
                seed, m_tol
            );
            if a.refinement_tol.is_some() {
                c.refinement_tol = a.refinement_tol;
            }
            commands::transport(&runner, &c, &out).map(|_| ())
        }
        Command::Deviations(a) => {
            let mut c: DeviationsConfig = base(&cli.config, "deviations")?;
            set!(c, a, model, l, kind, alpha, n_grid, samples, seed);
            commands::deviations(&runner, &c, &out)
        }
        Command::Verify(a) => {
            let mut c: VerifyConfig = base(&cli.config, "verify")?;
            set!(c, a, suite, seed);
            commands::verify(&runner, &c, &out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kplab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
