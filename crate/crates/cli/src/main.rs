use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, bail};
use clap::{Parser, Subcommand, ValueEnum};
use ivr_core::config::RunConfig;
use ivr_core::control::Mode;
use ivr_core::dynamics::Superposition;
use ivr_core::feshbach::Solver;
use ivr_core::{IvrError, pipeline};

#[derive(Parser)]
#[command(name = "ivr", version, about = "Vibrational energy flow and its coherent control in a collinear triatomic")]
struct Cli {
    /// TOML run configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for CSV tables and JSON reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Cache directory for exact eigenstates (default: <out>/cache).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Disable the eigenstate cache.
    #[arg(long, global = true)]
    no_cache: bool,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Maximize,
    Minimize,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Maximize => Mode::Maximize,
            ModeArg::Minimize => Mode::Minimize,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Feshbach,
    Direct,
}

impl From<SolverArg> for Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Feshbach => Solver::Feshbach,
            SolverArg::Direct => Solver::Direct,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Uncoupled bond eigenstates.
    Eigenstates,
    /// Exact eigenstates and their Q-space overlaps.
    Resonances {
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
    },
    /// Optimal superposition of the control subset at target time T.
    Optimize {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Target time in fs.
        #[arg(long = "T", value_name = "FS")]
        t: Option<f64>,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
    },
    /// Population decay of the optimized packet, or of a single Q state.
    Evolve {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long = "T", value_name = "FS")]
        t: Option<f64>,
        #[arg(long, value_enum)]
        solver: Option<SolverArg>,
        /// Evolve the single state kappa (1 = highest) instead of an optimized packet.
        #[arg(long)]
        state: Option<usize>,
        /// Skip wavepacket density snapshots.
        #[arg(long)]
        no_density: bool,
    },
    /// Classical trajectories: section, Lyapunov exponents, bond energies.
    Classical {
        /// Total energy in hartree.
        #[arg(long)]
        energy: Option<f64>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    match &cli.command {
        Command::Resonances { solver } => apply(&mut cfg, *solver, None, None),
        Command::Optimize { mode, t, solver } | Command::Evolve { mode, t, solver, .. } => {
            apply(&mut cfg, *solver, *mode, *t)
        }
        Command::Classical { energy: Some(e) } => cfg.classical.energy = *e,
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply(cfg: &mut RunConfig, solver: Option<SolverArg>, mode: Option<ModeArg>, t: Option<f64>) {
    if let Some(s) = solver {
        cfg.quantum.solver = s.into();
    }
    if let Some(m) = mode {
        cfg.control.mode = m.into();
    }
    if let Some(t) = t {
        cfg.control.t_fs = t;
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    }
    let cfg = load_config(cli)?;
    log::info!("configuration {}", cfg.hash());
    let out: &Path = &cli.out;
    let cache = (!cli.no_cache).then(|| cli.cache.clone().unwrap_or_else(|| out.join("cache")));
    match &cli.command {
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Eigenstates => {
            let r = pipeline::eigenstates(&cfg)?;
            pipeline::write_eigenstates(out, &cfg, &r)?;
            println!("{}", serde_json::to_string_pretty(&r.top_cs)?);
        }
        Command::Resonances { .. } => {
            let session = pipeline::Session::new(cfg, cache);
            let res = session.resonances()?;
            pipeline::write_resonances(out, &session.cfg, res)?;
            println!("{}", serde_json::to_string_pretty(&pipeline::resonance_report(&session.cfg, res))?);
        }
        Command::Optimize { .. } => {
            let session = pipeline::Session::new(cfg, cache);
            let c = &session.cfg.control;
            let r = session.optimize(c.t_fs, c.mode)?;
            let rep = pipeline::control_report(&session.cfg, session.resonances()?.n_q(), &r);
            pipeline::write_control(out, &session.cfg, &rep)?;
            println!("{}", serde_json::to_string_pretty(&rep)?);
        }
        Command::Evolve { state, no_density, .. } => {
            let session = pipeline::Session::new(cfg, cache);
            let n_q = session.resonances()?.n_q();
            let packet = match state {
                Some(k) => {
                    if *k == 0 || *k > n_q {
                        bail!(IvrError::InvalidInput(format!("state must be in 1..={n_q}, got {k}")));
                    }
                    Superposition::single(n_q - k)
                }
                None => {
                    let c = &session.cfg.control;
                    let r = session.optimize(c.t_fs, c.mode)?;
                    let rep = pipeline::control_report(&session.cfg, n_q, &r);
                    pipeline::write_control(out, &session.cfg, &rep)?;
                    r.superposition
                }
            };
            let ev = pipeline::evolve(&session, &packet, !no_density)?;
            pipeline::write_evolution(out, &session.cfg, &ev)?;
            println!("{}", serde_json::to_string_pretty(&ev.report)?);
        }
        Command::Classical { .. } => {
            let run = pipeline::run_classical(&cfg)?;
            pipeline::write_classical(out, &cfg, &run)?;
            println!("{}", serde_json::to_string_pretty(&run.report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<IvrError>().map_or("runtime", IvrError::kind);
            let record = serde_json::json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
