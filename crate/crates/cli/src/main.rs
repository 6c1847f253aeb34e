use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use sysrisk_cli::{
    check_axioms, clear, parse_axioms, parse_gammas, rank_values, ranking_csv, render_outputs, simulate, write_outputs,
    CliError, CliResult, RunConfig,
};
use sysrisk_core::clearing::Objective;
use sysrisk_core::ClearingProblem;

#[derive(Parser)]
#[command(name = "sysrisk", version, about = "Systemic risk measures on simulated interbank networks")]
struct Cli {
    /// Worker threads for scenario evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network and shocks, clear every scenario, write tables.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one clearing problem given as JSON.
    Clear {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Cm1)]
        objective: ObjectiveArg,
        /// Cross-check against the grid-search oracle (d <= 3).
        #[arg(long)]
        oracle: bool,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
    /// CoVaR importance ranking as CSV, from a simulation or from given values.
    Rank {
        #[command(flatten)]
        run: RunArgs,
        /// Cost used for the CM2 aggregate.
        #[arg(long, default_value = "2.6")]
        gamma: String,
        /// Rank these comma-separated values instead of simulating.
        #[arg(long, conflicts_with = "config")]
        values: Option<String>,
    },
    /// Randomised axiom checks for a CSRM given as JSON.
    CheckAxioms {
        csrm: PathBuf,
        /// Comma-separated axiom names, or `all`.
        #[arg(long, default_value = "all")]
        axioms: String,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Cm1,
    Cm2,
}

impl From<ObjectiveArg> for Objective {
    fn from(value: ObjectiveArg) -> Self {
        match value {
            ObjectiveArg::Cm1 => Objective::Cm1,
            ObjectiveArg::Cm2 => Objective::Cm2,
        }
    }
}

/// Flags mirroring the configuration keys; they override the file.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    exposure_scale: Option<f64>,
    #[arg(long)]
    equity_ratio: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    corr: Option<f64>,
    #[arg(long)]
    vol_ratio: Option<f64>,
    /// Comma-separated costs, `inf` allowed.
    #[arg(long)]
    gammas: Option<String>,
    #[arg(long)]
    rank_q: Option<f64>,
    #[arg(long)]
    min_conditioning: Option<usize>,
}

impl RunArgs {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v.into(); })* };
        }
        set!(d, p, exposure_scale, equity_ratio, n, corr, vol_ratio, rank_q, min_conditioning);
        if let Some(seed) = self.seed {
            cfg.seed = Some(seed);
        }
        if let Some(g) = &self.gammas {
            cfg.gammas = parse_gammas(g)?;
        }
        Ok(cfg)
    }
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate { run, out } => {
            let mut cfg = run.load()?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let resolved = cfg.resolve()?;
            let dir = resolved
                .output_dir
                .clone()
                .ok_or_else(|| CliError::input("MissingOutput", "an output directory is required (--out)"))?;
            let sim = simulate(&resolved)?;
            write_outputs(&dir, &render_outputs(&sim)?)?;
            print_json(&serde_json::json!({
                "config_hash": resolved.hash,
                "output_dir": dir,
                "table": sim.summaries(),
            }))
        }
        Command::Clear {
            problem,
            objective,
            oracle,
            grid_step,
        } => {
            let text = fs::read_to_string(&problem).map_err(|e| CliError::input("Io", format!("{}: {e}", problem.display())))?;
            let p: ClearingProblem = serde_json::from_str(&text)?;
            p.validate()?;
            match clear(&p, objective.into(), oracle.then_some(grid_step)) {
                Ok(report) => print_json(&report),
                Err(e) => {
                    if let Some(details) = &e.details {
                        print_json(details)?;
                    }
                    Err(e)
                }
            }
        }
        Command::Rank { run, gamma, values } => {
            if let Some(values) = values {
                let v = values
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| CliError::input("InvalidParams", format!("cannot parse value `{s}`")))
                    })
                    .collect::<CliResult<Vec<f64>>>()?;
                let mut out = String::from("rank,institution,value\n");
                for (k, inst) in rank_values(&v).into_iter().enumerate() {
                    out.push_str(&format!("{},{},{}\n", k + 1, inst, v[inst - 1]));
                }
                print!("{out}");
                return Ok(());
            }
            let mut cfg = run.load()?;
            let gammas = parse_gammas(&gamma)?;
            cfg.gammas = gammas;
            cfg.metrics.clear();
            let resolved = cfg.resolve()?;
            let sim = simulate(&resolved)?;
            std::io::stdout().write_all(&ranking_csv(&resolved.hash, &sim.ranking)?)?;
            Ok(())
        }
        Command::CheckAxioms {
            csrm,
            axioms,
            trials,
            seed,
        } => {
            let seed = seed.ok_or_else(|| CliError::input("MissingSeed", "a seed is required (--seed)"))?;
            let axioms = parse_axioms(&axioms)?;
            let text = fs::read_to_string(&csrm).map_err(|e| CliError::input("Io", format!("{}: {e}", csrm.display())))?;
            print_json(&check_axioms(&text, &axioms, trials, seed)?)
        }
    }
}

fn fail(e: &CliError) -> ExitCode {
    let body: Value = e.to_json();
    eprintln!("{}", serde_json::to_string(&body).unwrap_or_else(|_| e.to_string()));
    ExitCode::from(e.code as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::input("Usage", e.to_string().trim_end())),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return fail(&CliError::input("Usage", "--threads must be at least 1"));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&CliError::input("Threads", e.to_string()));
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
