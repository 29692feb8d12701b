use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gossip_momentum::harness::{run_experiment, CompareConfig, ExperimentConfig};
use gossip_momentum::theory::{self, ExpectationOptions, RateReport};
use gossip_momentum::{Graph, LinearSystem, SketchDistribution};

#[derive(Parser)]
#[command(
    name = "gossip",
    about = "Randomized gossip with heavy-ball momentum",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Cycle,
    Grid,
    Rgg,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sketch {
    Rk,
    Block,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a network and write it as an edge list.
    Graph {
        #[arg(long, value_enum)]
        family: Family,
        /// Node count (cycle, rgg) or side length of a square grid.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print spectral quantities and rate constants of a network.
    Rates {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "rk")]
        sketch: Sketch,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relaxation; defaults to the unit-relaxation accelerated preset.
        #[arg(long)]
        omega: Option<f64>,
        /// Momentum; defaults to the unit-relaxation accelerated preset.
        #[arg(long)]
        beta: Option<f64>,
    },
    /// Run an experiment config and write its trace CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the three head-to-head comparison studies of a compare config.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn graph_cmd(
    family: Family,
    n: Option<usize>,
    rows: Option<usize>,
    cols: Option<usize>,
    seed: u64,
    out: Option<PathBuf>,
) -> CliResult {
    let need_n = || n.ok_or("--n is required for this family");
    let graph = match family {
        Family::Cycle => Graph::cycle(need_n()?)?,
        Family::Rgg => Graph::random_geometric(need_n()?, seed)?,
        Family::Grid => match (rows, cols, n) {
            (Some(r), Some(c), _) => Graph::grid2d(r, c)?,
            (None, None, Some(side)) => Graph::grid2d(side, side)?,
            _ => return Err("grid needs --rows and --cols, or --n for a square grid".into()),
        },
    };
    let text = graph.to_edge_list();
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn rates_cmd(
    graph: PathBuf,
    sketch: Sketch,
    tau: Option<usize>,
    mc_samples: usize,
    seed: u64,
    omega: Option<f64>,
    beta: Option<f64>,
) -> CliResult {
    let graph = Graph::from_edge_list(&fs::read_to_string(&graph)?)?;
    let sys = LinearSystem::average_consensus(&graph);
    let dist = match (sketch, tau) {
        (Sketch::Rk, None) => SketchDistribution::uniform_rows(graph.edge_count()),
        (Sketch::Rk, Some(_)) => return Err("--tau only applies to --sketch block".into()),
        (Sketch::Block, Some(t)) => SketchDistribution::UniformBlock(t),
        (Sketch::Block, None) => return Err("--sketch block needs --tau".into()),
    };
    let opts = ExpectationOptions {
        mc_samples,
        seed,
        ..Default::default()
    };
    let w = theory::expected_w(&sys, &dist, &opts)?;
    let spectrum = theory::extreme_spectrum(&w.matrix)?;
    let [preset, _] = theory::accelerated_presets(spectrum.lambda_min_plus, spectrum.lambda_max);
    let report = RateReport::new(
        spectrum,
        omega.unwrap_or(preset.omega),
        beta.unwrap_or(preset.beta),
        w.approximate,
    )?;
    print!("{}", report.to_key_values());
    Ok(())
}

fn run_cmd(config: PathBuf) -> CliResult {
    let cfg = ExperimentConfig::load(&config)?;
    let output = cfg
        .output
        .clone()
        .ok_or("experiment config has no `output` path")?;
    let table = run_experiment(&cfg)?;
    for path in table.write(&output)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn compare_cmd(config: PathBuf) -> CliResult {
    let cfg = CompareConfig::load(&config)?;
    let studies = cfg.experiments();
    let mut tables = Vec::with_capacity(studies.len());
    for (_, exp) in &studies {
        tables.push(run_experiment(exp)?);
    }
    for ((_, exp), table) in studies.iter().zip(&tables) {
        let output = exp.output.as_ref().expect("compare sets every output");
        for path in table.write(output)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Graph {
            family,
            n,
            rows,
            cols,
            seed,
            out,
        } => graph_cmd(family, n, rows, cols, seed, out),
        Command::Rates {
            graph,
            sketch,
            tau,
            mc_samples,
            seed,
            omega,
            beta,
        } => rates_cmd(graph, sketch, tau, mc_samples, seed, omega, beta),
        Command::Run { config } => run_cmd(config),
        Command::Compare { config } => compare_cmd(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
