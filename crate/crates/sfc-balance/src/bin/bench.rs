//! Benchmark driver: scenario runs, scaling sweeps and mesh tooling.
//!
//! Exit codes: 0 success, 2 configuration error, 3 run failure.

use clap::{Args, Parser, Subcommand, ValueEnum};
use sfc_balance::bench::{run_scaling, run_scenario, write_artifacts, BenchConfig, BenchError};
use sfc_balance::mesh::{
    generate_box_mesh, read_mesh, split_to_mixed, write_mesh, write_sidecar,
};
use sfc_balance::metrics::{write_csv, ScalingMode};
use sfc_balance::sfc::BoundingBox;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bench", about = "SFC load-balancing benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one benchmark scenario.
    Run(RunArgs),
    /// Strong or weak scaling sweep over rank counts.
    Scaling(ScalingArgs),
    /// Mesh generation and inspection.
    Mesh {
        #[command(subcommand)]
        command: MeshCommand,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario name: hex-box | mixed-box.
    scenario: String,
    #[arg(long, default_value_t = 2)]
    ranks: usize,
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[arg(long, default_value_t = 5)]
    degree: usize,
    /// Dynamic load balancing on/off.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    balance: Toggle,
    /// Imbalance ratio that triggers rebalancing.
    #[arg(long, default_value_t = 1.10)]
    threshold: f64,
    /// Measurement window length in steps.
    #[arg(long, default_value_t = 10)]
    interval: usize,
    /// Read a TOML config; explicit flags above override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write artifacts (config, CSV, imbalance trace, events, checksum).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_enum)]
    mode: CliScalingMode,
    /// Comma-separated rank counts, e.g. 1,2,4.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 4])]
    ranks: Vec<usize>,
    #[arg(long, default_value = "hex-box")]
    scenario: String,
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    /// Elements per rank in weak mode.
    #[arg(long, default_value_t = 64)]
    weak_elems_per_rank: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum CliScalingMode {
    Strong,
    Weak,
}

#[derive(Subcommand)]
enum MeshCommand {
    /// Generate a periodic hex box mesh.
    Gen {
        #[arg(long, default_value_t = 8)]
        nx: usize,
        #[arg(long, default_value_t = 8)]
        ny: usize,
        #[arg(long, default_value_t = 8)]
        nz: usize,
        /// Domain edge length (box is [0, size]^3).
        #[arg(long, default_value_t = std::f64::consts::TAU)]
        size: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split trailing hexes of an existing mesh into mixed elements.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fraction of elements (tail of the SFC order) to split.
        #[arg(long, default_value_t = 0.75)]
        fraction: f64,
        /// tet : pyramid : prism weighting.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.0, 1.0])]
        mix: Vec<f64>,
    },
    /// Print a summary of a mesh file.
    Info {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                BenchError::UnknownScenario(_) | BenchError::Config(_) | BenchError::Toml(_) => {
                    ExitCode::from(2)
                }
                BenchError::Cluster(_) => ExitCode::from(4),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Scaling(args) => cmd_scaling(args),
        Command::Mesh { command } => cmd_mesh(command),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), BenchError> {
    let mut cfg = match &args.config {
        Some(path) => BenchConfig::from_toml_file(path)?,
        None => BenchConfig::default(),
    };
    cfg.scenario = args.scenario;
    cfg.n_ranks = args.ranks;
    cfg.steps = args.steps;
    cfg.degree = args.degree;
    cfg.balance = args.balance == Toggle::On;
    cfg.threshold = args.threshold;
    cfg.interval = args.interval;
    cfg.validate()?;

    let result = run_scenario(&cfg)?;
    println!(
        "scenario={} ranks={} steps={} degree={} dt={:.6e}",
        cfg.scenario, cfg.n_ranks, cfg.steps, cfg.degree, result.dt
    );
    println!(
        "wall={:.3}s cpu={:.3}s pid={:.3e}s dof={} rebalances={}",
        result.record.wall_s,
        result.record.simulated_s,
        result.record.pid_s,
        result.record.n_dof,
        result.record.n_rebalances
    );
    println!(
        "imbalance: first={:.4} last={:.4}",
        result.record.imbalance_before, result.record.imbalance_after
    );
    println!("checksum={}", result.checksum);
    if let Some(dir) = &args.out {
        let files = write_artifacts(dir, &cfg, &result)?;
        for f in files {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn cmd_scaling(args: ScalingArgs) -> Result<(), BenchError> {
    if args.ranks.is_empty() {
        return Err(BenchError::Config("at least one rank count".into()));
    }
    let mode = match args.mode {
        CliScalingMode::Strong => ScalingMode::Strong,
        CliScalingMode::Weak => ScalingMode::Weak,
    };
    let cfg = BenchConfig {
        scenario: args.scenario,
        steps: args.steps,
        degree: args.degree,
        ..Default::default()
    };
    let (report, records) = run_scaling(&cfg, mode, &args.ranks, args.reps, args.weak_elems_per_rank)?;
    println!("mode={:?}", report.mode);
    for p in &report.points {
        println!(
            "ranks={} wall={:.3}s efficiency={:.3}",
            p.n_ranks, p.wall_s, p.efficiency
        );
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join("scaling.csv");
        let mut f = std::fs::File::create(&csv)?;
        write_csv(&mut f, &records)?;
        let json = dir.join("scaling.json");
        std::fs::write(&json, serde_json::to_string_pretty(&report).expect("serializes"))?;
        println!("wrote {}", csv.display());
        println!("wrote {}", json.display());
    }
    Ok(())
}

fn cmd_mesh(cmd: MeshCommand) -> Result<(), BenchError> {
    match cmd {
        MeshCommand::Gen {
            nx,
            ny,
            nz,
            size,
            out,
        } => {
            if !(size > 0.0) {
                return Err(BenchError::Config("size must be positive".into()));
            }
            let mesh = generate_box_mesh(nx, ny, nz, BoundingBox::new([0.0; 3], [size; 3]))?;
            write_mesh(&mesh, &out)?;
            write_sidecar(&mesh, &out)?;
            println!(
                "wrote {} ({} elements, {} sides)",
                out.display(),
                mesh.elements.len(),
                mesh.sides.len()
            );
            Ok(())
        }
        MeshCommand::Split {
            input,
            out,
            fraction,
            mix,
        } => {
            if mix.len() != 3 {
                return Err(BenchError::Config("mix needs three weights".into()));
            }
            if !(0.0..=1.0).contains(&fraction) {
                return Err(BenchError::Config("fraction must be in [0, 1]".into()));
            }
            let mesh = read_mesh(&input)?;
            let split = split_to_mixed(&mesh, fraction, [mix[0], mix[1], mix[2]])?;
            write_mesh(&split, &out)?;
            write_sidecar(&split, &out)?;
            let [h, t, p, y] = split.counts_by_type();
            println!(
                "wrote {} (hex={h} tet={t} prism={p} pyramid={y})",
                out.display()
            );
            Ok(())
        }
        MeshCommand::Info { input } => {
            let mesh = read_mesh(&input)?;
            let [h, t, p, y] = mesh.counts_by_type();
            println!("elements: {}", mesh.elements.len());
            println!("  hex={h} tet={t} prism={p} pyramid={y}");
            println!("sides: {}", mesh.sides.len());
            println!("nodes: {}", mesh.nodes.len());
            println!(
                "domain: [{:.6}, {:.6}] x [{:.6}, {:.6}] x [{:.6}, {:.6}]",
                mesh.domain.min[0],
                mesh.domain.max[0],
                mesh.domain.min[1],
                mesh.domain.max[1],
                mesh.domain.min[2],
                mesh.domain.max[2]
            );
            println!("total volume: {:.9}", mesh.total_volume());
            println!("sfc sorted: {}", mesh.is_sfc_sorted());
            Ok(())
        }
    }
}
