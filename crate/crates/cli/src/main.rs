use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rbsde_cli::{
    benchmark, emit_report, parse_config, run_batch, ExperimentSpec, OutputFormat, OutputTarget, Report,
    BENCHMARKS,
};

#[derive(Parser)]
#[command(name = "rbsde", version, about = "Lattice experiments for monotone and reflected BSDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    outputs: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Also write the JSON report here.
    #[arg(long, global = true, value_name = "PATH")]
    out_json: Option<PathBuf>,
    /// Also write the per-level CSV table here.
    #[arg(long, global = true, value_name = "PATH")]
    out_csv: Option<PathBuf>,
    /// Reject terminal values outside the barriers at the final time.
    #[arg(long, global = true)]
    strict_terminal: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more config files (concurrently).
    Solve {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Run the invariant battery on a config's problem.
    Suite {
        config: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Run a bundled benchmark config.
    Bench {
        #[arg(value_parser = BENCHMARKS.map(|(name, _)| name))]
        name: String,
    },
}

fn load(path: &PathBuf) -> anyhow::Result<ExperimentSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn apply(mut spec: ExperimentSpec, o: &Overrides) -> anyhow::Result<ExperimentSpec> {
    spec.strict_terminal |= o.strict_terminal;
    if let Some(path) = &o.out_json {
        spec.outputs.push(OutputTarget {
            format: OutputFormat::Json,
            path: path.clone(),
        });
    }
    if let Some(path) = &o.out_csv {
        spec.outputs.push(OutputTarget {
            format: OutputFormat::Csv,
            path: path.clone(),
        });
    }
    spec.validate()?;
    Ok(spec)
}

fn print_summary(report: &Report) {
    let s = &report.summary;
    println!("{} ({:?}): Y0 = {:.12}", report.name, report.mode, s.y0);
    if let Some(o) = s.oracle_y0 {
        println!("  oracle Y0 = {o:.12}");
    }
    if let (Some(k), Some(a)) = (s.k_total, s.a_total) {
        println!("  K_total = {k:.6e}, A_total = {a:.6e}");
    }
    for row in &report.levels {
        let err = row.sup_error_vs_oracle.map_or("-".to_string(), |e| format!("{e:.3e}"));
        println!("  level {:>2}  n = {:<10} m = {:<10} Y0 = {:.12}  error = {err}", row.level_index, row.n, row.m, row.y0);
    }
    for v in &report.verdicts {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("  [{tag}] {:<28} worst = {:e}  ({})", v.name, v.worst, v.detail);
    }
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    let specs = match &cli.command {
        Command::Solve { configs } => {
            if configs.len() > 1 && (cli.outputs.out_json.is_some() || cli.outputs.out_csv.is_some()) {
                bail!("--out-json and --out-csv take a single config; use `outputs` in each config instead");
            }
            configs.iter().map(load).collect::<anyhow::Result<Vec<_>>>()?
        }
        Command::Suite { config, seed } => {
            let mut spec = load(config)?;
            spec.mode = rbsde_cli::Mode::Suite;
            spec.seed = *seed;
            vec![spec]
        }
        Command::Bench { name } => vec![benchmark(name).context("unknown benchmark")??],
    };
    let specs = specs
        .into_iter()
        .map(|s| apply(s, &cli.outputs))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut all_passed = true;
    for (spec, result) in specs.iter().zip(run_batch(&specs)) {
        let report = result?;
        print_summary(&report);
        emit_report(&report, &spec.outputs)?;
        all_passed &= report.passed();
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
