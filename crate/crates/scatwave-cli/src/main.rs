use clap::{Parser, Subcommand};
use scatwave::run::{emit_report, run, RunConfig, RunManifest, Task};
use scatwave::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "scatwave", version, about = "Radiation fields, resonances and tail fits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for stochastic sampling (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Null bicharacteristic flow and non-trapping check.
    Flow {
        #[command(flatten)]
        common: Common,
        /// Number of sampled bicharacteristics.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Solve the wave equation and extract the radiation field.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Grid spacing.
        #[arg(long)]
        h: Option<f64>,
    },
    /// Cap resonances in a strip.
    Resonances {
        #[command(flatten)]
        common: Common,
        /// Collocation size.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Radiation field and tail fit.
    Tails {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Tail exponents against resonances.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<f64>,
    },
    /// Resonances (and optionally tails) across a perturbation family.
    Scan {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate manifests into one table and plot script.
    Report {
        /// Manifest files.
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out/report")]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_)
        | Error::InvalidDimension(_)
        | Error::ClassViolation { .. }
        | Error::Precondition(_)
        | Error::ReductionUnavailable(_)
        | Error::Io(_)
        | Error::Json(_) => 2,
        _ => 3,
    }
}

fn load(task: Task, common: &Common) -> Result<RunConfig, Error> {
    let mut c = RunConfig::load(&common.config)?;
    if c.task != task {
        return Err(Error::Config(format!(
            "config is for task '{}', not '{}'",
            c.task.name(),
            task.name()
        )));
    }
    if let Some(o) = &common.out {
        c.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    Ok(c)
}

fn execute(cli: Cli) -> Result<bool, Error> {
    let config = match cli.command {
        Command::Report { manifests, out } => {
            let ms = manifests
                .iter()
                .map(|p| RunManifest::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let rep = emit_report(&ms);
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("report.csv"), &rep.csv)?;
            std::fs::write(out.join("report.gp"), &rep.script)?;
            print!("{}", rep.csv);
            return Ok(rep.passes.iter().all(|p| *p));
        }
        Command::Flow { common, samples } => {
            let mut c = load(Task::Flow, &common)?;
            if let Some(s) = samples {
                c.flow.samples = s;
            }
            c
        }
        Command::Solve { common, h } => {
            let mut c = load(Task::Solve, &common)?;
            c.h = h.unwrap_or(c.h);
            c
        }
        Command::Resonances { common, size } => {
            let mut c = load(Task::Resonances, &common)?;
            c.size = size.unwrap_or(c.size);
            c
        }
        Command::Tails { common, h } => {
            let mut c = load(Task::Tails, &common)?;
            c.h = h.unwrap_or(c.h);
            c
        }
        Command::Verify { common, h } => {
            let mut c = load(Task::Verify, &common)?;
            c.h = h.unwrap_or(c.h);
            c
        }
        Command::Scan { common } => load(Task::Scan, &common)?,
    };
    let m = run(&config)?;
    for c in &m.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    println!("outputs: {}", m.outputs.join(", "));
    Ok(m.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
