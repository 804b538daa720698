use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use whittle_aoi::harness::{self, default_spec, ExperimentSpec, RunOptions};
use whittle_aoi::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "whittle-aoi", version, about = "Whittle index scheduling experiments for age of information")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment file (TOML); defaults to the built-in experiment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: the file's out_dir, else results/<command>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Leave the timestamp out of the metadata file.
    #[arg(long)]
    no_timestamp: bool,
    /// Exit with status 3 if the command's self-check fails.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Budget bound B_alpha for probability pairs.
    Balpha {
        #[command(flatten)]
        common: Common,
        /// Include the ten reference pairs and compare with printed values.
        #[arg(long)]
        paper: bool,
        /// Extra pair `P_LO,P_HI` (repeatable).
        #[arg(long = "pair", value_parser = parse_pair)]
        pairs: Vec<[f64; 2]>,
    },
    /// Simulated Whittle policy against the relaxed bound over N.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Fluid trajectory, convergence certificate and monotonicity audit.
    Fluid {
        #[command(flatten)]
        common: Common,
    },
    /// Relaxed-problem optimum.
    Relaxed {
        #[command(flatten)]
        common: Common,
    },
    /// Deviation of the N-user system from the fluid path.
    Kurtz {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let (a, b) = s.split_once(',').ok_or("expected P_LO,P_HI")?;
    let a = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let b = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok([a, b])
}

fn load(name: &str, common: &Common) -> Result<ExperimentSpec, Error> {
    let spec = match &common.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => default_spec(name).expect("every subcommand has a default"),
    };
    if harness::command_for(&spec) != name {
        return Err(Error::Validation(format!(
            "experiment kind `{}` belongs to `{}`, not `{name}`",
            spec.kind(),
            harness::command_for(&spec)
        )));
    }
    Ok(spec)
}

fn execute(cli: Cli) -> Result<bool, Error> {
    let (name, common, spec) = match cli.command {
        Command::Balpha { common, paper, pairs } => {
            let mut spec = load("balpha", &common)?;
            if let ExperimentSpec::BalphaTable(b) = &mut spec {
                if common.config.is_none() && !pairs.is_empty() {
                    b.paper = paper;
                } else {
                    b.paper |= paper;
                }
                b.pairs.extend(pairs);
            }
            ("balpha", common, spec)
        }
        Command::Compare { common } => ("compare", common.clone(), load("compare", &common)?),
        Command::Fluid { common } => ("fluid", common.clone(), load("fluid", &common)?),
        Command::Relaxed { common } => ("relaxed", common.clone(), load("relaxed", &common)?),
        Command::Kurtz { common } => ("kurtz", common.clone(), load("kurtz", &common)?),
    };
    let outcome = harness::run(&spec, &RunOptions { seed: common.seed })?;
    print!("{}", outcome.summary);

    let dir = common
        .out
        .clone()
        .or_else(|| outcome.spec.out_dir().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results").join(name));
    let meta = outcome.metadata(!common.no_timestamp)?;
    for p in harness::write_all(&dir, &outcome.files, &meta)? {
        println!("wrote {}", p.display());
    }

    if !outcome.check.passed() {
        for f in &outcome.check.failures {
            eprintln!("check: {f}");
        }
    }
    if common.check {
        println!("check {}", if outcome.check.passed() { "passed" } else { "FAILED" });
    }
    Ok(!common.check || outcome.check.passed())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
