use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (dataset format 1, checkpoint format 1)"
);

#[derive(Parser, Debug)]
#[command(name = "calodiff", version = VERSION, about = "Calorimeter shower diffusion toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,

    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Geometry config file; defaults are used when omitted.
    #[arg(long, global = true)]
    pub geometry: Option<PathBuf>,

    /// Threads for event-parallel stages. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub workers: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Cloud,
    Image,
    Multiplicity,
    Layers,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Cloud,
    Image,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate toy showers into a point-cloud dataset.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        shower_params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Displace every hit uniformly within its cell.
    Smear {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model of a generation pipeline.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long)]
        data: PathBuf,
        /// TOML with a [train] section and an optional [net] section.
        #[arg(long)]
        hyper: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample showers from trained checkpoints.
    Sample {
        #[arg(long)]
        model_dir: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Required when the directory holds both pipelines.
        #[arg(long, value_enum)]
        pipeline: Option<PipelineArg>,
        /// Condition on the incident particles of this dataset instead of
        /// drawing them.
        #[arg(long)]
        incidents: Option<PathBuf>,
    },
    /// Sum point clouds into 11^3 voxel images.
    Voxelize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write full-granularity 55^3 images instead.
        #[arg(long)]
        full: bool,
    },
    /// Compare generated samples against a reference.
    Evaluate {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        gen2: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// TOML with a [classifier] section.
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        no_classifier: bool,
    },
    /// Print the header and summary statistics of a file.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = if cli.print_config {
        commands::print_config()
    } else {
        match cli.command {
            None => {
                eprintln!("error: a subcommand is required (see --help)");
                return ExitCode::from(2);
            }
            Some(cmd) => run(cmd, &cli.global, args),
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command, global: &Global, args: Vec<String>) -> calodiff::Result<()> {
    let ctx = commands::Context::new(global, args)?;
    match cmd {
        Command::Generate { n, seed, shower_params, out } => ctx.generate(n, seed, shower_params.as_deref(), &out),
        Command::Smear { input, seed, out } => ctx.smear(&input, seed, &out),
        Command::Train { model, data, hyper, seed, out } => ctx.train(model, &data, hyper.as_deref(), seed, &out),
        Command::Sample { model_dir, n, seed, out, pipeline, incidents } => {
            ctx.sample(&model_dir, n, seed, &out, pipeline, incidents.as_deref())
        }
        Command::Voxelize { input, out, full } => ctx.voxelize(&input, &out, full),
        Command::Evaluate { reference, gen, gen2, seed, out, classifier, no_classifier } => {
            ctx.evaluate(&reference, &gen, gen2.as_deref(), seed, &out, classifier.as_deref(), no_classifier)
        }
        Command::Inspect { input } => ctx.inspect(&input),
    }
}
