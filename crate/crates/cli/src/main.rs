//! `meshdeform`: batch front end for sampling, deformation, training,
//! evaluation, template retrieval and interpolation.
//!
//! Exit status: 0 on success, 1 for usage, configuration or input errors,
//! 2 for numerical failures (a non-finite loss).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::{CliError, CliResult, DeformArgs, InterpArgs};
use config::RunConfig;
use meshdeform::metrics::MetricReport;

#[derive(Parser, Debug)]
#[command(name = "meshdeform", version, about = "Deform triangle meshes toward target shapes with fixed topology")]
struct Cli {
    /// Run configuration (`key = value` per line).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Base seed; overrides the `seed` key of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Print every configuration key with its default and range, then exit.
    #[arg(long)]
    print_config_schema: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Direct,
    Network,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw area-uniform surface samples and write them as XYZ.
    Sample {
        mesh: PathBuf,
        #[arg(short, default_value_t = 2048)]
        n: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Deform a source mesh toward a target mesh (.obj) or cloud (.xyz).
    Deform {
        source: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Direct)]
        mode: Mode,
        /// Trained network (network mode).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Deformed OBJ.
        #[arg(short, long)]
        out: PathBuf,
        /// Loss trace CSV [default: <out>.trace.csv].
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Metric record [default: <out>.metrics.json].
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Train the deformation network on `source<TAB>target` pairs.
    Train {
        manifest: PathBuf,
        /// Output checkpoint.
        #[arg(short, long)]
        out: PathBuf,
        /// Loss trace CSV, rewritten after every epoch [default: <out>.trace.csv].
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compare two shapes: CD and EMD, plus IoU when both are meshes.
    Eval {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Pick the template closest to a target.
    SelectTemplate {
        target: PathBuf,
        /// Directory of .obj templates; subdirectories name categories.
        templates: PathBuf,
        /// Autoencoder checkpoint for embedding mode; Chamfer mode without it.
        #[arg(long)]
        encoder: Option<PathBuf>,
        #[arg(long)]
        category: Option<String>,
    },
    /// Deform a source toward blends of two targets' features.
    Interp {
        source: PathBuf,
        target_a: PathBuf,
        target_b: PathBuf,
        /// Comma-separated weights in [0, 1] given to target B.
        #[arg(long, allow_hyphen_values = true)]
        t: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
    /// Train the point-cloud autoencoder used by embedding-mode retrieval.
    TrainAutoencoder {
        /// Directory of .obj templates.
        templates: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no command given (see --help)".into()));
    };
    match command {
        Command::Sample { mesh, n, out } => commands::sample(&mesh, n, &out, &cfg),
        Command::Deform {
            source,
            target,
            mode,
            checkpoint,
            out,
            trace,
            metrics,
        } => {
            let args = DeformArgs {
                source: &source,
                target: &target,
                network: mode == Mode::Network,
                checkpoint: checkpoint.as_deref(),
                out: &out,
                trace: trace.as_deref(),
                metrics: metrics.as_deref(),
            };
            let report = commands::deform(&args, &cfg)?;
            println!("{}", report.to_json());
            Ok(())
        }
        Command::Train { manifest, out, trace } => {
            let t = commands::train_network(&manifest, &out, trace.as_deref(), &cfg)?;
            println!(
                "initial loss {} final loss {}",
                t.first_total().unwrap_or(f64::NAN),
                t.last_total().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Eval { a, b, format } => {
            let e = commands::eval(&a, &b, &cfg)?;
            match format {
                Format::Json => println!("{}", e.report.to_json()),
                Format::Csv => println!("{}\n{}", MetricReport::csv_header(), e.report.to_csv_row()),
            }
            Ok(())
        }
        Command::SelectTemplate {
            target,
            templates,
            encoder,
            category,
        } => {
            let (id, path) = commands::select(&target, &templates, encoder.as_deref(), category.as_deref(), &cfg)?;
            println!("{id}\t{}", path.display());
            Ok(())
        }
        Command::Interp {
            source,
            target_a,
            target_b,
            t,
            checkpoint,
            out_dir,
        } => {
            let ts = commands::parse_t_list(&t)?;
            let args = InterpArgs {
                source: &source,
                target_a: &target_a,
                target_b: &target_b,
                ts: &ts,
                checkpoint: checkpoint.as_deref(),
                out_dir: &out_dir,
            };
            for (t, p) in ts.iter().zip(commands::interp(&args, &cfg)?) {
                println!("{t}\t{}", p.display());
            }
            Ok(())
        }
        Command::TrainAutoencoder { templates, out } => {
            let losses = commands::train_embedding(&templates, &out, &cfg)?;
            if let (Some(a), Some(b)) = (losses.first(), losses.last()) {
                println!("initial loss {a} final loss {b}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    if cli.print_config_schema {
        print!("{}", config::schema());
        return ExitCode::SUCCESS;
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
