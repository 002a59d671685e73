use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "chebcnn", version, about = "Chebyshev-expanded CNNs: data, training, evaluation and demos")]
struct Cli {
    /// Print the default configuration file and exit.
    #[arg(long)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic three-class texture dataset as directories of PNGs.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 128)]
        side: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a network and write the best checkpoint and the per-epoch curves.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset root; falls back to `data_dir` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curves: PathBuf,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train Chebyshev and standard-convolution arms for each seed.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        report: PathBuf,
    },
    /// Chebyshev approximation error of an image for orders 0..=M.
    Approx {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        order: usize,
    },
    /// Filter an impulse on a path graph and print the locality certificate.
    SpectralDemo {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        order: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = if cli.print_defaults {
        commands::print_defaults()
    } else {
        match cli.command {
            None => Err(anyhow::anyhow!("no subcommand given; see --help")),
            Some(Command::Generate { out, per_class, side, seed }) => commands::generate(&out, per_class, side, seed),
            Some(Command::Train {
                config,
                data,
                out,
                curves,
                seed,
            }) => commands::train(config.as_deref(), data.as_deref(), &out, &curves, seed),
            Some(Command::Eval { ckpt, data, report }) => commands::eval(&ckpt, &data, &report),
            Some(Command::Ablate {
                config,
                data,
                seeds,
                report,
            }) => commands::ablate(config.as_deref(), data.as_deref(), &seeds, &report),
            Some(Command::Approx { image, order }) => commands::approx(&image, order),
            Some(Command::SpectralDemo { dim, order }) => commands::spectral_demo(dim, order),
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
