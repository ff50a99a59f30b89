//! csifeed: CSI-feedback codec experiments — dataset generation, backbone
//! training, online fine-tuning with coded model updates, standalone
//! decoding, sweeps and plots.

mod commands;
mod spec;
mod svg;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csifeed::error::Error;
use spec::ExperimentSpec;

#[derive(Parser)]
#[command(name = "csifeed", version, about = "Neural CSI feedback compression with online fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Experiment spec file (TOML or JSON); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// RD weight(s); comma-separated for `train`, single value elsewhere.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Fine-tuning modes (no_ft, encoder_only, full_model, genie_aided).
    #[arg(long, value_delimiter = ',')]
    mode: Option<Vec<String>>,
    /// Update intervals for the interval sweep.
    #[arg(long, value_delimiter = ',')]
    interval: Option<Vec<usize>>,
    /// Epoch count override (train or finetune depending on the command).
    #[arg(long)]
    epochs: Option<usize>,
    /// CSI dimension override (sets both n_tx and n_sub).
    #[arg(long)]
    dim: Option<usize>,
    /// Backbone sample count override.
    #[arg(long)]
    count: Option<usize>,
    /// Evaluation stream length override.
    #[arg(long)]
    eval_count: Option<usize>,
    /// Uniform update prior instead of spike-and-slab (ablation).
    #[arg(long)]
    uniform_prior: bool,
}

impl SpecArgs {
    fn resolve(&self, for_train: bool) -> csifeed::Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(lambdas) = &self.lambda {
            if for_train {
                spec.train.lambdas = lambdas.clone();
            } else if let Some(first) = lambdas.first() {
                spec.finetune.lambda = *first;
            }
        }
        if let Some(modes) = &self.mode {
            spec.finetune.modes = modes.clone();
        }
        if let Some(intervals) = &self.interval {
            spec.sweep.intervals = intervals.clone();
        }
        if let Some(epochs) = self.epochs {
            if for_train {
                spec.train.epochs = epochs;
            } else {
                spec.finetune.epochs = epochs;
            }
        }
        if let Some(dim) = self.dim {
            spec.dataset.n_tx = dim;
            spec.dataset.n_sub = dim;
        }
        if let Some(count) = self.count {
            spec.dataset.count = count;
        }
        if let Some(eval_count) = self.eval_count {
            spec.dataset.eval_count = eval_count;
        }
        if self.uniform_prior {
            spec.finetune.uniform_prior = true;
        }
        Ok(spec)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate CSIBIN datasets: base train/val/test splits plus a shifted
    /// evaluation stream.
    Gen {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one backbone codec per lambda; writes checkpoints, training
    /// histories and the RD frontier table.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        /// Directory with train/val/test.csib.
        #[arg(long)]
        data: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from the saved last-epoch checkpoint if present.
        #[arg(long)]
        resume: bool,
    },
    /// Run No-FT / encoder-only / full-model / genie-aided sessions on the
    /// evaluation stream; writes bitstreams, reconstructions, a result
    /// table and a session manifest.
    Finetune {
        #[command(flatten)]
        spec: SpecArgs,
        /// Directory with eval.csib.
        #[arg(long)]
        data: PathBuf,
        /// Backbone checkpoint (theta0, phi0).
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Standalone decoder: rebuild the decoder from (theta0, bitstream) and
    /// reconstruct CSI. Optionally verify bit-exactness against an
    /// encoder-side reconstruction and recompute NMSE against a manifest.
    Decode {
        #[command(flatten)]
        spec: SpecArgs,
        /// Bitstream to decode.
        #[arg(long)]
        bits: PathBuf,
        /// Backbone checkpoint (theta0).
        #[arg(long)]
        ckpt: PathBuf,
        /// Output CSIBIN of reconstructions.
        #[arg(long)]
        out: PathBuf,
        /// Encoder-side reconstruction file to compare against, bit for bit.
        #[arg(long)]
        expect: Option<PathBuf>,
        /// Evaluation stream for NMSE recomputation.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// sessions.json written by `finetune`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Update-interval sweep and quantization-resolution sweep.
    Sweep {
        #[command(flatten)]
        spec: SpecArgs,
        /// Directory with eval.csib.
        #[arg(long)]
        data: PathBuf,
        /// Backbone checkpoint.
        #[arg(long)]
        ckpt: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Which sweep: interval, nbins, or both.
        #[arg(long, default_value = "both")]
        kind: String,
    },
    /// Render a result table as an SVG (plus a CSV of the plotted points).
    Plot {
        /// Result table CSV.
        #[arg(long)]
        table: PathBuf,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
        /// Plot kind: line or bars.
        #[arg(long, default_value = "line")]
        kind: String,
        /// X column for line plots.
        #[arg(long, default_value = "rate_total")]
        x: String,
        /// Y column for line plots.
        #[arg(long, default_value = "nmse_db")]
        y: String,
        /// Plot title.
        #[arg(long)]
        title: Option<String>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Io(_) => 2,
        Error::Format { .. } | Error::Coder(_) | Error::Json(_) => 3,
        Error::Divergence(_) => 4,
        Error::Dim(_) | Error::Tape(_) => 2,
    }
}

fn run() -> csifeed::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gen { spec, out } => commands::cmd_gen(&spec.resolve(true)?, &out),
        Command::Train { spec, data, out, resume } => {
            commands::cmd_train(&spec.resolve(true)?, &data, &out, resume)
        }
        Command::Finetune { spec, data, ckpt, out } => {
            commands::cmd_finetune(&spec.resolve(false)?, &data, &ckpt, &out)
        }
        Command::Decode { spec, bits, ckpt, out, expect, eval, manifest } => commands::cmd_decode(
            &spec.resolve(false)?,
            &bits,
            &ckpt,
            &out,
            expect.as_deref(),
            eval.as_deref(),
            manifest.as_deref(),
        ),
        Command::Sweep { spec, data, ckpt, out, kind } => {
            commands::cmd_sweep(&spec.resolve(false)?, &data, &ckpt, &out, &kind)
        }
        Command::Plot { table, out, kind, x, y, title } => {
            commands::cmd_plot(&table, &out, &kind, &x, &y, title.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(exit_code_for(&err))
        }
    }
}
