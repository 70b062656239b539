//! `dlsr`: experiment runner for dictionary-learning grasp recognition and
//! detection.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;
mod data;
mod report;
mod settings;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use grasp_dlsr::dictlearn::DictMethod;
use grasp_dlsr::evaluation::EncoderChoice;

use crate::settings::Overrides;

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Data(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    grasp_dlsr::dataset::DatasetError,
    grasp_dlsr::evaluation::EvalError,
    grasp_dlsr::bundle::BundleError,
    grasp_dlsr::imageproc::ImageError,
    grasp_dlsr::dictlearn::DictLearnError
);

#[derive(Debug, Parser)]
#[command(
    name = "dlsr",
    version,
    about = "Dictionary-learning grasp recognition and detection"
)]
struct Cli {
    /// Worker threads for data-parallel stages
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// TOML settings file; flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct DataArgs {
    /// Dataset root directory
    #[arg(long, env = "DLSR_DATA")]
    data: PathBuf,
    /// Channel cache directory written by `preprocess`
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Image,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    Recognition,
    Detection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WhiteningArg {
    On,
    Off,
    Both,
}

/// Fixed hyperparameters for a single trained pipeline.
#[derive(Debug, Clone, Args)]
struct HyperArgs {
    /// Dictionary learner (sc, omp, gsvq, nkm, rp, r)
    #[arg(long)]
    dict: Option<DictMethod>,
    /// Encoder (sc, msc, omp, momp, st, kmeanstri, natural)
    #[arg(long)]
    encoder: Option<EncoderChoice>,
    /// Encoder sparsity (lambda, gamma or tau)
    #[arg(long)]
    sparsity: Option<f64>,
    /// SVM C
    #[arg(long)]
    c: Option<f64>,
    /// Take the most often selected sparsity and C from a `recognize-cv` report
    #[arg(long, conflicts_with_all = ["sparsity", "c"])]
    from_report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive 8-channel images for every scene and cache them
    Preprocess {
        #[command(flatten)]
        data: DataArgs,
        /// Cache output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a dictionary (and whitener) and save it as a bundle
    LearnDict {
        /// Dataset root (not needed for `--method r`)
        #[arg(long, env = "DLSR_DATA")]
        data: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Dictionary learner (sc, omp, gsvq, nkm, rp, r)
        #[arg(long)]
        method: Option<DictMethod>,
        /// Directory of auxiliary scenes mixed into the patch batch
        #[arg(long)]
        self_taught: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Output bundle
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a complete pipeline on all labeled rectangles
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        #[arg(long)]
        self_taught: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Output bundle
        #[arg(long)]
        out: PathBuf,
    },
    /// Nested cross-validated recognition accuracy per dictionary and encoder
    RecognizeCv {
        #[command(flatten)]
        data: DataArgs,
        /// Dictionary learners, comma separated, or `all`
        #[arg(long, value_delimiter = ',')]
        dict: Option<Vec<String>>,
        /// Encoders, comma separated, or `all`
        #[arg(long, value_delimiter = ',')]
        encoder: Option<Vec<String>>,
        #[arg(long)]
        self_taught: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Report directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Recognition accuracy across dictionary sizes, with and without whitening
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        dict: Option<DictMethod>,
        #[arg(long)]
        encoder: Option<EncoderChoice>,
        /// Dictionary sizes, comma separated
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value_t = WhiteningArg::Both)]
        whitening: WhiteningArg,
        #[command(flatten)]
        overrides: Overrides,
        /// Report directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect the best grasp rectangle in one scene
    Detect {
        #[command(flatten)]
        data: DataArgs,
        /// Scene id (file stem)
        #[arg(long)]
        scene: String,
        /// Trained bundle
        #[arg(long)]
        model: PathBuf,
        /// Write the RGB image with the detected rectangle
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Write the detection as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validated detection accuracy
    DetectCv {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        hyper: HyperArgs,
        /// Fold over images, or over whole objects (all views together)
        #[arg(long, value_enum, default_value_t = SplitArg::Image)]
        split: SplitArg,
        /// Directory of auxiliary scenes for self-taught dictionaries
        #[arg(long)]
        self_taught: Option<PathBuf>,
        /// Detection folds (default from settings)
        #[arg(long)]
        folds: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
        /// Report directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Render dictionary atoms as PNG mosaics per channel group
    ExportAtoms {
        /// Bundle holding the dictionary
        #[arg(long)]
        model: PathBuf,
        /// Render the raw k-means centroids instead of the normalized atoms
        #[arg(long)]
        centroids: bool,
        /// Pixels per patch pixel
        #[arg(long, default_value_t = 4)]
        scale: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded synthetic dataset
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Recognition)]
        kind: SynthKind,
        #[arg(long, default_value_t = 60)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n");
            eprintln!("{}", Cli::command().render_usage());
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
