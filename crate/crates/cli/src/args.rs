use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "uiot",
    version,
    about = "Screen-set retrieval and consistency tooling"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Dataset manifest (JSON)
    #[arg(long, global = true, env = "UIOT_DATASET")]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, env = "UIOT_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 runs everything sequentially
    #[arg(long, global = true, env = "UIOT_THREADS")]
    pub threads: Option<usize>,
    #[arg(long, global = true, env = "UIOT_OUTPUT_DIR", default_value = ".")]
    pub output_dir: PathBuf,
    #[arg(long, global = true, env = "UIOT_SOLVER", value_enum, default_value_t = Solver::Auto)]
    pub solver: Solver,
    /// Sinkhorn regularization
    #[arg(
        long,
        global = true,
        env = "UIOT_EPSILON",
        default_value_t = 0.01,
        allow_negative_numbers = true
    )]
    pub epsilon: f64,
    /// Sinkhorn marginal tolerance
    #[arg(
        long,
        global = true,
        env = "UIOT_TOL",
        default_value_t = 1e-6,
        allow_negative_numbers = true
    )]
    pub tol: f64,
    #[arg(long, global = true, env = "UIOT_MAX_ITER", default_value_t = 5000)]
    pub max_iter: usize,
    /// Machine-readable output, and JSON errors on stderr
    #[arg(long, global = true, env = "UIOT_JSON")]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Solver {
    Exact,
    Sinkhorn,
    Auto,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and fingerprint a dataset
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Write a synthetic clustered dataset (one Gaussian cluster per app name)
    Synth(SynthArgs),
    /// Rank the other apps by transport distance to a query app
    RetrieveApp {
        #[arg(long)]
        query: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Export the transport plan between two apps
    Plan {
        #[arg(long)]
        query: String,
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value_t = PlanFormat::Json)]
        format: PlanFormat,
        /// Write here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Uniformity reports: one app as JSON, or every app as JSONL
    #[command(group(clap::ArgGroup::new("target").required(true).args(["app", "all"])))]
    Uniformity {
        #[arg(long)]
        app: Option<String>,
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
    },
    /// Change in uniformity after removing and/or adding screenshots
    Whatif {
        #[arg(long)]
        app: String,
        /// Comma-separated screenshot ids
        #[arg(long, value_delimiter = ',')]
        remove: Vec<String>,
        /// `.uieb` block or JSON array of vectors
        #[arg(long)]
        add_embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
    },
    /// Zero-shot top-k labels for a stored screenshot
    Classify {
        /// Label-embedding sidecar written by `build-labels`
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        screenshot: String,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Top-k zero-shot accuracy of app categories over every screenshot
    EvaluateLabels {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 5])]
        k: Vec<usize>,
    },
    /// Encode label prompts into a cached label-embedding set
    BuildLabels {
        /// `{labels: [...], templates?: [...]}`
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, env = "UIOT_ENCODER")]
        endpoint: String,
        /// Output stem; writes `<stem>.uieb` and `<stem>.json`
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Full pairwise distance table (resumable)
    Sweep(SweepArgs),
    #[command(subcommand)]
    Study(Study),
    /// Encode a directory of images into an embedding block
    Encode {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, env = "UIOT_ENCODER")]
        endpoint: String,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        pad_square: bool,
        /// Output `.uieb`; a `.json` list of screenshot ids is written beside it
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP service
    Serve {
        #[arg(long, env = "UIOT_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "UIOT_HOST", default_value = "127.0.0.1")]
        host: String,
        /// UI bundle to serve at `/`
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
        /// Label-embedding sidecars; each is served under its file stem
        #[arg(long, env = "UIOT_LABELS", value_delimiter = ',')]
        labels: Vec<PathBuf>,
        /// Study artifacts directory (defaults to --output-dir)
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long, env = "UIOT_ENCODER")]
        encoder: Option<String>,
        #[arg(long)]
        pad_square: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the manifest and embedding blocks
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub names: usize,
    #[arg(long, default_value_t = 1)]
    pub versions: usize,
    #[arg(long, default_value_t = 35)]
    pub screenshots: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, value_delimiter = ',', default_value = "finance,travel,music")]
    pub categories: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Defaults to `<output-dir>/sweep.csv`
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub chunk_size: usize,
    /// Stop after this many chunks
    #[arg(long)]
    pub max_chunks: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Study {
    /// Compare same-group and different-group pair distances
    PairGrouping {
        #[arg(long, value_parser = ["name", "category", "platform"])]
        criterion: String,
        /// Pair table; computed (or resumed) first when incomplete
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Uniformity change under screenshot replacement
    DeltaLu {
        #[arg(long, value_parser = ["random", "heldout"])]
        mode: String,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        held_out: usize,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
    },
}
