use clap::{Args, Parser, Subcommand, ValueEnum};
use doi_core::config::Overlay;
use doi_core::search::NoiseMatch;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "doi",
    version,
    about = "Change-mask fusion by degree-of-ill-posedness"
)]
pub struct Cli {
    /// TOML settings file; its values override the environment.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads (default: one per logical core).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a copy-paste synthetic change dataset.
    Synth(SynthArgs),
    /// Run change detection and DoI fusion over a pair manifest.
    Detect(DetectArgs),
    /// Score predicted masks against ground truth.
    Eval(EvalArgs),
    /// Print the lost-and-found table of labelled change components.
    ListObjects(ListArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// COCO-style instance annotation JSON.
    #[arg(long, value_name = "FILE")]
    pub bank: PathBuf,
    /// Directory holding the bank's images (default: the JSON's directory).
    #[arg(long, value_name = "DIR")]
    pub bank_images: Option<PathBuf>,
    /// JSON-lines background manifest of `{id, path}` objects.
    #[arg(long, value_name = "FILE")]
    pub backgrounds: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1, value_name = "K")]
    pub objects_per_sample: usize,
    /// Smallest pasted longest side, as a fraction of the background's shorter side.
    #[arg(long)]
    pub scale_min: Option<f64>,
    #[arg(long)]
    pub scale_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseMatchArg {
    WholeWord,
    Substring,
}

impl From<NoiseMatchArg> for NoiseMatch {
    fn from(v: NoiseMatchArg) -> Self {
        match v {
            NoiseMatchArg::WholeWord => NoiseMatch::WholeWord,
            NoiseMatchArg::Substring => NoiseMatch::Substring,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// JSON-lines manifest of `{pair_id, ref_path, live_path, gt_path?, dataset_id}`.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Serve model responses from a fixture directory.
    #[arg(long, value_name = "DIR", conflicts_with = "backend_url")]
    pub fixtures: Option<PathBuf>,
    /// Base URL of an HTTP model backend.
    #[arg(long, value_name = "URL")]
    pub backend_url: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub doi_lower: Option<f64>,
    #[arg(long)]
    pub doi_upper: Option<f64>,
    #[arg(long, value_name = "N")]
    pub dilate_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub noise_match: Option<NoiseMatchArg>,
    #[arg(long)]
    pub confidence_floor: Option<f64>,
    #[arg(long, value_name = "SECS")]
    pub timeout_secs: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Skip object search and fusion; outputs are the thresholded base masks.
    #[arg(long)]
    pub no_ovs: bool,
    /// Acknowledge that image pairs are already registered.
    #[arg(long)]
    pub assume_aligned: bool,
    /// Store per-stage timings in run records (makes them non-reproducible).
    #[arg(long)]
    pub record_timing: bool,
    /// Stop at the first failing pair.
    #[arg(long)]
    pub fail_fast: bool,
}

impl DetectArgs {
    pub fn overlay(&self) -> Overlay {
        let mut o = Overlay {
            threshold: self.threshold,
            ..Default::default()
        };
        o.doi.lower = self.doi_lower;
        o.doi.upper = self.doi_upper;
        o.search.dilation_iterations = self.dilate_iters;
        o.search.noise_match = self.noise_match.map(Into::into);
        o.search.confidence_floor = self.confidence_floor;
        o.backend.url = self.backend_url.clone();
        o.backend.fixtures = self.fixtures.clone();
        o.backend.timeout_secs = self.timeout_secs;
        o.backend.retries = self.retries;
        o
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pair manifest; every entry needs a `gt_path`.
    #[arg(long, value_name = "FILE")]
    pub pairs: PathBuf,
    /// Prediction directory laid out as `<dir>/<pair_id>/<mask>`.
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    #[arg(long, default_value = "fused.png")]
    pub mask: String,
    /// Second prediction set to compare against (e.g. a `--no-ovs` run).
    #[arg(long, value_name = "DIR")]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value = "base.png")]
    pub baseline_mask: String,
    /// Write the JSON report here.
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ListArgs {
    /// Output directory of a `detect` run.
    #[arg(long, value_name = "DIR")]
    pub runs: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
