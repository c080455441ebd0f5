//! The `diastereo` command line: one subcommand per stage plus `pipeline`.
//!
//! Human-readable results go to stdout. Failures and warnings go to stderr as
//! one JSON object per line. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::plot::Colormap;
use crate::triangulate::Aggregator;

pub mod meta;
mod stages;

pub use meta::{meta_path, read_verified, sha256_hex, FileDigest, PipelineMeta};
pub use stages::{RectDirMeta, ReportFile};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "diastereo", version, about = "Multi-date satellite stereo pipeline")]
pub struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "DIASTEREO_THREADS", default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rectify an image pair into a unipolar stereo pair.
    Rectify(RectifyArgs),
    /// Ground-truth disparity of a rectified pair from a reference DSM.
    GtDisp(GtDispArgs),
    /// Dense block matching of a rectified pair.
    Match(MatchArgs),
    /// Bring an externally computed disparity map into the pipeline.
    ImportDisp(ImportDispArgs),
    /// Altitude image from a disparity map.
    Triangulate(TriangulateArgs),
    /// Ground-aligned DSM from an altitude image.
    Grid(GridArgs),
    /// Altitude errors of a DSM against a reference.
    Eval(EvalArgs),
    /// Per-AOI medians and dataset mean/std of evaluation reports.
    EvalAgg(EvalAggArgs),
    /// Label image pairs and sample a training manifest.
    Curate(CurateArgs),
    /// Render a synthetic scene with exact ground truth.
    Synth(SynthArgs),
    /// Colormapped PGM/PPM rendering of a raster band.
    Plot(PlotArgs),
    /// rectify, disparity, triangulate, grid and eval in one run.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RectifyArgs {
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long)]
    pub rpc_left: PathBuf,
    #[arg(long)]
    pub rpc_right: PathBuf,
    /// Average scene altitude. Defaults to the median of --dsm, then to the
    /// mean RPC height offset.
    #[arg(long)]
    pub zavg: Option<f64>,
    #[arg(long)]
    pub dsm: Option<PathBuf>,
    /// Correspondences in original image coordinates (uL,vL,uR,vR,score).
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Half the altitude span of the virtual correspondence grid, meters.
    #[arg(long, default_value_t = 40.0)]
    pub half_range: f64,
    #[arg(long, default_value_t = 7)]
    pub grid_n: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GtDispArgs {
    #[arg(long)]
    pub rect_dir: PathBuf,
    #[arg(long)]
    pub dsm: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the discontinuity confidence map.
    #[arg(long)]
    pub confidence: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MatchArgs {
    #[arg(long)]
    pub rect_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub dmin: f64,
    #[arg(long, default_value_t = 128.0, allow_negative_numbers = true)]
    pub dmax: f64,
    #[arg(long, default_value_t = 9)]
    pub window: usize,
    /// Left-right consistency tolerance, pixels.
    #[arg(long, default_value_t = 1.0)]
    pub lr_tol: f64,
    #[arg(long)]
    pub no_subpixel: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ImportDispArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// The map holds u_R − u instead of u − u_R.
    #[arg(long)]
    pub negate: bool,
    /// Reject maps with both signs.
    #[arg(long)]
    pub strict_unipolar: bool,
    /// Check the map against this rectified frame.
    #[arg(long)]
    pub rect_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TriangulateArgs {
    #[arg(long)]
    pub rect_dir: PathBuf,
    #[arg(long)]
    pub disp: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Altitude search bounds; default z_avg ∓ 500 m.
    #[arg(long, allow_negative_numbers = true)]
    pub hmin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hmax: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    #[arg(long)]
    pub alt: PathBuf,
    #[arg(long)]
    pub rect_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub cell: f64,
    #[arg(long, default_value = "median")]
    pub agg: Aggregator,
    #[arg(long)]
    pub out: PathBuf,
    /// Fill holes from the nearest valid cell within this radius. For
    /// display only; do not evaluate filled DSMs.
    #[arg(long)]
    pub fill: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long)]
    pub veg: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub margin: usize,
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Defaults to the file stem of --pred.
    #[arg(long)]
    pub pair_id: Option<String>,
    #[arg(long)]
    pub aoi: Option<String>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalAggArgs {
    /// Directory searched recursively for report JSON files. Reports without
    /// an aoi_id take the name of their parent directory.
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CurateArgs {
    /// JSON array of image records (image_id, aoi_id, acq_date, image_path).
    #[arg(long)]
    pub meta: PathBuf,
    /// Holds `<id1>_<id2>.csv` match files; pairs without one are matched
    /// with the built-in matcher.
    #[arg(long)]
    pub matches_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub dia_per_aoi: usize,
    #[arg(long, default_value_t = 5)]
    pub sync_per_aoi: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30.0)]
    pub gap_thresh: f64,
    #[arg(long, default_value_t = 40.0)]
    pub match_thresh: f64,
    #[arg(long)]
    pub matches_per_mpx: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Box,
    Flat,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Scene description (JSON).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Texture decorrelation between views, for presets.
    #[arg(long, default_value_t = 0.0)]
    pub decorrelation: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "turbo")]
    pub cmap: Colormap,
    /// `auto` (2nd–98th percentile) or `lo,hi`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    pub range: String,
    #[arg(long, default_value_t = 0)]
    pub band: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispSource {
    /// Built-in block matcher.
    Match,
    /// External map given by --disp.
    Import,
    /// Ground truth from --dsm.
    Gt,
}

/// Every pipeline setting, as a flag or as a key of the JSON config file.
/// Keys use the flag names (`rpc-left`, `out-dir`, ...). Flags win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PipelineConfig {
    #[arg(long)]
    pub left: Option<PathBuf>,
    #[arg(long)]
    pub right: Option<PathBuf>,
    #[arg(long)]
    pub rpc_left: Option<PathBuf>,
    #[arg(long)]
    pub rpc_right: Option<PathBuf>,
    #[arg(long)]
    pub zavg: Option<f64>,
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[arg(long)]
    pub half_range: Option<f64>,
    #[arg(long)]
    pub grid_n: Option<usize>,
    #[arg(long, value_enum)]
    pub disp_source: Option<DispSource>,
    /// External disparity map, for `--disp-source import`.
    #[arg(long)]
    pub disp: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub negate: Option<bool>,
    #[arg(long, allow_negative_numbers = true)]
    pub dmin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub dmax: Option<f64>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Reference DSM for `--disp-source gt` and the default z_avg.
    #[arg(long)]
    pub dsm: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    pub hmin: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hmax: Option<f64>,
    #[arg(long)]
    pub cell: Option<f64>,
    #[arg(long)]
    pub agg: Option<Aggregator>,
    /// Reference DSM to evaluate against; no evaluation without it.
    #[arg(long = "ref")]
    #[serde(rename = "ref")]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub veg: Option<PathBuf>,
    #[arg(long)]
    pub margin: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// JSON file with any of the flags below as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: PipelineConfig,
}

#[derive(Debug)]
pub(crate) enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(Error::Io(e))
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

pub(crate) fn diagnostic(kind: &str, name: &str, message: &str) {
    let v = serde_json::json!({ kind: name, "message": message });
    eprintln!("{v}");
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                kind => {
                    diagnostic("error", "UsageError", &kind.to_string());
                    EXIT_USAGE
                }
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            diagnostic("error", "UsageError", &format!("thread pool: {e}"));
            return EXIT_USAGE;
        }
    };
    match pool.install(|| stages::execute(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            diagnostic("error", "UsageError", &msg);
            EXIT_USAGE
        }
        Err(Failure::Data(e)) => {
            diagnostic("error", e.name(), &e.to_string());
            exit_code(&e)
        }
    }
}
