use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;
use vai_core::detector_eval::{self, eval_table, read_predictions};
use vai_core::pipeline::{build_report, score_manifest, Manifest, RunConfig};
use vai_core::raster::{analysis_raster, decode_image, encode_png, to_grayscale};
use vai_core::report::{self, ScatterMatrixSpec, ScoreReport};
use vai_core::{Error, Result};

mod config;

use config::{resolve_thresholds, TuningArgs};

#[derive(Parser)]
#[command(
    name = "vai",
    version,
    about = "Visual AI Index: score generated-image cohorts and evaluate fake-image detectors",
    after_help = "Logging goes to stderr (set RUST_LOG to change the level). Exit status: 0 success, 1 some rows skipped, 2 fatal."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute per-image metrics and cohort scores; write scores.json, scores.csv, metrics.csv, scatter.svg
    Score(ScoreArgs),
    /// Like `score`, then print the ranking table (scores.csv) to stdout
    Rank(ScoreArgs),
    /// Per (detector, cohort) accuracy, recall, precision; write eval.csv and accuracy_matrix.csv
    Eval(EvalArgs),
    /// Write the LBP code map of one image as a grayscale PNG
    Lbp(LbpArgs),
}

fn parse_cohort(s: &str) -> std::result::Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        _ => Err(format!("expected NAME=DIR, got `{s}`")),
    }
}

#[derive(Args)]
struct InputArgs {
    /// CSV manifest with columns path,cohort[,label]; relative paths resolve against its directory
    #[arg(long, value_name = "FILE", conflicts_with_all = ["cohort", "real"], required_unless_present_any = ["cohort", "real"])]
    manifest: Option<PathBuf>,
    /// Directory of generated images forming one cohort; repeatable
    #[arg(long, value_name = "NAME=DIR", value_parser = parse_cohort)]
    cohort: Vec<(String, PathBuf)>,
    /// Directory of real images, scored as the cohort `real`
    #[arg(long, value_name = "DIR")]
    real: Option<PathBuf>,
}

impl InputArgs {
    fn load(&self) -> Result<Manifest> {
        match &self.manifest {
            Some(path) => Manifest::read_csv(path),
            None => Manifest::from_dirs(&self.cohort, self.real.as_deref()),
        }
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Also write lbp/<cohort>/<image>.png for every scored image
    #[arg(long)]
    lbp_images: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction CSV with columns image_id,truth,score,detector,cohort
    #[arg(long, visible_alias = "manifest", value_name = "FILE")]
    predictions: PathBuf,
    /// Score at or above which an image is called fake [default: 0.5]
    #[arg(long, value_name = "F", allow_hyphen_values = true)]
    threshold: Option<f64>,
    /// TOML file; reads `out_dir` and an `[eval]` table (`default`, `per_detector`)
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [default: vai-out]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LbpArgs {
    /// Input PNG or JPEG
    image: PathBuf,
    /// Output PNG, (width-2) x (height-2)
    out: PathBuf,
    /// Resize before coding, as in `score` (N or `native`)
    #[arg(long, value_name = "N|native", default_value = "native")]
    resize: String,
}

/// `SOURCE_DATE_EPOCH` when set (reproducible builds), otherwise now.
fn timestamp() -> Result<String> {
    let at = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(s) => {
            let secs: i64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Argument(format!("SOURCE_DATE_EPOCH must be an integer, got `{s}`")))?;
            OffsetDateTime::from_unix_timestamp(secs).map_err(|e| Error::Argument(e.to_string()))?
        }
        Err(_) => OffsetDateTime::now_utc(),
    };
    at.format(&Rfc3339).map_err(|e| Error::Argument(e.to_string()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn lbp_png(path: &Path, resize: Option<usize>) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = decode_image(&bytes)?;
    let img = analysis_raster(&img, resize)?;
    encode_png(&report::lbp_visualization(&to_grayscale(&img))?)
}

fn lbp_file_name(image_id: &str) -> String {
    let stem = Path::new(image_id).with_extension("");
    let flat: String = stem
        .to_string_lossy()
        .chars()
        .map(|c| if matches!(c, '/' | '\\' | ':') { '_' } else { c })
        .collect();
    format!("{flat}.png")
}

fn write_report(report: &ScoreReport, out: &Path) -> Result<()> {
    write_file(&out.join("scores.json"), &report::emit_json(report)?)?;
    write_file(&out.join("scores.csv"), &report::emit_csv(report)?)?;
    write_file(&out.join("metrics.csv"), &report::emit_metrics_csv(report)?)?;
    let svg = report::scatter_matrix_svg(&ScatterMatrixSpec::from_report(report))?;
    write_file(&out.join("scatter.svg"), &svg)
}

fn run_score(args: &ScoreArgs, print_table: bool) -> Result<ExitCode> {
    let cfg: RunConfig = args.tuning.resolve()?;
    let manifest = args.input.load()?;
    if manifest.rows.is_empty() {
        return Err(Error::EmptyInput("manifest lists no images"));
    }
    log::info!(
        "scoring {} images on {} workers",
        manifest.rows.len(),
        cfg.workers.map_or_else(|| "all".to_string(), |n| n.to_string())
    );
    let run = score_manifest(&manifest, &cfg.metrics, cfg.workers)?;
    let report = build_report(&run, &cfg, &timestamp()?)?;
    write_report(&report, &cfg.out_dir)?;
    if args.lbp_images {
        for img in &run.images {
            let png = lbp_png(&img.row.path, cfg.metrics.resize)?;
            let path = cfg.out_dir.join("lbp").join(&img.row.cohort).join(lbp_file_name(&img.row.image_id));
            write_file(&path, &png)?;
        }
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    log::info!("{} images scored, {} skipped", run.images.len(), run.skipped.len());
    if print_table {
        io::stdout()
            .write_all(&report::emit_csv(&report)?)
            .map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(if run.skipped.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run_eval(args: &EvalArgs) -> Result<ExitCode> {
    let (thresholds, file_out) = resolve_thresholds(args.config.as_deref(), args.threshold)?;
    let out = args
        .out
        .clone()
        .or(file_out)
        .unwrap_or_else(|| RunConfig::default().out_dir);
    let file = fs::File::open(&args.predictions).map_err(|e| Error::io(&args.predictions, e))?;
    let records = read_predictions(io::BufReader::new(file))?;
    let table = eval_table(&records, &[], &[], &thresholds)?;
    let mut eval_csv = Vec::new();
    detector_eval::write_eval_csv(&table, &mut eval_csv)?;
    let mut matrix = Vec::new();
    detector_eval::write_accuracy_matrix_csv(&table, &mut matrix)?;
    write_file(&out.join("eval.csv"), &eval_csv)?;
    write_file(&out.join("accuracy_matrix.csv"), &matrix)?;
    io::stdout().write_all(&eval_csv).map_err(|e| Error::io("<stdout>", e))?;
    Ok(ExitCode::SUCCESS)
}

fn run_lbp(args: &LbpArgs) -> Result<ExitCode> {
    let resize = if args.resize.eq_ignore_ascii_case("native") {
        None
    } else {
        match args.resize.parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => return Err(Error::Argument(format!("bad --resize `{}`", args.resize))),
        }
    };
    write_file(&args.out, &lbp_png(&args.image, resize)?)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Score(a) => run_score(a, false),
        Command::Rank(a) => run_score(a, true),
        Command::Eval(a) => run_eval(a),
        Command::Lbp(a) => run_lbp(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(2)
        }
    }
}
