mod logger;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use corstitch::georef::OffsetMode;
use corstitch::pipeline::{self, PipelineConfig, PipelineError};
use corstitch::synth::{generate_survey, write_survey, ShiftProfile, SurveyParams};

#[derive(Parser)]
#[command(name = "corstitch", version, about = "Stitch and georeference towed-camera video transects")]
struct Cli {
    /// error, warn, info, debug, trace or off. Logs go to stderr as JSON lines.
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// ingest, stitch, georef and package KMZ archives
    Run(PipelineArgs),
    /// stop after writing mosaics and manifest.jsonl
    Stitch(PipelineArgs),
    /// resume from manifest.jsonl: quads and KMZ archives
    Georef(PipelineArgs),
    /// render a synthetic survey with ground truth
    Synth(SynthArgs),
    /// score pairwise registration against a survey's ground truth
    Verify(VerifyArgs),
}

#[derive(Args, Clone, Default)]
struct PipelineArgs {
    /// TOML config; relative paths inside it resolve against its directory
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    gps: Option<PathBuf>,
    #[arg(long)]
    fps: Option<f64>,
    #[arg(long)]
    mosaic_time: Option<f64>,
    #[arg(long)]
    strip_fraction: Option<f64>,
    #[arg(long)]
    width_m: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// literal | heading
    #[arg(long)]
    offset_mode: Option<OffsetMode>,
    /// seconds added to frame timestamps to reach GPS time
    #[arg(long, allow_hyphen_values = true)]
    epoch_offset: Option<f64>,
    #[arg(long)]
    name: Option<String>,
    /// worker thread cap
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// write every CC/PC surface as a grayscale PNG here
    #[arg(long)]
    dump_surfaces: Option<PathBuf>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($field:ident, $arg:expr) => {
                if let Some(v) = $arg.clone() {
                    c.$field = v;
                }
            };
        }
        set!(frames_dir, self.frames);
        set!(gps_csv, self.gps);
        set!(fps, self.fps);
        set!(mosaic_time, self.mosaic_time);
        set!(strip_fraction, self.strip_fraction);
        set!(mosaic_width_m, self.width_m);
        set!(batch_size, self.batch);
        set!(offset_mode, self.offset_mode);
        set!(epoch_offset, self.epoch_offset);
        set!(out_dir, self.out);
        if self.name.is_some() {
            c.name = self.name.clone();
        }
        if self.dump_surfaces.is_some() {
            c.dump_surfaces = self.dump_surfaces.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// output directory for frames/, gps.csv, ground_truth.json, survey.toml
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 150)]
    frames: usize,
    #[arg(long, default_value_t = 320)]
    width: u32,
    #[arg(long, default_value_t = 240)]
    height: u32,
    /// constant scene shift per frame
    #[arg(long, default_value_t = 0, allow_hyphen_values = true)]
    dx: i64,
    #[arg(long, default_value_t = -4, allow_hyphen_values = true)]
    dy: i64,
    /// draw both shift components uniformly from [-N, N] instead
    #[arg(long)]
    random_max: Option<i64>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0.0)]
    sand: f64,
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    #[arg(long, default_value_t = 0.0)]
    illumination: f64,
    #[arg(long, default_value_t = 0.01)]
    meters_per_pixel: f64,
    #[arg(long, default_value_t = 30.0)]
    heading: f64,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
    #[arg(long, default_value_t = 0.2)]
    strip_fraction: f64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// ground_truth.json; defaults to the config's ground_truth entry
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    /// exit nonzero when the exact recovery rate is below this
    #[arg(long)]
    min_exact_rate: Option<f64>,
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn print_summary(summary: &pipeline::RunSummary) {
    println!("frames in: {}", summary.frames_in);
    println!("accepted: {}", summary.accepted);
    println!("rejected: {}", summary.rejected);
    println!("skipped: {}", summary.skipped);
    println!("mosaics: {}", summary.mosaics);
    println!("archives: {}", summary.archives);
    for t in &summary.timings {
        println!("time {}: {:.3} s", t.stage, t.seconds);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            set_threads(args.threads)?;
            let summary = pipeline::run_pipeline(&args.config()?)?;
            print_summary(&summary);
        }
        Command::Stitch(args) => {
            set_threads(args.threads)?;
            let config = args.config()?;
            let out = pipeline::stitch_stage(&config)?;
            println!("frames in: {}", out.stats.frames_in);
            println!("accepted: {}", out.stats.accepted);
            println!("rejected: {}", out.stats.rejected);
            println!("skipped: {}", out.stats.skipped);
            println!("mosaics: {}", out.records.len());
            println!("manifest: {}", config.manifest_path().display());
        }
        Command::Georef(args) => {
            set_threads(args.threads)?;
            let config = args.config()?;
            let track = config.load_track()?;
            let out = pipeline::georef_stage(&config, &track)?;
            println!("mosaics: {}", out.quads.len());
            println!("archives: {}", out.archives.len());
            for a in &out.archives {
                println!("archive: {}", a.display());
            }
        }
        Command::Synth(a) => {
            set_threads(a.threads)?;
            let params = SurveyParams {
                frame_count: a.frames,
                frame_width: a.width,
                frame_height: a.height,
                shift_profile: match a.random_max {
                    Some(max_abs) => ShiftProfile::Random { max_abs },
                    None => ShiftProfile::Constant { dx: a.dx, dy: a.dy },
                },
                noise_sigma: a.noise,
                sand_fraction: a.sand,
                blur_sigma: a.blur,
                illumination: a.illumination,
                meters_per_pixel: a.meters_per_pixel,
                heading_deg: a.heading,
                fps: a.fps,
                strip_fraction: a.strip_fraction,
                ..SurveyParams::default()
            };
            let survey = generate_survey(a.seed, &params).map_err(PipelineError::from)?;
            let files = write_survey(&survey, &a.out).map_err(PipelineError::from)?;
            log::info!(frames = survey.frame_count(); "survey written");
            println!("frames: {}", files.frames_dir.display());
            println!("gps: {}", files.gps_csv.display());
            println!("ground truth: {}", files.ground_truth.display());
            println!("config: {}", files.config.display());
        }
        Command::Verify(v) => {
            set_threads(v.pipeline.threads)?;
            let mut config = v.pipeline.config()?;
            if v.ground_truth.is_some() {
                config.ground_truth = v.ground_truth.clone();
            }
            let report = pipeline::verify(&config)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if let Some(min) = v.min_exact_rate {
                if report.recovery.exact_rate < min {
                    return Err(PipelineError::Verify(format!(
                        "exact rate {} below {min}",
                        report.recovery.exact_rate
                    ))
                    .into());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(level) = logger::level_from_name(&cli.log_level) else {
        eprintln!("error: unknown log level {:?}", cli.log_level);
        return ExitCode::from(2);
    };
    logger::init(level);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // pipeline errors already render their causes
            let (code, stage, msg) = match e.downcast_ref::<PipelineError>() {
                Some(p) => (p.exit_code(), p.stage(), p.to_string()),
                None => (1, "cli", format!("{e:#}")),
            };
            if log::log_enabled!(log::Level::Error) {
                log::error!(stage = stage, code = code; "{msg}");
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code as u8)
        }
    }
}
