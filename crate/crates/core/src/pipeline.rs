//! Stage orchestration: ingest → stitch → georef → kmz.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! mosaics/mosaic_00000.png ...
//! manifest.jsonl            one MosaicRecord per mosaic
//! quads.jsonl               one QuadRecord per mosaic
//! transect_<slug>_batch_000.kmz ...
//! ```
//!
//! The stitch stage stops at `manifest.jsonl`; the georef stage resumes from
//! it, so running them separately produces the same files as [`run_pipeline`].

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::georef::{mosaic_quad, GeoConfig, GeorefError, OffsetMode};
use crate::ingest::{parse_gps_track, Frame, FrameSequence, GeoTrack, IngestError, StripGeometry};
use crate::kmz::{batch_ranges, kmz_file_name, slugify, write_kmz, KmzError, OverlayEntry, DEFAULT_BATCH_SIZE};
use crate::manifest::{
    mosaic_file_name, read_mosaic_manifest, write_jsonl, ManifestError, MosaicRecord, QuadRecord,
};
use crate::registration::{Correlator, CorrelationKind, RegistrationError, Shift};
use crate::stitcher::{MosaicCanvas, StitchConfig, StitchError, StitchStats, Stitcher};
use crate::synth::{
    brute_force_correlation, read_ground_truth, score_recovery, RecoveryReport, SynthError,
    ORACLE_MAX_SIDE,
};

pub const MOSAICS_DIR: &str = "mosaics";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const QUADS_FILE: &str = "quads.jsonl";
const PREFETCH_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[ingest] {0}")]
    Ingest(#[from] IngestError),
    #[error("[stitch] {0}")]
    Stitch(StitchError),
    #[error("[georef] mosaic {index}: {source}")]
    Georef {
        index: usize,
        #[source]
        source: GeorefError,
    },
    #[error("[kmz] {0}")]
    Kmz(#[from] KmzError),
    #[error("[manifest] {0}")]
    Manifest(#[from] ManifestError),
    #[error("[synth] {0}")]
    Synth(#[from] SynthError),
    #[error("[verify] {0}")]
    Verify(String),
    #[error("[io] {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl From<StitchError> for PipelineError {
    fn from(e: StitchError) -> Self {
        match e {
            StitchError::Ingest(e) => PipelineError::Ingest(e),
            other => PipelineError::Stitch(other),
        }
    }
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Ingest(_) => "ingest",
            PipelineError::Stitch(_) => "stitch",
            PipelineError::Georef { .. } => "georef",
            PipelineError::Kmz(_) => "kmz",
            PipelineError::Manifest(_) => "manifest",
            PipelineError::Synth(_) => "synth",
            PipelineError::Verify(_) => "verify",
            PipelineError::Io { .. } => "io",
        }
    }

    /// Process exit code for this failure. 1 is left for unclassified errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Ingest(_) => 3,
            PipelineError::Stitch(_) => 4,
            PipelineError::Georef { .. } => 5,
            PipelineError::Kmz(_) => 6,
            PipelineError::Manifest(_) => 7,
            PipelineError::Synth(_) => 8,
            PipelineError::Verify(_) => 9,
            PipelineError::Io { .. } => 10,
        }
    }
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> PipelineError {
    let path = path.to_path_buf();
    move |source| PipelineError::Io { path, source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Transect name used in archive file names; defaults to the frame directory name.
    pub name: Option<String>,
    pub frames_dir: PathBuf,
    pub gps_csv: PathBuf,
    pub fps: f64,
    pub mosaic_time: f64,
    pub strip_fraction: f64,
    /// Seconds added to frame timestamps to reach GPS time.
    pub epoch_offset: f64,
    pub mosaic_width_m: f64,
    pub batch_size: usize,
    pub offset_mode: OffsetMode,
    pub earth_radius_m: f64,
    pub out_dir: PathBuf,
    pub dump_surfaces: Option<PathBuf>,
    /// Ground-truth JSON for `verify`.
    pub ground_truth: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let geo = GeoConfig::default();
        let stitch = StitchConfig::default();
        Self {
            name: None,
            frames_dir: PathBuf::from("frames"),
            gps_csv: PathBuf::from("gps.csv"),
            fps: stitch.fps,
            mosaic_time: stitch.mosaic_time,
            strip_fraction: stitch.strip_fraction,
            epoch_offset: 0.0,
            mosaic_width_m: geo.mosaic_width_m,
            batch_size: DEFAULT_BATCH_SIZE,
            offset_mode: geo.offset_mode,
            earth_radius_m: geo.earth_radius_m,
            out_dir: PathBuf::from("out"),
            dump_surfaces: None,
            ground_truth: None,
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML config. Relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_error(path))?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.frames_dir);
        resolve(&mut config.gps_csv);
        resolve(&mut config.out_dir);
        if let Some(p) = config.dump_surfaces.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.ground_truth.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps must be positive, got {}", self.fps));
        }
        if !(self.mosaic_time > 0.0 && self.mosaic_time.is_finite()) {
            return bad(format!("mosaic_time must be positive, got {}", self.mosaic_time));
        }
        if !(self.strip_fraction > 0.0 && self.strip_fraction <= 1.0) {
            return bad(format!("strip_fraction must be in (0, 1], got {}", self.strip_fraction));
        }
        if !self.epoch_offset.is_finite() {
            return bad("epoch_offset must be finite".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        self.geo_config()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn stitch_config(&self) -> StitchConfig {
        StitchConfig {
            fps: self.fps,
            mosaic_time: self.mosaic_time,
            strip_fraction: self.strip_fraction,
            dump_surfaces: self.dump_surfaces.clone(),
            ..StitchConfig::default()
        }
    }

    pub fn geo_config(&self) -> GeoConfig {
        GeoConfig {
            earth_radius_m: self.earth_radius_m,
            mosaic_width_m: self.mosaic_width_m,
            offset_mode: self.offset_mode,
        }
    }

    pub fn slug(&self) -> String {
        let name = self.name.clone().unwrap_or_else(|| {
            self.frames_dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        slugify(&name)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join(MANIFEST_FILE)
    }

    pub fn quads_path(&self) -> PathBuf {
        self.out_dir.join(QUADS_FILE)
    }

    pub fn load_track(&self) -> Result<GeoTrack, PipelineError> {
        Ok(parse_gps_track(&self.gps_csv)?.with_epoch_offset(self.epoch_offset))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub frames_in: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub mosaics: usize,
    pub archives: usize,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct StitchOutput {
    pub records: Vec<MosaicRecord>,
    pub stats: StitchStats,
}

#[derive(Debug, Clone)]
pub struct GeorefOutput {
    pub quads: Vec<QuadRecord>,
    pub archives: Vec<PathBuf>,
}

fn remove_matching(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<(), PipelineError> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(io_error(dir)(e)),
    };
    for entry in entries {
        let entry = entry.map_err(io_error(dir))?;
        let name = entry.file_name();
        if !keep(&name.to_string_lossy()) {
            fs::remove_file(entry.path()).map_err(io_error(&entry.path()))?;
        }
    }
    Ok(())
}

fn encode_pending(out_dir: &Path, pending: &mut Vec<MosaicCanvas>, records: &mut Vec<MosaicRecord>) -> Result<(), PipelineError> {
    let encoded: Vec<MosaicRecord> = pending
        .par_iter()
        .map(|canvas| {
            let image = format!("{MOSAICS_DIR}/{}", mosaic_file_name(canvas.index));
            let path = out_dir.join(&image);
            canvas
                .to_image()
                .save(&path)
                .map_err(|source| PipelineError::Stitch(StitchError::Image { path, source }))?;
            log::info!(
                index = canvas.index,
                height = canvas.height(),
                width = canvas.width(),
                accepted = canvas.accepted,
                rejected = canvas.rejected;
                "mosaic written"
            );
            Ok(MosaicRecord::from_canvas(canvas, image))
        })
        .collect::<Result<_, PipelineError>>()?;
    records.extend(encoded);
    pending.clear();
    Ok(())
}

/// Stitches a frame stream and writes mosaics plus `manifest.jsonl` under `out_dir`.
/// Closed canvases are PNG-encoded in parallel while stitching continues in order.
pub fn stitch_frames<I>(frames: I, config: &PipelineConfig) -> Result<StitchOutput, PipelineError>
where
    I: IntoIterator<Item = Result<Frame, IngestError>>,
{
    config.validate()?;
    let mosaics_dir = config.out_dir.join(MOSAICS_DIR);
    fs::create_dir_all(&mosaics_dir).map_err(io_error(&mosaics_dir))?;
    remove_matching(&mosaics_dir, |n| !(n.starts_with("mosaic_") && n.ends_with(".png")))?;

    let mut stitcher = Stitcher::new(config.stitch_config())?;
    let batch = rayon::current_num_threads().max(1) * 2;
    let mut pending = Vec::new();
    let mut records = Vec::new();
    for frame in frames {
        if let Some(canvas) = stitcher.push(&frame?)? {
            pending.push(canvas);
            if pending.len() >= batch {
                encode_pending(&config.out_dir, &mut pending, &mut records)?;
            }
        }
    }
    if let Some(canvas) = stitcher.finish()? {
        pending.push(canvas);
    }
    encode_pending(&config.out_dir, &mut pending, &mut records)?;
    write_jsonl(&config.manifest_path(), &records)?;

    let stats = stitcher.stats();
    log::info!(
        frames_in = stats.frames_in,
        accepted = stats.accepted,
        rejected = stats.rejected,
        skipped = stats.skipped,
        mosaics = stats.mosaics;
        "stitch complete"
    );
    Ok(StitchOutput { records, stats })
}

pub fn open_frames(config: &PipelineConfig) -> Result<FrameSequence, PipelineError> {
    Ok(FrameSequence::open(&config.frames_dir, config.fps)?)
}

/// Stitch-only entry point: frames directory in, mosaics and manifest out.
pub fn stitch_stage(config: &PipelineConfig) -> Result<StitchOutput, PipelineError> {
    let frames = open_frames(config)?;
    stitch_frames(frames.prefetch(PREFETCH_DEPTH), config)
}

/// Computes quads for manifest records and writes `quads.jsonl`.
pub fn georef_records(records: &[MosaicRecord], track: &GeoTrack, config: &PipelineConfig) -> Result<Vec<QuadRecord>, PipelineError> {
    let geo = config.geo_config();
    let quads = records
        .iter()
        .map(|r| {
            mosaic_quad(r.start_time, r.end_time, track, &geo)
                .map(|q| QuadRecord::new(r, &q))
                .map_err(|source| PipelineError::Georef {
                    index: r.index,
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_jsonl(&config.quads_path(), &quads)?;
    log::info!(quads = quads.len(); "georef complete");
    Ok(quads)
}

/// Packages quads into KMZ archives of at most `batch_size` overlays.
pub fn write_archives(quads: &[QuadRecord], config: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    remove_matching(&config.out_dir, |n| !(n.starts_with("transect_") && n.ends_with(".kmz")))?;
    if quads.is_empty() {
        log::warn!("no mosaics, no archive written");
        return Ok(Vec::new());
    }
    let slug = config.slug();
    let ranges = batch_ranges(quads.len(), config.batch_size)?;
    let archives = ranges
        .into_par_iter()
        .enumerate()
        .map(|(batch, range)| {
            let chunk = &quads[range];
            let entries: Vec<OverlayEntry> = chunk
                .iter()
                .map(|q| OverlayEntry {
                    mosaic_index: q.index,
                    image_name: format!("files/{}", mosaic_file_name(q.index)),
                    quad: q.quad(),
                    draw_order: q.index as i64,
                })
                .collect();
            let images: Vec<PathBuf> = chunk.iter().map(|q| config.out_dir.join(&q.image)).collect();
            let path = config.out_dir.join(kmz_file_name(&slug, batch));
            write_kmz(&entries, &images, &path)?;
            log::info!(batch = batch, overlays = entries.len(); "archive written");
            Ok(path)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(archives)
}

/// Georef-only entry point: resumes from `manifest.jsonl`.
pub fn georef_stage(config: &PipelineConfig, track: &GeoTrack) -> Result<GeorefOutput, PipelineError> {
    config.validate()?;
    let records = read_mosaic_manifest(&config.manifest_path())?;
    let quads = georef_records(&records, track, config)?;
    let archives = write_archives(&quads, config)?;
    Ok(GeorefOutput { quads, archives })
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: &'static str, timings: &mut Vec<StageTiming>| {
        let seconds = clock.elapsed().as_secs_f64();
        log::info!(stage = stage, seconds = seconds; "stage finished");
        timings.push(StageTiming { stage, seconds });
        clock = Instant::now();
    };

    let track = config.load_track()?;
    let frames = open_frames(config)?;
    lap("ingest", &mut timings);

    let stitched = stitch_frames(frames.prefetch(PREFETCH_DEPTH), config)?;
    lap("stitch", &mut timings);

    let quads = georef_records(&stitched.records, &track, config)?;
    lap("georef", &mut timings);

    let archives = write_archives(&quads, config)?;
    lap("kmz", &mut timings);

    let s = stitched.stats;
    Ok(RunSummary {
        frames_in: s.frames_in,
        accepted: s.accepted,
        rejected: s.rejected,
        skipped: s.skipped,
        mosaics: stitched.records.len(),
        archives: archives.len(),
        timings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub kind: CorrelationKind,
    pub rows: usize,
    pub cols: usize,
    pub max_relative_difference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub recovery: RecoveryReport,
    pub oracle: Vec<OracleCheck>,
}

/// Registers every consecutive frame pair independently.
pub fn estimate_pair_shifts(frames: &FrameSequence, strip_fraction: f64) -> Result<Vec<Shift>, PipelineError> {
    let (_, height) = frames.dimensions();
    let geom = StripGeometry::new(height as usize, strip_fraction)?;
    let correlator = Correlator::new(geom.height, frames.dimensions().0 as usize);
    (1..frames.len())
        .into_par_iter()
        .map(|i| {
            let f = frames.load(i - 1)?.strip(strip_fraction)?;
            let g = frames.load(i)?.strip(strip_fraction)?;
            let result = correlator
                .spectrum(&f.pixels)
                .and_then(|fs| correlator.estimate(&fs, &correlator.spectrum(&g.pixels)?));
            match result {
                Ok(e) => Ok(e.selected),
                Err(RegistrationError::DegeneratePair) => Err(PipelineError::Verify(format!(
                    "degenerate pair at frames {} and {i}",
                    i - 1
                ))),
                Err(e) => Err(PipelineError::Stitch(e.into())),
            }
        })
        .collect()
}

/// Scores pairwise registration against a ground-truth survey and checks the
/// FFT surfaces against the brute-force oracle on a corner crop of the first pair.
pub fn verify(config: &PipelineConfig) -> Result<VerifyReport, PipelineError> {
    config.validate()?;
    let truth_path = config
        .ground_truth
        .as_ref()
        .ok_or_else(|| PipelineError::Config("verify needs ground_truth".into()))?;
    let truth = read_ground_truth(truth_path)?;
    let frames = open_frames(config)?;
    let estimates = estimate_pair_shifts(&frames, config.strip_fraction)?;
    let recovery = score_recovery(&truth.shifts, &estimates)?;

    let f = frames.load(0)?.strip(config.strip_fraction)?;
    let g = frames.load(1)?.strip(config.strip_fraction)?;
    let rows = f.height().min(ORACLE_MAX_SIDE);
    let cols = f.width().min(ORACLE_MAX_SIDE);
    let crop = |s: &crate::ingest::Strip| crate::ingest::Strip {
        source_index: s.source_index,
        pixels: crate::grid::Grid::from_fn(rows, cols, |r, c| s.pixels[(r, c)]),
    };
    let (fc, gc) = (crop(&f), crop(&g));
    let correlator = Correlator::new(rows, cols);
    let (cc, pc) = correlator
        .surfaces(&correlator.spectrum(&fc.pixels).map_err(StitchError::from)?, &correlator.spectrum(&gc.pixels).map_err(StitchError::from)?)
        .map_err(StitchError::from)?;
    let mut oracle = vec![OracleCheck {
        kind: CorrelationKind::Cross,
        rows,
        cols,
        max_relative_difference: cc.relative_distance(&brute_force_correlation(&fc, &gc, CorrelationKind::Cross)?),
    }];
    if let Some(pc) = pc {
        oracle.push(OracleCheck {
            kind: CorrelationKind::Phase,
            rows,
            cols,
            max_relative_difference: pc.relative_distance(&brute_force_correlation(&fc, &gc, CorrelationKind::Phase)?),
        });
    }
    log::info!(
        exact_rate = recovery.exact_rate,
        failures = recovery.failures.len();
        "verify complete"
    );
    Ok(VerifyReport { recovery, oracle })
}
