//! Synthetic seafloor surveys with known ground truth, plus the brute-force
//! correlation oracle used to check the FFT path.
//!
//! A survey is a toroidal texture (periodic multi-octave value noise in a
//! green-shifted palette, optionally with bright sand patches) swept by a
//! camera along an integer pixel path. The texture is exactly as wide as a
//! frame, so horizontal motion is a true circular shift. Frames are crops of
//! the texture followed by degradations in a fixed order: along-track blur,
//! camera-fixed illumination falloff, additive Gaussian noise, 8-bit
//! quantization. Each frame draws its noise from its own seeded stream, so
//! output does not depend on thread count.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::georef::{geodesic_offset, GeoConfig, OffsetMode};
use crate::grid::Grid;
use crate::ingest::{
    write_frame, write_gps_track, Frame, GeoFix, GeoTrack, IngestError, Strip, StripGeometry,
};
use crate::registration::{CorrelationKind, CorrelationSurface, Shift};

/// Largest side accepted by [`brute_force_correlation`].
pub const ORACLE_MAX_SIDE: usize = 32;

/// 2024-01-01T00:00:00Z
pub const DEFAULT_GPS_START: f64 = 1_704_067_200.0;

/// Amplitude ratio between successive reef octaves. Close to 1 keeps fine
/// detail strong, like coral rubble, so the texture decorrelates within a few pixels.
pub const REEF_PERSISTENCE: f64 = 0.9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("shift ({dx}, {dy}) at pair {pair} exceeds the registrable range ±{limit}")]
    ShiftOutOfRange { pair: usize, dx: i64, dy: i64, limit: i64 },
    #[error("oracle input {rows}x{cols} exceeds {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE}")]
    TooLarge { rows: usize, cols: usize },
    #[error("oracle inputs differ in size")]
    DimensionMismatch,
    #[error("degenerate pair")]
    DegeneratePair,
    #[error("{estimated} estimates for {truth} ground-truth pairs")]
    LengthMismatch { truth: usize, estimated: usize },
    #[error("invalid survey parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Per-pair camera motion, expressed as the scene shift between frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftProfile {
    Constant { dx: i64, dy: i64 },
    /// Both components uniform in `[-max_abs, max_abs]`.
    Random { max_abs: i64 },
    /// Explicit shifts, cycled if shorter than the survey.
    Sequence { shifts: Vec<(i64, i64)> },
}

impl Default for ShiftProfile {
    fn default() -> Self {
        ShiftProfile::Constant { dx: 0, dy: -4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurveyParams {
    pub frame_count: usize,
    pub frame_width: u32,
    pub frame_height: u32,
    pub shift_profile: ShiftProfile,
    /// Standard deviation of additive noise, in 8-bit intensity units.
    pub noise_sigma: f64,
    /// Fraction of the seafloor covered by bright sand.
    pub sand_fraction: f64,
    /// Along-track Gaussian blur, pixels.
    pub blur_sigma: f64,
    /// Strength of a camera-fixed radial brightness falloff (0 disables).
    pub illumination: f64,
    pub meters_per_pixel: f64,
    pub fps: f64,
    pub strip_fraction: f64,
    pub heading_deg: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub gps_rate_hz: f64,
    /// UTC seconds of frame 0.
    pub gps_start: f64,
    /// Lattice spacing of the coarsest noise octave, pixels.
    pub feature_size: f64,
}

impl Default for SurveyParams {
    fn default() -> Self {
        Self {
            frame_count: 150,
            frame_width: 320,
            frame_height: 240,
            shift_profile: ShiftProfile::default(),
            noise_sigma: 0.0,
            sand_fraction: 0.0,
            blur_sigma: 0.0,
            illumination: 0.0,
            meters_per_pixel: 0.01,
            fps: 30.0,
            strip_fraction: 0.2,
            heading_deg: 30.0,
            origin_lat: 13.8,
            origin_lon: 120.6,
            gps_rate_hz: 1.0,
            gps_start: DEFAULT_GPS_START,
            feature_size: 32.0,
        }
    }
}

impl SurveyParams {
    pub fn strip_geometry(&self) -> Result<StripGeometry, SynthError> {
        Ok(StripGeometry::new(
            self.frame_height as usize,
            self.strip_fraction,
        )?)
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidParams(m.to_string()));
        if self.frame_count < 2 {
            return bad("frame_count must be at least 2");
        }
        if self.frame_width < 16 || self.frame_height < 16 {
            return bad("frames must be at least 16x16");
        }
        if !(self.fps > 0.0) || !(self.meters_per_pixel > 0.0) || !(self.gps_rate_hz > 0.0) {
            return bad("fps, meters_per_pixel and gps_rate_hz must be positive");
        }
        if !(0.0..=1.0).contains(&self.sand_fraction) {
            return bad("sand_fraction must be in [0, 1]");
        }
        if self.noise_sigma < 0.0 || self.blur_sigma < 0.0 || self.illumination < 0.0 {
            return bad("noise_sigma, blur_sigma and illumination must be non-negative");
        }
        if !(self.feature_size >= 2.0) {
            return bad("feature_size must be at least 2");
        }
        Ok(())
    }
}

/// Everything needed to score a reconstruction, as written to `ground_truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub params: SurveyParams,
    pub strip_top: usize,
    pub strip_height: usize,
    /// Camera position (texture column, texture row) per frame.
    pub positions: Vec<(i64, i64)>,
    /// True `(dx, dy)` between consecutive frames; `len = frame_count - 1`.
    pub shifts: Vec<(i64, i64)>,
    /// Geographic camera position at each frame time.
    pub fixes: Vec<GeoFix>,
    /// Seconds to add to frame timestamps to reach GPS time.
    pub epoch_offset: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticSurvey {
    pub truth: GroundTruth,
    pub texture: RgbImage,
    pub track: GeoTrack,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Periodic multi-octave value noise on a `width × height` torus, normalized to [0, 1].
fn value_noise(rng: &mut ChaCha8Rng, width: usize, height: usize, base_cell: f64, octaves: usize, persistence: f64) -> Grid {
    let mut acc = Grid::zeros(height, width);
    let mut amplitude = 1.0;
    let mut cell = base_cell;
    for _ in 0..octaves {
        let nx = ((width as f64 / cell).round() as usize).max(2);
        let ny = ((height as f64 / cell).round() as usize).max(2);
        let lattice: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
        let at = |i: usize, j: usize| lattice[(j % ny) * nx + (i % nx)];
        for r in 0..height {
            let fy = r as f64 * ny as f64 / height as f64;
            let j = fy.floor() as usize;
            let ty = smoothstep(fy - j as f64);
            for c in 0..width {
                let fx = c as f64 * nx as f64 / width as f64;
                let i = fx.floor() as usize;
                let tx = smoothstep(fx - i as f64);
                let top = at(i, j) * (1.0 - tx) + at(i + 1, j) * tx;
                let bottom = at(i, j + 1) * (1.0 - tx) + at(i + 1, j + 1) * tx;
                acc[(r, c)] += amplitude * (top * (1.0 - ty) + bottom * ty);
            }
        }
        amplitude *= persistence;
        cell /= 2.0;
        if cell < 1.0 {
            break;
        }
    }
    let lo = acc.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = acc.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    acc.map(|v| (v - lo) / span)
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Seafloor palette: dim, green-dominant reef; bright, low-contrast sand.
fn render_texture(rng: &mut ChaCha8Rng, width: usize, height: usize, params: &SurveyParams) -> RgbImage {
    let reef = value_noise(rng, width, height, params.feature_size, 8, REEF_PERSISTENCE);
    let sand_mask = value_noise(rng, width, height, params.feature_size * 4.0, 2, 0.5);
    let grain = value_noise(rng, width, height, 4.0, 2, 0.5);
    let threshold = if params.sand_fraction > 0.0 {
        let mut sorted = sand_mask.as_slice().to_vec();
        sorted.sort_by(f64::total_cmp);
        let k = ((1.0 - params.sand_fraction) * sorted.len() as f64) as usize;
        sorted.get(k).copied().unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        if sand_mask[(r, c)] >= threshold {
            let g = grain[(r, c)];
            Rgb([quantize(190.0 + 20.0 * g), quantize(225.0 + 20.0 * g), quantize(175.0 + 20.0 * g)])
        } else {
            let v = reef[(r, c)];
            Rgb([quantize(15.0 + 60.0 * v), quantize(30.0 + 170.0 * v), quantize(40.0 + 110.0 * v)])
        }
    })
}

fn draw_shifts(rng: &mut ChaCha8Rng, params: &SurveyParams) -> Vec<(i64, i64)> {
    let pairs = params.frame_count - 1;
    match &params.shift_profile {
        ShiftProfile::Constant { dx, dy } => vec![(*dx, *dy); pairs],
        ShiftProfile::Random { max_abs } => (0..pairs)
            .map(|_| {
                (
                    rng.random_range(-*max_abs..=*max_abs),
                    rng.random_range(-*max_abs..=*max_abs),
                )
            })
            .collect(),
        ShiftProfile::Sequence { shifts } => {
            if shifts.is_empty() {
                vec![(0, 0); pairs]
            } else {
                shifts.iter().cycle().take(pairs).copied().collect()
            }
        }
    }
}

/// `(east, north)` meters of a camera position relative to frame 0's origin.
/// Texture rows advance along the tow; texture columns increase to the tow's left.
fn path_meters(params: &SurveyParams, x: f64, y: f64) -> (f64, f64) {
    let th = params.heading_deg.to_radians();
    let along = y * params.meters_per_pixel;
    let left = x * params.meters_per_pixel;
    let east = along * th.sin() - left * th.cos();
    let north = along * th.cos() + left * th.sin();
    (east, north)
}

fn geo_at(params: &SurveyParams, time: f64, x: f64, y: f64) -> Result<GeoFix, SynthError> {
    let cfg = GeoConfig {
        offset_mode: OffsetMode::HeadingAligned,
        ..GeoConfig::default()
    };
    let (east, north) = path_meters(params, x, y);
    geodesic_offset(GeoFix::new(time, params.origin_lat, params.origin_lon), east, north, &cfg)
        .map_err(|e| SynthError::InvalidParams(e.to_string()))
}

/// Camera position at fractional frame `k`, linear between frames and
/// extrapolated past either end.
fn position_at(positions: &[(i64, i64)], k: f64) -> (f64, f64) {
    let last = positions.len() - 1;
    let i = (k.floor().max(0.0) as usize).min(last - 1);
    let w = k - i as f64;
    let (a, b) = (positions[i], positions[i + 1]);
    (
        a.0 as f64 + w * (b.0 - a.0) as f64,
        a.1 as f64 + w * (b.1 - a.1) as f64,
    )
}

pub fn generate_survey(seed: u64, params: &SurveyParams) -> Result<SyntheticSurvey, SynthError> {
    params.validate()?;
    let geom = params.strip_geometry()?;
    let limit = (geom.height / 2) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let shifts = draw_shifts(&mut rng, params);
    for (pair, &(dx, dy)) in shifts.iter().enumerate() {
        if dx.abs() > limit || dy.abs() > limit {
            return Err(SynthError::ShiftOutOfRange { pair, dx, dy, limit });
        }
    }

    // scene shift (dx, dy) means the camera moved by (-dx, -dy) over the texture
    let mut positions = Vec::with_capacity(params.frame_count);
    positions.push((0i64, 0i64));
    for &(dx, dy) in &shifts {
        let (x, y) = *positions.last().expect("nonempty");
        positions.push((x - dx, y - dy));
    }

    let width = params.frame_width as usize;
    let min_y = positions.iter().map(|p| p.1).min().expect("nonempty");
    let max_y = positions.iter().map(|p| p.1).max().expect("nonempty");
    let height = (max_y - min_y) as usize + params.frame_height as usize;
    let texture = render_texture(&mut rng, width, height, params);

    let fixes = positions
        .iter()
        .enumerate()
        .map(|(k, &(x, y))| geo_at(params, params.gps_start + k as f64 / params.fps, x as f64, y as f64))
        .collect::<Result<Vec<_>, _>>()?;

    let last_time = (params.frame_count - 1) as f64 / params.fps;
    let n_fixes = (last_time * params.gps_rate_hz).ceil() as usize + 2;
    let track_fixes = (0..n_fixes)
        .map(|j| {
            let t = j as f64 / params.gps_rate_hz;
            let (x, y) = position_at(&positions, t * params.fps);
            geo_at(params, params.gps_start + t, x, y)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let track = GeoTrack::new(track_fixes, params.gps_start)?;

    Ok(SyntheticSurvey {
        truth: GroundTruth {
            seed,
            params: params.clone(),
            strip_top: geom.top,
            strip_height: geom.height,
            positions,
            shifts,
            fixes,
            epoch_offset: params.gps_start,
        },
        texture,
        track,
    })
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

impl SyntheticSurvey {
    pub fn params(&self) -> &SurveyParams {
        &self.truth.params
    }

    pub fn frame_count(&self) -> usize {
        self.truth.positions.len()
    }

    /// Texture pixel at texture coordinates, wrapping on both axes.
    pub fn texture_pixel(&self, x: i64, y: i64) -> Rgb<u8> {
        let w = self.texture.width() as i64;
        let h = self.texture.height() as i64;
        *self
            .texture
            .get_pixel(x.rem_euclid(w) as u32, y.rem_euclid(h) as u32)
    }

    pub fn true_shifts(&self) -> Vec<Shift> {
        self.truth
            .shifts
            .iter()
            .map(|&(dx, dy)| Shift::new(dx, dy, CorrelationKind::Phase))
            .collect()
    }

    pub fn render_frame(&self, k: usize) -> Frame {
        let p = self.params();
        let (w, h) = (p.frame_width as usize, p.frame_height as usize);
        let (x0, y0) = self.truth.positions[k];
        let clean = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            self.texture_pixel(x0 + x as i64, y0 + y as i64)
        });
        let degraded = p.blur_sigma > 0.0 || p.illumination > 0.0 || p.noise_sigma > 0.0;
        if !degraded {
            return Frame::new(k, p.fps, clean);
        }

        let mut planes: Vec<Grid> = (0..3)
            .map(|ch| Grid::from_fn(h, w, |r, c| clean.get_pixel(c as u32, r as u32)[ch] as f64))
            .collect();
        if p.blur_sigma > 0.0 {
            // along-track blur samples the texture beyond the frame edge
            let kernel = gaussian_kernel(p.blur_sigma);
            let radius = (kernel.len() / 2) as i64;
            for (ch, plane) in planes.iter_mut().enumerate() {
                *plane = Grid::from_fn(h, w, |r, c| {
                    kernel
                        .iter()
                        .enumerate()
                        .map(|(i, kv)| {
                            let y = y0 + r as i64 + i as i64 - radius;
                            kv * self.texture_pixel(x0 + c as i64, y)[ch] as f64
                        })
                        .sum()
                });
            }
        }
        if p.illumination > 0.0 {
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let norm = cx * cx + cy * cy;
            for plane in planes.iter_mut() {
                for r in 0..h {
                    for c in 0..w {
                        let d2 = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)) / norm;
                        plane[(r, c)] *= 1.0 + p.illumination * (1.0 - d2);
                    }
                }
            }
        }
        if p.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.truth.seed);
            rng.set_stream(k as u64 + 1);
            let normal = Normal::new(0.0, p.noise_sigma).expect("sigma is finite and non-negative");
            for plane in planes.iter_mut() {
                for v in plane.as_mut_slice() {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        let pixels = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (r, c) = (y as usize, x as usize);
            Rgb([quantize(planes[0][(r, c)]), quantize(planes[1][(r, c)]), quantize(planes[2][(r, c)])])
        });
        Frame::new(k, p.fps, pixels)
    }

    /// All frames, rendered in parallel.
    pub fn frames(&self) -> Vec<Frame> {
        (0..self.frame_count())
            .into_par_iter()
            .map(|k| self.render_frame(k))
            .collect()
    }

    /// Ground-truth canvas band: the texture swept by the strip from frame
    /// `first` to frame `last`, in the stitcher's canvas layout. Uncovered
    /// cells are transparent.
    pub fn ground_truth_band(&self, placements: &[(usize, usize)]) -> image::RgbaImage {
        // placements: (frame index, rows contributed)
        let w = self.params().frame_width as i64;
        let (fx0, fy0) = self.truth.positions[placements[0].0];
        let cols: Vec<i64> = placements
            .iter()
            .map(|&(k, _)| self.truth.positions[k].0 - fx0)
            .collect();
        let left = *cols.iter().min().expect("nonempty");
        let right = cols.iter().max().expect("nonempty") + w;
        let height: usize = placements.iter().map(|&(_, n)| n).sum();
        let mut img = image::RgbaImage::new((right - left) as u32, height as u32);
        let top = fy0 + self.truth.strip_top as i64;
        let mut row = 0usize;
        for (&(k, n), &col) in placements.iter().zip(&cols) {
            let (x, _) = self.truth.positions[k];
            for i in 0..n {
                let ty = top + (row + i) as i64;
                for c in 0..w {
                    let p = self.texture_pixel(x + c, ty);
                    img.put_pixel((col - left + c) as u32, (row + i) as u32, image::Rgba([p[0], p[1], p[2], 255]));
                }
            }
            row += n;
        }
        img
    }

    pub fn score(&self, estimated: &[Shift]) -> Result<RecoveryReport, SynthError> {
        score_recovery(&self.truth.shifts, estimated)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryFailure {
    pub pair: usize,
    pub truth: (i64, i64),
    pub estimated: (i64, i64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub pairs: usize,
    pub exact_rate: f64,
    /// Mean Euclidean distance between estimate and truth, pixels.
    pub mean_abs_error_px: f64,
    pub failures: Vec<RecoveryFailure>,
}

pub fn score_recovery(truth: &[(i64, i64)], estimated: &[Shift]) -> Result<RecoveryReport, SynthError> {
    if truth.len() != estimated.len() || truth.is_empty() {
        return Err(SynthError::LengthMismatch {
            truth: truth.len(),
            estimated: estimated.len(),
        });
    }
    let mut failures = Vec::new();
    let mut err_sum = 0.0;
    for (pair, (&t, e)) in truth.iter().zip(estimated).enumerate() {
        let (ex, ey) = (e.dx - t.0, e.dy - t.1);
        if ex != 0 || ey != 0 {
            failures.push(RecoveryFailure {
                pair,
                truth: t,
                estimated: (e.dx, e.dy),
            });
        }
        err_sum += ((ex * ex + ey * ey) as f64).sqrt();
    }
    let n = truth.len();
    Ok(RecoveryReport {
        pairs: n,
        exact_rate: (n - failures.len()) as f64 / n as f64,
        mean_abs_error_px: err_sum / n as f64,
        failures,
    })
}

/// Paths produced by [`write_survey`].
#[derive(Debug, Clone)]
pub struct SurveyFiles {
    pub frames_dir: PathBuf,
    pub gps_csv: PathBuf,
    pub ground_truth: PathBuf,
    pub config: PathBuf,
}

pub const FRAMES_DIR: &str = "frames";
pub const GPS_CSV: &str = "gps.csv";
pub const GROUND_TRUTH_JSON: &str = "ground_truth.json";
pub const SURVEY_CONFIG: &str = "survey.toml";

/// Writes frames, GPS CSV, ground truth and a ready-to-run pipeline config.
pub fn write_survey(survey: &SyntheticSurvey, dir: &Path) -> Result<SurveyFiles, SynthError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    (0..survey.frame_count())
        .into_par_iter()
        .try_for_each(|k| write_frame(&frames_dir, &survey.render_frame(k)).map(|_| ()))?;

    let gps_csv = dir.join(GPS_CSV);
    write_gps_track(&survey.track, &gps_csv)?;

    let ground_truth = dir.join(GROUND_TRUTH_JSON);
    let json = serde_json::to_string_pretty(&survey.truth).expect("ground truth serializes");
    fs::write(&ground_truth, json + "\n").map_err(io_err(&ground_truth))?;

    let p = survey.params();
    let mut table = toml::Table::new();
    table.insert("name".into(), "synthetic".into());
    table.insert("frames_dir".into(), FRAMES_DIR.into());
    table.insert("gps_csv".into(), GPS_CSV.into());
    table.insert("fps".into(), p.fps.into());
    table.insert("strip_fraction".into(), p.strip_fraction.into());
    table.insert("epoch_offset".into(), survey.truth.epoch_offset.into());
    table.insert("ground_truth".into(), GROUND_TRUTH_JSON.into());
    let config = dir.join(SURVEY_CONFIG);
    fs::write(&config, toml::to_string(&table).expect("table serializes")).map_err(io_err(&config))?;

    Ok(SurveyFiles {
        frames_dir,
        gps_csv,
        ground_truth,
        config,
    })
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth, SynthError> {
    let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| SynthError::InvalidParams(format!("{}: {e}", path.display())))
}

fn check_oracle_inputs(f: &Strip, g: &Strip) -> Result<(usize, usize), SynthError> {
    let dims = f.pixels.dims();
    if dims != g.pixels.dims() {
        return Err(SynthError::DimensionMismatch);
    }
    let (rows, cols) = dims;
    if rows > ORACLE_MAX_SIDE || cols > ORACLE_MAX_SIDE {
        return Err(SynthError::TooLarge { rows, cols });
    }
    Ok(dims)
}

fn centered_from_shift_fn(rows: usize, cols: usize, kind: CorrelationKind, f: impl Fn(i64, i64) -> f64) -> CorrelationSurface {
    let (cr, cc) = ((rows / 2) as i64, (cols / 2) as i64);
    CorrelationSurface {
        values: Grid::from_fn(rows, cols, |r, c| f(c as i64 - cc, r as i64 - cr)),
        kind,
    }
}

fn naive_dft(x: &[Complex<f64>], rows: usize, cols: usize, sign: f64) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); rows * cols];
    for v in 0..rows {
        for u in 0..cols {
            let mut acc = Complex::new(0.0, 0.0);
            for y in 0..rows {
                for xx in 0..cols {
                    let phase = sign
                        * 2.0
                        * PI
                        * ((u * xx) as f64 / cols as f64 + (v * y) as f64 / rows as f64);
                    acc += x[y * cols + xx] * Complex::new(phase.cos(), phase.sin());
                }
            }
            out[v * cols + u] = acc;
        }
    }
    out
}

/// Direct evaluation of the correlation surfaces.
///
/// CC is the circular spatial sum `Σ f(x, y) · g(x + dx, y + dy)` over
/// mean-subtracted strips. PC evaluates the normalized cross-power spectrum
/// with explicit O(N²) discrete Fourier sums. Both use the same centered
/// indexing as the FFT path. Limited to 32×32 inputs.
pub fn brute_force_correlation(f: &Strip, g: &Strip, kind: CorrelationKind) -> Result<CorrelationSurface, SynthError> {
    brute_force_correlation_with(f, g, kind, true)
}

pub fn brute_force_correlation_with(
    f: &Strip,
    g: &Strip,
    kind: CorrelationKind,
    mean_subtract: bool,
) -> Result<CorrelationSurface, SynthError> {
    let (rows, cols) = check_oracle_inputs(f, g)?;
    let centered = |s: &Strip, on: bool| {
        let m = if on { s.pixels.mean() } else { 0.0 };
        s.pixels.map(|v| v - m)
    };
    match kind {
        CorrelationKind::Cross => {
            let fa = centered(f, mean_subtract);
            let ga = centered(g, mean_subtract);
            Ok(centered_from_shift_fn(rows, cols, kind, |dx, dy| {
                let mut sum = 0.0;
                for y in 0..rows {
                    for x in 0..cols {
                        let gy = (y as i64 + dy).rem_euclid(rows as i64) as usize;
                        let gx = (x as i64 + dx).rem_euclid(cols as i64) as usize;
                        sum += fa[(y, x)] * ga[(gy, gx)];
                    }
                }
                sum
            }))
        }
        CorrelationKind::Phase => {
            if f.pixels.is_constant() || g.pixels.is_constant() {
                return Err(SynthError::DegeneratePair);
            }
            let to_c = |g: &Grid| -> Vec<Complex<f64>> {
                g.as_slice().iter().map(|&v| Complex::new(v, 0.0)).collect()
            };
            let fs = naive_dft(&to_c(&centered(f, true)), rows, cols, -1.0);
            let gs = naive_dft(&to_c(&centered(g, true)), rows, cols, -1.0);
            let mut cross: Vec<Complex<f64>> = fs.iter().zip(&gs).map(|(a, b)| a.conj() * b).collect();
            let peak = cross.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
            if peak == 0.0 {
                return Err(SynthError::DegeneratePair);
            }
            let eps = 1e-12 * peak;
            for z in cross.iter_mut() {
                *z /= z.norm() + eps;
            }
            let spatial = naive_dft(&cross, rows, cols, 1.0);
            let n = (rows * cols) as f64;
            Ok(centered_from_shift_fn(rows, cols, kind, |dx, dy| {
                let y = dy.rem_euclid(rows as i64) as usize;
                let x = dx.rem_euclid(cols as i64) as usize;
                spatial[y * cols + x].re / n
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::locate_peak;

    fn strip(pixels: Grid) -> Strip {
        Strip {
            source_index: 0,
            pixels,
        }
    }

    fn small_params() -> SurveyParams {
        SurveyParams {
            frame_count: 12,
            frame_width: 64,
            frame_height: 80,
            ..SurveyParams::default()
        }
    }

    #[test]
    fn two_by_two_oracle() {
        let f = strip(Grid::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.0]));
        let g = strip(Grid::from_vec(2, 2, vec![0.0, 1.0, 0.0, 0.0]));
        let s = brute_force_correlation(&f, &g, CorrelationKind::Cross).unwrap();
        // raw sums: 1 at the one-column shift, 0 elsewhere; minus N·mean(f)·mean(g) = 0.25
        assert_eq!(s.at(-1, 0), Some(0.75));
        assert_eq!(s.at(0, 0), Some(-0.25));
        assert_eq!(s.at(0, -1), Some(-0.25));
        assert_eq!(s.at(-1, -1), Some(-0.25));
        let p = locate_peak(&s);
        assert_eq!((p.dx, p.dy), (-1, 0));
    }

    #[test]
    fn oracle_autocorrelation_peaks_at_zero() {
        let f = strip(Grid::from_fn(6, 9, |r, c| ((r * 7 + c * 3) % 11) as f64));
        for kind in [CorrelationKind::Cross, CorrelationKind::Phase] {
            let p = locate_peak(&brute_force_correlation(&f, &f, kind).unwrap());
            assert_eq!((p.dx, p.dy), (0, 0));
        }
    }

    #[test]
    fn oracle_limits() {
        let big = strip(Grid::zeros(33, 8));
        assert!(matches!(
            brute_force_correlation(&big, &big, CorrelationKind::Cross),
            Err(SynthError::TooLarge { .. })
        ));
        let c = strip(Grid::from_fn(4, 4, |_, _| 3.0));
        assert!(matches!(
            brute_force_correlation(&c, &c, CorrelationKind::Phase),
            Err(SynthError::DegeneratePair)
        ));
    }

    #[test]
    fn constant_profile_truth() {
        let params = SurveyParams {
            frame_count: 150,
            frame_width: 32,
            frame_height: 48,
            ..SurveyParams::default()
        };
        let s = generate_survey(1, &params).unwrap();
        assert_eq!(s.truth.shifts.len(), 149);
        assert!(s.truth.shifts.iter().all(|&d| d == (0, -4)));
    }

    #[test]
    fn out_of_range_profile_rejected() {
        let params = SurveyParams {
            shift_profile: ShiftProfile::Constant { dx: 0, dy: -40 },
            ..small_params()
        };
        // strip height 16 → limit 8
        assert!(matches!(
            generate_survey(1, &params),
            Err(SynthError::ShiftOutOfRange { limit: 8, .. })
        ));
    }

    #[test]
    fn deterministic_for_seed() {
        let params = SurveyParams {
            noise_sigma: 4.0,
            blur_sigma: 1.5,
            ..small_params()
        };
        let a = generate_survey(9, &params).unwrap();
        let b = generate_survey(9, &params).unwrap();
        assert_eq!(a.texture, b.texture);
        assert_eq!(a.truth, b.truth);
        for k in [0, 5, 11] {
            assert_eq!(a.render_frame(k).pixels, b.render_frame(k).pixels);
        }
        let c = generate_survey(10, &params).unwrap();
        assert_ne!(a.texture, c.texture);
    }

    #[test]
    fn noise_free_frames_are_texture_crops() {
        let s = generate_survey(2, &small_params()).unwrap();
        let f = s.render_frame(7);
        let (x0, y0) = s.truth.positions[7];
        for (x, y, p) in f.pixels.enumerate_pixels() {
            assert_eq!(*p, s.texture_pixel(x0 + x as i64, y0 + y as i64));
        }
    }

    #[test]
    fn sand_is_brighter() {
        let params = SurveyParams {
            sand_fraction: 0.6,
            frame_count: 2,
            frame_width: 128,
            frame_height: 128,
            ..SurveyParams::default()
        };
        let s = generate_survey(3, &params).unwrap();
        let green_mean = |img: &RgbImage| {
            img.pixels().map(|p| p[1] as f64).sum::<f64>() / (img.width() * img.height()) as f64
        };
        let global = green_mean(&s.texture);
        // pixels classified as sand by palette are brighter than the texture mean
        let sand: Vec<f64> = s.texture.pixels().filter(|p| p[1] >= 225).map(|p| p[1] as f64).collect();
        let frac = sand.len() as f64 / (s.texture.width() * s.texture.height()) as f64;
        assert!((frac - 0.6).abs() < 0.05, "sand fraction {frac}");
        assert!(sand.iter().sum::<f64>() / sand.len() as f64 > global);
    }

    #[test]
    fn track_covers_all_frames() {
        let s = generate_survey(4, &small_params()).unwrap();
        let last = (s.frame_count() - 1) as f64 / s.params().fps;
        assert!(s.track.start_time() <= s.params().gps_start);
        assert!(s.track.end_time() >= s.params().gps_start + last);
    }

    #[test]
    fn scoring() {
        let truth = vec![(0, -4); 149];
        let est: Vec<Shift> = truth.iter().map(|&(x, y)| Shift::new(x, y, CorrelationKind::Phase)).collect();
        assert_eq!(score_recovery(&truth, &est).unwrap().exact_rate, 1.0);
        let mut wrong = est.clone();
        wrong[10] = Shift::new(3, 0, CorrelationKind::Cross);
        let r = score_recovery(&truth, &wrong).unwrap();
        assert!((r.exact_rate - 148.0 / 149.0).abs() < 1e-15);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.failures[0].pair, 10);
        assert!((r.mean_abs_error_px - 5.0 / 149.0).abs() < 1e-12);
        assert!(score_recovery(&truth, &[]).is_err());
    }
}
