//! Frame directories, GPS tracks and registration strips.
//!
//! Frames are read from a directory of lossless rasters named
//! `frame_<index>.(png|ppm)` with a zero-padded, contiguous index starting at
//! zero. GPS tracks come from a CSV with `date,time,latitude,longitude`
//! columns (UTC, decimal degrees).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread;

use chrono::{DateTime, NaiveDate, NaiveTime};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

pub const MIN_FRAME_SIDE: u32 = 16;
pub const MIN_STRIP_HEIGHT: usize = 8;
pub const GREEN: usize = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("no frames found in {0}")]
    EmptyDirectory(PathBuf),
    #[error("missing frame {0}")]
    MissingFrame(usize),
    #[error("duplicate frame {0}")]
    DuplicateFrame(usize),
    #[error("frame {index} is {width}x{height}, expected {expected_width}x{expected_height}")]
    DimensionMismatch {
        index: usize,
        width: u32,
        height: u32,
        expected_width: u32,
        expected_height: u32,
    },
    #[error("frame {index} is {width}x{height}, smaller than the {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE} minimum")]
    FrameTooSmall { index: usize, width: u32, height: u32 },
    #[error("fps must be positive, got {0}")]
    InvalidFps(f64),
    #[error("strip fraction must be in (0, 1], got {0}")]
    InvalidStripFraction(f64),
    #[error("strip too short: {height} rows (minimum {MIN_STRIP_HEIGHT})")]
    StripTooShort { height: usize },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("missing column {0:?}")]
    MissingColumn(&'static str),
    #[error("{message}, line {line}")]
    BadRow { line: u64, message: String },
    #[error("latitude out of range, line {0}")]
    LatitudeOutOfRange(u64),
    #[error("longitude out of range, line {0}")]
    LongitudeOutOfRange(u64),
    #[error("need at least 2 GPS fixes, found {0}")]
    TooFewFixes(usize),
    #[error("GPS fix times are not strictly increasing at fix {0}")]
    NonMonotoneTime(usize),
}

/// One decoded video frame.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    /// Seconds since stream start, `index / fps`.
    pub timestamp: f64,
    pub pixels: RgbImage,
}

impl Frame {
    pub fn new(index: usize, fps: f64, pixels: RgbImage) -> Self {
        Self {
            index,
            timestamp: index as f64 / fps,
            pixels,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.height() as usize
    }

    pub fn width(&self) -> usize {
        self.pixels.width() as usize
    }

    /// Green-channel central strip of this frame.
    pub fn strip(&self, strip_fraction: f64) -> Result<Strip, IngestError> {
        let mut strip = central_strip(&green_channel(self), strip_fraction)?;
        strip.source_index = self.index;
        Ok(strip)
    }
}

/// Vertically centered horizontal band used for registration.
#[derive(Debug, Clone, PartialEq)]
pub struct Strip {
    pub source_index: usize,
    pub pixels: Grid,
}

impl Strip {
    pub fn height(&self) -> usize {
        self.pixels.rows()
    }

    pub fn width(&self) -> usize {
        self.pixels.cols()
    }
}

/// Row span of the central strip inside a frame of a given height.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StripGeometry {
    pub top: usize,
    pub height: usize,
}

impl StripGeometry {
    pub fn new(frame_height: usize, strip_fraction: f64) -> Result<Self, IngestError> {
        if !(strip_fraction > 0.0 && strip_fraction <= 1.0) {
            return Err(IngestError::InvalidStripFraction(strip_fraction));
        }
        let height = (strip_fraction * frame_height as f64).round() as usize;
        if height < MIN_STRIP_HEIGHT {
            return Err(IngestError::StripTooShort { height });
        }
        let height = height.min(frame_height);
        Ok(Self {
            top: (frame_height - height) / 2,
            height,
        })
    }

    pub fn rows(&self) -> std::ops::Range<usize> {
        self.top..self.top + self.height
    }
}

pub fn green_channel(frame: &Frame) -> Grid {
    let (w, h) = frame.pixels.dimensions();
    Grid::from_fn(h as usize, w as usize, |r, c| {
        frame.pixels.get_pixel(c as u32, r as u32)[GREEN] as f64
    })
}

pub fn central_strip(channel: &Grid, strip_fraction: f64) -> Result<Strip, IngestError> {
    let geom = StripGeometry::new(channel.rows(), strip_fraction)?;
    Ok(Strip {
        source_index: 0,
        pixels: channel.row_band(geom.top, geom.height),
    })
}

pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("frame_{index:06}.{ext}")
}

fn parse_frame_name(name: &str) -> Option<usize> {
    let stem = name.strip_prefix("frame_")?;
    let (digits, ext) = stem.split_once('.')?;
    if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "ppm") {
        return None;
    }
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// An indexed, validated frame directory. Frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    paths: Vec<PathBuf>,
    fps: f64,
    width: u32,
    height: u32,
}

pub fn load_frame_sequence(dir: &Path, fps: f64) -> Result<FrameSequence, IngestError> {
    FrameSequence::open(dir, fps)
}

impl FrameSequence {
    pub fn open(dir: &Path, fps: f64) -> Result<Self, IngestError> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(IngestError::InvalidFps(fps));
        }
        let io_err = |source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut found = BTreeMap::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let entry = entry.map_err(io_err)?;
            let name = entry.file_name();
            let Some(index) = name.to_str().and_then(parse_frame_name) else {
                continue;
            };
            if found.insert(index, entry.path()).is_some() {
                return Err(IngestError::DuplicateFrame(index));
            }
        }
        if found.is_empty() {
            return Err(IngestError::EmptyDirectory(dir.to_path_buf()));
        }
        let mut paths = Vec::with_capacity(found.len());
        for (expected, (index, path)) in found.into_iter().enumerate() {
            if index != expected {
                return Err(IngestError::MissingFrame(expected));
            }
            paths.push(path);
        }
        let (width, height) = image::image_dimensions(&paths[0]).map_err(|source| {
            IngestError::Image {
                path: paths[0].clone(),
                source,
            }
        })?;
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(IngestError::FrameTooSmall {
                index: 0,
                width,
                height,
            });
        }
        Ok(Self {
            paths,
            fps,
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn load(&self, index: usize) -> Result<Frame, IngestError> {
        let path = &self.paths[index];
        let pixels = image::open(path)
            .map_err(|source| IngestError::Image {
                path: path.clone(),
                source,
            })?
            .into_rgb8();
        if pixels.dimensions() != (self.width, self.height) {
            return Err(IngestError::DimensionMismatch {
                index,
                width: pixels.width(),
                height: pixels.height(),
                expected_width: self.width,
                expected_height: self.height,
            });
        }
        Ok(Frame::new(index, self.fps, pixels))
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<Frame, IngestError>> + '_ {
        (0..self.len()).map(move |i| self.load(i))
    }

    /// Decodes frames on a background thread, at most `depth` ahead of the consumer.
    pub fn prefetch(self, depth: usize) -> Prefetch {
        let (tx, rx) = mpsc::sync_channel(depth.max(1));
        let handle = thread::spawn(move || {
            for i in 0..self.len() {
                let item = self.load(i);
                let failed = item.is_err();
                if tx.send(item).is_err() || failed {
                    break;
                }
            }
        });
        Prefetch {
            rx,
            handle: Some(handle),
        }
    }
}

/// Iterator over frames decoded by [`FrameSequence::prefetch`].
pub struct Prefetch {
    rx: mpsc::Receiver<Result<Frame, IngestError>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl Iterator for Prefetch {
    type Item = Result<Frame, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.rx.recv() {
            Ok(item) => Some(item),
            Err(_) => {
                if let Some(h) = self.handle.take() {
                    let _ = h.join();
                }
                None
            }
        }
    }
}

/// Writes a frame as `frame_<index>.png` under `dir`.
pub fn write_frame(dir: &Path, frame: &Frame) -> Result<PathBuf, IngestError> {
    let path = dir.join(frame_file_name(frame.index, "png"));
    frame.pixels.save(&path).map_err(|source| IngestError::Image {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    /// UTC seconds since the Unix epoch.
    pub time: f64,
    pub lat: f64,
    pub lon: f64,
}

impl GeoFix {
    pub fn new(time: f64, lat: f64, lon: f64) -> Self {
        Self { time, lat, lon }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeoTrack {
    fixes: Vec<GeoFix>,
    /// Seconds added to frame timestamps to land on fix times.
    pub epoch_offset: f64,
}

impl GeoTrack {
    pub fn new(fixes: Vec<GeoFix>, epoch_offset: f64) -> Result<Self, IngestError> {
        if fixes.len() < 2 {
            return Err(IngestError::TooFewFixes(fixes.len()));
        }
        for (i, pair) in fixes.windows(2).enumerate() {
            if !(pair[1].time > pair[0].time) {
                return Err(IngestError::NonMonotoneTime(i + 1));
            }
        }
        Ok(Self {
            fixes,
            epoch_offset,
        })
    }

    pub fn fixes(&self) -> &[GeoFix] {
        &self.fixes
    }

    pub fn with_epoch_offset(mut self, epoch_offset: f64) -> Self {
        self.epoch_offset = epoch_offset;
        self
    }

    pub fn start_time(&self) -> f64 {
        self.fixes[0].time
    }

    pub fn end_time(&self) -> f64 {
        self.fixes[self.fixes.len() - 1].time
    }
}

fn find_column(headers: &csv::StringRecord, name: &'static str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or(IngestError::MissingColumn(name))
}

fn parse_utc(date: &str, time: &str) -> Result<f64, String> {
    let d = NaiveDate::parse_from_str(date.trim(), "%Y-%m-%d")
        .map_err(|e| format!("bad date {date:?}: {e}"))?;
    let t = NaiveTime::parse_from_str(time.trim(), "%H:%M:%S%.f")
        .map_err(|e| format!("bad time {time:?}: {e}"))?;
    let dt = d.and_time(t).and_utc();
    Ok(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9)
}

/// Parses a GPS CSV. Rows sharing a timestamp collapse to their mean position.
pub fn parse_gps_track(path: &Path) -> Result<GeoTrack, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_gps_reader(file).map_err(|e| match e {
        IngestError::Csv { source, .. } => IngestError::Csv {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn parse_gps_reader<R: io::Read>(reader: R) -> Result<GeoTrack, IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: PathBuf::new(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let date_col = find_column(&headers, "date")?;
    let time_col = find_column(&headers, "time")?;
    let lat_col = find_column(&headers, "latitude")?;
    let lon_col = find_column(&headers, "longitude")?;

    let mut rows: Vec<GeoFix> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize, name: &str| {
            record.get(i).ok_or_else(|| IngestError::BadRow {
                line,
                message: format!("missing {name} field"),
            })
        };
        let time = parse_utc(field(date_col, "date")?, field(time_col, "time")?)
            .map_err(|message| IngestError::BadRow { line, message })?;
        let number = |i: usize, name: &str| -> Result<f64, IngestError> {
            let raw = field(i, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::BadRow {
                    line,
                    message: format!("bad {name} {raw:?}"),
                })
        };
        let lat = number(lat_col, "latitude")?;
        let lon = number(lon_col, "longitude")?;
        if !(-90.0..=90.0).contains(&lat) {
            return Err(IngestError::LatitudeOutOfRange(line));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(IngestError::LongitudeOutOfRange(line));
        }
        rows.push(GeoFix::new(time, lat, lon));
    }

    rows.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut fixes: Vec<GeoFix> = Vec::with_capacity(rows.len());
    let mut i = 0;
    while i < rows.len() {
        let mut j = i + 1;
        while j < rows.len() && rows[j].time == rows[i].time {
            j += 1;
        }
        let n = (j - i) as f64;
        let lat = rows[i..j].iter().map(|f| f.lat).sum::<f64>() / n;
        let lon = rows[i..j].iter().map(|f| f.lon).sum::<f64>() / n;
        fixes.push(GeoFix::new(rows[i].time, lat, lon));
        i = j;
    }
    GeoTrack::new(fixes, 0.0)
}

/// Serializes fixes in the format [`parse_gps_track`] reads, millisecond time resolution.
pub fn write_gps_csv<W: io::Write>(track: &GeoTrack, out: W) -> Result<(), IngestError> {
    let csv_err = |source| IngestError::Csv {
        path: PathBuf::new(),
        source,
    };
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["date", "time", "latitude", "longitude"])
        .map_err(csv_err)?;
    for fix in track.fixes() {
        let millis = (fix.time * 1000.0).round() as i64;
        let dt = DateTime::from_timestamp_millis(millis).ok_or_else(|| IngestError::BadRow {
            line: 0,
            message: format!("time {} not representable", fix.time),
        })?;
        wtr.write_record([
            dt.format("%Y-%m-%d").to_string(),
            dt.format("%H:%M:%S%.3f").to_string(),
            format!("{:.10}", fix.lat),
            format!("{:.10}", fix.lon),
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: PathBuf::new(),
        source,
    })
}

pub fn write_gps_track(track: &GeoTrack, path: &Path) -> Result<(), IngestError> {
    let file = fs::File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_gps_csv(track, io::BufWriter::new(file))
}
