//! JSON-lines records passed between pipeline stages.
//!
//! `manifest.jsonl` holds one [`MosaicRecord`] per mosaic, written by the
//! stitch stage. `quads.jsonl` holds one [`QuadRecord`] per mosaic, written
//! by the georef stage. Every record carries [`MANIFEST_VERSION`].

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::georef::{GeoQuad, LatLon};
use crate::ingest::GeoFix;
use crate::stitcher::MosaicCanvas;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}, line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}, line {line}: manifest version {found}, expected {MANIFEST_VERSION}")]
    Version {
        path: PathBuf,
        line: usize,
        found: u32,
    },
}

pub fn mosaic_file_name(index: usize) -> String {
    format!("mosaic_{index:05}.png")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicRecord {
    pub version: u32,
    pub index: usize,
    /// Path of the mosaic image relative to the manifest.
    pub image: String,
    pub start_time: f64,
    pub end_time: f64,
    pub first_frame: usize,
    pub last_frame: usize,
    pub height: usize,
    pub width: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
}

impl MosaicRecord {
    pub fn from_canvas(canvas: &MosaicCanvas, image: String) -> Self {
        let first = canvas.placements.first().expect("canvas has a seed");
        let last = canvas.placements.last().expect("canvas has a seed");
        Self {
            version: MANIFEST_VERSION,
            index: canvas.index,
            image,
            start_time: canvas.start_time,
            end_time: canvas.end_time,
            first_frame: first.frame_index,
            last_frame: last.frame_index,
            height: canvas.height(),
            width: canvas.width(),
            accepted: canvas.accepted,
            rejected: canvas.rejected,
            skipped: canvas.skipped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadRecord {
    pub version: u32,
    pub index: usize,
    pub image: String,
    /// `[lat, lon]` pairs: start-left, start-right, end-right, end-left.
    pub corners: [[f64; 2]; 4],
    pub center_start: GeoFix,
    pub center_end: GeoFix,
    pub heading_deg: f64,
}

impl QuadRecord {
    pub fn new(record: &MosaicRecord, quad: &GeoQuad) -> Self {
        Self {
            version: MANIFEST_VERSION,
            index: record.index,
            image: record.image.clone(),
            corners: quad.corners.map(|c| [c.lat, c.lon]),
            center_start: quad.center_start,
            center_end: quad.center_end,
            heading_deg: quad.heading_deg,
        }
    }

    pub fn quad(&self) -> GeoQuad {
        GeoQuad {
            corners: self.corners.map(|[lat, lon]| LatLon { lat, lon }),
            center_start: self.center_start,
            center_end: self.center_end,
            heading_deg: self.heading_deg,
        }
    }
}

trait Versioned {
    fn version(&self) -> u32;
}

impl Versioned for MosaicRecord {
    fn version(&self) -> u32 {
        self.version
    }
}

impl Versioned for QuadRecord {
    fn version(&self) -> u32 {
        self.version
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), ManifestError> {
    let io_err = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn read_jsonl<T: DeserializeOwned + Versioned>(path: &Path) -> Result<Vec<T>, ManifestError> {
    let io_err = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(fs::File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|source| ManifestError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        if record.version() != MANIFEST_VERSION {
            return Err(ManifestError::Version {
                path: path.to_path_buf(),
                line: i + 1,
                found: record.version(),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_mosaic_manifest(path: &Path) -> Result<Vec<MosaicRecord>, ManifestError> {
    read_jsonl(path)
}

pub fn read_quad_manifest(path: &Path) -> Result<Vec<QuadRecord>, ManifestError> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(index: usize) -> MosaicRecord {
        MosaicRecord {
            version: MANIFEST_VERSION,
            index,
            image: mosaic_file_name(index),
            start_time: 0.0,
            end_time: 4.9,
            first_frame: 0,
            last_frame: 149,
            height: 644,
            width: 320,
            accepted: 149,
            rejected: 0,
            skipped: 0,
        }
    }

    #[test]
    fn round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        write_jsonl(&path, &[record(0), record(1)]).unwrap();
        assert_eq!(read_mosaic_manifest(&path).unwrap(), vec![record(0), record(1)]);

        let mut old = record(0);
        old.version = 0;
        write_jsonl(&path, &[old]).unwrap();
        let err = read_mosaic_manifest(&path).unwrap_err();
        assert!(matches!(err, ManifestError::Version { found: 0, line: 1, .. }));
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let good = serde_json::to_string(&record(0)).unwrap();
        fs::write(&path, format!("{good}\n{{\"index\": 1}}\n")).unwrap();
        assert!(matches!(
            read_mosaic_manifest(&path),
            Err(ManifestError::Parse { line: 2, .. })
        ));
    }
}
