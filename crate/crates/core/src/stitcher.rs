//! Sequential accept/reject stitching of frame strips into time-boxed mosaics.
//!
//! The stitcher keeps a reference strip `f`. For each incoming frame `g` it
//! estimates the shift of `g` relative to `f`. A shift with `dy < 0` means the
//! scene moved up, i.e. the camera advanced and `g` shows `|dy|` rows of new
//! seafloor at the bottom of its strip; those rows are appended below the
//! canvas and `g` becomes the reference. Otherwise `g` is dropped and `f` kept.
//!
//! Canvas row 0 is the oldest content, so the tow direction points down the
//! image. Horizontal motion accumulates in `cum_dx`; a strip placed with
//! accumulated offset `cum_dx` starts at canvas column `-cum_dx` relative to
//! the seed strip.

use std::fs;
use std::path::{Path, PathBuf};

use image::{RgbImage, RgbaImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{green_channel, Frame, IngestError, StripGeometry};
use crate::registration::{
    CorrelationOptions, CorrelationSurface, Correlator, RegistrationError, Shift, ShiftEstimate,
    Spectrum,
};

#[derive(Debug, Error)]
pub enum StitchError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error("fewer than 2 usable frames ({0})")]
    NotEnoughFrames(usize),
    #[error("frame {index} is {width}x{height}, stream is {expected_width}x{expected_height}")]
    DimensionMismatch {
        index: usize,
        width: usize,
        height: usize,
        expected_width: usize,
        expected_height: usize,
    },
    #[error("cannot append a strip with dy = {0}; only upward scene motion adds rows")]
    NotForward(i64),
    #[error("shift dy = {dy} exceeds strip height {strip_h}")]
    ShiftTooLarge { dy: i64, strip_h: usize },
    #[error("strip is {got_w}x{got_h}, canvas expects width {want_w} and height {want_h}")]
    StripMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("invalid stitch config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `n = round(fps × mosaic_time)`, at least one frame.
pub fn frames_per_mosaic(fps: f64, mosaic_time: f64) -> usize {
    ((fps * mosaic_time).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchConfig {
    pub fps: f64,
    pub mosaic_time: f64,
    pub strip_fraction: f64,
    pub correlation: CorrelationOptions,
    /// When set, every evaluated pair writes its CC/PC surfaces here as PNG.
    pub dump_surfaces: Option<PathBuf>,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            fps: 30.0,
            mosaic_time: 5.0,
            strip_fraction: 0.2,
            correlation: CorrelationOptions::default(),
            dump_surfaces: None,
        }
    }
}

impl StitchConfig {
    pub fn frames_per_mosaic(&self) -> usize {
        frames_per_mosaic(self.fps, self.mosaic_time)
    }

    fn validate(&self) -> Result<(), StitchError> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(StitchError::InvalidConfig(format!("fps {}", self.fps)));
        }
        if !(self.mosaic_time > 0.0 && self.mosaic_time.is_finite()) {
            return Err(StitchError::InvalidConfig(format!(
                "mosaic_time {}",
                self.mosaic_time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub frame_index: usize,
    pub frame_time: f64,
    /// Rows of new content this frame contributed (the whole strip for a seed).
    pub dy_new_rows: usize,
    /// Accumulated horizontal shift since the canvas seed.
    pub cum_dx: i64,
    pub strip_h: usize,
}

/// A growing RGBA mosaic. Cells not covered by any strip stay fully transparent.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicCanvas {
    pub index: usize,
    pub placements: Vec<PlacementRecord>,
    pub start_time: f64,
    pub end_time: f64,
    /// Frames newly placed (excluding the seed).
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
    strip_w: usize,
    strip_h: usize,
    /// Canvas column of a strip with `cum_dx = 0`.
    origin: i64,
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl MosaicCanvas {
    /// Starts a canvas from one full strip band (RGB, `strip_h` rows).
    pub fn seed(index: usize, band: &RgbImage, frame_index: usize, frame_time: f64) -> Self {
        let (w, h) = (band.width() as usize, band.height() as usize);
        let mut data = Vec::with_capacity(w * h * 4);
        for p in band.pixels() {
            data.extend_from_slice(&[p[0], p[1], p[2], 255]);
        }
        Self {
            index,
            placements: vec![PlacementRecord {
                frame_index,
                frame_time,
                dy_new_rows: h,
                cum_dx: 0,
                strip_h: h,
            }],
            start_time: frame_time,
            end_time: frame_time,
            accepted: 0,
            rejected: 0,
            skipped: 0,
            strip_w: w,
            strip_h: h,
            origin: 0,
            width: w,
            height: h,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn strip_height(&self) -> usize {
        self.strip_h
    }

    pub fn cum_dx(&self) -> i64 {
        self.placements.last().map(|p| p.cum_dx).unwrap_or(0)
    }

    /// Canvas column where the strip of `placement` begins.
    pub fn placement_column(&self, placement: &PlacementRecord) -> i64 {
        self.origin - placement.cum_dx
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 4] {
        let i = (y * self.width + x) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn to_image(&self) -> RgbaImage {
        RgbaImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("canvas buffer matches its dimensions")
    }

    fn widen(&mut self, pad_left: usize, pad_right: usize) {
        let new_w = self.width + pad_left + pad_right;
        let mut data = vec![0u8; new_w * self.height * 4];
        for r in 0..self.height {
            let src = &self.data[r * self.width * 4..(r + 1) * self.width * 4];
            let dst = (r * new_w + pad_left) * 4;
            data[dst..dst + src.len()].copy_from_slice(src);
        }
        self.data = data;
        self.width = new_w;
        self.origin += pad_left as i64;
    }

    /// Appends the bottom `|dy|` rows of `band` below the canvas, offset by the
    /// accumulated horizontal shift.
    pub fn append_strip(
        &mut self,
        band: &RgbImage,
        shift: Shift,
        frame_index: usize,
        frame_time: f64,
    ) -> Result<(), StitchError> {
        if shift.dy >= 0 {
            return Err(StitchError::NotForward(shift.dy));
        }
        let (w, h) = (band.width() as usize, band.height() as usize);
        if w != self.strip_w || h != self.strip_h {
            return Err(StitchError::StripMismatch {
                got_w: w,
                got_h: h,
                want_w: self.strip_w,
                want_h: self.strip_h,
            });
        }
        let new_rows = shift.dy.unsigned_abs() as usize;
        if new_rows > h {
            return Err(StitchError::ShiftTooLarge {
                dy: shift.dy,
                strip_h: h,
            });
        }
        let cum_dx = self.cum_dx() + shift.dx;
        let col = self.origin - cum_dx;
        let pad_left = if col < 0 { (-col) as usize } else { 0 };
        let right = col + w as i64;
        let pad_right = (right - self.width as i64).max(0) as usize;
        if pad_left > 0 || pad_right > 0 {
            self.widen(pad_left, pad_right);
        }
        let col = (self.origin - cum_dx) as usize;

        let mut rows = vec![0u8; self.width * new_rows * 4];
        for (i, y) in (h - new_rows..h).enumerate() {
            for x in 0..w {
                let p = band.get_pixel(x as u32, y as u32);
                let o = (i * self.width + col + x) * 4;
                rows[o..o + 4].copy_from_slice(&[p[0], p[1], p[2], 255]);
            }
        }
        self.data.extend_from_slice(&rows);
        self.height += new_rows;
        self.placements.push(PlacementRecord {
            frame_index,
            frame_time,
            dy_new_rows: new_rows,
            cum_dx,
            strip_h: h,
        });
        self.end_time = frame_time;
        self.accepted += 1;
        Ok(())
    }
}

/// Copies the strip rows of a frame as an RGB band.
pub fn color_band(frame: &Frame, geom: StripGeometry) -> RgbImage {
    image::imageops::crop_imm(
        &frame.pixels,
        0,
        geom.top as u32,
        frame.pixels.width(),
        geom.height as u32,
    )
    .to_image()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StitchStats {
    pub frames_in: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub skipped: usize,
    pub mosaics: usize,
}

/// Outcome of one candidate frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameDecision {
    Seed,
    Accepted(ShiftEstimate),
    Rejected(ShiftEstimate),
    Skipped,
}

struct Reference {
    frame_index: usize,
    frame_time: f64,
    spectrum: Spectrum,
    band: RgbImage,
}

struct Stream {
    width: usize,
    height: usize,
    geom: StripGeometry,
    correlator: Correlator,
}

/// Incremental stitcher: push frames in order, collect closed canvases.
pub struct Stitcher {
    config: StitchConfig,
    per_mosaic: usize,
    stream: Option<Stream>,
    reference: Option<Reference>,
    canvas: Option<MosaicCanvas>,
    counted: usize,
    next_mosaic: usize,
    stats: StitchStats,
    last_decision: Option<FrameDecision>,
}

impl Stitcher {
    pub fn new(config: StitchConfig) -> Result<Self, StitchError> {
        config.validate()?;
        if let Some(dir) = &config.dump_surfaces {
            fs::create_dir_all(dir).map_err(|source| StitchError::Io {
                path: dir.clone(),
                source,
            })?;
        }
        Ok(Self {
            per_mosaic: config.frames_per_mosaic(),
            config,
            stream: None,
            reference: None,
            canvas: None,
            counted: 0,
            next_mosaic: 0,
            stats: StitchStats::default(),
            last_decision: None,
        })
    }

    pub fn stats(&self) -> StitchStats {
        self.stats
    }

    pub fn frames_per_mosaic(&self) -> usize {
        self.per_mosaic
    }

    /// Decision taken for the most recently pushed frame.
    pub fn last_decision(&self) -> Option<FrameDecision> {
        self.last_decision
    }

    fn stream_for(&mut self, frame: &Frame) -> Result<&Stream, StitchError> {
        if self.stream.is_none() {
            let geom = StripGeometry::new(frame.height(), self.config.strip_fraction)?;
            self.stream = Some(Stream {
                width: frame.width(),
                height: frame.height(),
                geom,
                correlator: Correlator::with_options(
                    geom.height,
                    frame.width(),
                    self.config.correlation,
                ),
            });
        }
        let stream = self.stream.as_ref().expect("initialized above");
        if (frame.width(), frame.height()) != (stream.width, stream.height) {
            return Err(StitchError::DimensionMismatch {
                index: frame.index,
                width: frame.width(),
                height: frame.height(),
                expected_width: stream.width,
                expected_height: stream.height,
            });
        }
        Ok(stream)
    }

    fn open_canvas(&mut self) {
        let r = self.reference.as_ref().expect("reference exists after first frame");
        self.canvas = Some(MosaicCanvas::seed(
            self.next_mosaic,
            &r.band,
            r.frame_index,
            r.frame_time,
        ));
        self.next_mosaic += 1;
        self.counted = 0;
    }

    /// Feeds the next frame. Returns a canvas when this frame closes one.
    pub fn push(&mut self, frame: &Frame) -> Result<Option<MosaicCanvas>, StitchError> {
        let stream = self.stream_for(frame)?;
        let geom = stream.geom;
        let correlator = stream.correlator.clone();
        let strip = green_channel(frame).row_band(geom.top, geom.height);
        let spectrum = correlator.spectrum(&strip)?;
        self.stats.frames_in += 1;

        if self.reference.is_none() {
            self.reference = Some(Reference {
                frame_index: frame.index,
                frame_time: frame.timestamp,
                spectrum,
                band: color_band(frame, geom),
            });
            self.open_canvas();
            self.counted = 1;
            self.last_decision = Some(FrameDecision::Seed);
            return Ok(self.close_if_full());
        }

        if self.canvas.is_none() {
            self.open_canvas();
        }
        let reference = self.reference.as_ref().expect("checked above");
        let reference_index = reference.frame_index;
        let surfaces = match correlator.surfaces(&reference.spectrum, &spectrum) {
            Ok(s) => Some(s),
            Err(RegistrationError::DegeneratePair) => None,
            Err(e) => return Err(e.into()),
        };
        let canvas = self.canvas.as_mut().expect("opened above");
        let decision = match &surfaces {
            None => {
                log::warn!(
                    "degenerate pair, skipping frame {} (reference {})",
                    frame.index,
                    reference_index
                );
                canvas.skipped += 1;
                self.stats.skipped += 1;
                FrameDecision::Skipped
            }
            Some((cc, pc)) => {
                let estimate = ShiftEstimate::from_surfaces(cc, pc.as_ref());
                let shift = estimate.selected;
                if shift.dy < 0 {
                    let band = color_band(frame, geom);
                    canvas.append_strip(&band, shift, frame.index, frame.timestamp)?;
                    self.stats.accepted += 1;
                    log::debug!(
                        "accepted frame {} shift ({}, {}) via {}",
                        frame.index,
                        shift.dx,
                        shift.dy,
                        shift.source
                    );
                    self.reference = Some(Reference {
                        frame_index: frame.index,
                        frame_time: frame.timestamp,
                        spectrum,
                        band,
                    });
                    FrameDecision::Accepted(estimate)
                } else {
                    canvas.rejected += 1;
                    self.stats.rejected += 1;
                    log::debug!(
                        "rejected frame {} shift ({}, {}) via {}",
                        frame.index,
                        shift.dx,
                        shift.dy,
                        shift.source
                    );
                    FrameDecision::Rejected(estimate)
                }
            }
        };
        if let Some(s) = &surfaces {
            if self.config.dump_surfaces.is_some() {
                self.dump_pair(reference_index, frame.index, s)?;
            }
        }
        self.last_decision = Some(decision);
        self.counted += 1;
        Ok(self.close_if_full())
    }

    fn dump_pair(
        &self,
        f_index: usize,
        g_index: usize,
        surfaces: &(
            CorrelationSurface,
            Option<CorrelationSurface>,
        ),
    ) -> Result<(), StitchError> {
        let Some(dir) = &self.config.dump_surfaces else {
            return Ok(());
        };
        write_surface(dir, &format!("cc_{f_index:06}_{g_index:06}.png"), &surfaces.0)?;
        if let Some(pc) = &surfaces.1 {
            write_surface(dir, &format!("pc_{f_index:06}_{g_index:06}.png"), pc)?;
        }
        Ok(())
    }

    fn close_if_full(&mut self) -> Option<MosaicCanvas> {
        if self.counted >= self.per_mosaic {
            self.counted = 0;
            self.stats.mosaics += 1;
            self.canvas.take()
        } else {
            None
        }
    }

    /// Closes the last, partially filled canvas. A trailing canvas that holds
    /// nothing but its carried-over seed is dropped.
    pub fn finish(&mut self) -> Result<Option<MosaicCanvas>, StitchError> {
        if self.stats.frames_in < 2 {
            return Err(StitchError::NotEnoughFrames(self.stats.frames_in));
        }
        let Some(canvas) = self.canvas.take() else {
            return Ok(None);
        };
        if canvas.accepted == 0 && canvas.index > 0 {
            return Ok(None);
        }
        self.stats.mosaics += 1;
        Ok(Some(canvas))
    }
}

fn write_surface(
    dir: &Path,
    name: &str,
    surface: &CorrelationSurface,
) -> Result<(), StitchError> {
    let path = dir.join(name);
    surface
        .to_gray_image()
        .save(&path)
        .map_err(|source| StitchError::Image { path, source })
}

/// Runs a whole stream through a [`Stitcher`].
pub fn stitch_pass<I>(frames: I, config: StitchConfig) -> Result<(Vec<MosaicCanvas>, StitchStats), StitchError>
where
    I: IntoIterator<Item = Frame>,
{
    let mut stitcher = Stitcher::new(config)?;
    let mut out = Vec::new();
    for frame in frames {
        if let Some(c) = stitcher.push(&frame)? {
            out.push(c);
        }
    }
    if let Some(c) = stitcher.finish()? {
        out.push(c);
    }
    Ok((out, stitcher.stats()))
}
