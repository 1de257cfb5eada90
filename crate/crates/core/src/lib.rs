//! Strip-correlation stitching of towed-camera video transects into
//! georeferenced mosaics.
//!
//! The pipeline runs in stages: [`ingest`] loads frames and the GPS track,
//! [`stitcher`] registers consecutive green-channel strips with
//! [`registration`] and assembles mosaics, [`georef`] pins each mosaic to four
//! geographic corners, and [`kmz`] packages the overlays. [`synth`] renders
//! surveys with known ground truth and holds the brute-force correlation
//! oracle; [`pipeline`] ties the stages together.

pub mod georef;
pub mod grid;
pub mod ingest;
pub mod kmz;
pub mod manifest;
pub mod pipeline;
pub mod registration;
pub mod stitcher;
pub mod synth;

pub use georef::{GeoConfig, GeoQuad, GeorefError, OffsetMode};
pub use grid::Grid;
pub use ingest::{Frame, FrameSequence, GeoFix, GeoTrack, IngestError, Strip};
pub use kmz::{KmzError, OverlayEntry};
pub use manifest::{MosaicRecord, QuadRecord};
pub use pipeline::{PipelineConfig, PipelineError, RunSummary};
pub use registration::{
    CorrelationKind, CorrelationSurface, Correlator, RegistrationError, Shift, ShiftEstimate,
};
pub use stitcher::{MosaicCanvas, PlacementRecord, StitchConfig, StitchError, Stitcher};
pub use synth::{SurveyParams, SyntheticSurvey};
