//! Geographic placement of mosaics.
//!
//! Positions along the track are linearly interpolated between GPS fixes.
//! Metric offsets are converted to degrees on a spherical earth:
//!
//! ```text
//! lat2 = lat1 + (d_lat_m / r) · 180/π
//! lon2 = lon1 + (d_lon_m / r) · 180/π / cos(lat1)
//! ```
//!
//! In [`OffsetMode::Literal`] the first metric argument (horizontal shift) feeds
//! the latitude term and the second (vertical shift) the longitude term. [`OffsetMode::HeadingAligned`] reads the pair as
//! `(east, north)` meters instead, which is what quad construction uses.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{GeoFix, GeoTrack};

const MIN_COS_LAT: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeorefError {
    #[error("time outside GPS coverage: {time} not in [{start}, {end}]")]
    OutsideCoverage { time: f64, start: f64, end: f64 },
    #[error("stationary segment")]
    StationarySegment,
    #[error("latitude {0} too close to a pole")]
    PolarDegeneracy(f64),
    #[error("offset moves latitude to {0}, beyond a pole")]
    LatitudeOverflow(f64),
    #[error("invalid georef config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    Literal,
    #[default]
    #[serde(alias = "heading")]
    HeadingAligned,
}

impl fmt::Display for OffsetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OffsetMode::Literal => f.write_str("literal"),
            OffsetMode::HeadingAligned => f.write_str("heading_aligned"),
        }
    }
}

impl FromStr for OffsetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "literal" => Ok(OffsetMode::Literal),
            "heading" | "heading_aligned" | "heading-aligned" => Ok(OffsetMode::HeadingAligned),
            other => Err(format!("unknown offset mode {other:?} (expected literal|heading)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoConfig {
    pub earth_radius_m: f64,
    pub mosaic_width_m: f64,
    pub offset_mode: OffsetMode,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            earth_radius_m: 6_371_000.0,
            mosaic_width_m: 3.0,
            offset_mode: OffsetMode::HeadingAligned,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<(), GeorefError> {
        if !(self.earth_radius_m > 0.0 && self.earth_radius_m.is_finite()) {
            return Err(GeorefError::InvalidConfig(format!(
                "earth_radius_m {}",
                self.earth_radius_m
            )));
        }
        if !(self.mosaic_width_m > 0.0 && self.mosaic_width_m.is_finite()) {
            return Err(GeorefError::InvalidConfig(format!(
                "mosaic_width_m {}",
                self.mosaic_width_m
            )));
        }
        Ok(())
    }

    fn degrees_per_meter(&self) -> f64 {
        180.0 / (std::f64::consts::PI * self.earth_radius_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl From<GeoFix> for LatLon {
    fn from(f: GeoFix) -> Self {
        LatLon {
            lat: f.lat,
            lon: f.lon,
        }
    }
}

/// Four-corner placement of one mosaic.
///
/// Corners are ordered relative to the tow: start-left, start-right,
/// end-right, end-left ("lower" is the start edge). Left and right are as
/// seen facing along the tow, so the order runs counterclockwise on a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoQuad {
    pub corners: [LatLon; 4],
    pub center_start: GeoFix,
    pub center_end: GeoFix,
    /// Bearing from `center_start` to `center_end`, degrees clockwise from north.
    pub heading_deg: f64,
}

impl GeoQuad {
    /// Side lengths in meters (see [`local_meters`]),
    /// in corner order: start edge, right side, end edge, left side.
    pub fn side_lengths_m(&self, earth_radius_m: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (i, len) in out.iter_mut().enumerate() {
            let a = self.corners[i];
            let b = self.corners[(i + 1) % 4];
            let (e, n) = local_meters(a, b, earth_radius_m);
            *len = e.hypot(n);
        }
        out
    }
}

/// East/north meters from `a` to `b`, equirectangular at the mean latitude.
pub fn local_meters(a: LatLon, b: LatLon, earth_radius_m: f64) -> (f64, f64) {
    let k = std::f64::consts::PI * earth_radius_m / 180.0;
    let east = (b.lon - a.lon) * k * ((a.lat + b.lat) / 2.0).to_radians().cos();
    let north = (b.lat - a.lat) * k;
    (east, north)
}

fn coverage_error(track: &GeoTrack, time: f64) -> GeorefError {
    GeorefError::OutsideCoverage {
        time,
        start: track.start_time(),
        end: track.end_time(),
    }
}

/// Index `i` of the segment `[fixes[i], fixes[i+1]]` that contains track time `t`.
fn segment_at(track: &GeoTrack, t: f64) -> Result<usize, GeorefError> {
    let fixes = track.fixes();
    if !(t >= track.start_time() && t <= track.end_time()) {
        return Err(coverage_error(track, t));
    }
    let i = fixes.partition_point(|f| f.time <= t);
    Ok(i.saturating_sub(1).min(fixes.len() - 2))
}

/// Position at frame time `t` (the track's `epoch_offset` is added first).
pub fn interpolate_fix(track: &GeoTrack, t: f64) -> Result<GeoFix, GeorefError> {
    let time = t + track.epoch_offset;
    let i = segment_at(track, time)?;
    let (a, b) = (track.fixes()[i], track.fixes()[i + 1]);
    if time == a.time {
        return Ok(a);
    }
    if time == b.time {
        return Ok(b);
    }
    let w = (time - a.time) / (b.time - a.time);
    Ok(GeoFix::new(
        time,
        a.lat + w * (b.lat - a.lat),
        a.lon + w * (b.lon - a.lon),
    ))
}

fn cos_lat(lat: f64) -> Result<f64, GeorefError> {
    let c = lat.to_radians().cos();
    if c < MIN_COS_LAT {
        return Err(GeorefError::PolarDegeneracy(lat));
    }
    Ok(c)
}

/// `(d_lat_m, d_lon_m)` for the two metric arguments under `mode`.
fn split_offset(mode: OffsetMode, dl_h: f64, dl_v: f64) -> (f64, f64) {
    match mode {
        OffsetMode::Literal => (dl_h, dl_v),
        // (east, north)
        OffsetMode::HeadingAligned => (dl_v, dl_h),
    }
}

/// Moves `fix` by the metric offset `(dl_h, dl_v)`; see the module docs for
/// how each mode assigns the two components.
pub fn geodesic_offset(
    fix: GeoFix,
    dl_h: f64,
    dl_v: f64,
    config: &GeoConfig,
) -> Result<GeoFix, GeorefError> {
    let (d_lat_m, d_lon_m) = split_offset(config.offset_mode, dl_h, dl_v);
    let c = cos_lat(fix.lat)?;
    let k = config.degrees_per_meter();
    let lat = fix.lat + d_lat_m * k;
    if lat.abs() >= 90.0 {
        return Err(GeorefError::LatitudeOverflow(lat));
    }
    let lon = fix.lon + d_lon_m * k / c;
    Ok(GeoFix::new(fix.time, lat, lon))
}

/// Exact inverse of [`geodesic_offset`]: recovers the fix that `(dl_h, dl_v)` moved to `moved`.
pub fn invert_offset(
    moved: GeoFix,
    dl_h: f64,
    dl_v: f64,
    config: &GeoConfig,
) -> Result<GeoFix, GeorefError> {
    let (d_lat_m, d_lon_m) = split_offset(config.offset_mode, dl_h, dl_v);
    let k = config.degrees_per_meter();
    let lat = moved.lat - d_lat_m * k;
    let c = cos_lat(lat)?;
    let lon = moved.lon - d_lon_m * k / c;
    Ok(GeoFix::new(moved.time, lat, lon))
}

/// Equirectangular bearing from `a` to `b`, degrees clockwise from north in `[0, 360)`.
pub fn bearing(a: LatLon, b: LatLon) -> Result<f64, GeorefError> {
    let dlat = b.lat - a.lat;
    let dlon = b.lon - a.lon;
    if dlat == 0.0 && dlon == 0.0 {
        return Err(GeorefError::StationarySegment);
    }
    let deg = (dlon * a.lat.to_radians().cos()).atan2(dlat).to_degrees();
    Ok(if deg < 0.0 { deg + 360.0 } else { deg })
}

/// Bearing of the track segment bracketing frame time `t`.
pub fn track_heading(track: &GeoTrack, t: f64) -> Result<f64, GeorefError> {
    let time = t + track.epoch_offset;
    let i = segment_at(track, time)?;
    let (a, b) = (track.fixes()[i], track.fixes()[i + 1]);
    bearing(a.into(), b.into())
}

/// Parallelogram overlay for a mosaic spanning frame times `start..=end`.
///
/// The short sides are centered on the interpolated track positions at the
/// two ends and are `mosaic_width_m` long. In heading-aligned mode they are
/// perpendicular to the start→end bearing; in literal mode the width offset is
/// passed as the horizontal-shift argument (pure latitude).
pub fn mosaic_quad(
    start: f64,
    end: f64,
    track: &GeoTrack,
    config: &GeoConfig,
) -> Result<GeoQuad, GeorefError> {
    config.validate()?;
    let center_start = interpolate_fix(track, start)?;
    let center_end = interpolate_fix(track, end)?;
    let heading_deg = bearing(center_start.into(), center_end.into())?;
    let half = config.mosaic_width_m / 2.0;

    // (dl_h, dl_v) that moves a center half a width to the right of the tow
    let right = match config.offset_mode {
        OffsetMode::HeadingAligned => {
            let th = heading_deg.to_radians();
            // right-hand normal of (sin θ, cos θ) in (east, north)
            let (east, north) = (th.cos(), -th.sin());
            (east * half, north * half)
        }
        OffsetMode::Literal => (-half, 0.0),
    };
    let left = (-right.0, -right.1);
    let at = |c: GeoFix, (h, v): (f64, f64)| -> Result<LatLon, GeorefError> {
        Ok(geodesic_offset(c, h, v, config)?.into())
    };
    Ok(GeoQuad {
        corners: [
            at(center_start, left)?,
            at(center_start, right)?,
            at(center_end, right)?,
            at(center_end, left)?,
        ],
        center_start,
        center_end,
        heading_deg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn track(points: &[(f64, f64, f64)]) -> GeoTrack {
        GeoTrack::new(
            points.iter().map(|&(t, lat, lon)| GeoFix::new(t, lat, lon)).collect(),
            0.0,
        )
        .unwrap()
    }

    fn heading_cfg() -> GeoConfig {
        GeoConfig::default()
    }

    fn literal_cfg() -> GeoConfig {
        GeoConfig {
            offset_mode: OffsetMode::Literal,
            ..GeoConfig::default()
        }
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let tr = track(&[(0.0, 13.8, 120.6), (2.0, 13.8002, 120.6002), (3.0, 14.0, 121.0)]);
        assert_eq!(interpolate_fix(&tr, 2.0).unwrap(), tr.fixes()[1]);
        assert_eq!(interpolate_fix(&tr, 3.0).unwrap(), tr.fixes()[2]);
        let mid = interpolate_fix(&tr, 1.0).unwrap();
        assert!((mid.lat - 13.8001).abs() < 1e-12);
        assert!((mid.lon - 120.6001).abs() < 1e-12);
        let err = interpolate_fix(&tr, -0.5).unwrap_err();
        assert!(err.to_string().starts_with("time outside GPS coverage"));
        assert!(interpolate_fix(&tr, 3.01).is_err());
    }

    #[test]
    fn epoch_offset_shifts_lookup() {
        let tr = track(&[(100.0, 1.0, 1.0), (110.0, 2.0, 1.0)]).with_epoch_offset(100.0);
        assert!((interpolate_fix(&tr, 5.0).unwrap().lat - 1.5).abs() < 1e-12);
        assert!(interpolate_fix(&tr, 10.5).is_err());
    }

    #[test]
    fn zero_offset_is_identity() {
        let fix = GeoFix::new(0.0, 13.8, 120.6);
        for cfg in [literal_cfg(), heading_cfg()] {
            assert_eq!(geodesic_offset(fix, 0.0, 0.0, &cfg).unwrap(), fix);
        }
    }

    #[test]
    fn literal_one_degree() {
        let cfg = literal_cfg();
        let dl = cfg.earth_radius_m * std::f64::consts::PI / 180.0;
        let out = geodesic_offset(GeoFix::new(0.0, 0.0, 0.0), dl, 0.0, &cfg).unwrap();
        assert!((out.lat - 1.0).abs() < 1e-12);
        assert_eq!(out.lon, 0.0);
    }

    #[test]
    fn heading_aligned_east_at_sixty() {
        // (1000/6371000)(180/π)/cos 60°
        let out = geodesic_offset(GeoFix::new(0.0, 60.0, 0.0), 1000.0, 0.0, &heading_cfg()).unwrap();
        assert!((out.lon - 0.017_986_0).abs() < 5e-7, "{}", out.lon);
        assert!((out.lon - 0.017_986_432_118_374_6).abs() < 1e-12, "{}", out.lon);
        assert_eq!(out.lat, 60.0);
    }

    #[test]
    fn polar_degeneracy() {
        let err = geodesic_offset(GeoFix::new(0.0, 90.0, 0.0), 1.0, 1.0, &literal_cfg()).unwrap_err();
        assert!(matches!(err, GeorefError::PolarDegeneracy(_)));
    }

    #[test]
    fn axis_headings() {
        assert_eq!(bearing(LatLon { lat: 0.0, lon: 0.0 }, LatLon { lat: 1.0, lon: 0.0 }).unwrap(), 0.0);
        assert_eq!(bearing(LatLon { lat: 0.0, lon: 0.0 }, LatLon { lat: 0.0, lon: 1.0 }).unwrap(), 90.0);
        let lat = 40.0_f64;
        let dlon = 0.001;
        let b = bearing(
            LatLon { lat, lon: 10.0 },
            LatLon { lat: lat + dlon * lat.to_radians().cos(), lon: 10.0 + dlon },
        )
        .unwrap();
        assert!((b - 45.0).abs() < 1e-9);
        let tr = track(&[(0.0, 0.0, 0.0), (1.0, 0.0, -1.0)]);
        assert!((track_heading(&tr, 0.5).unwrap() - 270.0).abs() < 1e-12);
        let still = track(&[(0.0, 5.0, 5.0), (1.0, 5.0, 5.0)]);
        assert_eq!(track_heading(&still, 0.2), Err(GeorefError::StationarySegment));
    }

    #[test]
    fn due_north_quad() {
        let cfg = heading_cfg();
        let north = 0.001;
        let tr = track(&[(0.0, 13.8, 120.6), (10.0, 13.8 + north, 120.6)]);
        let q = mosaic_quad(0.0, 5.0, &tr, &cfg).unwrap();
        assert!(q.heading_deg.abs() < 1e-9);
        let start = q.center_start;
        let ll = geodesic_offset(start, -1.5, 0.0, &cfg).unwrap();
        let lr = geodesic_offset(start, 1.5, 0.0, &cfg).unwrap();
        assert!((q.corners[0].lat - ll.lat).abs() < 1e-12);
        assert!((q.corners[0].lon - ll.lon).abs() < 1e-12);
        assert!((q.corners[1].lat - lr.lat).abs() < 1e-12);
        assert!((q.corners[1].lon - lr.lon).abs() < 1e-12);
        assert!(q.corners[1].lon > q.corners[0].lon);
    }

    #[test]
    fn east_quad_offsets_north_south() {
        let cfg = heading_cfg();
        let tr = track(&[(0.0, 10.0, 20.0), (10.0, 10.0, 20.001)]);
        let q = mosaic_quad(1.0, 9.0, &tr, &cfg).unwrap();
        assert!((q.heading_deg - 90.0).abs() < 1e-9);
        // facing east, left is north
        assert!((q.corners[0].lon - q.center_start.lon).abs() < 1e-12);
        assert!(q.corners[0].lat > q.center_start.lat);
        assert!(q.corners[1].lat < q.center_start.lat);
    }

    #[test]
    fn stationary_mosaic_rejected() {
        let tr = track(&[(0.0, 10.0, 20.0), (10.0, 10.0, 20.001)]);
        assert_eq!(
            mosaic_quad(3.0, 3.0, &tr, &heading_cfg()),
            Err(GeorefError::StationarySegment)
        );
    }

    #[test]
    fn offset_mode_parsing() {
        assert_eq!("literal".parse::<OffsetMode>().unwrap(), OffsetMode::Literal);
        assert_eq!("heading".parse::<OffsetMode>().unwrap(), OffsetMode::HeadingAligned);
        assert!("north".parse::<OffsetMode>().is_err());
    }

    proptest! {
        #[test]
        fn literal_round_trip(lat in -80.0f64..80.0, lon in -179.0f64..179.0, h in -100.0f64..100.0, v in -100.0f64..100.0) {
            let cfg = literal_cfg();
            let fix = GeoFix::new(0.0, lat, lon);
            let moved = geodesic_offset(fix, h, v, &cfg).unwrap();
            let back = invert_offset(moved, h, v, &cfg).unwrap();
            prop_assert!((back.lat - lat).abs() <= 1e-12);
            prop_assert!((back.lon - lon).abs() <= 1e-12);
        }

        #[test]
        fn heading_offsets_compose_at_fixed_latitude(lat in -70.0f64..70.0, e1 in -100.0f64..100.0, e2 in -100.0f64..100.0, n1 in -100.0f64..100.0, n2 in -100.0f64..100.0) {
            let cfg = heading_cfg();
            let fix = GeoFix::new(0.0, lat, 33.0);
            let east_steps = geodesic_offset(geodesic_offset(fix, e1, 0.0, &cfg).unwrap(), e2, 0.0, &cfg).unwrap();
            let east_once = geodesic_offset(fix, e1 + e2, 0.0, &cfg).unwrap();
            prop_assert!((east_steps.lon - east_once.lon).abs() <= 1e-9);
            prop_assert!((east_steps.lat - east_once.lat).abs() <= 1e-9);
            let north_steps = geodesic_offset(geodesic_offset(fix, 0.0, n1, &cfg).unwrap(), 0.0, n2, &cfg).unwrap();
            let north_once = geodesic_offset(fix, 0.0, n1 + n2, &cfg).unwrap();
            prop_assert!((north_steps.lat - north_once.lat).abs() <= 1e-9);
        }

        #[test]
        fn quad_geometry(lat in -60.0f64..60.0, lon in -170.0f64..170.0, heading in 0.0f64..360.0, dist in 5.0f64..200.0) {
            let cfg = heading_cfg();
            let start = GeoFix::new(0.0, lat, lon);
            let th = heading.to_radians();
            let end = geodesic_offset(start, dist * th.sin(), dist * th.cos(), &cfg).unwrap();
            let tr = GeoTrack::new(vec![start, GeoFix::new(10.0, end.lat, end.lon)], 0.0).unwrap();
            let q = mosaic_quad(0.0, 10.0, &tr, &cfg).unwrap();
            // midpoints of the short sides sit on the centers
            let mid = |a: LatLon, b: LatLon| ((a.lat + b.lat) / 2.0, (a.lon + b.lon) / 2.0);
            let (ml, mo) = mid(q.corners[0], q.corners[1]);
            prop_assert!((ml - q.center_start.lat).abs() < 1e-9 && (mo - q.center_start.lon).abs() < 1e-9);
            let (ml, mo) = mid(q.corners[2], q.corners[3]);
            prop_assert!((ml - q.center_end.lat).abs() < 1e-9 && (mo - q.center_end.lon).abs() < 1e-9);
            let sides = q.side_lengths_m(cfg.earth_radius_m);
            prop_assert!((sides[0] - 3.0).abs() / 3.0 < 1e-3);
            prop_assert!((sides[2] - 3.0).abs() / 3.0 < 1e-3);
            prop_assert!((sides[1] - sides[3]).abs() / sides[1] < 1e-6);
            prop_assert!((q.heading_deg - heading).abs() < 1e-6 || (q.heading_deg - heading).abs() > 359.999);
        }
    }
}
