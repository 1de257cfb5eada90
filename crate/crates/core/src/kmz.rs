//! KML ground overlays packaged as KMZ archives.
//!
//! Each mosaic becomes one `GroundOverlay` pinned by a `gx:LatLonQuad`.
//! A LatLonQuad lists the image's own corners (lower-left, lower-right,
//! upper-right, upper-left). Mosaic images grow downward in the tow
//! direction and are seen from above, so the image's bottom edge is the
//! quad's end edge and the image's left edge is the tow's right-hand side:
//!
//! | image corner | quad corner |
//! |--------------|-------------|
//! | lower-left   | end-right   |
//! | lower-right  | end-left    |
//! | upper-right  | start-left  |
//! | upper-left   | start-right |
//!
//! Archives hold `doc.kml` as their first member, followed by the images
//! under `files/`, all deflate-compressed with a fixed timestamp so output is
//! byte-reproducible.

use std::fs;
use std::io::{self, Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use quick_xml::escape::escape;
use quick_xml::events::Event;
use quick_xml::Reader;
use thiserror::Error;
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, ZipArchive, ZipWriter};

use crate::georef::{GeoQuad, LatLon};

pub const DEFAULT_BATCH_SIZE: usize = 100;
pub const DOC_NAME: &str = "doc.kml";

#[derive(Debug, Error)]
pub enum KmzError {
    #[error("no overlays to render")]
    Empty,
    #[error("{entries} overlay entries but {images} images")]
    CountMismatch { entries: usize, images: usize },
    #[error("duplicate image name {0}")]
    DuplicateImage(String),
    #[error("batch size must be positive")]
    ZeroBatch,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Zip {
        path: PathBuf,
        #[source]
        source: zip::result::ZipError,
    },
    #[error("malformed KML: {0}")]
    Kml(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlayEntry {
    pub mosaic_index: usize,
    /// Archive-relative image path, e.g. `files/mosaic_00000.png`.
    pub image_name: String,
    pub quad: GeoQuad,
    pub draw_order: i64,
}

/// Image-corner order (LL, LR, UR, UL) of a quad; see the module table.
pub fn image_corners(quad: &GeoQuad) -> [LatLon; 4] {
    let c = quad.corners;
    [c[2], c[3], c[0], c[1]]
}

/// Inverse of [`image_corners`].
pub fn quad_corners(image: [LatLon; 4]) -> [LatLon; 4] {
    [image[2], image[3], image[0], image[1]]
}

pub fn overlay_name(mosaic_index: usize) -> String {
    format!("mosaic_{mosaic_index:05}")
}

pub fn render_kml(entries: &[OverlayEntry]) -> Result<String, KmzError> {
    if entries.is_empty() {
        return Err(KmzError::Empty);
    }
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<kml xmlns=\"http://www.opengis.net/kml/2.2\" xmlns:gx=\"http://www.google.com/kml/ext/2.2\">\n",
    );
    out.push_str("<Document>\n");
    for e in entries {
        let coords = image_corners(&e.quad)
            .iter()
            .map(|c| format!("{:.9},{:.9}", c.lon, c.lat))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str("  <GroundOverlay>\n");
        out.push_str(&format!("    <name>{}</name>\n", overlay_name(e.mosaic_index)));
        out.push_str(&format!("    <drawOrder>{}</drawOrder>\n", e.draw_order));
        out.push_str(&format!(
            "    <Icon><href>{}</href></Icon>\n",
            escape(e.image_name.as_str())
        ));
        out.push_str(&format!(
            "    <gx:LatLonQuad><coordinates>{coords}</coordinates></gx:LatLonQuad>\n"
        ));
        out.push_str("  </GroundOverlay>\n");
    }
    out.push_str("</Document>\n</kml>\n");
    Ok(out)
}

/// One overlay as read back from KML.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedOverlay {
    pub name: String,
    pub href: String,
    pub draw_order: i64,
    /// Quad order: start-left, start-right, end-right, end-left.
    pub corners: [LatLon; 4],
}

fn parse_coordinates(text: &str) -> Result<[LatLon; 4], KmzError> {
    let points: Vec<LatLon> = text
        .split_whitespace()
        .map(|tuple| {
            let mut it = tuple.split(',');
            let lon = it.next().and_then(|v| v.parse::<f64>().ok());
            let lat = it.next().and_then(|v| v.parse::<f64>().ok());
            match (lon, lat) {
                (Some(lon), Some(lat)) => Ok(LatLon { lat, lon }),
                _ => Err(KmzError::Kml(format!("bad coordinate tuple {tuple:?}"))),
            }
        })
        .collect::<Result<_, _>>()?;
    let image: [LatLon; 4] = points
        .try_into()
        .map_err(|p: Vec<LatLon>| KmzError::Kml(format!("LatLonQuad has {} points", p.len())))?;
    Ok(quad_corners(image))
}

/// Reads every `GroundOverlay` of a KML document. Fails on malformed XML.
pub fn parse_kml(text: &str) -> Result<Vec<ParsedOverlay>, KmzError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);
    let mut path: Vec<String> = Vec::new();
    let mut out = Vec::new();
    let mut current: Option<(String, String, i64, Option<[LatLon; 4]>)> = None;
    loop {
        match reader.read_event() {
            Err(e) => return Err(KmzError::Kml(e.to_string())),
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if name == "GroundOverlay" {
                    current = Some((String::new(), String::new(), 0, None));
                }
                path.push(name);
            }
            Ok(Event::End(e)) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                if path.pop().as_deref() != Some(name.as_str()) {
                    return Err(KmzError::Kml(format!("unbalanced </{name}>")));
                }
                if name == "GroundOverlay" {
                    let (name, href, draw_order, corners) =
                        current.take().expect("inside GroundOverlay");
                    let corners =
                        corners.ok_or_else(|| KmzError::Kml(format!("{name}: no LatLonQuad")))?;
                    out.push(ParsedOverlay {
                        name,
                        href,
                        draw_order,
                        corners,
                    });
                }
            }
            Ok(Event::Text(t)) => {
                let text = t
                    .unescape()
                    .map_err(|e| KmzError::Kml(e.to_string()))?
                    .into_owned();
                let Some(cur) = current.as_mut() else { continue };
                match path.last().map(String::as_str) {
                    Some("name") => cur.0 = text,
                    Some("href") => cur.1 = text,
                    Some("drawOrder") => {
                        cur.2 = text
                            .trim()
                            .parse()
                            .map_err(|_| KmzError::Kml(format!("bad drawOrder {text:?}")))?
                    }
                    Some("coordinates")
                        if path.iter().rev().nth(1).map(String::as_str) == Some("gx:LatLonQuad") =>
                    {
                        cur.3 = Some(parse_coordinates(&text)?)
                    }
                    _ => {}
                }
            }
            Ok(_) => {}
        }
    }
    if !path.is_empty() {
        return Err(KmzError::Kml(format!("unclosed <{}>", path.join("/"))));
    }
    Ok(out)
}

/// Index ranges of each archive: `batch_size` entries each, remainder last.
pub fn batch_ranges(count: usize, batch_size: usize) -> Result<Vec<Range<usize>>, KmzError> {
    if batch_size == 0 {
        return Err(KmzError::ZeroBatch);
    }
    Ok((0..count)
        .step_by(batch_size)
        .map(|start| start..(start + batch_size).min(count))
        .collect())
}

pub fn kmz_file_name(slug: &str, batch: usize) -> String {
    format!("transect_{slug}_batch_{batch:03}.kmz")
}

/// Lowercase ASCII alphanumerics with single `_` separators.
pub fn slugify(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    let out = out.trim_end_matches('_').to_string();
    if out.is_empty() {
        "survey".to_string()
    } else {
        out
    }
}

fn zip_options() -> SimpleFileOptions {
    SimpleFileOptions::default()
        .compression_method(CompressionMethod::Deflated)
        .last_modified_time(zip::DateTime::default())
        .unix_permissions(0o644)
}

/// Writes one archive: `doc.kml` first, then each image under its entry's name.
pub fn write_kmz(entries: &[OverlayEntry], images: &[PathBuf], out_path: &Path) -> Result<(), KmzError> {
    if entries.len() != images.len() {
        return Err(KmzError::CountMismatch {
            entries: entries.len(),
            images: images.len(),
        });
    }
    let mut seen = std::collections::HashSet::new();
    for e in entries {
        if !seen.insert(e.image_name.as_str()) {
            return Err(KmzError::DuplicateImage(e.image_name.clone()));
        }
    }
    let doc = render_kml(entries)?;
    let zip_err = |source| KmzError::Zip {
        path: out_path.to_path_buf(),
        source,
    };
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| KmzError::Io { path, source }
    };
    let file = fs::File::create(out_path).map_err(io_err(out_path))?;
    let mut zip = ZipWriter::new(io::BufWriter::new(file));
    zip.start_file(DOC_NAME, zip_options()).map_err(zip_err)?;
    zip.write_all(doc.as_bytes()).map_err(io_err(out_path))?;
    for (entry, image) in entries.iter().zip(images) {
        let bytes = fs::read(image).map_err(io_err(image))?;
        zip.start_file(entry.image_name.as_str(), zip_options())
            .map_err(zip_err)?;
        zip.write_all(&bytes).map_err(io_err(out_path))?;
    }
    let mut inner = zip.finish().map_err(zip_err)?;
    inner.flush().map_err(io_err(out_path))?;
    Ok(())
}

/// Member names (in archive order) and the `doc.kml` text of an archive.
#[derive(Debug, Clone)]
pub struct KmzContents {
    pub members: Vec<String>,
    pub kml: String,
}

pub fn read_kmz(path: &Path) -> Result<KmzContents, KmzError> {
    let zip_err = |source| KmzError::Zip {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(|source| KmzError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut archive = ZipArchive::new(file).map_err(zip_err)?;
    let members = (0..archive.len())
        .map(|i| archive.by_index(i).map(|f| f.name().to_string()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(zip_err)?;
    let mut kml = String::new();
    archive
        .by_name(DOC_NAME)
        .map_err(zip_err)?
        .read_to_string(&mut kml)
        .map_err(|source| KmzError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(KmzContents { members, kml })
}
