//! Planar shift estimation between two strips.
//!
//! Two correlation surfaces are computed through the 2-D FFT: the plain
//! cross-correlation `IFFT(conj(F) ∘ G)` and the phase correlation, which
//! divides every bin of the cross-power spectrum by its magnitude. Both are
//! circular (no zero padding) and use an unnormalized forward transform with a
//! `1/N` inverse, so the CC value at shift `s` equals `Σ_x f(x) g(x + s)`.
//!
//! Surfaces are stored with centered indexing: the zero-shift bin sits at
//! `(floor(h/2), floor(W/2))` and a peak at grid position `(r, c)` reads
//! directly as `dy = r - floor(h/2)`, `dx = c - floor(W/2)`.
//!
//! Sign convention: if `g(x, y) = f(x - a, y - b)` (scene moved right by `a`
//! and down by `b`), the peak is at `(a, b)`.

use std::fmt;
use std::sync::Arc;

use image::{GrayImage, Luma};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::ingest::Strip;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("degenerate pair")]
    DegeneratePair,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CorrelationKind {
    #[serde(rename = "CC")]
    Cross,
    #[serde(rename = "PC")]
    Phase,
}

impl fmt::Display for CorrelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorrelationKind::Cross => f.write_str("CC"),
            CorrelationKind::Phase => f.write_str("PC"),
        }
    }
}

/// Integer displacement of `g` relative to `f`, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shift {
    pub dx: i64,
    pub dy: i64,
    pub source: CorrelationKind,
}

impl Shift {
    pub fn new(dx: i64, dy: i64, source: CorrelationKind) -> Self {
        Self { dx, dy, source }
    }

    pub fn magnitude(&self) -> f64 {
        ((self.dx * self.dx + self.dy * self.dy) as f64).sqrt()
    }

    fn magnitude_sq(&self) -> i64 {
        self.dx * self.dx + self.dy * self.dy
    }

    pub fn same_offset(&self, other: &Shift) -> bool {
        self.dx == other.dx && self.dy == other.dy
    }
}

/// Correlation scores over all circular shifts, centered so that the
/// zero-shift bin is at `(floor(rows/2), floor(cols/2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSurface {
    pub values: Grid,
    pub kind: CorrelationKind,
}

impl CorrelationSurface {
    /// Builds a centered surface from one in raw FFT order (zero shift at `(0, 0)`).
    pub fn from_raw(raw: &Grid, kind: CorrelationKind) -> Self {
        let (rows, cols) = raw.dims();
        let (cr, cc) = (rows / 2, cols / 2);
        let values = Grid::from_fn(rows, cols, |r, c| {
            raw[((r + rows - cr) % rows, (c + cols - cc) % cols)]
        });
        Self { values, kind }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    /// Inclusive range of representable horizontal shifts.
    pub fn dx_range(&self) -> (i64, i64) {
        centered_range(self.values.cols())
    }

    pub fn dy_range(&self) -> (i64, i64) {
        centered_range(self.values.rows())
    }

    /// Score at centered shift `(dx, dy)`, or `None` if out of range.
    pub fn at(&self, dx: i64, dy: i64) -> Option<f64> {
        let (rows, cols) = self.dims();
        let r = dy + (rows / 2) as i64;
        let c = dx + (cols / 2) as i64;
        if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
            return None;
        }
        Some(self.values[(r as usize, c as usize)])
    }

    /// Relative max-norm distance `max|a - b| / max|b|`.
    pub fn relative_distance(&self, reference: &CorrelationSurface) -> f64 {
        assert_eq!(self.dims(), reference.dims());
        let diff = self
            .values
            .as_slice()
            .iter()
            .zip(reference.values.as_slice())
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let scale = reference.values.max_abs();
        if scale == 0.0 {
            diff
        } else {
            diff / scale
        }
    }

    /// Linear min–max rescale to 8-bit for visual inspection.
    pub fn to_gray_image(&self) -> GrayImage {
        let (rows, cols) = self.dims();
        let data = self.values.as_slice();
        let lo = data.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
            let v = (self.values[(y as usize, x as usize)] - lo) / span;
            Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }
}

fn centered_range(n: usize) -> (i64, i64) {
    let lo = -((n / 2) as i64);
    (lo, lo + n as i64 - 1)
}

/// Location of the global maximum in centered coordinates.
///
/// Exact ties are broken by smallest magnitude, then smallest `dy`, then
/// smallest `dx`.
pub fn locate_peak(surface: &CorrelationSurface) -> Shift {
    let (rows, cols) = surface.dims();
    let (cr, cc) = ((rows / 2) as i64, (cols / 2) as i64);
    let mut best: Option<(f64, Shift)> = None;
    for r in 0..rows {
        for c in 0..cols {
            let v = surface.values[(r, c)];
            if v.is_nan() {
                continue;
            }
            let cand = Shift::new(c as i64 - cc, r as i64 - cr, surface.kind);
            let better = match &best {
                None => true,
                Some((bv, bs)) => {
                    v > *bv
                        || (v == *bv
                            && (cand.magnitude_sq(), cand.dy, cand.dx)
                                < (bs.magnitude_sq(), bs.dy, bs.dx))
                }
            };
            if better {
                best = Some((v, cand));
            }
        }
    }
    best.map(|(_, s)| s)
        .unwrap_or_else(|| Shift::new(0, 0, surface.kind))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrelationOptions {
    /// Remove each strip's mean before cross-correlating. Phase correlation
    /// always ignores the DC bin.
    pub mean_subtract: bool,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            mean_subtract: true,
        }
    }
}

/// 2-D spectrum of one strip, kept in the correlator's internal
/// (column-major) layout so it can be reused across pairs.
#[derive(Debug, Clone)]
pub struct Spectrum {
    rows: usize,
    cols: usize,
    bins: Vec<Complex<f64>>,
    constant: bool,
}

impl Spectrum {
    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_constant(&self) -> bool {
        self.constant
    }
}

/// Both correlation peaks for one pair plus the selected one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftEstimate {
    pub selected: Shift,
    pub cc: Shift,
    /// `None` when phase correlation is degenerate for the pair.
    pub pc: Option<Shift>,
}

/// FFT plans for one strip size. Cheap to clone; plans are shared.
#[derive(Clone)]
pub struct Correlator {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    options: CorrelationOptions,
}

impl fmt::Debug for Correlator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Correlator")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("options", &self.options)
            .finish()
    }
}

impl Correlator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self::with_options(rows, cols, CorrelationOptions::default())
    }

    pub fn with_options(rows: usize, cols: usize, options: CorrelationOptions) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
            options,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn options(&self) -> CorrelationOptions {
        self.options
    }

    fn check(&self, rows: usize, cols: usize) -> Result<(), RegistrationError> {
        if (rows, cols) != (self.rows, self.cols) {
            return Err(RegistrationError::DimensionMismatch(
                self.rows, self.cols, rows, cols,
            ));
        }
        Ok(())
    }

    pub fn spectrum(&self, pixels: &Grid) -> Result<Spectrum, RegistrationError> {
        self.check(pixels.rows(), pixels.cols())?;
        let mut buf: Vec<Complex<f64>> = pixels
            .as_slice()
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        self.row_fwd.process(&mut buf);
        let mut bins = transpose(&buf, self.rows, self.cols);
        self.col_fwd.process(&mut bins);
        Ok(Spectrum {
            rows: self.rows,
            cols: self.cols,
            bins,
            constant: pixels.is_constant(),
        })
    }

    /// Inverse of the column-major product back to a raw-order real grid.
    fn inverse(&self, mut product: Vec<Complex<f64>>) -> Grid {
        self.col_inv.process(&mut product);
        let mut rowmajor = transpose(&product, self.cols, self.rows);
        self.row_inv.process(&mut rowmajor);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        Grid::from_vec(
            self.rows,
            self.cols,
            rowmajor.into_iter().map(|z| z.re * scale).collect(),
        )
    }

    fn cross_power(&self, f: &Spectrum, g: &Spectrum, drop_dc: bool) -> Vec<Complex<f64>> {
        let mut product: Vec<Complex<f64>> = f
            .bins
            .iter()
            .zip(&g.bins)
            .map(|(a, b)| a.conj() * b)
            .collect();
        if drop_dc {
            // bin (0, 0) leads in either layout
            product[0] = Complex::new(0.0, 0.0);
        }
        product
    }

    pub fn cross_correlation(
        &self,
        f: &Spectrum,
        g: &Spectrum,
    ) -> Result<CorrelationSurface, RegistrationError> {
        self.check(f.rows, f.cols)?;
        self.check(g.rows, g.cols)?;
        let product = self.cross_power(f, g, self.options.mean_subtract);
        Ok(CorrelationSurface::from_raw(
            &self.inverse(product),
            CorrelationKind::Cross,
        ))
    }

    pub fn phase_correlation(
        &self,
        f: &Spectrum,
        g: &Spectrum,
    ) -> Result<CorrelationSurface, RegistrationError> {
        self.check(f.rows, f.cols)?;
        self.check(g.rows, g.cols)?;
        if f.constant || g.constant {
            return Err(RegistrationError::DegeneratePair);
        }
        let mut product = self.cross_power(f, g, true);
        let peak = product.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
        if peak == 0.0 || !peak.is_finite() {
            return Err(RegistrationError::DegeneratePair);
        }
        let eps = 1e-12 * peak;
        for z in product.iter_mut() {
            *z /= z.norm() + eps;
        }
        Ok(CorrelationSurface::from_raw(
            &self.inverse(product),
            CorrelationKind::Phase,
        ))
    }

    /// Both surfaces for a pair; the phase surface is `None` when degenerate.
    pub fn surfaces(
        &self,
        f: &Spectrum,
        g: &Spectrum,
    ) -> Result<(CorrelationSurface, Option<CorrelationSurface>), RegistrationError> {
        if f.constant && g.constant {
            return Err(RegistrationError::DegeneratePair);
        }
        let cc = self.cross_correlation(f, g)?;
        let pc = match self.phase_correlation(f, g) {
            Ok(surface) => Some(surface),
            Err(RegistrationError::DegeneratePair) => None,
            Err(e) => return Err(e),
        };
        Ok((cc, pc))
    }

    /// Computes both peaks and keeps the one with the smaller displacement.
    pub fn estimate(&self, f: &Spectrum, g: &Spectrum) -> Result<ShiftEstimate, RegistrationError> {
        let (cc, pc) = self.surfaces(f, g)?;
        Ok(ShiftEstimate::from_surfaces(&cc, pc.as_ref()))
    }
}

impl ShiftEstimate {
    /// Least-displacement selection; a magnitude tie goes to phase correlation.
    pub fn from_surfaces(cc: &CorrelationSurface, pc: Option<&CorrelationSurface>) -> Self {
        let cc = locate_peak(cc);
        let pc = pc.map(locate_peak);
        let selected = match pc {
            Some(pc) if pc.magnitude_sq() <= cc.magnitude_sq() => pc,
            _ => cc,
        };
        Self { selected, cc, pc }
    }
}

fn transpose(src: &[Complex<f64>], rows: usize, cols: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

fn pair_correlator(f: &Strip, g: &Strip) -> Result<Correlator, RegistrationError> {
    let (fr, fc) = f.pixels.dims();
    let (gr, gc) = g.pixels.dims();
    if (fr, fc) != (gr, gc) {
        return Err(RegistrationError::DimensionMismatch(fr, fc, gr, gc));
    }
    Ok(Correlator::new(fr, fc))
}

pub fn cross_correlation_surface(
    f: &Strip,
    g: &Strip,
) -> Result<CorrelationSurface, RegistrationError> {
    let corr = pair_correlator(f, g)?;
    corr.cross_correlation(&corr.spectrum(&f.pixels)?, &corr.spectrum(&g.pixels)?)
}

pub fn phase_correlation_surface(
    f: &Strip,
    g: &Strip,
) -> Result<CorrelationSurface, RegistrationError> {
    let corr = pair_correlator(f, g)?;
    corr.phase_correlation(&corr.spectrum(&f.pixels)?, &corr.spectrum(&g.pixels)?)
}

pub fn estimate_shift(f: &Strip, g: &Strip) -> Result<Shift, RegistrationError> {
    let corr = pair_correlator(f, g)?;
    let est = corr.estimate(&corr.spectrum(&f.pixels)?, &corr.spectrum(&g.pixels)?)?;
    Ok(est.selected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn strip(pixels: Grid) -> Strip {
        Strip {
            source_index: 0,
            pixels,
        }
    }

    fn random_grid(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Grid {
        Grid::from_fn(rows, cols, |_, _| rng.random_range(0.0..255.0))
    }

    fn delta_surface(rows: usize, cols: usize, dx: i64, dy: i64) -> CorrelationSurface {
        let mut values = Grid::zeros(rows, cols);
        values[((dy + (rows / 2) as i64) as usize, (dx + (cols / 2) as i64) as usize)] = 1.0;
        CorrelationSurface {
            values,
            kind: CorrelationKind::Cross,
        }
    }

    #[test]
    fn autocorrelation_peaks_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = strip(random_grid(&mut rng, 12, 20));
        let s = locate_peak(&cross_correlation_surface(&f, &f).unwrap());
        assert_eq!((s.dx, s.dy), (0, 0));
    }

    #[test]
    fn cc_recovers_circular_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = strip(random_grid(&mut rng, 16, 24));
        let g = strip(f.pixels.circular_shift(3, -2));
        let s = locate_peak(&cross_correlation_surface(&f, &g).unwrap());
        assert_eq!((s.dx, s.dy), (3, -2));
    }

    #[test]
    fn pc_is_near_delta_at_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = strip(random_grid(&mut rng, 16, 16));
        let g = strip(f.pixels.circular_shift(5, 1));
        let surface = phase_correlation_surface(&f, &g).unwrap();
        let s = locate_peak(&surface);
        assert_eq!((s.dx, s.dy), (5, 1));
        // the DC bin is removed, so the delta carries (N - 1) / N
        assert!((surface.at(5, 1).unwrap() - 255.0 / 256.0).abs() < 1e-9);
    }

    #[test]
    fn pc_ignores_global_dimming() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f = strip(random_grid(&mut rng, 10, 14));
        let g = strip(f.pixels.map(|v| 0.5 * v));
        let s = locate_peak(&phase_correlation_surface(&f, &g).unwrap());
        assert_eq!((s.dx, s.dy), (0, 0));
    }

    #[test]
    fn constant_pair_is_degenerate() {
        let f = strip(Grid::from_fn(8, 8, |_, _| 40.0));
        let g = strip(Grid::from_fn(8, 8, |_, _| 90.0));
        assert_eq!(
            phase_correlation_surface(&f, &g),
            Err(RegistrationError::DegeneratePair)
        );
        assert_eq!(estimate_shift(&f, &g), Err(RegistrationError::DegeneratePair));
    }

    #[test]
    fn constant_target_falls_back_to_cc() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = strip(random_grid(&mut rng, 8, 8));
        let g = strip(Grid::from_fn(8, 8, |_, _| 17.0));
        let s = estimate_shift(&f, &g).unwrap();
        assert_eq!(s.source, CorrelationKind::Cross);
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let f = strip(Grid::zeros(8, 8));
        let g = strip(Grid::zeros(8, 9));
        assert!(matches!(
            cross_correlation_surface(&f, &g),
            Err(RegistrationError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn peak_of_delta() {
        assert_eq!(locate_peak(&delta_surface(9, 11, 0, 0)), Shift::new(0, 0, CorrelationKind::Cross));
        let s = locate_peak(&delta_surface(20, 16, -4, 7));
        assert_eq!((s.dx, s.dy), (-4, 7));
    }

    #[test]
    fn equal_maxima_prefer_least_displacement() {
        let mut surface = delta_surface(12, 16, 2, 0);
        let c = (-5 + 8) as usize;
        surface.values[(6, c)] = 1.0;
        let s = locate_peak(&surface);
        assert_eq!((s.dx, s.dy), (2, 0));

        // same magnitude: smaller dy wins, then smaller dx
        let mut surface = delta_surface(12, 16, 0, 3);
        surface.values[(6 - 3, 8)] = 1.0;
        surface.values[(6, 8 + 3)] = 1.0;
        surface.values[(6, 8 - 3)] = 1.0;
        let s = locate_peak(&surface);
        assert_eq!((s.dx, s.dy), (0, -3));
    }

    #[test]
    fn centered_ranges() {
        let s = delta_surface(7, 8, 0, 0);
        assert_eq!(s.dx_range(), (-4, 3));
        assert_eq!(s.dy_range(), (-3, 3));
        assert_eq!(s.at(0, 0), Some(1.0));
        assert_eq!(s.at(4, 0), None);
    }

    #[test]
    fn disabling_mean_subtraction_changes_only_dc() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = random_grid(&mut rng, 8, 10);
        let g = f.circular_shift(1, 2);
        let raw = Correlator::with_options(8, 10, CorrelationOptions { mean_subtract: false });
        let ms = Correlator::new(8, 10);
        let a = raw.cross_correlation(&raw.spectrum(&f).unwrap(), &raw.spectrum(&g).unwrap()).unwrap();
        let b = ms.cross_correlation(&ms.spectrum(&f).unwrap(), &ms.spectrum(&g).unwrap()).unwrap();
        // the removed DC term is a constant offset of N·mean(f)·mean(g)
        let offset = (8 * 10) as f64 * f.mean() * g.mean();
        for (x, y) in a.values.as_slice().iter().zip(b.values.as_slice()) {
            assert!((x - y - offset).abs() < 1e-6 * offset);
        }
    }
}
