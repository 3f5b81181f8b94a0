//! Fixation streams and their two consumable forms: per-patch time
//! aggregation (model input) and full-resolution visual attention maps
//! (rasterized Gaussian heatmaps, exportable as PGM).
//!
//! Coordinates are fractional pixel indices in row-major frame space: a point
//! `(r, c)` lies inside pixel `(floor r, floor c)`, which must fall inside the
//! declared frame. Durations are seconds inside the crate; the CSV wire format
//! carries milliseconds.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixation {
    pub row: f64,
    pub col: f64,
    /// Dwell time in seconds. Always finite and > 0 for ingested points.
    pub duration_s: f64,
}

/// Fixations tied to the frame geometry their coordinates live in.
#[derive(Debug, Clone, PartialEq)]
pub struct FixationSet {
    pub points: Vec<Fixation>,
    pub height: usize,
    pub width: usize,
}

impl FixationSet {
    pub fn empty(height: usize, width: usize) -> Self {
        FixationSet { points: Vec::new(), height, width }
    }

    pub fn total_duration(&self) -> f64 {
        self.points.iter().map(|p| p.duration_s).sum()
    }

    /// Maps every coordinate into a `new_h` x `new_w` frame by scaling each
    /// axis independently. Results are clamped into the open frame so a point
    /// sitting exactly on the old boundary cannot round out of the new one.
    pub fn rescaled(&self, new_h: usize, new_w: usize) -> FixationSet {
        let sy = new_h as f64 / self.height as f64;
        let sx = new_w as f64 / self.width as f64;
        let max_r = f64::from_bits((new_h as f64).to_bits() - 1);
        let max_c = f64::from_bits((new_w as f64).to_bits() - 1);
        let points = self
            .points
            .iter()
            .map(|p| Fixation {
                row: (p.row * sy).clamp(0.0, max_r),
                col: (p.col * sx).clamp(0.0, max_c),
                duration_s: p.duration_s,
            })
            .collect();
        FixationSet { points, height: new_h, width: new_w }
    }
}

/// Outcome of parsing one fixation CSV: the usable points plus counts of what
/// was discarded and why.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeIngest {
    pub fixations: FixationSet,
    pub dropped_invalid: usize,
    pub dropped_out_of_bounds: usize,
}

/// Parses the `row,col,duration_ms` CSV format against a known frame size.
///
/// Unparsable or non-positive-duration rows and out-of-frame points are
/// dropped and counted, never silently ignored. A zero-byte (or all
/// whitespace) stream is a valid empty set; anything else must begin with the
/// exact header.
pub fn ingest_gaze<R: Read>(reader: R, height: usize, width: usize) -> Result<GazeIngest> {
    let mut raw = String::new();
    let mut r = reader;
    r.read_to_string(&mut raw)?;
    if raw.trim().is_empty() {
        return Ok(GazeIngest {
            fixations: FixationSet::empty(height, width),
            dropped_invalid: 0,
            dropped_out_of_bounds: 0,
        });
    }

    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(raw.as_bytes());
    let headers = csv.headers().map_err(|_| Error::MissingGazeHeader)?;
    let expected = ["row", "col", "duration_ms"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::MissingGazeHeader);
    }

    let mut points = Vec::new();
    let mut dropped_invalid = 0usize;
    let mut dropped_out_of_bounds = 0usize;
    for record in csv.records() {
        let Ok(record) = record else {
            dropped_invalid += 1;
            continue;
        };
        if record.len() == 1 && record[0].is_empty() {
            continue; // blank line
        }
        let parse = |i: usize| record.get(i).and_then(|s| s.parse::<f64>().ok());
        let (Some(row), Some(col), Some(ms)) = (parse(0), parse(1), parse(2)) else {
            dropped_invalid += 1;
            continue;
        };
        if record.len() != 3 || !row.is_finite() || !col.is_finite() || !ms.is_finite() || ms <= 0.0
        {
            dropped_invalid += 1;
            continue;
        }
        if row < 0.0 || col < 0.0 || row >= height as f64 || col >= width as f64 {
            dropped_out_of_bounds += 1;
            continue;
        }
        points.push(Fixation { row, col, duration_s: ms / 1000.0 });
    }
    Ok(GazeIngest {
        fixations: FixationSet { points, height, width },
        dropped_invalid,
        dropped_out_of_bounds,
    })
}

/// Serializes fixations back to the CSV wire format (durations in ms).
pub fn write_gaze_csv<W: Write>(fix: &FixationSet, mut w: W) -> Result<()> {
    writeln!(w, "row,col,duration_ms")?;
    for p in &fix.points {
        writeln!(w, "{},{},{}", p.row, p.col, p.duration_s * 1000.0)?;
    }
    Ok(())
}

/// Partition of an image into an `S x S` patch lattice. The last row/column
/// of patches may be ragged when the image size is not a multiple of `S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_h: usize,
    pub image_w: usize,
    pub patch: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(image_h: usize, image_w: usize, patch: usize) -> Result<Self> {
        if image_h == 0 || image_w == 0 || patch == 0 {
            return Err(Error::InvalidArg(format!(
                "patch grid needs positive dimensions, got {image_h}x{image_w} patch {patch}"
            )));
        }
        Ok(PatchGrid {
            image_h,
            image_w,
            patch,
            rows: image_h.div_ceil(patch),
            cols: image_w.div_ceil(patch),
        })
    }

    pub fn n_patches(&self) -> usize {
        self.rows * self.cols
    }

    /// Patch index owning pixel `(m, n)`.
    pub fn patch_of_pixel(&self, m: usize, n: usize) -> usize {
        (m / self.patch) * self.cols + n / self.patch
    }
}

/// Sums fixation durations into the patch each fixation's pixel belongs to.
///
/// Output length is `grid.n_patches()`; summation runs in input order, so the
/// result is deterministic. Total output mass equals total input duration.
pub fn time_aggregate(fix: &FixationSet, grid: &PatchGrid) -> Result<Vec<f64>> {
    if fix.height != grid.image_h || fix.width != grid.image_w {
        return Err(Error::InvalidArg(format!(
            "fixation frame {}x{} does not match grid {}x{}",
            fix.height, fix.width, grid.image_h, grid.image_w
        )));
    }
    let mut out = vec![0.0; grid.n_patches()];
    for p in &fix.points {
        if p.row < 0.0 || p.col < 0.0 || p.row >= grid.image_h as f64 || p.col >= grid.image_w as f64
        {
            return Err(Error::FixationOutOfBounds {
                row: p.row,
                col: p.col,
                height: grid.image_h,
                width: grid.image_w,
            });
        }
        let m = p.row.floor() as usize;
        let n = p.col.floor() as usize;
        out[grid.patch_of_pixel(m, n)] += p.duration_s;
    }
    Ok(out)
}

/// Scales a non-negative vector to unit sum; an all-zero vector stays zero.
pub fn normalize_durations(v: &[f64]) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    if total <= 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / total).collect()
}

/// Full-resolution attention heatmap with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl AttentionMap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// 8-bit binary PGM; each value is scaled by 255 and rounded.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

/// Rasterizes fixations into a peak-normalized Gaussian attention map.
///
/// Each fixation deposits its duration as an impulse in its containing pixel;
/// the impulse field is convolved with a separable Gaussian truncated at
/// `4 * sigma` per axis (square support), then the map is divided by its
/// maximum. Zero fixations produce a valid all-zero map. Deterministic:
/// accumulation order is fixed by input order and row order.
pub fn rasterize_vam(fix: &FixationSet, sigma: f64) -> Result<AttentionMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArg(format!("rasterize_vam needs sigma > 0, got {sigma}")));
    }
    let (h, w) = (fix.height, fix.width);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArg("rasterize_vam needs a non-empty frame".into()));
    }
    let radius = (4.0 * sigma).floor() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let t = i as f64 - radius as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();

    // Horizontal pass: scatter each impulse's kernel across its own row.
    let mut mid = vec![0.0f64; h * w];
    let mut row_touched = vec![false; h];
    for p in &fix.points {
        if p.row < 0.0 || p.col < 0.0 || p.row >= h as f64 || p.col >= w as f64 {
            return Err(Error::FixationOutOfBounds {
                row: p.row,
                col: p.col,
                height: h,
                width: w,
            });
        }
        let y = p.row.floor() as usize;
        let x = p.col.floor() as usize;
        row_touched[y] = true;
        let lo = x.saturating_sub(radius);
        let hi = (x + radius).min(w - 1);
        let mrow = &mut mid[y * w..(y + 1) * w];
        for c in lo..=hi {
            // kernel index = offset + radius, offset = c - x
            mrow[c] += p.duration_s * kernel[c + radius - x];
        }
    }

    // Vertical pass: scatter each populated row across the rows it reaches.
    let mut out = vec![0.0f64; h * w];
    for (r, touched) in row_touched.iter().enumerate() {
        if !touched {
            continue;
        }
        let mrow = &mid[r * w..(r + 1) * w];
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(h - 1);
        for y in lo..=hi {
            let k = kernel[y + radius - r];
            let orow = &mut out[y * w..(y + 1) * w];
            for c in 0..w {
                orow[c] += k * mrow[c];
            }
        }
    }

    let peak = out.iter().cloned().fold(0.0f64, f64::max);
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(AttentionMap { height: h, width: w, data: out })
}
