//! Dataset plumbing: grayscale image IO, JSON-lines manifests, the synthetic
//! gaze-classification corpus, and per-sample preparation for the model.
//!
//! Images travel as `f64` in `[0, 1]`. Dataset files are 16-bit binary PGM;
//! any grayscale-decodable image loads. A manifest line is
//! `{"image_path": ..., "gaze_path": ..., "label": n}` with paths relative to
//! the manifest's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::resize_bilinear;
use crate::error::{Error, Result};
use crate::gaze::{
    ingest_gaze, normalize_durations, time_aggregate, write_gaze_csv, Fixation, FixationSet,
    PatchGrid,
};

// ------------------------------- image IO -------------------------------

/// Writes a 16-bit binary PGM (big-endian samples, as the format requires).
pub fn write_pgm16<W: Write>(mut w: W, data: &[f64], height: usize, width: usize) -> Result<()> {
    if data.len() != height * width {
        return Err(Error::InvalidArg(format!(
            "pgm16 expects {height}x{width} = {} values, got {}",
            height * width,
            data.len()
        )));
    }
    write!(w, "P5\n{width} {height}\n65535\n")?;
    let mut bytes = Vec::with_capacity(data.len() * 2);
    for v in data {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

/// Loads any grayscale-decodable image as `[0, 1]` values.
pub fn load_image_gray(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)?;
    let gray = img.to_luma16();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
    Ok((data, h, w))
}

// ------------------------------- manifest -------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub gaze_path: String,
    pub label: usize,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Dataset(format!("cannot open manifest {}: {e}", path.display())))?;
    let mut entries = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::Dataset(format!("manifest {}:{}: {e}", path.display(), lineno + 1))
        })?;
        entries.push(entry);
    }
    Ok(entries)
}

pub fn write_manifest<W: Write>(mut w: W, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        writeln!(w)?;
    }
    Ok(())
}

// ----------------------------- loaded samples -----------------------------

/// A sample as stored on disk: native resolution, fixations in that frame.
#[derive(Debug, Clone)]
pub struct RawSample {
    pub image: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub fixations: FixationSet,
    pub label: usize,
}

/// A sample scaled to the model's square input frame.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub image: Vec<f64>,
    pub fixations: FixationSet,
    pub label: usize,
    pub size: usize,
}

pub fn load_sample(manifest_dir: &Path, entry: &ManifestEntry) -> Result<RawSample> {
    let (image, height, width) = load_image_gray(&manifest_dir.join(&entry.image_path))?;
    let gaze_path = manifest_dir.join(&entry.gaze_path);
    let file = fs::File::open(&gaze_path)
        .map_err(|e| Error::Dataset(format!("cannot open gaze {}: {e}", gaze_path.display())))?;
    let ingest = ingest_gaze(BufReader::new(file), height, width)?;
    Ok(RawSample { image, height, width, fixations: ingest.fixations, label: entry.label })
}

/// Scales image and fixations to the model frame. Same-size inputs pass
/// through untouched; anything else is an explicit bilinear resize plus the
/// matching fixation rescale.
pub fn prepare_sample(raw: &RawSample, input_size: usize) -> Result<PreparedSample> {
    let (image, fixations) = if raw.height == input_size && raw.width == input_size {
        (raw.image.clone(), raw.fixations.clone())
    } else {
        (
            resize_bilinear(&raw.image, raw.height, raw.width, input_size)?,
            raw.fixations.rescaled(input_size, input_size),
        )
    };
    Ok(PreparedSample { image, fixations, label: raw.label, size: input_size })
}

pub fn load_dataset(manifest_path: &Path, input_size: usize) -> Result<Vec<PreparedSample>> {
    let dir = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let entries = read_manifest(manifest_path)?;
    if entries.is_empty() {
        return Err(Error::Dataset(format!("manifest {} is empty", manifest_path.display())));
    }
    entries
        .iter()
        .map(|e| prepare_sample(&load_sample(&dir, e)?, input_size))
        .collect()
}

/// Per-patch dwell times for the model: aggregate, then scale to unit sum
/// unless `raw` is set. (An all-zero vector stays zero either way.)
pub fn patch_durations(fix: &FixationSet, grid: &PatchGrid, raw: bool) -> Result<Vec<f64>> {
    let agg = time_aggregate(fix, grid)?;
    Ok(if raw { agg } else { normalize_durations(&agg) })
}

/// The no-gaze stand-in: the same constant at every patch, carrying zero
/// information while keeping input magnitudes comparable.
pub fn uniform_durations(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

// ---------------------------- synthetic corpus ----------------------------

/// Synthetic task: the image holds one *class blob* plus three brighter-or-
/// dimmer decoys; the label is the horizontal band (class index) containing
/// the class blob. Amplitude ranges overlap, so pixels alone leave the class
/// blob ambiguous — but fixations dwell overwhelmingly on it, so gaze
/// disambiguates. This is the fixture behind the gaze-on/off comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub side: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { n_samples: 300, side: 64, classes: 3, seed: 0 }
    }
}

fn render_blob(img: &mut [f64], side: usize, cy: f64, cx: f64, radius: f64, amp: f64) {
    let support = (3.0 * radius).ceil() as isize;
    let (py, px) = (cy.floor() as isize, cx.floor() as isize);
    for m in (py - support).max(0)..(py + support + 1).min(side as isize) {
        for n in (px - support).max(0)..(px + support + 1).min(side as isize) {
            let dy = m as f64 + 0.5 - cy;
            let dx = n as f64 + 0.5 - cx;
            img[m as usize * side + n as usize] +=
                amp * (-(dy * dy + dx * dx) / (2.0 * radius * radius)).exp();
        }
    }
}

/// One synthetic sample: image, fixations and label.
pub fn synth_sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng, label: usize) -> (Vec<f64>, FixationSet) {
    let side = cfg.side;
    let s = side as f64;
    let band = s / cfg.classes as f64;
    let radius = rng.random_range(s / 16.0..s / 10.0);

    // Class blob: centred inside its band, bright but inside the decoy range.
    let cy = rng.random_range(label as f64 * band + radius..(label as f64 + 1.0) * band - radius);
    let cx = rng.random_range(radius..s - radius);
    let class_amp = rng.random_range(0.42..0.55);

    let mut img = vec![0.0; side * side];
    for v in img.iter_mut() {
        *v = 0.08 + rng.random_range(0.0..0.04);
    }
    render_blob(&mut img, side, cy, cx, radius, class_amp);
    for _ in 0..3 {
        let dy = rng.random_range(radius..s - radius);
        let dx = rng.random_range(radius..s - radius);
        let amp = rng.random_range(0.35..0.52);
        let r = rng.random_range(s / 16.0..s / 10.0);
        render_blob(&mut img, side, dy, dx, r, amp);
    }
    for v in img.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    // Fixations: 12 long dwells on the class blob, 4 brief strays anywhere.
    let mut points = Vec::with_capacity(16);
    for _ in 0..12 {
        let jitter = radius / 2.0;
        let row = (cy + rng.random_range(-jitter..jitter)).clamp(0.0, s - 1e-6);
        let col = (cx + rng.random_range(-jitter..jitter)).clamp(0.0, s - 1e-6);
        points.push(Fixation { row, col, duration_s: rng.random_range(0.15..0.35) });
    }
    for _ in 0..4 {
        points.push(Fixation {
            row: rng.random_range(0.0..s - 1e-6),
            col: rng.random_range(0.0..s - 1e-6),
            duration_s: rng.random_range(0.01..0.04),
        });
    }
    (img, FixationSet { points, height: side, width: side })
}

/// Writes the synthetic corpus under `out_dir`: `images/*.pgm`,
/// `gaze/*.csv` and `manifest.jsonl`. Labels cycle round-robin so classes
/// stay balanced. Fully determined by the config (including its seed).
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    if cfg.n_samples == 0 || cfg.classes < 2 || cfg.side < 16 {
        return Err(Error::InvalidArg(
            "synthesis needs n_samples > 0, classes >= 2, side >= 16".into(),
        ));
    }
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("gaze"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let label = i % cfg.classes;
        let (img, fix) = synth_sample(cfg, &mut rng, label);
        let image_path = format!("images/img_{i:05}.pgm");
        let gaze_path = format!("gaze/gaze_{i:05}.csv");
        write_pgm16(fs::File::create(out_dir.join(&image_path))?, &img, cfg.side, cfg.side)?;
        write_gaze_csv(&fix, fs::File::create(out_dir.join(&gaze_path))?)?;
        entries.push(ManifestEntry { image_path, gaze_path, label });
    }
    write_manifest(fs::File::create(out_dir.join("manifest.jsonl"))?, &entries)?;
    Ok(entries)
}

pub fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn pgm16_roundtrips_through_the_image_loader() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        let data: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
        write_pgm16(fs::File::create(&path).unwrap(), &data, 4, 6).unwrap();
        let (back, h, w) = load_image_gray(&path).unwrap();
        assert_eq!((h, w), (4, 6));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn manifest_roundtrip_and_error_reporting() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let entries = vec![
            ManifestEntry { image_path: "a.pgm".into(), gaze_path: "a.csv".into(), label: 2 },
            ManifestEntry { image_path: "b.pgm".into(), gaze_path: "b.csv".into(), label: 0 },
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &entries).unwrap();
        fs::write(&path, &buf).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), entries);

        fs::write(&path, b"{\"image_path\": \"a.pgm\"}\n").unwrap();
        let err = read_manifest(&path).unwrap_err().to_string();
        assert!(err.contains(":1:"), "error should cite the line: {err}");
    }

    #[test]
    fn synthesis_is_deterministic_across_runs() {
        let cfg = SynthConfig { n_samples: 6, side: 32, ..SynthConfig::default() };
        let da = tempdir().unwrap();
        let db = tempdir().unwrap();
        let ea = synth_dataset(&cfg, da.path()).unwrap();
        let eb = synth_dataset(&cfg, db.path()).unwrap();
        assert_eq!(ea, eb);
        for name in ["manifest.jsonl", "images/img_00003.pgm", "gaze/gaze_00005.csv"] {
            let a = fs::read(da.path().join(name)).unwrap();
            let b = fs::read(db.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} must be byte-identical across same-seed runs");
        }
        let other = tempdir().unwrap();
        let cfg2 = SynthConfig { seed: 1, ..cfg };
        synth_dataset(&cfg2, other.path()).unwrap();
        let a = fs::read(da.path().join("images/img_00000.pgm")).unwrap();
        let b = fs::read(other.path().join("images/img_00000.pgm")).unwrap();
        assert_ne!(a, b, "different seeds must produce different pixels");
    }

    #[test]
    fn gaze_mass_concentrates_in_the_labelled_band() {
        let cfg = SynthConfig { n_samples: 30, side: 64, ..SynthConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut hits = 0;
        for i in 0..cfg.n_samples {
            let label = i % cfg.classes;
            let (_, fix) = synth_sample(&cfg, &mut rng, label);
            // fold dwell time into 3 horizontal bands directly
            let band = cfg.side as f64 / cfg.classes as f64;
            let mut mass = vec![0.0; cfg.classes];
            for p in &fix.points {
                mass[((p.row / band) as usize).min(cfg.classes - 1)] += p.duration_s;
            }
            let best = (0..cfg.classes).max_by(|&a, &b| mass[a].total_cmp(&mass[b])).unwrap();
            if best == label {
                hits += 1;
            }
        }
        assert!(hits >= 28, "dwell mass should pick the labelled band, got {hits}/30");
    }

    #[test]
    fn loading_and_preparing_scales_both_image_and_fixations() {
        let cfg = SynthConfig { n_samples: 3, side: 48, ..SynthConfig::default() };
        let dir = tempdir().unwrap();
        synth_dataset(&cfg, dir.path()).unwrap();
        let samples = load_dataset(&manifest_path(dir.path()), 32).unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            assert_eq!(s.image.len(), 32 * 32);
            assert_eq!((s.fixations.height, s.fixations.width), (32, 32));
            assert!(s.fixations.points.iter().all(|p| p.row < 32.0 && p.col < 32.0));
            assert!(s.label < 3);
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn patch_durations_normalizes_unless_raw() {
        let fix = FixationSet {
            points: vec![
                Fixation { row: 1.0, col: 1.0, duration_s: 0.5 },
                Fixation { row: 5.0, col: 5.0, duration_s: 1.5 },
            ],
            height: 8,
            width: 8,
        };
        let grid = PatchGrid::new(8, 8, 4).unwrap();
        assert_eq!(patch_durations(&fix, &grid, true).unwrap(), vec![0.5, 0.0, 0.0, 1.5]);
        assert_eq!(patch_durations(&fix, &grid, false).unwrap(), vec![0.25, 0.0, 0.0, 0.75]);
        assert_eq!(uniform_durations(4), vec![0.25; 4]);
    }
}
