//! Inference-path speed comparison: full-resolution attention-map
//! rasterization (the preprocessing a two-stream design needs) versus the
//! direct per-patch dwell aggregation + embedding this pipeline uses.
//!
//! Wall times are measured on deterministic seeded inputs, warmup iterations
//! are discarded, and every timed output folds into a checksum recorded in
//! the report so the work cannot be optimized away. The rasterization arm
//! times the attention map alone — a lower bound on a real two-stream
//! pipeline, which would still have to run its CNN on the result.

use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaze::{normalize_durations, rasterize_vam, time_aggregate, Fixation, FixationSet, PatchGrid};
use crate::graph::gaze_embed;
use crate::model::ModelConfig;
use crate::tape::Tape;

pub const MIN_REPS: usize = 10;
pub const WARMUPS: usize = 3;

/// Timing summary of one measured path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStats {
    /// Per-rep wall times in seconds, warmups already discarded.
    pub samples_s: Vec<f64>,
    pub mean_s: f64,
    pub median_s: f64,
    pub p95_s: f64,
    /// Sum over every output value produced inside the timed region.
    pub checksum: f64,
}

impl PathStats {
    fn from_samples(samples_s: Vec<f64>, checksum: f64) -> Self {
        let mut sorted = samples_s.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let mean_s = sorted.iter().sum::<f64>() / n as f64;
        let median_s = if n % 2 == 0 {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        } else {
            sorted[n / 2]
        };
        // nearest-rank percentile
        let p95_s = sorted[((n as f64 * 0.95).ceil() as usize).clamp(1, n) - 1];
        PathStats { samples_s, mean_s, median_s, p95_s, checksum }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub image_size: usize,
    pub n_fixations: usize,
    pub sigma: f64,
    pub reps: usize,
    pub warmups: usize,
    pub seed: u64,
    pub model_input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub threads: usize,
    pub vam: PathStats,
    pub gaze_embed: PathStats,
    /// vam mean / gaze mean (ratio of averages; skew-sensitive).
    pub speedup_mean: f64,
    /// vam median / gaze median (headline: robust to scheduler noise).
    pub speedup_median: f64,
    pub notes: String,
}

impl BenchReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.speedup_median >= threshold
    }
}

/// Seeded fixation cloud over an `size` x `size` frame.
fn bench_fixations(size: usize, n: usize, seed: u64) -> FixationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| Fixation {
            row: rng.random_range(0.0..size as f64),
            col: rng.random_range(0.0..size as f64),
            duration_s: rng.random_range(0.1..2.0),
        })
        .collect();
    FixationSet { points, height: size, width: size }
}

/// Times both paths on identical seeded inputs. The rasterization arm runs
/// at full `image_size`; the aggregation arm rescales the same fixations to
/// the model frame, aggregates per patch, normalizes and embeds. Both arms
/// run single-threaded.
pub fn bench_paths(
    image_size: usize,
    n_fixations: usize,
    sigma: f64,
    reps: usize,
    model_cfg: &ModelConfig,
    seed: u64,
) -> Result<BenchReport> {
    if reps < MIN_REPS {
        return Err(Error::Bench(format!("need at least {MIN_REPS} reps, got {reps}")));
    }
    if image_size == 0 {
        return Err(Error::Bench("image_size must be positive".into()));
    }
    model_cfg.validate()?;
    let fix = bench_fixations(image_size, n_fixations, seed);
    let side = model_cfg.input_size;
    let grid = PatchGrid::new(side, side, model_cfg.patch_size)?;
    let d = model_cfg.embed_dim;

    let mut vam_samples = Vec::with_capacity(reps);
    let mut vam_checksum = 0.0;
    for rep in 0..WARMUPS + reps {
        let t0 = Instant::now();
        let map = rasterize_vam(&fix, sigma)?;
        let elapsed = t0.elapsed().as_secs_f64();
        let sum: f64 = black_box(&map).data.iter().sum();
        if rep >= WARMUPS {
            vam_samples.push(elapsed);
            vam_checksum += sum;
        }
    }

    let mut gaze_samples = Vec::with_capacity(reps);
    let mut gaze_checksum = 0.0;
    for rep in 0..WARMUPS + reps {
        let t0 = Instant::now();
        let rescaled = fix.rescaled(side, side);
        let per_patch = time_aggregate(&rescaled, &grid)?;
        let durations = normalize_durations(&per_patch);
        let tape = Tape::new();
        let dur_var = tape.input(durations.clone(), vec![durations.len()])?;
        let embedded = gaze_embed(&tape, &dur_var, d)?;
        let elapsed = t0.elapsed().as_secs_f64();
        let sum: f64 = black_box(&embedded).value().iter().sum();
        if rep >= WARMUPS {
            gaze_samples.push(elapsed);
            gaze_checksum += sum;
        }
    }

    let vam = PathStats::from_samples(vam_samples, vam_checksum);
    let gaze_embed_stats = PathStats::from_samples(gaze_samples, gaze_checksum);
    let speedup_mean = vam.mean_s / gaze_embed_stats.mean_s;
    let speedup_median = vam.median_s / gaze_embed_stats.median_s;
    Ok(BenchReport {
        image_size,
        n_fixations,
        sigma,
        reps,
        warmups: WARMUPS,
        seed,
        model_input_size: side,
        patch_size: model_cfg.patch_size,
        embed_dim: d,
        threads: 1,
        vam,
        gaze_embed: gaze_embed_stats,
        speedup_mean,
        speedup_median,
        notes: format!(
            "rasterization timed alone at {image_size}x{image_size} (sigma {sigma}, \
             truncated at 4 sigma): a lower bound on two-stream preprocessing cost; \
             aggregation path rescales {n_fixations} fixations to {side}x{side}, \
             aggregates over {} patches and embeds into {d} dims; compute only, no I/O",
            grid.n_patches()
        ),
    })
}

/// Human-readable summary table.
pub fn format_bench_report(r: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>14}  {:>12}  {:>12}  {:>12}\n",
        "path", "mean_s", "median_s", "p95_s"
    ));
    out.push_str(&format!(
        "{:>14}  {:>12.6}  {:>12.6}  {:>12.6}\n",
        "vam", r.vam.mean_s, r.vam.median_s, r.vam.p95_s
    ));
    out.push_str(&format!(
        "{:>14}  {:>12.6}  {:>12.6}  {:>12.6}\n",
        "gaze_embed", r.gaze_embed.mean_s, r.gaze_embed.median_s, r.gaze_embed.p95_s
    ));
    out.push_str(&format!(
        "speedup: {:.2}x median, {:.2}x mean ({} reps after {} warmups)\n",
        r.speedup_median, r.speedup_mean, r.reps, r.warmups
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            input_size: 32,
            patch_size: 8,
            embed_dim: 8,
            blocks: 1,
            classes: 3,
            k: 4,
            ffn_ratio: 2,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn too_few_reps_are_refused() {
        let err = bench_paths(64, 10, 4.0, 9, &tiny_model(), 0).unwrap_err();
        assert!(matches!(err, Error::Bench(_)), "got {err}");
    }

    #[test]
    fn report_is_structurally_complete_and_deterministic_in_content() {
        let a = bench_paths(64, 20, 3.0, 10, &tiny_model(), 5).unwrap();
        let b = bench_paths(64, 20, 3.0, 10, &tiny_model(), 5).unwrap();
        assert_eq!(a.vam.samples_s.len(), 10);
        assert_eq!(a.gaze_embed.samples_s.len(), 10);
        assert!(a.vam.mean_s > 0.0 && a.gaze_embed.mean_s > 0.0);
        assert!(a.speedup_mean > 0.0 && a.speedup_median > 0.0);
        // identical inputs -> identical checksums (timings may differ)
        assert_eq!(a.vam.checksum, b.vam.checksum);
        assert_eq!(a.gaze_embed.checksum, b.gaze_embed.checksum);
        assert_ne!(a.vam.checksum, 0.0);
        let table = format_bench_report(&a);
        assert!(table.contains("vam") && table.contains("gaze_embed") && table.contains("speedup"));
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.contains("speedup_median") && json.contains("checksum"));
    }

    #[test]
    fn zero_fixations_still_benchmarks_with_zero_maps() {
        let r = bench_paths(64, 0, 3.0, 10, &tiny_model(), 1).unwrap();
        assert_eq!(r.vam.checksum, 0.0, "no fixations -> zero attention map");
        assert_eq!(r.gaze_embed.checksum, 0.0);
        assert!(r.vam.mean_s > 0.0);
    }

    #[test]
    fn smaller_sigma_means_less_rasterization_work() {
        // min-of-reps timing comparison at a 4x kernel-area difference
        let model = tiny_model();
        let full = bench_paths(600, 50, 24.0, 10, &model, 2).unwrap();
        let half = bench_paths(600, 50, 12.0, 10, &model, 2).unwrap();
        let min_full = full.vam.samples_s.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_half = half.vam.samples_s.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            min_half < min_full,
            "halved sigma must rasterize faster: {min_half} vs {min_full}"
        );
    }

    #[test]
    fn percentile_and_median_come_from_sorted_samples() {
        let s = PathStats::from_samples(vec![5.0, 1.0, 3.0, 2.0, 4.0], 0.0);
        assert_eq!(s.median_s, 3.0);
        assert_eq!(s.mean_s, 3.0);
        assert_eq!(s.p95_s, 5.0);
        let e = PathStats::from_samples(vec![4.0, 1.0, 3.0, 2.0], 0.0);
        assert_eq!(e.median_s, 2.5);
    }
}
