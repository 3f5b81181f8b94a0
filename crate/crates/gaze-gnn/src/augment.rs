//! Training-time geometric augmentation: random resized crop, horizontal
//! flip and small rotation, applied consistently to an image and its
//! fixations.
//!
//! All geometry lives in continuous pixel-center coordinates: pixel `(m, n)`
//! sits at the point `(m + 0.5, n + 0.5)`. The image is resampled through the
//! inverse transform (bilinear, zero fill); fixations travel through the
//! forward transform and points leaving the frame are dropped.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gaze::{Fixation, FixationSet};

/// One sampled transform: crop rectangle in source coordinates (continuous),
/// optional horizontal flip, rotation about the output centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub crop_top: f64,
    pub crop_left: f64,
    pub crop_h: f64,
    pub crop_w: f64,
    pub hflip: bool,
    pub angle_rad: f64,
}

impl AugmentParams {
    /// The identity at a given source size (full-frame crop, no flip/turn):
    /// applying it to an image is a plain bilinear resize.
    pub fn identity(src_h: usize, src_w: usize) -> Self {
        AugmentParams {
            crop_top: 0.0,
            crop_left: 0.0,
            crop_h: src_h as f64,
            crop_w: src_w as f64,
            hflip: false,
            angle_rad: 0.0,
        }
    }
}

/// Maximum rotation magnitude (radians): 5 degrees.
pub const MAX_ROTATION_RAD: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// Samples a random resized crop covering 80-100% of the source area at an
/// aspect ratio in [3/4, 4/3], a fair-coin horizontal flip and a rotation
/// uniform in +-5 degrees.
pub fn sample_augment(rng: &mut ChaCha8Rng, src_h: usize, src_w: usize) -> AugmentParams {
    let (h, w) = (src_h as f64, src_w as f64);
    let area = h * w;
    // A few proposals, then fall back to the full frame; some aspect/scale
    // pairs cannot fit inside the source rectangle.
    let mut crop = None;
    for _ in 0..10 {
        let target_area = area * rng.random_range(0.8..1.0);
        let aspect = rng.random_range(0.75..(4.0 / 3.0)); // width / height
        let ch = (target_area / aspect).sqrt();
        let cw = ch * aspect;
        if ch <= h && cw <= w {
            let top = rng.random_range(0.0..=(h - ch));
            let left = rng.random_range(0.0..=(w - cw));
            crop = Some((top, left, ch, cw));
            break;
        }
    }
    let (crop_top, crop_left, crop_h, crop_w) = crop.unwrap_or((0.0, 0.0, h, w));
    AugmentParams {
        crop_top,
        crop_left,
        crop_h,
        crop_w,
        hflip: rng.random_range(0.0..1.0) < 0.5,
        angle_rad: rng.random_range(-MAX_ROTATION_RAD..=MAX_ROTATION_RAD),
    }
}

/// Forward map: source point -> output point in an `out` x `out` frame.
/// Order: crop, resize, flip, rotate.
pub fn forward_point(p: &AugmentParams, out: usize, row: f64, col: f64) -> (f64, f64) {
    let s = out as f64;
    let mut r = (row - p.crop_top) * s / p.crop_h;
    let mut c = (col - p.crop_left) * s / p.crop_w;
    if p.hflip {
        c = s - c;
    }
    let (cy, cx) = (s / 2.0, s / 2.0);
    let (sin, cos) = p.angle_rad.sin_cos();
    let (dr, dc) = (r - cy, c - cx);
    r = cy + cos * dr - sin * dc;
    c = cx + sin * dr + cos * dc;
    (r, c)
}

/// Inverse of `forward_point`: output point -> source point.
fn inverse_point(p: &AugmentParams, out: usize, row: f64, col: f64) -> (f64, f64) {
    let s = out as f64;
    let (cy, cx) = (s / 2.0, s / 2.0);
    let (sin, cos) = p.angle_rad.sin_cos();
    let (dr, dc) = (row - cy, col - cx);
    let mut r = cy + cos * dr + sin * dc;
    let mut c = cx - sin * dr + cos * dc;
    if p.hflip {
        c = s - c;
    }
    r = r * p.crop_h / s + p.crop_top;
    c = c * p.crop_w / s + p.crop_left;
    (r, c)
}

/// Bilinear sample of `img` at a continuous point; pixels outside the frame
/// contribute zero.
fn sample_bilinear(img: &[f64], h: usize, w: usize, row: f64, col: f64) -> f64 {
    let fr = row - 0.5;
    let fc = col - 0.5;
    let m0 = fr.floor();
    let n0 = fc.floor();
    let wy = fr - m0;
    let wx = fc - n0;
    let mut acc = 0.0;
    for (dm, wr) in [(0.0, 1.0 - wy), (1.0, wy)] {
        for (dn, wc) in [(0.0, 1.0 - wx), (1.0, wx)] {
            let m = m0 + dm;
            let n = n0 + dn;
            if m >= 0.0 && n >= 0.0 && (m as usize) < h && (n as usize) < w {
                acc += wr * wc * img[m as usize * w + n as usize];
            }
        }
    }
    acc
}

/// Resamples the image into an `out` x `out` frame through the inverse
/// transform (zero fill outside the source).
pub fn apply_to_image(
    img: &[f64],
    src_h: usize,
    src_w: usize,
    p: &AugmentParams,
    out: usize,
) -> Result<Vec<f64>> {
    if img.len() != src_h * src_w {
        return Err(Error::InvalidArg(format!(
            "augment expects {src_h}x{src_w} = {} pixels, got {}",
            src_h * src_w,
            img.len()
        )));
    }
    if out == 0 || p.crop_h <= 0.0 || p.crop_w <= 0.0 {
        return Err(Error::InvalidArg("augment needs a positive output and crop size".into()));
    }
    let mut dst = vec![0.0; out * out];
    for m in 0..out {
        for n in 0..out {
            let (r, c) = inverse_point(p, out, m as f64 + 0.5, n as f64 + 0.5);
            dst[m * out + n] = sample_bilinear(img, src_h, src_w, r, c);
        }
    }
    Ok(dst)
}

/// Plain bilinear resize: the identity transform at a new size.
pub fn resize_bilinear(
    img: &[f64],
    src_h: usize,
    src_w: usize,
    out: usize,
) -> Result<Vec<f64>> {
    apply_to_image(img, src_h, src_w, &AugmentParams::identity(src_h, src_w), out)
}

/// Runs every fixation through the forward transform; points landing outside
/// the output frame are dropped (their count is the caller's to infer from
/// lengths). Durations are untouched.
pub fn apply_to_fixations(fix: &FixationSet, p: &AugmentParams, out: usize) -> FixationSet {
    let s = out as f64;
    let points = fix
        .points
        .iter()
        .filter_map(|pt| {
            let (r, c) = forward_point(p, out, pt.row, pt.col);
            if r >= 0.0 && c >= 0.0 && r < s && c < s {
                Some(Fixation { row: r, col: c, duration_s: pt.duration_s })
            } else {
                None
            }
        })
        .collect();
    FixationSet { points, height: out, width: out }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    // arbitrary but feasible transform: crop inside a 100x80 source frame,
    // rotation within the sampling range
    fn params() -> impl Strategy<Value = AugmentParams> {
        (0.0f64..20.0, 0.0f64..20.0, 30.0f64..80.0, 30.0f64..60.0, any::<bool>(), -0.09f64..0.09)
            .prop_map(|(crop_top, crop_left, crop_h, crop_w, hflip, angle_rad)| AugmentParams {
                crop_top,
                crop_left,
                crop_h,
                crop_w,
                hflip,
                angle_rad,
            })
    }

    proptest! {
        // the two point maps are exact inverses of each other
        #[test]
        fn point_maps_invert(
            p in params(),
            out in 8usize..64,
            row in -50.0f64..150.0,
            col in -50.0f64..150.0,
        ) {
            let (ir, ic) = inverse_point(&p, out, row, col);
            let (rr, rc) = forward_point(&p, out, ir, ic);
            prop_assert!((rr - row).abs() < 1e-9, "row {} -> {}", row, rr);
            prop_assert!((rc - col).abs() < 1e-9, "col {} -> {}", col, rc);
        }

        // transformed fixations are either dropped or strictly inside the
        // output frame, and durations pass through untouched
        #[test]
        fn transformed_fixations_stay_in_frame(
            p in params(),
            out in 8usize..64,
            pts in proptest::collection::vec((0.0f64..100.0, 0.0f64..80.0, 0.01f64..2.0), 0..32),
        ) {
            let fix = FixationSet {
                points: pts
                    .iter()
                    .map(|&(row, col, duration_s)| Fixation { row, col, duration_s })
                    .collect(),
                height: 100,
                width: 80,
            };
            let moved = apply_to_fixations(&fix, &p, out);
            prop_assert_eq!(moved.height, out);
            prop_assert_eq!(moved.width, out);
            prop_assert!(moved.points.len() <= fix.points.len());
            for q in &moved.points {
                prop_assert!(q.row >= 0.0 && q.row < out as f64, "row {}", q.row);
                prop_assert!(q.col >= 0.0 && q.col < out as f64, "col {}", q.col);
                prop_assert!(q.duration_s > 0.0);
            }
        }
    }
}
