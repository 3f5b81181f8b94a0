//! Image-to-graph construction: cutting an image into a patch lattice,
//! embedding each patch (optionally through overlapping windows), and wiring
//! patches into a k-nearest-neighbour graph whose affinity blends feature
//! distance with a learned positional term.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gaze::PatchGrid;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Precomputed gather indices mapping each patch's window pixels to flat
/// image offsets. With `overlap` the window doubles to `2S x 2S`, centred on
/// the patch, and out-of-frame pixels reflect about the border (the border
/// pixel itself is not duplicated).
#[derive(Debug, Clone)]
pub struct StemPlan {
    pub grid: PatchGrid,
    /// Window side length: `S`, or `2S` when overlapping.
    pub window: usize,
    /// Flat image indices, `n_patches * window^2` long, patch-major.
    pub gather_idx: Vec<usize>,
}

impl StemPlan {
    pub fn new(image_h: usize, image_w: usize, patch: usize, overlap: bool) -> Result<Self> {
        if patch == 0 || image_h == 0 || image_w == 0 {
            return Err(Error::InvalidArg(format!(
                "stem needs positive dimensions, got {image_h}x{image_w} patch {patch}"
            )));
        }
        if image_h % patch != 0 || image_w % patch != 0 {
            return Err(Error::InvalidArg(format!(
                "stem requires image dimensions divisible by the patch size, \
                 got {image_h}x{image_w} with patch {patch}"
            )));
        }
        if overlap && (image_h < 2 || image_w < 2) {
            return Err(Error::InvalidArg(
                "overlapping stem needs at least a 2x2 image to reflect into".into(),
            ));
        }
        let grid = PatchGrid::new(image_h, image_w, patch)?;
        let window = if overlap { 2 * patch } else { patch };
        let pad_top = (window - patch) / 2;
        let pad_left = pad_top;

        // Reflect about the border without repeating the border pixel.
        // Window size <= 2S and S <= H guarantee one reflection is enough.
        let reflect = |i: isize, len: usize| -> usize {
            let last = (len - 1) as isize;
            let r = if i < 0 { -i } else if i > last { 2 * last - i } else { i };
            debug_assert!((0..=last).contains(&r));
            r as usize
        };

        let mut gather_idx = Vec::with_capacity(grid.n_patches() * window * window);
        for pr in 0..grid.rows {
            for pc in 0..grid.cols {
                for ky in 0..window {
                    let y = reflect(
                        (pr * patch + ky) as isize - pad_top as isize,
                        image_h,
                    );
                    for kx in 0..window {
                        let x = reflect(
                            (pc * patch + kx) as isize - pad_left as isize,
                            image_w,
                        );
                        gather_idx.push(y * image_w + x);
                    }
                }
            }
        }
        Ok(StemPlan { grid, window, gather_idx })
    }

    pub fn n_patches(&self) -> usize {
        self.grid.n_patches()
    }

    /// Input dimensionality of the stem projection: pixels per window.
    pub fn window_pixels(&self) -> usize {
        self.window * self.window
    }
}

/// Projects each patch window to an embedding: gather pixels, flatten per
/// patch, multiply by `w` (`[window^2, d]`) and add `b` (`[d]`).
/// Returns `[n_patches, d]`.
pub fn patch_embed(plan: &StemPlan, image: &Var, w: &Var, b: &Var) -> Result<Var> {
    let expected = plan.grid.image_h * plan.grid.image_w;
    if image.numel() != expected {
        return Err(Error::InvalidShape {
            op: "patch_embed",
            detail: format!("image must have {expected} pixels"),
            shape: image.shape(),
        });
    }
    let n = plan.n_patches();
    let windows = image.gather(&plan.gather_idx)?.reshape(vec![n, plan.window_pixels()])?;
    windows.matmul(w)?.add(&b.repeat_rows(n)?)
}

/// Lifts per-patch dwell times `[n]` to the embedding width by replicating
/// the scalar across all `d` channels: the rank-1 product with a ones row.
pub fn gaze_embed(tape: &Tape, durations: &Var, d: usize) -> Result<Var> {
    let n = durations.numel();
    let col = durations.reshape(vec![n, 1])?;
    let ones = tape.input(vec![1.0; d], vec![1, d])?;
    col.matmul(&ones)
}

/// Node features: patch embedding + gaze embedding + positional table.
pub fn fuse_nodes(img_emb: &Var, gaze_emb: &Var, pos: &Var) -> Result<Var> {
    img_emb.add(gaze_emb)?.add(pos)
}

/// Pairwise connection score: squared feature distance minus `lambda` times
/// the positional affinity `p_i . p_j`. Lower is closer.
fn knn_score(fi: &[f64], fj: &[f64], pi: &[f64], pj: &[f64], lambda: f64) -> f64 {
    let dist2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
    let affinity: f64 = pi.iter().zip(pj).map(|(a, b)| a * b).sum();
    dist2 - lambda * affinity
}

/// For each node, the `k` other nodes with the lowest connection score.
///
/// Ties route to the lower node index; self-loops are excluded; neighbour
/// lists come back sorted ascending by node index. `k >= n` is infeasible
/// (there are only `n - 1` candidates) and is an error, as is `n == 0`.
pub fn knn_edges(
    features: &[f64],
    pos: &[f64],
    n: usize,
    d: usize,
    k: usize,
    lambda: f64,
) -> Result<Vec<Vec<usize>>> {
    if n == 0 || k == 0 || k >= n {
        return Err(Error::KnnInfeasible { k, n });
    }
    if features.len() != n * d || pos.len() != n * d {
        return Err(Error::InvalidArg(format!(
            "knn_edges expects {n}x{d} features and positions, got {} and {}",
            features.len(),
            pos.len()
        )));
    }
    fn row(buf: &[f64], i: usize, d: usize) -> &[f64] {
        &buf[i * d..(i + 1) * d]
    }
    let mut edges = Vec::with_capacity(n);
    let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        scored.clear();
        for j in 0..n {
            if j == i {
                continue;
            }
            scored.push((
                knn_score(
                    row(features, i, d),
                    row(features, j, d),
                    row(pos, i, d),
                    row(pos, j, d),
                    lambda,
                ),
                j,
            ));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut neighbours: Vec<usize> = scored[..k].iter().map(|&(_, j)| j).collect();
        neighbours.sort_unstable();
        edges.push(neighbours);
    }
    Ok(edges)
}

/// A built gaze-image graph: fused node features plus its kNN topology.
#[derive(Debug, Clone)]
pub struct GazeImageGraph {
    pub node_features: Tensor,
    pub edges: Vec<Vec<usize>>,
    pub grid: PatchGrid,
    pub k: usize,
    pub lambda: f64,
}

#[derive(Serialize)]
struct GraphDump<'a> {
    n: usize,
    d: usize,
    k: usize,
    nodes: Vec<&'a [f64]>,
    edges: &'a [Vec<usize>],
}

impl GazeImageGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_features.rows()
    }

    pub fn dim(&self) -> usize {
        self.node_features.cols()
    }

    /// JSON dump with node features as rows and sorted adjacency lists.
    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        let dump = GraphDump {
            n: self.n_nodes(),
            d,
            k: self.k,
            nodes: self.node_features.data.chunks(d).collect(),
            edges: &self.edges,
        };
        serde_json::to_writer_pretty(&mut w, &dump)?;
        writeln!(w)?;
        Ok(())
    }
}
