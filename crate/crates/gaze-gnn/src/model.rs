//! The gaze-guided graph network classifier.
//!
//! An image becomes a patch graph (stem embedding + per-patch dwell time +
//! learned positional table), flows through a stack of grapher blocks — each
//! a max-relative graph convolution with residual projection followed by a
//! residual feed-forward — and ends in mean pooling over nodes plus a linear
//! softmax head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{fuse_nodes, gaze_embed, knn_edges, patch_embed, GazeImageGraph, StemPlan};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Square input side; images are expected at exactly this size.
    pub input_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub blocks: usize,
    pub classes: usize,
    /// Neighbours per node. Must stay below the node count.
    pub k: usize,
    /// Weight of the positional affinity inside the initial kNN score.
    pub lambda: f64,
    /// Rebuild edges inside every block from that block's projected features.
    pub dynamic_knn: bool,
    /// Positional affinity weight used by the per-block rebuilds.
    pub dynamic_lambda: f64,
    /// Embed overlapping 2S x 2S windows instead of disjoint S x S patches.
    pub overlap_stem: bool,
    /// Feed-forward expansion factor.
    pub ffn_ratio: usize,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 224,
            patch_size: 16,
            embed_dim: 64,
            blocks: 4,
            classes: 3,
            k: 9,
            lambda: 1.0,
            dynamic_knn: true,
            dynamic_lambda: 0.0,
            overlap_stem: true,
            ffn_ratio: 4,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// The deeper, wider preset used for full-scale runs.
    pub fn full_scale() -> Self {
        ModelConfig { embed_dim: 192, blocks: 12, ..Self::default() }
    }

    pub fn n_patches(&self) -> usize {
        let side = self.input_size / self.patch_size;
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0 || self.patch_size == 0 || self.input_size % self.patch_size != 0
        {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of patch size {}",
                self.input_size, self.patch_size
            )));
        }
        if self.embed_dim == 0 || self.blocks == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config("embed_dim, blocks and ffn_ratio must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.classes)));
        }
        let n = self.n_patches();
        if self.k == 0 || self.k >= n {
            return Err(Error::Config(format!(
                "k = {} infeasible for {} nodes (need 1 <= k < n)",
                self.k, n
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Per-block parameters. `psi1`/`psi2` wrap the graph convolution, `psi3`/
/// `psi4` form the feed-forward; both sub-layers carry a feature norm.
#[derive(Debug, Clone)]
pub struct GrapherBlockParams {
    pub psi1_w: Tensor,
    pub psi1_b: Tensor,
    pub conv_w: Tensor,
    pub norm1_g: Tensor,
    pub norm1_b: Tensor,
    pub psi2_w: Tensor,
    pub psi2_b: Tensor,
    pub psi3_w: Tensor,
    pub psi3_b: Tensor,
    pub norm2_g: Tensor,
    pub norm2_b: Tensor,
    pub psi4_w: Tensor,
    pub psi4_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub stem_plan: StemPlan,
    pub stem_w: Tensor,
    pub stem_b: Tensor,
    pub pos_table: Tensor,
    pub blocks: Vec<GrapherBlockParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

/// Tape-bound view of the parameters, in canonical order.
pub struct BoundModel {
    pub stem_w: Var,
    pub stem_b: Var,
    pub pos_table: Var,
    pub blocks: Vec<BoundBlock>,
    pub head_w: Var,
    pub head_b: Var,
}

pub struct BoundBlock {
    pub psi1_w: Var,
    pub psi1_b: Var,
    pub conv_w: Var,
    pub norm1_g: Var,
    pub norm1_b: Var,
    pub psi2_w: Var,
    pub psi2_b: Var,
    pub psi3_w: Var,
    pub psi3_b: Var,
    pub norm2_g: Var,
    pub norm2_b: Var,
    pub psi4_w: Var,
    pub psi4_b: Var,
}

impl BoundModel {
    /// Bound variables in the same canonical order as `Model::params`.
    pub fn params_in_order(&self) -> Vec<Var> {
        let mut out = vec![self.stem_w.clone(), self.stem_b.clone(), self.pos_table.clone()];
        for b in &self.blocks {
            out.extend([
                b.psi1_w.clone(),
                b.psi1_b.clone(),
                b.conv_w.clone(),
                b.norm1_g.clone(),
                b.norm1_b.clone(),
                b.psi2_w.clone(),
                b.psi2_b.clone(),
                b.psi3_w.clone(),
                b.psi3_b.clone(),
                b.norm2_g.clone(),
                b.norm2_b.clone(),
                b.psi4_w.clone(),
                b.psi4_b.clone(),
            ]);
        }
        out.push(self.head_w.clone());
        out.push(self.head_b.clone());
        out
    }
}

/// Result of one traced forward pass.
pub struct Forward {
    pub logits: Var,
    pub probs: Var,
    /// Topology built from the fused input features (the dump topology).
    pub initial_edges: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<f64>,
}

/// Normalizes each feature column by its batch statistics over the node
/// axis, then applies the learned affine. rstd is computed as
/// exp(-0.5 ln(var + eps)), which the autodiff engine differentiates exactly.
fn batch_feature_norm(x: &Var, gamma: &Var, beta: &Var, eps: f64) -> Result<Var> {
    let n = x.shape()[0];
    let mu = x.mean_axis0()?;
    let centered = x.sub(&mu.repeat_rows(n)?)?;
    let var = centered.mul(&centered)?.mean_axis0()?;
    let rstd = var.add_scalar(eps).log()?.scale(-0.5).exp();
    let normed = centered.mul(&rstd.repeat_rows(n)?)?;
    normed.mul(&gamma.repeat_rows(n)?)?.add(&beta.repeat_rows(n)?)
}

/// Negative log-likelihood of `label` under softmax of `logits`, computed in
/// log space: lse(logits) - logits[label].
pub fn cross_entropy(logits: &Var, label: usize) -> Result<Var> {
    if label >= logits.numel() {
        return Err(Error::IndexOutOfBounds {
            op: "cross_entropy",
            index: label,
            len: logits.numel(),
        });
    }
    let lse = logits.log_sum_exp()?;
    let picked = logits.gather(&[label])?.reshape(vec![])?;
    lse.sub(&picked)
}

impl Model {
    /// Fresh model with deterministic seed-driven initialization.
    ///
    /// Draw order is fixed (canonical parameter order) so a seed pins every
    /// weight. Linear weights are uniform in +-sqrt(1/fan_in); biases start
    /// at zero; the positional table is gaussian (sigma 0.02); norm scales
    /// start at one. The head starts at exactly zero, so an untrained model
    /// predicts the uniform distribution.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let stem_plan =
            StemPlan::new(cfg.input_size, cfg.input_size, cfg.patch_size, cfg.overlap_stem)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.embed_dim;
        let n = cfg.n_patches();
        let f = cfg.ffn_ratio * d;

        fn linear(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
            let bound = (1.0 / fan_in as f64).sqrt();
            Tensor::rand_uniform(vec![fan_in, fan_out], -bound, bound, rng).with_grad()
        }
        let stem_w = linear(stem_plan.window_pixels(), d, &mut rng);
        let stem_b = Tensor::zeros(vec![d]).with_grad();
        let pos_table = Tensor::rand_normal(vec![n, d], 0.02, &mut rng).with_grad();
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for _ in 0..cfg.blocks {
            blocks.push(GrapherBlockParams {
                psi1_w: linear(d, d, &mut rng),
                psi1_b: Tensor::zeros(vec![d]).with_grad(),
                conv_w: linear(d, d, &mut rng),
                norm1_g: Tensor::full(vec![d], 1.0).with_grad(),
                norm1_b: Tensor::zeros(vec![d]).with_grad(),
                psi2_w: linear(d, d, &mut rng),
                psi2_b: Tensor::zeros(vec![d]).with_grad(),
                psi3_w: linear(d, f, &mut rng),
                psi3_b: Tensor::zeros(vec![f]).with_grad(),
                norm2_g: Tensor::full(vec![f], 1.0).with_grad(),
                norm2_b: Tensor::zeros(vec![f]).with_grad(),
                psi4_w: linear(f, d, &mut rng),
                psi4_b: Tensor::zeros(vec![d]).with_grad(),
            });
        }
        let head_w = Tensor::zeros(vec![d, cfg.classes]).with_grad();
        let head_b = Tensor::zeros(vec![cfg.classes]).with_grad();
        Ok(Model { cfg, stem_plan, stem_w, stem_b, pos_table, blocks, head_w, head_b })
    }

    /// Parameters with canonical names, in canonical order. Checkpoint
    /// layout, optimizer state and gradient collection all key off this.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("stem.weight".into(), &self.stem_w),
            ("stem.bias".into(), &self.stem_b),
            ("pos_table".into(), &self.pos_table),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("blocks.{i}.psi1.weight"), &b.psi1_w));
            out.push((format!("blocks.{i}.psi1.bias"), &b.psi1_b));
            out.push((format!("blocks.{i}.conv.weight"), &b.conv_w));
            out.push((format!("blocks.{i}.norm1.gamma"), &b.norm1_g));
            out.push((format!("blocks.{i}.norm1.beta"), &b.norm1_b));
            out.push((format!("blocks.{i}.psi2.weight"), &b.psi2_w));
            out.push((format!("blocks.{i}.psi2.bias"), &b.psi2_b));
            out.push((format!("blocks.{i}.psi3.weight"), &b.psi3_w));
            out.push((format!("blocks.{i}.psi3.bias"), &b.psi3_b));
            out.push((format!("blocks.{i}.norm2.gamma"), &b.norm2_g));
            out.push((format!("blocks.{i}.norm2.beta"), &b.norm2_b));
            out.push((format!("blocks.{i}.psi4.weight"), &b.psi4_w));
            out.push((format!("blocks.{i}.psi4.bias"), &b.psi4_b));
        }
        out.push(("head.weight".into(), &self.head_w));
        out.push(("head.bias".into(), &self.head_b));
        out
    }

    /// Mutable view in the same canonical order as `params`.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = vec![
            ("stem.weight".into(), &mut self.stem_w),
            ("stem.bias".into(), &mut self.stem_b),
            ("pos_table".into(), &mut self.pos_table),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("blocks.{i}.psi1.weight"), &mut b.psi1_w));
            out.push((format!("blocks.{i}.psi1.bias"), &mut b.psi1_b));
            out.push((format!("blocks.{i}.conv.weight"), &mut b.conv_w));
            out.push((format!("blocks.{i}.norm1.gamma"), &mut b.norm1_g));
            out.push((format!("blocks.{i}.norm1.beta"), &mut b.norm1_b));
            out.push((format!("blocks.{i}.psi2.weight"), &mut b.psi2_w));
            out.push((format!("blocks.{i}.psi2.bias"), &mut b.psi2_b));
            out.push((format!("blocks.{i}.psi3.weight"), &mut b.psi3_w));
            out.push((format!("blocks.{i}.psi3.bias"), &mut b.psi3_b));
            out.push((format!("blocks.{i}.norm2.gamma"), &mut b.norm2_g));
            out.push((format!("blocks.{i}.norm2.beta"), &mut b.norm2_b));
            out.push((format!("blocks.{i}.psi4.weight"), &mut b.psi4_w));
            out.push((format!("blocks.{i}.psi4.bias"), &mut b.psi4_b));
        }
        out.push(("head.weight".into(), &mut self.head_w));
        out.push(("head.bias".into(), &mut self.head_b));
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Binds parameters as gradient-tracking leaves for training.
    pub fn bind(&self, tape: &Tape) -> BoundModel {
        self.bind_with(|t| tape.leaf(t))
    }

    /// Binds parameters as constants: forward passes record no backward
    /// closures, which keeps inference lean.
    pub fn bind_frozen(&self, tape: &Tape) -> BoundModel {
        self.bind_with(|t| {
            tape.input(t.data.clone(), t.shape.clone()).expect("model tensors are consistent")
        })
    }

    fn bind_with(&self, mut leaf: impl FnMut(&Tensor) -> Var) -> BoundModel {
        BoundModel {
            stem_w: leaf(&self.stem_w),
            stem_b: leaf(&self.stem_b),
            pos_table: leaf(&self.pos_table),
            blocks: self
                .blocks
                .iter()
                .map(|b| BoundBlock {
                    psi1_w: leaf(&b.psi1_w),
                    psi1_b: leaf(&b.psi1_b),
                    conv_w: leaf(&b.conv_w),
                    norm1_g: leaf(&b.norm1_g),
                    norm1_b: leaf(&b.norm1_b),
                    psi2_w: leaf(&b.psi2_w),
                    psi2_b: leaf(&b.psi2_b),
                    psi3_w: leaf(&b.psi3_w),
                    psi3_b: leaf(&b.psi3_b),
                    norm2_g: leaf(&b.norm2_g),
                    norm2_b: leaf(&b.norm2_b),
                    psi4_w: leaf(&b.psi4_w),
                    psi4_b: leaf(&b.psi4_b),
                })
                .collect(),
            head_w: leaf(&self.head_w),
            head_b: leaf(&self.head_b),
        }
    }

    /// Fused node features and the topology they induce.
    fn fused_nodes(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        image: &Var,
        durations: &Var,
    ) -> Result<(Var, Vec<Vec<usize>>)> {
        let n = self.cfg.n_patches();
        if durations.numel() != n {
            return Err(Error::InvalidArg(format!(
                "expected {n} per-patch durations, got {}",
                durations.numel()
            )));
        }
        let img_emb = patch_embed(&self.stem_plan, image, &bound.stem_w, &bound.stem_b)?;
        let gz = gaze_embed(tape, durations, self.cfg.embed_dim)?;
        let x0 = fuse_nodes(&img_emb, &gz, &bound.pos_table)?;
        let pos_vals = bound.pos_table.value();
        let edges = knn_edges(
            &x0.value(),
            &pos_vals,
            n,
            self.cfg.embed_dim,
            self.cfg.k,
            self.cfg.lambda,
        )?;
        Ok((x0, edges))
    }

    /// Runs the grapher stack and head on already-fused node features.
    ///
    /// `pos_vals` feeds the per-block edge rebuilds; `initial_edges` is used
    /// for every block when dynamic rewiring is off. Edge selection reads
    /// detached values, so topology is data-dependent but not differentiated
    /// through.
    pub fn classify_nodes(
        &self,
        bound: &BoundModel,
        nodes: &Var,
        pos_vals: &[f64],
        initial_edges: &[Vec<usize>],
    ) -> Result<Var> {
        let d = self.cfg.embed_dim;
        let n = nodes.shape()[0];
        let mut x = nodes.clone();
        for block in &bound.blocks {
            let r = x.matmul(&block.psi1_w)?.add(&block.psi1_b.repeat_rows(n)?)?;
            let edges = if self.cfg.dynamic_knn {
                knn_edges(&r.value(), pos_vals, n, d, self.cfg.k, self.cfg.dynamic_lambda)?
            } else {
                initial_edges.to_vec()
            };
            let conv = r.max_relative(&edges)?.matmul(&block.conv_w)?;
            let y = batch_feature_norm(&conv, &block.norm1_g, &block.norm1_b, self.cfg.norm_eps)?
                .gelu()
                .matmul(&block.psi2_w)?
                .add(&block.psi2_b.repeat_rows(n)?)?
                .add(&x)?;
            let h = y.matmul(&block.psi3_w)?.add(&block.psi3_b.repeat_rows(n)?)?;
            let z = batch_feature_norm(&h, &block.norm2_g, &block.norm2_b, self.cfg.norm_eps)?
                .gelu()
                .matmul(&block.psi4_w)?
                .add(&block.psi4_b.repeat_rows(n)?)?
                .add(&y)?;
            x = z;
        }
        let pooled = x.mean_axis0()?.reshape(vec![1, d])?;
        pooled
            .matmul(&bound.head_w)?
            .add(&bound.head_b.reshape(vec![1, self.cfg.classes])?)?
            .reshape(vec![self.cfg.classes])
    }

    /// Full traced forward from caller-supplied image/duration variables
    /// (callers that want input gradients pass gradient-tracking leaves).
    pub fn forward_from_vars(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        image: &Var,
        durations: &Var,
    ) -> Result<Forward> {
        let (x0, initial_edges) = self.fused_nodes(tape, bound, image, durations)?;
        let pos_vals = bound.pos_table.value();
        let logits = self.classify_nodes(bound, &x0, &pos_vals, &initial_edges)?;
        let probs = logits.softmax()?;
        Ok(Forward { logits, probs, initial_edges })
    }

    /// Traced forward over plain slices (inputs recorded as constants).
    pub fn forward_traced(
        &self,
        tape: &Tape,
        bound: &BoundModel,
        image: &[f64],
        durations: &[f64],
    ) -> Result<Forward> {
        let img = tape.input(image.to_vec(), vec![self.cfg.input_size * self.cfg.input_size])?;
        let dur = tape.input(durations.to_vec(), vec![durations.len()])?;
        self.forward_from_vars(tape, bound, &img, &dur)
    }

    /// Forward-only classification.
    pub fn predict(&self, image: &[f64], durations: &[f64]) -> Result<Prediction> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let f = self.forward_traced(&tape, &bound, image, durations)?;
        let probs = f.probs.value();
        let class = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0);
        // max_by returns the last maximum; route ties to the lowest index.
        let class = probs
            .iter()
            .position(|&p| p == probs[class])
            .unwrap_or(class);
        Ok(Prediction { class, probs })
    }

    /// Materializes the input graph (fused features + topology) for dumping.
    pub fn build_graph(&self, image: &[f64], durations: &[f64]) -> Result<GazeImageGraph> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let img = tape.input(image.to_vec(), vec![self.cfg.input_size * self.cfg.input_size])?;
        let dur = tape.input(durations.to_vec(), vec![durations.len()])?;
        let (x0, edges) = self.fused_nodes(&tape, &bound, &img, &dur)?;
        Ok(GazeImageGraph {
            node_features: x0.to_tensor(),
            edges,
            grid: self.stem_plan.grid,
            k: self.cfg.k,
            lambda: self.cfg.lambda,
        })
    }
}
