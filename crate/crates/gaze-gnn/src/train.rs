//! Training, evaluation and robustness probing.
//!
//! Everything here is deterministic under a fixed seed: dataset splits,
//! epoch shuffles, augmentation draws and evaluation noise all come from
//! seeded ChaCha streams, and parallel evaluation seeds each sample
//! independently so thread count cannot change results.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_to_fixations, apply_to_image, sample_augment};
use crate::data::{patch_durations, uniform_durations, PreparedSample};
use crate::error::{Error, Result};
use crate::gaze::PatchGrid;
use crate::metrics::{evaluate_outcomes, EvalMetrics};
use crate::model::{cross_entropy, Model, ModelConfig};
use crate::tape::{concat, Tape};
use crate::tensor::Tensor;

/// Which split drives best-checkpoint selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectOn {
    Test,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: bool,
    /// When off, the model sees uniform dwell times: the no-gaze arm.
    pub gaze: bool,
    /// Keep raw (unnormalized) per-patch dwell times.
    pub raw_durations: bool,
    pub test_frac: f64,
    pub val_frac: f64,
    pub select: SelectOn,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            lr: 1e-4,
            weight_decay: 0.01,
            seed: 0,
            augment: true,
            gaze: true,
            raw_durations: false,
            test_frac: 0.2,
            val_frac: 0.0,
            select: SelectOn::Test,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.test_frac) || self.test_frac <= 0.0 {
            return Err(Error::Config("test_frac must be in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::Config("val_frac must be in [0, 1)".into()));
        }
        if self.test_frac + self.val_frac >= 0.9 {
            return Err(Error::Config("test_frac + val_frac leave too little training data".into()));
        }
        if self.select == SelectOn::Val && self.val_frac == 0.0 {
            return Err(Error::Config("selecting on val requires val_frac > 0".into()));
        }
        Ok(())
    }
}

// ------------------------------- splitting -------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then test / val / train slices in that order.
pub fn split_dataset(n: usize, test_frac: f64, val_frac: f64, seed: u64) -> Result<Split> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = ((n as f64 * test_frac).round() as usize).max(1);
    let n_val = (n as f64 * val_frac).round() as usize;
    if n_test + n_val + 1 > n {
        return Err(Error::Dataset(format!(
            "{n} samples cannot honour test_frac {test_frac} + val_frac {val_frac}"
        )));
    }
    let test = idx[..n_test].to_vec();
    let val = idx[n_test..n_test + n_val].to_vec();
    let train = idx[n_test + n_val..].to_vec();
    Ok(Split { train, val, test })
}

// -------------------------------- optimizer --------------------------------

/// Decoupled-weight-decay Adam: moment estimates with bias correction, then
/// `w -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * w`.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64, param_sizes: &[usize]) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: param_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArg(format!(
                "optimizer built for {} parameters, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (name, tensor)) in params.iter_mut().enumerate() {
            if grads[i].len() != tensor.numel() {
                return Err(Error::InvalidArg(format!(
                    "gradient size mismatch for {name}: {} vs {}",
                    grads[i].len(),
                    tensor.numel()
                )));
            }
            for (j, w) in tensor.data.iter_mut().enumerate() {
                let g = grads[i][j];
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps) + self.lr * self.weight_decay * *w;
            }
        }
        Ok(())
    }
}

// -------------------------------- training --------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_accuracy: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The best-scoring snapshot (falls back to initialization if no epoch
    /// strictly improves on zero accuracy — practically never).
    pub model: Model,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    /// Metrics of the returned model on the held-out test split.
    pub test_metrics: EvalMetrics,
    pub split: Split,
}

/// Per-sample model inputs under the configured gaze arm.
fn durations_for(
    sample_fix: &crate::gaze::FixationSet,
    grid: &PatchGrid,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if cfg.gaze {
        patch_durations(sample_fix, grid, cfg.raw_durations)
    } else {
        Ok(uniform_durations(grid.n_patches()))
    }
}

/// Trains a freshly initialized model; see `train_model` for the loop.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    samples: &[PreparedSample],
) -> Result<TrainOutcome> {
    let mut model = Model::init(model_cfg.clone(), cfg.seed)?;
    train_model(&mut model, cfg, samples)
}

/// The training loop: seeded split, per-epoch shuffles, fresh tape per
/// batch, mean cross-entropy, AdamW updates, and best-accuracy snapshotting
/// on the selection split. `model` is left at its final (not best) state.
pub fn train_model(
    model: &mut Model,
    cfg: &TrainConfig,
    samples: &[PreparedSample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = model.cfg.classes;
    for s in samples {
        if s.label >= classes {
            return Err(Error::Dataset(format!(
                "label {} exceeds the model's {classes} classes",
                s.label
            )));
        }
        if s.size != model.cfg.input_size {
            return Err(Error::Dataset(format!(
                "sample prepared at {} but the model expects {}",
                s.size, model.cfg.input_size
            )));
        }
    }
    let split = split_dataset(samples.len(), cfg.test_frac, cfg.val_frac, cfg.seed)?;
    let selection: &[usize] = match cfg.select {
        SelectOn::Test => &split.test,
        SelectOn::Val => &split.val,
    };
    let grid = PatchGrid::new(model.cfg.input_size, model.cfg.input_size, model.cfg.patch_size)?;
    let threads = thread_cap();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut opt = AdamW::new(
        cfg.lr,
        cfg.weight_decay,
        &model.params().iter().map(|(_, t)| t.numel()).collect::<Vec<_>>(),
    );

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model, usize, f64)> = None;
    let mut order: Vec<usize> = split.train.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let s = &samples[i];
                let (image, fixations);
                if cfg.augment {
                    let p = sample_augment(&mut rng, s.size, s.size);
                    image = apply_to_image(&s.image, s.size, s.size, &p, s.size)?;
                    fixations = apply_to_fixations(&s.fixations, &p, s.size);
                } else {
                    image = s.image.clone();
                    fixations = s.fixations.clone();
                }
                let durations = durations_for(&fixations, &grid, cfg)?;
                let fwd = model.forward_traced(&tape, &bound, &image, &durations)?;
                losses.push(cross_entropy(&fwd.logits, s.label)?.reshape(vec![1])?);
            }
            let batch_loss = concat(&losses)?.mean();
            let loss_val = batch_loss.scalar_value();
            if !loss_val.is_finite() {
                return Err(Error::Diverged { epoch, step, loss: loss_val });
            }
            tape.backward(&batch_loss)?;
            let grads: Vec<Vec<f64>> = bound
                .params_in_order()
                .iter()
                .map(|v| v.grad().unwrap_or_else(|| vec![0.0; v.numel()]))
                .collect();
            opt.step(&mut model.params_mut(), &grads)?;
            epoch_loss += loss_val * batch.len() as f64;
        }
        let train_loss = epoch_loss / split.train.len().max(1) as f64;

        let eval_accuracy = if selection.is_empty() {
            0.0
        } else {
            let subset: Vec<PreparedSample> =
                selection.iter().map(|&i| samples[i].clone()).collect();
            let (m, _) = evaluate(model, &subset, &EvalOptions::from_train(cfg), threads)?;
            m.accuracy
        };
        if best.as_ref().map_or(true, |(_, _, acc)| eval_accuracy > *acc) {
            best = Some((model.clone(), epoch, eval_accuracy));
        }
        history.push(EpochStats { epoch, train_loss, eval_accuracy });
    }

    let (best_model, best_epoch, best_accuracy) =
        best.expect("at least one epoch ran");
    let test_subset: Vec<PreparedSample> = split.test.iter().map(|&i| samples[i].clone()).collect();
    let (test_metrics, _) =
        evaluate(&best_model, &test_subset, &EvalOptions::from_train(cfg), threads)?;
    Ok(TrainOutcome { model: best_model, history, best_epoch, best_accuracy, test_metrics, split })
}

// ------------------------------- evaluation -------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub gaze: bool,
    pub raw_durations: bool,
    /// Gaussian pixel-noise level as a fraction of the value range; applied
    /// to the image only, then clipped back into [0, 1].
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl EvalOptions {
    pub fn from_train(cfg: &TrainConfig) -> Self {
        EvalOptions {
            gaze: cfg.gaze,
            raw_durations: cfg.raw_durations,
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    pub fn clean(gaze: bool) -> Self {
        EvalOptions { gaze, raw_durations: false, noise_sigma: 0.0, noise_seed: 0 }
    }
}

/// Adds clipped Gaussian pixel noise; each sample's noise stream is seeded
/// independently so parallel evaluation stays deterministic.
pub fn noisy_image(image: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return image.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated by caller");
    image.iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect()
}

/// Evaluates the model over samples, optionally in parallel (`threads`), and
/// returns metrics plus per-sample `(label, probabilities)` outcomes in
/// input order. Thread count never changes the numbers.
pub fn evaluate(
    model: &Model,
    samples: &[PreparedSample],
    opts: &EvalOptions,
    threads: usize,
) -> Result<(EvalMetrics, Vec<(usize, Vec<f64>)>)> {
    if !(opts.noise_sigma >= 0.0) || !opts.noise_sigma.is_finite() {
        return Err(Error::InvalidArg(format!("noise sigma must be >= 0, got {}", opts.noise_sigma)));
    }
    let grid = PatchGrid::new(model.cfg.input_size, model.cfg.input_size, model.cfg.patch_size)?;
    let one = |(i, s): (usize, &PreparedSample)| -> Result<(usize, Vec<f64>)> {
        let durations = if opts.gaze {
            patch_durations(&s.fixations, &grid, opts.raw_durations)?
        } else {
            uniform_durations(grid.n_patches())
        };
        let image = noisy_image(
            &s.image,
            opts.noise_sigma,
            opts.noise_seed.wrapping_add(i as u64),
        );
        let pred = model.predict(&image, &durations)?;
        Ok((s.label, pred.probs))
    };
    let outcomes: Vec<(usize, Vec<f64>)> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArg(format!("thread pool: {e}")))?;
        pool.install(|| {
            samples
                .par_iter()
                .enumerate()
                .map(one)
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        samples.iter().enumerate().map(one).collect::<Result<Vec<_>>>()?
    };
    let metrics = evaluate_outcomes(&outcomes, model.cfg.classes)?;
    Ok((metrics, outcomes))
}

/// Worker cap: `GAZE_GNN_THREADS` bounds the machine's parallelism; absent
/// or unparsable values fall back to everything available.
pub fn thread_cap() -> usize {
    let available = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    match std::env::var("GAZE_GNN_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) if n >= 1 => n.min(available),
        _ => available,
    }
}

/// Metrics at each noise level, in the given order (include 0.0 first to
/// anchor the drop table).
pub fn robustness_sweep(
    model: &Model,
    samples: &[PreparedSample],
    gaze: bool,
    raw_durations: bool,
    sigmas: &[f64],
    noise_seed: u64,
    threads: usize,
) -> Result<Vec<(f64, EvalMetrics)>> {
    sigmas
        .iter()
        .map(|&sigma| {
            let opts = EvalOptions { gaze, raw_durations, noise_sigma: sigma, noise_seed };
            let (m, _) = evaluate(model, samples, &opts, threads)?;
            Ok((sigma, m))
        })
        .collect()
}

/// One row of the robustness table: the five headline metrics at a noise
/// level, averaged over `reps` independent noise draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RobustRow {
    pub sigma: f64,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub avg_auc: f64,
}

/// Evaluates the model at each sigma; nonzero sigmas average every metric
/// over `reps` independent noise draws (seeds `noise_seed + 10_000 * rep`),
/// a Monte Carlo estimate that smooths single-draw prediction flips.
/// Sigma 0 is always a single exact evaluation.
pub fn robustness_table(
    model: &Model,
    samples: &[PreparedSample],
    gaze: bool,
    raw_durations: bool,
    sigmas: &[f64],
    noise_seed: u64,
    reps: u64,
    threads: usize,
) -> Result<Vec<RobustRow>> {
    if reps == 0 {
        return Err(Error::InvalidArg("robustness needs reps >= 1".into()));
    }
    sigmas
        .iter()
        .map(|&sigma| {
            let n_reps = if sigma == 0.0 { 1 } else { reps };
            let mut acc = RobustRow {
                sigma,
                accuracy: 0.0,
                precision_macro: 0.0,
                recall_macro: 0.0,
                f1_macro: 0.0,
                avg_auc: 0.0,
            };
            for rep in 0..n_reps {
                let opts = EvalOptions {
                    gaze,
                    raw_durations,
                    noise_sigma: sigma,
                    noise_seed: noise_seed + 10_000 * rep,
                };
                let (m, _) = evaluate(model, samples, &opts, threads)?;
                acc.accuracy += m.accuracy;
                acc.precision_macro += m.precision_macro;
                acc.recall_macro += m.recall_macro;
                acc.f1_macro += m.f1_macro;
                acc.avg_auc += m.avg_auc;
            }
            let k = n_reps as f64;
            acc.accuracy /= k;
            acc.precision_macro /= k;
            acc.recall_macro /= k;
            acc.f1_macro /= k;
            acc.avg_auc /= k;
            Ok(acc)
        })
        .collect()
}

/// Converts absolute rows into drops relative to the sigma = 0 row, which
/// must be present; its own drops are exactly zero by construction.
pub fn drop_table(rows: &[RobustRow]) -> Result<Vec<RobustRow>> {
    let base = rows
        .iter()
        .find(|r| r.sigma == 0.0)
        .ok_or_else(|| Error::InvalidArg("drop table needs a sigma = 0 baseline row".into()))?
        .to_owned();
    Ok(rows
        .iter()
        .map(|r| RobustRow {
            sigma: r.sigma,
            accuracy: base.accuracy - r.accuracy,
            precision_macro: base.precision_macro - r.precision_macro,
            recall_macro: base.recall_macro - r.recall_macro,
            f1_macro: base.f1_macro - r.f1_macro,
            avg_auc: base.avg_auc - r.avg_auc,
        })
        .collect())
}

/// Renders rows as an aligned text table; `label` names the value column
/// family (e.g. "metric" or "drop").
pub fn format_robust_table(rows: &[RobustRow], label: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>10}  {:>10}  {:>10}  {:>10}  {:>10}  {:>10}   ({label})\n",
        "sigma", "accuracy", "precision", "recall", "f1", "avg_auc"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}\n",
            r.sigma, r.accuracy, r.precision_macro, r.recall_macro, r.f1_macro, r.avg_auc
        ));
    }
    out
}
