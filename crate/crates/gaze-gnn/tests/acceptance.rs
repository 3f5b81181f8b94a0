//! Acceptance gate: one test per criterion. Each prints a single
//! `criterion N PASS` line with the measured numbers (visible under
//! `cargo test --test acceptance -- --nocapture`); a failed assertion
//! prints the matching `criterion N FAIL` diagnosis instead.
//!
//! Tests share one lock so the timed criteria never contend for cores.

use std::path::Path;
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gaze_gnn::augment::{apply_to_fixations, apply_to_image, forward_point, sample_augment};
use gaze_gnn::bench::bench_paths;
use gaze_gnn::data::{load_dataset, manifest_path, synth_dataset, PreparedSample, SynthConfig};
use gaze_gnn::gaze::{time_aggregate, Fixation, FixationSet, PatchGrid};
use gaze_gnn::graph::knn_edges;
use gaze_gnn::metrics::auc_binary;
use gaze_gnn::model::{cross_entropy, Model, ModelConfig};
use gaze_gnn::tape::Tape;
use gaze_gnn::tensor::Tensor;
use gaze_gnn::testkit::{assert_close_tol, finite_diff, gradcheck_tol, rand_vec, weighted_sum};
use gaze_gnn::train::{
    drop_table, format_robust_table, robustness_table, thread_cap, train, TrainConfig,
};

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    // A criterion failing must not wedge the remaining ones.
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Finite-difference step and relative tolerance pinned by the gate.
const H: f64 = 1e-5;
const RTOL: f64 = 1e-4;
const ATOL: f64 = 1e-8;

fn check(what: &str, inputs: &[(&[usize], Vec<f64>)], build: impl Fn(&Tape, &[gaze_gnn::tape::Var]) -> gaze_gnn::tape::Var) {
    gradcheck_tol(what, inputs, build, H, RTOL, ATOL);
}

/// The zero-initialized head hides most parameter gradients; gradient and
/// permutation checks overwrite it with seeded values first.
fn randomize_head(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.cfg.embed_dim;
    let c = model.cfg.classes;
    model.head_w = Tensor::rand_uniform(vec![d, c], -0.8, 0.8, &mut rng).with_grad();
    model.head_b = Tensor::rand_uniform(vec![c], -0.2, 0.2, &mut rng).with_grad();
}

#[test]
fn criterion_1_gradient_suite() {
    let _lock = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut ops = 0usize;

    // ------------------------- primitive ops -------------------------
    let s23: [usize; 2] = [2, 3];
    let s6: [usize; 1] = [6];
    {
        let a = rand_vec(&mut rng, 6, -1.0, 1.0);
        let b = rand_vec(&mut rng, 6, -1.0, 1.0);
        let w = rand_vec(&mut rng, 6, -1.0, 1.0);
        check("criterion 1: add", &[(&s23, a.clone()), (&s23, b.clone())], |t, v| {
            weighted_sum(t, &v[0].add(&v[1]).unwrap(), &w)
        });
        check("criterion 1: sub", &[(&s23, a.clone()), (&s23, b.clone())], |t, v| {
            weighted_sum(t, &v[0].sub(&v[1]).unwrap(), &w)
        });
        check("criterion 1: mul", &[(&s23, a), (&s23, b)], |t, v| {
            weighted_sum(t, &v[0].mul(&v[1]).unwrap(), &w)
        });
        ops += 3;
    }
    {
        let x = rand_vec(&mut rng, 6, -1.0, 1.0);
        let w = rand_vec(&mut rng, 6, -1.0, 1.0);
        check("criterion 1: scale", &[(&s6, x.clone())], |t, v| {
            weighted_sum(t, &v[0].scale(0.7), &w)
        });
        check("criterion 1: add_scalar", &[(&s6, x)], |t, v| {
            weighted_sum(t, &v[0].add_scalar(1.3), &w)
        });
        ops += 2;
    }
    {
        // relu is checked away from its kink at 0
        let x = vec![-1.2, -0.4, 0.3, 0.9, 1.4, -0.7];
        let w = rand_vec(&mut rng, 6, -1.0, 1.0);
        check("criterion 1: relu", &[(&s6, x)], |t, v| {
            weighted_sum(t, &v[0].relu(), &w)
        });
        let x = rand_vec(&mut rng, 6, -2.0, 2.0);
        check("criterion 1: gelu", &[(&s6, x)], |t, v| {
            weighted_sum(t, &v[0].gelu(), &w)
        });
        let x = rand_vec(&mut rng, 6, -1.0, 1.0);
        check("criterion 1: exp", &[(&s6, x)], |t, v| {
            weighted_sum(t, &v[0].exp(), &w)
        });
        let x = rand_vec(&mut rng, 6, 0.3, 2.0);
        check("criterion 1: log", &[(&s6, x)], |t, v| {
            weighted_sum(t, &v[0].log().unwrap(), &w)
        });
        ops += 4;
    }
    {
        let x = rand_vec(&mut rng, 6, -1.0, 1.0);
        check("criterion 1: sum", &[(&s6, x.clone())], |_, v| v[0].sum());
        check("criterion 1: mean", &[(&s6, x.clone())], |_, v| v[0].mean());
        check("criterion 1: log_sum_exp", &[(&s6, x)], |_, v| v[0].log_sum_exp().unwrap());
        ops += 3;
    }
    {
        let s43: [usize; 2] = [4, 3];
        let x = rand_vec(&mut rng, 12, -1.0, 1.0);
        let w3 = rand_vec(&mut rng, 3, -1.0, 1.0);
        let w4 = rand_vec(&mut rng, 4, -1.0, 1.0);
        check("criterion 1: mean_axis0", &[(&s43, x.clone())], |t, v| {
            weighted_sum(t, &v[0].mean_axis0().unwrap(), &w3)
        });
        check("criterion 1: max_axis(0)", &[(&s43, x.clone())], |t, v| {
            weighted_sum(t, &v[0].max_axis(0).unwrap(), &w3)
        });
        check("criterion 1: max_axis(1)", &[(&s43, x)], |t, v| {
            weighted_sum(t, &v[0].max_axis(1).unwrap(), &w4)
        });
        ops += 3;
    }
    {
        let s34: [usize; 2] = [3, 4];
        let s42: [usize; 2] = [4, 2];
        let a = rand_vec(&mut rng, 12, -1.0, 1.0);
        let b = rand_vec(&mut rng, 8, -1.0, 1.0);
        let w = rand_vec(&mut rng, 6, -1.0, 1.0);
        check("criterion 1: matmul", &[(&s34, a), (&s42, b)], |t, v| {
            weighted_sum(t, &v[0].matmul(&v[1]).unwrap(), &w)
        });
        ops += 1;
    }
    {
        let s5: [usize; 1] = [5];
        let x = rand_vec(&mut rng, 5, -2.0, 2.0);
        let w = rand_vec(&mut rng, 5, -1.0, 1.0);
        check("criterion 1: softmax", &[(&s5, x)], |t, v| {
            weighted_sum(t, &v[0].softmax().unwrap(), &w)
        });
        ops += 1;
    }
    {
        let s34: [usize; 2] = [3, 4];
        let x = rand_vec(&mut rng, 12, -1.0, 1.0);
        let w = rand_vec(&mut rng, 12, -1.0, 1.0);
        check("criterion 1: transpose", &[(&s34, x.clone())], |t, v| {
            weighted_sum(t, &v[0].transpose().unwrap(), &w)
        });
        check("criterion 1: reshape", &[(&s34, x)], |t, v| {
            weighted_sum(t, &v[0].reshape(vec![4, 3]).unwrap(), &w)
        });
        ops += 2;
    }
    {
        let s8: [usize; 1] = [8];
        let x = rand_vec(&mut rng, 8, -1.0, 1.0);
        let w = rand_vec(&mut rng, 4, -1.0, 1.0);
        // repeated index exercises gradient accumulation
        check("criterion 1: gather", &[(&s8, x)], |t, v| {
            weighted_sum(t, &v[0].gather(&[5, 2, 2, 7]).unwrap(), &w)
        });
        let s53: [usize; 2] = [5, 3];
        let x = rand_vec(&mut rng, 15, -1.0, 1.0);
        let w = rand_vec(&mut rng, 9, -1.0, 1.0);
        check("criterion 1: gather_rows", &[(&s53, x)], |t, v| {
            weighted_sum(t, &v[0].gather_rows(&[1, 4, 1]).unwrap(), &w)
        });
        let s4: [usize; 1] = [4];
        let x = rand_vec(&mut rng, 4, -1.0, 1.0);
        let w = rand_vec(&mut rng, 12, -1.0, 1.0);
        check("criterion 1: repeat_rows", &[(&s4, x)], |t, v| {
            weighted_sum(t, &v[0].repeat_rows(3).unwrap(), &w)
        });
        ops += 3;
    }
    {
        // adjacency with an isolated node, a singleton and fan-in overlaps
        let s54: [usize; 2] = [5, 4];
        let x = rand_vec(&mut rng, 20, -2.0, 2.0);
        let w = rand_vec(&mut rng, 20, -1.0, 1.0);
        let edges: Vec<Vec<usize>> =
            vec![vec![1, 2], vec![0, 3], vec![4], vec![0, 1, 2], vec![]];
        check("criterion 1: max_relative", &[(&s54, x)], |t, v| {
            weighted_sum(t, &v[0].max_relative(&edges).unwrap(), &w)
        });
        ops += 1;
    }
    assert_eq!(ops, 23, "criterion 1 FAIL: primitive inventory drifted");

    // --------------- end-to-end model: 16 nodes, D=8, k=3 ---------------
    let cfg = ModelConfig {
        input_size: 12,
        patch_size: 3,
        embed_dim: 8,
        blocks: 2,
        classes: 3,
        k: 3,
        ffn_ratio: 2,
        ..ModelConfig::default()
    };
    assert_eq!(cfg.n_patches(), 16, "criterion 1 FAIL: e2e config must have 16 nodes");
    let mut model = Model::init(cfg.clone(), 17).unwrap();
    randomize_head(&mut model, 18);
    let image = rand_vec(&mut rng, cfg.input_size * cfg.input_size, 0.0, 1.0);
    let durations = {
        let raw = rand_vec(&mut rng, cfg.n_patches(), 0.0, 1.0);
        gaze_gnn::gaze::normalize_durations(&raw)
    };
    let label = 1usize;

    let tape = Tape::new();
    let bound = model.bind(&tape);
    let img_leaf = tape.leaf(&Tensor::new(image.clone(), vec![144]).unwrap().with_grad());
    let dur_leaf = tape.leaf(&Tensor::new(durations.clone(), vec![16]).unwrap().with_grad());
    let f = model.forward_from_vars(&tape, &bound, &img_leaf, &dur_leaf).unwrap();
    let loss = cross_entropy(&f.logits, label).unwrap();
    tape.backward(&loss).unwrap();

    let loss_at = |m: &Model, img: &[f64], dur: &[f64]| -> f64 {
        let t = Tape::new();
        let b = m.bind_frozen(&t);
        let fwd = m.forward_traced(&t, &b, img, dur).unwrap();
        cross_entropy(&fwd.logits, label).unwrap().scalar_value()
    };

    let img_grad = img_leaf.grad().expect("image gradient");
    let mut f_img = |probe: &[f64]| loss_at(&model, probe, &durations);
    let numeric = finite_diff(&mut f_img, &image, H);
    assert_close_tol(&img_grad, &numeric, "criterion 1: e2e image input", RTOL, ATOL);

    let dur_grad = dur_leaf.grad().expect("duration gradient");
    let mut f_dur = |probe: &[f64]| loss_at(&model, &image, probe);
    let numeric = finite_diff(&mut f_dur, &durations, H);
    assert_close_tol(&dur_grad, &numeric, "criterion 1: e2e duration input", RTOL, ATOL);

    // every parameter tensor, not a sample
    let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
    let bound_vars: Vec<(String, gaze_gnn::tape::Var)> =
        names.into_iter().zip(bound.params_in_order()).collect();
    let mut params = 0usize;
    for (name, var) in &bound_vars {
        let analytic = var.grad().unwrap_or_else(|| vec![0.0; var.numel()]);
        let base: Vec<f64> = {
            let all = model.params();
            all.iter().find(|(n, _)| n == name).unwrap().1.data.clone()
        };
        let mut eval = |probe: &[f64]| -> f64 {
            let mut m2 = model.clone();
            for (n, t) in m2.params_mut() {
                if n == *name {
                    t.data.copy_from_slice(probe);
                }
            }
            loss_at(&m2, &image, &durations)
        };
        let numeric = finite_diff(&mut eval, &base, H);
        assert_close_tol(&analytic, &numeric, &format!("criterion 1: e2e {name}"), RTOL, ATOL);
        params += 1;
    }

    let elapsed = t0.elapsed();
    assert!(
        elapsed < Duration::from_secs(60),
        "criterion 1 FAIL: gradient suite took {elapsed:?} (limit 60 s)"
    );
    println!(
        "criterion 1 PASS: {ops} primitive ops and the 2-block 16-node model \
         ({params} parameter tensors + both inputs) match finite differences \
         (rtol {RTOL:.0e}, h {H:.0e}) in {:.1} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_oracle_equivalence() {
    let _lock = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(2001);

    // knn_edges vs O(N^2) brute force: 200 trials, N <= 64, zero mismatches
    for trial in 0..200 {
        let n = rng.random_range(4..=64usize);
        let k = rng.random_range(1..n.min(10));
        let d = rng.random_range(2..=8usize);
        let lambda = rng.random_range(0.0..2.0);
        let feats = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let pos = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let got = knn_edges(&feats, &pos, n, d, k, lambda).unwrap();
        for i in 0..n {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let mut dist2 = 0.0;
                    let mut affinity = 0.0;
                    for t in 0..d {
                        let df = feats[i * d + t] - feats[j * d + t];
                        dist2 += df * df;
                        affinity += pos[i * d + t] * pos[j * d + t];
                    }
                    (dist2 - lambda * affinity, j)
                })
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut want: Vec<usize> = cand[..k].iter().map(|c| c.1).collect();
            want.sort_unstable();
            assert_eq!(
                got[i], want,
                "criterion 2 FAIL: knn trial {trial} node {i} (n={n} k={k}) disagrees with brute force"
            );
        }
    }

    // time_aggregate vs independent per-point patch arithmetic: 100 trials
    for trial in 0..100 {
        let h = rng.random_range(8..=64usize);
        let w = rng.random_range(8..=64usize);
        let patch = rng.random_range(1..=8usize);
        let grid = PatchGrid::new(h, w, patch).unwrap();
        let n_fix = rng.random_range(0..=40usize);
        let points: Vec<Fixation> = (0..n_fix)
            .map(|_| Fixation {
                row: rng.random_range(0.0..h as f64),
                col: rng.random_range(0.0..w as f64),
                duration_s: rng.random_range(0.01..1.0),
            })
            .collect();
        let fix = FixationSet { points, height: h, width: w };
        let got = time_aggregate(&fix, &grid).unwrap();
        let cols = w.div_ceil(patch);
        let rows = h.div_ceil(patch);
        let mut want = vec![0.0f64; rows * cols];
        for p in &fix.points {
            let idx = (p.row.floor() as usize / patch) * cols + p.col.floor() as usize / patch;
            want[idx] += p.duration_s;
        }
        assert_eq!(
            got, want,
            "criterion 2 FAIL: time_aggregate trial {trial} ({h}x{w} patch {patch}) disagrees with per-point oracle"
        );
    }

    // rank-statistic AUC vs the all-pairs ordering oracle: datasets <= 200
    let mut auc_checked = 0usize;
    for trial in 0..100 {
        let n = rng.random_range(2..=200usize);
        // coarse quantization forces real tie groups
        let quant = rng.random_range(1..=20) as f64;
        let scores: Vec<f64> =
            (0..n).map(|_| (rng.random_range(-5.0..5.0) * quant).round() / quant).collect();
        let is_positive: Vec<bool> = (0..n).map(|_| rng.random_range(0.0..1.0) < 0.5).collect();
        let n_pos = is_positive.iter().filter(|p| **p).count();
        let got = auc_binary(&scores, &is_positive);
        if n_pos == 0 || n_pos == n {
            assert!(got.is_none(), "criterion 2 FAIL: auc trial {trial}: degenerate labels must yield None");
            continue;
        }
        let mut wins = 0.0f64;
        let mut total = 0.0f64;
        for i in 0..n {
            if !is_positive[i] {
                continue;
            }
            for j in 0..n {
                if is_positive[j] {
                    continue;
                }
                total += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
        let want = wins / total;
        let got = got.unwrap();
        assert!(
            (got - want).abs() <= 1e-12,
            "criterion 2 FAIL: auc trial {trial} (n={n}): rank statistic {got} vs all-pairs {want}"
        );
        auc_checked += 1;
    }
    assert!(auc_checked >= 80, "criterion 2 FAIL: too few non-degenerate AUC trials ({auc_checked})");

    // max-relative aggregation vs materialized differences: 50 trials
    for trial in 0..50 {
        let n = rng.random_range(2..=20usize);
        let d = rng.random_range(1..=8usize);
        let x = rand_vec(&mut rng, n * d, -2.0, 2.0);
        let edges: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                for t in (1..others.len()).rev() {
                    let u = rng.random_range(0..=t);
                    others.swap(t, u);
                }
                let degree = rng.random_range(0..n); // isolated nodes allowed
                others.truncate(degree.min(others.len()));
                others
            })
            .collect();
        let tape = Tape::new();
        let v = tape.input(x.clone(), vec![n, d]).unwrap();
        let got = v.max_relative(&edges).unwrap().value();
        let mut want = vec![0.0f64; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut best: Option<f64> = None;
                for &nb in &edges[i] {
                    let diff = x[i * d + j] - x[nb * d + j];
                    best = Some(best.map_or(diff, |b: f64| b.max(diff)));
                }
                want[i * d + j] = best.unwrap_or(0.0);
            }
        }
        assert_eq!(
            got, want,
            "criterion 2 FAIL: max_relative trial {trial} (n={n} d={d}) disagrees with materialized differences"
        );
    }

    println!(
        "criterion 2 PASS: knn (200 trials), time aggregation (100), \
         AUC ({auc_checked} non-degenerate of 100), max-relative conv (50) \
         all match their oracles with zero mismatches"
    );
}

#[test]
fn criterion_3_invariance_suite() {
    let _lock = serial();

    // ---- node-permutation invariance of the classifier, 20 permutations ----
    let cfg = ModelConfig {
        input_size: 8,
        patch_size: 2,
        embed_dim: 4,
        blocks: 2,
        classes: 3,
        k: 3,
        ffn_ratio: 2,
        ..ModelConfig::default()
    };
    let mut model = Model::init(cfg.clone(), 9).unwrap();
    randomize_head(&mut model, 10);
    let n = cfg.n_patches();
    let d = cfg.embed_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(3001);
    let nodes = rand_vec(&mut rng, n * d, -1.0, 1.0);
    let pos = rand_vec(&mut rng, n * d, -0.5, 0.5);

    let run = |node_vals: &[f64], pos_vals: &[f64]| -> Vec<f64> {
        let tape = Tape::new();
        let bound = model.bind_frozen(&tape);
        let x = tape.input(node_vals.to_vec(), vec![n, d]).unwrap();
        let edges = knn_edges(node_vals, pos_vals, n, d, cfg.k, cfg.lambda).unwrap();
        model.classify_nodes(&bound, &x, pos_vals, &edges).unwrap().value()
    };
    let base = run(&nodes, &pos);
    for perm_seed in 0..20u64 {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut prng = ChaCha8Rng::seed_from_u64(300 + perm_seed);
        for i in (1..n).rev() {
            let j = prng.random_range(0..=i);
            perm.swap(i, j);
        }
        let permute = |buf: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; buf.len()];
            for (new_row, &old_row) in perm.iter().enumerate() {
                out[new_row * d..(new_row + 1) * d]
                    .copy_from_slice(&buf[old_row * d..(old_row + 1) * d]);
            }
            out
        };
        let permuted = run(&permute(&nodes), &permute(&pos));
        for (cls, (a, b)) in base.iter().zip(&permuted).enumerate() {
            assert!(
                (a - b).abs() <= 1e-9,
                "criterion 3 FAIL: permutation {perm_seed} moved logit {cls}: {a} vs {b}"
            );
        }
    }

    // ---------------------- softmax normalization ----------------------
    for trial in 0..100 {
        let len = rng.random_range(1..=64usize);
        let scale = if trial % 4 == 0 { 1e4 } else { 1.0 };
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-30.0..30.0) * scale).collect();
        let tape = Tape::new();
        let p = tape.input(x, vec![len]).unwrap().softmax().unwrap().value();
        assert!(
            p.iter().all(|&q| (0.0..=1.0).contains(&q)),
            "criterion 3 FAIL: softmax trial {trial} left [0, 1]"
        );
        let s: f64 = p.iter().sum();
        assert!(
            (s - 1.0).abs() <= 1e-12,
            "criterion 3 FAIL: softmax trial {trial} sums to {s}"
        );
    }

    // ------------- time-aggregation mass conservation (exact) -------------
    for trial in 0..100 {
        let h = rng.random_range(8..=48usize);
        let w = rng.random_range(8..=48usize);
        let patch = rng.random_range(1..=8usize);
        let grid = PatchGrid::new(h, w, patch).unwrap();
        let n_fix = rng.random_range(1..=512usize);
        // dyadic durations (multiples of 1/1024) make every partial sum
        // exactly representable, so conservation is bitwise, not approximate
        let points: Vec<Fixation> = (0..n_fix)
            .map(|_| Fixation {
                row: rng.random_range(0.0..h as f64),
                col: rng.random_range(0.0..w as f64),
                duration_s: rng.random_range(1..=2048u32) as f64 / 1024.0,
            })
            .collect();
        let fix = FixationSet { points, height: h, width: w };
        let out = time_aggregate(&fix, &grid).unwrap();
        let massed: f64 = out.iter().sum();
        let total = fix.total_duration();
        assert_eq!(
            massed, total,
            "criterion 3 FAIL: aggregation trial {trial} lost mass ({massed} vs {total})"
        );
    }

    // ------- augmentation: image and fixation transforms agree, 100x -------
    let (src_h, src_w) = (48usize, 40usize);
    let out = 32usize;
    for trial in 0..100 {
        let p = sample_augment(&mut rng, src_h, src_w);
        // an impulse pixel whose image lands comfortably inside the frame
        let mut pick = None;
        for _ in 0..1000 {
            let m = rng.random_range(4..src_h - 4);
            let n = rng.random_range(4..src_w - 4);
            let (fr, fc) = forward_point(&p, out, m as f64 + 0.5, n as f64 + 0.5);
            if fr > 3.0 && fr < out as f64 - 3.0 && fc > 3.0 && fc < out as f64 - 3.0 {
                pick = Some((m, n, fr, fc));
                break;
            }
        }
        let (m, n, fr, fc) = pick.expect("criterion 3 FAIL: no interior impulse position found");
        let mut img = vec![0.0; src_h * src_w];
        img[m * src_w + n] = 1.0;
        let moved = apply_to_image(&img, src_h, src_w, &p, out).unwrap();
        let (bi, bv) = moved
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(*bv > 0.0, "criterion 3 FAIL: transform {trial} erased the impulse");
        let (br, bc) = ((bi / out) as f64 + 0.5, (bi % out) as f64 + 0.5);
        assert!(
            (br - fr).abs() <= 2.0 && (bc - fc).abs() <= 2.0,
            "criterion 3 FAIL: transform {trial}: brightest pixel ({br:.1}, {bc:.1}) \
             vs point map ({fr:.1}, {fc:.1})"
        );
        // the fixation path rides the same point map and stays in frame
        let fix = FixationSet {
            points: vec![Fixation { row: m as f64 + 0.5, col: n as f64 + 0.5, duration_s: 0.2 }],
            height: src_h,
            width: src_w,
        };
        let mapped = apply_to_fixations(&fix, &p, out);
        assert_eq!(
            mapped.points.len(),
            1,
            "criterion 3 FAIL: transform {trial} dropped an interior fixation"
        );
        assert_eq!(
            (mapped.points[0].row, mapped.points[0].col),
            (fr, fc),
            "criterion 3 FAIL: transform {trial}: fixation and point maps diverge"
        );
    }

    println!(
        "criterion 3 PASS: permutation invariance (20 perms, <= 1e-9), softmax \
         normalization (100), exact mass conservation (100), image/fixation \
         transform agreement (100)"
    );
}

#[test]
fn criterion_4_gaze_ablation() {
    let _lock = serial();
    let t0 = Instant::now();

    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_samples: 300, side: 64, classes: 3, seed: 42 };
    synth_dataset(&synth, dir.path()).unwrap();
    let samples = load_dataset(&manifest_path(dir.path()), 64).unwrap();

    let model_cfg = ModelConfig {
        input_size: 64,
        patch_size: 8,
        embed_dim: 32,
        blocks: 2,
        classes: 3,
        k: 6,
        ffn_ratio: 2,
        ..ModelConfig::default()
    };
    let base = TrainConfig {
        epochs: 120,
        batch_size: 32,
        lr: 5e-3,
        seed: 42,
        augment: false,
        ..TrainConfig::default()
    };

    let on = train(&model_cfg, &TrainConfig { gaze: true, ..base.clone() }, &samples).unwrap();
    let off = train(&model_cfg, &TrainConfig { gaze: false, ..base }, &samples).unwrap();
    let acc_on = on.test_metrics.accuracy;
    let acc_off = off.test_metrics.accuracy;
    let gap = acc_on - acc_off;

    let elapsed = t0.elapsed();
    assert!(
        gap >= 0.10,
        "criterion 4 FAIL: gaze on {acc_on:.3} vs off {acc_off:.3} -> gap {:.1} pp < 10 pp",
        gap * 100.0
    );
    assert!(
        elapsed < Duration::from_secs(15 * 60),
        "criterion 4 FAIL: ablation took {elapsed:?} (limit 15 min)"
    );
    println!(
        "criterion 4 PASS: test accuracy gaze on {acc_on:.3} vs off {acc_off:.3} \
         (gap {:.1} pp, matched seed {}) in {:.0} s",
        gap * 100.0,
        42,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_5_speed_benchmark() {
    let _lock = serial();
    let t0 = Instant::now();

    let report = bench_paths(3000, 1000, 150.0, 10, &ModelConfig::default(), 0).unwrap();

    let elapsed = t0.elapsed();
    assert!(
        report.speedup_median >= 10.0,
        "criterion 5 FAIL: median speedup {:.1}x < 10x (vam {:.4} s vs gaze path {:.6} s)",
        report.speedup_median,
        report.vam.median_s,
        report.gaze_embed.median_s
    );
    assert!(
        elapsed < Duration::from_secs(5 * 60),
        "criterion 5 FAIL: benchmark took {elapsed:?} (limit 5 min)"
    );
    println!(
        "criterion 5 PASS: 3000x3000, 1000 fixations, sigma 150: vam median \
         {:.3} s vs aggregation+embedding {:.6} s -> {:.0}x (>= 10x) in {:.0} s",
        report.vam.median_s,
        report.gaze_embed.median_s,
        report.speedup_median,
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_6_noise_robustness() {
    let _lock = serial();
    let t0 = Instant::now();

    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig { n_samples: 150, side: 48, classes: 3, seed: 7 };
    synth_dataset(&synth, dir.path()).unwrap();
    let samples = load_dataset(&manifest_path(dir.path()), 48).unwrap();

    let model_cfg = ModelConfig {
        input_size: 48,
        patch_size: 8,
        embed_dim: 24,
        blocks: 2,
        classes: 3,
        k: 6,
        ffn_ratio: 2,
        ..ModelConfig::default()
    };
    let sigmas = [0.0, 0.1];
    let threads = thread_cap();
    let mut wins = 0usize;
    let mut table_checked = false;

    for seed in 0..5u64 {
        let base = TrainConfig {
            epochs: 100,
            batch_size: 16,
            lr: 5e-3,
            seed,
            augment: false,
            ..TrainConfig::default()
        };
        let on = train(&model_cfg, &TrainConfig { gaze: true, ..base.clone() }, &samples).unwrap();
        let off = train(&model_cfg, &TrainConfig { gaze: false, ..base }, &samples).unwrap();
        assert_eq!(on.split.test, off.split.test, "criterion 6 FAIL: arms disagree on the split");
        let held_out: Vec<PreparedSample> =
            on.split.test.iter().map(|&i| samples[i].clone()).collect();

        // 3 noise draws per sigma smooth single-draw argmax flips
        let rows_on =
            robustness_table(&on.model, &held_out, true, false, &sigmas, 99, 3, threads).unwrap();
        let rows_off =
            robustness_table(&off.model, &held_out, false, false, &sigmas, 99, 3, threads)
                .unwrap();
        let drops_on = drop_table(&rows_on).unwrap();
        let drops_off = drop_table(&rows_off).unwrap();

        if !table_checked {
            // the harness claim: five metric columns, zero drops at sigma 0
            let rendered = format_robust_table(&drops_on, "drop");
            for column in ["accuracy", "precision", "recall", "f1", "avg_auc"] {
                assert!(
                    rendered.contains(column),
                    "criterion 6 FAIL: drop table lacks the {column} column"
                );
            }
            table_checked = true;
        }
        for drops in [&drops_on, &drops_off] {
            let z = &drops[0];
            assert_eq!(
                (z.accuracy, z.precision_macro, z.recall_macro, z.f1_macro, z.avg_auc),
                (0.0, 0.0, 0.0, 0.0, 0.0),
                "criterion 6 FAIL: sigma 0 drops must be exactly zero"
            );
        }

        let d_on = drops_on[1].accuracy;
        let d_off = drops_off[1].accuracy;
        if d_on <= d_off {
            wins += 1;
        }
        println!(
            "criterion 6 seed {seed}: accuracy drop at sigma 0.1: gaze on {d_on:+.3} \
             vs off {d_off:+.3} -> {}",
            if d_on <= d_off { "on wins" } else { "off wins" }
        );
    }

    assert!(
        wins >= 3,
        "criterion 6 FAIL: gaze-on degraded no more than gaze-off in only {wins}/5 seeds (need >= 3)"
    );
    println!(
        "criterion 6 PASS: five-column drop table, exact zeros at sigma 0, and the \
         gaze-on model degraded no more than gaze-off in {wins}/5 seeds at sigma 0.1 \
         ({:.0} s)",
        t0.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_7_checkpoint_determinism() {
    let _lock = serial();
    let exe = env!("CARGO_BIN_EXE_gazegnn");
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");

    let synth = Command::new(exe)
        .args(["synth", "--n", "24", "--seed", "11", "--set", "synth.side=32"])
        .arg("--out")
        .arg(&corpus)
        .output()
        .unwrap();
    assert!(
        synth.status.success(),
        "criterion 7 FAIL: synth exited with {:?}: {}",
        synth.status.code(),
        String::from_utf8_lossy(&synth.stderr)
    );
    let manifest = manifest_path(&corpus);

    let train_into = |out_dir: &Path| {
        let run = Command::new(exe)
            .args([
                "train",
                "--seed",
                "5",
                "--set",
                "model.input_size=32",
                "--set",
                "model.patch_size=8",
                "--set",
                "model.D=8",
                "--set",
                "model.L=1",
                "--set",
                "knn.k=4",
                "--set",
                "model.ffn_ratio=2",
                "--set",
                "train.epochs=2",
                "--set",
                "train.batch_size=8",
            ])
            .arg("--data")
            .arg(&manifest)
            .arg("--out")
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(
            run.status.success(),
            "criterion 7 FAIL: train exited with {:?}: {}",
            run.status.code(),
            String::from_utf8_lossy(&run.stderr)
        );
        std::fs::read(out_dir.join("checkpoint.bin")).unwrap()
    };

    let first = train_into(&dir.path().join("run1"));
    let second = train_into(&dir.path().join("run2"));
    assert_eq!(
        first, second,
        "criterion 7 FAIL: two seed-5 training runs produced different checkpoint bytes"
    );
    println!(
        "criterion 7 PASS: two fixed-seed training runs through the CLI wrote \
         byte-identical checkpoints ({} bytes)",
        first.len()
    );
}
