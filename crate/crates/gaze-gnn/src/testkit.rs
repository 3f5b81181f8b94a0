//! Gradient-checking support shared by unit and integration tests.
//!
//! The finite-difference oracle here is written against forward evaluation
//! only, so it is independent of every analytic backward rule it is used to
//! verify. Not part of the crate's stable API.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const FD_H: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-5;
pub const FD_ATOL: f64 = 1e-8;

/// d f / d x_i  ~=  (f(x + h e_i) - f(x - h e_i)) / 2h
pub fn finite_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

pub fn assert_close_tol(analytic: &[f64], numeric: &[f64], what: &str, rtol: f64, atol: f64) {
    assert_eq!(analytic.len(), numeric.len(), "{what}: length");
    for (i, (a, f)) in analytic.iter().zip(numeric).enumerate() {
        let tol = atol + rtol * a.abs().max(f.abs());
        assert!(
            (a - f).abs() <= tol,
            "{what}: grad[{i}] analytic {a} vs finite-diff {f} (tol {tol})"
        );
    }
}

pub fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_close_tol(analytic, numeric, what, FD_RTOL, FD_ATOL);
}

/// Checks the analytic gradient of a scalar-valued graph against the
/// finite-difference oracle, for every input slot, at explicit tolerances.
pub fn gradcheck_tol(
    what: &str,
    inputs: &[(&[usize], Vec<f64>)],
    build: impl Fn(&Tape, &[Var]) -> Var,
    h: f64,
    rtol: f64,
    atol: f64,
) {
    // Analytic pass.
    let tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|(shape, data)| {
            let t = Tensor::new(data.clone(), shape.to_vec()).unwrap().with_grad();
            tape.leaf(&t)
        })
        .collect();
    let loss = build(&tape, &vars);
    assert_eq!(loss.numel(), 1, "{what}: loss must be scalar");
    tape.backward(&loss).unwrap();

    for (slot, (_, data)) in inputs.iter().enumerate() {
        let analytic = vars[slot].grad().unwrap_or_else(|| vec![0.0; data.len()]);
        let mut eval = |probe: &[f64]| -> f64 {
            let t2 = Tape::new();
            let vs: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(k, (s, d))| {
                    let src = if k == slot { probe.to_vec() } else { d.clone() };
                    t2.input(src, s.to_vec()).unwrap()
                })
                .collect();
            build(&t2, &vs).scalar_value()
        };
        let numeric = finite_diff(&mut eval, data, h);
        assert_close_tol(&analytic, &numeric, &format!("{what} input {slot}"), rtol, atol);
    }
}

/// `gradcheck_tol` at the default step and tolerances.
pub fn gradcheck(
    what: &str,
    inputs: &[(&[usize], Vec<f64>)],
    build: impl Fn(&Tape, &[Var]) -> Var,
) {
    gradcheck_tol(what, inputs, build, FD_H, FD_RTOL, FD_ATOL);
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Fixed random weights turn a vector-valued op into a scalar loss so the
/// whole Jacobian is exercised, not just its row sums.
pub fn weighted_sum(tape: &Tape, v: &Var, weights: &[f64]) -> Var {
    let w = tape.input(weights.to_vec(), v.shape()).unwrap();
    v.mul(&w).unwrap().sum()
}
