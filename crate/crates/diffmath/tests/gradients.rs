//! Finite-difference checks for every differentiable primitive.

use diffmath::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn positive(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(0.2..2.0)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

/// Compares tape gradients with central differences for every entry of
/// every parameter.
fn check<F>(params: Vec<Tensor>, build: F)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.param(p.clone())).collect();
        let loss = build(&mut tape, &vars);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = eval(&params);
    let grads = tape.backward(loss).unwrap();

    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get(vars[pi]).unwrap();
        for k in 0..p.len() {
            let mut plus = params.clone();
            plus[pi].data_mut()[k] += H;
            let mut minus = params.clone();
            minus[pi].data_mut()[k] -= H;
            let (tp, _, lp) = eval(&plus);
            let (tm, _, lm) = eval(&minus);
            let numeric = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * H);
            let a = analytic.data()[k];
            let scale = 1f64.max(a.abs()).max(numeric.abs());
            assert!(
                (a - numeric).abs() <= TOL * scale,
                "param {pi} entry {k}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// Reduces any tensor to a scalar through a fixed random projection so
/// every output entry contributes a distinct weight.
fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(x).shape();
    let w = tape.constant(random(shape[0], shape[1], &mut rng));
    let prod = tape.mul(x, w).unwrap();
    tape.sum(prod)
}

#[test]
fn matmul_add_row_relu() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    check(vec![random(3, 4, &mut rng), random(4, 2, &mut rng), random(1, 2, &mut rng)], |t, v| {
        let m = t.matmul(v[0], v[1]).unwrap();
        let b = t.add_row(m, v[2]).unwrap();
        let r = t.relu(b);
        project(t, r, 9)
    });
}

#[test]
fn sigmoid_log_pow_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    check(vec![random(4, 3, &mut rng), positive(4, 3, &mut rng)], |t, v| {
        let s = t.sigmoid(v[0]);
        let l = t.log(s);
        let p = t.pow(v[1], -0.5);
        let q = t.scale(p, 1.7);
        let q = t.add_scalar(q, 0.3);
        let m = t.mul(l, q).unwrap();
        let d = t.sub(m, v[0]).unwrap();
        let a = t.add(d, s).unwrap();
        project(t, a, 3)
    });
}

#[test]
fn softmax_and_log_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(vec![random(3, 5, &mut rng)], |t, v| {
        let s = t.softmax_rows(v[0]);
        let ls = t.log_softmax_rows(v[0]);
        let a = project(t, s, 4);
        let b = project(t, ls, 5);
        let sum = t.add(a, b).unwrap();
        t.scale(sum, 1.0)
    });
}

#[test]
fn concat_gather_scatter_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    check(vec![random(4, 2, &mut rng), random(4, 3, &mut rng), random(6, 2, &mut rng)], |t, v| {
        let c = t.concat_cols(&[v[0], v[1]]).unwrap();
        let g = t.gather_rows(c, &[3, 0, 0, 2, 1]).unwrap();
        let s = t.scatter_add_rows(v[2], &[1, 0, 1, 2, 2, 2], 3).unwrap();
        let sl = t.slice_rows(v[2], 2, 5).unwrap();
        let a = project(t, g, 6);
        let b = project(t, s, 7);
        let d = project(t, sl, 8);
        let ab = t.add(a, b).unwrap();
        t.add(ab, d).unwrap()
    });
}

#[test]
fn propagate_and_scale_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let src = [0, 1, 1, 2, 3, 0];
    let dst = [1, 0, 2, 1, 0, 3];
    check(vec![random(6, 1, &mut rng), random(4, 3, &mut rng), positive(4, 1, &mut rng)], |t, v| {
        let p = t.propagate(v[0], v[1], &src, &dst).unwrap();
        let s = t.scale_rows(p, v[2]).unwrap();
        project(t, s, 10)
    });
}

#[test]
fn segment_max_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    check(vec![random(7, 3, &mut rng)], |t, v| {
        let m = t.segment_max_rows(v[0], &[0, 3, 4, 7]).unwrap();
        let p = t.max_pool_rows(v[0]).unwrap();
        let a = project(t, m, 11);
        let b = t.mean(p).unwrap();
        t.add(a, b).unwrap()
    });
}

#[test]
fn composed_message_passing_network() {
    // two normalized propagation layers with a learned edge weight vector
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let src = [0, 1, 1, 2, 2, 3, 3, 4];
    let dst = [1, 0, 2, 1, 3, 2, 4, 3];
    let weights: Vec<f64> = (0..8).map(|_| rng.random_range(0.1..0.9)).collect();
    check(
        vec![random(5, 3, &mut rng), random(3, 4, &mut rng), random(4, 2, &mut rng), Tensor::column(weights)],
        |t, v| {
            let deg = t.scatter_add_rows(v[3], &dst, 5).unwrap();
            let deg = t.add_scalar(deg, 1.0);
            let norm = t.pow(deg, -0.5);
            let mut h = v[0];
            for w in [v[1], v[2]] {
                let msg = t.propagate(v[3], h, &src, &dst).unwrap();
                let agg = t.add(h, msg).unwrap();
                let agg = t.scale_rows(agg, norm).unwrap();
                let lin = t.matmul(agg, w).unwrap();
                h = t.sigmoid(lin);
            }
            let pooled = t.max_pool_rows(h).unwrap();
            let logp = t.log_softmax_rows(pooled);
            project(t, logp, 12)
        },
    );
}

#[test]
fn replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut t = Tape::new();
        let a = t.param(random(5, 4, &mut rng));
        let b = t.param(random(4, 3, &mut rng));
        let m = t.matmul(a, b).unwrap();
        let s = t.softmax_rows(m);
        let loss = project(&mut t, s, 1);
        let g = t.backward(loss).unwrap();
        (t.value(loss).item().to_bits(), g.get(a).unwrap().clone())
    };
    assert_eq!(run(), run());
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(3, 4, &mut rng);
    let b = random(4, 2, &mut rng);
    let mut t = Tape::new();
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let c = t.matmul(va, vb).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                acc += a.get(i, k) * b.get(k, j);
            }
            assert!((t.value(c).get(i, j) - acc).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(values in prop::collection::vec(-10.0f64..10.0, 12)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(3, 4, values).unwrap());
        let s = t.softmax_rows(x);
        let out = t.value(s);
        for r in 0..3 {
            let total: f64 = out.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(out.row(r).iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }
}
