//! Oracle tests for the differentiation engine: independent brute-force
//! implementations (triple-loop matmul, exp/normalize softmax, central
//! differences) frozen against the graph ops.

use mcvqa::gradcheck::grad_check;
use mcvqa::{Graph, McvqaError, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

// ── matmul ───────────────────────────────────────────────────────────────

/// Independent triple-loop oracle.
fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

#[test]
fn matmul_identity_and_hand_cases() {
    let mut g = Graph::new();
    let eye = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let v = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let out = g.matmul(eye, v).unwrap();
    assert_eq!(g.value(out).data(), &[3.0, 4.0]);

    let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[11.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut r = rng(1);
    let a = rand_tensor(&[3, 4], &mut r);
    let b = rand_tensor(&[4, 2], &mut r);
    let expect = matmul_oracle(&a, &b);
    let mut g = Graph::new();
    let (ia, ib) = (g.constant(a), g.constant(b));
    let out = g.matmul(ia, ib).unwrap();
    for (got, want) in g.value(out).data().iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![4, 2]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

// ── softmax ──────────────────────────────────────────────────────────────

#[test]
fn softmax_symmetry_and_stabilization() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0f64, 0.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }

    let x = g.constant(Tensor::vector(vec![1000.0, 0.0]));
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    assert!(d[0] > 1.0 - 1e-9 && d[1] < 1e-9);
}

#[test]
fn softmax_matches_exp_normalize_oracle() {
    let x: [f64; 3] = [1.0, 2.0, 3.0];
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    let expect: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
    let mut g = Graph::new();
    let ix = g.constant(Tensor::vector(x.to_vec()));
    let y = g.softmax(ix, 0).unwrap();
    for (got, want) in g.value(y).data().iter().zip(&expect) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn softmax_sums_to_one_for_large_inputs() {
    let mut r = rng(2);
    for _ in 0..200 {
        let n = r.gen_range(1..8);
        let scale = [1.0, 10.0, 1e3, 1e4][r.gen_range(0..4)];
        let data: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(data));
        let y = g.softmax(x, 0).unwrap();
        let sum: f64 = g.value(y).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        assert!(g.value(y).data().iter().all(|v| *v >= 0.0));
    }
}

// ── cross entropy ────────────────────────────────────────────────────────

#[test]
fn cross_entropy_analytic_cases() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 0.0, 0.0]));
    let l = g.cross_entropy(p, 0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);

    let p = g.constant(Tensor::vector(vec![0.2; 5]));
    for t in 0..5 {
        let l = g.cross_entropy(p, t).unwrap();
        assert!((g.value(l).item() - 5.0_f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_matches_neg_log_oracle() {
    let mut r = rng(3);
    let raw: Vec<f64> = (0..6).map(|_| r.gen_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|v| v / z).collect();
    for t in 0..6 {
        let expect = -probs[t].ln();
        let mut g = Graph::new();
        let p = g.constant(Tensor::vector(probs.clone()));
        let l = g.cross_entropy(p, t).unwrap();
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_clamps_zero_probability() {
    let mut g = Graph::new();
    let p = g.constant(Tensor::vector(vec![0.0, 1.0]));
    let l = g.cross_entropy(p, 0).unwrap();
    assert!((g.value(l).item() - (-(1e-12_f64).ln())).abs() < 1e-6);
}

// ── max pool ─────────────────────────────────────────────────────────────

#[test]
fn max_pool_singleton_is_identity() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
    let y = g.max_pool(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, -2.0, 0.5]);
}

#[test]
fn max_pool_hand_case() {
    // [[1,5],[3,2]] over the row axis -> [3,5]
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(2, 2, vec![1.0, 5.0, 3.0, 2.0]).unwrap());
    let y = g.max_pool(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
}

#[test]
fn max_pool_empty_axis_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(vec![0, 3]));
    assert!(matches!(g.max_pool(x, 0), Err(McvqaError::Dimension(_))));
}

#[test]
fn max_pool_gradient_matches_finite_difference() {
    let mut r = rng(4);
    let x = rand_tensor(&[4, 6, 8], &mut r);
    let w = rand_tensor(&[4, 8], &mut r); // mixes the pooled output into a scalar
    let err = grad_check(
        |g, ids| {
            let pooled = g.max_pool(ids[0], 1)?; // 4x8
            let prod = g.mul(pooled, ids[1])?;
            let s0 = g.sum_axis(prod, 0)?;
            g.sum_axis(s0, 0)
        },
        &[x, w],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn max_pool_tie_breaks_to_first_index() {
    let mut g = Graph::new();
    let x = g.var(Tensor::matrix(3, 1, vec![2.0, 2.0, 1.0]).unwrap());
    let y = g.max_pool(x, 0).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[1.0, 0.0, 0.0]);
}

// ── embedding lookup ─────────────────────────────────────────────────────

#[test]
fn embed_backward_scatter_adds_and_leaves_unlooked_rows_zero() {
    let mut g = Graph::new();
    let table = g.var(Tensor::matrix(4, 2, vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap());
    let rows = g.embed(table, &[1, 1, 3]).unwrap();
    let s0 = g.sum_axis(rows, 0).unwrap();
    let s = g.sum_axis(s0, 0).unwrap();
    let grads = g.backward(s).unwrap();
    let gt = grads.get(table).unwrap();
    // row 1 looked up twice, row 3 once, rows 0 and 2 exactly zero
    assert_eq!(gt.data(), &[0., 0., 2., 2., 0., 0., 1., 1.]);
}

#[test]
fn embed_rejects_out_of_range_id() {
    let mut g = Graph::<f64>::new();
    let table = g.constant(Tensor::zeros(vec![4, 2]));
    assert!(matches!(
        g.embed(table, &[0, 4]),
        Err(McvqaError::Vocabulary(_))
    ));
}

// ── per-op gradient checks ───────────────────────────────────────────────

fn check_op<B>(name: &str, shapes: &[&[usize]], seed: u64, build: B)
where
    B: Fn(&mut Graph<f64>, &[NodeId]) -> mcvqa::Result<NodeId> + Sync,
{
    let mut r = rng(seed);
    let params: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(s, &mut r)).collect();
    let err = grad_check(build, &params, 1e-5).unwrap();
    assert!(err < 1e-6, "{name}: rel err {err}");
}

/// Collapse any tensor to a scalar through data-dependent weights so that
/// every coordinate of the op output influences the root.
fn to_scalar(g: &mut Graph<f64>, x: NodeId) -> mcvqa::Result<NodeId> {
    let mut y = g.tanh(x);
    while !g.value(y).shape().is_empty() {
        y = g.sum_axis(y, 0)?;
    }
    Ok(y)
}

#[test]
fn every_differentiable_op_passes_grad_check() {
    check_op("add", &[&[3, 4], &[3, 4]], 10, |g, p| {
        let y = g.add(p[0], p[1])?;
        to_scalar(g, y)
    });
    check_op("add-broadcast", &[&[3, 4], &[4]], 11, |g, p| {
        let y = g.add(p[0], p[1])?;
        to_scalar(g, y)
    });
    check_op("mul", &[&[3, 4], &[3, 4]], 12, |g, p| {
        let y = g.mul(p[0], p[1])?;
        to_scalar(g, y)
    });
    check_op("mul-broadcast", &[&[3, 4], &[4]], 13, |g, p| {
        let y = g.mul(p[0], p[1])?;
        to_scalar(g, y)
    });
    check_op("tanh", &[&[2, 5]], 14, |g, p| {
        let y = g.tanh(p[0]);
        to_scalar(g, y)
    });
    check_op("sigmoid", &[&[2, 5]], 15, |g, p| {
        let y = g.sigmoid(p[0]);
        to_scalar(g, y)
    });
    check_op("affine", &[&[2, 5]], 16, |g, p| {
        let y = g.affine(p[0], 1.7, -0.3);
        to_scalar(g, y)
    });
    check_op("matmul", &[&[3, 4], &[4, 2]], 17, |g, p| {
        let y = g.matmul(p[0], p[1])?;
        to_scalar(g, y)
    });
    check_op("softmax0", &[&[4, 3]], 18, |g, p| {
        let sm = g.softmax(p[0], 0)?;
        let w = g.constant(Tensor::matrix(4, 3, (0..12).map(|i| 0.1 * i as f64).collect()).unwrap());
        let y = g.mul(sm, w)?;
        to_scalar(g, y)
    });
    check_op("softmax1", &[&[4, 3]], 19, |g, p| {
        let sm = g.softmax(p[0], 1)?;
        let w = g.constant(Tensor::matrix(4, 3, (0..12).map(|i| 0.2 * i as f64).collect()).unwrap());
        let y = g.mul(sm, w)?;
        to_scalar(g, y)
    });
    check_op("cross-entropy", &[&[5]], 20, |g, p| {
        let sm = g.softmax(p[0], 0)?;
        g.cross_entropy(sm, 2)
    });
    check_op("max-pool", &[&[3, 4]], 21, |g, p| {
        let y = g.max_pool(p[0], 0)?;
        to_scalar(g, y)
    });
    check_op("max2", &[&[3, 4], &[3, 4]], 22, |g, p| {
        let y = g.max2(p[0], p[1])?;
        to_scalar(g, y)
    });
    check_op("sum-axis", &[&[3, 4]], 23, |g, p| {
        let y = g.sum_axis(p[0], 1)?;
        to_scalar(g, y)
    });
    check_op("mean", &[&[3, 4]], 24, |g, p| {
        let y = g.mean(p[0], 0)?;
        to_scalar(g, y)
    });
    check_op("transpose", &[&[3, 4]], 25, |g, p| {
        let t = g.transpose(p[0])?;
        let w = g.constant(Tensor::matrix(4, 3, (0..12).map(|i| 0.3 * i as f64).collect()).unwrap());
        let y = g.mul(t, w)?;
        to_scalar(g, y)
    });
    check_op("concat", &[&[2, 3], &[1, 3]], 26, |g, p| {
        let y = g.concat(0, &[p[0], p[1]])?;
        to_scalar(g, y)
    });
    check_op("concat-axis1", &[&[2, 3], &[2, 2]], 27, |g, p| {
        let y = g.concat(1, &[p[0], p[1]])?;
        to_scalar(g, y)
    });
    check_op("slice", &[&[4, 3]], 28, |g, p| {
        let y = g.slice(p[0], 0, 1, 2)?;
        to_scalar(g, y)
    });
    check_op("embed", &[&[5, 3]], 29, |g, p| {
        let y = g.embed(p[0], &[0, 2, 2, 4])?;
        to_scalar(g, y)
    });
}

// ── determinism & invariants ─────────────────────────────────────────────

#[test]
fn backward_is_bit_deterministic() {
    let run = || {
        let mut r = rng(7);
        let a = rand_tensor(&[4, 4], &mut r);
        let b = rand_tensor(&[4, 4], &mut r);
        let mut g = Graph::new();
        let (ia, ib) = (g.var(a), g.var(b));
        let m = g.matmul(ia, ib).unwrap();
        let t = g.tanh(m);
        let sm = g.softmax(t, 1).unwrap();
        let s0 = g.sum_axis(sm, 0).unwrap();
        let s = g.sum_axis(s0, 0).unwrap();
        let grads = g.backward(s).unwrap();
        (
            grads.get(ia).unwrap().data().to_vec(),
            grads.get(ib).unwrap().data().to_vec(),
        )
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    assert_eq!(a1, a2);
    assert_eq!(b1, b2);
}

#[test]
fn forward_ops_stay_finite_on_finite_inputs() {
    let mut r = rng(8);
    for _ in 0..100 {
        let x = rand_tensor(&[3, 5], &mut r);
        let scaled = x.map(|v| v * 1e4);
        let mut g = Graph::new();
        let i = g.constant(scaled);
        let sm = g.softmax(i, 1).unwrap();
        let t = g.tanh(sm);
        let s = g.sigmoid(t);
        let mp = g.max_pool(s, 0).unwrap();
        assert!(g.value(mp).is_finite());
    }
}
