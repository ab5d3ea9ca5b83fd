//! Central-difference verification of reverse-mode gradients.
//!
//! Runs at f64 only; f32 finite differences are too noisy for the
//! tolerances used in the test suite.

use crate::error::{McvqaError, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;
use rayon::prelude::*;

/// Compare the autodiff gradient of a scalar-valued graph function against
/// central differences over every coordinate of `params`.
///
/// Returns the max over all coordinates of
/// `|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)`.
pub fn grad_check<B>(build: B, params: &[Tensor<f64>], h: f64) -> Result<f64>
where
    B: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + Sync,
{
    // analytic gradients in one pass
    let mut g = Graph::new();
    let ids: Vec<NodeId> = params.iter().map(|p| g.var(p.clone())).collect();
    let root = build(&mut g, &ids)?;
    let grads = g.backward(root)?;
    let ad: Vec<Tensor<f64>> = ids
        .iter()
        .zip(params)
        .map(|(&id, p)| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape().to_vec()))
        })
        .collect();

    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(pi, p)| (0..p.numel()).map(move |ci| (pi, ci)))
        .collect();

    // each worker chunk builds one graph and re-evaluates it in place per
    // probe: perturb a leaf coordinate, refresh forward values, read the root
    let chunk = (coords.len() / (4 * rayon::current_num_threads()).max(1)).max(1);
    let errs: Result<Vec<f64>> = coords
        .par_chunks(chunk)
        .map(|chunk| {
            let mut g = Graph::new();
            let ids: Vec<NodeId> = params.iter().map(|p| g.var(p.clone())).collect();
            let root = build(&mut g, &ids)?;
            let probe = |g: &mut Graph<f64>, pi: usize, ci: usize, v: f64| -> Result<f64> {
                g.leaf_data_mut(ids[pi])[ci] = v;
                g.refresh();
                let out = g.value(root).item();
                if !out.is_finite() {
                    return Err(McvqaError::Probe(format!("non-finite function value {out}")));
                }
                Ok(out)
            };
            let mut worst = 0.0f64;
            for &(pi, ci) in chunk {
                let base = params[pi].data()[ci];
                let fp = probe(&mut g, pi, ci, base + h)?;
                let fm = probe(&mut g, pi, ci, base - h)?;
                g.leaf_data_mut(ids[pi])[ci] = base;
                let g_fd = (fp - fm) / (2.0 * h);
                let g_ad = ad[pi].data()[ci];
                worst = worst.max((g_ad - g_fd).abs() / 1.0_f64.max(g_ad.abs()).max(g_fd.abs()));
            }
            Ok(worst)
        })
        .collect();

    Ok(errs?.into_iter().fold(0.0, f64::max))
}

/// Weighted sum with a fixed random constant, reducing any tensor to a
/// scalar without killing gradients (a plain mean would zero out softmax
/// directions, for example).
fn scalarize(g: &mut Graph<f64>, x: NodeId, salt: u64) -> Result<NodeId> {
    use rand::{Rng, SeedableRng};
    let shape = g.value(x).shape().to_vec();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(salt);
    let n: usize = shape.iter().product();
    let w = g.constant(
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
    );
    let mut out = g.mul(x, w)?;
    while !g.value(out).shape().is_empty() {
        out = g.sum_axis(out, 0)?;
    }
    Ok(out)
}

/// One gradient check per differentiable graph operation, each against
/// central differences on small random tensors. Returns (op name, max rel
/// err) pairs; the acceptance gate requires every entry < 1e-6.
pub fn per_op_checks() -> Result<Vec<(&'static str, f64)>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x09C);
    let mut rand_t = |shape: Vec<usize>| -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let h = 1e-5;
    let mut out = Vec::new();
    let a34 = rand_t(vec![3, 4]);
    let b42 = rand_t(vec![4, 2]);
    let v4 = rand_t(vec![4]);
    let a34b = rand_t(vec![3, 4]);

    out.push((
        "matmul",
        grad_check(
            |g, ids| {
                let y = g.matmul(ids[0], ids[1])?;
                scalarize(g, y, 1)
            },
            &[a34.clone(), b42.clone()],
            h,
        )?,
    ));
    out.push((
        "add",
        grad_check(
            |g, ids| {
                let y = g.add(ids[0], ids[1])?; // suffix broadcast [3,4]+[4]
                scalarize(g, y, 2)
            },
            &[a34.clone(), v4.clone()],
            h,
        )?,
    ));
    out.push((
        "mul",
        grad_check(
            |g, ids| {
                let y = g.mul(ids[0], ids[1])?;
                scalarize(g, y, 3)
            },
            &[a34.clone(), v4.clone()],
            h,
        )?,
    ));
    out.push((
        "affine",
        grad_check(
            |g, ids| {
                let y = g.affine(ids[0], 1.7, -0.3);
                scalarize(g, y, 4)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "tanh",
        grad_check(
            |g, ids| {
                let y = g.tanh(ids[0]);
                scalarize(g, y, 5)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "sigmoid",
        grad_check(
            |g, ids| {
                let y = g.sigmoid(ids[0]);
                scalarize(g, y, 6)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "softmax",
        grad_check(
            |g, ids| {
                let y = g.softmax(ids[0], 1)?;
                scalarize(g, y, 7)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "cross_entropy",
        grad_check(
            |g, ids| {
                let p = g.softmax(ids[0], 1)?;
                let rows: Vec<NodeId> = (0..3)
                    .map(|r| {
                        let row = g.slice(p, 0, r, 1)?;
                        g.cross_entropy(row, r + 1)
                    })
                    .collect::<Result<_>>()?;
                let mut total = rows[0];
                for &r in &rows[1..] {
                    total = g.add(total, r)?;
                }
                Ok(total)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "max_pool",
        grad_check(
            |g, ids| {
                let y = g.max_pool(ids[0], 0)?;
                scalarize(g, y, 8)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "max2",
        grad_check(
            |g, ids| {
                let y = g.max2(ids[0], ids[1])?;
                scalarize(g, y, 9)
            },
            &[a34.clone(), a34b.clone()],
            h,
        )?,
    ));
    out.push((
        "sum_axis",
        grad_check(
            |g, ids| {
                let y = g.sum_axis(ids[0], 1)?;
                scalarize(g, y, 10)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "mean",
        grad_check(
            |g, ids| {
                let y = g.mean(ids[0], 0)?;
                scalarize(g, y, 11)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "transpose",
        grad_check(
            |g, ids| {
                let y = g.transpose(ids[0])?;
                scalarize(g, y, 12)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "concat",
        grad_check(
            |g, ids| {
                let y = g.concat(1, &[ids[0], ids[1], ids[0]])?;
                scalarize(g, y, 13)
            },
            &[a34.clone(), a34b.clone()],
            h,
        )?,
    ));
    out.push((
        "slice",
        grad_check(
            |g, ids| {
                let y = g.slice(ids[0], 1, 1, 2)?;
                scalarize(g, y, 14)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "embed",
        grad_check(
            |g, ids| {
                // repeated ids exercise gradient accumulation per row
                let y = g.embed(ids[0], &[0, 2, 2, 1, 0])?;
                scalarize(g, y, 15)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    out.push((
        "grad_scale",
        grad_check(
            |g, ids| {
                // identity factor: grad_scale must be gradient-honest at 1.0
                let y = g.grad_scale(ids[0], 1.0);
                scalarize(g, y, 16)
            },
            &[a34.clone()],
            h,
        )?,
    ));
    Ok(out)
}

/// End-to-end gradient check of the entire model on one synthetic example
/// with all three losses active (N=5, T=6, I=4, d_t=32, d_v=48; short
/// sequences keep the coordinate count tractable).
///
/// Returns the max relative error over every parameter coordinate.
pub fn full_model_check() -> Result<f64> {
    use crate::model::forward::{example_frames, forward, qa_inputs, ForwardOptions};
    use crate::model::{init_params, ModelConfig, ModelVars, ParamSet};
    use crate::synth::{generate_synthetic, SynthConfig, SynthProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let synth_cfg = SynthConfig::default();
    let (vocab, examples) = generate_synthetic(404, 1, SynthProfile::Mixed, &synth_cfg);
    let example = &examples[0];
    let cfg = ModelConfig {
        l_max: 12,
        ..ModelConfig::toy(vocab.len())
    };
    let params: ParamSet<f64> = init_params(&cfg, 7);
    let names = params.names().to_vec();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = qa_inputs(example, cfg.l_max, 0.2, Some(&mut mask_rng))?;
    let opts = ForwardOptions {
        lambda_qa: 1.0,
        lambda_span: 0.2,
        lambda_cont: 0.1,
        with_span: true,
        with_cont: true,
    };

    grad_check(
        |g, ids| {
            let vars = ModelVars::from_leaves(&names, ids);
            let frames = example_frames(g, &cfg, example)?;
            let res = forward(g, &vars, &cfg, &inputs, &frames, &opts)?;
            Ok(res.total)
        },
        params.tensors(),
        1e-5,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_has_analytic_gradient() {
        // f(x) = x^T x, grad = 2x
        let x = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let err = grad_check(
            |g, ids| {
                let xt = g.transpose(ids[0])?;
                g.matmul(ids[0], xt)
            },
            &[x.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "rel err {err}");

        // and the analytic value itself
        let mut g = Graph::new();
        let id = g.var(x);
        let xt = g.transpose(id).unwrap();
        let y = g.matmul(id, xt).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(id).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn corrupted_backward_rule_is_detected() {
        // grad_scale(x, 1.1) lies to the reverse pass by 10%
        let x = Tensor::matrix(1, 4, vec![0.3, -0.2, 0.9, 0.1]).unwrap();
        let err = grad_check(
            |g, ids| {
                let bad = g.grad_scale(ids[0], 1.1);
                let t = g.tanh(bad);
                let tt = g.transpose(t)?;
                g.matmul(t, tt)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err > 1e-2, "negative control should fail, got {err}");
    }

    #[test]
    fn every_op_passes_its_gradient_check() {
        for (name, err) in per_op_checks().unwrap() {
            assert!(err < 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn probe_error_on_non_finite() {
        let x = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let res = grad_check(
            |g, ids| {
                // ln(p) with p driven to the clamp still works; force a NaN instead
                let inf = g.affine(ids[0], f64::INFINITY, 0.0);
                let z = g.mul(inf, ids[0])?; // inf * 0 = NaN
                Ok(z)
            },
            &[x],
            1e-5,
        );
        assert!(matches!(res, Err(McvqaError::Probe(_))));
    }
}
