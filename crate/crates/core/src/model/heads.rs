//! Per-stream answer classifiers and the QA loss.
//!
//! Each stream classifier is two fully-connected layers, 2d_t → d_t (tanh)
//! → 1, yielding one logit per hypothesis. The prediction distribution is
//! softmax(s_v + s_t) with cross-entropy at the annotated answer.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::model::ModelVars;
use crate::scalar::Scalar;

/// Apply the named stream classifier to pooled hypotheses (N×2d_t → N×1).
pub fn stream_logits<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    stream: &str,
    pooled: NodeId,
) -> Result<NodeId> {
    let h = g.matmul(pooled, vars.get(&format!("cls.{stream}.w1")))?;
    let h = g.add(h, vars.get(&format!("cls.{stream}.b1")))?;
    let h = g.tanh(h);
    let out = g.matmul(h, vars.get(&format!("cls.{stream}.w2")))?;
    g.add(out, vars.get(&format!("cls.{stream}.b2")))
}

/// ŷ = softmax(s_v + s_t) as a 1×N row, plus the cross-entropy loss at
/// `correct_index`.
pub fn qa_loss<F: Scalar>(
    g: &mut Graph<F>,
    s_v: NodeId,
    s_t: NodeId,
    correct_index: usize,
) -> Result<(NodeId, NodeId)> {
    let sum = g.add(s_v, s_t)?;
    let row = g.transpose(sum)?;
    let probs = g.softmax(row, 1)?;
    let loss = g.cross_entropy(probs, correct_index)?;
    Ok((probs, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig, ModelVars, ParamSet};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        let mut c = ModelConfig::toy(40);
        c.d_t = 4;
        c
    }

    #[test]
    fn zero_weights_give_uniform_prediction_and_ln5_loss() {
        let c = cfg();
        let mut params: ParamSet<f64> = init_params(&c, 1);
        for name in params.names().to_vec() {
            if name.starts_with("cls.") {
                for v in params.get_mut(&name).data_mut() {
                    *v = 0.0;
                }
            }
        }
        let mut g = Graph::new();
        let vars = ModelVars::bind(&mut g, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..5 * 2 * c.d_t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pooled = g.constant(Tensor::new(vec![5, 2 * c.d_t], data).unwrap());
        let s_v = stream_logits(&mut g, &vars, "vis", pooled).unwrap();
        let s_t = stream_logits(&mut g, &vars, "text", pooled).unwrap();
        let (probs, loss) = qa_loss(&mut g, s_v, s_t, 2).unwrap();
        for &p in g.value(probs).data() {
            assert!((p - 0.2).abs() < 1e-12);
        }
        assert!((g.value(loss).item() - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identical_hypotheses_get_equal_logits() {
        let c = cfg();
        let params: ParamSet<f64> = init_params(&c, 2);
        let mut g = Graph::new();
        let vars = ModelVars::bind(&mut g, &params);
        let row: Vec<f64> = (0..2 * c.d_t).map(|i| 0.1 * i as f64).collect();
        let pooled = g.constant(Tensor::new(vec![5, 2 * c.d_t], row.repeat(5)).unwrap());
        let s = stream_logits(&mut g, &vars, "vis", pooled).unwrap();
        let v = g.value(s).data().to_vec();
        for &x in &v {
            assert!((x - v[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn classifier_matches_two_layer_oracle() {
        let c = cfg();
        let params: ParamSet<f64> = init_params(&c, 3);
        let mut g = Graph::new();
        let vars = ModelVars::bind(&mut g, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d2 = 2 * c.d_t;
        let data: Vec<f64> = (0..3 * d2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let pooled = g.constant(Tensor::new(vec![3, d2], data.clone()).unwrap());
        let s = stream_logits(&mut g, &vars, "text", pooled).unwrap();

        let w1 = params.get("cls.text.w1");
        let b1 = params.get("cls.text.b1");
        let w2 = params.get("cls.text.w2");
        let b2 = params.get("cls.text.b2");
        for n in 0..3 {
            let x = &data[n * d2..(n + 1) * d2];
            let mut logit = b2.data()[0];
            for j in 0..c.d_t {
                let mut acc = b1.data()[j];
                for (i, &xi) in x.iter().enumerate() {
                    acc += xi * w1.at2(i, j);
                }
                logit += acc.tanh() * w2.at2(j, 0);
            }
            assert!((g.value(s).data()[n] - logit).abs() < 1e-6);
        }
    }

    #[test]
    fn one_hot_logits_drive_loss_to_zero() {
        let mut g: Graph<f64> = Graph::new();
        let mut sv = vec![0.0; 5];
        sv[3] = 1000.0;
        let s_v = g.constant(Tensor::new(vec![5, 1], sv).unwrap());
        let s_t = g.constant(Tensor::zeros(vec![5, 1]));
        let (_, loss) = qa_loss(&mut g, s_v, s_t, 3).unwrap();
        assert!(g.value(loss).item() < 1e-9);
    }

    #[test]
    fn prediction_is_shift_invariant() {
        let mut g: Graph<f64> = Graph::new();
        let logits = vec![0.3, -0.5, 1.2, 0.0, 0.7];
        let a = g.constant(Tensor::new(vec![5, 1], logits.clone()).unwrap());
        let shifted = g.constant(
            Tensor::new(vec![5, 1], logits.iter().map(|x| x + 17.0).collect()).unwrap(),
        );
        let zero = g.constant(Tensor::zeros(vec![5, 1]));
        let (p1, _) = qa_loss(&mut g, a, zero, 0).unwrap();
        let (p2, _) = qa_loss(&mut g, shifted, zero, 0).unwrap();
        for (x, y) in g.value(p1).data().iter().zip(g.value(p2).data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}
