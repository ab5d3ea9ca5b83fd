//! Bidirectional GRU over the T segment positions, batched over the N
//! hypotheses.
//!
//! Standard recurrence per direction, zero initial state:
//!   z = σ(x·Wz + h·Uz + bz)
//!   r = σ(x·Wr + h·Ur + br)
//!   ĥ = tanh(x·Wc + (r∘h)·Uc + bc)
//!   h' = (1−z)∘h + z∘ĥ
//! Outputs are forward‖backward concatenations, 2·d_t per position.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::model::ModelVars;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

struct GateParams {
    w: NodeId,
    u: NodeId,
    b: NodeId,
}

struct DirectionParams {
    z: GateParams,
    r: GateParams,
    c: GateParams,
}

fn direction_params(vars: &ModelVars, stream: &str, dir: &str) -> DirectionParams {
    let gate = |g: &str| GateParams {
        w: vars.get(&format!("gru.{stream}.{dir}.w{g}")),
        u: vars.get(&format!("gru.{stream}.{dir}.u{g}")),
        b: vars.get(&format!("gru.{stream}.{dir}.b{g}")),
    };
    DirectionParams {
        z: gate("z"),
        r: gate("r"),
        c: gate("c"),
    }
}

fn gate<F: Scalar>(
    g: &mut Graph<F>,
    x: NodeId,
    h: NodeId,
    p: &GateParams,
) -> Result<NodeId> {
    let xw = g.matmul(x, p.w)?;
    let hu = g.matmul(h, p.u)?;
    let sum = g.add(xw, hu)?;
    g.add(sum, p.b)
}

fn gru_direction<F: Scalar>(
    g: &mut Graph<F>,
    xs: &[NodeId],
    p: &DirectionParams,
    n_rows: usize,
    d: usize,
    reverse: bool,
) -> Result<Vec<NodeId>> {
    let mut h = g.constant(Tensor::zeros(vec![n_rows, d]));
    let order: Vec<usize> = if reverse {
        (0..xs.len()).rev().collect()
    } else {
        (0..xs.len()).collect()
    };
    let mut out = vec![h; xs.len()];
    for t in order {
        let x = xs[t];
        let pre_z = gate(g, x, h, &p.z)?;
        let z = g.sigmoid(pre_z);
        let pre_r = gate(g, x, h, &p.r)?;
        let r = g.sigmoid(pre_r);
        let rh = g.mul(r, h)?;
        let xc = g.matmul(x, p.c.w)?;
        let rhu = g.matmul(rh, p.c.u)?;
        let pre_c = g.add(xc, rhu)?;
        let pre_c = g.add(pre_c, p.c.b)?;
        let cand = g.tanh(pre_c);
        // h' = (1−z)∘h + z∘ĥ
        let one_minus_z = g.affine(z, -F::one(), F::one());
        let keep = g.mul(one_minus_z, h)?;
        let take = g.mul(z, cand)?;
        h = g.add(keep, take)?;
        out[t] = h;
    }
    Ok(out)
}

/// Run the named BiGRU stream over T inputs of shape N×d_t, producing T
/// outputs of shape N×2d_t.
pub fn bigru_sequence<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    stream: &str,
    xs: &[NodeId],
    n_rows: usize,
    d: usize,
) -> Result<Vec<NodeId>> {
    let fwd = direction_params(vars, stream, "fwd");
    let bwd = direction_params(vars, stream, "bwd");
    let f = gru_direction(g, xs, &fwd, n_rows, d, false)?;
    let b = gru_direction(g, xs, &bwd, n_rows, d, true)?;
    f.iter()
        .zip(&b)
        .map(|(&ft, &bt)| g.concat(1, &[ft, bt]))
        .collect()
}

/// Elementwise max over the T axis: `Max(BiGRU(·))`, N×2d_t.
pub fn pooled_hypotheses<F: Scalar>(g: &mut Graph<F>, seq_out: &[NodeId]) -> Result<NodeId> {
    let mut acc = seq_out[0];
    for &t in &seq_out[1..] {
        acc = g.max2(acc, t)?;
    }
    Ok(acc)
}
