use rand::Rng;

use super::{join, rank3, Initializer};
use crate::error::Result;
use crate::params::BoundParams;
use crate::tensor::{Scalar, TensorError, TensorResult, Var};

/// Multi-head self-attention projections, each `[d_model, d_model]`.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams<'g, T: Scalar> {
    pub w_q: Var<'g, T>,
    pub w_k: Var<'g, T>,
    pub w_v: Var<'g, T>,
    pub w_o: Var<'g, T>,
    pub n_heads: usize,
}

impl<'g, T: Scalar> AttentionParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        d_model: usize,
    ) -> Result<()> {
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            init.weight(&join(prefix, w), &[d_model, d_model])?;
        }
        Ok(())
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str, n_heads: usize) -> Result<Self> {
        Ok(Self {
            w_q: p.get(&join(prefix, "w_q"))?,
            w_k: p.get(&join(prefix, "w_k"))?,
            w_v: p.get(&join(prefix, "w_v"))?,
            w_o: p.get(&join(prefix, "w_o"))?,
            n_heads,
        })
    }
}

/// `softmax(Q Kᵀ / √d_k) V` per head over the token axis; heads are
/// concatenated and passed through the output projection.
pub fn attention<'g, T: Scalar>(
    x: Var<'g, T>,
    p: &AttentionParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    attention_with_weights(x, p).map(|(out, _)| out)
}

/// As [`attention`], also returning the `[b, heads, n, n]` attention weights.
pub fn attention_with_weights<'g, T: Scalar>(
    x: Var<'g, T>,
    p: &AttentionParams<'g, T>,
) -> TensorResult<(Var<'g, T>, Var<'g, T>)> {
    let (b, n, d) = rank3("attention", x)?;
    let h = p.n_heads;
    if p.w_q.shape() != [d, d] {
        return Err(TensorError::ShapeMismatch {
            op: "attention",
            lhs: x.shape(),
            rhs: p.w_q.shape(),
        });
    }
    if h == 0 || d % h != 0 {
        return Err(TensorError::Invalid {
            op: "attention",
            msg: format!("d_model {d} is not divisible by {h} heads"),
        });
    }
    let dk = d / h;
    let heads = |w: Var<'g, T>, axes: &[usize]| -> TensorResult<Var<'g, T>> {
        x.matmul(w)?.reshape(&[b, n, h, dk])?.permute(axes)
    };
    let q = heads(p.w_q, &[0, 2, 1, 3])?; // [b, h, n, dk]
    let kt = heads(p.w_k, &[0, 2, 3, 1])?; // [b, h, dk, n]
    let v = heads(p.w_v, &[0, 2, 1, 3])?;
    let scores = q.matmul(kt)?.scale(T::from_f64(1.0 / (dk as f64).sqrt()));
    let weights = scores.softmax(3)?;
    let ctx = weights
        .matmul(v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, n, d])?;
    Ok((ctx.matmul(p.w_o)?, weights))
}
