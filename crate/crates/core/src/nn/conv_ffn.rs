use rand::Rng;

use super::{join, rank3, Initializer, Linear, DW_KERNEL};
use crate::error::Result;
use crate::params::BoundParams;
use crate::tensor::{Scalar, TensorError, TensorResult, Var};

/// Inverted-residual feed-forward: 1×1 expand, 3×3 depthwise over the patch
/// grid, 1×1 project. The 1×1 convolutions are per-token linear maps.
#[derive(Clone, Copy, Debug)]
pub struct ConvFfnParams<'g, T: Scalar> {
    pub pointwise_expand: Linear<'g, T>,
    /// `[3, 3, d_hidden]`
    pub depthwise_kernel: Var<'g, T>,
    pub depthwise_bias: Var<'g, T>,
    pub pointwise_project: Linear<'g, T>,
}

impl<'g, T: Scalar> ConvFfnParams<'g, T> {
    pub fn init<R: Rng>(
        init: &mut Initializer<'_, T, R>,
        prefix: &str,
        d_model: usize,
        d_hidden: usize,
    ) -> Result<()> {
        Linear::init(init, &join(prefix, "expand"), d_model, d_hidden)?;
        init.weight(
            &join(prefix, "depthwise.weight"),
            &[DW_KERNEL, DW_KERNEL, d_hidden],
        )?;
        init.zeros(&join(prefix, "depthwise.bias"), &[d_hidden])?;
        Linear::init(init, &join(prefix, "project"), d_hidden, d_model)
    }

    pub fn bind(p: &BoundParams<'g, T>, prefix: &str) -> Result<Self> {
        Ok(Self {
            pointwise_expand: Linear::bind(p, &join(prefix, "expand"))?,
            depthwise_kernel: p.get(&join(prefix, "depthwise.weight"))?,
            depthwise_bias: p.get(&join(prefix, "depthwise.bias"))?,
            pointwise_project: Linear::bind(p, &join(prefix, "project"))?,
        })
    }
}

/// Tokens are laid out row-major on a `grid.0 × grid.1` patch grid.
pub fn conv_ffn<'g, T: Scalar>(
    x: Var<'g, T>,
    grid: (usize, usize),
    p: &ConvFfnParams<'g, T>,
) -> TensorResult<Var<'g, T>> {
    let (b, n, _) = rank3("conv_ffn", x)?;
    let (gh, gw) = grid;
    if n != gh * gw {
        return Err(TensorError::Invalid {
            op: "conv_ffn",
            msg: format!("{n} tokens cannot be laid out on a {gh}x{gw} grid"),
        });
    }
    let hidden = p.pointwise_expand.forward(x)?.gelu();
    let dh = hidden.shape()[2];
    let spatial = hidden
        .reshape(&[b, gh, gw, dh])?
        .depthwise_conv2d(p.depthwise_kernel, p.depthwise_bias)?
        .gelu()
        .reshape(&[b, n, dh])?;
    p.pointwise_project.forward(spatial)
}
