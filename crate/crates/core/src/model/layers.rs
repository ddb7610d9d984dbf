//! Graph-level building blocks shared by every level of the hierarchy.

use crate::tensor::{GeluKind, Graph, Result, Var};

#[derive(Debug, Clone, Copy)]
pub struct MhaVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GrnVars {
    /// `None` turns the gated connection into a plain residual.
    pub gamma: Option<Var>,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub gain: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln_gain: Var,
    pub ln_bias: Var,
    pub mha: MhaVars,
    pub grn: GrnVars,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockOptions {
    pub heads: usize,
    pub gelu: GeluKind,
    pub eps: f64,
}

/// Repeats a `[b, l]` key mask once per head, matching the `[b·h, l, l]`
/// score layout produced by `split_heads`.
fn head_mask(mask: &[bool], len: usize, heads: usize) -> Vec<bool> {
    mask.chunks(len)
        .flat_map(|seq| std::iter::repeat(seq).take(heads).flatten().copied())
        .collect()
}

/// Scaled dot-product attention over `x: [b, l, d]` with `heads` heads of
/// width `d / heads`; masked keys get zero weight. Returns `[b, l, d]`.
pub fn multi_head_attention(g: &mut Graph, x: Var, w: &MhaVars, heads: usize, mask: &[bool]) -> Result<Var> {
    let len = g.shape(x)[1];
    let d = g.shape(x)[2];
    let dk = d / heads;
    let q = g.matmul(x, w.wq)?;
    let k = g.matmul(x, w.wk)?;
    let v = g.matmul(x, w.wv)?;
    let (q, k, v) = (g.split_heads(q, heads)?, g.split_heads(k, heads)?, g.split_heads(v, heads)?);
    let scores = g.matmul_nt(q, k)?;
    let scores = g.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let attn = g.masked_softmax(scores, head_mask(mask, len, heads))?;
    let ctx = g.matmul(attn, v)?;
    let ctx = g.merge_heads(ctx, heads)?;
    g.matmul(ctx, w.wo)
}

/// `LayerNorm(γ ⊙ FFN(x) + x)` with `FFN(x) = GELU(x W₁ + b₁) W₂ + b₂`.
pub fn gated_residual(g: &mut Graph, x: Var, w: &GrnVars, gelu: GeluKind, eps: f64) -> Result<Var> {
    let h = g.matmul(x, w.w1)?;
    let h = g.add_row(h, w.b1)?;
    let h = g.gelu(h, gelu)?;
    let f = g.matmul(h, w.w2)?;
    let mut f = g.add_row(f, w.b2)?;
    if let Some(gamma) = w.gamma {
        f = g.mul_row(f, gamma)?;
    }
    let s = g.add(f, x)?;
    g.layer_norm(s, w.gain, w.bias, eps)
}

/// LayerNorm, attention, gated residual, then a masked mean over each
/// sequence: `[b, l, d] -> [b, d]`.
pub fn level_block(g: &mut Graph, x: Var, w: &BlockVars, opts: BlockOptions, mask: &[bool]) -> Result<Var> {
    let normed = g.layer_norm(x, w.ln_gain, w.ln_bias, opts.eps)?;
    let attended = multi_head_attention(g, normed, &w.mha, opts.heads, mask)?;
    let out = gated_residual(g, attended, &w.grn, opts.gelu, opts.eps)?;
    g.masked_mean(out, mask.to_vec())
}
