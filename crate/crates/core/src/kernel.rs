//! The unified aggregation operator and the kernel generators that express
//! each classic operator through it.
//!
//! A kernel is a rank-6 tensor `H×W×K×K×N×D_out` with a group count `G`
//! (`N = D_in / G`). Output channel `m` belongs to group `g = m·G / D_out`
//! and aggregates input channels `[g·N, (g+1)·N)` over the `K×K` window:
//!
//! ```text
//! Y[i,j,m] = Σ_{u,v} Σ_{n<N} X[i-l+u, j-l+v, g·N+n] · W[i,j,u,v,n,m]
//! ```
//!
//! With `G = 1` every output channel sees all input channels; with
//! `G = D_in = D_out` each channel aggregates only itself.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::classic::{
    attention_probabilities, check_window, dims3, group_of, involution_kernel, ConvWeights,
    InvolutionWeights, PosEncoding, SaHead, SaWeights,
};
use crate::error::{config, invalid_shape, Error, Result};
use crate::tensor::{matmul, pad_spatial, softmax_slice, Tensor};

/// Which generator produced a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Conv,
    Sa,
    Msa,
    Involution,
    ConvAsMsa,
    RelposConst,
    Channelwise,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Conv,
        Family::Sa,
        Family::Msa,
        Family::Involution,
        Family::ConvAsMsa,
        Family::RelposConst,
        Family::Channelwise,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Conv => "conv",
            Family::Sa => "sa",
            Family::Msa => "msa",
            Family::Involution => "involution",
            Family::ConvAsMsa => "conv_as_msa",
            Family::RelposConst => "relpos_const",
            Family::Channelwise => "channelwise",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| config(format!("unknown family `{s}`")))
    }
}

/// Input channels aggregated by output channel `m`.
pub fn channel_window(m: usize, groups: usize, n: usize, d_out: usize) -> Range<usize> {
    let g = group_of(m, groups, d_out);
    g * n..(g + 1) * n
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionKernel {
    w: Tensor,
    groups: usize,
    family: Family,
}

impl EvolutionKernel {
    pub fn new(w: Tensor, groups: usize, family: Family) -> Result<Self> {
        w.expect_rank(6, "evolution kernel")?;
        let s = w.shape();
        if s[2] != s[3] || s[2].is_multiple_of(2) {
            return Err(invalid_shape(format!(
                "kernel window must be odd and square, got {s:?}"
            )));
        }
        if groups == 0 || !s[5].is_multiple_of(groups) {
            return Err(invalid_shape(format!(
                "output depth {} is not divisible by {groups} groups",
                s[5]
            )));
        }
        Ok(Self { w, groups, family })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }

    pub fn into_tensor(self) -> Tensor {
        self.w
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn height(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.w.shape()[2]
    }

    /// Channels aggregated per group.
    pub fn n(&self) -> usize {
        self.w.shape()[4]
    }

    pub fn d_in(&self) -> usize {
        self.n() * self.groups
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[5]
    }

    fn block_len(&self) -> usize {
        self.w.shape()[2..].iter().product()
    }

    /// The `K×K×N×D_out` block at pixel `(i, j)`, flat.
    pub fn block(&self, i: usize, j: usize) -> &[f64] {
        let len = self.block_len();
        &self.w.data()[(i * self.width() + j) * len..][..len]
    }

    /// The `N×D_out` matrix at pixel `(i, j)` and window position `(u, v)`.
    pub fn slice(&self, i: usize, j: usize, u: usize, v: usize) -> Result<Tensor> {
        let (k, n, d) = (self.kernel_size(), self.n(), self.d_out());
        let data = self.block(i, j)[(u * k + v) * n * d..][..n * d].to_vec();
        Tensor::new(vec![n, d], data)
    }

    /// True when every pixel carries a bitwise-identical block.
    pub fn is_spatially_constant(&self) -> bool {
        let first = self.block(0, 0);
        let bits = |s: &[f64]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        let reference = bits(first);
        self.w
            .data()
            .chunks(self.block_len())
            .all(|b| bits(b) == reference)
    }

    /// Bytes needed to hold the materialized kernel.
    pub fn memory_bytes(&self) -> usize {
        self.w.len() * std::mem::size_of::<f64>()
    }
}

/// Applies an evolution kernel to an `H×W×D_in` feature map.
pub fn ev_apply(x: &Tensor, kern: &EvolutionKernel) -> Result<Tensor> {
    let (h, wd, d_in) = dims3(x)?;
    if h != kern.height() || wd != kern.width() || d_in != kern.d_in() {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: kern.tensor().shape().to_vec(),
        });
    }
    let (k, n, d_out, g) = (kern.kernel_size(), kern.n(), kern.d_out(), kern.groups());
    let l = k / 2;
    let pw = wd + 2 * l;
    let xp = pad_spatial(x, l)?;
    let xs = xp.data();
    let mut out = vec![0.0; h * wd * d_out];
    for i in 0..h {
        for j in 0..wd {
            let block = kern.block(i, j);
            let dst = &mut out[(i * wd + j) * d_out..][..d_out];
            for u in 0..k {
                for v in 0..k {
                    let src = &xs[((i + u) * pw + j + v) * d_in..][..d_in];
                    let wblk = &block[(u * k + v) * n * d_out..][..n * d_out];
                    for (m, o) in dst.iter_mut().enumerate() {
                        let base = group_of(m, g, d_out) * n;
                        for (c, &xv) in src[base..base + n].iter().enumerate() {
                            *o += xv * wblk[c * d_out + m];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, wd, d_out], out)
}

/// Repeats one `K×K×N×D_out` block at every pixel.
fn broadcast(block: &[f64], shape: [usize; 6]) -> Result<Tensor> {
    let pixels = shape[0] * shape[1];
    let data = std::iter::repeat_n(block, pixels)
        .flatten()
        .copied()
        .collect();
    Tensor::new(shape.to_vec(), data)
}

/// Convolution as a spatially constant kernel: the conv weights copied to
/// every pixel.
pub fn ev_fn_conv(w: &ConvWeights, height: usize, width: usize) -> Result<EvolutionKernel> {
    let (k, d_in, d_out) = (w.kernel_size(), w.d_in(), w.d_out());
    let t = broadcast(w.tensor().data(), [height, width, k, k, d_in, d_out])?;
    EvolutionKernel::new(t, 1, Family::Conv)
}

/// Builds `Σ_p P^p[i,j,u,v] · M^p[c,m]` for per-head probability maps
/// `P^p` (`H×W×K×K`) and per-head channel matrices `M^p` (`D_in×D_out`).
fn weighted_heads(probs: &[Tensor], mats: &[Tensor], family: Family) -> Result<EvolutionKernel> {
    let ps = probs[0].shape();
    let (h, wd, k) = (ps[0], ps[1], ps[2]);
    let (d_in, d_out) = (mats[0].shape()[0], mats[0].shape()[1]);
    let cm = d_in * d_out;
    let mut data = vec![0.0; h * wd * k * k * cm];
    for (prob, mat) in probs.iter().zip(mats) {
        for (dst, &p) in data.chunks_mut(cm).zip(prob.data()) {
            for (o, &mv) in dst.iter_mut().zip(mat.data()) {
                *o += p * mv;
            }
        }
    }
    EvolutionKernel::new(
        Tensor::new(vec![h, wd, k, k, d_in, d_out], data)?,
        1,
        family,
    )
}

/// Self-attention as an input-conditioned kernel.
///
/// * one head: `W[i,j,u,v,c,m] = P[i,j,u,v] · wv[c,m]`;
/// * several heads, unfused: output channel `m` uses head `p = m / D_h` and
///   column `m - p·D_h` of `wv^p`; the caller applies `wo` afterwards;
/// * several heads, fused: `W = Σ_p P^p ⊗ (wv^p · wo^p)` where `wo^p` holds
///   rows `[p·D_h, (p+1)·D_h)` of `wo`, reproducing the projected output.
pub fn ev_fn_sa(
    x: &Tensor,
    w: &SaWeights,
    k: usize,
    m: usize,
    fuse_output_projection: bool,
) -> Result<EvolutionKernel> {
    let dims = w.validate(x, k, m)?;
    if fuse_output_projection && m == 1 {
        return Err(config(
            "cannot fuse an output projection into a single-head kernel",
        ));
    }
    let probs = attention_probabilities(x, w, k, m)?;
    if m == 1 {
        return weighted_heads(&probs, &[w.heads[0].wv.clone()], Family::Sa);
    }
    if fuse_output_projection {
        let wo = w.wo.as_ref().expect("validated");
        let mats = w
            .heads
            .iter()
            .enumerate()
            .map(|(p, head)| {
                let rows = wo.data()[p * dims.d_h * dims.d_out..][..dims.d_h * dims.d_out].to_vec();
                matmul(&head.wv, &Tensor::new(vec![dims.d_h, dims.d_out], rows)?)
            })
            .collect::<Result<Vec<_>>>()?;
        return weighted_heads(&probs, &mats, Family::Msa);
    }

    // Each head fills its own D_h-wide band of output channels.
    let width = m * dims.d_h;
    let mats = w
        .heads
        .iter()
        .enumerate()
        .map(|(p, head)| {
            Tensor::from_fn(&[dims.d_in, width], |ix| {
                let col = ix[1];
                if col / dims.d_h == p {
                    head.wv.get(&[ix[0], col - p * dims.d_h])
                } else {
                    0.0
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    weighted_heads(&probs, &mats, Family::Msa)
}

/// Involution as a depthwise kernel: `G = D`, `N = 1`, and output channel `m`
/// takes the involution slice of its channel group.
pub fn ev_fn_involution(x: &Tensor, w: &InvolutionWeights, k: usize) -> Result<EvolutionKernel> {
    let (h, wd, d) = dims3(x)?;
    if k != w.kernel_size {
        return Err(config(format!(
            "window {k} does not match involution weights window {}",
            w.kernel_size
        )));
    }
    let inv = involution_kernel(x, w)?;
    let g_inv = w.groups;
    let mut data = Vec::with_capacity(h * wd * k * k * d);
    for patch in inv.data().chunks(g_inv) {
        data.extend((0..d).map(|m| patch[group_of(m, g_inv, d)]));
    }
    EvolutionKernel::new(
        Tensor::new(vec![h, wd, k, k, 1, d], data)?,
        d,
        Family::Involution,
    )
}

/// One-hot probability maps for `K²` heads: head `p` attends only to window
/// position `(p / K, p % K)` at every pixel.
fn one_hot_heads(h: usize, wd: usize, k: usize) -> Result<Vec<Tensor>> {
    (0..k * k)
        .map(|p| Tensor::from_fn(&[h, wd, k, k], |ix| (ix[2] * k + ix[3] == p) as u8 as f64))
        .collect()
}

/// Convolution expressed through `K²` one-hot attention heads with
/// input-independent probabilities. The kernel at window position `(u, v)` is
/// `wv^{uK+v} · wo^{uK+v}`, so each slice has rank at most `D_h`.
pub fn ev_fn_conv_as_msa(
    value_heads: &[Tensor],
    wo: &Tensor,
    height: usize,
    width: usize,
) -> Result<EvolutionKernel> {
    let m = value_heads.len();
    let k = (1..=m).find(|k| k * k >= m).unwrap_or(0);
    if m == 0 || k * k != m {
        return Err(config(format!("head count {m} is not a square")));
    }
    check_window(k)?;
    value_heads[0].expect_rank(2, "value head")?;
    let (d_in, d_h) = (value_heads[0].shape()[0], value_heads[0].shape()[1]);
    if value_heads.iter().any(|t| t.shape() != [d_in, d_h]) {
        return Err(config("value heads must share one shape"));
    }
    wo.expect_rank(2, "wo")?;
    if wo.shape()[0] != m * d_h {
        return Err(config(format!(
            "wo must have {} rows for {m} heads of width {d_h}, got {:?}",
            m * d_h,
            wo.shape()
        )));
    }
    let d_out = wo.shape()[1];
    let mats = value_heads
        .iter()
        .enumerate()
        .map(|(p, wv)| {
            let rows = wo.data()[p * d_h * d_out..][..d_h * d_out].to_vec();
            matmul(wv, &Tensor::new(vec![d_h, d_out], rows)?)
        })
        .collect::<Result<Vec<_>>>()?;
    weighted_heads(&one_hot_heads(height, width, k)?, &mats, Family::ConvAsMsa)
}

/// Scores `s[u,v] = v · (r[u,v] · wk_hat)` of a purely positional attention,
/// one per window position.
pub fn relpos_scores(v: &Tensor, wk_hat: &Tensor, table: &Tensor) -> Result<Tensor> {
    table.expect_rank(3, "relative table")?;
    let (k, d_p) = (table.shape()[0], table.shape()[2]);
    if table.shape()[1] != k {
        return Err(invalid_shape(format!(
            "relative table must be K×K×D_p, got {:?}",
            table.shape()
        )));
    }
    check_window(k)?;
    let keys = matmul(&table.clone().reshape(&[k * k, d_p])?, wk_hat)?;
    let d_k = keys.shape()[1];
    if v.shape() != [d_k] {
        return Err(Error::ShapeMismatch {
            left: v.shape().to_vec(),
            right: vec![d_k],
        });
    }
    let s = keys
        .data()
        .chunks(d_k)
        .map(|row| row.iter().zip(v.data()).map(|(a, b)| a * b).sum())
        .collect();
    Tensor::new(vec![k, k], s)
}

/// Attention whose scores depend only on the relative shift, which makes the
/// kernel identical at every pixel.
pub fn ev_fn_relpos_constant(
    v: &Tensor,
    wk_hat: &Tensor,
    table: &Tensor,
    wv: &Tensor,
    height: usize,
    width: usize,
) -> Result<EvolutionKernel> {
    let scores = relpos_scores(v, wk_hat, table)?;
    let k = scores.shape()[0];
    wv.expect_rank(2, "wv")?;
    let probs = softmax_slice(scores.data());
    let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
    let mut block = Vec::with_capacity(k * k * d_in * d_out);
    for p in probs {
        block.extend(wv.data().iter().map(|&c| p * c));
    }
    let t = broadcast(&block, [height, width, k, k, d_in, d_out])?;
    EvolutionKernel::new(t, 1, Family::RelposConst)
}

/// Attention with one score map per input channel: channel `c` uses its own
/// query/key pair, so the kernel varies across both pixels and channels.
pub fn ev_fn_channelwise_sa(
    x: &Tensor,
    per_channel_qk: &[(Tensor, Tensor)],
    wv: &Tensor,
    k: usize,
) -> Result<EvolutionKernel> {
    let (h, wd, d_in) = dims3(x)?;
    check_window(k)?;
    if per_channel_qk.len() != d_in {
        return Err(config(format!(
            "expected {d_in} per-channel query/key pairs, got {}",
            per_channel_qk.len()
        )));
    }
    wv.expect_rank(2, "wv")?;
    let d_out = wv.shape()[1];
    let kk = k * k;
    let probs = per_channel_qk
        .iter()
        .map(|(wq, wk)| {
            let single = SaWeights {
                heads: vec![SaHead {
                    wq: wq.clone(),
                    wk: wk.clone(),
                    wv: wv.clone(),
                }],
                wo: None,
                pos: PosEncoding::none(),
            };
            attention_probabilities(x, &single, k, 1).map(|mut p| p.remove(0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(h * wd * kk * d_in * d_out);
    for px in 0..h * wd {
        for uv in 0..kk {
            for (c, prob) in probs.iter().enumerate() {
                let p = prob.data()[px * kk + uv];
                data.extend(wv.data()[c * d_out..][..d_out].iter().map(|&w| p * w));
            }
        }
    }
    EvolutionKernel::new(
        Tensor::new(vec![h, wd, k, k, d_in, d_out], data)?,
        1,
        Family::Channelwise,
    )
}

/// A kernel generator together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub enum EvolutionFunction {
    Conv {
        weights: ConvWeights,
    },
    Sa {
        weights: SaWeights,
        kernel_size: usize,
        heads: usize,
        fuse_output_projection: bool,
    },
    Involution {
        weights: InvolutionWeights,
    },
    ConvAsMsa {
        value_heads: Vec<Tensor>,
        wo: Tensor,
    },
    RelposConst {
        v: Tensor,
        wk_hat: Tensor,
        table: Tensor,
        wv: Tensor,
    },
    Channelwise {
        per_channel_qk: Vec<(Tensor, Tensor)>,
        wv: Tensor,
        kernel_size: usize,
    },
}

impl EvolutionFunction {
    pub fn family(&self) -> Family {
        match self {
            EvolutionFunction::Conv { .. } => Family::Conv,
            EvolutionFunction::Sa { heads: 1, .. } => Family::Sa,
            EvolutionFunction::Sa { .. } => Family::Msa,
            EvolutionFunction::Involution { .. } => Family::Involution,
            EvolutionFunction::ConvAsMsa { .. } => Family::ConvAsMsa,
            EvolutionFunction::RelposConst { .. } => Family::RelposConst,
            EvolutionFunction::Channelwise { .. } => Family::Channelwise,
        }
    }

    /// Generates the kernel for input `x`. Input-independent generators only
    /// read its spatial extent.
    pub fn generate(&self, x: &Tensor) -> Result<EvolutionKernel> {
        let (h, wd, _) = dims3(x)?;
        match self {
            EvolutionFunction::Conv { weights } => ev_fn_conv(weights, h, wd),
            EvolutionFunction::Sa {
                weights,
                kernel_size,
                heads,
                fuse_output_projection,
            } => ev_fn_sa(x, weights, *kernel_size, *heads, *fuse_output_projection),
            EvolutionFunction::Involution { weights } => {
                ev_fn_involution(x, weights, weights.kernel_size)
            }
            EvolutionFunction::ConvAsMsa { value_heads, wo } => {
                ev_fn_conv_as_msa(value_heads, wo, h, wd)
            }
            EvolutionFunction::RelposConst {
                v,
                wk_hat,
                table,
                wv,
            } => ev_fn_relpos_constant(v, wk_hat, table, wv, h, wd),
            EvolutionFunction::Channelwise {
                per_channel_qk,
                wv,
                kernel_size,
            } => ev_fn_channelwise_sa(x, per_channel_qk, wv, *kernel_size),
        }
    }
}
