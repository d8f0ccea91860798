//! Direct implementations of convolution, local self-attention and
//! involution. These are the reference paths the unified operator is
//! checked against.
//!
//! Window convention shared by every operator here: for an odd window `K`
//! with `l = K / 2`, kernel position `(u, v)` at output pixel `(i, j)` reads
//! the input pixel `(i - l + u, j - l + v)`. Out-of-image positions read
//! zeros.

use serde::{Deserialize, Serialize};

use crate::error::{config, invalid_shape, Error, Result};
use crate::tensor::{matmul, pad_spatial, softmax_slice, Tensor};

pub(crate) fn check_window(k: usize) -> Result<usize> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(config(format!(
            "window size must be odd and positive, got {k}"
        )));
    }
    Ok(k / 2)
}

pub(crate) fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    x.expect_rank(3, "feature map")?;
    let s = x.shape();
    Ok((s[0], s[1], s[2]))
}

fn expect_shape(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(config(format!(
            "{what} must have shape {shape:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Per-pixel linear map: `H×W×D` times `D×E` gives `H×W×E`.
pub fn pointwise(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (h, wd, d) = dims3(x)?;
    let flat = x.clone().reshape(&[h * wd, d])?;
    let out = matmul(&flat, w)?;
    let e = out.shape()[1];
    out.reshape(&[h, wd, e])
}

/// Spatially shared `K×K×D_in×D_out` convolution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    w: Tensor,
}

impl ConvWeights {
    pub fn new(w: Tensor) -> Result<Self> {
        w.expect_rank(4, "conv weights")?;
        let s = w.shape();
        if s[0] != s[1] {
            return Err(invalid_shape(format!(
                "conv window must be square, got {s:?}"
            )));
        }
        check_window(s[0])?;
        Ok(Self { w })
    }

    pub fn kernel_size(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.w.shape()[2]
    }

    pub fn d_out(&self) -> usize {
        self.w.shape()[3]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.w
    }
}

/// Same-size, stride-1, zero-padded convolution without bias.
pub fn conv2d(x: &Tensor, w: &ConvWeights) -> Result<Tensor> {
    let (h, wd, d_in) = dims3(x)?;
    if d_in != w.d_in() {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: w.tensor().shape().to_vec(),
        });
    }
    let k = w.kernel_size();
    let l = k / 2;
    let d_out = w.d_out();
    let xp = pad_spatial(x, l)?;
    let pw = wd + 2 * l;
    let (xs, ws) = (xp.data(), w.tensor().data());
    let mut out = vec![0.0; h * wd * d_out];
    for i in 0..h {
        for j in 0..wd {
            let dst = &mut out[(i * wd + j) * d_out..][..d_out];
            for u in 0..k {
                for v in 0..k {
                    let src = &xs[((i + u) * pw + j + v) * d_in..][..d_in];
                    let wblk = &ws[(u * k + v) * d_in * d_out..][..d_in * d_out];
                    for (c, &xv) in src.iter().enumerate() {
                        let wrow = &wblk[c * d_out..][..d_out];
                        for (o, &wv) in dst.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, wd, d_out], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosKind {
    #[default]
    None,
    Absolute,
    Relative,
}

/// Relative-position key parameters for one head.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeHead {
    /// `D_p×D_k`; the relative key for shift `δ` is `r_δ · wk_hat`.
    pub wk_hat: Tensor,
    /// Content bias, length `D_k`.
    pub u: Tensor,
    /// Position bias, length `D_k`.
    pub v: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelativeEncoding {
    /// `K×K×D_p`; entry `(u, v)` encodes the shift `(u - l, v - l)`.
    pub table: Tensor,
    pub heads: Vec<RelativeHead>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PosEncoding {
    pub kind: PosKind,
    /// `H×W×D_in`, added to the input before the query and key projections.
    pub absolute: Option<Tensor>,
    pub relative: Option<RelativeEncoding>,
}

impl PosEncoding {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn absolute(p: Tensor) -> Self {
        Self {
            kind: PosKind::Absolute,
            absolute: Some(p),
            relative: None,
        }
    }

    pub fn relative(rel: RelativeEncoding) -> Self {
        Self {
            kind: PosKind::Relative,
            absolute: None,
            relative: Some(rel),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaHead {
    /// `D_in×D_k`
    pub wq: Tensor,
    /// `D_in×D_k`
    pub wk: Tensor,
    /// `D_in×D_h`
    pub wv: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaWeights {
    pub heads: Vec<SaHead>,
    /// `(M·D_h)×D_out`; present exactly when there is more than one head.
    pub wo: Option<Tensor>,
    pub pos: PosEncoding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaDims {
    pub d_in: usize,
    pub d_k: usize,
    pub d_h: usize,
    /// Depth of the full operator output (after `wo` when `M > 1`).
    pub d_out: usize,
}

impl SaWeights {
    /// Checks every weight against the input and window. Returns the
    /// derived dimensions.
    pub fn validate(&self, x: &Tensor, k: usize, m: usize) -> Result<SaDims> {
        let (h, w, d_in) = dims3(x)?;
        check_window(k)?;
        if m == 0 || self.heads.len() != m {
            return Err(config(format!(
                "expected {m} heads, weights carry {}",
                self.heads.len()
            )));
        }
        let first = &self.heads[0];
        first.wq.expect_rank(2, "wq")?;
        first.wv.expect_rank(2, "wv")?;
        let d_k = first.wq.shape()[1];
        let d_h = first.wv.shape()[1];
        for (p, head) in self.heads.iter().enumerate() {
            expect_shape(&head.wq, &[d_in, d_k], &format!("wq of head {p}"))?;
            expect_shape(&head.wk, &[d_in, d_k], &format!("wk of head {p}"))?;
            expect_shape(&head.wv, &[d_in, d_h], &format!("wv of head {p}"))?;
        }
        let d_out = match (&self.wo, m) {
            (None, 1) => d_h,
            (Some(_), 1) => return Err(config("output projection given for a single head")),
            (None, _) => return Err(config("multi-head attention needs an output projection")),
            (Some(wo), _) => {
                wo.expect_rank(2, "wo")?;
                if wo.shape()[0] != m * d_h {
                    return Err(config(format!(
                        "wo must have {} rows, got {:?}",
                        m * d_h,
                        wo.shape()
                    )));
                }
                wo.shape()[1]
            }
        };
        match self.pos.kind {
            PosKind::None => {}
            PosKind::Absolute => {
                let p = self
                    .pos
                    .absolute
                    .as_ref()
                    .ok_or_else(|| config("absolute encoding declared without a table"))?;
                expect_shape(p, &[h, w, d_in], "absolute encoding")?;
            }
            PosKind::Relative => {
                let rel = self
                    .pos
                    .relative
                    .as_ref()
                    .ok_or_else(|| config("relative encoding declared without a payload"))?;
                rel.table.expect_rank(3, "relative table")?;
                let d_p = rel.table.shape()[2];
                expect_shape(&rel.table, &[k, k, d_p], "relative table")?;
                if rel.heads.len() != m {
                    return Err(config(format!(
                        "relative encoding has {} head entries, expected {m}",
                        rel.heads.len()
                    )));
                }
                for (p, rh) in rel.heads.iter().enumerate() {
                    expect_shape(&rh.wk_hat, &[d_p, d_k], &format!("wk_hat of head {p}"))?;
                    expect_shape(&rh.u, &[d_k], &format!("u of head {p}"))?;
                    expect_shape(&rh.v, &[d_k], &format!("v of head {p}"))?;
                }
            }
        }
        Ok(SaDims {
            d_in,
            d_k,
            d_h,
            d_out,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pre-softmax scores, one `H×W×K×K` tensor per head.
///
/// Keys at out-of-image positions are zero vectors; with a relative
/// encoding the position terms still apply at those positions.
pub fn attention_scores(x: &Tensor, w: &SaWeights, k: usize, m: usize) -> Result<Vec<Tensor>> {
    w.validate(x, k, m)?;
    let (h, wd, _) = dims3(x)?;
    let l = k / 2;
    let pw = wd + 2 * l;

    let xq = match w.pos.kind {
        PosKind::Absolute => {
            let p = w.pos.absolute.as_ref().expect("validated");
            let sum = x.data().iter().zip(p.data()).map(|(a, b)| a + b).collect();
            Tensor::new(x.shape().to_vec(), sum)?
        }
        _ => x.clone(),
    };

    let mut out = Vec::with_capacity(m);
    for (p, head) in w.heads.iter().enumerate() {
        let q = pointwise(&xq, &head.wq)?;
        let keys = pad_spatial(&pointwise(&xq, &head.wk)?, l)?;
        let d_k = head.wq.shape()[1];
        let (qs, ks) = (q.data(), keys.data());

        // Relative keys per shift: r_δ · wk_hat.
        let rel = match (w.pos.kind, &w.pos.relative) {
            (PosKind::Relative, Some(rel)) => {
                let rh = &rel.heads[p];
                let d_p = rel.table.shape()[2];
                let flat = rel.table.clone().reshape(&[k * k, d_p])?;
                Some((matmul(&flat, &rh.wk_hat)?, rh))
            }
            _ => None,
        };

        let mut scores = vec![0.0; h * wd * k * k];
        for i in 0..h {
            for j in 0..wd {
                let qv = &qs[(i * wd + j) * d_k..][..d_k];
                for u in 0..k {
                    for v in 0..k {
                        let kv = &ks[((i + u) * pw + j + v) * d_k..][..d_k];
                        let mut s = dot(qv, kv);
                        if let Some((rel_keys, rh)) = &rel {
                            let rk = &rel_keys.data()[(u * k + v) * d_k..][..d_k];
                            s += dot(qv, rk) + dot(rh.u.data(), kv) + dot(rh.v.data(), rk);
                        }
                        scores[((i * wd + j) * k + u) * k + v] = s;
                    }
                }
            }
        }
        out.push(Tensor::new(vec![h, wd, k, k], scores)?);
    }
    Ok(out)
}

/// Applies the per-window softmax to every `K×K` patch of a score tensor.
pub fn window_softmax(scores: &Tensor) -> Result<Tensor> {
    scores.expect_rank(4, "score map")?;
    let kk = scores.shape()[2] * scores.shape()[3];
    let data = scores.data().chunks(kk).flat_map(softmax_slice).collect();
    Tensor::new(scores.shape().to_vec(), data)
}

/// Attention probabilities, one `H×W×K×K` tensor per head.
pub fn attention_probabilities(
    x: &Tensor,
    w: &SaWeights,
    k: usize,
    m: usize,
) -> Result<Vec<Tensor>> {
    attention_scores(x, w, k, m)?
        .iter()
        .map(window_softmax)
        .collect()
}

/// Aggregates `values` (`H×W×E`) under per-pixel `K×K` probability patches.
pub(crate) fn aggregate(values: &Tensor, probs: &Tensor, k: usize) -> Result<Tensor> {
    let (h, wd, e) = dims3(values)?;
    let l = k / 2;
    let pw = wd + 2 * l;
    let vp = pad_spatial(values, l)?;
    let (vs, ps) = (vp.data(), probs.data());
    let mut out = vec![0.0; h * wd * e];
    for i in 0..h {
        for j in 0..wd {
            let dst = &mut out[(i * wd + j) * e..][..e];
            let patch = &ps[(i * wd + j) * k * k..][..k * k];
            for u in 0..k {
                for v in 0..k {
                    let pr = patch[u * k + v];
                    let src = &vs[((i + u) * pw + j + v) * e..][..e];
                    for (o, &val) in dst.iter_mut().zip(src) {
                        *o += pr * val;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, wd, e], out)
}

/// Concatenated per-head outputs (`H×W×(M·D_h)`), before the output projection.
pub fn local_self_attention_heads(x: &Tensor, w: &SaWeights, k: usize, m: usize) -> Result<Tensor> {
    let dims = w.validate(x, k, m)?;
    let (h, wd, _) = dims3(x)?;
    let probs = attention_probabilities(x, w, k, m)?;
    let width = m * dims.d_h;
    let mut out = vec![0.0; h * wd * width];
    for (p, (head, prob)) in w.heads.iter().zip(&probs).enumerate() {
        let values = pointwise(x, &head.wv)?;
        let y = aggregate(&values, prob, k)?;
        for (px, chunk) in y.data().chunks(dims.d_h).enumerate() {
            out[px * width + p * dims.d_h..][..dims.d_h].copy_from_slice(chunk);
        }
    }
    Tensor::new(vec![h, wd, width], out)
}

/// Local `K×K` self-attention with `M` heads. With one head the result is
/// the head output itself; with several, heads are concatenated and
/// projected by `wo`.
pub fn local_self_attention(x: &Tensor, w: &SaWeights, k: usize, m: usize) -> Result<Tensor> {
    let heads = local_self_attention_heads(x, w, k, m)?;
    match &w.wo {
        Some(wo) => pointwise(&heads, wo),
        None => Ok(heads),
    }
}

/// Attention with a separate score map per input channel: channel `c` is
/// aggregated under its own softmax and then mixed into the outputs by row
/// `c` of `wv`.
pub fn channelwise_self_attention(
    x: &Tensor,
    per_channel_qk: &[(Tensor, Tensor)],
    wv: &Tensor,
    k: usize,
) -> Result<Tensor> {
    let (h, wd, d_in) = dims3(x)?;
    check_window(k)?;
    if per_channel_qk.len() != d_in {
        return Err(config(format!(
            "expected {d_in} per-channel query/key pairs, got {}",
            per_channel_qk.len()
        )));
    }
    wv.expect_rank(2, "wv")?;
    if wv.shape()[0] != d_in {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: wv.shape().to_vec(),
        });
    }
    let d_out = wv.shape()[1];
    let mut out = vec![0.0; h * wd * d_out];
    for (c, (wq, wk)) in per_channel_qk.iter().enumerate() {
        let single = SaWeights {
            heads: vec![SaHead {
                wq: wq.clone(),
                wk: wk.clone(),
                wv: wv.clone(),
            }],
            wo: None,
            pos: PosEncoding::none(),
        };
        let probs = attention_probabilities(x, &single, k, 1)?.remove(0);
        let row = &wv.data()[c * d_out..][..d_out];
        let values: Vec<f64> = x
            .data()
            .chunks(d_in)
            .flat_map(|px| row.iter().map(move |&w| px[c] * w))
            .collect();
        let y = aggregate(&Tensor::new(vec![h, wd, d_out], values)?, &probs, k)?;
        for (o, v) in out.iter_mut().zip(y.data()) {
            *o += v;
        }
    }
    Tensor::new(vec![h, wd, d_out], out)
}

/// Bottleneck kernel generator: `w1 · relu(gamma ⊙ (w0 · x) + beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvolutionWeights {
    /// `(D/r)×D`
    pub w0: Tensor,
    /// `(K²·G)×(D/r)`; rows are grouped by kernel group, then row-major `K×K`.
    pub w1: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub reduction: usize,
    pub groups: usize,
    pub kernel_size: usize,
}

impl InvolutionWeights {
    pub fn validate(&self, d: usize) -> Result<()> {
        check_window(self.kernel_size)?;
        if self.reduction == 0 || !d.is_multiple_of(self.reduction) {
            return Err(config(format!(
                "channel count {d} is not divisible by reduction {}",
                self.reduction
            )));
        }
        if self.groups == 0 || !d.is_multiple_of(self.groups) {
            return Err(config(format!(
                "channel count {d} is not divisible by group count {}",
                self.groups
            )));
        }
        let mid = d / self.reduction;
        let kk = self.kernel_size * self.kernel_size;
        expect_shape(&self.w0, &[mid, d], "involution w0")?;
        expect_shape(&self.w1, &[kk * self.groups, mid], "involution w1")?;
        expect_shape(&self.gamma, &[mid], "involution gamma")?;
        expect_shape(&self.beta, &[mid], "involution beta")?;
        Ok(())
    }
}

/// Generates the `H×W×K×K×G` involution kernel, one patch per pixel,
/// conditioned on that pixel's feature vector alone.
pub fn involution_kernel(x: &Tensor, w: &InvolutionWeights) -> Result<Tensor> {
    let (h, wd, d) = dims3(x)?;
    w.validate(d)?;
    let k = w.kernel_size;
    let g = w.groups;
    let mid = d / w.reduction;
    let rows = k * k * g;
    let (w0, w1) = (w.w0.data(), w.w1.data());
    let mut out = Vec::with_capacity(h * wd * rows);
    let mut hidden = vec![0.0; mid];
    for px in x.data().chunks(d) {
        for (t, hv) in hidden.iter_mut().enumerate() {
            let z = dot(&w0[t * d..][..d], px);
            *hv = (w.gamma.data()[t] * z + w.beta.data()[t]).max(0.0);
        }
        let phi: Vec<f64> = (0..rows)
            .map(|r| dot(&w1[r * mid..][..mid], &hidden))
            .collect();
        // group-major generator rows, stored as K×K×G
        for uv in 0..k * k {
            for grp in 0..g {
                out.push(phi[grp * k * k + uv]);
            }
        }
    }
    Tensor::new(vec![h, wd, k, k, g], out)
}

/// Channel-group of output channel `m` among `d` channels split into `g` groups.
pub(crate) fn group_of(m: usize, g: usize, d: usize) -> usize {
    m * g / d
}

/// Applies an `H×W×K×K×G` involution kernel: each channel aggregates its own
/// neighborhood with the kernel slice of its group.
pub fn involution_apply(x: &Tensor, kern: &Tensor) -> Result<Tensor> {
    let (h, wd, d) = dims3(x)?;
    kern.expect_rank(5, "involution kernel")?;
    let ks = kern.shape();
    let (k, g) = (ks[2], ks[4]);
    if ks[0] != h || ks[1] != wd || ks[3] != k || k % 2 == 0 || d % g != 0 {
        return Err(Error::ShapeMismatch {
            left: x.shape().to_vec(),
            right: ks.to_vec(),
        });
    }
    let l = k / 2;
    let pw = wd + 2 * l;
    let xp = pad_spatial(x, l)?;
    let (xs, kd) = (xp.data(), kern.data());
    let mut out = vec![0.0; h * wd * d];
    for i in 0..h {
        for j in 0..wd {
            let patch = &kd[(i * wd + j) * k * k * g..][..k * k * g];
            let dst = &mut out[(i * wd + j) * d..][..d];
            for u in 0..k {
                for v in 0..k {
                    let src = &xs[((i + u) * pw + j + v) * d..][..d];
                    let kw = &patch[(u * k + v) * g..][..g];
                    for (m, (o, &xv)) in dst.iter_mut().zip(src).enumerate() {
                        *o += kw[group_of(m, g, d)] * xv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, wd, d], out)
}
