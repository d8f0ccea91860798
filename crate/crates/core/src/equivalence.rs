//! Differential harness: runs a classic operator and its unified-kernel
//! counterpart on seeded inputs and reports how far apart they land.
//!
//! # Seed schedule
//!
//! Every tensor of a scenario is drawn with [`prng_fill`] from consecutive
//! seeds `seed, seed + 1, …` (wrapping), in this fixed order per family:
//!
//! | family | draw order |
//! |---|---|
//! | `conv` | conv weights, input |
//! | `sa`, `msa` | input; per head `wq, wk, wv`; `wo` (if `M > 1`); absolute table, or relative table then per head `wk_hat, u, v` |
//! | `involution` | input, `w0`, `w1`, `gamma`, `beta` |
//! | `conv_as_msa` | input, `K²` value heads, `wo` |
//! | `relpos_const` | input, `v`, `wk_hat`, relative table, `wv` |
//! | `channelwise` | input, per channel `wq_c, wk_c`, `wv` |
//!
//! Changing this order changes every fixture, so it is frozen.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::classic::{
    channelwise_self_attention, conv2d, involution_apply, involution_kernel, local_self_attention,
    local_self_attention_heads, pointwise, ConvWeights, InvolutionWeights, PosEncoding, PosKind,
    RelativeEncoding, RelativeHead, SaHead, SaWeights,
};
use crate::error::{config, Error, Result};
use crate::io::read_tensor;
use crate::kernel::{
    ev_apply, ev_fn_channelwise_sa, ev_fn_conv, ev_fn_conv_as_msa, ev_fn_involution,
    ev_fn_relpos_constant, ev_fn_sa, relpos_scores, EvolutionKernel, Family,
};
use crate::tensor::{matmul, prng_fill, softmax, Tensor};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Maximum absolute elementwise difference and whether it is within `tol`.
pub fn compare_tensors(a: &Tensor, b: &Tensor, tol: f64) -> Result<(f64, bool)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    Ok((diff, diff <= tol))
}

/// Numerical rank by Gaussian elimination with partial pivoting. A pivot
/// counts when its magnitude exceeds `tol` times the largest entry of the
/// input.
pub fn matrix_rank(m: &Tensor, tol: f64) -> usize {
    assert_eq!(m.rank(), 2, "matrix_rank expects a matrix");
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    let mut a: Vec<Vec<f64>> = m.data().chunks(cols).map(<[f64]>::to_vec).collect();
    let scale = m.data().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let threshold = tol * scale;
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot_row, pivot) =
            (rank..rows)
                .map(|r| (r, a[r][col].abs()))
                .fold(
                    (rank, -1.0),
                    |best, cur| if cur.1 > best.1 { cur } else { best },
                );
        if pivot <= threshold {
            continue;
        }
        a.swap(rank, pivot_row);
        for r in rank + 1..rows {
            let factor = a[r][col] / a[rank][col];
            if factor != 0.0 {
                for c in col..cols {
                    a[r][c] -= factor * a[rank][c];
                }
            }
        }
        rank += 1;
    }
    rank
}

fn one() -> usize {
    1
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

/// One verification scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    pub family: Family,
    pub h: usize,
    pub w: usize,
    pub d_in: usize,
    /// Defaults to `d_in`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_out: Option<usize>,
    pub k: usize,
    /// Attention heads. `conv_as_msa` always uses `K²`.
    #[serde(default = "one")]
    pub m: usize,
    /// Involution kernel groups.
    #[serde(default = "one")]
    pub g: usize,
    /// Involution reduction ratio.
    #[serde(default = "one")]
    pub r: usize,
    /// Query/key width. Defaults to `d_in`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_k: Option<usize>,
    /// Relative encoding width. Defaults to the query/key width.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_p: Option<usize>,
    /// Per-head value width. Defaults to `d_out / m`, or 1 for `conv_as_msa`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_h: Option<usize>,
    #[serde(default)]
    pub pos_kind: PosKind,
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Optional tensor file holding the expected generated kernel.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_kernel: Option<PathBuf>,
}

/// Dimensions after defaults are applied and family constraints checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedDims {
    pub d_out: usize,
    pub m: usize,
    pub d_k: usize,
    pub d_p: usize,
    pub d_h: usize,
}

impl OperatorSpec {
    pub fn new(
        family: Family,
        h: usize,
        w: usize,
        d_in: usize,
        d_out: usize,
        k: usize,
        seed: u64,
    ) -> Self {
        Self {
            family,
            h,
            w,
            d_in,
            d_out: Some(d_out),
            k,
            m: 1,
            g: 1,
            r: 1,
            d_k: None,
            d_p: None,
            d_h: None,
            pos_kind: PosKind::None,
            seed,
            tolerance: DEFAULT_TOLERANCE,
            expected_kernel: None,
        }
    }

    pub fn heads(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.g = g;
        self
    }

    pub fn reduction(mut self, r: usize) -> Self {
        self.r = r;
        self
    }

    pub fn key_dim(mut self, d_k: usize) -> Self {
        self.d_k = Some(d_k);
        self
    }

    pub fn pos_dim(mut self, d_p: usize) -> Self {
        self.d_p = Some(d_p);
        self
    }

    pub fn head_dim(mut self, d_h: usize) -> Self {
        self.d_h = Some(d_h);
        self
    }

    pub fn pos(mut self, kind: PosKind) -> Self {
        self.pos_kind = kind;
        self
    }

    pub fn tol(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self) -> Result<ResolvedDims> {
        let bad = |msg: String| Err(config(msg));
        if [self.h, self.w, self.d_in].contains(&0) {
            return bad(format!("h, w and d_in must be positive: {self:?}"));
        }
        if self.k == 0 || self.k.is_multiple_of(2) {
            return bad(format!("k must be odd, got {}", self.k));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return bad(format!(
                "tolerance must be finite and non-negative, got {}",
                self.tolerance
            ));
        }
        let d_out = self.d_out.unwrap_or(self.d_in);
        let d_k = self.d_k.unwrap_or(self.d_in);
        let d_p = self.d_p.unwrap_or(d_k);
        if d_out == 0 || d_k == 0 || d_p == 0 || self.m == 0 {
            return bad("d_out, d_k, d_p and m must be positive".into());
        }
        let mut dims = ResolvedDims {
            d_out,
            m: self.m,
            d_k,
            d_p,
            d_h: d_out,
        };
        match self.family {
            Family::Conv | Family::RelposConst | Family::Channelwise => {
                if self.m != 1 || self.g != 1 {
                    return bad(format!("{} takes no heads or groups", self.family));
                }
            }
            Family::Sa | Family::Msa => {
                if self.family == Family::Msa && self.m < 2 {
                    return bad("msa needs at least two heads".into());
                }
                if self.g != 1 {
                    return bad("attention takes no groups".into());
                }
                dims.d_h = match self.d_h {
                    Some(0) => return bad("d_h must be positive".into()),
                    Some(d_h) => d_h,
                    None if d_out.is_multiple_of(self.m) => d_out / self.m,
                    None => {
                        return bad(format!(
                            "d_out {d_out} is not divisible by {} heads",
                            self.m
                        ))
                    }
                };
                if self.m == 1 && dims.d_h != d_out {
                    return bad("a single head has d_h == d_out".into());
                }
            }
            Family::Involution => {
                if d_out != self.d_in {
                    return bad("involution keeps the channel count".into());
                }
                if self.r == 0 || !self.d_in.is_multiple_of(self.r) {
                    return bad(format!(
                        "d_in {} is not divisible by r {}",
                        self.d_in, self.r
                    ));
                }
                if self.g == 0 || !self.d_in.is_multiple_of(self.g) {
                    return bad(format!(
                        "d_in {} is not divisible by g {}",
                        self.d_in, self.g
                    ));
                }
            }
            Family::ConvAsMsa => {
                let heads = self.k * self.k;
                if self.m != 1 && self.m != heads {
                    return bad(format!(
                        "conv_as_msa uses k² = {heads} heads, got m = {}",
                        self.m
                    ));
                }
                dims.m = heads;
                dims.d_h = match self.d_h {
                    Some(0) => return bad("d_h must be positive".into()),
                    Some(d_h) => d_h,
                    None => 1,
                };
            }
        }
        if self.pos_kind != PosKind::None && !matches!(self.family, Family::Sa | Family::Msa) {
            return bad(format!("{} has no positional encoding option", self.family));
        }
        Ok(dims)
    }

    /// One-line shape summary used in text reports.
    pub fn describe(&self) -> String {
        let d = self.validate().ok();
        let d_out = d.map_or(self.d_out.unwrap_or(self.d_in), |d| d.d_out);
        let mut s = format!(
            "h={} w={} din={} dout={} k={}",
            self.h, self.w, self.d_in, d_out, self.k
        );
        match self.family {
            Family::Sa | Family::Msa => {
                s += &format!(" m={} pos={:?}", self.m, self.pos_kind).to_lowercase();
            }
            Family::Involution => s += &format!(" g={} r={}", self.g, self.r),
            Family::ConvAsMsa => s += &format!(" dh={}", d.map_or(1, |d| d.d_h)),
            _ => {}
        }
        s + &format!(" seed={}", self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    pub spatially_constant: bool,
    pub max_slice_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub spec: OperatorSpec,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub classic_nanos: u64,
    pub evolution_nanos: u64,
    pub kernel_stats: KernelStats,
    /// Distance between the generated kernel and `spec.expected_kernel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_max_abs_diff: Option<f64>,
}

/// Sequential seed source following the frozen schedule.
struct Draw {
    next: u64,
}

impl Draw {
    fn new(seed: u64) -> Self {
        Self { next: seed }
    }

    fn fill(&mut self, shape: &[usize]) -> Result<Tensor> {
        let t = prng_fill(shape, self.next)?;
        self.next = self.next.wrapping_add(1);
        Ok(t)
    }
}

/// Seed-derived inputs and weights for one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub x: Tensor,
    pub payload: Payload,
}

#[derive(Debug, Clone)]
pub enum Payload {
    Conv(ConvWeights),
    Sa {
        weights: SaWeights,
        heads: usize,
    },
    Involution(InvolutionWeights),
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
    },
}

/// Draws every tensor of a scenario from its seed.
pub fn build_scenario(spec: &OperatorSpec) -> Result<ScenarioData> {
    let dims = spec.validate()?;
    let (h, w, d_in, k) = (spec.h, spec.w, spec.d_in, spec.k);
    let mut draw = Draw::new(spec.seed);
    let data = match spec.family {
        Family::Conv => {
            let weights = ConvWeights::new(draw.fill(&[k, k, d_in, dims.d_out])?)?;
            let x = draw.fill(&[h, w, d_in])?;
            ScenarioData {
                x,
                payload: Payload::Conv(weights),
            }
        }
        Family::Sa | Family::Msa => {
            let x = draw.fill(&[h, w, d_in])?;
            let m = dims.m;
            let heads = (0..m)
                .map(|_| {
                    Ok(SaHead {
                        wq: draw.fill(&[d_in, dims.d_k])?,
                        wk: draw.fill(&[d_in, dims.d_k])?,
                        wv: draw.fill(&[d_in, dims.d_h])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let wo = if m > 1 {
                Some(draw.fill(&[m * dims.d_h, dims.d_out])?)
            } else {
                None
            };
            let pos = match spec.pos_kind {
                PosKind::None => PosEncoding::none(),
                PosKind::Absolute => PosEncoding::absolute(draw.fill(&[h, w, d_in])?),
                PosKind::Relative => {
                    let table = draw.fill(&[k, k, dims.d_p])?;
                    let heads = (0..m)
                        .map(|_| {
                            Ok(RelativeHead {
                                wk_hat: draw.fill(&[dims.d_p, dims.d_k])?,
                                u: draw.fill(&[dims.d_k])?,
                                v: draw.fill(&[dims.d_k])?,
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    PosEncoding::relative(RelativeEncoding { table, heads })
                }
            };
            ScenarioData {
                x,
                payload: Payload::Sa {
                    weights: SaWeights { heads, wo, pos },
                    heads: m,
                },
            }
        }
        Family::Involution => {
            let x = draw.fill(&[h, w, d_in])?;
            let mid = d_in / spec.r;
            let weights = InvolutionWeights {
                w0: draw.fill(&[mid, d_in])?,
                w1: draw.fill(&[k * k * spec.g, mid])?,
                gamma: draw.fill(&[mid])?,
                beta: draw.fill(&[mid])?,
                reduction: spec.r,
                groups: spec.g,
                kernel_size: k,
            };
            ScenarioData {
                x,
                payload: Payload::Involution(weights),
            }
        }
        Family::ConvAsMsa => {
            let x = draw.fill(&[h, w, d_in])?;
            let value_heads = (0..dims.m)
                .map(|_| draw.fill(&[d_in, dims.d_h]))
                .collect::<Result<Vec<_>>>()?;
            let wo = draw.fill(&[dims.m * dims.d_h, dims.d_out])?;
            ScenarioData {
                x,
                payload: Payload::ConvAsMsa { value_heads, wo },
            }
        }
        Family::RelposConst => {
            let x = draw.fill(&[h, w, d_in])?;
            let v = draw.fill(&[dims.d_k])?;
            let wk_hat = draw.fill(&[dims.d_p, dims.d_k])?;
            let table = draw.fill(&[k, k, dims.d_p])?;
            let wv = draw.fill(&[d_in, dims.d_out])?;
            ScenarioData {
                x,
                payload: Payload::RelposConst {
                    v,
                    wk_hat,
                    table,
                    wv,
                },
            }
        }
        Family::Channelwise => {
            let x = draw.fill(&[h, w, d_in])?;
            let per_channel_qk = (0..d_in)
                .map(|_| Ok((draw.fill(&[d_in, dims.d_k])?, draw.fill(&[d_in, dims.d_k])?)))
                .collect::<Result<Vec<_>>>()?;
            let wv = draw.fill(&[d_in, dims.d_out])?;
            ScenarioData {
                x,
                payload: Payload::Channelwise { per_channel_qk, wv },
            }
        }
    };
    Ok(data)
}

impl ScenarioData {
    /// The kernel the unified path applies. Multi-head attention yields the
    /// fused kernel.
    pub fn kernel(&self, k: usize) -> Result<EvolutionKernel> {
        let (h, w) = (self.x.shape()[0], self.x.shape()[1]);
        match &self.payload {
            Payload::Conv(weights) => ev_fn_conv(weights, h, w),
            Payload::Sa { weights, heads } => ev_fn_sa(&self.x, weights, k, *heads, *heads > 1),
            Payload::Involution(weights) => ev_fn_involution(&self.x, weights, k),
            Payload::ConvAsMsa { value_heads, wo } => ev_fn_conv_as_msa(value_heads, wo, h, w),
            Payload::RelposConst {
                v,
                wk_hat,
                table,
                wv,
            } => ev_fn_relpos_constant(v, wk_hat, table, wv, h, w),
            Payload::Channelwise { per_channel_qk, wv } => {
                ev_fn_channelwise_sa(&self.x, per_channel_qk, wv, k)
            }
        }
    }

    /// The classic (reference) output.
    pub fn classic(&self, k: usize) -> Result<Tensor> {
        let x = &self.x;
        match &self.payload {
            Payload::Conv(weights) => conv2d(x, weights),
            Payload::Sa { weights, heads } => local_self_attention(x, weights, k, *heads),
            Payload::Involution(weights) => involution_apply(x, &involution_kernel(x, weights)?),
            Payload::ConvAsMsa { value_heads, wo } => {
                // Head p attends only to window position (p / K, p % K), so the
                // layer is a convolution with slice wv^p · wo^p at that position.
                let d_h = value_heads[0].shape()[1];
                let (d_in, d_out) = (x.shape()[2], wo.shape()[1]);
                let mut data = Vec::with_capacity(k * k * d_in * d_out);
                for (p, wv) in value_heads.iter().enumerate() {
                    let rows = wo.data()[p * d_h * d_out..][..d_h * d_out].to_vec();
                    data.extend(matmul(wv, &Tensor::new(vec![d_h, d_out], rows)?)?.into_data());
                }
                conv2d(
                    x,
                    &ConvWeights::new(Tensor::new(vec![k, k, d_in, d_out], data)?)?,
                )
            }
            Payload::RelposConst {
                v,
                wk_hat,
                table,
                wv,
            } => {
                let s = relpos_scores(v, wk_hat, table)?.reshape(&[k * k])?;
                let probs = softmax(&s)?;
                let (d_in, d_out) = (wv.shape()[0], wv.shape()[1]);
                let w = Tensor::from_fn(&[k, k, d_in, d_out], |ix| {
                    probs.data()[ix[0] * k + ix[1]] * wv.get(&[ix[2], ix[3]])
                })?;
                conv2d(x, &ConvWeights::new(w)?)
            }
            Payload::Channelwise { per_channel_qk, wv } => {
                channelwise_self_attention(x, per_channel_qk, wv, k)
            }
        }
    }
}

fn nanos_since(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

/// Runs both paths of one scenario and reports the largest deviation.
///
/// Multi-head attention checks the fused kernel and the unfused kernel
/// followed by `wo`; the report carries the larger of the two deviations.
pub fn run_scenario(spec: &OperatorSpec) -> Result<EquivalenceReport> {
    let data = build_scenario(spec)?;
    let k = spec.k;

    let start = Instant::now();
    let classic = data.classic(k)?;
    let classic_nanos = nanos_since(start);

    let kernel = data.kernel(k)?;
    let start = Instant::now();
    let unified = ev_apply(&data.x, &kernel)?;
    let evolution_nanos = nanos_since(start);

    let (mut max_abs_diff, _) = compare_tensors(&classic, &unified, spec.tolerance)?;

    if let Payload::Sa { weights, heads } = &data.payload {
        if *heads > 1 {
            let unfused = ev_fn_sa(&data.x, weights, k, *heads, false)?;
            let concat = ev_apply(&data.x, &unfused)?;
            let heads_ref = local_self_attention_heads(&data.x, weights, k, *heads)?;
            let projected = pointwise(&concat, weights.wo.as_ref().expect("validated"))?;
            max_abs_diff = max_abs_diff
                .max(compare_tensors(&heads_ref, &concat, spec.tolerance)?.0)
                .max(compare_tensors(&classic, &projected, spec.tolerance)?.0);
        }
    }

    let max_slice_rank = (spec.family == Family::ConvAsMsa).then(|| slice_rank(&kernel));

    let fixture_max_abs_diff = match &spec.expected_kernel {
        Some(path) => {
            let expected = read_tensor(path)
                .map_err(|e| config(format!("expected kernel {}: {e}", path.display())))?;
            Some(compare_tensors(&expected, kernel.tensor(), spec.tolerance)?.0)
        }
        None => None,
    };
    if let Some(d) = fixture_max_abs_diff {
        max_abs_diff = max_abs_diff.max(d);
    }

    Ok(EquivalenceReport {
        spec: spec.clone(),
        max_abs_diff,
        tolerance: spec.tolerance,
        pass: max_abs_diff <= spec.tolerance,
        classic_nanos,
        evolution_nanos,
        kernel_stats: KernelStats {
            spatially_constant: kernel.is_spatially_constant(),
            max_slice_rank,
        },
        fixture_max_abs_diff,
    })
}

/// Largest numerical rank over every `N×D_out` slice of a kernel.
pub fn slice_rank(kernel: &EvolutionKernel) -> usize {
    let k = kernel.kernel_size();
    let mut best = 0;
    for i in 0..kernel.height() {
        for j in 0..kernel.width() {
            for u in 0..k {
                for v in 0..k {
                    let s = kernel.slice(i, j, u, v).expect("slice within bounds");
                    best = best.max(matrix_rank(&s, DEFAULT_TOLERANCE));
                }
            }
        }
    }
    best
}

/// The desk-scale regression grid: every family over `H, W ≤ 8`, `D ≤ 8`,
/// `K ∈ {1, 3, 5}` and `M ∈ {1, 2, 4}`.
pub fn regression_grid() -> Vec<OperatorSpec> {
    let mut specs = Vec::new();
    let mut seed = 1000u64;
    let mut next_seed = || {
        seed += 100;
        seed
    };
    let windows = [1usize, 3, 5];
    let kinds = [PosKind::None, PosKind::Absolute, PosKind::Relative];

    for &k in &windows {
        for &(h, w) in &[(1, 1), (4, 4), (5, 7), (8, 8)] {
            for &(d_in, d_out) in &[(1, 1), (2, 3), (8, 8)] {
                specs.push(OperatorSpec::new(
                    Family::Conv,
                    h,
                    w,
                    d_in,
                    d_out,
                    k,
                    next_seed(),
                ));
            }
        }
    }
    for &k in &windows {
        for &pos in &kinds {
            for &(h, w, d_in, d_out, d_k) in &[(4, 4, 2, 3, 2), (6, 5, 4, 4, 3), (8, 8, 3, 5, 4)] {
                specs.push(
                    OperatorSpec::new(Family::Sa, h, w, d_in, d_out, k, next_seed())
                        .key_dim(d_k)
                        .pos_dim(3)
                        .pos(pos),
                );
            }
        }
    }
    for &m in &[2usize, 4] {
        for &k in &windows {
            for &pos in &kinds {
                specs.push(
                    OperatorSpec::new(Family::Msa, 5, 6, 4, 8, k, next_seed())
                        .heads(m)
                        .key_dim(3)
                        .pos_dim(2)
                        .pos(pos),
                );
            }
        }
    }
    for &k in &windows {
        for &(d, r, g) in &[
            (4, 1, 1),
            (4, 2, 1),
            (4, 2, 2),
            (8, 4, 2),
            (8, 2, 4),
            (6, 3, 1),
        ] {
            for &(h, w) in &[(4, 4), (8, 8)] {
                specs.push(
                    OperatorSpec::new(Family::Involution, h, w, d, d, k, next_seed())
                        .reduction(r)
                        .groups(g),
                );
            }
        }
    }
    for &k in &windows {
        for &d_h in &[1usize, 2, 3] {
            specs.push(
                OperatorSpec::new(Family::ConvAsMsa, 6, 6, 4, 4, k, next_seed()).head_dim(d_h),
            );
        }
    }
    for &k in &windows {
        for &(d_in, d_out, d_k, d_p) in &[(2, 3, 3, 2), (4, 4, 2, 4)] {
            specs.push(
                OperatorSpec::new(Family::RelposConst, 5, 5, d_in, d_out, k, next_seed())
                    .key_dim(d_k)
                    .pos_dim(d_p),
            );
        }
    }
    for &k in &windows {
        for &d_in in &[1usize, 2, 4] {
            specs.push(
                OperatorSpec::new(Family::Channelwise, 5, 4, d_in, 3, k, next_seed()).key_dim(2),
            );
        }
    }
    specs
}
