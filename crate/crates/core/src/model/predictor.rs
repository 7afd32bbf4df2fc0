//! Dilated-convolution noise predictor with a step embedding, gated residual
//! blocks and a skip-sum output head.

use ndarray::{s, Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::ops::{add_colsum, add_per_seq, affine, col2im, im2col, mm_acc, relu_mask_inplace, sigmoid, silu, silu_grad, sum_per_seq};
use super::params::{Layout, Slot};

/// Width and depth of the noise predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub residual_channels: usize,
    pub residual_blocks: usize,
    /// Dilation of block `r` is `2^(r % dilation_cycle)`.
    pub dilation_cycle: usize,
    pub step_embedding: usize,
    pub step_hidden: usize,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            residual_channels: 64,
            residual_blocks: 6,
            dilation_cycle: 6,
            step_embedding: 64,
            step_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BlockSlots {
    dilation: usize,
    step_w: Slot,
    step_b: Slot,
    conv_w: Slot,
    cond_w: Slot,
    gate_b: Slot,
    out_w: Slot,
    out_b: Slot,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PredictorSlots {
    pub cfg: PredictorConfig,
    pub dim: usize,
    pub cond_dim: usize,
    in_w: Slot,
    in_b: Slot,
    emb_w1: Slot,
    emb_b1: Slot,
    emb_w2: Slot,
    emb_b2: Slot,
    blocks: Vec<BlockSlots>,
    head_w1: Slot,
    head_b1: Slot,
    head_w2: Slot,
    head_b2: Slot,
}

impl PredictorSlots {
    pub fn new(layout: &mut Layout, cfg: PredictorConfig, dim: usize, cond_dim: usize) -> Self {
        let c = cfg.residual_channels;
        let (e, sh) = (cfg.step_embedding, cfg.step_hidden);
        let in_w = layout.matrix("eps.in.w", dim, c);
        let in_b = layout.bias("eps.in.b", c, dim);
        let emb_w1 = layout.matrix("eps.emb.w1", e, sh);
        let emb_b1 = layout.bias("eps.emb.b1", sh, e);
        let emb_w2 = layout.matrix("eps.emb.w2", sh, sh);
        let emb_b2 = layout.bias("eps.emb.b2", sh, sh);
        let blocks = (0..cfg.residual_blocks)
            .map(|r| BlockSlots {
                dilation: 1 << (r % cfg.dilation_cycle.max(1)),
                step_w: layout.matrix(format!("eps.block{r}.step.w"), sh, c),
                step_b: layout.bias(format!("eps.block{r}.step.b"), c, sh),
                conv_w: layout.matrix(format!("eps.block{r}.conv.w"), 3 * c, 2 * c),
                cond_w: layout.matrix(format!("eps.block{r}.cond.w"), cond_dim, 2 * c),
                gate_b: layout.bias(format!("eps.block{r}.gate.b"), 2 * c, 3 * c),
                out_w: layout.matrix(format!("eps.block{r}.out.w"), c, 2 * c),
                out_b: layout.bias(format!("eps.block{r}.out.b"), 2 * c, c),
            })
            .collect();
        let head_w1 = layout.matrix("eps.head.w1", c, c);
        let head_b1 = layout.bias("eps.head.b1", c, c);
        let head_w2 = layout.matrix("eps.head.w2", c, dim);
        let head_b2 = layout.bias("eps.head.b2", dim, c);
        Self {
            cfg,
            dim,
            cond_dim,
            in_w,
            in_b,
            emb_w1,
            emb_b1,
            emb_w2,
            emb_b2,
            blocks,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        }
    }
}

/// Sinusoidal embedding of diffusion step `n`: `[sin(n f_j) | cos(n f_j)]`
/// with `f_j = 10^(-4 j / (E/2 - 1))`.
pub fn step_embedding(n: usize, width: usize) -> Array1<f64> {
    let half = width / 2;
    let mut out = Array1::zeros(width);
    for j in 0..half {
        let f = 10f64.powf(-4.0 * j as f64 / (half.max(2) - 1) as f64);
        out[j] = (n as f64 * f).sin();
        out[half + j] = (n as f64 * f).cos();
    }
    out
}

/// Per-block conditioning projections `con . W_cond`, reusable across steps.
pub(crate) fn project_condition(p: &[f64], slots: &PredictorSlots, con: ArrayView2<f64>) -> Vec<Array2<f64>> {
    slots.blocks.iter().map(|b| con.dot(&b.cond_w.mat(p))).collect()
}

struct BlockCache {
    col: Array2<f64>,
    tanh: Array2<f64>,
    sig: Array2<f64>,
    gated: Array2<f64>,
}

pub(crate) struct PredictorCache {
    x: Array2<f64>,
    con: Array2<f64>,
    seq_len: usize,
    in_pre: Array2<f64>,
    emb: Array2<f64>,
    emb_u1: Array2<f64>,
    emb_u2: Array2<f64>,
    step: Array2<f64>,
    blocks: Vec<BlockCache>,
    skip: Array2<f64>,
    head_pre: Array2<f64>,
}

/// Predicts noise for `B` stacked sequences; `steps[b]` is the diffusion
/// step of sequence `b`. `cond_proj` comes from [`project_condition`] on `con`.
pub(crate) fn forward(
    p: &[f64],
    slots: &PredictorSlots,
    x: ArrayView2<f64>,
    con: ArrayView2<f64>,
    cond_proj: &[Array2<f64>],
    seq_len: usize,
    steps: &[usize],
    keep_cache: bool,
) -> (Array2<f64>, Option<PredictorCache>) {
    let cfg = slots.cfg;
    let c = cfg.residual_channels;
    let batch = steps.len();
    let in_pre = affine(x, slots.in_w.mat(p), slots.in_b.vec(p));
    let mut h = in_pre.mapv(|v| v.max(0.0));

    let mut emb = Array2::zeros((batch, cfg.step_embedding));
    for (b, &n) in steps.iter().enumerate() {
        emb.row_mut(b).assign(&step_embedding(n, cfg.step_embedding));
    }
    let emb_u1 = affine(emb.view(), slots.emb_w1.mat(p), slots.emb_b1.vec(p));
    let emb_a1 = emb_u1.mapv(silu);
    let emb_u2 = affine(emb_a1.view(), slots.emb_w2.mat(p), slots.emb_b2.vec(p));
    let step = emb_u2.mapv(silu);

    let mut skip = Array2::<f64>::zeros((x.nrows(), c));
    let mut caches = Vec::with_capacity(if keep_cache { slots.blocks.len() } else { 0 });
    for (blk, proj) in slots.blocks.iter().zip(cond_proj) {
        let d = affine(step.view(), blk.step_w.mat(p), blk.step_b.vec(p));
        let mut y = h.clone();
        add_per_seq(&mut y, d.view(), seq_len);
        let col = im2col(y.view(), seq_len, blk.dilation);
        let mut z = proj.clone();
        z += &blk.gate_b.vec(p);
        mm_acc(col.view(), blk.conv_w.mat(p), &mut z.view_mut());
        let tanh = z.slice(s![.., ..c]).mapv(f64::tanh);
        let sig = z.slice(s![.., c..]).mapv(sigmoid);
        let gated = &tanh * &sig;
        let o = affine(gated.view(), blk.out_w.mat(p), blk.out_b.vec(p));
        Zip::from(&mut h)
            .and(o.slice(s![.., ..c]))
            .for_each(|h, &r| *h = (*h + r) * std::f64::consts::FRAC_1_SQRT_2);
        skip += &o.slice(s![.., c..]);
        if keep_cache {
            caches.push(BlockCache { col, tanh, sig, gated });
        }
    }
    skip /= (slots.blocks.len().max(1) as f64).sqrt();
    let head_pre = affine(skip.view(), slots.head_w1.mat(p), slots.head_b1.vec(p));
    let q = head_pre.mapv(|v| v.max(0.0));
    let out = affine(q.view(), slots.head_w2.mat(p), slots.head_b2.vec(p));
    let cache = keep_cache.then(|| PredictorCache {
        x: x.to_owned(),
        con: con.to_owned(),
        seq_len,
        in_pre,
        emb,
        emb_u1,
        emb_u2,
        step,
        blocks: caches,
        skip,
        head_pre,
    });
    (out, cache)
}

/// Accumulates parameter gradients and returns the gradient with respect to
/// the conditioning rows.
pub(crate) fn backward(
    p: &[f64],
    slots: &PredictorSlots,
    cache: &PredictorCache,
    d_out: ArrayView2<f64>,
    grads: &mut [f64],
) -> Array2<f64> {
    let c = slots.cfg.residual_channels;
    let seq_len = cache.seq_len;
    let n_blocks = slots.blocks.len().max(1) as f64;

    let q = cache.head_pre.mapv(|v| v.max(0.0));
    mm_acc(q.t(), d_out, &mut slots.head_w2.mat_mut(grads));
    add_colsum(d_out, slots.head_b2.vec_mut(grads));
    let mut dq = d_out.dot(&slots.head_w2.mat(p).t());
    relu_mask_inplace(&mut dq, &cache.head_pre);
    mm_acc(cache.skip.t(), dq.view(), &mut slots.head_w1.mat_mut(grads));
    add_colsum(dq.view(), slots.head_b1.vec_mut(grads));
    let d_skip = dq.dot(&slots.head_w1.mat(p).t()) / n_blocks.sqrt();

    let rows = d_skip.nrows();
    let mut dh = Array2::<f64>::zeros((rows, c));
    let mut d_con = Array2::<f64>::zeros((rows, slots.cond_dim));
    let mut d_step = Array2::<f64>::zeros(cache.step.raw_dim());
    let mut d_o = Array2::<f64>::zeros((rows, 2 * c));
    for (blk, bc) in slots.blocks.iter().zip(&cache.blocks).rev() {
        d_o.slice_mut(s![.., ..c]).assign(&(&dh * std::f64::consts::FRAC_1_SQRT_2));
        d_o.slice_mut(s![.., c..]).assign(&d_skip);
        mm_acc(bc.gated.t(), d_o.view(), &mut blk.out_w.mat_mut(grads));
        add_colsum(d_o.view(), blk.out_b.vec_mut(grads));
        let d_gated = d_o.dot(&blk.out_w.mat(p).t());
        let mut dz = Array2::<f64>::zeros((rows, 2 * c));
        Zip::from(dz.slice_mut(s![.., ..c]))
            .and(&d_gated)
            .and(&bc.tanh)
            .and(&bc.sig)
            .for_each(|d, &g, &t, &s| *d = g * s * (1.0 - t * t));
        Zip::from(dz.slice_mut(s![.., c..]))
            .and(&d_gated)
            .and(&bc.tanh)
            .and(&bc.sig)
            .for_each(|d, &g, &t, &s| *d = g * t * s * (1.0 - s));
        mm_acc(bc.col.t(), dz.view(), &mut blk.conv_w.mat_mut(grads));
        mm_acc(cache.con.t(), dz.view(), &mut blk.cond_w.mat_mut(grads));
        add_colsum(dz.view(), blk.gate_b.vec_mut(grads));
        mm_acc(dz.view(), blk.cond_w.mat(p).t(), &mut d_con.view_mut());
        let d_col = dz.dot(&blk.conv_w.mat(p).t());
        let dy = col2im(d_col.view(), seq_len, blk.dilation);
        let dd = sum_per_seq(dy.view(), seq_len);
        mm_acc(cache.step.t(), dd.view(), &mut blk.step_w.mat_mut(grads));
        add_colsum(dd.view(), blk.step_b.vec_mut(grads));
        mm_acc(dd.view(), blk.step_w.mat(p).t(), &mut d_step.view_mut());
        dh *= std::f64::consts::FRAC_1_SQRT_2;
        dh += &dy;
    }

    relu_mask_inplace(&mut dh, &cache.in_pre);
    mm_acc(cache.x.t(), dh.view(), &mut slots.in_w.mat_mut(grads));
    add_colsum(dh.view(), slots.in_b.vec_mut(grads));

    Zip::from(&mut d_step).and(&cache.emb_u2).for_each(|d, &u| *d *= silu_grad(u));
    let emb_a1 = cache.emb_u1.mapv(silu);
    mm_acc(emb_a1.t(), d_step.view(), &mut slots.emb_w2.mat_mut(grads));
    add_colsum(d_step.view(), slots.emb_b2.vec_mut(grads));
    let mut d_a1 = d_step.dot(&slots.emb_w2.mat(p).t());
    Zip::from(&mut d_a1).and(&cache.emb_u1).for_each(|d, &u| *d *= silu_grad(u));
    mm_acc(cache.emb.t(), d_a1.view(), &mut slots.emb_w1.mat_mut(grads));
    add_colsum(d_a1.view(), slots.emb_b1.vec_mut(grads));
    d_con
}
