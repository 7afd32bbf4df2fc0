//! Single-layer LSTM over stacked sequences with backpropagation through time.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use super::ops::{add_colsum, affine, mm_acc, sigmoid};
use super::params::{Layout, Slot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LstmSlots {
    pub input: usize,
    pub hidden: usize,
    w_x: Slot,
    w_h: Slot,
    b: Slot,
}

impl LstmSlots {
    pub fn new(layout: &mut Layout, prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            w_x: layout.matrix(format!("{prefix}.w_x"), input, 4 * hidden),
            w_h: layout.matrix(format!("{prefix}.w_h"), hidden, 4 * hidden),
            b: layout.bias(format!("{prefix}.b"), 4 * hidden, hidden),
        }
    }
}

pub(crate) struct LstmOutput {
    /// `BK x H` hidden states for every position.
    pub out: Array2<f64>,
    pub h_last: Array2<f64>,
    pub c_last: Array2<f64>,
    pub cache: Option<LstmCache>,
}

pub(crate) struct LstmCache {
    x: Array2<f64>,
    seq_len: usize,
    /// Gate activations `[i | f | g | o]` per step, `B x 4H`.
    acts: Vec<Array2<f64>>,
    /// `c_0 .. c_K`, each `B x H`.
    cells: Vec<Array2<f64>>,
    /// `h_0 .. h_K`.
    hiddens: Vec<Array2<f64>>,
}

fn step_rows(batch: usize, seq_len: usize, t: usize) -> Vec<usize> {
    (0..batch).map(|b| b * seq_len + t).collect()
}

/// Runs the recurrence from `(h0, c0)` (each `B x H`).
pub(crate) fn forward(
    p: &[f64],
    slots: &LstmSlots,
    x: ArrayView2<f64>,
    seq_len: usize,
    h0: ArrayView2<f64>,
    c0: ArrayView2<f64>,
    keep_cache: bool,
) -> LstmOutput {
    let hdim = slots.hidden;
    let batch = h0.nrows();
    let w_h = slots.w_h.mat(p);
    let xw = affine(x, slots.w_x.mat(p), slots.b.vec(p));
    let mut out = Array2::zeros((batch * seq_len, hdim));
    let mut h = h0.to_owned();
    let mut c = c0.to_owned();
    let mut cache = keep_cache.then(|| LstmCache {
        x: x.to_owned(),
        seq_len,
        acts: Vec::with_capacity(seq_len),
        cells: vec![c.clone()],
        hiddens: vec![h.clone()],
    });
    for t in 0..seq_len {
        let rows = step_rows(batch, seq_len, t);
        let mut gates = xw.select(Axis(0), &rows);
        mm_acc(h.view(), w_h, &mut gates.view_mut());
        gates.slice_mut(s![.., ..2 * hdim]).mapv_inplace(sigmoid);
        gates.slice_mut(s![.., 2 * hdim..3 * hdim]).mapv_inplace(f64::tanh);
        gates.slice_mut(s![.., 3 * hdim..]).mapv_inplace(sigmoid);
        {
            let i = gates.slice(s![.., ..hdim]);
            let f = gates.slice(s![.., hdim..2 * hdim]);
            let g = gates.slice(s![.., 2 * hdim..3 * hdim]);
            let o = gates.slice(s![.., 3 * hdim..]);
            Zip::from(&mut c).and(&f).and(&i).and(&g).for_each(|c, &f, &i, &g| *c = f * *c + i * g);
            Zip::from(&mut h).and(&o).and(&c).for_each(|h, &o, &c| *h = o * c.tanh());
        }
        for (b, &r) in rows.iter().enumerate() {
            out.row_mut(r).assign(&h.row(b));
        }
        if let Some(cache) = cache.as_mut() {
            cache.acts.push(gates);
            cache.cells.push(c.clone());
            cache.hiddens.push(h.clone());
        }
    }
    LstmOutput {
        out,
        h_last: h,
        c_last: c,
        cache,
    }
}

/// Accumulates parameter gradients and returns `(d h0, d c0)`.
pub(crate) fn backward(
    p: &[f64],
    slots: &LstmSlots,
    cache: &LstmCache,
    d_out: ArrayView2<f64>,
    d_h_last: ArrayView2<f64>,
    d_c_last: ArrayView2<f64>,
    grads: &mut [f64],
) -> (Array2<f64>, Array2<f64>) {
    let hdim = slots.hidden;
    let seq_len = cache.seq_len;
    let batch = d_h_last.nrows();
    let w_h = slots.w_h.mat(p);
    let mut d_xw = Array2::<f64>::zeros((batch * seq_len, 4 * hdim));
    let mut dh = d_h_last.to_owned();
    let mut dc = d_c_last.to_owned();
    let mut dg_pre = Array2::<f64>::zeros((batch, 4 * hdim));
    for t in (0..seq_len).rev() {
        let rows = step_rows(batch, seq_len, t);
        for (b, &r) in rows.iter().enumerate() {
            let mut row = dh.row_mut(b);
            row += &d_out.row(r);
        }
        let acts = &cache.acts[t];
        let c_t = &cache.cells[t + 1];
        let c_prev = &cache.cells[t];
        for b in 0..batch {
            for j in 0..hdim {
                let i = acts[[b, j]];
                let f = acts[[b, hdim + j]];
                let g = acts[[b, 2 * hdim + j]];
                let o = acts[[b, 3 * hdim + j]];
                let tc = c_t[[b, j]].tanh();
                let dh_bj = dh[[b, j]];
                let dc_bj = dc[[b, j]] + dh_bj * o * (1.0 - tc * tc);
                dg_pre[[b, j]] = dc_bj * g * i * (1.0 - i);
                dg_pre[[b, hdim + j]] = dc_bj * c_prev[[b, j]] * f * (1.0 - f);
                dg_pre[[b, 2 * hdim + j]] = dc_bj * i * (1.0 - g * g);
                dg_pre[[b, 3 * hdim + j]] = dh_bj * tc * o * (1.0 - o);
                dc[[b, j]] = dc_bj * f;
            }
        }
        mm_acc(cache.hiddens[t].t(), dg_pre.view(), &mut slots.w_h.mat_mut(grads));
        dh = dg_pre.dot(&w_h.t());
        for (b, &r) in rows.iter().enumerate() {
            d_xw.row_mut(r).assign(&dg_pre.row(b));
        }
    }
    mm_acc(cache.x.t(), d_xw.view(), &mut slots.w_x.mat_mut(grads));
    add_colsum(d_xw.view(), slots.b.vec_mut(grads));
    (dh, dc)
}
