//! Small dense kernels shared by the conditioner and the noise predictor.
//!
//! Batched sequences are stacked row-wise: row `b * seq_len + k` holds
//! position `k` of sequence `b`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};

/// `c += a . b`
pub fn mm_acc(a: ArrayView2<f64>, b: ArrayView2<f64>, c: &mut ArrayViewMut2<f64>) {
    general_mat_mul(1.0, &a, &b, 1.0, c);
}

/// `a . w + bias`
pub fn affine(a: ArrayView2<f64>, w: ArrayView2<f64>, bias: ArrayView1<f64>) -> Array2<f64> {
    let mut out = a.dot(&w);
    out += &bias;
    out
}

pub fn add_colsum(d: ArrayView2<f64>, mut bias: ArrayViewMut1<f64>) {
    bias += &d.sum_axis(Axis(0));
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Kernel-3 dilated convolution input: taps at `k - d`, `k`, `k + d`,
/// zero outside each sequence. Output is `BK x 3C`.
pub fn im2col(y: ArrayView2<f64>, seq_len: usize, dilation: usize) -> Array2<f64> {
    let (rows, c) = y.dim();
    let mut col = Array2::zeros((rows, 3 * c));
    for b in 0..rows / seq_len {
        let base = b * seq_len;
        for k in 0..seq_len {
            let mut dst = col.row_mut(base + k);
            for tap in 0..3 {
                let src = k as isize + (tap as isize - 1) * dilation as isize;
                if (0..seq_len as isize).contains(&src) {
                    dst.slice_mut(ndarray::s![tap * c..(tap + 1) * c])
                        .assign(&y.row(base + src as usize));
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`].
pub fn col2im(dcol: ArrayView2<f64>, seq_len: usize, dilation: usize) -> Array2<f64> {
    let rows = dcol.nrows();
    let c = dcol.ncols() / 3;
    let mut dy = Array2::zeros((rows, c));
    for b in 0..rows / seq_len {
        let base = b * seq_len;
        for k in 0..seq_len {
            for tap in 0..3 {
                let src = k as isize + (tap as isize - 1) * dilation as isize;
                if (0..seq_len as isize).contains(&src) {
                    let mut dst = dy.row_mut(base + src as usize);
                    dst += &dcol.row(base + k).slice(ndarray::s![tap * c..(tap + 1) * c]);
                }
            }
        }
    }
    dy
}

/// Adds per-sequence rows `add` (`B x C`) to every position of `x` (`BK x C`).
pub fn add_per_seq(x: &mut Array2<f64>, add: ArrayView2<f64>, seq_len: usize) {
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        row += &add.row(i / seq_len);
    }
}

/// Sums `BK x C` rows per sequence into `B x C`.
pub fn sum_per_seq(x: ArrayView2<f64>, seq_len: usize) -> Array2<f64> {
    let batch = x.nrows() / seq_len;
    let mut out = Array2::zeros((batch, x.ncols()));
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut dst = out.row_mut(i / seq_len);
        dst += &row;
    }
    out
}

pub fn relu_mask_inplace(grad: &mut Array2<f64>, pre: &Array2<f64>) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
}
