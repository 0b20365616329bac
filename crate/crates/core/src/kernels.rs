//! Shared forward/backward numeric kernels.
//!
//! Both the plain block evaluators and the gradient-tape ops call into these
//! functions, so eval-mode and training-mode forwards are the same arithmetic
//! in the same order.
//!
//! Conventions:
//! - convolution weights are `out_channels x in_channels x taps`, tap 0 is the
//!   oldest; the tap at index `taps-1` reads the current time step;
//! - dilated convolutions are causal with implicit left zero padding, so the
//!   output has the same time length as the input;
//! - accumulation order is pinned (taps outer, input channels inner, bias
//!   last) because test suites compare alternative implementations bitwise.

use crate::tensor::Tensor3;

/// Dilated causal convolution, length-preserving.
pub(crate) fn conv_dilated_forward(
    x: &Tensor3,
    w: &Tensor3,
    bias: &Tensor3,
    dilation: usize,
) -> Tensor3 {
    let (m, h, d_in) = x.shape();
    let (d_out, w_in, taps) = w.shape();
    debug_assert_eq!(w_in, d_in);
    debug_assert_eq!(bias.len(), d_out);
    let b = bias.data();
    let mut out = Tensor3::zeros(m, h, d_out);
    for i in 0..m {
        for j in 0..h {
            let cell = {
                let base = (i * h + j) * d_out;
                base..base + d_out
            };
            let out_cell = &mut out.data_mut()[cell];
            for (co, slot) in out_cell.iter_mut().enumerate() {
                let mut acc = 0.0;
                for tau in 0..taps {
                    let off = (taps - 1 - tau) * dilation;
                    if off > j {
                        continue; // left zero padding
                    }
                    let xc = x.cell(i, j - off);
                    for (ci, xv) in xc.iter().enumerate() {
                        acc += w.get(co, ci, tau) * xv;
                    }
                }
                *slot = acc + b[co];
            }
        }
    }
    out
}

pub(crate) fn conv_dilated_backward(
    x: &Tensor3,
    w: &Tensor3,
    dilation: usize,
    grad_out: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (m, h, d_in) = x.shape();
    let (d_out, _, taps) = w.shape();
    let mut dx = dx;
    for i in 0..m {
        for j in 0..h {
            let gbase = (i * h + j) * d_out;
            for co in 0..d_out {
                let g = grad_out[gbase + co];
                if g == 0.0 {
                    continue;
                }
                db[co] += g;
                for tau in 0..taps {
                    let off = (taps - 1 - tau) * dilation;
                    if off > j {
                        continue;
                    }
                    let xbase = (i * h + (j - off)) * d_in;
                    let xc = x.cell(i, j - off);
                    for ci in 0..d_in {
                        dw[(co * d_in + ci) * taps + tau] += g * xc[ci];
                    }
                    if let Some(dxb) = dx.as_deref_mut() {
                        for ci in 0..d_in {
                            dxb[xbase + ci] += g * w.get(co, ci, tau);
                        }
                    }
                }
            }
        }
    }
}

/// Undilated valid convolution keeping only the last `keep` output positions.
/// Used as the receptive-field-closing causal convolution: with `keep = 1` it
/// consumes the whole remaining span and emits a single time step.
pub(crate) fn conv_suffix_forward(
    x: &Tensor3,
    w: &Tensor3,
    bias: &Tensor3,
    keep: usize,
) -> Tensor3 {
    let (m, h, d_in) = x.shape();
    let (d_out, w_in, taps) = w.shape();
    debug_assert_eq!(w_in, d_in);
    debug_assert!(h >= taps + keep - 1);
    let b = bias.data();
    let mut out = Tensor3::zeros(m, keep, d_out);
    for i in 0..m {
        for u in 0..keep {
            let end = h - keep + u;
            let base = (i * keep + u) * d_out;
            let out_cell = &mut out.data_mut()[base..base + d_out];
            for (co, slot) in out_cell.iter_mut().enumerate() {
                let mut acc = 0.0;
                for tau in 0..taps {
                    let xc = x.cell(i, end - (taps - 1 - tau));
                    for (ci, xv) in xc.iter().enumerate() {
                        acc += w.get(co, ci, tau) * xv;
                    }
                }
                *slot = acc + b[co];
            }
        }
    }
    out
}

pub(crate) fn conv_suffix_backward(
    x: &Tensor3,
    w: &Tensor3,
    keep: usize,
    grad_out: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (m, h, d_in) = x.shape();
    let (d_out, _, taps) = w.shape();
    let mut dx = dx;
    for i in 0..m {
        for u in 0..keep {
            let end = h - keep + u;
            let gbase = (i * keep + u) * d_out;
            for co in 0..d_out {
                let g = grad_out[gbase + co];
                if g == 0.0 {
                    continue;
                }
                db[co] += g;
                for tau in 0..taps {
                    let j = end - (taps - 1 - tau);
                    let xc = x.cell(i, j);
                    let xbase = (i * h + j) * d_in;
                    for ci in 0..d_in {
                        dw[(co * d_in + ci) * taps + tau] += g * xc[ci];
                    }
                    if let Some(dxb) = dx.as_deref_mut() {
                        for ci in 0..d_in {
                            dxb[xbase + ci] += g * w.get(co, ci, tau);
                        }
                    }
                }
            }
        }
    }
}

/// Shared-kernel cross-asset convolution applied to a stack of `m + 1` rows:
/// the row under consideration on top of the full tensor. This is the single
/// place that fixes the accumulation order for the correlation layer.
pub(crate) fn corr_stack_accumulate(
    top: &[f64],
    x: &Tensor3,
    t: usize,
    w: &Tensor3,
    bias: f64,
) -> f64 {
    let d = x.channels();
    let mut acc = 0.0;
    let w0 = w.cell(0, 0);
    for k in 0..d {
        acc += w0[k] * top[k];
    }
    for j in 0..x.assets() {
        let wj = w.cell(1 + j, 0);
        let xj = x.cell(j, t);
        for k in 0..d {
            acc += wj[k] * xj[k];
        }
    }
    acc + bias
}

/// Correlation layer: one cross-asset output channel per asset row.
pub(crate) fn corr_forward(x: &Tensor3, w: &Tensor3, bias: f64) -> Tensor3 {
    let (m, h, _) = x.shape();
    let mut out = Tensor3::zeros(m, h, 1);
    for i in 0..m {
        for t in 0..h {
            let v = corr_stack_accumulate(x.cell(i, t), x, t, w, bias);
            out.set(i, t, 0, v);
        }
    }
    out
}

pub(crate) fn corr_backward(
    x: &Tensor3,
    w: &Tensor3,
    grad_out: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (m, h, d) = x.shape();
    // grad_out is m x h x 1
    let mut col_sum = vec![0.0; h];
    for i in 0..m {
        for (t, cs) in col_sum.iter_mut().enumerate() {
            *cs += grad_out[i * h + t];
        }
    }
    db[0] += col_sum.iter().sum::<f64>();
    for i in 0..m {
        for t in 0..h {
            let g = grad_out[i * h + t];
            if g == 0.0 {
                continue;
            }
            let xc = x.cell(i, t);
            for k in 0..d {
                dw[k] += g * xc[k]; // row 0 (self weights)
            }
        }
    }
    for j in 0..m {
        for t in 0..h {
            let cs = col_sum[t];
            if cs == 0.0 {
                continue;
            }
            let xc = x.cell(j, t);
            for k in 0..d {
                dw[(1 + j) * d + k] += cs * xc[k];
            }
        }
    }
    if let Some(dxb) = dx {
        let w0 = w.cell(0, 0);
        for j in 0..m {
            let wj = w.cell(1 + j, 0);
            for t in 0..h {
                let g = grad_out[j * h + t];
                let cs = col_sum[t];
                let base = (j * h + t) * d;
                for k in 0..d {
                    dxb[base + k] += g * w0[k] + cs * wj[k];
                }
            }
        }
    }
}

/// Asset-axis shift used by the zero-padded cross-asset convolution. For odd
/// asset counts this is the exact centered kernel; for even counts the window
/// is near-centered (one extra row below).
pub(crate) fn zhang_shift(m: usize) -> usize {
    m.div_ceil(2)
}

/// Zero-padded cross-asset convolution with an m-row kernel.
pub(crate) fn zhang_forward(x: &Tensor3, w: &Tensor3, bias: f64) -> Tensor3 {
    let (m, h, d_in) = x.shape();
    let (_, d_out, w_in) = w.shape();
    debug_assert_eq!(w_in, d_in);
    let shift = zhang_shift(m);
    let mut out = Tensor3::zeros(m, h, d_out);
    for i in 0..m {
        for t in 0..h {
            let base = (i * h + t) * d_out;
            let out_cell = &mut out.data_mut()[base..base + d_out];
            for (ko, slot) in out_cell.iter_mut().enumerate() {
                let mut acc = 0.0;
                for l in 0..m {
                    let src = i as isize + l as isize + 1 - shift as isize;
                    if src < 0 || src >= m as isize {
                        continue; // zero padding over the asset axis
                    }
                    let xc = x.cell(src as usize, t);
                    for (ki, xv) in xc.iter().enumerate() {
                        acc += w.get(l, ko, ki) * xv;
                    }
                }
                *slot = acc + bias;
            }
        }
    }
    out
}

pub(crate) fn zhang_backward(
    x: &Tensor3,
    w: &Tensor3,
    grad_out: &[f64],
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (m, h, d_in) = x.shape();
    let (_, d_out, _) = w.shape();
    let shift = zhang_shift(m);
    let mut dx = dx;
    for i in 0..m {
        for t in 0..h {
            let gbase = (i * h + t) * d_out;
            for ko in 0..d_out {
                let g = grad_out[gbase + ko];
                if g == 0.0 {
                    continue;
                }
                db[0] += g;
                for l in 0..m {
                    let src = i as isize + l as isize + 1 - shift as isize;
                    if src < 0 || src >= m as isize {
                        continue;
                    }
                    let src = src as usize;
                    let xc = x.cell(src, t);
                    let xbase = (src * h + t) * d_in;
                    for ki in 0..d_in {
                        dw[(l * d_out + ko) * d_in + ki] += g * xc[ki];
                    }
                    if let Some(dxb) = dx.as_deref_mut() {
                        for ki in 0..d_in {
                            dxb[xbase + ki] += g * w.get(l, ko, ki);
                        }
                    }
                }
            }
        }
    }
}

/// Softmax over the asset axis, one normalization per time index. The
/// denominator sums the exponentials in sorted order, so the reduction is a
/// function of the value multiset alone and permuted inputs normalize
/// bit-identically.
pub(crate) fn softmax_assets_forward(x: &Tensor3) -> Tensor3 {
    let (m, h, _) = x.shape();
    let mut out = Tensor3::zeros(m, h, 1);
    let mut exps = vec![0.0f64; m];
    for t in 0..h {
        let mut max = f64::NEG_INFINITY;
        for i in 0..m {
            max = max.max(x.get(i, t, 0));
        }
        for i in 0..m {
            let e = (x.get(i, t, 0) - max).exp();
            out.set(i, t, 0, e);
            exps[i] = e;
        }
        exps.sort_by(f64::total_cmp);
        let denom: f64 = exps.iter().sum();
        for i in 0..m {
            let v = out.get(i, t, 0) / denom;
            out.set(i, t, 0, v);
        }
    }
    out
}

pub(crate) fn softmax_assets_backward(y: &Tensor3, grad_out: &[f64], dx: &mut [f64]) {
    let (m, h, _) = y.shape();
    for t in 0..h {
        let mut dot = 0.0;
        for i in 0..m {
            dot += grad_out[i * h + t] * y.get(i, t, 0);
        }
        for i in 0..m {
            dx[i * h + t] += y.get(i, t, 0) * (grad_out[i * h + t] - dot);
        }
    }
}

/// Stack `b`'s channels after `a`'s.
pub(crate) fn concat_channels_forward(a: &Tensor3, b: &Tensor3) -> Tensor3 {
    let (m, h, da) = a.shape();
    let db = b.channels();
    let mut out = Tensor3::zeros(m, h, da + db);
    for i in 0..m {
        for j in 0..h {
            let cell = out.cell_mut(i, j);
            cell[..da].copy_from_slice(a.cell(i, j));
            cell[da..].copy_from_slice(b.cell(i, j));
        }
    }
    out
}
