//! Forward and backward kernels. These are plain functions over [`Tensor`]s;
//! [`Graph`](super::Graph) records them on a tape.

use super::{check_finite, shape_err, EngineError, Tensor};

/// Unfolds `[C, H, W]` into a `[C*k*k, H*W]` patch matrix with zero padding
/// of `k/2` on both spatial axes.
fn im2col(x: &[f32], c: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let pad = k / 2;
    let n = h * w;
    let mut cols = vec![0.0f32; c * k * k * n];
    for ci in 0..c {
        let plane = &x[ci * n..(ci + 1) * n];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let dst = &mut cols[row * n..(row + 1) * n];
                // output column w reads input column w + kw - pad
                let shift = kw as isize - pad as isize;
                let (lo, hi) = (shift.max(0) as usize, (w as isize + shift.min(0)) as usize);
                for oh in 0..h {
                    let ih = oh as isize + kh as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = &plane[ih as usize * w..(ih as usize + 1) * w];
                    let out = &mut dst[oh * w..(oh + 1) * w];
                    let olo = (-shift).max(0) as usize;
                    out[olo..olo + (hi - lo)].copy_from_slice(&src[lo..hi]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch gradients back onto `[C, H, W]`.
fn col2im(cols: &[f32], c: usize, h: usize, w: usize, k: usize) -> Vec<f32> {
    let pad = k / 2;
    let n = h * w;
    let mut x = vec![0.0f32; c * n];
    for ci in 0..c {
        let plane = &mut x[ci * n..(ci + 1) * n];
        for kh in 0..k {
            for kw in 0..k {
                let row = (ci * k + kh) * k + kw;
                let src = &cols[row * n..(row + 1) * n];
                let shift = kw as isize - pad as isize;
                let (lo, hi) = (shift.max(0) as usize, (w as isize + shift.min(0)) as usize);
                let olo = (-shift).max(0) as usize;
                for oh in 0..h {
                    let ih = oh as isize + kh as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * w..(ih as usize + 1) * w];
                    let g = &src[oh * w + olo..oh * w + olo + (hi - lo)];
                    for (d, s) in dst[lo..hi].iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

/// `C = alpha * A * B + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every index the kernel touches; C is
    // row-major m x n and does not alias A or B.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn conv_dims(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize, usize), EngineError> {
    let (c_in, h, w) = input.dims3("conv2d_same")?;
    let (c_out, k) = match weight.shape()[..] {
        [co, ci, kh, kw] if ci == c_in && kh == kw && kh % 2 == 1 => (co, kh),
        _ => {
            return Err(shape_err(
                "conv2d_same",
                format!("[C_out, {c_in}, k, k] with odd k"),
                weight.shape(),
            ))
        }
    };
    if bias.shape() != [c_out] {
        return Err(shape_err("conv2d_same", [c_out], bias.shape()));
    }
    Ok((c_in, c_out, h, w, k))
}

/// Square-kernel convolution with zero padding that keeps `H` and `W`.
///
/// `input` is `[C_in, H, W]`, `weight` is `[C_out, C_in, k, k]` (odd `k`),
/// `bias` is `[C_out]`.
pub fn conv2d_same(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, EngineError> {
    let (c_in, c_out, h, w, k) = conv_dims(input, weight, bias)?;
    let n = h * w;
    let kk = c_in * k * k;
    let mut out = vec![0.0f32; c_out * n];
    for (co, row) in out.chunks_exact_mut(n).enumerate() {
        row.fill(bias.data()[co]);
    }
    if k == 1 {
        gemm(c_out, kk, n, weight.data(), (kk, 1), input.data(), (n, 1), 1.0, &mut out);
    } else {
        let cols = im2col(input.data(), c_in, h, w, k);
        gemm(c_out, kk, n, weight.data(), (kk, 1), &cols, (n, 1), 1.0, &mut out);
    }
    let out = Tensor::from_parts(vec![c_out, h, w], out);
    check_finite(&out, "conv2d_same")?;
    Ok(out)
}

/// Gradients of [`conv2d_same`] with respect to input, weight and bias.
pub fn conv2d_same_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), EngineError> {
    let (c_in, c_out, h, w, k) = conv_dims(input, weight, bias)?;
    if grad_out.shape() != [c_out, h, w] {
        return Err(shape_err("conv2d_same_backward", [c_out, h, w], grad_out.shape()));
    }
    let n = h * w;
    let kk = c_in * k * k;
    let dy = grad_out.data();

    let grad_bias: Vec<f32> = dy.chunks_exact(n).map(|r| r.iter().sum()).collect();

    let mut grad_weight = vec![0.0f32; c_out * kk];
    let mut dcols = vec![0.0f32; kk * n];
    let cols_owned;
    let cols: &[f32] = if k == 1 {
        input.data()
    } else {
        cols_owned = im2col(input.data(), c_in, h, w, k);
        &cols_owned
    };
    // dW = dY * cols^T
    gemm(c_out, n, kk, dy, (n, 1), cols, (1, n), 0.0, &mut grad_weight);
    // dcols = W^T * dY
    gemm(kk, c_out, n, weight.data(), (1, kk), dy, (n, 1), 0.0, &mut dcols);
    let grad_input = if k == 1 { dcols } else { col2im(&dcols, c_in, h, w, k) };

    Ok((
        Tensor::from_parts(vec![c_in, h, w], grad_input),
        Tensor::from_parts(weight.shape().to_vec(), grad_weight),
        Tensor::from_parts(vec![c_out], grad_bias),
    ))
}

/// Max over non-overlapping windows of `k` samples along time only.
///
/// Returns the pooled tensor and, per output element, the flat input index
/// of its maximum (earliest index on ties).
pub fn maxpool_time(input: &Tensor, k: usize) -> Result<(Tensor, Vec<u32>), EngineError> {
    let (c, h, w) = input.dims3("maxpool_time")?;
    if k == 0 || w % k != 0 {
        return Err(EngineError::NotDivisible {
            op: "maxpool_time",
            width: w,
            k,
        });
    }
    let wo = w / k;
    let mut out = Vec::with_capacity(c * h * wo);
    let mut arg = Vec::with_capacity(c * h * wo);
    for (r, row) in input.data().chunks_exact(w).enumerate() {
        for (j, win) in row.chunks_exact(k).enumerate() {
            let mut best = 0;
            for i in 1..k {
                if win[i] > win[best] {
                    best = i;
                }
            }
            out.push(win[best]);
            arg.push((r * w + j * k + best) as u32);
        }
    }
    Ok((Tensor::from_parts(vec![c, h, wo], out), arg))
}

pub fn maxpool_time_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut g = Tensor::zeros(input_shape);
    let gd = g.data_mut();
    for (&i, &d) in argmax.iter().zip(grad_out.data()) {
        gd[i as usize] += d;
    }
    g
}

/// Nearest-neighbour repetition of every time sample `k` times.
pub fn upsample_time(input: &Tensor, k: usize) -> Result<Tensor, EngineError> {
    let (c, h, w) = input.dims3("upsample_time")?;
    if k == 0 {
        return Err(EngineError::Invalid {
            op: "upsample_time",
            msg: "k must be >= 1".into(),
        });
    }
    let mut out = Vec::with_capacity(c * h * w * k);
    for &v in input.data() {
        out.extend(std::iter::repeat_n(v, k));
    }
    Ok(Tensor::from_parts(vec![c, h, w * k], out))
}

pub fn upsample_time_backward(grad_out: &Tensor, k: usize) -> Tensor {
    let (c, h, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let data = grad_out.data().chunks_exact(k).map(|g| g.iter().sum()).collect();
    Tensor::from_parts(vec![c, h, w / k], data)
}

/// Affine map `weight * input + bias`; `weight` is `[out, in]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, EngineError> {
    let n_in = input.len();
    let n_out = match weight.shape()[..] {
        [o, i] if i == n_in => o,
        _ => return Err(shape_err("dense", format!("[out, {n_in}]"), weight.shape())),
    };
    if bias.shape() != [n_out] {
        return Err(shape_err("dense", [n_out], bias.shape()));
    }
    let x = input.data();
    let out: Vec<f32> = weight
        .data()
        .chunks_exact(n_in)
        .zip(bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>())
        .collect();
    let out = Tensor::from_vec(out);
    check_finite(&out, "dense")?;
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` has the
/// input's shape.
pub fn dense_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n_in = input.len();
    let x = input.data();
    let dy = grad_out.data();
    let mut gw = vec![0.0f32; weight.len()];
    let mut gx = vec![0.0f32; n_in];
    for ((row, grow), &d) in weight.data().chunks_exact(n_in).zip(gw.chunks_exact_mut(n_in)).zip(dy) {
        if d == 0.0 {
            continue;
        }
        for i in 0..n_in {
            grow[i] = d * x[i];
            gx[i] += d * row[i];
        }
    }
    (
        Tensor::from_parts(input.shape().to_vec(), gx),
        Tensor::from_parts(weight.shape().to_vec(), gw),
        grad_out.clone(),
    )
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let e: Vec<f32> = logits.iter().map(|&l| (l - m).exp()).collect();
    let s: f32 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy `-log softmax(logits)[target]`, computed as
/// `logsumexp(logits) - logits[target]`. Returns the loss and the softmax.
pub fn softmax_xent(logits: &Tensor, target: usize) -> Result<(f32, Vec<f32>), EngineError> {
    let l = logits.data();
    if target >= l.len() {
        return Err(EngineError::TargetOutOfRange { target, classes: l.len() });
    }
    let m = l.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = m + l.iter().map(|&v| (v - m).exp()).sum::<f32>().ln();
    let loss = lse - l[target];
    if !loss.is_finite() {
        return Err(EngineError::NonFinite { op: "softmax_xent" });
    }
    Ok((loss, softmax(l)))
}
