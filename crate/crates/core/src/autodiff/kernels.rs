//! Forward and backward kernels for the graph primitives.
//!
//! Everything here is a pure function of its arguments. The graph in
//! [`super::graph`] records which kernel produced a node and replays the
//! matching backward kernel.

use crate::error::{invalid_shape, shape_mismatch, Result};
use crate::tensor::Tensor;

/// Row-major GEMM, `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`.
/// `a_t`/`b_t` say the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover m*k, k*n and m*n elements, which is exactly the
    // extent addressed by these dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }
}

fn spatial_out(op: &'static str, extent: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if extent + 2 * pad < k {
        return Err(invalid_shape(
            op,
            format!("kernel extent {k} exceeds padded input extent {}", extent + 2 * pad),
        ));
    }
    Ok((extent + 2 * pad - k) / stride + 1)
}

/// Validates a convolution; `depthwise` selects the `[C, 1, kh, kw]` kernel layout.
pub fn conv_geometry(
    op: &'static str,
    input: &[usize],
    kernel: &[usize],
    stride: usize,
    pad: usize,
    depthwise: bool,
) -> Result<ConvGeometry> {
    let (&[n, cin, h, w], &[cout, kcin, kh, kw]) = (input, kernel) else {
        return Err(shape_mismatch(op, input, kernel));
    };
    if stride == 0 {
        return Err(invalid_shape(op, "stride must be positive"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(invalid_shape(op, format!("kernel extents must be odd, got {kh}x{kw}")));
    }
    let channels_ok = if depthwise {
        kcin == 1 && cout == cin
    } else {
        kcin == cin
    };
    if !channels_ok {
        return Err(shape_mismatch(op, input, kernel));
    }
    let ho = spatial_out(op, h, kh, stride, pad)?;
    let wo = spatial_out(op, w, kw, stride, pad)?;
    Ok(ConvGeometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    })
}

fn im2col(x: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in seg.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut dxc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation. Output extent is `floor((H + 2p - k) / stride) + 1`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geometry("conv2d", input.shape(), kernel.shape(), stride, pad, false)?;
    let in_sample = g.cin * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let mut out = vec![0.0; g.n * g.cout * out_plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; g.patch_len() * out_plane]
    };
    for b in 0..g.n {
        let x = &input.data()[b * in_sample..(b + 1) * in_sample];
        let y = &mut out[b * g.cout * out_plane..(b + 1) * g.cout * out_plane];
        let patches: &[f64] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        gemm(g.cout, g.patch_len(), out_plane, kernel.data(), false, patches, false, 0.0, y);
    }
    Tensor::new(vec![g.n, g.cout, g.ho, g.wo], out)
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let g = conv_geometry("conv2d", input.shape(), kernel.shape(), stride, pad, false)?;
    let in_sample = g.cin * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let out_sample = g.cout * out_plane;
    let patch = g.patch_len();
    let mut dx = need_input.then(|| vec![0.0; input.len()]);
    let mut dk = need_kernel.then(|| vec![0.0; kernel.len()]);
    let mut cols = vec![0.0; if g.is_pointwise() { 0 } else { patch * out_plane }];
    let mut dcols = vec![0.0; if need_input && !g.is_pointwise() { patch * out_plane } else { 0 }];
    for b in 0..g.n {
        let dy = &grad_out.data()[b * out_sample..(b + 1) * out_sample];
        let x = &input.data()[b * in_sample..(b + 1) * in_sample];
        if let Some(dk) = dk.as_mut() {
            let patches: &[f64] = if g.is_pointwise() {
                x
            } else {
                im2col(x, &g, &mut cols);
                &cols
            };
            gemm(g.cout, out_plane, patch, dy, false, patches, true, 1.0, dk);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_sample..(b + 1) * in_sample];
            if g.is_pointwise() {
                gemm(patch, g.cout, out_plane, kernel.data(), true, dy, false, 0.0, dxb);
            } else {
                gemm(patch, g.cout, out_plane, kernel.data(), true, dy, false, 0.0, &mut dcols);
                col2im(&dcols, &g, dxb);
            }
        }
    }
    Ok((
        dx.map(|d| Tensor::new(input.shape().to_vec(), d)).transpose()?,
        dk.map(|d| Tensor::new(kernel.shape().to_vec(), d)).transpose()?,
    ))
}

/// Per-channel cross-correlation; kernel is `[C, 1, kh, kw]`.
pub fn depthwise_conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geometry("depthwise_conv2d", input.shape(), kernel.shape(), stride, pad, true)?;
    let mut out = vec![0.0; g.n * g.cin * g.ho * g.wo];
    for b in 0..g.n {
        for c in 0..g.cin {
            let x = &input.data()[(b * g.cin + c) * g.h * g.w..][..g.h * g.w];
            let k = &kernel.data()[c * g.kh * g.kw..][..g.kh * g.kw];
            let y = &mut out[(b * g.cin + c) * g.ho * g.wo..][..g.ho * g.wo];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let mut acc = 0.0;
                    for ki in 0..g.kh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kj in 0..g.kw {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                acc += k[ki * g.kw + kj] * x[iy as usize * g.w + ix as usize];
                            }
                        }
                    }
                    y[oy * g.wo + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![g.n, g.cin, g.ho, g.wo], out)
}

pub fn depthwise_conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let g = conv_geometry("depthwise_conv2d", input.shape(), kernel.shape(), stride, pad, true)?;
    let mut dx = vec![0.0; input.len()];
    let mut dk = vec![0.0; kernel.len()];
    for b in 0..g.n {
        for c in 0..g.cin {
            let off_in = (b * g.cin + c) * g.h * g.w;
            let x = &input.data()[off_in..][..g.h * g.w];
            let dxc = &mut dx[off_in..][..g.h * g.w];
            let k = &kernel.data()[c * g.kh * g.kw..][..g.kh * g.kw];
            let dkc = &mut dk[c * g.kh * g.kw..][..g.kh * g.kw];
            let dy = &grad_out.data()[(b * g.cin + c) * g.ho * g.wo..][..g.ho * g.wo];
            for oy in 0..g.ho {
                for ox in 0..g.wo {
                    let d = dy[oy * g.wo + ox];
                    for ki in 0..g.kh {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        for kj in 0..g.kw {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                let xi = iy as usize * g.w + ix as usize;
                                dkc[ki * g.kw + kj] += d * x[xi];
                                dxc[xi] += d * k[ki * g.kw + kj];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(kernel.shape().to_vec(), dk)?,
    ))
}

/// 2×2 max pooling with stride 2. Also returns, per output cell, the flat
/// input index of the winning element (first maximum in row-major order).
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<u32>)> {
    let [n, c, h, w] = input.dims4("maxpool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid_shape(
            "maxpool2x2",
            format!("spatial extent {h}x{w} must be even"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let x = input.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, ho, wo], out)?, arg))
}

pub fn maxpool2x2_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Result<Tensor> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i as usize] += g;
    }
    Ok(dx)
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2x(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4("upsample2x_nearest")?;
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * c * ho * wo];
    for p in 0..n * c {
        let x = &input.data()[p * h * w..][..h * w];
        let y = &mut out[p * ho * wo..][..ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                y[oy * wo + ox] = x[(oy / 2) * w + ox / 2];
            }
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

pub fn upsample2x_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let planes = input_shape[0] * input_shape[1];
    let mut dx = vec![0.0; planes * h * w];
    let g = grad_out.data();
    for p in 0..planes {
        let gy = &g[p * 4 * h * w..][..4 * h * w];
        let d = &mut dx[p * h * w..][..h * w];
        for oy in 0..2 * h {
            for ox in 0..2 * w {
                d[(oy / 2) * w + ox / 2] += gy[oy * 2 * w + ox];
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// Softmax over consecutive rows of `row_len` elements, max-subtracted.
pub fn softmax_rows(input: &Tensor, row_len: usize) -> Result<Tensor> {
    if row_len == 0 || !input.len().is_multiple_of(row_len) {
        return Err(invalid_shape(
            "softmax",
            format!("row length {row_len} does not divide {:?}", input.shape()),
        ));
    }
    let mut out = input.data().to_vec();
    for row in out.chunks_exact_mut(row_len) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        let inv = 1.0 / s;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
    Tensor::new(input.shape().to_vec(), out)
}

pub fn softmax_rows_backward(output: &Tensor, grad_out: &Tensor, row_len: usize) -> Result<Tensor> {
    let mut dx = vec![0.0; output.len()];
    for ((y, g), d) in output
        .data()
        .chunks_exact(row_len)
        .zip(grad_out.data().chunks_exact(row_len))
        .zip(dx.chunks_exact_mut(row_len))
    {
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for i in 0..row_len {
            d[i] = y[i] * (g[i] - dot);
        }
    }
    Tensor::new(output.shape().to_vec(), dx)
}

/// Concatenates rank-4 tensors along the channel axis.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| invalid_shape("concat_channels", "no inputs"))?;
    let [n, _, h, w] = first.dims4("concat_channels")?;
    let mut c_total = 0;
    for t in inputs {
        let [tn, tc, th, tw] = t.dims4("concat_channels")?;
        if (tn, th, tw) != (n, h, w) {
            return Err(shape_mismatch("concat_channels", first.shape(), t.shape()));
        }
        c_total += tc;
    }
    let mut out = Vec::with_capacity(n * c_total * h * w);
    for b in 0..n {
        for t in inputs {
            let per = t.shape()[1] * h * w;
            out.extend_from_slice(&t.data()[b * per..(b + 1) * per]);
        }
    }
    Tensor::new(vec![n, c_total, h, w], out)
}

/// Splits a channel-concatenated gradient back into per-input slices.
pub fn concat_channels_backward(shapes: &[Vec<usize>], grad_out: &Tensor) -> Result<Vec<Tensor>> {
    let [n, c_total, h, w] = grad_out.dims4("concat_channels")?;
    let mut parts: Vec<Vec<f64>> = shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    let g = grad_out.data();
    for b in 0..n {
        let mut off = b * c_total * h * w;
        for (s, p) in shapes.iter().zip(parts.iter_mut()) {
            let per = s[1] * h * w;
            p.extend_from_slice(&g[off..off + per]);
            off += per;
        }
    }
    shapes
        .iter()
        .zip(parts)
        .map(|(s, p)| Tensor::new(s.clone(), p))
        .collect()
}

/// Shapes of a (possibly batched) matrix product: `(batch, m, k, n)`.
pub fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match (a, b) {
        (&[m, k], &[k2, n]) if k == k2 => Ok((1, m, k, n)),
        (&[ba, m, k], &[bb, k2, n]) if ba == bb && k == k2 => Ok((ba, m, k, n)),
        _ => Err(shape_mismatch("matmul", a, b)),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (batch, m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut out = vec![0.0; batch * m * n];
    for i in 0..batch {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..][..m * k],
            false,
            &b.data()[i * k * n..][..k * n],
            false,
            0.0,
            &mut out[i * m * n..][..m * n],
        );
    }
    let shape = if a.rank() == 2 { vec![m, n] } else { vec![batch, m, n] };
    Tensor::new(shape, out)
}

pub fn matmul_backward(a: &Tensor, b: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (batch, m, k, n) = matmul_dims(a.shape(), b.shape())?;
    let mut da = vec![0.0; a.len()];
    let mut db = vec![0.0; b.len()];
    for i in 0..batch {
        let g = &grad_out.data()[i * m * n..][..m * n];
        gemm(m, n, k, g, false, &b.data()[i * k * n..][..k * n], true, 0.0, &mut da[i * m * k..][..m * k]);
        gemm(k, m, n, &a.data()[i * m * k..][..m * k], true, g, false, 0.0, &mut db[i * k * n..][..k * n]);
    }
    Ok((
        Tensor::new(a.shape().to_vec(), da)?,
        Tensor::new(b.shape().to_vec(), db)?,
    ))
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
pub fn transpose_last2(a: &Tensor) -> Result<Tensor> {
    let (batch, r, c) = match a.shape() {
        &[r, c] => (1, r, c),
        &[b, r, c] => (b, r, c),
        s => return Err(invalid_shape("transpose", format!("expected rank 2 or 3, got {s:?}"))),
    };
    let mut out = vec![0.0; a.len()];
    for b in 0..batch {
        let src = &a.data()[b * r * c..][..r * c];
        let dst = &mut out[b * r * c..][..r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    let mut shape = a.shape().to_vec();
    let k = shape.len();
    shape.swap(k - 1, k - 2);
    Tensor::new(shape, out)
}

/// Per-channel statistics over N, H, W of a rank-4 tensor (biased variance).
pub fn channel_moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let [n, c, h, w] = x.dims4("batchnorm")?;
    let plane = h * w;
    let m = (n * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for b in 0..n {
            s += x.data()[(b * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for b in 0..n {
            v += x.data()[(b * c + ch) * plane..][..plane]
                .iter()
                .map(|x| (x - mu) * (x - mu))
                .sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    Ok((mean, var))
}

/// `y = scale · (x − mean) · inv_std + shift`, per channel of a rank-4 tensor.
pub fn channel_affine(
    x: &Tensor,
    scale: &Tensor,
    shift: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
) -> Result<Tensor> {
    let [n, c, h, w] = x.dims4("channel_affine")?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(shape_mismatch("channel_affine", x.shape(), scale.shape()));
    }
    let plane = h * w;
    let mut out = vec![0.0; x.len()];
    for b in 0..n {
        for ch in 0..c {
            let a = scale.data()[ch] * inv_std[ch];
            let off = shift.data()[ch] - a * mean[ch];
            let base = (b * c + ch) * plane;
            for (o, v) in out[base..base + plane].iter_mut().zip(&x.data()[base..base + plane]) {
                *o = a * v + off;
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}
