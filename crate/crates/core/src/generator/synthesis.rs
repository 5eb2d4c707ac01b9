//! Modulated convolution stack. Each stage upsamples 2x (bilinear), applies a
//! same-padded convolution, then a per-channel affine `(1 + gain(w)) * a +
//! shift(w)` and a leaky ReLU. A final 1x1 modulated convolution projects to
//! `3 * C` channels, which become the xy, xz and yz feature planes.

use super::triplane::TriPlaneField;
use super::{dense_backward, dense_forward, leaky_relu, leaky_relu_grad, ConvLayer, GeneratorParams, StyleVector};
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
struct StageTape {
    upsampled: Vec<f64>,
    conv: Vec<f64>,
    modulated: Vec<f64>,
    gain: Vec<f64>,
    res: usize,
}

/// Intermediates needed to back-propagate through the synthesis stack.
#[derive(Debug, Clone)]
pub struct SynthesisTape {
    stages: Vec<StageTape>,
    last_activation: Vec<f64>,
    proj: Vec<f64>,
    proj_gain: Vec<f64>,
    style: StyleVector,
}

pub(super) fn forward(params: &GeneratorParams, style: &StyleVector) -> (TriPlaneField, SynthesisTape) {
    let cfg = &params.config;
    let layout = &params.layout;
    let data = &params.data;
    let mut res = cfg.base_res;
    let mut x = data[layout.base..layout.base + cfg.base_channels * res * res].to_vec();
    let mut stages = Vec::with_capacity(layout.stages.len());
    for layer in &layout.stages {
        let upsampled = upsample2x(&x, layer.cin, res);
        res *= 2;
        let mut conv = vec![0.0; layer.cout * res * res];
        conv_forward(&upsampled, res, data, layer, &mut conv);
        let (gain, shift) = modulation(data, layer, style);
        let mut modulated = conv.clone();
        apply_modulation(&mut modulated, res * res, &gain, &shift);
        x = modulated.iter().map(|&v| leaky_relu(v)).collect();
        stages.push(StageTape { upsampled, conv, modulated, gain, res });
    }
    let tp = &layout.to_planes;
    let mut proj = vec![0.0; tp.cout * res * res];
    conv_forward(&x, res, data, tp, &mut proj);
    let (proj_gain, proj_shift) = modulation(data, tp, style);
    let mut chw = proj.clone();
    apply_modulation(&mut chw, res * res, &proj_gain, &proj_shift);

    let planes = chw_to_planes(&chw, cfg.plane_channels, res);
    let decoder = data[layout.decoder_start..].to_vec();
    let field = TriPlaneField::from_parts(res, cfg.plane_channels, planes, decoder, layout.decoder, cfg.omega0, cfg.density_gain)
        .expect("synthesis output matches its own layout");
    (field, SynthesisTape { stages, last_activation: x, proj, proj_gain, style: style.clone() })
}

pub(super) fn backward(params: &GeneratorParams, tape: &SynthesisTape, d_planes: &[f64], grad: &mut [f64], d_style: &mut StyleVector) {
    let cfg = &params.config;
    let layout = &params.layout;
    let data = &params.data;
    let res = cfg.plane_res();
    let d_chw = planes_to_chw(d_planes, cfg.plane_channels, res);

    let tp = &layout.to_planes;
    let mut d_x = vec![0.0; tp.cin * res * res];
    let d_proj = modulation_backward(data, tp, &tape.style, &d_chw, &tape.proj, &tape.proj_gain, res * res, grad, d_style);
    conv_backward(&tape.last_activation, res, data, tp, &d_proj, grad, &mut d_x);

    for (s, layer) in layout.stages.iter().enumerate().rev() {
        let st = &tape.stages[s];
        let mut d_mod = d_x;
        for (g, &m) in d_mod.iter_mut().zip(&st.modulated) {
            *g *= leaky_relu_grad(m);
        }
        let d_conv = modulation_backward(data, layer, &tape.style, &d_mod, &st.conv, &st.gain, st.res * st.res, grad, d_style);
        let mut d_up = vec![0.0; layer.cin * st.res * st.res];
        conv_backward(&st.upsampled, st.res, data, layer, &d_conv, grad, &mut d_up);
        d_x = upsample2x_backward(&d_up, layer.cin, st.res / 2);
    }
    let base = &mut grad[layout.base..layout.base + d_x.len()];
    for (g, d) in base.iter_mut().zip(&d_x) {
        *g += d;
    }
}

fn modulation(data: &[f64], layer: &ConvLayer, style: &StyleVector) -> (Vec<f64>, Vec<f64>) {
    let w = style.layer(layer.style_layer);
    let mut gain = vec![0.0; layer.cout];
    let mut shift = vec![0.0; layer.cout];
    dense_forward(data, &layer.gain, w, &mut gain);
    dense_forward(data, &layer.shift, w, &mut shift);
    (gain, shift)
}

fn apply_modulation(x: &mut [f64], plane: usize, gain: &[f64], shift: &[f64]) {
    for (c, chunk) in x.chunks_exact_mut(plane).enumerate() {
        let (g, s) = (1.0 + gain[c], shift[c]);
        chunk.iter_mut().for_each(|v| *v = g * *v + s);
    }
}

/// Gradient of `(1 + gain) * a + shift` w.r.t. `a`, accumulating the
/// modulation weights' gradients and the style gradient.
#[allow(clippy::too_many_arguments)]
fn modulation_backward(
    data: &[f64],
    layer: &ConvLayer,
    style: &StyleVector,
    d_out: &[f64],
    pre: &[f64],
    gain: &[f64],
    plane: usize,
    grad: &mut [f64],
    d_style: &mut StyleVector,
) -> Vec<f64> {
    let mut d_gain = vec![0.0; layer.cout];
    let mut d_shift = vec![0.0; layer.cout];
    let mut d_pre = vec![0.0; d_out.len()];
    for c in 0..layer.cout {
        let range = c * plane..(c + 1) * plane;
        let g = 1.0 + gain[c];
        let (mut sg, mut ss) = (0.0, 0.0);
        for ((dp, &d), &a) in d_pre[range.clone()].iter_mut().zip(&d_out[range.clone()]).zip(&pre[range]) {
            *dp = d * g;
            sg += d * a;
            ss += d;
        }
        d_gain[c] = sg;
        d_shift[c] = ss;
    }
    let l = layer.style_layer.min(style.layers() - 1);
    let dim = style.dim();
    let mut d_w = vec![0.0; dim];
    dense_backward(data, &layer.gain, style.layer(l), &d_gain, grad, &mut d_w);
    dense_backward(data, &layer.shift, style.layer(l), &d_shift, grad, &mut d_w);
    let row = &mut d_style.data_mut()[l * dim..(l + 1) * dim];
    for (r, g) in row.iter_mut().zip(&d_w) {
        *r += g;
    }
    d_pre
}

/// Bilinear 2x upsampling (half-pixel centers, edge clamped) of a
/// `channels x res x res` tensor.
pub(crate) fn upsample2x(x: &[f64], channels: usize, res: usize) -> Vec<f64> {
    let out_res = 2 * res;
    let mut rows = vec![0.0; channels * res * out_res];
    for c in 0..channels {
        for y in 0..res {
            let src = &x[(c * res + y) * res..(c * res + y + 1) * res];
            let dst = &mut rows[(c * res + y) * out_res..(c * res + y + 1) * out_res];
            for (o, d) in dst.iter_mut().enumerate() {
                let ((i0, w0), (i1, w1)) = taps(o, res);
                *d = w0 * src[i0] + w1 * src[i1];
            }
        }
    }
    let mut out = vec![0.0; channels * out_res * out_res];
    for c in 0..channels {
        for o in 0..out_res {
            let ((i0, w0), (i1, w1)) = taps(o, res);
            let r0 = (c * res + i0) * out_res;
            let r1 = (c * res + i1) * out_res;
            let dst = (c * out_res + o) * out_res;
            for x in 0..out_res {
                out[dst + x] = w0 * rows[r0 + x] + w1 * rows[r1 + x];
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(d_out: &[f64], channels: usize, res: usize) -> Vec<f64> {
    let out_res = 2 * res;
    let mut d_rows = vec![0.0; channels * res * out_res];
    for c in 0..channels {
        for o in 0..out_res {
            let ((i0, w0), (i1, w1)) = taps(o, res);
            let src = (c * out_res + o) * out_res;
            for x in 0..out_res {
                let g = d_out[src + x];
                d_rows[(c * res + i0) * out_res + x] += w0 * g;
                d_rows[(c * res + i1) * out_res + x] += w1 * g;
            }
        }
    }
    let mut d_x = vec![0.0; channels * res * res];
    for c in 0..channels {
        for y in 0..res {
            let src = &d_rows[(c * res + y) * out_res..(c * res + y + 1) * out_res];
            let dst = (c * res + y) * res;
            for (o, &g) in src.iter().enumerate() {
                let ((i0, w0), (i1, w1)) = taps(o, res);
                d_x[dst + i0] += w0 * g;
                d_x[dst + i1] += w1 * g;
            }
        }
    }
    d_x
}

#[inline]
fn taps(o: usize, res: usize) -> ((usize, f64), (usize, f64)) {
    let k = o / 2;
    if o % 2 == 0 {
        (((k.max(1)) - 1, 0.25), (k, 0.75))
    } else {
        ((k, 0.75), ((k + 1).min(res - 1), 0.25))
    }
}

/// `c = a * b + beta * c` for row-major `a: m x k`, `b: k x n`; `a_t` / `b_t`
/// mean the operand is stored transposed.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Patch matrix `[cin * k * k][res * res]` of a zero-padded input.
fn im2col(x: &[f64], cin: usize, res: usize, k: usize) -> Vec<f64> {
    let r = (k / 2) as isize;
    let plane = res * res;
    let mut col = vec![0.0; cin * k * k * plane];
    for i in 0..cin {
        let in_i = &x[i * plane..(i + 1) * plane];
        for ky in 0..k {
            let dy = ky as isize - r;
            let (y0, y1) = valid_range(dy, res);
            for kx in 0..k {
                let dx = kx as isize - r;
                let (x0, x1) = valid_range(dx, res);
                let row = &mut col[((i * k + ky) * k + kx) * plane..][..plane];
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize * res) as isize + x0 as isize + dx;
                    row[y * res + x0..y * res + x1].copy_from_slice(&in_i[src as usize..src as usize + (x1 - x0)]);
                }
            }
        }
    }
    col
}

fn col2im_add(col: &[f64], cin: usize, res: usize, k: usize, d_x: &mut [f64]) {
    let r = (k / 2) as isize;
    let plane = res * res;
    for i in 0..cin {
        for ky in 0..k {
            let dy = ky as isize - r;
            let (y0, y1) = valid_range(dy, res);
            for kx in 0..k {
                let dx = kx as isize - r;
                let (x0, x1) = valid_range(dx, res);
                let row = &col[((i * k + ky) * k + kx) * plane..][..plane];
                for y in y0..y1 {
                    let dst = i * plane + (((y as isize + dy) as usize * res) as isize + x0 as isize + dx) as usize;
                    for (d, s) in d_x[dst..dst + (x1 - x0)].iter_mut().zip(&row[y * res + x0..y * res + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

/// Zero-padded, stride-1 convolution of a `cin x res x res` tensor.
pub(crate) fn conv_forward(x: &[f64], res: usize, data: &[f64], layer: &ConvLayer, out: &mut [f64]) {
    let (cin, k, cout) = (layer.cin, layer.k, layer.cout);
    let plane = res * res;
    for o in 0..cout {
        out[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = data[layer.b + o]);
    }
    let w = &data[layer.w..layer.w + cout * cin * k * k];
    if k == 1 {
        gemm(cout, cin, plane, w, false, x, false, 1.0, out);
    } else {
        let col = im2col(x, cin, res, k);
        gemm(cout, cin * k * k, plane, w, false, &col, false, 1.0, out);
    }
}

/// Accumulates weight/bias gradients into `grad` and input gradients into `d_x`.
pub(crate) fn conv_backward(x: &[f64], res: usize, data: &[f64], layer: &ConvLayer, d_out: &[f64], grad: &mut [f64], d_x: &mut [f64]) {
    let (cin, k, cout) = (layer.cin, layer.k, layer.cout);
    let plane = res * res;
    let q = cin * k * k;
    for o in 0..cout {
        grad[layer.b + o] += d_out[o * plane..(o + 1) * plane].iter().sum::<f64>();
    }
    let w = &data[layer.w..layer.w + cout * q];
    let col = if k == 1 { None } else { Some(im2col(x, cin, res, k)) };
    let col_ref = col.as_deref().unwrap_or(x);
    gemm(cout, plane, q, d_out, false, col_ref, true, 1.0, &mut grad[layer.w..layer.w + cout * q]);
    if k == 1 {
        gemm(cin, cout, plane, w, true, d_out, false, 1.0, d_x);
    } else {
        let mut d_col = vec![0.0; q * plane];
        gemm(q, cout, plane, w, true, d_out, false, 0.0, &mut d_col);
        col2im_add(&d_col, cin, res, k, d_x);
    }
}

#[inline]
fn valid_range(offset: isize, res: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (res as isize - offset).min(res as isize).max(0) as usize;
    (lo.min(hi), hi)
}

/// `[3C][N][N]` channel-major tensor to `[plane][row][col][C]` storage.
fn chw_to_planes(chw: &[f64], c: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; chw.len()];
    for p in 0..3 {
        for ch in 0..c {
            let src = &chw[(p * c + ch) * n * n..(p * c + ch + 1) * n * n];
            for (idx, &v) in src.iter().enumerate() {
                out[(p * n * n + idx) * c + ch] = v;
            }
        }
    }
    out
}

fn planes_to_chw(planes: &[f64], c: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes.len()];
    for p in 0..3 {
        for ch in 0..c {
            let dst = &mut out[(p * c + ch) * n * n..(p * c + ch + 1) * n * n];
            for (idx, d) in dst.iter_mut().enumerate() {
                *d = planes[(p * n * n + idx) * c + ch];
            }
        }
    }
    out
}
