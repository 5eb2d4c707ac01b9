//! Tri-plane feature field and the sinusoidal decoder.
//!
//! A point `(x, y, z)` in `[-1, 1]^3` reads the xy plane at `(x, y)`, the xz
//! plane at `(x, z)` and the yz plane at `(y, z)` with bilinear
//! interpolation; plane nodes sit on a regular grid whose outer nodes lie
//! exactly on the cube faces. The three features are summed and decoded by
//!
//! ```text
//! h     = sin(omega0 * ((1 + g(w)) * (W f + b) + s(w)))
//! sigma = softplus(density_gain * (v . h + b_sigma))
//! color = sigmoid(V h + b_color)
//! ```
//!
//! where `g` and `s` are affine functions of the mean style vector.

use super::{dense_backward, dense_forward, DecoderLayout, StyleVector};
use crate::error::{config, domain, Result};
use crate::math::{sigmoid, sincos, softplus, Vec3};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct TriPlaneField {
    res: usize,
    channels: usize,
    /// `[plane][row][col][channel]`, planes ordered xy, xz, yz.
    planes: Vec<f64>,
    decoder: Vec<f64>,
    layout: DecoderLayout,
    omega0: f64,
    density_gain: f64,
}

/// Density, color and the summed plane feature at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub color: [f64; 3],
    pub feature: Vec<f64>,
}

/// Gradients w.r.t. everything a field evaluation depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    /// Same storage order as the field's planes.
    pub planes: Vec<f64>,
    /// Same layout as the decoder block of the generator parameters.
    pub decoder: Vec<f64>,
    /// Gradient w.r.t. the mean style vector that conditions the decoder.
    pub style_mean: Vec<f64>,
    film_gain_acc: Vec<f64>,
    film_shift_acc: Vec<f64>,
    scratch: Vec<f64>,
}

impl FieldGrad {
    pub fn new(field: &TriPlaneField) -> Self {
        let h = field.hidden();
        FieldGrad {
            planes: vec![0.0; field.planes.len()],
            decoder: vec![0.0; field.decoder.len()],
            style_mean: vec![0.0; field.layout.film_gain.fan_in],
            film_gain_acc: vec![0.0; h],
            film_shift_acc: vec![0.0; h],
            scratch: vec![0.0; 2 * h + field.channels],
        }
    }

    pub fn add(&mut self, other: &FieldGrad) {
        let pairs = [
            (&mut self.planes, &other.planes),
            (&mut self.decoder, &other.decoder),
            (&mut self.style_mean, &other.style_mean),
            (&mut self.film_gain_acc, &other.film_gain_acc),
            (&mut self.film_shift_acc, &other.film_shift_acc),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }
}

impl TriPlaneField {
    pub fn from_parts(
        res: usize,
        channels: usize,
        planes: Vec<f64>,
        decoder: Vec<f64>,
        layout: DecoderLayout,
        omega0: f64,
        density_gain: f64,
    ) -> Result<Self> {
        if res < 2 || channels == 0 {
            return Err(config("tri-plane needs res >= 2 and at least one channel"));
        }
        if planes.len() != 3 * res * res * channels {
            return Err(config(format!("plane buffer has {} values, expected 3x{res}x{res}x{channels}", planes.len())));
        }
        if decoder.len() != layout.len || layout.linear.fan_in != channels {
            return Err(config("decoder parameters do not match the plane channels"));
        }
        Ok(TriPlaneField { res, channels, planes, decoder, layout, omega0, density_gain })
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.layout.linear.fan_out
    }

    pub fn planes(&self) -> &[f64] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [f64] {
        &mut self.planes
    }

    pub fn decoder(&self) -> &[f64] {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut [f64] {
        &mut self.decoder
    }

    pub fn decoder_layout(&self) -> &DecoderLayout {
        &self.layout
    }

    /// Index of node `(col, row)` of plane `p` in the plane buffer.
    #[inline]
    pub fn node_index(&self, p: usize, col: usize, row: usize) -> usize {
        ((p * self.res + row) * self.res + col) * self.channels
    }

    /// Interpolation taps for the 12 nodes touched by `x`: buffer offsets and
    /// bilinear weights, 4 per plane.
    #[inline]
    fn taps(&self, x: Vec3, idx: &mut [usize], wts: &mut [f64]) {
        let n = self.res;
        let cell = |u: f64| -> (usize, f64) {
            let g = (u.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64;
            let i0 = (libm::floor(g) as usize).min(n - 2);
            (i0, g - i0 as f64)
        };
        let (ix, fx) = cell(x.x);
        let (iy, fy) = cell(x.y);
        let (iz, fz) = cell(x.z);
        let coords = [((ix, fx), (iy, fy)), ((ix, fx), (iz, fz)), ((iy, fy), (iz, fz))];
        for (p, ((c0, fc), (r0, fr))) in coords.into_iter().enumerate() {
            let base = p * 4;
            idx[base] = self.node_index(p, c0, r0);
            idx[base + 1] = self.node_index(p, c0 + 1, r0);
            idx[base + 2] = self.node_index(p, c0, r0 + 1);
            idx[base + 3] = self.node_index(p, c0 + 1, r0 + 1);
            wts[base] = (1.0 - fc) * (1.0 - fr);
            wts[base + 1] = fc * (1.0 - fr);
            wts[base + 2] = (1.0 - fc) * fr;
            wts[base + 3] = fc * fr;
        }
    }

    /// Summed bilinear feature at `x` (no domain check; `x` is clamped).
    pub fn feature_into(&self, x: Vec3, out: &mut [f64]) {
        let mut idx = [0usize; 12];
        let mut wts = [0.0; 12];
        self.taps(x, &mut idx, &mut wts);
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..12 {
            let node = &self.planes[idx[k]..idx[k] + self.channels];
            let w = wts[k];
            for (o, v) in out.iter_mut().zip(node) {
                *o += w * v;
            }
        }
    }

    /// Precomputes the style-dependent decoder modulation.
    pub fn condition(&self, style_mean: &[f64]) -> Result<ConditionedField<'_>> {
        if style_mean.len() != self.layout.film_gain.fan_in {
            return Err(config(format!("style has dimension {}, decoder expects {}", style_mean.len(), self.layout.film_gain.fan_in)));
        }
        let h = self.hidden();
        let mut film_gain = vec![0.0; h];
        let mut film_shift = vec![0.0; h];
        dense_forward(&self.decoder, &self.layout.film_gain, style_mean, &mut film_gain);
        dense_forward(&self.decoder, &self.layout.film_shift, style_mean, &mut film_shift);
        Ok(ConditionedField { field: self, style_mean: style_mean.to_vec(), film_gain, film_shift })
    }

    pub fn conditioned(&self, style: &StyleVector) -> Result<ConditionedField<'_>> {
        self.condition(&style.mean())
    }
}

/// Evaluates the field at `x` in `[-1, 1]^3` under `style`.
pub fn query_field(field: &TriPlaneField, x: Vec3, style: &StyleVector) -> Result<FieldSample> {
    field.conditioned(style)?.query(x)
}

/// A field bound to one style: the hot path for rendering.
#[derive(Debug, Clone)]
pub struct ConditionedField<'a> {
    field: &'a TriPlaneField,
    style_mean: Vec<f64>,
    film_gain: Vec<f64>,
    film_shift: Vec<f64>,
}

impl<'a> ConditionedField<'a> {
    pub fn field(&self) -> &'a TriPlaneField {
        self.field
    }

    pub fn query(&self, x: Vec3) -> Result<FieldSample> {
        if !(x.x.abs() <= 1.0 && x.y.abs() <= 1.0 && x.z.abs() <= 1.0) {
            return Err(domain(format!("query point ({}, {}, {}) outside [-1, 1]^3", x.x, x.y, x.z)));
        }
        let mut batch = SampleBatch::new(self.field, 1);
        let (sigma, color) = self.eval(&mut batch, 0, x);
        Ok(FieldSample { sigma, color, feature: batch.feature(0).to_vec() })
    }

    /// Evaluates slot `i` of `batch` at `x`, recording what the backward
    /// pass needs.
    #[inline]
    pub(crate) fn eval(&self, batch: &mut SampleBatch, i: usize, x: Vec3) -> (f64, [f64; 3]) {
        let f = self.field;
        let (c, h) = (f.channels, f.hidden());
        let dl = &f.layout;
        let dec = &f.decoder;
        f.taps(x, &mut batch.idx[i * 12..(i + 1) * 12], &mut batch.wts[i * 12..(i + 1) * 12]);
        let feat = &mut batch.feat[i * c..(i + 1) * c];
        feat.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..12 {
            let off = batch.idx[i * 12 + k];
            let w = batch.wts[i * 12 + k];
            for (o, v) in feat.iter_mut().zip(&f.planes[off..off + c]) {
                *o += w * v;
            }
        }
        let feat = &batch.feat[i * c..(i + 1) * c];
        let pre = &mut batch.pre[i * h..(i + 1) * h];
        dense_forward(dec, &dl.linear, feat, pre);
        let act = &mut batch.act[i * h..(i + 1) * h];
        let cosv = &mut batch.cos[i * h..(i + 1) * h];
        for j in 0..h {
            let z = f.omega0 * ((1.0 + self.film_gain[j]) * pre[j] + self.film_shift[j]);
            (act[j], cosv[j]) = sincos(z);
        }
        let act = &batch.act[i * h..(i + 1) * h];
        let mut s = [0.0];
        dense_forward(dec, &dl.sigma, act, &mut s);
        let sigma_raw = f.density_gain * s[0];
        let mut cr = [0.0; 3];
        dense_forward(dec, &dl.color, act, &mut cr);
        let color = [sigmoid(cr[0]), sigmoid(cr[1]), sigmoid(cr[2])];
        batch.sigma_raw[i] = sigma_raw;
        batch.color[i * 3..i * 3 + 3].copy_from_slice(&color);
        (softplus(sigma_raw), color)
    }

    /// Accumulates the gradient of a loss with `dL/dsigma = d_sigma` and
    /// `dL/dcolor = d_color` at slot `i`.
    #[inline]
    pub(crate) fn backward(&self, batch: &SampleBatch, i: usize, d_sigma: f64, d_color: [f64; 3], grad: &mut FieldGrad) {
        let f = self.field;
        let (c, h) = (f.channels, f.hidden());
        let dl = &f.layout;
        let dec = &f.decoder;
        let act = &batch.act[i * h..(i + 1) * h];
        let ds = d_sigma * sigmoid(batch.sigma_raw[i]) * f.density_gain;
        let col = &batch.color[i * 3..i * 3 + 3];
        let dcr = [d_color[0] * col[0] * (1.0 - col[0]), d_color[1] * col[1] * (1.0 - col[1]), d_color[2] * col[2] * (1.0 - col[2])];

        let mut scratch = core::mem::take(&mut grad.scratch);
        scratch.iter_mut().for_each(|v| *v = 0.0);
        let (d_act, rest) = scratch.split_at_mut(h);
        let (d_pre, d_feat) = rest.split_at_mut(h);
        dense_backward(dec, &dl.sigma, act, &[ds], &mut grad.decoder, d_act);
        dense_backward(dec, &dl.color, act, &dcr, &mut grad.decoder, d_act);

        let pre = &batch.pre[i * h..(i + 1) * h];
        let cosv = &batch.cos[i * h..(i + 1) * h];
        for j in 0..h {
            let dz = d_act[j] * cosv[j] * f.omega0;
            d_pre[j] = dz * (1.0 + self.film_gain[j]);
            grad.film_gain_acc[j] += dz * pre[j];
            grad.film_shift_acc[j] += dz;
        }
        let feat = &batch.feat[i * c..(i + 1) * c];
        dense_backward(dec, &dl.linear, feat, d_pre, &mut grad.decoder, d_feat);
        for k in 0..12 {
            let off = batch.idx[i * 12 + k];
            let w = batch.wts[i * 12 + k];
            for (g, d) in grad.planes[off..off + c].iter_mut().zip(d_feat.iter()) {
                *g += w * d;
            }
        }
        grad.scratch = scratch;
    }

    /// Folds the accumulated modulation gradients into the decoder's
    /// conditioning weights and the style-mean gradient. Call once after all
    /// `backward` calls for this conditioning.
    pub fn finish(&self, grad: &mut FieldGrad) {
        let dl = &self.field.layout;
        let mut d_w = vec![0.0; self.style_mean.len()];
        let gain_acc = core::mem::take(&mut grad.film_gain_acc);
        let shift_acc = core::mem::take(&mut grad.film_shift_acc);
        dense_backward(&self.field.decoder, &dl.film_gain, &self.style_mean, &gain_acc, &mut grad.decoder, &mut d_w);
        dense_backward(&self.field.decoder, &dl.film_shift, &self.style_mean, &shift_acc, &mut grad.decoder, &mut d_w);
        for (g, d) in grad.style_mean.iter_mut().zip(&d_w) {
            *g += d;
        }
        grad.film_gain_acc = vec![0.0; gain_acc.len()];
        grad.film_shift_acc = vec![0.0; shift_acc.len()];
    }
}

/// Scratch storage for a run of field evaluations (one ray's samples).
#[derive(Debug, Clone)]
pub(crate) struct SampleBatch {
    c: usize,
    h: usize,
    idx: Vec<usize>,
    wts: Vec<f64>,
    feat: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    cos: Vec<f64>,
    sigma_raw: Vec<f64>,
    color: Vec<f64>,
}

impl SampleBatch {
    pub(crate) fn new(field: &TriPlaneField, n: usize) -> Self {
        let (c, h) = (field.channels, field.hidden());
        SampleBatch {
            c,
            h,
            idx: vec![0; n * 12],
            wts: vec![0.0; n * 12],
            feat: vec![0.0; n * c],
            pre: vec![0.0; n * h],
            act: vec![0.0; n * h],
            cos: vec![0.0; n * h],
            sigma_raw: vec![0.0; n],
            color: vec![0.0; n * 3],
        }
    }

    pub(crate) fn capacity(&self) -> usize {
        self.sigma_raw.len()
    }

    pub(crate) fn feature(&self, i: usize) -> &[f64] {
        &self.feat[i * self.c..(i + 1) * self.c]
    }

    #[allow(dead_code)]
    pub(crate) fn hidden(&self) -> usize {
        self.h
    }
}
