//! The latent-conditioned generator: a mapping MLP from latent code to style
//! vectors, a modulated convolution stack that turns a learned constant into
//! three axis-aligned feature planes, and a single sinusoidal decoder layer
//! that maps summed plane features to density and color.
//!
//! All parameters live in one flat `Vec<f64>` described by a [`Layout`];
//! gradients use the same layout, so the optimizer and checkpoint code can
//! treat the generator as a single array.

mod layout;
mod mapping;
mod synthesis;
mod triplane;

pub use layout::{ConvLayer, DecoderLayout, Dense, Layout, TensorInfo};
pub use mapping::MappingTape;
pub use synthesis::SynthesisTape;
pub use triplane::{query_field, ConditionedField, FieldGrad, FieldSample, TriPlaneField};
pub(crate) use triplane::SampleBatch;

use crate::error::{config, Result};
use crate::rng::{Rng, Stream};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

/// Architecture hyper-parameters. The defaults are desk-scale; a 256x256x32
/// plane stack with 512-wide styles is reachable by changing the fields.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub latent_dim: usize,
    pub style_dim: usize,
    pub style_layers: usize,
    pub mapping_layers: usize,
    pub base_res: usize,
    pub base_channels: usize,
    /// Output channels of each upsampling stage; the plane resolution is
    /// `base_res * 2^stage_channels.len()`.
    pub stage_channels: Vec<usize>,
    pub kernel: usize,
    pub plane_channels: usize,
    pub decoder_hidden: usize,
    /// Frequency of the sinusoidal decoder layer.
    pub omega0: f64,
    /// Fixed multiplier applied to the raw density head before softplus.
    pub density_gain: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            latent_dim: 64,
            style_dim: 64,
            style_layers: 8,
            mapping_layers: 8,
            base_res: 8,
            base_channels: 32,
            stage_channels: vec![32, 24, 16],
            kernel: 3,
            plane_channels: 16,
            decoder_hidden: 32,
            omega0: 30.0,
            density_gain: 10.0,
        }
    }
}

impl GeneratorConfig {
    pub fn plane_res(&self) -> usize {
        self.base_res << self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("style_dim", self.style_dim),
            ("style_layers", self.style_layers),
            ("mapping_layers", self.mapping_layers),
            ("base_res", self.base_res),
            ("base_channels", self.base_channels),
            ("plane_channels", self.plane_channels),
            ("decoder_hidden", self.decoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config(format!("{name} must be positive")));
            }
        }
        if self.base_res < 2 {
            return Err(config("base_res must be at least 2"));
        }
        if self.kernel % 2 == 0 {
            return Err(config(format!("kernel size {} must be odd", self.kernel)));
        }
        if self.stage_channels.iter().any(|&c| c == 0) {
            return Err(config("stage channels must be positive"));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0 && self.density_gain.is_finite() && self.density_gain > 0.0) {
            return Err(config("omega0 and density_gain must be positive"));
        }
        Ok(())
    }
}

/// Per-object optimizable latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn zeros(dim: usize) -> Self {
        LatentCode(vec![0.0; dim])
    }

    /// Standard-normal initialization scaled by `std`.
    pub fn random(dim: usize, std: f64, rng: &mut Rng) -> Self {
        LatentCode((0..dim).map(|_| rng.normal(0.0, std)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn lerp(&self, other: &LatentCode, alpha: f64) -> LatentCode {
        LatentCode(self.0.iter().zip(&other.0).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect())
    }
}

/// Per-layer conditioning vectors, `layers x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleVector {
    layers: usize,
    dim: usize,
    data: Vec<f64>,
}

impl StyleVector {
    pub fn new(layers: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if layers == 0 || data.len() != layers * dim {
            return Err(config(format!("style data of length {} does not match {layers}x{dim}", data.len())));
        }
        Ok(StyleVector { layers, dim, data })
    }

    pub fn broadcast(layers: usize, w: &[f64]) -> Self {
        let mut data = Vec::with_capacity(layers * w.len());
        for _ in 0..layers {
            data.extend_from_slice(w);
        }
        StyleVector { layers, dim: w.len(), data }
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Style for layer `l`; layers past the end reuse the last one.
    pub fn layer(&self, l: usize) -> &[f64] {
        let l = l.min(self.layers - 1);
        &self.data[l * self.dim..(l + 1) * self.dim]
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for l in 0..self.layers {
            for (a, b) in m.iter_mut().zip(self.layer(l)) {
                *a += b;
            }
        }
        let inv = 1.0 / self.layers as f64;
        m.iter_mut().for_each(|v| *v *= inv);
        m
    }

    pub fn lerp(&self, other: &StyleVector, alpha: f64) -> StyleVector {
        StyleVector {
            layers: self.layers,
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| (1.0 - alpha) * a + alpha * b).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// All generator weights (mapping, synthesis, decoder) in one flat array.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    config: GeneratorConfig,
    layout: Layout,
    data: Vec<f64>,
}

impl GeneratorParams {
    /// Random initialization from the `Init` stream of `seed`.
    pub fn init(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut data = vec![0.0; layout.total];
        let mut rng = Rng::new(seed, Stream::Init);
        layout::initialize(&layout, &config, &mut data, &mut rng);
        Ok(GeneratorParams { config, layout, data })
    }

    /// Wraps existing values (e.g. from a checkpoint).
    pub fn from_data(cfg: GeneratorConfig, data: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg);
        if data.len() != layout.total {
            return Err(config_len(layout.total, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(config("parameters contain non-finite values"));
        }
        Ok(GeneratorParams { config: cfg, layout, data })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    /// Mapping network: latent code to per-layer styles.
    pub fn map_latent(&self, z: &LatentCode) -> Result<StyleVector> {
        Ok(self.map_latent_with_tape(z)?.0)
    }

    pub fn map_latent_with_tape(&self, z: &LatentCode) -> Result<(StyleVector, MappingTape)> {
        if z.dim() != self.config.latent_dim {
            return Err(config(format!("latent has dimension {}, model expects {}", z.dim(), self.config.latent_dim)));
        }
        Ok(mapping::forward(self, z))
    }

    /// Accumulates mapping-weight gradients into `grad` and returns dL/dz.
    pub fn map_latent_backward(&self, tape: &MappingTape, d_style: &StyleVector, grad: &mut [f64]) -> Vec<f64> {
        mapping::backward(self, tape, d_style, grad)
    }

    /// Product of per-layer Frobenius norms: an upper bound on the mapping
    /// network's Lipschitz constant (leaky ReLU is 1-Lipschitz).
    pub fn mapping_lipschitz_bound(&self) -> f64 {
        mapping::lipschitz_bound(self)
    }

    /// Synthesis network: styles to tri-plane field.
    pub fn synthesize_planes(&self, style: &StyleVector) -> Result<TriPlaneField> {
        Ok(self.synthesize_with_tape(style)?.0)
    }

    pub fn synthesize_with_tape(&self, style: &StyleVector) -> Result<(TriPlaneField, SynthesisTape)> {
        if style.dim() != self.config.style_dim || style.layers() != self.config.style_layers {
            return Err(config(format!(
                "style is {}x{}, model expects {}x{}",
                style.layers(),
                style.dim(),
                self.config.style_layers,
                self.config.style_dim
            )));
        }
        Ok(synthesis::forward(self, style))
    }

    /// Back-propagates plane gradients (tri-plane storage order) through the
    /// synthesis stack. Accumulates weight gradients into `grad` and style
    /// gradients into `d_style`.
    pub fn synthesize_backward(&self, tape: &SynthesisTape, d_planes: &[f64], grad: &mut [f64], d_style: &mut StyleVector) {
        synthesis::backward(self, tape, d_planes, grad, d_style)
    }

    /// Latent to field in one call.
    pub fn generate(&self, z: &LatentCode) -> Result<(StyleVector, TriPlaneField)> {
        let style = self.map_latent(z)?;
        let field = self.synthesize_planes(&style)?;
        Ok((style, field))
    }

    /// Back-propagates a field gradient (planes, decoder, conditioning) all
    /// the way to the latent. Weight gradients accumulate into `grad`.
    pub fn backward_to_latent(
        &self,
        mapping_tape: &MappingTape,
        synthesis_tape: &SynthesisTape,
        field_grad: &FieldGrad,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let dec = self.layout.decoder_start;
        for (g, d) in grad[dec..].iter_mut().zip(&field_grad.decoder) {
            *g += d;
        }
        let mut d_style = StyleVector::new(self.config.style_layers, self.config.style_dim, vec![0.0; self.config.style_layers * self.config.style_dim])
            .expect("style shape from config");
        let inv = 1.0 / self.config.style_layers as f64;
        for l in 0..self.config.style_layers {
            let row = &mut d_style.data[l * self.config.style_dim..(l + 1) * self.config.style_dim];
            for (r, g) in row.iter_mut().zip(&field_grad.style_mean) {
                *r += g * inv;
            }
        }
        self.synthesize_backward(synthesis_tape, &field_grad.planes, grad, &mut d_style);
        self.map_latent_backward(mapping_tape, &d_style, grad)
    }
}

fn config_len(expected: usize, got: usize) -> crate::Error {
    config(format!("parameter array has {got} values, layout expects {expected}"))
}

#[inline]
pub(crate) fn leaky_relu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        0.2 * x
    }
}

#[inline]
pub(crate) fn leaky_relu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.2
    }
}

/// `y = W x + b` for a dense block stored in `params`.
#[inline]
pub(crate) fn dense_forward(params: &[f64], d: &Dense, x: &[f64], y: &mut [f64]) {
    let w = &params[d.w..d.w + d.fan_in * d.fan_out];
    let b = &params[d.b..d.b + d.fan_out];
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot(&w[o * d.fan_in..(o + 1) * d.fan_in], x);
    }
}

/// Dot product with four interleaved partial sums.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Accumulates `dW += dy x^T`, `db += dy` and `dx += W^T dy`.
#[inline]
pub(crate) fn dense_backward(params: &[f64], d: &Dense, x: &[f64], dy: &[f64], grad: &mut [f64], dx: &mut [f64]) {
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        grad[d.b + o] += g;
        let gw = &mut grad[d.w + o * d.fan_in..d.w + (o + 1) * d.fan_in];
        for (gw, xi) in gw.iter_mut().zip(x) {
            *gw += g * xi;
        }
        let row = &params[d.w + o * d.fan_in..d.w + (o + 1) * d.fan_in];
        for (dxi, wi) in dx.iter_mut().zip(row) {
            *dxi += g * wi;
        }
    }
}

#[cfg(test)]
mod tests;
