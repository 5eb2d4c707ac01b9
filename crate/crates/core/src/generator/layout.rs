//! Offsets of every generator tensor inside the flat parameter array, in the
//! declared (checkpoint) order: mapping, constant base, synthesis stages,
//! plane projection, decoder.

use super::GeneratorConfig;
use crate::math::sqrt;
use crate::rng::Rng;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Dense layer `W: [fan_out][fan_in]`, `b: [fan_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// Convolution `W: [cout][cin][k][k]`, `b: [cout]`, with per-output-channel
/// gain and shift predicted from a style vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub w: usize,
    pub b: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub gain: Dense,
    pub shift: Dense,
    /// Which style layer modulates this convolution.
    pub style_layer: usize,
}

/// Decoder offsets relative to the start of the decoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecoderLayout {
    pub linear: Dense,
    pub film_gain: Dense,
    pub film_shift: Dense,
    pub sigma: Dense,
    pub color: Dense,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub mapping: Vec<Dense>,
    pub base: usize,
    pub stages: Vec<ConvLayer>,
    pub to_planes: ConvLayer,
    pub decoder_start: usize,
    pub decoder: DecoderLayout,
    pub total: usize,
    pub tensors: Vec<TensorInfo>,
}

struct Builder {
    next: usize,
    tensors: Vec<TensorInfo>,
}

impl Builder {
    fn alloc(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.next;
        self.next += shape.iter().product::<usize>();
        self.tensors.push(TensorInfo { name, shape, offset: off });
        off
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        let w = self.alloc(format!("{name}.weight"), vec![fan_out, fan_in]);
        let b = self.alloc(format!("{name}.bias"), vec![fan_out]);
        Dense { w, b, fan_in, fan_out }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, style_dim: usize, style_layer: usize) -> ConvLayer {
        let w = self.alloc(format!("{name}.weight"), vec![cout, cin, k, k]);
        let b = self.alloc(format!("{name}.bias"), vec![cout]);
        let gain = self.dense(&format!("{name}.mod_gain"), style_dim, cout);
        let shift = self.dense(&format!("{name}.mod_shift"), style_dim, cout);
        ConvLayer { w, b, cin, cout, k, gain, shift, style_layer }
    }
}

impl Layout {
    pub fn new(cfg: &GeneratorConfig) -> Self {
        let mut b = Builder { next: 0, tensors: Vec::new() };
        let mapping = (0..cfg.mapping_layers)
            .map(|l| {
                let fan_in = if l == 0 { cfg.latent_dim } else { cfg.style_dim };
                b.dense(&format!("mapping.{l}"), fan_in, cfg.style_dim)
            })
            .collect();
        let base = b.alloc("synthesis.const".into(), vec![cfg.base_channels, cfg.base_res, cfg.base_res]);
        let mut cin = cfg.base_channels;
        let mut stages = Vec::with_capacity(cfg.stage_channels.len());
        for (s, &cout) in cfg.stage_channels.iter().enumerate() {
            let layer = s.min(cfg.style_layers - 1);
            stages.push(b.conv(&format!("synthesis.stage{s}"), cin, cout, cfg.kernel, cfg.style_dim, layer));
            cin = cout;
        }
        let to_planes_layer = cfg.stage_channels.len().min(cfg.style_layers - 1);
        let to_planes = b.conv("synthesis.to_planes", cin, 3 * cfg.plane_channels, 1, cfg.style_dim, to_planes_layer);

        let decoder_start = b.next;
        let linear = b.dense("decoder.linear", cfg.plane_channels, cfg.decoder_hidden);
        let film_gain = b.dense("decoder.film_gain", cfg.style_dim, cfg.decoder_hidden);
        let film_shift = b.dense("decoder.film_shift", cfg.style_dim, cfg.decoder_hidden);
        let sigma = b.dense("decoder.sigma", cfg.decoder_hidden, 1);
        let color = b.dense("decoder.color", cfg.decoder_hidden, 3);
        let rel = |d: Dense| Dense { w: d.w - decoder_start, b: d.b - decoder_start, ..d };
        let decoder = DecoderLayout {
            linear: rel(linear),
            film_gain: rel(film_gain),
            film_shift: rel(film_shift),
            sigma: rel(sigma),
            color: rel(color),
            len: b.next - decoder_start,
        };
        Layout { mapping, base, stages, to_planes, decoder_start, decoder, total: b.next, tensors: b.tensors }
    }

    /// Named parameter groups as `(name, range)`: used to report and probe
    /// gradients per group.
    pub fn groups(&self) -> Vec<(&'static str, core::ops::Range<usize>)> {
        let map_end = self.base;
        let base_end = self.stages.first().map_or(self.to_planes.w, |s| s.w);
        vec![
            ("mapping", 0..map_end),
            ("synthesis", self.base..self.decoder_start),
            ("synthesis.const", self.base..base_end),
            ("decoder", self.decoder_start..self.total),
        ]
    }
}

fn fill_uniform(data: &mut [f64], limit: f64, rng: &mut Rng) {
    data.iter_mut().for_each(|v| *v = rng.range(-limit, limit));
}

fn init_dense(data: &mut [f64], d: &Dense, limit: f64, rng: &mut Rng) {
    fill_uniform(&mut data[d.w..d.w + d.fan_in * d.fan_out], limit, rng);
    data[d.b..d.b + d.fan_out].iter_mut().for_each(|v| *v = 0.0);
}

fn init_conv(data: &mut [f64], c: &ConvLayer, limit: f64, rng: &mut Rng) {
    fill_uniform(&mut data[c.w..c.w + c.cout * c.cin * c.k * c.k], limit, rng);
    data[c.b..c.b + c.cout].iter_mut().for_each(|v| *v = 0.0);
    let mod_limit = 0.25 * sqrt(3.0 / c.gain.fan_in as f64);
    init_dense(data, &c.gain, mod_limit, rng);
    init_dense(data, &c.shift, mod_limit, rng);
}

/// Variance-scaled uniform weights, zero biases, `N(0, 0.02)` constant base
/// and the SIREN first-layer range for the sinusoidal decoder layer.
pub(super) fn initialize(layout: &Layout, cfg: &GeneratorConfig, data: &mut [f64], rng: &mut Rng) {
    for d in &layout.mapping {
        init_dense(data, d, sqrt(6.0 / d.fan_in as f64), rng);
    }
    let base_len = cfg.base_channels * cfg.base_res * cfg.base_res;
    data[layout.base..layout.base + base_len].iter_mut().for_each(|v| *v = rng.normal(0.0, 0.02));
    for s in &layout.stages {
        init_conv(data, s, sqrt(6.0 / (s.cin * s.k * s.k) as f64), rng);
    }
    init_conv(data, &layout.to_planes, sqrt(3.0 / layout.to_planes.cin as f64), rng);

    let dec = &mut data[layout.decoder_start..];
    let d = &layout.decoder;
    let c = cfg.plane_channels as f64;
    fill_uniform(&mut dec[d.linear.w..d.linear.w + d.linear.fan_in * d.linear.fan_out], 1.0 / c, rng);
    fill_uniform(&mut dec[d.linear.b..d.linear.b + d.linear.fan_out], 1.0 / c, rng);
    let film = 0.1 * sqrt(3.0 / cfg.style_dim as f64);
    init_dense(dec, &d.film_gain, film, rng);
    init_dense(dec, &d.film_shift, film, rng);
    let h = cfg.decoder_hidden as f64;
    init_dense(dec, &d.sigma, 0.1 * sqrt(3.0 / h), rng);
    init_dense(dec, &d.color, 0.5 * sqrt(3.0 / h), rng);
}
