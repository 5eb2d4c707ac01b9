//! Mapping MLP: latent code to a style vector broadcast over all style layers.
//! Every layer but the last is followed by a leaky ReLU.

use super::{dense_backward, dense_forward, leaky_relu, leaky_relu_grad, GeneratorParams, LatentCode, StyleVector};
use crate::math::sqrt;
use alloc::vec;
use alloc::vec::Vec;

/// Inputs and pre-activations of every mapping layer.
#[derive(Debug, Clone)]
pub struct MappingTape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

pub(super) fn forward(params: &GeneratorParams, z: &LatentCode) -> (StyleVector, MappingTape) {
    let layers = &params.layout.mapping;
    let mut x = z.0.clone();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    for (l, d) in layers.iter().enumerate() {
        let mut y = vec![0.0; d.fan_out];
        dense_forward(&params.data, d, &x, &mut y);
        inputs.push(core::mem::take(&mut x));
        x = if l + 1 < layers.len() { y.iter().map(|&v| leaky_relu(v)).collect() } else { y.clone() };
        pre.push(y);
    }
    let style = StyleVector::broadcast(params.config.style_layers, &x);
    (style, MappingTape { inputs, pre })
}

pub(super) fn backward(params: &GeneratorParams, tape: &MappingTape, d_style: &StyleVector, grad: &mut [f64]) -> Vec<f64> {
    let layers = &params.layout.mapping;
    // The broadcast copies one vector to every layer: sum the layer grads.
    let mut dy = vec![0.0; params.config.style_dim];
    for l in 0..d_style.layers() {
        for (a, b) in dy.iter_mut().zip(d_style.layer(l)) {
            *a += b;
        }
    }
    for l in (0..layers.len()).rev() {
        let d = &layers[l];
        if l + 1 < layers.len() {
            for (g, &p) in dy.iter_mut().zip(&tape.pre[l]) {
                *g *= leaky_relu_grad(p);
            }
        }
        let mut dx = vec![0.0; d.fan_in];
        dense_backward(&params.data, d, &tape.inputs[l], &dy, grad, &mut dx);
        dy = dx;
    }
    dy
}

pub(super) fn lipschitz_bound(params: &GeneratorParams) -> f64 {
    params
        .layout
        .mapping
        .iter()
        .map(|d| sqrt(params.data[d.w..d.w + d.fan_in * d.fan_out].iter().map(|v| v * v).sum::<f64>()))
        .product()
}
