//! Volume rendering of a conditioned tri-plane field inside an object box.
//!
//! Rays are clipped to the box, split into `samples_per_ray` equal bins and
//! alpha-composited with piecewise-constant density per bin:
//!
//! ```text
//! alpha_i = 1 - exp(-sigma_i * delta_i)
//! T_i     = prod_{j<i} (1 - alpha_j)
//! C       = sum_i T_i * alpha_i * c_i
//! ```
//!
//! `delta_i` is the bin width measured in normalized box units, so the same
//! field renders identically whatever metric size the box is given.

use crate::error::{Error, Result};
use crate::generator::{ConditionedField, FieldGrad, SampleBatch};
use crate::geometry::{pixel_center_ray, BoxPose, CameraIntrinsics, Ray, RigidPose};
use crate::image::Image;
use crate::math::exp;
use crate::par::map_indexed;
use crate::rng::Rng;
use alloc::vec;
use alloc::vec::Vec;

const DEPTH_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySampleSpec {
    pub samples_per_ray: usize,
    /// Jitter each sample inside its bin (training); otherwise bin midpoints.
    pub stratified: bool,
}

impl Default for RaySampleSpec {
    fn default() -> Self {
        RaySampleSpec { samples_per_ray: 64, stratified: false }
    }
}

/// Result of compositing one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    /// Transmittance after the last sample, `T(t_f)`.
    pub transmittance: f64,
    /// Opacity-weighted mean sample distance (world units); 0 for empty rays.
    pub depth: f64,
}

impl RayRender {
    pub const EMPTY: RayRender = RayRender { color: [0.0; 3], transmittance: 1.0, depth: 0.0 };

    pub fn opacity(&self) -> f64 {
        1.0 - self.transmittance
    }
}

/// Foreground test on the far transmittance: opaque rays (at least half the
/// light absorbed) are foreground. Ties go to foreground.
#[inline]
pub fn mask_from_transmittance(t_far: f64) -> bool {
    1.0 - t_far >= 0.5
}

/// Sample distances and bin widths (both in world units) for `[t_near, t_far]`.
pub fn sample_positions(t_near: f64, t_far: f64, spec: &RaySampleSpec, rng: Option<&mut Rng>) -> (Vec<f64>, Vec<f64>) {
    let n = spec.samples_per_ray;
    let step = (t_far - t_near) / n as f64;
    let ts = match (spec.stratified, rng) {
        (true, Some(rng)) => (0..n).map(|i| t_near + (i as f64 + rng.uniform()) * step).collect(),
        _ => (0..n).map(|i| t_near + (i as f64 + 0.5) * step).collect(),
    };
    (ts, vec![step; n])
}

/// Alpha-composites per-sample densities and colors. `deltas` are the
/// optical path lengths the densities apply over.
pub fn composite(sigmas: &[f64], colors: &[[f64; 3]], ts: &[f64], deltas: &[f64]) -> RayRender {
    let mut trans = 1.0;
    let mut color = [0.0; 3];
    let mut depth_acc = 0.0;
    for i in 0..sigmas.len() {
        let att = exp(-sigmas[i] * deltas[i]);
        let w = trans * (1.0 - att);
        for k in 0..3 {
            color[k] += w * colors[i][k];
        }
        depth_acc += w * ts[i];
        trans *= att;
    }
    let opacity = 1.0 - trans;
    let depth = if opacity > 0.0 { depth_acc / opacity.max(DEPTH_EPS) } else { 0.0 };
    RayRender { color, transmittance: trans, depth }
}

/// Scratch state for rendering one ray, reused across rays of a worker.
pub(crate) struct RayScratch {
    batch: SampleBatch,
    ts: Vec<f64>,
    deltas: Vec<f64>,
    sigma: Vec<f64>,
    color: Vec<[f64; 3]>,
    trans: Vec<f64>,
}

impl RayScratch {
    pub(crate) fn new(field: &ConditionedField<'_>, spec: &RaySampleSpec) -> Self {
        let n = spec.samples_per_ray;
        RayScratch {
            batch: SampleBatch::new(field.field(), n),
            ts: vec![0.0; n],
            deltas: vec![0.0; n],
            sigma: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            trans: vec![0.0; n + 1],
        }
    }
}

/// Forward pass for one ray. Returns `None` when the ray misses the box.
pub(crate) fn trace(
    field: &ConditionedField<'_>,
    ray: &Ray,
    bbox: &BoxPose,
    spec: &RaySampleSpec,
    rng: Option<&mut Rng>,
    scratch: &mut RayScratch,
    ray_id: usize,
) -> Result<Option<RayRender>> {
    let Some((t0, t1)) = bbox.intersect(ray) else {
        return Ok(None);
    };
    let n = spec.samples_per_ray;
    debug_assert!(scratch.batch.capacity() >= n);
    let (o, d) = bbox.ray_to_normalized(ray);
    let scale = d.norm();
    let step = (t1 - t0) / n as f64;
    let mut rng = rng;
    for i in 0..n {
        let u = match (spec.stratified, rng.as_deref_mut()) {
            (true, Some(r)) => r.uniform(),
            _ => 0.5,
        };
        scratch.ts[i] = t0 + (i as f64 + u) * step;
        scratch.deltas[i] = step * scale;
    }
    scratch.trans[0] = 1.0;
    let mut color = [0.0; 3];
    let mut depth_acc = 0.0;
    for i in 0..n {
        let p = o + d * scratch.ts[i];
        let (sigma, c) = field.eval(&mut scratch.batch, i, p);
        if !(sigma.is_finite() && c.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFiniteField { ray: ray_id, sample: i });
        }
        scratch.sigma[i] = sigma;
        scratch.color[i] = c;
        let att = exp(-sigma * scratch.deltas[i]);
        let w = scratch.trans[i] * (1.0 - att);
        for k in 0..3 {
            color[k] += w * c[k];
        }
        depth_acc += w * scratch.ts[i];
        scratch.trans[i + 1] = scratch.trans[i] * att;
    }
    let t_far = scratch.trans[n];
    let opacity = 1.0 - t_far;
    let depth = if opacity > 0.0 { depth_acc / opacity.max(DEPTH_EPS) } else { 0.0 };
    Ok(Some(RayRender { color, transmittance: t_far, depth }))
}

/// Backward pass for the ray last traced into `scratch`, given
/// `dL/dcolor` and `dL/dT_far`.
pub(crate) fn trace_backward(
    field: &ConditionedField<'_>,
    spec: &RaySampleSpec,
    scratch: &RayScratch,
    d_color: [f64; 3],
    d_trans: f64,
    grad: &mut FieldGrad,
) {
    let n = spec.samples_per_ray;
    let t_far = scratch.trans[n];
    // suffix[k] = sum_{j >= i+1} w_j (c_j . d_color), built back to front.
    let mut suffix = 0.0;
    for i in (0..n).rev() {
        let c = scratch.color[i];
        let dc_dot = c[0] * d_color[0] + c[1] * d_color[1] + c[2] * d_color[2];
        let w = scratch.trans[i] - scratch.trans[i + 1];
        let delta = scratch.deltas[i];
        let d_sigma = delta * (scratch.trans[i + 1] * dc_dot - suffix) - delta * t_far * d_trans;
        let d_c = [w * d_color[0], w * d_color[1], w * d_color[2]];
        suffix += w * dc_dot;
        if d_sigma == 0.0 && d_c == [0.0; 3] {
            continue;
        }
        field.backward(&scratch.batch, i, d_sigma, d_c, grad);
    }
}

/// Renders one ray through the object box.
pub fn render_ray(field: &ConditionedField<'_>, ray: &Ray, bbox: &BoxPose, spec: &RaySampleSpec, rng: Option<&mut Rng>) -> Result<RayRender> {
    let mut scratch = RayScratch::new(field, spec);
    Ok(trace(field, ray, bbox, spec, rng, &mut scratch, 0)?.unwrap_or(RayRender::EMPTY))
}

/// Renders one ray and accumulates the gradient of `d_color . C + d_trans *
/// T_far` into `grad`.
pub fn render_ray_backward(
    field: &ConditionedField<'_>,
    ray: &Ray,
    bbox: &BoxPose,
    spec: &RaySampleSpec,
    rng: Option<&mut Rng>,
    d_color: [f64; 3],
    d_trans: f64,
    grad: &mut FieldGrad,
) -> Result<RayRender> {
    let mut scratch = RayScratch::new(field, spec);
    match trace(field, ray, bbox, spec, rng, &mut scratch, 0)? {
        Some(r) => {
            trace_backward(field, spec, &scratch, d_color, d_trans, grad);
            Ok(r)
        }
        None => Ok(RayRender::EMPTY),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Premultiplied color over a black background.
    pub rgb: Image,
    pub transmittance: Image,
    /// 1 where the pixel is foreground, else 0.
    pub mask: Image,
    /// Expected ray distance, 0 where the mask is 0.
    pub depth: Image,
}

impl RenderOutput {
    pub fn empty(width: usize, height: usize) -> Self {
        RenderOutput {
            rgb: Image::new(width, height, 3),
            transmittance: Image::filled(width, height, 1, 1.0),
            mask: Image::new(width, height, 1),
            depth: Image::new(width, height, 1),
        }
    }

    /// Opacity `1 - T_far` as a one-channel image.
    pub fn opacity(&self) -> Image {
        self.transmittance.map(|t| 1.0 - t)
    }

    /// Color divided by opacity where the ray is not empty.
    pub fn unpremultiplied(&self) -> Image {
        let mut out = self.rgb.clone();
        for y in 0..out.height() {
            for x in 0..out.width() {
                let a = 1.0 - self.transmittance.get(x, y, 0);
                if a > 1e-6 {
                    for v in out.pixel_mut(x, y) {
                        *v = (*v / a).clamp(0.0, 1.0);
                    }
                }
            }
        }
        out
    }
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelWindow {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

/// Renders every pixel of the camera image independently.
pub fn render_image(
    field: &ConditionedField<'_>,
    cam: &CameraIntrinsics,
    cam_pose: &RigidPose,
    bbox: &BoxPose,
    spec: &RaySampleSpec,
) -> Result<RenderOutput> {
    let full = PixelWindow { x0: 0, y0: 0, x1: cam.width, y1: cam.height };
    render_window(field, cam, cam_pose, bbox, spec, full)
}

/// Like [`render_image`] but only traces pixels inside `window`; the rest
/// stay empty.
pub fn render_window(
    field: &ConditionedField<'_>,
    cam: &CameraIntrinsics,
    cam_pose: &RigidPose,
    bbox: &BoxPose,
    spec: &RaySampleSpec,
    window: PixelWindow,
) -> Result<RenderOutput> {
    let (w, h) = (cam.width, cam.height);
    let mut out = RenderOutput::empty(w, h);
    let x1 = window.x1.min(w);
    let y1 = window.y1.min(h);
    if window.x0 >= x1 || window.y0 >= y1 {
        return Ok(out);
    }
    let eval_spec = RaySampleSpec { stratified: false, ..*spec };
    let rows = map_indexed(y1 - window.y0, |r| -> Result<Vec<RayRender>> {
        let y = window.y0 + r;
        let mut scratch = RayScratch::new(field, &eval_spec);
        (window.x0..x1)
            .map(|x| {
                let ray = pixel_center_ray(cam, cam_pose, x, y);
                Ok(trace(field, &ray, bbox, &eval_spec, None, &mut scratch, y * w + x)?.unwrap_or(RayRender::EMPTY))
            })
            .collect()
    });
    for (r, row) in rows.into_iter().enumerate() {
        let y = window.y0 + r;
        for (i, px) in row?.into_iter().enumerate() {
            let x = window.x0 + i;
            out.rgb.pixel_mut(x, y).copy_from_slice(&px.color);
            out.transmittance.set(x, y, 0, px.transmittance);
            let fg = mask_from_transmittance(px.transmittance);
            out.mask.set(x, y, 0, if fg { 1.0 } else { 0.0 });
            out.depth.set(x, y, 0, if fg { px.depth } else { 0.0 });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_field_is_transparent() {
        let r = composite(&[0.0; 8], &[[0.3, 0.2, 0.9]; 8], &[0.0; 8], &[0.25; 8]);
        assert_eq!(r.color, [0.0; 3]);
        assert_eq!(r.transmittance, 1.0);
        assert!(!mask_from_transmittance(r.transmittance));
        assert_eq!(r.depth, 0.0);
    }

    #[test]
    fn opaque_single_sample() {
        let r = composite(&[f64::INFINITY], &[[0.2, 0.4, 0.6]], &[1.5], &[1.0]);
        assert_eq!(r.color, [0.2, 0.4, 0.6]);
        assert_eq!(r.transmittance, 0.0);
        assert_eq!(r.depth, 1.5);
    }

    #[test]
    fn constant_density_matches_closed_form() {
        let spec = RaySampleSpec { samples_per_ray: 256, stratified: false };
        let (ts, ds) = sample_positions(1.0, 3.0, &spec, None);
        let c = [0.25, 0.5, 1.0];
        let r = composite(&vec![1.0; 256], &vec![c; 256], &ts, &ds);
        let opacity = 1.0 - exp(-2.0);
        assert!((r.opacity() - opacity).abs() < 1e-3);
        for k in 0..3 {
            assert!((r.color[k] - opacity * c[k]).abs() < 1e-3);
        }
    }

    #[test]
    fn mask_tie_rule() {
        assert!(!mask_from_transmittance(1.0));
        assert!(mask_from_transmittance(0.0));
        assert!(mask_from_transmittance(0.5));
    }

    #[test]
    fn stratified_positions_stay_in_bins() {
        let spec = RaySampleSpec { samples_per_ray: 16, stratified: true };
        let mut rng = Rng::new(4, crate::rng::Stream::Sampling);
        let (ts, ds) = sample_positions(2.0, 4.0, &spec, Some(&mut rng));
        for (i, t) in ts.iter().enumerate() {
            let lo = 2.0 + i as f64 * ds[i];
            assert!(*t >= lo && *t < lo + ds[i]);
        }
    }
}
