//! Joint fitting of the shared generator and one free latent code per object
//! against posed images, with Adam updates.

use crate::error::{config, Error, Result};
use crate::generator::{FieldGrad, GeneratorParams, LatentCode, StyleVector, TriPlaneField};
use crate::geometry::{pixel_center_ray, BoxPose, CameraIntrinsics, RigidPose};
use crate::image::Image;
use crate::loss::{loss_iou_grad, loss_perceptual_grad, loss_rgb_grad, GradientPyramid};
use crate::math::sqrt;
use crate::par::map_indexed;
use crate::render::{trace, trace_backward, RayRender, RaySampleSpec, RayScratch};
use crate::rng::{Rng, Stream};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Ray chunks per patch. Fixed so the gradient reduction order never depends
/// on the worker count.
const CHUNKS: usize = 4;

/// Views whose mask covers less than this fraction of the image are skipped.
pub const MIN_MASK_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub iou: f64,
    pub perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { iou: 1.0, perc: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou >= 0.0 && self.perc >= 0.0 && self.iou.is_finite() && self.perc.is_finite()) {
            return Err(config(format!("loss weights must be finite and non-negative, got iou={} perc={}", self.iou, self.perc)));
        }
        Ok(())
    }
}

/// One supervision view: RGB over a black background, binary mask, and the
/// camera that took it.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedImage {
    pub rgb: Image,
    pub mask: Image,
    pub pose: RigidPose,
    pub intrinsics: CameraIntrinsics,
}

impl PosedImage {
    pub fn new(rgb: Image, mask: Image, pose: RigidPose, intrinsics: CameraIntrinsics) -> Result<Self> {
        if rgb.channels() != 3 {
            return Err(Error::Shape { expected: String::from("3 rgb channels"), got: format!("{}", rgb.channels()) });
        }
        if mask.channels() != 1 || mask.width() != rgb.width() || mask.height() != rgb.height() {
            return Err(Error::Shape {
                expected: format!("{}x{}x1 mask", rgb.width(), rgb.height()),
                got: mask.shape_str(),
            });
        }
        if intrinsics.width != rgb.width() || intrinsics.height != rgb.height() {
            return Err(Error::Shape {
                expected: format!("{}x{} intrinsics", rgb.width(), rgb.height()),
                got: format!("{}x{}", intrinsics.width, intrinsics.height),
            });
        }
        let pose = RigidPose::new(pose.rotation, pose.translation)?;
        Ok(PosedImage { rgb, mask, pose, intrinsics })
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn mask_fraction(&self) -> f64 {
        let n = self.mask.data().len().max(1) as f64;
        self.mask.data().iter().filter(|&&m| m >= 0.5).count() as f64 / n
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub id: String,
    pub latent: LatentCode,
    pub views: Vec<PosedImage>,
}

impl ObjectRecord {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.views.first() else {
            return Err(config(format!("object {} has no views", self.id)));
        };
        for v in &self.views {
            if v.width() != first.width() || v.height() != first.height() {
                return Err(Error::Shape {
                    expected: format!("{}x{} views for object {}", first.width(), first.height(), self.id),
                    got: format!("{}x{}", v.width(), v.height()),
                });
            }
        }
        Ok(())
    }

    /// Indices of views that pass the mask-area gate.
    pub fn usable_views(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (i, v) in self.views.iter().enumerate() {
            let frac = v.mask_fraction();
            if frac < MIN_MASK_FRACTION {
                log::warn!("object {}: dropping view {} with mask area {:.4}", self.id, i, frac);
            } else {
                out.push(i);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub l_rgb: f64,
    pub l_iou: f64,
    pub l_perc: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn new(l_rgb: f64, l_iou: f64, l_perc: f64, w: &LossWeights) -> Self {
        LossTerms { l_rgb, l_iou, l_perc, total: l_rgb + w.iou * l_iou + w.perc * l_perc }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub terms: LossTerms,
}

/// Loss of one view (or patch) with gradients w.r.t. every generator
/// parameter and the object's latent.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewLoss {
    pub terms: LossTerms,
    pub d_params: Vec<f64>,
    pub d_latent: Vec<f64>,
}

/// Grid of `size x size` pixels starting at `(x0, y0)` with spacing `stride`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patch {
    pub x0: usize,
    pub y0: usize,
    pub stride: usize,
    pub width: usize,
    pub height: usize,
}

impl Patch {
    pub fn full(width: usize, height: usize) -> Self {
        Patch { x0: 0, y0: 0, stride: 1, width, height }
    }

    /// Random square patch of side `side`; the stride is drawn so the patch
    /// ranges from a dense crop to a sparse grid over the whole image.
    pub fn random(width: usize, height: usize, side: usize, rng: &mut Rng) -> Self {
        let side = side.clamp(1, width.min(height));
        let max_stride = if side > 1 { ((width.min(height) - 1) / (side - 1)).max(1) } else { 1 };
        let stride = 1 + rng.below(max_stride);
        let span = stride * (side - 1) + 1;
        let x0 = rng.below(width - span + 1);
        let y0 = rng.below(height - span + 1);
        Patch { x0, y0, stride, width: side, height: side }
    }

    pub fn pixel(&self, i: usize, j: usize) -> (usize, usize) {
        (self.x0 + self.stride * i, self.y0 + self.stride * j)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, img: &Image) -> Image {
        Image::from_fn(self.width, self.height, img.channels(), |i, j, c| {
            let (x, y) = self.pixel(i, j);
            img.get(x, y, c)
        })
    }

    fn check(&self, w: usize, h: usize) -> Result<()> {
        if self.is_empty() || self.stride == 0 || self.pixel(self.width - 1, self.height - 1).0 >= w || self.pixel(self.width - 1, self.height - 1).1 >= h {
            return Err(config(format!("patch {:?} does not fit a {}x{} image", self, w, h)));
        }
        Ok(())
    }
}

/// Loss on a patch of `view` rendered from `latent`, with gradients.
/// `noise_seed` drives stratified sample jitter.
pub fn patch_loss(
    params: &GeneratorParams,
    latent: &LatentCode,
    view: &PosedImage,
    patch: &Patch,
    weights: &LossWeights,
    spec: &RaySampleSpec,
    noise_seed: u64,
) -> Result<ViewLoss> {
    let (style, mapping_tape) = params.map_latent_with_tape(latent)?;
    let (field, synth_tape) = params.synthesize_with_tape(&style)?;
    let (terms, fg) = field_patch_loss(&field, &style, view, patch, weights, spec, noise_seed)?;
    let mut d_params = params.zero_grad();
    let d_latent = params.backward_to_latent(&mapping_tape, &synth_tape, &fg, &mut d_params);
    Ok(ViewLoss { terms, d_params, d_latent })
}

/// Loss on a patch of `view` rendered from an already generated field, with
/// the gradient w.r.t. the planes, the decoder and the style mean.
pub fn field_patch_loss(
    field: &TriPlaneField,
    style: &StyleVector,
    view: &PosedImage,
    patch: &Patch,
    weights: &LossWeights,
    spec: &RaySampleSpec,
    noise_seed: u64,
) -> Result<(LossTerms, FieldGrad)> {
    patch.check(view.width(), view.height())?;
    weights.validate()?;
    let cond = field.conditioned(style)?;
    let bbox = BoxPose::CANONICAL;
    let n = patch.len();
    let chunk = n.div_ceil(CHUNKS);

    let traced = map_indexed(CHUNKS, |c| -> Result<Vec<(Option<RayRender>, RayScratch)>> {
        let mut rng = Rng::indexed(noise_seed, Stream::Sampling, c as u64);
        (c * chunk..((c + 1) * chunk).min(n))
            .map(|r| {
                let (x, y) = patch.pixel(r % patch.width, r / patch.width);
                let ray = pixel_center_ray(&view.intrinsics, &view.pose, x, y);
                let mut scratch = RayScratch::new(&cond, spec);
                let hit = trace(&cond, &ray, &bbox, spec, Some(&mut rng), &mut scratch, y * view.width() + x)?;
                Ok((hit, scratch))
            })
            .collect()
    });
    let traced = traced.into_iter().collect::<Result<Vec<_>>>()?;

    let mut rgb = Image::new(patch.width, patch.height, 3);
    let mut opacity = Image::new(patch.width, patch.height, 1);
    for (r, (hit, _)) in traced.iter().flatten().enumerate() {
        let px = hit.unwrap_or(RayRender::EMPTY);
        let (i, j) = (r % patch.width, r / patch.width);
        rgb.pixel_mut(i, j).copy_from_slice(&px.color);
        opacity.set(i, j, 0, px.opacity());
    }
    let target_rgb = patch.gather(&view.rgb);
    let target_mask = patch.gather(&view.mask);
    let (l_rgb, g_rgb) = loss_rgb_grad(&target_rgb, &rgb)?;
    let (l_iou, g_iou) = loss_iou_grad(&opacity, &target_mask)?;
    let (l_perc, g_perc) = loss_perceptual_grad(&GradientPyramid::default(), &target_rgb, &rgb)?;
    let terms = LossTerms::new(l_rgb, l_iou, l_perc, weights);

    let grads = map_indexed(CHUNKS, |c| {
        let mut fg = FieldGrad::new(field);
        let start = c * chunk;
        for (k, (hit, scratch)) in traced[c].iter().enumerate() {
            if hit.is_none() {
                continue;
            }
            let r = start + k;
            let (i, j) = (r % patch.width, r / patch.width);
            let mut d_color = [0.0; 3];
            for (ch, d) in d_color.iter_mut().enumerate() {
                *d = g_rgb.get(i, j, ch) + weights.perc * g_perc.get(i, j, ch);
            }
            let d_trans = -weights.iou * g_iou.get(i, j, 0);
            trace_backward(&cond, spec, scratch, d_color, d_trans, &mut fg);
        }
        fg
    });
    let mut grads = grads.into_iter();
    let mut fg = grads.next().unwrap_or_else(|| FieldGrad::new(field));
    for g in grads {
        fg.add(&g);
    }
    cond.finish(&mut fg);
    Ok((terms, fg))
}

/// Full-image loss of one view of `record` with midpoint sampling.
pub fn total_loss(record: &ObjectRecord, view: usize, params: &GeneratorParams, weights: &LossWeights, samples_per_ray: usize) -> Result<ViewLoss> {
    let v = record
        .views
        .get(view)
        .ok_or_else(|| config(format!("object {} has no view {}", record.id, view)))?;
    let spec = RaySampleSpec { samples_per_ray, stratified: false };
    patch_loss(params, &record.latent, v, &Patch::full(v.width(), v.height()), weights, &spec, 0)
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(state: &mut Adam, params: &mut [f64], grads: &[f64]) -> Result<()> {
    if params.len() != state.len() || grads.len() != state.len() {
        return Err(Error::Shape {
            expected: format!("{} parameters and gradients", state.len()),
            got: format!("{} parameters, {} gradients", params.len(), grads.len()),
        });
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(state.beta1, t);
    let bc2 = 1.0 - libm::pow(state.beta2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.lr * m_hat / (sqrt(v_hat) + state.eps);
    }
    Ok(())
}

/// Initial latent codes for `count` objects, drawn from the `Init` stream at
/// indices `1..=count` (index 0 seeds the generator weights).
pub fn init_latents(count: usize, dim: usize, std: f64, seed: u64) -> Vec<LatentCode> {
    (0..count).map(|i| LatentCode::random(dim, std, &mut Rng::indexed(seed, Stream::Init, 1 + i as u64))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub iterations: u64,
    /// Rays per object per step, taken as a square patch.
    pub rays_per_step: usize,
    pub lr_params: f64,
    pub lr_latents: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub samples_per_ray: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 2000,
            rays_per_step: 256,
            lr_params: 1e-3,
            lr_latents: 1e-2,
            weights: LossWeights::default(),
            seed: 0,
            samples_per_ray: 48,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.rays_per_step == 0 || self.samples_per_ray == 0 {
            return Err(config("rays_per_step and samples_per_ray must be positive"));
        }
        if !(self.lr_params >= 0.0 && self.lr_latents >= 0.0) {
            return Err(config(format!("learning rates must be non-negative, got {} and {}", self.lr_params, self.lr_latents)));
        }
        Ok(())
    }

    pub fn patch_side(&self) -> usize {
        (sqrt(self.rays_per_step as f64) as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub params: Adam,
    pub latents: Vec<Adam>,
    pub history: Vec<LossRecord>,
}

impl OptimState {
    pub fn new(params: &GeneratorParams, objects: usize, cfg: &FitConfig) -> Self {
        let dim = params.config().latent_dim;
        OptimState {
            step: 0,
            params: Adam::new(params.len(), cfg.lr_params),
            latents: (0..objects).map(|_| Adam::new(dim, cfg.lr_latents)).collect(),
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutput {
    pub params: GeneratorParams,
    pub latents: Vec<LatentCode>,
    pub state: OptimState,
}

/// Runs `cfg.iterations` steps starting from `state` (or a fresh state).
/// Each step renders one random view patch per object; the loss is the
/// mean over objects. Step randomness depends only on `(seed, step)`, so a
/// resumed run reproduces an uninterrupted one.
pub fn fit(records: &[ObjectRecord], params: GeneratorParams, cfg: &FitConfig, state: Option<OptimState>) -> Result<FitOutput> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(config("fit needs at least one object"));
    }
    let dim = params.config().latent_dim;
    let mut usable = Vec::with_capacity(records.len());
    for r in records {
        r.validate()?;
        if r.latent.dim() != dim {
            return Err(config(format!("object {} latent has dim {}, generator expects {}", r.id, r.latent.dim(), dim)));
        }
        let u = r.usable_views();
        if u.is_empty() {
            return Err(config(format!("object {} has no view passing the mask gate", r.id)));
        }
        usable.push(u);
    }
    let mut state = state.unwrap_or_else(|| OptimState::new(&params, records.len(), cfg));
    if state.latents.len() != records.len() || state.params.len() != params.len() {
        return Err(config("optimizer state does not match the model and object count"));
    }
    state.params.lr = cfg.lr_params;
    for a in &mut state.latents {
        a.lr = cfg.lr_latents;
    }
    let mut params = params;
    let mut latents: Vec<LatentCode> = records.iter().map(|r| r.latent.clone()).collect();
    let spec = RaySampleSpec { samples_per_ray: cfg.samples_per_ray, stratified: true };
    let k = records.len() as f64;
    for _ in 0..cfg.iterations {
        let step = state.step;
        let mut rng = Rng::indexed(cfg.seed, Stream::Sampling, step);
        let mut d_params = params.zero_grad();
        let mut d_latents = Vec::with_capacity(records.len());
        let mut sum = LossTerms::default();
        for (o, rec) in records.iter().enumerate() {
            let view = &rec.views[usable[o][rng.below(usable[o].len())]];
            let patch = Patch::random(view.width(), view.height(), cfg.patch_side(), &mut rng);
            let noise = rng.next_u64();
            let vl = patch_loss(&params, &latents[o], view, &patch, &cfg.weights, &spec, noise).map_err(|e| match e {
                Error::NonFiniteField { .. } => Error::NonFiniteLoss { step, object: rec.id.clone() },
                other => other,
            })?;
            if !vl.terms.total.is_finite() {
                return Err(Error::NonFiniteLoss { step, object: rec.id.clone() });
            }
            for (a, b) in d_params.iter_mut().zip(&vl.d_params) {
                *a += b / k;
            }
            d_latents.push(vl.d_latent.into_iter().map(|g| g / k).collect::<Vec<_>>());
            sum.l_rgb += vl.terms.l_rgb / k;
            sum.l_iou += vl.terms.l_iou / k;
            sum.l_perc += vl.terms.l_perc / k;
            sum.total += vl.terms.total / k;
        }
        adam_step(&mut state.params, params.data_mut(), &d_params)?;
        for (o, g) in d_latents.iter().enumerate() {
            adam_step(&mut state.latents[o], &mut latents[o].0, g)?;
        }
        state.history.push(LossRecord { step, terms: sum });
        state.step += 1;
        if step % 100 == 0 {
            log::debug!("step {step}: total {:.5} rgb {:.5} iou {:.5} perc {:.5}", sum.total, sum.l_rgb, sum.l_iou, sum.l_perc);
        }
    }
    Ok(FitOutput { params, latents, state })
}
