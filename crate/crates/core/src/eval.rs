//! Multi-view consistency by depth warping, plus PSNR and mask IoU.

use crate::error::{domain, Error, Result};
use crate::generator::{ConditionedField, GeneratorParams, LatentCode, StyleVector, TriPlaneField};
use crate::geometry::{orbit_pose, pixel_center_ray, BoxPose, CameraIntrinsics, RigidPose};
use crate::image::Image;
use crate::math::log10;
use crate::oracle::{render_oracle, PrimitiveScene};
use crate::par::map_indexed;
use crate::render::{render_image, RaySampleSpec};
use crate::rng::{Rng, Stream};
use alloc::format;
use alloc::vec::Vec;

/// Peak signal-to-noise ratio for images in `[0, 1]`; `f64::INFINITY` for
/// identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data().len().max(1) as f64;
    let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * log10(mse))
}

/// IoU of two masks thresholded at 0.5. Two empty masks give 1.
pub fn mask_iou(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (p, q) = (x >= 0.5, y >= 0.5);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Color, hard mask and ray-distance depth of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub rgb: Image,
    pub mask: Image,
    pub depth: Image,
}

/// Relative depth tolerance of [`covisible`].
pub const DEPTH_TOLERANCE: f64 = 0.05;

/// View A forward-splatted into view B.
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub rgb: Image,
    /// 1 where some point of A landed.
    pub coverage: Image,
    /// Distance of the landed point from B's camera center, 0 elsewhere.
    pub distance: Image,
}

/// Forward-splats the masked pixels of view A into view B using A's depth.
/// Each point lands on the pixel containing its projection; the nearest
/// point wins.
pub fn warp_view(rgb_a: &Image, depth_a: &Image, mask_a: &Image, pose_a: &RigidPose, pose_b: &RigidPose, cam: &CameraIntrinsics) -> Result<Warped> {
    let (w, h) = (cam.width, cam.height);
    for (img, ch) in [(rgb_a, 3), (depth_a, 1), (mask_a, 1)] {
        if img.width() != w || img.height() != h || img.channels() != ch {
            return Err(Error::Shape { expected: format!("{w}x{h}x{ch}"), got: img.shape_str() });
        }
    }
    let mut out = Warped { rgb: Image::new(w, h, 3), coverage: Image::new(w, h, 1), distance: Image::new(w, h, 1) };
    let mut zbuf = alloc::vec![f64::INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            if mask_a.get(x, y, 0) < 0.5 {
                continue;
            }
            let d = depth_a.get(x, y, 0);
            if !(d > 0.0) {
                continue;
            }
            let p = pixel_center_ray(cam, pose_a, x, y).at(d);
            let pc = pose_b.inverse_transform_point(p);
            let Some((u, v)) = cam.project_camera(pc) else {
                continue;
            };
            if !(u >= 0.0 && v >= 0.0 && u < w as f64 && v < h as f64) {
                continue;
            }
            let (i, j) = (u as usize, v as usize);
            let dist = pc.norm();
            if dist < zbuf[j * w + i] {
                zbuf[j * w + i] = dist;
                out.rgb.pixel_mut(i, j).copy_from_slice(rgb_a.pixel(x, y));
                out.coverage.set(i, j, 0, 1.0);
                out.distance.set(i, j, 0, dist);
            }
        }
    }
    Ok(out)
}

/// Pixels seen by both views: covered by the warp, foreground in B, and
/// with the warped distance within `rel_tol * depth_b` of B's own depth.
pub fn covisible(warp: &Warped, mask_b: &Image, depth_b: &Image, rel_tol: f64) -> Result<Image> {
    for img in [mask_b, depth_b] {
        warp.coverage.check_same_shape(img)?;
    }
    Ok(Image::from_fn(mask_b.width(), mask_b.height(), 1, |x, y, _| {
        let d = depth_b.get(x, y, 0);
        let seen = warp.coverage.get(x, y, 0) >= 0.5 && mask_b.get(x, y, 0) >= 0.5 && (warp.distance.get(x, y, 0) - d).abs() <= rel_tol * d;
        if seen {
            1.0
        } else {
            0.0
        }
    }))
}

/// Mean absolute RGB difference over valid pixels.
pub fn reprojection_error(rendered_b: &Image, warped: &Image, validity: &Image) -> Result<f64> {
    rendered_b.check_same_shape(warped)?;
    if validity.width() != rendered_b.width() || validity.height() != rendered_b.height() || validity.channels() != 1 {
        return Err(Error::Shape { expected: format!("{}x{}x1 validity", rendered_b.width(), rendered_b.height()), got: validity.shape_str() });
    }
    let c = rendered_b.channels();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..validity.height() {
        for x in 0..validity.width() {
            if validity.get(x, y, 0) < 0.5 {
                continue;
            }
            n += c;
            sum += rendered_b.pixel(x, y).iter().zip(warped.pixel(x, y)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
    }
    if n == 0 {
        return Err(domain("no valid pixels after warping"));
    }
    Ok(sum / n as f64)
}

/// Anything that renders color, mask and depth from a camera pose.
pub trait ViewRenderer: Sync {
    fn camera(&self) -> &CameraIntrinsics;

    /// `index` identifies the view within an evaluation run.
    fn render_view(&self, pose: &RigidPose, index: u64) -> Result<ViewRender>;
}

pub struct OracleRenderer<'a> {
    pub scene: &'a PrimitiveScene,
    pub camera: CameraIntrinsics,
}

impl ViewRenderer for OracleRenderer<'_> {
    fn camera(&self) -> &CameraIntrinsics {
        &self.camera
    }

    fn render_view(&self, pose: &RigidPose, _index: u64) -> Result<ViewRender> {
        let r = render_oracle(self.scene, &self.camera, pose);
        Ok(ViewRender { rgb: r.rgb, mask: r.mask, depth: r.depth })
    }
}

/// A lifted object rendered in the canonical box.
pub struct FieldRenderer {
    style: StyleVector,
    field: TriPlaneField,
    pub camera: CameraIntrinsics,
    pub spec: RaySampleSpec,
}

impl FieldRenderer {
    pub fn new(params: &GeneratorParams, latent: &LatentCode, camera: CameraIntrinsics, samples_per_ray: usize) -> Result<Self> {
        let (style, field) = params.generate(latent)?;
        Ok(FieldRenderer { style, field, camera, spec: RaySampleSpec { samples_per_ray, stratified: false } })
    }

    pub fn conditioned(&self) -> Result<ConditionedField<'_>> {
        self.field.conditioned(&self.style)
    }
}

impl ViewRenderer for FieldRenderer {
    fn camera(&self) -> &CameraIntrinsics {
        &self.camera
    }

    fn render_view(&self, pose: &RigidPose, _index: u64) -> Result<ViewRender> {
        let out = render_image(&self.conditioned()?, &self.camera, pose, &BoxPose::CANONICAL, &self.spec)?;
        Ok(ViewRender { rgb: out.rgb, mask: out.mask, depth: out.depth })
    }
}

/// View-inconsistent baseline: the wrapped renderer's output with an
/// independent random per-channel color gain for every view.
pub struct RecolorBaseline<R> {
    pub inner: R,
    pub seed: u64,
    /// Gains are drawn from `[1 - spread, 1 + spread]`.
    pub spread: f64,
}

impl<R: ViewRenderer> ViewRenderer for RecolorBaseline<R> {
    fn camera(&self) -> &CameraIntrinsics {
        self.inner.camera()
    }

    fn render_view(&self, pose: &RigidPose, index: u64) -> Result<ViewRender> {
        let mut v = self.inner.render_view(pose, index)?;
        let mut rng = Rng::indexed(self.seed, Stream::Eval, index);
        let gains: [f64; 3] = core::array::from_fn(|_| rng.range(1.0 - self.spread, 1.0 + self.spread));
        for y in 0..v.rgb.height() {
            for x in 0..v.rgb.width() {
                for (c, val) in v.rgb.pixel_mut(x, y).iter_mut().enumerate() {
                    *val = (*val * gains[c]).clamp(0.0, 1.0);
                }
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPairSpec {
    /// Azimuth offset of view B from view A.
    pub offset_deg: f64,
    pub elevation_deg: (f64, f64),
    pub radius: f64,
    pub count: usize,
    pub seed: u64,
}

impl Default for ViewPairSpec {
    fn default() -> Self {
        ViewPairSpec { offset_deg: 5.0, elevation_deg: (0.0, 20.0), radius: 4.0, count: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairResult {
    pub pair_id: usize,
    pub azimuth_a: f64,
    pub azimuth_b: f64,
    pub elevation: f64,
    /// `None` when no pixel survived the warp.
    pub re: Option<f64>,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub pairs: Vec<PairResult>,
    /// Mean over pairs with a defined error.
    pub mean: f64,
    pub count: usize,
    pub valid_fraction: f64,
}

/// Random adjacent view pairs: azimuth A uniform over the circle, B offset
/// by `offset_deg`, shared elevation.
pub fn sample_pairs(spec: &ViewPairSpec) -> Result<Vec<(f64, f64, f64)>> {
    if !(spec.offset_deg > 0.0) || spec.count == 0 {
        return Err(domain(format!("pair offset must be positive and count at least 1, got {} and {}", spec.offset_deg, spec.count)));
    }
    let mut rng = Rng::new(spec.seed, Stream::Eval);
    Ok((0..spec.count)
        .map(|_| {
            let a = rng.range(0.0, 360.0);
            let el = rng.range(spec.elevation_deg.0, spec.elevation_deg.1);
            (a, a + spec.offset_deg, el)
        })
        .collect())
}

/// Warps A into B for every pair and reports the reprojection errors. With
/// `swap`, B is warped into A instead.
pub fn evaluate_consistency(renderer: &dyn ViewRenderer, spec: &ViewPairSpec, swap: bool) -> Result<MetricReport> {
    let pairs = sample_pairs(spec)?;
    let cam = *renderer.camera();
    let results = map_indexed(pairs.len(), |i| -> Result<PairResult> {
        let (az_a, az_b, el) = pairs[i];
        let (pa, pb) = (orbit_pose(az_a, el, spec.radius)?, orbit_pose(az_b, el, spec.radius)?);
        let va = renderer.render_view(&pa, 2 * i as u64)?;
        let vb = renderer.render_view(&pb, 2 * i as u64 + 1)?;
        let (src, dst, ps, pd) = if swap { (&vb, &va, &pb, &pa) } else { (&va, &vb, &pa, &pb) };
        let warp = warp_view(&src.rgb, &src.depth, &src.mask, ps, pd, &cam)?;
        let valid = covisible(&warp, &dst.mask, &dst.depth, DEPTH_TOLERANCE)?;
        let re = reprojection_error(&dst.rgb, &warp.rgb, &valid).ok();
        let valid_fraction = valid.data().iter().sum::<f64>() / valid.data().len().max(1) as f64;
        Ok(PairResult { pair_id: i, azimuth_a: az_a, azimuth_b: az_b, elevation: el, re, valid_fraction })
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let defined: Vec<f64> = pairs.iter().filter_map(|p| p.re).collect();
    let mean = if defined.is_empty() { f64::NAN } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    let valid_fraction = pairs.iter().map(|p| p.valid_fraction).sum::<f64>() / pairs.len() as f64;
    Ok(MetricReport { count: pairs.len(), mean, valid_fraction, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Mat3, Vec3};
    use crate::oracle::{gen_scene, Primitive, Shape, VIEW_FOCAL, VIEW_SIZE};

    #[test]
    fn psnr_and_iou_examples() {
        let a = Image::filled(4, 4, 3, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let m = Image::from_fn(4, 4, 1, |x, _, _| (x % 2) as f64);
        assert_eq!(mask_iou(&m, &m).unwrap(), 1.0);
        assert_eq!(mask_iou(&m, &m.map(|v| 1.0 - v)).unwrap(), 0.0);
        assert!(psnr(&a, &Image::new(4, 3, 3)).is_err());
    }

    #[test]
    fn reprojection_error_examples() {
        let ones = Image::filled(3, 3, 3, 1.0);
        let valid = Image::filled(3, 3, 1, 1.0);
        assert_eq!(reprojection_error(&ones, &ones, &valid).unwrap(), 0.0);
        assert_eq!(reprojection_error(&ones, &Image::new(3, 3, 3), &valid).unwrap(), 1.0);
        assert!(reprojection_error(&ones, &ones, &Image::new(3, 3, 1)).is_err());
    }

    #[test]
    fn identity_warp_is_exact() {
        let scene = gen_scene(2);
        let cam = CameraIntrinsics::centered(VIEW_SIZE, VIEW_FOCAL).unwrap();
        let pose = orbit_pose(40.0, 10.0, 4.0).unwrap();
        let r = render_oracle(&scene, &cam, &pose);
        let warp = warp_view(&r.rgb, &r.depth, &r.mask, &pose, &pose, &cam).unwrap();
        assert_eq!(warp.coverage, r.mask);
        let valid = covisible(&warp, &r.mask, &r.depth, 1e-12).unwrap();
        assert_eq!(valid, r.mask);
        assert_eq!(reprojection_error(&r.rgb, &warp.rgb, &valid).unwrap(), 0.0);
    }

    #[test]
    fn fronto_parallel_plane_shifts_by_parallax() {
        let scene = PrimitiveScene::new(alloc::vec![Primitive {
            shape: Shape::Box,
            center: Vec3::new(0.0, 0.0, 10.0),
            half: Vec3::new(50.0, 50.0, 0.5),
            albedo: [1.0; 3],
        }]);
        let cam = CameraIntrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        let pa = RigidPose::IDENTITY;
        let pb = RigidPose::new(Mat3::IDENTITY, Vec3::new(0.95, 0.0, 0.0)).unwrap();
        let gradient = Image::from_fn(32, 32, 3, |x, y, c| (x + 2 * y + c) as f64 / 100.0);
        let r = render_oracle(&scene, &cam, &pa);
        let Warped { rgb: warped, coverage: valid, distance } = warp_view(&gradient, &r.depth, &r.mask, &pa, &pb, &cam).unwrap();
        // Plane at depth 9.5: shift = 40 * 0.95 / 9.5 = 4 px to the left.
        for y in 0..32 {
            for x in 0..28 {
                assert_eq!(valid.get(x, y, 0), 1.0);
                assert_eq!(warped.pixel(x, y), gradient.pixel(x + 4, y));
                assert!(distance.get(x, y, 0) > 9.5);
            }
            for x in 28..32 {
                assert_eq!(valid.get(x, y, 0), 0.0);
            }
        }
    }

    #[test]
    fn covisibility_drops_background_and_occluded_pixels() {
        let coverage = Image::filled(4, 1, 1, 1.0);
        let warp = Warped { rgb: Image::new(4, 1, 3), coverage, distance: Image::filled(4, 1, 1, 2.0) };
        let mask = Image::from_fn(4, 1, 1, |x, _, _| if x == 0 { 0.0 } else { 1.0 });
        let depth = Image::from_fn(4, 1, 1, |x, _, _| [2.0, 2.0, 2.09, 1.5][x]);
        let valid = covisible(&warp, &mask, &depth, DEPTH_TOLERANCE).unwrap();
        assert_eq!(valid.data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(covisible(&warp, &Image::new(3, 1, 1), &depth, DEPTH_TOLERANCE).is_err());
    }

    #[test]
    fn oracle_pairs_are_consistent_and_symmetric() {
        let scene = gen_scene(5);
        let r = OracleRenderer { scene: &scene, camera: CameraIntrinsics::centered(VIEW_SIZE, VIEW_FOCAL).unwrap() };
        let spec = ViewPairSpec { count: 20, ..Default::default() };
        let fwd = evaluate_consistency(&r, &spec, false).unwrap();
        let back = evaluate_consistency(&r, &spec, true).unwrap();
        assert!(fwd.mean < 0.03, "{}", fwd.mean);
        assert!((fwd.mean - back.mean).abs() < 0.01);
        let base = RecolorBaseline { inner: r, seed: 1, spread: 0.3 };
        let noisy = evaluate_consistency(&base, &spec, false).unwrap();
        assert!(noisy.mean > 2.0 * fwd.mean);
    }
}
