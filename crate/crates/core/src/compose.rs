//! Inserting lifted objects into calibrated background frames.
//!
//! Poses are sampled in the world frame of the background camera (y up).
//! The sampled `y` is the height of the box bottom; [`BoxPose::y`] stores the
//! box center, so the two differ by `h / 2`. Every sampled value is rounded
//! to [`LABEL_DECIMALS`] places before use, so the emitted label text holds
//! the exact pose that was rendered.

use crate::error::{config, Error, Result};
use crate::generator::{GeneratorParams, LatentCode, StyleVector, TriPlaneField};
use crate::geometry::{ipm_ground, project, BoxPose, Calibration, CameraIntrinsics, RigidPose};
use crate::image::Image;
use crate::math::{atan2, cos, exp, sin, sqrt, wrap_angle, Mat3, Vec3, PI};
use crate::render::{render_window, PixelWindow, RaySampleSpec};
use crate::rng::Rng;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

pub const LABEL_DECIMALS: i32 = 2;

/// Boxes with a corner closer than this (camera depth, meters) are rejected.
const MIN_CORNER_DEPTH: f64 = 0.1;
const MIN_DIMENSION: f64 = 0.2;

fn quantize(v: f64) -> f64 {
    let s = libm::pow(10.0, LABEL_DECIMALS as f64);
    libm::round(v * s) / s
}

/// Placement distributions. Gaussians are `(mean, std)`, uniforms `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleDistributions {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
    pub l: (f64, f64),
    pub w: (f64, f64),
    pub h: (f64, f64),
    /// Means of the two equally likely yaw components.
    pub yaw_modes: [f64; 2],
    pub yaw_std: f64,
}

impl SampleDistributions {
    /// Car statistics for a camera whose ground plane is `y = ground_height`.
    pub fn cars(ground_height: f64) -> Self {
        SampleDistributions {
            x: (-20.0, 20.0),
            y: (ground_height, 0.2),
            z: (5.0, 45.0),
            l: (3.88, 0.5),
            w: (1.63, 0.5),
            h: (1.53, 0.5),
            yaw_modes: [PI / 2.0, -PI / 2.0],
            yaw_std: PI / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.y.1, self.l.1, self.w.1, self.h.1, self.yaw_std];
        if stds.iter().any(|s| !(*s > 0.0)) {
            return Err(config("all standard deviations must be positive"));
        }
        if [self.l.0, self.w.0, self.h.0].iter().any(|m| !(*m > 0.0)) {
            return Err(config("dimension means must be positive"));
        }
        if !(self.x.0 <= self.x.1 && self.z.0 <= self.z.1) {
            return Err(config("uniform ranges must be ordered"));
        }
        Ok(())
    }
}

/// One raw draw before rounding, with the yaw mixture component used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseDraw {
    pub x: f64,
    pub y_bottom: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
    pub yaw_mode: usize,
}

impl PoseDraw {
    /// Rounds every field and converts to a center-based box.
    pub fn to_box(&self) -> BoxPose {
        let h = quantize(self.h);
        BoxPose {
            x: quantize(self.x),
            y: quantize(self.y_bottom) + h / 2.0,
            z: quantize(self.z),
            l: quantize(self.l),
            w: quantize(self.w),
            h,
            theta: quantize(self.theta),
        }
    }
}

fn positive_normal(rng: &mut Rng, (mean, std): (f64, f64)) -> f64 {
    for _ in 0..64 {
        let v = rng.normal(mean, std);
        if v >= MIN_DIMENSION {
            return v;
        }
    }
    mean.max(MIN_DIMENSION)
}

pub fn sample_pose_raw(dist: &SampleDistributions, rng: &mut Rng) -> PoseDraw {
    let x = rng.range(dist.x.0, dist.x.1);
    let y_bottom = rng.normal(dist.y.0, dist.y.1);
    let z = rng.range(dist.z.0, dist.z.1);
    let l = positive_normal(rng, dist.l);
    let w = positive_normal(rng, dist.w);
    let h = positive_normal(rng, dist.h);
    let yaw_mode = usize::from(!rng.bernoulli(0.5));
    let theta = wrap_angle(rng.normal(dist.yaw_modes[yaw_mode], dist.yaw_std));
    PoseDraw { x, y_bottom, z, l, w, h, theta, yaw_mode }
}

/// Samples a box and rounds it to label precision.
pub fn sample_pose(dist: &SampleDistributions, rng: &mut Rng) -> BoxPose {
    sample_pose_raw(dist, rng).to_box()
}

/// Bird's-eye-view occupancy grid over world `x` (columns) and `z` (rows).
/// Cell `(i, j)` covers `[x0 + i*cell, x0 + (i+1)*cell) x [z0 + j*cell, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivableMap {
    pub cols: usize,
    pub rows: usize,
    pub cell: f64,
    pub origin: (f64, f64),
    pub cells: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub cell: f64,
    pub origin: (f64, f64),
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { cols: 200, rows: 250, cell: 0.2, origin: (-20.0, 0.0) }
    }
}

impl DrivableMap {
    pub fn filled(spec: GridSpec, value: bool) -> Result<Self> {
        if spec.cols == 0 || spec.rows == 0 || !(spec.cell > 0.0) {
            return Err(config(format!("grid {}x{} with cell {} is empty", spec.cols, spec.rows, spec.cell)));
        }
        Ok(DrivableMap { cols: spec.cols, rows: spec.rows, cell: spec.cell, origin: spec.origin, cells: vec![value; spec.cols * spec.rows] })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { cols: self.cols, rows: self.rows, cell: self.cell, origin: self.origin }
    }

    pub fn cell_of(&self, x: f64, z: f64) -> Option<(usize, usize)> {
        let i = libm::floor((x - self.origin.0) / self.cell);
        let j = libm::floor((z - self.origin.1) / self.cell);
        if i < 0.0 || j < 0.0 || i >= self.cols as f64 || j >= self.rows as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        (self.origin.0 + (i as f64 + 0.5) * self.cell, self.origin.1 + (j as f64 + 0.5) * self.cell)
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.cols + i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.cells[j * self.cols + i] = v;
    }

    pub fn is_drivable(&self, x: f64, z: f64) -> bool {
        self.cell_of(x, z).is_some_and(|(i, j)| self.get(i, j))
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }
}

/// Whether the center cell of the box's ground footprint is drivable.
pub fn filter_drivable(pose: &BoxPose, map: &DrivableMap) -> bool {
    map.is_drivable(pose.x, pose.z)
}

/// Marks a cell drivable when its center, placed on the ground plane,
/// projects into a drivable pixel (`>= 0.5`) of `seg_mask`.
pub fn ipm_drivable_map(seg_mask: &Image, calib: &Calibration, spec: GridSpec) -> Result<DrivableMap> {
    let cam = &calib.camera;
    if seg_mask.width() != cam.width || seg_mask.height() != cam.height || seg_mask.channels() != 1 {
        return Err(Error::Shape { expected: format!("{}x{}x1 mask", cam.width, cam.height), got: seg_mask.shape_str() });
    }
    if calib.cam_height_m <= 0.0 {
        return Err(config("camera must be above the ground"));
    }
    let ground = calib.ground_height();
    let mut map = DrivableMap::filled(spec, false)?;
    for j in 0..map.rows {
        for i in 0..map.cols {
            let (x, z) = map.cell_center(i, j);
            let Some((u, v)) = project(cam, &calib.pose, Vec3::new(x, ground, z)) else {
                continue;
            };
            if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
                continue;
            }
            if seg_mask.get(u as usize, v as usize, 0) >= 0.5 {
                map.set(i, j, true);
            }
        }
    }
    Ok(map)
}

/// Radially soft ellipse: 1 at the center, cosine falloff to 0 at the rim.
pub fn default_shadow_sprite(size: usize) -> Image {
    Image::from_fn(size, size, 1, |x, y, _| {
        let u = 2.0 * (x as f64 + 0.5) / size as f64 - 1.0;
        let v = 2.0 * (y as f64 + 0.5) / size as f64 - 1.0;
        let r = sqrt(u * u + v * v);
        if r < 1.0 {
            0.5 * (1.0 + cos(PI * r))
        } else {
            0.0
        }
    })
}

fn sample_bilinear(img: &Image, u: f64, v: f64) -> f64 {
    let (w, h) = (img.width(), img.height());
    let fx = (u * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let fy = (v * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (fx as usize, fy as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let top = img.get(x0, y0, 0) * (1.0 - ax) + img.get(x1, y0, 0) * ax;
    let bot = img.get(x0, y1, 0) * (1.0 - ax) + img.get(x1, y1, 0) * ax;
    top * (1.0 - ay) + bot * ay
}

/// Darkens the ground under the box. The sprite spans the `l x w`
/// footprint (sprite x along the box length, y along its width) at the box
/// bottom; covered pixels are scaled by `1 - strength * sprite`.
pub fn cast_shadow(frame: &mut Image, pose: &BoxPose, cam: &CameraIntrinsics, cam_pose: &RigidPose, sprite: &Image, strength: f64) {
    if strength == 0.0 || sprite.data().is_empty() {
        return;
    }
    let ground = pose.y - pose.h / 2.0;
    let rot = pose.rotation();
    let center = Vec3::new(pose.x, ground, pose.z);
    for y in 0..frame.height().min(cam.height) {
        for x in 0..frame.width().min(cam.width) {
            let Some(p) = ipm_ground(cam, cam_pose, ground, x as f64 + 0.5, y as f64 + 0.5) else {
                continue;
            };
            let local = rot.transpose() * (p.to_world(ground) - center);
            let u = local.x / pose.l + 0.5;
            let v = local.z / pose.w + 0.5;
            if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
                continue;
            }
            let k = 1.0 - strength * sample_bilinear(sprite, u, v);
            for c in frame.pixel_mut(x, y) {
                *c *= k;
            }
        }
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = feather_radius(sigma) as isize;
    (-r..=r).map(|i| exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect()
}

pub fn feather_radius(sigma: f64) -> usize {
    if sigma <= 0.0 {
        0
    } else {
        libm::ceil(3.0 * sigma) as usize
    }
}

/// Separable Gaussian blur with edge clamping. Each output is the weighted
/// sum divided by the weight sum, so constant inputs are reproduced exactly.
pub fn gaussian_feather(mask: &Image, sigma: f64) -> Image {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return mask.clone();
    }
    let r = (k.len() / 2) as isize;
    let norm: f64 = k.iter().sum();
    let (w, h, ch) = (mask.width(), mask.height(), mask.channels());
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = k.iter().enumerate().map(|(t, wt)| wt * mask.get(clamp(x as isize + t as isize - r, w), y, c)).sum();
                tmp.set(x, y, c, s / norm);
            }
        }
    }
    let mut out = Image::new(w, h, ch);
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let s: f64 = k.iter().enumerate().map(|(t, wt)| wt * tmp.get(x, clamp(y as isize + t as isize - r, h), c)).sum();
                out.set(x, y, c, s / norm);
            }
        }
    }
    out
}

/// `foreground * M_f + background * (1 - M_f)` with `M_f` the feathered
/// one-channel mask, clamped to `[0, 1]`.
pub fn blend(background: &Image, foreground: &Image, mask: &Image, sigma: f64) -> Result<Image> {
    background.check_same_shape(foreground)?;
    if mask.width() != background.width() || mask.height() != background.height() || mask.channels() != 1 {
        return Err(Error::Shape { expected: format!("{}x{}x1 mask", background.width(), background.height()), got: mask.shape_str() });
    }
    let mf = gaussian_feather(mask, sigma);
    let mut out = background.clone();
    for y in 0..out.height() {
        for x in 0..out.width() {
            let m = mf.get(x, y, 0);
            if m == 0.0 {
                continue;
            }
            let fg = foreground.pixel(x, y);
            for (c, o) in out.pixel_mut(x, y).iter_mut().enumerate() {
                *o = (fg[c] * m + *o * (1.0 - m)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// KITTI object label. Location is the bottom center in the camera frame
/// with y pointing down.
#[derive(Debug, Clone, PartialEq)]
pub struct KittiLabel {
    pub class: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    pub h: f64,
    pub w: f64,
    pub l: f64,
    pub location: [f64; 3],
    pub rotation_y: f64,
}

fn heading_world_to_camera(theta: f64, cam_pose: &RigidPose) -> f64 {
    if cam_pose.rotation == Mat3::IDENTITY {
        return theta;
    }
    let hw = Vec3::new(cos(theta), 0.0, -sin(theta));
    let hc = cam_pose.inverse_transform_dir(hw);
    wrap_angle(atan2(-hc.z, hc.x))
}

fn heading_camera_to_world(ry: f64, cam_pose: &RigidPose) -> f64 {
    if cam_pose.rotation == Mat3::IDENTITY {
        return ry;
    }
    let hw = cam_pose.transform_dir(Vec3::new(cos(ry), 0.0, -sin(ry)));
    wrap_angle(atan2(-hw.z, hw.x))
}

/// Image rectangle `[x1, y1, x2, y2]` of the projected box corners, clipped
/// to the image. `None` if a corner is behind the camera.
pub fn projected_box(pose: &BoxPose, cam: &CameraIntrinsics, cam_pose: &RigidPose) -> Option<[f64; 4]> {
    let mut r = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for c in pose.corners() {
        if cam_pose.inverse_transform_point(c).z < MIN_CORNER_DEPTH {
            return None;
        }
        let (u, v) = project(cam, cam_pose, c)?;
        r = [r[0].min(u), r[1].min(v), r[2].max(u), r[3].max(v)];
    }
    let (w, h) = (cam.width as f64, cam.height as f64);
    Some([r[0].clamp(0.0, w), r[1].clamp(0.0, h), r[2].clamp(0.0, w), r[3].clamp(0.0, h)])
}

impl KittiLabel {
    pub fn from_box(pose: &BoxPose, cam: &CameraIntrinsics, cam_pose: &RigidPose) -> Self {
        let bottom = Vec3::new(pose.x, pose.y - pose.h / 2.0, pose.z);
        let c = cam_pose.inverse_transform_point(bottom);
        let location = [c.x, -c.y, c.z];
        let rotation_y = heading_world_to_camera(pose.theta, cam_pose);
        let alpha = wrap_angle(rotation_y - atan2(location[0], location[2]));
        KittiLabel {
            class: String::from("Car"),
            truncated: 0.0,
            occluded: 0,
            alpha,
            bbox: projected_box(pose, cam, cam_pose).unwrap_or([0.0; 4]),
            h: pose.h,
            w: pose.w,
            l: pose.l,
            location,
            rotation_y,
        }
    }

    /// World box described by the label for a camera at `cam_pose`.
    pub fn to_box(&self, cam_pose: &RigidPose) -> BoxPose {
        let bottom = cam_pose.transform_point(Vec3::new(self.location[0], -self.location[1], self.location[2]));
        BoxPose {
            x: bottom.x,
            y: bottom.y + self.h / 2.0,
            z: bottom.z,
            l: self.l,
            w: self.w,
            h: self.h,
            theta: heading_camera_to_world(self.rotation_y, cam_pose),
        }
    }

    pub fn to_line(&self) -> String {
        let d = LABEL_DECIMALS as usize;
        let mut s = format!("{} {:.d$} {} {:.d$}", self.class, self.truncated, self.occluded, self.alpha);
        for v in self.bbox.iter().chain(&[self.h, self.w, self.l]).chain(&self.location).chain(&[self.rotation_y]) {
            s.push_str(&format!(" {:.d$}", v));
        }
        s
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 15 {
            return Err(config(format!("label line has {} fields, expected 15: {line:?}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|_| config(format!("field {} of label is not a number: {:?}", i + 1, fields[i])))
        };
        let occluded = fields[2].parse::<f64>().map_err(|_| config(format!("bad occlusion value {:?}", fields[2])))? as i32;
        Ok(KittiLabel {
            class: fields[0].to_string(),
            truncated: num(1)?,
            occluded,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
            h: num(8)?,
            w: num(9)?,
            l: num(10)?,
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeConfig {
    pub num_objects: usize,
    /// Samples tried per requested object before giving up on it.
    pub retry_budget: usize,
    /// Largest accepted fraction of a new mask covered by earlier objects.
    pub max_overlap: f64,
    pub feather_sigma: f64,
    pub shadow_strength: f64,
    pub samples_per_ray: usize,
    pub bbox_source: BoxSource,
}

/// Where the 2D box of an emitted label comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoxSource {
    #[default]
    ProjectedCorners,
    /// Pixel extent of the rendered object mask.
    MaskExtents,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            num_objects: 3,
            retry_budget: 50,
            max_overlap: 0.3,
            feather_sigma: 1.0,
            shadow_strength: 0.4,
            samples_per_ray: 64,
            bbox_source: BoxSource::ProjectedCorners,
        }
    }
}

/// `[x1, y1, x2, y2]` pixel-edge extent of the foreground of `mask`.
pub fn mask_extents(mask: &Image) -> Option<[f64; 4]> {
    let mut r: Option<[usize; 4]> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y, 0) >= 0.5 {
                let e = r.get_or_insert([x, y, x, y]);
                *e = [e[0].min(x), e[1].min(y), e[2].max(x), e[3].max(y)];
            }
        }
    }
    r.map(|[x0, y0, x1, y1]| [x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64])
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedObject {
    pub pose: BoxPose,
    pub latent: usize,
    /// Full-frame hard mask of the rendered object before occlusion.
    pub mask: Image,
    /// Full-frame unpremultiplied object color.
    pub rgb: Image,
    pub label: KittiLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeScene {
    pub image: Image,
    /// Placed objects, back to front.
    pub objects: Vec<PlacedObject>,
    /// Samples rejected across all slots.
    pub rejected: usize,
    /// Requested objects that could not be placed within the retry budget.
    pub missing: usize,
}

impl CompositeScene {
    pub fn label_text(&self) -> String {
        let mut s = String::new();
        for o in &self.objects {
            s.push_str(&o.label.to_line());
            s.push('\n');
        }
        s
    }
}

/// Lifted objects available for insertion.
pub struct ObjectBank<'a> {
    params: &'a GeneratorParams,
    latents: &'a [LatentCode],
    cache: Vec<Option<(StyleVector, TriPlaneField)>>,
}

impl<'a> ObjectBank<'a> {
    pub fn new(params: &'a GeneratorParams, latents: &'a [LatentCode]) -> Result<Self> {
        if latents.is_empty() {
            return Err(config("no latent codes to compose from"));
        }
        Ok(ObjectBank { params, latents, cache: (0..latents.len()).map(|_| None).collect() })
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    fn field(&mut self, i: usize) -> Result<&(StyleVector, TriPlaneField)> {
        if self.cache[i].is_none() {
            self.cache[i] = Some(self.params.generate(&self.latents[i])?);
        }
        Ok(self.cache[i].as_ref().expect("filled above"))
    }

    /// Full-frame hard mask and unpremultiplied color of object `i` placed at
    /// `pose`, rendering only the projected box rectangle.
    pub fn render(&mut self, i: usize, pose: &BoxPose, calib: &Calibration, samples_per_ray: usize) -> Result<Option<(Image, Image)>> {
        let cam = calib.camera;
        let Some(r) = projected_box(pose, &cam, &calib.pose) else {
            return Ok(None);
        };
        let window = PixelWindow {
            x0: libm::floor(r[0]) as usize,
            y0: libm::floor(r[1]) as usize,
            x1: (libm::ceil(r[2]) as usize).min(cam.width),
            y1: (libm::ceil(r[3]) as usize).min(cam.height),
        };
        let (style, field) = self.field(i)?;
        let cond = field.conditioned(style)?;
        let spec = RaySampleSpec { samples_per_ray, stratified: false };
        let out = render_window(&cond, &cam, &calib.pose, pose, &spec, window)?;
        Ok(Some((out.mask.clone(), out.unpremultiplied())))
    }
}

fn mask_area(m: &Image) -> usize {
    m.data().iter().filter(|&&v| v >= 0.5).count()
}

/// Samples, filters, renders and paints up to `cfg.num_objects` objects
/// into `background`.
#[allow(clippy::too_many_arguments)]
pub fn compose_frame(
    background: &Image,
    calib: &Calibration,
    bank: &mut ObjectBank<'_>,
    dist: &SampleDistributions,
    map: Option<&DrivableMap>,
    shadow: &Image,
    cfg: &ComposeConfig,
    rng: &mut Rng,
) -> Result<CompositeScene> {
    dist.validate()?;
    let cam = calib.camera;
    if background.width() != cam.width || background.height() != cam.height || background.channels() != 3 {
        return Err(Error::Shape { expected: format!("{}x{}x3 background", cam.width, cam.height), got: background.shape_str() });
    }
    let mut occupied = Image::new(cam.width, cam.height, 1);
    let mut placed: Vec<PlacedObject> = Vec::new();
    let mut rejected = 0;
    let mut missing = 0;
    for slot in 0..cfg.num_objects {
        let mut done = false;
        for _ in 0..cfg.retry_budget {
            let pose = sample_pose(dist, rng);
            let latent = rng.below(bank.len());
            if let Some(m) = map {
                if !filter_drivable(&pose, m) {
                    rejected += 1;
                    continue;
                }
            }
            let on_screen = project(&cam, &calib.pose, pose.center()).is_some_and(|(u, v)| cam.contains_pixel(u, v));
            if !on_screen {
                rejected += 1;
                continue;
            }
            let Some((mask, rgb)) = bank.render(latent, &pose, calib, cfg.samples_per_ray)? else {
                rejected += 1;
                continue;
            };
            let area = mask_area(&mask);
            let overlap = mask.data().iter().zip(occupied.data()).filter(|(&a, &b)| a >= 0.5 && b >= 0.5).count();
            if area == 0 || overlap as f64 > cfg.max_overlap * area as f64 {
                rejected += 1;
                continue;
            }
            for (o, &m) in occupied.data_mut().iter_mut().zip(mask.data()) {
                if m >= 0.5 {
                    *o = 1.0;
                }
            }
            let mut label = KittiLabel::from_box(&pose, &cam, &calib.pose);
            if cfg.bbox_source == BoxSource::MaskExtents {
                label.bbox = mask_extents(&mask).unwrap_or(label.bbox);
            }
            placed.push(PlacedObject { pose, latent, mask, rgb, label });
            done = true;
            break;
        }
        if !done {
            log::warn!("object slot {slot}: retry budget of {} exhausted", cfg.retry_budget);
            missing += 1;
        }
    }
    let depth = |p: &PlacedObject| calib.pose.inverse_transform_point(p.pose.center()).z;
    placed.sort_by(|a, b| depth(b).total_cmp(&depth(a)));
    let mut image = background.clone();
    for obj in &placed {
        cast_shadow(&mut image, &obj.pose, &cam, &calib.pose, shadow, cfg.shadow_strength);
        let mut fg = image.clone();
        for y in 0..cam.height {
            for x in 0..cam.width {
                if obj.mask.get(x, y, 0) >= 0.5 {
                    fg.pixel_mut(x, y).copy_from_slice(obj.rgb.pixel(x, y));
                }
            }
        }
        image = blend(&image, &fg, &obj.mask, cfg.feather_sigma)?;
    }
    Ok(CompositeScene { image, objects: placed, rejected, missing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn kitti_calib(w: usize, h: usize, f: f64) -> Calibration {
        Calibration {
            camera: CameraIntrinsics::new(f, f, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap(),
            pose: RigidPose::IDENTITY,
            cam_height_m: 1.65,
        }
    }

    #[test]
    fn degenerate_distributions_return_means() {
        let mut d = SampleDistributions::cars(-1.65);
        d.x = (3.0, 3.0);
        d.z = (12.0, 12.0);
        for g in [&mut d.y, &mut d.l, &mut d.w, &mut d.h] {
            g.1 = 1e-9;
        }
        d.yaw_std = 1e-9;
        let mut rng = Rng::new(1, Stream::Compose);
        for _ in 0..20 {
            let p = sample_pose_raw(&d, &mut rng);
            assert!((p.x - 3.0).abs() < 1e-12 && (p.z - 12.0).abs() < 1e-12);
            assert!((p.y_bottom + 1.65).abs() < 1e-7 && (p.l - 3.88).abs() < 1e-7 && (p.h - 1.53).abs() < 1e-7);
            assert!((p.theta.abs() - PI / 2.0).abs() < 1e-7);
        }
    }

    #[test]
    fn x_stays_in_range_and_z_mean_is_centered() {
        let d = SampleDistributions::cars(-1.65);
        let mut rng = Rng::new(2, Stream::Compose);
        let n = 100_000;
        let mut zsum = 0.0;
        for _ in 0..n {
            let p = sample_pose(&d, &mut rng);
            assert!((-20.0..=20.0).contains(&p.x));
            zsum += p.z;
        }
        let mean = zsum / n as f64;
        assert!((24.5..=25.5).contains(&mean), "{mean}");
    }

    #[test]
    fn drivable_filter_trivial_maps() {
        let ones = DrivableMap::filled(GridSpec::default(), true).unwrap();
        let zeros = DrivableMap::filled(GridSpec::default(), false).unwrap();
        let d = SampleDistributions::cars(-1.65);
        let mut rng = Rng::new(3, Stream::Compose);
        for _ in 0..1000 {
            let p = sample_pose(&d, &mut rng);
            assert!(filter_drivable(&p, &ones));
            assert!(!filter_drivable(&p, &zeros));
        }
        let far = BoxPose { x: 0.0, y: 0.0, z: 80.0, l: 4.0, w: 2.0, h: 1.5, theta: 0.0 };
        assert!(!filter_drivable(&far, &ones));
    }

    #[test]
    fn half_plane_map_flips_at_zero() {
        let mut map = DrivableMap::filled(GridSpec::default(), false).unwrap();
        for j in 0..map.rows {
            for i in 0..map.cols {
                if map.cell_center(i, j).0 >= 0.0 {
                    map.set(i, j, true);
                }
            }
        }
        let at = |x: f64| BoxPose { x, y: -0.9, z: 20.0, l: 4.0, w: 1.8, h: 1.5, theta: 0.3 };
        assert!(filter_drivable(&at(0.0), &map));
        assert!(filter_drivable(&at(1e-9), &map));
        assert!(!filter_drivable(&at(-1e-9), &map));
    }

    #[test]
    fn ipm_map_trivial_masks() {
        let calib = kitti_calib(80, 60, 60.0);
        let spec = GridSpec { cols: 40, rows: 40, cell: 0.5, origin: (-10.0, 0.0) };
        let empty = ipm_drivable_map(&Image::new(80, 60, 1), &calib, spec).unwrap();
        assert_eq!(empty.count(), 0);
        let full = ipm_drivable_map(&Image::filled(80, 60, 1, 1.0), &calib, spec).unwrap();
        for j in 0..40 {
            for i in 0..40 {
                let (x, z) = full.cell_center(i, j);
                let visible = project(&calib.camera, &calib.pose, Vec3::new(x, -1.65, z))
                    .is_some_and(|(u, v)| u >= 0.0 && v >= 0.0 && u < 80.0 && v < 60.0);
                assert_eq!(full.get(i, j), visible);
            }
        }
        assert!(full.count() > 0);
    }

    #[test]
    fn ipm_map_single_pixel() {
        let calib = kitti_calib(80, 60, 60.0);
        let spec = GridSpec { cols: 80, rows: 80, cell: 0.25, origin: (-10.0, 0.0) };
        let mut mask = Image::new(80, 60, 1);
        mask.set(40, 50, 0, 1.0);
        let map = ipm_drivable_map(&mask, &calib, spec).unwrap();
        for j in 0..80 {
            for i in 0..80 {
                let (x, z) = map.cell_center(i, j);
                let hits = project(&calib.camera, &calib.pose, Vec3::new(x, -1.65, z))
                    .is_some_and(|(u, v)| u >= 40.0 && u < 41.0 && v >= 50.0 && v < 51.0);
                assert_eq!(map.get(i, j), hits);
            }
        }
    }

    #[test]
    fn shadow_cases() {
        let calib = kitti_calib(80, 60, 60.0);
        let bg = Image::filled(80, 60, 3, 0.8);
        let pose = BoxPose { x: 0.0, y: -1.65 + 0.75, z: 10.0, l: 4.0, w: 2.0, h: 1.5, theta: 0.4 };
        let mut f = bg.clone();
        cast_shadow(&mut f, &pose, &calib.camera, &calib.pose, &default_shadow_sprite(32), 0.0);
        assert_eq!(f, bg);
        let behind = BoxPose { z: -10.0, ..pose };
        cast_shadow(&mut f, &behind, &calib.camera, &calib.pose, &default_shadow_sprite(32), 0.4);
        assert_eq!(f, bg);
        cast_shadow(&mut f, &pose, &calib.camera, &calib.pose, &Image::filled(4, 4, 1, 1.0), 0.5);
        let mut halved = 0;
        for y in 0..60 {
            for x in 0..80 {
                let v = f.get(x, y, 0);
                assert!(v == 0.8 || v == 0.4);
                if v == 0.4 {
                    halved += 1;
                    let p = ipm_ground(&calib.camera, &calib.pose, -1.65, x as f64 + 0.5, y as f64 + 0.5).unwrap();
                    let local = pose.rotation().transpose() * (p.to_world(-1.65) - Vec3::new(0.0, -1.65, 10.0));
                    assert!(local.x.abs() <= 2.0 + 1e-9 && local.z.abs() <= 1.0 + 1e-9);
                }
            }
        }
        assert!(halved > 10);
    }

    #[test]
    fn blend_identities() {
        let bg = Image::from_fn(9, 7, 3, |x, y, c| ((x * 31 + y * 17 + c * 5) % 256) as f64 / 255.0);
        let fg = Image::from_fn(9, 7, 3, |x, y, c| ((x * 7 + y * 3 + c * 11) % 256) as f64 / 255.0);
        assert_eq!(blend(&bg, &fg, &Image::filled(9, 7, 1, 1.0), 0.0).unwrap(), fg);
        assert_eq!(blend(&bg, &fg, &Image::filled(9, 7, 1, 1.0), 1.5).unwrap(), fg);
        assert_eq!(blend(&bg, &fg, &Image::new(9, 7, 1), 1.5).unwrap(), bg);
        assert!(blend(&bg, &fg, &Image::new(8, 7, 1), 1.0).is_err());
    }

    #[test]
    fn feather_matches_direct_convolution() {
        let mask = Image::from_fn(12, 9, 1, |x, _, _| if x >= 6 { 1.0 } else { 0.0 });
        let sigma = 1.0;
        let out = gaussian_feather(&mask, sigma);
        let r = 3isize;
        let g = |d: isize| exp(-((d * d) as f64) / 2.0);
        for y in 0..9 {
            for x in 0..12 {
                let (mut num, mut den) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x as isize + dx).clamp(0, 11) as usize;
                        let sy = (y as isize + dy).clamp(0, 8) as usize;
                        num += g(dx) * g(dy) * mask.get(sx, sy, 0);
                        den += g(dx) * g(dy);
                    }
                }
                assert!((out.get(x, y, 0) - num / den).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn blend_is_convex() {
        let bg = Image::from_fn(10, 10, 3, |x, _, _| x as f64 / 10.0);
        let fg = Image::from_fn(10, 10, 3, |_, y, _| y as f64 / 10.0);
        let m = Image::from_fn(10, 10, 1, |x, y, _| if (x + y) % 3 == 0 { 1.0 } else { 0.0 });
        let out = blend(&bg, &fg, &m, 1.2).unwrap();
        for i in 0..out.data().len() {
            let (a, b) = (bg.data()[i], fg.data()[i]);
            assert!(out.data()[i] >= a.min(b) - 1e-12 && out.data()[i] <= a.max(b) + 1e-12);
        }
    }

    #[test]
    fn label_round_trip_is_exact() {
        let calib = kitti_calib(1242, 375, 721.5);
        let d = SampleDistributions::cars(calib.ground_height());
        let mut rng = Rng::new(4, Stream::Compose);
        for _ in 0..2000 {
            let p = sample_pose(&d, &mut rng);
            let label = KittiLabel::from_box(&p, &calib.camera, &calib.pose);
            let parsed = KittiLabel::parse(&label.to_line()).unwrap();
            assert_eq!(parsed.to_box(&calib.pose), p);
        }
    }

    #[test]
    fn label_round_trip_with_rotated_camera() {
        let cam = CameraIntrinsics::new(700.0, 700.0, 600.0, 180.0, 1200, 360).unwrap();
        let pose = RigidPose::new(Mat3::rot_y(0.3), Vec3::new(1.0, 0.5, -2.0)).unwrap();
        let b = BoxPose { x: 3.0, y: -0.4, z: 20.0, l: 4.1, w: 1.7, h: 1.5, theta: 2.0 };
        let label = KittiLabel::from_box(&b, &cam, &pose);
        let back = label.to_box(&pose);
        for (a, c) in [(b.x, back.x), (b.y, back.y), (b.z, back.z), (b.theta, back.theta)] {
            assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_equals_ry_on_the_optical_axis() {
        let calib = kitti_calib(100, 100, 100.0);
        let b = BoxPose { x: 0.0, y: -1.0, z: 20.0, l: 4.0, w: 1.7, h: 1.3, theta: 0.7 };
        let label = KittiLabel::from_box(&b, &calib.camera, &calib.pose);
        assert!((label.alpha - 0.7).abs() < 1e-12);
        assert!((label.location[1] - 1.65).abs() < 1e-12);
    }

    #[test]
    fn projected_box_rejects_boxes_behind_camera() {
        let calib = kitti_calib(100, 100, 100.0);
        let b = BoxPose { x: 0.0, y: -1.0, z: 0.5, l: 4.0, w: 1.7, h: 1.3, theta: 0.0 };
        assert!(projected_box(&b, &calib.camera, &calib.pose).is_none());
    }

    #[test]
    fn mask_extents_cover_foreground_pixels() {
        assert_eq!(mask_extents(&Image::new(5, 4, 1)), None);
        let mut m = Image::new(6, 5, 1);
        m.set(1, 3, 0, 1.0);
        m.set(4, 1, 0, 0.5);
        m.set(5, 0, 0, 0.49);
        assert_eq!(mask_extents(&m), Some([1.0, 1.0, 5.0, 4.0]));
    }
}
