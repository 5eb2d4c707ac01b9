//! Procedural "vehicles" built from analytic primitives, rendered exactly.
//!
//! A scene is generated in meters, then each axis is mapped affinely onto
//! `[-EXTENT, EXTENT]` so the object fills its normalized box the same way a
//! lifted object fills the 3D box it is later composited into.

use crate::error::Result;
use crate::geometry::{orbit_pose, pixel_center_ray, sample_view_schedule, CameraIntrinsics, Ray, RigidPose, ViewSample, ViewSchedule};
use crate::image::Image;
use crate::math::{floor, sqrt, Vec3};
use crate::optim::PosedImage;
use crate::rng::{Rng, Stream};
use alloc::vec::Vec;

/// Half-extent of a normalized scene along every axis.
pub const EXTENT: f64 = 0.9;

const AMBIENT: f64 = 0.35;

/// Default image side and focal length for lifting views.
pub const VIEW_SIZE: usize = 64;
pub const VIEW_FOCAL: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Box,
    Ellipsoid,
    /// Axis along z (the vehicle's width direction).
    Cylinder,
}

/// Axis-aligned primitive: the unit shape scaled by `half` and moved to
/// `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub center: Vec3,
    pub half: Vec3,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub normal: Vec3,
    pub albedo: [f64; 3],
}

impl Primitive {
    /// Nearest entry point with `t > ray.near`.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let o = (ray.origin - self.center).div_elem(self.half);
        let d = ray.direction.div_elem(self.half);
        let (t, n_local) = match self.shape {
            Shape::Box => unit_box(o, d)?,
            Shape::Ellipsoid => unit_sphere(o, d)?,
            Shape::Cylinder => unit_cylinder(o, d)?,
        };
        if !(t > ray.near && t < ray.far) {
            return None;
        }
        let normal = n_local.div_elem(self.half).normalized();
        Some(Hit { t, normal, albedo: self.albedo })
    }

    pub fn contains(&self, p: Vec3) -> bool {
        let q = (p - self.center).div_elem(self.half);
        match self.shape {
            Shape::Box => q.x.abs() <= 1.0 && q.y.abs() <= 1.0 && q.z.abs() <= 1.0,
            Shape::Ellipsoid => q.dot(q) <= 1.0,
            Shape::Cylinder => q.x * q.x + q.y * q.y <= 1.0 && q.z.abs() <= 1.0,
        }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        (self.center - self.half, self.center + self.half)
    }
}

fn unit_box(o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut axis = 0;
    let mut sign = 0.0;
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a].abs() > 1.0 {
                return None;
            }
            continue;
        }
        let ta = (-1.0 - o[a]) / d[a];
        let tb = (1.0 - o[a]) / d[a];
        let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
        if lo > t0 {
            t0 = lo;
            axis = a;
            sign = if d[a] > 0.0 { -1.0 } else { 1.0 };
        }
        t1 = t1.min(hi);
    }
    if t0 > t1 || t0 <= 0.0 {
        return None;
    }
    let mut n = [0.0; 3];
    n[axis] = sign;
    Some((t0, Vec3::from_array(n)))
}

fn unit_sphere(o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    let a = d.dot(d);
    let b = o.dot(d);
    let c = o.dot(o) - 1.0;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = (-b - sqrt(disc)) / a;
    if t <= 0.0 {
        return None;
    }
    Some((t, o + d * t))
}

fn unit_cylinder(o: Vec3, d: Vec3) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, Vec3)> = None;
    let a = d.x * d.x + d.y * d.y;
    if a > 0.0 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - 1.0;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let t = (-b - sqrt(disc)) / a;
            let p = o + d * t;
            if t > 0.0 && p.z.abs() <= 1.0 {
                best = Some((t, Vec3::new(p.x, p.y, 0.0)));
            }
        }
    }
    if d.z != 0.0 {
        for s in [-1.0, 1.0] {
            let t = (s - o.z) / d.z;
            let p = o + d * t;
            if t > 0.0 && p.x * p.x + p.y * p.y <= 1.0 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, Vec3::new(0.0, 0.0, s)));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveScene {
    pub primitives: Vec<Primitive>,
    /// Unit vector towards the light.
    pub light: Vec3,
}

impl PrimitiveScene {
    pub fn new(primitives: Vec<Primitive>) -> Self {
        PrimitiveScene { primitives, light: Vec3::new(0.4, 0.8, -0.45).normalized() }
    }

    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(ray))
            .fold(None, |best: Option<Hit>, h| if best.is_none_or(|b| h.t < b.t) { Some(h) } else { best })
    }

    pub fn shade(&self, hit: &Hit) -> [f64; 3] {
        let lambert = hit.normal.dot(self.light).max(0.0);
        let k = AMBIENT + (1.0 - AMBIENT) * lambert;
        [hit.albedo[0] * k, hit.albedo[1] * k, hit.albedo[2] * k]
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for p in &self.primitives {
            let (a, b) = p.bounds();
            lo = Vec3::new(lo.x.min(a.x), lo.y.min(a.y), lo.z.min(a.z));
            hi = Vec3::new(hi.x.max(b.x), hi.y.max(b.y), hi.z.max(b.z));
        }
        (lo, hi)
    }

    /// Maps each axis of the bounding box onto `[-extent, extent]`.
    pub fn normalized(&self, extent: f64) -> PrimitiveScene {
        let (lo, hi) = self.bounds();
        let mid = (lo + hi) * 0.5;
        let scale = Vec3::new(2.0 * extent / (hi.x - lo.x), 2.0 * extent / (hi.y - lo.y), 2.0 * extent / (hi.z - lo.z));
        let primitives = self
            .primitives
            .iter()
            .map(|p| Primitive { center: (p.center - mid).mul_elem(scale), half: p.half.mul_elem(scale), ..*p })
            .collect();
        PrimitiveScene { primitives, light: self.light }
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h - floor(h)) * 6.0;
    let i = floor(h6) as usize % 6;
    let f = h6 - floor(h6);
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Car-like scene for `seed`: body box, cabin box and four wheels, with
/// seeded proportions and palette, normalized to [`EXTENT`].
pub fn gen_scene(seed: u64) -> PrimitiveScene {
    let mut rng = Rng::indexed(seed, Stream::Data, 0x5CE7E);
    let length = rng.range(3.8, 4.8);
    let width = rng.range(1.6, 1.95);
    let body_h = rng.range(0.5, 0.8);
    let wheel_r = rng.range(0.3, 0.4);
    let clearance = wheel_r * rng.range(0.5, 0.8);
    let cabin_l = length * rng.range(0.45, 0.65);
    let cabin_h = rng.range(0.4, 0.6);
    let cabin_dx = length * rng.range(-0.15, 0.08);

    let body = hsv(rng.uniform(), rng.range(0.45, 0.9), rng.range(0.55, 0.95));
    let shade = rng.range(0.45, 0.7);
    let cabin = [body[0] * shade + 0.08, body[1] * shade + 0.1, body[2] * shade + 0.14];
    let tyre_v = rng.range(0.08, 0.2);
    let tyre = [tyre_v, tyre_v, tyre_v];

    let body_y = clearance + body_h / 2.0;
    let mut prims = alloc::vec![
        Primitive { shape: Shape::Box, center: Vec3::new(0.0, body_y, 0.0), half: Vec3::new(length / 2.0, body_h / 2.0, width / 2.0), albedo: body },
        Primitive {
            shape: Shape::Box,
            center: Vec3::new(cabin_dx, clearance + body_h + cabin_h / 2.0, 0.0),
            half: Vec3::new(cabin_l / 2.0, cabin_h / 2.0, width * 0.44),
            albedo: cabin,
        },
    ];
    let wx = length / 2.0 - 1.4 * wheel_r;
    let wz = width / 2.0 - 0.1;
    for sx in [-1.0, 1.0] {
        for sz in [-1.0, 1.0] {
            prims.push(Primitive {
                shape: Shape::Cylinder,
                center: Vec3::new(sx * wx, wheel_r, sz * wz),
                half: Vec3::new(wheel_r, wheel_r, 0.13),
                albedo: tyre,
            });
        }
    }
    PrimitiveScene::new(prims).normalized(EXTENT)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRender {
    pub rgb: Image,
    pub mask: Image,
    /// Distance along the unit ray to the nearest hit, 0 for background.
    pub depth: Image,
}

/// Exact nearest-hit render at pixel centers over a black background.
pub fn render_oracle(scene: &PrimitiveScene, cam: &CameraIntrinsics, pose: &RigidPose) -> OracleRender {
    let (w, h) = (cam.width, cam.height);
    let mut out = OracleRender { rgb: Image::new(w, h, 3), mask: Image::new(w, h, 1), depth: Image::new(w, h, 1) };
    for y in 0..h {
        for x in 0..w {
            let ray = pixel_center_ray(cam, pose, x, y);
            if let Some(hit) = scene.intersect(&ray) {
                out.rgb.pixel_mut(x, y).copy_from_slice(&scene.shade(&hit));
                out.mask.set(x, y, 0, 1.0);
                out.depth.set(x, y, 0, hit.t);
            }
        }
    }
    out
}

/// Gaussian pose-label noise in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseJitter {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

/// One rendered view with its (possibly jittered) pose label.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleView {
    pub sample: ViewSample,
    pub image: PosedImage,
    pub depth: Image,
}

/// Renders `scene` from every pose of the schedule. With jitter, the image
/// is rendered from the true pose while the label carries the noisy one.
pub fn render_views(
    scene: &PrimitiveScene,
    schedule: &ViewSchedule,
    cam: &CameraIntrinsics,
    seed: u64,
    jitter: PoseJitter,
) -> Result<Vec<OracleView>> {
    let samples = sample_view_schedule(schedule, seed)?;
    let mut rng = Rng::indexed(seed, Stream::Noise, 0);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let r = render_oracle(scene, cam, &s.pose);
        let label = if jitter == PoseJitter::default() {
            s
        } else {
            let az = s.azimuth_deg + rng.normal(0.0, jitter.azimuth_deg);
            let el = s.elevation_deg + rng.normal(0.0, jitter.elevation_deg);
            ViewSample { azimuth_deg: az, elevation_deg: el, pose: orbit_pose(az, el, schedule.radius)? }
        };
        let image = PosedImage::new(r.rgb, r.mask, label.pose, *cam)?;
        out.push(OracleView { sample: label, image, depth: r.depth });
    }
    Ok(out)
}

/// A generated object with the seeds that reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleObject {
    pub shape_seed: u64,
    pub view_seed: u64,
    pub scene: PrimitiveScene,
    pub views: Vec<OracleView>,
}

/// Scenes and views for `count` objects. Object `i` takes its seeds from
/// index `i` of the data stream, so growing a dataset keeps its first objects.
pub fn gen_objects(count: usize, schedule: &ViewSchedule, cam: &CameraIntrinsics, seed: u64, jitter: PoseJitter) -> Result<Vec<OracleObject>> {
    if count == 0 {
        return Err(crate::error::domain("object count must be at least 1"));
    }
    (0..count as u64)
        .map(|i| {
            let mut rng = Rng::indexed(seed, Stream::Data, i);
            let (shape_seed, view_seed) = (rng.next_u64(), rng.next_u64());
            let scene = gen_scene(shape_seed);
            let views = render_views(&scene, schedule, cam, view_seed, jitter)?;
            Ok(OracleObject { shape_seed, view_seed, scene, views })
        })
        .collect()
}

/// Poses evenly spread in azimuth and offset from a stratified schedule's
/// bin centers, used as held-out views.
pub fn held_out_poses(count: usize, elevation_deg: f64, radius: f64) -> Result<Vec<RigidPose>> {
    (0..count)
        .map(|i| orbit_pose(360.0 * (i as f64 + 0.25) / count as f64 + 7.0, elevation_deg, radius))
        .collect()
}

/// Pixel radius of a sphere of radius `r` at distance `dist` on the optical
/// axis.
pub fn sphere_disc_radius(focal: f64, r: f64, dist: f64) -> f64 {
    focal * r / sqrt(dist * dist - r * r)
}
