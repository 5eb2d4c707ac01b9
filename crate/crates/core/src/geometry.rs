//! Pinhole cameras, rigid poses, rays, ray/box intersection, oriented object
//! boxes, ground-plane inverse perspective mapping and orbit view schedules.

use crate::error::{domain, Result};
use crate::math::{cos, deg_to_rad, sin, Mat3, Vec3};
use crate::rng::{Rng, Stream};
use alloc::format;
use alloc::vec::Vec;

const ORTHO_TOL: f64 = 1e-9;

/// Pinhole intrinsics. Pixel `(u, v)` has its origin at the top-left image
/// corner; pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and its center is at
/// `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(domain(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(domain(format!("principal point ({cx}, {cy}) outside {width}x{height} image")));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy, width, height })
    }

    /// Square image with the principal point at the center and the given
    /// focal length in pixels.
    pub fn centered(size: usize, focal: f64) -> Result<Self> {
        let c = size as f64 / 2.0;
        Self::new(focal, focal, c, c, size, size)
    }

    /// Same field of view at a different resolution.
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics { fx: self.fx * sx, fy: self.fy * sy, cx: self.cx * sx, cy: self.cy * sy, width, height }
    }

    /// Unnormalized camera-frame direction through pixel coordinate `(u, v)`.
    #[inline]
    pub fn camera_dir(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, -(v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` for points not in front of the camera.
    #[inline]
    pub fn project_camera(&self, p: Vec3) -> Option<(f64, f64)> {
        if p.z <= 0.0 {
            return None;
        }
        Some((self.cx + self.fx * p.x / p.z, self.cy - self.fy * p.y / p.z))
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.width as f64 && v <= self.height as f64
    }
}

/// Proper rigid transform mapping local coordinates into the parent frame:
/// `p_parent = rotation * p_local + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidPose {
    pub const IDENTITY: RigidPose = RigidPose { rotation: Mat3::IDENTITY, translation: Vec3::ZERO };

    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let e = rotation.orthonormality_error();
        if !(e <= ORTHO_TOL) {
            return Err(domain(format!("rotation is not orthonormal (error {e:e})")));
        }
        let d = rotation.det();
        if !((d - 1.0).abs() <= ORTHO_TOL) {
            return Err(domain(format!("rotation determinant {d} is not +1")));
        }
        if !translation.is_finite() {
            return Err(domain("translation is not finite"));
        }
        Ok(RigidPose { rotation, translation })
    }

    /// Rows of the 3x4 `[R | t]` matrix.
    pub fn to_3x4(&self) -> [[f64; 4]; 3] {
        let r = &self.rotation.m;
        let t = self.translation;
        [[r[0][0], r[0][1], r[0][2], t.x], [r[1][0], r[1][1], r[1][2], t.y], [r[2][0], r[2][1], r[2][2], t.z]]
    }

    pub fn from_3x4(m: &[[f64; 4]; 3]) -> Result<Self> {
        let rot = Mat3::from_rows([[m[0][0], m[0][1], m[0][2]], [m[1][0], m[1][1], m[1][2]], [m[2][0], m[2][1], m[2][2]]]);
        Self::new(rot, Vec3::new(m[0][3], m[1][3], m[2][3]))
    }

    /// Camera at `eye` looking at `target`, with camera up aligned to world +y.
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Self> {
        let forward = target - eye;
        if !(forward.norm() > 0.0) {
            return Err(domain("look_at eye and target coincide"));
        }
        let forward = forward.normalized();
        let right = Vec3::new(0.0, 1.0, 0.0).cross(forward);
        if !(right.norm() > 1e-12) {
            return Err(domain("look_at direction is parallel to the up axis"));
        }
        let right = right.normalized();
        let up = forward.cross(right);
        Ok(RigidPose { rotation: Mat3::from_cols(right, up, forward), translation: eye })
    }

    #[inline]
    pub fn transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn inverse_transform_point(&self, p: Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    #[inline]
    pub fn transform_dir(&self, d: Vec3) -> Vec3 {
        self.rotation * d
    }

    #[inline]
    pub fn inverse_transform_dir(&self, d: Vec3) -> Vec3 {
        self.rotation.transpose() * d
    }

    pub fn inverse(&self) -> RigidPose {
        let rt = self.rotation.transpose();
        RigidPose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        RigidPose { rotation: self.rotation * other.rotation, translation: self.transform_point(other.translation) }
    }
}

/// Half-line `origin + t * direction` restricted to `[near, far]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Ray { origin, direction: direction.normalized(), near: 0.0, far: f64::INFINITY }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

/// World ray through pixel coordinate `(u, v)` of a camera whose
/// camera-to-world transform is `pose`.
pub fn pixel_ray(cam: &CameraIntrinsics, pose: &RigidPose, u: f64, v: f64) -> Result<Ray> {
    if !cam.contains_pixel(u, v) {
        return Err(domain(format!("pixel ({u}, {v}) outside {}x{} image", cam.width, cam.height)));
    }
    Ok(pixel_ray_unchecked(cam, pose, u, v))
}

#[inline]
pub(crate) fn pixel_ray_unchecked(cam: &CameraIntrinsics, pose: &RigidPose, u: f64, v: f64) -> Ray {
    let d = pose.transform_dir(cam.camera_dir(u, v)).normalized();
    Ray { origin: pose.translation, direction: d, near: 0.0, far: f64::INFINITY }
}

/// Ray through the center of pixel `(i, j)`.
#[inline]
pub fn pixel_center_ray(cam: &CameraIntrinsics, pose: &RigidPose, i: usize, j: usize) -> Ray {
    pixel_ray_unchecked(cam, pose, i as f64 + 0.5, j as f64 + 0.5)
}

/// Projects a world point into the image of a camera at `pose`.
#[inline]
pub fn project(cam: &CameraIntrinsics, pose: &RigidPose, p: Vec3) -> Option<(f64, f64)> {
    cam.project_camera(pose.inverse_transform_point(p))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    /// The `[-1, 1]^3` cube.
    pub const UNIT: Aabb = Aabb { min: Vec3::new(-1.0, -1.0, -1.0), max: Vec3::new(1.0, 1.0, 1.0) };

    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(max.x > min.x && max.y > min.y && max.z > min.z) {
            return Err(domain("box must have positive extents"));
        }
        Ok(Aabb { min, max })
    }

    pub fn centered(half: Vec3) -> Result<Self> {
        Self::new(-half, half)
    }

    pub fn contains(&self, p: Vec3, tol: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= self.max[a] + tol)
    }
}

/// Slab test in the box's local frame. Returns the clipped `[t_near, t_far]`
/// along the world ray, with `t_near >= max(0, ray.near)`.
pub fn ray_aabb(ray: &Ray, aabb: &Aabb, box_pose: &RigidPose) -> Option<(f64, f64)> {
    let o = box_pose.inverse_transform_point(ray.origin);
    let d = box_pose.inverse_transform_dir(ray.direction);
    slab(o, d, aabb, ray.near.max(0.0), ray.far)
}

#[inline]
pub(crate) fn slab(o: Vec3, d: Vec3, aabb: &Aabb, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (t_min, t_max);
    for a in 0..3 {
        let (oa, da, lo, hi) = (o[a], d[a], aabb.min[a], aabb.max[a]);
        if da == 0.0 {
            if oa < lo || oa > hi {
                return None;
            }
        } else {
            let inv = 1.0 / da;
            let (mut ta, mut tb) = ((lo - oa) * inv, (hi - oa) * inv);
            if ta > tb {
                core::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    (t0 < t1).then_some((t0, t1))
}

/// 7-DoF object box: center `(x, y, z)`, length `l` along local x, height `h`
/// along local y (up), width `w` along local z, yaw `theta` about +y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub l: f64,
    pub w: f64,
    pub h: f64,
    pub theta: f64,
}

impl BoxPose {
    /// The canonical `[-1, 1]^3` box the field is trained in.
    pub const CANONICAL: BoxPose = BoxPose { x: 0.0, y: 0.0, z: 0.0, l: 2.0, w: 2.0, h: 2.0, theta: 0.0 };

    pub fn center(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn half_extents(&self) -> Vec3 {
        Vec3::new(self.l / 2.0, self.h / 2.0, self.w / 2.0)
    }

    pub fn rotation(&self) -> Mat3 {
        Mat3::rot_y(self.theta)
    }

    pub fn pose(&self) -> RigidPose {
        RigidPose { rotation: self.rotation(), translation: self.center() }
    }

    pub fn is_valid(&self) -> bool {
        self.l > 0.0 && self.w > 0.0 && self.h > 0.0 && [self.x, self.y, self.z, self.theta].iter().all(|v| v.is_finite())
    }

    /// Local axis-aligned extent of the box.
    pub fn local_aabb(&self) -> Aabb {
        let h = self.half_extents();
        Aabb { min: -h, max: h }
    }

    /// Eight world-space corners; index bit 0/1/2 selects +x/+y/+z local side.
    pub fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents();
        let pose = self.pose();
        core::array::from_fn(|i| {
            let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
            pose.transform_point(Vec3::new(s(0) * h.x, s(1) * h.y, s(2) * h.z))
        })
    }

    /// Maps a world point inside the box to `[-1, 1]^3` box coordinates.
    pub fn normalize(&self, p: Vec3) -> Result<Vec3> {
        let n = self.normalize_unchecked(p);
        if n.x.abs() > 1.0 + 1e-12 || n.y.abs() > 1.0 + 1e-12 || n.z.abs() > 1.0 + 1e-12 {
            return Err(domain(format!("point ({}, {}, {}) lies outside the box", p.x, p.y, p.z)));
        }
        Ok(n)
    }

    #[inline]
    pub fn normalize_unchecked(&self, p: Vec3) -> Vec3 {
        self.pose().inverse_transform_point(p).div_elem(self.half_extents())
    }

    /// Inverse of [`BoxPose::normalize`].
    pub fn denormalize(&self, n: Vec3) -> Vec3 {
        self.pose().transform_point(n.mul_elem(self.half_extents()))
    }

    /// Expresses a world ray in normalized box coordinates. The returned
    /// direction is not unit length; the ray parameter `t` is shared with the
    /// world ray, so `|dir|` converts world step lengths into box units.
    #[inline]
    pub fn ray_to_normalized(&self, ray: &Ray) -> (Vec3, Vec3) {
        let pose = self.pose();
        let half = self.half_extents();
        (pose.inverse_transform_point(ray.origin).div_elem(half), pose.inverse_transform_dir(ray.direction).div_elem(half))
    }

    /// `[t_near, t_far]` of a world ray through the box.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        ray_aabb(ray, &self.local_aabb(), &self.pose())
    }

    /// Box with every field rounded to `decimals` decimal places.
    pub fn quantized(&self, decimals: i32) -> BoxPose {
        let s = libm::pow(10.0, decimals as f64);
        let q = |v: f64| libm::round(v * s) / s;
        BoxPose { x: q(self.x), y: q(self.y), z: q(self.z), l: q(self.l), w: q(self.w), h: q(self.h), theta: q(self.theta) }
    }
}

/// Point on the ground plane in bird's-eye-view coordinates (world x, z).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevPoint {
    pub x: f64,
    pub z: f64,
}

impl BevPoint {
    pub fn to_world(self, ground_height: f64) -> Vec3 {
        Vec3::new(self.x, ground_height, self.z)
    }
}

/// Intersects the ray through pixel `(u, v)` with the ground plane
/// `y = ground_height`. Pixels on or above the horizon give `None`.
pub fn ipm_ground(cam: &CameraIntrinsics, pose: &RigidPose, ground_height: f64, u: f64, v: f64) -> Option<BevPoint> {
    let dir = pose.transform_dir(cam.camera_dir(u, v));
    let o = pose.translation;
    if o.y <= ground_height || !(dir.y < 0.0) {
        return None;
    }
    let t = (ground_height - o.y) / dir.y;
    Some(BevPoint { x: o.x + t * dir.x, z: o.z + t * dir.z })
}

/// Ranges (degrees) and count of orbit cameras looking at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSchedule {
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub radius: f64,
    pub count: usize,
}

impl Default for ViewSchedule {
    fn default() -> Self {
        ViewSchedule { azimuth_deg: (0.0, 360.0), elevation_deg: (0.0, 20.0), radius: 4.0, count: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSample {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub pose: RigidPose,
}

/// Camera-to-world pose on a sphere of `radius` around the origin. Azimuth 0
/// and elevation 0 put the camera at `(0, 0, -radius)`; positive elevation
/// raises it above the ground.
pub fn orbit_pose(azimuth_deg: f64, elevation_deg: f64, radius: f64) -> Result<RigidPose> {
    if !(radius > 0.0) {
        return Err(domain(format!("orbit radius must be positive, got {radius}")));
    }
    if !(elevation_deg.abs() < 90.0) {
        return Err(domain(format!("elevation {elevation_deg} must be inside (-90, 90)")));
    }
    let (az, el) = (deg_to_rad(azimuth_deg), deg_to_rad(elevation_deg));
    let eye = Vec3::new(sin(az) * cos(el), sin(el), -cos(az) * cos(el)) * radius;
    RigidPose::look_at(eye, Vec3::ZERO)
}

/// Samples `count` orbit cameras. Azimuths are stratified over the range
/// (one jittered sample per stratum) and elevations are uniform.
pub fn sample_view_schedule(schedule: &ViewSchedule, seed: u64) -> Result<Vec<ViewSample>> {
    if schedule.count == 0 {
        return Err(domain("view schedule count must be at least 1"));
    }
    if !(schedule.radius > 0.0) {
        return Err(domain(format!("view radius must be positive, got {}", schedule.radius)));
    }
    let (e0, e1) = schedule.elevation_deg;
    if !(0.0..90.0).contains(&e0) || !(0.0..90.0).contains(&e1) || e1 < e0 {
        return Err(domain(format!("elevation range [{e0}, {e1}] must lie within [0, 90)")));
    }
    let (a0, a1) = schedule.azimuth_deg;
    if a1 < a0 {
        return Err(domain(format!("azimuth range [{a0}, {a1}] is reversed")));
    }
    let mut rng = Rng::new(seed, Stream::Data);
    let n = schedule.count;
    (0..n)
        .map(|i| {
            let az = a0 + (a1 - a0) * (i as f64 + rng.uniform()) / n as f64;
            let el = rng.range(e0, e1);
            Ok(ViewSample { azimuth_deg: az, elevation_deg: el, pose: orbit_pose(az, el, schedule.radius)? })
        })
        .collect()
}

/// Camera intrinsics plus mounting: `pose` is camera-to-world and the ground
/// plane is `y = ground_height` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub camera: CameraIntrinsics,
    pub pose: RigidPose,
    pub cam_height_m: f64,
}

impl Calibration {
    /// Ground plane height in world coordinates: the camera sits
    /// `cam_height_m` above it.
    pub fn ground_height(&self) -> f64 {
        self.pose.translation.y - self.cam_height_m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam100() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 100, 100).unwrap()
    }

    #[test]
    fn principal_point_ray_is_optical_axis() {
        let r = pixel_ray(&cam100(), &RigidPose::IDENTITY, 50.0, 50.0).unwrap();
        assert_eq!(r.direction, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(r.origin, Vec3::ZERO);
    }

    #[test]
    fn one_focal_offset_is_45_degrees() {
        let r = pixel_ray(&cam100(), &RigidPose::IDENTITY, 150.0, 50.0);
        // (150, 50) is on the image border of a 100 px image: out of bounds.
        assert!(r.is_err());
        let cam = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0, 200, 100).unwrap();
        let r = pixel_ray(&cam, &RigidPose::IDENTITY, 150.0, 50.0).unwrap();
        let e = core::f64::consts::FRAC_1_SQRT_2;
        assert!((r.direction - Vec3::new(e, 0.0, e)).norm() < 1e-15);
    }

    #[test]
    fn out_of_bounds_pixel_is_domain_error() {
        assert!(matches!(pixel_ray(&cam100(), &RigidPose::IDENTITY, -1.0, 3.0), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn head_on_unit_cube() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, -3.0), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(ray_aabb(&ray, &Aabb::UNIT, &RigidPose::IDENTITY), Some((2.0, 4.0)));
    }

    #[test]
    fn ray_outside_slab_misses() {
        let ray = Ray::new(Vec3::new(0.0, 5.0, 0.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(ray_aabb(&ray, &Aabb::UNIT, &RigidPose::IDENTITY), None);
    }

    #[test]
    fn parallel_ray_inside_slab_hits() {
        let ray = Ray::new(Vec3::new(-5.0, 0.5, 0.0), Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(ray_aabb(&ray, &Aabb::UNIT, &RigidPose::IDENTITY), Some((4.0, 6.0)));
    }

    #[test]
    fn box_behind_origin_is_clipped() {
        let ray = Ray::new(Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(ray_aabb(&ray, &Aabb::UNIT, &RigidPose::IDENTITY), None);
        let inside = Ray::new(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(ray_aabb(&inside, &Aabb::UNIT, &RigidPose::IDENTITY), Some((0.0, 1.0)));
    }

    #[test]
    fn normalize_center_and_corner() {
        let b = BoxPose { x: 1.0, y: -0.5, z: 10.0, l: 4.0, w: 1.8, h: 1.5, theta: 0.0 };
        assert_eq!(b.normalize(b.center()).unwrap(), Vec3::ZERO);
        let n = b.normalize(Vec3::new(1.0 + 2.0, -0.5 + 0.75, 10.0 + 0.9)).unwrap();
        assert!((n - Vec3::new(1.0, 1.0, 1.0)).norm() < 1e-12);
        assert!(b.normalize(Vec3::new(10.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn corners_map_to_unit_corners() {
        let b = BoxPose { x: 0.3, y: 0.1, z: 7.0, l: 3.9, w: 1.6, h: 1.5, theta: 1.1 };
        for (i, c) in b.corners().iter().enumerate() {
            let n = b.normalize(*c).unwrap();
            for a in 0..3 {
                let s = if i & (1 << a) != 0 { 1.0 } else { -1.0 };
                assert!((n[a] - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nadir_camera_principal_point_hits_below() {
        // Camera at height 2 looking straight down (+z_cam = -y_world).
        let rot = Mat3::from_cols(Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, -1.0, 0.0));
        let pose = RigidPose::new(rot, Vec3::new(3.0, 2.0, -1.0)).unwrap();
        let p = ipm_ground(&cam100(), &pose, 0.0, 50.0, 50.0).unwrap();
        assert!((p.x - 3.0).abs() < 1e-12 && (p.z + 1.0).abs() < 1e-12);
    }

    #[test]
    fn horizon_pixel_has_no_ground_point() {
        let pose = RigidPose { rotation: Mat3::IDENTITY, translation: Vec3::new(0.0, 1.65, 0.0) };
        assert!(ipm_ground(&cam100(), &pose, 0.0, 20.0, 50.0).is_none());
        assert!(ipm_ground(&cam100(), &pose, 0.0, 20.0, 10.0).is_none());
        assert!(ipm_ground(&cam100(), &pose, 0.0, 20.0, 80.0).is_some());
    }

    #[test]
    fn canonical_single_view() {
        let s = ViewSchedule { azimuth_deg: (0.0, 0.0), elevation_deg: (0.0, 0.0), radius: 4.0, count: 1 };
        let v = sample_view_schedule(&s, 3).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v[0].pose.translation - Vec3::new(0.0, 0.0, -4.0)).norm() < 1e-12);
        assert!((v[0].pose.rotation.col(2) - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn schedule_validation() {
        let mut s = ViewSchedule::default();
        s.radius = 0.0;
        assert!(sample_view_schedule(&s, 0).is_err());
        s.radius = 1.0;
        s.count = 0;
        assert!(sample_view_schedule(&s, 0).is_err());
    }

    #[test]
    fn box_quantization_rounds_to_two_decimals() {
        let b = BoxPose { x: 1.23456, y: -0.005001, z: 9.999, l: 3.9, w: 1.6, h: 1.5, theta: -1.5707 };
        let q = b.quantized(2);
        assert_eq!((q.x, q.y, q.z, q.theta), (1.23, -0.01, 10.0, -1.57));
    }
}
