//! On-disk multi-view datasets.
//!
//! ```text
//! <root>/<object_id>/view_000.png   RGB
//! <root>/<object_id>/mask_000.png   grayscale, 255 = object
//! <root>/<object_id>/depth_000.f32  see [`crate::depth`]
//! <root>/<object_id>/poses.json     intrinsics and per-view extrinsics
//! <root>/<object_id>/manifest.json  seeds, sizes and file names
//! ```
//!
//! Extrinsics are 3x4 row-major camera-to-world matrices.

use crate::error::{Error, Result};
use crate::{depth, png};
use lift3d_core::geometry::{CameraIntrinsics, RigidPose};
use lift3d_core::image::Image;
use lift3d_core::optim::PosedImage;
use lift3d_core::oracle::{gen_scene, OracleObject, PrimitiveScene};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&CameraIntrinsics> for Intrinsics {
    fn from(c: &CameraIntrinsics) -> Self {
        Intrinsics { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, width: c.width, height: c.height }
    }
}

impl Intrinsics {
    pub fn camera(&self) -> lift3d_core::Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPose {
    pub index: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub extrinsic: [[f64; 4]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poses {
    pub version: u32,
    pub object_id: String,
    pub intrinsics: Intrinsics,
    pub views: Vec<ViewPose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFiles {
    pub rgb: String,
    pub mask: String,
    pub depth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub object_id: String,
    /// Seed of the procedural shape, when the object came from the oracle.
    pub shape_seed: Option<u64>,
    pub view_seed: Option<u64>,
    pub view_count: usize,
    pub width: usize,
    pub height: usize,
    pub views: Vec<ViewFiles>,
}

/// One object read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedObject {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub poses: Poses,
    pub views: Vec<PosedImage>,
}

impl LoadedObject {
    pub fn id(&self) -> &str {
        &self.manifest.object_id
    }

    /// The procedural scene this object was rendered from, if recorded.
    pub fn oracle_scene(&self) -> Option<PrimitiveScene> {
        self.manifest.shape_seed.map(gen_scene)
    }

    pub fn read_depth(&self, view: usize) -> Result<Image> {
        depth::read(&self.dir.join(&self.manifest.views[view].depth))
    }
}

pub fn object_id(index: usize) -> String {
    format!("obj_{index:03}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_summary<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value)
}

/// Writes one oracle object under `root/id`.
pub fn write_object(root: &Path, id: &str, obj: &OracleObject, cam: &CameraIntrinsics) -> Result<PathBuf> {
    let dir = root.join(id);
    create_dir(&dir)?;
    let mut files = Vec::with_capacity(obj.views.len());
    let mut poses = Vec::with_capacity(obj.views.len());
    for (i, v) in obj.views.iter().enumerate() {
        let f = ViewFiles { rgb: format!("view_{i:03}.png"), mask: format!("mask_{i:03}.png"), depth: format!("depth_{i:03}.f32") };
        png::write_rgb(&dir.join(&f.rgb), &v.image.rgb)?;
        png::write_mask(&dir.join(&f.mask), &v.image.mask)?;
        depth::write(&dir.join(&f.depth), &v.depth)?;
        files.push(f);
        poses.push(ViewPose { index: i, azimuth_deg: v.sample.azimuth_deg, elevation_deg: v.sample.elevation_deg, extrinsic: v.image.pose.to_3x4() });
    }
    write_json(&dir.join("poses.json"), &Poses { version: FORMAT_VERSION, object_id: id.to_string(), intrinsics: cam.into(), views: poses })?;
    let manifest = Manifest {
        version: FORMAT_VERSION,
        object_id: id.to_string(),
        shape_seed: Some(obj.shape_seed),
        view_seed: Some(obj.view_seed),
        view_count: files.len(),
        width: cam.width,
        height: cam.height,
        views: files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(dir)
}

fn check_version(path: &Path, v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {v}, expected {FORMAT_VERSION}")));
    }
    Ok(())
}

pub fn read_object(dir: &Path) -> Result<LoadedObject> {
    let mpath = dir.join("manifest.json");
    let ppath = dir.join("poses.json");
    let manifest: Manifest = read_json(&mpath)?;
    let poses: Poses = read_json(&ppath)?;
    check_version(&mpath, manifest.version)?;
    check_version(&ppath, poses.version)?;
    if manifest.views.len() != manifest.view_count || poses.views.len() != manifest.view_count {
        return Err(Error::format(&mpath, format!("view_count {} disagrees with the listed views", manifest.view_count)));
    }
    let cam = poses.intrinsics.camera()?;
    let mut views = Vec::with_capacity(manifest.view_count);
    for (f, p) in manifest.views.iter().zip(&poses.views) {
        let rgb = png::read_rgb(&dir.join(&f.rgb))?;
        let mask = png::read_mask(&dir.join(&f.mask))?;
        let pose = RigidPose::from_3x4(&p.extrinsic).map_err(|e| Error::format(&ppath, format!("view {}: {e}", p.index)))?;
        views.push(PosedImage::new(rgb, mask, pose, cam).map_err(|e| Error::format(&dir.join(&f.rgb), e.to_string()))?);
    }
    Ok(LoadedObject { dir: dir.to_path_buf(), manifest, poses, views })
}

/// Every object directory under `root` (those holding a manifest), in name
/// order.
pub fn read_dataset(root: &Path) -> Result<Vec<LoadedObject>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let path = e.map_err(|e| Error::io(root, e))?.path();
        if path.join("manifest.json").is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::format(root, "no object directories with a manifest.json"));
    }
    dirs.iter().map(|d| read_object(d)).collect()
}
