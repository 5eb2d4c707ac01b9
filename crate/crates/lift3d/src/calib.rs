//! Calibration files: `key=value` lines for the intrinsics and camera
//! height, and an `extrinsic=` key followed by the 3x4 camera-to-world
//! matrix in row-major order (one row per line, or all twelve values
//! inline). Blank lines and lines starting with `#` are ignored.
//!
//! ```text
//! fx=721.5
//! fy=721.5
//! cx=609.6
//! cy=172.9
//! width=1242
//! height=375
//! cam_height_m=1.65
//! extrinsic=
//! 1 0 0 0
//! 0 1 0 0
//! 0 0 1 0
//! ```

use crate::error::{Error, Result};
use lift3d_core::geometry::{Calibration, CameraIntrinsics, RigidPose};
use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

const KEYS: [&str; 7] = ["fx", "fy", "cx", "cy", "width", "height", "cam_height_m"];

pub fn to_text(c: &Calibration) -> String {
    let k = &c.camera;
    let mut s = String::new();
    for (key, v) in [("fx", k.fx), ("fy", k.fy), ("cx", k.cx), ("cy", k.cy)] {
        writeln!(s, "{key}={v}").expect("write to string");
    }
    writeln!(s, "width={}\nheight={}\ncam_height_m={}\nextrinsic=", k.width, k.height, c.cam_height_m).expect("write to string");
    for row in c.pose.to_3x4() {
        writeln!(s, "{} {} {} {}", row[0], row[1], row[2], row[3]).expect("write to string");
    }
    s
}

pub fn parse(text: &str, path: &Path) -> Result<Calibration> {
    let mut values = BTreeMap::new();
    let mut extrinsic: Option<Vec<f64>> = None;
    let number = |tok: &str| tok.parse::<f64>().map_err(|_| Error::format(path, format!("not a number: {tok:?}")));
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(m) = extrinsic.as_mut().filter(|m| m.len() < 12) {
            for tok in line.split_whitespace() {
                m.push(number(tok)?);
            }
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::format(path, format!("line {}: expected key=value", n + 1)));
        };
        let (key, value) = (key.trim(), value.trim());
        if key == "extrinsic" {
            extrinsic = Some(value.split_whitespace().map(number).collect::<Result<_>>()?);
        } else if KEYS.contains(&key) {
            if values.insert(key, number(value)?).is_some() {
                return Err(Error::format(path, format!("duplicate key {key}")));
            }
        } else {
            return Err(Error::format(path, format!("unknown key {key}")));
        }
    }
    let get = |k: &str| values.get(k).copied().ok_or_else(|| Error::format(path, format!("missing key {k}")));
    let dim = |k: &str| -> Result<usize> {
        let v = get(k)?;
        if v.fract() != 0.0 || v < 1.0 {
            return Err(Error::format(path, format!("{k} must be a positive integer, got {v}")));
        }
        Ok(v as usize)
    };
    let camera = CameraIntrinsics::new(get("fx")?, get("fy")?, get("cx")?, get("cy")?, dim("width")?, dim("height")?)?;
    let m = extrinsic.ok_or_else(|| Error::format(path, "missing extrinsic"))?;
    if m.len() != 12 {
        return Err(Error::format(path, format!("extrinsic needs 12 values, found {}", m.len())));
    }
    let rows = [[m[0], m[1], m[2], m[3]], [m[4], m[5], m[6], m[7]], [m[8], m[9], m[10], m[11]]];
    Ok(Calibration { camera, pose: RigidPose::from_3x4(&rows)?, cam_height_m: get("cam_height_m")? })
}

pub fn read(path: &Path) -> Result<Calibration> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn write(path: &Path, c: &Calibration) -> Result<()> {
    std::fs::write(path, to_text(c)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use lift3d_core::geometry::orbit_pose;

    fn sample() -> Calibration {
        Calibration {
            camera: CameraIntrinsics::new(721.5377, 721.5377, 609.5593, 172.854, 1242, 375).unwrap(),
            pose: orbit_pose(33.3, 12.5, 4.0).unwrap(),
            cam_height_m: 1.65,
        }
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = sample();
        assert_eq!(parse(&to_text(&c), Path::new("c")).unwrap(), c);
    }

    #[test]
    fn inline_extrinsic_and_comments() {
        let text = "# kitti-like\nfx=700\nfy=700\ncx=600\ncy=180\nwidth=1200\nheight=370\ncam_height_m=1.65\n\nextrinsic= 1 0 0 0 0 1 0 1.65 0 0 1 0\n";
        let c = parse(text, Path::new("c")).unwrap();
        assert_eq!(c.pose.translation.y, 1.65);
        assert_eq!(c.ground_height(), 0.0);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let good = to_text(&sample());
        for bad in [
            good.replace("fx=", "fz="),
            good.replace("width=1242", "width=12.5"),
            good.lines().take(10).collect::<Vec<_>>().join("\n"),
            good.lines().filter(|l| !l.starts_with("cy")).collect::<Vec<_>>().join("\n"),
            format!("{good}fx=1\n"),
        ] {
            assert!(parse(&bad, Path::new("c")).is_err(), "{bad}");
        }
    }
}
