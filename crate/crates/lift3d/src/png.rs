//! 8-bit PNG conversion. Color images are RGB, masks are grayscale with
//! foreground stored as 255.

use crate::error::{Error, Result};
use image::{GrayImage, RgbImage};
use lift3d_core::image::Image;
use std::path::Path;

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, img: &Image) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::format(path, format!("expected a 3-channel image, got {}", img.shape_str())));
    }
    let buf = RgbImage::from_fn(img.width() as u32, img.height() as u32, |x, y| {
        let p = img.pixel(x as usize, y as usize);
        image::Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes pixels with value >= 0.5 as 255 and the rest as 0.
pub fn write_mask(path: &Path, mask: &Image) -> Result<()> {
    if mask.channels() != 1 {
        return Err(Error::format(path, format!("expected a 1-channel mask, got {}", mask.shape_str())));
    }
    let buf = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        image::Luma([if mask.get(x as usize, y as usize, 0) >= 0.5 { 255 } else { 0 }])
    });
    buf.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Any PNG as RGB in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Image> {
    let buf = open(path)?.to_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Image::from_vec(w, h, 3, data)?)
}

/// Any PNG as one gray channel in `[0, 1]`.
pub fn read_gray(path: &Path) -> Result<Image> {
    let buf = open(path)?.to_luma8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(Image::from_vec(w, h, 1, data)?)
}

/// Binary mask: gray values >= 128 are foreground.
pub fn read_mask(path: &Path) -> Result<Image> {
    Ok(read_gray(path)?.map(|v| if v >= 128.0 / 255.0 { 1.0 } else { 0.0 }))
}
