//! Photometric, silhouette and feature-space losses, each with its gradient
//! w.r.t. the rendered input.

use crate::error::{shape, Result};
use crate::image::Image;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

const IOU_EPS: f64 = 1e-8;

/// Mean absolute difference over all entries.
pub fn loss_rgb(target: &Image, rendered: &Image) -> Result<f64> {
    target.mean_abs_diff(rendered)
}

/// [`loss_rgb`] and its gradient w.r.t. `rendered`.
pub fn loss_rgb_grad(target: &Image, rendered: &Image) -> Result<(f64, Image)> {
    let loss = loss_rgb(target, rendered)?;
    let n = target.data().len().max(1) as f64;
    let mut g = rendered.clone();
    for (d, t) in g.data_mut().iter_mut().zip(target.data()) {
        let diff = *d - t;
        *d = if diff > 0.0 {
            1.0 / n
        } else if diff < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((loss, g))
}

/// Soft IoU loss `1 - sum(min(p, t)) / (sum(max(p, t)) + eps)` between a
/// predicted soft mask and a target mask. Two empty masks give 0.
pub fn loss_iou(pred: &Image, target: &Image) -> Result<f64> {
    Ok(loss_iou_grad(pred, target)?.0)
}

/// [`loss_iou`] and its gradient w.r.t. `pred`.
pub fn loss_iou_grad(pred: &Image, target: &Image) -> Result<(f64, Image)> {
    pred.check_same_shape(target)?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        inter += p.min(t);
        union += p.max(t);
    }
    let mut g = Image::new(pred.width(), pred.height(), pred.channels());
    if union == 0.0 {
        return Ok((0.0, g));
    }
    let den = union + IOU_EPS;
    let loss = 1.0 - inter / den;
    for ((d, &p), &t) in g.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        // p <= t: p enters the intersection; p > t: it enters the union.
        *d = if p <= t { -1.0 / den } else { inter / (den * den) };
    }
    Ok((loss, g))
}

/// Per-scale feature vectors produced by a [`FeatureExtractor`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub extractor: &'static str,
    pub scales: Vec<Vec<f64>>,
}

/// Image-to-features map for the feature-space loss. Extractors used during
/// optimization must also supply the vector-Jacobian product.
pub trait FeatureExtractor: Sync {
    fn name(&self) -> &'static str;

    fn extract(&self, img: &Image) -> FeatureMaps;

    /// Gradient w.r.t. the image given per-scale gradients w.r.t. the
    /// features of an image shaped like `like`.
    fn backward(&self, like: &Image, d_features: &[Vec<f64>]) -> Image;
}

/// Fixed multi-scale finite-difference pyramid: at each scale the image is
/// box-downsampled by 2 and its horizontal then vertical forward differences
/// (per channel) form the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientPyramid {
    pub scales: usize,
}

impl Default for GradientPyramid {
    fn default() -> Self {
        GradientPyramid { scales: 3 }
    }
}

fn diffs(img: &Image) -> Vec<f64> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = Vec::with_capacity(((w.saturating_sub(1)) * h + w * h.saturating_sub(1)) * c);
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            for k in 0..c {
                out.push(img.get(x + 1, y, k) - img.get(x, y, k));
            }
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            for k in 0..c {
                out.push(img.get(x, y + 1, k) - img.get(x, y, k));
            }
        }
    }
    out
}

fn diffs_backward(w: usize, h: usize, c: usize, d: &[f64]) -> Image {
    let mut g = Image::new(w, h, c);
    let mut i = 0;
    for y in 0..h {
        for x in 0..w.saturating_sub(1) {
            for k in 0..c {
                let v = d[i];
                i += 1;
                g.data_mut()[(y * w + x + 1) * c + k] += v;
                g.data_mut()[(y * w + x) * c + k] -= v;
            }
        }
    }
    for y in 0..h.saturating_sub(1) {
        for x in 0..w {
            for k in 0..c {
                let v = d[i];
                i += 1;
                g.data_mut()[((y + 1) * w + x) * c + k] += v;
                g.data_mut()[(y * w + x) * c + k] -= v;
            }
        }
    }
    g
}

/// Transpose of `Image::box_downsample(2)` onto a `w x h` grid.
fn downsample_backward(d: &Image, w: usize, h: usize) -> Image {
    let c = d.channels();
    let mut g = Image::new(w, h, c);
    for y in 0..d.height() {
        for x in 0..d.width() {
            for k in 0..c {
                let v = 0.25 * d.get(x, y, k);
                for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    let (px, py) = (2 * x + dx, 2 * y + dy);
                    g.data_mut()[(py * w + px) * c + k] += v;
                }
            }
        }
    }
    g
}

impl FeatureExtractor for GradientPyramid {
    fn name(&self) -> &'static str {
        "gradient-pyramid"
    }

    fn extract(&self, img: &Image) -> FeatureMaps {
        let mut scales = Vec::with_capacity(self.scales);
        let mut cur = img.clone();
        for s in 0..self.scales {
            if s > 0 {
                cur = cur.box_downsample(2);
            }
            scales.push(diffs(&cur));
        }
        FeatureMaps { extractor: self.name(), scales }
    }

    fn backward(&self, like: &Image, d_features: &[Vec<f64>]) -> Image {
        let c = like.channels();
        let mut dims = vec![(like.width(), like.height())];
        for s in 1..self.scales {
            let (w, h) = dims[s - 1];
            dims.push((w / 2, h / 2));
        }
        let (w, h) = dims[self.scales - 1];
        let mut g = diffs_backward(w, h, c, &d_features[self.scales - 1]);
        for s in (0..self.scales - 1).rev() {
            let (w, h) = dims[s];
            let mut up = downsample_backward(&g, w, h);
            let local = diffs_backward(w, h, c, &d_features[s]);
            for (a, b) in up.data_mut().iter_mut().zip(local.data()) {
                *a += b;
            }
            g = up;
        }
        g
    }
}

fn check_features(a: &FeatureMaps, b: &FeatureMaps) -> Result<()> {
    if a.extractor != b.extractor || a.scales.len() != b.scales.len() {
        return Err(shape(format!("{} with {} scales", a.extractor, a.scales.len()), format!("{} with {} scales", b.extractor, b.scales.len())));
    }
    for (x, y) in a.scales.iter().zip(&b.scales) {
        if x.len() != y.len() {
            return Err(shape(format!("{} feature values", x.len()), format!("{} feature values", y.len())));
        }
    }
    Ok(())
}

/// Sum over scales of the mean absolute feature difference. Empty scales
/// contribute 0.
pub fn loss_perceptual(target: &FeatureMaps, rendered: &FeatureMaps) -> Result<f64> {
    check_features(target, rendered)?;
    Ok(target
        .scales
        .iter()
        .zip(&rendered.scales)
        .filter(|(a, _)| !a.is_empty())
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
        .sum())
}

/// Feature loss between two images under `extractor`, with the gradient
/// w.r.t. `rendered`.
pub fn loss_perceptual_grad(extractor: &dyn FeatureExtractor, target: &Image, rendered: &Image) -> Result<(f64, Image)> {
    target.check_same_shape(rendered)?;
    let ft = extractor.extract(target);
    let fr = extractor.extract(rendered);
    let loss = loss_perceptual(&ft, &fr)?;
    let d: Vec<Vec<f64>> = ft
        .scales
        .iter()
        .zip(&fr.scales)
        .map(|(a, b)| {
            let n = a.len().max(1) as f64;
            a.iter()
                .zip(b)
                .map(|(t, r)| {
                    let diff = r - t;
                    if diff > 0.0 {
                        1.0 / n
                    } else if diff < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok((loss, extractor.backward(rendered, &d)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_examples() {
        let a = Image::filled(3, 2, 3, 0.4);
        assert_eq!(loss_rgb(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_rgb(&Image::filled(3, 2, 3, 1.0), &Image::new(3, 2, 3)).unwrap(), 1.0);
        let t = Image::from_vec(1, 1, 2, vec![0.2, 0.8]).unwrap();
        let r = Image::from_vec(1, 1, 2, vec![0.5, 0.5]).unwrap();
        assert!((loss_rgb(&t, &r).unwrap() - 0.3).abs() < 1e-15);
        assert!(loss_rgb(&t, &Image::new(2, 1, 1)).is_err());
    }

    #[test]
    fn iou_examples() {
        let m = Image::from_fn(4, 4, 1, |x, _, _| if x < 2 { 1.0 } else { 0.0 });
        assert!(loss_iou(&m, &m).unwrap() < 1e-8);
        let other = m.map(|v| 1.0 - v);
        assert_eq!(loss_iou(&m, &other).unwrap(), 1.0);
        let half = Image::filled(4, 4, 1, 0.5);
        let ones = Image::filled(4, 4, 1, 1.0);
        assert!((loss_iou(&half, &ones).unwrap() - 0.5).abs() < 1e-8);
        let empty = Image::new(4, 4, 1);
        assert_eq!(loss_iou(&empty, &empty).unwrap(), 0.0);
        assert!(loss_iou(&m, &Image::new(4, 3, 1)).is_err());
    }

    #[test]
    fn perceptual_identical_and_constant() {
        let p = GradientPyramid::default();
        let img = Image::from_fn(8, 8, 3, |x, y, c| (x * 3 + y + c) as f64 * 0.01);
        assert_eq!(loss_perceptual(&p.extract(&img), &p.extract(&img)).unwrap(), 0.0);
        let k = Image::filled(8, 8, 3, 0.3);
        assert_eq!(loss_perceptual(&p.extract(&k), &p.extract(&k)).unwrap(), 0.0);
    }

    #[test]
    fn perceptual_two_by_two_by_hand() {
        // Single channel. a = [[0, 1], [2, 3]], b = [[1, 1], [1, 1]].
        // Scale 0: dx(a) = [1, 1], dy(a) = [2, 2]; dx(b) = dy(b) = 0.
        // Mean |diff| = (1 + 1 + 2 + 2) / 4 = 1.5. Coarser scales are 1x1
        // and 0x0, which have no differences.
        let a = Image::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = Image::filled(2, 2, 1, 1.0);
        let p = GradientPyramid::default();
        let l = loss_perceptual(&p.extract(&a), &p.extract(&b)).unwrap();
        assert!((l - 1.5).abs() < 1e-15);
    }

    #[test]
    fn perceptual_backward_matches_finite_differences() {
        let p = GradientPyramid::default();
        let t = Image::from_fn(9, 7, 3, |x, y, c| ((x * 7 + y * 3 + c * 5) % 11) as f64 / 11.0);
        let r = Image::from_fn(9, 7, 3, |x, y, c| ((x * 5 + y * 2 + c) % 13) as f64 / 13.0 + 0.013);
        let (_, g) = loss_perceptual_grad(&p, &t, &r).unwrap();
        let h = 1e-7;
        for i in [0usize, 5, 17, 40, 100, 150, 188] {
            let mut rp = r.clone();
            rp.data_mut()[i] += h;
            let mut rm = r.clone();
            rm.data_mut()[i] -= h;
            let fd = (loss_perceptual_grad(&p, &t, &rp).unwrap().0 - loss_perceptual_grad(&p, &t, &rm).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6, "entry {i}: fd {fd} vs {}", g.data()[i]);
        }
    }

    #[test]
    fn iou_backward_matches_finite_differences() {
        let t = Image::from_fn(5, 5, 1, |x, y, _| if x + y < 5 { 1.0 } else { 0.0 });
        let p = Image::from_fn(5, 5, 1, |x, y, _| ((x * 3 + y * 7) % 10) as f64 / 10.0 + 0.03);
        let (_, g) = loss_iou_grad(&p, &t).unwrap();
        let h = 1e-7;
        for i in 0..25 {
            let mut pp = p.clone();
            pp.data_mut()[i] += h;
            let mut pm = p.clone();
            pm.data_mut()[i] -= h;
            let fd = (loss_iou(&pp, &t).unwrap() - loss_iou(&pm, &t).unwrap()) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }
}
