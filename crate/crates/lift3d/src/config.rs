//! TOML run configuration. Every section and key is optional; missing values
//! take the defaults below, and command-line flags override the file.
//!
//! ```toml
//! seed = 0
//!
//! [generator]
//! latent_dim = 64
//! stage_channels = [32, 24, 16]
//!
//! [oracle]
//! objects = 4
//! views = 20
//!
//! [lift]
//! iterations = 2000
//! lr_params = 1e-3
//! lr_latents = 1e-2
//! lambda_iou = 1.0
//! lambda_perc = 0.1
//! rays_per_step = 256
//! samples_per_ray = 48
//! ```

use crate::error::{Error, Result};
use lift3d_core::compose::{BoxSource, ComposeConfig};
use lift3d_core::eval::ViewPairSpec;
use lift3d_core::generator::GeneratorConfig;
use lift3d_core::geometry::{CameraIntrinsics, ViewSchedule};
use lift3d_core::optim::{FitConfig, LossWeights};
use lift3d_core::oracle::{PoseJitter, VIEW_FOCAL, VIEW_SIZE};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub generator: GeneratorSection,
    pub oracle: OracleSection,
    pub lift: LiftSection,
    pub compose: ComposeSection,
    pub eval: EvalSection,
    pub interp: InterpSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub latent_dim: usize,
    pub style_dim: usize,
    pub style_layers: usize,
    pub mapping_layers: usize,
    pub base_res: usize,
    pub base_channels: usize,
    pub stage_channels: Vec<usize>,
    pub kernel: usize,
    pub plane_channels: usize,
    pub decoder_hidden: usize,
    pub omega0: f64,
    pub density_gain: f64,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        GeneratorSection {
            latent_dim: g.latent_dim,
            style_dim: g.style_dim,
            style_layers: g.style_layers,
            mapping_layers: g.mapping_layers,
            base_res: g.base_res,
            base_channels: g.base_channels,
            stage_channels: g.stage_channels,
            kernel: g.kernel,
            plane_channels: g.plane_channels,
            decoder_hidden: g.decoder_hidden,
            omega0: g.omega0,
            density_gain: g.density_gain,
        }
    }
}

impl GeneratorSection {
    pub fn to_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            latent_dim: self.latent_dim,
            style_dim: self.style_dim,
            style_layers: self.style_layers,
            mapping_layers: self.mapping_layers,
            base_res: self.base_res,
            base_channels: self.base_channels,
            stage_channels: self.stage_channels.clone(),
            kernel: self.kernel,
            plane_channels: self.plane_channels,
            decoder_hidden: self.decoder_hidden,
            omega0: self.omega0,
            density_gain: self.density_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub objects: usize,
    pub views: usize,
    pub size: usize,
    pub focal: f64,
    pub radius: f64,
    pub azimuth_min: f64,
    pub azimuth_max: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub azimuth_jitter_deg: f64,
    pub elevation_jitter_deg: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let s = ViewSchedule::default();
        OracleSection {
            objects: 4,
            views: s.count,
            size: VIEW_SIZE,
            focal: VIEW_FOCAL,
            radius: s.radius,
            azimuth_min: s.azimuth_deg.0,
            azimuth_max: s.azimuth_deg.1,
            elevation_min: s.elevation_deg.0,
            elevation_max: s.elevation_deg.1,
            azimuth_jitter_deg: 0.0,
            elevation_jitter_deg: 0.0,
        }
    }
}

impl OracleSection {
    pub fn schedule(&self) -> ViewSchedule {
        ViewSchedule {
            azimuth_deg: (self.azimuth_min, self.azimuth_max),
            elevation_deg: (self.elevation_min, self.elevation_max),
            radius: self.radius,
            count: self.views,
        }
    }

    /// Square camera; the focal length scales with the image side so a
    /// larger `size` renders the same view at higher resolution.
    pub fn camera(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::centered(self.size, self.focal * self.size as f64 / VIEW_SIZE as f64)?)
    }

    pub fn jitter(&self) -> PoseJitter {
        PoseJitter { azimuth_deg: self.azimuth_jitter_deg, elevation_deg: self.elevation_jitter_deg }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiftSection {
    pub iterations: u64,
    pub lr_params: f64,
    pub lr_latents: f64,
    pub lambda_iou: f64,
    pub lambda_perc: f64,
    pub rays_per_step: usize,
    pub samples_per_ray: usize,
    pub seed: Option<u64>,
    /// Standard deviation of the initial latent codes.
    pub latent_std: f64,
}

impl Default for LiftSection {
    fn default() -> Self {
        let f = FitConfig::default();
        LiftSection {
            iterations: f.iterations,
            lr_params: f.lr_params,
            lr_latents: f.lr_latents,
            lambda_iou: f.weights.iou,
            lambda_perc: f.weights.perc,
            rays_per_step: f.rays_per_step,
            samples_per_ray: f.samples_per_ray,
            seed: None,
            latent_std: 1.0,
        }
    }
}

impl LiftSection {
    pub fn fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            iterations: self.iterations,
            rays_per_step: self.rays_per_step,
            lr_params: self.lr_params,
            lr_latents: self.lr_latents,
            weights: LossWeights { iou: self.lambda_iou, perc: self.lambda_perc },
            seed,
            samples_per_ray: self.samples_per_ray,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComposeSection {
    pub objects_per_frame: usize,
    pub retry_budget: usize,
    pub max_overlap: f64,
    pub feather_sigma: f64,
    pub shadow_strength: f64,
    pub samples_per_ray: usize,
    /// Emit 2D boxes from the rendered mask instead of the projected corners.
    pub bbox_from_mask: bool,
}

impl Default for ComposeSection {
    fn default() -> Self {
        let c = ComposeConfig::default();
        ComposeSection {
            objects_per_frame: c.num_objects,
            retry_budget: c.retry_budget,
            max_overlap: c.max_overlap,
            feather_sigma: c.feather_sigma,
            shadow_strength: c.shadow_strength,
            samples_per_ray: c.samples_per_ray,
            bbox_from_mask: c.bbox_source == BoxSource::MaskExtents,
        }
    }
}

impl ComposeSection {
    pub fn compose_config(&self) -> ComposeConfig {
        ComposeConfig {
            num_objects: self.objects_per_frame,
            retry_budget: self.retry_budget,
            max_overlap: self.max_overlap,
            feather_sigma: self.feather_sigma,
            shadow_strength: self.shadow_strength,
            samples_per_ray: self.samples_per_ray,
            bbox_source: if self.bbox_from_mask { BoxSource::MaskExtents } else { BoxSource::ProjectedCorners },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub pairs: usize,
    pub offset_deg: f64,
    pub elevation_min: f64,
    pub elevation_max: f64,
    pub radius: f64,
    pub size: usize,
    pub focal: f64,
    pub samples_per_ray: usize,
    /// Per-view color gain spread of the recolored baseline; 0 disables it.
    pub baseline_spread: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        let p = ViewPairSpec::default();
        EvalSection {
            pairs: p.count,
            offset_deg: p.offset_deg,
            elevation_min: p.elevation_deg.0,
            elevation_max: p.elevation_deg.1,
            radius: p.radius,
            size: VIEW_SIZE,
            focal: VIEW_FOCAL,
            samples_per_ray: 64,
            baseline_spread: 0.3,
        }
    }
}

impl EvalSection {
    pub fn pair_spec(&self, seed: u64) -> ViewPairSpec {
        ViewPairSpec {
            offset_deg: self.offset_deg,
            elevation_deg: (self.elevation_min, self.elevation_max),
            radius: self.radius,
            count: self.pairs,
            seed,
        }
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::centered(self.size, self.focal * self.size as f64 / VIEW_SIZE as f64)?)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpSection {
    pub frames: usize,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub size: usize,
    pub focal: f64,
    pub samples_per_ray: usize,
}

impl Default for InterpSection {
    fn default() -> Self {
        InterpSection { frames: 8, azimuth_deg: 30.0, elevation_deg: 15.0, radius: 4.0, size: VIEW_SIZE, focal: VIEW_FOCAL, samples_per_ray: 64 }
    }
}

impl InterpSection {
    pub fn camera(&self) -> Result<CameraIntrinsics> {
        Ok(CameraIntrinsics::centered(self.size, self.focal * self.size as f64 / VIEW_SIZE as f64)?)
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_core_defaults() {
        let c = RunConfig::parse("", Path::new("c")).unwrap();
        assert_eq!(c.generator.to_config(), GeneratorConfig::default());
        assert_eq!(c.lift.fit_config(0), FitConfig::default());
        assert_eq!(c.compose.compose_config(), ComposeConfig::default());
        assert_eq!(c.oracle.schedule(), ViewSchedule::default());
    }

    #[test]
    fn training_keys_are_read() {
        let text = "seed = 7\n[lift]\niterations = 10\nlr_params = 0.002\nlr_latents = 0.02\nlambda_iou = 0.5\nlambda_perc = 0.0\nrays_per_step = 64\nseed = 3\nsamples_per_ray = 16\n";
        let c = RunConfig::parse(text, Path::new("c")).unwrap();
        assert_eq!(c.seed, Some(7));
        let f = c.lift.fit_config(3);
        assert_eq!((f.iterations, f.rays_per_step, f.samples_per_ray, f.seed), (10, 64, 16, 3));
        assert_eq!((f.lr_params, f.lr_latents, f.weights.iou, f.weights.perc), (0.002, 0.02, 0.5, 0.0));
        assert_eq!(c.lift.seed, Some(3));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse("[lift]\niters = 3\n", Path::new("c")).is_err());
        assert!(RunConfig::parse("[nope]\n", Path::new("c")).is_err());
    }
}
