use lift3d_core::generator::{GeneratorConfig, GeneratorParams, LatentCode};
use lift3d_core::geometry::{orbit_pose, CameraIntrinsics};
use lift3d_core::optim::{field_patch_loss, patch_loss, LossWeights, Patch, PosedImage};
use lift3d_core::oracle::{gen_scene, render_oracle};
use lift3d_core::render::RaySampleSpec;
use lift3d_core::rng::{Rng, Stream};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;
const PROBES: usize = 16;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn view() -> PosedImage {
    let cam = CameraIntrinsics::centered(8, 10.0).unwrap();
    let pose = orbit_pose(35.0, 20.0, 4.0).unwrap();
    let r = render_oracle(&gen_scene(3), &cam, &pose);
    PosedImage::new(r.rgb, r.mask, pose, cam).unwrap()
}

fn spec() -> RaySampleSpec {
    RaySampleSpec { samples_per_ray: 24, stratified: true }
}

/// Indices of `grad` (restricted to `range`) with a non-negligible gradient,
/// sampled without bias toward any tensor.
fn support_probes(grad: &[f64], range: core::ops::Range<usize>, seed: u64) -> Vec<usize> {
    let support: Vec<usize> = range.filter(|&i| grad[i].abs() > 1e-5).collect();
    assert!(support.len() >= PROBES, "only {} indices carry gradient", support.len());
    let mut rng = Rng::new(seed, Stream::Noise);
    (0..PROBES).map(|_| support[rng.below(support.len())]).collect()
}

struct Setup {
    params: GeneratorParams,
    z: LatentCode,
    view: PosedImage,
    patch: Patch,
    weights: LossWeights,
}

impl Setup {
    fn new() -> Self {
        let params = GeneratorParams::init(GeneratorConfig::default(), 5).unwrap();
        let z = LatentCode::random(64, 1.0, &mut Rng::new(2, Stream::Init));
        Setup { params, z, view: view(), patch: Patch::full(8, 8), weights: LossWeights::default() }
    }

    fn loss(&self, params: &GeneratorParams, z: &LatentCode) -> f64 {
        patch_loss(params, z, &self.view, &self.patch, &self.weights, &spec(), 17).unwrap().terms.total
    }
}

fn check_param_group(name: &str, seed: u64) {
    let s = Setup::new();
    let vl = patch_loss(&s.params, &s.z, &s.view, &s.patch, &s.weights, &spec(), 17).unwrap();
    let range = s.params.layout().groups().into_iter().find(|(n, _)| *n == name).unwrap().1;
    for i in support_probes(&vl.d_params, range, seed) {
        let mut p = s.params.clone();
        p.data_mut()[i] += H;
        let up = s.loss(&p, &s.z);
        p.data_mut()[i] -= 2.0 * H;
        let down = s.loss(&p, &s.z);
        let fd = (up - down) / (2.0 * H);
        let e = rel_err(vl.d_params[i], fd);
        assert!(e < TOL, "{name}[{i}]: analytic {} numeric {fd} rel {e}", vl.d_params[i]);
    }
}

#[test]
fn latent_gradient_matches_central_differences() {
    let s = Setup::new();
    let vl = patch_loss(&s.params, &s.z, &s.view, &s.patch, &s.weights, &spec(), 17).unwrap();
    for k in support_probes(&vl.d_latent, 0..64, 1) {
        let mut zp = s.z.clone();
        zp.0[k] += H;
        let mut zm = s.z.clone();
        zm.0[k] -= H;
        let fd = (s.loss(&s.params, &zp) - s.loss(&s.params, &zm)) / (2.0 * H);
        let e = rel_err(vl.d_latent[k], fd);
        assert!(e < TOL, "latent[{k}]: analytic {} numeric {fd} rel {e}", vl.d_latent[k]);
    }
}

#[test]
fn plane_feature_gradient_matches_central_differences() {
    let s = Setup::new();
    let (style, field) = s.params.generate(&s.z).unwrap();
    let loss = |f: &lift3d_core::generator::TriPlaneField| {
        field_patch_loss(f, &style, &s.view, &s.patch, &s.weights, &spec(), 17).unwrap().0.total
    };
    let (_, fg) = field_patch_loss(&field, &style, &s.view, &s.patch, &s.weights, &spec(), 17).unwrap();
    for i in support_probes(&fg.planes, 0..fg.planes.len(), 2) {
        let mut f = field.clone();
        f.planes_mut()[i] += H;
        let up = loss(&f);
        f.planes_mut()[i] -= 2.0 * H;
        let down = loss(&f);
        let fd = (up - down) / (2.0 * H);
        let e = rel_err(fg.planes[i], fd);
        assert!(e < TOL, "plane[{i}]: analytic {} numeric {fd} rel {e}", fg.planes[i]);
    }
}

#[test]
fn decoder_gradient_matches_central_differences() {
    check_param_group("decoder", 3);
}

#[test]
fn mapping_gradient_matches_central_differences() {
    check_param_group("mapping", 4);
}

#[test]
fn synthesis_gradient_matches_central_differences() {
    check_param_group("synthesis", 5);
}

#[test]
fn constant_base_gradient_matches_central_differences() {
    check_param_group("synthesis.const", 6);
}
