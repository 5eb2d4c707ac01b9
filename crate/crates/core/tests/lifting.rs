use lift3d_core::eval::{FieldRenderer, ViewRenderer};
use lift3d_core::generator::{GeneratorConfig, GeneratorParams};
use lift3d_core::geometry::{orbit_pose, CameraIntrinsics, ViewSchedule};
use lift3d_core::optim::{fit, init_latents, FitConfig, FitOutput, ObjectRecord};
use lift3d_core::oracle::{gen_objects, PoseJitter};

fn small_config() -> GeneratorConfig {
    GeneratorConfig {
        latent_dim: 8,
        style_dim: 8,
        style_layers: 3,
        mapping_layers: 2,
        base_res: 4,
        base_channels: 8,
        stage_channels: vec![8, 6],
        kernel: 3,
        plane_channels: 4,
        decoder_hidden: 8,
        omega0: 10.0,
        density_gain: 5.0,
    }
}

fn records() -> Vec<ObjectRecord> {
    let cam = CameraIntrinsics::centered(16, 20.0).unwrap();
    let schedule = ViewSchedule { count: 6, ..Default::default() };
    let objects = gen_objects(3, &schedule, &cam, 9, PoseJitter::default()).unwrap();
    let latents = init_latents(objects.len(), 8, 1.0, 9);
    objects
        .into_iter()
        .zip(latents)
        .enumerate()
        .map(|(i, (o, latent))| ObjectRecord { id: format!("obj_{i:03}"), latent, views: o.views.into_iter().map(|v| v.image).collect() })
        .collect()
}

fn cfg(iterations: u64) -> FitConfig {
    FitConfig { iterations, rays_per_step: 64, samples_per_ray: 16, seed: 4, ..Default::default() }
}

fn run(iterations: u64) -> FitOutput {
    fit(&records(), GeneratorParams::init(small_config(), 4).unwrap(), &cfg(iterations), None).unwrap()
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn fit_does_not_depend_on_worker_count() {
    let one = in_pool(1, || run(6));
    let three = in_pool(3, || run(6));
    assert_eq!(one, three);
}

#[test]
fn split_run_matches_single_run() {
    let full = run(8);
    let mut recs = records();
    let params = GeneratorParams::init(small_config(), 4).unwrap();
    let a = fit(&recs, params, &cfg(3), None).unwrap();
    for (r, z) in recs.iter_mut().zip(&a.latents) {
        r.latent = z.clone();
    }
    let b = fit(&recs, a.params, &cfg(5), Some(a.state)).unwrap();
    assert_eq!(b, full);
}

#[test]
fn loss_decreases_over_a_short_fit() {
    let out = run(60);
    let h = &out.state.history;
    let head: f64 = h[..10].iter().map(|r| r.terms.total).sum();
    let tail: f64 = h[h.len() - 10..].iter().map(|r| r.terms.total).sum();
    assert!(tail < head, "loss went from {head} to {tail}");
}

#[test]
fn swapping_latents_swaps_renders() {
    let out = run(20);
    let cam = CameraIntrinsics::centered(16, 20.0).unwrap();
    let pose = orbit_pose(40.0, 15.0, 4.0).unwrap();
    let render = |k: usize| FieldRenderer::new(&out.params, &out.latents[k], cam, 16).unwrap().render_view(&pose, 0).unwrap();
    let before: Vec<_> = (0..3).map(render).collect();
    let mut swapped = out.latents.clone();
    swapped.swap(0, 2);
    let after: Vec<_> = swapped
        .iter()
        .map(|z| FieldRenderer::new(&out.params, z, cam, 16).unwrap().render_view(&pose, 0).unwrap())
        .collect();
    assert_eq!(after[0], before[2]);
    assert_eq!(after[2], before[0]);
    assert_eq!(after[1], before[1]);
    assert_ne!(before[0], before[2]);
}
