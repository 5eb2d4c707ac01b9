use super::*;
use crate::math::{softplus, Vec3};

fn tiny_config() -> GeneratorConfig {
    GeneratorConfig {
        latent_dim: 6,
        style_dim: 5,
        style_layers: 3,
        mapping_layers: 3,
        base_res: 4,
        base_channels: 4,
        stage_channels: vec![4, 3],
        kernel: 3,
        plane_channels: 3,
        decoder_hidden: 6,
        omega0: 3.0,
        density_gain: 2.0,
    }
}

fn probe_weights(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = Rng::new(seed, Stream::Noise);
    (0..n).map(|_| rng.range(-1.0, 1.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Scalar probe of the full generator: a fixed random linear functional of
/// the planes plus density/color at a few points.
fn probe_loss(params: &GeneratorParams, z: &LatentCode, r: &[f64], points: &[Vec3]) -> f64 {
    let (style, field) = params.generate(z).unwrap();
    let planes: f64 = field.planes().iter().zip(r).map(|(a, b)| a * b).sum();
    let cond = field.conditioned(&style).unwrap();
    let mut s = planes;
    for (i, p) in points.iter().enumerate() {
        let q = cond.query(*p).unwrap();
        s += (i as f64 + 1.0) * 0.1 * q.sigma + q.color[0] - 0.5 * q.color[2];
    }
    s
}

fn probe_grad(params: &GeneratorParams, z: &LatentCode, r: &[f64], points: &[Vec3]) -> (Vec<f64>, Vec<f64>) {
    let (style, mt) = params.map_latent_with_tape(z).unwrap();
    let (field, st) = params.synthesize_with_tape(&style).unwrap();
    let cond = field.conditioned(&style).unwrap();
    let mut fg = FieldGrad::new(&field);
    fg.planes.copy_from_slice(&r[..field.planes().len()]);
    let mut batch = SampleBatch::new(&field, points.len());
    for (i, p) in points.iter().enumerate() {
        cond.eval(&mut batch, i, *p);
        cond.backward(&batch, i, (i as f64 + 1.0) * 0.1, [1.0, 0.0, -0.5], &mut fg);
    }
    cond.finish(&mut fg);
    let mut grad = params.zero_grad();
    let dz = params.backward_to_latent(&mt, &st, &fg, &mut grad);
    (grad, dz)
}

#[test]
fn full_generator_gradient_matches_central_differences() {
    let params = GeneratorParams::init(tiny_config(), 11).unwrap();
    let mut rng = Rng::new(3, Stream::Noise);
    let z = LatentCode::random(6, 1.0, &mut rng);
    let r = probe_weights(3 * 16 * 16 * 3, 5);
    let points = [Vec3::new(0.1, -0.3, 0.7), Vec3::new(-0.9, 0.2, 0.05), Vec3::new(0.55, 0.61, -0.42)];
    let (grad, dz) = probe_grad(&params, &z, &r, &points);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe_rng = Rng::new(9, Stream::Noise);
    for _ in 0..200 {
        let i = probe_rng.below(params.len());
        let mut p = params.clone();
        p.data_mut()[i] += h;
        let up = probe_loss(&p, &z, &r, &points);
        p.data_mut()[i] -= 2.0 * h;
        let down = probe_loss(&p, &z, &r, &points);
        let fd = (up - down) / (2.0 * h);
        if fd.abs() > 1e-6 || grad[i].abs() > 1e-6 {
            worst = worst.max(rel_err(fd, grad[i]));
        }
    }
    assert!(worst < 1e-4, "parameter gradient relative error {worst}");
    for k in 0..z.dim() {
        let mut zp = z.clone();
        zp.0[k] += h;
        let mut zm = z.clone();
        zm.0[k] -= h;
        let fd = (probe_loss(&params, &zp, &r, &points) - probe_loss(&params, &zm, &r, &points)) / (2.0 * h);
        assert!(rel_err(fd, dz[k]) < 1e-4, "latent {k}: fd {fd} vs {}", dz[k]);
    }
}

#[test]
fn zero_latent_with_zero_biases_maps_to_zero() {
    let params = GeneratorParams::init(tiny_config(), 1).unwrap();
    let w = params.map_latent(&LatentCode::zeros(6)).unwrap();
    assert!(w.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mapping_is_deterministic_and_checks_dims() {
    let params = GeneratorParams::init(tiny_config(), 1).unwrap();
    let mut rng = Rng::new(1, Stream::Noise);
    let z = LatentCode::random(6, 1.0, &mut rng);
    assert_eq!(params.map_latent(&z).unwrap(), params.map_latent(&z).unwrap());
    assert!(matches!(params.map_latent(&LatentCode::zeros(5)), Err(crate::Error::Config(_))));
}

#[test]
fn mapping_perturbation_is_bounded_by_lipschitz_estimate() {
    let params = GeneratorParams::init(GeneratorConfig::default(), 2).unwrap();
    let bound = params.mapping_lipschitz_bound();
    let mut rng = Rng::new(2, Stream::Noise);
    for _ in 0..20 {
        let z = LatentCode::random(64, 1.0, &mut rng);
        let dir = LatentCode::random(64, 1.0, &mut rng);
        let norm = libm::sqrt(dir.0.iter().map(|v| v * v).sum::<f64>());
        let dz = LatentCode(z.0.iter().zip(&dir.0).map(|(a, b)| a + 1e-6 * b / norm).collect());
        let w0 = params.map_latent(&z).unwrap();
        let w1 = params.map_latent(&dz).unwrap();
        let dw = libm::sqrt(w0.layer(0).iter().zip(w1.layer(0)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        assert!(dw <= bound * 1e-6 * (1.0 + 1e-9));
    }
}

#[test]
fn synthesis_is_deterministic() {
    let params = GeneratorParams::init(tiny_config(), 4).unwrap();
    let mut rng = Rng::new(4, Stream::Noise);
    let z = LatentCode::random(6, 1.0, &mut rng);
    let (_, a) = params.generate(&z).unwrap();
    let (_, b) = params.generate(&z).unwrap();
    assert_eq!(a.planes(), b.planes());
}

#[test]
fn identity_modulation_equals_unmodulated_pathway() {
    let cfg = tiny_config();
    let mut params = GeneratorParams::init(cfg.clone(), 6).unwrap();
    let layout = params.layout().clone();
    let mut convs = layout.stages.clone();
    convs.push(layout.to_planes);
    for c in &convs {
        for d in [c.gain, c.shift] {
            params.data_mut()[d.w..d.w + d.fan_in * d.fan_out].iter_mut().for_each(|v| *v = 0.0);
            params.data_mut()[d.b..d.b + d.fan_out].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut rng = Rng::new(6, Stream::Noise);
    let s1 = StyleVector::broadcast(3, &(0..5).map(|_| rng.normal(0.0, 1.0)).collect::<Vec<_>>());
    let s2 = StyleVector::broadcast(3, &(0..5).map(|_| rng.normal(0.0, 1.0)).collect::<Vec<_>>());
    let a = params.synthesize_planes(&s1).unwrap();
    let b = params.synthesize_planes(&s2).unwrap();
    assert_eq!(a.planes(), b.planes());

    // Reference: the plain conv stack without any modulation.
    let data = params.data();
    let mut x = data[layout.base..layout.base + 4 * 16].to_vec();
    let mut res = 4;
    for st in &layout.stages {
        let up = synthesis::upsample2x(&x, st.cin, res);
        res *= 2;
        let mut out = vec![0.0; st.cout * res * res];
        synthesis::conv_forward(&up, res, data, st, &mut out);
        x = out.iter().map(|&v| leaky_relu(v)).collect();
    }
    let mut proj = vec![0.0; layout.to_planes.cout * res * res];
    synthesis::conv_forward(&x, res, data, &layout.to_planes, &mut proj);
    for p in 0..3 {
        for c in 0..3 {
            for idx in 0..res * res {
                assert_eq!(a.planes()[(p * res * res + idx) * 3 + c], proj[(p * 3 + c) * res * res + idx]);
            }
        }
    }
}

fn field_with_planes(params: &GeneratorParams, f: impl Fn(usize) -> f64) -> TriPlaneField {
    let z = LatentCode::zeros(params.config().latent_dim);
    let (_, mut field) = params.generate(&z).unwrap();
    for (i, v) in field.planes_mut().iter_mut().enumerate() {
        *v = f(i);
    }
    field
}

#[test]
fn query_at_node_is_sum_of_node_vectors() {
    let params = GeneratorParams::init(tiny_config(), 8).unwrap();
    let field = field_with_planes(&params, |i| ((i * 37) % 101) as f64 / 101.0);
    let n = field.res();
    // Node (i, j, k) of the implicit 3D grid.
    let (i, j, k) = (3usize, 7usize, 12usize);
    let coord = |a: usize| -1.0 + 2.0 * a as f64 / (n - 1) as f64;
    let x = Vec3::new(coord(i), coord(j), coord(k));
    let mut feat = vec![0.0; 3];
    field.feature_into(x, &mut feat);
    for c in 0..3 {
        let expect = field.planes()[field.node_index(0, i, j) + c] + field.planes()[field.node_index(1, i, k) + c] + field.planes()[field.node_index(2, j, k) + c];
        assert!((feat[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn query_at_cell_center_averages_four_nodes() {
    let params = GeneratorParams::init(tiny_config(), 8).unwrap();
    let field = field_with_planes(&params, |i| ((i * 53) % 97) as f64 / 97.0);
    let n = field.res();
    let h = 1.0 / (n - 1) as f64;
    let coord = |a: usize| -1.0 + 2.0 * a as f64 / (n - 1) as f64 + h;
    let (i, j, k) = (2usize, 5usize, 9usize);
    let x = Vec3::new(coord(i), coord(j), coord(k));
    let mut feat = vec![0.0; 3];
    field.feature_into(x, &mut feat);
    let avg = |p: usize, a: usize, b: usize, c: usize| {
        0.25 * (field.planes()[field.node_index(p, a, b) + c]
            + field.planes()[field.node_index(p, a + 1, b) + c]
            + field.planes()[field.node_index(p, a, b + 1) + c]
            + field.planes()[field.node_index(p, a + 1, b + 1) + c])
    };
    for c in 0..3 {
        let expect = avg(0, i, j, c) + avg(1, i, k, c) + avg(2, j, k, c);
        assert!((feat[c] - expect).abs() < 1e-12);
    }
}

#[test]
fn zero_features_and_biases_decode_to_activation_of_zero() {
    let params = GeneratorParams::init(tiny_config(), 8).unwrap();
    let mut field = field_with_planes(&params, |_| 0.0);
    let dl = *field.decoder_layout();
    for d in [dl.linear, dl.film_gain, dl.film_shift, dl.sigma, dl.color] {
        field.decoder_mut()[d.b..d.b + d.fan_out].iter_mut().for_each(|v| *v = 0.0);
    }
    let style = StyleVector::broadcast(3, &[0.0; 5]);
    let q = query_field(&field, Vec3::new(0.3, -0.2, 0.9), &style).unwrap();
    assert_eq!(q.sigma, softplus(0.0));
    assert_eq!(q.color, [0.5; 3]);
    assert!(query_field(&field, Vec3::new(1.2, 0.0, 0.0), &style).is_err());
}

#[test]
fn outputs_stay_in_range_for_extreme_parameters() {
    let params = GeneratorParams::init(tiny_config(), 8).unwrap();
    let mut field = field_with_planes(&params, |i| if i % 2 == 0 { 1e3 } else { -1e3 });
    field.decoder_mut().iter_mut().enumerate().for_each(|(i, v)| *v = if i % 3 == 0 { 50.0 } else { -50.0 });
    let style = StyleVector::broadcast(3, &[10.0; 5]);
    let cond = field.conditioned(&style).unwrap();
    for k in 0..50 {
        let t = k as f64 / 49.0 * 2.0 - 1.0;
        let q = cond.query(Vec3::new(t, -t * 0.5, t * t)).unwrap();
        assert!(q.sigma >= 0.0 && q.sigma.is_finite());
        assert!(q.color.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}
