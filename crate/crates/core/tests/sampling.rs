use lift3d_core::compose::{sample_pose, sample_pose_raw, PoseDraw, SampleDistributions};
use lift3d_core::math::PI;
use lift3d_core::rng::{Rng, Stream};

const N: usize = 100_000;

fn draws(seed: u64) -> Vec<PoseDraw> {
    let dist = SampleDistributions::cars(-1.65);
    let mut rng = Rng::new(seed, Stream::Compose);
    (0..N).map(|_| sample_pose_raw(&dist, &mut rng)).collect()
}

/// Kolmogorov-Smirnov statistic of `xs` against `cdf`.
fn ks(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

fn ks_critical(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / 2f64.sqrt()))
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    let v = xs.map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn lateral_position_is_uniform() {
    let d = ks(draws(1).iter().map(|p| p.x).collect(), |x| ((x + 20.0) / 40.0).clamp(0.0, 1.0));
    assert!(d < ks_critical(N), "KS {d}");
}

#[test]
fn depth_is_uniform() {
    let d = ks(draws(2).iter().map(|p| p.z).collect(), |z| ((z - 5.0) / 40.0).clamp(0.0, 1.0));
    assert!(d < ks_critical(N), "KS {d}");
}

#[test]
fn dimensions_match_their_gaussians() {
    let s = draws(3);
    for (name, mean, std, xs) in [
        ("l", 3.88, 0.5, s.iter().map(|p| p.l).collect::<Vec<_>>()),
        ("w", 1.63, 0.5, s.iter().map(|p| p.w).collect()),
        ("h", 1.53, 0.5, s.iter().map(|p| p.h).collect()),
    ] {
        let (m, sd) = mean_std(xs.iter().copied());
        assert!((m - mean).abs() < 0.02 * mean, "{name} mean {m}");
        assert!((sd - std).abs() < 0.02 * std, "{name} std {sd}");
        let d = ks(xs, |x| phi((x - mean) / std));
        assert!(d < ks_critical(N), "{name} KS {d}");
    }
}

#[test]
fn bottom_height_is_gaussian_around_the_ground() {
    let (m, sd) = mean_std(draws(4).iter().map(|p| p.y_bottom));
    assert!((m + 1.65).abs() < 0.02 * 0.2, "mean {m}");
    assert!((sd - 0.2).abs() < 0.02 * 0.2, "std {sd}");
}

#[test]
fn yaw_modes_are_equally_likely() {
    let s = draws(5);
    let first = s.iter().filter(|p| p.yaw_mode == 0).count() as f64 / N as f64;
    assert!((0.48..=0.52).contains(&first), "mode frequency {first}");
}

#[test]
fn yaw_follows_the_wrapped_mixture() {
    let s = draws(6);
    assert!(s.iter().all(|p| p.theta > -PI && p.theta <= PI));
    let sigma = PI / 2.0;
    let wrapped = |t: f64, mu: f64| -> f64 {
        (-4..=4)
            .map(|k| {
                let shift = 2.0 * PI * k as f64;
                phi((t + shift - mu) / sigma) - phi((-PI + shift - mu) / sigma)
            })
            .sum()
    };
    let cdf = |t: f64| 0.5 * wrapped(t, PI / 2.0) + 0.5 * wrapped(t, -PI / 2.0);
    let d = ks(s.iter().map(|p| p.theta).collect(), cdf);
    assert!(d < ks_critical(N), "KS {d}");
}

#[test]
fn labels_are_rounded_and_bottom_anchored() {
    let dist = SampleDistributions::cars(-1.65);
    let mut a = Rng::new(7, Stream::Compose);
    let mut b = Rng::new(7, Stream::Compose);
    for _ in 0..1000 {
        let raw = sample_pose_raw(&dist, &mut a);
        let boxed = sample_pose(&dist, &mut b);
        for v in [boxed.x, boxed.z, boxed.l, boxed.w, boxed.h, boxed.theta] {
            assert!((v * 100.0 - (v * 100.0).round()).abs() < 1e-6);
        }
        assert!((boxed.y - boxed.h / 2.0 - raw.y_bottom).abs() <= 0.005 + 1e-9);
    }
}
