mod common;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sp4d::appearance::{temporal_factor, AppearanceConfig};
use sp4d::field::{condition_at_time, logit, ConditionedGaussian3D, GaussianCloud};
use sp4d::geometry::{eig_sym3, Rotor4, Scales4, Sym2, Sym3};
use sp4d::render::{
    gaussian_normal, prepare_splats, project, rasterize, rasterize_naive, render, render_naive, render_with, Camera,
    RenderBuffers, RenderSettings, Splat2D, KAPPA,
};

use common::*;

fn cg(mu: [f64; 3], cov: Sym3) -> ConditionedGaussian3D {
    ConditionedGaussian3D {
        mu3: Vector3::from(mu),
        cov3: cov,
        temporal_weight: 1.0,
        parent_index: 0,
    }
}

#[test]
fn projection_hand_case() {
    let cam = Camera::centered(64, 48, 100.0);
    let sigma: f64 = 0.02;
    let s = project(&cg([0.0, 0.0, 1.0], Sym3::diagonal([sigma * sigma; 3])), 0.5, [0.1; 3], Vector3::z(), &cam).unwrap();
    assert_eq!(s.mean2, [32.0, 24.0]);
    let expected = 100.0f64.powi(2) * sigma * sigma + KAPPA;
    assert!((s.cov2.xx - expected).abs() < 1e-12);
    assert!((s.cov2.yy - expected).abs() < 1e-12);
    assert!(s.cov2.xy.abs() < 1e-15);
    assert!((s.depth - 1.0).abs() < 1e-15);
}

#[test]
fn projection_clips_behind_near_plane() {
    let cam = Camera::centered(32, 32, 40.0);
    let cov = Sym3::diagonal([0.01; 3]);
    assert!(project(&cg([0.0, 0.0, cam.near * 0.5], cov), 0.5, [0.0; 3], Vector3::z(), &cam).is_none());
    assert!(project(&cg([0.0, 0.0, -1.0], cov), 0.5, [0.0; 3], Vector3::z(), &cam).is_none());
    assert!(project(&cg([50.0, 0.0, 1.0], cov), 0.5, [0.0; 3], Vector3::z(), &cam).is_none());
}

#[test]
fn projection_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let cam = Camera::centered(256, 256, 200.0);
    for _ in 0..10 {
        let mu = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(4.0..6.0)];
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(nalgebra::Vector4::from(random_quat(&mut rng))));
        let r = q.to_rotation_matrix().into_inner();
        let s = Vector3::new(rng.random_range(0.01..0.05), rng.random_range(0.01..0.05), rng.random_range(0.01..0.05));
        let cov = r * Matrix3::from_diagonal(&s.component_mul(&s)) * r.transpose();
        let splat = project(&cg(mu, Sym3::from_matrix(&cov)), 0.5, [0.0; 3], Vector3::z(), &cam).unwrap();
        let mc = monte_carlo_cov2(&mut rng, Vector3::from(mu), cov, cam.fx, cam.fy, 200_000);
        let affine = [[splat.cov2.xx - KAPPA, splat.cov2.xy], [splat.cov2.xy, splat.cov2.yy - KAPPA]];
        let scale = affine[0][0].max(affine[1][1]);
        for a in 0..2 {
            for b in 0..2 {
                assert!((affine[a][b] - mc[a][b]).abs() < 0.05 * scale, "{a}{b}: {} vs {}", affine[a][b], mc[a][b]);
            }
        }
    }
}

#[test]
fn normal_conventions() {
    let cam = Camera::centered(16, 16, 20.0);
    let flat = cg([0.0, 0.0, 5.0], Sym3::diagonal([1.0, 1.0, 1e-4]));
    let n = gaussian_normal(&flat, &cam);
    assert!((n - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-9);

    let iso = cg([0.3, -0.2, 4.0], Sym3::identity());
    let ray = Vector3::new(0.3, -0.2, 4.0).normalize();
    assert!((gaussian_normal(&iso, &cam) + ray).norm() < 1e-12);
}

#[test]
fn normals_rotate_with_the_gaussian() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cam = Camera::centered(16, 16, 20.0);
    let base = Matrix3::from_diagonal(&Vector3::new(0.5, 0.2, 0.01));
    for _ in 0..50 {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(nalgebra::Vector4::from(random_quat(&mut rng))));
        let r = q.to_rotation_matrix().into_inner();
        let mu = [0.0, 0.0, 5.0];
        let n0 = gaussian_normal(&cg(mu, Sym3::from_matrix(&base)), &cam);
        let n1 = gaussian_normal(&cg(mu, Sym3::from_matrix(&(r * base * r.transpose()))), &cam);
        assert!(((r * n0).dot(&n1)).abs() > 1.0 - 1e-9);
        assert!(n1.dot(&Vector3::from(mu)) <= 0.0);
    }
}

fn hand_splat(w: f64, color: [f64; 3], depth: f64, parent: usize) -> Splat2D {
    let cov2 = Sym2::new(1e6, 0.0, 1e6);
    Splat2D {
        mean2: [0.5, 0.5],
        cov2,
        inv_cov2: cov2.inverse().unwrap(),
        depth,
        color,
        normal_cam: [0.0, 0.0, -1.0],
        eff_opacity: w,
        parent_index: parent,
        radius: 1e4,
        q_cutoff: f64::INFINITY,
    }
}

#[test]
fn two_splat_compositing() {
    let cam = Camera::centered(1, 1, 10.0);
    let splats = [hand_splat(0.5, [0.0, 1.0, 0.0], 2.0, 1), hand_splat(0.5, [1.0, 0.0, 0.0], 1.0, 0)];
    for out in [rasterize(&splats, &cam, 16, false), rasterize(&splats, &cam, 16, true), rasterize_naive(&splats, &cam)] {
        assert_eq!(out.color[0], [0.5, 0.25, 0.0]);
        assert_eq!(out.alpha[0], 0.75);
        assert_eq!(out.depth[0], 4.0 / 3.0);
        assert_eq!(out.normal[0], [0.0, 0.0, -1.0]);
    }
    let single = rasterize(&[hand_splat(0.999, [0.2, 0.4, 0.6], 3.0, 0)], &cam, 16, false);
    assert_eq!(single.alpha[0], 0.99);
    assert!((single.depth[0] - 3.0).abs() < 1e-15);
}

fn random_scene(seed: u64, max: usize) -> (GaussianCloud, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=max);
    (random_cloud(&mut rng, n, AppearanceConfig::default()), camera(64, 64, rng.random_range(0.0..1.0)))
}

#[test]
fn tiled_matches_naive_and_parallel_matches_serial() {
    for seed in 0..12 {
        let (cloud, cam) = random_scene(seed, 200);
        let serial = RenderSettings { parallel: false, ..RenderSettings::default() };
        let fast = render_with(&cloud, &cam, &RenderSettings::default());
        let naive = render_naive(&cloud, &cam, &serial);
        assert!(max_color_diff(&fast.color, &naive.color) < 1e-6, "seed {seed}");
        for i in 0..fast.alpha.len() {
            assert!((fast.alpha[i] - naive.alpha[i]).abs() < 1e-6);
            assert!((0.0..=1.0).contains(&fast.alpha[i]));
        }
        assert_eq!(fast, render_with(&cloud, &cam, &serial));
    }
}

#[test]
fn tile_size_does_not_change_the_image() {
    let (cloud, cam) = random_scene(40, 80);
    let a = render_with(&cloud, &cam, &RenderSettings { tile_size: 16, ..RenderSettings::default() });
    let b = render_with(&cloud, &cam, &RenderSettings { tile_size: 7, ..RenderSettings::default() });
    assert!(max_color_diff(&a.color, &b.color) < 1e-6);
}

#[test]
fn splat_order_is_internal() {
    let (cloud, cam) = random_scene(41, 60);
    let splats = prepare_splats(&cloud, &cam, &RenderSettings::default());
    let mut rev = splats.clone();
    rev.reverse();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut shuffled = splats.clone();
    for i in (1..shuffled.len()).rev() {
        shuffled.swap(i, rng.random_range(0..=i));
    }
    let a = rasterize(&splats, &cam, 16, true);
    assert_eq!(a, rasterize(&rev, &cam, 16, true));
    assert_eq!(a, rasterize(&shuffled, &cam, 16, true));
}

#[test]
fn adding_a_splat_never_decreases_alpha() {
    let (cloud, cam) = random_scene(42, 60);
    let splats = prepare_splats(&cloud, &cam, &RenderSettings::default());
    let base = rasterize(&splats[1..], &cam, 16, false);
    let more = rasterize(&splats, &cam, 16, false);
    for i in 0..base.alpha.len() {
        assert!(more.alpha[i] >= base.alpha[i] - 1e-15);
    }
}

#[test]
fn empty_and_time_culled_clouds_render_black() {
    let cam = camera(24, 16, 0.9);
    let empty = GaussianCloud::new(AppearanceConfig::default());
    assert_eq!(render(&empty, &cam), RenderBuffers::zeros(24, 16));
    let (mut cloud, _) = random_scene(43, 20);
    for g in cloud.gaussians.iter_mut() {
        g.rotor = Rotor4::default();
        g.mean[3] = 0.1;
        g.scales.log_s[3] = 0.01f64.ln();
    }
    assert_eq!(render(&cloud, &cam), RenderBuffers::zeros(24, 16));
}

#[test]
fn static_scene_is_time_invariant() {
    let (mut cloud, cam) = random_scene(44, 40);
    for g in cloud.gaussians.iter_mut() {
        g.rotor = Rotor4::default();
        g.scales.log_s[3] = 1e10f64.ln();
        let sh = cloud.appearance.sh_count();
        for c in g.appearance.coeffs[sh..].iter_mut() {
            *c = [0.0; 3];
        }
    }
    let a = render(&cloud, &cam.clone().at_time(0.0));
    let b = render(&cloud, &cam.at_time(1.0));
    assert!(a.alpha.iter().any(|&v| v > 0.1));
    assert!(a == b, "renders differ");
}

/// Replaces every Gaussian by a time-independent one equal to its slice at `t`.
fn freeze_at(cloud: &GaussianCloud, t: f64) -> GaussianCloud {
    let cfg = cloud.appearance;
    let sh = cfg.sh_count();
    let mut out = GaussianCloud::new(cfg);
    for g in &cloud.gaussians {
        let c = condition_at_time(g, t);
        let e = eig_sym3(&c.cov3);
        let mut v = e.vectors;
        if v.determinant() < 0.0 {
            v.set_column(0, &(-v.column(0)));
        }
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(v));
        let mut appearance = cfg.zeros();
        for n in 0..=cfg.temporal_order {
            let tau = temporal_factor(n, t, cfg.period, &g.appearance.phases);
            for k in 0..sh {
                for ch in 0..3 {
                    appearance.coeffs[k][ch] += tau * g.appearance.coeffs[n * sh + k][ch];
                }
            }
        }
        out.gaussians.push(sp4d::field::Gaussian4D {
            mean: [c.mu3.x, c.mu3.y, c.mu3.z, t],
            rotor: Rotor4::from_spatial([q.w, q.i, q.j, q.k]),
            scales: Scales4::from_linear([e.values[0].sqrt(), e.values[1].sqrt(), e.values[2].sqrt(), 1e10]),
            opacity_logit: logit(g.opacity() * c.temporal_weight),
            appearance,
        });
    }
    out
}

#[test]
fn slicing_matches_an_explicit_static_cloud() {
    for seed in 50..55 {
        let (cloud, cam) = random_scene(seed, 30);
        let frozen = freeze_at(&cloud, cam.time);
        let a = render(&cloud, &cam);
        let b = render(&frozen, &cam);
        assert!(max_color_diff(&a.color, &b.color) < 1e-6, "seed {seed}: {}", max_color_diff(&a.color, &b.color));
    }
}
