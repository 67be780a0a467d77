use prostfuse::geometry::{RigidTransform, Vec3};
use prostfuse::phantom::{generate, noise_volume, perturb, PhantomConfig};
use prostfuse::registration::{paired_residual, register_iconic, register_paired_points, RegistrationConfig};
use prostfuse::session::calcification_pairs;
use prostfuse::similarity::SimilarityKind;
use prostfuse::validation::fiducial_error;
use prostfuse::Volume3D;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> PhantomConfig {
    PhantomConfig {
        dims: [64; 3],
        spacing: [1.2; 3],
        seed,
        ..PhantomConfig::default()
    }
}

fn assert_near_identity(t: &RigidTransform, mm: f64, deg: f64) {
    assert!(t.rotation_angle_deg() <= deg, "rotation {} deg", t.rotation_angle_deg());
    assert!(t.translation().norm() <= mm, "translation {} mm", t.translation().norm());
}

#[test]
fn self_registration_is_identity_for_every_metric() {
    let (v, _) = generate(&small(1)).unwrap();
    for metric in [SimilarityKind::Ssd, SimilarityKind::Ncc, SimilarityKind::Nmi { bins: 32 }] {
        let cfg = RegistrationConfig {
            metric,
            ..RegistrationConfig::default()
        };
        let r = register_iconic(&v, &v, &cfg).unwrap();
        assert!(r.succeeded, "{metric}");
        assert_near_identity(&r.transform, 0.1, 0.1);
        assert!(r.elapsed >= 0.0);
    }
}

#[test]
fn ncc_result_ignores_affine_intensity_changes() {
    let cfg = small(2);
    let (a, truth) = generate(&cfg).unwrap();
    let (b, _) = perturb(&cfg, &truth, &RigidTransform::from_euler(4.0, -3.0, 2.0, -2.0, 3.0, 1.0), 20).unwrap();
    let rc = RegistrationConfig::default();
    let plain = register_iconic(&a, &b, &rc).unwrap();
    for (scale, offset) in [(2.5f32, 10.0f32), (0.3, -40.0)] {
        let rescaled = b.map(|v| scale * v + offset).unwrap();
        let r = register_iconic(&a, &rescaled, &rc).unwrap();
        let diff = r.transform.invert().compose(&plain.transform);
        assert_near_identity(&diff, rc.tolerance_mm, rc.tolerance_deg);
    }
}

#[test]
fn forward_and_backward_registrations_cancel() {
    let rc = RegistrationConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..3 {
        // speckle makes each direction settle on its own noisy optimum
        let cfg = PhantomConfig {
            speckle_sigma: 0.0,
            ..small(30 + seed)
        };
        let (a, truth) = generate(&cfg).unwrap();
        let t = prostfuse::phantom::random_motion(&mut rng, 6.0, 4.0);
        let (b, _) = perturb(&cfg, &truth, &t, 300 + seed).unwrap();
        let ab = register_iconic(&a, &b, &rc).unwrap();
        let ba = register_iconic(&b, &a, &rc).unwrap();
        assert!(ab.succeeded && ba.succeeded);
        let loop_ = ba.transform.compose(&ab.transform);
        assert_near_identity(&loop_, 2.0 * rc.tolerance_mm, 2.0 * rc.tolerance_deg);
    }
}

#[test]
fn pyramid_levels_never_regress() {
    let cfg = small(4);
    let (a, truth) = generate(&cfg).unwrap();
    let (b, _) = perturb(&cfg, &truth, &RigidTransform::from_euler(-5.0, 4.0, 3.0, 3.0, -2.0, -4.0), 40).unwrap();
    for metric in [SimilarityKind::Ssd, SimilarityKind::Ncc] {
        let r = register_iconic(&a, &b, &RegistrationConfig { metric, ..RegistrationConfig::default() }).unwrap();
        assert_eq!(r.levels.len(), 3);
        for level in &r.levels {
            if metric.higher_is_better() {
                assert!(level.final_score >= level.initial_score, "{level:?}");
            } else {
                assert!(level.final_score <= level.initial_score, "{level:?}");
            }
        }
    }
}

#[test]
fn phantom_pair_fiducial_error() {
    let cfg = PhantomConfig {
        seed: 5,
        ..PhantomConfig::default()
    };
    let (a, truth) = generate(&cfg).unwrap();
    // 5 degrees about a mixed axis, 4 mm
    let rot = RigidTransform::from_axis_angle(Vec3::new(1.0, 1.0, 1.0), 5.0);
    let t = RigidTransform::from_parts(*rot.rotation(), Vec3::new(4.0, 0.0, 0.0));
    let (b, moved) = perturb(&cfg, &truth, &t, 55).unwrap();
    let r = register_iconic(&a, &b, &RegistrationConfig::default()).unwrap();
    assert!(r.succeeded);
    let fre = fiducial_error(&calcification_pairs(&truth, &moved), &r.transform).unwrap();
    assert!(fre.mean <= 1.5, "{fre:?}");
}

#[test]
fn noise_pair_is_rejected() {
    let cfg = small(6);
    let a = noise_volume(&cfg, 61).unwrap();
    let b = noise_volume(&cfg, 62).unwrap();
    let r = register_iconic(&a, &b, &RegistrationConfig::default()).unwrap();
    assert!(!r.succeeded);
}

#[test]
fn left_lobe_flag_crosses_the_half_turn() {
    let cfg = small(7);
    let (a, truth) = generate(&cfg).unwrap();
    let t = RigidTransform::from_euler(2.0, 1.0, 183.0, 1.0, 2.0, 0.0);
    let (b, _) = perturb(&cfg, &truth, &t, 70).unwrap();
    let without = register_iconic(&a, &b, &RegistrationConfig::default()).unwrap();
    assert!(!without.succeeded);
    let with = register_iconic(&a, &b, &RegistrationConfig { left_lobe_mode: true, ..RegistrationConfig::default() }).unwrap();
    assert!(with.succeeded);
    assert_near_identity(&with.transform.invert().compose(&t), 0.5, 0.5);
}

#[test]
fn rescaled_volume_keeps_geometry() {
    let (v, _) = generate(&small(8)).unwrap();
    let w: Volume3D = v.map(|x| 3.0 * x).unwrap();
    assert!(v.same_geometry(&w));
}

/// Minimum residual over a 2° Euler grid, translation solved in closed form.
fn brute_force_residual(pairs: &[(Vec3, Vec3)]) -> f64 {
    let n = pairs.len() as f64;
    let cf = pairs.iter().map(|p| p.0).sum::<Vec3>() / n;
    let cm = pairs.iter().map(|p| p.1).sum::<Vec3>() / n;
    let centred: Vec<(Vec3, Vec3)> = pairs.iter().map(|(f, m)| (f - cf, m - cm)).collect();
    let mut best = f64::INFINITY;
    for rz in (-90..90).map(|k| 2.0 * k as f64) {
        for ry in (-45..=45).map(|k| 2.0 * k as f64) {
            for rx in (-90..90).map(|k| 2.0 * k as f64) {
                let r = RigidTransform::from_euler(rx, ry, rz, 0.0, 0.0, 0.0).rotation_matrix();
                let mut sum = 0.0;
                for (f, m) in &centred {
                    sum += (m - r * f).norm_squared();
                    if sum >= best {
                        break;
                    }
                }
                best = best.min(sum);
            }
        }
    }
    best
}

#[test]
fn paired_fit_matches_exhaustive_rotation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..3 {
        let pts: Vec<Vec3> = (0..3)
            .map(|_| Vec3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)))
            .collect();
        let t = RigidTransform::from_euler(
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-80.0..80.0),
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        );
        // noisy landmarks so the optimum residual is not zero
        let pairs: Vec<(Vec3, Vec3)> = pts
            .iter()
            .map(|p| (*p, t.apply_point(p) + Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect();
        let fit = register_paired_points(&pairs).unwrap();
        let closed: f64 = pairs.iter().map(|(f, m)| (m - fit.apply_point(f)).norm_squared()).sum();
        assert!((paired_residual(&pairs, &fit).powi(2) - closed).abs() < 1e-9 * closed.max(1.0));
        let brute = brute_force_residual(&pairs);
        // the closed form is never beaten, and the grid gets within one 2° step
        let centroid = pts.iter().sum::<Vec3>() / 3.0;
        let radius = pts.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
        let step = (2.0f64 * 3f64.sqrt()).to_radians() * radius;
        assert!(closed <= brute + 1e-9, "closed {closed} brute {brute}");
        assert!(brute - closed <= 3.0 * (step * step + 2.0 * step * closed.sqrt()), "closed {closed} brute {brute}");
    }
}
