//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion fails.

use checkcal::calib_opt::{fitness_joint, fitness_rotation, init_rotation, FeatureMatrices};
use checkcal::cam_features::{board_object_points, estimate_board_pose, undistort_points, CornerGrid};
use checkcal::config::CalibConfig;
use checkcal::dataset::{generate_dataset, load_samples};
use checkcal::geom::{
    angle_between, axis_angle, euler_to_rot, rot_to_euler, rotation_angle, rotation_error, translation_error, wrap_angle,
    EulerXYZ, Mat3, RigidTransform, Vec2, Vec3,
};
use checkcal::lidar_features::{crop_region, extract_board_features, fit_plane_lsq, project_to_plane, RansacParams, RegionBounds};
use checkcal::sim::{perturb_features, LidarModel, NoiseSpec, PoseSampling, Scene};
use checkcal::study::{fit_levels, simulate_study, spread_stats, spread_study, SimRow, SimulateParams, SpreadParams};
use checkcal::{calibrate, CalibrationSettings, Sample};
use nalgebra::Matrix3xX;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::time::Instant;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn region() -> RegionBounds {
    RegionBounds { x_min: 1.5, x_max: 4.5, y_min: -1.5, y_max: 1.5, z_min: -1.0, z_max: 1.0 }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    axis_angle(&random_unit(rng), rng.random_range(0.0..PI))
}

/// Noiseless feature pairs for `n` sampled poses.
fn true_samples(scene: &Scene, n: usize, seed: u64) -> Vec<Sample> {
    scene
        .sample_poses(n, &region(), &PoseSampling::default(), seed)
        .unwrap()
        .iter()
        .map(|p| {
            let (l, c) = scene.true_features(p).unwrap();
            Sample::new(l, c, scene.board.square).unwrap()
        })
        .collect()
}

fn noiseless_recovery() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..3 {
        let scene = Scene::default();
        let samples = true_samples(&scene, 3, seed);
        let res = calibrate(&samples, &CalibrationSettings::default(), &scene.intrinsics).map_err(|e| e.to_string())?;
        worst.0 = worst.0.max(translation_error(&scene.extrinsics.translation, &res.extrinsics.translation));
        worst.1 = worst.1.max(rotation_error(&scene.extrinsics.rotation, &res.extrinsics.rotation));
    }
    let secs = start.elapsed().as_secs_f64() / 3.0;
    check(
        worst.0 <= 1e-3 && worst.1 <= 1e-3 && secs <= 30.0,
        format!("N=3 over 3 scenes: worst e_t={:.2e} m, e_r={:.2e}, {secs:.2} s per calibration", worst.0, worst.1),
    )
}

fn sim_params(levels: Vec<f64>, n_values: Vec<usize>, trials: usize, seed: u64) -> SimulateParams {
    SimulateParams { levels_deg: levels, n_values, trials, centre_diameter: 0.01, seed, settings: CalibrationSettings::default() }
}

fn medians_at(rows: &[SimRow], level: f64, n: usize) -> (f64, f64) {
    let pick: Vec<&SimRow> = rows.iter().filter(|r| r.noise_level == level && r.n == n).collect();
    (median(pick.iter().map(|r| r.e_translation).collect()), median(pick.iter().map(|r| r.e_rotation).collect()))
}

fn feature_noise_convergence() -> Outcome {
    let start = Instant::now();
    let rows = simulate_study(&Scene::default(), &region(), &PoseSampling::default(), &sim_params(vec![1.5], vec![9, 15], 10, 1))
        .map_err(|e| e.to_string())?;
    let (t9, r9) = medians_at(&rows, 1.5, 9);
    let (t15, r15) = medians_at(&rows, 1.5, 15);
    let secs = start.elapsed().as_secs_f64();
    check(
        t9 <= 0.01 && r9 <= 0.05 && t15 <= 0.01 && r15 <= 0.05 && secs <= 600.0,
        format!("median at N=9: e_t={t9:.4} m, e_r={r9:.4}; N=15: e_t={t15:.4} m, e_r={r15:.4}; {secs:.0} s"),
    )
}

fn noise_level_ordering() -> Outcome {
    let levels = vec![1.5, 2.0, 2.5];
    let rows = simulate_study(&Scene::default(), &region(), &PoseSampling::default(), &sim_params(levels, (3..=15).collect(), 10, 2))
        .map_err(|e| e.to_string())?;
    let fits = fit_levels(&rows);
    let t: Vec<f64> = fits.iter().map(|f| f.translation.eval(15.0)).collect();
    let r: Vec<f64> = fits.iter().map(|f| f.rotation.eval(15.0)).collect();
    let ordered = |v: &[f64]| v.windows(2).all(|w| w[0] <= 1.2 * w[1]);
    check(
        ordered(&t) && ordered(&r),
        format!("fitted error at N=15: e_t={:.4?} m, e_r={:.4?} for 1.5/2.0/2.5 deg", t, r),
    )
}

fn spread_shrinkage() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = CalibConfig::example();
    let manifest = generate_dataset(&cfg, 30, 5, dir.path()).map_err(|e| e.to_string())?;
    let samples = load_samples(&manifest, &cfg).map_err(|e| e.to_string())?;
    let k = cfg.intrinsics().map_err(|e| e.to_string())?;
    let params = SpreadParams { n_values: vec![3, 4, 9], combos: 50, seed: 0, settings: cfg.settings() };
    let rows = spread_study(&samples, &k, &params).map_err(|e| e.to_string())?;
    let stats = spread_stats(&rows);
    let sd: Vec<[f64; 6]> = stats.iter().map(|s| s.sd).collect();
    let ok = (0..6).all(|j| sd[0][j] > sd[1][j] && sd[1][j] > sd[2][j]);
    let deg = |x: f64| x.to_degrees();
    check(
        ok,
        format!(
            "sd theta_x {:.3}/{:.3}/{:.3} deg, t_x {:.4}/{:.4}/{:.4} m for N=3/4/9 (all six strictly decreasing: {ok})",
            deg(sd[0][0]),
            deg(sd[1][0]),
            deg(sd[2][0]),
            sd[0][3],
            sd[1][3],
            sd[2][3]
        ),
    )
}

fn extraction_accuracy() -> Outcome {
    let scene = Scene { lidar: LidarModel { range_noise: 0.01, ..LidarModel::default() }, ..Scene::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sampling = PoseSampling::default();
    let (mut normal_ok, mut centre_ok, mut trials) = (0, 0, 0);
    while trials < 200 {
        let tilt = rng.random_range(sampling.tilt_min_deg..=sampling.tilt_max_deg).to_radians();
        let turn = rng.random_range(0.0..=sampling.max_turn_deg).to_radians();
        let pose = scene.make_pose(Vec3::new(2.0, 0.0, 0.0), tilt, turn, rng.random_range(0.0..2.0 * PI));
        if !scene.is_visible(&pose, sampling.min_rings_per_edge) {
            continue;
        }
        let (truth, _) = scene.true_features(&pose).map_err(|e| e.to_string())?;
        let cloud = scene.raycast_scan(&pose, trials as u64).map_err(|e| e.to_string())?;
        trials += 1;
        let Ok(f) = extract_board_features(&cloud, &scene.board, &region(), &RansacParams::default()) else { continue };
        normal_ok += usize::from(angle_between(&f.normal, &truth.normal).to_degrees() <= 2.0);
        centre_ok += usize::from((f.centre - truth.centre).norm() <= 0.01);
    }
    check(normal_ok >= 180 && centre_ok >= 180, format!("normal within 2 deg in {normal_ok}/200, centre within 1 cm in {centre_ok}/200"))
}

fn closed_form_rotation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = random_rotation(&mut rng);
        let n = rng.random_range(3..=8);
        let normals_lidar = Matrix3xX::from_columns(&(0..n).map(|_| random_unit(&mut rng)).collect::<Vec<_>>());
        let normals_cam = r * &normals_lidar;
        let zeros = Matrix3xX::zeros(n);
        let f = FeatureMatrices { normals_lidar, normals_cam, centres_lidar: zeros.clone(), centres_cam: zeros };
        let est = init_rotation(&f).map_err(|e| e.to_string())?;
        worst = worst.max((est - r).norm());
    }
    check(worst <= 1e-9, format!("worst Frobenius error {worst:.2e} over 100 rotations"))
}

fn optimizer_sanity() -> Outcome {
    let scene = Scene::default();
    let clean = true_samples(&scene, 6, 8);
    let (r, t) = (scene.extrinsics.rotation, scene.extrinsics.translation);
    let at_truth = fitness_rotation(&r, &clean).max(fitness_joint(&r, &t, &clean, &scene.intrinsics));

    let spec = NoiseSpec { normal_level_deg: 2.0, centre_diameter: 0.01, seed: 9 };
    let mut rng = spec.rng();
    let noisy: Vec<Sample> = clean
        .iter()
        .map(|s| Sample { lidar: perturb_features(&s.lidar, &spec, &mut rng), ..*s })
        .collect();
    let settings = CalibrationSettings::default();
    let a = calibrate(&noisy, &settings, &scene.intrinsics).map_err(|e| e.to_string())?;
    let b = calibrate(&noisy, &settings, &scene.intrinsics).map_err(|e| e.to_string())?;
    let monotone = a.runs.iter().all(|run| run.history_non_increasing);
    let bounded = a.runs.iter().all(|run| {
        let d = [
            run.euler.theta_x - run.seed_euler.theta_x,
            run.euler.theta_y - run.seed_euler.theta_y,
            run.euler.theta_z - run.seed_euler.theta_z,
        ];
        let dt = run.translation - run.seed_translation;
        d.iter().all(|x| wrap_angle(*x).abs() <= PI / 18.0 + 1e-12) && dt.iter().all(|x| x.abs() <= 0.05 + 1e-12)
    });
    let same = a == b;
    check(
        at_truth <= 1e-12 && monotone && same && bounded,
        format!("fitness at truth {at_truth:.1e}, non-increasing {monotone}, deterministic {same}, within bounds {bounded}"),
    )
}

fn oracles_and_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut failures = Vec::new();

    // Plane fit against an independent SVD of the centred points.
    let mut plane_err = 0.0f64;
    for _ in 0..20 {
        let n = random_unit(&mut rng);
        let (u, v) = (n.cross(&random_unit(&mut rng)).normalize(), n);
        let w = v.cross(&u);
        let base = Vec3::new(2.0, 0.5, -0.3);
        let pts: Vec<Vec3> = (0..50).map(|_| base + u * rng.random_range(-1.0..1.0) + w * rng.random_range(-1.0..1.0)).collect();
        let fit = fit_plane_lsq(&pts).ok_or("plane fit failed")?;
        let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
        let centred = Matrix3xX::from_columns(&pts.iter().map(|p| p - centroid).collect::<Vec<_>>());
        let svd = centred.svd(true, false);
        let (i_min, _) = svd.singular_values.argmin();
        let oracle = svd.u.unwrap().column(i_min).into_owned();
        plane_err = plane_err.max(fit.normal.cross(&oracle).norm()).max(fit.signed_distance(&centroid).abs());
    }
    if plane_err > 1e-9 {
        failures.push(format!("plane fit {plane_err:.1e}"));
    }

    // Board pose from projected corners.
    let k = Scene::default().intrinsics;
    let object = board_object_points(5, 7, 0.08);
    let pose_from = |truth: &RigidTransform| {
        let pixels: Vec<Vec2> = object.iter().map(|p| k.project(&truth.apply(p)).unwrap()).collect();
        estimate_board_pose(&CornerGrid::new(5, 7, pixels).unwrap(), &k, 0.08).unwrap()
    };
    let frontal = RigidTransform::new(Mat3::identity(), Vec3::new(0.0, 0.0, 2.0));
    let est = pose_from(&frontal);
    let frontal_err = (est.translation - frontal.translation).norm().max((est.rotation - frontal.rotation).norm());
    if frontal_err > 1e-6 {
        failures.push(format!("frontal pose {frontal_err:.1e}"));
    }
    let yawed = RigidTransform::new(euler_to_rot(EulerXYZ::new(0.0, 30f64.to_radians(), 0.0)), Vec3::new(0.0, 0.0, 2.0));
    let yaw_err = rotation_angle(&yawed.rotation, &pose_from(&yawed).rotation).to_degrees();
    if yaw_err > 0.01 {
        failures.push(format!("yawed pose {yaw_err:.1e} deg"));
    }

    // Distortion round trip over the field of view.
    let mut dist_err = 0.0f64;
    for _ in 0..500 {
        let x = Vec2::new(rng.random_range(-0.9..0.9), rng.random_range(-0.55..0.55));
        let pixel = k.normalized_to_pixel(&k.distort_normalized(x.x, x.y));
        let back = undistort_points(&[pixel], &k).map_err(|e| e.to_string())?[0];
        dist_err = dist_err.max((back - x).norm());
    }
    if dist_err > 1e-7 {
        failures.push(format!("distortion round trip {dist_err:.1e}"));
    }

    // Representative invariants; the full set runs in the unit suites.
    let mut euler_err = 0.0f64;
    for _ in 0..200 {
        let e = EulerXYZ::new(rng.random_range(-PI..PI), rng.random_range(-1.5..1.5), rng.random_range(-PI..PI));
        let back = rot_to_euler(&euler_to_rot(e)).map_err(|e| e.to_string())?;
        euler_err = euler_err.max((euler_to_rot(back) - euler_to_rot(e)).norm());
    }
    if euler_err > 1e-12 {
        failures.push(format!("euler round trip {euler_err:.1e}"));
    }
    let scene = Scene::default();
    let pose = scene.sample_poses(1, &region(), &PoseSampling::default(), 11).unwrap()[0];
    let cloud = scene.raycast_scan(&pose, 0).unwrap();
    let once = crop_region(&cloud, &region()).unwrap();
    if crop_region(&once, &region()).unwrap() != once {
        failures.push("crop not idempotent".into());
    }
    let plane = fit_plane_lsq(once.iter().map(|p| &p.position).collect::<Vec<_>>()).ok_or("plane fit failed")?;
    let on_plane = project_to_plane(&once, &plane).iter().map(|p| plane.signed_distance(&p.position).abs()).fold(0.0, f64::max);
    if on_plane > 1e-12 {
        failures.push(format!("plane projection {on_plane:.1e}"));
    }

    let detail = format!(
        "plane {plane_err:.1e}, frontal pose {frontal_err:.1e}, yaw {yaw_err:.1e} deg, distortion {dist_err:.1e}, euler {euler_err:.1e}, projection {on_plane:.1e}"
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failed: {}", failures.join(", ")))
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("noiseless recovery", noiseless_recovery),
        ("feature-noise convergence", feature_noise_convergence),
        ("noise-level ordering", noise_level_ordering),
        ("spread shrinkage", spread_shrinkage),
        ("lidar extraction accuracy", extraction_accuracy),
        ("closed-form rotation", closed_form_rotation),
        ("optimizer sanity", optimizer_sanity),
        ("oracles and invariants", oracles_and_invariants),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("acceptance {}/8 {name}: PASS ({d}) [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("acceptance {}/8 {name}: FAIL ({d}) [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
