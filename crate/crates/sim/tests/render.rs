use nalgebra::{Matrix3, Vector3};
use rigidkit_core::field::LABEL_INVALID;
use rigidkit_core::{CameraIntrinsics, RigidTransform};
use rigidkit_sim::{make_degenerate_scenario, render, Body, Geometry, GroundTruth, NoiseConfig, ScenarioKind, SceneDescription, SimError};

fn k() -> CameraIntrinsics {
    CameraIntrinsics { fx: 300.0, fy: 300.0, cx: 160.0, cy: 120.0, skew: 0.0 }
}

fn wall(z: f64) -> Geometry {
    Geometry::Quad { corner: [-50.0, -50.0, z], edge_u: [100.0, 0.0, 0.0], edge_v: [0.0, 100.0, 0.0] }
}

fn scene(ego: RigidTransform, background: Vec<Geometry>, bodies: Vec<Body>) -> SceneDescription {
    SceneDescription { width: 320, height: 240, k0: k(), k1: k(), camera_motion: ego, background, bodies, noise: NoiseConfig::default() }
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Sampson distance in pixels² computed from first principles.
fn sampson_px(gt: &GroundTruth, idx: usize) -> f64 {
    let w = gt.width();
    let (r, c) = (idx / w, idx % w);
    let p0 = Vector3::new(c as f64 + 0.5, r as f64 + 0.5, 1.0);
    let f = gt.flow.at(idx);
    let p1 = Vector3::new(p0.x + f[0], p0.y + f[1], 1.0);
    let e = gt.ego.rotation.transpose() * skew(&gt.ego.translation);
    let fm = gt.k1.inverse_matrix().transpose() * e * gt.k0.inverse_matrix();
    let fm = fm / fm.norm();
    let fx0 = fm * p0;
    let ftx1 = fm.transpose() * p1;
    let num = p1.dot(&fx0);
    num * num / (fx0.x.powi(2) + fx0.y.powi(2) + ftx1.x.powi(2) + ftx1.y.powi(2))
}

fn rectified(gt: &GroundTruth, idx: usize) -> Vector3<f64> {
    let w = gt.width();
    let (r, c) = (idx / w, idx % w);
    let p0 = Vector3::new(c as f64 + 0.5, r as f64 + 0.5, 1.0);
    let f = gt.flow.at(idx);
    let p1 = Vector3::new(p0.x + f[0], p0.y + f[1], 1.0);
    let h = gt.k0.matrix() * gt.ego.rotation * gt.k1.inverse_matrix();
    gt.k0.inverse_matrix() * (gt.expansion.value(idx) * (h * p1) - p0)
}

fn pixels_of(gt: &GroundTruth, label: u32) -> Vec<usize> {
    (0..gt.labels.len()).filter(|&i| gt.labels.value(i) == label as f64).collect()
}

#[test]
fn identity_camera_gives_zero_flow() {
    let gt = render(&scene(RigidTransform::identity(), vec![wall(10.0)], vec![])).unwrap();
    for i in 0..gt.flow.len() {
        let f = gt.flow.at(i);
        assert!(f[0].abs() < 1e-9 && f[1].abs() < 1e-9);
        assert_eq!(gt.expansion.value(i), 1.0);
        assert_eq!(gt.z0.value(i), gt.z1.value(i));
    }
}

#[test]
fn forward_motion_towards_plane() {
    let gt = render(&scene(RigidTransform::from_translation(Vector3::z()), vec![wall(10.0)], vec![])).unwrap();
    for i in 0..gt.flow.len() {
        assert!((gt.expansion.value(i) - 0.9).abs() < 1e-12);
        assert!((gt.z0.value(i) - 10.0).abs() < 1e-12);
    }
}

#[test]
fn expansion_is_depth_ratio_and_flow_reprojects() {
    for kind in ScenarioKind::ALL {
        let gt = render(&make_degenerate_scenario(kind, 1)).unwrap();
        let w = gt.width();
        let mut n = 0;
        for i in 0..gt.flow.len() {
            let label = gt.labels.value(i) as u32;
            if label == LABEL_INVALID {
                continue;
            }
            n += 1;
            let (z0, z1) = (gt.z0.value(i), gt.z1.value(i));
            assert!((gt.expansion.value(i) - z1 / z0).abs() < 1e-9);
            // independent forward model: back-project, move, project
            let u0 = (i % w) as f64 + 0.5;
            let v0 = (i / w) as f64 + 0.5;
            let p0 = Vector3::new((u0 - 160.0) / 300.0 * z0, (v0 - 120.0) / 300.0 * z0, z0);
            let t = gt.transform_of(label).unwrap();
            let p1 = t.rotation * p0 + t.translation;
            assert!((p1.z - z1).abs() < 1e-9 * z1);
            let f = gt.flow.at(i);
            assert!((300.0 * p1.x / p1.z + 160.0 - u0 - f[0]).abs() < 1e-8);
            assert!((300.0 * p1.y / p1.z + 120.0 - v0 - f[1]).abs() < 1e-8);
        }
        assert!(n > 0);
    }
}

#[test]
fn static_pixels_satisfy_epipolar_constraint() {
    for kind in [ScenarioKind::General, ScenarioKind::Coplanar, ScenarioKind::Collinear, ScenarioKind::Static] {
        for seed in 0..3 {
            let gt = render(&make_degenerate_scenario(kind, seed)).unwrap();
            let worst = pixels_of(&gt, 0).into_iter().map(|i| sampson_px(&gt, i)).fold(0.0, f64::max);
            assert!(worst < 1e-9, "{kind:?} seed {seed}: {worst}");
        }
    }
}

#[test]
fn pure_rotation_is_a_homography() {
    let gt = render(&make_degenerate_scenario(ScenarioKind::PureRotation, 4)).unwrap();
    let h = gt.k0.matrix() * gt.ego.rotation * gt.k1.inverse_matrix();
    let w = gt.width();
    let mut n = 0;
    for i in 0..gt.flow.len() {
        if gt.labels.value(i) as u32 == LABEL_INVALID {
            continue;
        }
        n += 1;
        let f = gt.flow.at(i);
        let (u0, v0) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        let q = h * Vector3::new(u0 + f[0], v0 + f[1], 1.0);
        assert!((q.x / q.z - u0).hypot(q.y / q.z - v0) < 1e-9);
    }
    assert!(n > gt.flow.len() / 2);
    assert!(gt.bodies.is_empty());
}

#[test]
fn collinear_mover_flows_along_camera_translation() {
    for seed in 0..3 {
        let gt = render(&make_degenerate_scenario(ScenarioKind::Collinear, seed)).unwrap();
        let minus_t = -gt.ego.translation;
        let px = pixels_of(&gt, 1);
        assert!(px.len() > 1000, "car covers {} pixels", px.len());
        for i in px {
            let t = rectified(&gt, i);
            let angle = t.angle(&minus_t).to_degrees();
            assert!(angle < 1.0, "angle {angle}");
        }
    }
}

#[test]
fn coplanar_mover_stays_on_epipolar_lines() {
    for seed in 0..3 {
        let gt = render(&make_degenerate_scenario(ScenarioKind::Coplanar, seed)).unwrap();
        let px = pixels_of(&gt, 1);
        assert!(px.len() > 1000, "patch covers {} pixels", px.len());
        let minus_t = -gt.ego.translation;
        for i in px {
            assert!(sampson_px(&gt, i) < 1e-9);
            // independent motion is visible in 3D: off-axis component of T̃
            let t = rectified(&gt, i);
            let off = (t - minus_t.normalize() * t.dot(&minus_t.normalize())).norm();
            assert!(off > 1.0 / 11.0 - 1e-9, "off-axis {off}");
        }
    }
}

#[test]
fn general_movers_are_visible_and_off_epipolar() {
    let gt = render(&make_degenerate_scenario(ScenarioKind::General, 0)).unwrap();
    for id in [1, 2] {
        let px = pixels_of(&gt, id);
        assert!(px.len() > 800, "body {id} covers {}", px.len());
        let above = px.iter().filter(|&&i| sampson_px(&gt, i) > 1.0).count();
        assert!(above as f64 >= 0.95 * px.len() as f64, "body {id}: {above}/{}", px.len());
    }
}

#[test]
fn zero_translation_mover_is_small() {
    for seed in 0..5 {
        let gt = render(&make_degenerate_scenario(ScenarioKind::ZeroTranslation, seed)).unwrap();
        assert_eq!(gt.ego.translation.norm(), 0.0);
        let angle = gt.ego.rotation_angle().to_degrees();
        assert!((2.0..5.0).contains(&angle));
        let n = pixels_of(&gt, 1).len();
        assert!(n > 100 && (n as f64) < 0.05 * gt.flow.len() as f64, "{n}");
    }
}

#[test]
fn rendering_is_deterministic() {
    let s = make_degenerate_scenario(ScenarioKind::General, 9);
    let a = render(&s).unwrap();
    let b = render(&s).unwrap();
    let bits = |f: &rigidkit_core::DenseField| f.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.flow), bits(&b.flow));
    assert_eq!(bits(&a.z1), bits(&b.z1));
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.occluded, b.occluded);
}

#[test]
fn empty_pixels_are_invalid() {
    let s = scene(
        RigidTransform::identity(),
        vec![],
        vec![Body {
            id: 3,
            geometry: Geometry::Sphere { center: [0.0, 0.0, 10.0], radius: 1.0 },
            motion: RigidTransform::identity(),
        }],
    );
    let gt = render(&s).unwrap();
    assert_eq!(gt.labels.value(0) as u32, LABEL_INVALID);
    assert!(gt.flow.value(0).is_nan() && gt.z0.value(0).is_nan());
    assert_eq!(gt.confidence.value(0), 0.0);
    let centre = 120 * 320 + 160;
    assert_eq!(gt.labels.value(centre), 3.0);
    assert_eq!(gt.confidence.value(centre), 1.0);
}

#[test]
fn hidden_pixels_keep_flow_and_are_flagged() {
    // box slides right in front of a wall: wall pixels just right of it get covered
    let s = scene(
        RigidTransform::identity(),
        vec![wall(20.0)],
        vec![Body {
            id: 1,
            geometry: Geometry::Box { center: [0.0, 0.0, 10.0], half_extents: [1.0, 1.0, 1.0], rotation: [0.0; 3] },
            motion: RigidTransform::from_translation(Vector3::new(0.5, 0.0, 0.0)),
        }],
    );
    let gt = render(&s).unwrap();
    let covered = 120 * 320 + 160 + 40;
    assert_eq!(gt.labels.value(covered), 0.0);
    assert!(gt.occluded.get(covered));
    assert!(gt.flow.at(covered).iter().all(|v| v.abs() < 1e-9));
    assert_eq!(gt.confidence.value(covered), 1.0);
    assert!(!gt.occluded.get(120 * 320 + 160));
}

#[test]
fn render_errors() {
    let s = scene(RigidTransform::identity(), vec![], vec![]);
    assert!(matches!(render(&s), Err(SimError::Render(_))));
    // camera moves through the wall
    let s = scene(RigidTransform::from_translation(Vector3::new(0.0, 0.0, 12.0)), vec![wall(10.0)], vec![]);
    assert!(matches!(render(&s), Err(SimError::Render(_))));
    let mover = |id| Body { id, geometry: Geometry::Sphere { center: [0.0, 0.0, 5.0], radius: 1.0 }, motion: RigidTransform::identity() };
    let s = scene(RigidTransform::identity(), vec![wall(10.0)], vec![mover(1), mover(1)]);
    assert!(matches!(render(&s), Err(SimError::InvalidScene(_))));
    let s = scene(RigidTransform::identity(), vec![wall(10.0)], vec![mover(0)]);
    assert!(matches!(render(&s), Err(SimError::InvalidScene(_))));
}

#[test]
fn scene_json_round_trip() {
    let s = make_degenerate_scenario(ScenarioKind::Coplanar, 2);
    let text = serde_json::to_string_pretty(&s).unwrap();
    let back = SceneDescription::from_json(&text).unwrap();
    let a = render(&s).unwrap();
    let b = render(&back).unwrap();
    assert_eq!(a.labels, b.labels);
    assert!(SceneDescription::from_json("{\"width\": 3}").is_err());
}
