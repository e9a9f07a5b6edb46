//! Hot-path benchmarks: transform algebra, observation generation, robust
//! estimation and landmark migration.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use vtr_core::chain::migrate_landmarks;
use vtr_core::graph::{PoseGraph, VertexData, VertexId, VertexLandmark};
use vtr_core::matching::{match_descriptors, FeatureSet};
use vtr_core::mlesac::{mlesac_pose, MlesacConfig};
use vtr_core::se3::{rot_y, AxisAngle, RigidTransform};
use vtr_core::world::{Extent, HeightProfile, LandmarkWorld};
use vtr_core::StereoCameraModel;

fn random_transform(rng: &mut impl Rng) -> RigidTransform {
    let axis = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .normalize();
    RigidTransform::from_axis_angle(
        &AxisAngle::new(axis * rng.random_range(-3.0..3.0)),
        Vector3::new(
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
            rng.random_range(-10.0..10.0),
        ),
    )
}

fn bench_se3(c: &mut Criterion) {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let a = random_transform(&mut rng);
    let b = random_transform(&mut rng);
    c.bench_function("se3_compose", |bench| {
        bench.iter(|| black_box(a.compose(black_box(&b))))
    });
    c.bench_function("se3_yaw", |bench| bench.iter(|| black_box(a.yaw())));
}

fn flight_camera_pose(x: f64) -> RigidTransform {
    let base_rot: nalgebra::Matrix3<f64> = nalgebra::Matrix3::from_columns(&[
        -nalgebra::Vector3::y(),
        -nalgebra::Vector3::z(),
        nalgebra::Vector3::x(),
    ]);
    RigidTransform::new(
        base_rot * rot_y(-std::f64::consts::FRAC_PI_4),
        Vector3::new(x, 0.0, 12.0),
    )
    .unwrap()
}

fn bench_observe(c: &mut Criterion) {
    let world = LandmarkWorld::generate(
        3,
        Extent {
            x_min: -100.0,
            x_max: 100.0,
            y_min: -100.0,
            y_max: 100.0,
        },
        0.25,
        HeightProfile::Uniform { max: 1.0 },
        &[],
    )
    .unwrap();
    let camera = StereoCameraModel::default();
    let pose = flight_camera_pose(0.0);
    c.bench_function("observe_default_world", |bench| {
        bench.iter(|| black_box(world.observe(&camera, &pose, 0.0, 42)))
    });
}

fn bench_mlesac(c: &mut Criterion) {
    let world = LandmarkWorld::generate(
        3,
        Extent {
            x_min: -100.0,
            x_max: 100.0,
            y_min: -100.0,
            y_max: 100.0,
        },
        0.25,
        HeightProfile::Uniform { max: 1.0 },
        &[],
    )
    .unwrap();
    let camera = StereoCameraModel::default();
    let kf_frame = world.observe(&camera, &flight_camera_pose(0.0), 0.0, 1);
    let frame = world.observe(&camera, &flight_camera_pose(0.5), 0.1, 2);
    let kf = FeatureSet::from_frame(&kf_frame, &camera);
    let feats = FeatureSet::from_frame(&frame, &camera);
    let config = MlesacConfig::default();
    c.bench_function("vo_match_and_mlesac", |bench| {
        bench.iter(|| {
            let mut rng = ChaCha12Rng::seed_from_u64(7);
            let mut matches = match_descriptors(&feats.ids, &kf.ids, 0.02, &mut rng);
            black_box(
                mlesac_pose(
                    &mut matches,
                    &feats.pixels,
                    &feats.points,
                    &kf.points,
                    &camera,
                    &config,
                    &mut rng,
                )
                .unwrap(),
            )
        })
    });
}

fn bench_migration(c: &mut Criterion) {
    let world = LandmarkWorld::generate(
        3,
        Extent {
            x_min: -100.0,
            x_max: 100.0,
            y_min: -100.0,
            y_max: 100.0,
        },
        0.25,
        HeightProfile::Uniform { max: 1.0 },
        &[],
    )
    .unwrap();
    let camera = StereoCameraModel::default();
    let mut graph = PoseGraph::new();
    let mut prev: Option<VertexId> = None;
    for i in 0..11 {
        let pose = flight_camera_pose(2.0 * i as f64);
        let frame = world.observe(&camera, &pose, i as f64, 10 + i as u64);
        let feats = FeatureSet::from_frame(&frame, &camera);
        let landmarks: Vec<VertexLandmark> = (0..feats.len())
            .map(|k| VertexLandmark {
                id: feats.ids[k],
                position: feats.points[k],
                pixel: [feats.pixels[k].x, feats.pixels[k].y],
                disparity: camera.focal_px * camera.baseline_m / feats.points[k].z,
            })
            .collect();
        let edge = prev.map(|p| {
            (
                p,
                RigidTransform::from_translation(Vector3::new(-2.0, 0.0, 0.0)),
            )
        });
        prev = Some(
            graph
                .add_keyframe(
                    VertexData {
                        timestamp: i as f64,
                        t_sv: RigidTransform::identity(),
                        landmarks,
                    },
                    edge,
                    true,
                )
                .unwrap(),
        );
    }
    c.bench_function("migrate_landmarks_radius5", |bench| {
        bench.iter(|| black_box(migrate_landmarks(&graph, VertexId(5), 5).unwrap()))
    });
}

criterion_group!(benches, bench_se3, bench_observe, bench_mlesac, bench_migration);
criterion_main!(benches);
