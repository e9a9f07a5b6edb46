//! Synthetic landmark world and the stereo observation model.
//!
//! Landmarks stand in for SURF features: each carries a unique id that doubles
//! as its descriptor. Observation generation is a pure function of
//! `(world, camera, pose, seed)` so it can be replayed bit-identically.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{ObservationFrame, ObservationRecord, StereoCameraModel};
use crate::se3::RigidTransform;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("degenerate extent: {0}")]
    DegenerateExtent(String),
    #[error("landmark density must be positive, got {0}")]
    NonPositiveDensity(f64),
}

/// Axis-aligned ground rectangle the landmark field covers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Extent {
    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    fn validate(&self) -> Result<(), WorldError> {
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(WorldError::DegenerateExtent(format!(
                "x [{}, {}], y [{}, {}]",
                self.x_min, self.x_max, self.y_min, self.y_max
            )));
        }
        Ok(())
    }
}

/// A box obstacle ("shipping container"): contributes landmark clusters on
/// its top and side faces, and optionally occludes rays behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContainerBox {
    /// Ground-plane centre of the box (m).
    pub center: [f64; 2],
    /// Length (x), width (y), height (z) in the box frame (m).
    pub size: [f64; 3],
    /// Rotation about world z (rad).
    pub yaw: f64,
    /// When true, the box blocks line of sight to landmarks behind it.
    pub occluding: bool,
    /// Landmark density on the faces (landmarks / m^2).
    pub face_density: f64,
}

impl Default for ContainerBox {
    fn default() -> Self {
        Self {
            center: [0.0, 0.0],
            size: [12.0, 2.5, 2.6],
            yaw: 0.0,
            occluding: false,
            face_density: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub id: u64,
    pub position: Vector3<f64>,
}

/// The static landmark field, deterministic under its seed.
#[derive(Debug, Clone)]
pub struct LandmarkWorld {
    pub landmarks: Vec<Landmark>,
    pub extent: Extent,
    pub seed: u64,
    occluders: Vec<ContainerBox>,
}

/// Ground-plane height variation of the scattered landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HeightProfile {
    Flat,
    /// Heights drawn uniformly from `[0, max]`.
    Uniform { max: f64 },
}

impl LandmarkWorld {
    /// Scatter a landmark field over the extent.
    ///
    /// The landmark count is Poisson-distributed with mean `area * density`;
    /// positions are uniform. Container boxes contribute additional clusters
    /// on their faces. Identical seeds produce bit-identical worlds.
    pub fn generate(
        seed: u64,
        extent: Extent,
        density: f64,
        height: HeightProfile,
        containers: &[ContainerBox],
    ) -> Result<Self, WorldError> {
        extent.validate()?;
        if density <= 0.0 {
            return Err(WorldError::NonPositiveDensity(density));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mean = extent.area() * density;
        let count = Poisson::new(mean)
            .expect("positive mean")
            .sample(&mut rng)
            .round() as u64;

        let mut landmarks = Vec::with_capacity(count as usize);
        for id in 0..count {
            let x = rng.random_range(extent.x_min..extent.x_max);
            let y = rng.random_range(extent.y_min..extent.y_max);
            let z = match height {
                HeightProfile::Flat => 0.0,
                HeightProfile::Uniform { max } => rng.random_range(0.0..max.max(1e-12)),
            };
            landmarks.push(Landmark {
                id,
                position: Vector3::new(x, y, z),
            });
        }

        let mut next_id = count;
        for c in containers {
            Self::scatter_container(c, &extent, &mut next_id, &mut rng, &mut landmarks);
        }

        Ok(Self {
            landmarks,
            extent,
            seed,
            occluders: containers.iter().filter(|c| c.occluding).cloned().collect(),
        })
    }

    fn scatter_container(
        c: &ContainerBox,
        extent: &Extent,
        next_id: &mut u64,
        rng: &mut ChaCha12Rng,
        out: &mut Vec<Landmark>,
    ) {
        let (sy, cy) = c.yaw.sin_cos();
        let to_world = |local: Vector3<f64>| {
            Vector3::new(
                c.center[0] + cy * local.x - sy * local.y,
                c.center[1] + sy * local.x + cy * local.y,
                local.z,
            )
        };
        let (l, w, h) = (c.size[0], c.size[1], c.size[2]);
        // Top face plus the two long sides carry texture.
        let faces: [(f64, Box<dyn Fn(f64, f64) -> Vector3<f64>>); 3] = [
            (l * w, Box::new(move |a, b| Vector3::new(a - l / 2.0, b - w / 2.0, h))),
            (l * h, Box::new(move |a, b| Vector3::new(a - l / 2.0, -w / 2.0, b))),
            (l * h, Box::new(move |a, b| Vector3::new(a - l / 2.0, w / 2.0, b))),
        ];
        for (area, face) in faces {
            let n = (area * c.face_density).round() as u64;
            let b_span = if area == l * w { w } else { h };
            for _ in 0..n {
                let a = rng.random_range(0.0..l);
                let b = rng.random_range(0.0..b_span);
                let p = to_world(face(a, b));
                if extent.contains(&p) {
                    out.push(Landmark {
                        id: *next_id,
                        position: p,
                    });
                    *next_id += 1;
                }
            }
        }
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Ground-truth position of a landmark by id, if it exists.
    pub fn position_of(&self, id: u64) -> Option<Vector3<f64>> {
        self.landmarks
            .binary_search_by_key(&id, |l| l.id)
            .ok()
            .map(|i| self.landmarks[i].position)
    }

    /// Simulate a stereo capture from `camera_pose` (world-from-camera).
    ///
    /// Every landmark inside the stereo frustum, within detection range and
    /// unoccluded is projected; independent Gaussian pixel noise of the
    /// configured sigma is added per axis (disparity noise is sigma*sqrt(2),
    /// two views). Detection falls off linearly between the full and maximum
    /// ranges so distant features drop out the way small image patches do.
    /// Deterministic in `(world, camera, pose, seed)`.
    pub fn observe(
        &self,
        camera: &StereoCameraModel,
        camera_pose: &RigidTransform,
        timestamp: f64,
        seed: u64,
    ) -> ObservationFrame {
        let cam_from_world = camera_pose.invert();
        let eye = *camera_pose.translation();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, camera.pixel_noise_sigma.max(0.0)).expect("finite sigma");
        let disp_noise = Normal::new(0.0, camera.pixel_noise_sigma.max(0.0) * std::f64::consts::SQRT_2)
            .expect("finite sigma");

        let mut records = Vec::new();
        let range_sq = camera.detection_range_max * camera.detection_range_max;
        for lm in &self.landmarks {
            // Cheap cull before the projection math.
            if (lm.position - eye).norm_squared() > range_sq {
                continue;
            }
            let p_cam = cam_from_world.apply(&lm.position);
            if p_cam.z < camera.min_depth || p_cam.z > camera.detection_range_max {
                continue;
            }
            if !camera.in_stereo_frustum(&p_cam) {
                continue;
            }
            if p_cam.z > detection_range(camera, self.seed, lm.id) {
                continue;
            }
            if self.occluded(&eye, &lm.position) {
                continue;
            }
            let pixel = camera.project(&p_cam).expect("frustum-checked point");
            let disparity = camera.disparity(&p_cam).expect("frustum-checked point");
            let (pixel, disparity) = if camera.pixel_noise_sigma > 0.0 {
                (
                    Vector2::new(pixel.x + noise.sample(&mut rng), pixel.y + noise.sample(&mut rng)),
                    disparity + disp_noise.sample(&mut rng),
                )
            } else {
                (pixel, disparity)
            };
            // Noise may push a border feature out of frame or kill its
            // disparity; such detections are dropped, keeping the frame
            // invariants (pixels in bounds, disparity above epsilon) intact.
            if !camera.in_image(&pixel) || disparity < camera.disparity_epsilon {
                continue;
            }
            records.push(ObservationRecord {
                descriptor_id: lm.id,
                pixel: [pixel.x, pixel.y],
                disparity,
            });
        }

        ObservationFrame {
            timestamp,
            records,
            camera_pose: *camera_pose,
        }
    }

    fn occluded(&self, eye: &Vector3<f64>, target: &Vector3<f64>) -> bool {
        self.occluders.iter().any(|c| ray_hits_box(c, eye, target))
    }
}

/// Intrinsic maximum detection depth of a landmark: a draw from the
/// camera's falloff band `[full, max]`, fixed per (world seed, landmark).
/// Small or weakly textured features stop being detected at shorter ranges;
/// tying the cutoff to the landmark rather than the frame keeps detections
/// stable between consecutive frames the way real features are, while the
/// population thins smoothly with depth.
pub fn detection_range(camera: &StereoCameraModel, world_seed: u64, landmark_id: u64) -> f64 {
    let h = splitmix64(world_seed ^ landmark_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    camera.detection_range_full
        + u * (camera.detection_range_max - camera.detection_range_full)
}

/// SplitMix64 finaliser; used to derive independent sub-seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Slab test of the segment eye->target against a yawed box.
fn ray_hits_box(b: &ContainerBox, eye: &Vector3<f64>, target: &Vector3<f64>) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let to_local = |p: &Vector3<f64>| {
        let dx = p.x - b.center[0];
        let dy = p.y - b.center[1];
        Vector3::new(c * dx + s * dy, -s * dx + c * dy, p.z)
    };
    let o = to_local(eye);
    let e = to_local(target);
    let d = e - o;
    let half = Vector3::new(b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0);
    let lo = Vector3::new(-half.x, -half.y, 0.0);
    let hi = Vector3::new(half.x, half.y, b.size[2]);
    let mut t_min = 0.0f64;
    // Stop just short of the target so a landmark on the box face is not
    // occluded by its own box.
    let mut t_max = 1.0f64 - 1e-6;
    for i in 0..3 {
        if d[i].abs() < 1e-12 {
            if o[i] < lo[i] || o[i] > hi[i] {
                return false;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (t0, t1) = {
            let a = (lo[i] - o[i]) * inv;
            let b = (hi[i] - o[i]) * inv;
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        };
        t_min = t_min.max(t0);
        t_max = t_max.min(t1);
        if t_min > t_max {
            return false;
        }
    }
    true
}
