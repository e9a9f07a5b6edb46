//! Descriptor matching with a controllable confusion process.
//!
//! Descriptors are landmark identities, so a correct match is exact id
//! equality. Real descriptor matching aliases a fraction of features onto the
//! wrong landmarks; the confusion rate reproduces that failure mode so the
//! robust estimator has genuine outliers to reject.

use nalgebra::{Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use crate::camera::{ObservationFrame, StereoCameraModel};

/// A frame-feature-to-target pairing produced by the matcher.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatch {
    /// Index into the frame's feature set.
    pub frame_index: usize,
    /// Index into the target landmark list (keyframe or migrated map).
    pub target_index: usize,
    /// Descriptor ids of the pair (equal unless the match was confused).
    pub frame_id: u64,
    pub target_id: u64,
    /// Reprojection residual under the accepted transform; filled by the
    /// robust estimator.
    pub residual_px: Option<f64>,
}

/// A frame unpacked for estimation: ids, observed pixels and the stereo
/// triangulation of every record.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub ids: Vec<u64>,
    pub pixels: Vec<Vector2<f64>>,
    pub points: Vec<Vector3<f64>>,
}

impl FeatureSet {
    /// Triangulate every record of a frame. Records failing far-point
    /// rejection are dropped here, before matching.
    pub fn from_frame(frame: &ObservationFrame, camera: &StereoCameraModel) -> Self {
        let mut set = Self::default();
        for rec in &frame.records {
            if let Ok(p) = camera.triangulate(rec) {
                set.ids.push(rec.descriptor_id);
                set.pixels.push(Vector2::new(rec.pixel[0], rec.pixel[1]));
                set.points.push(p);
            }
        }
        set
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Match frame descriptors against a target id list.
///
/// Correct pairings are id-equality (first occurrence wins when the target
/// holds duplicates). A `confusion_rate` fraction of correct pairings is
/// replaced with a wrong, otherwise-unused target index. Every feature and
/// every target participates in at most one match. Deterministic under the
/// caller's RNG.
pub fn match_descriptors(
    frame_ids: &[u64],
    target_ids: &[u64],
    confusion_rate: f64,
    rng: &mut impl Rng,
) -> Vec<FeatureMatch> {
    let mut first_index = std::collections::HashMap::with_capacity(target_ids.len());
    for (i, id) in target_ids.iter().enumerate() {
        first_index.entry(*id).or_insert(i);
    }

    let mut used = vec![false; target_ids.len()];
    let mut matches = Vec::new();
    for (frame_index, id) in frame_ids.iter().enumerate() {
        let Some(&target_index) = first_index.get(id) else {
            continue;
        };
        if used[target_index] {
            continue;
        }
        let confused = confusion_rate > 0.0 && rng.random::<f64>() < confusion_rate;
        let chosen = if confused {
            match random_unused_other(target_index, &used, rng) {
                Some(idx) => idx,
                None => continue, // nothing left to confuse with; drop the match
            }
        } else {
            target_index
        };
        used[chosen] = true;
        matches.push(FeatureMatch {
            frame_index,
            target_index: chosen,
            frame_id: *id,
            target_id: target_ids[chosen],
            residual_px: None,
        });
    }
    matches
}

fn random_unused_other(exclude: usize, used: &[bool], rng: &mut impl Rng) -> Option<usize> {
    let candidates: Vec<usize> = (0..used.len())
        .filter(|&i| i != exclude && !used[i])
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let pick = sample(rng, candidates.len(), 1).index(0);
    Some(candidates[pick])
}
