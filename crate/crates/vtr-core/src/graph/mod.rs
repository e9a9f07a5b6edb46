//! The relative, locally-metric pose graph.
//!
//! Vertices hold the per-keyframe landmark payload (camera-frame points plus
//! their pixel observations), the vehicle-to-sensor transform captured at
//! creation time and a privileged flag; edges hold relative transforms
//! `T_to_from` (new vertex from previous). The privileged chain recorded
//! during the learn phase is the map the return phase localises against.
//!
//! Deliberately, no operation synthesises a global pose: every query returns
//! a transform relative to a named vertex.
//!
//! Landmark payloads can be evicted from memory once the graph is persisted;
//! reads transparently reload them from the backing file.

pub mod io;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use nalgebra::Vector3;
use thiserror::Error;

use crate::se3::RigidTransform;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge references missing vertex {0}")]
    DanglingEdge(VertexId),
    #[error("first vertex cannot carry an edge")]
    EdgeOnFirstVertex,
    #[error("every vertex after the first needs an edge to its predecessor")]
    MissingEdge,
    #[error("vertex {0} does not exist")]
    NoSuchVertex(VertexId),
    #[error("vertex {0} is not privileged")]
    NotPrivileged(VertexId),
    #[error("payload of vertex {0} is evicted and no backing store is attached")]
    PayloadUnavailable(VertexId),
    #[error("cannot evict: graph has not been persisted")]
    NotPersisted,
    #[error("graph file integrity failure at record {record}: {detail}")]
    Integrity { record: usize, detail: String },
    #[error("graph i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for GraphError {
    fn from(e: std::io::Error) -> Self {
        GraphError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub struct VertexId(pub u64);

impl std::fmt::Display for VertexId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// A stored landmark: camera-frame position, the pixel observation that
/// triangulated it, and its descriptor identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexLandmark {
    pub id: u64,
    /// Position in the owning vertex's camera frame (m).
    pub position: Vector3<f64>,
    /// Left-image pixel of the observation.
    pub pixel: [f64; 2],
    pub disparity: f64,
}

/// Vertex metadata; the landmark payload lives in the graph's payload store.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphVertex {
    pub id: VertexId,
    pub privileged: bool,
    pub timestamp: f64,
    /// Vehicle-to-sensor transform captured at creation time.
    pub t_sv: RigidTransform,
    pub landmark_count: u32,
}

/// Relative transform `T_to_from`: maps `from`-frame coordinates into the
/// `to` vertex frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub from: VertexId,
    pub to: VertexId,
    pub transform: RigidTransform,
    pub privileged: bool,
}

/// Data handed to [`PoseGraph::add_keyframe`].
#[derive(Debug, Clone)]
pub struct VertexData {
    pub timestamp: f64,
    pub t_sv: RigidTransform,
    pub landmarks: Vec<VertexLandmark>,
}

#[derive(Debug)]
enum PayloadSlot {
    Loaded(Arc<Vec<VertexLandmark>>),
    Evicted,
}

#[derive(Debug)]
pub(crate) struct BackingStore {
    pub path: std::path::PathBuf,
    /// Absolute file offset and count of each vertex's landmark array.
    pub payload_offsets: Vec<(u64, u32)>,
}

/// The pose graph. Single writer, any number of readers; payload reads may
/// block on a transparent reload after eviction.
#[derive(Debug)]
pub struct PoseGraph {
    vertices: Vec<GraphVertex>,
    edges: Vec<GraphEdge>,
    edge_index: HashMap<(VertexId, VertexId), usize>,
    /// Insertion parent of each vertex (the `from` end of its edge).
    parent: Vec<Option<VertexId>>,
    privileged_path: Vec<VertexId>,
    /// Prefix transforms along the privileged path: `accum[i] = T_path0_pathi`.
    privileged_accum: Vec<RigidTransform>,
    payloads: Vec<RwLock<PayloadSlot>>,
    /// Payloads rewritten since the last save; they cannot be evicted
    /// because the backing file no longer matches them.
    dirty: Vec<bool>,
    backing: Option<BackingStore>,
    cache_misses: AtomicU64,
}

impl Default for PoseGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl PoseGraph {
    pub fn new() -> Self {
        Self {
            vertices: Vec::new(),
            edges: Vec::new(),
            edge_index: HashMap::new(),
            parent: Vec::new(),
            privileged_path: Vec::new(),
            privileged_accum: Vec::new(),
            payloads: Vec::new(),
            dirty: Vec::new(),
            backing: None,
            cache_misses: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, id: VertexId) -> Result<&GraphVertex, GraphError> {
        self.vertices
            .get(id.0 as usize)
            .ok_or(GraphError::NoSuchVertex(id))
    }

    pub fn vertices(&self) -> &[GraphVertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn last_vertex(&self) -> Option<&GraphVertex> {
        self.vertices.last()
    }

    pub fn parent_of(&self, id: VertexId) -> Option<VertexId> {
        self.parent.get(id.0 as usize).copied().flatten()
    }

    pub fn edge_between(&self, from: VertexId, to: VertexId) -> Option<&GraphEdge> {
        self.edge_index.get(&(from, to)).map(|&i| &self.edges[i])
    }

    /// Insert a keyframe vertex, atomically with its edge to the previous
    /// vertex. The first vertex carries no edge; every later vertex must
    /// reference an existing endpoint.
    pub fn add_keyframe(
        &mut self,
        data: VertexData,
        edge_from_previous: Option<(VertexId, RigidTransform)>,
        privileged: bool,
    ) -> Result<VertexId, GraphError> {
        let id = VertexId(self.vertices.len() as u64);
        match (&edge_from_previous, self.vertices.is_empty()) {
            (Some(_), true) => return Err(GraphError::EdgeOnFirstVertex),
            (None, false) => return Err(GraphError::MissingEdge),
            _ => {}
        }
        if let Some((from, _)) = edge_from_previous {
            if from.0 as usize >= self.vertices.len() {
                return Err(GraphError::DanglingEdge(from));
            }
        }

        self.vertices.push(GraphVertex {
            id,
            privileged,
            timestamp: data.timestamp,
            t_sv: data.t_sv,
            landmark_count: data.landmarks.len() as u32,
        });
        self.payloads
            .push(RwLock::new(PayloadSlot::Loaded(Arc::new(data.landmarks))));
        self.dirty.push(true);

        if let Some((from, transform)) = edge_from_previous {
            let edge_privileged = privileged && self.vertices[from.0 as usize].privileged;
            let edge = GraphEdge {
                from,
                to: id,
                transform,
                privileged: edge_privileged,
            };
            self.edge_index.insert((from, id), self.edges.len());
            self.edges.push(edge);
            self.parent.push(Some(from));
        } else {
            self.parent.push(None);
        }

        if privileged {
            if let Some(&prev) = self.privileged_path.last() {
                // T_path0_new = T_path0_prev * T_prev_new.
                let t_prev_new = self
                    .edge_between(prev, id)
                    .expect("privileged vertices chain consecutively")
                    .transform
                    .invert();
                let accum = self
                    .privileged_accum
                    .last()
                    .expect("accum tracks path")
                    .compose(&t_prev_new);
                self.privileged_accum.push(accum);
            } else {
                self.privileged_accum.push(RigidTransform::identity());
            }
            self.privileged_path.push(id);
        }
        Ok(id)
    }

    pub fn privileged_path(&self) -> &[VertexId] {
        &self.privileged_path
    }

    pub fn is_privileged(&self, id: VertexId) -> bool {
        self.vertex(id).map(|v| v.privileged).unwrap_or(false)
    }

    fn path_index(&self, id: VertexId) -> Result<usize, GraphError> {
        self.privileged_path
            .binary_search(&id)
            .map_err(|_| GraphError::NotPrivileged(id))
    }

    /// Privileged neighbour toward the path start (lower path index).
    pub fn privileged_prev(&self, id: VertexId) -> Option<VertexId> {
        let i = self.path_index(id).ok()?;
        (i > 0).then(|| self.privileged_path[i - 1])
    }

    /// Privileged neighbour toward the path end.
    pub fn privileged_next(&self, id: VertexId) -> Option<VertexId> {
        let i = self.path_index(id).ok()?;
        self.privileged_path.get(i + 1).copied()
    }

    /// `T_a_b` between two privileged vertices via the accumulated
    /// privileged-edge chain.
    pub fn privileged_transform(
        &self,
        a: VertexId,
        b: VertexId,
    ) -> Result<RigidTransform, GraphError> {
        let ia = self.path_index(a)?;
        let ib = self.path_index(b)?;
        Ok(self.privileged_accum[ia]
            .invert()
            .compose(&self.privileged_accum[ib]))
    }

    /// Up to `2*radius + 1` privileged vertices centred on `center`
    /// (truncated at the path ends), each paired with its transform to the
    /// center: `T_center_v`. Transforms are composed stepwise along the
    /// privileged edges.
    pub fn local_window(
        &self,
        center: VertexId,
        radius: usize,
    ) -> Result<Vec<(VertexId, RigidTransform)>, GraphError> {
        let ci = self.path_index(center)?;
        let lo = ci.saturating_sub(radius);
        let hi = (ci + radius).min(self.privileged_path.len() - 1);

        let mut out = Vec::with_capacity(hi - lo + 1);
        // Walk left of center accumulating T_center_v one edge at a time.
        let mut acc = RigidTransform::identity();
        let mut left = Vec::new();
        for i in (lo..ci).rev() {
            let from = self.privileged_path[i];
            let to = self.privileged_path[i + 1];
            let edge = self
                .edge_between(from, to)
                .expect("privileged path edges exist");
            // T_center_from = T_center_to * T_to_from.
            acc = acc.compose(&edge.transform);
            left.push((from, acc));
        }
        out.extend(left.into_iter().rev());
        out.push((center, RigidTransform::identity()));
        let mut acc = RigidTransform::identity();
        for i in ci..hi {
            let from = self.privileged_path[i];
            let to = self.privileged_path[i + 1];
            let edge = self
                .edge_between(from, to)
                .expect("privileged path edges exist");
            // T_center_to = T_center_from * T_from_to.
            acc = acc.compose(&edge.transform.invert());
            out.push((to, acc));
        }
        Ok(out)
    }

    /// Landmark payload of a vertex, transparently reloading it from the
    /// backing file if it was evicted.
    pub fn landmarks(&self, id: VertexId) -> Result<Arc<Vec<VertexLandmark>>, GraphError> {
        let slot = self
            .payloads
            .get(id.0 as usize)
            .ok_or(GraphError::NoSuchVertex(id))?;
        {
            let guard = slot.read().expect("payload lock poisoned");
            if let PayloadSlot::Loaded(ref arc) = *guard {
                return Ok(arc.clone());
            }
        }
        // Miss: blocking reload permitted by the contract.
        self.cache_misses.fetch_add(1, Ordering::Relaxed);
        let backing = self
            .backing
            .as_ref()
            .ok_or(GraphError::PayloadUnavailable(id))?;
        let payload = Arc::new(io::read_payload(backing, id)?);
        let mut guard = slot.write().expect("payload lock poisoned");
        *guard = PayloadSlot::Loaded(payload.clone());
        Ok(payload)
    }

    /// Count of blocking payload reloads observed by readers.
    pub fn cache_miss_count(&self) -> u64 {
        self.cache_misses.load(Ordering::Relaxed)
    }

    /// Drop landmark payloads of every vertex outside `keep` from memory.
    /// Requires the graph to be persisted first; payloads rewritten since
    /// the last save stay resident (the file no longer matches them).
    pub fn evict_outside(&self, keep: &[VertexId]) -> Result<usize, GraphError> {
        let backing = self.backing.as_ref().ok_or(GraphError::NotPersisted)?;
        let keep: std::collections::HashSet<VertexId> = keep.iter().copied().collect();
        let mut evicted = 0;
        for (i, slot) in self.payloads.iter().enumerate() {
            let id = VertexId(i as u64);
            if keep.contains(&id)
                || self.dirty[i]
                || i >= backing.payload_offsets.len()
            {
                continue;
            }
            let mut guard = slot.write().expect("payload lock poisoned");
            if matches!(*guard, PayloadSlot::Loaded(_)) {
                *guard = PayloadSlot::Evicted;
                evicted += 1;
            }
        }
        Ok(evicted)
    }

    /// Ensure the payloads of `ids` are resident before a reader needs them.
    pub fn prefetch(&self, ids: &[VertexId]) -> Result<(), GraphError> {
        for &id in ids {
            let slot = self
                .payloads
                .get(id.0 as usize)
                .ok_or(GraphError::NoSuchVertex(id))?;
            let needs_load = {
                let guard = slot.read().expect("payload lock poisoned");
                matches!(*guard, PayloadSlot::Evicted)
            };
            if needs_load {
                let backing = self
                    .backing
                    .as_ref()
                    .ok_or(GraphError::PayloadUnavailable(id))?;
                let payload = Arc::new(io::read_payload(backing, id)?);
                let mut guard = slot.write().expect("payload lock poisoned");
                *guard = PayloadSlot::Loaded(payload);
            }
        }
        Ok(())
    }

    /// True when the payload of `id` is resident in memory.
    pub fn payload_resident(&self, id: VertexId) -> bool {
        self.payloads
            .get(id.0 as usize)
            .map(|slot| matches!(*slot.read().expect("payload lock poisoned"), PayloadSlot::Loaded(_)))
            .unwrap_or(false)
    }

    /// Rewrite the transform of an existing edge (windowed refinement).
    /// Rebuilds the privileged prefix chain if a privileged edge moved.
    pub fn rewrite_edge(
        &mut self,
        from: VertexId,
        to: VertexId,
        transform: RigidTransform,
    ) -> Result<(), GraphError> {
        let idx = *self
            .edge_index
            .get(&(from, to))
            .ok_or(GraphError::DanglingEdge(to))?;
        self.edges[idx].transform = transform;
        if self.edges[idx].privileged {
            self.rebuild_privileged_accum();
        }
        Ok(())
    }

    /// Replace the landmark payload of a vertex (windowed refinement moves
    /// landmark estimates). The payload must be resident.
    pub fn rewrite_landmarks(
        &mut self,
        id: VertexId,
        landmarks: Vec<VertexLandmark>,
    ) -> Result<(), GraphError> {
        let count = landmarks.len() as u32;
        let slot = self
            .payloads
            .get(id.0 as usize)
            .ok_or(GraphError::NoSuchVertex(id))?;
        let mut guard = slot.write().expect("payload lock poisoned");
        *guard = PayloadSlot::Loaded(Arc::new(landmarks));
        drop(guard);
        self.vertices[id.0 as usize].landmark_count = count;
        // In-memory payload now differs from any persisted copy.
        self.dirty[id.0 as usize] = true;
        Ok(())
    }

    fn rebuild_privileged_accum(&mut self) {
        let mut accum = Vec::with_capacity(self.privileged_path.len());
        let mut current = RigidTransform::identity();
        for (i, &id) in self.privileged_path.iter().enumerate() {
            if i == 0 {
                accum.push(RigidTransform::identity());
            } else {
                let prev = self.privileged_path[i - 1];
                let edge = self
                    .edge_between(prev, id)
                    .expect("privileged path edges exist");
                current = current.compose(&edge.transform.invert());
                accum.push(current);
            }
        }
        self.privileged_accum = accum;
    }

    pub(crate) fn set_backing(&mut self, backing: Option<BackingStore>) {
        if backing.is_some() {
            self.dirty = vec![false; self.payloads.len()];
        }
        self.backing = backing;
    }

    pub(crate) fn from_parts(
        vertices: Vec<GraphVertex>,
        edges: Vec<GraphEdge>,
        payloads: Vec<Vec<VertexLandmark>>,
    ) -> Self {
        let mut edge_index = HashMap::new();
        for (i, e) in edges.iter().enumerate() {
            edge_index.insert((e.from, e.to), i);
        }
        let mut parent: Vec<Option<VertexId>> = vec![None; vertices.len()];
        for e in &edges {
            if parent[e.to.0 as usize].is_none() {
                parent[e.to.0 as usize] = Some(e.from);
            }
        }
        let privileged_path: Vec<VertexId> = vertices
            .iter()
            .filter(|v| v.privileged)
            .map(|v| v.id)
            .collect();
        let n = payloads.len();
        let payloads: Vec<RwLock<PayloadSlot>> = payloads
            .into_iter()
            .map(|p| RwLock::new(PayloadSlot::Loaded(Arc::new(p))))
            .collect();
        let mut g = Self {
            vertices,
            edges,
            edge_index,
            parent,
            privileged_path,
            privileged_accum: Vec::new(),
            payloads,
            dirty: vec![false; n],
            backing: None,
            cache_misses: AtomicU64::new(0),
        };
        g.rebuild_privileged_accum();
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;

    fn vdata(ts: f64) -> VertexData {
        VertexData {
            timestamp: ts,
            t_sv: RigidTransform::from_translation(Vector3::new(0.1, 0.0, -0.2)),
            landmarks: vec![VertexLandmark {
                id: 1,
                position: Vector3::new(0.0, 0.0, 10.0),
                pixel: [336.0, 188.0],
                disparity: 4.2,
            }],
        }
    }

    fn step_edge(dx: f64) -> RigidTransform {
        // Vehicle advances dx along x: the old origin sits at -dx in the new frame.
        RigidTransform::from_translation(Vector3::new(-dx, 0.0, 0.0))
    }

    #[test]
    fn first_vertex_gets_id_zero_and_no_edge() {
        let mut g = PoseGraph::new();
        let id = g.add_keyframe(vdata(0.0), None, true).unwrap();
        assert_eq!(id, VertexId(0));
        assert_eq!(g.edge_count(), 0);
        assert!(g.add_keyframe(vdata(0.1), None, true).is_err());
    }

    #[test]
    fn second_vertex_makes_path_of_two() {
        let mut g = PoseGraph::new();
        let v0 = g.add_keyframe(vdata(0.0), None, true).unwrap();
        let v1 = g
            .add_keyframe(vdata(0.1), Some((v0, step_edge(2.0))), true)
            .unwrap();
        assert_eq!(g.privileged_path(), &[v0, v1]);
        let t = g.privileged_transform(v1, v0).unwrap();
        // T_v1_v0 is exactly the stored edge transform.
        assert_abs_diff_eq!(
            t.translation(),
            g.edge_between(v0, v1).unwrap().transform.translation(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn hundred_sequential_inserts_order_path() {
        let mut g = PoseGraph::new();
        let mut prev = g.add_keyframe(vdata(0.0), None, true).unwrap();
        for i in 1..100 {
            prev = g
                .add_keyframe(vdata(i as f64), Some((prev, step_edge(1.0))), true)
                .unwrap();
        }
        let ids: Vec<u64> = g.privileged_path().iter().map(|v| v.0).collect();
        let expect: Vec<u64> = (0..100).collect();
        assert_eq!(ids, expect);
    }

    #[test]
    fn dangling_edge_rejected() {
        let mut g = PoseGraph::new();
        g.add_keyframe(vdata(0.0), None, true).unwrap();
        let r = g.add_keyframe(vdata(0.1), Some((VertexId(5), step_edge(1.0))), true);
        assert_eq!(r.unwrap_err(), GraphError::DanglingEdge(VertexId(5)));
    }

    #[test]
    fn local_window_radius_zero_is_center_with_identity() {
        let mut g = PoseGraph::new();
        let v0 = g.add_keyframe(vdata(0.0), None, true).unwrap();
        let w = g.local_window(v0, 0).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].0, v0);
        assert_eq!(w[0].1, RigidTransform::identity());
    }

    #[test]
    fn local_window_truncates_at_path_start() {
        let mut g = PoseGraph::new();
        let mut prev = g.add_keyframe(vdata(0.0), None, true).unwrap();
        for i in 1..10 {
            prev = g
                .add_keyframe(vdata(i as f64), Some((prev, step_edge(1.0))), true)
                .unwrap();
        }
        let w = g.local_window(VertexId(0), 3).unwrap();
        assert_eq!(w.len(), 4); // center + 3 to the right only
        let ids: Vec<u64> = w.iter().map(|(v, _)| v.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 3]);
    }

    #[test]
    fn local_window_transforms_match_edge_chain_oracle() {
        let mut g = PoseGraph::new();
        let mut prev = g.add_keyframe(vdata(0.0), None, true).unwrap();
        // Varied edges so composition order matters.
        for i in 1..9 {
            let edge = RigidTransform::from_euler(
                0.0,
                0.01 * i as f64,
                0.1 * i as f64,
                Vector3::new(-1.0, 0.05 * i as f64, 0.0),
            );
            prev = g
                .add_keyframe(vdata(i as f64), Some((prev, edge)), true)
                .unwrap();
        }
        let center = VertexId(4);
        let w = g.local_window(center, 3).unwrap();
        assert_eq!(w.len(), 7);
        for (v, t) in &w {
            // Oracle: stepwise composition of the raw edges between v and center.
            let mut oracle = RigidTransform::identity();
            let (mut lo, dir_up) = (v.0, v.0 < center.0);
            while lo != center.0 {
                let (a, b) = if dir_up { (lo, lo + 1) } else { (lo - 1, lo) };
                let e = g.edge_between(VertexId(a), VertexId(b)).unwrap();
                if dir_up {
                    // T_center_v: advance v upward: T_b_a maps a to b.
                    oracle = e.transform.compose(&oracle);
                    lo += 1;
                } else {
                    oracle = e.transform.invert().compose(&oracle);
                    lo -= 1;
                }
            }
            // oracle is T_center_v built from the chain ending at center.
            let diff = t.compose(&oracle.invert());
            let (r, tt) = diff.deviation_from_identity();
            assert!(r < 1e-12 && tt < 1e-12, "window transform mismatch at {v}");
        }
    }

    #[test]
    fn non_privileged_center_rejected() {
        let mut g = PoseGraph::new();
        let v0 = g.add_keyframe(vdata(0.0), None, true).unwrap();
        let v1 = g
            .add_keyframe(vdata(1.0), Some((v0, step_edge(1.0))), false)
            .unwrap();
        assert_eq!(
            g.local_window(v1, 1).unwrap_err(),
            GraphError::NotPrivileged(v1)
        );
    }

    #[test]
    fn privileged_transform_consistent_with_window() {
        let mut g = PoseGraph::new();
        let mut prev = g.add_keyframe(vdata(0.0), None, true).unwrap();
        for i in 1..20 {
            let edge = RigidTransform::from_euler(
                0.001 * i as f64,
                -0.002 * i as f64,
                0.05,
                Vector3::new(-2.0, 0.1, 0.01),
            );
            prev = g
                .add_keyframe(vdata(i as f64), Some((prev, edge)), true)
                .unwrap();
        }
        let w = g.local_window(VertexId(10), 5).unwrap();
        for (v, t) in &w {
            let t2 = g.privileged_transform(VertexId(10), *v).unwrap();
            let diff = t.compose(&t2.invert());
            let (r, tt) = diff.deviation_from_identity();
            assert!(r < 1e-12 && tt < 1e-12);
        }
    }

    #[test]
    fn evict_without_persistence_is_error() {
        let mut g = PoseGraph::new();
        g.add_keyframe(vdata(0.0), None, true).unwrap();
        assert_eq!(
            g.evict_outside(&[]).unwrap_err(),
            GraphError::NotPersisted
        );
    }

    #[test]
    fn mixed_phase_edges_are_not_privileged() {
        let mut g = PoseGraph::new();
        let v0 = g.add_keyframe(vdata(0.0), None, true).unwrap();
        let v1 = g
            .add_keyframe(vdata(1.0), Some((v0, step_edge(1.0))), false)
            .unwrap();
        assert!(!g.edge_between(v0, v1).unwrap().privileged);
        assert_eq!(g.privileged_path(), &[v0]);
    }
}
