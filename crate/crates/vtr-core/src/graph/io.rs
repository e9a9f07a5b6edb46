//! Graph disk format: a length-prefixed binary record stream.
//!
//! Layout (all integers little-endian, all floats IEEE-754 f64 LE):
//!
//! ```text
//! header (32 bytes):
//!   0  magic          4 bytes  "VTRG"
//!   4  version        u32      currently 1
//!   8  vertex_count   u64
//!   16 edge_count     u64
//!   24 reserved       u64      zero
//! records, vertices first (in id order), then edges:
//!   tag              u8       0 = vertex, 1 = edge
//!   payload_len      u32      bytes that follow
//!   payload          ...
//! footer:
//!   crc32            u32      IEEE CRC-32 of every preceding byte
//! ```
//!
//! Vertex payload: `id u64, flags u8 (bit0 privileged), timestamp f64,
//! t_sv 12xf64 (rotation row-major then translation), landmark_count u32,`
//! then per landmark `id u64, position 3xf64, pixel 2xf64, disparity f64`
//! (56 bytes each).
//!
//! Edge payload: `from u64, to u64, flags u8 (bit0 privileged),
//! transform 12xf64`.
//!
//! Transforms round-trip bit-exactly; a whole-file checksum plus per-record
//! length prefixes let a truncated or corrupt file be rejected with the
//! offending record index.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{BackingStore, GraphEdge, GraphError, GraphVertex, PoseGraph, VertexId, VertexLandmark};
use crate::se3::RigidTransform;

pub const MAGIC: &[u8; 4] = b"VTRG";
pub const VERSION: u32 = 1;
const LANDMARK_BYTES: usize = 56;

/// IEEE CRC-32 (reflected, polynomial 0xEDB88320).
pub fn crc32(bytes: &[u8]) -> u32 {
    const TABLE: [u32; 256] = {
        let mut table = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            table[i] = c;
            i += 1;
        }
        table
    };
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

fn put_transform(buf: &mut Vec<u8>, t: &RigidTransform) {
    let r = t.rotation();
    for row in 0..3 {
        for col in 0..3 {
            buf.extend_from_slice(&r[(row, col)].to_le_bytes());
        }
    }
    for i in 0..3 {
        buf.extend_from_slice(&t.translation()[i].to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GraphError> {
        if self.pos + n > self.bytes.len() {
            return Err(GraphError::Integrity {
                record: self.record,
                detail: format!(
                    "truncated: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GraphError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, GraphError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, GraphError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, GraphError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn transform(&mut self) -> Result<RigidTransform, GraphError> {
        let mut r = Matrix3::zeros();
        for row in 0..3 {
            for col in 0..3 {
                r[(row, col)] = self.f64()?;
            }
        }
        let t = Vector3::new(self.f64()?, self.f64()?, self.f64()?);
        // Bit-exact round trip: the stored rotation was orthonormal when
        // written, so reconstruct without renormalising.
        Ok(RigidTransform::from_parts_unchecked(r, t))
    }
}

fn parse_landmark(r: &mut Reader) -> Result<VertexLandmark, GraphError> {
    Ok(VertexLandmark {
        id: r.u64()?,
        position: Vector3::new(r.f64()?, r.f64()?, r.f64()?),
        pixel: [r.f64()?, r.f64()?],
        disparity: r.f64()?,
    })
}

/// Serialise the graph to `path` and attach it as the backing store for
/// payload eviction. All payloads must be obtainable (resident or reloadable
/// from the previous backing file).
pub fn save(graph: &mut PoseGraph, path: &Path) -> Result<(), GraphError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(graph.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(graph.edge_count() as u64).to_le_bytes());
    buf.extend_from_slice(&0u64.to_le_bytes());

    let mut payload_offsets = Vec::with_capacity(graph.len());
    let ids: Vec<VertexId> = graph.vertices().iter().map(|v| v.id).collect();
    for id in ids {
        let v = graph.vertex(id)?.clone();
        let landmarks = graph.landmarks(id)?;
        let mut rec = Vec::with_capacity(117 + LANDMARK_BYTES * landmarks.len());
        rec.extend_from_slice(&v.id.0.to_le_bytes());
        rec.push(u8::from(v.privileged));
        rec.extend_from_slice(&v.timestamp.to_le_bytes());
        put_transform(&mut rec, &v.t_sv);
        rec.extend_from_slice(&(landmarks.len() as u32).to_le_bytes());
        let lm_offset_in_rec = rec.len();
        for lm in landmarks.iter() {
            rec.extend_from_slice(&lm.id.to_le_bytes());
            for i in 0..3 {
                rec.extend_from_slice(&lm.position[i].to_le_bytes());
            }
            rec.extend_from_slice(&lm.pixel[0].to_le_bytes());
            rec.extend_from_slice(&lm.pixel[1].to_le_bytes());
            rec.extend_from_slice(&lm.disparity.to_le_bytes());
        }
        // Record header: tag + length prefix.
        buf.push(0u8);
        buf.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        let abs_lm_offset = (buf.len() + lm_offset_in_rec) as u64;
        payload_offsets.push((abs_lm_offset, landmarks.len() as u32));
        buf.extend_from_slice(&rec);
    }

    for e in graph.edges() {
        let mut rec = Vec::with_capacity(113);
        rec.extend_from_slice(&e.from.0.to_le_bytes());
        rec.extend_from_slice(&e.to.0.to_le_bytes());
        rec.push(u8::from(e.privileged));
        put_transform(&mut rec, &e.transform);
        buf.push(1u8);
        buf.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        buf.extend_from_slice(&rec);
    }

    let crc = crc32(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, &buf)?;

    graph.set_backing(Some(BackingStore {
        path: path.to_path_buf(),
        payload_offsets,
    }));
    Ok(())
}

/// Load a graph, verifying the whole-file checksum and every record length.
pub fn load(path: &Path) -> Result<PoseGraph, GraphError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 36 {
        return Err(GraphError::Integrity {
            record: 0,
            detail: format!("file too short ({} bytes)", bytes.len()),
        });
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32(body);
    if stored_crc != actual_crc {
        return Err(GraphError::Integrity {
            record: 0,
            detail: format!("checksum mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"),
        });
    }

    let mut r = Reader {
        bytes: body,
        pos: 0,
        record: 0,
    };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(GraphError::Integrity {
            record: 0,
            detail: "bad magic".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(GraphError::Integrity {
            record: 0,
            detail: format!("unsupported version {version}"),
        });
    }
    let vertex_count = r.u64()? as usize;
    let edge_count = r.u64()? as usize;
    let _reserved = r.u64()?;

    let mut vertices = Vec::with_capacity(vertex_count);
    let mut payloads = Vec::with_capacity(vertex_count);
    let mut payload_offsets = Vec::with_capacity(vertex_count);
    let mut edges = Vec::with_capacity(edge_count);

    for record in 0..(vertex_count + edge_count) {
        r.record = record + 1;
        let tag = r.u8()?;
        let len = r.u32()? as usize;
        let start = r.pos;
        match tag {
            0 => {
                let id = VertexId(r.u64()?);
                let flags = r.u8()?;
                let timestamp = r.f64()?;
                let t_sv = r.transform()?;
                let n = r.u32()? as usize;
                payload_offsets.push((r.pos as u64, n as u32));
                let mut lms = Vec::with_capacity(n);
                for _ in 0..n {
                    lms.push(parse_landmark(&mut r)?);
                }
                if vertices.len() != id.0 as usize {
                    return Err(GraphError::Integrity {
                        record: r.record,
                        detail: format!("vertex id {id} out of order"),
                    });
                }
                vertices.push(GraphVertex {
                    id,
                    privileged: flags & 1 != 0,
                    timestamp,
                    t_sv,
                    landmark_count: n as u32,
                });
                payloads.push(lms);
            }
            1 => {
                let from = VertexId(r.u64()?);
                let to = VertexId(r.u64()?);
                let flags = r.u8()?;
                let transform = r.transform()?;
                if from.0 as usize >= vertex_count || to.0 as usize >= vertex_count {
                    return Err(GraphError::Integrity {
                        record: r.record,
                        detail: format!("edge {from}->{to} references missing vertex"),
                    });
                }
                edges.push(GraphEdge {
                    from,
                    to,
                    transform,
                    privileged: flags & 1 != 0,
                });
            }
            t => {
                return Err(GraphError::Integrity {
                    record: r.record,
                    detail: format!("unknown record tag {t}"),
                })
            }
        }
        if r.pos - start != len {
            return Err(GraphError::Integrity {
                record: r.record,
                detail: format!("record length mismatch: header {len}, parsed {}", r.pos - start),
            });
        }
    }
    if r.pos != body.len() {
        return Err(GraphError::Integrity {
            record: vertex_count + edge_count,
            detail: format!("{} trailing bytes", body.len() - r.pos),
        });
    }

    let mut graph = PoseGraph::from_parts(vertices, edges, payloads);
    graph.set_backing(Some(BackingStore {
        path: path.to_path_buf(),
        payload_offsets,
    }));
    Ok(graph)
}

/// Re-read the landmark payload of one vertex from the backing file.
pub(crate) fn read_payload(
    backing: &BackingStore,
    id: VertexId,
) -> Result<Vec<VertexLandmark>, GraphError> {
    let (offset, count) = *backing
        .payload_offsets
        .get(id.0 as usize)
        .ok_or(GraphError::NoSuchVertex(id))?;
    let mut file = std::fs::File::open(&backing.path)?;
    file.seek(SeekFrom::Start(offset))?;
    let mut buf = vec![0u8; count as usize * LANDMARK_BYTES];
    file.read_exact(&mut buf)?;
    let mut r = Reader {
        bytes: &buf,
        pos: 0,
        record: id.0 as usize,
    };
    let mut lms = Vec::with_capacity(count as usize);
    for _ in 0..count {
        lms.push(parse_landmark(&mut r)?);
    }
    Ok(lms)
}

/// Human-readable dump of a graph file.
pub fn dump_text(graph: &PoseGraph, out: &mut impl Write) -> std::io::Result<()> {
    writeln!(
        out,
        "pose graph: {} vertices, {} edges, privileged path length {}",
        graph.len(),
        graph.edge_count(),
        graph.privileged_path().len()
    )?;
    for v in graph.vertices() {
        let lm = graph.landmarks(v.id).map(|l| l.len()).unwrap_or(0);
        let t = v.t_sv.translation();
        writeln!(
            out,
            "vertex {} t={:.3}s privileged={} landmarks={} t_sv=[{:.4} {:.4} {:.4}]",
            v.id, v.timestamp, v.privileged, lm, t.x, t.y, t.z
        )?;
    }
    for e in graph.edges() {
        let t = e.transform.translation();
        let rot = e.transform.rotation_magnitude();
        writeln!(
            out,
            "edge {} -> {} privileged={} |t|=[{:.4} {:.4} {:.4}] rot={:.4} rad",
            e.from, e.to, e.privileged, t.x, t.y, t.z, rot
        )?;
    }
    Ok(())
}
