//! Graph persistence: versioned binary format with bit-exact round-trip.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Embedding;
use crate::geometry::Pose;
use crate::smg::{GraphParams, Keyframe, MemoryGraph, NodeId, ObjectEntry, SpatialNode};

const MAGIC: &[u8; 4] = b"MGSG";
const VERSION: u16 = 1;

pub fn save_graph(graph: &MemoryGraph, path: &Path) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&graph_to_bytes(graph))?;
    Ok(())
}

/// Load and validate a graph file.
pub fn load_graph(path: &Path) -> Result<MemoryGraph> {
    let bytes = std::fs::read(path)?;
    let graph = graph_from_bytes(&bytes)?;
    graph.validate()?;
    Ok(graph)
}

pub(crate) fn graph_to_bytes(graph: &MemoryGraph) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());

    let p = &graph.params;
    out.extend_from_slice(&p.node_spacing.to_le_bytes());
    out.extend_from_slice(&p.region_radius.to_le_bytes());
    out.extend_from_slice(&(p.keyframe_count as u32).to_le_bytes());
    out.extend_from_slice(&(p.keyframe_pool as u32).to_le_bytes());
    out.extend_from_slice(&p.merge_threshold.to_le_bytes());
    out.extend_from_slice(&p.object_weight.to_le_bytes());
    out.extend_from_slice(&(p.embed_dim as u32).to_le_bytes());

    out.extend_from_slice(&(graph.nodes.len() as u32).to_le_bytes());
    for node in &graph.nodes {
        out.extend_from_slice(&node.id.0.to_le_bytes());
        for c in node.center {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&(node.keyframes.len() as u32).to_le_bytes());
        for kf in &node.keyframes {
            for &v in kf.embedding.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for c in kf.pose.position {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(&kf.pose.yaw.to_le_bytes());
            out.extend_from_slice(&(kf.frame_index as u64).to_le_bytes());
        }
        out.extend_from_slice(&(node.objects.len() as u32).to_le_bytes());
        for (&category, entries) in &node.objects {
            out.extend_from_slice(&(category as u32).to_le_bytes());
            out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for entry in entries {
                for &v in entry.embedding.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&entry.support.to_le_bytes());
            }
        }
    }

    out.extend_from_slice(&(graph.edges.len() as u32).to_le_bytes());
    for &(a, b) in &graph.edges {
        out.extend_from_slice(&a.0.to_le_bytes());
        out.extend_from_slice(&b.0.to_le_bytes());
    }
    out
}

pub(crate) fn graph_from_bytes(bytes: &[u8]) -> Result<MemoryGraph> {
    let mut cur = Cursor { bytes, at: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, not a graph file".into()));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported graph version {version}")));
    }

    let params = GraphParams {
        node_spacing: cur.f64()?,
        region_radius: cur.f64()?,
        keyframe_count: cur.u32()? as usize,
        keyframe_pool: cur.u32()? as usize,
        merge_threshold: cur.f64()?,
        object_weight: cur.f64()?,
        embed_dim: cur.u32()? as usize,
    };

    let node_count = cur.u32()? as usize;
    let mut nodes = Vec::with_capacity(node_count);
    for _ in 0..node_count {
        let id = NodeId(cur.u32()?);
        let center = [cur.f64()?, cur.f64()?, cur.f64()?];
        let keyframe_count = cur.u32()? as usize;
        let mut keyframes = Vec::with_capacity(keyframe_count);
        for _ in 0..keyframe_count {
            let embedding = cur.embedding(params.embed_dim)?;
            let position = [cur.f64()?, cur.f64()?, cur.f64()?];
            let yaw = cur.f64()?;
            let pose = Pose::new(position, yaw)
                .map_err(|_| Error::Format("non-finite keyframe pose".into()))?;
            let frame_index = cur.u64()? as usize;
            keyframes.push(Keyframe {
                embedding,
                pose,
                frame_index,
            });
        }
        let category_count = cur.u32()? as usize;
        let mut objects = BTreeMap::new();
        for _ in 0..category_count {
            let category = cur.u32()? as usize;
            let entry_count = cur.u32()? as usize;
            let mut entries = Vec::with_capacity(entry_count);
            for _ in 0..entry_count {
                let embedding = cur.embedding(params.embed_dim)?;
                let support = cur.u32()?;
                entries.push(ObjectEntry { embedding, support });
            }
            objects.insert(category, entries);
        }
        nodes.push(SpatialNode {
            id,
            center,
            keyframes,
            objects,
        });
    }

    let edge_count = cur.u32()? as usize;
    let mut edges = BTreeSet::new();
    for _ in 0..edge_count {
        edges.insert((NodeId(cur.u32()?), NodeId(cur.u32()?)));
    }

    Ok(MemoryGraph {
        params,
        nodes,
        edges,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("truncated file".into()));
        }
        let slice = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn embedding(&mut self, dim: usize) -> Result<Embedding> {
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(self.f64()?);
        }
        Embedding::from_unit_values(values)
            .map_err(|_| Error::Format("stored embedding is not unit-norm".into()))
    }
}
