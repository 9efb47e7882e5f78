//! Binary serialization of spatio-temporal graphs.
//!
//! Layout (all integers and floats little-endian, every float stored as f64):
//! magic `STGR`, format version, clip id, frame geometry, optional label,
//! then nodes (frame, instance, 23 attribute values in semantic/geometric/
//! lane order), spatial edges `(i, j, weight)`, temporal edges `(i, j)`, and
//! the instance map. A graph-set file (`STGS`) is a count followed by that
//! record repeated.

use super::{GraphNode, NodeAttr, StGraph, ATTR_DIM, GEOMETRIC_DIM, LANE_DIM, SEMANTIC_DIM};
use crate::binio::*;
use crate::error::{Error, Result};
use crate::scalar::{real, Scalar};
use std::collections::BTreeMap;
use std::io::{Read, Write};

const GRAPH_MAGIC: &[u8; 4] = b"STGR";
const SET_MAGIC: &[u8; 4] = b"STGS";
const VERSION: u32 = 1;

pub fn write_graph<S: Scalar, W: Write>(w: &mut W, g: &StGraph<S>) -> Result<()> {
    let f = |v: S| v.to_f64().expect("scalar converts to f64");
    w.write_all(GRAPH_MAGIC)?;
    write_u32(w, VERSION)?;
    write_str(w, &g.clip_id)?;
    write_f64(w, f(g.width))?;
    write_f64(w, f(g.height))?;
    write_u64(w, g.frames as u64)?;
    match g.label {
        Some(l) => {
            write_u8(w, 1)?;
            write_u64(w, l as u64)?;
        }
        None => write_u8(w, 0)?,
    }
    write_u64(w, g.nodes.len() as u64)?;
    for node in &g.nodes {
        write_u64(w, node.frame as u64)?;
        write_i64(w, node.instance)?;
        for v in node.attr.semantic.iter().chain(&node.attr.geometric).chain(&node.attr.lane) {
            write_f64(w, f(*v))?;
        }
    }
    write_u64(w, g.spatial_edges.len() as u64)?;
    for &(i, j, weight) in &g.spatial_edges {
        write_u64(w, i as u64)?;
        write_u64(w, j as u64)?;
        write_f64(w, f(weight))?;
    }
    write_u64(w, g.temporal_edges.len() as u64)?;
    for &(i, j) in &g.temporal_edges {
        write_u64(w, i as u64)?;
        write_u64(w, j as u64)?;
    }
    write_u64(w, g.instance_map.len() as u64)?;
    for (id, indices) in &g.instance_map {
        write_i64(w, *id)?;
        write_u64(w, indices.len() as u64)?;
        for &i in indices {
            write_u64(w, i as u64)?;
        }
    }
    Ok(())
}

pub fn read_graph<S: Scalar, R: Read>(r: &mut R) -> Result<StGraph<S>> {
    expect_magic(r, GRAPH_MAGIC, "graph")?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported graph format version {version}")));
    }
    let clip_id = read_str(r)?;
    let width = real::<S>(read_f64(r)?);
    let height = real::<S>(read_f64(r)?);
    let frames = read_usize(r)?;
    let label = match read_u8(r)? {
        0 => None,
        1 => Some(read_usize(r)?),
        v => return Err(Error::format(format!("bad label flag {v}"))),
    };
    let node_count = read_usize(r)?;
    let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
    for _ in 0..node_count {
        let frame = read_usize(r)?;
        let instance = read_i64(r)?;
        let mut attr = vec![S::zero(); ATTR_DIM];
        for v in attr.iter_mut() {
            *v = real(read_f64(r)?);
        }
        let lane = attr.split_off(SEMANTIC_DIM + GEOMETRIC_DIM);
        let geometric = attr.split_off(SEMANTIC_DIM);
        nodes.push(GraphNode {
            frame,
            instance,
            attr: NodeAttr { semantic: attr, geometric, lane },
        });
    }
    debug_assert!(nodes.iter().all(|n| n.attr.lane.len() == LANE_DIM));
    let spatial_count = read_usize(r)?;
    let mut spatial_edges = Vec::with_capacity(spatial_count.min(1 << 20));
    for _ in 0..spatial_count {
        let i = read_usize(r)?;
        let j = read_usize(r)?;
        let weight = real::<S>(read_f64(r)?);
        spatial_edges.push((i, j, weight));
    }
    let temporal_count = read_usize(r)?;
    let mut temporal_edges = Vec::with_capacity(temporal_count.min(1 << 20));
    for _ in 0..temporal_count {
        temporal_edges.push((read_usize(r)?, read_usize(r)?));
    }
    let instance_count = read_usize(r)?;
    let mut instance_map = BTreeMap::new();
    for _ in 0..instance_count {
        let id = read_i64(r)?;
        let len = read_usize(r)?;
        let mut indices = Vec::with_capacity(len.min(1 << 20));
        for _ in 0..len {
            indices.push(read_usize(r)?);
        }
        instance_map.insert(id, indices);
    }
    let graph = StGraph {
        clip_id,
        width,
        height,
        frames,
        nodes,
        spatial_edges,
        temporal_edges,
        instance_map,
        label,
    };
    graph.check_invariants()?;
    Ok(graph)
}

pub fn write_graph_set<S: Scalar, W: Write>(w: &mut W, graphs: &[StGraph<S>]) -> Result<()> {
    w.write_all(SET_MAGIC)?;
    write_u32(w, VERSION)?;
    write_u64(w, graphs.len() as u64)?;
    for g in graphs {
        write_graph(w, g)?;
    }
    Ok(())
}

pub fn read_graph_set<S: Scalar, R: Read>(r: &mut R) -> Result<Vec<StGraph<S>>> {
    expect_magic(r, SET_MAGIC, "graph set")?;
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported graph-set version {version}")));
    }
    let count = read_usize(r)?;
    let mut graphs = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        graphs.push(read_graph(r)?);
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundingBox;
    use crate::ingest::{DetectedObject, TrackedClip};
    use crate::stgraph::{build_graph, GraphConfig};

    fn sample_graph() -> StGraph {
        let objects = vec![
            DetectedObject {
                frame: 0,
                instance: 1,
                class: 2,
                bbox: BoundingBox::new(10.0, 10.0, 20.0, 15.0),
            },
            DetectedObject {
                frame: 0,
                instance: 2,
                class: 0,
                bbox: BoundingBox::new(50.0, 40.0, 10.0, 25.0),
            },
            DetectedObject {
                frame: 1,
                instance: 1,
                class: 2,
                bbox: BoundingBox::new(12.0, 11.0, 20.0, 15.0),
            },
        ];
        let clip = TrackedClip {
            clip_id: "roundtrip".into(),
            width: 100.0,
            height: 100.0,
            frames: 2,
            objects,
            lanes: vec![vec![(0.0, 50.0), (30.0, 52.5)], vec![(1.0, 50.0)]],
            label: Some(3),
        };
        build_graph(&clip, &GraphConfig::default()).unwrap()
    }

    #[test]
    fn graph_round_trips_bit_exactly() {
        let g = sample_graph();
        let mut buf = Vec::new();
        write_graph(&mut buf, &g).unwrap();
        let back: StGraph = read_graph(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);

        // serialize again: byte-identical output
        let mut buf2 = Vec::new();
        write_graph(&mut buf2, &back).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn graph_set_round_trips() {
        let graphs = vec![sample_graph(), sample_graph()];
        let mut buf = Vec::new();
        write_graph_set(&mut buf, &graphs).unwrap();
        let back: Vec<StGraph> = read_graph_set(&mut buf.as_slice()).unwrap();
        assert_eq!(back, graphs);
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let g = sample_graph();
        let mut buf = Vec::new();
        write_graph(&mut buf, &g).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(read_graph::<f64, _>(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let buf = b"NOPE00000000".to_vec();
        let err = read_graph::<f64, _>(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }
}
