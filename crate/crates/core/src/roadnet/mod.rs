//! Road networks made of single-lane directed segments discretized into cells.
//!
//! A network can be generated as a Manhattan grid, parsed from a plain OSM XML
//! subset, or loaded from the native JSON format.

mod grid;
mod native;
mod osm;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::grid_generate;
pub use native::{load_native, save_native};
pub use osm::parse_osm;

/// Length of one simulator cell in metres.
pub const CELL_LENGTH_M: f64 = 7.5;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("xml parse error at line {line}, column {column}: {message}")]
    Xml { line: u32, column: u32, message: String },
    #[error("network has no drivable segments")]
    Empty,
    #[error("native format: {0}")]
    Format(String),
    #[error("invalid network: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseGroup {
    A,
    B,
}

/// Planar node position in metres (x east, y north).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSegment {
    pub id: String,
    pub from_node: String,
    pub to_node: String,
    pub cell_count: u32,
    pub is_entry: bool,
    pub is_exit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intersection {
    pub id: String,
    pub node_ref: String,
    pub signalized: bool,
    /// Phase group of each incoming segment (signalized intersections only).
    pub group_of_segment: BTreeMap<String, PhaseGroup>,
    /// Slot in the setting vector; `None` for unsignalized intersections.
    pub index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadNetwork {
    pub nodes: Vec<NetNode>,
    pub segments: Vec<RoadSegment>,
    pub intersections: Vec<Intersection>,
    /// Undirected pairs of intersection ids.
    pub adjacency: Vec<[String; 2]>,
}

impl RoadNetwork {
    /// Number of signalized intersections, i.e. `K`.
    pub fn signal_count(&self) -> usize {
        self.intersections.iter().filter(|i| i.signalized).count()
    }

    /// Signalized intersections ordered by setting index.
    pub fn signalized(&self) -> Vec<&Intersection> {
        let mut v: Vec<_> = self.intersections.iter().filter(|i| i.signalized).collect();
        v.sort_by_key(|i| i.index);
        v
    }

    pub fn segment_index(&self) -> HashMap<&str, usize> {
        self.segments.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect()
    }

    pub fn entry_segments(&self) -> Vec<&RoadSegment> {
        self.segments.iter().filter(|s| s.is_entry).collect()
    }

    /// Entry segments whose downstream intersection assigns them to `group`.
    pub fn entries_in_group(&self, group: PhaseGroup) -> Vec<&str> {
        let mut out = Vec::new();
        for s in self.segments.iter().filter(|s| s.is_entry) {
            let hit = self
                .intersections
                .iter()
                .any(|i| i.signalized && i.node_ref == s.to_node && i.group_of_segment.get(&s.id) == Some(&group));
            if hit {
                out.push(s.id.as_str());
            }
        }
        out
    }

    /// Dense `K x K` 0/1 adjacency over signalized intersections, by setting index.
    pub fn adjacency_matrix(&self) -> Vec<Vec<bool>> {
        let k = self.signal_count();
        let slot: HashMap<&str, usize> = self.intersections.iter().filter_map(|i| i.index.map(|x| (i.id.as_str(), x))).collect();
        let mut m = vec![vec![false; k]; k];
        for [a, b] in &self.adjacency {
            if let (Some(&i), Some(&j)) = (slot.get(a.as_str()), slot.get(b.as_str())) {
                m[i][j] = true;
                m[j][i] = true;
            }
        }
        m
    }

    /// Checks referential integrity, phase-group coverage, slot numbering and
    /// adjacency well-formedness.
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Invalid(m));
        let mut node_ids = HashSet::new();
        for n in &self.nodes {
            if !node_ids.insert(n.id.as_str()) {
                return bad(format!("duplicate node id {}", n.id));
            }
        }
        let mut seg_ids = HashMap::new();
        for s in &self.segments {
            if seg_ids.insert(s.id.as_str(), s).is_some() {
                return bad(format!("duplicate segment id {}", s.id));
            }
            if !node_ids.contains(s.from_node.as_str()) {
                return bad(format!("segment {} from_node {} does not exist", s.id, s.from_node));
            }
            if !node_ids.contains(s.to_node.as_str()) {
                return bad(format!("segment {} to_node {} does not exist", s.id, s.to_node));
            }
            if s.cell_count == 0 {
                return bad(format!("segment {} has cell_count 0", s.id));
            }
        }
        let mut inter_ids = HashSet::new();
        let mut slots = Vec::new();
        for i in &self.intersections {
            if !inter_ids.insert(i.id.as_str()) {
                return bad(format!("duplicate intersection id {}", i.id));
            }
            if !node_ids.contains(i.node_ref.as_str()) {
                return bad(format!("intersection {} node_ref {} does not exist", i.id, i.node_ref));
            }
            if !i.signalized {
                if i.index.is_some() {
                    return bad(format!("unsignalized intersection {} has an index", i.id));
                }
                continue;
            }
            let Some(idx) = i.index else {
                return bad(format!("signalized intersection {} has no index", i.id));
            };
            slots.push(idx);
            let mut seen = [false, false];
            for (sid, g) in &i.group_of_segment {
                let Some(seg) = seg_ids.get(sid.as_str()) else {
                    return bad(format!("intersection {} references unknown segment {sid}", i.id));
                };
                if seg.to_node != i.node_ref {
                    return bad(format!("segment {sid} is not incoming to intersection {}", i.id));
                }
                seen[*g as usize] = true;
            }
            if !(seen[0] && seen[1]) {
                return bad(format!("signalized intersection {} lacks an incoming segment in both phase groups", i.id));
            }
        }
        slots.sort_unstable();
        if slots.iter().enumerate().any(|(i, &s)| i != s) {
            return bad("signalized intersection indices are not 0..K-1 without gaps".into());
        }
        let mut pairs = HashSet::new();
        for [a, b] in &self.adjacency {
            if a == b {
                return bad(format!("adjacency self-entry {a}"));
            }
            for x in [a, b] {
                if !inter_ids.contains(x.as_str()) {
                    return bad(format!("adjacency references unknown intersection {x}"));
                }
            }
            let key = if a < b { (a, b) } else { (b, a) };
            if !pairs.insert(key) {
                return bad(format!("duplicate adjacency pair {a}-{b}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the native serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(save_native(self).as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Assigns incoming segments to phase groups by bearing: the segments closest
/// to the north-south axis form group A. Segments at exactly 45 degrees are
/// tied; the lowest-id tied segment goes to A and the rest to B.
pub(crate) fn assign_groups(incoming: &[(String, f64, f64)]) -> BTreeMap<String, PhaseGroup> {
    let mut out = BTreeMap::new();
    let mut tied: Vec<&str> = Vec::new();
    for (id, dx, dy) in incoming {
        let (ax, ay) = (dx.abs(), dy.abs());
        if (ay - ax).abs() <= 1e-9 * (ax + ay).max(1.0) {
            tied.push(id);
        } else if ay > ax {
            out.insert(id.clone(), PhaseGroup::A);
        } else {
            out.insert(id.clone(), PhaseGroup::B);
        }
    }
    tied.sort_unstable();
    for (n, id) in tied.into_iter().enumerate() {
        out.insert(id.to_string(), if n == 0 { PhaseGroup::A } else { PhaseGroup::B });
    }
    out
}

/// Undirected adjacency between signalized intersections: two are adjacent when
/// a chain of segments joins them without passing another signalized node.
pub(crate) fn signal_adjacency(segments: &[RoadSegment], intersections: &[Intersection]) -> Vec<[String; 2]> {
    let mut nbrs: HashMap<&str, Vec<&str>> = HashMap::new();
    for s in segments {
        nbrs.entry(s.from_node.as_str()).or_default().push(s.to_node.as_str());
        nbrs.entry(s.to_node.as_str()).or_default().push(s.from_node.as_str());
    }
    for v in nbrs.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    let sig_of_node: HashMap<&str, &str> =
        intersections.iter().filter(|i| i.signalized).map(|i| (i.node_ref.as_str(), i.id.as_str())).collect();
    let mut pairs = std::collections::BTreeSet::new();
    let mut sig: Vec<&Intersection> = intersections.iter().filter(|i| i.signalized).collect();
    sig.sort_by_key(|i| i.index);
    for start in sig {
        let mut seen = HashSet::from([start.node_ref.as_str()]);
        let mut stack = vec![start.node_ref.as_str()];
        while let Some(n) = stack.pop() {
            for &m in nbrs.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if !seen.insert(m) {
                    continue;
                }
                match sig_of_node.get(m) {
                    Some(&other) => {
                        let (a, b) =
                            if start.id.as_str() < other { (start.id.as_str(), other) } else { (other, start.id.as_str()) };
                        pairs.insert([a.to_string(), b.to_string()]);
                    }
                    None => stack.push(m),
                }
            }
        }
    }
    pairs.into_iter().collect()
}
