//! Plain OSM XML ingestion.
//!
//! Ways are split at junctions, way ends and signal nodes. Each piece becomes
//! one directed segment per permitted direction, with `ceil(length / 7.5 m)`
//! cells. Nodes touched by a single piece are boundary nodes: segments leaving
//! them are entries and segments reaching them are exits.

use std::collections::{BTreeMap, HashMap};

use super::{assign_groups, signal_adjacency, Intersection, NetError, NetNode, RoadNetwork, RoadSegment, CELL_LENGTH_M};

const DRIVABLE: &[&str] = &[
    "motorway",
    "motorway_link",
    "trunk",
    "trunk_link",
    "primary",
    "primary_link",
    "secondary",
    "secondary_link",
    "tertiary",
    "tertiary_link",
    "residential",
    "unclassified",
    "service",
];

const EARTH_RADIUS_M: f64 = 6_371_000.0;

struct OsmNode {
    lat: f64,
    lon: f64,
    signal: bool,
}

struct OsmWay {
    id: String,
    refs: Vec<String>,
    forward: bool,
    backward: bool,
}

fn haversine(a: &OsmNode, b: &OsmNode) -> f64 {
    let (la1, la2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = la2 - la1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().asin()
}

fn id_key(id: &str) -> (i64, String) {
    (id.parse::<i64>().unwrap_or(i64::MAX), id.to_string())
}

pub fn parse_osm(xml_text: &str) -> Result<RoadNetwork, NetError> {
    let doc = roxmltree::Document::parse(xml_text).map_err(|e| {
        let pos = e.pos();
        NetError::Xml { line: pos.row, column: pos.col, message: e.to_string() }
    })?;

    let mut nodes: HashMap<String, OsmNode> = HashMap::new();
    let mut ways = Vec::new();
    for el in doc.root_element().children().filter(|n| n.is_element()) {
        let tags: HashMap<&str, &str> = el
            .children()
            .filter(|c| c.has_tag_name("tag"))
            .filter_map(|c| Some((c.attribute("k")?, c.attribute("v")?)))
            .collect();
        match el.tag_name().name() {
            "node" => {
                let (Some(id), Some(lat), Some(lon)) = (el.attribute("id"), el.attribute("lat"), el.attribute("lon")) else {
                    continue;
                };
                let (Ok(lat), Ok(lon)) = (lat.parse::<f64>(), lon.parse::<f64>()) else {
                    let pos = doc.text_pos_at(el.range().start);
                    return Err(NetError::Xml {
                        line: pos.row,
                        column: pos.col,
                        message: format!("node {id} has non-numeric coordinates"),
                    });
                };
                let signal = tags.get("highway") == Some(&"traffic_signals");
                nodes.insert(id.to_string(), OsmNode { lat, lon, signal });
            }
            "way" => {
                let Some(hw) = tags.get("highway") else { continue };
                if !DRIVABLE.contains(hw) {
                    continue;
                }
                let oneway = tags.get("oneway").copied().unwrap_or("no");
                let roundabout = tags.get("junction") == Some(&"roundabout");
                let (forward, backward) = match oneway {
                    "yes" | "true" | "1" => (true, false),
                    "-1" | "reverse" => (false, true),
                    _ if roundabout => (true, false),
                    _ => (true, true),
                };
                let refs = el
                    .children()
                    .filter(|c| c.has_tag_name("nd"))
                    .filter_map(|c| c.attribute("ref"))
                    .map(str::to_string)
                    .collect();
                ways.push(OsmWay { id: el.attribute("id").unwrap_or("").to_string(), refs, forward, backward });
            }
            _ => {}
        }
    }

    // Drop references to unknown nodes and consecutive duplicates.
    for w in &mut ways {
        w.refs.retain(|r| nodes.contains_key(r));
        w.refs.dedup();
    }
    ways.retain(|w| w.refs.len() >= 2);

    let mut uses: HashMap<&str, usize> = HashMap::new();
    for w in &ways {
        for r in &w.refs {
            *uses.entry(r.as_str()).or_default() += 1;
        }
    }

    // Pieces: (way id, piece number, node chain).
    let mut pieces: Vec<(String, usize, Vec<&str>)> = Vec::new();
    for w in &ways {
        let mut chain = vec![w.refs[0].as_str()];
        let mut n = 0;
        for (i, r) in w.refs.iter().enumerate().skip(1) {
            chain.push(r.as_str());
            let last = i + 1 == w.refs.len();
            if last || uses[r.as_str()] > 1 || nodes[r.as_str()].signal {
                pieces.push((w.id.clone(), n, std::mem::replace(&mut chain, vec![r.as_str()])));
                n += 1;
            }
        }
    }
    let mut degree: HashMap<&str, usize> = HashMap::new();
    for (_, _, chain) in &pieces {
        *degree.entry(chain[0]).or_default() += 1;
        *degree.entry(chain[chain.len() - 1]).or_default() += 1;
    }

    let mut endpoints: Vec<&str> = degree.keys().copied().collect();
    endpoints.sort_by_key(|id| id_key(id));
    let lat0 = endpoints.iter().map(|id| nodes[*id].lat).fold(f64::INFINITY, f64::min);
    let lon0 = endpoints.iter().map(|id| nodes[*id].lon).fold(f64::INFINITY, f64::min);
    let mean_lat = endpoints.iter().map(|id| nodes[*id].lat).sum::<f64>() / endpoints.len().max(1) as f64;
    let project = |n: &OsmNode| -> (f64, f64) {
        let x = EARTH_RADIUS_M * (n.lon - lon0).to_radians() * mean_lat.to_radians().cos();
        let y = EARTH_RADIUS_M * (n.lat - lat0).to_radians();
        (x, y)
    };

    let mut segments = Vec::new();
    // Direction of the final leg of each segment, for bearing-based grouping.
    let mut final_leg: HashMap<String, (f64, f64)> = HashMap::new();
    let way_dirs: HashMap<&str, (bool, bool)> = ways.iter().map(|w| (w.id.as_str(), (w.forward, w.backward))).collect();
    for (wid, n, chain) in &pieces {
        let length: f64 = chain.windows(2).map(|p| haversine(&nodes[p[0]], &nodes[p[1]])).sum();
        let cell_count = ((length / CELL_LENGTH_M).ceil() as u32).max(1);
        let (fwd, bwd) = way_dirs[wid.as_str()];
        let mut emit = |suffix: &str, seq: Vec<&str>| {
            let (from, to) = (seq[0], seq[seq.len() - 1]);
            let (px, py) = project(&nodes[seq[seq.len() - 2]]);
            let (tx, ty) = project(&nodes[to]);
            let id = format!("w{wid}_{n}_{suffix}");
            final_leg.insert(id.clone(), (tx - px, ty - py));
            segments.push(RoadSegment {
                id,
                from_node: from.to_string(),
                to_node: to.to_string(),
                cell_count,
                is_entry: degree[from] == 1,
                is_exit: degree[to] == 1,
            });
        };
        if fwd {
            emit("f", chain.clone());
        }
        if bwd {
            emit("r", chain.iter().rev().copied().collect());
        }
    }
    if segments.is_empty() {
        return Err(NetError::Empty);
    }

    let net_nodes = endpoints
        .iter()
        .map(|id| {
            let (x, y) = project(&nodes[*id]);
            NetNode { id: id.to_string(), x, y }
        })
        .collect();

    let mut intersections = Vec::new();
    let mut next_index = 0;
    for id in endpoints.iter().filter(|id| degree[**id] >= 2) {
        let incoming: Vec<(String, f64, f64)> = segments
            .iter()
            .filter(|s| s.to_node == *id)
            .map(|s| {
                let (dx, dy) = final_leg[&s.id];
                (s.id.clone(), dx, dy)
            })
            .collect();
        let groups = assign_groups(&incoming);
        let covered = groups.values().any(|g| *g == super::PhaseGroup::A) && groups.values().any(|g| *g == super::PhaseGroup::B);
        // Signal tags on nodes without two approach groups (e.g. mid-block
        // crossings) cannot run a two-phase plan and are kept unsignalized.
        let signalized = nodes[*id].signal && covered;
        let index = signalized.then(|| {
            next_index += 1;
            next_index - 1
        });
        intersections.push(Intersection {
            id: format!("i{id}"),
            node_ref: id.to_string(),
            signalized,
            group_of_segment: if signalized { groups } else { BTreeMap::new() },
            index,
        });
    }

    let adjacency = signal_adjacency(&segments, &intersections);
    let net = RoadNetwork { nodes: net_nodes, segments, intersections, adjacency };
    net.validate()?;
    Ok(net)
}
