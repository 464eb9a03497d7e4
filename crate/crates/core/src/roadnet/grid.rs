use std::collections::BTreeMap;

use super::{assign_groups, signal_adjacency, Intersection, NetError, NetNode, RoadNetwork, RoadSegment, CELL_LENGTH_M};

/// Manhattan grid of `rows x cols` signalized intersections with an entry and
/// an exit stub on every open side of the boundary.
///
/// Row 0 is the northern row. Setting indices run row-major.
pub fn grid_generate(rows: usize, cols: usize, segment_cells: u32) -> Result<RoadNetwork, NetError> {
    if rows == 0 || cols == 0 || segment_cells == 0 {
        return Err(NetError::Invalid(format!(
            "grid needs rows, cols, segment_cells >= 1 (got {rows}, {cols}, {segment_cells})"
        )));
    }
    let spacing = segment_cells as f64 * CELL_LENGTH_M;
    let mut nodes = Vec::new();
    let inter_node = |r: usize, c: usize| format!("n{r}_{c}");
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(NetNode { id: inter_node(r, c), x: c as f64 * spacing, y: -(r as f64) * spacing });
        }
    }

    let mut segments = Vec::new();
    let mut push = |from: String, to: String, entry: bool, exit: bool| {
        let id = format!("s{:04}", segments.len());
        segments.push(RoadSegment {
            id,
            from_node: from,
            to_node: to,
            cell_count: segment_cells,
            is_entry: entry,
            is_exit: exit,
        });
    };

    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                push(inter_node(r, c), inter_node(r, c + 1), false, false);
                push(inter_node(r, c + 1), inter_node(r, c), false, false);
            }
            if r + 1 < rows {
                push(inter_node(r, c), inter_node(r + 1, c), false, false);
                push(inter_node(r + 1, c), inter_node(r, c), false, false);
            }
        }
    }

    // Boundary stubs: (boundary node id, position, attached intersection).
    let mut stubs = Vec::new();
    for c in 0..cols {
        stubs.push((format!("bN{c}"), (c as f64 * spacing, spacing), (0, c)));
        stubs.push((format!("bS{c}"), (c as f64 * spacing, -(rows as f64) * spacing), (rows - 1, c)));
    }
    for r in 0..rows {
        stubs.push((format!("bW{r}"), (-spacing, -(r as f64) * spacing), (r, 0)));
        stubs.push((format!("bE{r}"), (cols as f64 * spacing, -(r as f64) * spacing), (r, cols - 1)));
    }
    for (bid, (x, y), (r, c)) in stubs {
        nodes.push(NetNode { id: bid.clone(), x, y });
        push(bid.clone(), inter_node(r, c), true, false);
        push(inter_node(r, c), bid, false, true);
    }

    let pos: BTreeMap<&str, (f64, f64)> = nodes.iter().map(|n| (n.id.as_str(), (n.x, n.y))).collect();
    let mut intersections = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let nid = inter_node(r, c);
            let incoming: Vec<(String, f64, f64)> = segments
                .iter()
                .filter(|s| s.to_node == nid)
                .map(|s| {
                    let (fx, fy) = pos[s.from_node.as_str()];
                    let (tx, ty) = pos[s.to_node.as_str()];
                    (s.id.clone(), tx - fx, ty - fy)
                })
                .collect();
            intersections.push(Intersection {
                id: format!("i{r}_{c}"),
                node_ref: nid,
                signalized: true,
                group_of_segment: assign_groups(&incoming),
                index: Some(r * cols + c),
            });
        }
    }
    let adjacency = signal_adjacency(&segments, &intersections);
    let net = RoadNetwork { nodes, segments, intersections, adjacency };
    net.validate()?;
    Ok(net)
}
