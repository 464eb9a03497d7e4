use greenwave::roadnet::{grid_generate, parse_osm, save_native, RoadNetwork};
use serde_json::json;

use super::json_line;
use crate::error::{CliError, CliResult};
use crate::run::{load_net, read_text, write_text, InputFile};
use crate::{GridArgs, OsmImportArgs, ValidateArgs};

fn summary(net: &RoadNetwork) -> serde_json::Value {
    json!({
        "intersections": net.signal_count(),
        "segments": net.segments.len(),
        "network_hash": net.content_hash(),
    })
}

/// Writes the network and, next to it, `<stem>.resolved.json`.
fn write_net(net: &RoadNetwork, out: &std::path::Path, resolved: serde_json::Value) -> CliResult<String> {
    write_text(out, &(save_native(net) + "\n"))?;
    let resolved_path = out.with_extension("resolved.json");
    write_text(&resolved_path, &(serde_json::to_string_pretty(&resolved)? + "\n"))?;
    let mut s = summary(net);
    s["out"] = json!(out);
    Ok(json_line(&s))
}

pub fn grid(a: GridArgs) -> CliResult<String> {
    let net = grid_generate(a.rows, a.cols, a.segment_cells)?;
    let resolved = json!({"command": "net grid", "rows": a.rows, "cols": a.cols, "segment_cells": a.segment_cells});
    write_net(&net, &a.out, resolved)
}

pub fn osm_import(a: OsmImportArgs) -> CliResult<String> {
    let text = read_text(&a.input)?;
    let net = parse_osm(&text).map_err(|e| CliError::from(e).context(a.input.display()))?;
    let resolved = json!({"command": "net osm-import", "input": InputFile::hash(&a.input)?});
    write_net(&net, &a.out, resolved)
}

pub fn validate(a: ValidateArgs) -> CliResult<String> {
    let net = load_net(&a.net)?;
    let mut s = summary(&net);
    s["valid"] = json!(true);
    Ok(json_line(&s))
}
