mod model;
mod net;
mod optimize;
mod sim;

use greenwave::datasetgen::directional_demand;
use greenwave::microsim::SimConfig;
use greenwave::roadnet::RoadNetwork;
use greenwave::signalplan::SignalSetting;

use crate::error::{CliError, CliResult};
use crate::{Command, NetCommand, SimFlags};

/// Runs one command and returns the line printed on stdout.
pub fn dispatch(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::Net(NetCommand::Grid(a)) => net::grid(a),
        Command::Net(NetCommand::OsmImport(a)) => net::osm_import(a),
        Command::Net(NetCommand::Validate(a)) => net::validate(a),
        Command::Simulate(a) => sim::simulate(a),
        Command::GenDataset(a) => sim::gen_dataset(a),
        Command::Train(a) => model::train(a),
        Command::Evaluate(a) => model::evaluate(a),
        Command::Compare(a) => model::compare(a),
        Command::Gradcheck(a) => model::gradcheck(a),
        Command::Optimize(a) => optimize::optimize(a),
        Command::Reference => crate::reference::render().map(|s| s.trim_end().to_owned()),
    }
}

/// Applies demand and duration flags on top of a configured `SimConfig`.
fn apply_sim_flags(net: &RoadNetwork, mut cfg: SimConfig, flags: &SimFlags) -> CliResult<SimConfig> {
    if let Some(d) = flags.duration {
        cfg.duration_s = d;
    }
    if let Some(p) = flags.demand {
        cfg.demand_default = p;
        cfg.demand.clear();
    }
    if let (Some(a), Some(b)) = (flags.demand_a, flags.demand_b) {
        let directional = directional_demand(net, a, b);
        cfg.demand_default = directional.demand_default;
        cfg.demand = directional.demand;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `gA0,gB0,off0,...` into a validated setting for `k` intersections.
fn parse_setting(text: &str, k: usize) -> CliResult<SignalSetting> {
    let values = text
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<i64>()
                .map_err(|_| CliError::new(crate::error::Kind::Parse, format!("setting value {v:?} is not an integer")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(SignalSetting::decode(&values, k)?)
}

fn json_line(value: &serde_json::Value) -> String {
    serde_json::to_string(value).expect("json value serializes")
}
