//! Markdown reference page generated from the clap definitions and the
//! default experiment config, so the page cannot drift from the binary.

use clap::CommandFactory;
use greenwave::surrogates::{FcnnConfig, ModelConfig};

use crate::error::CliResult;
use crate::run::ExperimentConfig;
use crate::Cli;

pub fn render() -> CliResult<String> {
    let mut out = String::from("# greenwave command reference\n\nGenerated by `greenwave reference`. Do not edit by hand.\n");
    let mut root = Cli::command().bin_name("greenwave");
    root.build();
    section(&mut out, "greenwave", &mut root);

    out.push_str("\n## Experiment config\n\nCommands with `--config FILE` read an experiment file (TOML when the extension is `.toml`, JSON otherwise). ");
    out.push_str("Flags override config values; unknown keys are rejected; referenced paths must exist. ");
    out.push_str("Defaults, with an FCNN model section for illustration:\n\n```toml\n");
    let example = ExperimentConfig { model: Some(ModelConfig::Fcnn(FcnnConfig::default())), ..ExperimentConfig::default() };
    out.push_str(&toml::to_string(&example).map_err(|e| crate::error::CliError::new(crate::error::Kind::Parse, e.to_string()))?);
    out.push_str("```\n");
    Ok(out)
}

fn section(out: &mut String, path: &str, cmd: &mut clap::Command) {
    let help = cmd.render_long_help().to_string();
    let help: Vec<&str> = help.lines().map(str::trim_end).collect();
    out.push_str(&format!("\n## `{path}`\n\n```text\n{}\n```\n", help.join("\n").trim_end()));
    for sub in cmd.get_subcommands_mut().filter(|c| !c.is_hide_set() && c.get_name() != "help") {
        let name = format!("{path} {}", sub.get_name());
        section(out, &name, sub);
    }
}
