//! Command-line driver for the plan2vec pipeline.
//!
//! Every [`RunConfig`] key is also a flag (`train_lr` becomes `--train-lr`).
//! Values resolve in order: built-in defaults, the run directory's saved
//! `config.json` (when `--config` is absent), the `--config` file, then flags.

pub mod config;
pub mod error;
pub mod plot;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Arg, ArgAction, ArgMatches, Command};
use serde_json::{Map, Value};

pub use config::{RunConfig, Stage};
pub use error::{CliError, CliResult};
use stages::Run;

fn command() -> Command {
    let mut cmd = Command::new("plan2vec")
        .version(clap::crate_version!())
        .about("Goal-conditioned embeddings for 2D maze datasets: data, local metric, graph, distillation, evaluation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("Flat JSON config; flags override its values"),
        );
    for (key, default) in config::config_keys() {
        let shown = match &default {
            Value::Null => "none".to_string(),
            Value::String(s) => s.clone(),
            Value::Array(items) => items.iter().map(|v| v.to_string().trim_matches('"').to_string()).collect::<Vec<_>>().join(","),
            v => v.to_string(),
        };
        cmd = cmd.arg(
            Arg::new(key.clone())
                .long(config::flag_name(&key))
                .value_name("VALUE")
                .global(true)
                .help_heading("Config")
                .help(format!("[default: {shown}]")),
        );
    }
    for stage in Stage::PIPELINE {
        let about = match stage {
            Stage::GenData => "Generate random-policy rollouts",
            Stage::TrainLocal => "Train the local metric",
            Stage::BuildGraph => "Build the transition graph",
            Stage::TrainPlan2vec => "Distill graph distances into the global embedding",
            Stage::ExportEmbedding => "Write embedding.csv",
            Stage::Evaluate => "Success rates, lookahead curves and diagnostics",
            Stage::PlanCost => "Planner expansion counts against plan length",
            Stage::Plot => "Render CSV artifacts as SVG",
        };
        let mut sub = Command::new(stage.name()).about(about);
        if stage == Stage::Plot {
            sub = sub
                .arg(Arg::new("csv").value_name("CSV").num_args(0..).value_parser(clap::value_parser!(PathBuf)).help("CSV files to plot; defaults to every artifact in the run directory"))
                .arg(Arg::new("output").short('o').long("output").value_name("SVG").value_parser(clap::value_parser!(PathBuf)).action(ArgAction::Set).help("Output path when plotting a single CSV"));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd.subcommand(Command::new("pipeline").about("Run every stage in order"))
}

fn overrides(m: &ArgMatches) -> CliResult<Map<String, Value>> {
    let mut out = Map::new();
    for (key, default) in config::config_keys() {
        if let Some(raw) = m.get_one::<String>(&key) {
            out.insert(key.clone(), config::parse_flag_value(&key, raw, &default)?);
        }
    }
    Ok(out)
}

/// Resolves the run configuration from defaults, saved config, file and flags.
pub fn resolve_config(m: &ArgMatches) -> CliResult<RunConfig> {
    let flags = overrides(m)?;
    let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
    let mut base = defaults.clone();
    if let Some(path) = m.get_one::<String>("config") {
        let file = config::load_config_file(path.as_ref())?;
        base = serde_json::to_value(config::merge(&base, file.as_object().expect("object"))?).expect("json");
    } else {
        let provisional = config::merge(&base, &flags)?;
        let saved = provisional.out_dir().join(config::CONFIG_FILE);
        if saved.exists() {
            let file = config::load_config_file(&saved)?;
            let obj = file.as_object().expect("object");
            base = serde_json::to_value(config::merge(&base, obj)?).expect("json");
        }
    }
    config::merge(&base, &flags)
}

fn run_matches(m: &ArgMatches) -> CliResult<()> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    // global args land on the subcommand's matches
    let mut cfg = resolve_config(sub)?;
    if cfg.out_dir.is_none() {
        cfg.out_dir = Some(cfg.out_dir());
    }
    if let Some(w) = cfg.workers {
        plan2vec_core::exec::set_workers(w);
    }

    if name == "plot" {
        let csvs: Vec<PathBuf> = sub.get_many::<PathBuf>("csv").map(|v| v.cloned().collect()).unwrap_or_default();
        if !csvs.is_empty() {
            let output = sub.get_one::<PathBuf>("output");
            if output.is_some() && csvs.len() > 1 {
                return Err(CliError::Config("--output needs exactly one CSV".into()));
            }
            for csv in &csvs {
                let out = output.cloned().unwrap_or_else(|| csv.with_extension("svg"));
                plot::render_file(csv, &out)?;
                eprintln!("wrote {}", out.display());
            }
            return Ok(());
        }
    }

    let stages: Vec<Stage> = if name == "pipeline" {
        Stage::PIPELINE.to_vec()
    } else {
        vec![Stage::from_name(name).expect("subcommands mirror stages")]
    };
    let run = Run::new(cfg);
    run.save_config()?;
    for stage in stages {
        let t = Instant::now();
        run.run_stage(stage)?;
        eprintln!("{:<17} done in {:>7.1}s  ({})", stage.name(), t.elapsed().as_secs_f64(), run.dir.display());
    }
    Ok(())
}

/// Parses `args` and runs the requested command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_matches(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn flags_override_config_defaults() {
        let m = command().try_get_matches_from(["plan2vec", "gen-data", "--layout", "open", "--seed", "7", "--out-dir", "/tmp/x"]).unwrap();
        let (_, sub) = m.subcommand().unwrap();
        let cfg = resolve_config(sub).unwrap();
        assert_eq!(cfg.layout, plan2vec_core::maze::LayoutKind::Open);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.out_dir, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn bad_values_exit_with_two() {
        assert_eq!(run(["plan2vec", "gen-data", "--layout", "spiral", "--out-dir", "/tmp/none"]), 2);
        assert_eq!(run(["plan2vec", "no-such-stage"]), 2);
    }
}
