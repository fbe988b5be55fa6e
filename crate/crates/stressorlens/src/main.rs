use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{value_parser, Arg, ArgMatches, Command};
use stressorlens::config::{ConfigSources, PipelineConfig, KEYS};
use stressorlens::pipeline::{self, PipelineError, Stage};

fn cli() -> Command {
    let mut cmd = Command::new("stressorlens")
        .about("Discover and track psychosocial stressor topics in forum posts")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("INI configuration file"),
        )
        .arg(
            Arg::new("snapshot")
                .long("snapshot")
                .value_name("ID")
                .value_parser(value_parser!(u64))
                .global(true)
                .help("Work from this snapshot instead of the latest"),
        );
    for (key, section, default) in KEYS {
        let help = if default.is_empty() {
            format!("Override [{section}] {key}")
        } else {
            format!("Override [{section}] {key} (default {default})")
        };
        cmd = cmd.arg(Arg::new(*key).long(*key).value_name("VALUE").global(true).help(help).help_heading("Config overrides"));
    }
    cmd.subcommand(Command::new("ingest").about("Load and clean the corpus export"))
        .subcommand(Command::new("train").about("Fit the topic model on the analysis posts"))
        .subcommand(Command::new("impute-flairs").about("Train the flair classifier and label unlabelled posts"))
        .subcommand(Command::new("subset").about("Keep the mental-health-support posts"))
        .subcommand(Command::new("lexicon-label").about("Annotate posts with lexicon topics"))
        .subcommand(Command::new("trends").about("Aggregate monthly trends and correlations"))
        .subcommand(Command::new("correlate").about("Print cross-method correlations"))
        .subcommand(
            Command::new("samples")
                .about("Write review samples for one topic (--seed picks the random draw)")
                .arg(Arg::new("topic").long("topic").required(true).value_parser(value_parser!(usize))),
        )
        .subcommand(
            Command::new("export-dashboard")
                .about("Write dashboard CSVs and dashboard.json")
                .arg(Arg::new("out").long("out").value_name("DIR").value_parser(value_parser!(PathBuf))),
        )
        .subcommand(Command::new("serve").about("Serve the HTTP API"))
}

fn load_config(matches: &ArgMatches) -> Result<PipelineConfig> {
    let mut sources = match matches.get_one::<PathBuf>("config") {
        Some(path) => ConfigSources::from_file(path)?,
        None => ConfigSources::default(),
    };
    let flags: BTreeMap<String, String> = KEYS
        .iter()
        .filter_map(|(key, _, _)| matches.get_one::<String>(key).map(|v| (key.to_string(), v.clone())))
        .collect();
    sources = sources.with_env(std::env::vars()).with_flags(flags);
    Ok(sources.resolve()?)
}

fn run(matches: &ArgMatches) -> Result<()> {
    let cfg = load_config(matches)?;
    let snapshot = matches.get_one::<u64>("snapshot").copied();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let stage = match name {
        "ingest" => Some(Stage::Ingest),
        "train" => Some(Stage::Train),
        "impute-flairs" => Some(Stage::ImputeFlairs),
        "subset" => Some(Stage::Subset),
        "lexicon-label" => Some(Stage::LexiconLabel),
        "trends" => Some(Stage::Trends),
        _ => None,
    };
    if let Some(stage) = stage {
        println!("{}", pipeline::run_stage(&cfg, stage, snapshot)?);
        return Ok(());
    }
    match name {
        "correlate" => println!("{}", pipeline::correlate(&cfg, snapshot)?.0),
        "samples" => {
            let topic = *sub.get_one::<usize>("topic").expect("required");
            println!("{}", pipeline::samples(&cfg, snapshot, topic, None)?.0);
        }
        "export-dashboard" => {
            let out = sub.get_one::<PathBuf>("out");
            println!("{}", pipeline::export(&cfg, snapshot, out.map(PathBuf::as_path))?);
        }
        "serve" => {
            let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
            runtime.block_on(stressorlens::api::serve(cfg))?;
        }
        other => unreachable!("unhandled subcommand {other}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let code = err.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
