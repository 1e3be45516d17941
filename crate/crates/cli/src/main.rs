//! `statelink` command-line interface.
//!
//! Exit codes: 0 success, 1 user or configuration error, 2 backend failure,
//! 3 internal error.

mod config;
mod pipeline;

use std::io::{self, IsTerminal};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use statelink::llm_backend::BackendError;

use config::{RunConfig, KEYS};
use pipeline::Run;

const SUBCOMMANDS: &[(&str, &str)] = &[
    ("extract", "Track dialogue states of a corpus with a completion backend"),
    ("evaluate", "Score predictions against gold states (JGA, slot F1, slot accuracy)"),
    ("graph", "Build the domain / slot-value graph from predicted or gold states"),
    ("train", "Train the VGAE on a graph and report link-prediction scores"),
    ("predict", "Rank next dialogue-state candidates for every dialogue"),
    ("repl", "Track states interactively, one user utterance per line"),
];

fn cli() -> Command {
    let mut cmd = Command::new("statelink")
        .version(pipeline::VERSION)
        .about("Ontology-free dialogue state tracking and next-state prediction")
        .subcommand_required(true)
        .arg(
            Arg::new("config")
                .long("config")
                .short('c')
                .global(true)
                .value_name("FILE")
                .value_parser(value_parser!(PathBuf))
                .help("key = value configuration file; flags override it"),
        )
        .arg(
            Arg::new("jobs")
                .long("jobs")
                .short('j')
                .global(true)
                .value_name("N")
                .value_parser(value_parser!(usize))
                .help("dialogues extracted concurrently (output order is unaffected)"),
        )
        .arg(
            Arg::new("verbose")
                .long("verbose")
                .short('v')
                .global(true)
                .action(ArgAction::Count)
                .help("more log output (repeat for debug)"),
        );
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about);
        for (key, help) in KEYS {
            sub = sub.arg(
                Arg::new(*key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .help(*help),
            );
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn resolve(sub: &ArgMatches, global: &ArgMatches) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let file = sub
        .get_one::<PathBuf>("config")
        .or_else(|| global.get_one::<PathBuf>("config"));
    if let Some(path) = file {
        cfg.apply_file(path)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = sub.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn run(matches: &ArgMatches) -> anyhow::Result<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let command = SUBCOMMANDS
        .iter()
        .map(|(n, _)| *n)
        .find(|n| *n == name)
        .expect("known subcommand");
    let jobs = sub
        .get_one::<usize>("jobs")
        .or_else(|| matches.get_one::<usize>("jobs"))
        .copied()
        .unwrap_or(1);
    let run = Run { cfg: resolve(sub, matches)?, command, jobs };
    match command {
        "extract" => pipeline::extract(&run),
        "evaluate" => pipeline::evaluate(&run).map(drop),
        "graph" => pipeline::graph(&run).map(drop),
        "train" => pipeline::train_cmd(&run).map(drop),
        "predict" => pipeline::predict(&run).map(drop),
        "repl" => {
            if io::stdin().is_terminal() {
                eprintln!("statelink repl: one user utterance per line; :reset clears the state, :quit exits");
            }
            pipeline::repl(&run, io::stdin().lock(), io::stdout().lock())
        }
        _ => unreachable!(),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let upstream = err
        .chain()
        .any(|e| e.downcast_ref::<BackendError>().is_some_and(BackendError::is_upstream));
    if upstream {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(&matches))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => {
            eprintln!("internal error (this is a bug)");
            ExitCode::from(3)
        }
    }
}
