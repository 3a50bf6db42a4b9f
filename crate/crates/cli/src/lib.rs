//! Command-line front end for flowdistill.

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::{Arg, ArgMatches, Command};

use commands::Failure;
use config::{flag_name, RawConfig, RunConfig, KEYS};

const COMMANDS: &[(&str, &str)] = &[
    (
        "generate",
        "write a synthetic dataset (flows.csv, meta.txt)",
    ),
    (
        "train",
        "train a student and write checkpoints and the epoch log",
    ),
    (
        "evaluate",
        "score a checkpoint: overall, per-step, volume buckets, roughness",
    ),
    (
        "predict",
        "write predictions as a teacher-format file plus CSV",
    ),
    ("sweep", "train over several training ratios and seeds"),
    (
        "ablate",
        "train the full model and each single-term ablation",
    ),
    (
        "export-prompts",
        "write instruction prompts for a language-model teacher",
    ),
    ("bench", "measure inference latency scaling"),
];

fn cli() -> Command {
    let mut args: Vec<Arg> = KEYS
        .iter()
        .map(|k| {
            Arg::new(k.key)
                .long(flag_name(k.key))
                .value_name("VALUE")
                .help(k.help)
        })
        .collect();
    args.push(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("flat `key = value` config file"),
    );
    Command::new("flowdistill")
        .about("Teacher-bounded distillation of traffic-flow forecasts into a small MLP")
        .subcommand_required(true)
        .subcommands(
            COMMANDS
                .iter()
                .map(|(name, about)| Command::new(*name).about(*about).args(args.clone())),
        )
}

fn run_config(sub: &ArgMatches) -> Result<RunConfig, Failure> {
    let file = match sub.get_one::<String>("config") {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config file {p}: {e}")))?,
        ),
        None => None,
    };
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter_map(|k| {
            sub.get_one::<String>(k.key)
                .map(|v| (k.key.to_string(), v.clone()))
        })
        .collect();
    let raw = RawConfig::merge(file.as_deref(), &flags)?;
    Ok(RunConfig::from_raw(raw)?)
}

fn dispatch(command: &str, cfg: &RunConfig) -> Result<(), Failure> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Failure::Runtime {
        stage: "create output directory",
        source: e.into(),
    })?;
    std::fs::write(
        cfg.out.join("effective_config.txt"),
        cfg.raw.render(command),
    )
    .map_err(|e| Failure::Runtime {
        stage: "write output",
        source: e.into(),
    })?;
    match command {
        "generate" => commands::generate(cfg),
        "train" => commands::train_cmd(cfg),
        "evaluate" => commands::evaluate(cfg),
        "predict" => commands::predict(cfg),
        "sweep" => commands::sweep(cfg),
        "ablate" => commands::ablate(cfg),
        "export-prompts" => commands::export_prompts(cfg),
        "bench" => commands::bench(cfg),
        other => Err(Failure::Usage(format!("unknown command `{other}`"))),
    }
}

/// Parse `argv` (including the program name), run the command and return
/// the exit status: 0 success, 1 runtime failure, 2 usage error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match cli().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (command, sub) = matches.subcommand().expect("subcommand is required");
    let result = run_config(sub).and_then(|cfg| dispatch(command, &cfg));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Runtime { stage, source }) => {
            eprintln!("error during {stage}: {source:#}");
            1
        }
    }
}
