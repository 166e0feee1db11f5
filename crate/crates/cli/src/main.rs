mod commands;
mod config;

use std::process::ExitCode;

use clap::{Arg, ArgMatches, Command};
use deepdtf::{Error, Result};

use config::{keys, parse_file, RunConfig};

fn cli() -> Command {
    let mut cmd = Command::new("deepdtf")
        .about("Drug response prediction from multi-omics profiles and drug structure")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .global(true)
                .value_name("FILE")
                .help("key = value config file; flags override it"),
        )
        .subcommand(Command::new("prepare").about("Ingest the manifest inputs into a dataset"))
        .subcommand(Command::new("split").about("Assign cell lines to cold-start folds"))
        .subcommand(Command::new("train").about("Train one model per fold"))
        .subcommand(Command::new("eval").about("Score trained checkpoints"))
        .subcommand(Command::new("explain").about("Shapley attributions and gene set enrichment"))
        .subcommand(
            Command::new("parse-smiles")
                .about("Print the molecular graph of a SMILES string as JSON")
                .arg(Arg::new("smiles").required(true).value_name("SMILES")),
        );
    for k in keys() {
        cmd = cmd.arg(
            Arg::new(k.name)
                .long(k.name)
                .global(true)
                .value_name("VALUE")
                .help(format!("{} [default: {}]", k.help, if k.default.is_empty() { "unset" } else { &k.default })),
        );
    }
    cmd
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_)
        | Error::Smiles(_)
        | Error::Dimension(_)
        | Error::Contract(_)
        | Error::UndefinedMetric(_)
        | Error::Capacity(_) => 3,
        Error::Numeric(_) => 4,
        Error::Prerequisite(_) | Error::Io { .. } | Error::Serialization(_) => 5,
    }
}

fn resolve(m: &ArgMatches) -> Result<RunConfig> {
    let file = match m.get_one::<String>("config") {
        Some(p) => parse_file(p.as_ref())?,
        None => Vec::new(),
    };
    let flags: Vec<(String, String)> = keys()
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(&file, &flags)
}

fn run(m: &ArgMatches) -> Result<String> {
    let (name, sub) = m.subcommand().expect("subcommand required");
    if name == "parse-smiles" {
        return commands::cmd_parse_smiles(sub.get_one::<String>("smiles").expect("required"));
    }
    let cfg = resolve(sub)?;
    let workers = cfg.workers()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| match name {
        "prepare" => commands::cmd_prepare(&cfg),
        "split" => commands::cmd_split(&cfg),
        "train" => commands::cmd_train(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        "explain" => commands::cmd_explain(&cfg),
        _ => unreachable!("clap rejects unknown subcommands"),
    })
}

fn main() -> ExitCode {
    let m = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&m) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("deepdtf: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
