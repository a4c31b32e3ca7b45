//! `netprice`: condition checking, equilibrium solving, price optimization,
//! influence reports, learning runs, and full experiment sweeps for
//! consumer-network markets.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure.

mod commands;
mod config;
mod output;

use commands::{CommonArgs, Format};

const USAGE: &str = "\
usage: netprice <command> --config <path> [options]

commands:
  conditions    check the contraction and variational uniqueness conditions
  equilibrium   solve the consumer equilibrium at configured prices
  price         optimize discriminatory prices (consumption-space search)
  iiv           intrinsic influential values and influencer price bounds
  learn         run the explore-then-commit pricing algorithm
  experiment    full sweep: horizons x repetitions x market cells

options:
  --config <path>   JSON configuration file (required)
  --seed <n>        override the base seed
  --out <dir>       write result files into this directory
  --format <f>      json (default) or csv for tabular outputs
  --seeds <k>       repetitions per horizon (learn/experiment)
";

fn parse_args(argv: &[String]) -> Result<(String, CommonArgs), String> {
    if argv.is_empty() {
        return Err("missing command".into());
    }
    let command = argv[0].clone();
    let mut config = None;
    let mut seed = None;
    let mut out = None;
    let mut format = Format::Json;
    let mut seeds = None;
    let mut it = argv[1..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| format!("flag {name} needs a value"))
        };
        match flag.as_str() {
            "--config" => config = Some(value("--config")?),
            "--seed" => {
                seed = Some(
                    value("--seed")?
                        .parse::<u64>()
                        .map_err(|e| format!("--seed: {e}"))?,
                )
            }
            "--out" => out = Some(value("--out")?),
            "--format" => {
                format = match value("--format")?.as_str() {
                    "json" => Format::Json,
                    "csv" => Format::Csv,
                    other => return Err(format!("unknown format {other}")),
                }
            }
            "--seeds" => {
                seeds = Some(
                    value("--seeds")?
                        .parse::<usize>()
                        .map_err(|e| format!("--seeds: {e}"))?,
                )
            }
            other => return Err(format!("unknown flag {other}")),
        }
    }
    let config = config.ok_or_else(|| "missing --config".to_string())?;
    Ok((
        command,
        CommonArgs {
            config,
            seed,
            out,
            format,
            seeds,
        },
    ))
}

fn main() {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if argv.iter().any(|a| a == "--help" || a == "-h") || argv.is_empty() {
        print!("{USAGE}");
        std::process::exit(if argv.is_empty() { 2 } else { 0 });
    }
    let (command, args) = match parse_args(&argv) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            eprint!("{USAGE}");
            std::process::exit(2);
        }
    };
    let code = match command.as_str() {
        "conditions" => commands::cmd_conditions(&args),
        "equilibrium" => commands::cmd_equilibrium(&args),
        "price" => commands::cmd_price(&args),
        "iiv" => commands::cmd_iiv(&args),
        "learn" => commands::cmd_learn(&args),
        "experiment" => commands::cmd_experiment(&args),
        other => {
            eprintln!("unknown command {other}");
            eprint!("{USAGE}");
            2
        }
    };
    std::process::exit(code);
}
