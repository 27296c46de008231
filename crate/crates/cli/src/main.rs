use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swkey::config::{ExperimentConfig, Mode};
use swkey::report::RunReport;
use swkey::runner::{self, EXIT_FAILURE, EXIT_OK};
use swkey::{CodeSpec, Error};

/// Secret and private keys from correlated binary sources.
#[derive(Parser, Debug)]
#[command(name = "swkey", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write its report.
    Run(RunArgs),
    /// Print the key capacity of a model, and the rate a code achieves.
    Capacity(CapacityArgs),
    /// Print rate, exact decoding error and capacity gaps of a code on a BSC.
    CodeInfo(CodeInfoArgs),
    /// Run the acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides n_trials.
    #[arg(long)]
    trials: Option<u64>,
    /// Overrides mode: exact, empirical or both.
    #[arg(long)]
    mode: Option<Mode>,
    /// Report path; defaults to output_path from the config, else stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Also append a tab-separated summary row to this file.
    #[arg(long)]
    tsv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CapacityArgs {
    /// Read model parameters from a config file.
    #[arg(long, conflicts_with_all = ["model", "p", "q", "links"])]
    config: Option<PathBuf>,
    /// model1, model2, model3 or model4.
    #[arg(long, required_unless_present = "config")]
    model: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    /// Model 3 link crossover probabilities, comma separated.
    #[arg(long)]
    links: Option<String>,
    /// Code whose key rate to compare against capacity.
    #[arg(long)]
    code: Option<CodeSpec>,
}

#[derive(Args, Debug)]
struct CodeInfoArgs {
    #[arg(long)]
    code: CodeSpec,
    /// BSC crossover probability in (0, 1/2).
    #[arg(long)]
    p: f64,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn write_output(path: Option<&Path>, text: &str) -> swkey::Result<()> {
    match path {
        Some(path) => std::fs::write(path, text).map_err(Error::Io),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn append_tsv(path: &Path, report: &RunReport) -> swkey::Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{}", RunReport::tsv_header())?;
    }
    writeln!(file, "{}", report.tsv_row())?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> swkey::Result<i32> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        config.n_trials = trials;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    if let Some(out) = args.out {
        config.output_path = Some(out);
    }
    config.validate()?;
    let report = runner::run_experiment(&config, args.workers)?;
    write_output(config.output_path.as_deref(), &report.render())?;
    if let Some(tsv) = &args.tsv {
        append_tsv(tsv, &report)?;
    }
    if !report.passed() {
        let failed: Vec<&str> = report
            .criteria
            .checks
            .iter()
            .filter(|c| c.status == swkey::analysis::CheckStatus::Fail)
            .map(|c| c.name.as_str())
            .collect();
        eprintln!("warning: checks failed: {}", failed.join(", "));
    }
    Ok(EXIT_OK)
}

fn capacity_config(args: &CapacityArgs) -> swkey::Result<ExperimentConfig> {
    if let Some(path) = &args.config {
        let mut config = ExperimentConfig::load(path)?;
        if let Some(code) = &args.code {
            config.code = code.clone();
        }
        return Ok(config);
    }
    let mut text = format!("model = {}\n", args.model.as_deref().unwrap_or_default());
    for (key, value) in [("p", args.p), ("q", args.q)] {
        if let Some(v) = value {
            text.push_str(&format!("{key} = {v}\n"));
        }
    }
    if let Some(links) = &args.links {
        text.push_str(&format!("link_probs = {links}\n"));
    }
    // the code only matters when a rate is requested
    let code = args.code.clone().unwrap_or(CodeSpec::Hamming(3));
    text.push_str(&format!("code = {code}\n"));
    ExperimentConfig::parse(&text)
}

fn cmd_capacity(args: CapacityArgs) -> swkey::Result<i32> {
    let config = capacity_config(&args)?;
    let with_code = args.code.is_some() || args.config.is_some();
    print!("{}", runner::capacity_row(&config, with_code)?.render());
    Ok(EXIT_OK)
}

fn cmd_code_info(args: CodeInfoArgs) -> swkey::Result<i32> {
    print!("{}", runner::code_info(&args.code, args.p)?.render());
    Ok(EXIT_OK)
}

fn cmd_verify(args: VerifyArgs) -> swkey::Result<i32> {
    let results = runner::run_acceptance(args.workers)?;
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Capacity(args) => cmd_capacity(args),
        Command::CodeInfo(args) => cmd_code_info(args),
        Command::Verify(args) => cmd_verify(args),
    };
    let code = result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        runner::exit_code(&e)
    });
    ExitCode::from(code as u8)
}
