use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use a2g::config::{canonical_text, resolve};
use a2g::error::Error;
use a2g::orchestrator::{run_experiment, sweep, Experiment, SweepAxis};
use a2g::report::{config_digest, emit_results, run_id, RunFailure, RunOutput};
use a2g::selftest;

/// Federated-learning simulator with dual-gain (QoS + geometry) aggregation
/// over noisy teleportation links.
#[derive(Parser)]
#[command(name = "a2g", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Key-value config file (see docs/book for the schema).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for config.resolved and result files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path config overrides, e.g. --set aggregation.beta=0.05.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one federated experiment.
    Run(CommonArgs),
    /// Run one experiment per axis value (beta, noise, or partition).
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Swept knob: beta | noise | partition.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. 0.05,0.1,0.3,0.5,0.7,1.0.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Partition the configured dataset and report per-client shard stats.
    PartitionReport(CommonArgs),
    /// Run the fast invariant suite; exit 0 iff every group passes.
    Selftest,
}

fn write_resolved(out_dir: &PathBuf, text: &str) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.resolved"), text)?;
    Ok(())
}

fn cmd_run(args: &CommonArgs) -> Result<(), Error> {
    let cfg = resolve(args.config.as_deref(), &args.set, args.seed)?;
    let text = canonical_text(&cfg);
    write_resolved(&args.out, &text)?;
    let summary = run_experiment(&cfg)?;
    let output = RunOutput {
        run_id: run_id(&text, cfg.master_seed),
        axis_value: "-".into(),
        config_digest: config_digest(&text),
        summary,
    };
    println!(
        "run {}: best={:.4} final={:.4} mean_last5={:.4} ({} rounds)",
        output.run_id,
        output.summary.best_accuracy,
        output.summary.final_accuracy,
        output.summary.mean_accuracy_last5,
        output.summary.records.len(),
    );
    emit_results(std::slice::from_ref(&output), &[], &args.out)?;
    println!("results written to {}", args.out.display());
    Ok(())
}

fn cmd_sweep(common: &CommonArgs, axis: &str, values: &[String]) -> Result<(), Error> {
    let axis = SweepAxis::from_name(axis)?;
    if values.is_empty() {
        return Err(Error::Config {
            path: "sweep.values".into(),
            reason: "at least one value required".into(),
        });
    }
    let base = resolve(common.config.as_deref(), &common.set, common.seed)?;
    write_resolved(&common.out, &canonical_text(&base))?;
    let runs = sweep(&base, axis, values)?;
    let mut outputs = Vec::new();
    let mut failures = Vec::new();
    for run in &runs {
        match &run.result {
            Ok(summary) => {
                let text = canonical_text(&run.cfg);
                outputs.push(RunOutput {
                    run_id: run_id(&text, run.cfg.master_seed),
                    axis_value: run.value.clone(),
                    config_digest: config_digest(&text),
                    summary: summary.clone(),
                });
                println!(
                    "{}={}: best={:.4} final={:.4}",
                    axis.name(),
                    run.value,
                    summary.best_accuracy,
                    summary.final_accuracy,
                );
            }
            Err(e) => {
                eprintln!("{}={}: FAILED: {e}", axis.name(), run.value);
                failures.push(RunFailure {
                    axis_value: run.value.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    emit_results(&outputs, &failures, &common.out)?;
    println!("results written to {}", common.out.display());
    if !failures.is_empty() {
        return Err(Error::Runtime(format!(
            "{} of {} sweep runs failed",
            failures.len(),
            runs.len()
        )));
    }
    Ok(())
}

fn cmd_partition_report(args: &CommonArgs) -> Result<(), Error> {
    let cfg = resolve(args.config.as_deref(), &args.set, args.seed)?;
    write_resolved(&args.out, &canonical_text(&cfg))?;
    let experiment = Experiment::new(&cfg)?;
    let mut csv = String::from("client,shard_size,label_0,label_1\n");
    println!("client  size  label0  label1");
    for (i, shard) in experiment.shards().iter().enumerate() {
        let (n0, n1) = shard.label_counts();
        println!("{i:>6}  {:>4}  {n0:>6}  {n1:>6}", shard.len());
        csv.push_str(&format!("{i},{},{n0},{n1}\n", shard.len()));
    }
    std::fs::write(args.out.join("partition.csv"), csv)?;
    println!("partition table written to {}", args.out.display());
    Ok(())
}

fn cmd_selftest() -> ExitCode {
    let results = selftest::run(None);
    for result in &results {
        match &result.error {
            None => println!("PASS {}", result.group),
            Some(msg) => println!("FAIL {}: {msg}", result.group),
        }
    }
    if selftest::all_passed(&results) {
        println!("selftest: all groups passed");
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep {
            common,
            axis,
            values,
        } => cmd_sweep(common, axis, values),
        Command::PartitionReport(args) => cmd_partition_report(args),
        Command::Selftest => return cmd_selftest(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
