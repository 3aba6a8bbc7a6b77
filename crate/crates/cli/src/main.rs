use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dtm_qkd::detect::read_records_csv;
use dtm_qkd::export::{compare_dirs, run_summary, run_to_dir, write_report};
use dtm_qkd::pipeline::RunOptions;
use dtm_qkd::scenario::{Scenario, PRESETS};
use dtm_qkd::timebase::{histogram, ClockConfig, Picos};
use dtm_qkd::Error;

/// Simulate star-shaped time-bin QKD networks with detector time multiplexing.
#[derive(Parser)]
#[command(name = "dtm-qkd", version)]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file or bundled preset and write all outputs.
    Run {
        /// Scenario TOML file or preset name.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Override the key-exchange duration in seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Also write every detection record.
        #[arg(long)]
        records: bool,
    },
    /// Penalty decomposition of run B relative to reference run A.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Write penalty_report.{json,txt} here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Folded arrival-time histogram of a records CSV, printed as CSV.
    Histogram {
        records: PathBuf,
        #[arg(long, default_value_t = 10)]
        bin_width: Picos,
        #[arg(long, default_value_t = ClockConfig::default().repetition_period_ps)]
        period: Picos,
        /// Only use this detector.
        #[arg(long)]
        detector: Option<u32>,
    },
    /// List bundled presets, or print one.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run {
            scenario,
            seed,
            out,
            duration,
            records,
        } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(d) = duration {
                s.duration_s = d;
            }
            let opts = RunOptions {
                seed,
                keep_records: records,
                counterfactuals: true,
            };
            let base_dir = Path::new(&scenario).parent().filter(|_| Path::new(&scenario).is_file());
            let output = run_to_dir(&s, &opts, &out, base_dir)?;
            print!("{}", run_summary(&output.result));
            if let Some(r) = &output.report {
                println!("\ncompared with baseline `{}`:", output.baseline.as_ref().map_or("", |b| &b.scenario.name));
                print!("{}", r.summary());
            }
            println!("{} files written to {}", output.manifest.files.len() + 1, out.display());
        }
        Command::Compare { a, b, out } => {
            let report = compare_dirs(&a, &b)?;
            print!("{}", report.summary());
            if let Some(dir) = out {
                write_report(&report, &dir)?;
            }
        }
        Command::Histogram {
            records,
            bin_width,
            period,
            detector,
        } => {
            let file = File::open(&records).map_err(|e| Error::Io {
                path: records.display().to_string(),
                source: e,
            })?;
            let recs = read_records_csv(BufReader::new(file))?;
            let times: Vec<Picos> = recs
                .iter()
                .filter(|r| detector.is_none_or(|d| r.detector == d))
                .map(|r| r.timestamp)
                .collect();
            let clock = ClockConfig {
                repetition_period_ps: period,
                ..ClockConfig::default()
            };
            let h = histogram(&times, &clock, bin_width)?;
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            h.write_csv(&mut lock).map_err(|e| Error::Io {
                path: "stdout".into(),
                source: e,
            })?;
            for p in h.peaks() {
                eprintln!("peak at {:8.1} ps, area {:.0}", p.center_ps, p.area);
            }
            lock.flush().ok();
        }
        Command::Presets { name } => match name {
            None => {
                for (n, _) in PRESETS {
                    println!("{n}");
                }
            }
            Some(n) => print!("{}", Scenario::preset(&n)?.to_toml()),
        },
    }
    Ok(())
}
