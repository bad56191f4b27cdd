use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use hbf_core::export::{export_results, ExportFormat};
use hbf_core::link_budget::{format_report_text, write_report_csv};
use hbf_core::scenario::{
    default_config_json, load_config, run, run_budget_bench, RunOptions, ScenarioKind,
};
use hbf_core::{Error, ErrorCategory};

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_RUNTIME: u8 = 4;
const EXIT_IO: u8 = 5;

/// Hybrid-beamforming massive MIMO link-level simulator.
#[derive(Parser, Debug)]
#[command(name = "sim", version)]
struct Cli {
    /// Print the default scenario config as JSON and exit.
    #[arg(long)]
    print_default_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        /// Also write the BS baseband samples of the first uplink slot.
        #[arg(long)]
        dump_iq: bool,
        /// Also write the full 64-antenna channel matrix.
        #[arg(long)]
        dump_channel: bool,
    },
    /// Print the link-budget table for the config's bench distances.
    Budget {
        #[arg(long)]
        config: PathBuf,
        /// Also write the table as CSV to this file.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the default scenario config as JSON.
    PrintDefaultConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => EXIT_CONFIG,
        ErrorCategory::Runtime => EXIT_RUNTIME,
        ErrorCategory::Io => EXIT_IO,
    }
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::PrintDefaultConfig => {
            // A closed pipe (`sim print-default-config | head`) is not an error.
            let _ = writeln!(std::io::stdout().lock(), "{}", default_config_json());
        }
        Command::Run {
            config,
            seed,
            out,
            format,
            dump_iq,
            dump_channel,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out_dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let output = run(
                &cfg,
                RunOptions {
                    capture_iq: dump_iq,
                    capture_channel: dump_channel,
                },
            )?;
            let format = match format {
                Format::Csv => ExportFormat::Csv,
                Format::Json => ExportFormat::Json,
            };
            let files = export_results(&output, format, &out_dir)?;
            let r = &output.result;
            println!("config {} seed {} ({:?})", r.config_hash, r.seed, r.kind);
            for m in &r.ue_metrics {
                println!(
                    "ue {} {}: EVM {:.3}% SER {:.3e} over {} symbols",
                    m.ue, m.modulation, m.evm_percent, m.ser, m.symbols
                );
            }
            if let Some(sel) = &r.selected_beams {
                let beams: Vec<String> =
                    sel.indices().iter().map(|b| b.get().to_string()).collect();
                println!("beams {}", beams.join(" "));
            }
            if !r.budget.is_empty() {
                print!("{}", format_report_text(&r.budget));
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Budget { config, csv } => {
            let mut cfg = load_config(&config)?;
            cfg.kind = ScenarioKind::BudgetBench;
            let output = run_budget_bench(&cfg)?;
            print!("{}", format_report_text(&output.result.budget));
            if let Some(path) = csv {
                let mut buf = Vec::new();
                write_report_csv(&output.result.budget, &mut buf).expect("writing to memory");
                std::fs::write(&path, buf).map_err(|source| Error::Io { path, source })?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let command = match (cli.print_default_config, cli.command) {
        (true, None) => Command::PrintDefaultConfig,
        (false, Some(c)) => c,
        (true, Some(_)) => {
            eprintln!("error: --print-default-config cannot be combined with a subcommand");
            return ExitCode::from(EXIT_USAGE);
        }
        (false, None) => {
            eprintln!("error: a subcommand is required (try --help)");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match execute(command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
