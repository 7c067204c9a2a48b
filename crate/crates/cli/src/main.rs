use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "nkit", version, about = "Neumann-function and small-anomaly experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON configuration.
    Run {
        config: PathBuf,
        /// Write outputs here instead of the configured directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the experiment presets.
    Presets,
    /// Print the assembled matrix of a configuration as `row col re im` lines.
    DumpMatrix {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Presets => {
            for name in nkit::preset_names() {
                println!("{name}");
            }
            0
        }
        Command::Run { config, out } => match nkit::run(&config, out.as_deref()) {
            Ok(summary) => {
                for v in &summary.verdicts {
                    let tag = if v.pass { "PASS" } else { "FAIL" };
                    let kind = if v.gated { "" } else { " (diagnostic)" };
                    println!("{tag} {}{kind}", v.name);
                }
                println!("outputs in {}", summary.output_dir.display());
                summary.exit_code()
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Command::DumpMatrix { config, out } => {
            let result = match out {
                Some(path) => std::fs::File::create(&path)
                    .map_err(nkit::CliError::from)
                    .and_then(|f| nkit::dump_matrix(&config, std::io::BufWriter::new(f))),
                None => nkit::dump_matrix(&config, std::io::stdout().lock()),
            };
            match result {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("error: {e}");
                    e.exit_code()
                }
            }
        }
    };
    ExitCode::from(code as u8)
}
