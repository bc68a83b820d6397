use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fourth_nls::io::{exit_code_for, parse_config, run};

/// Run one configured computation and write its outputs and manifest.
#[derive(Parser, Debug)]
#[command(name = "fourth-nls", version, about)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweep jobs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = parse_config(&cli.config).and_then(|cfg| run(&cfg, cli.out.as_deref(), cli.threads));
    match outcome {
        Ok(o) => {
            println!("{} -> {} (exit {})", o.manifest.command.name(), o.dir.display(), o.exit_code);
            for f in &o.manifest.flags {
                println!("flag: {f}");
            }
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
