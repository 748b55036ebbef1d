use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use plapvisc::gallery;
use plapvisc_cli::{config, run_command, Cli, Cmd, GalleryCmd};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(cmd) = cli.command.command() else {
        let Cmd::Gallery { action: GalleryCmd::List } = cli.command else {
            unreachable!()
        };
        let mut out = std::io::stdout().lock();
        for e in gallery::entries() {
            if writeln!(out, "{}", e.list_line()).is_err() {
                break;
            }
        }
        return ExitCode::SUCCESS;
    };
    let singular = matches!(cmd, plapvisc_cli::run::Command::Singular);
    let cfg = match config::load(cli.global.config.as_deref(), &cli.global.overrides(), singular) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_command(cmd, &cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
