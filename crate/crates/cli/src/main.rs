use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use posmod_cli::args::{Cli, Command, Common};
use posmod_cli::commands::{fibre_scan_cmd, member, optimize_cmd, verify_cmd, CliError, Exit};
use posmod_cli::ProblemFile;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<ProblemFile, CliError> {
    ProblemFile::parse(&read(path)?).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))
}

/// Writes next to the destination and renames, so readers never see a partial file.
fn write_atomic(path: &Path, text: &str) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)
}

fn emit(common: &Common, text: &str) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError {
        exit: Exit::Usage,
        message: format!("writing output: {e}"),
    };
    match &common.output {
        Some(p) => write_atomic(p, text).map_err(io),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(io)
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("POSMOD_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::usage(format!("POSMOD_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::usage(format!("POSMOD_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<Exit, CliError> {
    configure_threads()?;
    let (outcome, common) = match &cli.command {
        Command::Member(a) => (member(&load(&a.file)?, a)?, &a.common),
        Command::FibreScan(a) => (fibre_scan_cmd(&load(&a.file)?, a)?, &a.common),
        Command::Optimize(a) => (optimize_cmd(&load(&a.file)?, a)?, &a.common),
        Command::Verify(a) => {
            let cert = read(&a.certificate)?;
            (verify_cmd(&load(&a.file)?, &cert, a)?, &a.common)
        }
    };
    emit(common, &outcome.output)?;
    Ok(outcome.exit)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(Exit::Usage.code()),
            };
        }
    };
    match run(cli) {
        Ok(exit) => ExitCode::from(exit.code()),
        Err(e) => {
            eprintln!("posmod: {}", e.message);
            ExitCode::from(e.exit.code())
        }
    }
}
