mod args;
mod commands;
mod manifest;
mod render;

use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use args::{Cli, Command, Format};
use manifest::{digest_file, RunManifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(obskit::Error),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Lib(obskit::Error::Parse { .. }) => "parse",
            CliError::Lib(obskit::Error::Io(_)) => "io",
            CliError::Lib(obskit::Error::Csv(_)) => "csv",
            CliError::Lib(obskit::Error::Invalid(_)) => "invalid",
            CliError::Lib(obskit::Error::Degenerate(_)) => "degenerate",
            CliError::Lib(obskit::Error::Separation(_)) => "separation",
            CliError::Lib(obskit::Error::Numeric(_)) => "numeric",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<obskit::Error> for CliError {
    fn from(e: obskit::Error) -> Self {
        CliError::Lib(e)
    }
}

fn command_name(cmd: &Command) -> String {
    use args::*;
    match cmd {
        Command::Match(_) => "match".into(),
        Command::Balance(_) => "balance".into(),
        Command::Sens { test } => match test {
            SensCommand::Wilcoxon { .. } => "sens wilcoxon".into(),
            SensCommand::Mcnemar { .. } => "sens mcnemar".into(),
        },
        Command::Amplify(_) => "amplify".into(),
        Command::DesignSens(_) => "design-sens".into(),
        Command::Power(_) => "power".into(),
        Command::Combine { method } => match method {
            CombineCommand::Truncated { .. } => "combine truncated".into(),
            CombineCommand::Bonferroni { .. } => "combine bonferroni".into(),
            CombineCommand::Holm { .. } => "combine holm".into(),
            CombineCommand::Bh { .. } => "combine bh".into(),
        },
        Command::OrderTest(_) => "order-test".into(),
        Command::SplitSelect { target } => match target {
            SplitCommand::Outcome { .. } => "split-select outcome".into(),
            SplitCommand::Subgroups { .. } => "split-select subgroups".into(),
        },
        Command::TreeSubgroups(_) => "tree-subgroups".into(),
        Command::Simulate(a) => format!("simulate {}", a.scenario),
    }
}

fn report_error(e: &CliError) -> ExitCode {
    let code = e.exit_code();
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "error: {e}");
    let body = json!({"error": {"kind": e.kind(), "message": e.to_string(), "exit_code": code}});
    let _ = writeln!(err, "{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return report_error(&CliError::Usage(e.kind().to_string()));
        }
    };

    if let Some(n) = cli.global.threads {
        if n == 0 {
            return report_error(&CliError::Usage("--threads must be positive".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report_error(&CliError::Usage(format!("thread pool: {e}")));
        }
    }

    let ctx = commands::Ctx {
        out: cli.global.out.clone(),
        seed: cli.global.seed.unwrap_or(commands::DEFAULT_SEED),
    };
    let inputs = commands::input_paths(&cli.command)
        .iter()
        .filter_map(|p| digest_file(p).ok())
        .collect();
    let manifest = RunManifest::new(&command_name(&cli.command), argv, inputs, Some(ctx.seed));

    let result = commands::run(&cli.command, &ctx);

    let manifest_json = serde_json::to_string_pretty(&manifest).unwrap_or_default();
    match &ctx.out {
        Some(dir) => {
            let written = std::fs::create_dir_all(dir)
                .and_then(|_| std::fs::write(dir.join("manifest.json"), manifest_json + "\n"));
            if let Err(e) = written {
                return report_error(&CliError::io(dir, e));
            }
        }
        None => {
            let line = serde_json::to_string(&json!({ "manifest": manifest })).unwrap_or_default();
            eprintln!("{line}");
        }
    }

    match result {
        Ok(report) => {
            let body = match cli.global.format {
                Format::Json => serde_json::to_string_pretty(&report.value).unwrap_or_default() + "\n",
                Format::Text => report.text.unwrap_or_else(|| render::text_lines(&report.value)),
            };
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(body.as_bytes());
            let _ = out.flush();
            ExitCode::SUCCESS
        }
        Err(e) => report_error(&e),
    }
}
