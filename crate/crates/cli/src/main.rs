//! `headsplat` command-line tool.
//!
//! Exit codes: 0 success, 2 input or validation error, 1 runtime error. Errors
//! are reported on stderr as one JSON object.

mod args;
mod commands;
mod config;
mod frames;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::Parser;
use serde_json::json;

use args::Cli;

/// Error classified as caller input, optionally naming the offending flag.
#[derive(Debug)]
pub struct Usage {
    pub message: String,
    pub flag: Option<String>,
}

impl Usage {
    pub fn new(message: impl Into<String>) -> Self {
        Usage {
            message: message.into(),
            flag: None,
        }
    }

    pub fn flag(flag: &str, message: impl Into<String>) -> Self {
        Usage {
            message: message.into(),
            flag: Some(flag.to_string()),
        }
    }
}

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Usage {}

fn report(code: u8, kind: &str, message: &str, flag: Option<&str>) -> ExitCode {
    let mut err = json!({ "code": code, "kind": kind, "message": message });
    if let Some(f) = flag {
        err["flag"] = json!(f);
    }
    eprintln!("{}", json!({ "error": err }));
    ExitCode::from(code)
}

fn clap_failure(e: clap::Error) -> ExitCode {
    if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
        let _ = e.print();
        return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
            ExitCode::from(2)
        } else {
            ExitCode::SUCCESS
        };
    }
    let flag = match e.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.split_whitespace().next().unwrap_or(s).to_string()),
        Some(ContextValue::Strings(v)) => v.first().cloned(),
        _ => None,
    };
    let rendered = e.render().to_string();
    let message = rendered
        .lines()
        .next()
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ")
        .to_string();
    report(2, "usage", &message, flag.as_deref())
}

fn classify(err: &anyhow::Error) -> (u8, &'static str, Option<String>) {
    for cause in err.chain() {
        if let Some(u) = cause.downcast_ref::<Usage>() {
            return (2, "usage", u.flag.clone());
        }
        if let Some(e) = cause.downcast_ref::<headsplat::Error>() {
            return match e {
                headsplat::Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => (2, "input", None),
                e if e.is_input_error() => (2, "input", None),
                _ => (1, "runtime", None),
            };
        }
    }
    (1, "runtime", None)
}

/// The error chain joined with ": ", skipping causes already quoted by their parent.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let s = cause.to_string();
        if !out.contains(&s) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&s);
        }
    }
    out
}

fn run(argv: Vec<OsString>) -> ExitCode {
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(u) => return report(2, "usage", &u.message, u.flag.as_deref()),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => return clap_failure(e),
    };
    let threads = cli.threads;
    let outcome = headsplat::par::with_threads(threads, move || commands::dispatch(cli));
    let result = match outcome {
        Ok(r) => r,
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (code, kind, flag) = classify(&err);
            report(code, kind, &message(&err), flag.as_deref())
        }
    }
}

fn main() -> ExitCode {
    run(std::env::args_os().collect())
}
