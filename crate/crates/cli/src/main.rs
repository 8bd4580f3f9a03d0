//! `jd3net` command-line entry point.
//!
//! Exit status: 0 on success, 1 on domain errors (one JSON line on stderr
//! with `error` and `message` keys), 2 on usage errors.

mod args;
mod commands;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, SUBCOMMANDS};

/// Malformed invocation; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Domain failure raised by the CLI itself rather than the library.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: String) -> Self {
        Failure { kind, message }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn library_kind(e: &jd3net::Error) -> &'static str {
    use jd3net::Error::*;
    match e {
        Shape(_) => "shape",
        Divisibility(_) => "divisibility",
        NonFinite { .. } => "non_finite",
        InvalidConfig(_) => "invalid_config",
        InvalidConstraints(_) => "invalid_constraints",
        Infeasible(_) => "infeasible",
        Diverged { .. } => "diverged",
        Pattern(_) => "pattern",
        Format(_) => "format",
        Io(_) => "io",
        Json(_) => "json",
        Image(_) => "image",
    }
}

fn classify(e: &anyhow::Error) -> (&'static str, u8) {
    if e.downcast_ref::<UsageError>().is_some() {
        return ("usage", 2);
    }
    if let Some(f) = e.downcast_ref::<Failure>() {
        return (f.kind, 1);
    }
    if let Some(l) = e.downcast_ref::<jd3net::Error>() {
        return (library_kind(l), 1);
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return ("io", 1);
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return ("json", 1);
    }
    ("error", 1)
}

fn error_line(kind: &str, message: &str) {
    eprintln!("{}", json!({ "error": kind, "message": message.replace('\n', " ") }));
}

fn flag_tokens(key: &str, value: &Value) -> Result<Vec<OsString>, String> {
    let flag = format!("--{}", key.replace('_', "-"));
    if flag == "--config" {
        return Err("a config file cannot name another config file".into());
    }
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        _ => Err(format!("config key `{key}`: unsupported value {v}")),
    };
    Ok(match value {
        Value::Null | Value::Bool(false) => vec![],
        Value::Bool(true) => vec![flag.into()],
        Value::Array(items) => {
            let joined = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(",");
            vec![flag.into(), joined.into()]
        }
        other => vec![flag.into(), scalar(other)?.into()],
    })
}

/// Splices flags from a `--config` JSON object right after the subcommand
/// name, so flags given on the command line take precedence.
fn expand_config(argv: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let mut path = None;
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = Some(argv.get(i + 1).ok_or("--config needs a path")?.clone());
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(p.into());
        }
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("reading config {}: {e}", path.to_string_lossy()))?;
    let Value::Object(map) = serde_json::from_str(&text).map_err(|e| format!("parsing config: {e}"))? else {
        return Err("config file must hold a JSON object".into());
    };
    let mut tokens = Vec::new();
    for (k, v) in &map {
        tokens.extend(flag_tokens(k, v)?);
    }
    let Some(sub) = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(argv);
    };
    let mut out = argv;
    out.splice(sub + 1..sub + 1, tokens);
    Ok(out)
}

fn main() -> ExitCode {
    let argv = match expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            error_line("usage", &msg);
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            error_line(kind, &format!("{e:#}"));
            ExitCode::from(code)
        }
    }
}
