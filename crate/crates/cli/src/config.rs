//! `key=value` run configuration files.
//!
//! A config file supplies default flags: its entries are spliced in right
//! after the subcommand, so any flag given on the command line overrides
//! them. The sidecar written next to every output uses the same format.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

use crate::CliError;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", i + 1)))?;
        entries.push((key.trim().replace('_', "-"), value.trim().to_string()));
    }
    Ok(entries)
}

fn to_flags(entries: &[(String, String)]) -> Vec<OsString> {
    let mut out = Vec::new();
    for (key, value) in entries {
        match value.as_str() {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(value.into());
            }
        }
    }
    out
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Splices the entries of `--config <file>` in after the subcommand name.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
    let flags = to_flags(&parse(&text)?);
    let Some(sub) = args.iter().skip(1).position(|a| !a.to_string_lossy().starts_with('-')) else {
        return Ok(args);
    };
    let at = sub + 2;
    let mut out = args[..at].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

/// Effective configuration of a subcommand, defaults included.
/// Only real arguments of `command` are listed; flattened groups are skipped.
pub fn render(command: &Command, matches: &ArgMatches) -> String {
    let mut text = format!("# sardine {}\n", command.get_name());
    let mut ids: Vec<&str> = command.get_arguments().map(|a| a.get_id().as_str()).collect();
    ids.sort_unstable();
    for id in ids {
        if id == "config" || matches.value_source(id).is_none() {
            continue;
        }
        let Ok(Some(values)) = matches.try_get_raw(id) else { continue };
        let joined: Vec<String> = values.map(|v| v.to_string_lossy().into_owned()).collect();
        if matches.value_source(id) == Some(ValueSource::DefaultValue) && joined.is_empty() {
            continue;
        }
        let _ = writeln!(text, "{}={}", id.replace('_', "-"), joined.join(","));
    }
    text
}

/// `<output>.config`
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".config");
    PathBuf::from(name)
}
