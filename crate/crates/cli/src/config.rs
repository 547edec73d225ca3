//! `key = value` config files, merged under the command-line flags.
//!
//! Config entries become flags inserted right after the subcommand name.
//! Keys already given on the command line are skipped.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{ArgAction, Command};

use crate::CliError;

/// Parses `key = value` lines; `#` starts a comment, `_` in keys reads as `-`.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", i + 1)))?;
        let key = key.trim().replace('_', "-");
        if key.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", i + 1)));
        }
        entries.push((key, value.trim().to_string()));
    }
    Ok(entries)
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
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

/// Position of the subcommand token, skipping leading global options.
fn subcommand_index(argv: &[OsString], root: &Command) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let s = argv[i].to_string_lossy();
        if !s.starts_with('-') {
            return root.find_subcommand(s.as_ref()).map(|_| i);
        }
        i += if s.contains('=') { 1 } else { 2 };
    }
    None
}

pub fn merge(argv: Vec<OsString>, root: &Command) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let entries = parse(&text)?;
    let Some(at) = subcommand_index(&argv, root) else {
        return Ok(argv);
    };
    let name = argv[at].to_string_lossy().into_owned();
    let sub = root.find_subcommand(&name).expect("index points at a subcommand");
    let explicit = |key: &str| {
        let flag = format!("--{key}");
        argv.iter().skip(1).any(|a| {
            let a = a.to_string_lossy();
            a == flag.as_str() || a.starts_with(&format!("{flag}="))
        })
    };
    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            return Err(CliError::Usage("config files cannot include other config files".into()));
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("config key `{key}` is not an option of `{name}`")))?;
        if explicit(&key) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" | "1" | "yes" => injected.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => return Err(CliError::Usage(format!("config key `{key}`: `{other}` is not a boolean"))),
            }
        } else {
            injected.push(format!("--{key}").into());
            injected.push(value.into());
        }
    }
    let mut merged = argv;
    merged.splice(at + 1..at + 1, injected);
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    fn args(s: &str) -> Vec<OsString> {
        s.split_whitespace().map(OsString::from).collect()
    }

    #[test]
    fn parses_lines() {
        let e = parse("# header\nn = 4\nmax_iterations=10 # trailing\n\n").unwrap();
        assert_eq!(e, vec![("n".into(), "4".into()), ("max-iterations".into(), "10".into())]);
        assert!(parse("novalue\n").is_err());
        assert!(parse(" = 3\n").is_err());
    }

    #[test]
    fn finds_subcommand_after_globals() {
        let root = crate::Cli::command();
        assert_eq!(subcommand_index(&args("scot --format json honest --n 3"), &root), Some(3));
        assert_eq!(subcommand_index(&args("scot --format=json bounds"), &root), Some(2));
        assert_eq!(subcommand_index(&args("scot"), &root), None);
        assert_eq!(config_path(&args("scot bounds --config a.cfg")), Some(PathBuf::from("a.cfg")));
    }
}
