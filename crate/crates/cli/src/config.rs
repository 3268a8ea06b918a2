//! `--config` support: TOML keys become long flags unless given explicitly.
//!
//! Top-level keys apply to every subcommand that has a matching flag; a
//! table named after a subcommand (e.g. `[eval]`) applies only there and
//! wins over top-level keys.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, CommandFactory};

use crate::args::Cli;
use crate::CliError;

pub struct Expanded {
    pub argv: Vec<OsString>,
    /// Long flags the user typed on the command line.
    pub explicit: HashSet<String>,
}

fn long_name(arg: &str) -> Option<&str> {
    let name = arg.strip_prefix("--")?;
    Some(name.split_once('=').map_or(name, |(n, _)| n))
}

fn config_path(argv: &[OsString]) -> Option<OsString> {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(v.into());
        }
    }
    None
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

pub fn expand(argv: Vec<OsString>) -> Result<Expanded, CliError> {
    let explicit: HashSet<String> = argv
        .iter()
        .filter_map(|a| a.to_str().and_then(long_name).map(str::to_string))
        .collect();
    let Some(path) = config_path(&argv) else {
        return Ok(Expanded { argv, explicit });
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;

    let cmd = Cli::command();
    let Some((pos, sub)) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| cmd.find_subcommand(a.to_str()?).map(|s| (i, s.clone())))
    else {
        return Ok(Expanded { argv, explicit });
    };
    let flags: BTreeMap<String, bool> = sub
        .get_arguments()
        .filter_map(|a| {
            let is_switch = matches!(a.get_action(), ArgAction::SetTrue);
            a.get_long().map(|l| (l.to_string(), is_switch))
        })
        .collect();

    let mut values: BTreeMap<String, toml::Value> = BTreeMap::new();
    for (k, v) in &table {
        if !v.is_table() {
            values.insert(k.replace('_', "-"), v.clone());
        }
    }
    if let Some(toml::Value::Table(t)) = table.get(sub.get_name()) {
        for (k, v) in t {
            let key = k.replace('_', "-");
            if !flags.contains_key(&key) {
                return Err(CliError::usage(format!(
                    "config [{}] has unknown key {k:?}",
                    sub.get_name()
                )));
            }
            values.insert(key, v.clone());
        }
    }

    let mut injected: Vec<OsString> = Vec::new();
    for (key, value) in values {
        let Some(&is_switch) = flags.get(&key) else { continue };
        if key == "config" || explicit.contains(&key) {
            continue;
        }
        let items: Vec<&toml::Value> = match &value {
            toml::Value::Array(a) => a.iter().collect(),
            v => vec![v],
        };
        for item in items {
            let s = scalar(item)
                .ok_or_else(|| CliError::usage(format!("config key {key:?} must be a scalar or list")))?;
            if is_switch {
                if s == "true" {
                    injected.push(format!("--{key}").into());
                }
            } else {
                injected.push(format!("--{key}").into());
                injected.push(s.into());
            }
        }
    }
    let mut out = argv;
    out.splice(pos + 1..pos + 1, injected);
    Ok(Expanded { argv: out, explicit })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &[&str]) -> Vec<OsString> {
        s.iter().map(OsString::from).collect()
    }

    #[test]
    fn flags_beat_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "seed = 9\nalpha = 0.3\nweighted = true\nbogus = 1\n[eval]\nparallelism = 2\n").unwrap();
        let c = cfg.to_str().unwrap();
        let e = expand(argv(&["dg", "--config", c, "eval", "--dataset", "d", "--alpha", "0.9"])).unwrap();
        let s: Vec<String> = e.argv.iter().map(|a| a.to_string_lossy().into()).collect();
        assert!(s.windows(2).any(|w| w == ["--seed", "9"]));
        assert!(s.windows(2).any(|w| w == ["--parallelism", "2"]));
        assert!(s.contains(&"--weighted".to_string()));
        assert!(!s.contains(&"0.3".to_string()));
        assert!(!s.contains(&"--bogus".to_string()));
        assert!(e.explicit.contains("alpha"));
    }

    #[test]
    fn unknown_subcommand_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "[eval]\nnope = 1\n").unwrap();
        let c = cfg.to_str().unwrap();
        let err = expand(argv(&["dg", "eval", "--config", c])).err().unwrap();
        assert_eq!(err.code, crate::EXIT_USAGE);
    }
}
