//! `--config` files: TOML whose keys are flag names.
//!
//! Values are spliced into the argument list right after the subcommand, so
//! flags given on the command line (which come later) override them.

use std::path::PathBuf;

use anyhow::Context;
use clap::CommandFactory;

use crate::args::{Cli, Command};
use crate::usage;

const GLOBAL_VALUED: [&str; 3] = ["--seed", "--out", "--config"];

fn config_path(argv: &[String]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

fn subcommand_position(argv: &[String]) -> Option<usize> {
    let mut i = 1;
    while i < argv.len() {
        let a = argv[i].as_str();
        if GLOBAL_VALUED.contains(&a) {
            i += 2;
        } else if a.starts_with('-') {
            i += 1;
        } else {
            return Command::NAMES.contains(&a).then_some(i);
        }
    }
    None
}

fn long_flags(command: &str) -> Vec<String> {
    let cli = Cli::command();
    let mut names: Vec<String> = cli
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_string))
        .collect();
    if let Some(sub) = cli.find_subcommand(command) {
        names.extend(sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)));
    }
    names
}

fn push_value(out: &mut Vec<String>, key: &str, value: &toml::Value) -> anyhow::Result<()> {
    let flag = format!("--{key}");
    match value {
        toml::Value::Boolean(true) => out.push(flag),
        toml::Value::Boolean(false) => {}
        toml::Value::Array(items) => {
            for item in items {
                push_value(out, key, item)?;
            }
        }
        toml::Value::String(s) => out.extend([flag, s.clone()]),
        toml::Value::Integer(i) => out.extend([flag, i.to_string()]),
        toml::Value::Float(f) => out.extend([flag, f.to_string()]),
        other => return Err(usage(format!("config key '{key}' has unsupported value {other}"))),
    }
    Ok(())
}

/// Returns `argv` with the config file's settings spliced in.
pub fn inject(argv: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let Some(pos) = subcommand_position(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let command = argv[pos].clone();
    let known = long_flags(&command);
    let mut extra = Vec::new();
    for (key, value) in &table {
        if key == "config" {
            continue;
        }
        match value {
            toml::Value::Table(section) => {
                if !Command::NAMES.contains(&key.as_str()) {
                    return Err(usage(format!("config table [{key}] is not a command")));
                }
                if *key != command {
                    continue;
                }
                for (k, v) in section {
                    if !known.contains(k) {
                        return Err(usage(format!("config key '{k}' is not a flag of '{command}'")));
                    }
                    push_value(&mut extra, k, v)?;
                }
            }
            _ if known.contains(key) => push_value(&mut extra, key, value)?,
            _ => {
                let anywhere = Command::NAMES.iter().any(|c| long_flags(c).contains(key));
                if !anywhere {
                    return Err(usage(format!("config key '{key}' is not a known flag")));
                }
            }
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(extra);
    out.extend(argv[pos + 1..].iter().cloned());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn finds_subcommand_after_global_values() {
        assert_eq!(subcommand_position(&args("x --seed 3 --out d train --epochs 2")), Some(5));
        assert_eq!(subcommand_position(&args("x --seed=3 mask")), Some(2));
        assert_eq!(subcommand_position(&args("x --help")), None);
    }

    #[test]
    fn values_become_flags() {
        let mut out = Vec::new();
        push_value(&mut out, "no-refine", &toml::Value::Boolean(true)).unwrap();
        push_value(&mut out, "exchange-every-step", &toml::Value::Boolean(false)).unwrap();
        push_value(&mut out, "lr", &toml::Value::Float(0.001)).unwrap();
        push_value(
            &mut out,
            "driver",
            &toml::Value::Array(vec!["a:b".into(), "c:d:p70".into()]),
        )
        .unwrap();
        assert_eq!(out, args("--no-refine --lr 0.001 --driver a:b --driver c:d:p70"));
    }
}
