//! Effective run configuration: clap defaults, then a key=value file, then flags.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}:{line}: expected `key = value`")]
    Syntax { path: String, line: usize },
    #[error("{path}:{line}: unknown key `{key}` for `{command}`")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
        command: String,
    },
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str, path: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
            path: path.to_string(),
            line: i + 1,
        })?;
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                path: path.to_string(),
                line: i + 1,
            });
        }
        out.push((i + 1, key, v.trim().trim_matches('"').to_string()));
    }
    Ok(out)
}

fn raw_joined(m: &ArgMatches, id: &str) -> Option<String> {
    let vals: Vec<String> = m.get_raw(id)?.map(|v| v.to_string_lossy().into_owned()).collect();
    Some(vals.join(","))
}

/// Merges defaults, file entries and command-line values for one subcommand.
pub fn effective(
    sub_cmd: &Command,
    sub: &ArgMatches,
    file: Option<&Path>,
    skip: &[&str],
) -> Result<BTreeMap<String, String>, ConfigError> {
    let known: Vec<String> = sub_cmd.get_arguments().map(|a| a.get_id().to_string()).collect();
    let mut map = BTreeMap::new();
    let mut cli = BTreeMap::new();
    for id in sub.ids() {
        let id = id.as_str();
        // group ids from flattened argument structs show up here too
        if skip.contains(&id) || !known.iter().any(|k| k == id) {
            continue;
        }
        let Some(v) = raw_joined(sub, id) else { continue };
        match sub.value_source(id) {
            Some(ValueSource::DefaultValue) => {
                map.insert(id.to_string(), v);
            }
            Some(_) => {
                cli.insert(id.to_string(), v);
            }
            None => {}
        }
    }
    if let Some(path) = file {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        for (line, key, value) in parse_kv(&text, &shown)? {
            if !known.contains(&key) || skip.contains(&key.as_str()) {
                return Err(ConfigError::UnknownKey {
                    path: shown,
                    line,
                    key,
                    command: sub_cmd.get_name().to_string(),
                });
            }
            map.insert(key, value);
        }
    }
    map.extend(cli);
    Ok(map)
}

/// Argument vector equivalent to `map` for re-parsing.
pub fn to_argv(
    bin: &str,
    global: &[(String, String)],
    sub_cmd: &Command,
    map: &BTreeMap<String, String>,
) -> Vec<OsString> {
    let mut argv: Vec<OsString> = vec![bin.into()];
    for (k, v) in global {
        argv.push(format!("--{}", k.replace('_', "-")).into());
        argv.push(v.into());
    }
    argv.push(sub_cmd.get_name().into());
    let mut positional = Vec::new();
    for arg in sub_cmd.get_arguments() {
        let id = arg.get_id().as_str();
        let Some(v) = map.get(id) else { continue };
        if arg.is_positional() {
            positional.push(v.clone());
        } else if let Some(long) = arg.get_long() {
            argv.push(format!("--{long}={v}").into());
        }
    }
    if !positional.is_empty() {
        argv.push("--".into());
        argv.extend(positional.into_iter().map(OsString::from));
    }
    argv
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_parsing() {
        let got = parse_kv("# c\nseed = 7\n\npos-weight=4.0 # trailing\nout = \"a b\"\n", "f").unwrap();
        assert_eq!(
            got,
            vec![
                (2, "seed".into(), "7".into()),
                (4, "pos_weight".into(), "4.0".into()),
                (5, "out".into(), "a b".into())
            ]
        );
        assert!(matches!(
            parse_kv("novalue\n", "f"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(parse_kv(" = 3\n", "f"), Err(ConfigError::Syntax { .. })));
    }
}
