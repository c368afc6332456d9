//! `--config FILE` support: `key = value` lines become flags placed right
//! after the subcommand name, ahead of anything typed on the command line.

use std::ffi::{OsStr, OsString};
use std::fs;
use std::path::PathBuf;

use log::debug;

use crate::error::{Error, Result};

/// Rewrites `args` so that entries of the config file named by `--config`
/// appear as flags of the chosen subcommand.
///
/// Keys may be written with dashes or underscores and with or without a
/// leading `--`. Boolean flags take `true`/`false`; multi-valued flags take
/// whitespace-separated values. A key that belongs only to other subcommands
/// is ignored, so one file can serve a whole pipeline. A key no subcommand
/// knows is an error.
pub fn inject_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some((config_path, sub_index)) = locate(&args) else {
        return Ok(args);
    };
    let Some(sub_index) = sub_index else {
        return Ok(args);
    };
    let root = super::command();
    let Some(sub) = args[sub_index]
        .to_str()
        .and_then(|name| root.find_subcommand(name))
    else {
        return Ok(args);
    };

    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(&config_path, i + 1, "expected key = value"))?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(Error::parse(
                &config_path,
                i + 1,
                "config files cannot nest",
            ));
        }
        let Some(arg) = sub
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
        else {
            let known_elsewhere = root.get_subcommands().any(|s| {
                s.get_arguments()
                    .any(|a| a.get_long() == Some(key.as_str()))
            });
            if known_elsewhere {
                debug!("config key {key:?} does not apply to {}", sub.get_name());
                continue;
            }
            return Err(Error::parse(
                &config_path,
                i + 1,
                format!("unknown key {key:?}"),
            ));
        };
        let flag = OsString::from(format!("--{key}"));
        if !arg.get_action().takes_values() {
            match value {
                "true" => injected.push(flag),
                "false" => {}
                _ => {
                    return Err(Error::parse(
                        &config_path,
                        i + 1,
                        format!("{key} expects true or false"),
                    ))
                }
            }
            continue;
        }
        let multi = arg.get_num_args().is_some_and(|n| n.max_values() > 1);
        injected.push(flag);
        if multi {
            injected.extend(value.split_whitespace().map(OsString::from));
        } else {
            injected.push(value.into());
        }
    }
    let mut out = args[..=sub_index].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[sub_index + 1..]);
    Ok(out)
}

/// Finds the config path and the index of the subcommand name.
fn locate(args: &[OsString]) -> Option<(PathBuf, Option<usize>)> {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].as_os_str();
        if a == OsStr::new("--config") {
            config = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(path) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(PathBuf::from(path));
        } else if sub.is_none() && !a.to_string_lossy().starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    config.map(|c| (c, sub))
}
