//! `key=value` settings files. Each line becomes `--key value` placed right
//! after the subcommand, so anything given on the command line wins.

use std::ffi::OsString;
use std::path::Path;

use crate::{Error, Result};

/// Environment variable naming a settings file when `--config` is absent.
pub const CONFIG_ENV: &str = "LAWNMETER_CONFIG";

pub fn config_args(text: &str, path: &Path) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: format!("expected key=value, got {line:?}"),
        })?;
        let key = key.trim().replace('_', "-");
        out.push(format!("--{key}").into());
        // list-valued flags take one argument per whitespace-separated item
        out.extend(value.split_whitespace().map(OsString::from));
    }
    Ok(out)
}

/// Finds the settings file named by `--config PATH`, `--config=PATH` or the
/// environment, and splices its arguments in after the subcommand (the
/// first argument that is not an option or an option's value).
pub fn expand_args(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let mut path: Option<OsString> = None;
    for (i, a) in args.iter().enumerate().skip(1) {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            path = Some(p.into());
        }
    }
    let path = path.or_else(|| std::env::var_os(CONFIG_ENV));
    let Some(path) = path else { return Ok(args) };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let extra = config_args(&text, path)?;
    let Some(at) = args
        .iter()
        .position(|a| a.to_str().is_some_and(|s| subcommands.contains(&s)))
    else {
        return Ok(args);
    };
    let mut out = args[..=at].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[at + 1..]);
    Ok(out)
}
