//! `--config file.json`: a flat JSON object whose keys are long flag names of
//! the chosen subcommand (or the global flags). Its values are spliced in right
//! after the subcommand, so flags given on the command line win.

use std::ffi::OsString;

use serde_json::Value;

use crate::Usage;

/// Global flags that take a value and may precede the subcommand.
const VALUED_GLOBALS: [&str; 2] = ["--seed", "--threads"];

pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, Usage> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    if let Some(prog) = it.next() {
        rest.push(prog);
    }
    while let Some(a) = it.next() {
        let s = a.to_string_lossy().into_owned();
        if s == "--" {
            rest.push(a);
            rest.extend(it.by_ref());
            break;
        }
        let path = if s == "--config" {
            Some(it.next().ok_or_else(|| Usage::flag("--config", "--config needs a file path"))?)
        } else {
            s.strip_prefix("--config=").map(OsString::from)
        };
        match path {
            Some(_) if config.is_some() => return Err(Usage::flag("--config", "--config given more than once")),
            Some(p) => config = Some(p),
            None => rest.push(a),
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };

    let text = std::fs::read_to_string(&path)
        .map_err(|e| Usage::flag("--config", format!("cannot read config {}: {e}", path.to_string_lossy())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| Usage::flag("--config", format!("config {}: {e}", path.to_string_lossy())))?;
    let Value::Object(map) = value else {
        return Err(Usage::flag("--config", "config must be a JSON object"));
    };
    let mut injected = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" {
            return Err(Usage::flag("--config", "config files cannot nest --config"));
        }
        push_value(&flag, &value, &mut injected)?;
    }

    let mut i = 1;
    while i < rest.len() {
        let s = rest[i].to_string_lossy();
        if VALUED_GLOBALS.contains(&s.as_ref()) {
            i += 2;
        } else if s.starts_with('-') {
            i += 1;
        } else {
            break;
        }
    }
    let at = (i + 1).min(rest.len());
    rest.splice(at..at, injected);
    Ok(rest)
}

fn push_value(flag: &str, value: &Value, out: &mut Vec<OsString>) -> Result<(), Usage> {
    match value {
        Value::Null | Value::Bool(false) => {}
        Value::Bool(true) => out.push(flag.into()),
        Value::Number(n) => {
            out.push(flag.into());
            out.push(n.to_string().into());
        }
        Value::String(s) => {
            out.push(flag.into());
            out.push(s.into());
        }
        Value::Array(items) => {
            for v in items {
                if v.is_array() || v.is_object() {
                    return Err(Usage::flag(flag, format!("config key {flag} holds a nested value")));
                }
                push_value(flag, v, out)?;
            }
        }
        Value::Object(_) => return Err(Usage::flag(flag, format!("config key {flag} holds an object"))),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"cutoff": 0.3, "no_gt": true, "detrend": false}"#).unwrap();
        let out = expand(args(&["hs", "--seed", "4", "stability", "--config", p.to_str().unwrap(), "--out", "r.json"])).unwrap();
        assert_eq!(out, args(&["hs", "--seed", "4", "stability", "--cutoff", "0.3", "--no-gt", "--out", "r.json"]));
    }

    #[test]
    fn no_config_is_identity() {
        let a = args(&["hs", "render", "--out", "x.png"]);
        assert_eq!(expand(a.clone()).unwrap(), a);
    }
}
