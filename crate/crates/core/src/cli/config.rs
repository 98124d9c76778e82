use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use crate::error::{Error, Result};

/// Renders resolved options as `key=value` lines.
pub trait Echo {
    fn pairs(&self) -> Vec<(&'static str, String)>;

    fn echo(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn parse_line(line: &str, lineno: usize, source: &str) -> Result<Option<(String, String)>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let (k, v) = line.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "{source}:{lineno}: expected key=value, got {line:?}"
        ))
    })?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty()
        || !k
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-')
    {
        return Err(Error::Config(format!(
            "{source}:{lineno}: invalid key {k:?}"
        )));
    }
    if k == "config" {
        return Err(Error::Config(format!(
            "{source}:{lineno}: config files cannot include other config files"
        )));
    }
    Ok(Some((k.to_string(), v.to_string())))
}

/// Replaces `--config FILE` with the flags it lists, placed right after the
/// subcommand so that flags given on the command line take precedence.
/// `key=true` becomes a bare `--key`; `key=false` is dropped.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut file: Option<PathBuf> = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let v = it
                .next()
                .ok_or_else(|| Error::Config("--config needs a file".into()))?;
            file = Some(PathBuf::from(v));
        } else if let Some(v) = s.strip_prefix("--config=") {
            file = Some(PathBuf::from(v));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = file else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let source = path.display().to_string();
    let mut injected: Vec<OsString> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some((k, v)) = parse_line(line, i + 1, &source)? {
            match v.as_str() {
                "true" => injected.push(format!("--{k}").into()),
                "false" => {}
                _ => {
                    injected.push(format!("--{k}").into());
                    injected.push(v.into());
                }
            }
        }
    }
    // program name and global flags, then the subcommand
    let mut sub = rest.len();
    let mut i = 1;
    while i < rest.len() {
        let s = rest[i].to_string_lossy();
        if s == "--log-level" {
            i += 2;
            continue;
        }
        if !s.starts_with('-') {
            sub = i + 1;
            break;
        }
        i += 1;
    }
    let mut out = rest[..sub.min(rest.len())].to_vec();
    out.extend(injected);
    out.extend_from_slice(&rest[sub.min(rest.len())..]);
    Ok(out)
}
