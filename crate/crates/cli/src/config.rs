//! `--config <file>` support.
//!
//! The file holds `key = value` lines whose keys are long flag names without
//! the leading dashes. They are spliced into the argument list right after
//! the subcommand, ahead of anything typed on the command line. Every
//! subcommand lets a later occurrence of a flag override an earlier one, so
//! explicit flags win.

use std::path::Path;

/// Recognizes `--config` / `--config=<file>` anywhere in `args` and returns
/// the argument list with the file's entries expanded.
pub fn expand(args: Vec<String>, subcommand_depth: impl Fn(&str) -> usize) -> Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            config = Some(it.next().ok_or("--config needs a file path")?);
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(p.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let injected = read_entries(Path::new(&path))?;
    let at = insertion_point(&rest, subcommand_depth);
    rest.splice(at..at, injected);
    Ok(rest)
}

fn read_entries(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("config {}: {e}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config {} line {}: expected key = value", path.display(), n + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(format!("config {} line {}: bad key {key:?}", path.display(), n + 1));
        }
        out.push(format!("--{key}={}", value.trim()));
    }
    Ok(out)
}

/// Index just past the (possibly nested) subcommand names. Global flags that
/// take a value are skipped along with it.
fn insertion_point(args: &[String], subcommand_depth: impl Fn(&str) -> usize) -> usize {
    let mut i = 1;
    let mut remaining = None;
    while i < args.len() {
        let a = &args[i];
        if a == "--threads" {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        let left = remaining.unwrap_or_else(|| subcommand_depth(a));
        i += 1;
        if left <= 1 {
            return i;
        }
        remaining = Some(left - 1);
    }
    args.len()
}
