//! Split manifests: one image id per line, every line newline-terminated.

use std::path::Path;

use crate::Error;

pub fn format_manifest(ids: &[String]) -> String {
    let mut s = String::with_capacity(ids.iter().map(|i| i.len() + 1).sum());
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    s
}

pub fn parse_manifest(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

pub fn write_manifest(path: &Path, ids: &[String]) -> Result<(), Error> {
    crate::write_file(path, format_manifest(ids).as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_manifest(&text))
}
