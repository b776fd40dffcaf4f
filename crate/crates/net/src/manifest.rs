//! `key=value` text files used for manifests and run configurations.
//! Blank lines and `#` comments are ignored; later keys win.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{config, Result};

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn format_kv(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn read_kv(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| config(format!("cannot read {}: {e}", path.display())))?;
    parse_kv(&text)
}

pub fn write_kv(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    fs::write(path, format_kv(pairs))?;
    Ok(())
}
