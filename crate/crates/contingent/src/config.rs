//! Layered configuration: TOML file, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::{CliError, Result};

/// Reads a TOML file into a JSON object. A `[section]` named after the
/// subcommand, if present, is used instead of the top-level table.
///
/// A `.json` file is read as a run manifest: its `config` object holds
/// the resolved flags of the run that wrote it.
pub fn load_file(path: &Path, section: &str) -> Result<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        parse_manifest(&text, section)
    } else {
        parse_toml(&text, section)
    };
    parsed.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn parse_manifest(text: &str, command: &str) -> std::result::Result<Map<String, Value>, String> {
    let mut v: Map<String, Value> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    match v.get("command").and_then(Value::as_str) {
        Some(c) if c == command => {}
        other => return Err(format!("manifest is for {other:?}, not {command:?}")),
    }
    match v.remove("config") {
        Some(Value::Object(config)) => Ok(config.into_iter().filter(|(_, v)| !v.is_null()).collect()),
        _ => Err("manifest has no config object".into()),
    }
}

pub fn parse_toml(text: &str, section: &str) -> std::result::Result<Map<String, Value>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    let value = serde_json::to_value(table).map_err(|e| e.to_string())?;
    let Value::Object(mut map) = value else { unreachable!("a TOML document is a table") };
    match map.remove(section) {
        Some(Value::Object(inner)) => Ok(inner),
        Some(_) => Err(format!("[{section}] must be a table")),
        None => Ok(map),
    }
}

/// Overlays the set flags in `flags` on `file` and decodes the result.
/// Unknown keys in the file are config errors.
pub fn merge<T: Serialize + DeserializeOwned>(file: Map<String, Value>, flags: &T) -> Result<T> {
    let Value::Object(set) = serde_json::to_value(flags).map_err(CliError::config)? else {
        return Err(CliError::Config("flags must serialize to an object".into()));
    };
    let mut merged = file;
    for (k, v) in set {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(format!("malformed config: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::EvalArgs;

    #[test]
    fn flags_override_file_values() {
        let file = parse_toml("episodes = 5\nscenario = \"overtake\"\nseed = 9\n", "eval").unwrap();
        let flags = EvalArgs { episodes: Some(7), ..EvalArgs::default() };
        let m = merge(file, &flags).unwrap();
        assert_eq!(m.episodes, Some(7));
        assert_eq!(m.scenario.as_deref(), Some("overtake"));
        assert_eq!(m.seed, Some(9));
    }

    #[test]
    fn section_for_the_subcommand_wins() {
        let file = parse_toml("episodes = 5\n[eval]\nepisodes = 3\n", "eval").unwrap();
        assert_eq!(merge(file, &EvalArgs::default()).unwrap().episodes, Some(3));
    }

    #[test]
    fn unknown_and_mistyped_keys_are_config_errors() {
        let file = parse_toml("episods = 5\n", "eval").unwrap();
        assert!(matches!(merge(file, &EvalArgs::default()), Err(CliError::Config(_))));
        let file = parse_toml("episodes = \"many\"\n", "eval").unwrap();
        assert!(matches!(merge(file, &EvalArgs::default()), Err(CliError::Config(_))));
        assert!(parse_toml("episodes = ", "eval").is_err());
    }

    #[test]
    fn manifest_config_resolves_to_itself() {
        let flags = EvalArgs { episodes: Some(4), planner: Some("expert,risky".into()), ..EvalArgs::default() };
        let resolved = flags.resolve().unwrap();
        let manifest = serde_json::json!({ "command": "eval", "config": resolved }).to_string();
        let again = merge(parse_manifest(&manifest, "eval").unwrap(), &EvalArgs::default()).unwrap().resolve().unwrap();
        assert_eq!(again, resolved);
        assert!(parse_manifest(&manifest, "train").is_err());
    }
}
