//! Overlaying a JSON config file onto parsed flags.

use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub fn load(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::parse(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::parse(format!("{}: {e}", path.display()))),
    }
}

/// Replaces every field of `args` that was not given on the command line
/// with the config value of the same name (`-` and `_` are interchangeable).
pub fn overlay<T: Serialize + DeserializeOwned>(args: &T, matches: &ArgMatches, config: &Map<String, Value>) -> CliResult<T> {
    let mut value = serde_json::to_value(args)?;
    let fields = value.as_object_mut().expect("argument structs serialize to objects");
    for (key, v) in config {
        let id = key.replace('-', "_");
        if id == "config" {
            return Err(CliError::parse("a config file cannot name another config file"));
        }
        if !fields.contains_key(&id) {
            return Err(CliError::parse(format!("unknown config key `{key}`")));
        }
        let from_cli = matches!(matches.try_get_raw(&id), Ok(Some(_)))
            && matches.value_source(&id) == Some(ValueSource::CommandLine);
        if !from_cli {
            fields.insert(id, v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::parse(format!("config: {e}")))
}
