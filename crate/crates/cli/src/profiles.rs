//! Per-benchmark tracker settings shipped as TOML data files.

use std::path::Path;

use quasitrack_core::tracker::TrackerConfig;
use thiserror::Error;

pub const PROFILE_NAMES: [&str; 6] = ["mot17", "mot20", "dancetrack", "bdd100k", "waymo", "tao"];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown profile {0:?} (expected one of mot17, mot20, dancetrack, bdd100k, waymo, tao)")]
    UnknownProfile(String),
    #[error("{source_name}: {message}")]
    Invalid { source_name: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn profile_source(name: &str) -> Option<&'static str> {
    Some(match name {
        "mot17" => include_str!("../profiles/mot17.toml"),
        "mot20" => include_str!("../profiles/mot20.toml"),
        "dancetrack" => include_str!("../profiles/dancetrack.toml"),
        "bdd100k" => include_str!("../profiles/bdd100k.toml"),
        "waymo" => include_str!("../profiles/waymo.toml"),
        "tao" => include_str!("../profiles/tao.toml"),
        _ => return None,
    })
}

fn parse_table(source_name: &str, text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::Invalid { source_name: source_name.into(), message: e.to_string() })
}

fn to_config(source_name: &str, table: toml::Table) -> Result<TrackerConfig, ConfigError> {
    let cfg: TrackerConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid { source_name: source_name.into(), message: e.to_string() })?;
    cfg.validate()
        .map_err(|e| ConfigError::Invalid { source_name: source_name.into(), message: e.to_string() })?;
    Ok(cfg)
}

pub fn profile(name: &str) -> Result<TrackerConfig, ConfigError> {
    let text = profile_source(name).ok_or_else(|| ConfigError::UnknownProfile(name.into()))?;
    to_config(name, parse_table(name, text)?)
}

/// Tracker settings from an optional profile overlaid with an optional
/// config file. Keys in the file replace the profile's; a `[merge]` table
/// replaces the profile's merge settings as a whole. With neither, the
/// defaults apply.
pub fn load_config(profile_name: Option<&str>, config: Option<&Path>) -> Result<TrackerConfig, ConfigError> {
    let mut table = match profile_name {
        Some(name) => parse_table(name, profile_source(name).ok_or_else(|| ConfigError::UnknownProfile(name.into()))?)?,
        None => toml::Table::new(),
    };
    let mut name = profile_name.unwrap_or("defaults").to_string();
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        name = path.display().to_string();
        for (k, v) in parse_table(&name, &text)? {
            table.insert(k, v);
        }
    }
    to_config(&name, table)
}
