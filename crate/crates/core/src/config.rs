//! Flat key-value configuration files (TOML) for plant parameters and
//! controller settings.
//!
//! Keys mirror the struct field names and carry SI units. Pressure-valued
//! keys are also accepted with a `_bar` suffix and are converted to Pa on
//! load; files are always written in SI.

use crate::error::ConfigError;
use crate::ofo::OfoConfig;
use crate::plant::CompressorParams;
use crate::PA_PER_BAR;
use std::fs;
use std::path::Path;

/// Keys that may carry a `_bar` variant.
const PRESSURE_KEYS: [&str; 2] = ["pin", "pout"];

fn read_table(path: &Path) -> Result<toml::Table, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.parse::<toml::Table>().map_err(|e| ConfigError::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Replace `<key>_bar` entries by `<key>` in Pa.
fn normalize_pressures(table: &mut toml::Table, path: &Path) -> Result<(), ConfigError> {
    for key in PRESSURE_KEYS {
        let bar_key = format!("{key}_bar");
        if let Some(v) = table.remove(&bar_key) {
            if table.contains_key(key) {
                return Err(ConfigError::Parse {
                    path: path.display().to_string(),
                    detail: format!("both {key} and {bar_key} present"),
                });
            }
            let bar = v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(|| {
                ConfigError::Parse {
                    path: path.display().to_string(),
                    detail: format!("{bar_key} must be numeric"),
                }
            })?;
            table.insert(key.to_string(), toml::Value::Float(bar * PA_PER_BAR));
        }
    }
    Ok(())
}

/// Load plant parameters, accepting pressures in bar via `_bar` keys.
pub fn load_params(path: &Path) -> Result<CompressorParams, ConfigError> {
    let mut table = read_table(path)?;
    normalize_pressures(&mut table, path)?;
    let params: CompressorParams =
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
    params.validate().map_err(ConfigError::Invalid)?;
    Ok(params)
}

/// Write plant parameters in SI units.
pub fn save_params(params: &CompressorParams, path: &Path) -> Result<(), ConfigError> {
    let text = toml::to_string_pretty(params).expect("parameters serialize infallibly");
    fs::write(path, text).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load controller settings. The reduced form only needs `nu`, `dt`,
/// `u_min`, `u_max`; the QP block is optional.
pub fn load_controller(path: &Path) -> Result<OfoConfig, ConfigError> {
    let table = read_table(path)?;
    let cfg: OfoConfig =
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

pub fn save_controller(cfg: &OfoConfig, path: &Path) -> Result<(), ConfigError> {
    let text = toml::to_string_pretty(cfg).expect("controller config serializes infallibly");
    fs::write(path, text).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}
