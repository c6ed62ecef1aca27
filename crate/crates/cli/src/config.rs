//! Run configuration: a TOML file of flat dotted keys (`model.k = 64`)
//! merged with command-line overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dfast_core::data::Strategy;
use dfast_core::model::{ModelConfig, ModuleMask};
use dfast_core::train::TrainConfig;
use serde_json::Value;

use crate::CliError;

/// Keys the dataset determines; a config may state them only if they agree.
pub const GEOMETRY_KEYS: [&str; 4] = ["channels", "timepoints", "classes", "rate"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub split: Strategy,
    /// Model geometry keys set explicitly, with their values.
    pub geometry: Vec<(String, f64)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::mnred(),
            train: TrainConfig::default(),
            data: None,
            split: Strategy::StratifiedKFold(5),
            geometry: Vec::new(),
        }
    }
}

fn modules_to_string(m: &ModuleMask) -> String {
    let names: Vec<&str> = [(m.mva, "mva"), (m.dca, "dca"), (m.ltsa, "ltsa")]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
    if names.is_empty() {
        "none".into()
    } else {
        names.join(",")
    }
}

fn parse_modules(v: &str) -> Result<ModuleMask, CliError> {
    let mut m = ModuleMask {
        mva: false,
        dca: false,
        ltsa: false,
    };
    if v.trim().eq_ignore_ascii_case("none") {
        return Ok(m);
    }
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.to_ascii_lowercase().as_str() {
            "mva" => m.mva = true,
            "dca" => m.dca = true,
            "ltsa" => m.ltsa = true,
            other => {
                return Err(CliError::Config(format!(
                    "model.modules: unknown module {other:?} (use mva, dca, ltsa or none)"
                )))
            }
        }
    }
    Ok(m)
}

/// Replaces `field` of a serializable struct with `raw`, parsed according to
/// the type the field currently holds.
fn set_field<T>(target: &mut T, section: &str, field: &str, raw: &str) -> Result<(), CliError>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let key = format!("{section}.{field}");
    let mut obj = serde_json::to_value(&*target).map_err(|e| CliError::Config(e.to_string()))?;
    let slot = obj
        .get_mut(field)
        .ok_or_else(|| CliError::Config(format!("unknown key {key}")))?;
    let raw = raw.trim();
    *slot = match slot {
        Value::Number(n) if n.is_u64() => Value::from(
            raw.parse::<u64>()
                .map_err(|_| CliError::Config(format!("{key}: {raw:?} is not a non-negative integer")))?,
        ),
        Value::Number(_) => {
            let v = raw
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{key}: {raw:?} is not a number")))?;
            serde_json::Number::from_f64(v)
                .map(Value::Number)
                .ok_or_else(|| CliError::Config(format!("{key}: {raw:?} is not finite")))?
        }
        Value::Bool(_) => Value::Bool(
            raw.parse()
                .map_err(|_| CliError::Config(format!("{key}: {raw:?} is not true/false")))?,
        ),
        _ => Value::String(raw.to_ascii_lowercase()),
    };
    *target = serde_json::from_value(obj).map_err(|e| CliError::Config(format!("{key}: {e}")))?;
    Ok(())
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        match key.split_once('.') {
            Some(("model", "modules")) => self.model.modules = parse_modules(value)?,
            Some(("model", field)) => {
                set_field(&mut self.model, "model", field, value)?;
                if GEOMETRY_KEYS.contains(&field) {
                    let v = value
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::Config(format!("{key}: {value:?} is not a number")))?;
                    self.geometry.retain(|(k, _)| k != field);
                    self.geometry.push((field.to_string(), v));
                }
            }
            Some(("train", field)) => set_field(&mut self.train, "train", field, value)?,
            Some(("data", "path")) => self.data = Some(PathBuf::from(value.trim())),
            None if key == "split" => {
                self.split = value
                    .parse()
                    .map_err(|e: dfast_core::DataError| CliError::Config(format!("split: {e}")))?
            }
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies `KEY=VALUE`.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), CliError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override {pair:?} is not KEY=VALUE")))?;
        self.set(k, v)
    }

    /// Reads a TOML file and applies every key in it, in file order.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat)?;
        for (k, v) in flat {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Fills the dataset-determined geometry, rejecting explicit settings
    /// that disagree.
    pub fn bind_geometry(&mut self, channels: usize, timepoints: usize, classes: usize, rate: f64) -> Result<(), CliError> {
        for (k, v) in &self.geometry {
            let actual = match k.as_str() {
                "channels" => channels as f64,
                "timepoints" => timepoints as f64,
                "classes" => classes as f64,
                _ => rate,
            };
            if *v != actual {
                return Err(CliError::Config(format!(
                    "model.{k} = {v} in the configuration, but the dataset has {actual}"
                )));
            }
        }
        self.model.channels = channels;
        self.model.timepoints = timepoints;
        self.model.classes = classes;
        self.model.rate = rate;
        Ok(())
    }

    /// Every effective setting as TOML, loadable with [`RunConfig::apply_file`].
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# effective configuration");
        if let Some(d) = &self.data {
            let _ = writeln!(s, "data.path = {}", toml_string(&d.to_string_lossy()));
        }
        let _ = writeln!(s, "split = {}", toml_string(&self.split.to_string()));
        emit(&mut s, "model", &serde_json::to_value(&self.model).expect("serializable"));
        emit(&mut s, "train", &serde_json::to_value(&self.train).expect("serializable"));
        s
    }
}

fn toml_string(v: &str) -> String {
    toml::Value::String(v.to_string()).to_string()
}

fn emit(s: &mut String, section: &str, obj: &Value) {
    let Value::Object(map) = obj else { return };
    for (k, v) in map {
        let text = match v {
            Value::String(t) => toml_string(t),
            Value::Object(_) if k == "modules" => {
                let m: ModuleMask = serde_json::from_value(v.clone()).expect("module mask");
                toml_string(&modules_to_string(&m))
            }
            Value::Number(n) if n.is_f64() => {
                let f = n.as_f64().unwrap_or_default();
                // keep a decimal point so TOML reads it back as a float
                if f.fract() == 0.0 && f.abs() < 1e15 {
                    format!("{f:.1}")
                } else {
                    format!("{f:?}")
                }
            }
            other => other.to_string(),
        };
        let _ = writeln!(s, "{section}.{k} = {text}");
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) -> Result<(), CliError> {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out)?;
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        toml::Value::Integer(i) => out.push((prefix.to_string(), i.to_string())),
        toml::Value::Float(f) => out.push((prefix.to_string(), f.to_string())),
        toml::Value::Boolean(b) => out.push((prefix.to_string(), b.to_string())),
        toml::Value::Array(items) => {
            let parts: Vec<String> = items
                .iter()
                .map(|i| match i {
                    toml::Value::String(s) => Ok(s.clone()),
                    _ => Err(CliError::Config(format!("{prefix}: arrays may only hold strings"))),
                })
                .collect::<Result<_, _>>()?;
            out.push((prefix.to_string(), parts.join(",")));
        }
        toml::Value::Datetime(_) => return Err(CliError::Config(format!("{prefix}: dates are not supported"))),
    }
    Ok(())
}
