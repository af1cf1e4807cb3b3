use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use chrono::Duration;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use sentinel_core::forecast::TrainConfig;
use sentinel_core::pipeline::{ModelKind, WindowConfig};
use sentinel_core::series::parse_duration;

pub const CONFIG_ENV: &str = "SENTINEL_CONFIG";
/// Milliseconds to hold a window run between writing its records and
/// committing it; lets tests observe or interrupt an in-flight commit.
pub const PAUSE_ENV: &str = "SENTINEL_PAUSE_BEFORE_COMMIT_MS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("ConfigInvalid: {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            ConfigError::Read { .. } => None,
        }
    }
}

/// Service settings as written in the TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub data_dir: PathBuf,
    pub store_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    /// How often the scheduler runs the latest complete window, e.g. `1h`.
    pub inference_interval: String,
    /// Default training span, e.g. `7d`.
    pub training_window: String,
    /// Run windows on a timer; otherwise only on request.
    pub schedule: bool,
    pub model: ModelKind,
    pub window: WindowConfig,
    pub train: TrainConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            data_dir: PathBuf::from("sentinel-data"),
            store_dir: None,
            report_dir: None,
            model_path: None,
            inference_interval: "1h".into(),
            training_window: "7d".into(),
            schedule: true,
            model: ModelKind::SeasonalNaive,
            window: WindowConfig::default(),
            train: TrainConfig {
                context_length: 576,
                horizon: 12,
                season_length: 288,
                ..TrainConfig::default()
            },
        }
    }
}

/// A validated configuration with resolved paths and durations.
#[derive(Debug, Clone)]
pub struct Settings {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    pub store_dir: PathBuf,
    pub report_dir: PathBuf,
    pub model_path: PathBuf,
    pub inference_interval: Duration,
    pub training_window: Duration,
    pub schedule: bool,
    pub model: ModelKind,
    pub window: WindowConfig,
    pub train: TrainConfig,
}

fn positive_duration(field: &str, text: &str) -> Result<Duration, ConfigError> {
    let d = parse_duration(text).map_err(|e| ConfigError::invalid(field, e.to_string()))?;
    if d <= Duration::zero() {
        return Err(ConfigError::invalid(field, format!("must be positive, got {text}")));
    }
    Ok(d)
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let field = e.message().split('`').nth(1).unwrap_or("config").to_string();
            ConfigError::Invalid {
                field,
                message: e.message().trim().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// `explicit`, else the path in `SENTINEL_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        match explicit {
            Some(path) => Self::load(path),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(path) => Self::load(Path::new(&path)),
                None => Ok(Self::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<Settings, ConfigError> {
        let listen = self
            .listen
            .parse()
            .map_err(|e| ConfigError::invalid("listen", format!("{e}: {}", self.listen)))?;
        let inference_interval = positive_duration("inference_interval", &self.inference_interval)?;
        let training_window = positive_duration("training_window", &self.training_window)?;
        let w = &self.window;
        if w.interval_seconds <= 0 {
            return Err(ConfigError::invalid("window.interval_seconds", "must be positive"));
        }
        if w.horizon == 0 {
            return Err(ConfigError::invalid("window.horizon", "must be positive"));
        }
        w.band
            .validate()
            .map_err(|e| ConfigError::invalid("window.band", e.to_string()))?;
        if !(w.evt.risk_q > 0.0 && w.evt.risk_q < 0.5) {
            return Err(ConfigError::invalid(
                "window.evt.risk_q",
                format!("{} outside (0, 0.5)", w.evt.risk_q),
            ));
        }
        w.evt
            .validate()
            .map_err(|e| ConfigError::invalid("window.evt", e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| ConfigError::invalid("train", e.to_string()))?;
        if self.train.horizon != w.horizon {
            return Err(ConfigError::invalid(
                "train.horizon",
                format!("{} differs from window.horizon {}", self.train.horizon, w.horizon),
            ));
        }
        let dir = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| self.data_dir.join(name));
        Ok(Settings {
            listen,
            data_dir: self.data_dir.clone(),
            store_dir: dir(&self.store_dir, "store"),
            report_dir: dir(&self.report_dir, "reports"),
            model_path: dir(&self.model_path, "model.json"),
            inference_interval,
            training_window,
            schedule: self.schedule,
            model: self.model,
            window: self.window.clone(),
            train: self.train.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let s = ServiceConfig::default().validate().unwrap();
        assert_eq!(s.inference_interval, Duration::hours(1));
        assert_eq!(s.training_window, Duration::days(7));
        assert_eq!(s.store_dir, PathBuf::from("sentinel-data/store"));
    }

    #[test]
    fn negative_interval_names_the_field() {
        let cfg = ServiceConfig::from_toml("inference_interval = \"-1h\"").unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.field(), Some("inference_interval"));
        assert!(err.to_string().starts_with("ConfigInvalid: inference_interval"));
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
            listen = "0.0.0.0:9000"
            data_dir = "/tmp/x"
            schedule = false
            model = "conv"
            [window]
            horizon = 24
            interval_seconds = 3600
            [window.evt]
            quantile = 0.999
            [train]
            horizon = 24
            context_length = 168
        "#;
        let s = ServiceConfig::from_toml(text).unwrap().validate().unwrap();
        assert_eq!(s.listen.port(), 9000);
        assert!((s.window.evt.risk_q - 0.001).abs() < 1e-12);
        assert_eq!(s.model, ModelKind::Conv);
        assert_eq!(s.model_path, PathBuf::from("/tmp/x/model.json"));
    }

    #[test]
    fn out_of_range_risk_is_rejected() {
        let cfg = ServiceConfig::from_toml("[window.evt]\nrisk_q = 0.6").unwrap();
        assert_eq!(cfg.validate().unwrap_err().field(), Some("window.evt.risk_q"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ServiceConfig::from_toml("inference_intreval = \"1h\"").is_err());
    }

    #[test]
    fn sample_config_is_valid() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples/sentinel.toml");
        let s = ServiceConfig::load(&path).unwrap().validate().unwrap();
        assert_eq!(s.window.horizon, 12);
        assert_eq!(s.window.evt.risk_q, 0.002);
    }
}
