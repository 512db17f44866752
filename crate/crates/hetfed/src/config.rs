//! Experiment config files: versioned TOML with one section per module.
//!
//! All keys are optional and fall back to the built-in defaults; unknown
//! keys are rejected so typos surface at load time. Schema (values shown are
//! the defaults):
//!
//! ```toml
//! version = 1
//! strategy = "fcclplus"      # fccl | fedmd | feddf | plain_kd | solo | ewc | fedavg_homog
//! epochs = 20                # communication epochs
//! local_rounds = 5           # private passes per epoch
//! collab_passes = 1          # public-pool passes per collaborative phase
//! collab_batch = 128
//! local_batch = 64
//! pretrain_epochs = 10
//! seed = 7
//! parallel_clients = false   # run client updates on threads
//! dump_correlation = false   # write per-epoch correlation matrices
//!
//! [losses]
//! lambda = 0.0051            # off-diagonal correlation weight
//! mu = 0.02                  # similarity soften factor
//! omega = 3.0                # similarity term weight
//! tau = 3.0                  # distillation temperature
//! fntd_variant = "renormalized"  # or "literal"
//! ewc_lambda = 0.1
//!
//! [optim]
//! learning_rate = 0.001
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//!
//! [model]
//! activation = "tanh"        # tanh | relu | linear
//! hidden = [[32, 8], [48, 12], [40, 10], [24, 8]]  # per-client widths
//!
//! [scenario]
//! domains = 4
//! classes = 5
//! input_dim = 16
//! train_sizes = [150, 80, 500, 300]
//! test_size = 150
//! shift_strength = 1.0
//! noise_sigma = 0.35
//! class_separation = 1.0
//! public_size = 1000
//! public_provenance = "mixture"  # or "held_out"
//! augment = "weak"               # off | weak | strong
//! ```

use std::path::Path;

use hetfed_core::federation::FederationConfig;

/// Current config schema version.
pub const CONFIG_VERSION: i64 = 1;

/// Config-loading failure with enough context to point at the field.
#[derive(Debug)]
pub enum ConfigError {
    /// The file could not be read at all.
    Unreadable(String),
    /// The contents do not form a valid config.
    Invalid(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Unreadable(msg) => write!(f, "cannot read config: {msg}"),
            ConfigError::Invalid(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Parse and validate a config string.
pub fn parse_config(text: &str) -> Result<FederationConfig, ConfigError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
    match table.remove("version") {
        Some(toml::Value::Integer(CONFIG_VERSION)) => {}
        Some(other) => {
            return Err(ConfigError::Invalid(format!(
                "unsupported config version {other}; this build reads version {CONFIG_VERSION}"
            )));
        }
        None => {
            return Err(ConfigError::Invalid(String::from(
                "missing 'version' key (expected version = 1)",
            )));
        }
    }
    let cfg: FederationConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string()))?;
    cfg.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Read, parse, and validate a config file.
pub fn load_config(path: &Path) -> Result<FederationConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}
