//! Flat key-value settings from an INI or JSON file, overridden by flags.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use ifl_core::bench::GenLassoConfig;
use ifl_core::ifl::IflConfig;

/// Every key a config file may set. Section headers in INI files are
/// accepted but do not namespace keys.
pub const KNOWN_KEYS: &[&str] = &[
    // global
    "seed",
    "threads",
    "out",
    // IFL
    "estimator",
    "nu",
    "weight_floor",
    "n_lambda",
    "lambda_ratio",
    "tol",
    "max_iter",
    "ridge_scale",
    "standardize",
    "max_df_fraction",
    "break_threshold",
    "max_outer",
    "penalize_levels_in_step1",
    // genLASSO
    "gamma_mix",
    "rho",
    "adapt_rho",
    "admm_tol",
    "admm_max_iter",
    "genlasso_n_lambda",
    "genlasso_lambda_ratio",
    "fuse_tol",
    "genlasso_max_df_fraction",
    // simulation grid
    "grid",
    "n_reps",
    "estimators",
    "n_per_regime",
    "p",
    "q",
    "n_regimes",
    "noise_sd",
    "coef_low",
    "coef_high",
    // portfolio
    "prices",
    "synth",
    "reference_shape",
    "per_regime",
    "assets",
    "periods",
    "weights",
    "breaks",
    "drift",
    "volatility",
    "observation_noise",
    "initial_value",
    // bench
    "bench_reps",
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Loads `path`: JSON when the extension is `.json`, INI otherwise.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json(&text)
        } else {
            Self::from_ini(&text)
        }
    }

    pub fn from_ini(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError(format!("config line {}: expected key = value", i + 1))
            })?;
            out.set(key.trim(), value.trim().trim_matches('"'))
                .map_err(|e| ConfigError(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(out)
    }

    /// A flat JSON object; arrays become comma-separated lists and nested
    /// arrays (weight vectors) are separated by `;`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ConfigError(format!("config JSON: {e}")))?;
        let object = value
            .as_object()
            .ok_or_else(|| ConfigError("config JSON must be an object".into()))?;
        let mut out = Self::default();
        for (key, v) in object {
            out.set(
                key,
                &json_scalar(v).map_err(|e| ConfigError(format!("config key `{key}`: {e}")))?,
            )?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.contains(&key) {
            return Err(ConfigError(format!("unknown config key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Applies `key=value` overrides.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("`--set {pair}`: expected key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| ConfigError(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key).map(str::to_ascii_lowercase).as_deref() {
            None => Ok(false),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(ConfigError(format!(
                "config key `{key}`: `{v}` is not a boolean"
            ))),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| ConfigError(format!("config key `{key}`: cannot parse list `{v}`"))),
        }
    }

    /// `a,b,c;d,e` → `[[a, b, c], [d, e]]`.
    pub fn nested_list(&self, key: &str) -> Result<Option<Vec<Vec<f64>>>> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(';')
                .map(|group| group.split(',').map(|s| s.trim().parse::<f64>()).collect())
                .collect::<std::result::Result<Vec<Vec<f64>>, _>>()
                .map(Some)
                .map_err(|_| ConfigError(format!("config key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn ifl_config(&self) -> Result<IflConfig> {
        let mut c = IflConfig::default();
        let s = &mut c.solver;
        s.nu = self.get_or("nu", s.nu)?;
        s.weight_floor = self.get_or("weight_floor", s.weight_floor)?;
        s.n_lambda = self.get_or("n_lambda", s.n_lambda)?;
        s.lambda_ratio = self.get_or("lambda_ratio", s.lambda_ratio)?;
        s.tol = self.get_or("tol", s.tol)?;
        s.max_iter = self.get_or("max_iter", s.max_iter)?;
        s.ridge_scale = self.get_or("ridge_scale", s.ridge_scale)?;
        s.standardize = self.get_or("standardize", s.standardize)?;
        s.max_df_fraction = self.get_or("max_df_fraction", s.max_df_fraction)?;
        c.break_threshold = self.get_or("break_threshold", c.break_threshold)?;
        c.max_outer = self.get_or("max_outer", c.max_outer)?;
        c.penalize_levels_in_step1 =
            self.get_or("penalize_levels_in_step1", c.penalize_levels_in_step1)?;
        c.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(c)
    }

    pub fn genlasso_config(&self) -> Result<GenLassoConfig> {
        let mut c = GenLassoConfig::default();
        c.gamma_mix = self.get_or("gamma_mix", c.gamma_mix)?;
        c.rho = self.get_or("rho", c.rho)?;
        c.adapt_rho = self.get_or("adapt_rho", c.adapt_rho)?;
        c.tol = self.get_or("admm_tol", c.tol)?;
        c.max_iter = self.get_or("admm_max_iter", c.max_iter)?;
        c.n_lambda = self.get_or("genlasso_n_lambda", c.n_lambda)?;
        c.lambda_ratio = self.get_or("genlasso_lambda_ratio", c.lambda_ratio)?;
        c.fuse_tol = self.get_or("fuse_tol", c.fuse_tol)?;
        c.max_df_fraction = self.get_or("genlasso_max_df_fraction", c.max_df_fraction)?;
        if !(0.0..=1.0).contains(&c.gamma_mix) {
            return Err(ConfigError(format!(
                "gamma_mix must lie in [0, 1], got {}",
                c.gamma_mix
            )));
        }
        Ok(c)
    }
}

fn json_scalar(v: &serde_json::Value) -> std::result::Result<String, String> {
    use serde_json::Value;
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => {
            let nested = items.iter().any(Value::is_array);
            let parts = items
                .iter()
                .map(json_scalar)
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Ok(parts.join(if nested { ";" } else { "," }))
        }
        Value::Null => Err("null is not a value".into()),
        Value::Object(_) => Err("nested objects are not supported".into()),
    }
}
