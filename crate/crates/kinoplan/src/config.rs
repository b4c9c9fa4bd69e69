//! Flat key-value experiment configuration: one `key = value` per line,
//! `#` starts a comment, list values are comma-separated. Numeric lists
//! also accept the shorthands `even:N` (N equally spaced angles in
//! [0, 2*pi)) and `lin:lo,hi,N` (N equally spaced values in [lo, hi]).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geometry::TWO_PI;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {reason}")]
    BadValue { key: String, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl Config {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Config, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Malformed {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            values.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config {
            values,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Config::parse(&text, &base)
    }

    /// Override or add a value (CLI flags layer on top of the file).
    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn opt_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str(&self, key: &str) -> Result<&str, ConfigError> {
        self.opt_str(key)
            .ok_or_else(|| ConfigError::Missing(key.to_string()))
    }

    /// Paths are resolved relative to the config file's directory.
    pub fn path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        Ok(self.resolve(self.str(key)?))
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.opt_str(key).map(|s| self.resolve(s))
    }

    fn resolve(&self, s: &str) -> PathBuf {
        let p = Path::new(s);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        self.str(key)?.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("`{}` is not a number", self.values[key]),
        })
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.opt_str(key) {
            None => Ok(None),
            Some(_) => self.f64(key).map(Some),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.str(key)?.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("`{}` is not a nonnegative integer", self.values[key]),
        })
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.opt_str(key) {
            None => Ok(None),
            Some(_) => self.usize(key).map(Some),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.str(key)?.parse().map_err(|_| ConfigError::BadValue {
            key: key.to_string(),
            reason: format!("`{}` is not a nonnegative integer", self.values[key]),
        })
    }

    pub fn opt_u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.opt_str(key) {
            None => Ok(None),
            Some(_) => self.u64(key).map(Some),
        }
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let raw = self.str(key)?;
        expand_list(raw).map_err(|reason| ConfigError::BadValue {
            key: key.to_string(),
            reason,
        })
    }

    pub fn opt_list_f64(&self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.opt_str(key) {
            None => Ok(None),
            Some(_) => self.list_f64(key).map(Some),
        }
    }

    pub fn list_u64(&self, key: &str) -> Result<Vec<u64>, ConfigError> {
        self.str(key)?
            .split(',')
            .map(|t| {
                t.trim().parse().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    reason: format!("`{t}` is not a nonnegative integer"),
                })
            })
            .collect()
    }

    pub fn opt_list_u64(&self, key: &str) -> Result<Option<Vec<u64>>, ConfigError> {
        match self.opt_str(key) {
            None => Ok(None),
            Some(_) => self.list_u64(key).map(Some),
        }
    }
}

fn expand_list(raw: &str) -> Result<Vec<f64>, String> {
    if let Some(n) = raw.strip_prefix("even:") {
        let n: usize = n
            .trim()
            .parse()
            .map_err(|_| format!("`{raw}`: count is not an integer"))?;
        if n == 0 {
            return Err("`even:` count must be positive".into());
        }
        return Ok((0..n).map(|i| i as f64 * TWO_PI / n as f64).collect());
    }
    if let Some(spec) = raw.strip_prefix("lin:") {
        let parts: Vec<&str> = spec.split(',').map(|s| s.trim()).collect();
        if parts.len() != 3 {
            return Err(format!("`{raw}`: expected lin:lo,hi,count"));
        }
        let lo: f64 = parts[0].parse().map_err(|_| format!("`{raw}`: bad lower bound"))?;
        let hi: f64 = parts[1].parse().map_err(|_| format!("`{raw}`: bad upper bound"))?;
        let n: usize = parts[2].parse().map_err(|_| format!("`{raw}`: bad count"))?;
        if n < 2 {
            return Err("`lin:` count must be at least 2".into());
        }
        return Ok((0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect());
    }
    raw.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn parse_basics() {
        let cfg = Config::parse(
            "# comment\nstep = 0.5\nseeds = 1,2,3\nname = fixture # trailing\n\n",
            Path::new("/tmp"),
        )
        .unwrap();
        assert_eq!(cfg.f64("step").unwrap(), 0.5);
        assert_eq!(cfg.list_u64("seeds").unwrap(), vec![1, 2, 3]);
        assert_eq!(cfg.str("name").unwrap(), "fixture");
        assert!(matches!(cfg.str("absent"), Err(ConfigError::Missing(_))));
    }

    #[test]
    fn parse_rejects_bare_words() {
        assert!(matches!(
            Config::parse("not a pair\n", Path::new(".")),
            Err(ConfigError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn expand_even_orientations() {
        let cfg = Config::parse("orientations = even:8\n", Path::new(".")).unwrap();
        let v = cfg.list_f64("orientations").unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v[0], 0.0);
        assert!((v[2] - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn expand_linspace() {
        let cfg = Config::parse("velocities = lin:0,4,5\n", Path::new(".")).unwrap();
        assert_eq!(cfg.list_f64("velocities").unwrap(), vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = Config::parse("map = maps/a.txt\n", Path::new("/root/x")).unwrap();
        assert_eq!(cfg.path("map").unwrap(), PathBuf::from("/root/x/maps/a.txt"));
    }
}
