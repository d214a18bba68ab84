//! Run configuration: every hyperparameter plus paths and run options, read
//! from `key = value` lines with `#` comments.

use std::path::PathBuf;

use crate::corpus::TagSchema;
use crate::metrics::Granularity;
use crate::params::{Hyperparams, HYPER_KEYS};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
}

/// Tag inventory to use; `Auto` picks the qualifier schema when the
/// training corpus contains qualifier tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TagsetChoice {
    #[default]
    Auto,
    Fixed(TagSchema),
}

/// Path-valued keys.
pub const PATH_KEYS: &[&str] = &[
    "train_path",
    "dev_path",
    "test_path",
    "embeddings_path",
    "checkpoint_path",
    "output_path",
    "log_path",
];

/// Non-hyperparameter option keys.
pub const OPTION_KEYS: &[&str] = &["tagset", "granularity", "kfold"];

/// Unwraps a path that the current command needs.
pub fn required<'a>(key: &'static str, value: &'a Option<PathBuf>) -> Result<&'a PathBuf, ConfigError> {
    value.as_ref().ok_or(ConfigError::Missing(key))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub hyper: Hyperparams,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub output_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    pub tagset: TagsetChoice,
    pub granularity: Granularity,
    pub kfold: Option<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hyper: Hyperparams::default(),
            train_path: None,
            dev_path: None,
            test_path: None,
            embeddings_path: None,
            checkpoint_path: None,
            output_path: None,
            log_path: None,
            tagset: TagsetChoice::Auto,
            granularity: Granularity::Class,
            kfold: None,
        }
    }
}

/// `out` is accepted as a short form of `output_path`.
fn canonical(key: &str) -> &str {
    match key {
        "out" => "output_path",
        other => other,
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = canonical(key.trim());
        let value = value.trim();
        let bad = |message: String| ConfigError::BadValue {
            key: key.to_string(),
            message,
        };
        if HYPER_KEYS.contains(&key) {
            return self.hyper.set(key, value).map_err(bad);
        }
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key {
            "train_path" => self.train_path = path(),
            "dev_path" => self.dev_path = path(),
            "test_path" => self.test_path = path(),
            "embeddings_path" => self.embeddings_path = path(),
            "checkpoint_path" => self.checkpoint_path = path(),
            "output_path" => self.output_path = path(),
            "log_path" => self.log_path = path(),
            "tagset" => {
                self.tagset = match value {
                    "auto" => TagsetChoice::Auto,
                    other => TagsetChoice::Fixed(
                        TagSchema::parse(other).ok_or_else(|| bad("expected auto, basic or qualifier".into()))?,
                    ),
                }
            }
            "granularity" => {
                self.granularity = Granularity::parse(value).ok_or_else(|| bad("expected class or tag".into()))?
            }
            "kfold" => {
                let k: usize = value.parse().map_err(|_| bad(format!("{value:?} is not a count")))?;
                if k < 2 {
                    return Err(bad("need at least 2 folds".into()));
                }
                self.kfold = Some(k);
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Applies every line of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, found {line:?}"),
            })?;
            self.set(k, v).map_err(|e| match e {
                ConfigError::BadValue { .. } | ConfigError::UnknownKey(_) => ConfigError::Syntax {
                    line: i + 1,
                    message: e.to_string(),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.hyper.validate().map_err(|message| ConfigError::BadValue {
            key: "hyperparameters".into(),
            message,
        })
    }

    /// Full configuration as text that [`Config::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = self.hyper.to_text();
        let paths = [
            ("train_path", &self.train_path),
            ("dev_path", &self.dev_path),
            ("test_path", &self.test_path),
            ("embeddings_path", &self.embeddings_path),
            ("checkpoint_path", &self.checkpoint_path),
            ("output_path", &self.output_path),
            ("log_path", &self.log_path),
        ];
        for (k, v) in paths {
            if let Some(p) = v {
                out.push_str(&format!("{k} = {}\n", p.display()));
            }
        }
        let tagset = match self.tagset {
            TagsetChoice::Auto => "auto",
            TagsetChoice::Fixed(s) => s.name(),
        };
        out.push_str(&format!("tagset = {tagset}\n"));
        let granularity = match self.granularity {
            Granularity::Class => "class",
            Granularity::Tag => "tag",
        };
        out.push_str(&format!("granularity = {granularity}\n"));
        if let Some(k) = self.kfold {
            out.push_str(&format!("kfold = {k}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let c = Config::parse("# run\nseed = 7  # trailing\n\neta=0\ntrain_path = data/train.tsv\nout = m.json\ntagset = qualifier\nkfold = 10\n").unwrap();
        assert_eq!(c.hyper.seed, 7);
        assert_eq!(c.hyper.eta, 0.0);
        assert_eq!(c.train_path, Some(PathBuf::from("data/train.tsv")));
        assert_eq!(c.output_path, Some(PathBuf::from("m.json")));
        assert_eq!(c.tagset, TagsetChoice::Fixed(TagSchema::Qualifier));
        assert_eq!(c.kfold, Some(10));
    }

    #[test]
    fn unknown_key_is_rejected() {
        let e = Config::parse("seed = 1\nlearning_rat = 0.1\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::Syntax {
                line: 2,
                message: "unknown config key `learning_rat`".into()
            }
        );
        assert!(matches!(Config::parse("seed 1\n"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(Config::parse("kfold = 1\n").is_err());
        assert!(Config::parse("granularity = span\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut c = Config::parse("beta = 2.5\ndev_path = d.tsv\ngranularity = tag\n").unwrap();
        c.kfold = Some(3);
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn missing_path_names_key() {
        let c = Config::default();
        let e = required("train_path", &c.train_path).unwrap_err();
        assert_eq!(e.to_string(), "missing required key `train_path`");
    }
}
