//! Run settings resolved from defaults, a key=value file and command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use puda::{Mode, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid value for `{key}`: {reason}")]
pub struct KeyError {
    pub key: String,
    pub reason: String,
}

impl KeyError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        KeyError {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn missing(key: &str) -> Self {
        KeyError::new(key, "missing required key")
    }
}

/// A training mode plus whether annotated negatives are mixed into the
/// unlabeled slots (written with a trailing `+`, e.g. `puda+`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeSpec {
    pub mode: Mode,
    pub annotated: bool,
}

impl FromStr for ModeSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (base, annotated) = match s.trim().strip_suffix('+') {
            Some(base) => (base, true),
            None => (s.trim(), false),
        };
        Ok(ModeSpec {
            mode: base.parse()?,
            annotated,
        })
    }
}

impl Display for ModeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}{}", self.mode, if self.annotated { "+" } else { "" })
    }
}

impl ModeSpec {
    pub fn label(&self) -> String {
        format!("{}{}", self.mode.label(), if self.annotated { "+" } else { "" })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub annotated: bool,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub negatives: Option<PathBuf>,
    pub force: bool,
    pub workers: usize,
    /// Leave test triples out of the training-time graph so that corruptions
    /// may hit them, as they would hit facts missing from a real graph.
    pub hide_test: bool,
    pub seeds: usize,
    pub modes: Vec<ModeSpec>,
    pub grid: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            train: TrainConfig::default(),
            annotated: false,
            data: None,
            out: None,
            negatives: None,
            force: false,
            workers: 1,
            hide_test: false,
            seeds: 1,
            modes: Mode::ALL
                .iter()
                .map(|&mode| ModeSpec { mode, annotated: false })
                .collect(),
            grid: puda::ablation::PRIOR_GRID.to_vec(),
        }
    }
}

fn parse<T>(key: &str, value: &str) -> Result<T, KeyError>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e: T::Err| KeyError::new(key, format!("{value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, KeyError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(KeyError::new(key, format!("{other:?} is not a boolean"))),
    }
}

fn parse_list<T>(key: &str, value: &str) -> Result<Vec<T>, KeyError>
where
    T: FromStr,
    T::Err: Display,
{
    let items: Vec<T> = value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(KeyError::new(key, "empty list"));
    }
    Ok(items)
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, KeyError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| (i, line.split('#').next().unwrap_or("").trim()))
        .filter(|(_, line)| !line.is_empty())
        .map(|(i, line)| {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| KeyError::new("config", format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim().trim_start_matches("--");
            Ok((key.to_string(), value.trim().to_string()))
        })
        .collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), KeyError> {
        let t = &mut self.train;
        match key {
            "mode" => {
                let spec: ModeSpec = parse(key, value)?;
                t.mode = spec.mode;
                self.annotated = spec.annotated;
            }
            "scoring" => t.scoring = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "dim" => t.dim = parse(key, value)?,
            "n-unlabeled" => t.n_unlabeled = parse(key, value)?,
            "m-synthetic" => t.m_synthetic = parse(key, value)?,
            "pi-p" => t.pi_p = parse(key, value)?,
            "delta" => t.delta = parse(key, value)?,
            "lr-d" => t.lr_d = parse(key, value)?,
            "lr-g" => t.lr_g = parse(key, value)?,
            "l2" => t.l2 = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch-size" => t.batch_size = parse(key, value)?,
            "clamp-policy" => t.clamp_policy = parse(key, value)?,
            "eval-every" => t.eval_every = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "head-prob" => t.head_prob = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "g-steps" => t.g_steps = parse(key, value)?,
            "true-negative-fraction" => t.true_negative_fraction = parse(key, value)?,
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "negatives" => self.negatives = Some(PathBuf::from(value)),
            "force" => self.force = parse_bool(key, value)?,
            "hide-test" => self.hide_test = parse_bool(key, value)?,
            "workers" => {
                self.workers = parse(key, value)?;
                if self.workers == 0 {
                    return Err(KeyError::new(key, "must be at least 1"));
                }
            }
            "seeds" => {
                self.seeds = parse(key, value)?;
                if self.seeds == 0 {
                    return Err(KeyError::new(key, "must be at least 1"));
                }
            }
            "modes" => self.modes = parse_list(key, value)?,
            "grid" => self.grid = parse_list(key, value)?,
            other => return Err(KeyError::new(other, "unknown key")),
        }
        Ok(())
    }

    /// Defaults, then the config file (if any), then flag pairs, then validation.
    pub fn resolve(config_file: Option<&Path>, flags: &[(&str, String)]) -> Result<Self, KeyError> {
        let mut s = Settings::default();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| KeyError::new("config", format!("cannot read {}: {e}", path.display())))?;
            for (key, value) in parse_config_text(&text)? {
                s.set(&key, &value)?;
            }
        }
        for (key, value) in flags {
            s.set(key, value)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), KeyError> {
        self.train.validate().map_err(|e| KeyError::new(e.key, e.reason))?;
        if self.annotated && self.negatives.is_none() {
            return Err(KeyError::new(
                "negatives",
                format!("mode {}+ needs an annotated negatives file", self.train.mode),
            ));
        }
        if let Some(bad) = self.grid.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(KeyError::new(
                "grid",
                format!("prior {bad} must lie strictly between 0 and 1"),
            ));
        }
        Ok(())
    }

    pub fn mode_spec(&self) -> ModeSpec {
        ModeSpec {
            mode: self.train.mode,
            annotated: self.annotated,
        }
    }

    pub fn data_dir(&self) -> Result<&Path, KeyError> {
        self.data.as_deref().ok_or_else(|| KeyError::missing("data"))
    }

    pub fn out_dir(&self) -> Result<&Path, KeyError> {
        self.out.as_deref().ok_or_else(|| KeyError::missing("out"))
    }

    /// Every key with its effective value; feeding this back as a config
    /// file reproduces the settings.
    pub fn resolved(&self) -> BTreeMap<&'static str, String> {
        let t = &self.train;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let join = |v: Vec<String>| v.join(",");
        BTreeMap::from([
            ("mode", self.mode_spec().to_string()),
            ("scoring", t.scoring.as_str().to_string()),
            ("seed", t.seed.to_string()),
            ("dim", t.dim.to_string()),
            ("n-unlabeled", t.n_unlabeled.to_string()),
            ("m-synthetic", t.m_synthetic.to_string()),
            ("pi-p", t.pi_p.to_string()),
            ("delta", t.delta.to_string()),
            ("lr-d", t.lr_d.to_string()),
            ("lr-g", t.lr_g.to_string()),
            ("l2", t.l2.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch-size", t.batch_size.to_string()),
            ("clamp-policy", format!("{:?}", t.clamp_policy).to_lowercase()),
            ("eval-every", t.eval_every.to_string()),
            ("patience", t.patience.to_string()),
            ("head-prob", t.head_prob.to_string()),
            ("dropout", t.dropout.to_string()),
            ("g-steps", t.g_steps.to_string()),
            ("true-negative-fraction", t.true_negative_fraction.to_string()),
            ("data", path(&self.data)),
            ("out", path(&self.out)),
            ("negatives", path(&self.negatives)),
            ("force", self.force.to_string()),
            ("hide-test", self.hide_test.to_string()),
            ("workers", self.workers.to_string()),
            ("seeds", self.seeds.to_string()),
            ("modes", join(self.modes.iter().map(ModeSpec::to_string).collect())),
            ("grid", join(self.grid.iter().map(f64::to_string).collect())),
        ])
    }
}
