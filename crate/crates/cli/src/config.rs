use std::path::{Path, PathBuf};

use purs_core::data::{Schema, SplitConfig};
use purs_core::engine::{EvalConfig, TrainConfig, Variant};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the interaction log comes from and how it is cut.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub path: PathBuf,
    pub schema: Schema,
    /// Keep only the first users, in key order, covering this many events.
    pub subset_events: Option<usize>,
    pub split: SplitConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/ml-100k/ml-100k.inter"),
            schema: Schema::ratings(),
            subset_events: None,
            split: SplitConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drives every random choice; copied into the train and eval sections.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub k: Option<usize>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
    /// Value of the output-directory environment variable.
    pub env_out: Option<PathBuf>,
}

fn dotted(path: &serde_path_to_error::Path) -> String {
    path.to_string()
}

/// Parses `text`, reporting every unknown key at once.
pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().replace('\n', " ")))?;
    let mut unknown = Vec::new();
    loop {
        let value = toml::Value::Table(table.clone());
        match serde_path_to_error::deserialize::<_, RunConfig>(value) {
            Ok(cfg) if unknown.is_empty() => return Ok(cfg),
            Ok(_) => {
                return Err(CliError::Config(format!(
                    "unknown keys: {}",
                    unknown.join(", ")
                )));
            }
            Err(err) => {
                let msg = err.inner().to_string();
                let Some(key) = msg
                    .strip_prefix("unknown field `")
                    .and_then(|rest| rest.split('`').next())
                    .map(str::to_owned)
                else {
                    return Err(CliError::Config(format!("{}: {msg}", dotted(err.path()))));
                };
                let parent: Vec<String> = err
                    .path()
                    .iter()
                    .map(|seg| seg.to_string())
                    .filter(|s| s != &key)
                    .collect();
                let full = parent
                    .iter()
                    .cloned()
                    .chain([key.clone()])
                    .collect::<Vec<_>>()
                    .join(".");
                if !remove(&mut table, &parent, &key) || unknown.contains(&full) {
                    return Err(CliError::Config(format!("unknown key: {full}")));
                }
                unknown.push(full);
            }
        }
    }
}

fn remove(table: &mut toml::Table, parent: &[String], key: &str) -> bool {
    let mut cur = table;
    for seg in parent {
        match cur.get_mut(seg) {
            Some(toml::Value::Table(t)) => cur = t,
            _ => return false,
        }
    }
    cur.remove(key).is_some()
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse(&text)
        }
    }
}

impl RunConfig {
    /// Applies overrides (flag, then environment, then file for the output
    /// directory) and propagates the seed.
    pub fn resolve(mut self, o: &Overrides) -> Result<Self, CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.variant {
            self.train.variant = v;
        }
        if let Some(k) = o.k {
            self.eval.k = k;
        }
        if let Some(e) = o.epochs {
            self.train.epochs = e;
        }
        if let Some(out) = o.out.clone().or_else(|| o.env_out.clone()) {
            self.out_dir = out;
        }
        self.train.seed = self.seed;
        self.eval.seed = self.seed;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if self.eval.k == 0 {
            return Err(CliError::Config("eval.k must be positive".into()));
        }
        Ok(self)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_unknown_key_is_listed() {
        let err =
            parse("seed = 1\nbogus = 2\n[train]\nepochs = 3\nlr = 0.1\n[train.model]\nwidth = 4\n")
                .unwrap_err()
                .to_string();
        for key in ["bogus", "train.lr", "train.model.width"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = parse("seed = 4\n[train]\nepochs = 2\nvariant = \"V4_NO_UNEXP\"\n").unwrap();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.variant, Variant::V4NoUnexp);
        assert_eq!(cfg.eval, EvalConfig::default());
    }

    #[test]
    fn flags_beat_environment_beats_file() {
        let base = parse("out_dir = \"from_file\"").unwrap();
        let env = Overrides {
            env_out: Some("from_env".into()),
            ..Overrides::default()
        };
        assert_eq!(
            base.clone().resolve(&env).unwrap().out_dir,
            PathBuf::from("from_env")
        );
        let both = Overrides {
            out: Some("from_flag".into()),
            seed: Some(9),
            ..env
        };
        let r = base.clone().resolve(&both).unwrap();
        assert_eq!(r.out_dir, PathBuf::from("from_flag"));
        assert_eq!((r.train.seed, r.eval.seed), (9, 9));
        assert_eq!(
            base.resolve(&Overrides::default()).unwrap().out_dir,
            PathBuf::from("from_file")
        );
    }

    #[test]
    fn echoed_config_parses_back() {
        let cfg = RunConfig::default().resolve(&Overrides::default()).unwrap();
        assert_eq!(parse(&cfg.to_toml()).unwrap(), cfg);
    }
}
