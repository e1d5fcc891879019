//! Run configuration file for `probebench probe`.

use std::path::{Path, PathBuf};

use probebench::features::SplitRatios;
use probebench::heads::HeadKind;
use probebench::orchestrator::TrainerDefaults;
use probebench::trainer::TRIALS;
use probebench::{Error, Result};
use serde::{Deserialize, Serialize};

/// Directories, relative to the config file unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub features: PathBuf,
    pub manifests: PathBuf,
    pub splits: PathBuf,
    pub out: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            features: "features".into(),
            manifests: "manifests".into(),
            splits: "splits".into(),
            out: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub datasets: Vec<String>,
    pub models: Vec<String>,
    pub heads: Vec<HeadKind>,
    /// Also train the aggregation head on each (model, dataset).
    #[serde(default)]
    pub aggregation: bool,
    #[serde(default = "default_ratios")]
    pub ratios: [f64; 3],
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub trainer: TrainerOverrides,
    #[serde(default)]
    pub paths: Paths,
}

fn default_ratios() -> [f64; 3] {
    SplitRatios::STANDARD.as_array()
}

fn default_seeds() -> Vec<u64> {
    TrainerDefaults::default().seeds
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerOverrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub standardize: Option<bool>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.features,
            &mut cfg.paths.manifests,
            &mut cfg.paths.splits,
            &mut cfg.paths.out,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.models.is_empty() {
            return Err(Error::Config(
                "datasets and models must be non-empty".into(),
            ));
        }
        if self.heads.is_empty() && !self.aggregation {
            return Err(Error::Config(
                "nothing to run: no heads and no aggregation".into(),
            ));
        }
        if self.heads.contains(&HeadKind::Aggregate) {
            return Err(Error::Config(
                "heads lists layer probes only; set aggregation = true for the aggregate head"
                    .into(),
            ));
        }
        self.split_ratios()?;
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() || seeds.len() != TRIALS {
            return Err(Error::Config(format!(
                "seeds must be {TRIALS} distinct integers"
            )));
        }
        self.trainer_defaults().validate()
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        let [train, dev, test] = self.ratios;
        SplitRatios::new(train, dev, test)
    }

    pub fn trainer_defaults(&self) -> TrainerDefaults {
        let base = TrainerDefaults::default();
        let t = &self.trainer;
        TrainerDefaults {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            max_epochs: t.max_epochs.unwrap_or(base.max_epochs),
            patience: t.patience.unwrap_or(base.patience),
            standardize: t.standardize.unwrap_or(base.standardize),
            seeds: self.seeds.clone(),
        }
    }

    pub fn manifest_path(&self, dataset: &str) -> PathBuf {
        self.paths.manifests.join(format!("{dataset}.tsv"))
    }

    pub fn split_path(&self, dataset: &str) -> PathBuf {
        self.paths.splits.join(format!("{dataset}.split"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
datasets = ["planted"]
models = ["synthetic"]
heads = ["linear"]
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(cfg.ratios, [0.6, 0.2, 0.2]);
        assert!(!cfg.aggregation);
        assert_eq!(cfg.trainer_defaults(), TrainerDefaults::default());
        assert_eq!(cfg.paths, Paths::default());
    }

    #[test]
    fn overrides_apply() {
        let text = format!("{MINIMAL}\n[trainer]\nmax_epochs = 7\nstandardize = false\n");
        let d = RunConfig::parse(&text).unwrap().trainer_defaults();
        assert_eq!(d.max_epochs, 7);
        assert!(!d.standardize);
        assert_eq!(d.patience, 10);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for bad in [
            format!("{MINIMAL}seeds = [0, 1, 2, 3]\n"),
            format!("{MINIMAL}seeds = [0, 1, 2, 3, 3]\n"),
            format!("{MINIMAL}ratios = [0.5, 0.2, 0.2]\n"),
            format!("{MINIMAL}colour = \"red\"\n"),
            MINIMAL.replace("\"linear\"", "\"aggregate\""),
            MINIMAL.replace("[\"synthetic\"]", "[]"),
            format!("{MINIMAL}[trainer]\nbatch_size = 0\n"),
        ] {
            assert!(RunConfig::parse(&bad).is_err(), "accepted:\n{bad}");
        }
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, MINIMAL).unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.features, dir.path().join("features"));
        assert_eq!(
            cfg.manifest_path("planted"),
            dir.path().join("manifests/planted.tsv")
        );
        assert_eq!(
            cfg.split_path("planted"),
            dir.path().join("splits/planted.split")
        );
    }
}
