use std::path::{Path, PathBuf};

use causeway::corpus::CorpusFormat;
use causeway::harness::{Experiment, TrainConfig};
use causeway::knowledge::MiningConfig;
use causeway::model::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Single corpus split by `split` when no explicit parts are given.
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub format: CorpusFormat,
    pub split: [f64; 3],
    /// Word-vector text file for the pretrained adapter.
    pub pretrained: Option<PathBuf>,
    /// Previously mined filter plan; mining is skipped when set.
    pub plan: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            train: None,
            dev: None,
            test: None,
            format: CorpusFormat::Jsonl,
            split: [0.8, 0.1, 0.1],
            pretrained: None,
            plan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seeds: vec![0, 1, 2],
        }
    }
}

/// The single run file: data locations, model, training and mining settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Top-level seed; every stage seed is derived from it.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mining: MiningConfig,
    pub ablation: AblationConfig,
}

impl RunConfig {
    /// Parses TOML, reporting every unknown key at once.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de =
            toml::Deserializer::parse(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let mut unknown = Vec::new();
        let cfg: RunConfig = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
            .map_err(|e| CliError::Config(vec![e.to_string()]))?;
        if !unknown.is_empty() {
            return Err(CliError::Config(
                unknown
                    .into_iter()
                    .map(|k| format!("unknown key `{k}`"))
                    .collect(),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.corpus,
            &mut d.train,
            &mut d.dev,
            &mut d.test,
            &mut d.pretrained,
            &mut d.plan,
            &mut self.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn top_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn experiment(&self) -> Experiment {
        let mut exp = Experiment {
            model: self.model.clone(),
            train: self.train.clone(),
            mining: self.mining.clone(),
        };
        exp.train.seed = self.top_seed();
        exp
    }

    /// Every configuration problem, including missing input files.
    pub fn validate(&self, needs_data: bool) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(format!("model: {e}"));
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("train: {e}"));
        }
        let d = &self.data;
        let parts = [&d.train, &d.dev, &d.test];
        if needs_data {
            let explicit = parts.iter().filter(|p| p.is_some()).count();
            if d.corpus.is_none() && explicit < 3 {
                problems.push("data: give `corpus` or all of `train`, `dev`, `test`".into());
            }
            if d.corpus.is_some() && explicit > 0 {
                problems.push("data: `corpus` and explicit train/dev/test are exclusive".into());
            }
        }
        for (name, p) in [
            ("corpus", &d.corpus),
            ("train", &d.train),
            ("dev", &d.dev),
            ("test", &d.test),
            ("pretrained", &d.pretrained),
            ("plan", &d.plan),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    problems.push(format!("data.{name}: {} does not exist", p.display()));
                }
            }
        }
        if self.train.use_pretrained_encoder && d.pretrained.is_none() {
            problems.push("train.use_pretrained_encoder needs data.pretrained".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_unknown_key_is_listed() {
        let err = RunConfig::parse("sed = 1\n[model]\nembed = 3\n[train]\nepochs = 2\nlr = 1.0\n")
            .unwrap_err();
        match err {
            CliError::Config(keys) => {
                assert_eq!(keys.len(), 3, "{keys:?}");
                assert!(keys.iter().any(|k| k.contains("model.embed")));
                assert!(keys.iter().any(|k| k.contains("train.lr")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_values_parse() {
        let cfg = RunConfig::parse(
            "seed = 4\n[data]\nformat = \"conll-tsv\"\nsplit = [0.6, 0.2, 0.2]\n[model]\nwindows = [1, 2]\n",
        )
        .unwrap();
        assert_eq!(cfg.top_seed(), 4);
        assert_eq!(cfg.data.format, CorpusFormat::ConllTsv);
        assert_eq!(cfg.model.windows, vec![1, 2]);
    }
}
