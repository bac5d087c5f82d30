//! Experiment configuration: a single JSON document.

use std::path::{Path, PathBuf};

use graphdefense_core::attack::EditMode;
use graphdefense_core::defense::{DefenseConfig, Generator};
use graphdefense_core::eval::ImprovementMode;
use graphdefense_core::graph::{generate_synthetic, Normalization};
use graphdefense_core::sage::SageConfig;
use graphdefense_core::{SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::read_to_string;
use crate::io::{load_graph, load_linqs, Dataset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Edge file plus feature file in the native text format.
    Files {
        edges: PathBuf,
        features: PathBuf,
    },
    /// A LINQS citation distribution (`.content` and `.cites`).
    Linqs {
        content: PathBuf,
        cites: PathBuf,
    },
    Synthetic {
        spec: SyntheticSpec,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Files { edges, features } => load_graph(edges, features),
            DatasetSource::Linqs { content, cites } => Ok(load_linqs(content, cites)?.0),
            DatasetSource::Synthetic { spec } => Ok(Dataset::from_graph(generate_synthetic(spec)?)),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSource::Files { edges, features } => {
                fix(edges);
                fix(features);
            }
            DatasetSource::Linqs { content, cites } => {
                fix(content);
                fix(cites);
            }
            DatasetSource::Synthetic { .. } => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.15,
            validation_fraction: 0.35,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Gcn,
    /// Sampled-neighborhood mean aggregator.
    Sage,
}

impl ModelKind {
    pub fn normalization(self) -> Normalization {
        match self {
            ModelKind::Gcn => Normalization::Symmetric,
            ModelKind::Sage => Normalization::Mean,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    #[default]
    Continuous,
    Discrete,
    Features,
    DropEdges,
}

impl GeneratorKind {
    /// The adversarial generator, or `None` for the drop-edges baseline.
    pub fn generator(self) -> Option<Generator> {
        match self {
            GeneratorKind::Continuous => Some(Generator::Continuous),
            GeneratorKind::Discrete => Some(Generator::Discrete),
            GeneratorKind::Features => Some(Generator::Features),
            GeneratorKind::DropEdges => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GeneratorKind::Continuous => "continuous",
            GeneratorKind::Discrete => "discrete",
            GeneratorKind::Features => "features",
            GeneratorKind::DropEdges => "drop-edges",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Edge-flip budgets; must start at 0 and increase strictly.
    pub budgets: Vec<usize>,
    /// Targets per group, drawn from the test set.
    pub group_size: usize,
    pub groups: usize,
    pub seed: u64,
    pub mode: EditMode,
    /// Also run one-flip attacks against individual targets.
    pub single_node: bool,
    pub single_node_targets: usize,
    pub improvement: ImprovementMode,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budgets: vec![0, 20, 40, 60, 80, 100],
            group_size: 100,
            groups: 1,
            seed: 0,
            mode: EditMode::Both,
            single_node: false,
            single_node_targets: 500,
            improvement: ImprovementMode::Ratio,
        }
    }
}

/// Cartesian grid of defense settings; an empty axis yields no points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "over", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepGrid {
    Groups {
        adv_group_sizes: Vec<usize>,
        clean_group_sizes: Vec<usize>,
    },
    Hyper {
        alphas: Vec<f64>,
        betas: Vec<f64>,
        epsilons: Vec<f64>,
    },
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid::Groups {
            adv_group_sizes: Vec::new(),
            clean_group_sizes: Vec::new(),
        }
    }
}

impl SweepGrid {
    /// Every grid point applied to `base`, in row-major axis order.
    pub fn points(&self, base: &DefenseConfig) -> Vec<DefenseConfig> {
        let mut out = Vec::new();
        match self {
            SweepGrid::Groups {
                adv_group_sizes,
                clean_group_sizes,
            } => {
                for &adv in adv_group_sizes {
                    for &clean in clean_group_sizes {
                        out.push(DefenseConfig {
                            adv_group_size: adv,
                            clean_group_size: clean,
                            ..base.clone()
                        });
                    }
                }
            }
            SweepGrid::Hyper {
                alphas,
                betas,
                epsilons,
            } => {
                for &alpha in alphas {
                    for &beta in betas {
                        for &epsilon in epsilons {
                            out.push(DefenseConfig {
                                alpha,
                                beta,
                                epsilon,
                                inner_step_size: epsilon / 10.0,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sage: SageConfig,
    #[serde(default)]
    pub defense: DefenseConfig,
    #[serde(default)]
    pub generator: GeneratorKind,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a config file. Relative dataset paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path).map_err(|e| match e {
            Error::Io { path, source } => {
                Error::Config(format!("cannot read {}: {source}", path.display()))
            }
            other => other,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| Error::ConfigFile {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset.resolve(base);
        if let Some(out) = cfg.output.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    /// `--seed` replaces every run seed (split, training, defense and
    /// attack sampling); a synthetic dataset keeps its own seed.
    pub fn apply_overrides(&mut self, seed: Option<u64>, generator: Option<GeneratorKind>) {
        if let Some(s) = seed {
            self.split.seed = s;
            self.train.seed = s;
            self.sage.seed = s;
            self.defense.seed = s;
            self.attack.seed = s;
        }
        if let Some(g) = generator {
            self.generator = g;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.split;
        if !(s.train_fraction > 0.0
            && s.validation_fraction > 0.0
            && s.train_fraction + s.validation_fraction < 1.0)
        {
            return Err(Error::Config(
                "split fractions must be positive and sum to less than 1".into(),
            ));
        }
        if let DatasetSource::Synthetic { spec } = &self.dataset {
            spec.validate()?;
        }
        match self.model {
            ModelKind::Gcn => self.train.validate()?,
            ModelKind::Sage => self.sage.validate()?,
        }
        self.defense.validate()?;
        if self.model == ModelKind::Sage && self.generator == GeneratorKind::Discrete {
            return Err(Error::Config(
                "the sage model does not support the discrete generator".into(),
            ));
        }
        let a = &self.attack;
        if a.budgets.first() != Some(&0) || a.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "attack budgets must start at 0 and increase strictly".into(),
            ));
        }
        if a.group_size == 0 || a.groups == 0 {
            return Err(Error::Config(
                "attack needs at least one group of at least one node".into(),
            ));
        }
        if a.single_node && a.single_node_targets == 0 {
            return Err(Error::Config(
                "single-node attack needs at least one target".into(),
            ));
        }
        Ok(())
    }

    /// The config as echoed next to the outputs, without the output path.
    pub fn effective(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.output = None;
        serde_json::to_value(&c).expect("config serializes")
    }
}
