//! Experiment configuration: a flat TOML document. Every key is optional;
//! see `configs/` for annotated examples.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use prer_core::model::{Conditioning, EncoderSpec, ModelConfig};
use prer_core::pipeline::{FlowTopology, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetSpec;
use crate::error::{io, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// `blobs:...`, `mnist:DIR` or `idx:images=PATH,labels=PATH`.
    pub dataset: String,
    pub classes_per_task: usize,
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    pub conditioning: Conditioning,
    pub out_dir: PathBuf,

    pub encoder: EncoderKind,
    /// Hidden widths of the MLP backbone.
    pub encoder_hidden: Vec<usize>,
    /// Channels of the convolutional backbone.
    pub encoder_channels: Vec<usize>,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,
    pub class_embedding: usize,
    pub recon_embedding: usize,
    pub head_hidden: Vec<usize>,
    pub head_dropout: f64,
    pub decoder_hidden: Vec<usize>,

    pub flow_levels: usize,
    pub flow_blocks: usize,
    pub flow_hidden_multiplier: usize,
    /// Reject topologies outside L ∈ 1..=3, B ∈ 5..=10.
    pub enforce_topology_bounds: bool,

    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::mlp(&[1], 1);
        let hidden = match model.encoder {
            EncoderSpec::Mlp { hidden } => hidden,
            EncoderSpec::Conv { .. } => unreachable!(),
        };
        let topology = FlowTopology::default();
        Self {
            dataset: "blobs:classes=10,dim=20,sep=2.5".into(),
            classes_per_task: 2,
            strategy: Strategy::Prer,
            seeds: (1..=5).collect(),
            conditioning: model.conditioning,
            out_dir: PathBuf::from("results"),
            encoder: EncoderKind::Mlp,
            encoder_hidden: hidden,
            encoder_channels: vec![16, 32],
            encoder_kernel: 3,
            encoder_stride: 2,
            class_embedding: model.class_embedding,
            recon_embedding: model.recon_embedding,
            head_hidden: model.head_hidden,
            head_dropout: model.head_dropout,
            decoder_hidden: model.decoder_hidden,
            flow_levels: topology.levels,
            flow_blocks: topology.blocks,
            flow_hidden_multiplier: topology.hidden_multiplier,
            enforce_topology_bounds: true,
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        let known = known_keys();
        let unknown: Vec<&String> = table.keys().filter(|k| !known.contains(k.as_str())).collect();
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("unknown keys {unknown:?}")));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset_spec()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(CliError::Config(format!("seeds {:?} repeat", self.seeds)));
        }
        if self.classes_per_task < 2 {
            return Err(CliError::Config("classes_per_task must be at least 2".into()));
        }
        if self.enforce_topology_bounds
            && !((1..=3).contains(&self.flow_levels) && (5..=10).contains(&self.flow_blocks))
        {
            return Err(CliError::Config(format!(
                "flow topology L={} B={} is outside L in 1..=3, B in 5..=10; set enforce_topology_bounds = false to allow it",
                self.flow_levels, self.flow_blocks
            )));
        }
        if self.flow_hidden_multiplier == 0 {
            return Err(CliError::Config("flow_hidden_multiplier must be positive".into()));
        }
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        self.dataset.parse()
    }

    pub fn topology(&self) -> FlowTopology {
        FlowTopology {
            levels: self.flow_levels,
            blocks: self.flow_blocks,
            hidden_multiplier: self.flow_hidden_multiplier,
        }
    }

    pub fn model(&self, input_shape: &[usize], total_classes: usize) -> ModelConfig {
        let encoder = match self.encoder {
            EncoderKind::Mlp => EncoderSpec::Mlp {
                hidden: self.encoder_hidden.clone(),
            },
            EncoderKind::Conv => EncoderSpec::Conv {
                channels: self.encoder_channels.clone(),
                kernel: self.encoder_kernel,
                stride: self.encoder_stride,
            },
        };
        ModelConfig {
            input_shape: input_shape.to_vec(),
            encoder,
            class_embedding: self.class_embedding,
            recon_embedding: self.recon_embedding,
            head_hidden: self.head_hidden.clone(),
            head_dropout: self.head_dropout,
            decoder_hidden: self.decoder_hidden.clone(),
            total_classes,
            conditioning: self.conditioning,
        }
    }

    /// SHA-256 of everything that influences a run's numbers; seeds and the
    /// output directory are excluded.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.seeds.clear();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("configuration serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn known_keys() -> BTreeSet<String> {
    match toml::Value::try_from(ExperimentConfig::default()) {
        Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
        _ => unreachable!("configuration serializes to a table"),
    }
}
