#![allow(dead_code)]

use std::path::PathBuf;

use prer::ExperimentConfig;

pub fn repo_config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// The desk blobs config shipped in `configs/`.
pub fn blobs() -> ExperimentConfig {
    ExperimentConfig::load(&repo_config("blobs.toml")).unwrap()
}

/// A smaller stream and shorter training for plumbing tests.
pub fn tiny() -> ExperimentConfig {
    let mut cfg = blobs();
    cfg.dataset = "blobs:classes=6,dim=6,sep=4,per_class=40".into();
    cfg.train.classifier_epochs = 5;
    cfg.train.max_epochs = 10;
    cfg.train.memory_size = 30;
    cfg.flow_blocks = 2;
    cfg
}
