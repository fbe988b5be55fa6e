#![allow(dead_code)]

pub mod http;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stressorlens::config::{ConfigSources, PipelineConfig};
use stressorlens::pipeline::{self, Stage};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

/// Fixture configuration pointed at `run_dir`, with extra overrides.
pub fn fixture_config(run_dir: &Path, overrides: &[(&str, &str)]) -> PipelineConfig {
    let mut flags: BTreeMap<String, String> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    flags.insert("run_dir".into(), run_dir.display().to_string());
    ConfigSources::from_file(&fixture_dir().join("stressorlens.ini"))
        .expect("fixture config")
        .with_flags(flags)
        .resolve()
        .expect("fixture config resolves")
}

pub const FULL: [Stage; 6] = [Stage::Ingest, Stage::Train, Stage::ImputeFlairs, Stage::Subset, Stage::LexiconLabel, Stage::Trends];
pub const QUICK: [Stage; 4] = [Stage::Ingest, Stage::Train, Stage::LexiconLabel, Stage::Trends];

pub fn run_stages(cfg: &PipelineConfig, stages: &[Stage]) {
    for stage in stages {
        pipeline::run_stage(cfg, *stage, None).unwrap_or_else(|e| panic!("{}: {e}", stage.name()));
    }
}
