//! `dockport simulate`: synthetic dataset generation.

use std::path::{Path, PathBuf};

use dockport::synth::{generate_dataset, DatasetConfig, DatasetSummary};

use crate::error::CliError;
use crate::manifest::{apply_config_file, apply_config_section, config_entries, RunManifest};

pub const RUN_MANIFEST: &str = "run_manifest.txt";

#[derive(Debug, Clone)]
pub struct SimulatePlan {
    pub config: DatasetConfig,
    pub out: PathBuf,
}

impl SimulatePlan {
    pub fn new(config: Option<&Path>, out: PathBuf, seed: Option<u64>, events: bool) -> Result<Self, CliError> {
        let mut cfg = DatasetConfig::default();
        apply_config_file(&mut cfg, config)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.with_events |= events;
        Ok(Self { config: cfg, out })
    }

    pub fn from_manifest(m: &RunManifest, out: Option<PathBuf>) -> Result<Self, CliError> {
        let l = m.lookup();
        let mut cfg = DatasetConfig::default();
        apply_config_section(&mut cfg, &l)?;
        Ok(Self {
            config: cfg,
            out: out.map_or_else(|| l.path("output.dir"), Ok)?,
        })
    }

    pub fn manifest(&self) -> RunManifest {
        let mut e = vec![("output.dir".to_string(), self.out.display().to_string())];
        e.extend(config_entries(&self.config));
        RunManifest::new("simulate", e)
    }

    pub fn run(&self) -> Result<DatasetSummary, CliError> {
        let s = generate_dataset(&self.config, &self.out)?;
        println!(
            "wrote {} frames{} to {}",
            s.frames,
            if self.config.with_events { format!(" and {} events", s.events) } else { String::new() },
            self.out.display()
        );
        Ok(s)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out.join(RUN_MANIFEST)
    }
}
