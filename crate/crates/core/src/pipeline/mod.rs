//! Staged pipeline with content-hashed artifacts.
//!
//! Each stage reads named artifacts from the output directory, writes its
//! own, and is recorded in `manifest.json` with the hashes of its inputs,
//! parameters and outputs. A stage whose record still matches is reused.

mod config;
mod io;
mod manifest;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{
    CoarseConfig, ImpactConfig, ModesConfig, PipelineConfig, SessionConfig, Stage, StabilityConfig, StageToggles,
    VarConfig,
};
pub use io::{read_records, read_tprime, write_records, write_tprime};
pub use manifest::{sha256_bytes, sha256_file, Manifest, StageRecord, MANIFEST};
pub use report::emit_report;
pub use stages::{ImpactSummary, StabilityArtifact, VarSummary};

pub mod artifact {
    pub const TAPE: &str = "tape.csv";
    pub const RECORDS: &str = "records.csv";
    pub const COARSE: &str = "coarse.json";
    pub const BINNED: &str = "binned.csv";
    pub const TPRIME: &str = "tprime.csv";
    pub const SIDECAR: &str = "preprocess.json";
    pub const BASIS: &str = "basis.json";
    pub const MODES: &str = "modes.csv";
    pub const MODELS: &str = "models.json";
    pub const SCORES: &str = "scores.csv";
    pub const VAR: &str = "var.json";
    pub const STABILITY: &str = "stability.json";
    pub const GAMMA: &str = "gamma.csv";
    pub const CURVES: &str = "curves.csv";
    pub const SCALING: &str = "scaling.json";
    pub const IMPACT: &str = "impact.csv";
    pub const IMPACT_SUMMARY: &str = "impact.json";
    pub const REPORT: &str = "report.txt";
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage}: missing dependency {artifact}")]
    MissingDependency { stage: &'static str, artifact: String },
    #[error("stage {stage}: {message}")]
    Data { stage: &'static str, message: String },
    #[error("stage {stage}: numerical failure: {message}")]
    Numerical { stage: &'static str, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::MissingDependency { .. } => 2,
            PipelineError::Data { .. } | PipelineError::Io { .. } => 3,
            PipelineError::Numerical { .. } => 4,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn data(stage: Stage, e: impl std::fmt::Display) -> Self {
        PipelineError::Data {
            stage: stage.name(),
            message: e.to_string(),
        }
    }

    pub(crate) fn numerical(stage: Stage, e: impl std::fmt::Display) -> Self {
        PipelineError::Numerical {
            stage: stage.name(),
            message: e.to_string(),
        }
    }
}

/// Alternative locations for named artifacts (command-line `--model` etc.).
pub type PathOverrides = BTreeMap<String, PathBuf>;

pub struct Runner<'a> {
    pub cfg: &'a PipelineConfig,
    pub dir: PathBuf,
    pub overrides: PathOverrides,
    previous: Option<Manifest>,
    pub manifest: Manifest,
    /// Stages skipped because their recorded artifacts were still valid.
    pub reused: Vec<Stage>,
}

impl<'a> Runner<'a> {
    pub fn new(cfg: &'a PipelineConfig, overrides: PathOverrides) -> Result<Self, PipelineError> {
        let dir = cfg.out_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        let previous = Manifest::load(&dir)?;
        Ok(Self {
            cfg,
            dir,
            overrides,
            previous,
            manifest: Manifest::new(cfg.echo()),
            reused: Vec::new(),
        })
    }

    /// Keeps the records of stages not run this time (single-stage commands).
    pub fn carry_over_previous(&mut self) {
        if let Some(prev) = &self.previous {
            for (name, rec) in &prev.stages {
                self.manifest.record(name, rec.clone());
            }
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.overrides.get(name).cloned().unwrap_or_else(|| self.dir.join(name))
    }

    pub(crate) fn execute(
        &mut self,
        stage: Stage,
        inputs: &[(&str, PathBuf)],
        params: &serde_json::Value,
        outputs: &[&str],
        body: impl FnOnce(&Self) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        let mut hashes = BTreeMap::new();
        for (name, path) in inputs {
            if !path.exists() {
                return Err(PipelineError::MissingDependency {
                    stage: stage.name(),
                    artifact: path.display().to_string(),
                });
            }
            hashes.insert(name.to_string(), sha256_file(path)?);
        }
        let params = sha256_bytes(params.to_string().as_bytes());
        let overridden = outputs.iter().any(|o| self.overrides.contains_key(*o));
        if !overridden {
            if let Some(rec) = self
                .previous
                .as_ref()
                .and_then(|m| m.reusable(stage.name(), &hashes, &params, &self.dir))
            {
                log::info!("{}: inputs unchanged, reusing artifacts", stage.name());
                self.manifest.record(stage.name(), rec);
                self.reused.push(stage);
                return Ok(());
            }
        }
        log::info!("{}: running", stage.name());
        body(self)?;
        let mut out = BTreeMap::new();
        for name in outputs {
            out.insert(name.to_string(), sha256_file(&self.path(name))?);
        }
        self.manifest.record(
            stage.name(),
            StageRecord {
                inputs: hashes,
                params,
                outputs: out,
            },
        );
        Ok(())
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<(), PipelineError> {
        match stage {
            Stage::Synth => stages::synth(self),
            Stage::Coarse => stages::coarse(self),
            Stage::Preprocess => stages::preprocess(self),
            Stage::Modes => stages::modes(self),
            Stage::Var => stages::var(self),
            Stage::Stability => stages::stability(self),
            Stage::Impact => stages::impact(self),
        }
    }

    pub fn save(&self) -> Result<(), PipelineError> {
        self.manifest.save(&self.dir)
    }
}

/// Runs every enabled stage in dependency order and writes the manifest.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, PathOverrides::new())?;
    for stage in Stage::ALL {
        if cfg.stages.enabled(stage) {
            runner.run_stage(stage)?;
        }
    }
    runner.save()?;
    if !runner.manifest.artifacts.is_empty() {
        let text = emit_report(&runner.dir)?;
        let path = runner.dir.join(artifact::REPORT);
        std::fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(runner.manifest)
}

/// Runs one stage regardless of the toggles, keeping other stages' records.
pub fn run_single_stage(cfg: &PipelineConfig, stage: Stage, overrides: PathOverrides) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, overrides)?;
    runner.carry_over_previous();
    runner.run_stage(stage)?;
    runner.save()?;
    Ok(runner.manifest)
}
