use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::impact::MetaorderSide;
use crate::ingest::SessionClock;
use crate::preprocess::PreprocessConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Synth,
    Coarse,
    Preprocess,
    Modes,
    Var,
    Stability,
    Impact,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Synth,
        Stage::Coarse,
        Stage::Preprocess,
        Stage::Modes,
        Stage::Var,
        Stage::Stability,
        Stage::Impact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Coarse => "coarse",
            Stage::Preprocess => "preprocess",
            Stage::Modes => "modes",
            Stage::Var => "var",
            Stage::Stability => "stability",
            Stage::Impact => "impact",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    pub synth: bool,
    pub coarse: bool,
    pub preprocess: bool,
    pub modes: bool,
    pub var: bool,
    pub stability: bool,
    pub impact: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            synth: true,
            coarse: true,
            preprocess: true,
            modes: true,
            var: true,
            stability: true,
            impact: true,
        }
    }
}

impl StageToggles {
    pub fn none() -> Self {
        Self {
            synth: false,
            coarse: false,
            preprocess: false,
            modes: false,
            var: false,
            stability: false,
            impact: false,
        }
    }

    pub fn enabled(&self, s: Stage) -> bool {
        match s {
            Stage::Synth => self.synth,
            Stage::Coarse => self.coarse,
            Stage::Preprocess => self.preprocess,
            Stage::Modes => self.modes,
            Stage::Var => self.var,
            Stage::Stability => self.stability,
            Stage::Impact => self.impact,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Minutes after midnight.
    pub open_minute: u32,
    pub close_minute: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            open_minute: 9 * 60,
            close_minute: 17 * 60 + 30,
        }
    }
}

impl SessionConfig {
    pub fn clock(&self) -> SessionClock {
        const NS: i64 = 60_000_000_000;
        SessionClock {
            open_ns: self.open_minute as i64 * NS,
            close_ns: self.close_minute as i64 * NS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub min_spread: i64,
    /// Lags of the return autocorrelation used for the bin-size diagnostic.
    pub max_lag: usize,
    pub bin_threshold: f64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            min_spread: 1,
            max_lag: 50,
            bin_threshold: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModesConfig {
    pub symmetrize: bool,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self { symmetrize: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VarConfig {
    /// Models are fitted for every lag order 1..=max_lags.
    pub max_lags: usize,
    /// Calibration days. With both counts absent the available days are
    /// split in the proportion 465:80.
    pub train_days: Option<usize>,
    pub test_days: Option<usize>,
    pub robust: bool,
    /// p-value above which Φ entries are blanked in the report.
    pub significance: f64,
    /// Lags of the residual autocorrelation diagnostic.
    pub residual_lags: usize,
}

impl Default for VarConfig {
    fn default() -> Self {
        Self {
            max_lags: 10,
            train_days: None,
            test_days: None,
            robust: false,
            significance: 0.05,
            residual_lags: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityConfig {
    pub max_lags: usize,
    pub gamma_max: f64,
    pub grid: usize,
    pub branches: usize,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            max_lags: 10,
            gamma_max: 1.5,
            grid: 500,
            branches: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactConfig {
    /// Bin sizes of the aggregate-imbalance curves.
    pub curve_sizes: Vec<usize>,
    pub buckets: usize,
    /// Bin size at which the impact map is evaluated; the preprocessing bin when absent.
    pub n: Option<usize>,
    /// Lag order of the simulated model; the largest fitted when absent.
    pub lag: Option<usize>,
    /// Added volume per step; a tenth of the mean binned ask execution flow when absent.
    pub q: Option<f64>,
    pub k: usize,
    pub horizon: usize,
    pub side: MetaorderSide,
    pub stride: Option<usize>,
    pub min_paths: usize,
    pub full_suppression: bool,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        Self {
            curve_sizes: vec![5, 10, 20, 40],
            buckets: 20,
            n: None,
            lag: None,
            q: None,
            k: 4,
            horizon: 40,
            side: MetaorderSide::Buy,
            stride: None,
            min_paths: 100,
            full_suppression: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Overrides `synth.seed`.
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    /// Event tape read by the coarse stage when the synth stage is off.
    pub tape: Option<PathBuf>,
    pub stages: StageToggles,
    pub session: SessionConfig,
    pub synth: SynthConfig,
    pub coarse: CoarseConfig,
    pub preprocess: PreprocessConfig,
    pub modes: ModesConfig,
    pub var: VarConfig,
    pub stability: StabilityConfig,
    pub impact: ImpactConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: None,
            out_dir: PathBuf::from("out"),
            tape: None,
            stages: StageToggles::default(),
            session: SessionConfig::default(),
            synth: SynthConfig::default(),
            coarse: CoarseConfig::default(),
            preprocess: PreprocessConfig::default(),
            modes: ModesConfig::default(),
            var: VarConfig::default(),
            stability: StabilityConfig::default(),
            impact: ImpactConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn synth_config(&self) -> SynthConfig {
        let mut s = self.synth.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.session.close_minute <= self.session.open_minute {
            return bad("session close must follow open".into());
        }
        if self.preprocess.bin == 0 {
            return bad("preprocess.bin must be positive".into());
        }
        if self.var.max_lags == 0 || self.stability.max_lags == 0 {
            return bad("lag counts must be positive".into());
        }
        if self.var.train_days.is_some() != self.var.test_days.is_some() {
            return bad("var.train_days and var.test_days must be given together".into());
        }
        if self.var.train_days == Some(0) {
            return bad("var.train_days must be positive".into());
        }
        if self.impact.horizon <= self.impact.k {
            return bad("impact.horizon must exceed impact.k".into());
        }
        if self.impact.curve_sizes.len() < 2 || self.impact.curve_sizes.contains(&0) {
            return bad("impact.curve_sizes needs at least two positive sizes".into());
        }
        if !(self.stability.gamma_max > 0.0) || self.stability.grid < 2 {
            return bad("stability search interval is empty".into());
        }
        Ok(())
    }

    /// Calibration and evaluation day counts for `available` days.
    pub fn split(&self, available: usize) -> Result<(usize, usize), PipelineError> {
        match (self.var.train_days, self.var.test_days) {
            (Some(a), Some(b)) if a + b == available => Ok((a, b)),
            (Some(a), Some(b)) => Err(PipelineError::Config(format!(
                "var.train_days + var.test_days = {} but {available} days are available",
                a + b
            ))),
            _ => {
                if available == 0 {
                    return Err(PipelineError::Data {
                        stage: "split",
                        message: "no normalised days".into(),
                    });
                }
                let train = ((available as f64) * 465.0 / 545.0).round() as usize;
                let train = train.clamp(1, available);
                Ok((train, available - train))
            }
        }
    }

    /// Copy for the manifest: execution settings that cannot change results are dropped.
    pub fn echo(&self) -> serde_json::Value {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.threads = None;
        c.synth.seed = self.synth_config().seed;
        c.seed = None;
        serde_json::to_value(&c).expect("config serialises")
    }
}
