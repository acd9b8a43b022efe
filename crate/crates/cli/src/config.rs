//! Experiment configuration, seed streams and output layout.

use std::path::{Path, PathBuf};

use dsf_core::dsf::LatentDppConfig;
use dsf_core::io::read_to_string;
use dsf_core::seeding::derive_seed;
use dsf_core::{CvaeConfig, DsfTrainConfig, Error, Result, ScenarioConfig, Split};
use serde::{Deserialize, Serialize};

const STREAM_DATA: u64 = 1000;
const STREAM_STAGE: u64 = 1001;
const STREAM_SWEEP: u64 = 1002;
const STREAM_EVAL: u64 = 1003;

/// Spacing between evaluation seeds, wide enough that per-context offsets never overlap.
pub const EVAL_SEED_STRIDE: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    #[default]
    Balanced,
    Imbalanced,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Balanced => "balanced",
            Regime::Imbalanced => "imbalanced",
        }
    }

    /// Route probabilities of the regime on top of `base` noise and geometry.
    pub fn apply(self, base: &ScenarioConfig) -> ScenarioConfig {
        let probs = match self {
            Regime::Balanced => ScenarioConfig::balanced().route_probs,
            Regime::Imbalanced => ScenarioConfig::imbalanced().route_probs,
        };
        ScenarioConfig {
            route_probs: probs,
            ..*base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Quality base used by greedy MAP at test time.
    pub omega_test: f64,
    /// Prior draws offered to the latent-space DPP baseline.
    pub ldpp_pool: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            omega_test: 2.0,
            ldpp_pool: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Context radius for grouping ground-truth futures.
    pub eps: f64,
    pub seeds: usize,
    /// Forecast-set sizes for the error-versus-N curve.
    pub sweep: Vec<usize>,
    /// Test contexts written to the trajectory export.
    pub plot_contexts: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            seeds: 10,
            sweep: vec![2, 5, 10, 20, 50],
            plot_contexts: 20,
        }
    }
}

fn default_dsf() -> DsfTrainConfig {
    DsfTrainConfig {
        nll_diag_eps: 1e-3,
        ..DsfTrainConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub regime: Regime,
    /// Filled from `regime` when absent.
    pub scenario: ScenarioConfig,
    pub train_size: usize,
    pub test_size: usize,
    pub cvae: CvaeConfig,
    pub dsf: DsfTrainConfig,
    pub inference: InferenceConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regime: Regime::Balanced,
            scenario: ScenarioConfig::balanced(),
            train_size: 1100,
            test_size: 1000,
            cvae: CvaeConfig::default(),
            dsf: default_dsf(),
            inference: InferenceConfig::default(),
            eval: EvalConfig::default(),
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Mirror of [`ExperimentConfig`] with every field optional.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    regime: Option<Regime>,
    scenario: Option<ScenarioConfig>,
    train_size: Option<usize>,
    test_size: Option<usize>,
    cvae: Option<CvaeConfig>,
    dsf: Option<DsfTrainConfig>,
    inference: Option<InferenceConfig>,
    eval: Option<EvalConfig>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn for_regime(regime: Regime) -> Self {
        Self::default().with_regime(regime)
    }

    pub fn with_regime(mut self, regime: Regime) -> Self {
        self.regime = regime;
        self.scenario = regime.apply(&self.scenario);
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PartialConfig = serde_json::from_str(text).map_err(|e| Error::parse("config", e.to_string()))?;
        let d = Self::default();
        let regime = p.regime.unwrap_or(d.regime);
        let cfg = Self {
            regime,
            scenario: p.scenario.unwrap_or_else(|| regime.apply(&d.scenario)),
            train_size: p.train_size.unwrap_or(d.train_size),
            test_size: p.test_size.unwrap_or(d.test_size),
            cvae: p.cvae.unwrap_or(d.cvae),
            dsf: p.dsf.unwrap_or(d.dsf),
            inference: p.inference.unwrap_or(d.inference),
            eval: p.eval.unwrap_or(d.eval),
            seed: p.seed.unwrap_or(d.seed),
            out_dir: p.out_dir.unwrap_or(d.out_dir),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.cvae.validate()?;
        self.dsf.validate()?;
        if self.train_size == 0 || self.test_size == 0 {
            return Err(Error::Config("train_size and test_size must be positive".into()));
        }
        let inf = &self.inference;
        if !(inf.omega_test.is_finite() && inf.omega_test > 0.0) {
            return Err(Error::Config(format!(
                "omega_test must be positive, got {}",
                inf.omega_test
            )));
        }
        if inf.ldpp_pool == 0 {
            return Err(Error::Config("ldpp_pool must be positive".into()));
        }
        let ev = &self.eval;
        if !(ev.eps.is_finite() && ev.eps > 0.0) {
            return Err(Error::Config(format!("eval.eps must be positive, got {}", ev.eps)));
        }
        if ev.seeds == 0 {
            return Err(Error::Config("eval.seeds must be positive".into()));
        }
        if ev.sweep.contains(&0) {
            return Err(Error::Config("sweep sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn data_seed(&self, split: Split) -> u64 {
        derive_seed(self.seed, STREAM_DATA, split as u64)
    }

    pub fn stage_seed(&self, stage: crate::methods::Stage) -> u64 {
        derive_seed(self.seed, STREAM_STAGE, stage as u64)
    }

    pub fn sweep_seed(&self, n: usize) -> u64 {
        derive_seed(self.seed, STREAM_SWEEP, n as u64)
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        let base = derive_seed(self.seed, STREAM_EVAL, 0);
        (0..self.eval.seeds as u64)
            .map(|j| base.wrapping_add(j * EVAL_SEED_STRIDE))
            .collect()
    }

    pub fn ldpp(&self) -> LatentDppConfig {
        LatentDppConfig {
            pool: self.inference.ldpp_pool,
            k: self.dsf.k,
            percentile: self.dsf.percentile,
            omega: self.inference.omega_test,
        }
    }
}

/// File locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.root.join("data").join(format!("{}.tsv", split.as_str()))
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.root.join("data/manifest.json")
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.json"))
    }

    pub fn model_manifest(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.manifest.json"))
    }

    pub fn trace(&self, name: &str) -> PathBuf {
        self.root.join("traces").join(format!("{name}.tsv"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("reports/report.tsv")
    }

    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_scenario_follows_regime() {
        let cfg = ExperimentConfig::from_json(r#"{"regime": "imbalanced"}"#).unwrap();
        assert_eq!(cfg.scenario, ScenarioConfig::imbalanced());
        assert_eq!(cfg.dsf.nll_diag_eps, 1e-3);
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"cvae": {"epochs": 3}, "eval": {"seeds": 2}}"#).unwrap();
        assert_eq!(cfg.cvae.epochs, 3);
        assert_eq!(cfg.cvae.hidden, 128);
        assert_eq!(cfg.eval.sweep, vec![2, 5, 10, 20, 50]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"epochs": 3}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"cvae": {"epoch": 3}}"#).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            r#"{"test_size": 0}"#,
            r#"{"inference": {"omega_test": 0}}"#,
            r#"{"eval": {"eps": -1}}"#,
            r#"{"eval": {"sweep": [0]}}"#,
            r#"{"dsf": {"percentile": 100}}"#,
        ] {
            assert!(
                matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::for_regime(Regime::Imbalanced);
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn seed_streams_are_distinct() {
        let cfg = ExperimentConfig::default();
        let seeds = cfg.eval_seeds();
        assert_eq!(seeds.len(), 10);
        assert_eq!(seeds[1] - seeds[0], EVAL_SEED_STRIDE);
        assert_ne!(cfg.data_seed(Split::Train), cfg.data_seed(Split::Test));
    }
}
