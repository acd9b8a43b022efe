//! Training stages and the forecasting methods built from them.

use std::fmt;
use std::str::FromStr;

use dsf_core::dsf::{forecast_cvae_ldpp, forecast_diverse, LatentDppConfig};
use dsf_core::metrics::Forecaster;
use dsf_core::{CvaeModel, DsfLossMode, DsfModel, DsfTrainConfig, Result, SimilarityMode, Trajectory};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Cvae,
    Dsf,
    Mcl,
    DsfNll,
    DsfCos,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Cvae => "cvae",
            Stage::Dsf => "dsf",
            Stage::Mcl => "mcl",
            Stage::DsfNll => "dsf-nll",
            Stage::DsfCos => "dsf-cos",
        }
    }

    /// Sampler training settings for this stage, `None` for the cVAE.
    pub fn sampler_config(self, base: &DsfTrainConfig) -> Option<DsfTrainConfig> {
        let mut cfg = base.clone();
        match self {
            Stage::Cvae => return None,
            Stage::Dsf | Stage::Mcl => {}
            Stage::DsfNll => cfg.loss = DsfLossMode::Nll,
            Stage::DsfCos => cfg.similarity = SimilarityMode::Cosine,
        }
        Some(cfg)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Dsf,
    Cvae,
    Mcl,
    DsfNll,
    DsfCos,
    CvaeLdpp,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Dsf,
        Method::Cvae,
        Method::Mcl,
        Method::DsfNll,
        Method::DsfCos,
        Method::CvaeLdpp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dsf => "dsf",
            Method::Cvae => "cvae",
            Method::Mcl => "mcl",
            Method::DsfNll => "dsf-nll",
            Method::DsfCos => "dsf-cos",
            Method::CvaeLdpp => "cvae-ldpp",
        }
    }

    /// The trained sampler the method needs, `None` when the cVAE suffices.
    pub fn sampler_stage(self) -> Option<Stage> {
        match self {
            Method::Dsf => Some(Stage::Dsf),
            Method::Mcl => Some(Stage::Mcl),
            Method::DsfNll => Some(Stage::DsfNll),
            Method::DsfCos => Some(Stage::DsfCos),
            Method::Cvae | Method::CvaeLdpp => None,
        }
    }

    pub fn parse_list(items: &[String]) -> Result<Vec<Method>, CliError> {
        let mut out = Vec::new();
        for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
            let m: Method = item.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(CliError::Usage("no methods given".into()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
            CliError::Usage(format!("unknown method `{s}`; valid methods: {}", valid.join(", ")))
        })
    }
}

/// A method bound to its trained models, ready to forecast.
pub enum Bound<'a> {
    Random {
        cvae: &'a CvaeModel,
        n: usize,
    },
    Ldpp {
        cvae: &'a CvaeModel,
        n: usize,
        cfg: LatentDppConfig,
    },
    Diverse {
        cvae: &'a CvaeModel,
        sampler: &'a DsfModel,
        omega_test: f64,
    },
    GroundSet {
        cvae: &'a CvaeModel,
        sampler: &'a DsfModel,
    },
}

impl Forecaster for Bound<'_> {
    fn is_deterministic(&self) -> bool {
        matches!(self, Bound::Diverse { .. } | Bound::GroundSet { .. })
    }

    fn forecast(&self, h: &Trajectory, seed: u64) -> Result<Vec<Trajectory>> {
        match self {
            Bound::Random { cvae, n } => cvae.forecast_random(h, *n, seed),
            Bound::Ldpp { cvae, n, cfg } => forecast_cvae_ldpp(cvae, h, *n, cfg, seed),
            Bound::Diverse {
                cvae,
                sampler,
                omega_test,
            } => Ok(forecast_diverse(sampler, cvae, h, *omega_test)?.trajectories),
            Bound::GroundSet { cvae, sampler } => sampler.ground_set(cvae, h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn unknown_method_lists_valid_names() {
        let err = "dsf2".parse::<Method>().unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("cvae-ldpp"), "{err}");
    }

    #[test]
    fn list_parsing_dedups_and_keeps_order() {
        let items: Vec<String> = ["cvae", "dsf", "cvae"].iter().map(|s| s.to_string()).collect();
        assert_eq!(Method::parse_list(&items).unwrap(), vec![Method::Cvae, Method::Dsf]);
        assert!(Method::parse_list(&[]).is_err());
    }

    #[test]
    fn stages_set_their_loss() {
        let base = DsfTrainConfig::default();
        assert_eq!(Stage::DsfNll.sampler_config(&base).unwrap().loss, DsfLossMode::Nll);
        assert_eq!(
            Stage::DsfCos.sampler_config(&base).unwrap().similarity,
            SimilarityMode::Cosine
        );
        assert!(Stage::Cvae.sampler_config(&base).is_none());
    }
}
