//! TOML run configuration. Every section is optional and falls back to the
//! defaults below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use dsdp::experiments::ExperimentGrid;
use dsdp::expfam_model::ExpFamSpec;
use dsdp::partition_laws::MarkedHyper;
use dsdp::samplers::{Model, SamplerConfig};
use dsdp::sgp_prior::KernelParams;
use dsdp::DsdpError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub hyper: HyperSection,
    pub expfam: ExpFamSection,
    pub kernel: KernelSection,
    pub sampler: SamplerConfig,
    pub data: DataSection,
    pub report: ReportSection,
    pub verify: VerifySection,
    pub grid: GridSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            hyper: HyperSection::default(),
            expfam: ExpFamSection::default(),
            kernel: KernelSection::default(),
            sampler: SamplerConfig::default(),
            data: DataSection::default(),
            report: ReportSection::default(),
            verify: VerifySection::default(),
            grid: GridSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperSection {
    pub alpha_star: f64,
    pub a0: f64,
    pub b0: f64,
    pub gamma_mfm: f64,
}

impl Default for HyperSection {
    fn default() -> Self {
        HyperSection {
            alpha_star: 1.0,
            a0: 2.0,
            b0: 1.0,
            gamma_mfm: 1.0,
        }
    }
}

/// Gaussian likelihood with known variance; scalars are broadcast to the
/// data dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpFamSection {
    pub prior_mean: f64,
    pub eta2: f64,
    pub known_variance: f64,
}

impl Default for ExpFamSection {
    fn default() -> Self {
        ExpFamSection {
            prior_mean: 0.0,
            eta2: 1.0,
            known_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub variance: f64,
    pub lengthscale: f64,
    pub jitter: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            variance: 1.0,
            lengthscale: 1.0,
            jitter: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Numeric columns, header optional.
    Generic,
    /// RA / Dec / velocity columns, standardized before fitting.
    Galaxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub path: Option<PathBuf>,
    pub format: DataFormat,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            path: None,
            format: DataFormat::Generic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Final post-burn-in records scored in the K histogram.
    pub score_last: usize,
    pub density_bin_width: f64,
    /// Feature index used for the topic density.
    pub density_dimension: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            score_last: 1000,
            density_bin_width: 0.1,
            density_dimension: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub max_n: usize,
    /// Largest n for the sampled prior-chain comparison.
    pub chain_max_n: usize,
    pub chain_sweeps: usize,
    pub tv_bound: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            max_n: 6,
            chain_max_n: 6,
            chain_sweeps: 200_000,
            tv_bound: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub data_sizes: Vec<usize>,
    pub alpha_fractions: Vec<f64>,
    pub replicates: usize,
    pub models: Vec<Model>,
    pub score_last: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            data_sizes: vec![100, 1000],
            alpha_fractions: vec![10.0, 50.0, 100.0],
            replicates: 3,
            models: vec![Model::Dsdp, Model::Dpmm],
            score_last: 1000,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, DsdpError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self, DsdpError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| DsdpError::Config {
            field: format!("toml ({})", origin.display()),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DsdpError> {
        self.hyper()?;
        self.expfam(1)?;
        self.kernel(1)?;
        self.sampler.validate()?;
        self.grid().validate()?;
        if self.report.score_last == 0 {
            return Err(DsdpError::Config {
                field: "report.score_last".into(),
                message: "must be >= 1".into(),
            });
        }
        if !(self.report.density_bin_width.is_finite() && self.report.density_bin_width > 0.0) {
            return Err(DsdpError::Config {
                field: "report.density_bin_width".into(),
                message: "must be finite and > 0".into(),
            });
        }
        if !(self.verify.tv_bound > 0.0 && self.verify.tv_bound < 1.0) {
            return Err(DsdpError::Config {
                field: "verify.tv_bound".into(),
                message: "must lie in (0, 1)".into(),
            });
        }
        Ok(())
    }

    pub fn hyper(&self) -> Result<MarkedHyper, DsdpError> {
        let h = &self.hyper;
        MarkedHyper::new(h.alpha_star, h.a0, h.b0, h.gamma_mfm)
    }

    pub fn expfam(&self, dimension: usize) -> Result<ExpFamSpec, DsdpError> {
        let e = &self.expfam;
        ExpFamSpec::gaussian_known_variance(
            vec![e.prior_mean; dimension],
            e.eta2,
            vec![e.known_variance; dimension],
        )
    }

    pub fn kernel(&self, dimension: usize) -> Result<KernelParams, DsdpError> {
        let k = &self.kernel;
        KernelParams::isotropic(dimension, k.variance, k.lengthscale, k.jitter)
    }

    pub fn grid(&self) -> ExperimentGrid {
        let g = &self.grid;
        ExperimentGrid {
            data_sizes: g.data_sizes.clone(),
            alpha_fractions: g.alpha_fractions.clone(),
            replicates: g.replicates,
            models: g.models.clone(),
            score_last: g.score_last,
        }
    }
}
