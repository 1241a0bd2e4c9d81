//! JSON run configuration. Unknown keys are rejected everywhere, and every
//! section is checked by [`RunConfig::validate`] before any computation.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use bolm_core::estimator::FitOptions;
use bolm_core::inference::DEFAULT_DRAWS;
use bolm_core::model::{EquationTerms, ModelSpec, OrdinalPair};
use bolm_core::PenaltyConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<DataConfig>,
    pub model: Option<ModelConfig>,
    pub penalty: Option<PenaltyConfig>,
    #[serde(default)]
    pub fit: FitOptions,
    /// Output directory, relative to the config file.
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub profile: Option<ProfileConfig>,
    pub lrtest: Option<LrtestConfig>,
    pub simulate: Option<SimulateConfig>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Table,
    Long,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: DataFormat,
    /// `[d1, d2]`; inferred from the data when absent.
    pub categories: Option<[usize; 2]>,
    /// Subtract the observation-weighted mean from every covariate.
    #[serde(default)]
    pub center: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Nunpom,
    Upom,
    InterceptOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquationRoles {
    #[serde(default)]
    pub category_dependent: Vec<String>,
    #[serde(default)]
    pub category_independent: Vec<String>,
}

/// Either a preset over all covariates or explicit roles per equation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Option<Preset>,
    pub margin1: Option<EquationRoles>,
    pub margin2: Option<EquationRoles>,
    pub association: Option<EquationRoles>,
    #[serde(default)]
    pub uniform_association: bool,
}

impl ModelConfig {
    pub fn build(&self, pair: OrdinalPair, names: &[String]) -> CliResult<ModelSpec> {
        let explicit = self.margin1.is_some() || self.margin2.is_some() || self.association.is_some();
        if let Some(preset) = self.preset {
            if explicit || self.uniform_association {
                return Err(CliError::Config("a model preset cannot be combined with equation roles".into()));
            }
            return Ok(match preset {
                Preset::Nunpom => ModelSpec::nunpom(pair, names.to_vec())?,
                Preset::Upom => ModelSpec::upom(pair, names.to_vec())?,
                Preset::InterceptOnly => ModelSpec::new(pair, names.to_vec(), Default::default(), false)?,
            });
        }
        let index = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| CliError::Config(format!("unknown covariate {name:?}; available: {names:?}")))
        };
        let mut terms: [EquationTerms; 3] = Default::default();
        for (k, roles) in [&self.margin1, &self.margin2, &self.association].into_iter().enumerate() {
            let Some(roles) = roles else { continue };
            let mut seen = BTreeSet::new();
            for name in roles.category_dependent.iter().chain(&roles.category_independent) {
                if !seen.insert(name.as_str()) {
                    return Err(CliError::Config(format!("covariate {name:?} listed twice in one equation")));
                }
            }
            let dep = roles.category_dependent.iter().map(|n| index(n)).collect::<CliResult<Vec<_>>>()?;
            let indep = roles.category_independent.iter().map(|n| index(n)).collect::<CliResult<Vec<_>>>()?;
            let mut included: Vec<usize> = dep.iter().chain(&indep).copied().collect();
            included.sort_unstable();
            terms[k] = EquationTerms {
                included,
                category_dependent: dep,
            };
        }
        Ok(ModelSpec::new(pair, names.to_vec(), terms, self.uniform_association)?)
    }
}

fn default_log_base() -> f64 {
    10.0
}

fn default_true() -> bool {
    true
}

fn default_assoc_terms() -> Vec<String> {
    vec![bolm_core::model::INTERCEPT.to_string()]
}

/// AIC profile over difference orders and smoothing values of a
/// symmetric surface penalty on association terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub orders: Vec<usize>,
    /// Grid of `log(lambda)` in base `log_base`.
    pub log_lambdas: Vec<f64>,
    #[serde(default = "default_log_base")]
    pub log_base: f64,
    /// Also fit at `lambda = 0`.
    #[serde(default = "default_true")]
    pub include_zero: bool,
    #[serde(default = "default_assoc_terms")]
    pub association_terms: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub model: ModelConfig,
    #[serde(default = "no_penalty")]
    pub penalty: PenaltyConfig,
}

fn no_penalty() -> PenaltyConfig {
    PenaltyConfig::None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Chi2,
    Gray,
}

fn default_method() -> TestMethod {
    TestMethod::Chi2
}

fn default_draws() -> usize {
    DEFAULT_DRAWS
}

fn default_threshold() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrtestConfig {
    pub full: FitSpec,
    pub reduced: FitSpec,
    #[serde(default = "default_method")]
    pub method: TestMethod,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_threshold")]
    pub lambda_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub experiment: Experiment,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Loss benchmark of UPOM against NUNPOM fits over a smoothing ladder.
    LossBenchmark {
        replicates: usize,
        n: usize,
        lambdas: Vec<f64>,
    },
    /// Null distribution of LR_P for the association effect of `x1`.
    LrpNull {
        replicates: usize,
        n: usize,
        lambdas: Vec<f64>,
    },
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.output.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.fit.check_settings()?;
        if let Some(d) = &self.data {
            if let Some([d1, d2]) = d.categories {
                if d1 < 2 || d2 < 2 {
                    return bad(format!("categories must be at least 2, got [{d1}, {d2}]"));
                }
            }
        }
        if let Some(p) = &self.profile {
            if p.orders.is_empty() || p.orders.contains(&0) {
                return bad("profile.orders must be non-empty positive integers".into());
            }
            if p.log_lambdas.is_empty() && !p.include_zero {
                return bad("profile grid is empty".into());
            }
            if let Some(v) = p.log_lambdas.iter().find(|v| !v.is_finite()) {
                return bad(format!("profile.log_lambdas contains non-finite value {v}"));
            }
            if !(p.log_base.is_finite() && p.log_base > 1.0) {
                return bad(format!("profile.log_base must exceed 1, got {}", p.log_base));
            }
        }
        if let Some(t) = &self.lrtest {
            if !(t.lambda_threshold >= 0.0) {
                return bad("lrtest.lambda_threshold must be non-negative".into());
            }
            if t.method == TestMethod::Gray && t.draws == 0 {
                return bad("lrtest.draws must be positive".into());
            }
        }
        if let Some(s) = &self.simulate {
            let (Experiment::LossBenchmark { replicates, n, lambdas } | Experiment::LrpNull { replicates, n, lambdas }) =
                &s.experiment;
            if *replicates == 0 || *n == 0 {
                return bad("simulate: replicates and n must be positive".into());
            }
            if lambdas.is_empty() || lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
                return bad("simulate: lambdas must be a non-empty list of finite non-negative values".into());
            }
        }
        Ok(())
    }
}
