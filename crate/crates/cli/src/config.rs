//! Run configuration: a single TOML file, unknown keys rejected.
//!
//! Sections are optional at parse time; each subcommand then requires the
//! ones it uses and reports a missing one by its path.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use singular_bsde::analysis::{levels_from_deltas, levels_from_rule, DeltaRule, SweepLevel};
use singular_bsde::{CoefficientModel, CondExpEstimator, EtaModel, ExpansionSpec, GeneratorModel, LambdaModel, SchemeConfig};

use crate::CliError;

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub maturity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion: Option<ExpansionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expansion_check: Option<ExpansionCheckSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liquidation: Option<LiquidationSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKindSpec {
    Power,
    Exponential,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub kind: GeneratorKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Built-in custom driver: `neg-square`, `linear-cubic` or `cosh`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Force the quadrature/root-finding path even when closed forms exist.
    #[serde(default)]
    pub numeric: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EtaSpec {
    Constant {
        value: f64,
    },
    /// `c0 + c1·t/T`.
    Linear {
        c0: f64,
        c1: f64,
    },
    Arctan {
        lower: f64,
        upper: f64,
        #[serde(default)]
        x0: f64,
        theta: f64,
        #[serde(default)]
        mean: f64,
        sigma: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LambdaSpec {
    Constant {
        value: f64,
    },
    /// `l0 + l1·t`.
    Linear {
        l0: f64,
        l1: f64,
    },
    /// `l0 + l1·η_t`.
    EtaAffine {
        l0: f64,
        l1: f64,
    },
}

impl Default for LambdaSpec {
    fn default() -> Self {
        LambdaSpec::Constant { value: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub eta: EtaSpec,
    #[serde(default)]
    pub lambda: LambdaSpec,
    /// `η = g^exponent`.
    #[serde(default = "one")]
    pub exponent: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSpec {
    #[default]
    Passthrough,
    LeastSquares { degree: usize },
    NestedMc { inner_paths: usize },
}

fn newton_tol() -> f64 {
    1e-12
}
fn newton_max_iter() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    pub delta: f64,
    pub n_steps: usize,
    #[serde(default = "one_usize")]
    pub n_paths: usize,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default = "newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "newton_max_iter")]
    pub newton_max_iter: usize,
    /// Also write every path of `Ȳ`.
    #[serde(default)]
    pub dump_paths: bool,
    /// Also write the simulated coefficient ensemble.
    #[serde(default)]
    pub dump_ensemble: bool,
}

fn inner_paths() -> usize {
    64
}
fn inner_steps() -> usize {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSection {
    #[serde(default)]
    pub order: u8,
    #[serde(default = "inner_paths")]
    pub inner_paths: usize,
    #[serde(default = "inner_steps")]
    pub inner_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DeltaRuleSpec {
    Fixed { delta: f64 },
    /// `Δ = c·h^gamma`.
    Power { c: f64, gamma: f64 },
}

fn beta() -> f64 {
    0.5
}
fn rk_steps() -> usize {
    64
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub h_list: Vec<f64>,
    /// Either a rule giving `Δ(h)`...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_rule: Option<DeltaRuleSpec>,
    /// ...or explicit cutoffs paired with `h_list` (a single `h` is broadcast).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_list: Option<Vec<f64>>,
    #[serde(default = "one_usize")]
    pub n_paths: usize,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    #[serde(default = "beta")]
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_eps: Option<f64>,
    #[serde(default = "rk_steps")]
    pub rk_steps: usize,
    #[serde(default)]
    pub reference_paths: usize,
}

fn window_fraction() -> f64 {
    0.1
}
fn n_samples() -> usize {
    200
}
fn grid_points() -> usize {
    101
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionCheckSection {
    /// The bound is checked on `t ∈ [T(1 − window_fraction), T − cutoff]`.
    #[serde(default = "window_fraction")]
    pub window_fraction: f64,
    /// Closest approach to `T` for deterministic checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_eps: Option<f64>,
    #[serde(default = "grid_points")]
    pub grid_points: usize,
    #[serde(default = "one")]
    pub slack: f64,
    #[serde(default = "n_samples")]
    pub n_samples: usize,
}

fn audit_grid() -> usize {
    60
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub eps: f64,
    pub varsigma: f64,
    #[serde(default = "audit_grid")]
    pub grid_size: usize,
    /// Defaults to the coefficient section's `η♯` (or 1 without one).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_sharp: Option<f64>,
}

fn paths_out() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiquidationSection {
    pub x0: f64,
    pub p: f64,
    pub zeta: EtaSpec,
    #[serde(default)]
    pub lambda: LambdaSpec,
    /// Paths whose trajectory is written.
    #[serde(default = "paths_out")]
    pub paths_out: Vec<usize>,
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.maturity.is_nan() || cfg.maturity <= 0.0 || cfg.maturity.is_infinite() {
        return Err(CliError::Config(format!("maturity: must be positive, got {}", cfg.maturity)));
    }
    Ok(cfg)
}

pub fn require<'a, T>(section: &'a Option<T>, path: &str) -> Result<&'a T, CliError> {
    section
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("{path}: missing section [{path}]")))
}

fn need(v: Option<f64>, path: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| CliError::Config(format!("{path}: required for this generator kind")))
}

fn cfg_err(path: &str) -> impl Fn(singular_bsde::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{path}: {e}"))
}

impl GeneratorSection {
    pub fn build(&self) -> Result<GeneratorModel, CliError> {
        let gen = match self.kind {
            GeneratorKindSpec::Power => {
                let q = need(self.q, "generator.q")?;
                GeneratorModel::power_scaled(q, self.scale.unwrap_or(1.0))
            }
            GeneratorKindSpec::Exponential => GeneratorModel::exponential(need(self.a, "generator.a")?),
            GeneratorKindSpec::Custom => {
                let name = self
                    .name
                    .as_deref()
                    .ok_or_else(|| CliError::Config("generator.name: required for kind = \"custom\"".into()))?;
                GeneratorModel::builtin_custom(name)
            }
        }
        .map_err(cfg_err("generator"))?;
        Ok(if self.numeric { gen.numeric() } else { gen })
    }
}

impl EtaSpec {
    pub fn build(&self, maturity: f64) -> EtaModel {
        match *self {
            EtaSpec::Constant { value } => EtaModel::constant(value),
            EtaSpec::Linear { c0, c1 } => EtaModel::linear(c0, c1, maturity),
            EtaSpec::Arctan {
                lower,
                upper,
                x0,
                theta,
                mean,
                sigma,
            } => EtaModel::ArctanTransform {
                lower,
                upper,
                x0,
                theta,
                mean,
                sigma,
            },
        }
    }
}

impl LambdaSpec {
    /// `eta_upper` bounds `η` for the state-dependent form.
    pub fn build(&self, maturity: f64, eta_upper: f64, path: &str) -> Result<LambdaModel, CliError> {
        match *self {
            LambdaSpec::Constant { value } => Ok(LambdaModel::Constant(value)),
            LambdaSpec::Linear { l0, l1 } => {
                let end = l0 + l1 * maturity;
                if l0 < 0.0 || end < 0.0 {
                    return Err(CliError::Config(format!("{path}: λ must stay non-negative on [0, T]")));
                }
                Ok(LambdaModel::Deterministic {
                    f: Arc::new(move |t| l0 + l1 * t),
                    max: l0.max(end),
                    label: format!("{l0} + {l1}·t"),
                })
            }
            LambdaSpec::EtaAffine { l0, l1 } => {
                if l0 < 0.0 || l1 < 0.0 {
                    return Err(CliError::Config(format!("{path}: l0 and l1 must be non-negative")));
                }
                Ok(LambdaModel::StateFunction {
                    f: Arc::new(move |_, eta| l0 + l1 * eta),
                    max: l0 + l1 * eta_upper,
                    label: format!("{l0} + {l1}·η"),
                })
            }
        }
    }
}

fn eta_upper_of(eta: &EtaModel, exponent: f64) -> f64 {
    let upper = match eta {
        EtaModel::Deterministic { upper, .. } | EtaModel::ArctanTransform { upper, .. } | EtaModel::CustomIto { upper, .. } => {
            *upper
        }
    };
    upper.powf(exponent)
}

impl CoefficientSection {
    pub fn build(&self, maturity: f64) -> Result<CoefficientModel, CliError> {
        let eta = self.eta.build(maturity);
        let lambda = self
            .lambda
            .build(maturity, eta_upper_of(&eta, self.exponent), "coefficients.lambda")?;
        CoefficientModel::new(eta, lambda)
            .and_then(|c| c.with_exponent(self.exponent))
            .map_err(cfg_err("coefficients"))
    }
}

impl EstimatorSpec {
    pub fn build(&self) -> CondExpEstimator {
        match *self {
            EstimatorSpec::Passthrough => CondExpEstimator::Passthrough,
            EstimatorSpec::LeastSquares { degree } => CondExpEstimator::LeastSquares { degree },
            EstimatorSpec::NestedMc { inner_paths } => CondExpEstimator::NestedMc { inner_paths },
        }
    }
}

impl SchemeSection {
    pub fn build(&self, maturity: f64) -> Result<SchemeConfig, CliError> {
        let cfg = SchemeConfig {
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
            ..SchemeConfig::new(self.delta, self.n_steps, self.estimator.build())
        };
        cfg.validate(maturity).map_err(cfg_err("scheme"))?;
        if self.n_paths == 0 {
            return Err(CliError::Config("scheme.n_paths: must be at least 1".into()));
        }
        Ok(cfg)
    }
}

impl ExpansionSection {
    pub fn build(&self) -> ExpansionSpec {
        ExpansionSpec {
            order: self.order,
            inner_paths: self.inner_paths,
            inner_steps: self.inner_steps,
        }
    }
}

impl AnalysisSection {
    pub fn levels(&self) -> Result<Vec<SweepLevel>, CliError> {
        if self.h_list.is_empty() {
            return Err(CliError::Config("analysis.h_list: must not be empty".into()));
        }
        match (&self.delta_rule, &self.delta_list) {
            (Some(_), Some(_)) => Err(CliError::Config(
                "analysis: give either delta_rule or delta_list, not both".into(),
            )),
            (None, None) => Err(CliError::Config("analysis.delta_rule: missing (or give delta_list)".into())),
            (Some(rule), None) => Ok(levels_from_rule(
                &self.h_list,
                match *rule {
                    DeltaRuleSpec::Fixed { delta } => DeltaRule::Fixed(delta),
                    DeltaRuleSpec::Power { c, gamma } => DeltaRule::Power { c, gamma },
                },
            )),
            (None, Some(deltas)) if self.h_list.len() == 1 => Ok(levels_from_deltas(self.h_list[0], deltas)),
            (None, Some(deltas)) if deltas.len() == self.h_list.len() => Ok(self
                .h_list
                .iter()
                .zip(deltas)
                .map(|(&h, &delta)| SweepLevel { h, delta })
                .collect()),
            (None, Some(_)) => Err(CliError::Config(
                "analysis.delta_list: length must match h_list (or h_list must have one entry)".into(),
            )),
        }
    }
}
