//! JSON configurations of the subcommands and their resolution.

use polystab::algebra::{synthesize_ck_perturbation, FTPolynomial, RegularityProfile};
use polystab::experiments::{CertificateConstants, ModelId, PerturbationSpec, ValidationOptions};
use polystab::normalform::{NormalFormConfig, SmallnessConstants};
use polystab::NearIntegrableSystem;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// System given coefficient by coefficient, or generated from a model and a
/// synthesized perturbation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Explicit(NearIntegrableSystem),
    Generated(GeneratedSystem),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneratedSystem {
    pub n: usize,
    pub k_reg: u32,
    pub eps: f64,
    #[serde(default = "isotropic")]
    pub model: ModelId,
    pub perturbation: PerturbationSpec,
    #[serde(rename = "R", default = "unit")]
    pub radius: f64,
    /// Perturbation seed; the global seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn isotropic() -> ModelId {
    ModelId::Isotropic
}

fn unit() -> f64 {
    1.0
}

impl SystemSpec {
    /// Fills in the seed so the resolved config is self-contained.
    pub fn resolve_seed(&mut self, seed: u64) {
        if let SystemSpec::Generated(g) = self {
            g.seed.get_or_insert(seed);
        }
    }

    pub fn build(&self) -> Result<NearIntegrableSystem, CliError> {
        match self {
            SystemSpec::Explicit(s) => {
                NearIntegrableSystem::new(s.h.clone(), s.f.clone(), s.radius, s.k_reg, s.eps).map_err(CliError::from)
            }
            SystemSpec::Generated(g) => {
                let h = g.model.hamiltonian(g.n)?;
                let f = match &g.perturbation {
                    PerturbationSpec::Zero => FTPolynomial::zero(g.n),
                    PerturbationSpec::Synthesized { k_max, decay_exponent } => {
                        let mut profile = RegularityProfile::new(g.k_reg, *k_max, g.n, g.seed.unwrap_or(0), g.eps);
                        if let Some(d) = decay_exponent {
                            profile.decay_exponent = *d;
                        }
                        synthesize_ck_perturbation(&profile, g.n)?
                    }
                };
                Ok(NearIntegrableSystem::new(h, f, g.radius, g.k_reg, g.eps)?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialState {
    pub theta: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub system: SystemSpec,
    pub initial: InitialState,
    pub horizon: f64,
    pub h_step: f64,
    #[serde(default)]
    pub drift_threshold: Option<f64>,
    #[serde(default = "one")]
    pub sample_stride: usize,
}

fn one() -> usize {
    1
}

/// Normal-form settings; absent fields take the defaults for `k_reg`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NormalFormOverrides {
    pub steps: Option<usize>,
    pub lie_order: Option<usize>,
    pub degree_cap: Option<u32>,
    pub fourier_cap: Option<u32>,
    pub rho: Option<f64>,
    pub norm_order: Option<u32>,
    pub residual_threshold: Option<f64>,
    pub constants: Option<SmallnessConstants>,
}

impl NormalFormOverrides {
    pub fn resolve(&self, k_reg: u32, mu: f64) -> NormalFormConfig {
        let mut c = NormalFormConfig::for_regularity(k_reg, mu);
        c.steps = self.steps.unwrap_or(c.steps);
        c.lie_order = self.lie_order.unwrap_or(c.lie_order);
        c.degree_cap = self.degree_cap.unwrap_or(c.degree_cap);
        c.fourier_cap = self.fourier_cap.unwrap_or(c.fourier_cap);
        c.rho = self.rho.unwrap_or(c.rho);
        c.norm_order = self.norm_order.unwrap_or(c.norm_order);
        c.residual_threshold = self.residual_threshold.unwrap_or(c.residual_threshold);
        c.constants = self.constants.unwrap_or(c.constants);
        c
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalFormCommand {
    pub system: SystemSpec,
    pub action_star: Vec<f64>,
    pub p: Vec<i64>,
    #[serde(rename = "T")]
    pub period: f64,
    pub mu: f64,
    #[serde(default)]
    pub normal_form: NormalFormOverrides,
    /// Sample points for the numerical displacement estimate (0 skips it).
    #[serde(default)]
    pub displacement_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedNormalForm {
    pub system: SystemSpec,
    pub action_star: Vec<f64>,
    pub p: Vec<i64>,
    #[serde(rename = "T")]
    pub period: f64,
    pub config: NormalFormConfig,
    pub displacement_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateCommand {
    pub system: SystemSpec,
    pub initial_action: Vec<f64>,
    /// Basis of `Λ`; empty for the trivial module.
    #[serde(default)]
    pub lambda_basis: Vec<Vec<i64>>,
    #[serde(default)]
    pub constants: CertificateConstants,
    #[serde(default)]
    pub validate: Option<ValidationOptions>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitCommand {
    pub sweep_config_hash: String,
    pub quantity: polystab::experiments::FitQuantity,
    pub target_exponent: f64,
}

pub fn parse<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
