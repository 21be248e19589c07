//! Stability sweeps over `ε`, exponent fits, and the three-step certificate
//! around a resonance.

use std::io::Write;

use log::{info, warn};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{synthesize_ck_perturbation, AlgebraError, FTPolynomial, RegularityProfile};
use crate::diophantine::{
    approximation_scale, dirichlet_approx, dirichlet_approx_in_lattice, periodic_action,
    periodic_action_on_surface, DiophantineError, PeriodicOrbitApprox,
};
use crate::dynamics::{fmt17, integrate, DynamicsError, ExitKind, HamiltonianField, IntegrationConfig, PhaseState};
use crate::geometry::{GeometryError, IntegrableModel, ResonanceModule};
use crate::normalform::{local_normal_form, LocalNormalForm, NormalFormConfig, NormalFormError, SmallnessConstants};
use crate::system::NearIntegrableSystem;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("regularity k = {0} is below 3: the estimates carry no information")]
    RegularityTooLow(u32),
    #[error("invalid exponent request: {0}")]
    InvalidExponents(String),
    #[error("invalid sweep configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate fit data: {0}")]
    DegenerateData(String),
    #[error("initial action is {distance:e} from the resonant surface, above σ√ε = {allowed:e}")]
    FarFromResonance { distance: f64, allowed: f64 },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Diophantine(#[from] DiophantineError),
    #[error(transparent)]
    NormalForm(#[from] NormalFormError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl From<csv::Error> for ExperimentError {
    fn from(e: csv::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(e: std::io::Error) -> Self {
        ExperimentError::Io(e.to_string())
    }
}

/// Stability exponents `(a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exponents {
    pub a: Ratio<i64>,
    pub b: Ratio<i64>,
}

impl Exponents {
    pub fn a_f64(&self) -> f64 {
        *self.a.numer() as f64 / *self.a.denom() as f64
    }

    pub fn b_f64(&self) -> f64 {
        *self.b.numer() as f64 / *self.b.denom() as f64
    }
}

/// `a = (k−2)/(2m)`, `b = 1/(2m)` with `m = d` near a codimension-`d`
/// resonance and `m = n` otherwise.
pub fn theorem_exponents(k_reg: u32, n: u32, d: Option<u32>) -> Result<Exponents, ExperimentError> {
    if k_reg < 3 {
        return Err(ExperimentError::RegularityTooLow(k_reg));
    }
    if n < 1 {
        return Err(ExperimentError::InvalidExponents("n must be at least 1".into()));
    }
    let m = match d {
        Some(d) if d < 1 || d > n => {
            return Err(ExperimentError::InvalidExponents(format!("d = {d} outside 1..={n}")))
        }
        Some(d) => d,
        None => n,
    };
    let m = 2 * m as i64;
    Ok(Exponents {
        a: Ratio::new(k_reg as i64 - 2, m),
        b: Ratio::new(1, m),
    })
}

/// Drift threshold: absolute, or `c ε^e` (`e` defaults to `b`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ThresholdRule {
    Absolute { value: f64 },
    Scaled { c: f64, exponent: Option<f64> },
}

/// Step size: fixed, or `min(max, √ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Fixed { value: f64 },
    SqrtEps { max: f64 },
}

impl StepRule {
    pub fn step(&self, eps: f64) -> f64 {
        match *self {
            StepRule::Fixed { value } => value,
            StepRule::SqrtEps { max } => max.min(eps.sqrt()),
        }
    }
}

/// Integrable part `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelId {
    /// `½|I|²`.
    Isotropic,
    /// `½ Σ a_i I_i²`.
    Diagonal { weights: Vec<f64> },
}

impl ModelId {
    pub fn hamiltonian(&self, n: usize) -> Result<FTPolynomial, ExperimentError> {
        let weights = match self {
            ModelId::Isotropic => vec![1.0; n],
            ModelId::Diagonal { weights } => {
                if weights.len() != n {
                    return Err(ExperimentError::InvalidConfig(format!(
                        "model has {} weights, n = {n}",
                        weights.len()
                    )));
                }
                weights.clone()
            }
        };
        Ok(FTPolynomial::diagonal_quadratic(vec![0.0; n], &weights))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbationSpec {
    /// Random angle-only perturbation with `C^k` Fourier decay.
    Synthesized { k_max: u32, decay_exponent: Option<f64> },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub k_reg: u32,
    /// Strictly decreasing.
    pub eps_grid: Vec<f64>,
    pub ensemble: usize,
    pub seed: u64,
    pub horizon_cap: f64,
    /// Horizon `min(horizon_cap, c ε^{−a})`.
    pub horizon_constant: f64,
    /// Overrides the stability exponent `a` in the horizon.
    #[serde(default)]
    pub horizon_exponent: Option<f64>,
    pub drift_threshold: ThresholdRule,
    pub h_step: StepRule,
    pub model: ModelId,
    #[serde(rename = "R")]
    pub radius: f64,
    pub perturbation: PerturbationSpec,
    /// Basis of `Λ`; initial actions are then drawn near `S_Λ`.
    #[serde(default)]
    pub lambda_basis: Option<Vec<Vec<i64>>>,
    /// Initial distance scale `σ√ε` to `S_Λ`.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Total step budget; exceeding it only warns.
    #[serde(default)]
    pub step_budget: Option<f64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.ensemble == 0 {
            return bad("ensemble must be at least 1".into());
        }
        if self.eps_grid.is_empty() || self.eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("eps grid must be non-empty and positive".into());
        }
        if self.eps_grid.windows(2).any(|w| w[1] >= w[0]) {
            return bad("eps grid must be strictly decreasing".into());
        }
        if !(self.horizon_cap > 0.0) || !(self.horizon_constant > 0.0) || !(self.radius > 0.0) {
            return bad("horizon and radius must be positive".into());
        }
        theorem_exponents(self.k_reg, self.n as u32, None)?;
        Ok(())
    }

    pub fn exponents(&self) -> Result<Exponents, ExperimentError> {
        theorem_exponents(self.k_reg, self.n as u32, None)
    }

    pub fn horizon(&self, eps: f64) -> Result<f64, ExperimentError> {
        let a = match self.horizon_exponent {
            Some(a) => a,
            None => self.exponents()?.a_f64(),
        };
        Ok(self.horizon_cap.min(self.horizon_constant * eps.powf(-a)))
    }

    pub fn threshold(&self, eps: f64) -> Result<f64, ExperimentError> {
        Ok(match self.drift_threshold {
            ThresholdRule::Absolute { value } => value,
            ThresholdRule::Scaled { c, exponent } => {
                let b = match exponent {
                    Some(b) => b,
                    None => self.exponents()?.b_f64(),
                };
                c * eps.powf(b)
            }
        })
    }

    /// The system at size `ε`; the perturbation shape is shared by all `ε`.
    pub fn system(&self, eps: f64) -> Result<NearIntegrableSystem, ExperimentError> {
        let h = self.model.hamiltonian(self.n)?;
        let f = match &self.perturbation {
            PerturbationSpec::Zero => FTPolynomial::zero(self.n),
            PerturbationSpec::Synthesized { k_max, decay_exponent } => {
                let mut profile = RegularityProfile::new(self.k_reg, *k_max, self.n, self.seed, eps);
                if let Some(d) = decay_exponent {
                    profile.decay_exponent = *d;
                }
                synthesize_ck_perturbation(&profile, self.n)?
            }
        };
        Ok(NearIntegrableSystem::new(h, f, self.radius, self.k_reg, eps)?)
    }

    /// Initial state of ensemble member `idx`: depends on `(seed, idx)` only,
    /// plus `ε` when sampling near a resonance.
    pub fn initial_state(&self, model: &IntegrableModel, eps: f64, idx: usize) -> Result<PhaseState, ExperimentError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(idx as u64 + 1);
        let half = 0.5 * self.radius;
        let theta: Vec<f64> = (0..self.n).map(|_| rng.random::<f64>()).collect();
        let mut action: Vec<f64> = (0..self.n).map(|_| rng.random_range(-half..half)).collect();
        if let Some(basis) = &self.lambda_basis {
            let module = ResonanceModule::new(self.n, basis.clone())?;
            let proj = model.resonance_distance(&action, &module)?;
            let scale = self.sigma.unwrap_or(1.0) * eps.sqrt();
            action = proj
                .nearest
                .iter()
                .map(|&v| v + scale * rng.random_range(-1.0..1.0) / (self.n as f64).sqrt())
                .collect();
        }
        Ok(PhaseState::new(theta, action))
    }
}

/// One run of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub eps: f64,
    pub eps_index: usize,
    pub ensemble_idx: usize,
    pub exit_time: f64,
    pub exit_kind: ExitKind,
    pub max_drift: f64,
    pub energy_drift: f64,
    pub steps: u64,
    pub horizon: f64,
    pub threshold: f64,
}

struct Prepared {
    field: HamiltonianField,
    model: IntegrableModel,
    horizon: f64,
    threshold: f64,
    h_step: f64,
}

/// Runs the sweep on `threads` workers (machine parallelism when `None`).
/// Output order is `(ε index, ensemble index)` regardless of scheduling.
pub fn run_sweep(cfg: &SweepConfig, threads: Option<usize>) -> Result<Vec<StabilityRecord>, ExperimentError> {
    cfg.validate()?;
    let prepared: Vec<Prepared> = cfg
        .eps_grid
        .iter()
        .map(|&eps| {
            let sys = cfg.system(eps)?;
            Ok(Prepared {
                field: HamiltonianField::new(&sys.hamiltonian()?),
                model: sys.model(),
                horizon: cfg.horizon(eps)?,
                threshold: cfg.threshold(eps)?,
                h_step: cfg.h_step.step(eps),
            })
        })
        .collect::<Result<_, ExperimentError>>()?;
    let total_steps: f64 = prepared.iter().map(|p| p.horizon / p.h_step).sum::<f64>() * cfg.ensemble as f64;
    if let Some(budget) = cfg.step_budget {
        if total_steps > budget {
            warn!("sweep needs up to {total_steps:.3e} steps, above the budget {budget:.3e}");
        }
    }
    info!("sweep: {} runs, at most {total_steps:.3e} steps", cfg.eps_grid.len() * cfg.ensemble);
    let tasks: Vec<(usize, usize)> = (0..cfg.eps_grid.len())
        .flat_map(|i| (0..cfg.ensemble).map(move |j| (i, j)))
        .collect();
    let run = |&(i, j): &(usize, usize)| -> Result<StabilityRecord, ExperimentError> {
        let eps = cfg.eps_grid[i];
        let p = &prepared[i];
        let start = cfg.initial_state(&p.model, eps, j)?;
        let icfg = IntegrationConfig {
            horizon: p.horizon,
            h_step: p.h_step,
            drift_threshold: p.threshold,
            sample_stride: usize::MAX,
            domain: Some((vec![0.0; cfg.n], cfg.radius)),
        };
        let base = StabilityRecord {
            eps,
            eps_index: i,
            ensemble_idx: j,
            exit_time: f64::NAN,
            exit_kind: ExitKind::Failure,
            max_drift: f64::NAN,
            energy_drift: f64::NAN,
            steps: 0,
            horizon: p.horizon,
            threshold: p.threshold,
        };
        Ok(match integrate(&p.field, &start, &icfg) {
            Ok(rec) => StabilityRecord {
                exit_time: rec.exit_time,
                exit_kind: rec.exit_kind,
                max_drift: rec.max_drift,
                energy_drift: rec.energy_drift,
                steps: rec.steps,
                ..base
            },
            Err(DynamicsError::NonConvergence { t, .. }) => StabilityRecord {
                exit_time: t,
                ..base
            },
            Err(e) => return Err(e.into()),
        })
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t.max(1));
    }
    let pool = builder.build().map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    pool.install(|| tasks.par_iter().map(run).collect())
}

/// Writes the sweep CSV: `eps, ensemble_idx, exit_time, exit_kind, max_drift, energy_drift, steps`.
pub fn write_sweep_csv<W: Write>(records: &[StabilityRecord], out: W) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["eps", "ensemble_idx", "exit_time", "exit_kind", "max_drift", "energy_drift", "steps"])?;
    for r in records {
        w.write_record([
            fmt17(r.eps),
            r.ensemble_idx.to_string(),
            fmt17(r.exit_time),
            r.exit_kind.as_str().to_string(),
            fmt17(r.max_drift),
            fmt17(r.energy_drift),
            r.steps.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse_exit_kind(s: &str) -> Option<ExitKind> {
    [ExitKind::Horizon, ExitKind::Drift, ExitKind::Domain, ExitKind::Failure]
        .into_iter()
        .find(|k| k.as_str() == s)
}

/// Reads a sweep CSV back. `eps_index`, `horizon` and `threshold` are not
/// stored: the index is recovered from the order of distinct `eps` values and
/// the horizon of censored runs is their exit time.
pub fn read_sweep_csv<R: std::io::Read>(input: R) -> Result<Vec<StabilityRecord>, ExperimentError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out: Vec<StabilityRecord> = Vec::new();
    for row in rd.records() {
        let row = row?;
        let num = |i: usize| -> Result<f64, ExperimentError> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ExperimentError::Io(format!("bad field {i} in {row:?}")))
        };
        let eps = num(0)?;
        let eps_index = match out.last() {
            None => 0,
            Some(prev) if prev.eps == eps => prev.eps_index,
            Some(prev) => prev.eps_index + 1,
        };
        let kind = row
            .get(3)
            .and_then(parse_exit_kind)
            .ok_or_else(|| ExperimentError::Io(format!("bad exit kind in {row:?}")))?;
        let exit_time = num(2)?;
        out.push(StabilityRecord {
            eps,
            eps_index,
            ensemble_idx: num(1)? as usize,
            exit_time,
            exit_kind: kind,
            max_drift: num(4)?,
            energy_drift: num(5)?,
            steps: num(6)? as u64,
            horizon: if kind == ExitKind::Horizon { exit_time } else { f64::NAN },
            threshold: f64::NAN,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitQuantity {
    ExitTime,
    MaxDrift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub quantity: FitQuantity,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
    pub target_exponent: f64,
    pub residuals: Vec<f64>,
    pub eps_range: (f64, f64),
    /// `(ε, aggregated quantity)` per grid point.
    pub points: Vec<(f64, f64)>,
    /// Every run reached the horizon: the exit-time fit is undefined.
    pub censored: bool,
    /// Grid points whose aggregate is a horizon lower bound.
    pub censored_points: usize,
}

/// Least squares `y = slope x + intercept`; returns `(slope, intercept, r2, residuals)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64, Vec<f64>) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - (slope * a + intercept)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    (slope, intercept, r2, residuals)
}

/// Log–log fit of the per-`ε` aggregate against `ε`: the shortest exit time
/// (a lower bound where every run is censored) or the largest drift.
pub fn fit_exponent(
    records: &[StabilityRecord],
    quantity: FitQuantity,
    target_exponent: f64,
) -> Result<FitResult, ExperimentError> {
    let mut eps_values: Vec<f64> = Vec::new();
    for r in records {
        if !eps_values.contains(&r.eps) {
            eps_values.push(r.eps);
        }
    }
    let mut points = Vec::new();
    let mut censored_points = 0;
    let mut any_exit = false;
    for &eps in &eps_values {
        let valid: Vec<&StabilityRecord> = records
            .iter()
            .filter(|r| r.eps == eps && r.exit_kind != ExitKind::Failure)
            .collect();
        if valid.is_empty() {
            continue;
        }
        let value = match quantity {
            FitQuantity::ExitTime => {
                if valid.iter().all(|r| r.exit_kind == ExitKind::Horizon) {
                    censored_points += 1;
                } else {
                    any_exit = true;
                }
                valid.iter().map(|r| r.exit_time).fold(f64::INFINITY, f64::min)
            }
            FitQuantity::MaxDrift => valid.iter().map(|r| r.max_drift).fold(0.0, f64::max),
        };
        points.push((eps, value));
    }
    if points.len() < 3 {
        return Err(ExperimentError::DegenerateData(format!(
            "{} distinct ε values with valid runs, need 3",
            points.len()
        )));
    }
    let eps_range = points
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let mut result = FitResult {
        quantity,
        slope: None,
        intercept: None,
        r2: None,
        target_exponent,
        residuals: Vec::new(),
        eps_range,
        points: points.clone(),
        censored: quantity == FitQuantity::ExitTime && !any_exit,
        censored_points,
    };
    if result.censored {
        return Ok(result);
    }
    if points.iter().any(|p| !(p.1 > 0.0)) {
        return Err(ExperimentError::DegenerateData("non-positive value in log fit".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2, residuals) = least_squares(&x, &y);
    result.slope = Some(slope);
    result.intercept = Some(intercept);
    result.r2 = Some(r2);
    result.residuals = residuals;
    Ok(result)
}

/// Two-column `ln ε, ln value` TSV.
pub fn write_loglog_tsv<W: Write>(points: &[(f64, f64)], mut out: W) -> Result<(), ExperimentError> {
    writeln!(out, "log_eps\tlog_value")?;
    for (e, v) in points {
        writeln!(out, "{}\t{}", fmt17(e.ln()), fmt17(v.ln()))?;
    }
    Ok(())
}

/// Constants of the certificate; the estimates leave them implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertificateConstants {
    pub c_q: f64,
    pub c_mu: f64,
    pub c_r: f64,
    pub c_tau: f64,
    /// Allowed initial distance `σ√ε` to `S_Λ`.
    pub sigma: f64,
    /// Constants of the conclusion `c₁' ε^{b_d}` and `c₂' ε^{−a_d}`.
    pub c_drift: f64,
    pub c_time: f64,
    pub smallness: SmallnessConstants,
    pub lie_order: usize,
    pub degree_cap: u32,
    pub fourier_cap: u32,
    pub rho: f64,
}

impl Default for CertificateConstants {
    fn default() -> Self {
        CertificateConstants {
            c_q: 1.0,
            c_mu: 2.0,
            c_r: 1.0,
            c_tau: 1.0,
            sigma: 1.0,
            c_drift: 1.0,
            c_time: 1.0,
            smallness: SmallnessConstants::default(),
            lie_order: 4,
            degree_cap: 6,
            fourier_cap: 16,
            rho: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeriodicBranch {
    /// Dirichlet approximation of `ω(I₀)` (in `Λ^⊥` when `d < n`).
    Dirichlet,
    /// `d = 1`: Dirichlet skipped, `I_*` is the projection onto `S_Λ`.
    SkipDirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateParameters {
    pub n: usize,
    pub d: usize,
    pub k_reg: u32,
    pub eps: f64,
    #[serde(rename = "Q")]
    pub q_scale: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub mu: f64,
    pub r: f64,
    pub tau: f64,
    pub a_d: Ratio<i64>,
    pub b_d: Ratio<i64>,
    pub predicted_drift_bound: f64,
    pub predicted_time: f64,
    pub branch: PeriodicBranch,
    pub action_star: Vec<f64>,
    pub p: Vec<i64>,
    pub omega_per: Vec<f64>,
    pub distance_to_resonance: f64,
    /// `|I₀ − I_*|` against the scale `T^{−1} ε^{1/(2d)}`.
    pub initial_offset: f64,
    pub initial_offset_ratio: f64,
    /// `T ε^{(d−1)/(2d)}`, expected `⋖ 1` for `d > 1`.
    pub period_ratio: f64,
    pub constants: CertificateConstants,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateValidation {
    pub horizon: f64,
    pub h_step: f64,
    pub measured_drift: f64,
    pub generator_displacement: f64,
    /// `r + 2 · displacement`.
    pub allowed_drift: f64,
    pub exit_kind: ExitKind,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub parameters: CertificateParameters,
    pub normal_form: LocalNormalForm,
    pub validation: Option<CertificateValidation>,
}

/// Validation run of a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub theta0: Vec<f64>,
    pub h_step: f64,
    pub displacement_samples: usize,
    pub seed: u64,
}

/// The three steps: periodic approximation, local normal form, and the
/// confinement parameters `r`, `τ`; optionally validated by integration.
pub fn build_certificate(
    system: &NearIntegrableSystem,
    initial_action: &[f64],
    lambda: &ResonanceModule,
    constants: &CertificateConstants,
    validation: Option<&ValidationOptions>,
) -> Result<Certificate, ExperimentError> {
    let n = system.dims();
    let eps = system.eps;
    if !(eps > 0.0) {
        return Err(ExperimentError::InvalidConfig("ε must be positive".into()));
    }
    let d = lambda.codim();
    let exps = theorem_exponents(system.k_reg, n as u32, Some(d as u32))?;
    let model = system.model();
    let proj = model.resonance_distance(initial_action, lambda)?;
    let allowed = constants.sigma * eps.sqrt();
    if proj.distance > allowed {
        return Err(ExperimentError::FarFromResonance {
            distance: proj.distance,
            allowed,
        });
    }

    // First step: periodic action.
    let q_scale = approximation_scale(eps, d, constants.c_q);
    let (approx, branch): (PeriodicOrbitApprox, _) = if d == 1 {
        (
            periodic_action_on_surface(&model, lambda, initial_action)?,
            PeriodicBranch::SkipDirichlet,
        )
    } else {
        let omega = model.frequency(&proj.nearest)?;
        let raw = if d == n {
            dirichlet_approx(&omega, q_scale)?
        } else {
            dirichlet_approx_in_lattice(&omega, &lambda.orthogonal_lattice_basis(), q_scale)?
        };
        (periodic_action(&model, &raw, &proj.nearest)?, PeriodicBranch::Dirichlet)
    };
    let action_star = approx.action_star.clone().expect("periodic action filled in");
    let period = approx.period;
    let inv2d = 1.0 / (2.0 * d as f64);
    let eps_root = eps.powf(inv2d);
    let initial_offset = action_star
        .iter()
        .zip(initial_action)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // Second step: normal form at scale μ.
    let mu = constants.c_mu * eps_root / period;
    let mut cfg = NormalFormConfig::for_regularity(system.k_reg, mu);
    cfg.lie_order = constants.lie_order;
    cfg.degree_cap = constants.degree_cap;
    cfg.fourier_cap = constants.fourier_cap;
    cfg.rho = constants.rho;
    cfg.constants = constants.smallness;
    let normal_form = local_normal_form(system, &action_star, &approx.p, period, &cfg)?;

    // Third step: confinement radius and time.
    let r = constants.c_r * mu;
    let tau = constants.c_tau * (period * mu).powi(-(system.k_reg as i32 - 2));
    let parameters = CertificateParameters {
        n,
        d,
        k_reg: system.k_reg,
        eps,
        q_scale,
        period,
        mu,
        r,
        tau,
        a_d: exps.a,
        b_d: exps.b,
        predicted_drift_bound: constants.c_drift * eps.powf(exps.b_f64()),
        predicted_time: constants.c_time * eps.powf(-exps.a_f64()),
        branch,
        action_star,
        p: approx.p.clone(),
        omega_per: approx.omega_per.clone(),
        distance_to_resonance: proj.distance,
        initial_offset,
        initial_offset_ratio: initial_offset * period / eps_root,
        period_ratio: period * eps.powf((d as f64 - 1.0) * inv2d),
        constants: constants.clone(),
    };

    let validation = match validation {
        None => None,
        Some(opts) => {
            let displacement =
                normal_form.generator_displacement(constants.rho, opts.displacement_samples, opts.seed)?;
            let field = HamiltonianField::new(&system.hamiltonian()?);
            let icfg = IntegrationConfig {
                horizon: tau,
                h_step: opts.h_step,
                drift_threshold: f64::INFINITY,
                sample_stride: usize::MAX,
                domain: Some((system.h.center().to_vec(), system.radius)),
            };
            let start = PhaseState::new(opts.theta0.clone(), initial_action.to_vec());
            let rec = integrate(&field, &start, &icfg)?;
            let allowed_drift = r + 2.0 * displacement;
            Some(CertificateValidation {
                horizon: tau,
                h_step: opts.h_step,
                measured_drift: rec.max_drift,
                generator_displacement: displacement,
                allowed_drift,
                exit_kind: rec.exit_kind,
                passed: rec.exit_kind == ExitKind::Horizon && rec.max_drift <= allowed_drift,
            })
        }
    };
    Ok(Certificate {
        parameters,
        normal_form,
        validation,
    })
}
