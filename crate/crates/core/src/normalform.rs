//! Resonant normal forms around a periodic action.
//!
//! Conventions: `{f, g} = ∂_I f · ∂_θ g − ∂_θ f · ∂_I g`, the flow of `χ` is
//! `θ̇ = ∂_I χ, İ = −∂_θ χ`, and therefore `H ∘ Φ^χ = Σ_m (1/m!) L^m H` with
//! `L = {χ, ·}`. The homological generator satisfies `{χ, l} = [f] − f`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, Caps, FTPolynomial};
use crate::dynamics::{flow_map, DynamicsError, HamiltonianField};
use crate::system::NearIntegrableSystem;

const TWO_PI: f64 = std::f64::consts::TAU;
const HOMOLOGICAL_TOL: f64 = 1e-13;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormalFormError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("smallness condition violated: {condition} ({lhs:e} > {rhs:e})")]
    Smallness { condition: String, lhs: f64, rhs: f64 },
    #[error("truncation overflow at step {step}: residual bound {residual:e} exceeds {threshold:e}")]
    TruncationOverflow { step: usize, residual: f64, threshold: f64 },
    #[error("caps (K = {fourier}, D = {degree}) do not cover the input support (|k|_1 = {k_needed}, |α| = {d_needed})")]
    CapsTooSmall { fourier: u32, degree: u32, k_needed: u32, d_needed: u32 },
    #[error("ball B(I_*, 2μ) is not contained in the domain: |I_* − c| + 2μ = {reach} > R = {radius}")]
    DomainViolation { reach: f64, radius: f64 },
    #[error("homological defect {defect:e} at step {step}")]
    HomologicalDefect { step: usize, defect: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Implicit constants of the smallness conditions `ε ≤ c₁μ²`, `μ ≤ c₂`, `Tμ ≤ c₃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmallnessConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for SmallnessConstants {
    fn default() -> Self {
        SmallnessConstants {
            c1: 0.25,
            c2: 0.5,
            c3: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormConfig {
    /// Number of averaging steps (`k − 2` for a `C^k` perturbation).
    pub steps: usize,
    /// Last order kept in the Lie series.
    pub lie_order: usize,
    /// Maximal action degree `D`.
    pub degree_cap: u32,
    /// Maximal Fourier order `K = |k|_1`.
    pub fourier_cap: u32,
    /// Scaled perturbation size `μ`.
    pub mu: f64,
    /// Radius `ρ` of the scaled action domain used for norm reporting.
    pub rho: f64,
    /// Derivative order of the reported coefficient norms.
    pub norm_order: u32,
    /// Per-step residual bound above which the construction fails.
    pub residual_threshold: f64,
    pub constants: SmallnessConstants,
}

impl NormalFormConfig {
    /// Defaults for a `C^k` perturbation at scale `μ`.
    pub fn for_regularity(k_reg: u32, mu: f64) -> Self {
        NormalFormConfig {
            steps: k_reg.saturating_sub(2) as usize,
            lie_order: 4,
            degree_cap: 6,
            fourier_cap: 16,
            mu,
            rho: 2.0,
            norm_order: 2,
            residual_threshold: 1e-2,
            constants: SmallnessConstants::default(),
        }
    }

    pub fn caps(&self) -> Caps {
        Caps::new(self.fourier_cap, self.degree_cap)
    }

    /// Shrinking radii `ρ_j = ρ − j ρ / (2 steps)`, `j = 0..=steps`.
    pub fn shrink_schedule(&self) -> Vec<f64> {
        if self.steps == 0 {
            return vec![self.rho];
        }
        let r = self.rho / (2.0 * self.steps as f64);
        (0..=self.steps).map(|j| self.rho - j as f64 * r).collect()
    }

    fn validate(&self) -> Result<(), NormalFormError> {
        if self.lie_order < 2 {
            return Err(NormalFormError::InvalidConfig(format!(
                "lie_order {} must be at least 2",
                self.lie_order
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) || !(self.rho > 0.0) {
            return Err(NormalFormError::InvalidConfig("mu and rho must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: usize,
    /// Norm bound of `f_j` entering the step.
    pub f_norm_bound: f64,
    /// Norm bound of `g_j` entering the step.
    pub g_norm_bound: f64,
    /// Truncation residual dropped by the step's Lie transform (0 on the last entry).
    pub residual: f64,
    pub series_tail: f64,
    pub cap_pruned: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMeta {
    pub action_star: Option<Vec<f64>>,
    pub mu: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub p: Vec<i64>,
    pub omega_per: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormResult {
    pub generators: Vec<FTPolynomial>,
    pub g: FTPolynomial,
    #[serde(rename = "f_tilde")]
    pub remainder: FTPolynomial,
    pub ledger: Vec<LedgerEntry>,
    pub transform_meta: TransformMeta,
}

/// Residual of a truncated Lie series, split by origin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LieResidual {
    pub series_tail: f64,
    pub cap_pruned: f64,
}

impl LieResidual {
    pub fn total(&self) -> f64 {
        self.series_tail + self.cap_pruned
    }
}

fn check_period(p: &[i64], period: f64, n: usize) -> Result<(), NormalFormError> {
    if p.len() != n {
        return Err(AlgebraError::DimensionMismatch { expected: n, got: p.len() }.into());
    }
    if !(period > 0.0 && period.is_finite()) || p.iter().all(|&v| v == 0) {
        return Err(NormalFormError::InvalidConfig(format!(
            "periodic data p = {p:?}, T = {period} is degenerate"
        )));
    }
    Ok(())
}

/// `[f] = (1/T) ∫_0^T f ∘ Φ_t^l dt` for `ω = p/T`: keeps the modes with `k·p = 0`.
pub fn average_along_periodic_flow(
    f: &FTPolynomial,
    p: &[i64],
    period: f64,
) -> Result<FTPolynomial, NormalFormError> {
    check_period(p, period, f.dims())?;
    Ok(f.filter(|m| m.dot(p) == 0))
}

/// `χ = (1/T) ∫_0^T t (f − [f]) ∘ Φ_t^l dt`, mode by mode
/// `c ↦ c T / (2πi k·p)`.
pub fn homological_generator(
    f: &FTPolynomial,
    p: &[i64],
    period: f64,
) -> Result<FTPolynomial, NormalFormError> {
    check_period(p, period, f.dims())?;
    Ok(f
        .map_coefficients(|m, c| {
            let km = m.dot(p);
            if km == 0 {
                Complex64::new(0.0, 0.0)
            } else {
                c * Complex64::new(0.0, -period / (TWO_PI * km as f64))
            }
        })
        .realify())
}

fn check_caps(caps: Caps, polys: &[&FTPolynomial]) -> Result<(), NormalFormError> {
    let k_needed = polys.iter().map(|p| p.max_fourier_order()).max().unwrap_or(0);
    let d_needed = polys.iter().map(|p| p.max_degree()).max().unwrap_or(0);
    let (fourier, degree) = (caps.fourier.unwrap_or(u32::MAX), caps.degree.unwrap_or(u32::MAX));
    if k_needed > fourier || d_needed > degree {
        return Err(NormalFormError::CapsTooSmall {
            fourier,
            degree,
            k_needed,
            d_needed,
        });
    }
    Ok(())
}

/// `H ∘ Φ^χ` as the Lie series truncated after order `cfg.lie_order`, with
/// the dropped part bounded in the `C^{norm_order}` norm on radius `radius`.
pub fn lie_transform(
    h: &FTPolynomial,
    chi: &FTPolynomial,
    cfg: &NormalFormConfig,
    radius: f64,
) -> Result<(FTPolynomial, LieResidual), NormalFormError> {
    cfg.validate()?;
    let caps = cfg.caps();
    check_caps(caps, &[h, chi])?;
    let norm = |p: &FTPolynomial| p.ck_norm_upper_bound(cfg.norm_order, radius);
    let mut out = h.clone();
    let mut term = h.clone();
    let mut residual = LieResidual::default();
    let mut prev_norm = norm(h);
    let mut last_norm = prev_norm;
    for m in 1..=cfg.lie_order {
        let (kept, dropped) = chi.poisson_bracket_capped(&term, caps)?;
        let inv = 1.0 / m as f64;
        residual.cap_pruned += norm(&dropped) * inv;
        term = kept.scale(inv);
        out = out.add(&term)?;
        prev_norm = last_norm;
        last_norm = norm(&term);
        if term.is_zero() {
            break;
        }
    }
    if last_norm > 0.0 {
        // geometric tail Σ_{j≥1} q^j |L^M H / M!| with q the last observed ratio
        let q = if prev_norm > 0.0 { last_norm / prev_norm } else { 1.0 };
        residual.series_tail = if q < 1.0 { last_norm * q / (1.0 - q) } else { f64::INFINITY };
    }
    Ok((out, residual))
}

fn coefficient_defect(a: &FTPolynomial, b: &FTPolynomial) -> Result<f64, AlgebraError> {
    Ok(a.sub(b)?.max_abs_coefficient())
}

/// Iterated averaging of `H = l + f` with `l = (p/T)·J`.
pub fn iterate_normal_form(
    h_scaled: &FTPolynomial,
    p: &[i64],
    period: f64,
    cfg: &NormalFormConfig,
) -> Result<NormalFormResult, NormalFormError> {
    cfg.validate()?;
    let n = h_scaled.dims();
    check_period(p, period, n)?;
    let t_mu = period * cfg.mu;
    if t_mu > cfg.constants.c3 {
        return Err(NormalFormError::Smallness {
            condition: "T·μ ≤ c₃".into(),
            lhs: t_mu,
            rhs: cfg.constants.c3,
        });
    }
    let omega: Vec<f64> = p.iter().map(|&v| v as f64 / period).collect();
    let center = h_scaled.center().to_vec();
    let l = FTPolynomial::linear(center.clone(), &omega);
    let radii = cfg.shrink_schedule();
    let norm = |q: &FTPolynomial, j: usize| q.ck_norm_upper_bound(cfg.norm_order, radii[j.min(radii.len() - 1)]);

    let mut h = h_scaled.clone();
    let mut g = FTPolynomial::zero_at(center.clone());
    let mut f = h.sub(&l)?;
    let mut generators = Vec::with_capacity(cfg.steps);
    let mut ledger = Vec::with_capacity(cfg.steps + 1);
    for step in 0..cfg.steps {
        let avg = average_along_periodic_flow(&f, p, period)?;
        let chi = homological_generator(&f, p, period)?;
        let defect = coefficient_defect(&chi.poisson_bracket(&l)?, &avg.sub(&f)?)?;
        if defect > HOMOLOGICAL_TOL * f.max_abs_coefficient().max(1.0) {
            return Err(NormalFormError::HomologicalDefect { step, defect });
        }
        let radius = radii[(step + 1).min(radii.len() - 1)];
        let (next, residual) = lie_transform(&h, &chi, cfg, radius)?;
        if !(residual.total() <= cfg.residual_threshold) {
            return Err(NormalFormError::TruncationOverflow {
                step,
                residual: residual.total(),
                threshold: cfg.residual_threshold,
            });
        }
        ledger.push(LedgerEntry {
            step,
            f_norm_bound: norm(&f, step),
            g_norm_bound: norm(&g, step),
            residual: residual.total(),
            series_tail: residual.series_tail,
            cap_pruned: residual.cap_pruned,
            radius: radii[step.min(radii.len() - 1)],
        });
        g = g.add(&avg)?;
        h = next;
        f = h.sub(&l)?.sub(&g)?;
        generators.push(chi);
    }
    ledger.push(LedgerEntry {
        step: cfg.steps,
        f_norm_bound: norm(&f, cfg.steps),
        g_norm_bound: norm(&g, cfg.steps),
        residual: 0.0,
        series_tail: 0.0,
        cap_pruned: 0.0,
        radius: radii[cfg.steps.min(radii.len() - 1)],
    });
    if let Some(bad) = g.terms().find(|(m, _)| m.dot(p) != 0) {
        return Err(NormalFormError::InvalidConfig(format!(
            "non-resonant mode {:?} in g",
            bad.0.k
        )));
    }
    Ok(NormalFormResult {
        generators,
        g,
        remainder: f,
        ledger,
        transform_meta: TransformMeta {
            action_star: None,
            mu: cfg.mu,
            period,
            p: p.to_vec(),
            omega_per: omega,
        },
    })
}

impl NormalFormResult {
    /// Applies `Φ = Φ^{χ_0} ∘ … ∘ Φ^{χ_{s−1}}` in scaled variables.
    pub fn transform(&self, theta: &[f64], action: &[f64], tol: f64) -> Result<(Vec<f64>, Vec<f64>), NormalFormError> {
        let mut th = theta.to_vec();
        let mut ac = action.to_vec();
        for chi in self.generators.iter().rev() {
            if chi.is_zero() {
                continue;
            }
            let field = HamiltonianField::new(chi);
            (th, ac) = flow_map(&field, &th, &ac, 1.0, tol)?;
        }
        Ok((th, ac))
    }

    /// `l + g + f̃` in scaled variables.
    pub fn normal_form_hamiltonian(&self) -> Result<FTPolynomial, AlgebraError> {
        let l = FTPolynomial::linear(self.g.center().to_vec(), &self.transform_meta.omega_per);
        l.add(&self.g)?.add(&self.remainder)
    }

    pub fn total_residual(&self) -> f64 {
        self.ledger.iter().map(|e| e.residual).sum()
    }
}

/// `H_μ = μ^{−1} H(θ, I_* + μJ)` minus its constant, centered at `J = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledHamiltonian {
    pub hamiltonian: FTPolynomial,
    /// Dropped constant `H(·, I_*)` averaged part, in original units.
    pub energy_offset: f64,
    pub action_star: Vec<f64>,
    pub mu: f64,
}

fn scale_degrees(p: &FTPolynomial, mu: f64, shift: i32) -> FTPolynomial {
    p.map_coefficients(|m, c| c * mu.powi(m.degree() as i32 + shift))
}

/// Exact recenter-and-scale of `h + f` at `I_*` with factor `μ`.
pub fn rescale_system(
    system: &NearIntegrableSystem,
    action_star: &[f64],
    mu: f64,
) -> Result<ScaledHamiltonian, NormalFormError> {
    let n = system.dims();
    if action_star.len() != n {
        return Err(AlgebraError::DimensionMismatch { expected: n, got: action_star.len() }.into());
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(NormalFormError::InvalidConfig(format!("mu = {mu}")));
    }
    let reach = action_star
        .iter()
        .zip(system.h.center())
        .map(|(a, c)| (a - c).abs())
        .fold(0.0, f64::max)
        + 2.0 * mu;
    if reach > system.radius {
        return Err(NormalFormError::DomainViolation {
            reach,
            radius: system.radius,
        });
    }
    let full = system.hamiltonian()?.recenter(action_star)?;
    let zero = vec![0i32; n];
    let alpha0 = vec![0u32; n];
    let offset = full.coefficient(&zero, &alpha0).re;
    let without_constant = full.filter(|m| !(m.is_integrable() && m.degree() == 0));
    let scaled = scale_degrees(&without_constant, mu, -1).with_center(vec![0.0; n]);
    Ok(ScaledHamiltonian {
        hamiltonian: scaled,
        energy_offset: offset,
        action_star: action_star.to_vec(),
        mu,
    })
}

/// Inverse of [`rescale_system`] for any polynomial in scaled variables:
/// `μ P((I − I_*)/μ)` centered at `I_*`.
pub fn unscale(p: &FTPolynomial, action_star: &[f64], mu: f64) -> FTPolynomial {
    scale_degrees(p, 1.0 / mu, -1).with_center(action_star.to_vec())
}

impl ScaledHamiltonian {
    /// Original Hamiltonian recentered at `I_*`.
    pub fn unscale(&self) -> FTPolynomial {
        let n = self.action_star.len();
        let mut c = FTPolynomial::constant(n, self.energy_offset).with_center(self.action_star.clone());
        c = c
            .add(&unscale(&self.hamiltonian, &self.action_star, self.mu))
            .expect("same frame");
        c
    }
}

/// Claimed (implicit constant 1) and measured bounds of a local normal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBounds {
    pub f_mu_bound: f64,
    pub claimed_c0: f64,
    pub measured_c0: f64,
    pub claimed_angle_derivative: f64,
    pub measured_angle_derivative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalNormalForm {
    #[serde(flatten)]
    pub scaled: NormalFormResult,
    /// `g` in original variables, centered at `I_*`.
    pub g_original: FTPolynomial,
    /// `f̃` in original variables, centered at `I_*`.
    pub remainder_original: FTPolynomial,
    pub bounds: LocalBounds,
}

/// Rescale at `I_*`, average `cfg.steps` times, and map back.
pub fn local_normal_form(
    system: &NearIntegrableSystem,
    action_star: &[f64],
    p: &[i64],
    period: f64,
    cfg: &NormalFormConfig,
) -> Result<LocalNormalForm, NormalFormError> {
    cfg.validate()?;
    let mu = cfg.mu;
    let c = cfg.constants;
    let checks = [
        ("ε ≤ c₁·μ²", system.eps, c.c1 * mu * mu),
        ("μ ≤ c₂", mu, c.c2),
        ("T·μ ≤ c₃", period * mu, c.c3),
    ];
    for (condition, lhs, rhs) in checks {
        if lhs > rhs {
            return Err(NormalFormError::Smallness {
                condition: condition.into(),
                lhs,
                rhs,
            });
        }
    }
    let scaled = rescale_system(system, action_star, mu)?;
    let mut result = iterate_normal_form(&scaled.hamiltonian, p, period, cfg)?;
    result.transform_meta.action_star = Some(action_star.to_vec());

    let rho_final = *cfg.shrink_schedule().last().unwrap_or(&cfg.rho);
    let omega: Vec<f64> = result.transform_meta.omega_per.clone();
    let l = FTPolynomial::linear(vec![0.0; system.dims()], &omega);
    let f_mu = scaled.hamiltonian.sub(&l)?;
    let order = system.k_reg.saturating_sub(2) as i32;
    let bounds = LocalBounds {
        f_mu_bound: f_mu.ck_norm_upper_bound(cfg.norm_order, cfg.rho),
        claimed_c0: mu * mu,
        measured_c0: mu
            * (result.g.ck_norm_upper_bound(0, rho_final) + result.remainder.ck_norm_upper_bound(0, rho_final)),
        claimed_angle_derivative: (period * mu).powi(order) * mu * mu,
        measured_angle_derivative: mu * result.remainder.angle_gradient_bound(rho_final),
    };
    Ok(LocalNormalForm {
        g_original: unscale(&result.g, action_star, mu),
        remainder_original: unscale(&result.remainder, action_star, mu),
        scaled: result,
        bounds,
    })
}

impl LocalNormalForm {
    /// Largest action displacement `|Π_I Φ − Id|` in original units over
    /// `samples` random points of the scaled ball of radius `ρ/2`.
    pub fn generator_displacement(&self, rho: f64, samples: usize, seed: u64) -> Result<f64, NormalFormError> {
        let mu = self.scaled.transform_meta.mu;
        let n = self.g_original.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..samples {
            let theta: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let action: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5 * rho..=0.5 * rho)).collect();
            let (_, moved) = self.scaled.transform(&theta, &action, 1e-12)?;
            let d = moved.iter().zip(&action).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(mu * d);
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{synthesize_ck_perturbation, Mode, RegularityProfile};

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, nodes: usize) -> f64 {
        let m = if nodes % 2 == 0 { nodes } else { nodes + 1 };
        let h = (b - a) / m as f64;
        let mut s = f(a) + f(b);
        for i in 1..m {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    fn cfg(mu: f64) -> NormalFormConfig {
        NormalFormConfig {
            steps: 3,
            lie_order: 3,
            degree_cap: 4,
            fourier_cap: 8,
            mu,
            rho: 1.0,
            norm_order: 2,
            residual_threshold: 1.0,
            constants: SmallnessConstants::default(),
        }
    }

    fn two_mode(center: Vec<f64>) -> FTPolynomial {
        let mut f = FTPolynomial::zero_at(center);
        f.add_cos(&[1, 0], &[0, 0], 1.0);
        f.add_cos(&[0, 1], &[0, 0], 1.0);
        f
    }

    #[test]
    fn averaging_keeps_resonant_modes() {
        let f = two_mode(vec![0.0, 0.0]);
        let avg = average_along_periodic_flow(&f, &[1, 0], 1.0).unwrap();
        let mut expected = FTPolynomial::zero(2);
        expected.add_cos(&[0, 1], &[0, 0], 1.0);
        assert_eq!(avg, expected);
        let quad = simpson(|t| f.evaluate(&[0.3 + t, 0.45], &[0.0, 0.0]).unwrap(), 0.0, 1.0, 10_000);
        assert!((quad - avg.evaluate(&[0.3, 0.45], &[0.0, 0.0]).unwrap()).abs() < 1e-10);
        assert!(average_along_periodic_flow(&FTPolynomial::zero(2), &[1, 0], 1.0).unwrap().is_zero());
        assert_eq!(average_along_periodic_flow(&avg, &[1, 0], 1.0).unwrap(), avg);
    }

    #[test]
    fn generator_of_cosine_is_scaled_sine() {
        let mut f = FTPolynomial::zero(2);
        f.add_cos(&[1, 0], &[0, 0], 1.0);
        let chi = homological_generator(&f, &[1, 0], 1.0).unwrap();
        let mut expected = FTPolynomial::zero(2);
        expected.add_sin(&[1, 0], &[0, 0], 1.0 / TWO_PI);
        assert!(coefficient_defect(&chi, &expected).unwrap() < 1e-17);
        let mut res = FTPolynomial::zero(2);
        res.add_cos(&[0, 1], &[1, 0], 1.0);
        assert!(homological_generator(&res, &[1, 0], 1.0).unwrap().is_zero());
    }

    #[test]
    fn homological_identity_on_mixed_polynomial() {
        let mut f = synthesize_ck_perturbation(&RegularityProfile::new(3, 4, 2, 5, 0.1), 2).unwrap();
        f.add_cos(&[1, -2], &[1, 1], 0.3);
        f.add_sin(&[2, 1], &[2, 0], -0.7);
        let (p, t) = ([2i64, 1], 1.7);
        let omega = [2.0 / t, 1.0 / t];
        let l = FTPolynomial::linear(vec![0.0, 0.0], &omega);
        let chi = homological_generator(&f, &p, t).unwrap();
        let avg = average_along_periodic_flow(&f, &p, t).unwrap();
        let lhs = chi.poisson_bracket(&l).unwrap().add(&f).unwrap().sub(&avg).unwrap();
        assert!(lhs.max_abs_coefficient() <= 1e-13);
    }

    #[test]
    fn generator_matches_time_weighted_quadrature() {
        let mut f = FTPolynomial::zero(2);
        f.add_cos(&[1, 1], &[1, 0], 0.8);
        f.add_sin(&[2, -1], &[0, 0], 0.5);
        f.add_cos(&[1, -1], &[0, 2], 0.2);
        let (p, t) = ([1i64, 1], 2.0);
        let omega = [0.5, 0.5];
        let chi = homological_generator(&f, &p, t).unwrap();
        let avg = average_along_periodic_flow(&f, &p, t).unwrap();
        let (th, ac) = ([0.21, 0.77], [0.3, -0.4]);
        let integrand = |s: f64| {
            let pt = [th[0] + s * omega[0], th[1] + s * omega[1]];
            s * (f.evaluate(&pt, &ac).unwrap() - avg.evaluate(&pt, &ac).unwrap())
        };
        let quad = simpson(integrand, 0.0, t, 10_000) / t;
        assert!((quad - chi.evaluate(&th, &ac).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn lie_transform_identity_and_linear_case() {
        let c = cfg(0.01);
        let h = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]).add(&two_mode(vec![0.0, 0.0]).scale(0.01)).unwrap();
        let (same, res) = lie_transform(&h, &FTPolynomial::zero(2), &c, 1.0).unwrap();
        assert_eq!(same, h);
        assert_eq!(res.total(), 0.0);

        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]);
        let f = two_mode(vec![0.0, 0.0]).scale(0.01);
        let chi = homological_generator(&f, &[1, 0], 1.0).unwrap();
        let (out, res) = lie_transform(&l, &chi, &c, 1.0).unwrap();
        // angle-only χ: the series stops after the first bracket
        let expected = l.add(&average_along_periodic_flow(&f, &[1, 0], 1.0).unwrap()).unwrap().sub(&f).unwrap();
        assert!(coefficient_defect(&out, &expected).unwrap() < 1e-17);
        assert_eq!(res.total(), 0.0);
    }

    #[test]
    fn caps_must_cover_inputs() {
        let mut c = cfg(0.01);
        c.fourier_cap = 1;
        let mut h = FTPolynomial::zero(2);
        h.add_cos(&[2, 0], &[0, 0], 1.0);
        assert!(matches!(
            lie_transform(&h, &FTPolynomial::zero(2), &c, 1.0),
            Err(NormalFormError::CapsTooSmall { .. })
        ));
    }

    #[test]
    fn lie_transform_agrees_with_flow() {
        let mu = 0.01;
        let mut f = FTPolynomial::zero(2);
        f.add_cos(&[1, 0], &[1, 0], 1.0);
        f.add_cos(&[1, 1], &[0, 1], 0.5);
        f = f.add(&FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0])).unwrap().scale(mu);
        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]);
        let h = l.add(&f).unwrap();
        let chi = homological_generator(&f, &[1, 0], 1.0).unwrap();
        let c = cfg(mu);
        let (out, res) = lie_transform(&h, &chi, &c, 1.0).unwrap();
        let field = HamiltonianField::new(&chi);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let th = [rng.random::<f64>(), rng.random::<f64>()];
            let ac = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (t1, a1) = flow_map(&field, &th, &ac, 1.0, 1e-13).unwrap();
            let exact = h.evaluate(&t1, &a1).unwrap();
            let approx = out.evaluate(&th, &ac).unwrap();
            assert!((exact - approx).abs() <= 10.0 * res.total(), "{} vs {}", (exact - approx).abs(), res.total());
        }
    }

    #[test]
    fn integrable_input_gives_trivial_normal_form() {
        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]);
        let nf = iterate_normal_form(&l, &[1, 0], 1.0, &cfg(0.01)).unwrap();
        assert!(nf.g.is_zero() && nf.remainder.is_zero());
        assert!(nf.generators.iter().all(FTPolynomial::is_zero));
        assert_eq!(nf.ledger.len(), 4);
    }

    #[test]
    fn resonant_input_is_absorbed_into_g() {
        let mut f = FTPolynomial::zero(2);
        f.add_cos(&[0, 1], &[1, 0], 0.01);
        f.add_cos(&[0, 2], &[0, 1], 0.01);
        let h = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]).add(&f).unwrap();
        let nf = iterate_normal_form(&h, &[1, 0], 1.0, &cfg(0.01)).unwrap();
        assert_eq!(nf.g, f);
        assert!(nf.remainder.is_zero());
    }

    #[test]
    fn remainder_bounds_decay() {
        let mu = 0.01;
        let mut f = two_mode(vec![0.0, 0.0]);
        f.add_cos(&[1, 1], &[1, 0], 0.5);
        let f = f.add(&FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0])).unwrap().scale(mu);
        let h = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]).add(&f).unwrap();
        let nf = iterate_normal_form(&h, &[1, 0], 1.0, &cfg(mu)).unwrap();
        let norms: Vec<f64> = nf.ledger.iter().map(|e| e.f_norm_bound).collect();
        assert!(norms.windows(2).all(|w| w[1] < 0.5 * w[0]), "{norms:?}");
        assert!(nf.g.terms().all(|(m, _)| m.k[0] == 0));
    }

    #[test]
    fn smallness_is_enforced() {
        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]);
        let err = iterate_normal_form(&l, &[1, 0], 10.0, &cfg(0.1)).unwrap_err();
        assert!(matches!(err, NormalFormError::Smallness { .. }));
    }

    #[test]
    fn pure_taylor_rescaling() {
        let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
        let sys = NearIntegrableSystem::integrable(h, 1.0, 3).unwrap();
        let star = [0.3, 0.2];
        let mu = 0.05;
        let s = rescale_system(&sys, &star, mu).unwrap();
        let mut expected = FTPolynomial::linear(vec![0.0, 0.0], &star);
        expected = expected
            .add(&FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[mu, mu]))
            .unwrap();
        assert!(coefficient_defect(&s.hamiltonian, &expected).unwrap() < 1e-16);
        assert!((s.energy_offset - 0.5 * (0.09 + 0.04)).abs() < 1e-16);
        assert!(matches!(
            rescale_system(&sys, &[0.95, 0.0], mu),
            Err(NormalFormError::DomainViolation { .. })
        ));
    }

    #[test]
    fn rescale_round_trip() {
        let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 2.0]);
        let f = synthesize_ck_perturbation(&RegularityProfile::new(3, 4, 2, 9, 1e-4), 2).unwrap();
        let mut f = f;
        f.add_cos(&[1, 1], &[2, 1], 1e-4);
        let sys = NearIntegrableSystem::new(h, f, 1.0, 3, 1e-4).unwrap();
        let star = [0.2, -0.1];
        let s = rescale_system(&sys, &star, 0.03).unwrap();
        let back = s.unscale();
        let orig = sys.hamiltonian().unwrap().recenter(&star).unwrap();
        let scale = orig.max_abs_coefficient();
        assert!(coefficient_defect(&back, &orig).unwrap() <= 1e-13 * scale);
        let mode = Mode::new(&[1, 1], &[2, 1]);
        assert!(back.terms().any(|(m, _)| *m == mode));
    }

    #[test]
    fn local_form_of_integrable_system_is_taylor_part() {
        let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
        let sys = NearIntegrableSystem::integrable(h, 1.0, 4).unwrap();
        let mut c = cfg(0.05);
        c.steps = 2;
        let nf = local_normal_form(&sys, &[0.5, 0.0], &[1, 0], 2.0, &c).unwrap();
        assert!(nf.scaled.remainder.is_zero());
        assert!(nf.scaled.generators.iter().all(FTPolynomial::is_zero));
        let mut expected = FTPolynomial::diagonal_quadratic(vec![0.5, 0.0], &[1.0, 1.0]);
        expected = expected.filter(|m| m.degree() == 2);
        assert!(coefficient_defect(&nf.g_original, &expected).unwrap() < 1e-15);
        assert_eq!(nf.generator_displacement(c.rho, 5, 1).unwrap(), 0.0);
    }

    #[test]
    fn local_preconditions_name_the_violation() {
        let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
        let f = two_mode(vec![0.0, 0.0]).scale(1e-2);
        let sys = NearIntegrableSystem::new(h, f, 1.0, 4, 1e-2).unwrap();
        let err = local_normal_form(&sys, &[0.5, 0.0], &[1, 0], 2.0, &cfg(0.05)).unwrap_err();
        match err {
            NormalFormError::Smallness { condition, .. } => assert!(condition.starts_with("ε")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn result_json_has_ledger() {
        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]).add(&two_mode(vec![0.0, 0.0]).scale(0.01)).unwrap();
        let nf = iterate_normal_form(&l, &[1, 0], 1.0, &cfg(0.01)).unwrap();
        let v: serde_json::Value = serde_json::to_value(&nf).unwrap();
        for key in ["generators", "g", "f_tilde", "ledger"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let e = &v["ledger"][0];
        for key in ["step", "f_norm_bound", "g_norm_bound", "residual"] {
            assert!(e.get(key).is_some(), "{key}");
        }
        let back: NormalFormResult = serde_json::from_value(v).unwrap();
        assert_eq!(back, nf);
    }
}
