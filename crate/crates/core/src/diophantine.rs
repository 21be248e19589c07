//! Periodic approximation of frequency vectors.
//!
//! A frequency `ω` is `T`-periodic when `Tω ∈ Z^n \ {0}`. Given an arbitrary
//! `ω` we look for a nearby periodic vector with controlled period by a
//! brute-force simultaneous Diophantine search over denominators `q ≤ ⌈Q⌉`,
//! normalizing by the largest-magnitude component.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, IntegrableModel, ResonanceModule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiophantineError {
    #[error("Q must be at least 1, got {0}")]
    InvalidQ(f64),
    #[error("cannot approximate the zero frequency")]
    ZeroFrequency,
    #[error("frequency has a non-finite component")]
    NonFinite,
    #[error("Dirichlet bound violated: error {error} > {bound} (q = {q})")]
    BoundViolated { q: u64, error: f64, bound: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A periodic frequency `ω_per = p / T` close to an input frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbitApprox {
    /// Winning denominator of the search (the normalizer's numerator after
    /// reduction).
    pub q: u64,
    /// Integer vector with `T ω_per = p`.
    pub p: Vec<i64>,
    #[serde(rename = "T")]
    pub period: f64,
    pub omega_per: Vec<f64>,
    /// Index of the normalizing (largest-magnitude) component.
    pub normalizer: usize,
    /// Search objective: `max_i dist(q ω_i / ω_j, Z)`.
    pub ratio_error: f64,
    /// `|ω_in − ω_per|_∞`.
    pub approx_error: f64,
    pub action_star: Option<Vec<f64>>,
    pub action_error: Option<f64>,
}

/// CLI-facing JSON shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxSummary {
    pub q: u64,
    pub p: Vec<i64>,
    #[serde(rename = "T")]
    pub period: f64,
    pub omega_per: Vec<f64>,
    pub error: f64,
}

impl From<&PeriodicOrbitApprox> for ApproxSummary {
    fn from(a: &PeriodicOrbitApprox) -> Self {
        ApproxSummary {
            q: a.q,
            p: a.p.clone(),
            period: a.period,
            omega_per: a.omega_per.clone(),
            error: a.approx_error,
        }
    }
}

fn dist_to_int(x: f64) -> f64 {
    (x - x.round()).abs()
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Dirichlet bound `Q^{−1/(n−1)}` for `n ≥ 2`.
pub fn dirichlet_bound(q_max: f64, n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    q_max.powf(-1.0 / (n - 1) as f64)
}

/// Search objective at denominator `q`.
fn objective(ratios: &[f64], normalizer: usize, q: u64) -> f64 {
    ratios
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != normalizer)
        .map(|(_, r)| dist_to_int(q as f64 * r))
        .fold(0.0, f64::max)
}

/// Best periodic approximation with denominator `q ∈ {1, …, ⌈Q⌉}`; ties go to
/// the smallest `q`.
pub fn dirichlet_approx(omega: &[f64], q_max: f64) -> Result<PeriodicOrbitApprox, DiophantineError> {
    if !(q_max >= 1.0) || !q_max.is_finite() {
        return Err(DiophantineError::InvalidQ(q_max));
    }
    if omega.iter().any(|w| !w.is_finite()) {
        return Err(DiophantineError::NonFinite);
    }
    let n = omega.len();
    let normalizer = (0..n)
        .max_by(|&a, &b| omega[a].abs().total_cmp(&omega[b].abs()).then(b.cmp(&a)))
        .ok_or(DiophantineError::ZeroFrequency)?;
    let wj = omega[normalizer];
    if wj == 0.0 {
        return Err(DiophantineError::ZeroFrequency);
    }
    let ratios: Vec<f64> = omega.iter().map(|w| w / wj).collect();
    let upper = q_max.ceil() as u64;
    let (mut best_q, mut best_err) = (1u64, f64::INFINITY);
    for q in 1..=upper {
        let e = objective(&ratios, normalizer, q);
        if e < best_err {
            best_q = q;
            best_err = e;
            if e == 0.0 {
                break;
            }
        }
    }
    let bound = dirichlet_bound(q_max, n);
    if n >= 2 && best_err > bound * (1.0 + 1e-12) {
        return Err(DiophantineError::BoundViolated {
            q: best_q,
            error: best_err,
            bound,
        });
    }
    let sign = wj.signum() as i64;
    let mut p: Vec<i64> = ratios
        .iter()
        .enumerate()
        .map(|(i, r)| if i == normalizer { best_q as i64 } else { (best_q as f64 * r).round() as i64 })
        .collect();
    let g = p.iter().fold(0u64, |g, &x| gcd(g, x.unsigned_abs()));
    let q = best_q / g;
    for v in p.iter_mut() {
        *v = *v / g as i64 * sign;
    }
    let period = q as f64 / wj.abs();
    let omega_per: Vec<f64> = p.iter().map(|&v| v as f64 / period).collect();
    let approx_error = omega
        .iter()
        .zip(&omega_per)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(PeriodicOrbitApprox {
        q,
        p,
        period,
        omega_per,
        normalizer,
        ratio_error: best_err,
        approx_error,
        action_star: None,
        action_error: None,
    })
}

/// Periodic approximation of a frequency constrained to the span of an
/// integer lattice basis `B` (columns): `ω ≈ B x`, Dirichlet is applied to the
/// coordinates `x`, and `ω_per = B p_x / T` is `T`-periodic with `T ω_per = B p_x`.
pub fn dirichlet_approx_in_lattice(
    omega: &[f64],
    basis: &[Vec<i64>],
    q_max: f64,
) -> Result<PeriodicOrbitApprox, DiophantineError> {
    use nalgebra::{DMatrix, DVector};
    let n = omega.len();
    let d = basis.len();
    if d == n && is_identity(basis) {
        return dirichlet_approx(omega, q_max);
    }
    let b = DMatrix::from_fn(n, d, |i, j| basis[j][i] as f64);
    let w = DVector::from_column_slice(omega);
    let x = (b.transpose() * &b)
        .lu()
        .solve(&(b.transpose() * &w))
        .ok_or(DiophantineError::ZeroFrequency)?;
    let inner = dirichlet_approx(x.as_slice(), q_max)?;
    let mut p = vec![0i64; n];
    for (j, col) in basis.iter().enumerate() {
        for i in 0..n {
            p[i] += col[i] * inner.p[j];
        }
    }
    let g = p.iter().fold(0u64, |g, &x| gcd(g, x.unsigned_abs())).max(1);
    for v in p.iter_mut() {
        *v /= g as i64;
    }
    let period = inner.period / g as f64;
    let omega_per: Vec<f64> = p.iter().map(|&v| v as f64 / period).collect();
    let approx_error = omega
        .iter()
        .zip(&omega_per)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(PeriodicOrbitApprox {
        q: inner.q,
        p,
        period,
        omega_per,
        normalizer: inner.normalizer,
        ratio_error: inner.ratio_error,
        approx_error,
        action_star: None,
        action_error: None,
    })
}

fn is_identity(basis: &[Vec<i64>]) -> bool {
    basis
        .iter()
        .enumerate()
        .all(|(j, col)| col.iter().enumerate().all(|(i, &v)| v == i64::from(i == j)))
}

/// Scale of the Dirichlet search, `C_Q · ε^{−(d−1)/(2d)}`.
pub fn approximation_scale(eps: f64, codim: usize, c_q: f64) -> f64 {
    let d = codim as f64;
    c_q * eps.powf(-(d - 1.0) / (2.0 * d))
}

/// Fills in the periodic action `I_*` with `∇h(I_*) = ω_per` by Newton
/// inversion from `start`.
pub fn periodic_action(
    model: &IntegrableModel,
    approx: &PeriodicOrbitApprox,
    start: &[f64],
) -> Result<PeriodicOrbitApprox, DiophantineError> {
    let star = model.action_from_frequency(&approx.omega_per, start)?;
    let err = star
        .iter()
        .zip(start)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut out = approx.clone();
    out.action_star = Some(star);
    out.action_error = Some(err);
    Ok(out)
}

/// Periodic action on a codimension-one resonant surface: every frequency on
/// `S_Λ` is a multiple `λ k_*` of the primitive generator `k_*` of `Λ^⊥`, so
/// the projection of `start` onto `S_Λ` is periodic with `T = 1/|λ|`.
pub fn periodic_action_on_surface(
    model: &IntegrableModel,
    module: &ResonanceModule,
    start: &[f64],
) -> Result<PeriodicOrbitApprox, DiophantineError> {
    let dual = module.orthogonal_lattice_basis();
    assert_eq!(dual.len(), 1, "surface branch needs codimension one");
    let k_star = &dual[0];
    let proj = model.resonance_distance(start, module)?;
    let omega = model.frequency(&proj.nearest)?;
    let knorm2: f64 = k_star.iter().map(|&k| (k * k) as f64).sum();
    let lambda: f64 = omega.iter().zip(k_star).map(|(w, &k)| w * k as f64).sum::<f64>() / knorm2;
    if lambda == 0.0 {
        return Err(DiophantineError::ZeroFrequency);
    }
    let period = 1.0 / lambda.abs();
    let p: Vec<i64> = k_star.iter().map(|&k| k * lambda.signum() as i64).collect();
    let omega_per: Vec<f64> = p.iter().map(|&v| v as f64 / period).collect();
    let approx_error = omega
        .iter()
        .zip(&omega_per)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let normalizer = (0..p.len()).max_by_key(|&i| p[i].unsigned_abs()).unwrap_or(0);
    Ok(PeriodicOrbitApprox {
        q: p[normalizer].unsigned_abs(),
        p,
        period,
        omega_per,
        normalizer,
        ratio_error: 0.0,
        approx_error,
        action_error: Some(proj.distance),
        action_star: Some(proj.nearest),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scan normalized by an arbitrary component.
    fn oracle(omega: &[f64], q_max: u64) -> (u64, f64) {
        let j = (0..omega.len())
            .max_by(|&a, &b| omega[a].abs().total_cmp(&omega[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let mut best = (0, f64::INFINITY);
        for q in 1..=q_max {
            let mut e: f64 = 0.0;
            for (i, w) in omega.iter().enumerate() {
                if i != j {
                    let x = q as f64 * w / omega[j];
                    e = e.max((x - x.round()).abs());
                }
            }
            if e < best.1 {
                best = (q, e);
            }
        }
        best
    }

    #[test]
    fn periodic_input_is_fixed_point() {
        let a = dirichlet_approx(&[0.5, 0.25], 10.0).unwrap();
        assert_eq!(a.approx_error, 0.0);
        assert_eq!(a.omega_per, vec![0.5, 0.25]);
        assert_eq!(a.p, vec![2, 1]);
        assert_eq!(a.period, 4.0);
    }

    #[test]
    fn sqrt2_example() {
        let w = [1.0, 2f64.sqrt()];
        let a = dirichlet_approx(&w, 10.0).unwrap();
        // normalizer is the √2 component: best q is 7 (ratio 1/√2 ≈ 5/7)
        assert_eq!(a.normalizer, 1);
        assert_eq!(a.q, 7);
        assert_eq!(a.p, vec![5, 7]);
        assert!((a.ratio_error - (7.0 / 2f64.sqrt() - 5.0).abs()).abs() < 1e-15);
        assert!(a.ratio_error <= 0.1);
        let (q, e) = oracle(&w, 10);
        assert_eq!(q, 7);
        assert!((e - a.ratio_error).abs() < 1e-12);
        for (pi, wi) in a.p.iter().zip(&a.omega_per) {
            assert!((a.period * wi - *pi as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn three_dim_example() {
        let w = [1.0, 2f64.sqrt(), 3f64.sqrt()];
        let a = dirichlet_approx(&w, 50.0).unwrap();
        let (q, e) = oracle(&w, 50);
        assert_eq!(a.q, q);
        assert!((a.ratio_error - e).abs() < 1e-12);
        assert!(a.ratio_error <= 50f64.powf(-0.5));
    }

    #[test]
    fn negative_normalizer_keeps_t_positive() {
        let a = dirichlet_approx(&[0.3, -0.9], 20.0).unwrap();
        assert!(a.period > 0.0);
        assert_eq!(a.p, vec![1, -3]);
        assert!(a.approx_error < 1e-15);
    }

    #[test]
    fn errors() {
        assert_eq!(dirichlet_approx(&[1.0, 2.0], 0.5), Err(DiophantineError::InvalidQ(0.5)));
        assert_eq!(dirichlet_approx(&[0.0, 0.0], 5.0), Err(DiophantineError::ZeroFrequency));
    }

    #[test]
    fn approximation_scale_examples() {
        assert_eq!(approximation_scale(1e-4, 1, 1.0), 1.0);
        assert_eq!(approximation_scale(0.37, 1, 2.5), 2.5);
        assert!((approximation_scale(1e-4, 2, 1.0) - 10.0).abs() < 1e-12);
        assert_eq!(approximation_scale(1.0, 3, 1.7), 1.7);
    }

    #[test]
    fn periodic_action_examples() {
        let iso = IntegrableModel::diagonal(&[1.0, 1.0], 2.0);
        let a = dirichlet_approx(&[0.5, 0.7], 10.0).unwrap();
        let a = periodic_action(&iso, &a, &[0.5, 0.7]).unwrap();
        let star = a.action_star.clone().unwrap();
        assert!((star[0] - 0.5).abs() < 1e-15 && (star[1] - 0.7).abs() < 1e-15);
        assert!(a.action_error.unwrap() < 1e-15);

        let aniso = IntegrableModel::diagonal(&[1.0, 2.0], 2.0);
        let b = periodic_action(&aniso, &a, &[0.4, 0.4]).unwrap();
        let star = b.action_star.unwrap();
        assert!((star[0] - 0.5).abs() < 1e-14 && (star[1] - 0.35).abs() < 1e-14);
    }

    #[test]
    fn surface_branch_is_periodic() {
        let iso = IntegrableModel::diagonal(&[1.0, 1.0], 2.0);
        let lam = ResonanceModule::new(2, vec![vec![1, -2]]).unwrap();
        let a = periodic_action_on_surface(&iso, &lam, &[0.41, 0.2]).unwrap();
        // frequency (= action) on S_Λ satisfies I₁ = 2 I₂, so k_* ∝ (2, 1)
        assert_eq!(a.p, vec![2, 1]);
        let star = a.action_star.unwrap();
        assert!((star[0] - 2.0 * star[1]).abs() < 1e-14);
        for (pi, wi) in a.p.iter().zip(&a.omega_per) {
            assert!((a.period * wi - *pi as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_variant_matches_plain_for_full_rank() {
        let w = [0.31, -0.77, 0.52];
        let id = vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]];
        assert_eq!(dirichlet_approx_in_lattice(&w, &id, 30.0).unwrap(), dirichlet_approx(&w, 30.0).unwrap());
        // frequency in the plane ω₁ = ω₂
        let basis = vec![vec![1, 1, 0], vec![0, 0, 1]];
        let w = [0.4, 0.4, 0.4 * 2f64.sqrt()];
        let a = dirichlet_approx_in_lattice(&w, &basis, 10.0).unwrap();
        assert_eq!(a.p[0], a.p[1]);
        assert!(a.approx_error < 0.1);
    }
}
