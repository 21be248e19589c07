//! Finite Fourier–Taylor polynomials on `T^n × R^n`.
//!
//! A polynomial is the real-valued function
//!
//! ```text
//!     p(θ, I) = Σ c_{k,α} (I − I_c)^α e^{2πi k·θ}
//! ```
//!
//! stored as a sparse map from `(k, α)` to complex coefficients. Both members
//! of a conjugate pair `(k, α)` / `(−k, α)` are stored; every operation that
//! builds new coefficients re-symmetrizes them so the function stays real.
//!
//! Bracket convention: `{f, g} = ∂_I f · ∂_θ g − ∂_θ f · ∂_I g`. With the
//! Hamiltonian vector field `X_χ = (∂_I χ, −∂_θ χ)` the Lie derivative of `H`
//! along `X_χ` is `{χ, H}`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("expansion centers differ: {left:?} vs {right:?} (recenter explicitly)")]
    CenterMismatch { left: Vec<f64>, right: Vec<f64> },
    #[error("polynomial has angle dependence where an integrable one is required")]
    NotIntegrable,
    #[error("invalid regularity profile: {0}")]
    InvalidProfile(String),
    #[error("malformed polynomial: {0}")]
    Malformed(String),
}

/// Fourier index `k` and action multi-index `α` of one term.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub k: SmallVec<[i32; 4]>,
    pub alpha: SmallVec<[u32; 4]>,
}

impl Mode {
    pub fn new(k: &[i32], alpha: &[u32]) -> Self {
        Mode {
            k: SmallVec::from_slice(k),
            alpha: SmallVec::from_slice(alpha),
        }
    }

    pub fn fourier_order(&self) -> u32 {
        self.k.iter().map(|k| k.unsigned_abs()).sum()
    }

    pub fn degree(&self) -> u32 {
        self.alpha.iter().sum()
    }

    pub fn is_integrable(&self) -> bool {
        self.k.iter().all(|&k| k == 0)
    }

    /// Conjugate partner `(−k, α)`.
    pub fn conjugate(&self) -> Mode {
        Mode {
            k: self.k.iter().map(|k| -k).collect(),
            alpha: self.alpha.clone(),
        }
    }

    /// `k · p` in integer arithmetic.
    pub fn dot(&self, p: &[i64]) -> i64 {
        self.k.iter().zip(p).map(|(&k, &p)| k as i64 * p).sum()
    }

    /// True when the first nonzero Fourier index is positive.
    fn is_positive_half(&self) -> bool {
        self.k.iter().find(|&&k| k != 0).is_some_and(|&k| k > 0)
    }
}

/// Truncation caps: maximal `|k|_1` and maximal `|α|`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub fourier: Option<u32>,
    pub degree: Option<u32>,
}

impl Caps {
    pub const NONE: Caps = Caps {
        fourier: None,
        degree: None,
    };

    pub fn new(fourier: u32, degree: u32) -> Self {
        Caps {
            fourier: Some(fourier),
            degree: Some(degree),
        }
    }

    pub fn admits(&self, mode: &Mode) -> bool {
        self.fourier.is_none_or(|k| mode.fourier_order() <= k)
            && self.degree.is_none_or(|d| mode.degree() <= d)
    }

    fn admits_parts(&self, k: &[i32], alpha: &[u32]) -> bool {
        self.fourier
            .is_none_or(|c| k.iter().map(|k| k.unsigned_abs()).sum::<u32>() <= c)
            && self.degree.is_none_or(|d| alpha.iter().sum::<u32>() <= d)
    }
}

/// Sparse real Fourier–Taylor polynomial.
#[derive(Clone, PartialEq)]
pub struct FTPolynomial {
    n: usize,
    center: Vec<f64>,
    terms: BTreeMap<Mode, Complex64>,
}

impl fmt::Debug for FTPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FTPolynomial")
            .field("n", &self.n)
            .field("center", &self.center)
            .field("terms", &self.terms.len())
            .finish()
    }
}

impl FTPolynomial {
    pub fn zero(n: usize) -> Self {
        Self::zero_at(vec![0.0; n])
    }

    pub fn zero_at(center: Vec<f64>) -> Self {
        assert!(!center.is_empty(), "polynomial needs n >= 1");
        FTPolynomial {
            n: center.len(),
            center,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        let mut p = Self::zero(n);
        p.add_term(Mode::new(&vec![0; n], &vec![0; n]), Complex64::new(value, 0.0));
        p
    }

    /// Builds a polynomial from raw terms, summing duplicates. The caller is
    /// responsible for supplying conjugate pairs; [`FTPolynomial::is_real`]
    /// checks the result.
    pub fn from_terms<I>(center: Vec<f64>, terms: I) -> Result<Self, AlgebraError>
    where
        I: IntoIterator<Item = (Mode, Complex64)>,
    {
        let mut p = Self::zero_at(center);
        for (mode, c) in terms {
            p.check_mode(&mode)?;
            p.add_term(mode, c);
        }
        Ok(p)
    }

    /// `c · (I − I_c)^α`, a real action monomial.
    pub fn monomial(center: Vec<f64>, alpha: &[u32], c: f64) -> Self {
        let n = center.len();
        let mut p = Self::zero_at(center);
        p.add_term(Mode::new(&vec![0; n], alpha), Complex64::new(c, 0.0));
        p
    }

    /// Linear Hamiltonian `ω · (I − I_c)`.
    pub fn linear(center: Vec<f64>, omega: &[f64]) -> Self {
        let n = center.len();
        let mut p = Self::zero_at(center);
        for (i, &w) in omega.iter().enumerate() {
            let mut alpha = vec![0; n];
            alpha[i] = 1;
            p.add_term(Mode::new(&vec![0; n], &alpha), Complex64::new(w, 0.0));
        }
        p
    }

    /// `½ Σ a_i (I_i − I_{c,i})²`.
    pub fn diagonal_quadratic(center: Vec<f64>, weights: &[f64]) -> Self {
        let n = center.len();
        let mut p = Self::zero_at(center);
        for (i, &a) in weights.iter().enumerate() {
            let mut alpha = vec![0; n];
            alpha[i] = 2;
            p.add_term(Mode::new(&vec![0; n], &alpha), Complex64::new(0.5 * a, 0.0));
        }
        p
    }

    /// Adds `amp · (I − I_c)^α · cos(2π k·θ)`.
    pub fn add_cos(&mut self, k: &[i32], alpha: &[u32], amp: f64) {
        self.add_real_mode(Mode::new(k, alpha), Complex64::new(0.5 * amp, 0.0));
    }

    /// Adds `amp · (I − I_c)^α · sin(2π k·θ)`.
    pub fn add_sin(&mut self, k: &[i32], alpha: &[u32], amp: f64) {
        self.add_real_mode(Mode::new(k, alpha), Complex64::new(0.0, -0.5 * amp));
    }

    /// Adds `c e^{2πik·θ} + conj(c) e^{−2πik·θ}` times the monomial; for `k = 0`
    /// this is `2 Re(c)`.
    pub fn add_real_mode(&mut self, mode: Mode, c: Complex64) {
        if mode.is_integrable() {
            self.add_term(mode, Complex64::new(2.0 * c.re, 0.0));
        } else {
            let conj = mode.conjugate();
            self.add_term(mode, c);
            self.add_term(conj, c.conj());
        }
    }

    fn add_term(&mut self, mode: Mode, c: Complex64) {
        debug_assert_eq!(mode.k.len(), self.n);
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let entry = self.terms.entry(mode);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = *o.get() + c;
                if sum.re == 0.0 && sum.im == 0.0 {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    fn check_mode(&self, mode: &Mode) -> Result<(), AlgebraError> {
        if mode.k.len() != self.n || mode.alpha.len() != self.n {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.n,
                got: mode.k.len().max(mode.alpha.len()),
            });
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mode, &Complex64)> {
        self.terms.iter()
    }

    pub fn coefficient(&self, k: &[i32], alpha: &[u32]) -> Complex64 {
        self.terms
            .get(&Mode::new(k, alpha))
            .copied()
            .unwrap_or_default()
    }

    pub fn is_integrable(&self) -> bool {
        self.terms.keys().all(Mode::is_integrable)
    }

    pub fn max_fourier_order(&self) -> u32 {
        self.terms.keys().map(Mode::fourier_order).max().unwrap_or(0)
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(Mode::degree).max().unwrap_or(0)
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Checks `c_{−k,α} = conj(c_{k,α})` up to `tol` (absolute).
    pub fn is_real(&self, tol: f64) -> bool {
        self.terms.iter().all(|(mode, c)| {
            let partner = self.terms.get(&mode.conjugate()).copied().unwrap_or_default();
            (partner - c.conj()).norm() <= tol
        })
    }

    /// Re-imposes the reality invariant by averaging each conjugate pair.
    pub fn realify(mut self) -> Self {
        let mut fixed = BTreeMap::new();
        for (mode, c) in &self.terms {
            if mode.is_integrable() {
                if c.re != 0.0 {
                    fixed.insert(mode.clone(), Complex64::new(c.re, 0.0));
                }
            } else if mode.is_positive_half() {
                let conj = mode.conjugate();
                let partner = self.terms.get(&conj).copied().unwrap_or_default();
                let avg = (c + partner.conj()) * 0.5;
                if avg.re != 0.0 || avg.im != 0.0 {
                    fixed.insert(conj, avg.conj());
                    fixed.insert(mode.clone(), avg);
                }
            } else if !self.terms.contains_key(&mode.conjugate()) {
                // Orphan on the negative half: rebuild it from its own conjugate.
                let avg = c * 0.5;
                if avg.re != 0.0 || avg.im != 0.0 {
                    fixed.insert(mode.conjugate(), avg.conj());
                    fixed.insert(mode.clone(), avg);
                }
            }
        }
        self.terms = fixed;
        self
    }

    /// Removes terms with `|c| ≤ tol`.
    pub fn prune(mut self, tol: f64) -> Self {
        self.terms.retain(|_, c| c.norm() > tol);
        self
    }

    /// Splits into `(kept, dropped)` according to the caps.
    pub fn truncate(&self, caps: Caps) -> (FTPolynomial, FTPolynomial) {
        let mut kept = Self::zero_at(self.center.clone());
        let mut dropped = Self::zero_at(self.center.clone());
        for (mode, c) in &self.terms {
            if caps.admits(mode) {
                kept.terms.insert(mode.clone(), *c);
            } else {
                dropped.terms.insert(mode.clone(), *c);
            }
        }
        (kept, dropped)
    }

    /// Keeps the terms selected by `pred`.
    pub fn filter<F: Fn(&Mode) -> bool>(&self, pred: F) -> FTPolynomial {
        FTPolynomial {
            n: self.n,
            center: self.center.clone(),
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| pred(m))
                .map(|(m, c)| (m.clone(), *c))
                .collect(),
        }
    }

    /// Applies `f(mode, c)` to every coefficient and drops exact zeros.
    pub fn map_coefficients<F>(&self, f: F) -> FTPolynomial
    where
        F: Fn(&Mode, Complex64) -> Complex64,
    {
        FTPolynomial {
            n: self.n,
            center: self.center.clone(),
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.clone(), f(m, *c)))
                .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
                .collect(),
        }
    }

    /// Relabels the expansion point without touching coefficients.
    pub fn with_center(mut self, center: Vec<f64>) -> Self {
        assert_eq!(center.len(), self.n);
        self.center = center;
        self
    }

    pub fn scale(&self, s: f64) -> FTPolynomial {
        self.map_coefficients(|_, c| c * s)
    }

    fn same_frame(&self, other: &FTPolynomial) -> Result<(), AlgebraError> {
        if self.n != other.n {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.n,
                got: other.n,
            });
        }
        if self.center != other.center {
            return Err(AlgebraError::CenterMismatch {
                left: self.center.clone(),
                right: other.center.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &FTPolynomial) -> Result<FTPolynomial, AlgebraError> {
        self.same_frame(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &FTPolynomial) -> Result<FTPolynomial, AlgebraError> {
        self.same_frame(other)?;
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -*c);
        }
        Ok(out)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &FTPolynomial) -> Result<FTPolynomial, AlgebraError> {
        self.same_frame(other)?;
        let mut acc: HashMap<Mode, Complex64> = HashMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mode = Mode {
                    k: ma.k.iter().zip(&mb.k).map(|(a, b)| a + b).collect(),
                    alpha: ma.alpha.iter().zip(&mb.alpha).map(|(a, b)| a + b).collect(),
                };
                *acc.entry(mode).or_default() += ca * cb;
            }
        }
        Ok(self.collect(acc).realify())
    }

    fn collect(&self, acc: HashMap<Mode, Complex64>) -> FTPolynomial {
        FTPolynomial {
            n: self.n,
            center: self.center.clone(),
            terms: acc
                .into_iter()
                .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
                .collect(),
        }
    }

    /// `∂p/∂I_i`.
    pub fn d_action(&self, i: usize) -> FTPolynomial {
        let mut out = Self::zero_at(self.center.clone());
        for (m, c) in &self.terms {
            let a = m.alpha[i];
            if a > 0 {
                let mut mode = m.clone();
                mode.alpha[i] -= 1;
                out.add_term(mode, c * a as f64);
            }
        }
        out
    }

    /// `∂p/∂θ_i`.
    pub fn d_angle(&self, i: usize) -> FTPolynomial {
        let mut out = Self::zero_at(self.center.clone());
        for (m, c) in &self.terms {
            let k = m.k[i];
            if k != 0 {
                out.add_term(m.clone(), c * Complex64::new(0.0, TWO_PI * k as f64));
            }
        }
        out
    }

    /// Poisson bracket `{self, other} = ∂_I self · ∂_θ other − ∂_θ self · ∂_I other`.
    pub fn poisson_bracket(&self, other: &FTPolynomial) -> Result<FTPolynomial, AlgebraError> {
        Ok(self.poisson_bracket_capped(other, Caps::NONE)?.0)
    }

    /// Bracket split into the part admitted by `caps` and the dropped rest.
    pub fn poisson_bracket_capped(
        &self,
        other: &FTPolynomial,
        caps: Caps,
    ) -> Result<(FTPolynomial, FTPolynomial), AlgebraError> {
        self.same_frame(other)?;
        let n = self.n;
        let mut kept: HashMap<Mode, Complex64> = HashMap::new();
        let mut dropped: HashMap<Mode, Complex64> = HashMap::new();
        let mut k: SmallVec<[i32; 4]> = SmallVec::from_elem(0, n);
        let mut alpha: SmallVec<[u32; 4]> = SmallVec::from_elem(0, n);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let prod = ca * cb;
                for d in 0..n {
                    k[d] = ma.k[d] + mb.k[d];
                    alpha[d] = ma.alpha[d] + mb.alpha[d];
                }
                // Σ_i 2πi (α^a_i k^b_i − k^a_i α^b_i) I^{α^a+α^b−e_i}
                for i in 0..n {
                    let w = ma.alpha[i] as i64 * mb.k[i] as i64 - ma.k[i] as i64 * mb.alpha[i] as i64;
                    if w == 0 {
                        continue;
                    }
                    alpha[i] -= 1;
                    let c = prod * Complex64::new(0.0, TWO_PI * w as f64);
                    let target = if caps.admits_parts(&k, &alpha) {
                        &mut kept
                    } else {
                        &mut dropped
                    };
                    *target
                        .entry(Mode {
                            k: k.clone(),
                            alpha: alpha.clone(),
                        })
                        .or_default() += c;
                    alpha[i] += 1;
                }
            }
        }
        Ok((self.collect(kept).realify(), self.collect(dropped).realify()))
    }

    /// `p ∘ Φ_t^l` for the linear flow `θ ↦ θ + tω`.
    pub fn compose_linear_flow(&self, omega: &[f64], t: f64) -> Result<FTPolynomial, AlgebraError> {
        self.check_len(omega.len())?;
        Ok(self
            .map_coefficients(|m, c| {
                let kw: f64 = m.k.iter().zip(omega).map(|(&k, &w)| k as f64 * w).sum();
                let phase = TWO_PI * t * kw;
                c * Complex64::new(phase.cos(), phase.sin())
            })
            .realify())
    }

    fn check_len(&self, len: usize) -> Result<(), AlgebraError> {
        if len != self.n {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.n,
                got: len,
            });
        }
        Ok(())
    }

    /// Exact Taylor shift of the action expansion point.
    pub fn recenter(&self, new_center: &[f64]) -> Result<FTPolynomial, AlgebraError> {
        self.check_len(new_center.len())?;
        let shift: Vec<f64> = new_center
            .iter()
            .zip(&self.center)
            .map(|(a, b)| a - b)
            .collect();
        let mut acc: HashMap<Mode, Complex64> = HashMap::new();
        for (m, c) in &self.terms {
            // (x + s)^α with x = I − new_center, s = new_center − old_center.
            let mut partial: Vec<(SmallVec<[u32; 4]>, f64)> = vec![(SmallVec::new(), 1.0)];
            for (i, &a) in m.alpha.iter().enumerate() {
                let mut next = Vec::with_capacity(partial.len() * (a as usize + 1));
                for (beta, w) in &partial {
                    for j in 0..=a {
                        let coeff = binomial(a, j) * shift[i].powi((a - j) as i32);
                        if coeff == 0.0 {
                            continue;
                        }
                        let mut b = beta.clone();
                        b.push(j);
                        next.push((b, w * coeff));
                    }
                }
                partial = next;
            }
            for (beta, w) in partial {
                *acc.entry(Mode {
                    k: m.k.clone(),
                    alpha: beta,
                })
                .or_default() += c * w;
            }
        }
        let mut out = self.collect(acc);
        out.center = new_center.to_vec();
        Ok(out.realify())
    }

    /// Evaluates the (real) function at `(θ, I)`.
    pub fn evaluate(&self, theta: &[f64], action: &[f64]) -> Result<f64, AlgebraError> {
        self.check_len(theta.len())?;
        self.check_len(action.len())?;
        let x: Vec<f64> = action.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let mut sum = 0.0;
        for (m, c) in &self.terms {
            let phase: f64 = m
                .k
                .iter()
                .zip(theta)
                .map(|(&k, &t)| k as f64 * t.rem_euclid(1.0))
                .sum::<f64>()
                * TWO_PI;
            let mono: f64 = m
                .alpha
                .iter()
                .zip(&x)
                .map(|(&a, &x)| x.powi(a as i32))
                .product();
            sum += mono * (c.re * phase.cos() - c.im * phase.sin());
        }
        Ok(sum)
    }

    /// Coefficient upper bound on the C^k norm over `T^n × {|I − I_c|_∞ ≤ R}`.
    ///
    /// Each term contributes `|c| · max_{j+m≤k} (2π|k|_1)^j · D_m(α, R)` where
    /// `D_m` bounds every order-`m` action derivative of the monomial.
    pub fn ck_norm_upper_bound(&self, order: u32, radius: f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| c.norm() * term_ck_factor(m, order, radius))
            .sum()
    }

    /// Upper bound on `max_i sup |∂p/∂θ_i|` over the ball of radius `R`.
    pub fn angle_gradient_bound(&self, radius: f64) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                let kmax = m.k.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0);
                c.norm() * TWO_PI * kmax as f64 * radius.powi(m.degree() as i32)
            })
            .sum()
    }

    /// Upper bound on `max_i sup |∂p/∂I_i|` over the ball of radius `R`.
    pub fn action_gradient_bound(&self, radius: f64) -> f64 {
        (0..self.n)
            .map(|i| self.d_action(i).ck_norm_upper_bound(0, radius))
            .fold(0.0, f64::max)
    }

    /// Compiles the polynomial for repeated gradient evaluation.
    pub fn evaluator(&self) -> Evaluator {
        Evaluator::new(self)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn falling(a: u32, b: u32) -> f64 {
    (0..b).fold(1.0, |acc, i| acc * (a - i) as f64)
}

/// `max_{|β|=m, β≤α} Π α_i!/(α_i−β_i)! · R^{|α|−m}`, zero when `m > |α|`.
fn monomial_derivative_bound(alpha: &[u32], m: u32, radius: f64) -> f64 {
    fn best(alpha: &[u32], m: u32) -> f64 {
        match alpha.split_first() {
            None => {
                if m == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Some((&a, rest)) => (0..=a.min(m))
                .map(|b| falling(a, b) * best(rest, m - b))
                .fold(0.0, f64::max),
        }
    }
    let deg: u32 = alpha.iter().sum();
    if m > deg {
        return 0.0;
    }
    best(alpha, m) * radius.powi((deg - m) as i32)
}

fn term_ck_factor(mode: &Mode, order: u32, radius: f64) -> f64 {
    let kl1 = TWO_PI * mode.fourier_order() as f64;
    let mut best = 0.0f64;
    for j in 0..=order {
        let angular = if j == 0 { 1.0 } else { kl1.powi(j as i32) };
        if angular == 0.0 {
            continue;
        }
        for m in 0..=(order - j) {
            best = best.max(angular * monomial_derivative_bound(&mode.alpha, m, radius));
        }
    }
    best
}

/// Compiled form of a polynomial for the integrator's hot loop: each conjugate
/// pair is folded into one term with a doubled coefficient.
#[derive(Debug, Clone)]
pub struct Evaluator {
    n: usize,
    center: Vec<f64>,
    kmax: Vec<usize>,
    dmax: Vec<usize>,
    terms: Vec<EvalTerm>,
}

#[derive(Debug, Clone)]
struct EvalTerm {
    k: SmallVec<[i32; 4]>,
    alpha: SmallVec<[u32; 4]>,
    c: Complex64,
}

/// Value and gradient of a polynomial at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub d_theta: Vec<f64>,
    pub d_action: Vec<f64>,
}

impl Evaluator {
    fn new(p: &FTPolynomial) -> Self {
        let n = p.n;
        let mut terms = Vec::new();
        for (m, c) in &p.terms {
            if m.is_integrable() {
                terms.push(EvalTerm {
                    k: m.k.clone(),
                    alpha: m.alpha.clone(),
                    c: *c,
                });
            } else if m.is_positive_half() {
                let partner = p.terms.get(&m.conjugate()).copied().unwrap_or_default();
                terms.push(EvalTerm {
                    k: m.k.clone(),
                    alpha: m.alpha.clone(),
                    c: c + partner.conj(),
                });
            } else if !p.terms.contains_key(&m.conjugate()) {
                terms.push(EvalTerm {
                    k: m.conjugate().k,
                    alpha: m.alpha.clone(),
                    c: c.conj(),
                });
            }
        }
        let mut kmax = vec![0usize; n];
        let mut dmax = vec![0usize; n];
        for t in &terms {
            for i in 0..n {
                kmax[i] = kmax[i].max(t.k[i].unsigned_abs() as usize);
                dmax[i] = dmax[i].max(t.alpha[i] as usize);
            }
        }
        Evaluator {
            n,
            center: p.center.clone(),
            kmax,
            dmax,
            terms,
        }
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    /// Value and full gradient at `(θ, I)`.
    pub fn jet(&self, theta: &[f64], action: &[f64]) -> Jet {
        let mut jet = Jet {
            value: 0.0,
            d_theta: vec![0.0; self.n],
            d_action: vec![0.0; self.n],
        };
        self.jet_into(theta, action, &mut jet);
        jet
    }

    pub fn value(&self, theta: &[f64], action: &[f64]) -> f64 {
        self.jet(theta, action).value
    }

    /// Writes value and gradient into `out` (dimensions must match).
    pub fn jet_into(&self, theta: &[f64], action: &[f64], out: &mut Jet) {
        let n = self.n;
        // e^{2πi m θ_j} for m = 0..=kmax_j, built by repeated multiplication.
        let mut phases: SmallVec<[SmallVec<[Complex64; 16]>; 4]> = SmallVec::new();
        for j in 0..n {
            let a = TWO_PI * theta[j];
            let base = Complex64::new(a.cos(), a.sin());
            let mut row: SmallVec<[Complex64; 16]> = SmallVec::with_capacity(self.kmax[j] + 1);
            row.push(Complex64::new(1.0, 0.0));
            for m in 1..=self.kmax[j] {
                let prev = row[m - 1];
                row.push(prev * base);
            }
            phases.push(row);
        }
        let mut powers: SmallVec<[SmallVec<[f64; 8]>; 4]> = SmallVec::new();
        for j in 0..n {
            let x = action[j] - self.center[j];
            let mut row: SmallVec<[f64; 8]> = SmallVec::with_capacity(self.dmax[j] + 1);
            row.push(1.0);
            for m in 1..=self.dmax[j] {
                let prev = row[m - 1];
                row.push(prev * x);
            }
            powers.push(row);
        }
        out.value = 0.0;
        out.d_theta.iter_mut().for_each(|v| *v = 0.0);
        out.d_action.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.terms {
            let mut e = t.c;
            for j in 0..n {
                let k = t.k[j];
                if k > 0 {
                    e *= phases[j][k as usize];
                } else if k < 0 {
                    e *= phases[j][(-k) as usize].conj();
                }
            }
            let mut mono = 1.0;
            for j in 0..n {
                mono *= powers[j][t.alpha[j] as usize];
            }
            // Re(e · mono) and its derivatives.
            out.value += e.re * mono;
            for j in 0..n {
                let k = t.k[j];
                if k != 0 {
                    // ∂θ_j: Re(2πi k e) · mono = −2πk Im(e) · mono
                    out.d_theta[j] -= TWO_PI * k as f64 * e.im * mono;
                }
                let a = t.alpha[j] as usize;
                if a > 0 {
                    let mut dm = a as f64 * powers[j][a - 1];
                    for i in 0..n {
                        if i != j {
                            dm *= powers[i][t.alpha[i] as usize];
                        }
                    }
                    out.d_action[j] += e.re * dm;
                }
            }
        }
    }
}

/// Parameters of a synthesized perturbation with `C^k`-like Fourier decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityProfile {
    pub k_reg: u32,
    pub k_max: u32,
    pub decay_exponent: f64,
    pub seed: u64,
    pub target_eps: f64,
}

impl RegularityProfile {
    /// Profile with the default decay exponent `k_reg + n + 1`.
    pub fn new(k_reg: u32, k_max: u32, n: usize, seed: u64, target_eps: f64) -> Self {
        RegularityProfile {
            k_reg,
            k_max,
            decay_exponent: (k_reg as usize + n + 1) as f64,
            seed,
            target_eps,
        }
    }
}

/// Random angle-only perturbation with `|c_k| ∝ (1 + |k|_1)^{−decay}` and
/// uniform phases, rescaled so its `C^{k_reg}` coefficient bound equals
/// `target_eps`.
pub fn synthesize_ck_perturbation(
    profile: &RegularityProfile,
    n: usize,
) -> Result<FTPolynomial, AlgebraError> {
    if !(profile.target_eps >= 0.0) || !profile.target_eps.is_finite() {
        return Err(AlgebraError::InvalidProfile(format!(
            "target_eps must be finite and non-negative, got {}",
            profile.target_eps
        )));
    }
    if profile.k_max < 1 {
        return Err(AlgebraError::InvalidProfile("k_max must be at least 1".into()));
    }
    if n == 0 {
        return Err(AlgebraError::InvalidProfile("n must be at least 1".into()));
    }
    let mut out = FTPolynomial::zero(n);
    if profile.target_eps == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    let alpha = vec![0u32; n];
    for k in fourier_box(n, profile.k_max) {
        let mode = Mode::new(&k, &alpha);
        let order = mode.fourier_order();
        if order == 0 || order > profile.k_max || !mode.is_positive_half() {
            continue;
        }
        let mag = (1.0 + order as f64).powf(-profile.decay_exponent);
        let phase: f64 = rng.random::<f64>() * TWO_PI;
        out.add_real_mode(mode, Complex64::from_polar(mag, phase));
    }
    let bound = out.ck_norm_upper_bound(profile.k_reg, 1.0);
    Ok(out.scale(profile.target_eps / bound))
}

/// All integer vectors in `[−K, K]^n`, lexicographic order.
fn fourier_box(n: usize, kmax: u32) -> Vec<Vec<i32>> {
    let k = kmax as i32;
    let mut out: Vec<Vec<i32>> = vec![Vec::new()];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (-k..=k).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    k: Vec<i32>,
    alpha: Vec<u32>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct PolyRepr {
    n: usize,
    center: Vec<f64>,
    terms: Vec<TermRepr>,
}

impl Serialize for FTPolynomial {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolyRepr {
            n: self.n,
            center: self.center.clone(),
            terms: self
                .terms
                .iter()
                .map(|(m, c)| TermRepr {
                    k: m.k.to_vec(),
                    alpha: m.alpha.to_vec(),
                    re: c.re,
                    im: c.im,
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FTPolynomial {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let repr = PolyRepr::deserialize(d)?;
        if repr.n == 0 || repr.center.len() != repr.n {
            return Err(D::Error::custom(format!(
                "center has length {} but n = {}",
                repr.center.len(),
                repr.n
            )));
        }
        let terms = repr
            .terms
            .into_iter()
            .map(|t| (Mode::new(&t.k, &t.alpha), Complex64::new(t.re, t.im)));
        FTPolynomial::from_terms(repr.center, terms).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::close;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
        }
    }

    fn cos1() -> FTPolynomial {
        let mut p = FTPolynomial::zero(2);
        p.add_cos(&[1, 0], &[0, 0], 1.0);
        p
    }

    #[test]
    fn evaluate_examples() {
        let one = FTPolynomial::constant(2, 1.0);
        assert_eq!(one.evaluate(&[0.3, 0.9], &[5.0, -2.0]).unwrap(), 1.0);

        let q = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
        assert_eq!(q.evaluate(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);

        let c = cos1();
        assert_eq!(c.coefficient(&[1, 0], &[0, 0]), Complex64::new(0.5, 0.0));
        assert!(c.evaluate(&[0.25, 0.0], &[0.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_wrong_dims() {
        let c = cos1();
        assert!(matches!(
            c.evaluate(&[0.1], &[0.0, 0.0]),
            Err(AlgebraError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bracket_of_action_with_cosine() {
        // {I_1, cos 2πθ_1} = ∂_I1 I_1 · ∂_θ1 cos = −2π sin 2πθ_1
        let f = FTPolynomial::monomial(vec![0.0, 0.0], &[1, 0], 1.0);
        let b = f.poisson_bracket(&cos1()).unwrap();
        let mut expected = FTPolynomial::zero(2);
        expected.add_sin(&[1, 0], &[0, 0], -TWO_PI);
        for (m, c) in expected.terms() {
            assert!((b.coefficient(&m.k, &m.alpha) - c).norm() < 1e-14);
        }
        assert_eq!(b.len(), 2);
        // finite-difference cross-check at a few points
        for &(t, i) in &[(0.1, 0.3), (0.37, -0.2), (0.8, 0.5)] {
            let th = [t, 0.2];
            let ac = [i, 0.1];
            let h = 1e-6;
            let dcos = (cos1().evaluate(&[t + h, 0.2], &ac).unwrap()
                - cos1().evaluate(&[t - h, 0.2], &ac).unwrap())
                / (2.0 * h);
            let fd = 1.0 * dcos;
            assert!((b.evaluate(&th, &ac).unwrap() - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn bracket_antisymmetric_and_self_zero() {
        let mut f = cos1();
        f = f
            .add(&FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 2.0]))
            .unwrap();
        f.add_sin(&[1, -2], &[1, 0], 0.3);
        assert!(f.poisson_bracket(&f).unwrap().prune(1e-14).is_zero());
    }

    #[test]
    fn resonant_modes_commute_with_linear() {
        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 2.0]);
        let mut g = FTPolynomial::zero(2);
        g.add_cos(&[2, -1], &[0, 1], 0.7);
        g.add_sin(&[-4, 2], &[2, 0], 0.1);
        assert!(l.poisson_bracket(&g).unwrap().is_zero());
    }

    #[test]
    fn bracket_requires_same_center() {
        let a = FTPolynomial::constant(2, 1.0);
        let b = FTPolynomial::zero_at(vec![1.0, 0.0]);
        assert!(matches!(
            a.poisson_bracket(&b),
            Err(AlgebraError::CenterMismatch { .. })
        ));
    }

    #[test]
    fn linear_flow_examples() {
        let c = cos1();
        assert_eq!(c.compose_linear_flow(&[1.0, 0.0], 0.0).unwrap(), c);
        let shifted = c.compose_linear_flow(&[1.0, 0.0], 0.25).unwrap();
        let mut minus_sin = FTPolynomial::zero(2);
        minus_sin.add_sin(&[1, 0], &[0, 0], -1.0);
        for (m, v) in minus_sin.terms() {
            assert!((shifted.coefficient(&m.k, &m.alpha) - v).norm() < 1e-15);
        }
        let back = shifted.compose_linear_flow(&[1.0, 0.0], -0.25).unwrap();
        for (m, v) in c.terms() {
            assert!((back.coefficient(&m.k, &m.alpha) - v).norm() <= 1e-15);
        }
    }

    #[test]
    fn ck_bound_examples() {
        assert_eq!(FTPolynomial::zero(2).ck_norm_upper_bound(3, 2.0), 0.0);
        assert!(close(cos1().ck_norm_upper_bound(1, 1.0), TWO_PI, 1e-15));
        let i1 = FTPolynomial::monomial(vec![0.0, 0.0], &[1, 0], 1.0);
        assert_eq!(i1.ck_norm_upper_bound(0, 1.0), 1.0);
        // I_1^3 on R = 2: values 8, first derivative 12, second 12, third 6
        let cube = FTPolynomial::monomial(vec![0.0, 0.0], &[3, 0], 1.0);
        assert_eq!(cube.ck_norm_upper_bound(3, 2.0), 12.0);
        // I_1 I_2 on R=1: D_1 = 1, D_2 = 1
        assert_eq!(monomial_derivative_bound(&[1, 1], 2, 1.0), 1.0);
        assert_eq!(monomial_derivative_bound(&[2, 1], 2, 3.0), 6.0);
        assert_eq!(monomial_derivative_bound(&[1, 0], 2, 3.0), 0.0);
    }

    #[test]
    fn synthesis_examples() {
        let zero = synthesize_ck_perturbation(&RegularityProfile::new(3, 4, 2, 1, 0.0), 2).unwrap();
        assert!(zero.is_zero());
        assert!(synthesize_ck_perturbation(&RegularityProfile::new(3, 4, 2, 1, -1.0), 2).is_err());

        let prof = RegularityProfile::new(3, 8, 2, 42, 1e-3);
        let a = synthesize_ck_perturbation(&prof, 2).unwrap();
        let b = synthesize_ck_perturbation(&prof, 2).unwrap();
        assert_eq!(a, b);
        assert!(a.is_real(0.0));
        assert!(close(a.ck_norm_upper_bound(3, 1.0), 1e-3, 1e-13));
        let c1 = a.coefficient(&[1, 0], &[0, 0]).norm();
        let c8 = a.coefficient(&[4, 4], &[0, 0]).norm();
        assert!(close(c8 / c1, (4.5f64).powi(-6), 1e-12));
    }

    #[test]
    fn recenter_is_exact_for_polynomials() {
        let mut p = FTPolynomial::monomial(vec![0.5, -0.25], &[3, 1], 1.3);
        p.add_cos(&[1, 1], &[1, 2], 0.4);
        let q = p.recenter(&[0.1, 0.2]).unwrap();
        for &(t, a) in &[([0.1, 0.2], [0.3, -0.7]), ([0.9, 0.4], [1.1, 0.0])] {
            let v1 = p.evaluate(&t, &a).unwrap();
            let v2 = q.evaluate(&t, &a).unwrap();
            assert!(close(v1, v2, 1e-13), "{v1} vs {v2}");
        }
        let back = q.recenter(&[0.5, -0.25]).unwrap().prune(1e-14);
        for (m, c) in p.terms() {
            assert!((back.coefficient(&m.k, &m.alpha) - c).norm() < 1e-13);
        }
    }

    #[test]
    fn evaluator_matches_evaluate() {
        let mut p = synthesize_ck_perturbation(&RegularityProfile::new(3, 5, 2, 7, 0.1), 2).unwrap();
        p = p
            .add(&FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]))
            .unwrap();
        p.add_cos(&[1, -1], &[1, 2], 0.05);
        let ev = p.evaluator();
        let th = [0.31, 0.77];
        let ac = [0.2, -0.45];
        let jet = ev.jet(&th, &ac);
        assert!(close(jet.value, p.evaluate(&th, &ac).unwrap(), 1e-13));
        for i in 0..2 {
            let dt = p.d_angle(i).evaluate(&th, &ac).unwrap();
            let da = p.d_action(i).evaluate(&th, &ac).unwrap();
            assert!(close(jet.d_theta[i], dt, 1e-12));
            assert!(close(jet.d_action[i], da, 1e-12));
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut p = synthesize_ck_perturbation(&RegularityProfile::new(4, 3, 2, 9, 0.37), 2).unwrap();
        p.add_cos(&[0, 1], &[2, 1], 1.0 / 3.0);
        let p = p.recenter(&[0.1, 1.0 / 7.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let q: FTPolynomial = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        for ((ma, ca), (mb, cb)) in p.terms().zip(q.terms()) {
            assert_eq!(ma, mb);
            assert_eq!(ca.re.to_bits(), cb.re.to_bits());
            assert_eq!(ca.im.to_bits(), cb.im.to_bits());
        }
    }

    #[test]
    fn json_rejects_bad_dims() {
        let s = r#"{"n":2,"center":[0.0,0.0],"terms":[{"k":[1],"alpha":[0,0],"re":1.0,"im":0.0}]}"#;
        assert!(serde_json::from_str::<FTPolynomial>(s).is_err());
    }
}
