//! Geometry of the integrable part: frequency map, Hessian, the quasi-convexity
//! margin, resonant surfaces and inversion of the frequency map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, FTPolynomial};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("action {action:?} lies outside the domain (sup-distance {distance} > R = {radius})")]
    OutOfDomain {
        action: Vec<f64>,
        distance: f64,
        radius: f64,
    },
    #[error("frequency vanishes at {0:?}")]
    SingularFrequency(Vec<f64>),
    #[error("Hessian is singular at {0:?}")]
    SingularHessian(Vec<f64>),
    #[error("Newton inversion did not converge after {iterations} iterations (residual {residual:e}, last iterate {last:?})")]
    Divergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },
    #[error("invalid resonance module: {0}")]
    InvalidModule(String),
    #[error("resonant surface has no point in the domain")]
    EmptyResonantSurface,
    #[error("grid_per_dim must be at least 1")]
    EmptyGrid,
}

/// Integrable Hamiltonian `h(I)` on the sup-norm ball `B_R` around its center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrableModel {
    pub h: FTPolynomial,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Bound `M` on `|h|_{C^k}`.
    #[serde(rename = "M")]
    pub bound: Option<f64>,
    /// Quasi-convexity margin `m`.
    #[serde(rename = "m")]
    pub margin: Option<f64>,
}

impl IntegrableModel {
    pub fn new(h: FTPolynomial, radius: f64) -> Result<Self, GeometryError> {
        if !h.is_integrable() {
            return Err(AlgebraError::NotIntegrable.into());
        }
        Ok(IntegrableModel {
            h,
            radius,
            bound: None,
            margin: None,
        })
    }

    /// `½ Σ a_i I_i²` centered at the origin.
    pub fn diagonal(weights: &[f64], radius: f64) -> Self {
        let h = FTPolynomial::diagonal_quadratic(vec![0.0; weights.len()], weights);
        IntegrableModel::new(h, radius).expect("quadratic is integrable")
    }

    pub fn dims(&self) -> usize {
        self.h.dims()
    }

    pub fn with_bound(mut self, m: f64) -> Self {
        self.bound = Some(m);
        self
    }

    pub fn with_margin(mut self, m: f64) -> Self {
        self.margin = Some(m);
        self
    }

    fn sup_distance(&self, action: &[f64]) -> f64 {
        action
            .iter()
            .zip(self.h.center())
            .map(|(a, c)| (a - c).abs())
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, action: &[f64]) -> bool {
        self.sup_distance(action) <= self.radius
    }

    fn check_domain(&self, action: &[f64]) -> Result<(), GeometryError> {
        if action.len() != self.dims() {
            return Err(AlgebraError::DimensionMismatch {
                expected: self.dims(),
                got: action.len(),
            }
            .into());
        }
        let distance = self.sup_distance(action);
        if distance > self.radius {
            return Err(GeometryError::OutOfDomain {
                action: action.to_vec(),
                distance,
                radius: self.radius,
            });
        }
        Ok(())
    }

    /// `h(I)`.
    pub fn energy(&self, action: &[f64]) -> Result<f64, GeometryError> {
        Ok(self.h.evaluate(&vec![0.0; self.dims()], action)?)
    }

    /// `∇h(I)`, exact for the polynomial.
    pub fn frequency(&self, action: &[f64]) -> Result<Vec<f64>, GeometryError> {
        self.check_domain(action)?;
        Ok(self.gradient(action))
    }

    fn gradient(&self, action: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.dims()];
        self.h.evaluator().jet(&zero, action).d_action
    }

    /// `∇²h(I)`.
    pub fn hessian(&self, action: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        self.check_domain(action)?;
        Ok(self.hessian_unchecked(action))
    }

    fn hessian_unchecked(&self, action: &[f64]) -> DMatrix<f64> {
        let n = self.dims();
        let zero = vec![0.0; n];
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let di = self.h.d_action(i);
            for j in i..n {
                let v = di
                    .d_action(j)
                    .evaluate(&zero, action)
                    .expect("dimensions checked");
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Sampled quasi-convexity margin: the minimum over a uniform grid on the
    /// sup-norm ball `region` of the smallest eigenvalue of `Pᵀ ∇²h P`, where
    /// `P` spans `∇h^⊥`. Grids with `g − 1` dividing `g' − 1` are nested, so the
    /// estimate can only decrease along such refinements.
    pub fn quasiconvexity_margin(
        &self,
        region: &Ball,
        grid_per_dim: usize,
    ) -> Result<f64, GeometryError> {
        if grid_per_dim == 0 {
            return Err(GeometryError::EmptyGrid);
        }
        let n = self.dims();
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                if grid_per_dim == 1 {
                    vec![region.center[i]]
                } else {
                    (0..grid_per_dim)
                        .map(|j| {
                            region.center[i] - region.radius
                                + 2.0 * region.radius * j as f64 / (grid_per_dim - 1) as f64
                        })
                        .collect()
                }
            })
            .collect();
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; n];
        loop {
            let point: Vec<f64> = (0..n).map(|i| axes[i][idx[i]]).collect();
            best = best.min(self.tangential_min_eigenvalue(&point)?);
            let mut d = 0;
            while d < n {
                idx[d] += 1;
                if idx[d] < grid_per_dim {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        Ok(best)
    }

    /// Smallest eigenvalue of the Hessian restricted to `∇h(I)^⊥`.
    pub fn tangential_min_eigenvalue(&self, action: &[f64]) -> Result<f64, GeometryError> {
        let n = self.dims();
        let grad = self.gradient(action);
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm == 0.0 || !gnorm.is_finite() {
            return Err(GeometryError::SingularFrequency(action.to_vec()));
        }
        if n == 1 {
            return Ok(f64::INFINITY);
        }
        let p = orthogonal_complement(&grad);
        let hess = self.hessian_unchecked(action);
        let reduced = p.transpose() * hess * &p;
        let eig = SymmetricEigen::new(reduced);
        Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// Newton inversion of `∇h(I) = ω` starting from `guess`, halving the step
    /// whenever the residual fails to decrease.
    pub fn action_from_frequency(
        &self,
        omega: &[f64],
        guess: &[f64],
    ) -> Result<Vec<f64>, GeometryError> {
        const MAX_ITER: usize = 50;
        let n = self.dims();
        if omega.len() != n || guess.len() != n {
            return Err(AlgebraError::DimensionMismatch {
                expected: n,
                got: omega.len().min(guess.len()),
            }
            .into());
        }
        let scale = omega.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        let tol = 1e-12 * (1.0 + scale);
        let residual_of = |x: &[f64]| -> (Vec<f64>, f64) {
            let r: Vec<f64> = self
                .gradient(x)
                .iter()
                .zip(omega)
                .map(|(g, w)| g - w)
                .collect();
            let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (r, norm)
        };
        let mut x = guess.to_vec();
        let (mut r, mut rnorm) = residual_of(&x);
        for _ in 0..MAX_ITER {
            if rnorm <= tol {
                return Ok(x);
            }
            let hess = self.hessian_unchecked(&x);
            let rhs = DVector::from_column_slice(&r);
            let step = hess
                .lu()
                .solve(&rhs)
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or_else(|| GeometryError::SingularHessian(x.clone()))?;
            let mut lambda = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
                let (tr, tn) = residual_of(&trial);
                if tn < rnorm || lambda < 1e-6 {
                    x = trial;
                    r = tr;
                    rnorm = tn;
                    break;
                }
                lambda *= 0.5;
            }
        }
        if rnorm <= tol {
            return Ok(x);
        }
        Err(GeometryError::Divergence {
            iterations: MAX_ITER,
            residual: rnorm,
            last: x,
        })
    }

    /// Distance from `start` to `S_Λ = {I : k·∇h(I) = 0, k ∈ Λ}` (Euclidean).
    pub fn resonance_distance(
        &self,
        start: &[f64],
        module: &ResonanceModule,
    ) -> Result<ResonanceProjection, GeometryError> {
        let n = self.dims();
        if module.dims() != n {
            return Err(AlgebraError::DimensionMismatch {
                expected: n,
                got: module.dims(),
            }
            .into());
        }
        if module.rank() == 0 {
            return Ok(ResonanceProjection {
                nearest: start.to_vec(),
                distance: 0.0,
                optimality_gap: 0.0,
            });
        }
        let kmat = module.matrix();
        let projection = if self.h.max_degree() <= 2 {
            // ∇h is affine: ∇h(I) = A I + b, so S_Λ = {I : K A I = −K b}.
            let a = self.hessian_unchecked(start);
            let b = DVector::from_vec(self.gradient(start)) - &a * DVector::from_column_slice(start);
            let m = &kmat * &a;
            let rhs = -(&kmat * b);
            let x0 = DVector::from_column_slice(start);
            let nearest = affine_projection(&m, &rhs, &x0)
                .ok_or(GeometryError::EmptyResonantSurface)?;
            let distance = (&nearest - &x0).norm();
            ResonanceProjection {
                nearest: nearest.iter().copied().collect(),
                distance,
                optimality_gap: 0.0,
            }
        } else {
            self.resonance_projection_newton(start, &kmat)?
        };
        if !self.contains(&projection.nearest) {
            return Err(GeometryError::EmptyResonantSurface);
        }
        Ok(projection)
    }

    /// Gauss–Newton projection onto the nonlinear constraint set. The
    /// reported gap is the constraint residual plus the tangential component
    /// of `I − I0` (both vanish at a true nearest point).
    fn resonance_projection_newton(
        &self,
        start: &[f64],
        kmat: &DMatrix<f64>,
    ) -> Result<ResonanceProjection, GeometryError> {
        let x0 = DVector::from_column_slice(start);
        let mut x = x0.clone();
        let constraint = |x: &DVector<f64>| -> DVector<f64> {
            kmat * DVector::from_vec(self.gradient(x.as_slice()))
        };
        for _ in 0..100 {
            let jac = kmat * self.hessian_unchecked(x.as_slice());
            let c = constraint(&x);
            // Linearized: minimize |y − x0| s.t. c + J (y − x) = 0.
            let rhs = &jac * &x - c;
            let next = affine_projection(&jac, &rhs, &x0).ok_or(GeometryError::EmptyResonantSurface)?;
            let delta = (&next - &x).norm();
            x = next;
            if delta <= 1e-14 * (1.0 + x.norm()) {
                break;
            }
        }
        let c = constraint(&x);
        let jac = kmat * self.hessian_unchecked(x.as_slice());
        let d = &x - &x0;
        // At a true nearest point the displacement lies in the row space of J.
        let tangential = (&d - row_space_projection(&jac, &d)).norm();
        Ok(ResonanceProjection {
            distance: d.norm(),
            nearest: x.iter().copied().collect(),
            optimality_gap: c.amax() + tangential,
        })
    }
}

fn row_space_projection(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let gram = m * m.transpose();
    match gram.lu().solve(&(m * v)) {
        Some(y) => m.transpose() * y,
        None => DVector::zeros(v.len()),
    }
}

/// Nearest point to `x0` on `{x : M x = rhs}`; `None` if the system is
/// inconsistent or rank-deficient.
fn affine_projection(m: &DMatrix<f64>, rhs: &DVector<f64>, x0: &DVector<f64>) -> Option<DVector<f64>> {
    let gram = m * m.transpose();
    let resid = m * x0 - rhs;
    let lambda = gram.lu().solve(&resid)?;
    if lambda.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(x0 - m.transpose() * lambda)
}

/// Orthonormal basis (as columns) of `v^⊥`: Gram–Schmidt of `v̂` followed by
/// the coordinate vectors, dropping the coordinate vector most parallel to `v`.
fn orthogonal_complement(v: &[f64]) -> DMatrix<f64> {
    let n = v.len();
    let vhat = DVector::from_column_slice(v).normalize();
    let drop = (0..n)
        .max_by(|&a, &b| vhat[a].abs().total_cmp(&vhat[b].abs()).then(b.cmp(&a)))
        .unwrap_or(0);
    let mut basis: Vec<DVector<f64>> = vec![vhat];
    for i in (0..n).filter(|&i| i != drop) {
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        for b in &basis {
            let proj = b.dot(&e);
            e -= b * proj;
        }
        basis.push(e.normalize());
    }
    DMatrix::from_columns(&basis[1..])
}

/// Sup-norm ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Ball { center, radius }
    }
}

/// Result of projecting an action onto a resonant surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceProjection {
    pub nearest: Vec<f64>,
    pub distance: f64,
    pub optimality_gap: f64,
}

/// Sub-module `Λ ⊂ Z^n` given by linearly independent integer generators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonanceModule {
    n: usize,
    basis: Vec<Vec<i64>>,
}

impl ResonanceModule {
    pub fn trivial(n: usize) -> Self {
        ResonanceModule { n, basis: Vec::new() }
    }

    pub fn new(n: usize, basis: Vec<Vec<i64>>) -> Result<Self, GeometryError> {
        if basis.iter().any(|b| b.len() != n) {
            return Err(GeometryError::InvalidModule("generator length differs from n".into()));
        }
        let rank = rational_rank(&basis);
        if rank != basis.len() {
            return Err(GeometryError::InvalidModule(
                "generators are linearly dependent".into(),
            ));
        }
        if rank >= n {
            return Err(GeometryError::InvalidModule(format!(
                "rank {rank} leaves no codimension (n = {n})"
            )));
        }
        Ok(ResonanceModule { n, basis })
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    pub fn basis(&self) -> &[Vec<i64>] {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// Codimension `d = n − rank`.
    pub fn codim(&self) -> usize {
        self.n - self.basis.len()
    }

    fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.basis.len(), self.n, |i, j| self.basis[i][j] as f64)
    }

    /// Integer basis (columns, each primitive) of `Λ^⊥ ∩ Q^n`, with `d` vectors.
    pub fn orthogonal_lattice_basis(&self) -> Vec<Vec<i64>> {
        nullspace_integer(&self.basis, self.n)
    }
}

type Q = Ratio<i128>;

fn rref(rows: &[Vec<i64>], n: usize) -> (Vec<Vec<Q>>, Vec<usize>) {
    let mut m: Vec<Vec<Q>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| Q::from_integer(v as i128)).collect())
        .collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row >= m.len() {
            break;
        }
        let Some(p) = (row..m.len()).find(|&r| m[r][col] != Q::from_integer(0)) else {
            continue;
        };
        m.swap(row, p);
        let pv = m[row][col];
        for v in m[row].iter_mut() {
            *v /= pv;
        }
        for r in 0..m.len() {
            if r != row && m[r][col] != Q::from_integer(0) {
                let f = m[r][col];
                let src = m[row].clone();
                for (v, s) in m[r].iter_mut().zip(&src) {
                    *v -= f * s;
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    (m, pivots)
}

fn rational_rank(rows: &[Vec<i64>]) -> usize {
    match rows.first() {
        None => 0,
        Some(r) => rref(rows, r.len()).1.len(),
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

fn nullspace_integer(rows: &[Vec<i64>], n: usize) -> Vec<Vec<i64>> {
    let (m, pivots) = if rows.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        rref(rows, n)
    };
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    free.iter()
        .map(|&f| {
            let mut v = vec![Q::from_integer(0); n];
            v[f] = Q::from_integer(1);
            for (r, &pc) in pivots.iter().enumerate() {
                v[pc] = -m[r][f];
            }
            let lcm = v.iter().fold(1i128, |l, q| {
                let d = *q.denom();
                l / gcd(l, d) * d
            });
            let ints: Vec<i128> = v.iter().map(|q| (q * Q::from_integer(lcm)).to_integer()).collect();
            let g = ints.iter().fold(0i128, |g, &x| gcd(g, x)).max(1);
            ints.iter().map(|&x| (x / g) as i64).collect()
        })
        .collect()
}
