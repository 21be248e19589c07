use serde::{Deserialize, Serialize};

use crate::algebra::{AlgebraError, Evaluator, FTPolynomial};
use crate::geometry::{GeometryError, IntegrableModel};

/// `H = h + f` on `T^n × B_R` with a regularity tag and norm bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearIntegrableSystem {
    pub h: FTPolynomial,
    pub f: FTPolynomial,
    #[serde(rename = "R")]
    pub radius: f64,
    pub k_reg: u32,
    /// Bound `M` on the integrable part.
    #[serde(rename = "M", default)]
    pub bound: Option<f64>,
    /// Size `ε` of the perturbation.
    pub eps: f64,
}

impl NearIntegrableSystem {
    pub fn new(h: FTPolynomial, f: FTPolynomial, radius: f64, k_reg: u32, eps: f64) -> Result<Self, GeometryError> {
        if !h.is_integrable() {
            return Err(AlgebraError::NotIntegrable.into());
        }
        if h.dims() != f.dims() {
            return Err(AlgebraError::DimensionMismatch {
                expected: h.dims(),
                got: f.dims(),
            }
            .into());
        }
        Ok(NearIntegrableSystem {
            h,
            f,
            radius,
            k_reg,
            bound: None,
            eps,
        })
    }

    /// Integrable system (`f = 0`).
    pub fn integrable(h: FTPolynomial, radius: f64, k_reg: u32) -> Result<Self, GeometryError> {
        let f = FTPolynomial::zero_at(h.center().to_vec());
        Self::new(h, f, radius, k_reg, 0.0)
    }

    pub fn dims(&self) -> usize {
        self.h.dims()
    }

    pub fn model(&self) -> IntegrableModel {
        IntegrableModel {
            h: self.h.clone(),
            radius: self.radius,
            bound: self.bound,
            margin: None,
        }
    }

    /// `h + f` expressed around the center of `h`.
    pub fn hamiltonian(&self) -> Result<FTPolynomial, AlgebraError> {
        let f = if self.f.center() == self.h.center() {
            self.f.clone()
        } else {
            self.f.recenter(self.h.center())?
        };
        self.h.add(&f)
    }

    pub fn evaluator(&self) -> Result<Evaluator, AlgebraError> {
        Ok(self.hamiltonian()?.evaluator())
    }
}
