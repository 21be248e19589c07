//! Long-time integration of `H(θ, I)` and trajectory diagnostics.
//!
//! The workhorse is the implicit midpoint rule, solved by fixed-point
//! iteration. It is symplectic and symmetric for any smooth Hamiltonian, which
//! is what drift measurements over millions of steps need. An adaptive
//! Dormand–Prince integrator ([`flow_map`]) is provided for short, accurate
//! flows such as time-one maps of Lie generators.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{Evaluator, FTPolynomial, Jet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("implicit midpoint solve did not converge at t = {t} (update {update:e} after {iterations} iterations); reduce h_step")]
    NonConvergence { t: f64, update: f64, iterations: usize },
    #[error("state dimension {got} does not match system dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid integration parameters: {0}")]
    InvalidParameters(String),
    #[error("initial action lies outside the domain")]
    InitialOutsideDomain,
    #[error("adaptive flow failed: {0}")]
    FlowFailure(String),
    #[error("zero frequency vector")]
    ZeroFrequency,
    #[error("empty trajectory record")]
    EmptyRecord,
    #[error("I/O error: {0}")]
    Io(String),
}

/// Point `(θ, I)` at time `t`; angles are kept in `[0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub theta: Vec<f64>,
    pub action: Vec<f64>,
    pub t: f64,
}

impl PhaseState {
    pub fn new(theta: Vec<f64>, action: Vec<f64>) -> Self {
        let theta = theta.into_iter().map(|t| t.rem_euclid(1.0)).collect();
        PhaseState { theta, action, t: 0.0 }
    }

    pub fn dims(&self) -> usize {
        self.action.len()
    }
}

/// Signed distance on the circle `R/Z`.
pub fn circle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    if d > 0.5 {
        d - 1.0
    } else {
        d
    }
}

/// Hamiltonian vector field `X_H = (∂_I H, −∂_θ H)` of a polynomial.
#[derive(Debug, Clone)]
pub struct HamiltonianField {
    eval: Evaluator,
    n: usize,
}

impl HamiltonianField {
    pub fn new(h: &FTPolynomial) -> Self {
        HamiltonianField {
            n: h.dims(),
            eval: h.evaluator(),
        }
    }

    pub fn dims(&self) -> usize {
        self.n
    }

    pub fn energy(&self, theta: &[f64], action: &[f64]) -> f64 {
        self.eval.value(theta, action)
    }

    /// Writes `X_H(z)` into `out`, with `z = (θ, I)` stacked.
    fn field_into(&self, z: &[f64], jet: &mut Jet, out: &mut [f64]) {
        let n = self.n;
        self.eval.jet_into(&z[..n], &z[n..], jet);
        out[..n].copy_from_slice(&jet.d_action);
        for i in 0..n {
            out[n + i] = -jet.d_theta[i];
        }
    }

    pub fn field(&self, z: &[f64]) -> Vec<f64> {
        let mut jet = self.blank_jet();
        let mut out = vec![0.0; 2 * self.n];
        self.field_into(z, &mut jet, &mut out);
        out
    }

    fn blank_jet(&self) -> Jet {
        Jet {
            value: 0.0,
            d_theta: vec![0.0; self.n],
            d_action: vec![0.0; self.n],
        }
    }
}

const MAX_FIXED_POINT_ITERATIONS: usize = 50;
const FIXED_POINT_TOL: f64 = 1e-13;

/// One implicit-midpoint step on the stacked, unwrapped state `z = (θ, I)`:
/// `z' = z + h X((z + z') / 2)`.
pub fn implicit_midpoint_map(field: &HamiltonianField, z: &[f64], h: f64) -> Result<Vec<f64>, DynamicsError> {
    let mut scratch = MidpointScratch::new(field.dims());
    let mut out = vec![0.0; z.len()];
    midpoint_solve(field, z, h, 0.0, &mut scratch, &mut out)?;
    Ok(out)
}

struct MidpointScratch {
    jet: Jet,
    mid: Vec<f64>,
    x: Vec<f64>,
}

impl MidpointScratch {
    fn new(n: usize) -> Self {
        MidpointScratch {
            jet: Jet {
                value: 0.0,
                d_theta: vec![0.0; n],
                d_action: vec![0.0; n],
            },
            mid: vec![0.0; 2 * n],
            x: vec![0.0; 2 * n],
        }
    }
}

fn midpoint_solve(
    field: &HamiltonianField,
    z0: &[f64],
    h: f64,
    t: f64,
    s: &mut MidpointScratch,
    z1: &mut [f64],
) -> Result<(), DynamicsError> {
    let m = z0.len();
    field.field_into(z0, &mut s.jet, &mut s.x);
    for i in 0..m {
        z1[i] = z0[i] + h * s.x[i];
    }
    let mut prev = f64::INFINITY;
    let mut update = f64::INFINITY;
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        for i in 0..m {
            s.mid[i] = 0.5 * (z0[i] + z1[i]);
        }
        field.field_into(&s.mid, &mut s.jet, &mut s.x);
        update = 0.0;
        let mut scale = 1.0f64;
        for i in 0..m {
            let next = z0[i] + h * s.x[i];
            update = update.max((next - z1[i]).abs());
            scale = scale.max(next.abs());
            z1[i] = next;
        }
        let tol = FIXED_POINT_TOL * scale;
        // Converged at machine precision, or stalled at the rounding floor.
        if update <= 4.0 * f64::EPSILON * scale || (update <= tol && update >= prev) {
            return Ok(());
        }
        prev = update;
    }
    let scale = z1.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if update <= FIXED_POINT_TOL * scale {
        return Ok(());
    }
    Err(DynamicsError::NonConvergence {
        t,
        update,
        iterations: MAX_FIXED_POINT_ITERATIONS,
    })
}

/// One implicit-midpoint step of size `h` (negative `h` steps backwards).
pub fn step_implicit_midpoint(
    field: &HamiltonianField,
    state: &PhaseState,
    h: f64,
) -> Result<PhaseState, DynamicsError> {
    let n = field.dims();
    if state.dims() != n || state.theta.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: state.dims(),
        });
    }
    if !h.is_finite() || h == 0.0 {
        return Err(DynamicsError::InvalidParameters(format!("step size {h}")));
    }
    let mut z0 = state.theta.clone();
    z0.extend_from_slice(&state.action);
    let mut z1 = vec![0.0; 2 * n];
    let mut s = MidpointScratch::new(n);
    midpoint_solve(field, &z0, h, state.t, &mut s, &mut z1)?;
    Ok(PhaseState {
        theta: z1[..n].iter().map(|t| t.rem_euclid(1.0)).collect(),
        action: z1[n..].to_vec(),
        t: state.t + h,
    })
}

/// How an integration run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExitKind {
    /// Reached the horizon without leaving the drift ball (censored).
    #[serde(rename = "horizon-exit")]
    Horizon,
    /// `|I(t) − I(0)|_∞` exceeded the threshold.
    #[serde(rename = "drift-exit")]
    Drift,
    /// Left the domain of the Hamiltonian.
    #[serde(rename = "domain-exit")]
    Domain,
    /// The step solver failed.
    #[serde(rename = "failure")]
    Failure,
}

impl ExitKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExitKind::Horizon => "horizon-exit",
            ExitKind::Drift => "drift-exit",
            ExitKind::Domain => "domain-exit",
            ExitKind::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub horizon: f64,
    pub h_step: f64,
    pub drift_threshold: f64,
    /// Record every `sample_stride`-th step (plus the first and last state).
    pub sample_stride: usize,
    /// Sup-norm ball `(center, R)` for domain-exit detection.
    pub domain: Option<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub action: Vec<f64>,
    pub energy: f64,
    pub max_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub exit_kind: ExitKind,
    pub exit_time: f64,
    pub max_drift: f64,
    pub energy_drift: f64,
    pub steps: u64,
    pub final_state: PhaseState,
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Integrates until the horizon, a drift exit or a domain exit. Exits are
/// checked after every step regardless of the sampling stride.
pub fn integrate(
    field: &HamiltonianField,
    start: &PhaseState,
    cfg: &IntegrationConfig,
) -> Result<TrajectoryRecord, DynamicsError> {
    let n = field.dims();
    if start.dims() != n || start.theta.len() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: start.dims(),
        });
    }
    if !(cfg.h_step > 0.0) || !(cfg.horizon >= 0.0) || !cfg.horizon.is_finite() {
        return Err(DynamicsError::InvalidParameters(format!(
            "horizon {} and h_step {} must be positive and finite",
            cfg.horizon, cfg.h_step
        )));
    }
    let outside = |action: &[f64]| match &cfg.domain {
        Some((c, r)) => sup_dist(action, c) > *r,
        None => false,
    };
    if outside(&start.action) {
        return Err(DynamicsError::InitialOutsideDomain);
    }
    let stride = cfg.sample_stride.max(1) as u64;
    let total = (cfg.horizon / cfg.h_step - 1e-9).ceil().max(0.0) as u64;
    let e0 = field.energy(&start.theta, &start.action);
    let i0 = start.action.clone();
    let mut samples = vec![TrajectorySample {
        t: start.t,
        action: i0.clone(),
        energy: e0,
        max_drift: 0.0,
    }];
    let mut z0: Vec<f64> = start.theta.iter().chain(&start.action).copied().collect();
    let mut z1 = vec![0.0; 2 * n];
    let mut scratch = MidpointScratch::new(n);
    let mut max_drift = 0.0f64;
    let mut energy_drift = 0.0f64;
    let mut exit_kind = ExitKind::Horizon;
    let mut steps = 0u64;
    let mut t = start.t;
    let mut energy = e0;
    while steps < total {
        midpoint_solve(field, &z0, cfg.h_step, t, &mut scratch, &mut z1)?;
        for v in z1[..n].iter_mut() {
            *v = v.rem_euclid(1.0);
        }
        std::mem::swap(&mut z0, &mut z1);
        steps += 1;
        t = start.t + steps as f64 * cfg.h_step;
        let action = &z0[n..];
        let drift = sup_dist(action, &i0);
        max_drift = max_drift.max(drift);
        energy = field.energy(&z0[..n], action);
        energy_drift = energy_drift.max((energy - e0).abs());
        let exit = if outside(action) {
            Some(ExitKind::Domain)
        } else if drift > cfg.drift_threshold {
            Some(ExitKind::Drift)
        } else {
            None
        };
        if exit.is_some() || steps % stride == 0 || steps == total {
            samples.push(TrajectorySample {
                t,
                action: action.to_vec(),
                energy,
                max_drift,
            });
        }
        if let Some(kind) = exit {
            exit_kind = kind;
            break;
        }
    }
    let _ = energy;
    let exit_time = match exit_kind {
        ExitKind::Horizon => start.t + cfg.horizon,
        _ => t,
    };
    Ok(TrajectoryRecord {
        samples,
        exit_kind,
        exit_time,
        max_drift,
        energy_drift,
        steps,
        final_state: PhaseState {
            theta: z0[..n].to_vec(),
            action: z0[n..].to_vec(),
            t,
        },
    })
}

/// Drift split along `ω_per` and its orthogonal complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfinementSeries {
    pub t: Vec<f64>,
    /// Signed component of `I(t) − I(0)` along `ω_per / |ω_per|`.
    pub parallel: Vec<f64>,
    /// Euclidean norm of the orthogonal component.
    pub orthogonal: Vec<f64>,
}

impl ConfinementSeries {
    pub fn max_parallel(&self) -> f64 {
        self.parallel.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_orthogonal(&self) -> f64 {
        self.orthogonal.iter().copied().fold(0.0, f64::max)
    }
}

pub fn confinement_decomposition(
    record: &TrajectoryRecord,
    omega_per: &[f64],
) -> Result<ConfinementSeries, DynamicsError> {
    let first = record.samples.first().ok_or(DynamicsError::EmptyRecord)?;
    let norm = omega_per.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(DynamicsError::ZeroFrequency);
    }
    if omega_per.len() != first.action.len() {
        return Err(DynamicsError::DimensionMismatch {
            expected: first.action.len(),
            got: omega_per.len(),
        });
    }
    let unit: Vec<f64> = omega_per.iter().map(|w| w / norm).collect();
    let mut out = ConfinementSeries {
        t: Vec::with_capacity(record.samples.len()),
        parallel: Vec::with_capacity(record.samples.len()),
        orthogonal: Vec::with_capacity(record.samples.len()),
    };
    for s in &record.samples {
        let d: Vec<f64> = s.action.iter().zip(&first.action).map(|(a, b)| a - b).collect();
        let par: f64 = d.iter().zip(&unit).map(|(a, b)| a * b).sum();
        let orth = d
            .iter()
            .zip(&unit)
            .map(|(a, u)| (a - par * u).powi(2))
            .sum::<f64>()
            .sqrt();
        out.t.push(s.t);
        out.parallel.push(par);
        out.orthogonal.push(orth);
    }
    Ok(out)
}

/// Writes the trajectory CSV: `t, I_1..I_n, H, drift` with 17 significant digits.
pub fn write_trajectory_csv<W: Write>(record: &TrajectoryRecord, out: W) -> Result<(), DynamicsError> {
    let io = |e: csv::Error| DynamicsError::Io(e.to_string());
    let n = record.samples.first().map_or(0, |s| s.action.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("I_{i}")));
    header.push("H".into());
    header.push("drift".into());
    w.write_record(&header).map_err(io)?;
    for s in &record.samples {
        let mut row = vec![fmt17(s.t)];
        row.extend(s.action.iter().map(|&v| fmt17(v)));
        row.push(fmt17(s.energy));
        row.push(fmt17(s.max_drift));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| DynamicsError::Io(e.to_string()))
}

/// Float formatted with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Adaptive Dormand–Prince 5(4) flow of `X_H` for time `t` (may be negative).
/// Angles in the result are not reduced.
pub fn flow_map(
    field: &HamiltonianField,
    theta: &[f64],
    action: &[f64],
    t: f64,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let _ = C;
    let n = field.dims();
    let m = 2 * n;
    let mut z: Vec<f64> = theta.iter().chain(action).copied().collect();
    if t == 0.0 {
        return Ok((z[..n].to_vec(), z[n..].to_vec()));
    }
    let dir = t.signum();
    let total = t.abs();
    let mut done = 0.0;
    let mut h = (total / 16.0).min(0.05);
    let mut k = vec![vec![0.0; m]; 7];
    let mut stage = vec![0.0; m];
    let mut steps = 0usize;
    while done < total {
        steps += 1;
        if steps > 1_000_000 {
            return Err(DynamicsError::FlowFailure("step budget exhausted".into()));
        }
        h = h.min(total - done);
        k[0] = field.field(&z);
        for s in 1..7 {
            for i in 0..m {
                let mut acc = z[i];
                for j in 0..s {
                    acc += dir * h * A[s][j] * k[j][i];
                }
                stage[i] = acc;
            }
            k[s] = field.field(&stage);
        }
        let mut err = 0.0f64;
        let mut next = vec![0.0; m];
        for i in 0..m {
            let mut y5 = z[i];
            let mut y4 = z[i];
            for s in 0..7 {
                y5 += dir * h * B5[s] * k[s][i];
                y4 += dir * h * B4[s] * k[s][i];
            }
            next[i] = y5;
            let sc = tol * (1.0 + z[i].abs().max(y5.abs()));
            err = err.max((y5 - y4).abs() / sc);
        }
        if err <= 1.0 {
            z = next;
            done += h;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h < 1e-14 * total {
            return Err(DynamicsError::FlowFailure("step size underflow".into()));
        }
    }
    Ok((z[..n].to_vec(), z[n..].to_vec()))
}
