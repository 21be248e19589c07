//! Shared fixtures for the benchmarks.

use polystab::algebra::{synthesize_ck_perturbation, FTPolynomial, RegularityProfile};
use polystab::normalform::homological_generator;

/// `½|I|² + ε f` with a synthesized `C^k` perturbation on `T^n × R^n`.
pub fn perturbed_quadratic(n: usize, k_reg: u32, k_max: u32, eps: f64) -> FTPolynomial {
    let h = FTPolynomial::diagonal_quadratic(vec![0.0; n], &vec![1.0; n]);
    let f = synthesize_ck_perturbation(&RegularityProfile::new(k_reg, k_max, n, 1, eps), n)
        .expect("valid profile");
    h.add(&f).expect("same frame")
}

/// Scaled Hamiltonian `ω·J + μ(½|J|² + f)` with `ω = (1, 0, …)` and its first generator.
pub fn resonant_pair(n: usize, mu: f64) -> (FTPolynomial, FTPolynomial) {
    let mut omega = vec![0.0; n];
    omega[0] = 1.0;
    let f = perturbed_quadratic(n, 6, 3, 1.0).scale(mu);
    let h = FTPolynomial::linear(vec![0.0; n], &omega).add(&f).expect("same frame");
    let mut p = vec![0i64; n];
    p[0] = 1;
    let chi = homological_generator(&f, &p, 1.0).expect("periodic data");
    (h, chi)
}
