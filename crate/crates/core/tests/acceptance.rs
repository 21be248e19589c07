//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polystab::algebra::{synthesize_ck_perturbation, FTPolynomial, RegularityProfile};
use polystab::diophantine::{dirichlet_approx, dirichlet_bound};
use polystab::dynamics::{
    flow_map, implicit_midpoint_map, integrate, ExitKind, HamiltonianField, IntegrationConfig, PhaseState,
};
use polystab::experiments::{
    build_certificate, fit_exponent, run_sweep, theorem_exponents, write_sweep_csv, CertificateConstants,
    FitQuantity, ModelId, PerturbationSpec, PeriodicBranch, StepRule, SweepConfig, ThresholdRule,
    ValidationOptions,
};
use polystab::normalform::{
    average_along_periodic_flow, homological_generator, iterate_normal_form, lie_transform, rescale_system,
    NormalFormConfig, SmallnessConstants,
};
use polystab::{NearIntegrableSystem, ResonanceModule};

type Outcome = (bool, String);

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn reduced(num: i64, den: i64) -> (i64, i64) {
    let g = gcd(num, den).max(1);
    (num / g, den / g)
}

fn exponent_formulas() -> Outcome {
    let triples: [(u32, u32, u32); 20] = [
        (3, 1, 1), (3, 2, 1), (3, 2, 2), (3, 3, 1), (3, 3, 3),
        (4, 2, 1), (4, 2, 2), (4, 3, 2), (4, 4, 4), (5, 2, 2),
        (5, 3, 1), (5, 5, 3), (6, 2, 2), (6, 4, 1), (7, 3, 3),
        (8, 2, 1), (9, 6, 4), (10, 3, 2), (12, 5, 5), (20, 7, 3),
    ];
    let mut bad = Vec::new();
    for (k, n, d) in triples {
        let global = theorem_exponents(k, n, None).unwrap();
        let local = theorem_exponents(k, n, Some(d)).unwrap();
        let want = [
            reduced(k as i64 - 2, 2 * n as i64),
            reduced(1, 2 * n as i64),
            reduced(k as i64 - 2, 2 * d as i64),
            reduced(1, 2 * d as i64),
        ];
        let got = [global.a, global.b, local.a, local.b].map(|r| (*r.numer(), *r.denom()));
        if got != want {
            bad.push((k, n, d));
        }
    }
    (bad.is_empty(), format!("20 triples, mismatches {bad:?}"))
}

fn random_poly(rng: &mut ChaCha8Rng, n: usize, k_cap: i32, d_cap: u32) -> FTPolynomial {
    let mut f = FTPolynomial::zero(n);
    for _ in 0..rng.random_range(4..12) {
        let mut k: Vec<i32> = (0..n).map(|_| rng.random_range(-k_cap..=k_cap)).collect();
        while k.iter().map(|v| v.abs()).sum::<i32>() > k_cap {
            let i = rng.random_range(0..n);
            k[i] -= k[i].signum();
        }
        let mut alpha: Vec<u32> = (0..n).map(|_| rng.random_range(0..=d_cap)).collect();
        while alpha.iter().sum::<u32>() > d_cap {
            let i = rng.random_range(0..n);
            alpha[i] = alpha[i].saturating_sub(1);
        }
        let amp = rng.random_range(-1.0..1.0);
        if rng.random_bool(0.5) {
            f.add_cos(&k, &alpha, amp);
        } else {
            f.add_sin(&k, &alpha, amp);
        }
    }
    f
}

fn random_period(rng: &mut ChaCha8Rng, n: usize) -> (Vec<i64>, f64) {
    loop {
        let p: Vec<i64> = (0..n).map(|_| rng.random_range(-3..=3)).collect();
        if p.iter().any(|&v| v != 0) {
            return (p, rng.random_range(0.5..3.0));
        }
    }
}

fn homological_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let n = 2 + case % 2;
        let f = random_poly(&mut rng, n, 6, 3);
        let (p, period) = random_period(&mut rng, n);
        let omega: Vec<f64> = p.iter().map(|&v| v as f64 / period).collect();
        let l = FTPolynomial::linear(vec![0.0; n], &omega);
        let avg = average_along_periodic_flow(&f, &p, period).unwrap();
        let chi = homological_generator(&f, &p, period).unwrap();
        let lhs = chi.poisson_bracket(&l).unwrap().add(&f).unwrap().sub(&avg).unwrap();
        worst = worst.max(lhs.max_abs_coefficient());
    }
    (worst <= 1e-13, format!("100 cases, max coefficient {worst:.2e} (tol 1e-13)"))
}

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let inner: f64 = (1..intervals)
        .map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h))
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn averaging_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let n = 2 + case % 2;
        let f = random_poly(&mut rng, n, 4, 2);
        let (p, period) = random_period(&mut rng, n);
        let omega: Vec<f64> = p.iter().map(|&v| v as f64 / period).collect();
        let avg = average_along_periodic_flow(&f, &p, period).unwrap();
        let chi = homological_generator(&f, &p, period).unwrap();
        let theta: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let action: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let along = |t: f64| {
            let th: Vec<f64> = theta.iter().zip(&omega).map(|(a, w)| a + w * t).collect();
            f.evaluate(&th, &action).unwrap()
        };
        let mean = simpson(&along, 0.0, period, 10_000) / period;
        let avg_here = avg.evaluate(&theta, &action).unwrap();
        let chi_quad = simpson(|t| t * (along(t) - mean), 0.0, period, 10_000) / period;
        let chi_here = chi.evaluate(&theta, &action).unwrap();
        worst = worst.max((mean - avg_here).abs()).max((chi_quad - chi_here).abs());
    }
    (worst <= 1e-9, format!("20 cases, max deviation {worst:.2e} (tol 1e-9)"))
}

fn lie_transform_vs_flow() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for mu in [1e-2, 1e-3] {
        let eps = mu * mu;
        let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
        let mut f = synthesize_ck_perturbation(&RegularityProfile::new(4, 3, 2, 21, eps), 2).unwrap();
        f.add_cos(&[1, 1], &[1, 0], eps);
        f.add_sin(&[2, -1], &[0, 1], 0.5 * eps);
        let system = NearIntegrableSystem::new(h, f, 2.0, 4, eps).unwrap();
        let scaled = rescale_system(&system, &[1.0, 0.0], mu).unwrap();
        let l = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]);
        let f_mu = scaled.hamiltonian.sub(&l).unwrap();
        let chi = homological_generator(&f_mu, &[1, 0], 1.0).unwrap();
        // order 2 keeps the reported residual above the evaluation round-off
        let cfg = NormalFormConfig {
            steps: 1,
            lie_order: 2,
            degree_cap: 6,
            fourier_cap: 12,
            mu,
            rho: 1.0,
            norm_order: 2,
            residual_threshold: 1.0,
            constants: SmallnessConstants::default(),
        };
        let (transformed, residual) = lie_transform(&scaled.hamiltonian, &chi, &cfg, 1.0).unwrap();
        let field = HamiltonianField::new(&chi);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let theta = [rng.random::<f64>(), rng.random::<f64>()];
            let action = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (t1, a1) = flow_map(&field, &theta, &action, 1.0, 1e-14).unwrap();
            let exact = scaled.hamiltonian.evaluate(&t1, &a1).unwrap();
            let series = transformed.evaluate(&theta, &action).unwrap();
            worst = worst.max((exact - series).abs());
        }
        let bound = residual.total();
        ok &= worst <= 10.0 * bound;
        details.push(format!("mu {mu:e}: max error {worst:.2e} vs residual {bound:.2e}"));
    }
    (ok, details.join("; "))
}

fn remainder_scaling() -> Outcome {
    let mut constants = Vec::new();
    for t_mu in [0.2, 0.1, 0.05] {
        let (period, mu) = (1.0, t_mu);
        let shape = synthesize_ck_perturbation(&RegularityProfile::new(6, 3, 2, 5, 1.0), 2).unwrap();
        let f = shape
            .add(&FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]))
            .unwrap()
            .scale(mu);
        let h = FTPolynomial::linear(vec![0.0, 0.0], &[1.0, 0.0]).add(&f).unwrap();
        let cfg = NormalFormConfig {
            steps: 4,
            lie_order: 3,
            degree_cap: 4,
            fourier_cap: 8,
            mu,
            rho: 1.0,
            norm_order: 2,
            residual_threshold: 1e-2,
            constants: SmallnessConstants::default(),
        };
        let nf = match iterate_normal_form(&h, &[1, 0], period, &cfg) {
            Ok(nf) => nf,
            Err(e) => return (false, format!("T mu {t_mu}: {e}")),
        };
        let x: Vec<f64> = (0..nf.ledger.len()).map(|j| j as f64).collect();
        let y: Vec<f64> = nf.ledger.iter().map(|e| e.f_norm_bound.ln()).collect();
        let (slope, _, _, _) = polystab::experiments::least_squares(&x, &y);
        constants.push((slope - (period * mu).ln()).exp());
    }
    let hi = constants.iter().cloned().fold(0.0, f64::max);
    let lo = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    (
        hi / lo <= 3.0,
        format!("per-step constants {constants:.3?}, spread {:.3} (max 3)", hi / lo),
    )
}

fn oracle_dirichlet(omega: &[f64], q_max: f64) -> (u64, f64) {
    let j = (0..omega.len())
        .max_by(|&a, &b| omega[a].abs().total_cmp(&omega[b].abs()).then(b.cmp(&a)))
        .unwrap();
    let ratios: Vec<f64> = omega.iter().map(|w| w / omega[j]).collect();
    let mut best = (0, f64::INFINITY);
    for q in 1..=q_max.ceil() as u64 {
        let err = (0..omega.len())
            .filter(|&i| i != j)
            .map(|i| {
                let x = q as f64 * ratios[i];
                (x - x.round()).abs()
            })
            .fold(0.0, f64::max);
        if err < best.1 {
            best = (q, err);
        }
    }
    best
}

fn dirichlet_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut failures = Vec::new();
    for case in 0..100 {
        let n = 2 + case % 2;
        let omega: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let q_max = rng.random_range(1.0..=200.0f64).floor();
        let approx = dirichlet_approx(&omega, q_max).unwrap();
        let (q, err) = oracle_dirichlet(&omega, q_max);
        let j = approx.normalizer;
        // ω_per,i = round(q ω_i / ω_j) ω_j / q, unchanged by reducing p/q
        let same_orbit = approx.omega_per.iter().zip(&omega).all(|(wp, w)| {
            let expect = (q as f64 * (w / omega[j])).round() * omega[j] / q as f64;
            (wp - expect).abs() <= 1e-12 * omega[j].abs().max(1.0)
        });
        let within = err <= dirichlet_bound(q_max, n) && approx.ratio_error <= dirichlet_bound(q_max, n);
        if (approx.ratio_error - err).abs() > 1e-12 || !same_orbit || !within {
            failures.push(format!("omega {omega:?} Q {q_max}: q {q} err {err:e} vs {:e}", approx.ratio_error));
        }
    }
    (
        failures.is_empty(),
        format!("100 cases (50 per n), failures {}{}", failures.len(), failures.first().map_or(String::new(), |s| format!(" first: {s}"))),
    )
}

fn jacobian_det(field: &HamiltonianField, z: &[f64], h: f64) -> f64 {
    let m = z.len();
    let d = 1e-5;
    let mut jac = DMatrix::zeros(m, m);
    for j in 0..m {
        let (mut zp, mut zm) = (z.to_vec(), z.to_vec());
        zp[j] += d;
        zm[j] -= d;
        let fp = implicit_midpoint_map(field, &zp, h).unwrap();
        let fm = implicit_midpoint_map(field, &zm, h).unwrap();
        for i in 0..m {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * d);
        }
    }
    jac.determinant()
}

fn integrator_health() -> Outcome {
    let eps = 1e-3;
    let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
    let f = synthesize_ck_perturbation(&RegularityProfile::new(3, 4, 2, 7, eps), 2).unwrap();
    let field = HamiltonianField::new(&h.add(&f).unwrap());
    let h_step = 0.05;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut det_err = 0.0f64;
    let mut rev_err = 0.0f64;
    for _ in 0..20 {
        let z: Vec<f64> = (0..4).map(|i| if i < 2 { rng.random::<f64>() } else { rng.random_range(-0.5..0.5) }).collect();
        det_err = det_err.max((jacobian_det(&field, &z, h_step) - 1.0).abs());
        let fwd = implicit_midpoint_map(&field, &z, h_step).unwrap();
        let back = implicit_midpoint_map(&field, &fwd, -h_step).unwrap();
        rev_err = rev_err.max(back.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }

    let steps = 1_000_000u64;
    let stride = 100;
    let cfg = IntegrationConfig {
        horizon: steps as f64 * h_step,
        h_step,
        drift_threshold: f64::INFINITY,
        sample_stride: stride,
        domain: None,
    };
    let start = PhaseState::new(vec![0.13, 0.71], vec![0.31, -0.17]);
    let record = integrate(&field, &start, &cfg).unwrap();
    let e0 = field.energy(&start.theta, &start.action);
    let errors: Vec<f64> = record.samples.iter().map(|s| (s.energy - e0).abs()).collect();
    let decile = errors.len() / 10;
    let first = errors[1..decile].iter().cloned().fold(0.0, f64::max);
    let last = errors[errors.len() - decile..].iter().cloned().fold(0.0, f64::max);
    let ok = det_err <= 1e-9 && rev_err <= 1e-12 && last <= 2.0 * first && record.steps == steps;
    (
        ok,
        format!(
            "|det-1| {det_err:.1e}, reversibility {rev_err:.1e}, energy envelope first {first:.2e} last {last:.2e} over {} steps",
            record.steps
        ),
    )
}

fn drift_sweep(grid: Vec<f64>, k_reg: u32, seed: u64) -> SweepConfig {
    SweepConfig {
        n: 2,
        k_reg,
        eps_grid: grid,
        ensemble: 16,
        seed,
        horizon_cap: 1e5,
        horizon_constant: 1.0,
        horizon_exponent: None,
        drift_threshold: ThresholdRule::Absolute { value: 1.0 },
        h_step: StepRule::SqrtEps { max: 0.05 },
        model: ModelId::Isotropic,
        radius: 1.0,
        perturbation: PerturbationSpec::Synthesized {
            k_max: 4,
            decay_exponent: None,
        },
        lambda_basis: None,
        sigma: None,
        step_budget: None,
    }
}

fn no_counterexample() -> Outcome {
    let (eps0, horizon0) = (1e-3, 400.0);
    let mut cal = drift_sweep(vec![eps0], 3, 17);
    cal.horizon_constant = horizon0;
    cal.horizon_exponent = Some(0.0);
    let records = run_sweep(&cal, None).unwrap();
    if records.iter().any(|r| r.exit_kind != ExitKind::Horizon) {
        return (false, "calibration runs did not all reach the horizon".into());
    }
    let c1 = records.iter().map(|r| r.max_drift).fold(0.0, f64::max) / eps0.powf(0.25);
    let c2 = horizon0 * eps0.powf(0.25);

    let mut check = drift_sweep(vec![1e-4, 1e-5], 3, 17);
    check.horizon_constant = c2;
    check.horizon_exponent = Some(0.25);
    check.drift_threshold = ThresholdRule::Scaled { c: c1, exponent: Some(0.25) };
    let records = run_sweep(&check, None).unwrap();
    let violations = records
        .iter()
        .filter(|r| r.exit_kind != ExitKind::Horizon || r.max_drift > c1 * r.eps.powf(0.25))
        .count();
    let worst = records
        .iter()
        .map(|r| r.max_drift / (c1 * r.eps.powf(0.25)))
        .fold(0.0, f64::max);
    (
        violations == 0,
        format!("c1 {c1:.3e}, c2 {c2:.1}; {} runs, violations {violations}, max drift/bound {worst:.2e}", records.len()),
    )
}

fn regularity_ladder() -> Outcome {
    let mut slopes = Vec::new();
    let mut details = Vec::new();
    for k in [3u32, 5] {
        let mut cfg = drift_sweep(vec![1e-2, 3e-3, 1e-3, 3e-4, 1e-4], k, 11);
        cfg.horizon_constant = 10.0;
        cfg.drift_threshold = ThresholdRule::Scaled { c: 3e-6, exponent: None };
        let records = run_sweep(&cfg, None).unwrap();
        let a = cfg.exponents().unwrap().a_f64();
        let fit = fit_exponent(&records, FitQuantity::ExitTime, -a).unwrap();
        let exits: Vec<usize> = cfg
            .eps_grid
            .iter()
            .map(|&e| records.iter().filter(|r| r.eps == e && r.exit_kind == ExitKind::Drift).count())
            .collect();
        details.push(format!(
            "k={k}: slope {} exits per eps {exits:?} censored points {}",
            fit.slope.map_or("none".into(), |s| format!("{s:.3}")),
            fit.censored_points
        ));
        slopes.push(fit.slope);
    }
    let ok = match (slopes[0], slopes[1]) {
        (Some(s3), Some(s5)) => s5.abs() - s3.abs() >= 0.3,
        _ => false,
    };
    (ok, details.join("; "))
}

fn certificate_pipeline() -> Outcome {
    let eps = 1e-6;
    let h = FTPolynomial::diagonal_quadratic(vec![0.0, 0.0], &[1.0, 1.0]);
    let f = synthesize_ck_perturbation(&RegularityProfile::new(4, 4, 2, 3, eps), 2).unwrap();
    let system = NearIntegrableSystem::new(h, f, 1.0, 4, eps).unwrap();
    let constants = CertificateConstants {
        c_mu: 4.0,
        ..CertificateConstants::default()
    };
    let opts = ValidationOptions {
        theta0: vec![0.3, 0.6],
        h_step: 1e-3,
        displacement_samples: 100,
        seed: 2,
    };
    let cert = match build_certificate(&system, &[0.41, 0.23], &ResonanceModule::trivial(2), &constants, Some(&opts)) {
        Ok(c) => c,
        Err(e) => return (false, e.to_string()),
    };
    let p = &cert.parameters;
    let q_ratio = p.q_scale / eps.powf(-0.25);
    let mu_ratio = p.mu * p.period / eps.powf(0.25);
    let tau_ratio = p.tau * (p.period * p.mu).powi(2);
    let v = cert.validation.as_ref();
    let ok = p.d == 2
        && p.branch == PeriodicBranch::Dirichlet
        && cert.normal_form.scaled.ledger.len() == 3
        && (q_ratio - constants.c_q).abs() <= 1e-12
        && (mu_ratio - constants.c_mu).abs() <= 1e-12 * constants.c_mu
        && (tau_ratio - constants.c_tau).abs() <= 1e-12
        && v.is_some_and(|v| v.passed && (v.horizon - p.tau).abs() <= 1e-12 * p.tau);
    (
        ok,
        format!(
            "Q eps^(1/4) {q_ratio:.6}, mu T eps^(-1/4) {mu_ratio:.6}, tau (T mu)^2 {tau_ratio:.6}; T {:.2} tau {:.2}; drift {:.2e} <= {:.2e}",
            p.period,
            p.tau,
            v.map_or(f64::NAN, |v| v.measured_drift),
            v.map_or(f64::NAN, |v| v.allowed_drift)
        ),
    )
}

fn determinism() -> Outcome {
    let mut cfg = drift_sweep(vec![1e-2, 1e-3], 3, 5);
    cfg.ensemble = 12;
    cfg.drift_threshold = ThresholdRule::Scaled { c: 1e-5, exponent: None };
    let csv = |threads| {
        let records = run_sweep(&cfg, Some(threads)).unwrap();
        let mut out = Vec::new();
        write_sweep_csv(&records, &mut out).unwrap();
        out
    };
    let (one, eight) = (csv(1), csv(8));
    (one == eight, format!("{} CSV bytes, identical {}", one.len(), one == eight))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("exponent formulas", exponent_formulas),
        ("homological identity", homological_identity),
        ("averaging oracle", averaging_oracle),
        ("lie transform vs numerical flow", lie_transform_vs_flow),
        ("remainder scaling", remainder_scaling),
        ("dirichlet correctness", dirichlet_correctness),
        ("integrator health", integrator_health),
        ("no-counterexample harness", no_counterexample),
        ("regularity ladder", regularity_ladder),
        ("certificate pipeline", certificate_pipeline),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let (ok, detail) = check();
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<32} {} ({:.1}s) {detail}",
            i + 1,
            name,
            if ok { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
