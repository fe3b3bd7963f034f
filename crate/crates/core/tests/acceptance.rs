//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p polyspike --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polyspike::fluct::{example_closed_forms, fluctuation_coefficients, EntryLaw};
use polyspike::freeprob::{
    dyson_derivative, dyson_residual, dyson_solve, mp_g, DysonConfig, SpectralMeasure,
};
use polyspike::linearize::{example_fixture, linearize, schur_check};
use polyspike::linmat::{det_expansion_residual, inverse, operator_norm, HermitianMatrix};
use polyspike::ncalg::{additive_polynomial, example_polynomial, normalize, Monomial, NCPolynomial};
use polyspike::outlier::{find_outliers, scan_support, ScanOptions};
use polyspike::pipeline::{
    example_config, prepare_targets, predict_outliers, verify_example, ModelConfig, PipelineOptions,
};
use polyspike::simulate::{
    global_law_check, ks_matched_gaussian, ks_statistic, lilliefors_critical_5pct, run_trials, sample_gue, GlobalLawOptions, Moments,
};
use polyspike::{ComplexMatrix, Linearization};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_hermitian(rng: &mut ChaCha8Rng, m: usize, scale: f64) -> HermitianMatrix {
    let a = ComplexMatrix::from_fn(m, m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    HermitianMatrix::symmetrize(&(&a + &a.adjoint()).scale_real(0.5 * scale)).unwrap()
}

fn random_pencil(rng: &mut ChaCha8Rng, m: usize) -> Linearization {
    Linearization::new(
        random_hermitian(rng, m, 1.0),
        vec![random_hermitian(rng, m, 1.0), random_hermitian(rng, m, 1.0)],
    )
    .unwrap()
}

fn random_measure(rng: &mut ChaCha8Rng) -> SpectralMeasure {
    let k = rng.random_range(1..=5);
    let pts: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
    let ws: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = ws.iter().sum();
    let atoms = pts.iter().zip(&ws).map(|(&t, &w)| [t, w / total]).collect();
    SpectralMeasure::from_spec(polyspike::freeprob::MeasureSpec::Atoms { atoms }).unwrap()
}

/// `Re + i·Im` with `Im ⪰ lo·I`.
fn random_base_point(rng: &mut ChaCha8Rng, m: usize, lo: f64) -> ComplexMatrix {
    let re = random_hermitian(rng, m, 2.0).into_matrix();
    let a = ComplexMatrix::from_fn(m, m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut im = &a * &a.adjoint();
    for i in 0..m {
        im[(i, i)] += c(lo, 0.0);
    }
    &re + &im.scale(c(0.0, 1.0))
}

fn min_eig(h: &ComplexMatrix) -> f64 {
    HermitianMatrix::symmetrize(h).unwrap().eigenvalues().unwrap()[0]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Outcome {
    let l = example_fixture();
    let mu = SpectralMeasure::point_mass(0.0);
    let t = Instant::now();
    let scan = scan_support(&l, &mu, (-13.0, 13.0), &ScanOptions::default()).unwrap();
    let out = find_outliers(&l, &mu, 2.0, &scan, &Default::default()).unwrap();
    let elapsed = t.elapsed();

    // Independent oracle: bisection on θ²G² - (1 - G) = 0 with the scalar
    // Marchenko–Pastur transform.
    let reduced = |z: f64| {
        let g = mp_g(c(z, 0.0)).unwrap().re;
        4.0 * g * g - (1.0 - g)
    };
    let bisect = |mut a: f64, mut b: f64| {
        let fa = reduced(a);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (reduced(m) > 0.0) == (fa > 0.0) {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    };
    let oracle = [bisect(-3.0, -1e-9), bisect(4.0 + 1e-9, 12.0)];
    let cf = example_closed_forms(2.0).unwrap();
    let closed = [cf.minus.rho, cf.plus.unwrap().rho];
    let ok_count = out.len() == 2;
    let mut worst: f64 = 0.0;
    if ok_count {
        for i in 0..2 {
            worst = worst.max((out[i].rho - closed[i]).abs()).max((out[i].rho - oracle[i]).abs());
        }
    }
    let pass = ok_count && worst < 1e-6 && elapsed < Duration::from_secs(10);
    outcome(
        pass,
        format!(
            "roots {:?} vs closed forms {:?}, max |Δρ| {:.2e}, {:.2}s",
            out.iter().map(|o| o.rho).collect::<Vec<_>>(),
            closed,
            worst,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for theta in [0.5, 1.0, 2.0, 3.0] {
        let r = verify_example(theta, &PipelineOptions::default()).unwrap();
        worst = r.rows.iter().map(|x| x.rel_error).fold(worst, f64::max);
        if !r.passed {
            failures.push(theta);
        }
    }
    let elapsed = t.elapsed();
    outcome(
        failures.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "θ ∈ {{0.5, 1, 2, 3}}, max rel error {worst:.2e}, failing θ {failures:?}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut cfg = example_config(2.0);
    cfg.polynomial = additive_polynomial();
    cfg.entry_law = EntryLaw::GueComplex;
    let l = cfg.linearization().unwrap();
    let opts = PipelineOptions::default();
    let pred = predict_outliers(&cfg, &l, &opts).unwrap();
    let n = 400;
    let targets = prepare_targets(&cfg, &l, &pred, n, None, opts.dyson()).unwrap();
    if targets.len() != 1 {
        return outcome(false, format!("expected one outlier, found {}", targets.len()));
    }
    let co = &targets[0].coefficients;
    let ratio = co.v_tilde / (co.c1 * co.c1);
    let runs = run_trials(&cfg.model_spec(), &cfg.entry_law, n, 400, 7, &[targets[0].target]).unwrap();
    let mom = Moments::of(&runs[0].samples);
    let var = mom.variance / (co.c1 * co.c1);
    let elapsed = t.elapsed();
    outcome(
        (ratio - 0.75).abs() < 1e-9 && (0.56..=0.94).contains(&var) && elapsed < Duration::from_secs(300),
        format!(
            "ṽ/C1² = {ratio:.12}, MC variance {var:.4} over {} kept trials ({} excluded), {:.1}s",
            runs[0].samples.len(),
            runs[0].excluded,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let t = Instant::now();
    let cfg: ModelConfig = example_config(2.0);
    let l = cfg.linearization().unwrap();
    let opts = PipelineOptions::default();
    let pred = predict_outliers(&cfg, &l, &opts).unwrap();
    let n = 300;
    let targets = prepare_targets(&cfg, &l, &pred, n, None, opts.dyson()).unwrap();
    // The negative outlier, where C2²/C1² dominates v/C1².
    let Some(tg) = targets.iter().find(|t| t.target.rho < 0.0) else {
        return outcome(false, "no negative outlier".into());
    };
    let co = &tg.coefficients;
    let dominance = (co.c2 * co.c2) / co.v;
    let runs = run_trials(&cfg.model_spec(), &cfg.entry_law, n, 1000, 2024, &[tg.target]).unwrap();
    let samples = &runs[0].samples;
    let law = co.scaled_limit_law().unwrap();
    let ks = ks_statistic(samples, &law).unwrap();
    let ks_gauss = ks_matched_gaussian(samples).unwrap();
    let crit = lilliefors_critical_5pct(samples.len());
    let elapsed = t.elapsed();
    outcome(
        ks < 0.10 && dominance > 1.0 && ks_gauss > crit && elapsed < Duration::from_secs(1800),
        format!(
            "ρ = {:.6}, C2²/v = {dominance:.2}: KS(limit law) = {ks:.4}, KS(matched Gaussian) = {ks_gauss:.4} \
             vs 5% Lilliefors critical {crit:.4}, {} trials kept, {:.1}s",
            co.rho,
            samples.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = DysonConfig::default();
    let mut worst = [0.0f64; 4];
    let mut failed = 0;
    for _ in 0..500 {
        let m = rng.random_range(1..=3);
        let l = random_pencil(&mut rng, m);
        let mu = random_measure(&mut rng);
        let lo = rng.random_range(0.05..1.0);
        let b = random_base_point(&mut rng, m, lo);
        let Ok(sol) = dyson_solve(&l, &mu, &b, &cfg) else {
            failed += 1;
            continue;
        };
        let im_gap = -min_eig(&(&sol.omega.imaginary_part() - &b.imaginary_part()));
        let conj = dyson_residual(&l, &mu, &b.adjoint(), &sol.omega.adjoint()).unwrap();
        let residual = dyson_residual(&l, &mu, &b, &sol.omega).unwrap();
        let bound = operator_norm(&inverse(&b.imaginary_part()).unwrap()).unwrap();
        let excess = operator_norm(&sol.g).unwrap() - bound;
        worst[0] = worst[0].max(im_gap);
        worst[1] = worst[1].max(conj);
        worst[2] = worst[2].max(residual);
        worst[3] = worst[3].max(excess);
    }
    let elapsed = t.elapsed();
    outcome(
        failed == 0
            && worst[0] <= 1e-10
            && worst[1] < 1e-10
            && worst[2] < 1e-10
            && worst[3] <= 1e-10
            && elapsed < Duration::from_secs(60),
        format!(
            "500 probes ({failed} unsolved): max λ_max(Im b - Im ω) {:.1e}, conjugate residual {:.1e}, \
             residual {:.1e}, ‖G‖ - ‖(Im b)⁻¹‖ {:.2e}, {:.2}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = DysonConfig {
        tol: 1e-14,
        ..DysonConfig::default()
    };
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let m = rng.random_range(1..=3);
        let l = random_pencil(&mut rng, m);
        let mu = random_measure(&mut rng);
        let b = random_base_point(&mut rng, m, 0.5);
        let sol = dyson_solve(&l, &mu, &b, &cfg).unwrap();
        for _ in 0..10 {
            let sigma = ComplexMatrix::from_fn(m, m, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let dg = dyson_derivative(&sol, &l, &mu, &sigma).unwrap();
            let plus = dyson_solve(&l, &mu, &(&b + &sigma.scale_real(h)), &cfg).unwrap().g;
            let minus = dyson_solve(&l, &mu, &(&b - &sigma.scale_real(h)), &cfg).unwrap().g;
            let fd = (&plus - &minus).scale_real(0.5 / h);
            worst = worst.max(fd.distance(&dg) / dg.max_abs());
        }
    }
    let elapsed = t.elapsed();
    outcome(
        worst < 1e-6 && elapsed < Duration::from_secs(60),
        format!("100 directions, max relative error {worst:.2e}, {:.2}s", elapsed.as_secs_f64()),
    )
}

fn random_polynomial(rng: &mut ChaCha8Rng) -> NCPolynomial {
    let terms = rng.random_range(1..=5);
    let monos: Vec<Monomial> = (0..terms)
        .map(|_| {
            let d = rng.random_range(0..=3);
            let word = (0..d).map(|_| rng.random_range(0..2)).collect();
            Monomial::new(c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)), word)
        })
        .collect();
    let p = normalize(2, &monos).unwrap();
    (&p + &p.adjoint()).scale(c(0.5, 0.0))
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut tried = 0;
    while tried < 20 {
        let p = random_polynomial(&mut rng);
        if p.is_zero() {
            continue;
        }
        tried += 1;
        let l = linearize(&p).unwrap();
        let probes: Vec<ComplexMatrix> = (0..2)
            .map(|_| sample_gue(6, rng.random()).scale_real(1.0 / 6f64.sqrt()))
            .collect();
        let z = c(rng.random_range(-2.0..2.0), rng.random_range(0.5..2.0));
        worst = worst.max(schur_check(&l, &p, &probes, z).unwrap());
    }
    let probes: Vec<ComplexMatrix> = (0..2).map(|i| sample_gue(6, 100 + i).scale_real(1.0 / 6f64.sqrt())).collect();
    let fixture = schur_check(&example_fixture(), &example_polynomial(), &probes, c(0.7, 1.1)).unwrap();
    let elapsed = t.elapsed();
    outcome(
        worst < 1e-9 && fixture < 1e-10 && elapsed < Duration::from_secs(60),
        format!(
            "20 random polynomials: max residual {worst:.2e}; fixture {fixture:.2e}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let random = |rng: &mut ChaCha8Rng| {
        ComplexMatrix::from_fn(3, 3, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    };
    for _ in 0..100 {
        let a = random(&mut rng);
        let h = random(&mut rng).scale_real(1e-3);
        let r1 = det_expansion_residual(&a, &h).unwrap();
        let r2 = det_expansion_residual(&a, &h.scale_real(0.5)).unwrap();
        let ratio = r1 / r2;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    let elapsed = t.elapsed();
    outcome(
        lo >= 3.5 && hi <= 4.5 && elapsed < Duration::from_secs(10),
        format!("100 pairs, ratio range [{lo:.4}, {hi:.4}], {:.2}s", elapsed.as_secs_f64()),
    )
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let mut distances = Vec::new();
    for p in [example_polynomial(), additive_polynomial()] {
        let mut cfg = example_config(2.0);
        cfg.polynomial = p;
        let l = cfg.linearization().unwrap();
        let r = global_law_check(&cfg.model_spec(), &l, &cfg.entry_law, 1000, 9, &GlobalLawOptions::default())
            .unwrap();
        distances.push(r.distance);
    }
    let elapsed = t.elapsed();
    outcome(
        distances.iter().all(|&d| d < 0.05) && elapsed < Duration::from_secs(60),
        format!(
            "N = 1000: example {:.4}, additive {:.4}, {:.1}s",
            distances[0],
            distances[1],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let mu = SpectralMeasure::point_mass(0.0);
    let dyson = DysonConfig::default();
    let fixture = example_fixture();
    let auto = linearize(&example_polynomial()).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for theta in [1.0, 2.0, 3.0] {
        let scan = scan_support(&fixture, &mu, (-21.0, 21.0), &ScanOptions::default()).unwrap();
        for o in find_outliers(&fixture, &mu, theta, &scan, &Default::default()).unwrap() {
            let f = fluctuation_coefficients(&fixture, &mu, theta, o.rho, o.rho, &EntryLaw::UniformSqrt3, &dyson).unwrap();
            let a = fluctuation_coefficients(&auto, &mu, theta, o.rho, o.rho, &EntryLaw::UniformSqrt3, &dyson).unwrap();
            worst = worst
                .max(rel(a.c2 / a.c1, f.c2 / f.c1))
                .max(rel(a.v / (a.c1 * a.c1), f.v / (f.c1 * f.c1)));
            count += 1;
        }
    }
    let elapsed = t.elapsed();
    outcome(
        count > 0 && worst < 1e-6 && elapsed < Duration::from_secs(30),
        format!(
            "m = {} vs m = {} over {count} outliers: max relative difference {worst:.2e}, {:.2}s",
            fixture.m(),
            auto.m(),
            elapsed.as_secs_f64()
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("example outlier locations", criterion_1),
        ("example coefficient regression", criterion_2),
        ("GUE additive consistency", criterion_3),
        ("non-universal fluctuation law", criterion_4),
        ("Dyson solver invariants", criterion_5),
        ("derivative oracle", criterion_6),
        ("Schur-complement certification", criterion_7),
        ("determinant expansion", criterion_8),
        ("global law", criterion_9),
        ("linearization independence", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut all = true;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let o = f();
        all &= o.pass;
        println!(
            "criterion {id:>2} [{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
