use num_complex::Complex64;
use scatwave::mellin::*;
use scatwave::Error;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn samples_of(terms: &[(PoleTerm, Complex64)]) -> LogGridSamples {
    LogGridSamples::from_fn(0.0, 0.0025, 16000, |rho| {
        terms.iter().map(|(t, a)| a * t.eval(rho)).sum()
    })
}

#[test]
fn simple_pole_transform() {
    let sigma0 = c(0.0, -1.0);
    let term = inverse_mellin_pole(sigma0, 1).unwrap();
    let data = mellin_transform(&samples_of(&[(term, c(1.0, 0.0))]), 0.5).unwrap();
    assert!(data.plancherel_ok(), "plancherel {}", data.plancherel_error);
    let mut worst: f64 = 0.0;
    for k in 0..data.re_sigma.len() {
        if data.re_sigma[k].abs() > 5.0 {
            continue;
        }
        let s = data.sigma(k);
        let exact = -1.0 / (s - sigma0);
        worst = worst.max((data.values[k] - exact).norm() / exact.norm());
    }
    assert!(worst < 1e-6, "worst relative error {worst:e}");
}

#[test]
fn higher_order_pole_transform() {
    let sigma0 = c(0.7, -2.0);
    for m in 1..=3 {
        let term = inverse_mellin_pole(sigma0, m).unwrap();
        let smp = samples_of(&[(term, c(1.0, 0.0))]);
        for re in [-3.0, 0.0, 1.5] {
            let s = c(re, 0.25);
            let got = MellinData::direct(&smp, s);
            let exact = -(s - sigma0).powi(-(m as i32));
            assert!((got - exact).norm() < 1e-7 * exact.norm(), "m = {m}, sigma = {s}");
        }
    }
}

#[test]
fn invalid_order() {
    assert!(matches!(inverse_mellin_pole(c(0.0, -1.0), 0), Err(Error::InvalidOrder(0))));
    assert!(matches!(inverse_mellin_pole(c(0.0, -1.0), -2), Err(Error::InvalidOrder(-2))));
}

#[test]
fn growing_integrand_rejected() {
    let term = inverse_mellin_pole(c(0.0, -1.0), 1).unwrap();
    let smp = samples_of(&[(term, c(1.0, 0.0))]);
    assert!(matches!(mellin_transform(&smp, -1.5), Err(Error::WeightViolation(_))));
}

#[test]
fn recovers_poles_and_orders() {
    let p1 = inverse_mellin_pole(c(0.0, -1.0), 1).unwrap();
    let p2a = inverse_mellin_pole(c(0.5, -2.0), 1).unwrap();
    let p2b = inverse_mellin_pole(c(0.5, -2.0), 2).unwrap();
    let smp = samples_of(&[(p1, c(1.0, 0.0)), (p2a, c(0.3, 0.1)), (p2b, c(-0.4, 0.0))]);
    let data = mellin_transform(&smp, 0.5).unwrap();
    let fit = fit_poles(&data, 8.0, 5, 1e-8).unwrap();
    assert_eq!(fit.poles.len(), 2, "{:?}", fit.poles);
    let a = &fit.poles[0];
    let b = &fit.poles[1];
    assert!((a.sigma - c(0.0, -1.0)).norm() < 1e-5, "{}", a.sigma);
    assert_eq!(a.order, 1);
    assert!((a.amplitudes[0] - c(1.0, 0.0)).norm() < 1e-4);
    assert!((b.sigma - c(0.5, -2.0)).norm() < 1e-3, "{}", b.sigma);
    assert_eq!(b.order, 2);
    assert!((b.amplitudes[1] - c(-0.4, 0.0)).norm() < 1e-2, "{:?}", b.amplitudes);
}

fn geo(f: impl Fn(f64) -> f64) -> TailSamples {
    TailSamples::geometric(1e2, 1e5, 1.05, f).unwrap()
}

#[test]
fn single_power_tail() {
    let fit = fit_tail(&geo(|s| 2.0 * s.powf(-1.5)), &TailFitOptions::default()).unwrap();
    assert_eq!(fit.terms.len(), 1);
    assert!((fit.terms[0].p - 1.5).abs() < 1e-8);
    assert!((fit.terms[0].amp - 2.0).abs() < 1e-6);
    assert_eq!(fit.terms[0].kappa, 0);
    assert!((fit.terms[0].sigma - c(0.0, -0.5)).norm() < 1e-8);
}

#[test]
fn log_power_tail() {
    let fit = fit_tail(&geo(|s| s.powf(-2.0) * s.ln()), &TailFitOptions::default()).unwrap();
    assert!((fit.leading_exponent().unwrap() - 2.0).abs() < 1e-6);
    assert_eq!(fit.max_kappa(fit.terms[0].p), Some(1));
}

#[test]
fn two_term_tail() {
    let opts = TailFitOptions {
        max_terms: 2,
        allow_logs: false,
        ..Default::default()
    };
    let fit = fit_tail(&geo(|s| s.powf(-1.5) + 30.0 * s.powf(-2.5)), &opts).unwrap();
    let e = fit.exponents();
    assert_eq!(e.len(), 2, "{e:?}");
    assert!((e[0] - 1.5).abs() < 1e-5 && (e[1] - 2.5).abs() < 1e-3, "{e:?}");
}

#[test]
fn zero_tail_is_below_noise() {
    let fit = fit_tail(&geo(|_| 0.0), &TailFitOptions::default()).unwrap();
    assert!(fit.below_noise && fit.terms.is_empty());
}

#[test]
fn oscillating_tail_is_a_fit_error() {
    let r = fit_tail(&geo(|s| s.powf(-1.5) * (3.0 * s.ln()).cos()), &TailFitOptions::default());
    assert!(matches!(r, Err(Error::Fit(_))));
}

#[test]
fn short_window_rejected() {
    let smp = TailSamples::geometric(1e2, 1e3, 1.05, |s| s.powf(-1.5)).unwrap();
    assert!(matches!(fit_tail(&smp, &TailFitOptions::default()), Err(Error::Precondition(_))));
}

#[test]
fn matching_against_lattice() {
    let set = scatwave::resonance::exact_hyperbolic_resonances(
        3,
        scatwave::resonance::Strip::new(-4.0, 0.0, 1.0),
    );
    let fit = fit_tail(&geo(|s| s.powf(-1.5)), &TailFitOptions::default()).unwrap();
    let rep = match_resonances(&fit, &set, 0.05);
    assert!(rep.all_matched() && !rep.vacuous);
    assert!((rep.pairs[0].resonance - c(0.0, -0.5)).norm() < 1e-12);
}
