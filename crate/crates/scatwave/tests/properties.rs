use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scatwave::flow::*;
use scatwave::geometry::*;
use scatwave::mellin::*;
use scatwave::resonance::{exact_hyperbolic_resonances, Strip};
use scatwave::run::{RunConfig, Task};

fn mink(n: usize) -> ScatteringMetricSpec {
    minkowski_metric(n).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symbol_is_fiber_quadratic(
        n in 3usize..6, rho in 0.0f64..0.5, v in -0.95f64..0.95,
        xi in -2.0f64..2.0, gamma in -2.0f64..2.0, c in 0.1f64..5.0, y0 in -1.0f64..1.0,
    ) {
        let spec = mink(n);
        let pt = BCotangentPoint {
            rho, v, y: vec![y0; n - 2], xi, gamma, eta: vec![0.3; n - 2],
        };
        let mut scaled = pt.clone();
        scaled.xi *= c;
        scaled.gamma *= c;
        for e in &mut scaled.eta { *e *= c; }
        let a = b_symbol(&spec, &pt).unwrap();
        let b = b_symbol(&spec, &scaled).unwrap();
        prop_assert!((b - c * c * a).abs() <= 1e-10 * (1.0 + b.abs()));
    }

    #[test]
    fn minkowski_frame_is_lorentzian(n in 2usize..7, rho in 0.0f64..2.0, v in -0.99f64..0.99, y0 in -3.0f64..3.0) {
        let g = mink(n).frame(&CollarPoint::new(rho, v, vec![y0; n - 2]));
        prop_assert_eq!(signature(&g), (1, n - 1));
    }

    #[test]
    fn pole_term_transform(
        re0 in -2.0f64..2.0, im0 in -3.0f64..-0.3, m in 1i64..4, re in -3.0f64..3.0,
    ) {
        let sigma0 = Complex64::new(re0, im0);
        let term = inverse_mellin_pole(sigma0, m).unwrap();
        let smp = LogGridSamples::from_fn(0.0, 0.0025, 16000, |r| term.eval(r));
        let s = Complex64::new(re, 0.25);
        let got = MellinData::direct(&smp, s);
        let want = -(s - sigma0).powi(-(m as i32));
        prop_assert!((got - want).norm() < 1e-6 * want.norm().max(1.0), "{} vs {}", got, want);
    }

    #[test]
    fn tail_fit_scale_invariant(p in 0.6f64..4.0, a in 0.1f64..10.0, c in 0.01f64..100.0) {
        let base = TailSamples::geometric(1e2, 1e4, 1.05, |s| a * s.powf(-p)).unwrap();
        let scaled = TailSamples::geometric(1e2, 1e4, 1.05, |s| c * a * s.powf(-p)).unwrap();
        let opts = TailFitOptions { trim_level: 0.0, noise_floor: 0.0, ..Default::default() };
        let f1 = fit_tail(&base, &opts).unwrap();
        let f2 = fit_tail(&scaled, &opts).unwrap();
        prop_assert!((f1.terms[0].p - p).abs() < 1e-7);
        prop_assert!((f2.terms[0].p - f1.terms[0].p).abs() < 1e-9);
        prop_assert!((f2.terms[0].amp - c * f1.terms[0].amp).abs() < 1e-6 * (c * a));
    }

    #[test]
    fn tail_fit_idempotent(p in 0.6f64..3.0, a in -5.0f64..5.0, log in proptest::bool::ANY) {
        prop_assume!(a.abs() > 0.1);
        let f = move |s: f64| a * s.powf(-p) * if log { s.ln() } else { 1.0 };
        let opts = TailFitOptions { trim_level: 0.0, noise_floor: 0.0, ..Default::default() };
        let fit = fit_tail(&TailSamples::geometric(1e2, 1e4, 1.05, f).unwrap(), &opts).unwrap();
        let again = fit_tail(&TailSamples::geometric(1e2, 1e4, 1.05, |s| fit.eval(s)).unwrap(), &opts).unwrap();
        prop_assert_eq!(fit.terms.len(), again.terms.len());
        for (x, y) in fit.terms.iter().zip(&again.terms) {
            prop_assert_eq!(x.kappa, y.kappa);
            prop_assert!((x.p - y.p).abs() < 1e-8);
            prop_assert!((x.amp - y.amp).abs() < 1e-6 * x.amp.abs().max(1.0));
        }
    }

    #[test]
    fn exponent_resonance_map(n in 3usize..8) {
        let set = exact_hyperbolic_resonances(n, Strip::new(-6.0, 0.0, 1.0));
        for r in &set.resonances {
            prop_assert!(r.sigma.re.abs() < 1e-12);
            let p = 1.0 - r.sigma.im;
            let j = p - n as f64 / 2.0;
            prop_assert!((j - j.round()).abs() < 1e-12 && j >= -1e-12);
        }
        prop_assert_eq!(set.is_empty(), n % 2 == 0);
    }

    #[test]
    fn config_hash_ignores_output_dir(seed in 0u64..1000, h in 0.01f64..0.5) {
        let doc = MetricDocument { n: 3, class: PerturbationClass::ExactMinkowski, profile: Profile::Minkowski };
        let mut a = RunConfig::new(Task::Verify, doc);
        a.seed = seed;
        a.h = h;
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        prop_assert_eq!(a.hash(), b.hash());
        let back = RunConfig::from_json(&serde_json::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(&back, &a);
        let mut c = a.clone();
        c.seed += 1;
        prop_assert_ne!(a.hash(), c.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn symbol_conserved_along_flow(n in 3usize..6, seed in 0u64..10_000) {
        let spec = mink(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = loop {
            if let Some(s) = sample_characteristic_start(&spec, &mut rng, 0.05) {
                break s;
            }
        };
        let budget = FlowBudget { max_steps: 4000, ..Default::default() };
        for dir in [1.0, -1.0] {
            let tr = integrate_bicharacteristic(&spec, &start, dir, &budget).unwrap();
            prop_assert!(tr.max_drift < 1e-6, "drift {:e}", tr.max_drift);
            prop_assert!(matches!(tr.terminal, TerminalClass::ReachedSPlus | TerminalClass::ReachedSMinus));
        }
    }
}
