use num_complex::Complex64;
use scatwave::geometry::{MetricDocument, PerturbationClass, Profile, ScatteringMetricSpec};
use scatwave::resonance::{
    beyn_contour, build_cap_pencil, exact_hyperbolic_resonances, resonances_for, BeynOptions, Strip,
};

fn minkowski(n: usize) -> ScatteringMetricSpec {
    ScatteringMetricSpec::from_document(&MetricDocument {
        n,
        class: PerturbationClass::ExactMinkowski,
        profile: Profile::Minkowski,
    })
    .unwrap()
}

fn potential(n: usize, eps: f64) -> ScatteringMetricSpec {
    ScatteringMetricSpec::from_document(&MetricDocument {
        n,
        class: PerturbationClass::NormallyShortRange,
        profile: Profile::Potential { eps },
    })
    .unwrap()
}

#[test]
fn odd_dimension_lattice() {
    for n in [3usize, 5] {
        let strip = Strip::new(-3.0, 0.5, 5.0);
        let set = resonances_for(&minkowski(n), &[0, 1, 2], 48, strip).unwrap();
        let expect = exact_hyperbolic_resonances(n, strip);
        println!("n={n} got {:?}", set.sigmas());
        println!("n={n} extraneous {:?}", set.extraneous.iter().map(|r| r.sigma).collect::<Vec<_>>());
        for e in expect.sigmas() {
            assert!(set.sigmas().iter().any(|s| (s - e).norm() < 1e-10), "missing {e}");
        }
        for s in set.sigmas() {
            assert!(expect.sigmas().iter().any(|e| (s - e).norm() < 1e-10), "spurious {s}");
        }
    }
}

#[test]
fn even_dimension_has_no_cap_resonances() {
    let strip = Strip::new(-3.0, 0.5, 5.0);
    let set = resonances_for(&minkowski(4), &[0, 1, 2], 48, strip).unwrap();
    println!("n=4 got {:?}", set.sigmas());
    println!("n=4 extraneous {:?}", set.extraneous.iter().map(|r| r.sigma).collect::<Vec<_>>());
    assert!(set.is_empty());
}

#[test]
fn potential_moves_pole() {
    let strip = Strip::new(-1.5, 0.5, 3.0);
    let set = resonances_for(&potential(4, 0.01), &[0], 48, strip).unwrap();
    println!("eps=0.01 {:?}", set.sigmas());
    let lead = set.leading().unwrap().sigma;
    assert!((lead - Complex64::new(0.0, -1.005014)).norm() < 1e-5);
}

#[test]
fn contour_agrees_with_newton() {
    let p = build_cap_pencil(&minkowski(3), 0, 32).unwrap();
    let r = beyn_contour(&p, Complex64::new(0.0, -1.0), 0.8, &BeynOptions::default()).unwrap();
    println!("{:?} {}", r.set.sigmas(), r.inconclusive);
    assert_eq!(r.count, 2);
}
