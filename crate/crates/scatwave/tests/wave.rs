use scatwave::geometry::*;
use scatwave::wave::*;
use scatwave::Error;
use std::f64::consts::PI;

mod common;
use common::*;

#[test]
fn four_dimensional_mode_matches_dalembert_with_second_order() {
    let errs = dalembert_errors();
    let order = observed_order(&ORDER_STEPS, &errs);
    assert!(errs[2] < 1e-3, "{errs:?}");
    assert!(order >= 1.9, "observed order {order:.3} from {errs:?}");
}

#[test]
fn three_dimensional_mode_matches_convolution() {
    let w = evolve_characteristic(&small_problem(3, 0.05)).unwrap();
    for &(t, r) in &POINTS {
        let ex = convolution_oracle(t, r);
        let got = field_at(&w, t, r);
        assert!((got - ex).abs() < 1e-2 * ex.abs(), "({t}, {r}): {got} vs {ex}");
    }
}

fn full_run(n: usize, profile: Profile, chart: Chart) -> RadiationField {
    let spec = ScatteringMetricSpec::unchecked(n, PerturbationClass::NormallyShortRange, &profile).unwrap();
    let src = SourceSpec::default();
    let p = assemble_mode_problem(&spec, 0, src.clone(), GridSpec::for_source(&src, 0.05)).unwrap();
    let w = match chart {
        Chart::Characteristic => evolve_characteristic(&p).unwrap(),
        Chart::Blowup => solve_on_blowup_chart(&p).unwrap(),
    };
    extract_radiation_field(&w).unwrap()
}

#[test]
fn three_dimensional_tail_amplitude() {
    // total source m = 2 pi int int f r dr dt, and psi_inf ~ m / (2 pi sqrt(2 q))
    let i1 = gl(-1.0, 1.0, 64, bump);
    let m = 2.0 * PI * i1 * (2.0 * i1);
    let want = -m / (4.0 * PI * 2f64.sqrt());
    let rf = full_run(3, Profile::Minkowski, Chart::Characteristic);
    for s in [3e3, 1e4] {
        let got = rf.sample(s).unwrap() * s.powf(1.5);
        assert!((got - want).abs() < 1e-2 * want.abs(), "s = {s}: {got} vs {want}");
    }
}

#[test]
fn four_dimensional_minkowski_is_huygens() {
    let rf = full_run(4, Profile::Minkowski, Chart::Characteristic);
    let peak = rf.r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(peak > 1e-2);
    // t - x.omega over the source (and its image through the axis) lies in [0, 8]
    let late = rf
        .q
        .iter()
        .zip(&rf.r)
        .filter(|(q, _)| **q > 8.5)
        .fold(0.0f64, |a, (_, v)| a.max(v.abs()));
    assert!(late < 1e-8, "{late:e}");
}

fn chart_mismatch(n: usize) -> f64 {
    let a = full_run(n, Profile::Minkowski, Chart::Characteristic);
    let b = full_run(n, Profile::Minkowski, Chart::Blowup);
    assert!(b.rho_based && !a.rho_based);
    let ra = a.rho_convention();
    let rb = b.rho_convention();
    assert_eq!(a.q.len(), b.q.len());
    let scale = rb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn charts_agree_after_convention_factor() {
    for n in [3, 4] {
        let e = chart_mismatch(n);
        assert!(e < 1e-2, "n = {n}: {e:e}");
    }
}

#[test]
fn potential_tail_slope() {
    let rf = full_run(4, Profile::Potential { eps: 0.01 }, Chart::Characteristic);
    let (a, b) = (rf.sample(3e3).unwrap(), rf.sample(1e4).unwrap());
    let slope = -(b / a).ln() / (1e4f64 / 3e3).ln();
    assert!((slope - 2.005).abs() < 0.02, "{slope}");
}

#[test]
fn non_reducible_profiles_are_rejected() {
    let src = SourceSpec::default();
    let g = GridSpec::for_source(&src, 0.1);
    let spec = ScatteringMetricSpec::unchecked(
        4,
        PerturbationClass::NormallyVeryShortRange,
        &Profile::NormalGaussian { eps: 0.01 },
    )
    .unwrap();
    assert!(matches!(
        assemble_mode_problem(&spec, 0, src, g),
        Err(Error::ReductionUnavailable(_))
    ));
}

#[test]
fn nonzero_initial_data_rejected() {
    let mut p = small_problem(3, 0.2);
    p.initial_value = 1.0;
    assert!(matches!(evolve_characteristic(&p), Err(Error::Precondition(_))));
}

#[test]
fn zero_source_gives_zero_field() {
    let mut p = small_problem(3, 0.2);
    p.source = SourceSpec::Zero;
    let w = evolve_characteristic(&p).unwrap();
    assert!(w.rows.unwrap().iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn linear_in_source_amplitude() {
    let base = evolve_characteristic(&small_problem(3, 0.2)).unwrap();
    let mut p = small_problem(3, 0.2);
    p.source = SourceSpec::Bump {
        t0: 4.0,
        tw: 1.0,
        rc: 2.0,
        rw: 1.0,
        amplitude: -2.5,
    };
    let w = evolve_characteristic(&p).unwrap();
    for (ra, rb) in base.rows.unwrap().iter().zip(w.rows.unwrap().iter()) {
        for (a, b) in ra.iter().zip(rb) {
            assert!((b + 2.5 * a).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}
