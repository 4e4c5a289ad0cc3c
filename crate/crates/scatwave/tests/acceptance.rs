use num_complex::Complex64;
use scatwave::flow::*;
use scatwave::geometry::*;
use scatwave::mellin::*;
use scatwave::resonance::{exact_hyperbolic_resonances, resonances_for, ResonanceSet, Strip};
use scatwave::run::{distinct, radiation_field, tail_fit, verify_match, RunConfig, Task};
use scatwave::wave::*;
use std::time::{Duration, Instant};

mod common;
use common::*;

const STRIP: (f64, f64, f64) = (-4.0, 0.0, 2.0);
const LATTICE_TOL: f64 = 1e-4;
const LATTICE_TIME: Duration = Duration::from_secs(30);
const TAIL_TIME: Duration = Duration::from_secs(300);
const WINDOW: [f64; 2] = [1e2, 1e4];
const MATCH_TOL: f64 = 0.1;
const HUYGENS_TOL: f64 = 1e-8;
const SUPPORT_END: f64 = 8.5;
const EVEN_MIN_EXPONENT: f64 = 1.9;
const RATIO_TOL_EXACT: f64 = 1e-5;
const RATIO_TOL_PERTURBED: f64 = 5e-2;
const FLOW_SAMPLES: usize = 200;
const DRIFT_TOL: f64 = 1e-6;
const POLE_TOL: f64 = 1e-6;
const ORDER_MIN: f64 = 1.9;
const ORACLE_TOL: f64 = 1e-2;
const CHART_TOL: f64 = 1e-2;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn strip() -> Strip {
    Strip::new(STRIP.0, STRIP.1, STRIP.2)
}

fn spec(n: usize, class: PerturbationClass, profile: Profile) -> ScatteringMetricSpec {
    ScatteringMetricSpec::from_document(&MetricDocument { n, class, profile }).unwrap()
}

fn mink(n: usize) -> ScatteringMetricSpec {
    spec(n, PerturbationClass::ExactMinkowski, Profile::Minkowski)
}

fn potential(n: usize, eps: f64) -> ScatteringMetricSpec {
    spec(n, PerturbationClass::NormallyShortRange, Profile::Potential { eps })
}

fn config(task: Task, s: &ScatteringMetricSpec) -> RunConfig {
    let mut c = RunConfig::new(task, s.document().unwrap());
    c.ells = vec![0, 1, 2];
    c.size = 64;
    c.strip = strip();
    c.window = WINDOW;
    c.match_tol = MATCH_TOL;
    c
}

fn lattice() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [3usize, 4, 5, 6] {
        let t = Instant::now();
        let set = resonances_for(&mink(n), &[0, 1, 2], 64, strip()).unwrap();
        let el = t.elapsed();
        let got = distinct(&set.sigmas(), 1e-6);
        let want = exact_hyperbolic_resonances(n, strip()).sigmas();
        let mut worst: f64 = 0.0;
        for z in &want {
            worst = worst.max(got.iter().map(|g| (g - z).norm()).fold(f64::INFINITY, f64::min));
        }
        let ok = got.len() == want.len() && worst < LATTICE_TOL && el < LATTICE_TIME;
        if n % 2 == 0 {
            assert!(want.is_empty());
        }
        pass &= ok;
        parts.push(format!(
            "n={n}: {}/{} err {:.1e} {:.1}s",
            got.len(),
            want.len(),
            if want.is_empty() { 0.0 } else { worst },
            el.as_secs_f64()
        ));
    }
    Outcome::new(pass, parts.join("; "))
}

struct TailRun {
    label: String,
    fit: ExpansionFit,
    set: ResonanceSet,
}

fn tail_run(label: &str, s: &ScatteringMetricSpec) -> (TailRun, Duration) {
    let c = config(Task::Verify, s);
    let t = Instant::now();
    let rf = radiation_field(&c, s).unwrap();
    let fit = tail_fit(&c, &rf).unwrap();
    let el = t.elapsed();
    let set = resonances_for(s, &c.ells, c.size, c.strip).unwrap();
    (TailRun { label: label.into(), fit, set }, el)
}

fn odd_tails(runs: &mut Vec<TailRun>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (n, want, tol) in [(3usize, 1.5, 0.05), (5, 2.5, 0.1)] {
        let (run, el) = tail_run(&format!("n={n}"), &mink(n));
        let p = run.fit.leading_exponent();
        let ok = p.map(|p| (p - want).abs() <= tol).unwrap_or(false) && el < TAIL_TIME;
        pass &= ok;
        parts.push(format!("n={n}: p={p:?} want {want}+-{tol} {:.1}s", el.as_secs_f64()));
        runs.push(run);
    }
    Outcome::new(pass, parts.join("; "))
}

fn even_decay(runs: &mut Vec<TailRun>) -> Outcome {
    let m = mink(4);
    let rf = radiation_field(&config(Task::Solve, &m), &m).unwrap();
    let late = rf
        .q
        .iter()
        .zip(&rf.r)
        .filter(|(q, _)| **q > SUPPORT_END)
        .fold(0.0f64, |a, (_, v)| a.max(v.abs()));
    let peak = rf.r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let huygens = late < HUYGENS_TOL && peak > 1e-2;

    let (run, _) = tail_run("n=4 potential eps=0.01", &potential(4, 0.01));
    let p = run.fit.leading_exponent();
    let lead = run.set.leading().map(|r| 1.0 - r.sigma.im);
    let close = match (p, lead) {
        (Some(p), Some(l)) => p >= EVEN_MIN_EXPONENT && (p - l).abs() <= MATCH_TOL,
        _ => false,
    };
    runs.push(run);
    Outcome::new(
        huygens && close,
        format!("minkowski late |R| {late:.1e} (peak {peak:.2}); potential p={p:?}, leading pole predicts {lead:?}"),
    )
}

fn conformal_info() -> String {
    let s = spec(4, PerturbationClass::NormallyVeryShortRange, Profile::Conformal { eps: 0.01 });
    let (run, _) = tail_run("conformal", &s);
    let v = verify_match(&run.fit, &run.set, MATCH_TOL);
    format!(
        "n=4 conformal eps=0.01: p={:?}, {} cap resonances, cap match {}, {}",
        run.fit.leading_exponent(),
        run.set.len(),
        v.pass,
        v.detail
    )
}

fn identification(runs: &[TailRun]) -> Outcome {
    let mut pass = !runs.is_empty();
    let mut parts = Vec::new();
    for r in runs {
        let v = verify_match(&r.fit, &r.set, MATCH_TOL);
        pass &= v.pass;
        let pairs: Vec<_> = v
            .report
            .pairs
            .iter()
            .map(|p| format!("{:.3}->{:.5}i{}", p.p, p.resonance.im, if p.light_cone { "(lc)" } else { "" }))
            .collect();
        parts.push(format!("{}: {}", r.label, pairs.join(",")));
    }
    Outcome::new(pass, parts.join("; "))
}

fn ratios_close(r: &[f64], tol: f64) -> (bool, f64) {
    let want = [2.0, 1.0, 0.0];
    if r.len() != 3 {
        return (false, f64::INFINITY);
    }
    let e = r.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (e < tol, e)
}

fn radial_points() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut cases: Vec<(String, ScatteringMetricSpec, f64)> = Vec::new();
    for n in [3usize, 4, 5] {
        cases.push((format!("n={n}"), mink(n), RATIO_TOL_EXACT));
    }
    let vsr = PerturbationClass::NormallyVeryShortRange;
    cases.push(("conformal".into(), spec(4, vsr, Profile::Conformal { eps: 0.01 }), RATIO_TOL_PERTURBED));
    cases.push(("normal".into(), spec(4, vsr, Profile::NormalGaussian { eps: 0.01 }), RATIO_TOL_PERTURBED));
    cases.push(("potential".into(), potential(4, 0.01), RATIO_TOL_PERTURBED));
    for (label, s, tol) in cases {
        let n = s.n();
        let sp = radial_linearization(&s, &BCotangentPoint::radial_point(n, 1.0)).unwrap();
        let mult = sp.multiplicities() == vec![1, n + 1, n - 2];
        let (rok, e) = ratios_close(&sp.ratios(), tol);
        pass &= mult && rok;
        parts.push(format!("{label}: {:?} ratio err {e:.1e}", sp.multiplicities()));
    }
    Outcome::new(pass, parts.join("; "))
}

fn nontrapping() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [3usize, 4, 5] {
        let r = check_nontrapping(&mink(n), FLOW_SAMPLES, 1, &FlowBudget::default()).unwrap();
        let ok = r.pass && r.samples == FLOW_SAMPLES && r.failures.is_empty() && r.max_drift < DRIFT_TOL;
        pass &= ok;
        parts.push(format!("n={n}: {} failures, drift {:.1e}", r.failures.len(), r.max_drift));
    }
    Outcome::new(pass, parts.join("; "))
}

fn mellin_roundtrip() -> Outcome {
    let c = Complex64::new;
    let (s1, s2) = (c(0.0, -1.0), c(0.5, -2.0));
    let a1 = c(1.0, 0.0);
    let (b1, b2) = (c(0.3, 0.1), c(-0.4, 0.0));
    let t1 = inverse_mellin_pole(s1, 1).unwrap();
    let t2a = inverse_mellin_pole(s2, 1).unwrap();
    let t2b = inverse_mellin_pole(s2, 2).unwrap();
    let smp = LogGridSamples::from_fn(0.0, 0.0025, 16000, |r| a1 * t1.eval(r) + b1 * t2a.eval(r) + b2 * t2b.eval(r));
    let data = mellin_transform(&smp, 0.5).unwrap();
    let fit = fit_poles(&data, 4.0, 5, 1e-8).unwrap();
    let mut pass = fit.poles.len() == 2;
    let mut worst: f64 = 0.0;
    if pass {
        let (p, q) = (&fit.poles[0], &fit.poles[1]);
        pass &= p.order == 1 && q.order == 2 && p.amplitudes.len() == 1 && q.amplitudes.len() == 2;
        if pass {
            for e in [
                (p.sigma - s1).norm(),
                (q.sigma - s2).norm(),
                (p.amplitudes[0] - a1).norm(),
                (q.amplitudes[0] - b1).norm(),
                (q.amplitudes[1] - b2).norm(),
            ] {
                worst = worst.max(e);
            }
            pass &= worst < POLE_TOL;
        }
    }
    let found: Vec<_> = fit.poles.iter().map(|p| format!("{:.6} order {}", p.sigma, p.order)).collect();
    Outcome::new(pass, format!("{} poles [{}], worst error {worst:.1e}", fit.poles.len(), found.join(", ")))
}

fn oracles() -> Outcome {
    let errs = dalembert_errors();
    let order = observed_order(&ORDER_STEPS, &errs);
    let w = evolve_characteristic(&small_problem(3, 0.05)).unwrap();
    let conv = POINTS
        .iter()
        .map(|&(t, r)| {
            let ex = convolution_oracle(t, r);
            (field_at(&w, t, r) - ex).abs() / ex.abs()
        })
        .fold(0.0f64, f64::max);
    Outcome::new(
        order >= ORDER_MIN && conv < ORACLE_TOL,
        format!("n=4 order {order:.2} at h {ORDER_STEPS:?} (errors {:.1e} {:.1e} {:.1e}); n=3 relative error {conv:.1e}", errs[0], errs[1], errs[2]),
    )
}

fn charts() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [3usize, 4] {
        let s = mink(n);
        let mut c = config(Task::Solve, &s);
        let a = radiation_field(&c, &s).unwrap();
        c.chart = Chart::Blowup;
        let b = radiation_field(&c, &s).unwrap();
        let (ra, rb) = (a.rho_convention(), b.rho_convention());
        let scale = rb.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let e = ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
        let ok = a.q.len() == b.q.len() && e < CHART_TOL;
        pass &= ok;
        parts.push(format!("n={n}: {e:.1e}"));
    }
    Outcome::new(pass, parts.join("; "))
}

fn main() {
    let mut runs = Vec::new();
    let results = vec![
        ("1 minkowski resonance lattice", lattice()),
        ("2 odd-dimensional tail exponents", odd_tails(&mut runs)),
        ("3 even-dimensional decay", even_decay(&mut runs)),
        ("4 exponent-resonance identification", identification(&runs)),
        ("5 radial-point linearization", radial_points()),
        ("6 non-trapping", nontrapping()),
        ("7 mellin pole roundtrip", mellin_roundtrip()),
        ("8 oracle equivalence", oracles()),
        ("9 chart consistency", charts()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("INFO {}", conformal_info());
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
