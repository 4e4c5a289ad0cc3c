use scatwave::geometry::minkowski_metric;
use scatwave::wave::*;
use std::f64::consts::PI;

pub fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 - x * x).powi(6)
    } else {
        0.0
    }
}

/// Default source: centre t = 4, r = 2, unit half-widths.
pub fn f(t: f64, r: f64) -> f64 {
    bump(t - 4.0) * bump(r - 2.0)
}

/// Composite Gauss-Legendre on `[a, b]`.
pub fn gl(a: f64, b: f64, panels: usize, g: impl Fn(f64) -> f64) -> f64 {
    const X: [f64; 4] = [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
    const W: [f64; 4] = [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut s = 0.0;
    for k in 0..panels {
        let c = a + (k as f64 + 0.5) * h;
        for i in 0..4 {
            s += W[i] * g(c + 0.5 * h * X[i]);
        }
    }
    0.5 * h * s
}

/// n = 4, ell = 0: `psi = r u` solves the 1+1 wave equation with odd source
/// `r f(t, |r|)`, so d'Alembert's formula applies.
pub fn dalembert_oracle(t: f64, r: f64) -> f64 {
    gl(3.0, t.min(5.0), 64, |tp| {
        let tau = t - tp;
        let (a, b) = (r - tau, r + tau);
        let pos = gl(a.max(1.0), b.min(3.0), 64, |rp| rp * f(tp, rp));
        let neg = gl(a.max(-3.0), b.min(-1.0), 64, |rp| rp * f(tp, -rp));
        0.5 * (pos + neg)
    })
}

/// n = 3: `u = (1/2 pi) int f / sqrt(tau^2 - |x - x'|^2)`; with
/// `|x - x'| = tau sin(beta)` the kernel becomes `tau sin(beta) dbeta dalpha`.
pub fn convolution_oracle(t: f64, r: f64) -> f64 {
    let na = 256;
    let u = gl(3.0, t.min(5.0), 24, |tp| {
        let tau = t - tp;
        gl(0.0, PI / 2.0, 96, |beta| {
            let d = tau * beta.sin();
            let mut acc = 0.0;
            for k in 0..na {
                let al = 2.0 * PI * k as f64 / na as f64;
                let rp = (r * r + d * d + 2.0 * r * d * al.cos()).sqrt();
                acc += f(tp, rp);
            }
            acc * 2.0 * PI / na as f64 * tau * beta.sin()
        })
    });
    r.sqrt() * u / (2.0 * PI)
}

pub fn small_problem(n: usize, h: f64) -> ModeProblem {
    let src = SourceSpec::default();
    let mut g = GridSpec::for_source(&src, h);
    g.q_fine = 20.0;
    g.q_max = 20.0;
    g.p_max = 20.0;
    let spec = minkowski_metric(n).unwrap();
    let mut p = assemble_mode_problem(&spec, 0, src, g).unwrap();
    p.store_full = true;
    p
}

pub fn nearest(x: &[f64], v: f64) -> usize {
    let k = x.partition_point(|&y| y < v);
    if k == 0 {
        0
    } else if k == x.len() || (x[k - 1] - v).abs() < (x[k] - v).abs() {
        k - 1
    } else {
        k
    }
}

pub fn field_at(w: &WaveField, t: f64, r: f64) -> f64 {
    let i = nearest(&w.p, t + r);
    let j = nearest(&w.q, t - r);
    assert!((w.p[i] - (t + r)).abs() < 1e-9 && (w.q[j] - (t - r)).abs() < 1e-9);
    w.value(i, j).unwrap()
}

// (t, r) with t +- r on every grid used below
pub const POINTS: [(f64, f64); 4] = [(5.5, 2.0), (6.5, 5.0), (9.5, 6.0), (11.5, 2.0)];

// coarse enough that the errors stay above roundoff
pub const ORDER_STEPS: [f64; 3] = [0.4, 0.2, 0.1];

/// Max relative error against the d'Alembert oracle at each of `ORDER_STEPS`.
pub fn dalembert_errors() -> Vec<f64> {
    let exact: Vec<f64> = POINTS.iter().map(|&(t, r)| dalembert_oracle(t, r)).collect();
    let scale = exact.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(scale > 1e-3);
    ORDER_STEPS
        .iter()
        .map(|&h| {
            let w = evolve_characteristic(&small_problem(4, h)).unwrap();
            let e = POINTS
                .iter()
                .zip(&exact)
                .map(|(&(t, r), ex)| (field_at(&w, t, r) - ex).abs())
                .fold(0.0f64, f64::max);
            e / scale
        })
        .collect()
}

/// Least-squares slope of `log e` against `log h`.
pub fn observed_order(h: &[f64], e: &[f64]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
