//! Mellin transforms in `rho`, pole terms, and tail-expansion fits.
//!
//! With `t = -log rho`, `M u(sigma) = int rho^{-i sigma - 1} u drho
//! = int e^{i sigma t} u(e^{-t}) dt`. For `u = rho^{i sigma0}` on `(0, 1]`
//! the integral converges for `Im sigma > Im sigma0` and equals
//! `1/(i (sigma0 - sigma))`.

use crate::error::{Error, Result};
use crate::linalg::{lstsq, lstsq_c, monic_roots};
use crate::resonance::ResonanceSet;
use crate::wave::RadiationField;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const PLANCHEREL_TOL: f64 = 1e-4;

/// End corrections of an O(h^4) composite rule.
const END_WEIGHTS: [f64; 3] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];

fn quadrature_weights(m: usize) -> Vec<f64> {
    let mut w = vec![1.0; m];
    if m >= 6 {
        for k in 0..3 {
            w[k] = END_WEIGHTS[k];
            w[m - 1 - k] = END_WEIGHTS[k];
        }
    } else if m >= 2 {
        w[0] = 0.5;
        w[m - 1] = 0.5;
    }
    w
}

/// Samples `u(rho_k)` with `rho_k = exp(-(t0 + k dt))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogGridSamples {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<Complex64>,
}

impl LogGridSamples {
    pub fn from_fn(t0: f64, dt: f64, m: usize, u: impl Fn(f64) -> Complex64) -> Self {
        LogGridSamples {
            t0,
            dt,
            values: (0..m).map(|k| u((-(t0 + k as f64 * dt)).exp())).collect(),
        }
    }

    pub fn rho(&self, k: usize) -> f64 {
        (-(self.t0 + k as f64 * self.dt)).exp()
    }
}

/// `M u` along the line `Im sigma = im_sigma`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MellinData {
    pub im_sigma: f64,
    /// Sample abscissae `Re sigma`, ascending.
    pub re_sigma: Vec<f64>,
    pub values: Vec<Complex64>,
    pub t0: f64,
    pub dt: f64,
    pub samples: usize,
    /// Difference between the O(h^4) and trapezoidal transforms.
    pub error_estimate: f64,
    /// Relative mismatch in the discrete Plancherel identity for the
    /// weighted samples; checks the transform normalisation.
    pub plancherel_error: f64,
}

impl MellinData {
    pub fn plancherel_ok(&self) -> bool {
        self.plancherel_error < PLANCHEREL_TOL
    }

    pub fn sigma(&self, k: usize) -> Complex64 {
        Complex64::new(self.re_sigma[k], self.im_sigma)
    }

    /// Samples with `|Re sigma| <= re_max`.
    pub fn window(&self, re_max: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let mut s = Vec::new();
        let mut v = Vec::new();
        for k in 0..self.re_sigma.len() {
            if self.re_sigma[k].abs() <= re_max {
                s.push(self.sigma(k));
                v.push(self.values[k]);
            }
        }
        (s, v)
    }

    /// Value at `sigma` on the line by direct quadrature (not FFT).
    pub fn direct(samples: &LogGridSamples, sigma: Complex64) -> Complex64 {
        let m = samples.values.len();
        let w = quadrature_weights(m);
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..m {
            let t = samples.t0 + k as f64 * samples.dt;
            acc += (Complex64::i() * sigma * t).exp() * samples.values[k] * w[k];
        }
        acc * samples.dt
    }
}

pub fn mellin_transform(samples: &LogGridSamples, im_sigma: f64) -> Result<MellinData> {
    let m = samples.values.len();
    if m < 8 || !(samples.dt > 0.0) {
        return Err(Error::Precondition(format!(
            "need at least 8 log-uniform samples with dt > 0 (got {m}, dt = {})",
            samples.dt
        )));
    }
    let dt = samples.dt;
    let g: Vec<Complex64> = (0..m)
        .map(|k| {
            let t = samples.t0 + k as f64 * dt;
            samples.values[k] * (-im_sigma * t).exp()
        })
        .collect();
    let peak = g.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(MellinData {
            im_sigma,
            re_sigma: fft_frequencies(m, dt),
            values: vec![Complex64::new(0.0, 0.0); m],
            t0: samples.t0,
            dt,
            samples: m,
            error_estimate: 0.0,
            plancherel_error: 0.0,
        });
    }
    if !peak.is_finite() {
        return Err(Error::WeightViolation(format!(
            "weighted samples overflow on the line Im sigma = {im_sigma}"
        )));
    }
    let tail = g[m - (m / 20).max(2)..]
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    if tail > 1e-8 * peak {
        return Err(Error::WeightViolation(format!(
            "integrand does not decay on Im sigma = {im_sigma}: tail/peak = {:.3e}",
            tail / peak
        )));
    }
    let w = quadrature_weights(m);
    let fwd = |weights: &[f64]| -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = g.iter().zip(weights).map(|(z, w)| z * w).collect();
        let mut planner = FftPlanner::new();
        // sum_k x_k e^{+2 pi i jk/m}
        planner.plan_fft_inverse(m).process(&mut buf);
        buf
    };
    let raw4 = fwd(&w);
    let mut wt = vec![1.0; m];
    wt[0] = 0.5;
    wt[m - 1] = 0.5;
    let raw2 = fwd(&wt);
    let freqs_unsorted: Vec<f64> = (0..m)
        .map(|j| {
            let jj = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
            2.0 * PI * jj / (m as f64 * dt)
        })
        .collect();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| freqs_unsorted[a].partial_cmp(&freqs_unsorted[b]).unwrap());
    let mut re_sigma = Vec::with_capacity(m);
    let mut values = Vec::with_capacity(m);
    let mut err: f64 = 0.0;
    for &j in &idx {
        let nu = freqs_unsorted[j];
        let phase = (Complex64::i() * nu * samples.t0).exp() * dt;
        let v4 = raw4[j] * phase;
        let v2 = raw2[j] * phase;
        err = err.max((v4 - v2).norm());
        re_sigma.push(nu);
        values.push(v4);
    }
    let dnu = 2.0 * PI / (m as f64 * dt);
    let lhs: f64 = values.iter().map(|z| z.norm_sqr()).sum::<f64>() * dnu;
    let rhs: f64 = 2.0 * PI * dt * g.iter().zip(&w).map(|(z, w)| z.norm_sqr() * w * w).sum::<f64>();
    Ok(MellinData {
        im_sigma,
        re_sigma,
        values,
        t0: samples.t0,
        dt,
        samples: m,
        error_estimate: err,
        plancherel_error: (lhs - rhs).abs() / rhs,
    })
}

fn fft_frequencies(m: usize, dt: f64) -> Vec<f64> {
    let mut f: Vec<f64> = (0..m)
        .map(|j| {
            let jj = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
            2.0 * PI * jj / (m as f64 * dt)
        })
        .collect();
    f.sort_by(|a, b| a.partial_cmp(b).unwrap());
    f
}

/// `i^m / (m-1)! rho^{i sigma0} (log rho)^{m-1}`; its transform over
/// `(0, 1]` is `-(sigma - sigma0)^{-m}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoleTerm {
    pub sigma0: Complex64,
    pub order: usize,
}

impl PoleTerm {
    pub fn coefficient(&self) -> Complex64 {
        let mut f = 1.0;
        for k in 1..self.order {
            f *= k as f64;
        }
        Complex64::i().powu(self.order as u32) / f
    }

    pub fn eval(&self, rho: f64) -> Complex64 {
        let l = rho.ln();
        let pow = (Complex64::i() * self.sigma0 * l).exp();
        self.coefficient() * pow * l.powi(self.order as i32 - 1)
    }

    pub fn describe(&self) -> String {
        let c = self.coefficient();
        format!(
            "({:+.6}{:+.6}i) rho^(i({:.6}{:+.6}i)) (log rho)^{}",
            c.re,
            c.im,
            self.sigma0.re,
            self.sigma0.im,
            self.order - 1
        )
    }
}

pub fn inverse_mellin_pole(sigma0: Complex64, order: i64) -> Result<PoleTerm> {
    if order < 1 {
        return Err(Error::InvalidOrder(order));
    }
    Ok(PoleTerm {
        sigma0,
        order: order as usize,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecoveredPole {
    pub sigma: Complex64,
    pub order: usize,
    /// Amplitudes of `PoleTerm { sigma, order: 1..=order }`.
    pub amplitudes: Vec<Complex64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoleFit {
    pub poles: Vec<RecoveredPole>,
    pub residual: f64,
}

fn rational_fit(s: &[Complex64], v: &[Complex64], d: usize, c: Complex64, sc: f64) -> Result<(Vec<Complex64>, f64)> {
    // v (z^d + q_{d-1} z^{d-1} + ..) = p_0 + .. + p_{d-1} z^{d-1}
    let m = s.len();
    let z: Vec<Complex64> = s.iter().map(|x| (x - c) / sc).collect();
    let mut a = DMatrix::<Complex64>::zeros(m, 2 * d);
    let mut b = DVector::<Complex64>::zeros(m);
    for i in 0..m {
        for j in 0..d {
            a[(i, j)] = z[i].powu(j as u32);
            a[(i, d + j)] = -v[i] * z[i].powu(j as u32);
        }
        b[i] = v[i] * z[i].powu(d as u32);
    }
    let x = lstsq_c(&a, &b)?;
    let q: Vec<Complex64> = (0..d).map(|j| x[d + j]).collect();
    let roots = monic_roots(&q)?;
    let res = (&a * &x - &b).norm() / b.norm().max(1e-300);
    Ok((roots.into_iter().map(|r| r * sc + c).collect(), res))
}

fn amplitude_fit(s: &[Complex64], v: &[Complex64], poles: &[(Complex64, usize)]) -> Result<(Vec<Vec<Complex64>>, f64)> {
    let cols: usize = poles.iter().map(|p| p.1).sum();
    let m = s.len();
    let mut a = DMatrix::<Complex64>::zeros(m, cols);
    for i in 0..m {
        let mut c = 0;
        for &(p, ord) in poles {
            for k in 1..=ord {
                a[(i, c)] = -(s[i] - p).powi(-(k as i32));
                c += 1;
            }
        }
    }
    let b = DVector::from_column_slice(v);
    let x = lstsq_c(&a, &b)?;
    let res = (&a * &x - &b).norm() / b.norm().max(1e-300);
    let mut out = Vec::new();
    let mut c = 0;
    for &(_, ord) in poles {
        out.push((0..ord).map(|k| x[c + k]).collect());
        c += ord;
    }
    Ok((out, res))
}

fn polish(
    s: &[Complex64],
    v: &[Complex64],
    locs: &mut Vec<(Complex64, usize)>,
    amps: &mut Vec<Vec<Complex64>>,
    residual: &mut f64,
) -> Result<()> {
    // descent on pole locations with amplitudes eliminated
    for _ in 0..30 {
        let mut improved = false;
        for i in 0..locs.len() {
            let h = 1e-7;
            let base = *residual;
            let mut grad = [0.0; 2];
            for (di, d) in [Complex64::new(h, 0.0), Complex64::new(0.0, h)].iter().enumerate() {
                let mut t = locs.clone();
                t[i].0 += d;
                grad[di] = (amplitude_fit(s, v, &t)?.1 - base) / h;
            }
            let g = Complex64::new(grad[0], grad[1]);
            if g.norm() == 0.0 {
                continue;
            }
            let mut step = (base / g.norm()).min(0.1);
            while step > 1e-14 {
                let mut t = locs.clone();
                t[i].0 -= g / g.norm() * step;
                let (a2, r2) = amplitude_fit(s, v, &t)?;
                if r2 < *residual {
                    *locs = t;
                    *amps = a2;
                    *residual = r2;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(())
}

/// Recovers poles of `M u` below the line by a linearised rational fit,
/// choosing the smallest degree whose residual is below `tol`.
pub fn fit_poles(data: &MellinData, re_max: f64, max_poles: usize, tol: f64) -> Result<PoleFit> {
    let (s, v) = data.window(re_max);
    if s.len() < 4 * max_poles + 4 {
        return Err(Error::Fit(format!(
            "only {} line samples in |Re sigma| <= {re_max}",
            s.len()
        )));
    }
    if v.iter().all(|z| z.norm() == 0.0) {
        return Ok(PoleFit {
            poles: Vec::new(),
            residual: 0.0,
        });
    }
    let c = Complex64::new(0.0, data.im_sigma);
    let sc = re_max.max(1.0);
    let mut best: Option<(Vec<Complex64>, f64)> = None;
    for d in 1..=max_poles {
        let (roots, res) = rational_fit(&s, &v, d, c, sc)?;
        let better = best.as_ref().map(|b| res < b.1).unwrap_or(true);
        if better {
            best = Some((roots, res));
        }
        if res < tol {
            break;
        }
    }
    let (roots, _) = best.expect("max_poles >= 1");
    // M u is analytic above the line
    let roots: Vec<Complex64> = roots
        .into_iter()
        .filter(|r| r.im < data.im_sigma - 1e-6 && r.re.abs() <= re_max)
        .collect();
    if roots.is_empty() {
        return Err(Error::Fit("no poles below the sampling line".into()));
    }
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    for r in roots {
        if let Some(cl) = clusters.iter_mut().find(|c| (c.0 - r).norm() < 1e-3) {
            cl.0 = (cl.0 * cl.1 as f64 + r) / (cl.1 as f64 + 1.0);
            cl.1 += 1;
        } else {
            clusters.push((r, 1));
        }
    }
    let (mut amps, mut residual) = amplitude_fit(&s, &v, &clusters)?;
    // drop negligible terms
    loop {
        let scale = amps.iter().flatten().map(|a| a.norm()).fold(0.0, f64::max);
        let weak = amps
            .iter()
            .position(|a| a.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-5 * scale);
        match weak {
            Some(i) if clusters.len() > 1 => {
                clusters.remove(i);
                let (a, r) = amplitude_fit(&s, &v, &clusters)?;
                amps = a;
                residual = r;
            }
            _ => break,
        }
    }
    let mut locs = clusters;
    polish(&s, &v, &mut locs, &mut amps, &mut residual)?;
    // a split higher-order pole shows up as a close pair with large,
    // nearly cancelling amplitudes
    loop {
        let mut best_merge: Option<(Vec<(Complex64, usize)>, Vec<Vec<Complex64>>, f64)> = None;
        for i in 0..locs.len() {
            for j in i + 1..locs.len() {
                if (locs[i].0 - locs[j].0).norm() > 0.25 {
                    continue;
                }
                let mut t = locs.clone();
                let (pj, oj) = t.remove(j);
                let (pi, oi) = t[i];
                t[i] = ((pi * oi as f64 + pj * oj as f64) / (oi + oj) as f64, oi + oj);
                let (mut a, mut r) = amplitude_fit(&s, &v, &t)?;
                polish(&s, &v, &mut t, &mut a, &mut r)?;
                if r <= (10.0 * residual).max(tol)
                    && best_merge.as_ref().map(|b| r < b.2).unwrap_or(true)
                {
                    best_merge = Some((t, a, r));
                }
            }
        }
        match best_merge {
            Some((t, a, r)) => {
                locs = t;
                amps = a;
                residual = r;
            }
            None => break,
        }
    }
    let mut poles: Vec<RecoveredPole> = locs
        .into_iter()
        .zip(amps)
        .map(|((p, ord), a)| RecoveredPole {
            sigma: p,
            order: ord,
            amplitudes: a,
        })
        .collect();
    poles.sort_by(|a, b| b.sigma.im.partial_cmp(&a.sigma.im).unwrap());
    Ok(PoleFit { poles, residual })
}

/// Nodes from `s_min` to `s_max` inclusive with ratio at most `ratio`.
pub fn geometric_nodes(s_min: f64, s_max: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(s_min > 0.0 && s_max > s_min && ratio > 1.0) {
        return Err(Error::Precondition(format!(
            "bad geometric grid [{s_min}, {s_max}] with ratio {ratio}"
        )));
    }
    let steps = ((s_max / s_min).ln() / ratio.ln() - 1e-9).ceil().max(1.0) as usize;
    let l0 = s_min.ln();
    let dl = (s_max.ln() - l0) / steps as f64;
    let mut s: Vec<f64> = (0..=steps).map(|k| (l0 + k as f64 * dl).exp()).collect();
    s[0] = s_min;
    s[steps] = s_max;
    Ok(s)
}

/// Geometric samples of a real tail `F(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailSamples {
    pub s: Vec<f64>,
    pub values: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl TailSamples {
    pub fn new(s: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if s.len() != values.len() {
            return Err(Error::Precondition("abscissae and values differ in length".into()));
        }
        if s.first().map(|x| *x <= 0.0).unwrap_or(true) || s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Precondition(
                "tail abscissae must be positive and strictly increasing".into(),
            ));
        }
        Ok(TailSamples {
            s,
            values,
            weights: None,
        })
    }

    pub fn geometric(s_min: f64, s_max: f64, ratio: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let s = geometric_nodes(s_min, s_max, ratio)?;
        let v = s.iter().map(|&x| f(x)).collect();
        Self::new(s, v)
    }

    /// Samples a radiation field on a geometric grid (ratio 1.05 by default).
    pub fn from_radiation(rf: &RadiationField, s_min: f64, s_max: f64, ratio: f64) -> Result<Self> {
        let s = geometric_nodes(s_min, s_max, ratio)?;
        let mut v = Vec::with_capacity(s.len());
        for &x in &s {
            v.push(rf.sample(x).ok_or_else(|| {
                Error::Precondition(format!("s = {x} outside the radiation field grid"))
            })?);
        }
        Self::new(s, v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailTerm {
    /// `sigma = -i (p - 1)`; the term is `amp s^{-i sigma - 1} (log s)^kappa`.
    pub sigma: Complex64,
    pub p: f64,
    pub kappa: usize,
    pub amp: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub terms: Vec<TailTerm>,
    pub window: (f64, f64),
    /// Weighted relative rms residual.
    pub residual: f64,
    /// Local slopes `p(s) = -d log|F| / d log s`.
    pub local_slopes: Vec<(f64, f64)>,
    /// Richardson-extrapolated local slope.
    pub slope_limit: f64,
    pub below_noise: bool,
}

impl ExpansionFit {
    /// Distinct exponents, slowest decay first.
    pub fn exponents(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for t in &self.terms {
            if !out.iter().any(|p| (p - t.p).abs() < 1e-9) {
                out.push(t.p);
            }
        }
        out
    }

    pub fn leading_exponent(&self) -> Option<f64> {
        self.terms.first().map(|t| t.p)
    }

    pub fn max_kappa(&self, p: f64) -> Option<usize> {
        self.terms
            .iter()
            .filter(|t| (t.p - p).abs() < 1e-9)
            .map(|t| t.kappa)
            .max()
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amp * s.powf(-t.p) * s.ln().powi(t.kappa as i32))
            .sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "terms": self.terms.iter().map(|t| serde_json::json!({
                "re_sigma": t.sigma.re,
                "im_sigma": t.sigma.im,
                "p": t.p,
                "kappa": t.kappa,
                "amp": t.amp,
            })).collect::<Vec<_>>(),
            "window": [self.window.0, self.window.1],
            "residual": self.residual,
            "slope_limit": self.slope_limit,
            "below_noise": self.below_noise,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailFitOptions {
    pub max_terms: usize,
    pub allow_logs: bool,
    pub max_kappa: usize,
    /// Peak `|F|` below this is reported as no algebraic tail.
    pub noise_floor: f64,
    /// The window ends at the first sample with `|F|` below this.
    pub trim_level: f64,
    /// Required residual drop to accept an extra term or log power.
    pub improvement: f64,
    /// Residuals below this are treated as exact.
    pub residual_floor: f64,
}

impl Default for TailFitOptions {
    fn default() -> Self {
        TailFitOptions {
            max_terms: 1,
            allow_logs: true,
            max_kappa: 2,
            noise_floor: 1e-12,
            trim_level: 1e-14,
            improvement: 10.0,
            residual_floor: 1e-11,
        }
    }
}

struct Problem<'a> {
    ls: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
    s: &'a [f64],
}

impl Problem<'_> {
    fn design(&self, ps: &[f64], kappas: &[usize]) -> DMatrix<f64> {
        let cols: usize = kappas.iter().map(|k| k + 1).sum();
        let m = self.y.len();
        let mut a = DMatrix::zeros(m, cols);
        for i in 0..m {
            let mut c = 0;
            for (j, &p) in ps.iter().enumerate() {
                let base = (-p * self.ls[i]).exp() * self.w[i];
                for k in 0..=kappas[j] {
                    a[(i, c)] = base * self.ls[i].powi(k as i32);
                    c += 1;
                }
            }
        }
        a
    }

    fn solve(&self, ps: &[f64], kappas: &[usize]) -> Option<(DVector<f64>, f64)> {
        let a = self.design(ps, kappas);
        let b = DVector::from_iterator(self.y.len(), self.y.iter().zip(&self.w).map(|(y, w)| y * w));
        let x = lstsq(&a, &b).ok()?;
        let r = (&a * &x - &b).norm() / b.norm().max(1e-300);
        Some((x, r))
    }

    fn residual(&self, ps: &[f64], kappas: &[usize]) -> f64 {
        self.solve(ps, kappas).map(|r| r.1).unwrap_or(f64::INFINITY)
    }
}

/// Golden-section minimisation of `f` on `[a, b]`.
fn golden(mut a: f64, mut b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 * (1.0 + a.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Minimises the residual over `[lo, hi]` by a coarse scan then golden section.
fn scan_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = 60;
    let mut best = (lo, f64::INFINITY);
    for k in 0..=n {
        let x = lo + (hi - lo) * k as f64 / n as f64;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    let h = (hi - lo) / n as f64;
    golden((best.0 - h).max(lo), (best.0 + h).min(hi), f)
}

/// Coordinate-wise refinement of all exponents.
fn refine(prob: &Problem, ps: &mut [f64], kappas: &[usize]) {
    for _ in 0..40 {
        let old = ps.to_vec();
        for j in 0..ps.len() {
            let lo = if j == 0 { ps[j] - 0.5 } else { ps[j - 1] + 1e-3 };
            let hi = if j + 1 < ps.len() { ps[j + 1] - 1e-3 } else { ps[j] + 0.5 };
            let mut t = ps.to_vec();
            let x = golden(lo.max(ps[j] - 0.5), hi.min(ps[j] + 0.5), |x| {
                t[j] = x;
                prob.residual(&t, kappas)
            });
            ps[j] = x;
        }
        let ch = ps.iter().zip(&old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if ch < 1e-12 {
            break;
        }
    }
}

/// Staged fit of `F(s) ~ sum a s^{-p} (log s)^kappa`.
pub fn fit_tail(samples: &TailSamples, opts: &TailFitOptions) -> Result<ExpansionFit> {
    let s = &samples.s;
    let y = &samples.values;
    let m = s.len();
    if m < 30 || s[m - 1] / s[0] < 100.0 * (1.0 - 1e-9) {
        return Err(Error::Precondition(format!(
            "need >= 30 samples over >= 2 decades (got {m} over {:.3} decades)",
            if m > 0 { (s[m - 1] / s[0]).log10() } else { 0.0 }
        )));
    }
    let peak = samples.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak < opts.noise_floor {
        return Ok(ExpansionFit {
            terms: Vec::new(),
            window: (s[0], s[m - 1]),
            residual: 0.0,
            local_slopes: Vec::new(),
            slope_limit: f64::NAN,
            below_noise: true,
        });
    }
    let keep = y.iter().position(|v| v.abs() < opts.trim_level).unwrap_or(m);
    if keep < m && (keep < 20 || s[keep - 1] / s[0] < 10.0) {
        return Err(Error::Fit(format!(
            "tail reaches the trim level {:.1e} at s = {:.3e}, less than a decade into the window",
            opts.trim_level, s[keep]
        )));
    }
    let s = &s[..keep];
    let y = &y[..keep];
    let m = keep;
    let window = (s[0], s[m - 1]);
    let ls: Vec<f64> = s.iter().map(|x| x.ln()).collect();
    // local slopes on |F|
    let mut slopes = Vec::new();
    for i in 0..m - 1 {
        if y[i] != 0.0 && y[i + 1] != 0.0 && y[i] * y[i + 1] > 0.0 {
            let p = -(y[i + 1].abs() / y[i].abs()).ln() / (ls[i + 1] - ls[i]);
            slopes.push(((s[i] * s[i + 1]).sqrt(), p));
        }
    }
    if slopes.len() < 8 {
        return Err(Error::Fit("too few sign-consistent samples for local slopes".into()));
    }
    // Richardson: p(s) = p + c/s fitted on the last third
    let k0 = 2 * slopes.len() / 3;
    let tail = &slopes[k0..];
    let a = DMatrix::from_fn(tail.len(), 2, |i, j| if j == 0 { 1.0 } else { 1.0 / tail[i].0 });
    let b = DVector::from_iterator(tail.len(), tail.iter().map(|t| t.1));
    let coef = lstsq(&a, &b)?;
    let slope_limit = coef[0];
    let spread = tail.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max)
        - tail.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let flips = y.windows(2).skip(m / 3).filter(|w| w[0] * w[1] < 0.0).count();
    if flips > 2 || !slope_limit.is_finite() || spread > 2.0 {
        return Err(Error::Fit(format!(
            "local slope does not settle (spread {spread:.3}, sign changes {flips})"
        )));
    }
    let w: Vec<f64> = ls.iter().map(|l| (slope_limit * l).exp()).collect();
    let prob = Problem {
        ls,
        y: y.to_vec(),
        w,
        s,
    };
    let _ = prob.s;
    // leading term with kappa selection
    let mut ps = vec![scan_min(slope_limit - 0.5, slope_limit + 0.5, |p| prob.residual(&[p], &[0]))];
    let mut kappas = vec![0usize];
    let mut res = prob.residual(&ps, &kappas);
    if opts.allow_logs {
        for k in 1..=opts.max_kappa {
            let mut trial = ps.clone();
            let kk = vec![k];
            trial[0] = scan_min(ps[0] - 0.5, ps[0] + 0.5, |p| prob.residual(&[p], &kk));
            let r = prob.residual(&trial, &kk);
            if res > opts.residual_floor && r * opts.improvement <= res {
                ps = trial;
                kappas = kk;
                res = r;
            } else {
                break;
            }
        }
    }
    // peel further terms
    while ps.len() < opts.max_terms && res > opts.residual_floor {
        let last = *ps.last().unwrap();
        let mut kk = kappas.clone();
        kk.push(0);
        let x = scan_min(last + 0.05, last + 3.0, |p| {
            let mut t = ps.clone();
            t.push(p);
            prob.residual(&t, &kk)
        });
        let mut t = ps.clone();
        t.push(x);
        refine(&prob, &mut t, &kk);
        let r = prob.residual(&t, &kk);
        if r * opts.improvement <= res {
            ps = t;
            kappas = kk;
            res = r;
        } else {
            break;
        }
    }
    if ps.len() > 1 {
        refine(&prob, &mut ps, &kappas);
    }
    let (x, res) = prob
        .solve(&ps, &kappas)
        .ok_or_else(|| Error::Fit("amplitude least squares failed".into()))?;
    let mut terms = Vec::new();
    let mut c = 0;
    for (j, &p) in ps.iter().enumerate() {
        for k in 0..=kappas[j] {
            terms.push(TailTerm {
                sigma: Complex64::new(0.0, -(p - 1.0)),
                p,
                kappa: k,
                amp: x[c],
            });
            c += 1;
        }
    }
    Ok(ExpansionFit {
        terms,
        window,
        residual: res,
        local_slopes: slopes,
        slope_limit,
        below_noise: false,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchPair {
    pub p: f64,
    pub resonance: Complex64,
    pub predicted_p: f64,
    pub distance: f64,
    /// Matched a pole supported at the light cone rather than a cap resonance.
    pub light_cone: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchPair>,
    pub unmatched: Vec<f64>,
    /// No fitted terms: nothing to match.
    pub vacuous: bool,
}

impl MatchReport {
    pub fn all_matched(&self) -> bool {
        self.unmatched.is_empty()
    }

    /// Every exponent matched a cap resonance.
    pub fn all_cap_matched(&self) -> bool {
        self.unmatched.is_empty() && self.pairs.iter().all(|p| !p.light_cone)
    }
}

/// Pairs each fitted exponent `p` with the pole minimising
/// `|p - (1 - Im sigma_j)| + |Re sigma_j|`; cap resonances are preferred,
/// light-cone poles are tried only when no resonance is within `tol`.
pub fn match_resonances(fit: &ExpansionFit, set: &ResonanceSet, tol: f64) -> MatchReport {
    let nearest = |p: f64, list: &[crate::resonance::Resonance]| {
        list.iter()
            .map(|r| {
                let pp = 1.0 - r.sigma.im;
                (r.sigma, pp, (p - pp).abs() + r.sigma.re.abs())
            })
            .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
            .filter(|b| b.2 <= tol)
    };
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    let exps = fit.exponents();
    for &p in &exps {
        let hit = nearest(p, &set.resonances)
            .map(|b| (b, false))
            .or_else(|| nearest(p, &set.extraneous).map(|b| (b, true)));
        match hit {
            Some(((sig, pp, d), lc)) => pairs.push(MatchPair {
                p,
                resonance: sig,
                predicted_p: pp,
                distance: d,
                light_cone: lc,
            }),
            None => unmatched.push(p),
        }
    }
    MatchReport {
        pairs,
        unmatched,
        vacuous: exps.is_empty(),
    }
}
