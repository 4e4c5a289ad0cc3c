//! Null bicharacteristics of the b-principal symbol.
//!
//! Covectors are written `xi drho/rho + gamma dv + eta dy`; the symbol is
//! `lambda = G^{ab} zeta_a zeta_b` with `G^{ab}` the dual frame metric and
//! `zeta = (xi, gamma, eta)`. The b-Hamilton field is
//!
//! ```text
//! rho' = rho d_xi lambda,  v' = d_gamma lambda,  y' = d_eta lambda,
//! xi' = -rho d_rho lambda, gamma' = -d_v lambda, eta' = -d_y lambda.
//! ```
//!
//! Trajectories are integrated in the `theta` chart (`v = cos 2 theta`), which
//! stays regular across the equator `v = -1`, with the field rescaled by
//! `1/|zeta|` and the fiber renormalised after each step.

use crate::error::{Error, Result};
use crate::geometry::{dual_metric_at, CollarPoint, ScatteringMetricSpec};
use crate::linalg::complex_eigenvalues;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

const FD_BASE: f64 = 1e-6;
const JAC_STEP: f64 = 1e-5;
const DRIFT_FAIL: f64 = 1e-4;
/// Rays with angular momentum turn before the axis; only radial ones get this close.
const AXIS_MARGIN: f64 = 1e-7;

/// Point of the b-cotangent bundle in the `v` chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BCotangentPoint {
    pub rho: f64,
    pub v: f64,
    pub y: Vec<f64>,
    pub xi: f64,
    pub gamma: f64,
    pub eta: Vec<f64>,
}

impl BCotangentPoint {
    pub fn base(&self) -> CollarPoint {
        CollarPoint::new(self.rho, self.v, self.y.clone())
    }

    pub fn fiber(&self) -> DVector<f64> {
        let mut z = DVector::zeros(2 + self.eta.len());
        z[0] = self.xi;
        z[1] = self.gamma;
        for (i, e) in self.eta.iter().enumerate() {
            z[2 + i] = *e;
        }
        z
    }

    pub fn fiber_norm(&self) -> f64 {
        self.fiber().norm()
    }

    /// Radial-set point over `S_+` with fiber `gamma` (sign selects the component).
    pub fn radial_point(n: usize, gamma: f64) -> Self {
        BCotangentPoint {
            rho: 0.0,
            v: 0.0,
            y: vec![0.0; n - 2],
            xi: 0.0,
            gamma,
            eta: vec![0.0; n - 2],
        }
    }
}

fn quad_form(g: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    (z.transpose() * g * z)[(0, 0)]
}

pub fn b_symbol(spec: &ScatteringMetricSpec, pt: &BCotangentPoint) -> Result<f64> {
    let d = dual_metric_at(spec, &pt.base())?;
    Ok(quad_form(&d.ginv, &pt.fiber()))
}

/// Tangent vector ordered `(rho, v, y.., xi, gamma, eta..)`.
pub fn hamilton_field(spec: &ScatteringMetricSpec, pt: &BCotangentPoint) -> Result<DVector<f64>> {
    let n = spec.n();
    let base = pt.base();
    let z = pt.fiber();
    let ginv = dual_metric_at(spec, &base)?.ginv;
    let dz = &ginv * &z * 2.0;
    let mut dx = DVector::zeros(n);
    for k in 0..n {
        let h = FD_BASE * coord(&base, k).abs().max(1.0);
        let gp = vframe_inverse(spec, &shift(&base, k, h))?;
        let gm = vframe_inverse(spec, &shift(&base, k, -h))?;
        dx[k] = (quad_form(&gp, &z) - quad_form(&gm, &z)) / (2.0 * h);
    }
    let mut out = DVector::zeros(2 * n);
    out[0] = pt.rho * dz[0];
    for k in 1..n {
        out[k] = dz[k];
    }
    out[n] = -pt.rho * dx[0];
    for k in 1..n {
        out[n + k] = -dx[k];
    }
    Ok(out)
}

fn vframe_inverse(spec: &ScatteringMetricSpec, pt: &CollarPoint) -> Result<DMatrix<f64>> {
    spec.frame(pt).try_inverse().ok_or(Error::DegenerateMetric {
        rho: pt.rho,
        v: pt.v,
        det: 0.0,
    })
}

fn coord(pt: &CollarPoint, k: usize) -> f64 {
    match k {
        0 => pt.rho,
        1 => pt.v,
        _ => pt.y[k - 2],
    }
}

fn shift(pt: &CollarPoint, k: usize, d: f64) -> CollarPoint {
    let mut q = pt.clone();
    match k {
        0 => q.rho += d,
        1 => q.v += d,
        _ => q.y[k - 2] += d,
    }
    q
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalClass {
    ReachedSPlus,
    ReachedSMinus,
    EscapedCollar,
    BudgetExhausted,
}

/// Sample in the `theta` chart; `v`-chart quantities are derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub param: f64,
    pub rho: f64,
    pub theta: f64,
    pub y: Vec<f64>,
    pub xi: f64,
    pub gamma_theta: f64,
    pub eta: Vec<f64>,
    /// `lambda / |zeta|^2`.
    pub lambda: f64,
    /// Rescaling factor `1/|zeta|` before renormalisation.
    pub nu: f64,
}

impl FlowSample {
    pub fn v(&self) -> f64 {
        (2.0 * self.theta).cos()
    }

    /// `gamma` in the `v` chart (infinite at the equator).
    pub fn gamma_v(&self) -> f64 {
        -self.gamma_theta / (2.0 * (2.0 * self.theta).sin())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowTrajectory {
    pub samples: Vec<FlowSample>,
    pub terminal: TerminalClass,
    pub max_drift: f64,
    pub chart_flips: usize,
    pub steps: usize,
}

impl FlowTrajectory {
    pub fn to_csv(&self) -> String {
        let m = self.samples.first().map(|s| s.y.len()).unwrap_or(0);
        let mut h = String::from("param,rho,theta,v");
        for i in 0..m {
            h.push_str(&format!(",y{i}"));
        }
        h.push_str(",xi,gamma_theta");
        for i in 0..m {
            h.push_str(&format!(",eta{i}"));
        }
        h.push_str(",lambda\n");
        for s in &self.samples {
            h.push_str(&format!("{:.10e},{:.10e},{:.10e},{:.10e}", s.param, s.rho, s.theta, s.v()));
            for y in &s.y {
                h.push_str(&format!(",{y:.10e}"));
            }
            h.push_str(&format!(",{:.10e},{:.10e}", s.xi, s.gamma_theta));
            for e in &s.eta {
                h.push_str(&format!(",{e:.10e}"));
            }
            h.push_str(&format!(",{:.3e}\n", s.lambda));
        }
        h
    }

    pub fn displacement(&self) -> f64 {
        let (Some(a), Some(b)) = (self.samples.first(), self.samples.last()) else {
            return 0.0;
        };
        let mut d = (a.rho - b.rho).powi(2) + (a.theta - b.theta).powi(2);
        for (p, q) in a.y.iter().zip(&b.y) {
            d += (p - q).powi(2);
        }
        d.sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowBudget {
    pub max_param: f64,
    pub max_steps: usize,
    pub rtol: f64,
    pub delta: f64,
    pub rho_escape: f64,
    /// Keep every `stride`-th accepted step.
    pub stride: usize,
}

impl Default for FlowBudget {
    fn default() -> Self {
        FlowBudget {
            max_param: 200.0,
            max_steps: 20_000,
            rtol: 1e-10,
            delta: 1e-3,
            rho_escape: 10.0,
            stride: 1,
        }
    }
}

/// State in the `theta` chart: `(rho, theta, y.., xi, gamma_theta, eta..)`.
struct ThetaFlow<'a> {
    spec: &'a ScatteringMetricSpec,
    n: usize,
    sign: f64,
}

impl ThetaFlow<'_> {
    fn ginv(&self, rho: f64, theta: f64, y: &[f64]) -> Option<DMatrix<f64>> {
        self.spec.frame_theta(rho, theta, y).try_inverse()
    }

    fn lambda(&self, x: &[f64]) -> Option<f64> {
        let n = self.n;
        let g = self.ginv(x[0], x[1], &x[2..n])?;
        let z = DVector::from_column_slice(&x[n..]);
        Some(quad_form(&g, &z))
    }

    /// `sign * H / |zeta|`.
    fn field(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = self.n;
        let z = DVector::from_column_slice(&x[n..]);
        let nz = z.norm();
        if nz == 0.0 || !nz.is_finite() {
            return None;
        }
        let g = self.ginv(x[0], x[1], &x[2..n])?;
        let dz = &g * &z * 2.0;
        let mut out = vec![0.0; 2 * n];
        let mut b = x[..n].to_vec();
        for k in 0..n {
            // angular coefficients vary on the scale sin(theta) near the axis
            let h = if k == 1 {
                FD_BASE * x[1].sin().abs().min(1.0)
            } else {
                FD_BASE * b[k].abs().max(1.0)
            };
            let c = b[k];
            b[k] = c + h;
            let gp = self.ginv(b[0], b[1], &b[2..n])?;
            b[k] = c - h;
            let gm = self.ginv(b[0], b[1], &b[2..n])?;
            b[k] = c;
            let d = (quad_form(&gp, &z) - quad_form(&gm, &z)) / (2.0 * h);
            out[n + k] = if k == 0 { -x[0] * d } else { -d };
        }
        out[0] = x[0] * dz[0];
        for k in 1..n {
            out[k] = dz[k];
        }
        let s = self.sign / nz;
        for o in out.iter_mut() {
            *o *= s;
        }
        Some(out)
    }
}

fn axpy(x: &[f64], h: f64, terms: &[(&[f64], f64)]) -> Vec<f64> {
    let mut out = x.to_vec();
    for (k, c) in terms {
        for i in 0..out.len() {
            out[i] += h * c * k[i];
        }
    }
    out
}

/// One Dormand–Prince 5(4) step: returns (new state, error estimate).
fn dopri_step(f: &ThetaFlow, x: &[f64], h: f64) -> Option<(Vec<f64>, f64)> {
    let k1 = f.field(x)?;
    let k2 = f.field(&axpy(x, h, &[(&k1, 1.0 / 5.0)]))?;
    let k3 = f.field(&axpy(x, h, &[(&k1, 3.0 / 40.0), (&k2, 9.0 / 40.0)]))?;
    let k4 = f.field(&axpy(x, h, &[(&k1, 44.0 / 45.0), (&k2, -56.0 / 15.0), (&k3, 32.0 / 9.0)]))?;
    let k5 = f.field(&axpy(
        x,
        h,
        &[
            (&k1, 19372.0 / 6561.0),
            (&k2, -25360.0 / 2187.0),
            (&k3, 64448.0 / 6561.0),
            (&k4, -212.0 / 729.0),
        ],
    ))?;
    let k6 = f.field(&axpy(
        x,
        h,
        &[
            (&k1, 9017.0 / 3168.0),
            (&k2, -355.0 / 33.0),
            (&k3, 46732.0 / 5247.0),
            (&k4, 49.0 / 176.0),
            (&k5, -5103.0 / 18656.0),
        ],
    ))?;
    let x5 = axpy(
        x,
        h,
        &[
            (&k1, 35.0 / 384.0),
            (&k3, 500.0 / 1113.0),
            (&k4, 125.0 / 192.0),
            (&k5, -2187.0 / 6784.0),
            (&k6, 11.0 / 84.0),
        ],
    );
    let k7 = f.field(&x5)?;
    let e = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let ks = [&k1, &k2, &k3, &k4, &k5, &k6, &k7];
    let mut err: f64 = 0.0;
    for i in 0..x.len() {
        let mut s = 0.0;
        for (j, k) in ks.iter().enumerate() {
            s += e[j] * k[i];
        }
        // rho is relative (it carries the approach to the boundary), the rest mixed
        let floor = if i == 0 { 1e-12 } else { 1.0 };
        err = err.max((h * s).abs() / (floor + x5[i].abs().max(x[i].abs())));
    }
    Some((x5, err))
}

/// Inversion chart change `y -> y/|y|^2`, `eta -> |y|^2 (I - 2 yhat yhat^T) eta`.
fn flip_chart(x: &mut [f64], n: usize) {
    let m = n - 2;
    let y: Vec<f64> = x[2..2 + m].to_vec();
    let r2: f64 = y.iter().map(|a| a * a).sum();
    if r2 == 0.0 {
        return;
    }
    let eta: Vec<f64> = x[n + 2..n + 2 + m].to_vec();
    let dot: f64 = y.iter().zip(&eta).map(|(a, b)| a * b).sum::<f64>() / r2;
    for i in 0..m {
        x[2 + i] = y[i] / r2;
        x[n + 2 + i] = r2 * (eta[i] - 2.0 * dot * y[i]);
    }
}

fn normalise_fiber(x: &mut [f64], n: usize) -> f64 {
    let nz = x[n..].iter().map(|a| a * a).sum::<f64>().sqrt();
    for a in x[n..].iter_mut() {
        *a /= nz;
    }
    nz
}

/// Distance to the radial set over `S_+`/`S_-` in `(v, xi/|gamma|, eta/|gamma|)`.
fn radial_distance(x: &[f64], n: usize) -> (f64, f64) {
    let theta = x[1];
    let v = (2.0 * theta).cos();
    let gv = (x[n + 1] / (2.0 * (2.0 * theta).sin())).abs();
    let mut d = v * v + (x[n] / gv).powi(2);
    for i in 0..n - 2 {
        d += (x[n + 2 + i] / gv).powi(2);
    }
    (d.sqrt(), theta)
}

fn sample(x: &[f64], n: usize, param: f64, lam: f64, nu: f64) -> FlowSample {
    FlowSample {
        param,
        rho: x[0],
        theta: x[1],
        y: x[2..n].to_vec(),
        xi: x[n],
        gamma_theta: x[n + 1],
        eta: x[n + 2..].to_vec(),
        lambda: lam,
        nu,
    }
}

/// Starting point in the `theta` chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaStart {
    pub rho: f64,
    pub theta: f64,
    pub y: Vec<f64>,
    pub xi: f64,
    pub gamma_theta: f64,
    pub eta: Vec<f64>,
}

impl ThetaStart {
    pub fn from_v_chart(p: &BCotangentPoint) -> Self {
        let theta = 0.5 * p.v.clamp(-1.0, 1.0).acos();
        ThetaStart {
            rho: p.rho,
            theta,
            y: p.y.clone(),
            xi: p.xi,
            gamma_theta: -2.0 * (2.0 * theta).sin() * p.gamma,
            eta: p.eta.clone(),
        }
    }

    fn state(&self) -> Vec<f64> {
        let mut x = vec![self.rho, self.theta];
        x.extend(&self.y);
        x.push(self.xi);
        x.push(self.gamma_theta);
        x.extend(&self.eta);
        x
    }
}

/// Integrates `+-nu H` (sign `direction`) until a radial set is reached.
pub fn integrate_bicharacteristic(
    spec: &ScatteringMetricSpec,
    start: &ThetaStart,
    direction: f64,
    budget: &FlowBudget,
) -> Result<FlowTrajectory> {
    let n = spec.n();
    let flow = ThetaFlow {
        spec,
        n,
        sign: direction.signum(),
    };
    let mut x = start.state();
    if x.len() != 2 * n {
        return Err(Error::OutOfRegion(format!(
            "start has {} coordinates, expected {}",
            x.len(),
            2 * n
        )));
    }
    let nz0 = normalise_fiber(&mut x, n);
    let lam0 = flow
        .lambda(&x)
        .ok_or_else(|| Error::DegenerateMetric { rho: x[0], v: x[1].cos(), det: 0.0 })?;
    if lam0.abs() > 1e-8 {
        return Err(Error::Precondition(format!(
            "start is not characteristic: lambda/|zeta|^2 = {lam0:.3e}"
        )));
    }
    let mut samples = vec![sample(&x, n, 0.0, lam0, 1.0 / nz0)];
    let mut t = 0.0;
    let mut h: f64 = 1e-2;
    let mut steps = 0;
    let mut flips = 0;
    let mut max_drift = lam0.abs();
    let terminal;
    // a start inside the radial neighbourhood has not "reached" it
    let inside = radial_distance(&x, n).0 < budget.delta;
    loop {
        let (d, theta) = radial_distance(&x, n);
        if d < budget.delta && !inside {
            terminal = if theta < FRAC_PI_2 {
                TerminalClass::ReachedSPlus
            } else {
                TerminalClass::ReachedSMinus
            };
            break;
        }
        if x[0] > budget.rho_escape || x[0] < -1e-12 || x[1] <= AXIS_MARGIN || x[1] >= PI - AXIS_MARGIN {
            terminal = TerminalClass::EscapedCollar;
            break;
        }
        if t >= budget.max_param || steps >= budget.max_steps {
            terminal = TerminalClass::BudgetExhausted;
            break;
        }
        let hh = h.min(budget.max_param - t).max(1e-14);
        let Some((mut xn, err)) = dopri_step(&flow, &x, hh) else {
            h *= 0.25;
            if h < 1e-12 {
                return Err(Error::Integrator(format!(
                    "field evaluation failed near rho = {}, theta = {}",
                    x[0], x[1]
                )));
            }
            continue;
        };
        let scaled = err / budget.rtol;
        if scaled > 1.0 {
            if hh <= 1e-14 {
                return Err(Error::Integrator(format!(
                    "step size underflow near rho = {}, theta = {}",
                    x[0], x[1]
                )));
            }
            h = hh * (0.9 * scaled.powf(-0.2)).max(0.1);
            continue;
        }
        if start.rho == 0.0 {
            xn[0] = 0.0;
        }
        let nz = normalise_fiber(&mut xn, n);
        let ysq: f64 = xn[2..n].iter().map(|a| a * a).sum();
        if ysq > 4.0 {
            flip_chart(&mut xn, n);
            normalise_fiber(&mut xn, n);
            flips += 1;
        }
        let lam = flow.lambda(&xn).unwrap_or(f64::NAN);
        let drift = (lam - lam0).abs();
        if !(drift <= DRIFT_FAIL) {
            return Err(Error::Integrator(format!(
                "lambda drift {drift:.3e} at parameter {t:.4}"
            )));
        }
        max_drift = max_drift.max(drift);
        x = xn;
        t += hh;
        steps += 1;
        if steps % budget.stride.max(1) == 0 {
            samples.push(sample(&x, n, t * direction.signum(), lam, 1.0 / nz));
        }
        h = hh * (0.9 * scaled.max(1e-10).powf(-0.2)).min(5.0);
    }
    let lam_end = flow.lambda(&x).unwrap_or(f64::NAN);
    samples.push(sample(&x, n, t * direction.signum(), lam_end, f64::NAN));
    Ok(FlowTrajectory {
        samples,
        terminal,
        max_drift,
        chart_flips: flips,
        steps,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialSpectrum {
    pub eigenvalues: Vec<Complex64>,
    pub jacobian: Vec<Vec<f64>>,
    /// Eigenvalue clusters `(mean, multiplicity)`, most negative first.
    pub clusters: Vec<(f64, usize)>,
}

impl RadialSpectrum {
    pub fn multiplicities(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.1).collect()
    }

    /// Cluster means divided by the middle cluster mean.
    pub fn ratios(&self) -> Vec<f64> {
        if self.clusters.len() < 2 {
            return Vec::new();
        }
        let m = self.clusters[1].0;
        self.clusters.iter().map(|c| c.0 / m).collect()
    }
}

/// Rescaled field in projective fiber coordinates
/// `(rho, v, y.., nu, xi_hat, eta_hat..)` with `nu = 1/gamma`.
fn projective_field(spec: &ScatteringMetricSpec, x: &[f64], sign: f64) -> Result<Vec<f64>> {
    let n = spec.n();
    let pt = CollarPoint::new(x[0], x[1], x[2..n].to_vec());
    let nu = x[n];
    let mut zh = DVector::zeros(n);
    zh[0] = x[n + 1];
    zh[1] = 1.0;
    for i in 0..n - 2 {
        zh[2 + i] = x[n + 2 + i];
    }
    let g = spec
        .frame(&pt)
        .try_inverse()
        .ok_or_else(|| Error::Chart(format!("degenerate frame at rho = {}, v = {}", x[0], x[1])))?;
    let dz = &g * &zh * 2.0;
    let mut dx = vec![0.0; n];
    for (k, d) in dx.iter_mut().enumerate() {
        let h = FD_BASE * coord(&pt, k).abs().max(1.0);
        let gp = vframe_inverse(spec, &shift(&pt, k, h)).map_err(|e| Error::Chart(e.to_string()))?;
        let gm = vframe_inverse(spec, &shift(&pt, k, -h)).map_err(|e| Error::Chart(e.to_string()))?;
        *d = (quad_form(&gp, &zh) - quad_form(&gm, &zh)) / (2.0 * h);
    }
    let dv = dx[1];
    let mut out = vec![0.0; 2 * n];
    out[0] = x[0] * dz[0];
    for k in 1..n {
        out[k] = dz[k];
    }
    out[n] = nu * dv;
    out[n + 1] = -x[0] * dx[0] + zh[0] * dv;
    for i in 0..n - 2 {
        out[n + 2 + i] = -dx[2 + i] + zh[2 + i] * dv;
    }
    // gamma < 0 reverses the rescaled field
    for o in out.iter_mut() {
        *o *= sign;
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Chart("non-finite projective field".into()));
    }
    Ok(out)
}

/// Jacobian spectrum of the rescaled field at a radial point.
pub fn radial_linearization(spec: &ScatteringMetricSpec, point: &BCotangentPoint) -> Result<RadialSpectrum> {
    let n = spec.n();
    let ghat = point.fiber_norm().max(1e-300);
    let tol = 1e-8;
    if point.rho.abs() > tol
        || point.v.abs() > tol
        || (point.xi / ghat).abs() > tol
        || point.eta.iter().any(|e| (e / ghat).abs() > tol)
        || point.gamma == 0.0
    {
        return Err(Error::Precondition(
            "radial linearization needs rho = v = 0, xi = eta = 0, gamma != 0".into(),
        ));
    }
    let sign = point.gamma.signum();
    let mut x0 = vec![0.0; 2 * n];
    for i in 0..n - 2 {
        x0[2 + i] = point.y[i];
    }
    let mut jac = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for j in 0..2 * n {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += JAC_STEP;
        xm[j] -= JAC_STEP;
        let fp = projective_field(spec, &xp, sign)?;
        let fm = projective_field(spec, &xm, sign)?;
        for i in 0..2 * n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * JAC_STEP);
        }
    }
    let cj = jac.map(|v| Complex64::new(v, 0.0));
    let mut eig = complex_eigenvalues(cj)?;
    eig.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(std::cmp::Ordering::Equal));
    let scale = eig.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for z in &eig {
        match clusters.last_mut() {
            Some((m, c)) if (z.re - *m).abs() < 0.1 * scale => {
                *m = (*m * *c as f64 + z.re) / (*c as f64 + 1.0);
                *c += 1;
            }
            _ => clusters.push((z.re, 1)),
        }
    }
    if sign < 0.0 {
        clusters.reverse();
    }
    Ok(RadialSpectrum {
        eigenvalues: eig,
        jacobian: (0..2 * n).map(|i| jac.row(i).iter().copied().collect()).collect(),
        clusters,
    })
}

/// Random characteristic start over `C_0` (`v < 0`); `None` if `lambda = 0`
/// has no real root for `gamma`.
pub fn sample_characteristic_start(
    spec: &ScatteringMetricSpec,
    rng: &mut ChaCha8Rng,
    rho_max: f64,
) -> Option<ThetaStart> {
    let n = spec.n();
    let rho = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..rho_max) };
    let theta = rng.gen_range(FRAC_PI_4 + 0.05..3.0 * FRAC_PI_4 - 0.05);
    let y: Vec<f64> = (0..n - 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let xi: f64 = rng.gen_range(-1.0..1.0);
    let eta: Vec<f64> = (0..n - 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let g = spec.frame_theta(rho, theta, &y).try_inverse()?;
    // lambda = a gamma^2 + b gamma + c
    let a = g[(1, 1)];
    let mut z = DVector::zeros(n);
    z[0] = xi;
    for i in 0..n - 2 {
        z[2 + i] = eta[i];
    }
    let mut b = 0.0;
    for j in 0..n {
        if j != 1 {
            b += 2.0 * g[(1, j)] * z[j];
        }
    }
    let c = quad_form(&g, &z);
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a.abs() < 1e-12 {
        return None;
    }
    let sgn = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let gamma = (-b + sgn * disc.sqrt()) / (2.0 * a);
    Some(ThetaStart {
        rho,
        theta,
        y,
        xi,
        gamma_theta: gamma,
        eta,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrappingFailure {
    pub start: ThetaStart,
    pub forward: Option<TerminalClass>,
    pub backward: Option<TerminalClass>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NontrappingReport {
    pub pass: bool,
    pub samples: usize,
    pub failures: Vec<TrappingFailure>,
    pub max_drift: f64,
    pub warning: Option<String>,
}

pub fn check_nontrapping(
    spec: &ScatteringMetricSpec,
    sample_count: usize,
    seed: u64,
    budget: &FlowBudget,
) -> Result<NontrappingReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut max_drift: f64 = 0.0;
    let mut done = 0;
    let mut attempts = 0;
    while done < sample_count {
        attempts += 1;
        if attempts > 100 * sample_count.max(1) {
            return Err(Error::Numeric("could not sample characteristic starts".into()));
        }
        let Some(start) = sample_characteristic_start(spec, &mut rng, 0.05) else {
            continue;
        };
        done += 1;
        let fwd = integrate_bicharacteristic(spec, &start, 1.0, budget);
        let bwd = integrate_bicharacteristic(spec, &start, -1.0, budget);
        let mut fail = TrappingFailure {
            start: start.clone(),
            forward: None,
            backward: None,
            error: None,
        };
        match (&fwd, &bwd) {
            (Ok(f), Ok(b)) => {
                max_drift = max_drift.max(f.max_drift).max(b.max_drift);
                fail.forward = Some(f.terminal);
                fail.backward = Some(b.terminal);
                let ok = matches!(
                    (f.terminal, b.terminal),
                    (TerminalClass::ReachedSPlus, TerminalClass::ReachedSMinus)
                        | (TerminalClass::ReachedSMinus, TerminalClass::ReachedSPlus)
                );
                if !ok {
                    failures.push(fail);
                }
            }
            (f, b) => {
                fail.forward = f.as_ref().ok().map(|t| t.terminal);
                fail.backward = b.as_ref().ok().map(|t| t.terminal);
                fail.error = f
                    .as_ref()
                    .err()
                    .or(b.as_ref().err())
                    .map(|e| e.to_string());
                failures.push(fail);
            }
        }
    }
    Ok(NontrappingReport {
        pass: failures.is_empty(),
        samples: sample_count,
        failures,
        max_drift,
        warning: (sample_count == 0).then(|| "no samples: vacuous pass".to_string()),
    })
}
