//! Resonances of the cap problem as a quadratic eigenvalue problem.
//!
//! Per spherical-harmonic mode `ell`, the restriction of
//! `-rho^{-k-2} Box_g rho^k` (with `k = (n-2)/2`) to `rho = 0` acting on
//! `rho^{i sigma} phi(v)` is conjugated by `v^{i sigma}` (outgoing branch)
//! and by the cap-centre factor `(1-v)^{ell/2}`. The result is
//! `Q(sigma) = Q0 + sigma Q1 + sigma^2 Q2` with coefficients smooth on
//! `[0, 1]`, collocated at interior Chebyshev–Gauss nodes. The regular
//! singular point `v = 0` selects the smooth branch by itself, so no
//! boundary rows are used.
//!
//! Candidates come from an f64 companion eigensolve on a coarse grid; each is
//! then refined by Newton's method on `det Q(sigma)` in double-double at the
//! requested size and at size + 8.

use crate::cheb;
use crate::dd::{Cdd, CddLu, CddMatrix, Dd};
use crate::error::{Error, Result};
use crate::geometry::{box_coefficients, CollarPoint, ScatteringMetricSpec};
use crate::linalg::complex_eigenvalues;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const LIGHT_CONE_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-8;
const DRIFT_TOL: f64 = 1e-6;
const DECAY_TOL: f64 = 1e-3;
const NEWTON_MAX_ITER: usize = 60;
const CANDIDATE_SIZES: [usize; 2] = [24, 32];
const DEDUP_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Strip {
    pub im_min: f64,
    pub im_max: f64,
    pub re_max: f64,
}

impl Strip {
    pub fn new(im_min: f64, im_max: f64, re_max: f64) -> Self {
        Strip {
            im_min,
            im_max,
            re_max,
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        z.im > self.im_min && z.im < self.im_max && z.re.abs() <= self.re_max
    }

    fn contains_with_margin(&self, z: Complex64, m: f64) -> bool {
        z.im > self.im_min - m && z.im < self.im_max + m && z.re.abs() <= self.re_max + m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub sigma: Complex64,
    /// `sigma_min / sigma_max` of the pencil at `sigma`.
    pub residual: f64,
    pub multiplicity: usize,
    pub ell: Option<usize>,
    pub n_colloc: usize,
    /// Movement under `N -> N + 8`.
    pub drift: f64,
    /// Diagnostic threshold `1/2 + Im sigma`.
    pub threshold: f64,
}

impl Resonance {
    fn exact(sigma: Complex64) -> Self {
        Resonance {
            sigma,
            residual: 0.0,
            multiplicity: 1,
            ell: None,
            n_colloc: 0,
            drift: 0.0,
            threshold: 0.5 + sigma.im,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSet {
    pub resonances: Vec<Resonance>,
    /// Converged poles at pure imaginary negative integers, kept apart: they
    /// belong to states supported at the light cone, not to the cap problem.
    pub extraneous: Vec<Resonance>,
    pub strip: Option<Strip>,
}

impl ResonanceSet {
    pub fn sigmas(&self) -> Vec<Complex64> {
        self.resonances.iter().map(|r| r.sigma).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.resonances.is_empty()
    }

    pub fn len(&self) -> usize {
        self.resonances.len()
    }

    /// Merges another set (e.g. another `ell`), sorted by `Im sigma` descending.
    pub fn merge(&mut self, other: ResonanceSet) {
        self.resonances.extend(other.resonances);
        self.extraneous.extend(other.extraneous);
        if self.strip.is_none() {
            self.strip = other.strip;
        }
        sort_desc(&mut self.resonances);
        sort_desc(&mut self.extraneous);
    }

    /// Pole with the largest imaginary part.
    pub fn leading(&self) -> Option<&Resonance> {
        self.resonances.first()
    }

    /// JSON records `[{re, im, residual, ell, N}]`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(
            self.resonances
                .iter()
                .map(|r| {
                    serde_json::json!({
                        "re": r.sigma.re,
                        "im": r.sigma.im,
                        "residual": r.residual,
                        "ell": r.ell,
                        "N": r.n_colloc,
                        "multiplicity": r.multiplicity,
                        "drift": r.drift,
                        "threshold": r.threshold,
                    })
                })
                .collect(),
        )
    }
}

fn sort_desc(v: &mut [Resonance]) {
    v.sort_by(|a, b| {
        b.sigma
            .im
            .partial_cmp(&a.sigma.im)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.sigma.re.partial_cmp(&b.sigma.re).unwrap_or(std::cmp::Ordering::Equal))
    });
}

pub fn exact_hyperbolic_resonances(n: usize, strip: Strip) -> ResonanceSet {
    let mut out = Vec::new();
    if n % 2 == 1 {
        let k = (n as f64 - 2.0) / 2.0;
        let mut j = 0;
        loop {
            let s = Complex64::new(0.0, -(k + j as f64));
            if s.im <= strip.im_min {
                break;
            }
            if strip.contains(s) {
                out.push(Resonance::exact(s));
            }
            j += 1;
        }
    }
    ResonanceSet {
        resonances: out,
        extraneous: Vec::new(),
        strip: Some(strip),
    }
}

#[derive(Clone, Debug)]
enum CoefficientSource {
    /// Boundary data equal to Minkowski, with constant potential `w0`;
    /// coefficients are evaluated exactly in double-double.
    Exact { w0: f64 },
    /// Coefficients sampled from the metric (f64, finite differences).
    Sampled(Box<ScatteringMetricSpec>),
}

/// Conjugated cap operator `Q(sigma)` for one spherical-harmonic mode.
#[derive(Clone, Debug)]
pub struct CapModeOperator {
    pub n: usize,
    pub ell: usize,
    source: CoefficientSource,
}

/// Coefficients `[q2, q1, q0]`, each split by powers `[sigma^0, sigma^1, sigma^2]`.
pub type OperatorCoefficients<T> = [[T; 3]; 3];

impl CapModeOperator {
    pub fn new(spec: &ScatteringMetricSpec, ell: usize) -> Result<Self> {
        let n = spec.n();
        if n < 3 {
            return Err(Error::InvalidDimension(n));
        }
        let exact = boundary_is_minkowski(spec);
        let source = match exact {
            Some(w0) => CoefficientSource::Exact { w0 },
            None => CoefficientSource::Sampled(Box::new(spec.clone())),
        };
        let op = CapModeOperator { n, ell, source };
        if let CoefficientSource::Sampled(_) = op.source {
            op.check_cancellation()?;
        }
        Ok(op)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.source, CoefficientSource::Exact { .. })
    }

    fn k(&self) -> f64 {
        (self.n as f64 - 2.0) / 2.0
    }

    fn angular_eigenvalue(&self) -> f64 {
        let l = self.ell as f64;
        l * (l + self.n as f64 - 3.0)
    }

    /// Coefficients of `Q(sigma)` before the cap-centre factor, in double-double.
    fn q_dd(&self, v: Dd) -> OperatorCoefficients<Cdd> {
        match &self.source {
            CoefficientSource::Exact { w0 } => {
                let k = Dd::new(self.k());
                let one = Dd::ONE;
                let v2 = v * v;
                let lam = Dd::new(self.angular_eigenvalue());
                let q2 = Cdd::real(v * 4.0 - v2 * v * 4.0);
                let q1_0 = Cdd::real(Dd::new(4.0) - v2 * 8.0 - k * v * (one + v) * 4.0);
                let q1_1 = Cdd::new(Dd::ZERO, (v2 - one) * 4.0);
                let q0_0 = Cdd::real(
                    -(k * k * 2.0 + k * k * v + k * v * 2.0 + lam * 2.0 / (one - v) + Dd::new(*w0)),
                );
                let q0_1 = Cdd::new(Dd::ZERO, (v + k * (one + v)) * 2.0);
                let q0_2 = Cdd::real(v);
                [
                    [q2, Cdd::ZERO, Cdd::ZERO],
                    [q1_0, q1_1, Cdd::ZERO],
                    [q0_0, q0_1, q0_2],
                ]
            }
            CoefficientSource::Sampled(spec) => {
                let c = sampled_coefficients(spec, self.n, self.angular_eigenvalue(), v.to_f64());
                c.map(|row| row.map(Cdd::from_c64))
            }
        }
    }

    /// Coefficients of `Q(sigma)` (no cap-centre factor) at `v`.
    pub fn coefficients(&self, v: f64) -> OperatorCoefficients<Complex64> {
        self.q_dd(Dd::new(v)).map(|row| row.map(|z| z.to_c64()))
    }

    /// Coefficients after the substitution `psi = (1-v)^{ell/2} chi`.
    fn r_dd(&self, v: Dd) -> OperatorCoefficients<Cdd> {
        let [q2, q1, q0] = self.q_dd(v);
        let m = Dd::new(self.ell as f64 / 2.0);
        if self.ell == 0 {
            return [q2, q1, q0];
        }
        let w = Dd::ONE - v;
        let iw = w.recip();
        let mut r1 = [Cdd::ZERO; 3];
        let mut r0 = [Cdd::ZERO; 3];
        for p in 0..3 {
            r1[p] = q1[p] - q2[p] * (m * 2.0 * iw);
            r0[p] = q0[p] - q1[p] * (m * iw) + q2[p] * (m * (m - 1.0) * iw * iw);
        }
        [q2, r1, r0]
    }

    /// `Q(sigma) phi` at `v` from values of `phi, phi', phi''`.
    pub fn apply(&self, sigma: Complex64, v: f64, phi: [Complex64; 3]) -> Complex64 {
        let c = self.coefficients(v);
        let s = [Complex64::new(1.0, 0.0), sigma, sigma * sigma];
        let mut out = Complex64::new(0.0, 0.0);
        for (d, row) in c.iter().enumerate() {
            let coeff: Complex64 = (0..3).map(|p| row[p] * s[p]).sum();
            out += coeff * phi[2 - d];
        }
        out
    }

    /// The two `1/v` terms produced by the conjugation, whose sum is finite:
    /// `-i sigma a1(v)/v` (sigma-independent part of `a1`) and `i sigma a~(v)/v`.
    pub fn conjugation_singular_parts(&self, sigma: Complex64, v: f64) -> (Complex64, Complex64) {
        let i = Complex64::new(0.0, 1.0);
        let (a1, at) = match &self.source {
            CoefficientSource::Exact { .. } => {
                let k = self.k();
                (
                    -(-4.0 + 8.0 * v * v + 4.0 * k * v * (1.0 + v)),
                    -(-4.0 + 4.0 * v * v),
                )
            }
            CoefficientSource::Sampled(spec) => {
                let b = boundary_data(spec, v);
                (-(b.cv + 2.0 * self.k() * b.g01), -b.g11 / v)
            }
        };
        (-i * sigma * a1 / v, i * sigma * at / v)
    }

    fn check_cancellation(&self) -> Result<()> {
        if let CoefficientSource::Sampled(spec) = &self.source {
            let k = self.k();
            for &v in &[1e-3, 5e-4] {
                let b = boundary_data(spec, v);
                let at = b.g11 / v;
                let num1 = b.cv + 2.0 * k * b.g01 - at;
                let num2 = 2.0 * b.g01 - at;
                let res = (num1 / v).abs().max((num2 / v).abs());
                if !res.is_finite() || res > 1e3 {
                    return Err(Error::Conjugation { v, residual: res });
                }
            }
        }
        Ok(())
    }
}

/// `Some(w0)` if the boundary metric equals Minkowski and `W(0, v) = w0`.
fn boundary_is_minkowski(spec: &ScatteringMetricSpec) -> Option<f64> {
    let base = crate::geometry::minkowski_metric(spec.n()).ok()?;
    let w0 = spec.potential(0.0, 0.0);
    for k in 0..41 {
        let v = -0.95 + 0.0475 * k as f64;
        let a = spec.radial_block(0.0, v);
        let b = base.radial_block(0.0, v);
        for i in 0..3 {
            if (a[i] - b[i]).abs() > 1e-15 * (1.0 + b[i].abs()) {
                return None;
            }
        }
        if (spec.angular_coefficient(0.0, v) - base.angular_coefficient(0.0, v)).abs() > 1e-15 {
            return None;
        }
        if (spec.potential(0.0, v) - w0).abs() > 1e-15 {
            return None;
        }
    }
    Some(w0)
}

struct BoundaryData {
    g00: f64,
    g01: f64,
    g11: f64,
    cr: f64,
    cv: f64,
    a: f64,
    w: f64,
}

fn boundary_data(spec: &ScatteringMetricSpec, v: f64) -> BoundaryData {
    let pt = CollarPoint::radial(spec.n(), 0.0, v);
    match box_coefficients(spec, &pt) {
        Ok(b) => BoundaryData {
            g00: b.second[(0, 0)],
            g01: b.second[(0, 1)],
            g11: b.second[(1, 1)],
            cr: b.first[0],
            cv: b.first[1],
            a: spec.angular_coefficient(0.0, v),
            w: spec.potential(0.0, v),
        },
        Err(_) => BoundaryData {
            g00: f64::NAN,
            g01: f64::NAN,
            g11: f64::NAN,
            cr: f64::NAN,
            cv: f64::NAN,
            a: f64::NAN,
            w: f64::NAN,
        },
    }
}

fn sampled_coefficients(
    spec: &ScatteringMetricSpec,
    n: usize,
    lam: f64,
    v: f64,
) -> OperatorCoefficients<Complex64> {
    let b = boundary_data(spec, v);
    let k = (n as f64 - 2.0) / 2.0;
    let i = Complex64::new(0.0, 1.0);
    let at = b.g11 / v;
    let z = Complex64::new(0.0, 0.0);
    let re = |x: f64| Complex64::new(x, 0.0);
    // coefficients of rho^{-k-2} Box rho^k conjugated, then negated
    let q2 = re(b.g11);
    let q1_0 = re(b.cv + 2.0 * k * b.g01);
    let q1_1 = 2.0 * i * (b.g01 - at);
    let q0_0 = re(b.g00 * k * k + b.cr * k + lam / b.a + b.w);
    let q0_1 = i * (2.0 * k * b.g00 + b.cr - (b.cv + 2.0 * k * b.g01 - at) / v);
    let q0_2 = re(-b.g00 + (2.0 * b.g01 - at) / v);
    [[-q2, z, z], [-q1_0, -q1_1, z], [-q0_0, -q0_1, -q0_2]]
}

/// Collocation discretisation `A0 + sigma A1 + sigma^2 A2`.
#[derive(Clone, Debug)]
pub struct QuadraticPencil {
    pub op: CapModeOperator,
    pub size: usize,
    pub nodes: Vec<f64>,
    pub a0: CddMatrix,
    pub a1: CddMatrix,
    pub a2: CddMatrix,
}

impl QuadraticPencil {
    pub fn f64_matrices(&self) -> [DMatrix<Complex64>; 3] {
        [self.a0.to_c64(), self.a1.to_c64(), self.a2.to_c64()]
    }

    pub fn eval(&self, sigma: Cdd) -> CddMatrix {
        CddMatrix::quadratic(&self.a0, &self.a1, &self.a2, sigma)
    }

    pub fn eval_derivative(&self, sigma: Cdd) -> CddMatrix {
        CddMatrix::linear(&self.a1, &self.a2, sigma + sigma)
    }

    /// Applies the pencil to nodal values of `chi`.
    pub fn apply(&self, sigma: Complex64, chi: &[Complex64]) -> Vec<Complex64> {
        let [a0, a1, a2] = self.f64_matrices();
        let m = a0 + a1 * sigma + a2 * (sigma * sigma);
        let x = nalgebra::DVector::from_column_slice(chi);
        (m * x).iter().copied().collect()
    }
}

pub fn build_cap_pencil(spec: &ScatteringMetricSpec, ell: usize, size: usize) -> Result<QuadraticPencil> {
    let op = CapModeOperator::new(spec, ell)?;
    pencil_for(&op, size)
}

fn pencil_for(op: &CapModeOperator, size: usize) -> Result<QuadraticPencil> {
    if size < 8 {
        return Err(Error::Precondition(format!(
            "collocation size {size} too small (need N >= 8)"
        )));
    }
    let nodes = cheb::gauss_nodes(size);
    let d = cheb::diff_matrix(&nodes);
    let d2 = cheb::mat_mul(&d, &d);
    let mut mats = [
        CddMatrix::zeros(size, size),
        CddMatrix::zeros(size, size),
        CddMatrix::zeros(size, size),
    ];
    for i in 0..size {
        let r = op.r_dd(Dd::new(nodes[i]));
        for p in 0..3 {
            let (c2, c1, c0) = (r[0][p], r[1][p], r[2][p]);
            for j in 0..size {
                let mut z = c2 * d2[i][j] + c1 * d[i][j];
                if i == j {
                    z += c0;
                }
                if !(z.re.hi.is_finite() && z.im.hi.is_finite()) {
                    return Err(Error::Conjugation {
                        v: nodes[i],
                        residual: f64::INFINITY,
                    });
                }
                mats[p].set(i, j, z);
            }
        }
    }
    let [a0, a1, a2] = mats;
    Ok(QuadraticPencil {
        op: op.clone(),
        size,
        nodes,
        a0,
        a1,
        a2,
    })
}

/// f64 eigenvalues of the companion linearisation. `A2` is diagonal (the
/// sigma^2 term has no derivatives), so the monic form is a row scaling.
pub fn companion_eigenvalues(p: &QuadraticPencil) -> Result<Vec<Complex64>> {
    let [a0, a1, a2] = p.f64_matrices();
    let n = p.size;
    let mut c = DMatrix::<Complex64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        c[(i, n + i)] = Complex64::new(1.0, 0.0);
        let d = a2[(i, i)];
        if d.norm() < 1e-14 {
            return Err(Error::Numeric(format!(
                "sigma^2 coefficient vanishes at node {i} (v = {})",
                p.nodes[i]
            )));
        }
        for j in 0..n {
            c[(n + i, j)] = -a0[(i, j)] / d;
            c[(n + i, n + j)] = -a1[(i, j)] / d;
        }
    }
    complex_eigenvalues(c)
}

fn log_det_derivative(p: &QuadraticPencil, s: Cdd) -> Option<Cdd> {
    let t = p.eval(s);
    let dt = p.eval_derivative(s);
    let lu = CddLu::new(t)?;
    let x = lu.solve(&dt);
    let mut tr = Cdd::ZERO;
    for i in 0..p.size {
        tr += x.get(i, i);
    }
    Some(tr)
}

/// Newton's method on `det Q(sigma)`: `sigma -= 1 / tr(Q^-1 Q')`.
pub fn newton_refine(p: &QuadraticPencil, start: Complex64) -> Option<Complex64> {
    let mut s = Cdd::from_c64(start);
    let mut last = f64::INFINITY;
    for _ in 0..NEWTON_MAX_ITER {
        let tr = log_det_derivative(p, s)?;
        let step = tr.recip();
        s -= step;
        let st = step.to_c64().norm();
        if !st.is_finite() || s.to_c64().norm() > 1e6 {
            return None;
        }
        if st < 1e-15 * s.to_c64().norm().max(1.0) || (st < 1e-12 && st >= last) {
            return Some(s.to_c64());
        }
        last = st;
    }
    None
}

/// `sigma_min / sigma_max` of `Q(sigma)` (double-double evaluation, f64 SVD)
/// and the corresponding right singular vector.
pub fn pencil_residual(p: &QuadraticPencil, s: Complex64) -> (f64, Vec<Complex64>) {
    let t = p.eval(Cdd::from_c64(s)).to_c64();
    let svd = t.svd(false, true);
    let sv = &svd.singular_values;
    let (imin, smin) = sv
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
    let smax = sv.max();
    let vt = svd.v_t.expect("requested");
    let vec = (0..p.size).map(|j| vt[(imin, j)].conj()).collect();
    (smin / smax, vec)
}

/// Tail-to-peak ratio of Chebyshev coefficients of nodal values.
pub fn coefficient_decay(values: &[Complex64]) -> f64 {
    let n = values.len();
    let mut c = vec![0.0f64; n];
    for (k, ck) in c.iter_mut().enumerate() {
        let mut s = Complex64::new(0.0, 0.0);
        for (j, &f) in values.iter().enumerate() {
            s += f * ((k * (2 * j + 1)) as f64 * PI / (2 * n) as f64).cos();
        }
        *ck = s.norm() * 2.0 / n as f64;
    }
    let peak = c.iter().cloned().fold(0.0, f64::max);
    let tail = c[3 * n / 4..].iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        1.0
    } else {
        tail / peak
    }
}

/// Number of eigenvalues inside `|sigma - c| < r` by the argument principle.
pub fn count_in_disc(p: &QuadraticPencil, c: Complex64, r: f64, nodes: usize) -> Option<f64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..nodes {
        let e = Complex64::from_polar(1.0, 2.0 * PI * (k as f64 + 0.5) / nodes as f64);
        let z = c + e * r;
        let tr = log_det_derivative(p, Cdd::from_c64(z))?.to_c64();
        acc += tr * e * r;
    }
    Some((acc / nodes as f64).re)
}

fn is_light_cone(s: Complex64) -> bool {
    let m = (-s.im).round();
    m >= 1.0 && (s - Complex64::new(0.0, -m)).norm() < LIGHT_CONE_TOL
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub strip: Strip,
    pub estimate_multiplicity: bool,
}

impl SolveOptions {
    pub fn new(strip: Strip) -> Self {
        SolveOptions {
            strip,
            estimate_multiplicity: true,
        }
    }
}

/// Filtered resonances of a pencil in the strip.
pub fn solve_pencil(p: &QuadraticPencil, opts: &SolveOptions) -> Result<ResonanceSet> {
    let strip = opts.strip;
    let mut candidates: Vec<Complex64> = Vec::new();
    for &nc in CANDIDATE_SIZES.iter() {
        let nc = nc.min(p.size);
        let coarse = pencil_for(&p.op, nc)?;
        for z in companion_eigenvalues(&coarse)? {
            if z.re.is_finite() && z.im.is_finite() && strip.contains_with_margin(z, 0.5) {
                candidates.push(z);
            }
        }
    }
    candidates.sort_by(|a, b| b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal));

    let mut refined: Vec<Complex64> = Vec::new();
    for z in candidates {
        if refined.iter().any(|r| (r - z).norm() < 1e-3) {
            continue;
        }
        if let Some(s) = newton_refine(p, z) {
            if strip.contains(s) && !refined.iter().any(|r| (r - s).norm() < DEDUP_TOL) {
                refined.push(s);
            }
        }
    }

    let finer = pencil_for(&p.op, p.size + 8)?;
    let mut set = ResonanceSet {
        resonances: Vec::new(),
        extraneous: Vec::new(),
        strip: Some(strip),
    };
    for s in refined {
        let Some(s8) = newton_refine(&finer, s) else {
            continue;
        };
        let drift = (s8 - s).norm();
        if drift >= DRIFT_TOL {
            continue;
        }
        let (residual, vec) = pencil_residual(p, s);
        if residual >= RESIDUAL_TOL {
            continue;
        }
        if coefficient_decay(&vec) >= DECAY_TOL {
            continue;
        }
        let multiplicity = if opts.estimate_multiplicity {
            count_in_disc(p, s, 0.02, 16)
                .map(|c| c.round().max(1.0) as usize)
                .unwrap_or(1)
        } else {
            1
        };
        let r = Resonance {
            sigma: s,
            residual,
            multiplicity,
            ell: Some(p.op.ell),
            n_colloc: p.size,
            drift,
            threshold: 0.5 + s.im,
        };
        if is_light_cone(s) {
            set.extraneous.push(r);
        } else {
            set.resonances.push(r);
        }
    }
    sort_desc(&mut set.resonances);
    sort_desc(&mut set.extraneous);
    Ok(set)
}

/// Union over modes `ells` of the filtered resonances.
pub fn resonances_for(
    spec: &ScatteringMetricSpec,
    ells: &[usize],
    size: usize,
    strip: Strip,
) -> Result<ResonanceSet> {
    let mut out = ResonanceSet {
        strip: Some(strip),
        ..Default::default()
    };
    for &ell in ells {
        let p = build_cap_pencil(spec, ell, size)?;
        out.merge(solve_pencil(&p, &SolveOptions::new(strip))?);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BeynResult {
    pub set: ResonanceSet,
    pub count: usize,
    pub inconclusive: bool,
    pub singular_values: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct BeynOptions {
    pub nodes: usize,
    pub probes: usize,
    pub rank_tol: f64,
    pub seed: u64,
}

impl Default for BeynOptions {
    fn default() -> Self {
        BeynOptions {
            nodes: 64,
            probes: 6,
            rank_tol: 1e-9,
            seed: 7,
        }
    }
}

/// Contour-integral eigensolver on the circle `|sigma - center| = radius`.
pub fn beyn_contour(
    p: &QuadraticPencil,
    center: Complex64,
    radius: f64,
    opts: &BeynOptions,
) -> Result<BeynResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut jitter = 0.0;
    for _attempt in 0..4 {
        let r = radius * (1.0 + jitter);
        match beyn_once(p, center, r, opts, &mut rng)? {
            Some(res) => return Ok(res),
            None => jitter += 0.013,
        }
    }
    Err(Error::Numeric(
        "contour passes too close to a resonance after jitter retries".into(),
    ))
}

fn beyn_once(
    p: &QuadraticPencil,
    center: Complex64,
    radius: f64,
    opts: &BeynOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Option<BeynResult>> {
    let n = p.size;
    let l = opts.probes.min(n);
    let mut v = CddMatrix::zeros(n, l);
    for i in 0..n {
        for j in 0..l {
            v.set(
                i,
                j,
                Cdd::from_c64(Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
            );
        }
    }
    let mut a0 = CddMatrix::zeros(n, l);
    let mut a1 = CddMatrix::zeros(n, l);
    let mut scale: f64 = 0.0;
    let k = opts.nodes;
    for q in 0..k {
        let e = Complex64::from_polar(1.0, 2.0 * PI * (q as f64 + 0.5) / k as f64);
        let z = center + e * radius;
        let t = p.eval(Cdd::from_c64(z));
        let Some(lu) = CddLu::new(t) else {
            return Ok(None);
        };
        if lu.min_pivot < 1e-28 * lu.max_pivot {
            return Ok(None);
        }
        let x = lu.solve(&v);
        let w = Cdd::from_c64(e * radius / k as f64);
        let wz = w * Cdd::from_c64(z);
        for idx in 0..n * l {
            let xv = x.data[idx];
            scale = scale.max(xv.abs_f64());
            a0.data[idx] += xv * w;
            a1.data[idx] += xv * wz;
        }
    }
    let a0 = a0.to_c64();
    let a1 = a1.to_c64();
    let svd = a0.svd(true, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let thresh = opts.rank_tol * scale.max(1e-300);
    let rank = sv.iter().filter(|&&s| s > thresh).count();
    let inconclusive = rank == l
        || sv
            .iter()
            .any(|&s| s > thresh * 1e-3 && s <= thresh * 1e3 && s != 0.0);
    let mut set = ResonanceSet::default();
    if rank > 0 {
        let u = svd.u.expect("requested");
        let vt = svd.v_t.expect("requested");
        let uk = u.columns(0, rank).adjoint();
        let wk = vt.rows(0, rank).adjoint();
        let sinv = DMatrix::<Complex64>::from_fn(rank, rank, |i, j| {
            if i == j {
                Complex64::new(1.0 / sv[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let b = uk * a1 * wk * sinv;
        for s in complex_eigenvalues(b)? {
            if (s - center).norm() < radius {
                set.resonances.push(Resonance {
                    sigma: s,
                    residual: 0.0,
                    multiplicity: 1,
                    ell: Some(p.op.ell),
                    n_colloc: p.size,
                    drift: 0.0,
                    threshold: 0.5 + s.im,
                });
            }
        }
    }
    sort_desc(&mut set.resonances);
    let count = set.resonances.len();
    Ok(Some(BeynResult {
        set,
        count,
        inconclusive,
        singular_values: sv,
    }))
}

/// One tracked resonance branch of a perturbation scan.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Branch {
    pub ell: usize,
    pub points: Vec<Option<Complex64>>,
    /// Starts at a pole supported at the light cone (pure imaginary negative
    /// integer) of the unperturbed problem.
    pub from_light_cone: bool,
    /// Other candidates within the ambiguity margin, per step.
    pub ambiguous: Vec<Option<Complex64>>,
    /// `max |sigma(eps) - sigma(eps0)| / |eps - eps0|`.
    pub drift_constant: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanTable {
    pub eps: Vec<f64>,
    pub sets: Vec<ResonanceSet>,
    pub branches: Vec<Branch>,
}

impl ScanTable {
    /// Leading (largest `Im sigma`) branch value at column `i`.
    pub fn leading_at(&self, i: usize) -> Option<(&Branch, Complex64)> {
        self.branches
            .iter()
            .filter_map(|b| b.points[i].map(|z| (b, z)))
            .max_by(|a, b| a.1.im.partial_cmp(&b.1.im).unwrap_or(std::cmp::Ordering::Equal))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,branch,ell,re,im,from_light_cone\n");
        for (bi, b) in self.branches.iter().enumerate() {
            for (i, e) in self.eps.iter().enumerate() {
                if let Some(z) = b.points[i] {
                    s.push_str(&format!(
                        "{:.6e},{},{},{:.12e},{:.12e},{}\n",
                        e, bi, b.ell, z.re, z.im, b.from_light_cone
                    ));
                }
            }
        }
        s
    }
}

/// Tracks resonances (including light-cone poles) through a family of metrics.
pub fn perturbation_scan<F>(
    family: F,
    eps: &[f64],
    ells: &[usize],
    size: usize,
    strip: Strip,
) -> Result<ScanTable>
where
    F: Fn(f64) -> Result<ScatteringMetricSpec>,
{
    let mut sets = Vec::with_capacity(eps.len());
    let mut per_ell: Vec<Vec<Vec<Complex64>>> = vec![Vec::new(); ells.len()];
    for &e in eps {
        let spec = family(e)?;
        let mut all = ResonanceSet {
            strip: Some(strip),
            ..Default::default()
        };
        for (li, &ell) in ells.iter().enumerate() {
            let p = build_cap_pencil(&spec, ell, size)?;
            let mut opts = SolveOptions::new(strip);
            opts.estimate_multiplicity = false;
            let set = solve_pencil(&p, &opts)?;
            let mut poles: Vec<Complex64> = set.resonances.iter().map(|r| r.sigma).collect();
            poles.extend(set.extraneous.iter().map(|r| r.sigma));
            per_ell[li].push(poles);
            all.merge(set);
        }
        sets.push(all);
    }
    let mut branches = Vec::new();
    for (li, &ell) in ells.iter().enumerate() {
        let cols = &per_ell[li];
        if cols.is_empty() {
            continue;
        }
        for &start in &cols[0] {
            let mut points = vec![Some(start)];
            let mut ambiguous = vec![None];
            let mut cur = start;
            for col in cols.iter().skip(1) {
                let mut d: Vec<(f64, Complex64)> =
                    col.iter().map(|&z| ((z - cur).norm(), z)).collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                match d.first() {
                    Some(&(dist, z)) if dist < 0.25 => {
                        points.push(Some(z));
                        let amb = d
                            .get(1)
                            .filter(|&&(d2, _)| d2 < 1.5 * dist + 1e-9 && d2 < 0.25)
                            .map(|&(_, z2)| z2);
                        ambiguous.push(amb);
                        cur = z;
                    }
                    _ => {
                        points.push(None);
                        ambiguous.push(None);
                    }
                }
            }
            let mut c: f64 = 0.0;
            for (i, z) in points.iter().enumerate().skip(1) {
                if let Some(z) = z {
                    let de = (eps[i] - eps[0]).abs();
                    if de > 0.0 {
                        c = c.max((z - start).norm() / de);
                    }
                }
            }
            branches.push(Branch {
                ell,
                points,
                from_light_cone: is_light_cone(start) && eps[0] == 0.0,
                ambiguous,
                drift_constant: c,
            });
        }
    }
    Ok(ScanTable {
        eps: eps.to_vec(),
        sets,
        branches,
    })
}
