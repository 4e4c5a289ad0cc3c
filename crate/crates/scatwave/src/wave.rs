//! Characteristic evolution of spherical-harmonic modes and extraction of the
//! radiation field.
//!
//! The mode unknown `psi = r^k w_ell`, `k = (n-2)/2`, satisfies
//! `4 psi_pq + V psi = F` in null coordinates `p = t + r`, `q = t - r`, with
//! `V = L(L+1)/r^2 + dV`, `L = ell + (n-4)/2`, and `F = r^k f`. Each grid cell
//! is updated from the diamond identity
//! `psi_N - psi_E - psi_W + psi_S = (1/4) int (F - V psi)`, with
//! `psi = r^(L+1) chi` and `chi` bilinear on the cell. Cells touching the
//! axis `r = 0` are integrated with a Duffy split around the axis corner.

use crate::error::{Error, Result};
use crate::geometry::ScatteringMetricSpec;
use crate::linalg::{gauss_legendre, lstsq};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

const QUAD_POINTS: usize = 4;
const KEEP_LEVELS: usize = 6;

/// Correction `W(rho, v)` with `dV = rho^2 W` (`rho = (t^2 + r^2)^{-1/2}`,
/// `v = (t^2 - r^2)/(t^2 + r^2)`).
pub type CorrectionFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Source `f(t, r)` of the radial wave equation, before the `r^k` weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceSpec {
    Zero,
    /// `amplitude * b((t - t0)/tw) * b((r - rc)/rw)` with `b(x) = (1 - x^2)^6`.
    Bump {
        t0: f64,
        tw: f64,
        rc: f64,
        rw: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Bump {
            t0: 4.0,
            tw: 1.0,
            rc: 2.0,
            rw: 1.0,
            amplitude: 1.0,
        }
    }
}

#[inline]
fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        let y = 1.0 - x * x;
        let y3 = y * y * y;
        y3 * y3
    } else {
        0.0
    }
}

impl SourceSpec {
    #[inline]
    pub fn eval(&self, t: f64, r: f64) -> f64 {
        match *self {
            SourceSpec::Zero => 0.0,
            SourceSpec::Bump {
                t0,
                tw,
                rc,
                rw,
                amplitude,
            } => {
                let a = (t - t0) / tw;
                if a.abs() >= 1.0 {
                    return 0.0;
                }
                let b = (r - rc) / rw;
                if b.abs() >= 1.0 {
                    return 0.0;
                }
                amplitude * bump(a) * bump(b)
            }
        }
    }

    /// Range of `q = t - r` on the support, `None` for the zero source.
    pub fn q_support(&self) -> Option<(f64, f64)> {
        match *self {
            SourceSpec::Zero => None,
            SourceSpec::Bump { t0, tw, rc, rw, .. } => {
                Some((t0 - tw - (rc + rw).max(0.0), t0 + tw - (rc - rw).max(0.0)))
            }
        }
    }

    /// Largest `p = t + r` on the support.
    pub fn p_max(&self) -> Option<f64> {
        match *self {
            SourceSpec::Zero => None,
            SourceSpec::Bump { t0, tw, rc, rw, .. } => Some(t0 + tw + rc + rw),
        }
    }

    fn validate(&self) -> Result<()> {
        if let SourceSpec::Bump { tw, rw, rc, .. } = *self {
            if !(tw > 0.0 && rw > 0.0) || rc - rw < 0.0 {
                return Err(Error::Precondition(format!(
                    "bump source needs tw, rw > 0 and rc >= rw (got tw={tw}, rc={rc}, rw={rw})"
                )));
            }
        }
        Ok(())
    }
}

/// Double-null grid: fine spacing `h` in `q` up to `q_fine`, then spacing
/// `max(h, eta (q - q0))` up to `q_max`; `p` continues geometrically (ratio
/// `1 + 3 eta`) up to `p_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub q0: f64,
    pub h: f64,
    pub eta: f64,
    pub q_fine: f64,
    pub q_max: f64,
    pub p_max: f64,
}

impl GridSpec {
    /// Grid adapted to a source: `q0` half a unit before the support.
    pub fn for_source(src: &SourceSpec, h: f64) -> Self {
        let (lo, hi) = src.q_support().unwrap_or((0.0, 0.0));
        let pm = src.p_max().unwrap_or(0.0);
        GridSpec {
            q0: lo - 0.5,
            h,
            eta: 0.01,
            q_fine: pm.max(hi) + 2.0,
            q_max: 1.2e4,
            p_max: 1.2e7,
        }
    }

    pub fn q_nodes(&self) -> Vec<f64> {
        let mut xs = vec![self.q0];
        let mut x = self.q0;
        while x < self.q_max {
            let d = if x > self.q_fine {
                self.h.max(self.eta * (x - self.q0))
            } else {
                self.h
            };
            x += d;
            xs.push(x);
        }
        xs
    }

    fn p_extension(&self, last: f64) -> Vec<f64> {
        let mut ext = Vec::new();
        let mut x = last;
        while x < self.p_max {
            x *= 1.0 + 3.0 * self.eta;
            ext.push(x);
        }
        ext
    }

    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.eta >= 0.0 && self.q_max > self.q0 && self.p_max >= self.q_max) {
            return Err(Error::Precondition(format!("invalid grid {self:?}")));
        }
        if self.q_max <= 0.0 {
            return Err(Error::Precondition("q_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct ModeProblem {
    pub n: usize,
    pub ell: usize,
    pub source: SourceSpec,
    pub grid: GridSpec,
    /// Perturbation part of the potential, `None` for exact Minkowski.
    pub correction: Option<CorrectionFn>,
    /// Constant data on the initial null surfaces; forward problems need 0.
    pub initial_value: f64,
    /// Keep every grid value (small grids only).
    pub store_full: bool,
}

impl fmt::Debug for ModeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModeProblem")
            .field("n", &self.n)
            .field("ell", &self.ell)
            .field("source", &self.source)
            .field("grid", &self.grid)
            .field("correction", &self.correction.is_some())
            .field("initial_value", &self.initial_value)
            .finish()
    }
}

impl ModeProblem {
    pub fn new(n: usize, ell: usize, source: SourceSpec, grid: GridSpec) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidDimension(n));
        }
        Ok(ModeProblem {
            n,
            ell,
            source,
            grid,
            correction: None,
            initial_value: 0.0,
            store_full: false,
        })
    }

    /// `L + 1` with `L = ell + (n-4)/2`.
    pub fn axis_power(&self) -> f64 {
        self.ell as f64 + (self.n as f64 - 4.0) / 2.0 + 1.0
    }

    /// `L(L+1) = (n-2)(n-4)/4 + ell(ell+n-3)`.
    pub fn centrifugal(&self) -> f64 {
        let l = self.ell as f64;
        let n = self.n as f64;
        (n - 2.0) * (n - 4.0) / 4.0 + l * (l + n - 3.0)
    }

    /// Full potential `V(t, r)`.
    pub fn potential(&self, t: f64, r: f64) -> f64 {
        self.centrifugal() / (r * r) + self.correction_at(t, r)
    }

    fn correction_at(&self, t: f64, r: f64) -> f64 {
        match &self.correction {
            None => 0.0,
            Some(w) => {
                let s = t * t + r * r;
                w(1.0 / s.sqrt(), (t * t - r * r) / s) / s
            }
        }
    }

    /// `V / (4 x^2)` in the compactified chart `x = 1/p`, smooth at `x = 0`.
    fn far_kernel(&self, x: f64, s: f64) -> f64 {
        let one_m = 1.0 - s * x;
        let mut k = self.centrifugal() / (one_m * one_m);
        if let Some(w) = &self.correction {
            let d = 1.0 + s * s * x * x;
            let rho = std::f64::consts::SQRT_2 * x / d.sqrt();
            let v = 2.0 * s * x / d;
            k += w(rho, v) / (2.0 * d);
        }
        k
    }

    /// Weighted source `F = r^k f`.
    #[inline]
    pub fn weighted_source(&self, t: f64, r: f64) -> f64 {
        let f = self.source.eval(t, r);
        if f == 0.0 {
            0.0
        } else {
            f * r.powf((self.n as f64 - 2.0) / 2.0)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.initial_value != 0.0 {
            return Err(Error::Precondition(format!(
                "initial data {} on q = q0 is not a forward solution",
                self.initial_value
            )));
        }
        self.grid.validate()?;
        self.source.validate()?;
        if let Some((lo, _)) = self.source.q_support() {
            if lo < self.grid.q0 + 0.1 * self.grid.h {
                return Err(Error::Precondition(format!(
                    "source reaches q = {lo}, before q0 = {}",
                    self.grid.q0
                )));
            }
        }
        Ok(())
    }
}

/// Builds the mode problem for a radial metric. Only potential and conformal
/// corrections reduce to a scalar mode equation.
pub fn assemble_mode_problem(
    spec: &ScatteringMetricSpec,
    ell: usize,
    source: SourceSpec,
    grid: GridSpec,
) -> Result<ModeProblem> {
    let n = spec.n();
    let mut prob = ModeProblem::new(n, ell, source, grid)?;
    let prof = spec.profile().clone();
    if prof.normal.is_some() || prof.mixed.is_some() || prof.tangential.is_some() || prof.angular.is_some() {
        return Err(Error::ReductionUnavailable(
            "only potential and conformal perturbations reduce to a scalar mode equation".into(),
        ));
    }
    if let Some(c) = &prof.conformal {
        for &rho in &[0.3, 1.0, 3.0] {
            let a = c(rho, -0.5);
            let b = c(rho, 0.5);
            if (a - b).abs() > 1e-14 * (1.0 + a.abs()) {
                return Err(Error::ReductionUnavailable(
                    "conformal factor depends on v; not spherically symmetric in spacetime".into(),
                ));
            }
        }
    }
    if prof.conformal.is_none() && prof.potential.is_none() {
        return Ok(prob);
    }
    let k = (n as f64 - 2.0) / 2.0;
    let conformal = prof.conformal.clone();
    let potential = prof.potential.clone();
    prob.correction = Some(Arc::new(move |rho: f64, v: f64| {
        let rho = rho.max(1e-100);
        let mut w = 0.0;
        let mut omega2 = 1.0;
        if let Some(c) = &conformal {
            omega2 = 1.0 + c(rho, v);
            w += conformal_correction(c.as_ref(), k, n, rho, v);
        }
        if let Some(p) = &potential {
            w += omega2 * p(rho, v);
        }
        w
    }));
    Ok(prob)
}

/// `-Omega^{-k} Box Omega^k / rho^2` for `Omega^2 = 1 + c(rho)`.
///
/// With `S = t^2 + r^2 = rho^{-2}` and `f = Omega^k`,
/// `Box f = 4 (t^2 - r^2) f_SS + 2 (2 - n) f_S`.
fn conformal_correction(c: &(dyn Fn(f64, f64) -> f64 + Send + Sync), k: f64, n: usize, rho: f64, v: f64) -> f64 {
    let s = 1.0 / (rho * rho);
    let cs = |x: f64| c(1.0 / x.sqrt(), v);
    let hs = (1e-2 * (1.0 + s)).min(s / 3.0);
    let f2 = cs(s + 2.0 * hs);
    let f1 = cs(s + hs);
    let f0 = cs(s);
    let g1 = cs(s - hs);
    let g2 = cs(s - 2.0 * hs);
    let c1 = (-f2 + 8.0 * f1 - 8.0 * g1 + g2) / (12.0 * hs);
    let c2 = (-f2 + 16.0 * f1 - 30.0 * f0 + 16.0 * g1 - g2) / (12.0 * hs * hs);
    let a = k / 2.0;
    let base = 1.0 + f0;
    let fs = a * base.powf(a - 1.0) * c1;
    let fss = a * (a - 1.0) * base.powf(a - 2.0) * c1 * c1 + a * base.powf(a - 1.0) * c2;
    let f = base.powf(a);
    let box_f = 4.0 * v * s * fss + 2.0 * (2.0 - n as f64) * fs;
    -box_f / f * s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// Nodes in `p` up to `p_max`.
    Characteristic,
    /// Nodes in `p` up to `q_max`, then uniform in `x = 1/p` down to `x = 0`.
    Blowup,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveField {
    pub n: usize,
    pub ell: usize,
    pub h: f64,
    pub scheme: String,
    pub chart: Chart,
    pub q: Vec<f64>,
    /// `p` nodes; the last node of a blow-up chart is `+inf`.
    pub p: Vec<f64>,
    /// `rows[j][i] = psi(p_i, q_j)`, zero for `p_i <= q_j`; present when the
    /// problem asked for full storage.
    pub rows: Option<Vec<Vec<f64>>>,
    /// Values on the last `KEEP_LEVELS` p-nodes for every `q_j`.
    pub tail: Vec<Vec<f64>>,
    pub tail_p: Vec<f64>,
    pub cells: usize,
}

impl WaveField {
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.as_ref().map(|r| r[j][i])
    }

    /// Values at `p = +inf` (blow-up chart only).
    pub fn at_infinity(&self) -> Option<Vec<f64>> {
        if self.chart != Chart::Blowup {
            return None;
        }
        Some(self.tail.iter().map(|r| *r.last().unwrap_or(&0.0)).collect())
    }
}

struct Quad {
    x: Vec<f64>,
    w: Vec<f64>,
}

fn quad01() -> Quad {
    let (x, w) = gauss_legendre(QUAD_POINTS);
    Quad {
        x: x.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w: w.iter().map(|t| 0.5 * t).collect(),
    }
}

pub fn evolve_characteristic(problem: &ModeProblem) -> Result<WaveField> {
    evolve(problem, Chart::Characteristic)
}

/// Same scheme with the far zone in `x = 1/p`, reaching `p = +inf`.
pub fn solve_on_blowup_chart(problem: &ModeProblem) -> Result<WaveField> {
    evolve(problem, Chart::Blowup)
}

fn evolve(problem: &ModeProblem, chart: Chart) -> Result<WaveField> {
    problem.validate()?;
    let g = &problem.grid;
    let q = g.q_nodes();
    let nq = q.len();
    let mut p = q.clone();
    let far_start;
    match chart {
        Chart::Characteristic => {
            p.extend(g.p_extension(*q.last().unwrap()));
            far_start = usize::MAX;
        }
        Chart::Blowup => {
            let xs = 1.0 / q.last().unwrap();
            let m = ((1.0 / (3.0 * g.eta.max(1e-3))).ceil() as usize).max(20);
            far_start = nq;
            for k in 1..=m {
                let x = xs * (1.0 - k as f64 / m as f64);
                p.push(if k == m { f64::INFINITY } else { 1.0 / x });
            }
        }
    }
    let np = p.len();
    let quad = quad01();
    let a = problem.axis_power();
    let c = problem.centrifugal();
    let mut prev = vec![0.0; np];
    let mut cur = vec![0.0; np];
    let mut rows = if problem.store_full {
        Some(vec![vec![0.0; np]; nq])
    } else {
        None
    };
    let keep = KEEP_LEVELS.min(np);
    let mut tail = vec![vec![0.0; keep]; nq];
    let mut cells = 0usize;
    let k_near = |pp: f64, qq: f64| -> f64 {
        let r = 0.5 * (pp - qq);
        let t = 0.5 * (pp + qq);
        (c / (r * r) + problem.correction_at(t, r)) / 4.0
    };
    for j in 0..nq - 1 {
        let (qa, qb) = (q[j], q[j + 1]);
        let dq = qb - qa;
        for v in cur.iter_mut() {
            *v = 0.0;
        }
        for i in (j + 2)..np {
            let (pa, pb) = (p[i - 1], p[i]);
            let ps_e = prev[i];
            let ps_s = prev[i - 1];
            let ps_w = cur[i - 1];
            let axis = i == j + 2;
            let val = if i >= far_start && !axis {
                far_cell(problem, &quad, pa, pb, qa, qb, ps_e, ps_s, ps_w)
            } else if axis {
                axis_cell(problem, &quad, a, &k_near, pa, pb, qa, qb, ps_e, ps_s)
            } else {
                interior_cell(problem, &quad, a, &k_near, pa, pb, qa, dq, ps_e, ps_s, ps_w)
            };
            if !val.is_finite() {
                return Err(Error::Instability { p: pb, q: qb });
            }
            cur[i] = val;
            cells += 1;
        }
        if let Some(r) = rows.as_mut() {
            r[j + 1].copy_from_slice(&cur);
        }
        tail[j + 1].copy_from_slice(&cur[np - keep..]);
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(WaveField {
        n: problem.n,
        ell: problem.ell,
        h: g.h,
        scheme: "diamond-bilinear-chi".into(),
        chart,
        tail_p: p[np - keep..].to_vec(),
        q,
        p,
        rows,
        tail,
        cells,
    })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn interior_cell(
    problem: &ModeProblem,
    quad: &Quad,
    a: f64,
    k_near: &impl Fn(f64, f64) -> f64,
    pa: f64,
    pb: f64,
    qa: f64,
    dq: f64,
    ps_e: f64,
    ps_s: f64,
    ps_w: f64,
) -> f64 {
    let qb = qa + dq;
    let dp = pb - pa;
    let r_n = 0.5 * (pb - qb);
    let r_e = 0.5 * (pb - qa);
    let r_s = 0.5 * (pa - qa);
    let r_w = 0.5 * (pa - qb);
    let (mut i_n, mut i_e, mut i_w, mut i_s, mut fint) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (kx, &x) in quad.x.iter().enumerate() {
        for (ky, &y) in quad.x.iter().enumerate() {
            let ww = quad.w[kx] * quad.w[ky] * dp * dq;
            let pp = pa + x * dp;
            let qq = qa + y * dq;
            let r = 0.5 * (pp - qq);
            let t = 0.5 * (pp + qq);
            fint += ww * problem.weighted_source(t, r) / 4.0;
            let kk = ww * k_near(pp, qq);
            i_n += kk * (r / r_n).powf(a) * x * y;
            i_e += kk * (r / r_e).powf(a) * x * (1.0 - y);
            i_w += kk * (r / r_w).powf(a) * (1.0 - x) * y;
            i_s += kk * (r / r_s).powf(a) * (1.0 - x) * (1.0 - y);
        }
    }
    let rhs = ps_e + ps_w - ps_s + fint - (i_e * ps_e + i_w * ps_w + i_s * ps_s);
    rhs / (1.0 + i_n)
}

/// Cell whose `W` corner lies on the axis: `psi_W = 0`, and
/// `chi_W = chi_N + chi_S - chi_E`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn axis_cell(
    problem: &ModeProblem,
    quad: &Quad,
    a: f64,
    k_near: &impl Fn(f64, f64) -> f64,
    pa: f64,
    pb: f64,
    qa: f64,
    qb: f64,
    ps_e: f64,
    ps_s: f64,
) -> f64 {
    let dp = pb - pa;
    let dq = qb - qa;
    let r_n = 0.5 * (pb - qb);
    let r_e = 0.5 * (pb - qa);
    let r_s = 0.5 * (pa - qa);
    let (mut i_n, mut i_e, mut i_s, mut fint) = (0.0, 0.0, 0.0, 0.0);
    for tri in 0..2 {
        for (kx, &sx) in quad.x.iter().enumerate() {
            for (ky, &ty) in quad.x.iter().enumerate() {
                // Duffy map of the triangle with apex at W = (0, 1)
                let uu = sx * sx;
                let jac = uu * 2.0 * sx;
                let (da, db) = if tri == 0 { (uu, uu * ty) } else { (uu * ty, uu) };
                let x = da;
                let y = 1.0 - db;
                let pp = pa + x * dp;
                let qq = qa + y * dq;
                let w2 = quad.w[kx] * quad.w[ky] * jac * dp * dq;
                let r = 0.5 * (pp - qq);
                let t = 0.5 * (pp + qq);
                fint += w2 * problem.weighted_source(t, r) / 4.0;
                if r <= 0.0 {
                    continue;
                }
                let kk = w2 * k_near(pp, qq);
                let b_n = y;
                let b_s = 1.0 - x;
                let b_e = x * (1.0 - y) - (1.0 - x) * y;
                i_n += kk * (r / r_n).powf(a) * b_n;
                i_s += kk * (r / r_s).powf(a) * b_s;
                i_e += kk * (r / r_e).powf(a) * b_e;
            }
        }
    }
    let rhs = ps_e - ps_s + fint - (i_e * ps_e + i_s * ps_s);
    rhs / (1.0 + i_n)
}

/// Cell in the compactified chart: `psi` bilinear in `(x, q)`, kernel
/// `V / (4 x^2)`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn far_cell(
    problem: &ModeProblem,
    quad: &Quad,
    pa: f64,
    pb: f64,
    qa: f64,
    qb: f64,
    ps_e: f64,
    ps_s: f64,
    ps_w: f64,
) -> f64 {
    let xa = 1.0 / pa;
    let xb = if pb.is_infinite() { 0.0 } else { 1.0 / pb };
    let dx = xa - xb;
    let dq = qb - qa;
    let (mut i_n, mut i_e, mut i_w, mut i_s, mut fint) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (kx, &x) in quad.x.iter().enumerate() {
        for (ky, &y) in quad.x.iter().enumerate() {
            let ww = quad.w[kx] * quad.w[ky] * dx * dq;
            let xx = xa - x * dx;
            let qq = qa + y * dq;
            let pp = 1.0 / xx;
            let r = 0.5 * (pp - qq);
            let t = 0.5 * (pp + qq);
            let f = problem.weighted_source(t, r);
            if f != 0.0 {
                fint += ww * f / (4.0 * xx * xx);
            }
            let kk = ww * problem.far_kernel(xx, qq);
            i_n += kk * x * y;
            i_e += kk * x * (1.0 - y);
            i_w += kk * (1.0 - x) * y;
            i_s += kk * (1.0 - x) * (1.0 - y);
        }
    }
    let rhs = ps_e + ps_w - ps_s + fint - (i_e * ps_e + i_w * ps_w + i_s * ps_s);
    rhs / (1.0 + i_n)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadiationField {
    pub n: usize,
    pub ell: usize,
    pub q: Vec<f64>,
    /// `R(q) = lim_{p -> inf} d_q psi(p, q)`; r-based unless `rho_based`.
    pub r: Vec<f64>,
    /// `lim_{p -> inf} psi(p, q)`.
    pub psi_inf: Vec<f64>,
    /// Difference between the degree-3 and degree-2 extrapolants.
    pub extrapolation_error: Vec<f64>,
    /// Observed decay order of `psi(p) - psi_inf` in `1/p`.
    pub order: Vec<f64>,
    /// Rows where a log-augmented fit replaced the plain polynomial.
    pub log_fits: usize,
    /// Values already carry the `2^{(n-2)/4}` factor (blow-up chart).
    pub rho_based: bool,
}

impl RadiationField {
    /// `2^{(n-2)/4}`: ratio between the rho-based and r-based conventions.
    pub fn convention_factor(n: usize) -> f64 {
        2f64.powf((n as f64 - 2.0) / 4.0)
    }

    pub fn rho_convention(&self) -> Vec<f64> {
        let f = if self.rho_based { 1.0 } else { Self::convention_factor(self.n) };
        self.r.iter().map(|x| x * f).collect()
    }

    /// Linear interpolation of `R` at `s`.
    pub fn sample(&self, s: f64) -> Option<f64> {
        let k = self.q.partition_point(|&x| x < s);
        if k == 0 || k >= self.q.len() {
            return None;
        }
        let (a, b) = (self.q[k - 1], self.q[k]);
        let w = (s - a) / (b - a);
        Some(self.r[k - 1] * (1.0 - w) + self.r[k] * w)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("q,R,psi_inf,extrapolation_error\n");
        for k in 0..self.q.len() {
            s.push_str(&format!(
                "{:.12e},{:.12e},{:.12e},{:.3e}\n",
                self.q[k], self.r[k], self.psi_inf[k], self.extrapolation_error[k]
            ));
        }
        s
    }
}

/// Second-order derivative on a nonuniform grid.
pub fn gradient(y: &[f64], x: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut g = vec![0.0; n];
    if n < 2 {
        return g;
    }
    g[0] = (y[1] - y[0]) / (x[1] - x[0]);
    g[n - 1] = (y[n - 1] - y[n - 2]) / (x[n - 1] - x[n - 2]);
    for i in 1..n - 1 {
        let h1 = x[i] - x[i - 1];
        let h2 = x[i + 1] - x[i];
        g[i] = (h1 * h1 * y[i + 1] - h2 * h2 * y[i - 1] + (h2 * h2 - h1 * h1) * y[i])
            / (h1 * h2 * (h1 + h2));
    }
    g
}

fn poly_fit_at_zero(x: &[f64], y: &[f64], deg: usize, log_term: bool) -> Result<(f64, f64)> {
    let cols = deg + 1 + usize::from(log_term);
    let a = DMatrix::from_fn(x.len(), cols, |i, j| {
        if j <= deg {
            x[i].powi(j as i32)
        } else {
            x[i] * x[i].ln()
        }
    });
    let b = DVector::from_column_slice(y);
    let c = lstsq(&a, &b)?;
    let res = (&a * &c - &b).norm();
    Ok((c[0], res))
}

/// Extrapolates the last p-levels to `p = inf` and differentiates in `q`.
pub fn extract_radiation_field(field: &WaveField) -> Result<RadiationField> {
    let nq = field.q.len();
    let mut psi_inf = vec![0.0; nq];
    let mut err = vec![0.0; nq];
    let mut order = vec![f64::NAN; nq];
    let mut log_fits = 0;
    if field.chart == Chart::Blowup {
        psi_inf = field.at_infinity().unwrap_or_default();
    } else {
        let x: Vec<f64> = field.tail_p.iter().map(|p| 1.0 / p).collect();
        let scale = field
            .tail
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        for j in 0..nq {
            let y = &field.tail[j];
            if y.iter().all(|v| *v == 0.0) {
                continue;
            }
            let (v3, res3) = poly_fit_at_zero(&x, y, 3, false)?;
            let (v2, _) = poly_fit_at_zero(&x, y, 2, false)?;
            let mut val = v3;
            if res3 > 1e-10 * scale.max(1e-300) {
                let (vl, resl) = poly_fit_at_zero(&x, y, 3, true)?;
                if resl < res3 {
                    val = vl;
                    log_fits += 1;
                }
            }
            // oscillation in 1/p: successive differences changing sign
            let d: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
            let flips = d.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
            let amp = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if flips >= 3 && amp > 1e-8 * scale.max(1e-300) && amp > 1e-3 * val.abs() {
                return Err(Error::Extraction(format!(
                    "oscillatory tail in 1/p at q = {} (sign flips {flips}, amplitude {amp:.3e})",
                    field.q[j]
                )));
            }
            psi_inf[j] = val;
            err[j] = (v3 - v2).abs();
            let e0 = (y[0] - val).abs();
            let e1 = (y[y.len() - 1] - val).abs();
            if e0 > 0.0 && e1 > 0.0 {
                order[j] = (e0 / e1).ln() / (field.tail_p[y.len() - 1] / field.tail_p[0]).ln();
            }
        }
    }
    let mut r = gradient(&psi_inf, &field.q);
    if field.chart == Chart::Blowup {
        let f = RadiationField::convention_factor(field.n);
        r.iter_mut().for_each(|v| *v *= f);
        psi_inf.iter_mut().for_each(|v| *v *= f);
    }
    Ok(RadiationField {
        n: field.n,
        ell: field.ell,
        q: field.q.clone(),
        r,
        psi_inf,
        extrapolation_error: err,
        order,
        log_fits,
        rho_based: field.chart == Chart::Blowup,
    })
}
