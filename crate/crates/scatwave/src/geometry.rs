//! Lorentzian scattering metrics in collar coordinates.
//!
//! Components are stored in the frame `drho/rho^2, dv/rho, dy_i/rho`, where
//! `y` are stereographic coordinates on the boundary sphere (round metric
//! `h = 4|dy|^2 / (1 + |y|^2)^2`). For the Minkowski model
//!
//! ```text
//! g = v drho^2/rho^4 - v/(4(1-v^2)) dv^2/rho^2
//!     - 1/2 (drho/rho^2 (x) dv/rho + sym) - (1-v)/2 h/rho^2
//! ```
//!
//! with `t = cos(theta)/rho`, `r = sin(theta)/rho`, `v = cos(2 theta)`. The
//! `v` chart degenerates at the equator `v = -1`; a `theta` chart is provided
//! for the flow, which has to cross it.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

const DET_TOL: f64 = 1e-12;
const FD_REL: f64 = 6.055454452393343e-6; // eps^(1/3)

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationClass {
    ExactMinkowski,
    NormallyVeryShortRange,
    NormallyShortRange,
}

impl fmt::Display for PerturbationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PerturbationClass::ExactMinkowski => "exact_minkowski",
            PerturbationClass::NormallyVeryShortRange => "normally_very_short_range",
            PerturbationClass::NormallyShortRange => "normally_short_range",
        };
        f.write_str(s)
    }
}

pub type ScalarFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Spherically symmetric perturbation of the Minkowski collar metric.
///
/// All entries are functions of `(rho, v)`. `normal`, `mixed` and
/// `tangential` add to the `(0,0)`, `(0,1)` and `(1,1)` frame components;
/// `angular` rescales the sphere coefficient by `1 + angular`; `conformal`
/// multiplies the whole metric by `1 + conformal`; `potential` is `W` in the
/// operator `Box_g + rho^2 W`.
#[derive(Clone, Default)]
pub struct RadialProfile {
    pub normal: Option<ScalarFn>,
    pub mixed: Option<ScalarFn>,
    pub tangential: Option<ScalarFn>,
    pub angular: Option<ScalarFn>,
    pub conformal: Option<ScalarFn>,
    pub potential: Option<ScalarFn>,
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile")
            .field("normal", &self.normal.is_some())
            .field("mixed", &self.mixed.is_some())
            .field("tangential", &self.tangential.is_some())
            .field("angular", &self.angular.is_some())
            .field("conformal", &self.conformal.is_some())
            .field("potential", &self.potential.is_some())
            .finish()
    }
}

fn eval(f: &Option<ScalarFn>, rho: f64, v: f64) -> f64 {
    f.as_ref().map_or(0.0, |f| f(rho, v))
}

fn add_fn(a: &Option<ScalarFn>, b: &Option<ScalarFn>) -> Option<ScalarFn> {
    match (a, b) {
        (None, None) => None,
        (Some(f), None) | (None, Some(f)) => Some(f.clone()),
        (Some(f), Some(g)) => {
            let (f, g) = (f.clone(), g.clone());
            Some(Arc::new(move |r, v| f(r, v) + g(r, v)))
        }
    }
}

impl RadialProfile {
    pub fn is_zero(&self) -> bool {
        self.normal.is_none()
            && self.mixed.is_none()
            && self.tangential.is_none()
            && self.angular.is_none()
            && self.conformal.is_none()
            && self.potential.is_none()
    }

    /// Sum of two profiles; conformal factors compose to first order only,
    /// so at most one of the two may carry one.
    pub fn plus(&self, other: &RadialProfile) -> RadialProfile {
        RadialProfile {
            normal: add_fn(&self.normal, &other.normal),
            mixed: add_fn(&self.mixed, &other.mixed),
            tangential: add_fn(&self.tangential, &other.tangential),
            angular: add_fn(&self.angular, &other.angular),
            conformal: add_fn(&self.conformal, &other.conformal),
            potential: add_fn(&self.potential, &other.potential),
        }
    }

    pub fn metric_is_flat(&self) -> bool {
        self.normal.is_none()
            && self.mixed.is_none()
            && self.tangential.is_none()
            && self.angular.is_none()
            && self.conformal.is_none()
    }
}

fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (1.0 - x * x).powi(6)
    } else {
        0.0
    }
}

/// Named analytic perturbation families (the serializable part of a spec).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Profile {
    Minkowski,
    /// `eps rho^2 exp(-v^2)` added to the `drho^2/rho^4` coefficient.
    NormalGaussian { eps: f64 },
    /// Whole metric multiplied by `1 + eps rho^2/(1 + rho^2)`, i.e. by
    /// `1 + eps/(1 + t^2 + r^2)` in Minkowski coordinates.
    Conformal { eps: f64 },
    /// Potential `eps/(1 + t^2 + r^2)` added to the wave operator.
    Potential { eps: f64 },
    /// Sphere coefficient multiplied by `1 + eps exp(-v^2)` (tangential, O(1)).
    AngularScale { eps: f64 },
    /// O(1) bump in the `drho^2/rho^4` coefficient centred at `v = center`.
    EquatorialBump {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// Sum of families.
    Sum { terms: Vec<Profile> },
}

impl Profile {
    pub fn radial(&self) -> RadialProfile {
        match *self {
            Profile::Minkowski => RadialProfile::default(),
            Profile::NormalGaussian { eps } => RadialProfile {
                normal: Some(Arc::new(move |r, v| eps * r * r * (-v * v).exp())),
                ..Default::default()
            },
            Profile::Conformal { eps } => RadialProfile {
                conformal: Some(Arc::new(move |r, _| eps * r * r / (1.0 + r * r))),
                ..Default::default()
            },
            Profile::Potential { eps } => RadialProfile {
                potential: Some(Arc::new(move |r, _| eps / (1.0 + r * r))),
                ..Default::default()
            },
            Profile::AngularScale { eps } => RadialProfile {
                angular: Some(Arc::new(move |_, v| eps * (-v * v).exp())),
                ..Default::default()
            },
            Profile::EquatorialBump {
                amplitude,
                center,
                width,
            } => RadialProfile {
                normal: Some(Arc::new(move |_, v| amplitude * bump((v - center) / width))),
                ..Default::default()
            },
            Profile::Sum { ref terms } => terms
                .iter()
                .fold(RadialProfile::default(), |acc, t| acc.plus(&t.radial())),
        }
    }

    /// Parameter `eps` of single-parameter families, if any.
    pub fn eps(&self) -> Option<f64> {
        match *self {
            Profile::NormalGaussian { eps }
            | Profile::Conformal { eps }
            | Profile::Potential { eps }
            | Profile::AngularScale { eps } => Some(eps),
            _ => None,
        }
    }
}

/// Serializable form of a metric spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDocument {
    pub n: usize,
    pub class: PerturbationClass,
    pub profile: Profile,
}

/// A Lorentzian scattering metric in collar coordinates.
#[derive(Clone, Debug)]
pub struct ScatteringMetricSpec {
    n: usize,
    class: PerturbationClass,
    family: Option<Profile>,
    radial: RadialProfile,
}

/// Collar point `(rho, v, y)`; `y` has `n - 2` stereographic components.
#[derive(Clone, Debug, PartialEq)]
pub struct CollarPoint {
    pub rho: f64,
    pub v: f64,
    pub y: Vec<f64>,
}

impl CollarPoint {
    pub fn new(rho: f64, v: f64, y: Vec<f64>) -> Self {
        CollarPoint { rho, v, y }
    }

    /// Point with `y = 0` for dimension `n`.
    pub fn radial(n: usize, rho: f64, v: f64) -> Self {
        CollarPoint {
            rho,
            v,
            y: vec![0.0; n.saturating_sub(2)],
        }
    }
}

/// Round-sphere metric factor in stereographic coordinates.
pub fn stereo_factor(y: &[f64]) -> f64 {
    let y2: f64 = y.iter().map(|a| a * a).sum();
    4.0 / ((1.0 + y2) * (1.0 + y2))
}

pub fn minkowski_metric(n: usize) -> Result<ScatteringMetricSpec> {
    if n < 2 {
        return Err(Error::InvalidDimension(n));
    }
    Ok(ScatteringMetricSpec {
        n,
        class: PerturbationClass::ExactMinkowski,
        family: Some(Profile::Minkowski),
        radial: RadialProfile::default(),
    })
}

/// Adds a radial perturbation to `base` and checks its decay against `class`.
pub fn perturbed_metric(
    base: &ScatteringMetricSpec,
    profile: &RadialProfile,
    class: PerturbationClass,
) -> Result<ScatteringMetricSpec> {
    let spec = ScatteringMetricSpec {
        n: base.n,
        class,
        family: None,
        radial: base.radial.plus(profile),
    };
    spec.check_class()?;
    spec.check_signature()?;
    Ok(spec)
}

impl ScatteringMetricSpec {
    /// Builds a spec from a named family, validating the class.
    pub fn from_document(doc: &MetricDocument) -> Result<Self> {
        let base = minkowski_metric(doc.n)?;
        let mut spec = perturbed_metric(&base, &doc.profile.radial(), doc.class)?;
        spec.family = Some(doc.profile.clone());
        Ok(spec)
    }

    /// Builds a spec without class or signature checks (for deliberately
    /// inadmissible test geometries).
    pub fn unchecked(n: usize, class: PerturbationClass, profile: &Profile) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidDimension(n));
        }
        Ok(ScatteringMetricSpec {
            n,
            class,
            family: Some(profile.clone()),
            radial: profile.radial(),
        })
    }

    pub fn document(&self) -> Option<MetricDocument> {
        self.family.as_ref().map(|p| MetricDocument {
            n: self.n,
            class: self.class,
            profile: p.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn class(&self) -> PerturbationClass {
        self.class
    }

    pub fn family(&self) -> Option<&Profile> {
        self.family.as_ref()
    }

    pub fn profile(&self) -> &RadialProfile {
        &self.radial
    }

    pub fn is_exact_minkowski(&self) -> bool {
        self.radial.is_zero()
    }

    /// `W(rho, v)` in `rho^-2 (Box_g + rho^2 W)`.
    pub fn potential(&self, rho: f64, v: f64) -> f64 {
        eval(&self.radial.potential, rho, v)
    }

    /// Sphere coefficient `A` in `-A h / rho^2`.
    pub fn angular_coefficient(&self, rho: f64, v: f64) -> f64 {
        let omega2 = 1.0 + eval(&self.radial.conformal, rho, v);
        omega2 * 0.5 * (1.0 - v) * (1.0 + eval(&self.radial.angular, rho, v))
    }

    /// `(0,0)`, `(0,1)`, `(1,1)` frame components of the `(rho, v)` block.
    pub fn radial_block(&self, rho: f64, v: f64) -> [f64; 3] {
        let p = &self.radial;
        let omega2 = 1.0 + eval(&p.conformal, rho, v);
        [
            omega2 * (v + eval(&p.normal, rho, v)),
            omega2 * (-0.5 + eval(&p.mixed, rho, v)),
            omega2 * (-v / (4.0 * (1.0 - v * v)) + eval(&p.tangential, rho, v)),
        ]
    }

    /// Frame matrix in `drho/rho^2, dv/rho, dy/rho` (requires `|v| < 1`).
    pub fn frame(&self, pt: &CollarPoint) -> DMatrix<f64> {
        let n = self.n;
        let [g00, g01, g11] = self.radial_block(pt.rho, pt.v);
        let a = self.angular_coefficient(pt.rho, pt.v) * stereo_factor(&pt.y);
        let mut g = DMatrix::zeros(n, n);
        g[(0, 0)] = g00;
        g[(0, 1)] = g01;
        g[(1, 0)] = g01;
        g[(1, 1)] = g11;
        for i in 2..n {
            g[(i, i)] = -a;
        }
        g
    }

    /// Frame matrix in `drho/rho^2, dtheta/rho, dy/rho` with `v = cos(2 theta)`.
    pub fn frame_theta(&self, rho: f64, theta: f64, y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let p = &self.radial;
        let (s, c) = (2.0 * theta).sin_cos();
        let v = c;
        let omega2 = 1.0 + eval(&p.conformal, rho, v);
        let jac = -2.0 * s;
        let a = omega2
            * (0.5 * (1.0 - v))
            * (1.0 + eval(&p.angular, rho, v))
            * stereo_factor(y);
        let mut g = DMatrix::zeros(n, n);
        g[(0, 0)] = omega2 * (c + eval(&p.normal, rho, v));
        g[(0, 1)] = omega2 * (s + eval(&p.mixed, rho, v) * jac);
        g[(1, 0)] = g[(0, 1)];
        g[(1, 1)] = omega2 * (-c + eval(&p.tangential, rho, v) * jac * jac);
        for i in 2..n {
            g[(i, i)] = -a;
        }
        g
    }

    /// Frame matrix of the unperturbed base (for class checks).
    fn base_frame(&self, pt: &CollarPoint) -> DMatrix<f64> {
        ScatteringMetricSpec {
            n: self.n,
            class: PerturbationClass::ExactMinkowski,
            family: None,
            radial: RadialProfile::default(),
        }
        .frame(pt)
    }

    /// Verifies the sampled decay orders required by the class tag.
    pub fn check_class(&self) -> Result<()> {
        let required: [(&str, u32); 5] = match self.class {
            PerturbationClass::ExactMinkowski => [
                ("normal", u32::MAX),
                ("mixed", u32::MAX),
                ("tangential", u32::MAX),
                ("angular", u32::MAX),
                ("potential", u32::MAX),
            ],
            PerturbationClass::NormallyVeryShortRange => [
                ("normal", 2),
                ("mixed", 1),
                ("tangential", 1),
                ("angular", 1),
                ("potential", 1),
            ],
            PerturbationClass::NormallyShortRange => [
                ("normal", 2),
                ("mixed", 1),
                ("tangential", 0),
                ("angular", 0),
                ("potential", 0),
            ],
        };
        let rhos = [0.02, 0.01, 0.005, 0.0025];
        let vs: Vec<f64> = (0..19).map(|k| -0.9 + 0.1 * k as f64).collect();
        for (bi, &(block, req)) in required.iter().enumerate() {
            if req == 0 {
                continue;
            }
            let mut worst = f64::INFINITY;
            for &v in &vs {
                let dev: Vec<f64> = rhos
                    .iter()
                    .map(|&r| self.block_deviation(bi, r, v))
                    .collect();
                let scale = dev.iter().fold(0.0f64, |m, d| m.max(d.abs()));
                if scale < 1e-13 {
                    continue;
                }
                let k = dev.len() - 1;
                let order = if dev[k].abs() < 1e-15 {
                    f64::INFINITY
                } else {
                    (dev[k - 1].abs() / dev[k].abs()).log2()
                };
                worst = worst.min(order);
            }
            let need = if req == u32::MAX { f64::INFINITY } else { req as f64 };
            if worst.is_finite() && worst < need - 0.25 {
                return Err(Error::ClassViolation {
                    class: self.class.to_string(),
                    block: block.to_string(),
                    observed: worst,
                    required: if req == u32::MAX { 99 } else { req },
                });
            }
        }
        Ok(())
    }

    fn block_deviation(&self, block: usize, rho: f64, v: f64) -> f64 {
        let pt = CollarPoint::radial(self.n.max(3), rho, v);
        let spec = ScatteringMetricSpec {
            n: self.n.max(3),
            ..self.clone()
        };
        let g = spec.frame(&pt);
        let b = spec.base_frame(&pt);
        match block {
            0 => g[(0, 0)] - b[(0, 0)],
            1 => g[(0, 1)] - b[(0, 1)],
            2 => (g[(1, 1)] - b[(1, 1)]) / b[(1, 1)].abs().max(1e-3),
            3 => (g[(2, 2)] - b[(2, 2)]) / b[(2, 2)].abs().max(1e-3),
            _ => self.potential(rho, v),
        }
    }

    /// Checks Lorentzian signature `(+, -, ..., -)` on a sample grid.
    pub fn check_signature(&self) -> Result<()> {
        for &rho in &[0.0, 0.05, 0.2, 0.5] {
            for k in 0..19 {
                let v = -0.9 + 0.1 * k as f64;
                let pt = CollarPoint::radial(self.n, rho, v);
                let (pos, neg) = signature(&self.frame(&pt));
                if pos != 1 || neg != self.n - 1 {
                    return Err(Error::DegenerateMetric {
                        rho,
                        v,
                        det: self.frame(&pt).determinant(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Counts of positive and negative eigenvalues of a symmetric matrix.
pub fn signature(g: &DMatrix<f64>) -> (usize, usize) {
    let eig = g.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1e-300);
    let pos = eig.eigenvalues.iter().filter(|&&e| e > 1e-12 * scale).count();
    let neg = eig.eigenvalues.iter().filter(|&&e| e < -1e-12 * scale).count();
    (pos, neg)
}

/// Dual metric in the frame `rho^2 d_rho, rho d_v, rho d_y`.
#[derive(Clone, Debug)]
pub struct DualMetricEval {
    pub ginv: DMatrix<f64>,
    /// Gradient of `1/2 log|g|` in coordinates `(rho, v, y)`; the `rho`
    /// entry contains `-(n+1)/rho` and is infinite at `rho = 0`.
    pub logvol_grad: DVector<f64>,
    /// Same gradient without the `-(n+1)/rho` term.
    pub logvol_grad_regular: DVector<f64>,
    pub point: CollarPoint,
}

fn check_collar(pt: &CollarPoint, n: usize) -> Result<()> {
    if pt.rho < 0.0 || !(pt.v.abs() < 1.0) {
        return Err(Error::OutOfRegion(format!(
            "collar point needs rho >= 0 and |v| < 1, got rho = {}, v = {}",
            pt.rho, pt.v
        )));
    }
    if pt.y.len() != n.saturating_sub(2) {
        return Err(Error::OutOfRegion(format!(
            "expected {} angular coordinates, got {}",
            n.saturating_sub(2),
            pt.y.len()
        )));
    }
    Ok(())
}

fn inverse_and_half_logdet(g: &DMatrix<f64>, pt: &CollarPoint) -> Result<(DMatrix<f64>, f64)> {
    let det = g.determinant();
    if det.abs() < DET_TOL {
        return Err(Error::DegenerateMetric {
            rho: pt.rho,
            v: pt.v,
            det,
        });
    }
    let inv = g.clone().try_inverse().ok_or(Error::DegenerateMetric {
        rho: pt.rho,
        v: pt.v,
        det,
    })?;
    Ok((inv, 0.5 * det.abs().ln()))
}

/// Shifts coordinate `k` of `(rho, v, y)` by `d`.
fn shifted(pt: &CollarPoint, k: usize, d: f64) -> CollarPoint {
    let mut q = pt.clone();
    match k {
        0 => q.rho += d,
        1 => q.v += d,
        _ => q.y[k - 2] += d,
    }
    q
}

fn coord(pt: &CollarPoint, k: usize) -> f64 {
    match k {
        0 => pt.rho,
        1 => pt.v,
        _ => pt.y[k - 2],
    }
}

fn fd_step(x: f64) -> f64 {
    FD_REL * x.abs().max(1.0)
}

pub fn dual_metric_at(spec: &ScatteringMetricSpec, pt: &CollarPoint) -> Result<DualMetricEval> {
    let n = spec.n;
    check_collar(pt, n)?;
    let (ginv, _) = inverse_and_half_logdet(&spec.frame(pt), pt)?;
    let mut reg = DVector::zeros(n);
    for k in 0..n {
        let h = fd_step(coord(pt, k));
        let (_, lp) = inverse_and_half_logdet(&spec.frame(&shifted(pt, k, h)), pt)?;
        let (_, lm) = inverse_and_half_logdet(&spec.frame(&shifted(pt, k, -h)), pt)?;
        reg[k] = (lp - lm) / (2.0 * h);
    }
    // angular factor of the coordinate volume is inside `frame` via h(y)
    let mut full = reg.clone();
    full[0] -= (n as f64 + 1.0) / pt.rho;
    Ok(DualMetricEval {
        ginv,
        logvol_grad: full,
        logvol_grad_regular: reg,
        point: pt.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapSide {
    PlusCap,
    MinusCap,
    Equatorial,
}

/// Induced boundary metric data at `rho = 0`.
#[derive(Clone, Debug)]
pub struct CapMetricEval {
    /// `K^-1` in the frame `d_v, d_y`.
    pub kinv_boundary: DMatrix<f64>,
    /// Dual of `k = K/v` on caps (`K/(-v)` on the equatorial region).
    pub kinv: DMatrix<f64>,
    pub side: CapSide,
}

pub fn cap_metric(
    spec: &ScatteringMetricSpec,
    side: CapSide,
    v: f64,
    y: &[f64],
) -> Result<CapMetricEval> {
    match side {
        CapSide::PlusCap | CapSide::MinusCap if v <= 0.0 => {
            return Err(Error::OutOfRegion(format!(
                "cap metric needs v > 0, got v = {v}"
            )))
        }
        CapSide::Equatorial if v >= 0.0 => {
            return Err(Error::OutOfRegion(format!(
                "equatorial metric needs v < 0, got v = {v}"
            )))
        }
        _ => {}
    }
    let pt = CollarPoint::new(0.0, v, y.to_vec());
    let d = dual_metric_at(spec, &pt)?;
    let m = spec.n - 1;
    let kb = DMatrix::from_fn(m, m, |i, j| -d.ginv[(i + 1, j + 1)]);
    let kinv = &kb * v.abs();
    Ok(CapMetricEval {
        kinv_boundary: kb,
        kinv,
        side,
    })
}

/// Coefficients of `rho^-2 Box_g + W` in the b-frame derivatives
/// `D_0 = rho d_rho`, `D_1 = d_v`, `D_{1+i} = d_{y_i}`:
/// `sum_ab second[a][b] D_a D_b + sum_a first[a] D_a + zeroth`.
#[derive(Clone, Debug)]
pub struct BoxCoefficients {
    pub second: DMatrix<f64>,
    pub first: DVector<f64>,
    pub zeroth: f64,
    pub point: CollarPoint,
}

impl BoxCoefficients {
    /// Applies the operator given b-derivatives of a function.
    pub fn apply(&self, u: f64, du: &DVector<f64>, d2u: &DMatrix<f64>) -> f64 {
        let mut s = self.zeroth * u;
        for a in 0..du.len() {
            s += self.first[a] * du[a];
            for b in 0..du.len() {
                s += self.second[(a, b)] * d2u[(a, b)];
            }
        }
        s
    }
}

pub fn box_coefficients(spec: &ScatteringMetricSpec, pt: &CollarPoint) -> Result<BoxCoefficients> {
    let n = spec.n;
    check_collar(pt, n)?;
    let (ginv, _) = inverse_and_half_logdet(&spec.frame(pt), pt)?;
    // derivatives of G^{ab} and of lt = 1/2 log|det G| in each coordinate
    let mut dg: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut dl = DVector::zeros(n);
    for k in 0..n {
        let h = fd_step(coord(pt, k));
        let (gp, lp) = inverse_and_half_logdet(&spec.frame(&shifted(pt, k, h)), pt)?;
        let (gm, lm) = inverse_and_half_logdet(&spec.frame(&shifted(pt, k, -h)), pt)?;
        dg.push((gp - gm) / (2.0 * h));
        dl[k] = (lp - lm) / (2.0 * h);
    }
    let rho = pt.rho;
    // b-derivative: D_0 = rho d_rho, others plain
    let bscale = |k: usize| if k == 0 { rho } else { 1.0 };
    let nf = n as f64;
    let mut first = DVector::zeros(n);
    for a in 0..n {
        // (2-n) G^{0a} + D_0 G^{0a} + sum_{j>=1} d_j G^{ja} + G^{0a} D_0 lt + sum_j G^{ja} d_j lt
        let mut s = (2.0 - nf) * ginv[(0, a)];
        s += bscale(0) * dg[0][(0, a)];
        s += ginv[(0, a)] * bscale(0) * dl[0];
        for j in 1..n {
            s += dg[j][(j, a)];
            s += ginv[(j, a)] * dl[j];
        }
        first[a] = s;
    }
    Ok(BoxCoefficients {
        second: ginv,
        first,
        zeroth: spec.potential(pt.rho, pt.v),
        point: pt.clone(),
    })
}
