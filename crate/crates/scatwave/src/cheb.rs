//! Chebyshev–Gauss collocation on `[0, 1]`.
//!
//! Nodes are the interior Gauss points, rounded to f64 and then treated as
//! exact; weights and differentiation matrices are formed in double-double so
//! that they are exact for polynomials on those rounded nodes.

use crate::dd::Dd;
use std::f64::consts::PI;

/// Interior Chebyshev–Gauss nodes mapped to `[0, 1]`, descending.
pub fn gauss_nodes(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 0.5 * (1.0 + ((2 * k + 1) as f64 * PI / (2 * n) as f64).cos()))
        .collect()
}

/// Barycentric weights, scaled by `4^(n-1)` to stay in range.
pub fn bary_weights(x: &[f64]) -> Vec<Dd> {
    let n = x.len();
    (0..n)
        .map(|j| {
            let mut p = Dd::ONE;
            for k in 0..n {
                if k != j {
                    p = p * (Dd::new(x[j]) - Dd::new(x[k])) * 4.0;
                }
            }
            p.recip()
        })
        .collect()
}

/// First-derivative matrix (row-major), exact for polynomials of degree < n.
pub fn diff_matrix(x: &[f64]) -> Vec<Vec<Dd>> {
    let n = x.len();
    let w = bary_weights(x);
    let mut d = vec![vec![Dd::ZERO; n]; n];
    for i in 0..n {
        let mut s = Dd::ZERO;
        for j in 0..n {
            if i != j {
                let v = (w[j] / w[i]) / (Dd::new(x[i]) - Dd::new(x[j]));
                d[i][j] = v;
                s += v;
            }
        }
        d[i][i] = -s;
    }
    d
}

pub fn mat_mul(a: &[Vec<Dd>], b: &[Vec<Dd>]) -> Vec<Vec<Dd>> {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    let mut c = vec![vec![Dd::ZERO; m]; n];
    for i in 0..n {
        for k in 0..inner {
            let aik = a[i][k];
            if aik == Dd::ZERO {
                continue;
            }
            for j in 0..m {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

/// Barycentric interpolation of nodal values at `t` (f64).
pub fn interpolate(x: &[f64], w: &[Dd], f: &[f64], t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..x.len() {
        let d = t - x[j];
        if d == 0.0 {
            return f[j];
        }
        let c = w[j].to_f64() / d;
        num += c * f[j];
        den += c;
    }
    num / den
}
